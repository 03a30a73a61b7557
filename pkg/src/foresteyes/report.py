"""Consolidated campaign report: one Markdown document plus CSV appendices.

Reads the artifacts a campaign pipeline leaves in its output directory
(results, convergence, ranking, cohort averages, times; optionally the
segment ground truth and a change report) and renders the standard
analytic tables. Missing required artifacts are listed by name.
"""

from __future__ import annotations

import csv
import json
import os

from .changedetect import load_change_report
from .consensus import difficulty_tables, load_results
from .errors import MissingArtifactError
from .groundtruth import read_segment_gt_csv
from .labels import DIFFICULTY_LEVELS
from .scoring import read_ranking_csv

REQUIRED_ARTIFACTS = {
    "results": "results.json",
    "convergence": "convergence.json",
    "times": "times.json",
    "ranking": "ranking.csv",
    "cohorts": "cohorts.json",
}

OPTIONAL_ARTIFACTS = {
    "segment_gt": "segment_gt.csv",
    "hor_histogram": "hor_histogram.json",
    "change": "change.json",
}


def _fmt(value, digits=2):
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def _table(headers, rows):
    lines = ["| " + " | ".join(headers) + " |",
             "| " + " | ".join("---" for _ in headers) + " |"]
    for row in rows:
        lines.append("| " + " | ".join(_fmt(cell) for cell in row) + " |")
    return "\n".join(lines) + "\n"


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_csv(path, headers, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(rows)


def build_report(campaign_dir, out_path=None) -> str:
    """Render the campaign report; returns the path of the Markdown file."""
    campaign_dir = os.fspath(campaign_dir)
    missing = [
        name
        for name in REQUIRED_ARTIFACTS.values()
        if not os.path.exists(os.path.join(campaign_dir, name))
    ]
    if missing:
        raise MissingArtifactError(
            f"missing upstream artifacts in {campaign_dir}: {missing}"
        )
    results, incomplete = load_results(os.path.join(campaign_dir, "results.json"))
    conv = _load_json(os.path.join(campaign_dir, "convergence.json"))
    times = _load_json(os.path.join(campaign_dir, "times.json"))
    ranking = read_ranking_csv(os.path.join(campaign_dir, "ranking.csv"))
    cohorts = _load_json(os.path.join(campaign_dir, "cohorts.json"))

    gt_u = gt_m = None
    gt_path = os.path.join(campaign_dir, OPTIONAL_ARTIFACTS["segment_gt"])
    if os.path.exists(gt_path):
        gt_u, gt_m = read_segment_gt_csv(gt_path)
    hist = None
    hist_path = os.path.join(campaign_dir, OPTIONAL_ARTIFACTS["hor_histogram"])
    if os.path.exists(hist_path):
        hist = _load_json(hist_path)
    change = None
    change_path = os.path.join(campaign_dir, OPTIONAL_ARTIFACTS["change"])
    if os.path.exists(change_path):
        change = load_change_report(change_path)

    appendix_dir = os.path.join(campaign_dir, "appendices")
    os.makedirs(appendix_dir, exist_ok=True)

    sections = []
    sections.append("# Campaign report\n")

    # --- summary -----------------------------------------------------------
    n_ties = sum(1 for r in results if r.tie)
    consensus_counts: dict = {}
    for r in results:
        consensus_counts[r.consensus] = consensus_counts.get(r.consensus, 0) + 1
    summary_rows = [
        ("tasks with results", len(results)),
        ("incomplete tasks", len(incomplete)),
        ("tied tasks", n_ties),
        ("volunteers ranked", len(ranking)),
        ("answers scored", sum(s.total_answers for s in ranking)),
    ]
    summary_rows += [
        (f"consensus {label}", count)
        for label, count in sorted(consensus_counts.items())
    ]
    sections.append("## Summary\n\n" + _table(("item", "value"), summary_rows))

    # --- convergence --------------------------------------------------------
    ks = sorted(int(k) for k in conv["per_k"])
    conv_rows = [(k, conv["per_k"][str(k)] if str(k) in conv["per_k"]
                  else conv["per_k"][k]) for k in ks]
    sections.append(
        "## Consensus convergence\n\n"
        + _table(("answers", "agreement %"), conv_rows)
    )
    _write_csv(os.path.join(appendix_dir, "convergence.csv"),
               ("answers", "agreement_percent"), conv_rows)

    # --- accuracy by ground truth -------------------------------------------
    if gt_u is not None:
        from .groundtruth import accuracy

        acc_rows = []
        scored = {
            r.segment_id: r.consensus
            for r in results
            if r.segment_id is not None and r.segment_id in gt_u.labels
        }
        if scored:
            for name, gt in (("GT-U", gt_u), ("GT-M", gt_m)):
                ref = {sid: gt.labels[sid] for sid in scored}
                report = accuracy(scored, ref)
                acc_rows.append((name, report.overall, report.n_samples))
            sections.append(
                "## Accuracy by ground truth\n\n"
                + _table(("ground truth", "accuracy %", "segments"), acc_rows)
            )
            _write_csv(os.path.join(appendix_dir, "accuracy.csv"),
                       ("ground_truth", "accuracy_percent", "n_segments"), acc_rows)
    else:
        sections.append(
            "## Accuracy by ground truth\n\nNo ground truth provided.\n"
        )

    # --- difficulty ----------------------------------------------------------
    tables = difficulty_tables(results, gt_m)
    freq_rows = [
        (level,
         tables["frequency"][level]["count"],
         tables["frequency"][level]["percent"])
        for level in DIFFICULTY_LEVELS
    ]
    sections.append(
        "## Task difficulty frequency\n\n"
        + _table(("difficulty", "tasks", "percent"), freq_rows)
    )
    _write_csv(os.path.join(appendix_dir, "difficulty.csv"),
               ("difficulty", "tasks", "percent"), freq_rows)
    by_class = tables["frequency_by_class"]
    if by_class:
        class_rows = [
            (label,
             *(by_class[label][level]["percent"] for level in DIFFICULTY_LEVELS))
            for label in sorted(by_class)
        ]
        sections.append(
            "### Difficulty by consensus class\n\n"
            + _table(("class", "Easy %", "Medium %", "Hard %"), class_rows)
        )
    if "accuracy_by_difficulty" in tables and tables["accuracy_by_difficulty"]:
        rows = [
            (level, entry["percent"], entry["n"])
            for level, entry in tables["accuracy_by_difficulty"].items()
        ]
        sections.append(
            "### Accuracy by difficulty (vs GT-M)\n\n"
            + _table(("difficulty", "accuracy %", "tasks"), rows)
        )
        rows = [
            (name, entry["percent"], entry["n"])
            for name, entry in tables["accuracy_by_hor_bin"].items()
        ]
        sections.append(
            "### Accuracy by homogeneity bin (vs GT-M)\n\n"
            + _table(("HoR bin", "accuracy %", "tasks"), rows)
        )

    # --- homogeneity histogram ------------------------------------------------
    if hist is not None:
        rows = [(name, entry["count"], entry["percent"]) for name, entry in hist.items()]
        sections.append(
            "## Segment homogeneity distribution\n\n"
            + _table(("HoR range", "segments", "percent"), rows)
        )

    # --- times -----------------------------------------------------------------
    time_rows = []
    if "overall" in times:
        time_rows.append(("overall", times["overall"]))
    for group in ("by_class", "by_kind", "by_difficulty"):
        for key, value in times.get(group, {}).items():
            time_rows.append((f"{group[3:]} {key}", value))
    sections.append(
        "## Mean answer time (seconds)\n\n"
        + (_table(("category", "mean s"), time_rows) if time_rows
           else "No timing rows survived filtering.\n")
    )
    if time_rows:
        _write_csv(os.path.join(appendix_dir, "times.csv"),
                   ("category", "mean_seconds"), time_rows)

    # --- volunteers ---------------------------------------------------------------
    top = ranking[:10]
    rank_rows = [
        (s.volunteer_id, s.total_answers, s.consensus_hits, s.hr_consensus,
         s.vs, s.hr_gt_u, s.hr_gt_m)
        for s in top
    ]
    sections.append(
        "## Volunteer ranking (top 10)\n\n"
        + _table(
            ("user", "answers", "hits", "HR %", "VS", "HR GT-U %", "HR GT-M %"),
            rank_rows,
        )
        + "\nFull ranking: ranking.csv\n"
    )
    cohort_rows = []
    for kind, entry in cohorts.items():
        cohort_rows.append(
            (kind, entry.get("n_volunteers"), entry.get("hr_consensus"),
             entry.get("hr_gt_u"), entry.get("hr_gt_m"))
        )
    sections.append(
        "## Cohort averages\n\n"
        + _table(
            ("cohort", "volunteers", "HR %", "HR GT-U %", "HR GT-M %"), cohort_rows
        )
    )

    # --- change detection -----------------------------------------------------------
    if change is not None:
        rows = [("change pixels", change.gt_change_pixels),
                ("detected (NonForest)", change.detected_pixels),
                ("detection rate %", change.detection_rate)]
        rows += [
            (f"pixels {key}", value) for key, value in change.breakdown.items()
        ]
        rows += [
            (f"tasks {key}", value) for key, value in change.task_breakdown.items()
        ]
        sections.append(
            f"## Change detection ({change.epoch_a} vs {change.epoch_b})\n\n"
            + _table(("item", "value"), rows)
        )

    out_path = out_path or os.path.join(campaign_dir, "report.md")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(sections))
    return out_path
