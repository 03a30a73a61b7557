"""Operator-facing command line wiring the modules into campaign pipelines.

Every subcommand invokes one module pipeline, writes its artifacts under
``<out>/<workflow>/``, and prints a single machine-readable JSON summary
to standard output (exit 0 on success, nonzero with a categorized error
otherwise). Configuration comes from an optional JSON file with flag
overrides winning; the effective configuration is echoed into the output
directory. All randomness funnels through the single ``--seed``.
"""

from __future__ import annotations

import json
import os
import sys

import click

from .errors import ForestEyesError, ValidationError

SUMMARY_SCHEMA_PATH = os.path.join(
    os.path.dirname(__file__), "schemas", "summary.schema.json"
)


def _apply_thread_cap() -> None:
    cap = os.environ.get("FORESTEYES_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def validate_summary(payload: dict) -> None:
    """Check a summary line against the published schema (minimal validator)."""
    with open(SUMMARY_SCHEMA_PATH, "r", encoding="utf-8") as fh:
        schema = json.load(fh)
    for key in schema["required"]:
        if key not in payload:
            raise ValidationError(f"summary missing required field {key!r}")
    types = {"string": str, "array": list, "integer": int, "object": dict}
    for key, rule in schema["properties"].items():
        if key not in payload:
            continue
        expected = types.get(rule.get("type"))
        if expected and not isinstance(payload[key], expected):
            raise ValidationError(f"summary field {key!r} has wrong type")
        if "enum" in rule and payload[key] not in rule["enum"]:
            raise ValidationError(f"summary field {key!r} outside {rule['enum']}")


def _emit(payload: dict) -> None:
    validate_summary(payload)
    click.echo(json.dumps(payload, sort_keys=True))


def _fail(command: str, exc: ForestEyesError) -> None:
    _emit(
        {
            "command": command,
            "status": "error",
            "category": exc.category,
            "message": str(exc),
        }
    )
    sys.exit(1)


class _Ctx:
    def __init__(self, config_path):
        self.config = {}
        if config_path:
            with open(config_path, "r", encoding="utf-8") as fh:
                self.config = json.load(fh)

    def resolve(self, command: str, key: str, flag_value, default):
        """Flag wins over config over default; config sections per command."""
        if flag_value is not None:
            return flag_value
        for section in (command, "shared"):
            if key in self.config.get(section, {}):
                return self.config[section][key]
        return default


def _workdir(out: str, workflow: str) -> str:
    path = os.path.join(out, workflow)
    os.makedirs(path, exist_ok=True)
    return path


def _echo_config(workdir: str, command: str, effective: dict) -> None:
    with open(os.path.join(workdir, f"{command}_config.json"), "w",
              encoding="utf-8") as fh:
        json.dump(effective, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_options(text: str):
    from .labels import ANSWER_CLASSES_3, ANSWER_CLASSES_4

    if text == "3":
        return ANSWER_CLASSES_3
    if text == "4":
        return ANSWER_CLASSES_4
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _load_mask(path):
    import numpy as np

    from .raster import read_planes
    from .segment import Mask

    planes, _ = read_planes(path)
    return Mask(excluded=planes[0] != 0)


def _load_task_map(path) -> dict:
    if path.endswith(".jsonl"):
        from .tasks import manifest_task_segments, read_manifest

        return manifest_task_segments(read_manifest(path))
    with open(path, "r", encoding="utf-8") as fh:
        return {str(k): int(v) for k, v in json.load(fh).items()}


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="JSON config file; flags override it.")
@click.pass_context
def main(ctx, config_path):
    """Campaign engine for crowd-classified deforestation monitoring."""
    _apply_thread_cap()
    ctx.obj = _Ctx(config_path)


def _common(ctx, command, out, workflow, seed=None):
    cfg: _Ctx = ctx.obj
    out = cfg.resolve(command, "out", out, "out")
    workflow = cfg.resolve(command, "workflow", workflow, "campaign")
    resolved_seed = cfg.resolve(command, "seed", seed, 0)
    return out, workflow, int(resolved_seed)


@main.command()
@click.option("--answers", required=True, type=click.Path(exists=True))
@click.option("--column-map", "column_map_path", type=click.Path(exists=True))
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def ingest(ctx, answers, column_map_path, out, workflow):
    """Normalize an answer CSV; reject malformed rows into a report."""
    from .consensus import read_answers_csv, write_answers_csv

    out, workflow, _ = _common(ctx, "ingest", out, workflow)
    try:
        column_map = None
        if column_map_path:
            with open(column_map_path, "r", encoding="utf-8") as fh:
                column_map = json.load(fh)
        report = read_answers_csv(answers, column_map)
        workdir = _workdir(out, workflow)
        out_csv = os.path.join(workdir, "answers.csv")
        write_answers_csv(report.records, out_csv)
        outputs = [out_csv]
        if report.rejected:
            rejected_path = os.path.join(workdir, "rejected.csv")
            with open(rejected_path, "w", encoding="utf-8") as fh:
                fh.write("line,reason\n")
                for row in report.rejected:
                    fh.write(f"{row.line},{json.dumps(row.reason)}\n")
            outputs.append(rejected_path)
        _echo_config(workdir, "ingest", {"answers": answers, "workflow": workflow})
        _emit(
            {
                "command": "ingest",
                "status": "ok",
                "workflow": workflow,
                "outputs": outputs,
                "n_records": len(report.records),
                "n_rejected": len(report.rejected),
            }
        )
    except ForestEyesError as exc:
        _fail("ingest", exc)


@main.command()
@click.option("--stack", "stack_path", required=True, type=click.Path())
@click.option("--bands", required=True, help="Three band indices, e.g. 3,2,1.")
@click.option("--stretch", default=None, help="Percentile pair, e.g. 2,98.")
@click.option("--kind", default=None, help="Panel kind label (rgb or false753).")
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def compose(ctx, stack_path, bands, stretch, kind, out, workflow):
    """Render a stretched three-band composition as PNG."""
    from .raster import compose as compose_op
    from .raster import load_band_stack, save_png

    out, workflow, _ = _common(ctx, "compose", out, workflow)
    cfg: _Ctx = ctx.obj
    kind = cfg.resolve("compose", "kind", kind, "rgb")
    stretch = cfg.resolve("compose", "stretch", stretch, "2,98")
    try:
        stack = load_band_stack(stack_path)
        indices = tuple(int(b) for b in bands.split(","))
        lo, hi = (float(v) for v in str(stretch).split(","))
        comp = compose_op(stack, indices, (lo, hi))
        workdir = _workdir(out, workflow)
        png = os.path.join(workdir, f"{kind}.png")
        save_png(comp.channels, png)
        _echo_config(workdir, "compose",
                     {"stack": stack_path, "bands": bands, "stretch": stretch,
                      "kind": kind})
        _emit(
            {
                "command": "compose",
                "status": "ok",
                "workflow": workflow,
                "outputs": [png],
                "source_bands": list(indices),
            }
        )
    except ForestEyesError as exc:
        _fail("compose", exc)


@main.command()
@click.option("--stack", "stack_path", required=True, type=click.Path())
@click.option("--components", default=None, type=int)
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def pca(ctx, stack_path, components, out, workflow):
    """Fit the component model and write the pseudo-RGB composite."""
    from .decompose import fit_pca, save_pca_model
    from .raster import load_band_stack, save_band_stack

    out, workflow, _ = _common(ctx, "pca", out, workflow)
    cfg: _Ctx = ctx.obj
    components = int(cfg.resolve("pca", "components", components, 3))
    try:
        stack = load_band_stack(stack_path)
        model = fit_pca(stack, components)
        composite = model.transform(stack)
        workdir = _workdir(out, workflow)
        comp_path = os.path.join(workdir, "composite")
        save_band_stack(composite, comp_path)
        model_path = os.path.join(workdir, "pca_model.json")
        save_pca_model(model, model_path)
        _echo_config(workdir, "pca", {"stack": stack_path, "components": components})
        _emit(
            {
                "command": "pca",
                "status": "ok",
                "workflow": workflow,
                "outputs": [comp_path + ".bsj", comp_path + ".bsd", model_path],
                "explained_variance": [float(v) for v in model.explained_variance_],
            }
        )
    except ForestEyesError as exc:
        _fail("pca", exc)


@main.command()
@click.option("--composite", "composite_path", required=True,
              type=click.Path())
@click.option("--algo", type=click.Choice(["slic", "ift-slic", "mask-slic"]),
              default=None)
@click.option("--n", "n_segments", default=None, type=int)
@click.option("--compactness", default=None, type=float)
@click.option("--iterations", default=None, type=int)
@click.option("--alpha", default=None, type=float)
@click.option("--mask", "mask_path", default=None, type=click.Path())
@click.option("--target-px", default=None, type=int)
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def segment(ctx, composite_path, algo, n_segments, compactness, iterations,
            alpha, mask_path, target_px, out, workflow):
    """Segment a composite with slic, ift-slic, or mask-slic."""
    from .raster import load_band_stack
    from .segment import (
        ift_slic,
        mask_slic,
        save_segmentation,
        segmentation_stats,
        slic,
    )

    out, workflow, _ = _common(ctx, "segment", out, workflow)
    cfg: _Ctx = ctx.obj
    algo = cfg.resolve("segment", "algo", algo, "slic")
    n_segments = cfg.resolve("segment", "n", n_segments, 1000)
    compactness = float(cfg.resolve("segment", "compactness", compactness, 10.0))
    iterations = int(cfg.resolve("segment", "iterations", iterations, 10))
    alpha = float(cfg.resolve("segment", "alpha", alpha, 0.5))
    target_px = int(cfg.resolve("segment", "target_px", target_px, 70))
    mask_path = cfg.resolve("segment", "mask", mask_path, None)
    try:
        composite = load_band_stack(composite_path)
        if algo == "slic":
            seg = slic(composite, int(n_segments), compactness, iterations)
        elif algo == "ift-slic":
            seg = ift_slic(composite, int(n_segments), alpha, iterations)
        else:
            if not mask_path:
                raise ValidationError("mask-slic requires --mask")
            seg = mask_slic(composite, _load_mask(mask_path), target_px)
        workdir = _workdir(out, workflow)
        seg_path = os.path.join(workdir, "segmentation")
        save_segmentation(seg, seg_path)
        _echo_config(workdir, "segment",
                     {"composite": composite_path, "algo": algo,
                      "params": seg.params})
        _emit(
            {
                "command": "segment",
                "status": "ok",
                "workflow": workflow,
                "outputs": [seg_path + ".bsj", seg_path + ".bsd",
                            seg_path + ".segments.json"],
                "stats": segmentation_stats(seg),
                "algorithm": algo,
            }
        )
    except ForestEyesError as exc:
        _fail("segment", exc)


@main.command()
@click.option("--composite", "composite_path", required=True,
              type=click.Path())
@click.option("--segmentation", "segmentation_path", required=True,
              type=click.Path())
@click.option("--ids", default=None, help="Comma-separated parent segment ids.")
@click.option("--from-results", "results_path", default=None,
              type=click.Path(exists=True),
              help="Select undefined/tied/hard tasks from a results file.")
@click.option("--min-size", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def refine(ctx, composite_path, segmentation_path, ids, results_path,
           min_size, seed, out, workflow):
    """Re-segment selected parents with k-means plus the elbow rule."""
    from .consensus import load_results
    from .raster import load_band_stack
    from .segment import (
        load_segmentation,
        refine_kmeans,
        save_segmentation,
        segmentation_stats,
    )
    from .tasks import select_tasks_for_refinement

    out, workflow, seed = _common(ctx, "refine", out, workflow, seed)
    cfg: _Ctx = ctx.obj
    min_size = int(cfg.resolve("refine", "min_size", min_size, 9))
    try:
        composite = load_band_stack(composite_path)
        parent = load_segmentation(segmentation_path)
        if ids:
            segment_ids = [int(v) for v in ids.split(",")]
        elif results_path:
            results, _ = load_results(results_path)
            segment_ids = select_tasks_for_refinement(results)
        else:
            raise ValidationError("refine requires --ids or --from-results")
        seg = refine_kmeans(composite, parent, segment_ids, min_size, seed)
        workdir = _workdir(out, workflow)
        seg_path = os.path.join(workdir, "refined")
        save_segmentation(seg, seg_path)
        _echo_config(workdir, "refine",
                     {"composite": composite_path, "parents": segment_ids,
                      "min_size": min_size, "seed": seed})
        _emit(
            {
                "command": "refine",
                "status": "ok",
                "workflow": workflow,
                "outputs": [seg_path + ".bsj", seg_path + ".bsd",
                            seg_path + ".segments.json"],
                "stats": segmentation_stats(seg),
                "n_parents": len(segment_ids),
                "empty_parents": seg.params["empty_parents"],
                "seed": seed,
            }
        )
    except ForestEyesError as exc:
        _fail("refine", exc)


@main.command()
@click.option("--classmap", "classmap_path", required=True,
              type=click.Path())
@click.option("--forest-codes", required=True, help="Comma-separated codes.")
@click.option("--segmentation", "segmentation_path", default=None,
              type=click.Path())
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def gt(ctx, classmap_path, forest_codes, segmentation_path, out, workflow):
    """Binarize a class map; derive segment ground truth when given."""
    from .groundtruth import (
        GT_M,
        GT_U,
        binarize,
        build_segment_gt,
        hor_histogram,
        load_class_map,
        save_binary_gt,
        save_hor_histogram,
        write_segment_gt_csv,
    )
    from .segment import load_segmentation

    out, workflow, _ = _common(ctx, "gt", out, workflow)
    try:
        classmap = load_class_map(classmap_path)
        codes = {int(v) for v in forest_codes.split(",")} if forest_codes else set()
        binary = binarize(classmap, codes)
        workdir = _workdir(out, workflow)
        gt_path = os.path.join(workdir, "gt")
        save_binary_gt(binary, gt_path)
        outputs = [gt_path + ".bsj", gt_path + ".bsd"]
        extra = {}
        if segmentation_path:
            seg = load_segmentation(segmentation_path)
            gt_u = build_segment_gt(seg, binary, GT_U)
            gt_m = build_segment_gt(seg, binary, GT_M)
            csv_path = os.path.join(workdir, "segment_gt.csv")
            write_segment_gt_csv(gt_u, gt_m, csv_path)
            hist = hor_histogram(seg, binary)
            hist_path = os.path.join(workdir, "hor_histogram.json")
            save_hor_histogram(hist, hist_path)
            outputs += [csv_path, hist_path]
            extra["n_segments"] = len(gt_u.labels)
            extra["n_undefined_gt_u"] = sum(
                1 for v in gt_u.labels.values() if v == "Undefined"
            )
        _echo_config(workdir, "gt",
                     {"classmap": classmap_path, "forest_codes": sorted(codes)})
        _emit(
            {
                "command": "gt",
                "status": "ok",
                "workflow": workflow,
                "outputs": outputs,
                "forest_pixels": int(binary.forest.sum()),
                **extra,
            }
        )
    except ForestEyesError as exc:
        _fail("gt", exc)


@main.command()
@click.option("--segmentation", "segmentation_path", required=True,
              type=click.Path())
@click.option("--panel", "panels", multiple=True,
              help="kind=image.png; repeat per panel.")
@click.option("--options", "options_text", default=None)
@click.option("--margin", default=None, type=int)
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def tasks(ctx, segmentation_path, panels, options_text, margin, out, workflow):
    """Crop panels per segment and write the task manifest."""
    import numpy as np
    from PIL import Image

    from .segment import load_segmentation
    from .tasks import Panel, generate_tasks

    out, workflow, _ = _common(ctx, "tasks", out, workflow)
    cfg: _Ctx = ctx.obj
    options_text = cfg.resolve("tasks", "options", options_text, "3")
    margin = int(cfg.resolve("tasks", "margin", margin, 10))
    panels = panels or tuple(cfg.resolve("tasks", "panels", None, ()) or ())
    try:
        seg = load_segmentation(segmentation_path)
        panel_objs = []
        for item in panels:
            kind, _, path = item.partition("=")
            if not path:
                raise ValidationError(f"panel must be kind=path, got {item!r}")
            image = np.asarray(Image.open(path).convert("RGB"))
            panel_objs.append(Panel(kind=kind, image=image))
        specs = generate_tasks(
            seg, panel_objs, _parse_options(str(options_text)), workflow, out,
            margin=margin,
        )
        workdir = os.path.join(out, workflow)
        _echo_config(workdir, "tasks",
                     {"segmentation": segmentation_path,
                      "panels": list(panels), "options": options_text})
        _emit(
            {
                "command": "tasks",
                "status": "ok",
                "workflow": workflow,
                "outputs": [os.path.join(workdir, "manifest.jsonl")],
                "n_tasks": len(specs),
            }
        )
    except ForestEyesError as exc:
        _fail("tasks", exc)


@main.command()
@click.option("--answers", required=True, type=click.Path(exists=True))
@click.option("--redundancy", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--options", "options_text", default=None)
@click.option("--task-map", "task_map_path", default=None,
              type=click.Path(exists=True),
              help="Manifest .jsonl or JSON mapping of task to segment ids.")
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def aggregate(ctx, answers, redundancy, seed, options_text, task_map_path,
              out, workflow):
    """Majority-vote every task and write the results file."""
    from .consensus import aggregate_results, read_answers_csv, save_results

    out, workflow, seed = _common(ctx, "aggregate", out, workflow, seed)
    cfg: _Ctx = ctx.obj
    redundancy = int(cfg.resolve("aggregate", "redundancy", redundancy, 15))
    options_text = cfg.resolve("aggregate", "options", options_text, "3")
    try:
        report = read_answers_csv(answers)
        task_map = _load_task_map(task_map_path) if task_map_path else None
        results, incomplete = aggregate_results(
            report.records,
            redundancy=redundancy,
            seed=seed,
            options=_parse_options(str(options_text)),
            task_to_segment=task_map,
        )
        workdir = _workdir(out, workflow)
        results_path = os.path.join(workdir, "results.json")
        save_results(results, incomplete, results_path,
                     extra={"seed": seed, "redundancy": redundancy})
        _echo_config(workdir, "aggregate",
                     {"answers": answers, "redundancy": redundancy,
                      "seed": seed, "options": options_text})
        _emit(
            {
                "command": "aggregate",
                "status": "ok",
                "workflow": workflow,
                "outputs": [results_path],
                "n_results": len(results),
                "n_incomplete": len(incomplete),
                "n_ties": sum(1 for r in results if r.tie),
                "n_rejected_rows": len(report.rejected),
                "seed": seed,
            }
        )
    except ForestEyesError as exc:
        _fail("aggregate", exc)


@main.command()
@click.option("--answers", required=True, type=click.Path(exists=True))
@click.option("--results", "results_path", required=True,
              type=click.Path(exists=True))
@click.option("--segment-gt", "segment_gt_path", default=None,
              type=click.Path(exists=True))
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def score(ctx, answers, results_path, segment_gt_path, out, workflow):
    """Rank volunteers by score; write cohort averages."""
    from .consensus import load_results, read_answers_csv
    from .groundtruth import read_segment_gt_csv
    from .scoring import cohort_averages, volunteer_scores, write_ranking_csv

    out, workflow, _ = _common(ctx, "score", out, workflow)
    try:
        report = read_answers_csv(answers)
        results, incomplete = load_results(results_path)
        known = {res.task_id for res in results}
        scored_records = [rec for rec in report.records if rec.task_id in known]
        gt_u = gt_m = None
        if segment_gt_path:
            gt_u, gt_m = read_segment_gt_csv(segment_gt_path)
        scores = volunteer_scores(scored_records, results, gt_u=gt_u, gt_m=gt_m)
        averages = cohort_averages(scores)
        workdir = _workdir(out, workflow)
        ranking_path = os.path.join(workdir, "ranking.csv")
        write_ranking_csv(scores, ranking_path)
        cohorts_path = os.path.join(workdir, "cohorts.json")
        with open(cohorts_path, "w", encoding="utf-8") as fh:
            json.dump(averages, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _echo_config(workdir, "score",
                     {"answers": answers, "results": results_path,
                      "segment_gt": segment_gt_path})
        _emit(
            {
                "command": "score",
                "status": "ok",
                "workflow": workflow,
                "outputs": [ranking_path, cohorts_path],
                "n_volunteers": len(scores),
                "n_records_scored": len(scored_records),
                "n_records_skipped": len(report.records) - len(scored_records),
            }
        )
    except ForestEyesError as exc:
        _fail("score", exc)


@main.command()
@click.option("--answers", required=True, type=click.Path(exists=True))
@click.option("--redundancy", default=None, type=int)
@click.option("--ks", default=None, help="Comma-separated answer counts.")
@click.option("--seed", default=None, type=int)
@click.option("--options", "options_text", default=None)
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def convergence(ctx, answers, redundancy, ks, seed, options_text, out, workflow):
    """Consensus agreement at reduced answer counts."""
    from .consensus import convergence as convergence_op
    from .consensus import read_answers_csv

    out, workflow, seed = _common(ctx, "convergence", out, workflow, seed)
    cfg: _Ctx = ctx.obj
    redundancy = int(cfg.resolve("convergence", "redundancy", redundancy, 15))
    ks = cfg.resolve("convergence", "ks", ks, "5,7,9,11,13")
    options_text = cfg.resolve("convergence", "options", options_text, "3")
    try:
        report = read_answers_csv(answers)
        out_data = convergence_op(
            report.records,
            redundancy=redundancy,
            ks=[int(v) for v in str(ks).split(",")],
            seed=seed,
            options=_parse_options(str(options_text)),
        )
        workdir = _workdir(out, workflow)
        conv_path = os.path.join(workdir, "convergence.json")
        payload = {
            "redundancy": out_data["redundancy"],
            "n_tasks": out_data["n_tasks"],
            "per_k": {str(k): v for k, v in out_data["per_k"].items()},
            "per_task": {
                task: {str(k): bool(v) for k, v in agree.items()}
                for task, agree in out_data["per_task"].items()
            },
        }
        with open(conv_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _echo_config(workdir, "convergence",
                     {"answers": answers, "redundancy": redundancy,
                      "ks": ks, "seed": seed})
        _emit(
            {
                "command": "convergence",
                "status": "ok",
                "workflow": workflow,
                "outputs": [conv_path],
                "per_k": payload["per_k"],
                "seed": seed,
            }
        )
    except ForestEyesError as exc:
        _fail("convergence", exc)


@main.command()
@click.option("--answers", required=True, type=click.Path(exists=True))
@click.option("--results", "results_path", default=None,
              type=click.Path(exists=True))
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def times(ctx, answers, results_path, out, workflow):
    """Mean answer durations by class, kind, and difficulty."""
    from .consensus import load_results, read_answers_csv, time_stats

    out, workflow, _ = _common(ctx, "times", out, workflow)
    try:
        report = read_answers_csv(answers)
        results = None
        if results_path:
            results, _ = load_results(results_path)
        stats = time_stats(report.records, results)
        workdir = _workdir(out, workflow)
        times_path = os.path.join(workdir, "times.json")
        with open(times_path, "w", encoding="utf-8") as fh:
            json.dump(stats, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _echo_config(workdir, "times",
                     {"answers": answers, "results": results_path})
        _emit(
            {
                "command": "times",
                "status": "ok",
                "workflow": workflow,
                "outputs": [times_path],
                "n_used": stats["n_used"],
                "n_filtered": stats["n_filtered"],
            }
        )
    except ForestEyesError as exc:
        _fail("times", exc)


@main.command()
@click.option("--campaign", "campaign_dir", required=True,
              type=click.Path(exists=True))
@click.pass_context
def report(ctx, campaign_dir):
    """Consolidate campaign artifacts into one Markdown report."""
    from .report import build_report

    try:
        path = build_report(campaign_dir)
        _emit(
            {
                "command": "report",
                "status": "ok",
                "outputs": [path],
            }
        )
    except ForestEyesError as exc:
        _fail("report", exc)


@main.command()
@click.option("--segment-gt", "segment_gt_path", required=True,
              type=click.Path(exists=True))
@click.option("--variant", type=click.Choice(["u", "m"]), default=None)
@click.option("--pool-size", default=None, type=int)
@click.option("--accuracy", default=None, type=float)
@click.option("--perfect", is_flag=True, default=False)
@click.option("--redundancy", default=None, type=int)
@click.option("--registered-fraction", default=None, type=float)
@click.option("--seed", default=None, type=int)
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def simulate(ctx, segment_gt_path, variant, pool_size, accuracy, perfect,
             redundancy, registered_fraction, seed, out, workflow):
    """Generate a synthetic answer stream from segment ground truth."""
    from .consensus import write_answers_csv
    from .groundtruth import read_segment_gt_csv
    from .simulate import (
        binary_confusion,
        homogeneous_pool,
        identity_confusion,
        simulate_campaign,
        task_segment_map,
    )

    out, workflow, seed = _common(ctx, "simulate", out, workflow, seed)
    cfg: _Ctx = ctx.obj
    variant = cfg.resolve("simulate", "variant", variant, "m")
    pool_size = int(cfg.resolve("simulate", "pool_size", pool_size, 30))
    accuracy = float(cfg.resolve("simulate", "accuracy", accuracy, 0.9))
    redundancy = int(cfg.resolve("simulate", "redundancy", redundancy, 15))
    registered_fraction = float(
        cfg.resolve("simulate", "registered_fraction", registered_fraction, 0.8)
    )
    try:
        gt_u, gt_m = read_segment_gt_csv(segment_gt_path)
        seg_gt = gt_m if variant == "m" else gt_u
        confusion = identity_confusion() if perfect else binary_confusion(accuracy)
        pool = homogeneous_pool(pool_size, confusion,
                                registered_fraction=registered_fraction)
        records = simulate_campaign(seg_gt, pool, redundancy=redundancy,
                                    seed=seed, workflow_id=workflow)
        workdir = _workdir(out, workflow)
        answers_path = os.path.join(workdir, "answers.csv")
        write_answers_csv(records, answers_path)
        map_path = os.path.join(workdir, "task_segments.json")
        with open(map_path, "w", encoding="utf-8") as fh:
            json.dump(task_segment_map(seg_gt, workflow), fh, indent=2,
                      sort_keys=True)
            fh.write("\n")
        _echo_config(workdir, "simulate",
                     {"segment_gt": segment_gt_path, "variant": variant,
                      "pool_size": pool_size, "accuracy": accuracy,
                      "perfect": perfect, "redundancy": redundancy,
                      "seed": seed})
        _emit(
            {
                "command": "simulate",
                "status": "ok",
                "workflow": workflow,
                "outputs": [answers_path, map_path],
                "n_answers": len(records),
                "n_tasks": len(seg_gt.labels),
                "seed": seed,
            }
        )
    except ForestEyesError as exc:
        _fail("simulate", exc)


@main.command()
@click.option("--gt-a", "gt_a_path", required=True, type=click.Path())
@click.option("--gt-b", "gt_b_path", required=True, type=click.Path())
@click.option("--segmentation-b", "seg_b_path", required=True,
              type=click.Path())
@click.option("--results-b", "results_b_path", required=True,
              type=click.Path(exists=True))
@click.option("--epoch-a", default=None)
@click.option("--epoch-b", default=None)
@click.option("--out", default=None)
@click.option("--workflow", default=None)
@click.pass_context
def changedetect(ctx, gt_a_path, gt_b_path, seg_b_path, results_b_path,
                 epoch_a, epoch_b, out, workflow):
    """Compare two epochs; score detection of new deforestation."""
    from .changedetect import detection_report, gt_change, save_change_report
    from .consensus import load_results
    from .groundtruth import load_binary_gt
    from .raster import save_mask_png
    from .segment import load_segmentation

    out, workflow, _ = _common(ctx, "changedetect", out, workflow)
    cfg: _Ctx = ctx.obj
    epoch_a = cfg.resolve("changedetect", "epoch_a", epoch_a, "a")
    epoch_b = cfg.resolve("changedetect", "epoch_b", epoch_b, "b")
    try:
        change = gt_change(load_binary_gt(gt_a_path), load_binary_gt(gt_b_path))
        seg_b = load_segmentation(seg_b_path)
        results_b, _ = load_results(results_b_path)
        report_obj = detection_report(change, seg_b, results_b,
                                      epoch_a=epoch_a, epoch_b=epoch_b)
        workdir = _workdir(out, workflow)
        mask_path = os.path.join(workdir, "change_mask.png")
        save_mask_png(change, mask_path)
        outputs = [mask_path]
        extra = {"gt_change_pixels": int(change.sum())}
        if report_obj is not None:
            change_path = os.path.join(workdir, "change.json")
            save_change_report(report_obj, change_path)
            outputs.append(change_path)
            extra["detection_rate"] = report_obj.detection_rate
        _echo_config(workdir, "changedetect",
                     {"gt_a": gt_a_path, "gt_b": gt_b_path,
                      "epochs": [epoch_a, epoch_b]})
        _emit(
            {
                "command": "changedetect",
                "status": "ok",
                "workflow": workflow,
                "outputs": outputs,
                **extra,
            }
        )
    except ForestEyesError as exc:
        _fail("changedetect", exc)


if __name__ == "__main__":
    main()
