"""Campaign engine for citizen-science deforestation monitoring.

Multiband rasters go in one end (crop/resample, component composite,
superpixel segmentation, task bundles); volunteer answer logs go in the
other (consensus, difficulty, convergence, volunteer ranking, change
detection). Everything is seeded and reproducible.
"""

from .changedetect import ChangeReport, detection_report, gt_change
from .consensus import (
    AnswerRecord,
    TaskResult,
    aggregate_results,
    convergence,
    difficulty_tables,
    entropy_difficulty,
    majority_vote,
    read_answers_csv,
    time_stats,
    write_answers_csv,
)
from .decompose import PcaComposite, fit_pca, pca_composite
from .errors import (
    ForestEyesError,
    FormatError,
    IncompleteTaskError,
    MissingArtifactError,
    SchemaError,
    ValidationError,
)
from .groundtruth import (
    AccuracyReport,
    BinaryGT,
    ClassMap,
    SegmentGT,
    accuracy,
    binarize,
    build_segment_gt,
    hor,
    hor_histogram,
    pixel_accuracy,
    segment_hor,
)
from .raster import (
    BandStack,
    NdviResult,
    RgbComposite,
    compose,
    crop_resample,
    load_band_stack,
    ndvi,
    save_band_stack,
)
from .scoring import VolunteerScore, cohort_averages, volunteer_scores
from .segment import (
    IftSlic,
    KMeansRefiner,
    Mask,
    MaskSlic,
    Segmentation,
    SegmentRecord,
    Slic,
    check_segmentation,
    ift_slic,
    mask_slic,
    refine_kmeans,
    requested_segments,
    segmentation_stats,
    slic,
)
from .simulate import (
    VolunteerModel,
    binary_confusion,
    homogeneous_pool,
    identity_confusion,
    simulate_campaign,
)
from .tasks import (
    Panel,
    TaskSpec,
    generate_tasks,
    select_tasks_by_hor,
    select_tasks_for_refinement,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
