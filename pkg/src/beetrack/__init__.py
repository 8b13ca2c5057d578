"""Identity-preserving tracking of 12-bit marker detections.

Reconstructs long trajectories from noisy decoded markers in two learned
steps (detection linking, then gap-tolerant tracklet merging), assigns each
track its median-vote ID, and evaluates results against ground truth. Ships
with a synthetic data generator, a JSONL file pipeline with hour-chunk
parallelism, an HTTP service, and a CLI.
"""

__version__ = "0.1.0"

from .core import (
    Detection,
    GroundTruthTrack,
    Track,
    Tracklet,
    angular_difference,
    assign_track_id,
    binarize_bits,
    bits_of_id,
    bitwise_median,
    manhattan_bits,
)
from .assignment import ScoreMatrix, solve_assignment
from .errors import (
    BeetrackError,
    DataFormatError,
    InternalError,
    InvalidInputError,
    ModelFormatError,
    TrainingError,
)
from .features import (
    Step1Features,
    Step2Features,
    gate_candidates,
    step1_features,
    step2_features,
)
from .scoring import (
    ForestModel,
    ForestTrainConfig,
    LabeledSample,
    LinearModel,
    LinearTrainConfig,
    load_model,
    predict_forest,
    predict_linear,
    save_model,
    train_forest,
    train_linear,
)
from .tracking import (
    TrackerConfig,
    track_baseline,
    track_step1,
    track_step2,
    tracklets_as_tracks,
    with_assigned_ids,
)
from .evaluation import (
    EvalReport,
    evaluate,
    make_step1_samples,
    make_step2_samples,
    match_tracks,
)
from .synthgen import MotionConfig, SynthConfig, corrupt_bits, generate
from .pipeline import ChunkPlan, merge_chunks, run_chunked, run_pipeline
