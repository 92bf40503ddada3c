"""Membership inference attacks on exported metric-learning embeddings."""

__version__ = "0.1.0"

from .attacks import (
    AttackConfig,
    AttackModel,
    evaluate_attack,
    infer,
    load_model,
    save_model,
    train_attack,
)
from .errors import CapacityError, FormatError, SimmiaError, TrainingError
from .evalreport import EvalReport, asr, compare_attacks, fraction_sweep, roc_curve
from .similarity import ReferenceSet, distance_matrix, sample_reference_set, similarity_vector
from .stats import gap_summary, per_reference_stats, stat_cdf
from .store import (
    EmbeddingDataset,
    EmbeddingRecord,
    Split,
    SplitCounts,
    assign_splits,
    load_dataset,
    make_dataset,
    save_dataset,
)
from .synth import (
    SynthConfig,
    SynthGroundTruth,
    generate,
    known_center_score,
    oracle_threshold_attack,
)
from .tinynet import DenseLayer, TrainConfig
