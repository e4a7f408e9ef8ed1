"""Continual anomaly detection over multi-expert patch-embedding memory banks."""

from .coreset import CoresetSelection, SplitMix64, coreset_select, covering_radius, random_subsample
from .dataio import (
    ClassData,
    ClassStream,
    DatasetFormatError,
    EmbeddingRecord,
    Label,
    read_dataset,
    read_dataset_file,
    validate_stream,
    write_dataset,
    write_dataset_file,
)
from .evaluate import (
    EngineConfig,
    EvaluationLedger,
    ForgettingReport,
    SweepResult,
    auroc,
    expert_sweep,
    forgetting,
    prepare_class,
    run_sequence,
    run_sequence_with_experts,
)
from .memory import (
    Expert,
    ExpertMemoryError,
    MemoryPolicy,
    build_replay_buffer,
    load_experts,
    memory_utilization,
    new_expert_pool,
    save_experts,
    update_expert,
)
from .router import (
    AssignmentDecision,
    AssignmentReason,
    Centroid,
    PoolExhaustedError,
    RouterConfig,
    RoutingError,
    assign_expert,
    centroid,
    cosine_similarity,
)
from .scoring import AnomalyScore, ScoringError, image_score, patch_score, patch_scores, score_class

__version__ = "0.1.0"
