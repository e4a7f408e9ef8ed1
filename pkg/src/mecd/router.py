"""Similarity-driven assignment of newly arriving classes to experts.

A new class goes to the expert whose memory-bank centroid is most
cosine-similar to the class centroid, provided that similarity clears the
configured threshold and the expert has spare class capacity. Otherwise the
class opens the lowest-index unassigned expert; when none remains it falls
back to the most similar non-full expert. The very first class always goes to
expert 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .memory import Expert


class RoutingError(Exception):
    """Raised when no expert can accept a class."""


class PoolExhaustedError(RoutingError):
    """Every expert is at its class-capacity limit."""


class AssignmentReason(str, Enum):
    FIRST_CLASS = "first_class"
    SIMILARITY = "similarity"
    FRESH_EXPERT = "fresh_expert"
    CAPACITY_FALLBACK = "capacity_fallback"


@dataclass(frozen=True)
class RouterConfig:
    num_experts: int
    similarity_threshold: float = 0.9
    max_classes_per_expert: int = 6

    def __post_init__(self) -> None:
        if self.num_experts < 1:
            raise ValueError(f"num_experts must be >= 1, got {self.num_experts}")
        if not -1.0 <= self.similarity_threshold <= 1.0:
            raise ValueError(
                f"similarity_threshold must lie in [-1, 1], "
                f"got {self.similarity_threshold}"
            )
        if self.max_classes_per_expert < 1:
            raise ValueError(
                f"max_classes_per_expert must be >= 1, "
                f"got {self.max_classes_per_expert}"
            )


@dataclass
class Centroid:
    """Arithmetic mean of a set of embeddings plus how many were averaged."""

    values: np.ndarray
    count: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.count < 1:
            raise ValueError(f"centroid count must be >= 1, got {self.count}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("centroid has non-finite components")


@dataclass
class AssignmentDecision:
    class_name: str
    expert_id: int
    reason: AssignmentReason
    similarity_scores: dict[int, float] = field(default_factory=dict)


def centroid(embeddings: np.ndarray) -> Centroid:
    """Componentwise mean of an (n, d) embedding matrix, accumulated in float64."""
    mat = np.asarray(embeddings)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise ValueError(f"expected non-empty (n, d) embeddings, got shape {mat.shape}")
    values = mat.astype(np.float64, copy=False).mean(axis=0)
    return Centroid(values=values, count=int(mat.shape[0]))


def cosine_similarity(a: Centroid, b: Centroid) -> float:
    """Cosine of the angle between two centroids, clamped to [-1, 1].

    The denominator is sqrt(<a,a> * <b,b>), which makes identical vectors
    score exactly 1.0 (sqrt of a rounded square recovers the exact root).
    """
    sq_a = float(np.dot(a.values, a.values))
    sq_b = float(np.dot(b.values, b.values))
    if sq_a == 0.0 or sq_b == 0.0:
        raise ValueError("cosine similarity undefined for a zero-norm centroid")
    sim = float(np.dot(a.values, b.values)) / math.sqrt(sq_a * sq_b)
    return min(1.0, max(-1.0, sim))


def assign_expert(
    new_class_centroid: Centroid,
    class_name: str,
    experts: Sequence["Expert"],
    config: RouterConfig,
) -> AssignmentDecision:
    """Pick the expert that receives ``class_name``.

    Decision order: first class ever -> expert 0; best similarity >= threshold
    among non-empty experts with spare capacity; lowest-index empty expert;
    most similar non-full expert. Similarity ties break toward the lowest
    expert index. Raises PoolExhaustedError when every expert is full.
    """
    if len(experts) != config.num_experts:
        raise RoutingError(
            f"pool has {len(experts)} experts, config expects {config.num_experts}"
        )

    # Similarities of every non-empty expert are recorded for reporting, even
    # for experts that are ineligible because they sit at class capacity.
    scores: dict[int, float] = {}
    for expert in experts:
        if not expert.is_empty:
            scores[expert.expert_id] = cosine_similarity(
                new_class_centroid, expert.centroid()
            )

    if not scores:
        return AssignmentDecision(
            class_name=class_name,
            expert_id=experts[0].expert_id,
            reason=AssignmentReason.FIRST_CLASS,
            similarity_scores=scores,
        )

    def pick_most_similar(candidates: list[int]) -> tuple[int, float]:
        best_id, best_sim = candidates[0], scores[candidates[0]]
        for expert_id in candidates[1:]:
            if scores[expert_id] > best_sim:
                best_id, best_sim = expert_id, scores[expert_id]
        return best_id, best_sim

    eligible = [
        e.expert_id
        for e in experts
        if not e.is_empty and e.class_count < config.max_classes_per_expert
    ]
    if eligible:
        best_id, best_sim = pick_most_similar(eligible)
        if best_sim >= config.similarity_threshold:
            return AssignmentDecision(
                class_name=class_name,
                expert_id=best_id,
                reason=AssignmentReason.SIMILARITY,
                similarity_scores=scores,
            )

    for expert in experts:
        if expert.is_empty:
            return AssignmentDecision(
                class_name=class_name,
                expert_id=expert.expert_id,
                reason=AssignmentReason.FRESH_EXPERT,
                similarity_scores=scores,
            )

    non_full = [
        e.expert_id for e in experts if e.class_count < config.max_classes_per_expert
    ]
    if not non_full:
        raise PoolExhaustedError(
            f"all {config.num_experts} experts hold "
            f"{config.max_classes_per_expert} classes; cannot place {class_name!r}"
        )
    best_id, _ = pick_most_similar(non_full)
    return AssignmentDecision(
        class_name=class_name,
        expert_id=best_id,
        reason=AssignmentReason.CAPACITY_FALLBACK,
        similarity_scores=scores,
    )
