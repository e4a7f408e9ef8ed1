"""Nearest-neighbor anomaly scoring against an expert's memory bank.

A patch's score is its Euclidean distance to the nearest bank member; an
image's score is the maximum over its patch scores. Scoring is exact by
default: squared distances come from explicit float64 differences, chunked so
the temporary stays small. The ``gram`` backend computes the same distances
through the |q|^2 + |b|^2 - 2 q.b identity (float64 matmul, clamped at zero),
which is far faster on large banks at the cost of last-ulp agreement; it is
validated against the exact path in the test suite and is never used by the
acceptance checks.

Scoring never mutates a bank and is trivially parallel across images.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from .dataio import EmbeddingRecord
    from .memory import Expert

NN_METHODS = ("exact", "gram")

_CHUNK_ELEMENTS = 4_000_000  # cap on the (chunk, bank, d) float64 temporary


class ScoringError(Exception):
    """Raised for empty banks, dimension mismatches or unassigned classes."""


@dataclass(frozen=True)
class AnomalyScore:
    image_id: str
    class_name: str
    expert_id: int
    score: float
    argmax_patch_index: int


def _check_bank(bank: np.ndarray, dim: int) -> np.ndarray:
    mat = np.asarray(bank)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise ScoringError("memory bank is empty")
    if mat.shape[1] != dim:
        raise ScoringError(
            f"dimension mismatch: query d={dim}, bank d={mat.shape[1]}"
        )
    return mat


def min_sq_dists(
    queries: np.ndarray, bank: np.ndarray, method: str = "exact"
) -> np.ndarray:
    """Squared distance from each query row to its nearest bank row."""
    if method not in NN_METHODS:
        raise ValueError(f"unknown nn method {method!r}, expected one of {NN_METHODS}")
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] == 0:
        raise ScoringError("no query patches")
    b = _check_bank(bank, q.shape[1]).astype(np.float64, copy=False)

    if method == "gram":
        sq = (
            np.sum(q * q, axis=1)[:, None]
            + np.sum(b * b, axis=1)[None, :]
            - 2.0 * (q @ b.T)
        )
        np.maximum(sq, 0.0, out=sq)
        return sq.min(axis=1)

    out = np.empty(q.shape[0], dtype=np.float64)
    rows = max(1, _CHUNK_ELEMENTS // (b.shape[0] * b.shape[1]))
    for start in range(0, q.shape[0], rows):
        chunk = q[start : start + rows]
        diff = chunk[:, None, :] - b[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        out[start : start + rows] = sq.min(axis=1)
    return out


def patch_score(patch: np.ndarray, bank: np.ndarray, method: str = "exact") -> float:
    """Euclidean distance from one patch to its nearest bank member."""
    p = np.asarray(patch, dtype=np.float64).reshape(1, -1)
    return float(np.sqrt(min_sq_dists(p, bank, method=method)[0]))


def patch_scores(
    patches: np.ndarray, bank: np.ndarray, method: str = "exact"
) -> np.ndarray:
    """Per-patch nearest-neighbor distances for a whole patch set."""
    return np.sqrt(min_sq_dists(patches, bank, method=method))


def image_score(
    patches: np.ndarray,
    bank: np.ndarray,
    image_id: str = "",
    class_name: str = "",
    expert_id: int = -1,
    method: str = "exact",
) -> AnomalyScore:
    """Max over patch scores; ties resolve to the lowest patch index."""
    scores = patch_scores(patches, bank, method=method)
    argmax = int(np.argmax(scores))
    return AnomalyScore(
        image_id=image_id,
        class_name=class_name,
        expert_id=expert_id,
        score=float(scores[argmax]),
        argmax_patch_index=argmax,
    )


def score_class(
    records: Iterable["EmbeddingRecord"],
    class_name: str,
    expert: "Expert",
    method: str = "exact",
) -> list[AnomalyScore]:
    """Score each record of a class against its assigned expert's bank.

    The class must have been assigned to this expert during training; record
    order is preserved and the bank is never modified.
    """
    if class_name not in expert.assigned_classes:
        raise ScoringError(
            f"class {class_name!r} was not assigned to expert {expert.expert_id} "
            f"(it holds {expert.assigned_classes})"
        )
    if expert.is_empty:
        raise ScoringError(f"expert {expert.expert_id} has an empty memory bank")
    return [
        image_score(
            rec.patches,
            expert.memory_bank,
            image_id=rec.image_id,
            class_name=class_name,
            expert_id=expert.expert_id,
            method=method,
        )
        for rec in records
    ]
