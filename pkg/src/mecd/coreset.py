"""Greedy k-center coreset selection and seeded uniform subsampling.

The memory banks keep a budget-sized subset of each class's patch embeddings.
Selection is farthest-point (greedy k-center): the first point is drawn
uniformly at random, then each round adds the point whose Euclidean distance
to the already-selected set is largest. Greedy k-center carries the classic
guarantee that its covering radius is at most twice the optimal k-center
radius.

Reproducibility contract (frozen, do not change):

* PRNG is SplitMix64 (Steele, Lea & Flood, "Fast Splittable Pseudorandom
  Number Generators", OOPSLA 2014), seeded directly with the user's 64-bit
  seed.
* Bounded draws use ``next_u64() % n``.
* Uniform subsampling is a partial Fisher-Yates shuffle over [0, n), taking
  the first ``count`` slots, output sorted ascending.
* Farthest-point selection compares squared Euclidean distances accumulated
  in float64; ties pick the lowest candidate index, and already-selected
  indices are excluded so the result is always distinct (matters only when
  the input contains duplicate points).

Identical (inputs, budget, seed) therefore yield identical indices on every
platform and implementation that honors this contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator; 64-bit state, full 2^64 period."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform-ish integer in [0, n) via modulo reduction (frozen rule)."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        return self.next_u64() % n


@dataclass(frozen=True)
class CoresetSelection:
    """Indices chosen by farthest-point selection, in greedy pick order."""

    selected_indices: list[int]
    budget: int
    seed: int

    def __len__(self) -> int:
        return len(self.selected_indices)


def random_subsample(n: int, count: int, seed: int) -> list[int]:
    """Sample ``count`` distinct indices from [0, n) uniformly, sorted ascending.

    Deterministic for a given seed (partial Fisher-Yates under SplitMix64).
    """
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if count > n:
        raise ValueError(f"cannot sample {count} of {n} items without replacement")
    rng = SplitMix64(seed)
    idx = list(range(n))
    for i in range(count):
        j = i + rng.below(n - i)
        idx[i], idx[j] = idx[j], idx[i]
    return sorted(idx[:count])


def _as_matrix(embeddings: np.ndarray) -> np.ndarray:
    mat = np.asarray(embeddings)
    if mat.ndim != 2:
        raise ValueError(f"expected (n, d) embeddings, got shape {mat.shape}")
    return mat.astype(np.float64, copy=False)


def _sq_dists_to(point: np.ndarray, points: np.ndarray) -> np.ndarray:
    diff = points - point
    return np.einsum("ij,ij->i", diff, diff)


def coreset_select(
    embeddings: np.ndarray,
    budget: int,
    seed: int,
    initial_index: int | None = None,
) -> CoresetSelection:
    """Greedy k-center (farthest-point) selection of min(budget, n) indices.

    The first index is drawn uniformly under ``seed`` unless ``initial_index``
    pins it (useful for oracle comparisons). Each later pick maximizes the
    squared Euclidean distance to the selected set, lowest index on ties.
    """
    mat = _as_matrix(embeddings)
    n = mat.shape[0]
    if n == 0:
        raise ValueError("cannot select a coreset from an empty embedding set")
    if budget <= 0:
        raise ValueError(f"budget must be positive, got {budget}")

    k = min(budget, n)
    if initial_index is None:
        first = SplitMix64(seed).below(n)
    else:
        if not 0 <= initial_index < n:
            raise ValueError(f"initial index {initial_index} out of range [0, {n})")
        first = initial_index

    selected = [first]
    min_sq = _sq_dists_to(mat[first], mat)
    min_sq[first] = -np.inf  # selected points can never be re-picked
    while len(selected) < k:
        nxt = int(np.argmax(min_sq))
        selected.append(nxt)
        np.minimum(min_sq, _sq_dists_to(mat[nxt], mat), out=min_sq)
        min_sq[nxt] = -np.inf
    return CoresetSelection(selected_indices=selected, budget=budget, seed=seed)


def covering_radius(embeddings: np.ndarray, selected_indices: list[int]) -> float:
    """Max distance from any input point to its nearest selected point."""
    mat = _as_matrix(embeddings)
    if not selected_indices:
        raise ValueError("no selected indices")
    min_sq = np.full(mat.shape[0], np.inf)
    for idx in selected_indices:
        np.minimum(min_sq, _sq_dists_to(mat[idx], mat), out=min_sq)
    return float(np.sqrt(np.max(min_sq)))
