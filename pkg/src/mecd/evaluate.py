"""Sequential-introduction protocol, AUROC, forgetting and the expert sweep.

Classes are introduced one at a time: each new class is coreset-reduced,
routed to an expert, folded into that expert's bank, and then every class
introduced so far is re-scored on its assigned expert's current bank. The
resulting (step, class) AUROC grid is the ledger from which forgetting is
derived: a class's forgetting is its final AUROC minus its AUROC at the step
it was introduced, so negative values mean degradation.

Banks only change when their expert receives a class, so re-scoring a class
whose expert was untouched reproduces bitwise-identical scores; the runner
exploits that by caching per-class AUROC keyed on the expert's bank version.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .coreset import SplitMix64, coreset_select
from .dataio import ClassData, ClassStream, Label, stack_patches
from .memory import Expert, MemoryPolicy, memory_utilization, new_expert_pool, update_expert
from .router import AssignmentDecision, Centroid, RouterConfig, assign_expert
from .router import centroid as compute_centroid
from .scoring import score_class

_CORESET_PURPOSE = 1
_REPLAY_PURPOSE = 2


@dataclass(frozen=True)
class EngineConfig:
    router: RouterConfig
    memory: MemoryPolicy = MemoryPolicy()
    seed: int = 0
    class_order: tuple[str, ...] | None = None
    nn_method: str = "exact"

    def with_num_experts(self, num_experts: int) -> "EngineConfig":
        return replace(self, router=replace(self.router, num_experts=num_experts))


def derive_seed(base: int, *words: int) -> int:
    """Deterministic 64-bit sub-seed from a base seed and context words."""
    state = base & ((1 << 64) - 1)
    for w in words:
        state = SplitMix64(state ^ (w & ((1 << 64) - 1))).next_u64()
    return state


def auroc(scores, labels) -> float:
    """Probability a random anomalous score exceeds a random normal one.

    Computed by rank summation with average ranks for ties (ties count one
    half), which is exact for the all-tied (0.5) and perfectly separated
    (1.0) cases.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray([int(v) for v in labels], dtype=np.int64)
    if s.shape[0] != y.shape[0]:
        raise ValueError(f"{s.shape[0]} scores vs {y.shape[0]} labels")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"AUROC undefined: {n_pos} anomalous / {n_neg} normal samples"
        )

    order = np.argsort(s, kind="mergesort")
    sorted_scores = s[order]
    new_group = np.r_[True, sorted_scores[1:] != sorted_scores[:-1]]
    group_of = np.cumsum(new_group) - 1
    counts = np.bincount(group_of)
    starts = np.cumsum(counts) - counts
    avg_rank = starts + (counts - 1) / 2.0 + 1.0  # 1-based average rank per group

    ranks = np.empty_like(s)
    ranks[order] = avg_rank[group_of]
    u = float(np.sum(ranks[y == 1])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass
class ClassPrep:
    """Per-class training material: budgeted coreset and routing centroid."""

    class_name: str
    coreset: np.ndarray
    centroid: Centroid
    train_patches: int


def prepare_class(cls: ClassData, policy: MemoryPolicy, seed: int) -> ClassPrep:
    """Stack a class's train embeddings, take its coreset and centroid."""
    if not cls.train:
        raise ValueError(f"class {cls.name!r} has no training records")
    embeddings = stack_patches(cls.train)
    selection = coreset_select(embeddings, policy.per_class_budget, seed)
    return ClassPrep(
        class_name=cls.name,
        coreset=embeddings[selection.selected_indices],
        centroid=compute_centroid(embeddings),
        train_patches=int(embeddings.shape[0]),
    )


@dataclass
class ExpertSnapshot:
    expert_id: int
    assigned_classes: list[str]
    bank_size: int
    utilization: float


@dataclass
class EvaluationLedger:
    """Per-step, per-class AUROC history plus routing and memory bookkeeping."""

    class_order: list[str]
    entries: dict[tuple[int, str], float | None] = field(default_factory=dict)
    assignments: dict[str, AssignmentDecision] = field(default_factory=dict)
    intro_step: dict[str, int] = field(default_factory=dict)
    snapshots: dict[int, list[ExpertSnapshot]] = field(default_factory=dict)

    @property
    def final_step(self) -> int:
        return len(self.class_order) - 1

    def auroc_at(self, step: int, class_name: str) -> float | None:
        return self.entries[(step, class_name)]

    def final_auroc(self, class_name: str) -> float | None:
        return self.entries[(self.final_step, class_name)]

    def mean_final_auroc(self) -> float | None:
        values = [v for c in self.class_order if (v := self.final_auroc(c)) is not None]
        return float(np.mean(values)) if values else None

    def expert_of(self, class_name: str) -> int:
        return self.assignments[class_name].expert_id


@dataclass
class ForgettingReport:
    """Final-minus-introduction AUROC per class; negative means degradation."""

    per_class: dict[str, float]
    per_expert: dict[int, float]
    global_mean: float | None


def run_sequence(
    stream: ClassStream,
    config: EngineConfig,
    preps: dict[str, ClassPrep] | None = None,
) -> EvaluationLedger:
    """Run the sequential protocol and return the filled ledger.

    Deterministic given the config seed. Classes whose test split cannot
    define an AUROC are recorded as missing and the run continues.
    """
    return run_sequence_with_experts(stream, config, preps)[0]


def run_sequence_with_experts(
    stream: ClassStream,
    config: EngineConfig,
    preps: dict[str, ClassPrep] | None = None,
) -> tuple[EvaluationLedger, list[Expert]]:
    """run_sequence variant that also hands back the trained expert pool."""
    order = _resolve_order(stream, config)
    experts = new_expert_pool(config.router.num_experts, config.memory)
    ledger = EvaluationLedger(class_order=list(order))
    cache: dict[str, tuple[int, float | None]] = {}

    for step, name in enumerate(order):
        cls = stream.get_class(name)
        if preps is not None and name in preps:
            prep = preps[name]
        else:
            prep = prepare_class(
                cls, config.memory, derive_seed(config.seed, step, _CORESET_PURPOSE)
            )
        decision = assign_expert(prep.centroid, name, experts, config.router)
        update_expert(
            experts[decision.expert_id],
            name,
            prep.coreset,
            config.memory,
            derive_seed(config.seed, step, _REPLAY_PURPOSE),
        )
        ledger.assignments[name] = decision
        ledger.intro_step[name] = step

        # Banks change only through the update above, so a class on an
        # untouched expert keeps its previous (bitwise-identical) scores.
        for seen in order[: step + 1]:
            expert = experts[ledger.assignments[seen].expert_id]
            cached = cache.get(seen)
            if cached is not None and cached[0] == expert.bank_version:
                value = cached[1]
            else:
                value = _class_auroc(stream.get_class(seen), expert, config.nn_method)
                cache[seen] = (expert.bank_version, value)
            ledger.entries[(step, seen)] = value

        ledger.snapshots[step] = [
            ExpertSnapshot(
                expert_id=e.expert_id,
                assigned_classes=list(e.assigned_classes),
                bank_size=e.bank_size,
                utilization=memory_utilization(e),
            )
            for e in experts
        ]

    return ledger, experts


def _resolve_order(stream: ClassStream, config: EngineConfig) -> list[str]:
    available = stream.class_names()
    if config.class_order is None:
        return available
    order = list(config.class_order)
    if len(set(order)) != len(order):
        raise ValueError("class_order contains duplicates")
    unknown = [c for c in order if c not in available]
    if unknown:
        raise ValueError(f"class_order names absent from dataset: {unknown}")
    return order


def _class_auroc(cls: ClassData, expert: Expert, nn_method: str) -> float | None:
    if not cls.test:
        return None
    labels = [rec.label for rec in cls.test]
    if all(l == Label.NORMAL for l in labels) or all(l == Label.ANOMALOUS for l in labels):
        return None
    results = score_class(cls.test, cls.name, expert, method=nn_method)
    return auroc([r.score for r in results], labels)


def forgetting(ledger: EvaluationLedger) -> ForgettingReport:
    """Final-step AUROC minus introduction-step AUROC, aggregated.

    Classes introduced at the final step (or with a missing endpoint) have no
    defined forgetting and are excluded from every average. Per-expert values
    average over that expert's classes; the global value averages over all
    classes with defined forgetting.
    """
    final = ledger.final_step
    per_class: dict[str, float] = {}
    for name in ledger.class_order:
        intro = ledger.intro_step[name]
        if intro >= final:
            continue
        at_intro = ledger.entries[(intro, name)]
        at_end = ledger.entries[(final, name)]
        if at_intro is None or at_end is None:
            continue
        per_class[name] = at_end - at_intro

    per_expert: dict[int, float] = {}
    by_expert: dict[int, list[float]] = {}
    for name, value in per_class.items():
        by_expert.setdefault(ledger.expert_of(name), []).append(value)
    for expert_id, values in sorted(by_expert.items()):
        per_expert[expert_id] = float(np.mean(values))

    global_mean = float(np.mean(list(per_class.values()))) if per_class else None
    return ForgettingReport(
        per_class=per_class, per_expert=per_expert, global_mean=global_mean
    )


@dataclass
class SweepResult:
    num_experts: int
    mean_final_auroc: float | None
    global_forgetting: float | None
    ledger: EvaluationLedger


def expert_sweep(
    stream: ClassStream,
    base_config: EngineConfig,
    expert_counts: list[int],
) -> list[SweepResult]:
    """Independent runs across expert counts, identical seed and class order.

    Per-class coresets and centroids depend only on the seed and order, never
    on the expert count, so they are prepared once and shared by every run.
    """
    if any(n < 1 for n in expert_counts):
        raise ValueError(f"expert counts must be >= 1, got {expert_counts}")
    order = _resolve_order(stream, base_config)
    preps = {
        name: prepare_class(
            stream.get_class(name),
            base_config.memory,
            derive_seed(base_config.seed, step, _CORESET_PURPOSE),
        )
        for step, name in enumerate(order)
    }
    results = []
    for n in expert_counts:
        ledger = run_sequence(stream, base_config.with_num_experts(n), preps=preps)
        report = forgetting(ledger)
        results.append(
            SweepResult(
                num_experts=n,
                mean_final_auroc=ledger.mean_final_auroc(),
                global_forgetting=report.global_mean,
                ledger=ledger,
            )
        )
    return results
