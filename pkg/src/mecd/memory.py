"""Expert memory banks: replay buffers, retention modes, persistence.

When a class is assigned to an expert, only that expert changes. Its bank is
rebuilt from the class's coreset plus retained material from the classes it
already holds; every other expert's bank stays bitwise identical.

Two retention modes are supported:

* ``replay_shrink`` (default): the bank is the new class's coreset unioned
  with the stored replay buffer of every previously assigned class. Old
  classes therefore shrink to their replay samples as soon as a newer class
  arrives.
* ``accumulate``: the bank is the union of the full coresets of all assigned
  classes. If that exceeds the per-expert budget, rows are dropped from the
  oldest class's non-replay portion first (tail-first within a class), then
  from progressively newer classes; replay rows are dropped only after every
  droppable non-replay row is gone, and the newest class's coreset is never
  touched.

Replay buffers are drawn once from the class coreset at assignment time and
never change afterwards.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coreset import random_subsample
from .router import Centroid, centroid as compute_centroid

STATE_MAGIC = b"MECB"
STATE_VERSION = 1
MANIFEST_NAME = "experts.json"

_U32 = struct.Struct("<I")

RETENTION_MODES = ("replay_shrink", "accumulate")


class ExpertMemoryError(Exception):
    """Raised on budget violations or duplicate class updates."""


@dataclass(frozen=True)
class MemoryPolicy:
    per_class_budget: int = 400
    per_expert_budget: int = 2400
    replay_ratio: float = 0.2
    retention_mode: str = "replay_shrink"

    def __post_init__(self) -> None:
        if self.per_class_budget < 1:
            raise ValueError(f"per_class_budget must be >= 1, got {self.per_class_budget}")
        if self.per_expert_budget < self.per_class_budget:
            raise ValueError(
                f"per_expert_budget ({self.per_expert_budget}) must be >= "
                f"per_class_budget ({self.per_class_budget})"
            )
        if not 0.0 < self.replay_ratio <= 1.0:
            raise ValueError(f"replay_ratio must lie in (0, 1], got {self.replay_ratio}")
        if self.retention_mode not in RETENTION_MODES:
            raise ValueError(
                f"retention_mode must be one of {RETENTION_MODES}, "
                f"got {self.retention_mode!r}"
            )


def replay_size(coreset_size: int, policy: MemoryPolicy) -> int:
    """floor(replay_ratio * coreset_size), never below 1."""
    return max(1, int(policy.replay_ratio * coreset_size))


def build_replay_buffer(
    class_coreset: np.ndarray, policy: MemoryPolicy, seed: int
) -> np.ndarray:
    """Uniform random subset of the class coreset kept for replay."""
    coreset_mat = _as_bank(class_coreset)
    if coreset_mat.shape[0] == 0:
        raise ValueError("cannot build a replay buffer from an empty coreset")
    idx = random_subsample(coreset_mat.shape[0], replay_size(coreset_mat.shape[0], policy), seed)
    return coreset_mat[idx]


@dataclass
class Expert:
    """One expert: memory bank, assigned classes, replay buffers, cached centroid."""

    expert_id: int
    policy: MemoryPolicy
    memory_bank: np.ndarray | None = None
    assigned_classes: list[str] = field(default_factory=list)
    replay_buffers: dict[str, np.ndarray] = field(default_factory=dict)
    class_coresets: dict[str, np.ndarray] = field(default_factory=dict)
    replay_indices: dict[str, list[int]] = field(default_factory=dict)
    centroid_cache: Centroid | None = None
    bank_version: int = 0

    @property
    def is_empty(self) -> bool:
        return self.memory_bank is None or self.memory_bank.shape[0] == 0

    @property
    def class_count(self) -> int:
        return len(self.assigned_classes)

    @property
    def bank_size(self) -> int:
        return 0 if self.memory_bank is None else int(self.memory_bank.shape[0])

    def centroid(self) -> Centroid:
        """Centroid of the current memory bank, recomputed lazily after updates."""
        if self.is_empty:
            raise ValueError(f"expert {self.expert_id} has an empty memory bank")
        if self.centroid_cache is None:
            self.centroid_cache = compute_centroid(self.memory_bank)
        return self.centroid_cache


def new_expert_pool(num_experts: int, policy: MemoryPolicy) -> list[Expert]:
    return [Expert(expert_id=i, policy=policy) for i in range(num_experts)]


def _as_bank(values: np.ndarray) -> np.ndarray:
    mat = np.ascontiguousarray(values, dtype=np.float32)
    if mat.ndim != 2:
        raise ValueError(f"expected (n, d) embeddings, got shape {mat.shape}")
    return mat


def update_expert(
    expert: Expert,
    class_name: str,
    class_coreset: np.ndarray,
    policy: MemoryPolicy,
    seed: int,
) -> Expert:
    """Fold a newly assigned class into the expert's memory (in place).

    Builds the class's replay buffer, rebuilds the bank per the retention
    mode, appends the class and invalidates the cached centroid. Returns the
    same expert for convenience.
    """
    coreset_mat = _as_bank(class_coreset)
    if coreset_mat.shape[0] == 0:
        raise ValueError(f"class {class_name!r}: empty coreset")
    if class_name in expert.assigned_classes:
        raise ExpertMemoryError(
            f"class {class_name!r} already assigned to expert {expert.expert_id}"
        )
    if coreset_mat.shape[0] > policy.per_class_budget:
        raise ExpertMemoryError(
            f"class {class_name!r}: coreset size {coreset_mat.shape[0]} exceeds "
            f"per-class budget {policy.per_class_budget}"
        )

    n = coreset_mat.shape[0]
    replay_idx = random_subsample(n, replay_size(n, policy), seed)

    if policy.retention_mode == "replay_shrink":
        parts = [coreset_mat]
        parts += [expert.replay_buffers[j] for j in expert.assigned_classes]
        bank = np.concatenate(parts, axis=0)
        if bank.shape[0] > policy.per_expert_budget:
            raise ExpertMemoryError(
                f"expert {expert.expert_id}: bank of {bank.shape[0]} exceeds "
                f"per-expert budget {policy.per_expert_budget}"
            )
    else:
        bank = _accumulate_bank(expert, class_name, coreset_mat, policy)

    expert.class_coresets[class_name] = coreset_mat
    expert.replay_indices[class_name] = replay_idx
    expert.replay_buffers[class_name] = coreset_mat[replay_idx]
    expert.assigned_classes.append(class_name)
    expert.memory_bank = bank
    expert.centroid_cache = None
    expert.bank_version += 1
    return expert


def _accumulate_bank(
    expert: Expert,
    new_class: str,
    new_coreset: np.ndarray,
    policy: MemoryPolicy,
) -> np.ndarray:
    total = sum(c.shape[0] for c in expert.class_coresets.values()) + new_coreset.shape[0]
    overflow = total - policy.per_expert_budget

    kept: list[np.ndarray] = []
    for name in expert.assigned_classes:
        coreset_mat = expert.class_coresets[name]
        keep = np.ones(coreset_mat.shape[0], dtype=bool)
        if overflow > 0:
            protected = set(expert.replay_indices[name])
            droppable = [i for i in range(coreset_mat.shape[0]) if i not in protected]
            for i in reversed(droppable):
                if overflow == 0:
                    break
                keep[i] = False
                overflow -= 1
        kept.append(coreset_mat[keep])

    if overflow > 0:
        # Non-replay rows are exhausted; sacrifice replay rows, oldest class
        # first, before ever touching the incoming coreset.
        for pos, name in enumerate(expert.assigned_classes):
            if overflow == 0:
                break
            part = kept[pos]
            drop = min(overflow, part.shape[0])
            kept[pos] = part[: part.shape[0] - drop]
            overflow -= drop

    if overflow > 0:
        raise ExpertMemoryError(
            f"expert {expert.expert_id}: cannot fit class {new_class!r} within "
            f"per-expert budget {policy.per_expert_budget}"
        )
    return np.concatenate(kept + [new_coreset], axis=0) if kept else new_coreset.copy()


def memory_utilization(expert: Expert) -> float:
    """Assigned-class budget consumed relative to the per-expert budget.

    Accounted per class (class count times per-class budget over expert
    budget), independent of how the retention mode shaped the actual bank.
    """
    policy = expert.policy
    return expert.class_count * policy.per_class_budget / policy.per_expert_budget


# ---------------------------------------------------------------------------
# Persistence: one MECB blob per expert plus a JSON manifest.
#
# MECB layout (little-endian): magic b"MECB" | version u32 | dimension u32 |
# expert_id u32 | bank count u32 | bank floats f32 | class count u32 | per
# class in assigned order: name (u32 + UTF-8) | coreset count u32 | coreset
# floats f32 | replay count u32 | replay indices u32.
# ---------------------------------------------------------------------------


def save_experts(experts: list[Expert], dimension: int, out_dir: Path | str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    policy = experts[0].policy if experts else MemoryPolicy()
    for expert in experts:
        filename = f"expert_{expert.expert_id:02d}.mecb"
        _write_expert_blob(expert, dimension, out / filename)
        entries.append(
            {
                "expert_id": expert.expert_id,
                "file": filename,
                "assigned_classes": list(expert.assigned_classes),
                "bank_size": expert.bank_size,
            }
        )
    manifest = {
        "format": "mecd-expert-state",
        "version": STATE_VERSION,
        "dimension": dimension,
        "policy": {
            "per_class_budget": policy.per_class_budget,
            "per_expert_budget": policy.per_expert_budget,
            "replay_ratio": policy.replay_ratio,
            "retention_mode": policy.retention_mode,
        },
        "experts": entries,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")


def load_experts(state_dir: Path | str) -> tuple[list[Expert], MemoryPolicy, int]:
    state = Path(state_dir)
    manifest = json.loads((state / MANIFEST_NAME).read_text())
    if manifest.get("version") != STATE_VERSION:
        raise ExpertMemoryError(
            f"unsupported expert-state version {manifest.get('version')}"
        )
    policy = MemoryPolicy(**manifest["policy"])
    dimension = int(manifest["dimension"])
    experts = []
    for entry in manifest["experts"]:
        expert = _read_expert_blob(state / entry["file"], policy, dimension)
        if expert.assigned_classes != entry["assigned_classes"]:
            raise ExpertMemoryError(
                f"expert {expert.expert_id}: manifest and blob disagree on classes"
            )
        experts.append(expert)
    return experts, policy, dimension


def assignment_table(experts: list[Expert]) -> dict[str, int]:
    table: dict[str, int] = {}
    for expert in experts:
        for name in expert.assigned_classes:
            table[name] = expert.expert_id
    return table


def _write_expert_blob(expert: Expert, dimension: int, path: Path) -> None:
    with open(path, "wb") as sink:
        sink.write(STATE_MAGIC)
        sink.write(_U32.pack(STATE_VERSION))
        sink.write(_U32.pack(dimension))
        sink.write(_U32.pack(expert.expert_id))
        bank = expert.memory_bank
        if bank is None:
            bank = np.zeros((0, dimension), dtype=np.float32)
        sink.write(_U32.pack(bank.shape[0]))
        sink.write(np.ascontiguousarray(bank, dtype="<f4").tobytes())
        sink.write(_U32.pack(len(expert.assigned_classes)))
        for name in expert.assigned_classes:
            raw = name.encode("utf-8")
            sink.write(_U32.pack(len(raw)))
            sink.write(raw)
            coreset_mat = expert.class_coresets[name]
            sink.write(_U32.pack(coreset_mat.shape[0]))
            sink.write(np.ascontiguousarray(coreset_mat, dtype="<f4").tobytes())
            idx = expert.replay_indices[name]
            sink.write(_U32.pack(len(idx)))
            sink.write(np.asarray(idx, dtype="<u4").tobytes())


def _read_expert_blob(path: Path, policy: MemoryPolicy, dimension: int) -> Expert:
    data = path.read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ExpertMemoryError(f"{path.name}: truncated at byte {pos}")
        out = data[pos : pos + n]
        pos += n
        return out

    def u32() -> int:
        return _U32.unpack(take(4))[0]

    if take(4) != STATE_MAGIC:
        raise ExpertMemoryError(f"{path.name}: bad magic, not an expert blob")
    if u32() != STATE_VERSION:
        raise ExpertMemoryError(f"{path.name}: unsupported version")
    if u32() != dimension:
        raise ExpertMemoryError(f"{path.name}: dimension mismatch with manifest")
    expert_id = u32()

    def floats(count: int) -> np.ndarray:
        raw = take(count * dimension * 4)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(count, dimension)

    bank = floats(u32())
    expert = Expert(expert_id=expert_id, policy=policy)
    expert.memory_bank = bank if bank.shape[0] else None
    n_classes = u32()
    for _ in range(n_classes):
        name = take(u32()).decode("utf-8")
        coreset_mat = floats(u32())
        n_idx = u32()
        idx = np.frombuffer(take(n_idx * 4), dtype="<u4").astype(int).tolist()
        expert.assigned_classes.append(name)
        expert.class_coresets[name] = coreset_mat
        expert.replay_indices[name] = idx
        expert.replay_buffers[name] = coreset_mat[idx]
    expert.bank_version = n_classes
    return expert
