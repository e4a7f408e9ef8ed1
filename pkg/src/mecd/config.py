"""Flat key = value config files (INI sections) mirroring EngineConfig.

Example:

    [router]
    num_experts = 5
    similarity_threshold = 0.9
    max_classes_per_expert = 6

    [memory]
    per_class_budget = 400
    per_expert_budget = 2400
    replay_ratio = 0.2
    retention_mode = replay_shrink

    [run]
    seed = 0
    nn_method = exact
    class_order = bottle, cable, capsule

Missing sections or keys fall back to defaults; command-line flags override
file values. The resolved config is echoed into every run manifest so a run
can be reproduced exactly from its output directory.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .evaluate import EngineConfig
from .memory import MemoryPolicy
from .router import RouterConfig

DEFAULT_NUM_EXPERTS = 5


class ConfigError(Exception):
    """Raised for unreadable or invalid config files."""


def load_engine_config(path: Path | str | None) -> EngineConfig:
    parser = configparser.ConfigParser()
    if path is not None:
        read = parser.read(str(path))
        if not read:
            raise ConfigError(f"config file not found: {path}")

    def get(section: str, key: str, cast, default):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return cast(raw)
            except ValueError as err:
                raise ConfigError(f"[{section}] {key} = {raw!r}: {err}") from err
        return default

    try:
        router = RouterConfig(
            num_experts=get("router", "num_experts", int, DEFAULT_NUM_EXPERTS),
            similarity_threshold=get("router", "similarity_threshold", float, 0.9),
            max_classes_per_expert=get("router", "max_classes_per_expert", int, 6),
        )
        memory = MemoryPolicy(
            per_class_budget=get("memory", "per_class_budget", int, 400),
            per_expert_budget=get("memory", "per_expert_budget", int, 2400),
            replay_ratio=get("memory", "replay_ratio", float, 0.2),
            retention_mode=get("memory", "retention_mode", str, "replay_shrink"),
        )
        order_raw = get("run", "class_order", str, "")
        class_order = (
            tuple(name.strip() for name in order_raw.split(",") if name.strip())
            or None
        )
        return EngineConfig(
            router=router,
            memory=memory,
            seed=get("run", "seed", int, 0),
            class_order=class_order,
            nn_method=get("run", "nn_method", str, "exact"),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err


def engine_config_to_dict(config: EngineConfig) -> dict:
    return {
        "router": {
            "num_experts": config.router.num_experts,
            "similarity_threshold": config.router.similarity_threshold,
            "max_classes_per_expert": config.router.max_classes_per_expert,
        },
        "memory": {
            "per_class_budget": config.memory.per_class_budget,
            "per_expert_budget": config.memory.per_expert_budget,
            "replay_ratio": config.memory.replay_ratio,
            "retention_mode": config.memory.retention_mode,
        },
        "run": {
            "seed": config.seed,
            "class_order": list(config.class_order) if config.class_order else None,
            "nn_method": config.nn_method,
        },
    }
