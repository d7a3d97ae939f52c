"""Central configuration dataclasses with the pinned default values.

Every tunable lives here so tests and the CLI can snapshot one object.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any

__all__ = ["GraphConfig", "ModelConfig", "TrainConfig", "SimConfig", "merge_config"]


@dataclass
class GraphConfig:
    """Lane graph and occupancy flow graph construction knobs."""

    target_segment_len: float = 0.3
    n_scale: int = 4
    interaction_threshold: float = 100.0

    def validate(self) -> None:
        if self.target_segment_len <= 0:
            raise ValueError("target_segment_len must be positive")
        if self.n_scale < 1:
            raise ValueError("n_scale must be at least 1")
        if self.interaction_threshold <= 0:
            raise ValueError("interaction_threshold must be positive")


@dataclass
class ModelConfig:
    """Network architecture knobs."""

    embed_dim: int = 64
    n_gat_layers: int = 3
    n_head: int = 4
    horizon: int = 12
    history: int = 5
    mlp_hidden: int = 64
    coord_scale: float = 10.0
    seed: int = 0

    def validate(self) -> None:
        if self.embed_dim < 1 or self.mlp_hidden < 1:
            raise ValueError("layer widths must be positive")
        if self.n_gat_layers < 1:
            raise ValueError("need at least one graph attention layer")
        if self.n_head < 1:
            raise ValueError("n_head must be at least 1")
        if self.embed_dim % self.n_head != 0:
            raise ValueError("embed_dim must be divisible by n_head")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.history < 1:
            raise ValueError("history must be at least 1")
        if self.coord_scale <= 0:
            raise ValueError("coord_scale must be positive")


@dataclass
class TrainConfig:
    """Imitation learning loop knobs."""

    epochs: int = 60
    batch_size: int = 3
    lr: float = 1e-5
    seed: int = 0
    grad_clip: float = 0.0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be non-negative")


@dataclass
class SimConfig:
    """Closed loop replay knobs."""

    duration: float = 20.0
    replan_interval: float = 0.5
    history: int = 5
    collision_check: bool = True
    w_theta: float = 2.5
    correction_decel: float = 3.0
    offroad_tolerance_factor: float = 0.5

    def validate(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.replan_interval <= 0:
            raise ValueError("replan_interval must be positive")
        if self.history < 1:
            raise ValueError("history must be at least 1")
        if self.w_theta < 0:
            raise ValueError("w_theta must be non-negative")
        if self.correction_decel <= 0:
            raise ValueError("correction_decel must be positive")


def merge_config(cls, overrides: dict[str, Any] | None):
    """Build a config dataclass from defaults plus a plain dict of overrides.

    Unknown keys raise so typos in config files fail loudly.
    """
    kwargs: dict[str, Any] = {}
    known = {f.name for f in fields(cls)}
    for key, value in (overrides or {}).items():
        if key not in known:
            raise ValueError(f"unknown {cls.__name__} option: {key!r}")
        kwargs[key] = value
    cfg = cls(**kwargs)
    cfg.validate()
    return cfg
