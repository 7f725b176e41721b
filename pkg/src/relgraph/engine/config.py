"""Training configuration and its ``key = value`` text form."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Tuple, get_type_hints

from ..backbone import BackboneConfig
from ..objectives import LossWeights

SEED_ENV = "RELGRAPH_SEED"


class ConfigFileError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # loss weights
    alpha: float = 0.05
    beta: float = 2.0
    gamma: float = 1.0
    lambda_local: float = 1.0
    margin: float = 0.3
    local_margin: float = 0.3
    # optimiser and schedule
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay: float = 0.1
    decay_period: int = 10
    epochs: int = 30
    steps_per_epoch: int = 0  # 0: one pass over the visible training images
    # batch geometry
    P: int = 4
    K_vis: int = 4
    K_ir: int = 4
    # network
    input_shape: Tuple[int, ...] = (3, 48, 24)
    stem_channels: Tuple[int, ...] = (8,)
    stem_stride: int = 2
    body_channels: Tuple[int, ...] = (16, 32)
    body_strides: Tuple[int, ...] = (2, 1)
    num_nodes: int = 6
    feat_dim: int = 32
    gem_p: float = 3.0
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    align_normalize: bool = True
    eval_local_weight: float = 1.0  # only used by the global+local ranking mode
    # reproducibility and paths
    seed: int = 0
    manifest: str = ""

    def __post_init__(self):
        self.loss_weights  # validates nonnegativity
        self.backbone  # validates geometry
        for name in ("lr", "momentum", "weight_decay", "lr_decay"):
            if getattr(self, name) < 0:
                raise ConfigFileError(f"{name} must be nonnegative, got {getattr(self, name)}")
        for name in ("decay_period", "epochs", "P", "K_vis", "K_ir"):
            if getattr(self, name) < 1:
                raise ConfigFileError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma, self.lambda_local, self.margin, self.local_margin)

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            input_shape=tuple(self.input_shape),
            stem_channels=tuple(self.stem_channels),
            stem_stride=self.stem_stride,
            body_channels=tuple(self.body_channels),
            body_strides=tuple(self.body_strides),
            num_nodes=self.num_nodes,
            feat_dim=self.feat_dim,
            bn_momentum=self.bn_momentum,
            bn_eps=self.bn_eps,
        )

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def lr_at(epoch: int, initial: float = 0.01, factor: float = 0.1, period: int = 10) -> float:
    """Step schedule: ``initial * factor ** (epoch // period)``."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return initial * factor ** (epoch // period)


# ---------------------------------------------------------------------------
# text form

def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, kind, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "1")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        # Tuple[int, ...]
        return tuple(int(part) for part in raw.replace("x", ",").split(",") if part.strip())
    except ValueError as exc:
        raise ConfigFileError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str, base=None, cls=None):
    """Parse ``key = value`` lines (``#`` comments) over the defaults of ``cls``."""
    cls = cls or TrainConfig
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    values = {} if base is None else {f.name: getattr(base, f.name) for f in fields(cls)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigFileError(f"line {lineno}: unknown key {key!r}")
        kind = hints[key]
        values[key] = _parse(raw, kind if kind in (bool, int, float, str) else tuple, key)
    try:
        return cls(**values)
    except ValueError as exc:
        raise ConfigFileError(str(exc)) from exc


def format_config(config) -> str:
    lines = [f"{f.name} = {_format(getattr(config, f.name))}" for f in fields(config)]
    return "\n".join(lines) + "\n"


def load_config(path, cls=None, env: bool = True):
    path = Path(path)
    config = parse_config_text(path.read_text(encoding="utf-8"), cls=cls)
    if env and isinstance(config, TrainConfig):
        config = apply_env(config)
    if isinstance(config, TrainConfig) and config.manifest and not Path(config.manifest).is_absolute():
        config = config.replace(manifest=str((path.parent / config.manifest).resolve()))
    return config


def apply_env(config: TrainConfig) -> TrainConfig:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return config
    try:
        return config.replace(seed=int(raw))
    except ValueError as exc:
        raise ConfigFileError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def save_config(config, path) -> None:
    Path(path).write_text(format_config(config), encoding="utf-8")
