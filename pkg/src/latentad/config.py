"""Run configuration: defaults, flat key-value config files, validation.

Defaults follow the reference hyperparameter set this pipeline ships with:
sub-windows of 64 timestamps, hierarchy [1, 4] with latent dims [20, 5],
window step 256, filter multiplier 32 capped at 256 filters, Langevin 25
steps in training and 500 at inference with step size 1e-3 and sigma 0.025,
Adam at 1e-3 for 1000 iterations with batch 4 and three 0.8x decays.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .generator import GeneratorArch
from .hierarchy import HierarchySpec, latent_layout
from .langevin import LangevinConfig


@dataclass
class RunConfig:
    sub_window_len: int = 64
    hierarchy: tuple[int, ...] = (1, 4)
    latent_dims: tuple[int, ...] = (20, 5)
    step: int = 256
    filter_multiplier: int = 32
    max_filters: int = 256
    langevin_steps_train: int = 25
    langevin_steps_infer: int = 500
    langevin_step_size: float = 1e-3
    sigma_z: float = 0.025
    learning_rate: float = 1e-3
    iterations: int = 1000
    batch_size: int = 4
    lr_decay: float = 0.8
    n_decays: int = 3
    seed: int = 0
    occlusion_r: int = 5
    occlusion_p: float = 0.0
    channel_select: tuple[int, ...] | None = None
    downsample_factor: int = 1
    masks_enabled: bool = True
    checkpoint_every: int = 0
    workers: int = 1
    timing: bool = False
    per_feature_scores: bool = False
    adjusted: bool = False

    def hierarchy_spec(self) -> HierarchySpec:
        return HierarchySpec(self.hierarchy, self.latent_dims, self.sub_window_len)

    def arch(self, n_features: int) -> GeneratorArch:
        state_dim = latent_layout(self.hierarchy_spec()).state_dim
        return GeneratorArch(n_features, self.sub_window_len, self.filter_multiplier,
                             self.max_filters, state_dim)

    def langevin_train(self) -> LangevinConfig:
        return LangevinConfig(self.langevin_steps_train, self.langevin_step_size,
                              self.sigma_z, noise_enabled=True)

    def langevin_infer_cfg(self) -> LangevinConfig:
        return LangevinConfig(self.langevin_steps_infer, self.langevin_step_size,
                              self.sigma_z, noise_enabled=False)

    def validate(self, n_features: int = 1) -> None:
        """Run every structural check before any work starts."""
        self.hierarchy_spec()
        self.arch(n_features)
        self.langevin_train()
        self.langevin_infer_cfg()
        if self.step < 1:
            raise ConfigError(f"step must be >= 1, got {self.step}")
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigError(f"iterations and batch_size must be >= 1, got "
                              f"{self.iterations} and {self.batch_size}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.occlusion_r < 1 or not 0.0 <= self.occlusion_p <= 1.0:
            raise ConfigError(f"occlusion needs r >= 1 and p in [0, 1], got "
                              f"r={self.occlusion_r} p={self.occlusion_p}")
        if self.downsample_factor < 1:
            raise ConfigError(f"downsample_factor must be >= 1, got {self.downsample_factor}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


def _fields() -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(RunConfig)}


def parse_value(key: str, raw: str):
    """Parse one config value by the declared type of its field."""
    fields = _fields()
    if key not in fields:
        raise ConfigError(f"unknown config key {key!r}")
    hint = fields[key].type
    raw = raw.strip()
    try:
        if hint == "int":
            return int(raw)
        if hint == "float":
            return float(raw)
        if hint == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if hint.startswith("tuple[int, ...] | None"):
            if raw.lower() in ("", "none", "all"):
                return None
            return tuple(int(v) for v in raw.split(","))
        if hint.startswith("tuple"):
            return tuple(int(v) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {hint}") from None
    raise ConfigError(f"config key {key!r} has unsupported type {hint}")


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def load_config(path) -> dict[str, object]:
    """Read `key = value` lines; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    out: dict[str, object] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = line.split("=", 1)
            key = key.strip()
            try:
                out[key] = parse_value(key, raw)
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return out


def resolve_config(file_values: dict[str, object] | None = None,
                   overrides: dict[str, object] | None = None) -> RunConfig:
    """defaults < config file < explicit overrides."""
    merged: dict[str, object] = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(merged) - set(_fields())
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged)


# keys that steer execution, not the modeled artifact; checkpoints omit them
EXECUTION_ONLY = ("workers", "timing", "checkpoint_every")


def config_text(cfg: RunConfig, exclude: tuple[str, ...] = ()) -> str:
    """Canonical serialization; reloading it reproduces the run exactly."""
    lines = [f"{f.name} = {format_value(getattr(cfg, f.name))}"
             for f in dataclasses.fields(RunConfig) if f.name not in exclude]
    return "\n".join(lines) + "\n"
