"""Run configuration: one structured-text file holds every field."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..losses import REC_NORMS
from ..network import NetworkConfig


@dataclass
class RunConfig:
    # datasets
    train_data: str | None = None
    finetune_data: str | None = None
    test_data: str | None = None
    # network
    resolution: int = 256
    width_mult: float = 1.0
    fs_channels: int = 32
    attn_dim: int = 32
    init_seed: int = 0
    # optimisation
    batch_size: int = 16
    lr: float = 1e-4
    betas: tuple[float, float] = (0.5, 0.999)
    steps: int = 1000
    epochs: int | None = None  # when set, overrides ``steps``
    seed: int = 0
    # bookkeeping
    checkpoint_dir: str = "runs/default"
    checkpoint_every: int = 500
    eval_every: int = 0  # 0 disables periodic evaluation / best-S-BER snapshots
    log_every: int = 50
    # behaviour flags
    no_refine: bool = False
    literal_mean: bool = False
    rec_norm: str = "full"
    fallback_scale: float = 0.5

    def __post_init__(self):
        if isinstance(self.betas, list):
            self.betas = tuple(self.betas)
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.resolution > 0 and self.resolution % 16 == 0, "resolution must be a positive multiple of 16"),
            (self.batch_size > 0, "batch_size must be positive"),
            (self.lr >= 0, "lr must be non-negative"),
            (len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas), "betas must be two values in [0, 1)"),
            (self.steps >= 0, "steps must be non-negative"),
            (self.epochs is None or self.epochs >= 0, "epochs must be non-negative"),
            (self.checkpoint_every >= 0 and self.eval_every >= 0 and self.log_every >= 0, "cadences must be >= 0"),
            (self.rec_norm in REC_NORMS, f"rec_norm must be one of {REC_NORMS}"),
            (0 < self.fallback_scale <= 1, "fallback_scale must be in (0, 1]"),
            (self.width_mult > 0, "width_mult must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def network_config(self) -> NetworkConfig:
        try:
            return NetworkConfig(
                resolution=self.resolution,
                width_mult=self.width_mult,
                fs_channels=self.fs_channels,
                attn_dim=self.attn_dim,
                init_seed=self.init_seed,
                refine=not self.no_refine,
                literal_mean=self.literal_mean,
                fallback_scale=self.fallback_scale,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read a YAML or JSON config file (JSON is valid YAML)."""
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at the top level")
        return cls.from_dict(data)

    def save(self, path) -> None:
        path = Path(path)
        if path.suffix == ".json":
            path.write_text(json.dumps(self.to_dict(), indent=1))
        else:
            path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def desk_run_config(**overrides) -> RunConfig:
    """CPU-sized preset: 128 px, quarter-width encoders, smaller attention space."""
    kw = dict(resolution=128, width_mult=0.25, fs_channels=16, attn_dim=16, batch_size=8)
    kw.update(overrides)
    return RunConfig(**kw)
