"""Training configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .sampling import check_rates

ABLATIONS = ("none", "no_te", "random_mask", "mlp_mask", "no_rd")

# hyperparameter grids searched in the original experiments, for reference
GRIDS = {
    "rho_r": (0.5, 0.6, 0.7, 0.8, 0.9),
    "lambda1": (0.5, 1, 2, 4, 8),
    "lambda2": (1, 1e-1, 1e-2, 1e-3, 1e-4),
    "lambda3": (1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8),
    "topo_layers": (1, 2, 3, 4, 5, 6),
    "gcn_layers": (1, 2, 3, 4, 5),
}


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 32
    heads: int = 4
    anchor_count: int = 32
    cutoff: int = 4
    topo_layers: int = 1
    gcn_layers: int = 2
    ae_layers: int = 2
    cir_layers: int = 2
    rho_r: float = 0.7
    rho_m: float = 0.9
    rho_c: float = 0.1
    eps: float = 1e-8
    tau: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1e-2
    lambda3: float = 1e-5
    lr: float = 1e-3
    batch_size: int = 4096
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    ablation: str = "none"
    rec_mode: str = "auto"
    rec_negatives: int = 256
    clip_norm: float = 5.0
    eval_k: int = 20
    resample_anchors: bool = False

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.dim <= 0 or self.heads <= 0 or self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} must be a positive multiple of heads {self.heads}")
        check_rates(self.rho_r, self.rho_m, self.rho_c)
        for name in ("topo_layers", "gcn_layers", "ae_layers", "cir_layers", "max_epochs", "patience"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.anchor_count <= 0:
            raise ConfigError("anchor_count must be positive")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.tau <= 0 or self.eps <= 0 or self.lr <= 0:
            raise ConfigError("tau, eps and lr must be positive")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.rec_mode not in ("auto", "full", "sampled"):
            raise ConfigError(f"rec_mode must be auto, full or sampled, got {self.rec_mode!r}")

    @property
    def effective_lambda1(self) -> float:
        return 0.0 if self.ablation == "no_rd" else self.lambda1

    @property
    def use_topology(self) -> bool:
        return self.ablation != "no_te"

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(mapping) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = {k: coerce(known[k].type, k, v) for k, v in mapping.items()}
        return cls(**values)


def coerce(type_name, key: str, value):
    if not isinstance(value, str):
        return value
    type_name = str(type_name)
    try:
        if type_name == "bool":
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if type_name == "int":
            return int(value)
        if type_name == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value.strip()


def parse_config_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def format_config(mapping: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for one named consumer of randomness."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *map(int, extra)])
