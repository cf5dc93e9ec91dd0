"""Pipeline configuration read from a TOML file.

Every section is optional and every key has a default; unknown sections or
keys are rejected so typos fail loudly. Relative paths are resolved against
the directory holding the config file.
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .affinity import AffinityParams
from .crf import CRFParams
from .losses import SsimConstants
from .wnet import NetworkConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LossSettings:
    lambda_ncut: float = 1.0
    lambda_rec: float = 1.0
    # "joint": one step on the weighted sum; "alternating": N-cut step on the
    # encoder, then reconstruction step on both U-Nets
    mode: str = "joint"
    freeze_decoder: bool = False

    def __post_init__(self):
        if self.mode not in ("joint", "alternating"):
            raise ValueError(f"loss mode must be 'joint' or 'alternating', got {self.mode!r}")
        if self.lambda_ncut < 0 or self.lambda_rec < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class OptimizerSettings:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 1
    max_steps: int = 0  # 0: no cap
    shuffle: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.max_steps < 0:
            raise ValueError("optimizer needs lr > 0, epochs >= 1, max_steps >= 0")


@dataclass(frozen=True)
class DataSettings:
    train_dir: str = "train"
    pattern: str = "*.vol3"
    out_dir: str = "run"
    cache_dir: str = ""  # default: <out_dir>/cache


@dataclass(frozen=True)
class RuntimeSettings:
    threads: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    clusters: tuple[int, ...] = ()
    network: NetworkConfig = field(default_factory=NetworkConfig)
    affinity: AffinityParams = field(default_factory=AffinityParams)
    crf: CRFParams = field(default_factory=CRFParams)
    ssim: SsimConstants = field(default_factory=SsimConstants)
    loss: LossSettings = field(default_factory=LossSettings)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    data: DataSettings = field(default_factory=DataSettings)
    runtime: RuntimeSettings = field(default_factory=RuntimeSettings)
    base_dir: Path = field(default=Path("."), compare=False)

    def path(self, p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.data.out_dir)

    @property
    def cache_dir(self) -> Path:
        return self.path(self.data.cache_dir) if self.data.cache_dir else self.out_dir / "cache"


_SECTIONS = {
    "network": NetworkConfig,
    "affinity": AffinityParams,
    "crf": CRFParams,
    "ssim": SsimConstants,
    "loss": LossSettings,
    "optimizer": OptimizerSettings,
    "data": DataSettings,
    "runtime": RuntimeSettings,
}
_TOP = {"seed", "clusters"}


def _build(cls, values: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{where}]: {e}") from None


def config_from_dict(doc: dict, base_dir=".") -> PipelineConfig:
    unknown = set(doc) - _TOP - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    seed = int(doc.get("seed", 0))
    parts = {}
    for name, cls in _SECTIONS.items():
        values = dict(doc.get(name, {}))
        if name == "network":
            values.setdefault("seed", seed)
        parts[name] = _build(cls, values, name)
    clusters = tuple(int(c) for c in doc.get("clusters", ()))
    if any(c < 0 or c >= parts["network"].K for c in clusters):
        raise ConfigError(f"cluster ids must lie in [0, {parts['network'].K})")
    return PipelineConfig(seed=seed, clusters=clusters, base_dir=Path(base_dir), **parts)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return config_from_dict(doc, path.parent)


def config_to_toml(cfg: PipelineConfig) -> str:
    """Serialize back to TOML (flat scalars only, which is all the schema uses)."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, (tuple, list)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    lines = [f"seed = {cfg.seed}", f"clusters = {fmt(cfg.clusters)}"]
    for name in _SECTIONS:
        lines.append(f"\n[{name}]")
        for k, v in dataclasses.asdict(getattr(cfg, name)).items():
            if name == "network" and k == "seed":
                continue
            lines.append(f"{k} = {fmt(v)}")
    return "\n".join(lines) + "\n"
