"""All tunable knobs in one nested document with dotted-path overrides."""

from __future__ import annotations

import copy
import dataclasses
import json
import os
from dataclasses import dataclass, field


@dataclass
class CameraConfig:
    width: int = 160
    height: int = 120
    fx: float = 146.25
    fy: float = 146.25
    cx: float = 79.5
    cy: float = 59.5


@dataclass
class CloudConfig:
    voxel: float = 0.025
    node_voxel: float = 0.15
    min_members: int = 1


@dataclass
class PatchConfig:
    coarse_grid: list = field(default_factory=lambda: [15, 20])
    pyramid_base: list = field(default_factory=lambda: [3, 4])
    pyramid_levels: int = 3


@dataclass
class OverlapConfig:
    dist3d: float = 0.0375
    dist2d: float = 8.0
    patch_pos: float = 0.30
    patch_neg: float = 0.20
    fine_pos3d: float = 0.0375
    fine_pos2d: float = 8.0
    fine_neg3d: float = 0.10
    fine_neg2d: float = 12.0


@dataclass
class ModelConfig:
    d: int = 256
    heads: int = 4
    n_blocks: int = 3
    fourier_L: int = 10
    fine_dim: int = 32
    hidden: int = 64
    point_fourier: int = 6
    window: int = 5
    node_knn: int = 8
    use_self_attention: bool = True
    use_cross_attention: bool = True


@dataclass
class MatchConfig:
    coarse_k: int = 3
    fine_k: int = 2
    max_coarse: int = 256


@dataclass
class LossConfig:
    gamma: float = 24.0
    delta_p: float = 0.1
    delta_n: float = 1.4
    lambda_fine: float = 1.0
    fine_samples: int = 256


@dataclass
class RansacConfig:
    iterations: int = 5000
    inlier_tol: float = 8.0
    sample_size: int = 4
    seed: int = 0
    refine_iters: int = 10


@dataclass
class MetricConfig:
    tau1: float = 0.05
    tau2: float = 0.10
    tau3: float = 0.10
    pir_tau: float = 0.30


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    lr_decay: float = 0.05
    seed: int = 0


@dataclass
class SynthConfig:
    seed: int = 0
    scenes: int = 1
    train_sequences: int = 2
    test_sequences: int = 1
    windows_per_sequence: int = 9
    window: int = 25
    stride: int = 25
    window_arc_deg: float = 20.0
    max_depth: float = 3.0
    near_depth: float = 1.0
    far_depth: float = 2.0
    min_overlap: float = 0.30
    oracle_fourier: int = 2
    oracle_scale: float = 0.5


@dataclass
class Config:
    seed: int = 0
    threads: int = 1
    camera: CameraConfig = field(default_factory=CameraConfig)
    cloud: CloudConfig = field(default_factory=CloudConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)
    overlap: OverlapConfig = field(default_factory=OverlapConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        cfg = cls()
        for key, value in _flatten(d):
            set_dotted(cfg, key, value)
        return cfg

    def copy(self) -> "Config":
        return copy.deepcopy(self)

    def with_overrides(self, **dotted) -> "Config":
        cfg = self.copy()
        for k, v in dotted.items():
            set_dotted(cfg, k.replace("__", "."), v)
        return cfg


def _flatten(d: dict, prefix: str = ""):
    for k, v in d.items():
        if isinstance(v, dict):
            yield from _flatten(v, prefix + k + ".")
        else:
            yield prefix + k, v


def _coerce(current, value):
    if isinstance(value, str):
        if isinstance(current, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if isinstance(current, (int, float, list)):
            value = json.loads(value)
    if isinstance(current, bool):
        return bool(value)
    if isinstance(current, int):
        if float(value) != int(value):
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, list):
        return list(value)
    return value


def set_dotted(cfg, key: str, value) -> None:
    parts = key.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or not hasattr(obj, p):
            raise KeyError(f"unknown config key {key!r}")
        obj = getattr(obj, p)
    last = parts[-1]
    if not dataclasses.is_dataclass(obj) or last not in {f.name for f in dataclasses.fields(obj)}:
        raise KeyError(f"unknown config key {key!r}")
    setattr(obj, last, _coerce(getattr(obj, last), value))


def get_dotted(cfg, key: str):
    obj = cfg
    for p in key.split("."):
        obj = getattr(obj, p)
    return obj


def seed_all(cfg: Config, seed: int) -> None:
    """Set the global seed and every per-component seed to ``seed``."""
    cfg.seed = cfg.synth.seed = cfg.train.seed = cfg.ransac.seed = int(seed)


def load_config(path=None, overrides=(), env=os.environ) -> Config:
    """Defaults, then a JSON file, then ``key=value`` overrides, then ``XREG_SEED``."""
    cfg = Config()
    if path:
        with open(path) as f:
            for key, value in _flatten(json.load(f)):
                set_dotted(cfg, key, value)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like key=value, got {item!r}")
        k, v = item.split("=", 1)
        set_dotted(cfg, k.strip(), v.strip())
    if env.get("XREG_SEED"):
        seed_all(cfg, int(env["XREG_SEED"]))
    return cfg
