"""Experiment configuration loaded from YAML."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass
class DataConfig:
    root: str = "."
    source_train: str = "manifests/source_train.csv"
    target_train: str = "manifests/target_train.csv"
    test: str = "manifests/target_test.csv"


@dataclass
class BackboneSection:
    dim: int = 64
    widths: tuple = (16, 32, 64)
    height: int = 32
    width: int = 16
    dropout: float = 0.0


@dataclass
class SamplerConfig:
    P: int = 5
    K: int = 2
    T: int = 4
    target_batch: int = 0   # 0 means P * K


@dataclass
class OptimConfig:
    seed: int = None
    lr: float = 3e-4
    steps: int = 200
    warmup_fraction: float = 0.25
    epoch_steps: int = 20
    weight_decay: float = 0.0
    checkpoint_every: int = 0
    torch_threads: int = 1


@dataclass
class LossConfig:
    w_cse: float = 1.0
    w_tri: float = 1.0
    w_S: float = 1.0
    w_C: float = 1.0
    mode: str = "fixed"
    margin: float = 0.3
    mining: str = "batch_hard"


@dataclass
class GRLConfig:
    lambda_schedule: str = "dann_ramp"
    lambda_const: float = 1.0


@dataclass
class StitchConfig:
    v_choices: tuple = (2, 4)
    v_max: int = 4
    groups: int = 8


@dataclass
class HeadsConfig:
    dropout: float = 0.5
    hidden: int = 64
    lr_mult: float = 1.0    # learning-rate multiplier for domain heads and regressor


@dataclass
class TeacherConfig:
    alpha: float = 0.999


@dataclass
class ClusterConfig:
    M: int = 16
    max_iters: int = 100
    tol: float = 1e-6


@dataclass
class ConsistencyConfig:
    temperature: float = 0.1
    normalize: bool = True   # cluster and compare L2-normalised video features


@dataclass
class EvalConfig:
    distance: str = "euclidean"
    cross_camera_filter: bool = True
    ranks: tuple = (1, 5, 10)
    camera_policy: str = "split"
    query_cameras: tuple = (0,)
    gallery_cameras: tuple = (1,)
    max_frames: int = 32


SECTIONS = {
    "data": DataConfig, "backbone": BackboneSection, "sampler": SamplerConfig,
    "optim": OptimConfig, "loss": LossConfig, "grl": GRLConfig, "stitch": StitchConfig,
    "heads": HeadsConfig, "teacher": TeacherConfig, "cluster": ClusterConfig,
    "consistency": ConsistencyConfig, "eval": EvalConfig,
}


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    grl: GRLConfig = field(default_factory=GRLConfig)
    stitch: StitchConfig = field(default_factory=StitchConfig)
    heads: HeadsConfig = field(default_factory=HeadsConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    consistency: ConsistencyConfig = field(default_factory=ConsistencyConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, raw, base_dir=None):
        raw = dict(raw or {})
        unknown = set(raw) - set(SECTIONS) - {"output_dir"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in SECTIONS.items():
            values = dict(raw.get(name) or {})
            bad = set(values) - {f.name for f in dataclasses.fields(section_cls)}
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            for f in dataclasses.fields(section_cls):
                if isinstance(f.default, tuple) and f.name in values:
                    values[f.name] = tuple(values[f.name])
            kwargs[name] = section_cls(**values)
        cfg = cls(**kwargs, output_dir=str(raw.get("output_dir", "runs/default")))
        if base_dir is not None:
            cfg = cfg.resolve_paths(base_dir)
        return cfg

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config not found: {path}")
        with path.open(encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh), base_dir=path.parent)

    def resolve_paths(self, base_dir):
        base = Path(base_dir)
        root = Path(self.data.root)
        if not root.is_absolute():
            self.data.root = str((base / root).resolve())
        out = Path(self.output_dir)
        if not out.is_absolute():
            self.output_dir = str((base / out).resolve())
        return self

    def manifest_path(self, which):
        p = Path(getattr(self.data, which))
        return p if p.is_absolute() else Path(self.data.root) / p

    def validate(self):
        if self.optim.seed is None:
            raise ConfigError("optim.seed is mandatory")
        for which in ("source_train", "target_train", "test"):
            path = self.manifest_path(which)
            if not path.is_file():
                raise FileNotFoundError(f"{which} manifest not found: {path}")
        if self.loss.mode not in ("fixed", "learnable"):
            raise ConfigError(f"loss.mode must be 'fixed' or 'learnable', got {self.loss.mode!r}")
        weights = (self.loss.w_cse, self.loss.w_tri, self.loss.w_S, self.loss.w_C)
        if any(w < 0 for w in weights):
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 <= self.optim.warmup_fraction <= 1.0:
            raise ConfigError("optim.warmup_fraction must lie in [0, 1]")
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        return json.loads(json.dumps(d))  # tuples -> lists

    def digest(self, sections=None):
        d = self.to_dict()
        if sections is not None:
            d = {k: d[k] for k in sections}
        d.pop("output_dir", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def eval_digest(self):
        return self.digest(("backbone",))

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))
