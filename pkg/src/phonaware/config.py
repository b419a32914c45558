"""Run configuration: strict nested YAML mirroring the library dataclasses.

Unknown keys are rejected. All path-valued fields are resolved relative to
the directory containing the config file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .backbones import EncoderConfig
from .training import TrainConfig


@dataclass
class DataConfig:
    train_manifest: str = "data/manifest_train.jsonl"
    eval_manifest: str = "data/manifest_eval.jsonl"
    trials: dict[str, str] = field(
        default_factory=lambda: {
            "clean": "data/trials_clean.txt",
            "farfield": "data/trials_farfield.txt",
        }
    )
    cohort_manifest: str | None = None


@dataclass
class TeacherConfig:
    kind: str = "synthetic"
    root: str | int = 0
    dim: int = 32

    def __post_init__(self):
        if self.kind not in ("file_backed", "synthetic"):
            raise ValueError(f"unknown teacher kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("teacher dim must be >= 1")


@dataclass
class AugmentSection:
    kinds: list[str] = field(default_factory=lambda: ["noise"])
    snr_db_range: list[float] = field(default_factory=lambda: [5.0, 20.0])
    rir_pool: list[str] = field(default_factory=list)
    seed: int = 0


@dataclass
class EvalConfig:
    top_k: int = 50
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if self.top_k < 2:
            raise ValueError("top_k must be >= 2")
        if not 0 < self.p_target < 1:
            raise ValueError("p_target must be in (0, 1)")


@dataclass
class RunConfig:
    out_dir: str = "run"
    data: DataConfig = field(default_factory=DataConfig)
    model: EncoderConfig = field(default_factory=EncoderConfig)
    teacher: TeacherConfig | None = field(default_factory=TeacherConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentSection | None = None
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTION_TYPES = {
    "data": DataConfig,
    "model": EncoderConfig,
    "teacher": TeacherConfig,
    "train": TrainConfig,
    "augment": AugmentSection,
    "eval": EvalConfig,
}
_OPTIONAL_SECTIONS = ("teacher", "augment")


def _build(cls, mapping: dict, where: str):
    if not isinstance(mapping, dict):
        raise ValueError(f"config section {where!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(mapping) - known
    if unknown:
        raise ValueError(f"unknown config key {where}.{sorted(unknown)[0]}")
    return cls(**mapping)


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ValueError("config root must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config key {sorted(unknown)[0]}")
    kwargs = {}
    for name, cls in _SECTION_TYPES.items():
        if name not in raw or raw[name] is None:
            if name in raw and name in _OPTIONAL_SECTIONS:
                kwargs[name] = None
            continue
        kwargs[name] = _build(cls, raw[name], name)
    if "out_dir" in raw:
        kwargs["out_dir"] = str(raw["out_dir"])
    return RunConfig(**kwargs)


def config_to_dict(cfg: RunConfig) -> dict:
    out = dataclasses.asdict(cfg)
    return out


def _resolve(base: Path, value: str) -> str:
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


def resolve_paths(cfg: RunConfig, base: str | Path) -> RunConfig:
    """Make every path-valued field absolute against the config's directory."""
    base = Path(base)
    cfg = dataclasses.replace(cfg)
    cfg.out_dir = _resolve(base, cfg.out_dir)
    d = cfg.data
    cfg.data = dataclasses.replace(
        d,
        train_manifest=_resolve(base, d.train_manifest),
        eval_manifest=_resolve(base, d.eval_manifest),
        trials={k: _resolve(base, v) for k, v in d.trials.items()},
        cohort_manifest=None if d.cohort_manifest is None else _resolve(base, d.cohort_manifest),
    )
    if cfg.teacher is not None and cfg.teacher.kind == "file_backed":
        cfg.teacher = dataclasses.replace(cfg.teacher, root=_resolve(base, str(cfg.teacher.root)))
    if cfg.augment is not None:
        cfg.augment = dataclasses.replace(
            cfg.augment, rir_pool=[_resolve(base, p) for p in cfg.augment.rir_pool]
        )
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    cfg = config_from_dict(raw)
    return resolve_paths(cfg, path.parent)


def dump_config(cfg: RunConfig | None = None) -> str:
    """YAML text for a config (defaults when none given); reparses to an
    equal configuration."""
    cfg = cfg or RunConfig()
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
