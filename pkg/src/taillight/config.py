"""Experiment configuration: one strict JSON document.

Unknown fields are rejected at every level so typos fail fast instead of
silently running with defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class DataConfig:
    mode: str = "synthetic"        # "synthetic" or "bundle"
    bundle_dir: str | None = None
    texts_path: str | None = None
    class_count: int = 20
    dim: int = 32
    n_max: int = 100
    rho: float = 0.01
    noise: float = 0.25
    separation: float = 0.5
    test_count: int = 20
    anchor: str = "tree"           # "tree" anchors class means to text features
    labels: list[str] | None = None

    def __post_init__(self):
        if self.mode not in ("synthetic", "bundle"):
            raise ConfigError(f"data.mode must be synthetic|bundle, got {self.mode!r}")
        if self.mode == "bundle" and not self.bundle_dir:
            raise ConfigError("data.mode=bundle requires data.bundle_dir")
        if self.anchor not in ("tree", "random"):
            raise ConfigError(f"data.anchor must be tree|random, got {self.anchor!r}")


@dataclass
class TreeConfig:
    llm: str = "fixture"           # "fixture" or "http"
    fixture_path: str | None = None
    url: str | None = None
    timeout_ms: int = 10000
    max_phrases: int = 5

    def __post_init__(self):
        if self.llm not in ("fixture", "http"):
            raise ConfigError(f"tree.llm must be fixture|http, got {self.llm!r}")


@dataclass
class TrainSection:
    lambda1: float = 0.025
    lambda2: float = 1.0
    lambda3: float = 0.3
    lambda4: float = 0.6
    eta_theta: float = 1e-3
    eta_alpha: float = 1e-3
    epochs: int = 30
    alpha_period: int = 5
    batch_size: int = 64
    ce_scale: float = 100.0
    align_temperature: float = 0.1
    replay: bool = True
    replay_cap: int | None = None
    update_alpha: bool = True


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/experiment"
    tasks: int = 5
    tail_threshold: int = 100
    # Which classes act as confusion-cluster centers during tree generation;
    # defaults to tail_threshold when unset.
    cluster_threshold: int | None = None
    data: DataConfig = field(default_factory=DataConfig)
    tree: TreeConfig = field(default_factory=TreeConfig)
    train: TrainSection = field(default_factory=TrainSection)

    def __post_init__(self):
        if self.tasks < 1:
            raise ConfigError("tasks must be >= 1")
        if self.tail_threshold < 0:
            raise ConfigError("tail_threshold must be >= 0")


_SECTIONS = {"data": DataConfig, "tree": TreeConfig, "train": TrainSection}


def _build(cls, payload: dict, where: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{where} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {sorted(unknown)}")
    try:
        return cls(**payload)
    except TypeError as exc:
        raise ConfigError(f"bad {where} section: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) in config: {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def config_to_dict(config: ExperimentConfig) -> dict:
    return dataclasses.asdict(config)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
