"""Experiment configuration: YAML sections, strict keys, round-trippable."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Any

import yaml

from .errors import ValidationError
from .learn import FLAVORS, PartitionSpec, TrainConfig

MODES = ("morph", "build", "train", "experiment", "accounting")


@dataclass
class DatasetConfig:
    classes: int = 10
    dims: int = 32
    per_class: int = 200
    separation: float = 4.0
    test_per_class: int = 100
    global_per_class: int = 10
    global_shift: float = 1.0


@dataclass
class PartitionConfig:
    flavor: str = "label2"
    beta: float = 0.5
    eta: float = 0.2
    classes_per_node: int = 2

    def spec(self) -> PartitionSpec:
        return PartitionSpec(self.flavor, self.beta, self.eta, self.classes_per_node)


@dataclass
class MorphSection:
    max_rounds: int = 1000
    early_stop: bool = False
    tuple_bytes: int = 24


@dataclass
class SelectionConfig:
    k: int | None = None
    samples_per_cluster: int | None = None


@dataclass
class TrainSection:
    prologue_epochs: int = 5
    local_epochs: int = 1
    learning_rate: float = 0.1
    rounds: int = 20
    batch_size: int = 32

    def config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.prologue_epochs, self.local_epochs, self.learning_rate, self.rounds,
                           self.batch_size, seed)


@dataclass
class ExperimentConfig:
    mode: str = "experiment"
    seed: int = 0
    n: int = 24
    degree: int | None = None
    partitions: list[int] = field(default_factory=list)
    proxy_bytes: int | None = None
    output: str | None = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    morph: MorphSection = field(default_factory=MorphSection)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    train: TrainSection = field(default_factory=TrainSection)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_SECTIONS = {
    "dataset": DatasetConfig,
    "partition": PartitionConfig,
    "morph": MorphSection,
    "selection": SelectionConfig,
    "train": TrainSection,
}


def _build(cls, doc: dict, prefix: str, bad: list[str]):
    known = {f.name for f in fields(cls)}
    for key in doc:
        if key not in known:
            bad.append(prefix + key)
    kwargs = {}
    for key, value in doc.items():
        if key not in known:
            continue
        if key in _SECTIONS and cls is ExperimentConfig:
            if not isinstance(value, dict):
                bad.append(prefix + key)
                continue
            kwargs[key] = _build(_SECTIONS[key], value, f"{key}.", bad)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def validate(cfg: ExperimentConfig) -> list[str]:
    """Names of every field that breaks a constraint (empty when valid)."""
    bad = []

    def need(ok: bool, name: str):
        if not ok:
            bad.append(name)

    def is_int(v) -> bool:
        return isinstance(v, int) and not isinstance(v, bool)

    def is_num(v) -> bool:
        return isinstance(v, (int, float)) and not isinstance(v, bool)

    need(cfg.mode in MODES, "mode")
    need(is_int(cfg.seed) and cfg.seed >= 0, "seed")
    need(is_int(cfg.n) and cfg.n >= 2, "n")
    need(cfg.degree is None or (is_int(cfg.degree) and cfg.degree >= 1), "degree")
    need(cfg.proxy_bytes is None or (is_int(cfg.proxy_bytes) and cfg.proxy_bytes >= 0), "proxy_bytes")
    need(cfg.output is None or isinstance(cfg.output, str), "output")
    need(isinstance(cfg.partitions, list) and all(is_int(p) and p >= 2 for p in cfg.partitions), "partitions")
    d = cfg.dataset
    for name in ("classes", "dims"):
        need(is_int(getattr(d, name)) and getattr(d, name) >= 2, f"dataset.{name}")
    for name in ("per_class", "test_per_class", "global_per_class"):
        need(is_int(getattr(d, name)) and getattr(d, name) >= 1, f"dataset.{name}")
    need(is_num(d.separation) and d.separation > 0, "dataset.separation")
    need(is_num(d.global_shift), "dataset.global_shift")
    p = cfg.partition
    need(p.flavor in FLAVORS, "partition.flavor")
    need(is_num(p.beta) and p.beta > 0, "partition.beta")
    need(is_num(p.eta) and p.eta >= 0, "partition.eta")
    need(is_int(p.classes_per_node) and p.classes_per_node >= 1, "partition.classes_per_node")
    m = cfg.morph
    need(is_int(m.max_rounds) and m.max_rounds >= 1, "morph.max_rounds")
    need(isinstance(m.early_stop, bool), "morph.early_stop")
    need(is_int(m.tuple_bytes) and m.tuple_bytes >= 1, "morph.tuple_bytes")
    s = cfg.selection
    need(s.k is None or (is_int(s.k) and s.k >= 1), "selection.k")
    need(s.samples_per_cluster is None or (is_int(s.samples_per_cluster) and s.samples_per_cluster >= 1),
         "selection.samples_per_cluster")
    t = cfg.train
    for name in ("prologue_epochs", "local_epochs", "rounds", "batch_size"):
        need(is_int(getattr(t, name)) and getattr(t, name) >= 1, f"train.{name}")
    need(is_num(t.learning_rate) and t.learning_rate > 0, "train.learning_rate")
    return bad


def parse_config(text: str) -> ExperimentConfig:
    """Parse YAML text; unknown keys and constraint violations raise
    ``ValidationError`` naming every offending field."""
    doc = yaml.safe_load(text) or {}
    if not isinstance(doc, dict):
        raise ValidationError(["<root>"], "config must be a mapping")
    bad: list[str] = []
    cfg = _build(ExperimentConfig, doc, "", bad)
    if isinstance(cfg.partitions, int) and not isinstance(cfg.partitions, bool):
        cfg.partitions = [cfg.partitions]
    bad.extend(validate(cfg))
    if bad:
        raise ValidationError(sorted(set(bad)))
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True, default_flow_style=False)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
