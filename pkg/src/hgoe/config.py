"""Experiment configuration: nested sections, dotted-key overrides and a stable digest."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

ABLATIONS = (
    "full",
    "no_internal",
    "no_external",
    "no_oe",
    "tau_min",
    "tau_mean",
    "tau_max",
    "tau_none",
    "gamma_sweep",
    "lambda_range_sweep",
)


@dataclass
class EmbeddingSection:
    d_s: int = 16
    wl_iterations: int = 3
    wl_dim: int = 64


@dataclass
class SubgroupSection:
    k: int = 3
    max_iter: int = 100
    rel_tol: float = 1e-4


@dataclass
class GraphonSection:
    resolution: int | None = None
    max_resolution: int = 200
    svt_coefficient: float | None = None
    alignment: str = "spectral"


@dataclass
class SynthesisSection:
    lambda_range: list[float] = field(default_factory=lambda: [0.01, 1.0])
    ext_int_ratio: list[float] = field(default_factory=lambda: [1.0, 1.0])
    total_count: int | None = None


@dataclass
class LossSection:
    l: float = 2.0
    gamma: float = 2.0
    beta: float = 1.0
    tau_strategy: str = "min"


@dataclass
class TrainingSection:
    hidden_dim: int = 32
    depth: int = 1
    epochs: int = 100
    lr: float = 1e-2
    batch_size: int = 64


@dataclass
class ExperimentConfig:
    id_dataset: str = "sbm_id"
    ood_dataset: str = "sbm_ood"
    auxiliary_datasets: list[str] = field(default_factory=lambda: ["sbm_aux"])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    ablation: str = "full"
    benchmark: str | None = None
    benchmark_seed: int = 0
    data_root: str | None = None
    feature_policy: str = "auto"
    train_fraction: float = 0.9
    histogram_bins: int = 20
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    subgroups: SubgroupSection = field(default_factory=SubgroupSection)
    graphon: GraphonSection = field(default_factory=GraphonSection)
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    loss: LossSection = field(default_factory=LossSection)
    training: TrainingSection = field(default_factory=TrainingSection)

    def validate(self) -> "ExperimentConfig":
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        names = [self.id_dataset, self.ood_dataset, *self.auxiliary_datasets]
        if len(set(names)) != len(names):
            raise ValueError(f"dataset names must be distinct, got {names}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        cfg = cls()
        for key, value in flatten(doc).items():
            set_dotted(cfg, key, value)
        return cfg

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        cfg = ExperimentConfig.from_dict(self.to_dict())
        for key, value in overrides.items():
            set_dotted(cfg, key, value)
        return cfg

    def digest(self) -> str:
        return config_digest(self.to_dict())


def flatten(doc: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in doc.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, full + "."))
        else:
            out[full] = value
    return out


def set_dotted(cfg: Any, key: str, value: Any) -> None:
    parts = key.split(".")
    target = cfg
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(target) or not hasattr(target, part):
            raise KeyError(f"unknown config key {key!r}")
        target = getattr(target, part)
    last = parts[-1]
    if not dataclasses.is_dataclass(target) or last not in {f.name for f in dataclasses.fields(target)}:
        raise KeyError(f"unknown config key {key!r}")
    if dataclasses.is_dataclass(getattr(target, last)):
        raise KeyError(f"config key {key!r} names a section, not a value")
    setattr(target, last, value)


def parse_override(text: str) -> tuple[str, Any]:
    """``key=value`` with the value read as JSON when possible, else as a string."""
    if "=" not in text:
        raise ValueError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_digest(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


def load_config(path) -> ExperimentConfig:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return ExperimentConfig.from_dict(doc)
