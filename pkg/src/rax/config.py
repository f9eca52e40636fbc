"""Pipeline configuration: one JSON document, unknown keys rejected, paths resolved
relative to the config file. Precedence is flags > config file > defaults."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

ENV_CONFIG = "RAX_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    crashes: str | None = None
    persons: str | None = None
    vehicles: str | None = None
    store: str = "store"
    model: str = "model.raxm"
    reports: str = "reports"


@dataclass
class ColumnsConfig:
    crashes: dict[str, str] | None = None
    persons: dict[str, str] | None = None
    vehicles: dict[str, str] | None = None


@dataclass
class ModelConfig:
    kind: str = "boosted"
    n_rounds: int = 400
    max_depth: int = 8
    learning_rate: float = 0.05
    row_subsample: float = 0.8
    col_subsample: float = 0.8
    reg_lambda: float = 1.0
    min_leaf_weight: float = 1.0
    n_trees: int = 300
    forest_max_depth: int = 12
    min_leaf: int = 20
    l2: float = 1.0

    def __post_init__(self):
        if self.kind not in ("boosted", "forest", "linear"):
            raise ConfigError(f"model.kind must be boosted, forest or linear, got {self.kind!r}")


@dataclass
class ImbalanceConfig:
    strategy: str = "Weighted"
    target_fatal_share: float = 0.05
    k_neighbors: int = 5
    gamma: float = 2.0


@dataclass
class SplitConfig:
    n_test: int = 5000
    n_train: int = 20000


@dataclass
class GatingSection:
    threshold: float = 0.05
    gated_mass: str = "FatalOnly"


@dataclass
class NarrativeConfig:
    backend: str = "template"
    base_url: str | None = None
    model: str = "local-slm"
    timeout: float = 30.0
    max_retries: int = 2
    backoff: float = 0.5
    max_in_flight: int = 4
    lexicon: str | None = None
    max_events: int = 200

    def __post_init__(self):
        if self.backend not in ("template", "http"):
            raise ConfigError(f"narrative.backend must be template or http, got {self.backend!r}")


@dataclass
class ShapConfig:
    max_rows: int = 500
    top_k: int = 3


@dataclass
class SynthSection:
    n_events: int = 25000
    class_prior: list[float] = field(default_factory=lambda: [0.72, 0.27, 0.01])
    beta_ejected: float = 4.0
    beta_pedestrian: float = 2.5
    beta_night: float = 1.5
    beta_safety: float = -2.0
    beta_interaction: float = 0.0
    start_year: int = 2022
    start_month: int = 1
    n_months: int = 12


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    columns: ColumnsConfig = field(default_factory=ColumnsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    imbalance: ImbalanceConfig = field(default_factory=ImbalanceConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    gating: GatingSection = field(default_factory=GatingSection)
    narrative: NarrativeConfig = field(default_factory=NarrativeConfig)
    shap: ShapConfig = field(default_factory=ShapConfig)
    synth: SynthSection = field(default_factory=SynthSection)
    seed: int = 0
    schema_hash: str | None = None
    base_dir: str = field(default=".", metadata={"internal": True})

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else (Path(self.base_dir) / path)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        t = hints[name]
        key = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(t):
            kwargs[name] = _build(t, value, key)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid {where or 'config'}: {exc}") from exc


def from_dict(data: dict, base_dir: str | os.PathLike = ".") -> PipelineConfig:
    cfg = _build(PipelineConfig, data, "")
    cfg.base_dir = str(base_dir)
    return cfg


def load_config(path: str | os.PathLike | None = None) -> PipelineConfig:
    """Read the config named by ``path`` or $RAX_CONFIG; defaults when neither is set."""
    path = path or os.environ.get(ENV_CONFIG)
    if not path:
        return PipelineConfig(base_dir=os.getcwd())
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    return from_dict(data, p.resolve().parent)
