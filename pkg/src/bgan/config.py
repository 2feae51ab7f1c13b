"""One JSON experiment document with a section per component, plus dotted-key overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .baselines import NlmSpec
from .clustering import EmbeddingSpec
from .contamination import ContaminationSpec
from .losses import ReconLoss, ScoringRule
from .metrics import MetricsConfig
from .networks import ArchSpec
from .phantoms import ForwardModelSpec, PhantomSpec
from .robust import EstimateBudget, SweepSpec
from .trainer import TrainConfig, check_compatible


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending section."""


@dataclass
class DataSpec:
    n_per_conformation: int = 400
    test_fraction: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.n_per_conformation < 1:
            raise ValueError("n_per_conformation must be >= 1")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must lie in [0, 1), got {self.test_fraction}")


@dataclass
class PathSpec:
    runs: str = "runs"


# TrainConfig keys that live in their own sections
_TRAIN_EXCLUDED = ("rule", "recon")


def _train_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig) if f.name not in _TRAIN_EXCLUDED]


@dataclass
class ExperimentConfig:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    forward: ForwardModelSpec = field(default_factory=ForwardModelSpec)
    data: DataSpec = field(default_factory=DataSpec)
    contamination: ContaminationSpec = field(default_factory=ContaminationSpec)
    rule: ScoringRule | None = field(default_factory=lambda: ScoringRule(alpha=0.5, beta=0.5))
    recon: ReconLoss = field(default_factory=ReconLoss)
    arch: ArchSpec = field(default_factory=ArchSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    embedding: EmbeddingSpec = field(default_factory=EmbeddingSpec)
    nlm: NlmSpec = field(default_factory=NlmSpec)
    robust: SweepSpec = field(default_factory=SweepSpec)
    budget: EstimateBudget = field(default_factory=EstimateBudget)
    paths: PathSpec = field(default_factory=PathSpec)
    seed: int = 0

    def train_config(self) -> TrainConfig:
        """TrainConfig with the rule and recon sections folded in."""
        from dataclasses import replace

        return replace(self.train, rule=self.rule, recon=self.recon)

    def to_dict(self) -> dict[str, Any]:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "rule":
                d["rule"] = None if v is None else v.to_dict()
            elif f.name == "train":
                full = asdict(v)
                d["train"] = {k: full[k] for k in _train_fields()}
                d["train"]["adam_betas"] = list(v.adam_betas)
            elif f.name == "seed":
                d["seed"] = v
            else:
                d[f.name] = asdict(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def validate(self) -> None:
        """Validate every section, then cross-section consistency."""
        for f in fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "validate"):
                _in_section(f.name, v.validate)
        _in_section("train", self.train_config().validate)
        if self.arch.size != self.phantom.size:
            raise ConfigError(
                f"[arch] size {self.arch.size} disagrees with [phantom] size {self.phantom.size}"
            )
        _in_section("arch", lambda: check_compatible(self.train_config(), self.arch))
        if self.nlm.window > self.phantom.size:
            raise ConfigError(
                f"[nlm] window {self.nlm.window} exceeds [phantom] size {self.phantom.size}"
            )


def _in_section(name: str, fn) -> None:
    try:
        fn()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def _build(cls, section: str, values: dict[str, Any]):
    if not isinstance(values, dict):
        raise ConfigError(f"[{section}] expected an object, got {type(values).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys {unknown}; valid: {sorted(known)}")
    try:
        return cls(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


_SECTIONS = {
    "phantom": PhantomSpec,
    "forward": ForwardModelSpec,
    "data": DataSpec,
    "contamination": ContaminationSpec,
    "recon": ReconLoss,
    "arch": ArchSpec,
    "metrics": MetricsConfig,
    "embedding": EmbeddingSpec,
    "nlm": NlmSpec,
    "robust": SweepSpec,
    "budget": EstimateBudget,
    "paths": PathSpec,
}


def default_dict() -> dict[str, Any]:
    return ExperimentConfig().to_dict()


def merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def from_dict(d: dict[str, Any]) -> ExperimentConfig:
    """Build from a (possibly partial) document; missing keys take defaults."""
    d = merge(default_dict(), d)
    valid = set(_SECTIONS) | {"rule", "train", "seed"}
    unknown = sorted(set(d) - valid)
    if unknown:
        raise ConfigError(f"unknown sections {unknown}; valid: {sorted(valid)}")
    kwargs = {name: _build(cls, name, d[name]) for name, cls in _SECTIONS.items()}
    rule = d["rule"]
    if rule is None:
        kwargs["rule"] = None
    elif isinstance(rule, str):
        kwargs["rule"] = _call("rule", ScoringRule.parse, rule)
    else:
        kwargs["rule"] = _build(ScoringRule, "rule", rule)
    train = dict(d["train"])
    if "adam_betas" in train:
        train["adam_betas"] = tuple(train["adam_betas"])
    kwargs["train"] = _build(TrainConfig, "train", train)
    kwargs["seed"] = int(d["seed"])
    return ExperimentConfig(**kwargs)


def _call(section, fn, *args):
    try:
        return fn(*args)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def set_path(d: dict, dotted: str, value: Any) -> None:
    """Set ``section.key`` (or a top-level key) in a config dict, rejecting unknown paths."""
    parts = dotted.split(".")
    node = d
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config path {dotted!r}")
        node = node[p]
    if parts[-1] not in node and not (dotted == "rule"):
        raise ConfigError(f"unknown config path {dotted!r}")
    node[parts[-1]] = value


def load(path: str | Path | None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    d = default_dict()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        d = merge(d, doc)
    for key, value in (overrides or {}).items():
        set_path(d, key, value)
    cfg = from_dict(d)
    cfg.validate()
    return cfg
