"""Run configuration: one nested JSON document, every field defaulted.

Sections mirror the pipeline stages::

    {"seed": 0,
     "preprocess": {... PreprocessConfig, "filter": {... FilterSpec}},
     "augment": {"P": {"crop": [p, low, high], ...}, "S": {...}},
     "model": {... EncoderConfig},
     "train": {... TrainConfig minus seed},
     "eval": {"ratios": [0.8, 0.1, 0.1], "n_boot": 500, ...}}

Unknown keys anywhere are rejected.  ``config_hash`` is a digest of the
canonical JSON form and is stamped on every report for provenance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .augment import ORDER, AugmentConfig, Transform
from .model import EncoderConfig
from .preprocess import FilterSpec, PreprocessConfig
from .ssl import TrainConfig

CONFIG_ENV = "PPGMORPH_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    ratios: tuple = (0.8, 0.1, 0.1)
    n_boot: int = 500
    folds: int = 5
    distance_metric: str = "cosine"

    def __post_init__(self):
        r = tuple(float(v) for v in self.ratios)
        object.__setattr__(self, "ratios", r)
        if len(r) != 3 or any(v < 0 for v in r) or abs(sum(r) - 1) > 1e-9:
            raise ConfigError("eval.ratios must be three nonnegative numbers summing to 1")
        if self.n_boot < 1 or self.folds < 2:
            raise ConfigError("eval.n_boot must be >= 1 and eval.folds >= 2")
        if self.distance_metric not in ("cosine", "euclidean"):
            raise ConfigError("eval.distance_metric must be cosine or euclidean")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augment_p: AugmentConfig = field(default_factory=lambda: AugmentConfig.for_mode("P"))
    augment_s: AugmentConfig = field(default_factory=lambda: AugmentConfig.for_mode("S"))
    model: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def augment(self, mode: str) -> AugmentConfig:
        return self.augment_p if mode.upper() == "P" else self.augment_s

    def train_config(self, **overrides) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed, **overrides)

    def to_dict(self) -> dict:
        train = dataclasses.asdict(self.train)
        train.pop("seed")
        return {
            "seed": self.seed,
            "preprocess": dataclasses.asdict(self.preprocess),
            "augment": {"P": _augment_dict(self.augment_p), "S": _augment_dict(self.augment_s)},
            "model": dataclasses.asdict(self.model),
            "train": train,
            "eval": {**dataclasses.asdict(self.eval), "ratios": list(self.eval.ratios)},
        }

    def hash(self) -> str:
        return config_hash(self.to_dict())


def _augment_dict(cfg: AugmentConfig) -> dict:
    return {name: [getattr(cfg, name).probability, getattr(cfg, name).low, getattr(cfg, name).high]
            for name in ORDER}


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def _check_keys(section: str, doc, allowed):
    if not isinstance(doc, dict):
        raise ConfigError(f"{section} must be a JSON object")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")


def _build(cls, section: str, doc: dict, exclude=()):
    names = [f.name for f in dataclasses.fields(cls) if f.name not in exclude]
    _check_keys(section, doc, names)
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section}: {exc}") from None


def _build_augment(mode: str, doc: dict) -> AugmentConfig:
    _check_keys(f"augment.{mode}", doc, ORDER)
    base = AugmentConfig.for_mode(mode)
    updates = {}
    for name, spec in doc.items():
        if not (isinstance(spec, (list, tuple)) and len(spec) == 3):
            raise ConfigError(f"augment.{mode}.{name} must be [probability, low, high]")
        try:
            updates[name] = Transform(*(float(v) for v in spec))
        except ValueError as exc:
            raise ConfigError(f"invalid augment.{mode}.{name}: {exc}") from None
    try:
        return dataclasses.replace(base, **updates)
    except ValueError as exc:
        raise ConfigError(f"invalid augment.{mode}: {exc}") from None


def parse_config(doc: dict | None) -> RunConfig:
    doc = dict(doc or {})
    _check_keys("config", doc, ("seed", "preprocess", "augment", "model", "train", "eval"))
    kwargs = {}
    if "seed" in doc:
        if not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool):
            raise ConfigError("seed must be an integer")
        kwargs["seed"] = doc["seed"]
    if "preprocess" in doc:
        pre = dict(doc["preprocess"]) if isinstance(doc["preprocess"], dict) else doc["preprocess"]
        _check_keys("preprocess", pre, [f.name for f in dataclasses.fields(PreprocessConfig)])
        if "filter" in pre:
            pre["filter"] = _build(FilterSpec, "preprocess.filter", pre["filter"])
        kwargs["preprocess"] = _build(PreprocessConfig, "preprocess", pre)
    if "augment" in doc:
        _check_keys("augment", doc["augment"], ("P", "S"))
        if "P" in doc["augment"]:
            kwargs["augment_p"] = _build_augment("P", doc["augment"]["P"])
        if "S" in doc["augment"]:
            kwargs["augment_s"] = _build_augment("S", doc["augment"]["S"])
    if "model" in doc:
        kwargs["model"] = _build(EncoderConfig, "model", doc["model"])
    if "train" in doc:
        kwargs["train"] = _build(TrainConfig, "train", doc["train"], exclude=("seed",))
    if "eval" in doc:
        ev = dict(doc["eval"]) if isinstance(doc["eval"], dict) else doc["eval"]
        kwargs["eval"] = _build(EvalConfig, "eval", ev)
    return RunConfig(**kwargs)


def load_config(path=None) -> RunConfig:
    """Read a JSON config; ``None`` falls back to $PPGMORPH_CONFIG, then defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    return parse_config(doc)
