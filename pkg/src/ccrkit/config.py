"""Strict JSON run configuration: unknown keys are errors, not silently ignored."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .cmdclf import ClassifierTrainConfig
from .fusion import FusionTrainConfig
from .matcher import MatcherTrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSection:
    size: int = 1100
    plane_count_min: int = 20
    plane_count_max: int = 40
    p_callsign_first: float = 0.8
    p_two_commands: float = 0.3
    split: tuple[float, float, float] = (0.818, 0.091, 0.091)
    region_file: str | None = None  # JSON RegionModel; None uses the built-in airspace


@dataclass(frozen=True)
class CorruptionSection:
    op_mix: tuple[float, float, float] = (0.6, 0.2, 0.2)
    p_confusable: float = 0.5
    calibration_size: int = 200


@dataclass(frozen=True)
class CdmSection:
    filter: str = "gaussian"
    dims: str = "3d"
    pairs_per_command: int = 300


@dataclass(frozen=True)
class ModelsSection:
    matcher: MatcherTrainConfig = field(default_factory=MatcherTrainConfig)
    cmdclf: ClassifierTrainConfig = field(default_factory=ClassifierTrainConfig)
    fusion: FusionTrainConfig = field(default_factory=FusionTrainConfig)
    cdm: CdmSection = field(default_factory=CdmSection)
    fresh_noise_per_epoch: bool = True


ALL_EXPERIMENTS = ("wer", "clip", "surveillance", "missing", "ablation", "filter")


@dataclass(frozen=True)
class ExperimentsSection:
    run: tuple[str, ...] = ALL_EXPERIMENTS
    train_wers: tuple[float, ...] = (0.15, 0.40, 0.60)
    test_wers: tuple[float, ...] = (0.0, 0.16, 0.30, 0.41, 0.50, 0.60, 0.64, 0.70)
    train_clips: tuple[int, ...] = (0, 1, 4, 6)
    test_clips: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7, 8)
    train_counts: tuple[int, ...] = (4, 24)
    test_counts: tuple[int, ...] = (4, 9, 14, 19, 24, 30)
    missing_train_wers: tuple[float, ...] = (0.16, 0.41, 0.64)
    ablation_train_wer: float = 0.40
    filter_kinds: tuple[str, ...] = ("gaussian", "binary", "maximum", "uniform")
    filter_dims: tuple[str, ...] = ("2d", "3d")
    filter_pairs: tuple[int, ...] = (100, 300, 1000)


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    corruption: CorruptionSection = field(default_factory=CorruptionSection)
    models: ModelsSection = field(default_factory=ModelsSection)
    experiments: ExperimentsSection = field(default_factory=ExperimentsSection)
    seeds: tuple[int, ...] = (1, 2, 3)
    output_dir: str = "runs/default"

    def __post_init__(self):
        unknown = set(self.experiments.run) - set(ALL_EXPERIMENTS)
        if unknown:
            raise ConfigError(f"unknown experiments {sorted(unknown)}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.corpus.region_file is not None and not Path(self.corpus.region_file).is_file():
            raise ConfigError(f"region_file not found: {self.corpus.region_file}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        args = typing.get_args(tp)
        item = args[0]
        return tuple(_coerce(item, v, f"{where}[{i}]") for i, v in enumerate(value))
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def from_dict(cls, data, where: str = "config"):
    """Build dataclass ``cls`` from ``data``, rejecting keys it does not declare."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(RunConfig, data)
