#!/usr/bin/env python3
"""
Experiment configuration: a JSON document merged over in-code defaults,
then checked key by key into frozen dataclasses. Unknown keys are errors.
"""

import copy
import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

from errors import ConfigError
from feature_store import SyntheticConfig
from game_sampler import GameMode
from similarity_analysis import DEFAULT_PROBE_SIZE
from trainer import Optimizer, TrainConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DataOptions:
    synthetic: Optional[SyntheticConfig] = SyntheticConfig()
    feature_path: Optional[str] = None
    csv_path: Optional[str] = None
    data_seed: int = 0
    test_per_concept: int = 10
    validation_per_concept: int = 10


@dataclass(frozen=True)
class AnalysisOptions:
    probe_size: int = DEFAULT_PROBE_SIZE
    shift_k: int = 10


@dataclass(frozen=True)
class ProbeOptions:
    runs: int = 10
    n_batches: int = 1000
    batch_size: int = 32
    swap_pairs: int = 1000
    swap_runs: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataOptions = DataOptions()
    train: TrainConfig = TrainConfig()
    analysis: AnalysisOptions = AnalysisOptions()
    probe: ProbeOptions = ProbeOptions()
    seeds: int = 1
    out_dir: str = "runs"
    log_level: str = "INFO"


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    """JSON-ready echo of a configuration"""
    return _plain(asdict(config))


DEFAULT_CONFIG = config_to_dict(ExperimentConfig())
_NULLABLE = {"data.synthetic", "data.feature_path", "data.csv_path"}


def _merge(defaults: Dict[str, Any], overrides: Dict[str, Any], path: str = "") -> Dict[str, Any]:
    """Overlay overrides on defaults, rejecting keys the defaults do not know"""
    if not isinstance(overrides, dict):
        raise ConfigError(f"'{path or '<root>'}' must be a JSON object")
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        dotted = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown configuration key '{dotted}'")
        default = defaults[key]
        if isinstance(default, dict) and value is not None:
            merged[key] = _merge(default, value, dotted)
        elif value is None and dotted not in _NULLABLE:
            raise ConfigError(f"'{dotted}' may not be null")
        else:
            _check_type(dotted, value, default)
            merged[key] = value
    return merged


def _check_type(dotted: str, value, default):
    if default is None or value is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"'{dotted}' must be a string or null")
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"'{dotted}' must be of type {type(default).__name__}, got {value!r}")


def _build(data: Dict[str, Any]) -> ExperimentConfig:
    d = data["data"]
    synthetic = SyntheticConfig(**d["synthetic"]) if d["synthetic"] is not None else None
    train = dict(data["train"])
    try:
        train["mode"] = GameMode(train["mode"])
    except ValueError:
        raise ConfigError(f"'train.mode' must be 'same' or 'diff', got {train['mode']!r}")
    try:
        train["optimizer"] = Optimizer(train["optimizer"])
    except ValueError:
        raise ConfigError(f"'train.optimizer' must be 'adam' or 'sgd', got {train['optimizer']!r}")
    train["learning_rate"] = float(train["learning_rate"])
    return ExperimentConfig(
        data=DataOptions(**{**d, "synthetic": synthetic}),
        train=TrainConfig(**train),
        analysis=AnalysisOptions(**data["analysis"]),
        probe=ProbeOptions(**data["probe"]),
        seeds=data["seeds"],
        out_dir=data["out_dir"],
        log_level=data["log_level"],
    )


def validate_config(config: ExperimentConfig):
    """Cross-field checks; every failure is a ConfigError"""
    try:
        config.train.validate()
        if config.data.synthetic is not None:
            config.data.synthetic.validate()
    except Exception as e:
        raise ConfigError(str(e)) from e
    data = config.data
    sources = [data.synthetic is not None, data.feature_path is not None, data.csv_path is not None]
    if sum(sources) == 0:
        raise ConfigError("data needs one of 'synthetic', 'feature_path' or 'csv_path'")
    if sum(sources) > 1:
        raise ConfigError(
            "data sources are exclusive: set 'data.synthetic' to null to read 'feature_path' or 'csv_path', "
            "and give only one of the two"
        )
    if data.synthetic is not None and data.synthetic.d != config.train.d:
        raise ConfigError(f"train.d={config.train.d} differs from data.synthetic.d={data.synthetic.d}")
    for group in (config.analysis, config.probe):
        for f in fields(group):
            if getattr(group, f.name) < 1:
                raise ConfigError(f"'{f.name}' must be >= 1")
    if config.seeds < 1:
        raise ConfigError("'seeds' must be >= 1")
    if data.test_per_concept < 0 or data.validation_per_concept < 0:
        raise ConfigError("held-out counts must be >= 0")
    if config.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        raise ConfigError(f"unknown log_level {config.log_level!r}")


def load_experiment_config(path: Union[str, Path, None] = None) -> ExperimentConfig:
    """Load a configuration file (or the defaults when path is None)"""
    overrides: Dict[str, Any] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            try:
                overrides = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path} is not valid JSON: {e}") from e
        logger.info(f"Configuration loaded from {path}")
    config = _build(_merge(DEFAULT_CONFIG, overrides))
    validate_config(config)
    return config


def apply_overrides(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    seeds: Optional[int] = None,
    mode: Optional[str] = None,
    out_dir: Optional[str] = None,
    probe_size: Optional[int] = None,
) -> ExperimentConfig:
    """Command-line flags win over the file"""
    train = config.train
    if seed is not None:
        train = replace(train, seed=seed)
    if mode is not None:
        try:
            train = replace(train, mode=GameMode(mode))
        except ValueError:
            raise ConfigError(f"--mode must be 'same' or 'diff', got {mode!r}")
    config = replace(config, train=train)
    if seeds is not None:
        config = replace(config, seeds=seeds)
    if out_dir is not None:
        config = replace(config, out_dir=out_dir)
    if probe_size is not None:
        config = replace(config, analysis=replace(config.analysis, probe_size=probe_size))
    validate_config(config)
    return config
