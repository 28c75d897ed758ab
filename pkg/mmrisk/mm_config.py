#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import json
import logging
import math
import os.path
import subprocess

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Optional

from mmrisk.mm_exceptions import ConfigurationError
from mmrisk.mm_text import STEMMERS


VERSION_FILE = os.path.join(os.path.dirname(__file__), os.pardir, 'VERSION')
PACKAGE_VERSION = "0.1.0"


@dataclass(frozen=True)
class TrainingConfig:
    embedding_dim: int = 500
    lstm_hidden: int = 100
    cnn_width: int = 5
    cnn_filters: int = 128
    dense_units: int = 64
    dropout: float = 0.2
    recurrent_dropout: float = 0.2
    batch_size: int = 64
    epochs: int = 20
    optimizer: str = 'adam'
    learning_rate: float = 0.001
    max_len: int = 256
    seed: int = 0
    min_count: int = 1
    stemmer: str = 'dutch'
    stopwords: Optional[str] = None
    folds: int = 5
    stratified: bool = False
    threshold: float = 0.5

    def __post_init__(self):
        for name in ('embedding_dim', 'lstm_hidden', 'cnn_width', 'cnn_filters', 'dense_units',
                     'batch_size', 'max_len', 'min_count'):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigurationError(f"`{name}` must be a positive integer, got {value!r}")
        for name in ('epochs', 'folds', 'seed'):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigurationError(f"`{name}` must be an integer, got {value!r}")
        for name in ('dropout', 'recurrent_dropout', 'learning_rate', 'threshold'):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
                raise ConfigurationError(f"`{name}` must be a finite number, got {value!r}")
        for name in ('optimizer', 'stemmer'):
            if not isinstance(getattr(self, name), str):
                raise ConfigurationError(f"`{name}` must be a string, got {getattr(self, name)!r}")
        if self.stopwords is not None and not isinstance(self.stopwords, str):
            raise ConfigurationError(f"`stopwords` must be a path or null, got {self.stopwords!r}")
        if not isinstance(self.stratified, bool):
            raise ConfigurationError(f"`stratified` must be true or false, got {self.stratified!r}")
        if self.epochs < 0:
            raise ConfigurationError(f"`epochs` must be non-negative, got {self.epochs}")
        for name in ('dropout', 'recurrent_dropout'):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigurationError(f"`{name}` must be in [0, 1), got {rate}")
        if self.learning_rate <= 0.0:
            raise ConfigurationError(f"`learning_rate` must be positive, got {self.learning_rate}")
        if self.optimizer.lower() != 'adam':
            raise ConfigurationError(f"Only the `adam` optimizer is supported, got `{self.optimizer}`")
        if self.stemmer not in STEMMERS:
            raise ConfigurationError(f"Unknown stemmer `{self.stemmer}`, choose one of: {sorted(STEMMERS)}")
        if self.folds < 2:
            raise ConfigurationError(f"`folds` must be >= 2, got {self.folds}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigurationError(f"`threshold` must be in [0, 1], got {self.threshold}")
        if self.seed < 0:
            raise ConfigurationError(f"`seed` must be non-negative, got {self.seed}")

    def __repr__(self):
        return f"TrainingConfig(d={self.embedding_dim}, H={self.lstm_hidden}, " \
               f"cnn={self.cnn_filters}x{self.cnn_width}, dense={self.dense_units}, " \
               f"dropout={self.dropout}/{self.recurrent_dropout}, batch={self.batch_size}, " \
               f"epochs={self.epochs}, lr={self.learning_rate}, seed={self.seed})"

    @staticmethod
    def from_dict(params: Dict[str, Any]) -> 'TrainingConfig':
        known = {f.name for f in fields(TrainingConfig)}
        unknown = sorted(set(params) - known)
        if unknown:
            raise ConfigurationError(f"Unknown configuration key(s): {unknown}")
        return TrainingConfig(**params)

    @staticmethod
    def from_json(path: str) -> 'TrainingConfig':
        if not os.path.isfile(path):
            raise ConfigurationError(f"Configuration file not found: {path}")
        with open(path, 'r') as fd:
            try:
                params = json.load(fd)
            except json.JSONDecodeError as err:
                raise ConfigurationError(f"Configuration file {path} is not valid JSON: {err}")
        if not isinstance(params, dict):
            raise ConfigurationError(f"Configuration file {path} must hold a JSON object")
        return TrainingConfig.from_dict(params)

    @staticmethod
    def micro(**overrides) -> 'TrainingConfig':
        """
        Tiny dimensions used for finite-difference gradient checking
        """
        micro_config = TrainingConfig(embedding_dim=4, lstm_hidden=3, cnn_width=2, cnn_filters=2,
                                      dense_units=5, batch_size=2, epochs=1, max_len=6)
        return replace(micro_config, **overrides)

    def with_overrides(self, **overrides) -> 'TrainingConfig':
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def version_string() -> str:
    """
    git-describe-like version: v<major>.<minor>.<patch>[-g<sha>]
    """
    version = PACKAGE_VERSION
    if os.path.isfile(VERSION_FILE):
        with open(VERSION_FILE, 'r') as fd:
            version_info = json.load(fd)
        version = f"{version_info.get('VERSION_MAJOR', 0)}.{version_info.get('VERSION_MINOR', 0)}." \
                  f"{os.environ.get('GITHUB_RUN_NUMBER', 0)}"
    try:
        sha = subprocess.run(['git', 'rev-parse', '--short', 'HEAD'], capture_output=True, text=True,
                             cwd=os.path.dirname(os.path.abspath(__file__)), timeout=5)
        if sha.returncode == 0 and sha.stdout.strip():
            return f"v{version}-g{sha.stdout.strip()}"
    except (OSError, subprocess.SubprocessError) as err:
        logging.debug(f"git revision not available: {err}")
    return f"v{version}"


def provenance(seed: int, config: TrainingConfig) -> Dict[str, Any]:
    return {'seed': int(seed), 'config': config.to_dict(), 'version': version_string()}
