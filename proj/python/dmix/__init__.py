"""Continual event detection with a growing mixture of adapter experts and mixed replay."""

import json as _json

from . import _core
from ._core import (
    ConfigError,
    MetricsError,
    SpecError,
    StateError,
    agem_project,
    avg_accuracy,
    avg_forgetting,
    data_loss,
    ewc_penalty,
    grad_check,
    lwf_loss,
    mean_of,
    methods,
    report_csv,
    splice_lengths,
    total_loss,
)


def _text(config):
    return config if isinstance(config, str) else _json.dumps(config)


def default_config():
    return _json.loads(_core.default_config())


def load_config(path):
    with open(path) as f:
        return _json.loads(_core.normalize_config(f.read()))


def stream_summary(config):
    return _core.stream_summary(_text(config))


def write_corpus(config, directory):
    _core.write_corpus(_text(config), directory)


def run_seed(config, seed):
    return _core.run_seed(_text(config), seed)


def run_experiment(config):
    return _core.run_experiment(_text(config))
