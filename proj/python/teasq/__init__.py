"""Python access to the teasq simulator core."""

import json
import os

from . import _core
from ._core import ConfigError, FormatError, encode, round_trip, staleness_weight, topk_count, transmission_rate

__all__ = [
    "ConfigError",
    "FormatError",
    "encode",
    "resolve_config",
    "round_trip",
    "run",
    "staleness_weight",
    "topk_count",
    "transmission_rate",
    "tune",
]


def _pairs(overrides):
    return [(str(k), str(v)) for k, v in (overrides or {}).items()]


def resolve_config(path="", **overrides):
    """Load, override and validate a config; returns it as a dict."""
    return json.loads(_core.resolve_config(os.fspath(path), _pairs(overrides)))


def run(path, out_dir, **overrides):
    """Run one experiment; writes metrics.csv, run.json and summary.json."""
    return json.loads(_core.run(os.fspath(path), _pairs(overrides), os.fspath(out_dir)))


def tune(path, out_dir, **overrides):
    """Search compression parameters; writes schedule.json."""
    return json.loads(_core.tune(os.fspath(path), _pairs(overrides), os.fspath(out_dir)))
