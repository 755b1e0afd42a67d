"""Shared, cached runs of the calibrated scenarios in ``scripts/configs``."""
from __future__ import annotations

import functools
from pathlib import Path

from lsrf import experiments as E
from lsrf.config import parse_config, with_overrides

CONFIGS = Path(__file__).resolve().parent.parent / "scripts" / "configs"


def load(name: str, **overrides):
    cfg = parse_config(CONFIGS / f"{name}.json")
    return with_overrides(cfg, overrides) if overrides else cfg


@functools.lru_cache(maxsize=None)
def decay(rate: float = 1.0):
    return E.run_mn_dependence_experiment(load("decay", **{"field.rates": [rate]}))


@functools.lru_cache(maxsize=None)
def nw_rate():
    return E.run_rate_experiment(load("nw_rate"))


@functools.lru_cache(maxsize=None)
def backfit_rate():
    return E.run_rate_experiment(load("backfit_rate"))
