"""Strict JSON run configuration.

Sections mirror the modules: ``field``, ``sampling``, ``kernel``,
``estimator`` and ``experiment``. Unknown keys are rejected and every
problem found is reported at once.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class KernelSection:
    family: str = "epanechnikov"
    rule: str = "rate"
    h: Optional[float] = None
    c: float = 1.0
    table: Optional[list] = None
    support: float = 1.0


@dataclass
class FieldSection:
    p: int = 1
    rates: list = field(default_factory=lambda: [1.0])
    coefs: Optional[list] = None
    carma: Optional[dict] = None
    gamma0: float = 0.0
    sigma0: float = 1.0
    cp_rate: Optional[float] = None
    jump: Optional[dict] = None
    transform: str = "identity"
    delta: Optional[float] = None


@dataclass
class SamplingSection:
    d: int = 2
    density: str = "uniform"
    beta_a: Optional[list] = None
    beta_b: Optional[list] = None
    beta_mix: float = 0.5
    piecewise_values: Optional[list] = None
    n: Optional[int] = None
    A_n: Optional[float] = None
    schedule: Optional[list] = None
    C0: float = 0.01
    kappa_max: float = 100.0
    block_A1: Optional[float] = None
    block_A2: Optional[float] = None
    block_C: float = 3.0


@dataclass
class EstimatorSection:
    denom_floor: float = 1e-12
    tol: float = 1e-8
    max_iter: int = 200
    n_grid: int = 101
    full_cube: bool = False


@dataclass
class ExperimentSection:
    scenario: str = "default"
    replicates: int = 20
    truth_m: str = "(1+u1)*sin(x1)+u2**2"
    truth_sigma: str = "1"
    additive_m0: Optional[str] = None
    additive_components: Optional[list] = None
    u_points: Optional[list] = None
    x_points: Optional[list] = None
    u_axis_points: int = 5
    x_axis: list = field(default_factory=lambda: [-1.0, 1.0, 11])
    estimators: list = field(default_factory=lambda: ["nw"])
    tau: float = 0.05
    m_values: list = field(default_factory=lambda: [2, 4, 6, 8, 10])
    q: int = 2
    n_rep: int = 1000
    decay_delta: Optional[float] = None
    noise: str = "normal"


@dataclass
class RunConfig:
    field: FieldSection = dataclasses.field(default_factory=FieldSection)
    sampling: SamplingSection = dataclasses.field(default_factory=SamplingSection)
    kernel: KernelSection = dataclasses.field(default_factory=KernelSection)
    estimator: EstimatorSection = dataclasses.field(default_factory=EstimatorSection)
    experiment: ExperimentSection = dataclasses.field(default_factory=ExperimentSection)
    seed: int = 0
    threads: Optional[int] = None  # None: all available cores
    output: Optional[str] = None
    input: Optional[str] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of the canonical JSON form (stable key order, no whitespace).

        ``threads`` and ``output`` are left out: they never change results.
        """
        body = {k: v for k, v in self.to_dict().items() if k not in ("threads", "output")}
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


_SECTIONS = {
    "field": FieldSection,
    "sampling": SamplingSection,
    "kernel": KernelSection,
    "estimator": EstimatorSection,
    "experiment": ExperimentSection,
}


def _type_ok(value, tp) -> bool:
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        return any(_type_ok(value, a) for a in typing.get_args(tp))
    if tp is type(None):
        return value is None
    if tp is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if tp is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if tp is bool:
        return isinstance(value, bool)
    if tp is str:
        return isinstance(value, str)
    if tp is list:
        return isinstance(value, list)
    if tp is dict:
        return isinstance(value, dict)
    return True


def _build(cls, raw: dict, where: str, errors: list):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            errors.append(f"unknown key {where}.{key}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in raw:
            continue
        val = raw[f.name]
        if not _type_ok(val, hints[f.name]):
            errors.append(f"type mismatch for {where}.{f.name}: got {type(val).__name__}")
            continue
        if hints[f.name] is float or hints[f.name] == Optional[float]:
            val = float(val) if val is not None else None
        kwargs[f.name] = val
    return cls(**kwargs)


def _validate(cfg: RunConfig, errors: list) -> None:
    k, s, fl, e, x = cfg.kernel, cfg.sampling, cfg.field, cfg.estimator, cfg.experiment
    if k.family not in ("epanechnikov", "triweight", "uniform", "custom"):
        errors.append(f"kernel.family must be one of epanechnikov/triweight/uniform/custom, got {k.family!r}")
    if k.family == "custom" and not k.table:
        errors.append("kernel.table is required for kernel.family = custom")
    if k.rule not in ("manual", "rate", "plugin"):
        errors.append(f"kernel.rule must be manual, rate or plugin, got {k.rule!r}")
    if k.rule == "manual" and (k.h is None or not k.h > 0):
        errors.append("kernel.h must be a positive number when kernel.rule = manual")
    if not k.c > 0:
        errors.append("kernel.c must be positive")
    if s.d < 1:
        errors.append("sampling.d must be at least 1")
    if s.density not in ("uniform", "beta", "piecewise"):
        errors.append(f"sampling.density must be uniform, beta or piecewise, got {s.density!r}")
    if s.density == "beta" and (not s.beta_a or not s.beta_b):
        errors.append("sampling.beta_a and sampling.beta_b are required for a beta density")
    if s.density == "piecewise" and not s.piecewise_values:
        errors.append("sampling.piecewise_values is required for a piecewise density")
    if s.n is not None and s.n < 0:
        errors.append("sampling.n must be non-negative")
    if s.A_n is not None and not s.A_n > 0:
        errors.append("sampling.A_n must be positive")
    if s.schedule is not None:
        ok = all(isinstance(r, list) and len(r) == 2 and all(_type_ok(v, float) for v in r) for r in s.schedule)
        if not ok or not s.schedule:
            errors.append("sampling.schedule must be a nonempty list of [n, A_n] pairs")
        else:
            ns = [r[0] for r in s.schedule]
            if any(b <= a for a, b in zip(ns, ns[1:])):
                errors.append("sampling.schedule must have increasing n")
    if s.block_A1 is not None and s.block_A2 is not None and not s.block_A2 < s.block_A1:
        errors.append(f"sampling.block_A2 ({s.block_A2}) must be below sampling.block_A1 ({s.block_A1})")
    if fl.p < 1:
        errors.append("field.p must be at least 1")
    if fl.carma is None and (not fl.rates or any(not _type_ok(r, float) or not r > 0 for r in fl.rates)):
        errors.append("field.rates must be a nonempty list of positive numbers")
    if fl.coefs is not None and len(fl.coefs) != len(fl.rates):
        errors.append("field.coefs must have one entry per field.rates entry")
    if fl.sigma0 < 0:
        errors.append("field.sigma0 must be non-negative")
    if fl.cp_rate is not None and not fl.cp_rate > 0:
        errors.append("field.cp_rate must be positive")
    if fl.transform not in ("identity", "normal-cdf"):
        errors.append(f"field.transform must be identity or normal-cdf, got {fl.transform!r}")
    if fl.delta is not None and not fl.delta > 0:
        errors.append("field.delta must be positive")
    if not e.denom_floor > 0 or not e.tol > 0 or e.max_iter < 1 or e.n_grid < 3:
        errors.append("estimator settings must satisfy denom_floor > 0, tol > 0, max_iter >= 1, n_grid >= 3")
    if x.replicates < 1:
        errors.append("experiment.replicates must be positive")
    if not 0 < x.tau < 1:
        errors.append("experiment.tau must lie in (0, 1)")
    if x.q < 2 or x.q % 2:
        errors.append("experiment.q must be an even integer >= 2")
    if len(x.x_axis) != 3:
        errors.append("experiment.x_axis must be [lo, hi, count]")
    if any(est not in ("nw", "backfit") for est in x.estimators):
        errors.append("experiment.estimators entries must be nw or backfit")
    if x.noise not in ("normal", "none"):
        errors.append("experiment.noise must be normal or none")
    if cfg.seed < 0:
        errors.append("seed must be non-negative")
    if cfg.threads is not None and cfg.threads < 1:
        errors.append("threads must be positive")


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError(["configuration root must be an object"])
    errors: list[str] = []
    kwargs: dict[str, Any] = {}
    top = {f.name for f in dataclasses.fields(RunConfig)}
    for key, val in raw.items():
        if key not in top:
            errors.append(f"unknown key {key}")
        elif key in _SECTIONS:
            if not isinstance(val, dict):
                errors.append(f"section {key} must be an object")
            else:
                kwargs[key] = _build(_SECTIONS[key], val, key, errors)
        else:
            tp = typing.get_type_hints(RunConfig)[key]
            if not _type_ok(val, tp):
                errors.append(f"type mismatch for {key}: got {type(val).__name__}")
            else:
                kwargs[key] = val
    cfg = RunConfig(**kwargs)
    _validate(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON in {path}: {exc}"]) from exc
    return config_from_dict(raw)


def with_overrides(cfg: RunConfig, changes: dict) -> RunConfig:
    """Copy of ``cfg`` with dotted-path overrides, e.g. ``{"kernel.h": 0.1}``."""
    out = copy.deepcopy(cfg)
    for path, val in changes.items():
        obj = out
        parts = path.split(".")
        for p in parts[:-1]:
            obj = getattr(obj, p)
        setattr(obj, parts[-1], val)
    return config_from_dict(out.to_dict())

