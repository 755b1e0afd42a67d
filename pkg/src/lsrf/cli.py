"""Command-line entry point.

Every run writes ``manifest.json`` into its output directory, on success and
on failure. Exit status 0 means success, 1 a scenario error (the run could
not be carried out as configured), 2 a configuration error. Files a failed
run has started writing are removed.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as E
from .backfit import BackfitError, compute_pilots, smooth_backfit
from .config import ConfigError, RunConfig, config_from_dict, parse_config, with_overrides
from .design import (DesignError, SamplingDesign, assign_sites_to_blocks, build_block_partition,
                     classify_regime, draw_sites)
from .estimators import EstimatorError, EvalGrid, nw_regression
from .io import (read_dataset_csv, read_sites_csv, write_additive_csv, write_block_report_csv,
                 write_dataset_csv, write_estimates_csv, write_rows, write_sites_csv, write_summary)
from .kernels import KernelError
from .levy import LevyError, save_mass_grid

OUT_ENV = "LSRF_OUT"

SCENARIO_ERRORS = (E.ScenarioError, DesignError, LevyError, EstimatorError, BackfitError, KernelError)


class _Tracker:
    """Remembers the files a run creates so a failure can remove them."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.root / name
        self.files.append(p)
        return p

    def add(self, paths):
        self.files.extend(Path(p) for p in paths)

    def cleanup(self):
        for p in self.files:
            if p.exists():
                p.unlink()


def _versions() -> dict:
    import scipy
    import sympy
    return {"lsrf": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "sympy": sympy.__version__}


def _require(cfg: RunConfig, ok: bool, msg: str):
    if not ok:
        raise ConfigError([msg])


def _input(cfg: RunConfig, what: str) -> Path:
    _require(cfg, cfg.input is not None, f"{what} needs an input file (--input or the input key)")
    p = Path(cfg.input)
    if not p.is_file():
        raise ConfigError([f"input file {p} does not exist"])
    return p


def _grid_for(cfg: RunConfig, h: float, c1: float) -> EvalGrid:
    x = cfg.experiment
    if x.u_points and x.x_points:
        u, xx = E._points(cfg)
        return EvalGrid(u, xx)
    return EvalGrid.from_axes(E._u_axes(cfg, c1 * h), E._x_axes(cfg))


def _comments(cfg: RunConfig) -> list[str]:
    return [f"config_digest={cfg.digest()}", f"seeds={cfg.seed}"]


# ---------------------------------------------------------------- subcommands


def cmd_sample(cfg: RunConfig, out: _Tracker):
    s = cfg.sampling
    _require(cfg, s.n is not None and s.A_n is not None, "sample needs sampling.n and sampling.A_n")
    design = SamplingDesign(s.d, s.n, s.A_n, E.build_density(cfg), seed=cfg.seed, C0=s.C0)
    sites = draw_sites(design)
    write_sites_csv(out.path("sites.csv"), sites)
    part = build_block_partition(s.A_n, s.block_A1, s.block_A2, s.d)
    rep = assign_sites_to_blocks(sites, part, s.block_C)
    write_block_report_csv(out.path("blocks.csv"), rep)
    reg = classify_regime(s.n, s.A_n, s.d, s.kappa_max)
    write_summary(out.path("sample_summary.txt"), {
        "config_digest": cfg.digest(), "n": s.n, "A_n": s.A_n, "regime": reg.regime, "intensity": reg.ratio,
        "unit_bound": rep.unit_bound, "unit_flags": rep.unit_flags, "block_flags": rep.block_flags})


def cmd_simulate(cfg: RunConfig, out: _Tracker):
    s = cfg.sampling
    if cfg.input is not None:
        sites = read_sites_csv(_input(cfg, "simulate"))
    else:
        _require(cfg, s.n is not None and s.A_n is not None,
                 "simulate needs sampling.n and sampling.A_n or an input sites file")
        sites = draw_sites(SamplingDesign(s.d, s.n, s.A_n, E.build_density(cfg), seed=cfg.seed, C0=s.C0))
    _require(cfg, sites.d == s.d, "input sites dimension does not match sampling.d")
    data, masses = E.simulate_on_sites(cfg, sites, 0, return_masses=True)
    write_dataset_csv(out.path("dataset.csv"), data)
    save_mass_grid(masses, out.path("masses.bin"))


def cmd_fit(cfg: RunConfig, out: _Tracker):
    data = read_dataset_csv(_input(cfg, "fit"))
    kspec = E.build_kernel(cfg)
    pts = None
    if cfg.kernel.rule == "plugin":
        g = _grid_for(cfg, 0.25, kspec.C1)
        pts = list(zip(g.u, g.x))
    h = E.bandwidth(cfg, data.n, data.d + data.p, data, pts)
    grid = _grid_for(cfg, h, kspec.C1)
    est = nw_regression(data, kspec, h, grid, cfg.estimator.denom_floor, full_cube=cfg.estimator.full_cube)
    write_estimates_csv(out.path("estimates.csv"), est, _comments(cfg) + [f"h={h!r}"])


def cmd_backfit(cfg: RunConfig, out: _Tracker):
    data = read_dataset_csv(_input(cfg, "backfit"))
    kspec = E.build_kernel(cfg)
    h = E.bandwidth(cfg, data.n, data.d + 1) if cfg.kernel.rule != "plugin" else None
    _require(cfg, h is not None, "backfit needs kernel.rule manual or rate")
    if cfg.experiment.u_points:
        us = np.array(cfg.experiment.u_points, dtype=float).reshape(len(cfg.experiment.u_points), -1)
    else:
        axes = E._u_axes(cfg, 2 * kspec.C1 * h)
        us = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, data.d)
    models = []
    e = cfg.estimator
    for u in us:
        pil = compute_pilots(data, kspec, h, u, e.n_grid, e.denom_floor, keep_tensor=False)
        models.append(smooth_backfit(pil, e.tol, e.max_iter))
    write_additive_csv(out.path("additive.csv"), models, _comments(cfg) + [f"h={h!r}"])


def cmd_experiment(cfg: RunConfig, out: _Tracker, kind: str):
    if kind == "rate":
        reports = [E.run_rate_experiment(cfg)]
    elif kind == "clt":
        reports = [E.run_clt_experiment(cfg)]
    elif kind == "additive":
        rate, clt = E.run_additive_experiment(cfg)
        reports = [r for r in (rate, clt) if r is not None]
    elif kind == "mn-dep":
        reports = [E.run_mn_dependence_experiment(cfg)]
    else:
        raise ConfigError([f"unknown experiment kind {kind!r}"])
    for r in reports:
        out.files += [out.root / f"{r.stem}.csv", out.root / f"{r.stem}_summary.txt"]
        r.write(out.root)


def cmd_ci(cfg: RunConfig, out: _Tracker):
    if cfg.input is None:
        rep = E.run_ci_experiment(cfg)
        out.files += [out.root / f"{rep.stem}.csv", out.root / f"{rep.stem}_summary.txt"]
        rep.write(out.root)
        return
    data = read_dataset_csv(_input(cfg, "ci"))
    kspec = E.build_kernel(cfg)
    u, x = E._points(cfg)
    pts = list(zip(u, x))
    h = E.bandwidth(cfg, data.n, data.d + data.p, data, pts)
    E._check_interior(u, kspec.C1 * h)
    mhat, V = E.plugin_variance(data, kspec, h, u, x, cfg.estimator.denom_floor)
    lo, hi, q = E.confidence_intervals(mhat, V, data.n, h, data.d, data.p, cfg.experiment.tau)
    header = [f"u_{i + 1}" for i in range(data.d)] + [f"x_{k + 1}" for k in range(data.p)] + [
        "estimate", "V", "lower", "upper"]
    rows = [list(u[j]) + list(x[j]) + [mhat[j], V[j], lo[j], hi[j]] for j in range(len(u))]
    write_rows(out.path("intervals.csv"), header, rows,
               _comments(cfg) + [f"h={h!r}", f"quantile={q!r}", f"tau={cfg.experiment.tau!r}"])


# ---------------------------------------------------------------- driver


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<subcommand> or ./lsrf_out/<subcommand>)")
    common.add_argument("--threads", type=int, help="worker processes for replicates")
    common.add_argument("--input", help="input CSV (sites for simulate; dataset for fit, backfit and ci)")
    parser = argparse.ArgumentParser(prog="lsrf", description="Locally stationary random field regression toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "sample", "fit", "backfit", "ci"):
        sub.add_parser(name, parents=[common])
    ex = sub.add_parser("experiment", parents=[common])
    ex.add_argument("kind", choices=["rate", "clt", "additive", "mn-dep"])
    return parser


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.output:
        return Path(cfg.output)
    name = args.command if args.command != "experiment" else f"experiment_{args.kind}"
    return Path(os.environ.get(OUT_ENV, "lsrf_out")) / name


def _load(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else config_from_dict({})
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.input is not None:
        changes["input"] = args.input
    return with_overrides(cfg, changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    cfg, code, error = None, 0, None
    try:
        cfg = _load(args)
    except ConfigError as exc:
        code, error = 2, exc.errors
    out_dir = _out_dir(args, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    tracker = _Tracker(out_dir)
    if code == 0:
        try:
            cfg.dump(tracker.path("config.json"))
            if args.command == "experiment":
                cmd_experiment(cfg, tracker, args.kind)
            else:
                globals()[f"cmd_{args.command}"](cfg, tracker)
        except ConfigError as exc:
            code, error = 2, exc.errors
        except SCENARIO_ERRORS as exc:
            code, error = 1, [f"{type(exc).__name__}: {exc}"]
        except Exception as exc:  # unexpected failures still get a manifest
            code, error = 1, [f"{type(exc).__name__}: {exc}", traceback.format_exc()]
        if code != 0:
            tracker.cleanup()
    manifest = {
        "command": args.command if args.command != "experiment" else f"experiment {args.kind}",
        "status": "ok" if code == 0 else "error",
        "exit_code": code,
        "error": error,
        "config_digest": cfg.digest() if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
        "outputs": sorted(p.name for p in tracker.files if p.exists()),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if error:
        for line in error:
            print(f"error: {line}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
