"""CSV and summary writers with fixed 17-significant-digit formatting."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .design import SiteSet
from .estimators import Dataset


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_rows(path) -> tuple[dict, list[str], list[list[str]]]:
    """Returns ``(comment key/values, header, rows)``."""
    meta = {}
    lines = Path(path).read_text().splitlines()
    body = []
    for ln in lines:
        if ln.startswith("#"):
            key, _, val = ln[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
        elif ln:
            body.append(ln)
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]


def write_sites_csv(path, sites: SiteSet) -> None:
    d = sites.d
    header = [f"site_{i + 1}" for i in range(d)] + [f"unit_{i + 1}" for i in range(d)]
    rows = (list(s) + list(u) for s, u in zip(sites.sites, sites.sites_unit))
    write_rows(path, header, rows, [f"A_n={fmt(sites.A_n)}"])


def read_sites_csv(path) -> SiteSet:
    meta, header, rows = read_rows(path)
    d = sum(1 for h in header if h.startswith("unit_"))
    arr = np.array(rows, dtype=float).reshape(-1, 2 * d)
    return SiteSet(arr[:, d:], float(meta["A_n"]))


def write_dataset_csv(path, data: Dataset) -> None:
    d, p = data.d, data.p
    header = ([f"site_{i + 1}" for i in range(d)] + [f"unit_{i + 1}" for i in range(d)]
              + [f"x_{k + 1}" for k in range(p)] + ["y"])
    rows = (list(s) + list(u) + list(x) + [y]
            for s, u, x, y in zip(data.sites.sites, data.sites.sites_unit, data.X, data.Y))
    write_rows(path, header, rows, [f"A_n={fmt(data.A_n)}"])


def read_dataset_csv(path) -> Dataset:
    meta, header, rows = read_rows(path)
    d = sum(1 for h in header if h.startswith("unit_"))
    p = sum(1 for h in header if h.startswith("x_"))
    arr = np.array(rows, dtype=float).reshape(-1, 2 * d + p + 1)
    sites = SiteSet(arr[:, d:2 * d], float(meta["A_n"]))
    return Dataset(sites, arr[:, 2 * d:2 * d + p], arr[:, -1])


def write_block_report_csv(path, report) -> None:
    header = ["ell_index", "epsilon_mask", "q_eps", "volume", "count", "flagged"]
    rows = ((":".join(map(str, ell)), "".join(map(str, eps)), q, vol, cnt, flag)
            for ell, eps, q, vol, cnt, flag in report.rows)
    write_rows(path, header, rows, [f"unit_bound={fmt(report.unit_bound)}",
                                    f"unit_flags={report.unit_flags}",
                                    f"block_flags={report.block_flags}"])


def write_estimates_csv(path, est, comments: Sequence[str] = ()) -> None:
    d, p = est.u.shape[1], est.x.shape[1]
    header = [f"u_{i + 1}" for i in range(d)] + [f"x_{k + 1}" for k in range(p)] + [
        "value", "denom", "ess", "degenerate"]
    rows = (list(u) + list(x) + [v, dn, e, bool(g)]
            for u, x, v, dn, e, g in zip(est.u, est.x, est.value, est.denom, est.ess, est.degenerate))
    write_rows(path, header, rows, comments)


def write_additive_csv(path, models, comments: Sequence[str] = ()) -> None:
    models = list(models)
    d = len(models[0].u)
    header = [f"u_{i + 1}" for i in range(d)] + ["component", "x", "value", "m0", "iterations", "converged"]
    rows = []
    for m in models:
        for l in range(m.components.shape[0]):
            for x, v in zip(m.x_grid, m.components[l]):
                rows.append(list(m.u) + [l + 1, x, v, m.m0, m.iterations, m.converged])
    write_rows(path, header, rows, comments)


def write_summary(path, items: dict) -> None:
    with open(path, "w") as fh:
        for k, v in items.items():
            if isinstance(v, (list, tuple, np.ndarray)):
                v = " ".join(fmt(x) for x in v)
            fh.write(f"{k} = {fmt(v)}\n")
