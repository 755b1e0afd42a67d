"""One-dimensional compact-support kernels, product kernels and the
boundary-renormalised kernel weight used by smooth backfitting.

Conventions follow the estimators in this package: ``K_h(v) = K(v / h)``
(no ``1/h`` factor); the ``1/h`` scaling lives in the estimator
normalisation, while the boundary weight carries its own normaliser.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

FAMILIES = ("epanechnikov", "triweight", "uniform", "custom")


class KernelError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


def _simpson_rule(f, lo, hi, panels):
    x = np.linspace(lo, hi, 2 * panels + 1)
    y = np.asarray(f(x), dtype=float)
    w = np.ones_like(x)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return (hi - lo) / (6.0 * panels) * float(np.dot(w, y))


def simpson(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    *,
    breakpoints: Iterable[float] = (),
    tol: float = 1e-13,
    min_panels: int = 8,
    max_doublings: int = 22,
) -> float:
    """Composite Simpson rule on ``[a, b]`` with panel doubling.

    The interval is first split at ``breakpoints`` (kinks of the integrand) and
    each piece is refined until two successive estimates differ by less than
    ``tol`` (absolute, scaled by the piece length).
    """
    if b < a:
        return -simpson(f, b, a, breakpoints=breakpoints, tol=tol,
                        min_panels=min_panels, max_doublings=max_doublings)
    pts = sorted({float(a), float(b), *(float(x) for x in breakpoints if a < x < b)})
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        if hi <= lo:
            continue
        panels = min_panels
        prev = _simpson_rule(f, lo, hi, panels)
        for _ in range(max_doublings):
            panels *= 2
            cur = _simpson_rule(f, lo, hi, panels)
            if abs(cur - prev) <= tol * max(1.0, hi - lo):
                prev = cur
                break
            prev = cur
        else:
            raise QuadratureError(f"Simpson rule did not converge on [{lo}, {hi}]")
        total += prev
    return total


@dataclass(frozen=True)
class KernelSpec:
    """A symmetric, bounded, compactly supported kernel.

    ``family="custom"`` takes ``table``: kernel values on equispaced nodes
    over ``[-support, support]`` (odd length, symmetric), interpolated
    linearly and rescaled to integrate to one.
    """

    family: str = "epanechnikov"
    table: tuple[float, ...] | None = None
    support: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "custom":
            if self.table is None or len(self.table) < 3 or len(self.table) % 2 == 0:
                raise KernelError("custom kernel needs an odd-length table of at least 3 values")
            t = np.asarray(self.table, dtype=float)
            if not np.all(np.isfinite(t)) or np.any(t < 0):
                raise KernelError("custom kernel table must be finite and non-negative")
            if not np.allclose(t, t[::-1], rtol=0, atol=1e-12):
                raise KernelError("custom kernel table must be symmetric")
            if self.support <= 0:
                raise KernelError("custom kernel support must be positive")
            nodes = np.linspace(-self.support, self.support, len(t))
            mass = float(np.trapezoid(t, nodes))
            if mass <= 0:
                raise KernelError("custom kernel table integrates to zero")
            object.__setattr__(self, "table", tuple((t / mass).tolist()))
        elif self.support != 1.0:
            raise KernelError(f"{self.family} kernel has fixed support 1")

    @property
    def C1(self) -> float:
        return float(self.support)

    @property
    def C2(self) -> float:
        """Lipschitz constant (``inf`` for kernels with a jump)."""
        if self.family == "epanechnikov":
            return 1.5
        if self.family == "triweight":
            x = 1.0 / math.sqrt(5.0)
            return 35.0 / 32.0 * 6.0 * x * (1.0 - x * x) ** 2
        if self.family == "uniform":
            return math.inf
        t = np.asarray(self.table)
        if t[0] > 0:
            return math.inf
        step = 2.0 * self.support / (len(t) - 1)
        return float(np.max(np.abs(np.diff(t))) / step)

    def _nodes(self):
        return np.linspace(-self.support, self.support, len(self.table))

    def breakpoints(self) -> tuple[float, ...]:
        if self.family == "custom":
            return tuple(self._nodes().tolist())
        return (-1.0, 1.0)

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        a = np.abs(v)
        inside = a <= self.support
        if self.family == "epanechnikov":
            out = 0.75 * (1.0 - v * v)
        elif self.family == "triweight":
            t = 1.0 - v * v
            out = 35.0 / 32.0 * (t * t * t)
        elif self.family == "uniform":
            out = np.full_like(v, 0.5)
        else:
            out = np.interp(v, self._nodes(), np.asarray(self.table))
        return np.where(inside, out, 0.0)

    def cdf(self, t):
        """``int_{-inf}^t K``, in closed form for every family."""
        t = np.clip(np.asarray(t, dtype=float), -self.support, self.support)
        if self.family == "epanechnikov":
            return 0.5 + 0.75 * (t - t ** 3 / 3.0)
        if self.family == "triweight":
            return 0.5 + 35.0 / 32.0 * (t - t ** 3 + 0.6 * t ** 5 - t ** 7 / 7.0)
        if self.family == "uniform":
            return 0.5 + 0.5 * t
        nodes = self._nodes()
        vals = np.asarray(self.table)
        step = nodes[1] - nodes[0]
        cum = np.concatenate([[0.0], np.cumsum(0.5 * step * (vals[1:] + vals[:-1]))])
        idx = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, len(nodes) - 2)
        dx = t - nodes[idx]
        slope = (vals[idx + 1] - vals[idx]) / step
        return cum[idx] + vals[idx] * dx + 0.5 * slope * dx * dx


EPANECHNIKOV = KernelSpec("epanechnikov")


def kernel_eval(spec: KernelSpec, v):
    """K(v) for a scalar, or the product kernel prod_j K(v_j) for a vector.

    Arrays are treated as vectors along the last axis, so an ``(N, d)``
    array returns ``N`` product-kernel values.
    """
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        return float(spec(arr))
    vals = spec(arr)
    out = vals[..., 0]
    for j in range(1, arr.shape[-1]):
        out = out * vals[..., j]
    return out if out.ndim else float(out)


def kernel_constants(spec: KernelSpec, tol: float = 1e-13) -> tuple[float, float]:
    """Return ``(kappa0, kappa2) = (int K^2, int x^2 K)``."""
    c = spec.C1
    bp = spec.breakpoints()
    k0 = simpson(lambda x: spec(x) ** 2, -c, c, breakpoints=bp, tol=tol)
    k2 = simpson(lambda x: x * x * spec(x), -c, c, breakpoints=bp, tol=tol)
    return k0, k2


def first_moment(spec: KernelSpec, tol: float = 1e-13) -> float:
    c = spec.C1
    return simpson(lambda x: x * spec(x), -c, c, breakpoints=spec.breakpoints(), tol=tol)


def boundary_denominator(spec: KernelSpec, h: float, w):
    """``int_0^1 K((s - w) / h) ds`` (closed form through the kernel CDF)."""
    w = np.asarray(w, dtype=float)
    return h * (spec.cdf((1.0 - w) / h) - spec.cdf(-w / h))


def boundary_kernel_weight(spec: KernelSpec, h: float, v, w, floor: float = 1e-300):
    """Modified weight ``K_h(v, w) = I(v, w in [0,1]) K((v-w)/h) / int_0^1 K((s-w)/h) ds``.

    Integrates to one in ``v`` over ``[0, 1]`` for every ``w`` in ``[0, 1]``.
    Broadcasts over ``v`` and ``w``.
    """
    if h <= 0:
        raise KernelError("bandwidth must be positive")
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    inside = (v >= 0) & (v <= 1) & (w >= 0) & (w <= 1)
    den = boundary_denominator(spec, h, np.clip(w, 0.0, 1.0))
    if np.any(inside & (den < floor)):
        raise KernelError("boundary kernel denominator underflow")
    num = spec((v - w) / h)
    out = np.where(inside, num / np.where(den < floor, 1.0, den), 0.0)
    return out if out.ndim else float(out)


def kappa_moment(spec: KernelSpec, h: float, v: float, j: int, tol: float = 1e-13) -> float:
    """``kappa_j(v) = int_0^1 w^j K_h(v, w) dw`` for ``j`` in {0, 1, 2}."""
    if j not in (0, 1, 2):
        raise KernelError("kappa_moment supports j in {0, 1, 2}")
    if not 0.0 <= v <= 1.0:
        return 0.0
    c = spec.C1 * h
    lo, hi = max(0.0, v - c), min(1.0, v + c)
    bp = [c, 1.0 - c] + [v + h * b for b in spec.breakpoints()]

    def integrand(w):
        return w ** j * boundary_kernel_weight(spec, h, v, w)

    return simpson(integrand, lo, hi, breakpoints=bp, tol=tol)


@dataclass(frozen=True)
class Bandwidth:
    h: float
    rule: str = "manual"

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise KernelError(f"bandwidth must be positive and finite, got {self.h}")
        if self.rule not in ("manual", "rate", "plugin"):
            raise KernelError(f"unknown bandwidth rule {self.rule!r}")

    @classmethod
    def rate(cls, n: int, d: int, p: int, c: float = 1.0) -> "Bandwidth":
        """``h = c * n^(-1/(d+p+4))``, the order that keeps ``n h^(d+p+4)`` bounded."""
        return cls(c * float(n) ** (-1.0 / (d + p + 4)), "rate")


def check_polynomial_rate(h: float, n: int, xi: float = 0.05, C: float = 1.0) -> bool:
    """Warn when a manual bandwidth exceeds ``C n^-xi``; returns whether it passed."""
    ok = h <= C * float(n) ** (-xi)
    if not ok:
        warnings.warn(f"manual bandwidth h={h} exceeds {C}*n^-{xi} for n={n}", stacklevel=2)
    return ok
