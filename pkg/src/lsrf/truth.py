"""Regression truths given as expression strings, with exact derivatives.

Variables are ``u1..ud`` and ``x1..xp``; any sympy function (``sin``,
``exp``, ``sqrt``, ``pi``...) may appear.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp


def _symbols(d, p):
    us = [sp.Symbol(f"u{i + 1}", real=True) for i in range(d)]
    xs = [sp.Symbol(f"x{i + 1}", real=True) for i in range(p)]
    return us, xs


def _vectorise(fn):
    def call(*args):
        out = fn(*args)
        shape = np.broadcast(*args).shape if args else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy() if shape else float(out)
    return call


@dataclass
class ExprFn:
    """``expr(u, x)`` with gradient and Hessian diagonal over ``(u, x)``."""

    expr: str
    d: int
    p: int
    _fn: object = field(init=False, repr=False)
    _grad: list = field(init=False, repr=False)
    _hess: list = field(init=False, repr=False)

    def __post_init__(self):
        us, xs = _symbols(self.d, self.p)
        names = {str(s): s for s in us + xs}
        e = sp.sympify(self.expr, locals=names)
        extra = e.free_symbols - set(us + xs)
        if extra:
            raise ValueError(f"unknown symbols {sorted(map(str, extra))} in {self.expr!r}")
        vars_ = us + xs
        self.sym = e
        self._fn = _vectorise(sp.lambdify(vars_, e, "numpy"))
        self._grad = [_vectorise(sp.lambdify(vars_, sp.diff(e, v), "numpy")) for v in vars_]
        self._hess = [_vectorise(sp.lambdify(vars_, sp.diff(e, v, 2), "numpy")) for v in vars_]

    def _args(self, u, x):
        u = np.asarray(u, dtype=float)
        x = np.asarray(x, dtype=float) if x is not None else np.zeros(u.shape[:-1] + (0,))
        return [u[..., i] for i in range(self.d)] + [x[..., k] for k in range(self.p)]

    def __call__(self, u, x=None):
        return self._fn(*self._args(u, x))

    def grad(self, u, x=None):
        a = self._args(u, x)
        return np.stack([np.asarray(g(*a), dtype=float) for g in self._grad], axis=-1)

    def hess_diag(self, u, x=None):
        a = self._args(u, x)
        return np.stack([np.asarray(g(*a), dtype=float) for g in self._hess], axis=-1)


class SymbolicModel:
    """Regression model ``Y = m(u, X) + sigma(u, X) e`` with covariate density ``f`` and design density ``f_S``.

    Exposes the callables expected by
    :func:`lsrf.estimators.theoretical_bias_variance`.
    """

    def __init__(self, d: int, p: int, m: str, sigma: str = "1", f: str = "1", f_S: str = "1"):
        self.d, self.p = d, p
        self.exprs = {"m": m, "sigma": sigma, "f": f, "f_S": f_S}
        self._m = ExprFn(m, d, p)
        self._sigma = ExprFn(sigma, d, p)
        self._f = ExprFn(f, d, p)
        self._fS = ExprFn(f_S, d, 0)

    def m(self, u, x):
        return self._m(u, x)

    def sigma(self, u, x):
        return self._sigma(u, x)

    def f(self, u, x):
        return self._f(u, x)

    def f_S(self, u):
        return self._fS(u)

    def grad_m(self, u, x):
        return self._m.grad(u, x)

    def hess_m(self, u, x):
        return self._m.hess_diag(u, x)

    def grad_f(self, u, x):
        return self._f.grad(u, x)

    def grad_f_S(self, u):
        return self._fS.grad(u)
