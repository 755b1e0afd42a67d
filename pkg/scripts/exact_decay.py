"""Exact truncation error of the Gaussian exponential-kernel field.

For a centred Gaussian driver the residual ``X(s) - X(s:m)`` is normal with
variance ``sigma0 int g(|v|)^2 (1 - iota(|v|:m))^2 dv``, so its root mean
square is available by one-dimensional quadrature. Prints the error, the
local log-slopes and the least-squares slope over the chosen radii, against
the asymptotic rate ``-c/2``.

Usage::

    python scripts/exact_decay.py --rate 1.0 --m 2 3 4 5 6 7 8 9 10
"""
from __future__ import annotations

import argparse
import math

import numpy as np
from scipy import integrate, special

from lsrf.levy import iota


def rms_residual(rate: float, m: float, d: int = 2, sigma0: float = 1.0) -> float:
    area = 2 * math.pi ** (d / 2) / special.gamma(d / 2)

    def integrand(r):
        return math.exp(-2 * rate * r) * (1 - iota(r, m)) ** 2 * r ** (d - 1)

    val = sum(integrate.quad(integrand, a, b, epsabs=0, epsrel=1e-12, limit=200)[0]
              for a, b in ((m / 2, m), (m, math.inf)))
    return math.sqrt(sigma0 * area * val)


def main(argv=None):
    ap = argparse.ArgumentParser(description="exact truncation errors")
    ap.add_argument("--rate", type=float, default=1.0)
    ap.add_argument("--d", type=int, default=2)
    ap.add_argument("--m", type=float, nargs="+", default=[2, 3, 4, 5, 6, 7, 8, 9, 10])
    args = ap.parse_args(argv)
    m = np.array(args.m)
    gam = np.array([rms_residual(args.rate, x, args.d) for x in m])
    local = np.diff(np.log(gam)) / np.diff(m)
    slope = np.polyfit(m, np.log(gam), 1)[0]
    for x, g in zip(m, gam):
        print(f"m = {x:5.2f}  gamma = {g:.6e}")
    print("local slopes:", " ".join(f"{s:.4f}" for s in local))
    print(f"least-squares slope {slope:.4f}; asymptotic rate {-args.rate / 2:.4f}")


if __name__ == "__main__":
    main()
