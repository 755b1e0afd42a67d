import numpy as np
import pytest

from lsrf.estimators import fd_gradient, fd_hessian_diag
from lsrf.truth import ExprFn, SymbolicModel


def test_derivatives_match_finite_differences(gen):
    f = ExprFn("(1+u1)*sin(x1) + u2**2*exp(-x2)", 2, 2)
    for _ in range(5):
        z = gen.uniform(0.1, 0.9, 4)
        fun = lambda zz: float(f(zz[:2], zz[2:]))
        assert np.allclose(f.grad(z[:2], z[2:]), fd_gradient(fun, z), atol=1e-8)
        assert np.allclose(f.hess_diag(z[:2], z[2:]), fd_hessian_diag(fun, z), atol=1e-5)


def test_vectorised_and_constant_expressions():
    f = ExprFn("2", 2, 1)
    out = f(np.zeros((5, 2)), np.zeros((5, 1)))
    assert out.shape == (5,) and np.all(out == 2.0)


def test_unknown_symbol_rejected():
    with pytest.raises(ValueError):
        ExprFn("u3 + x1", 2, 1)


def test_model_callables():
    m = SymbolicModel(2, 1, "u1*x1", sigma="2", f="1", f_S="1")
    assert m.m(np.array([0.5, 0.1]), np.array([2.0])) == 1.0
    assert m.sigma(np.array([0.5, 0.1]), np.array([2.0])) == 2.0
    assert np.allclose(m.grad_m(np.array([0.5, 0.1]), np.array([2.0])), [2.0, 0.0, 0.5])
