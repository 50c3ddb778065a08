import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from msieve import jets

X = sp.Symbol("x")
K = 5


def sympy_jet(expr, x0):
    """Oracle: Taylor coefficients f^(j)(x0) / j! from symbolic differentiation."""
    out = []
    d = expr
    for j in range(K + 1):
        out.append(float(d.subs(X, x0)) / math.factorial(j))
        d = sp.diff(d, X)
    return np.array(out)


def close(a, b):
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


@given(st.floats(0.2, 2.0))
def test_product_quotient_exp_log(x0):
    x = jets.variable(np.array([x0]), K)
    one = jets.constant(1.0, K, (1,))
    sq = jets.mul(x, x)
    assert close(jets.mul(sq, x)[:, 0], sympy_jet(X ** 3, x0))
    assert close(jets.div(one, one + sq)[:, 0], sympy_jet(1 / (1 + X ** 2), x0))
    assert close(jets.exp(-sq)[:, 0], sympy_jet(sp.exp(-X ** 2), x0))
    assert close(jets.log(one + sq)[:, 0], sympy_jet(sp.log(1 + X ** 2), x0))


@given(st.floats(-30, 30))
def test_logistic_is_stable_and_exact(v0):
    v = jets.variable(np.array([v0]), K)
    got = jets.logistic(v)[:, 0]
    assert np.all(np.isfinite(got))
    if abs(v0) < 20:
        assert close(got, sympy_jet(1 / (1 + sp.exp(-X)), v0))


def test_derivative_and_affine_composition():
    x0 = 0.7
    e = jets.exp(jets.variable(np.array([x0]), K))
    d = jets.derivative(e)
    assert close(d[:, 0], sympy_jet(sp.exp(X), x0)[:K])
    scaled = jets.compose_affine(e, 3.0)
    # jet of exp(y) with y = 3 x carries factors 3^j
    assert close(jets.to_derivatives(scaled)[:, 0], math.exp(x0) * 3.0 ** np.arange(K + 1))
