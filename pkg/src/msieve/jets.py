"""Truncated Taylor arithmetic ("jets") on arrays of evaluation points.

A jet of order K at points x is an array c of shape (K + 1, *x.shape) with
c[j] = f^(j)(x) / j!.  Products, quotients, exp and log follow the usual
recurrences, which gives exact derivatives of closed-form expressions without
finite differences.
"""

import math

import numpy as np


def variable(x, K):
    """Jet of the identity map at x."""
    x = np.asarray(x, dtype=float)
    c = np.zeros((K + 1,) + x.shape)
    c[0] = x
    if K >= 1:
        c[1] = 1.0
    return c


def constant(v, K, shape=()):
    c = np.zeros((K + 1,) + tuple(shape))
    c[0] = v
    return c


def mul(a, b):
    K = a.shape[0] - 1
    out = np.zeros_like(a)
    for k in range(K + 1):
        out[k] = np.einsum("i...,i...->...", a[:k + 1], b[k::-1])
    return out


def reciprocal(a):
    K = a.shape[0] - 1
    b = np.zeros_like(a)
    b[0] = 1.0 / a[0]
    for k in range(1, K + 1):
        b[k] = -np.einsum("i...,i...->...", a[1:k + 1], b[k - 1::-1]) * b[0]
    return b


def div(a, b):
    return mul(a, reciprocal(b))


def exp(a):
    K = a.shape[0] - 1
    e = np.zeros_like(a)
    e[0] = np.exp(a[0])
    for k in range(1, K + 1):
        i = np.arange(1, k + 1).reshape((-1,) + (1,) * (a.ndim - 1))
        e[k] = np.sum(i * a[1:k + 1] * e[k - 1::-1], axis=0) / k
    return e


def log(a):
    K = a.shape[0] - 1
    out = np.zeros_like(a)
    with np.errstate(divide="ignore"):
        out[0] = np.log(a[0])
    inv = 1.0 / a[0]
    for k in range(1, K + 1):
        acc = a[k].copy()
        for i in range(1, k):
            acc -= i * out[i] * a[k - i] / k
        out[k] = acc * inv
    return out


def logistic(v):
    """Jet of 1 / (1 + exp(-v)) that never overflows."""
    pos = v[0] > 0
    sign = np.where(pos, -1.0, 1.0)
    w = v * sign  # w = -|v|, so exp(w) <= 1
    one = np.zeros_like(v)
    one[0] = 1.0
    g = reciprocal(one + exp(w))  # 1/(1+e^{-|v|})
    # for v > 0 the logistic is g; for v <= 0 it is 1 - g
    return np.where(pos, g, one - g)


def derivative(a):
    """Jet of f' (one order lower)."""
    K = a.shape[0] - 1
    j = np.arange(1, K + 1).reshape((-1,) + (1,) * (a.ndim - 1))
    return a[1:] * j


def compose_affine(c, scale):
    """Jet of f(y(x)) with y affine of slope ``scale``, given the jet of f at y."""
    K = c.shape[0] - 1
    powers = scale ** np.arange(K + 1)
    return c * powers.reshape((-1,) + (1,) * (c.ndim - 1))


def to_derivatives(c):
    K = c.shape[0] - 1
    f = np.array([math.factorial(j) for j in range(K + 1)], dtype=float)
    return c * f.reshape((-1,) + (1,) * (c.ndim - 1))
