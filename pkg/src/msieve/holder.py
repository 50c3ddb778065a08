"""Members of the locally Hoelder log-density classes and the hypercube test
family used for minimax lower bounds.

Pieces:

* a compactly supported bump ``phi`` on (1/4, 3/4) with int phi = 0 and
  int phi^2 = 1, built as the derivative of exp(-1/((x-1/4)(3/4-x)));
* a base density ``omega`` equal to 2 xi on [-3a/4, 3a/4], equal to xi at
  +-a, with Gaussian-type tails; it is built in log space;
* the family f_theta = omega + sum_j (2 theta_j - 1) phi_j for theta in
  {0,1}^D, where phi_j is a rescaled copy of phi living in the j-th of D
  equal cells of [-a/2, a/2];
* a grid verifier for the class conditions, a greedy Varshamov-Gilbert
  code, and the pairwise Hellinger/KL audit of the family.

Smoothness index: r is the largest integer strictly below beta, so the
Hoelder exponent beta - r lies in (0, 1].
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.special import erfc

from . import jets
from .divergence import NumericDensity, rejection_sample
from .errors import ConstructionError, InputError
from .kernel import SQRT_PI, psi
from .mixture import Sample
from .quadrature import integrate_interval


def smoothness_index(beta: float) -> int:
    """Largest integer strictly below beta."""
    if beta <= 0:
        raise InputError("beta must be positive")
    return int(math.ceil(beta)) - 1


# ---------------------------------------------------------------------------
# bump


def _raw_bump_jet(y, K):
    """Jet of exp(-1/((y-1/4)(3/4-y))) at y; zero outside (1/4, 3/4)."""
    y = np.asarray(y, dtype=float)
    out = np.zeros((K + 1,) + y.shape)
    inside = (y > 0.25) & (y < 0.75)
    if np.any(inside):
        Y = jets.variable(y[inside], K)
        a = Y.copy()
        a[0] -= 0.25
        b = -Y
        b[0] += 0.75
        q = jets.mul(a, b)
        with np.errstate(under="ignore"):
            out[:, inside] = jets.exp(-jets.reciprocal(q))
    return out


@dataclass(frozen=True)
class BumpSpec:
    scale: float
    A_phi: float
    max_order: int
    sup_norms: tuple

    def jet(self, y, K):
        """Jet of phi = scale * d/dy bump."""
        return self.scale * jets.derivative(_raw_bump_jet(y, K + 1))

    def __call__(self, y):
        return self.jet(y, 0)[0]

    def derivative(self, y, k):
        return jets.to_derivatives(self.jet(y, k))[k]


def _sup_abs(fun, lo=0.25, hi=0.75, n=20001):
    y = np.linspace(lo, hi, n)
    v = np.abs(fun(y))
    i = int(np.argmax(v))
    a, b = y[max(i - 1, 0)], y[min(i + 1, n - 1)]
    res = optimize.minimize_scalar(lambda t: -abs(float(fun(np.array([t]))[0])),
                                   bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-13})
    return max(float(v[i]), -float(res.fun))


@lru_cache(maxsize=16)
def build_bump(beta_high: float) -> BumpSpec:
    """Bump with A_phi = max over orders 0..floor(beta_high)+1 of sup |phi^(k)|."""
    if beta_high <= 0:
        raise InputError("beta_high must be positive")
    max_order = int(math.floor(beta_high)) + 1
    raw_d = lambda y: jets.derivative(_raw_bump_jet(y, 1))[0]
    norm2 = integrate_interval(lambda y: raw_d(y) ** 2, 0.25, 0.75, tol=1e-15)
    scale = 1.0 / math.sqrt(norm2)
    proto = BumpSpec(scale, 1.0, max_order, ())
    sups = tuple(_sup_abs(lambda y, k=k: proto.derivative(y, k))
                 for k in range(max_order + 1))
    return BumpSpec(scale, max(sups), max_order, sups)


# ---------------------------------------------------------------------------
# base density omega


@dataclass(frozen=True)
class BaseDensity:
    """omega with ln omega = ln 2xi on [0, 3a/4], a smooth blend on
    [3a/4, a] and d - c (|x| - 3a/4)^2 beyond a; symmetric in x."""

    alpha: float
    xi: float
    c: float
    d: float
    M_tilde: float
    target_beta: float = 2.0

    @property
    def x0(self):
        return 0.75 * self.alpha

    def log_jet(self, x, K):
        x = np.asarray(x, dtype=float)
        a = self.alpha
        out = np.zeros((K + 1,) + x.shape)
        u = np.abs(x)
        U = jets.variable(u, K)
        if K >= 1:
            U[1] = np.where(x < 0, -1.0, 1.0)
        lp = math.log(2.0 * self.xi)
        t = (u - self.x0) / (a / 4.0)
        plateau = t <= 0
        tail = t >= 1
        blend = ~plateau & ~tail
        out[0, plateau] = lp
        if np.any(~plateau):
            sel = ~plateau
            W = U[:, sel].copy()
            W[0] -= self.x0
            T = -self.c * jets.mul(W, W)
            T[0] += self.d
            res = T
            if np.any(blend[sel]):
                bsel = blend[sel]
                tj = W[:, bsel] * (4.0 / a)
                one = jets.constant(1.0, K, (int(bsel.sum()),))
                v = jets.reciprocal(one - tj) - jets.reciprocal(tj)
                s = jets.logistic(v)
                diff = T[:, bsel].copy()
                diff[0] -= lp
                blended = jets.mul(s, diff)
                blended[0] += lp
                res = T.copy()
                res[:, bsel] = blended
            out[:, sel] = res
        return out

    def logpdf(self, x):
        return self.log_jet(x, 0)[0]

    def __call__(self, x):
        return np.exp(self.logpdf(x))

    def log_derivatives(self, x, order):
        return jets.to_derivatives(self.log_jet(x, order))

    @property
    def breakpoints(self):
        a = self.alpha
        return (-a, -self.x0, self.x0, a)

    def density(self):
        return NumericDensity(pdf=self, M=self.M_tilde, breakpoints=self.breakpoints,
                              logpdf=self.logpdf, name="omega")


def _omega_mass(alpha, xi, c):
    d = math.log(xi) + c * (alpha / 4.0) ** 2
    probe = BaseDensity(alpha, xi, c, d, 1.0)
    x0 = 0.75 * alpha
    trans = integrate_interval(probe, x0, alpha, tol=1e-15)
    tail = math.exp(d) * SQRT_PI / (2.0 * math.sqrt(c)) * erfc(math.sqrt(c) * alpha / 4.0)
    return 3.0 * xi * alpha + 2.0 * trans + 2.0 * tail, d


def _omega_envelope(om: BaseDensity):
    """sup omega / psi, times 1 + 1e-9."""
    a, c, d, x0 = om.alpha, om.c, om.d, om.x0
    u = np.linspace(0.0, a, 20001)
    inner = float(np.max(om.logpdf(u) + u * u))
    # beyond a: d - c (u - x0)^2 + u^2 is concave for c > 1
    ustar = c * x0 / (c - 1.0)
    ustar = max(ustar, a)
    tail = d - c * (ustar - x0) ** 2 + ustar ** 2
    return SQRT_PI * math.exp(max(inner, tail)) * (1.0 + 1e-9)


@lru_cache(maxsize=32)
def build_omega(alpha: float, xi: float, target_beta: float = 2.0) -> BaseDensity:
    """Base density with omega = 2 xi on [-3a/4, 3a/4], omega(+-a) = xi and
    unit mass; the tail curvature c is found by root finding."""
    if not (alpha > 0 and xi > 0):
        raise InputError("alpha and xi must be positive")
    if 3.0 * xi * alpha > 1.0:
        raise InputError("need 3 xi alpha <= 1")
    c_hi = 16.0 * math.log(2.0) / alpha ** 2
    c_lo = 1.0
    if c_hi <= c_lo:
        raise ConstructionError("alpha too large: the tail curvature bracket is empty")
    f = lambda c: _omega_mass(alpha, xi, c)[0] - 1.0
    f_lo, f_hi = f(c_lo), f(c_hi)
    if f_lo * f_hi > 0:
        raise ConstructionError(
            f"no normalizing curvature in [{c_lo}, {c_hi:.4g}]: masses {f_lo + 1:.6g}, {f_hi + 1:.6g}")
    c = optimize.brentq(f, c_lo, c_hi, xtol=1e-14, rtol=1e-15, maxiter=200)
    d = _omega_mass(alpha, xi, c)[1]
    om = BaseDensity(alpha, xi, c, d, 1.0, target_beta)
    return BaseDensity(alpha, xi, c, d, _omega_envelope(om), target_beta)


# ---------------------------------------------------------------------------
# hypercube family


@dataclass(frozen=True)
class PerturbationFamily:
    beta: float
    D: int
    theta: tuple
    base: BaseDensity
    bump: BumpSpec

    def __post_init__(self):
        if self.D < 1 or self.D % 2:
            raise InputError("D must be a positive even integer")
        th = tuple(int(t) for t in self.theta)
        if len(th) != self.D or any(t not in (0, 1) for t in th):
            raise InputError("theta must be a 0/1 vector of length D")
        object.__setattr__(self, "theta", th)

    @property
    def amplitude(self):
        return self.base.xi * self.D ** (-self.beta) / self.bump.A_phi

    @property
    def M(self):
        a, xi = self.base.alpha, self.base.xi
        return max(self.base.M_tilde, 3.0 * SQRT_PI * xi * math.exp(a * a / 4.0))

    def cell_edges(self):
        a = self.base.alpha
        return -a / 2.0 + a / self.D * np.arange(self.D + 1)

    def perturbation_jet(self, x, K):
        """Jet of sum_j (2 theta_j - 1) phi_j; at most one term is nonzero."""
        x = np.asarray(x, dtype=float)
        a, D = self.base.alpha, self.D
        y = D / a * (x + a / 2.0)
        j = np.clip(np.floor(y), 0, D - 1).astype(int)  # 0-based cell
        inside = (x >= -a / 2.0) & (x <= a / 2.0)
        out = np.zeros((K + 1,) + x.shape)
        if np.any(inside):
            yy = y[inside] - j[inside]
            sign = 2.0 * np.asarray(self.theta)[j[inside]] - 1.0
            cj = self.bump.jet(yy, K)
            out[:, inside] = jets.compose_affine(cj, D / a) * (self.amplitude * sign)
        return out

    def jet(self, x, K):
        return jets.exp(self.base.log_jet(x, K)) + self.perturbation_jet(x, K)

    def log_jet(self, x, K):
        return jets.log(self.jet(x, K))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.base(x) + self.perturbation_jet(x, 0)[0]

    def logpdf(self, x):
        return np.log(self(x))

    def log_derivatives(self, x, order):
        return jets.to_derivatives(self.log_jet(x, order))

    @property
    def breakpoints(self):
        return tuple(sorted(set(self.base.breakpoints) | set(self.cell_edges().tolist())))

    def density(self):
        return NumericDensity(pdf=self, M=self.M, breakpoints=self.breakpoints,
                              logpdf=self.logpdf, name="f_theta")

    def with_theta(self, theta):
        return PerturbationFamily(self.beta, self.D, tuple(theta), self.base, self.bump)


def f_theta_density(fam: PerturbationFamily, x):
    return fam(x)


def draw_from_family(fam: PerturbationFamily, n: int, seed: int, return_rate=False):
    """Rejection sampling with proposal psi and envelope M."""
    rng = np.random.default_rng(seed)
    x, rate = rejection_sample(fam.density(), n, rng, return_rate=True)
    s = Sample(x, seed_provenance=seed)
    return (s, rate) if return_rate else s


# ---------------------------------------------------------------------------
# combinatorics of log-derivatives


def integer_partitions(t):
    """Partitions of t as dicts {part: multiplicity}."""
    def rec(n, largest):
        if n == 0:
            yield {}
            return
        for p in range(min(n, largest), 0, -1):
            for rest in rec(n - p, p):
                d = dict(rest)
                d[p] = d.get(p, 0) + 1
                yield d
    return list(rec(t, t))


def log_derivative_coefficients(t):
    """Coefficients of (ln f)^(t) = sum rho * prod (f^(u))^eta_u / f^k,
    keyed by the multiplicity tuple (eta_1, ..., eta_t)."""
    out = {}
    for part in integer_partitions(t):
        k = sum(part.values())
        denom = 1
        for u, m in part.items():
            denom *= math.factorial(u) ** m * math.factorial(m)
        coef = (-1) ** (k - 1) * math.factorial(k - 1) * math.factorial(t) // denom
        out[tuple(part.get(u, 0) for u in range(1, t + 1))] = coef
    return out


def card_xi(t):
    """Number of exponent tuples in the t-th log-derivative expansion."""
    return len(integer_partitions(t))


def max_log_coefficient(t):
    return max(abs(v) for v in log_derivative_coefficients(t).values())


# ---------------------------------------------------------------------------
# class parameters and their verification


@dataclass(frozen=True)
class ClassParams:
    """Parameter set {gamma, l_plus, L, eps, C, alpha, xi, M}; L is the
    polynomial with coefficients L_coef (increasing powers)."""

    gamma: float
    l_plus: float
    L_coef: tuple
    eps: float
    C: float
    alpha: float
    xi: float
    M: float

    def L(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.L_coef)


def _offsets(gamma, n_geo=48, n_lin=24):
    geo = np.geomspace(gamma * 1e-5, gamma, n_geo)
    lin = np.linspace(gamma / n_lin, gamma, n_lin)
    h = np.unique(np.concatenate([geo, lin]))
    return np.concatenate([-h[::-1], h])


def _default_grid(alpha, D, reach):
    fine = np.linspace(-1.05 * alpha, 1.05 * alpha, max(4001, 200 * D + 1))
    coarse = np.linspace(-reach, reach, 1201)
    return np.unique(np.concatenate([fine, coarse]))


def holder_ratio(f, beta, gamma, x, offsets=None):
    """For each x: max over |h| <= gamma of |g(x+h) - g(x)| / (r! |h|^(beta-r)),
    g = (ln f)^(r).  Returns (ratios, worst offsets)."""
    r = smoothness_index(beta)
    x = np.asarray(x, dtype=float)
    h = _offsets(gamma) if offsets is None else np.asarray(offsets, dtype=float)
    gx = f.log_derivatives(x, r)[r]
    y = (x[:, None] + h[None, :]).ravel()
    gy = f.log_derivatives(y, r)[r].reshape(x.size, h.size)
    q = np.abs(gy - gx[:, None]) / (math.factorial(r) * np.abs(h)[None, :] ** (beta - r))
    idx = np.argmax(q, axis=1)
    return q[np.arange(x.size), idx], h[idx]


def fit_holder_polynomial(f, beta, gamma, x, safety=1.05):
    """Even quadratic l0 + l2 x^2 dominating the Hoelder ratio on the grid."""
    R, _ = holder_ratio(f, beta, gamma, x)
    ax = np.abs(x)
    inner = R[ax <= 1.0]
    outer = ax > 1.0
    l0 = float(inner.max()) if inner.size else 0.0
    l2 = float(np.max(R[outer] / ax[outer] ** 2)) if np.any(outer) else 0.0
    return (safety * l0, 0.0, safety * l2)


def moment_integrals(f, beta, eps, L_fun=None, reach=None, tol=1e-10):
    """int |(ln f)^(j)|^((2 beta + eps)/j) f for j = 1..r, and the L moment."""
    r = smoothness_index(beta)
    lo, hi = (-reach, reach) if reach else f.density().domain(tol)
    bps = [b for b in f.breakpoints if lo < b < hi]
    vals = []
    for j in range(1, r + 1):
        p = (2.0 * beta + eps) / j
        g = lambda x, j=j, p=p: np.abs(f.log_derivatives(x, j)[j]) ** p * f(x)
        vals.append(integrate_interval(g, lo, hi, tol=tol, breakpoints=bps))
    Lmom = None
    if L_fun is not None:
        p = 2.0 + eps / beta
        Lmom = integrate_interval(lambda x: np.abs(L_fun(x)) ** p * f(x), lo, hi,
                                  tol=tol, breakpoints=bps)
    return vals, Lmom


def proposition1_params(base: BaseDensity, beta_low: float, beta_high: float,
                        eps: float = 1.0, n_beta=7) -> ClassParams:
    """A parameter set for which every f_theta (any even D, any beta in
    [beta_low, beta_high]) is in the class.

    L = L_omega + max_beta 2 card(ceil b) B(ceil b) / ceil(b)! (4/alpha)^b,
    where L_omega is fitted for omega on a grid; C adds the bump-induced
    moment term to omega's own moments and covers the L moment.
    """
    a, xi = base.alpha, base.xi
    gamma = a / 4.0
    betas = sorted(set(np.linspace(beta_low, beta_high, n_beta).tolist())
                   | {float(b) for b in range(math.ceil(beta_low), math.floor(beta_high) + 1)
                      if beta_low <= b <= beta_high})
    grid = _default_grid(a, 2, 9.0)
    L_om = np.zeros(3)
    for b in betas:
        L_om = np.maximum(L_om, fit_holder_polynomial(base, b, gamma, grid))
    pert = max(2.0 * card_xi(math.ceil(b)) * max_log_coefficient(math.ceil(b))
               / math.factorial(math.ceil(b)) * (4.0 / a) ** b for b in betas)
    L_coef = (float(L_om[0] + pert), 0.0, float(L_om[2]))
    r_hi = smoothness_index(beta_high)
    C_om = 0.0
    for b in betas:
        vals, _ = moment_integrals(base, b, eps)
        C_om = max([C_om] + vals)
    C_pert = max([0.0] + [
        (card_xi(j) * max_log_coefficient(j) * max(1.0, a ** (-j))) ** ((2.0 * beta_high + eps) / j)
        for j in range(1, r_hi + 2)])
    # L moment: |f_theta - omega| <= xi on [-a/2, a/2] for every theta and D
    Lp = lambda x, p: np.abs(np.polynomial.polynomial.polyval(x, L_coef)) ** p
    bound_f = lambda x: base(x) + xi * (np.abs(x) <= a / 2.0)
    lo, hi = base.density().domain(1e-12)
    C_L = max(integrate_interval(lambda x, p=p: Lp(x, p) * bound_f(x), lo, hi, tol=1e-10,
                                 breakpoints=[-a / 2, a / 2])
              for p in (2.0 + eps / beta_low, 2.0 + eps / beta_high))
    C = max(C_om + C_pert, C_L) * 1.01
    M = max(base.M_tilde, 3.0 * SQRT_PI * xi * math.exp(a * a / 4.0))
    return ClassParams(gamma, abs(math.log(2.0 * xi)), L_coef, eps, C, a, xi, M)


@dataclass
class ClauseResult:
    name: str
    passed: bool
    worst_margin: float
    witness: Optional[tuple] = None
    detail: dict = field(default_factory=dict)


@dataclass
class ClassReport:
    clauses: list

    @property
    def passed(self):
        return all(c.passed for c in self.clauses)

    def __getitem__(self, name):
        return next(c for c in self.clauses if c.name == name)

    def to_dict(self):
        return {"passed": self.passed,
                "clauses": [{"name": c.name, "passed": c.passed,
                             "worst_margin": c.worst_margin,
                             "witness": None if c.witness is None else list(c.witness),
                             **c.detail} for c in self.clauses]}


class LogSmoothDensity:
    """Adapter for verify_class_conditions: pdf plus log-derivatives."""

    def __init__(self, pdf: Callable, log_derivatives: Callable, M=None,
                 support=None, breakpoints=()):
        self._pdf = pdf
        self._ld = log_derivatives
        self.M = M
        self.support = support
        self.breakpoints = tuple(breakpoints)

    def __call__(self, x):
        return self._pdf(np.asarray(x, dtype=float))

    def log_derivatives(self, x, order):
        return self._ld(np.asarray(x, dtype=float), order)

    def density(self):
        return NumericDensity(pdf=self._pdf, M=self.M, support=self.support,
                              breakpoints=self.breakpoints)


def verify_class_conditions(f, beta: float, P: ClassParams, grid=None,
                            reach=9.0, slack=1e-9) -> ClassReport:
    """Grid checks of the smoothness, value-at-zero, moment, tail and
    monotonicity clauses.  ``f`` needs __call__, log_derivatives(x, order)
    and breakpoints; each clause reports its worst margin and a witness."""
    r = smoothness_index(beta)
    D = getattr(f, "D", 2)
    x = _default_grid(P.alpha, D, reach) if grid is None else np.asarray(grid, dtype=float)
    clauses = []

    # smoothness (local Hoelder bound on the r-th log-derivative)
    R, hw = holder_ratio(f, beta, P.gamma, x)
    Lx = P.L(x)
    margin = Lx - R
    i = int(np.argmin(margin))
    clauses.append(ClauseResult("smoothness", bool(margin[i] >= -slack * max(1.0, Lx[i])),
                                float(margin[i]), (float(x[i]), float(x[i] + hw[i])),
                                {"ratio": float(R[i]), "L": float(Lx[i])}))

    # log-derivatives at zero
    d0 = np.abs(f.log_derivatives(np.array([0.0]), r)[:, 0])
    m0 = P.l_plus - d0
    j = int(np.argmin(m0))
    clauses.append(ClauseResult("value_at_zero", bool(m0[j] >= -slack), float(m0[j]), (j,),
                                {"values": d0.tolist()}))

    # moments
    vals, Lmom = moment_integrals(f, beta, P.eps, P.L, reach=reach)
    allm = vals + [Lmom]
    mm = [P.C - v for v in allm]
    j = int(np.argmin(mm))
    clauses.append(ClauseResult("moments", bool(mm[j] >= -slack * max(1.0, P.C)), float(mm[j]),
                                (j + 1 if j < len(vals) else "L",), {"integrals": allm, "C": P.C}))

    # Gaussian tail envelope
    xt = np.linspace(-10.0, 10.0, 10001)
    et = P.M * psi(xt) - f(xt)
    i = int(np.argmin(et / np.maximum(P.M * psi(xt), 1e-300)))
    clauses.append(ClauseResult("tail", bool(np.all(et >= -slack * P.M * psi(xt))),
                                float(et[i]), (float(xt[i]),)))

    # monotonicity and floor
    fx = f(x)
    left = x < -P.alpha
    right = x > P.alpha
    dl = np.diff(fx[left])
    dr = np.diff(fx[right])
    inner = (x >= -P.alpha) & (x <= P.alpha)
    floor_margin = float(np.min(fx[inner]) - P.xi) if np.any(inner) else math.inf
    mono_margin = min(float(dl.min()) if dl.size else 0.0, float(-dr.max()) if dr.size else 0.0)
    pos = bool(np.all(fx > 0))
    ok = pos and mono_margin >= -slack * P.xi and floor_margin >= -slack * P.xi
    wit = float(x[inner][np.argmin(fx[inner])]) if np.any(inner) else None
    clauses.append(ClauseResult("monotonicity", ok, min(mono_margin, floor_margin), (wit,),
                                {"floor_margin": floor_margin, "monotone_margin": mono_margin,
                                 "positive": pos}))
    return ClassReport(clauses)


# ---------------------------------------------------------------------------
# Varshamov-Gilbert codes


def vg_rho(alpha_code):
    a = alpha_code
    return (1 + a) * math.log(1 + a) + (1 - a) * math.log(1 - a)


def vg_subset(D: int, alpha_code: float = 0.5, seed: int = 0, max_attempts=20,
              max_candidates=200000):
    """Greedy code: scan codewords in random order, keep one iff its Hamming
    distance to every kept word exceeds (1 - alpha_code) D / 2; stop once
    ln |Theta| > rho D / 2.  Returns an (|Theta|, D) uint8 array."""
    if D < 2:
        raise InputError("D must be at least 2")
    if not 0 < alpha_code < 1:
        raise InputError("alpha_code must lie in (0, 1)")
    thresh = (1.0 - alpha_code) * D / 2.0
    target = vg_rho(alpha_code) * D / 2.0
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        if D <= 20:
            order = rng.permutation(2 ** D)
            cands = ((order[:, None] >> np.arange(D)) & 1).astype(np.uint8)
        else:
            cands = rng.integers(0, 2, size=(max_candidates, D), dtype=np.uint8)
        kept = []
        for w in cands:
            if kept:
                dist = np.count_nonzero(np.asarray(kept) != w, axis=1)
                if dist.min() <= thresh:
                    continue
            kept.append(w)
            if math.log(len(kept)) > target:
                return np.array(kept)
    raise ConstructionError(f"no code of the target size for D={D} after {max_attempts} attempts")


def choose_D(n: int, beta: float) -> int:
    """Smallest even D with D^(2 beta + 1) >= 7 n."""
    if n < 1:
        raise InputError("n must be at least 1")
    D = 2
    while D ** (2.0 * beta + 1.0) < 7.0 * n:
        D += 2
    return D


def theorem3_bound(xi, alpha, A, beta, n, kappa=0.5):
    """(1 - kappa) xi alpha A^-2 2^(-6-2 beta) (7n)^(-2 beta / (2 beta + 1))."""
    return ((1.0 - kappa) * xi * alpha / A ** 2 * 2.0 ** (-6.0 - 2.0 * beta)
            * (7.0 * n) ** (-2.0 * beta / (2.0 * beta + 1.0)))


@dataclass
class AuditReport:
    pairs: list
    beta: float
    D: int
    A: float
    slack: float
    bound: Optional[float] = None
    n: Optional[int] = None

    @property
    def passed(self):
        return all(p["pass"] for p in self.pairs)

    @property
    def strictly_passed(self):
        return all(p["strict_pass"] for p in self.pairs)

    def to_dict(self):
        return {"beta": self.beta, "D": self.D, "A": self.A, "slack": self.slack,
                "n": self.n, "lower_bound_value": self.bound, "passed": self.passed,
                "strictly_passed": self.strictly_passed, "pairs": self.pairs}


def _excess(d):
    """e^d - 1 - d, by series for small |d|."""
    out = np.expm1(d) - d
    small = np.abs(d) < 1e-2
    ds = d[small]
    out[small] = ds * ds * (0.5 + ds * (1 / 6 + ds * (1 / 24 + ds * (1 / 120 + ds / 720))))
    return out


def pair_divergences(fa: PerturbationFamily, fb: PerturbationFamily, tol=1e-12):
    """(d_H^2, KL(fa, fb), KL(fb, fa)) for two members of one family.

    The members differ only on [-a/2, a/2] and their difference is the
    difference of the perturbations, which is evaluated directly instead of
    subtracting two nearly equal densities; both KL integrands are written
    in terms of the relative difference r, so no term cancels.  The
    perturbations integrate to zero, so KL = int f (r - log1p r) exactly.
    """
    if fa.base != fb.base or fa.D != fb.D:
        raise InputError("members must share the base density and D")
    a = fa.base.alpha
    edges = fa.cell_edges()
    base = fa.base

    def parts(x):
        w = base(x)
        pa = fa.perturbation_jet(x, 0)[0]
        pb = fb.perturbation_jet(x, 0)[0]
        return w + pa, w + pb, pb - pa

    def h_int(x):
        f, g, diff = parts(x)
        return 0.5 * diff * diff / (np.sqrt(f) + np.sqrt(g)) ** 2

    def kl_int(x, reverse=False):
        f, g, diff = parts(x)
        if reverse:
            f, g, diff = g, f, -diff
        r = diff / f  # g / f - 1
        return f * _excess(np.log1p(r))

    lo, hi = -a / 2.0, a / 2.0
    bps = tuple(edges[1:-1])
    h2 = integrate_interval(h_int, lo, hi, tol=tol, breakpoints=bps)
    kl_ab = integrate_interval(kl_int, lo, hi, tol=tol, breakpoints=bps)
    kl_ba = integrate_interval(lambda x: kl_int(x, True), lo, hi, tol=tol, breakpoints=bps)
    return h2, kl_ab, kl_ba


def audit_separation(family: PerturbationFamily, Theta, slack=1e-6, rel_tol=1e-9,
                     n=None, kappa=0.5) -> AuditReport:
    """Pairwise Hellinger and KL checks of the family over the code Theta.

    ``pass`` applies the absolute slack; ``strict_pass`` applies the same
    inequalities with a relative slack of 1e-6 and no absolute allowance,
    which matters because the measured values are far below 1e-6.
    KL is taken as the larger of the two directions.
    """
    beta, D = family.beta, family.D
    A = family.bump.A_phi
    xi, a = family.base.xi, family.base.alpha
    upper = xi * a / (8.0 * A * A) * D ** (-2.0 * beta)
    kl_up = 5.0 * xi * a / (4.0 * A * A) * D ** (-2.0 * beta)
    # the divergences are of order upper / D, far below any fixed absolute tolerance
    tol = rel_tol * upper / D
    keys = [tuple(t) for t in np.asarray(Theta).tolist()]
    members = {th: family.with_theta(th) for th in keys}
    rows = []
    for i, j in itertools.combinations(range(len(keys)), 2):
        ta, tb = keys[i], keys[j]
        ham = sum(u != v for u, v in zip(ta, tb))
        h2, kl_ab, kl_ba = pair_divergences(members[ta], members[tb], tol)
        kl = max(kl_ab, kl_ba)
        lower = xi * a * (2.0 * A) ** (-2) * ham * D ** (-(2.0 * beta + 1.0))
        ok = (lower - slack <= h2 <= upper + slack) and kl <= kl_up + slack
        rel = 1e-6
        strict = (lower * (1 - rel) <= h2 <= upper * (1 + rel)) and kl <= kl_up * (1 + rel)
        rows.append({"theta_a": "".join(map(str, ta)), "theta_b": "".join(map(str, tb)),
                     "hamming": ham, "h2": h2, "h2_lower": lower, "h2_upper": upper,
                     "kl": kl, "kl_upper": kl_up, "kl_over_h2": kl / h2 if h2 > 0 else None,
                     "pass": bool(ok), "strict_pass": bool(strict)})
    bound = theorem3_bound(xi, a, A, beta, n, kappa) if n is not None else None
    return AuditReport(rows, beta, D, A, slack, bound, n)
