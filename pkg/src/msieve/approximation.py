"""Constructive approximation of a smooth density by finite location
mixtures of psi_sigma.

The chain is: smooth f with the kernel (K_sigma^i f = f * psi_{sigma sqrt i}),
combine the iterates into f_k, clip f_k from below at f/2 and normalize
(h_k), restrict h_k to a window [-mu_sigma, mu_sigma], replace it by a
discrete mixing measure with the same local moments, and add a small
safeguard component at 0.  ``kl_decay_curve`` measures KL(f, result) along
a sigma grid.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, stats
from scipy.linalg import eigh_tridiagonal
from scipy.special import logsumexp

from .divergence import NumericDensity, kl_div, loglog_slope
from .errors import (ConstructionError, DiscretizationError, InputError,
                     MsieveError, NumericError)
from .kernel import LOG_SQRT_PI, SQRT_PI, psi
from .mixture import Mixture, Sample
from .quadrature import integrate_interval
from .selection import approx_order

# psi(9) is about 4e-36, far below anything the checks resolve
REACH = 9.0
# below this the literal sup-norm target 2 eps / sigma is not resolvable in
# double precision; verification uses max(2 eps / sigma, VERIFY_FLOOR)
VERIFY_FLOOR = 1e-11


# ---------------------------------------------------------------------------
# Gauss sums and node rules


def _gauss_sum(x, centers, coefs, s, reach=REACH):
    """sum_j coefs_j psi_s(x - centers_j) with centers sorted ascending.

    Only centers within reach * s of a chunk of points are touched.
    """
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    order = np.argsort(flat, kind="stable")
    xs = flat[order]
    out = np.empty_like(xs)
    r = reach * s
    for start in range(0, xs.size, 512):
        chunk = xs[start:start + 512]
        lo = np.searchsorted(centers, chunk[0] - r, side="left")
        hi = np.searchsorted(centers, chunk[-1] + r, side="right")
        if hi <= lo:
            out[start:start + 512] = 0.0
            continue
        z = (chunk[:, None] - centers[lo:hi]) / s
        out[start:start + 512] = np.exp(-z * z) @ coefs[lo:hi]
    res = np.empty_like(out)
    res[order] = out / (s * SQRT_PI)
    return res.reshape(x.shape)


def _log_gauss_sum(x, centers, log_coefs, s, reach=40.0):
    """ln sum_j exp(log_coefs_j) psi_s(x - centers_j), centers sorted.

    The band is wide because far-out points are dominated by components
    several s away when the coefficients decay fast; the nearest centers
    are always included so the result stays finite.
    """
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    order = np.argsort(flat, kind="stable")
    xs = flat[order]
    out = np.empty_like(xs)
    r = reach * s
    n = centers.size
    for start in range(0, xs.size, 256):
        chunk = xs[start:start + 256]
        lo = max(np.searchsorted(centers, chunk[0] - r, side="left") - 1, 0)
        hi = min(np.searchsorted(centers, chunk[-1] + r, side="right") + 1, n)
        z = (chunk[:, None] - centers[lo:hi]) / s
        out[start:start + 256] = logsumexp(log_coefs[lo:hi] - z * z, axis=1)
    res = np.empty_like(out)
    res[order] = out - LOG_SQRT_PI - math.log(s)
    return res.reshape(x.shape)


def _gl(order):
    t, w = np.polynomial.legendre.leggauss(order)
    return t, w


def panel_rule(lo, hi, width, breakpoints=(), order=16):
    """Composite Gauss-Legendre rule on [lo, hi] with panels no wider than
    ``width`` and panel edges at every breakpoint inside the interval."""
    if not hi > lo:
        raise InputError("empty integration interval")
    cuts = sorted({lo, hi, *(b for b in breakpoints if lo < b < hi)})
    t, w = _gl(order)
    nodes, weights = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        k = max(1, int(math.ceil((b - a) / width)))
        edges = np.linspace(a, b, k + 1)
        c = 0.5 * (edges[:-1] + edges[1:])
        h = 0.5 * np.diff(edges)
        nodes.append((c[:, None] + h[:, None] * t).ravel())
        weights.append((h[:, None] * w).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


# ---------------------------------------------------------------------------
# convolution operators and the iterates f_k


@dataclass(frozen=True)
class ConvolutionOperator:
    """K_sigma applied ``order`` times, i.e. convolution with psi_{sigma sqrt(order)}."""

    sigma: float
    order: int = 1

    def __post_init__(self):
        if not self.sigma > 0:
            raise InputError("sigma must be positive")
        if self.order < 0 or int(self.order) != self.order:
            raise InputError("order must be a nonnegative integer")

    @property
    def width(self):
        return self.sigma * math.sqrt(self.order)

    def __call__(self, f: NumericDensity, x):
        return convolve(f, self.sigma, self.order, x)


class KernelSmoother:
    """Tabulates f once per width and evaluates K_sigma^i f by Gauss sums."""

    def __init__(self, f: NumericDensity, sigma: float, tol=1e-15, order=16):
        if not sigma > 0:
            raise InputError("sigma must be positive")
        self.f = f
        self.sigma = float(sigma)
        self.tol = tol
        self.order = order
        self.lo, self.hi = f.domain(tol)
        self._tables = {}

    def _table(self, s):
        if s not in self._tables:
            width = min(0.5 * s, 0.25)
            nodes, w = panel_rule(self.lo, self.hi, width, self.f.breakpoints, self.order)
            self._tables[s] = (nodes, w * np.maximum(self.f(nodes), 0.0))
        return self._tables[s]

    def power(self, i, x):
        """(K_sigma^i f)(x)."""
        if i < 0:
            raise InputError("order must be nonnegative")
        if i == 0:
            return np.asarray(self.f(x), dtype=float)
        s = self.sigma * math.sqrt(i)
        nodes, coefs = self._table(s)
        return _gauss_sum(x, nodes, coefs, s)

    def f_k(self, k, x):
        """sum_{i=0}^k C(k+1, i+1) (-1)^i K^i f(x)."""
        if k < 0:
            raise InputError("k must be nonnegative")
        out = np.zeros(np.shape(x))
        for i in range(k + 1):
            out = out + math.comb(k + 1, i + 1) * (-1) ** i * self.power(i, x)
        return out


def convolve(f: NumericDensity, sigma, order, x):
    """(K_sigma^order f)(x); order 0 returns f(x)."""
    ConvolutionOperator(sigma, order)
    return KernelSmoother(f, sigma).power(order, x)


def f_k_eval(f: NumericDensity, sigma, k, x):
    """Binomial form of the k-th iterate."""
    return KernelSmoother(f, sigma).f_k(k, x)


def f_k_recursive(f: NumericDensity, sigma, k, x, order=16):
    """The iterate from f_{j+1} = f - (K_sigma f_j - f_j), carried on a node
    rule and applied with K_sigma only.  Used to check ``f_k_eval``."""
    if k < 0:
        raise InputError("k must be nonnegative")
    x = np.asarray(x, dtype=float)
    if k == 0:
        return np.asarray(f(x), dtype=float)
    lo, hi = f.domain(1e-15)
    pad = REACH * sigma * k
    nodes, w = panel_rule(lo - pad, hi + pad, min(0.5 * sigma, 0.25),
                          f.breakpoints, order)
    f_nodes = np.maximum(f(nodes), 0.0)
    fx = np.asarray(f(x), dtype=float)
    at_nodes, at_x = f_nodes, fx
    for _ in range(k):
        kx = _gauss_sum(x, nodes, w * at_nodes, sigma)
        kn = _gauss_sum(nodes, nodes, w * at_nodes, sigma)
        at_x = fx + at_x - kx
        at_nodes = f_nodes + at_nodes - kn
    return at_x


# ---------------------------------------------------------------------------
# budget


@dataclass(frozen=True)
class ApproxBudget:
    """Tuning of the construction at one sigma: k from beta, eps = sigma^(6 beta + 5),
    H1 = 4 (beta + 1), and the window half-width mu_sigma."""

    beta: float
    k: int
    sigma: float
    epsilon: float
    mu_sigma: float
    H1: float
    M: float

    def __post_init__(self):
        if self.k != approx_order(self.beta):
            raise InputError("k must satisfy beta in (2k, 2k + 2]")
        if not (0 < self.epsilon < 1 / SQRT_PI):
            raise InputError("epsilon must lie in (0, pi^-1/2)")
        if not self.mu_sigma >= self.sigma:
            raise InputError("mu_sigma must be at least sigma")

    @classmethod
    def build(cls, beta: float, sigma: float, M: float) -> "ApproxBudget":
        if not (beta > 0 and sigma > 0 and M > 0):
            raise InputError("beta, sigma and M must be positive")
        k = approx_order(beta)
        log_eps = (6.0 * beta + 5.0) * math.log(sigma)
        if log_eps >= -LOG_SQRT_PI:
            raise InputError(f"sigma = {sigma} is too large: sigma^(6 beta + 5) >= pi^-1/2")
        eps = math.exp(log_eps)
        arg = (math.log(4.0 * M / SQRT_PI) + k * math.log(4.0 / math.sqrt(3.0))
               + math.log(sigma) - log_eps)
        if arg <= 0:
            raise InputError("window argument is not above 1")
        mu = 2.0 * math.sqrt(arg)
        return cls(beta, k, sigma, eps, mu, 4.0 * (beta + 1.0), M)

    @property
    def verify_epsilon(self):
        """eps used as the sup-norm target: the literal value, floored where it
        falls below double precision."""
        return max(self.epsilon, 0.5 * VERIFY_FLOOR * self.sigma)


def support_count_bound(a, sigma, epsilon):
    """54 a sigma^-1 e^2 (1 v ln(1 / (sqrt(pi) eps)))."""
    return 54.0 * a / sigma * math.e ** 2 * max(1.0, math.log(1.0 / (SQRT_PI * epsilon)))


def bound_support_points(sigma, beta, M):
    """Component bound of the finite mixture, safeguard included."""
    b = ApproxBudget.build(beta, sigma, M)
    return support_count_bound(b.mu_sigma, sigma, b.epsilon) + 1.0


# ---------------------------------------------------------------------------
# h_k


@dataclass(frozen=True)
class HkDensity(NumericDensity):
    """h_k with the mass of g_k before normalization."""

    g_mass: float = 1.0
    k: int = 0


def _clip_points(f, sm, k, lo, hi, sigma):
    """Where f_k crosses f / 2, i.e. the kinks of g_k."""
    x = np.linspace(lo, hi, int(math.ceil((hi - lo) / (sigma / 8.0))) + 1)

    def gap(t):
        return sm.f_k(k, np.atleast_1d(t)) - 0.5 * np.maximum(f(np.atleast_1d(t)), 0.0)

    d = gap(x)
    out = []
    for i in np.flatnonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0):
        out.append(optimize.brentq(lambda t: float(gap(t)[0]), x[i], x[i + 1], xtol=1e-14))
    return out


def build_h_k(f: NumericDensity, budget: ApproxBudget, k: Optional[int] = None,
              tol=1e-12) -> HkDensity:
    """g_k = f_k on {f_k > f/2} and f/2 elsewhere; h_k = g_k / int g_k."""
    k = budget.k if k is None else int(k)
    if k == 0:
        return HkDensity(pdf=f.pdf, M=f.M, support=f.support, breakpoints=f.breakpoints,
                         logpdf=f.logpdf, sampler=f.sampler, name="h_0",
                         g_mass=1.0, k=0)
    sm = KernelSmoother(f, budget.sigma)

    def g(x):
        fx = np.maximum(np.asarray(f(x), dtype=float), 0.0)
        fk = sm.f_k(k, x)
        return np.where(fk > 0.5 * fx, fk, 0.5 * fx)

    pad = REACH * budget.sigma * math.sqrt(k)
    lo, hi = sm.lo - pad, sm.hi + pad
    bps = tuple(sorted({*(b for b in f.breakpoints if lo < b < hi),
                        *_clip_points(f, sm, k, lo, hi, budget.sigma)}))
    mass = integrate_interval(g, lo, hi, tol=tol, breakpoints=bps)
    if not mass > 0:
        raise ConstructionError(f"int g_k = {mass!r} is not positive")
    return HkDensity(pdf=lambda x: g(x) / mass, support=(lo, hi), breakpoints=bps,
                     name=f"h_{k}", g_mass=mass, k=k)


# ---------------------------------------------------------------------------
# discretization of mixing measures


@dataclass(frozen=True)
class DiscreteMixingMeasure:
    support_points: np.ndarray
    weights: np.ndarray
    a: float
    sigma: float
    epsilon: float
    sup_norm_achieved: float = 0.0
    sup_bound: float = math.inf
    count_bound: float = math.inf

    def __post_init__(self):
        p = np.asarray(self.support_points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if p.shape != w.shape or p.ndim != 1 or p.size == 0:
            raise InputError("points and weights must be matching nonempty vectors")
        if np.any(w < 0) or abs(math.fsum(w) - 1.0) > 1e-12:
            raise InputError("weights must be nonnegative and sum to 1")
        if np.any(np.abs(p) > self.a * (1 + 1e-12)):
            raise InputError("support points must lie in [-a, a]")
        object.__setattr__(self, "support_points", p)
        object.__setattr__(self, "weights", w)

    @property
    def size(self):
        return int(self.support_points.size)

    def convolved(self, x):
        """(F' * psi_sigma)(x)."""
        order = np.argsort(self.support_points, kind="stable")
        return _gauss_sum(x, self.support_points[order], self.weights[order], self.sigma)

    def to_dict(self):
        return {"points": [float(v) for v in self.support_points],
                "weights": [float(v) for v in self.weights],
                "sup_norm_achieved": float(self.sup_norm_achieved),
                "bound": float(self.sup_bound),
                "count_bound": float(self.count_bound)}


def gauss_rule(t, m, n):
    """At most n-point Gauss rule of the discrete measure sum_j m_j delta_{t_j}.

    Lanczos with full reorthogonalization builds the Jacobi matrix of the
    measure; its eigenvalues are the points and the squared first
    eigenvector components times the mass are the weights.  The rule
    matches the moments of orders 0 .. 2n - 1.  Fewer points come back when
    the measure has fewer than n atoms.
    """
    t = np.asarray(t, dtype=float)
    m = np.asarray(m, dtype=float)
    keep = m > 0
    if not np.any(keep):
        raise InputError("measure has no mass")
    alpha, beta, total = _jacobi(t[keep], m[keep], n)
    return _rule_from_jacobi(alpha, beta, total, alpha.size)


def _jacobi(t, m, n):
    """Lanczos coefficients up to size n (see gauss_rule)."""
    total = math.fsum(m)
    n = min(n, t.size)
    Q = np.zeros((n, t.size))
    Q[0] = np.sqrt(m / total)
    alpha, beta = [], []
    scale = 1.0 + float(np.max(np.abs(t)))
    for j in range(n):
        v = t * Q[j]
        a = float(Q[j] @ v)
        v -= a * Q[j]
        if j > 0:
            v -= beta[-1] * Q[j - 1]
        for _ in range(2):
            v -= Q[:j + 1].T @ (Q[:j + 1] @ v)
        alpha.append(a)
        b = float(np.linalg.norm(v))
        if j == n - 1 or b <= 1e-12 * scale:
            break
        beta.append(b)
        Q[j + 1] = v / b
    return np.array(alpha), np.array(beta), total


def _rule_from_jacobi(alpha, beta, total, n):
    n = min(n, alpha.size)
    if n == 1:
        return np.array([alpha[0]]), np.array([total])
    vals, vecs = eigh_tridiagonal(alpha[:n], beta[:n - 1])
    return vals, total * vecs[0] ** 2


@dataclass
class _Cell:
    lo: float
    hi: float
    ref_t: np.ndarray      # reference atoms for moment matching (cell units)
    ref_m: np.ndarray
    true_t: np.ndarray     # finer atoms used as the truth in checks
    true_m: np.ndarray
    sigma: float = 1.0

    @property
    def width(self):
        return (self.hi - self.lo) / self.sigma


def _as_measure(F):
    """('density', callable) or ('atoms', points, masses)."""
    if isinstance(F, Sample):
        v = F.values
        return "atoms", np.asarray(v, dtype=float), np.full(v.size, 1.0 / v.size)
    if isinstance(F, tuple) and len(F) == 2:
        p = np.atleast_1d(np.asarray(F[0], dtype=float))
        w = np.atleast_1d(np.asarray(F[1], dtype=float))
        if p.shape != w.shape or np.any(w < 0) or not w.sum() > 0:
            raise InputError("atoms need matching points and nonnegative weights")
        return "atoms", p, w / math.fsum(w)
    if isinstance(F, np.ndarray):
        p = np.atleast_1d(F.astype(float))
        return "atoms", p, np.full(p.size, 1.0 / p.size)
    if callable(F):
        return "density", F
    raise InputError("F must be a density callable, a Sample, an array or (points, weights)")


_REF_T, _REF_W = _gl(64)
_TRUE_T, _TRUE_W = _gl(24)


def _density_cell(F, lo, hi, sigma, breakpoints=()):
    """Cell with a Gauss-Legendre reference rule and a finer truth rule, both
    split at the breakpoints of F inside the cell."""
    cuts = [lo, *(b for b in breakpoints if lo < b < hi), hi]
    z_ref, m_ref, z_true, m_true = [], [], [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        h = 0.5 * (b - a)
        z = 0.5 * (a + b) + h * _REF_T
        z_ref.append(z)
        m_ref.append(h * _REF_W)
        edges = np.linspace(a, b, 5)
        cc = 0.5 * (edges[:-1] + edges[1:])
        hh = 0.5 * np.diff(edges)
        z_true.append((cc[:, None] + hh[:, None] * _TRUE_T).ravel())
        m_true.append((hh[:, None] * _TRUE_W).ravel())
    z = np.concatenate(z_ref)
    zt = np.concatenate(z_true)
    ref_m = np.concatenate(m_ref) * np.maximum(np.asarray(F(z), dtype=float), 0.0)
    true_m = np.concatenate(m_true) * np.maximum(np.asarray(F(zt), dtype=float), 0.0)
    return _Cell(lo, hi, (z - lo) / sigma, ref_m, (zt - lo) / sigma, true_m, sigma)


def _cell_error(cell, pts, wts):
    """sup over a local grid of |G * psi - G' * psi| for the cell measure
    normalized to unit mass, in cell units."""
    mass = cell.true_m.sum()
    if mass <= 0:
        return 0.0
    y = np.linspace(-REACH, cell.width + REACH, 401)
    o1 = np.argsort(cell.true_t)
    o2 = np.argsort(pts)
    diff = (_gauss_sum(y, cell.true_t[o1], cell.true_m[o1], 1.0)
            - _gauss_sum(y, pts[o2], wts[o2], 1.0))
    return float(np.max(np.abs(diff))) / mass


def _discretize_cell(cell, sigma, target, n_max, depth, max_depth, F, kind, bps=()):
    """List of (points, masses) in original coordinates and the worst error."""
    mass = cell.ref_m.sum()
    if mass <= 0 or cell.true_m.sum() <= 0:
        return [], [], 0.0
    alpha, beta, total = _jacobi(cell.ref_t[cell.ref_m > 0], cell.ref_m[cell.ref_m > 0], n_max)
    # masses follow the finer rule so that the cell total is the truth's
    scale = cell.true_m.sum() / total
    err = math.inf
    for n in range(1, alpha.size + 1):
        pts, wts = _rule_from_jacobi(alpha, beta, total * scale, n)
        err = _cell_error(cell, pts, wts)
        if err <= target:
            break
    if err <= target or depth >= max_depth or kind == "atoms":
        pts = np.clip(pts, 0.0, cell.width)
        return [cell.lo + sigma * pts], [wts], err
    mid = 0.5 * (cell.lo + cell.hi)
    out_p, out_w, worst = [], [], 0.0
    for lo, hi in ((cell.lo, mid), (mid, cell.hi)):
        sub = _density_cell(F, lo, hi, sigma, bps)
        p, w, e = _discretize_cell(sub, sigma, target, n_max, depth + 1, max_depth, F, kind, bps)
        out_p += p
        out_w += w
        worst = max(worst, e)
    return out_p, out_w, worst


def _cell_edges(a, sigma):
    k = int(math.floor(2.0 * a / sigma))
    edges = [-a + i * sigma for i in range(k + 1)]
    if a - edges[-1] > 1e-12 * max(1.0, a):
        edges.append(a)
    else:
        edges[-1] = a
    return np.array(edges)


def discretize_mixing(F, a: float, sigma: float, epsilon: float, n_max: int = 20,
                      max_depth: int = 6, grid_size: int = 10_000,
                      safety: float = 0.5, breakpoints=(), map_fn=map) -> DiscreteMixingMeasure:
    """Finite measure F' on [-a, a] with ||F * psi_sigma - F' * psi_sigma||_inf <= 2 eps / sigma.

    F is a density on [-a, a] (normalized here), a Sample, an array of
    equally weighted atoms or a (points, weights) pair.  [-a, a] is cut into
    cells of length sigma; in each cell the restricted measure is replaced
    by the smallest Gauss rule (at most n_max points) whose local error is
    below safety * 2 eps (relaxed for cells of negligible mass), halving the
    cell when n_max points do not suffice.
    The result is then checked on a grid of grid_size points.  Known kinks
    of a density F go in ``breakpoints``; cell rules are split there.
    """
    if not (a > 0 and sigma > 0):
        raise InputError("a and sigma must be positive")
    if not sigma < a:
        raise InputError("need sigma < a")
    if not (0 < epsilon < 1 / SQRT_PI):
        raise InputError("epsilon must lie in (0, pi^-1/2)")
    meas = _as_measure(F)
    kind = meas[0]
    bps = ()
    edges = _cell_edges(a, sigma)
    if kind == "atoms":
        pts_all, w_all = meas[1], meas[2]
        if np.any(np.abs(pts_all) > a):
            raise InputError("atoms must lie in [-a, a]")
        idx = np.clip(np.searchsorted(edges, pts_all, side="right") - 1, 0, edges.size - 2)
        cells = []
        for i in range(edges.size - 1):
            sel = idx == i
            t = (pts_all[sel] - edges[i]) / sigma
            cells.append(_Cell(edges[i], edges[i + 1], t, w_all[sel], t, w_all[sel], sigma))
        dens = None
    else:
        dens = meas[1]
        bps = tuple(sorted(float(b) for b in breakpoints))
        cells = [_density_cell(dens, lo, hi, sigma, bps) for lo, hi in zip(edges[:-1], edges[1:])]
    total = math.fsum(c.true_m.sum() for c in cells)
    if not total > 0:
        raise InputError("F has no mass on [-a, a]")
    # cells within REACH sigma of a point are the only ones that reach it, so
    # a cell of relative mass p may carry local error safety 2 eps / (p L)
    overlap = 2 * int(math.ceil(REACH)) + 2

    def work(cell):
        share = cell.true_m.sum() / total
        target = safety * 2.0 * epsilon * max(1.0, 1.0 / max(share * overlap, 1e-300))
        return _discretize_cell(cell, sigma, target, n_max, 0, max_depth, dens, kind, bps)

    results = list(map_fn(work, cells))
    pts = np.concatenate([p for r in results for p in r[0]] or [np.zeros(0)])
    wts = np.concatenate([w for r in results for w in r[1]] or [np.zeros(0)])
    wts = wts / math.fsum(wts)
    order = np.argsort(pts, kind="stable")
    pts, wts = pts[order], wts[order]
    wts = wts / math.fsum(wts)

    # global check against the finer representation of F
    t_all = np.concatenate([c.lo + sigma * c.true_t for c in cells])
    m_all = np.concatenate([c.true_m for c in cells]) / total
    o = np.argsort(t_all, kind="stable")
    grid = np.linspace(-a - REACH * sigma, a + REACH * sigma, grid_size)
    diff = _gauss_sum(grid, t_all[o], m_all[o], sigma) - _gauss_sum(grid, pts, wts, sigma)
    achieved = float(np.max(np.abs(diff)))
    sup_bound = 2.0 * epsilon / sigma
    count_bound = support_count_bound(a, sigma, epsilon)
    if achieved > sup_bound:
        raise DiscretizationError(
            f"sup-norm {achieved:.3g} exceeds 2 eps / sigma = {sup_bound:.3g}", achieved=achieved)
    if pts.size > count_bound:
        raise DiscretizationError(
            f"{pts.size} support points exceed the bound {count_bound:.6g}", achieved=achieved)
    pts = np.clip(pts, -a, a)
    return DiscreteMixingMeasure(pts, wts, a, sigma, epsilon, achieved, sup_bound, count_bound)


# ---------------------------------------------------------------------------
# the finite mixture


@dataclass(frozen=True)
class WpReport:
    mixture: Mixture
    budget: ApproxBudget
    window_mass: float
    g_mass: float
    discretization: DiscreteMixingMeasure
    component_bound: float


def build_wp_sigma(f: NumericDensity, budget: ApproxBudget, return_report=False,
                   n_max: int = 20, map_fn=map):
    """Finite mixture of psi_sigma components approximating f.

    Every component has variance parameter sigma^2; the means of the
    discretized part lie in [-mu_sigma, mu_sigma] and the safeguard
    component of weight proportional to sigma^(6 beta + 5) sits at 0.
    """
    sigma, mu = budget.sigma, budget.mu_sigma
    if not sigma < mu:
        raise ConstructionError("need sigma < mu_sigma")
    h = build_h_k(f, budget)
    bps = tuple(b for b in h.breakpoints if -mu < b < mu)
    window = integrate_interval(h, -mu, mu, tol=1e-13, breakpoints=bps)
    if not window > 0:
        raise ConstructionError("h_k has no mass on the window")
    disc = discretize_mixing(lambda x: h(x) / window, mu, sigma, budget.verify_epsilon,
                             n_max=n_max, breakpoints=bps, map_fn=map_fn)
    guard = math.exp((6.0 * budget.beta + 5.0) * math.log(sigma))
    weights = np.concatenate([window * disc.weights, [guard]]) / (window + guard)
    means = np.concatenate([disc.support_points, [0.0]])
    mix = Mixture.from_arrays(weights, means, np.full(means.size, sigma * sigma),
                              renormalize=True)
    bound = support_count_bound(mu, sigma, budget.epsilon) + 1.0
    if mix.m > bound:
        raise ConstructionError(f"{mix.m} components exceed the bound {bound:.6g}")
    if not return_report:
        return mix
    return WpReport(mix, budget, window, h.g_mass, disc, bound)


def equal_scale_density(mix: Mixture, name="wp") -> NumericDensity:
    """Mixture density evaluated in log space over a band of nearby
    components.  Meant for mixtures with many components of one common
    scale; unlike the generic mixture density no weight is dropped."""
    s2 = mix.variances
    if not np.allclose(s2, s2[0], rtol=1e-12, atol=0):
        raise InputError("components must share one variance")
    s = math.sqrt(float(s2[0]))
    order = np.argsort(mix.means, kind="stable")
    mu = mix.means[order]
    w = mix.weights[order]
    keep = w > 0
    mu, lw = mu[keep], np.log(w[keep])

    def logpdf(x):
        return _log_gauss_sum(x, mu, lw, s)

    lo, hi = float(mu[0] - 12 * s), float(mu[-1] + 12 * s)
    return NumericDensity(pdf=lambda x: np.exp(logpdf(x)), support=(lo, hi),
                          logpdf=logpdf, name=name)


# ---------------------------------------------------------------------------
# KL decay along a sigma grid


@dataclass(frozen=True)
class DecayRow:
    sigma: float
    kl: float
    components: int
    error: Optional[dict] = None
    report: Optional[WpReport] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class DecayCurve:
    beta: float
    rows: tuple
    slope: Optional[float]
    slope_ci: Optional[tuple]

    @property
    def ok_rows(self):
        return [r for r in self.rows if r.error is None]

    def monotone(self, tol=1e-9):
        """KL nonincreasing as sigma decreases, up to tol."""
        kls = [r.kl for r in self.ok_rows]
        return all(b <= a + tol for a, b in zip(kls, kls[1:]))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sigma", "kl", "components"])
        for r in self.rows:
            w.writerow([repr(float(r.sigma)), repr(float(r.kl)) if r.error is None else "nan",
                        r.components])
        return buf.getvalue()

    def to_dict(self):
        return {"beta": self.beta,
                "slope": self.slope,
                "slope_ci": list(self.slope_ci) if self.slope_ci else None,
                "rows": [{"sigma": r.sigma, "kl": r.kl if r.error is None else None,
                          "components": r.components, "error": r.error}
                         for r in self.rows]}


def kl_decay_curve(f: NumericDensity, beta: float, sigma_grid: Sequence[float],
                   M: Optional[float] = None, sigma_bar: float = 1.0, tol=1e-13,
                   map_fn=map, keep_reports=False) -> DecayCurve:
    """KL(f, build_wp_sigma(f, .)) per sigma and the slope of ln KL on ln sigma.

    With ``keep_reports`` every row carries its construction report.
    """
    grid = [float(s) for s in sigma_grid]
    if not grid:
        raise InputError("sigma grid is empty")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise InputError("sigma grid must be strictly decreasing")
    if grid[0] >= sigma_bar:
        raise InputError(f"sigma grid must lie below sigma_bar = {sigma_bar}")
    M = f.M if M is None else M
    if M is None:
        raise InputError("an envelope M is needed for the window")

    def point(s):
        try:
            rep = build_wp_sigma(f, ApproxBudget.build(beta, s, M), return_report=True)
            kl = kl_div(f, equal_scale_density(rep.mixture), tol=tol)
            if not math.isfinite(kl):
                raise ConstructionError("KL is infinite")
            return DecayRow(s, kl, rep.mixture.m, None, rep if keep_reports else None)
        except MsieveError as exc:
            return DecayRow(s, math.nan, 0, exc.to_dict())

    rows = tuple(map_fn(point, grid))
    ok = [r for r in rows if r.error is None and r.kl > 0]
    if len(ok) >= 2:
        slope, ci = loglog_slope([r.sigma for r in ok], [r.kl for r in ok])
    else:
        slope, ci = None, None
    return DecayCurve(beta, rows, slope, ci)


# ---------------------------------------------------------------------------
# Gaussian moments and the alternating binomial identity


def gaussian_moment_nu(h: int, t: int) -> float:
    """t-th moment of the h-fold self-convolution of psi, i.e. of psi_{sqrt h}:
    (t - 1)!! (h / 2)^(t / 2) for even t and 0 for odd t."""
    if h < 1 or t < 0 or int(h) != h or int(t) != t:
        raise InputError("need integers h >= 1 and t >= 0")
    if t % 2:
        return 0.0
    dfact = math.prod(range(t - 1, 0, -2)) if t > 0 else 1
    return float(dfact) * (h / 2.0) ** (t // 2)


def gaussian_moment_quadrature(h: int, t: int, tol=1e-13) -> float:
    s = math.sqrt(h)
    lim = 12.0 * s
    return integrate_interval(lambda x: x ** t * psi(x / s) / s, -lim, lim, tol=tol,
                              breakpoints=(0.0,))


def lemma9_sum(u: int, k: int, nu: Callable = gaussian_moment_nu) -> float:
    """sum_{j=1}^{k+1} (-1)^j C(k+1, j) nu_{j, 2u}; zero when k >= u."""
    if u < 1 or k < 1:
        raise InputError("need u >= 1 and k >= 1")
    terms = [(-1) ** j * math.comb(k + 1, j) * nu(j, 2 * u) for j in range(1, k + 2)]
    return math.fsum(terms)


# ---------------------------------------------------------------------------
# domination inequalities


@dataclass(frozen=True)
class InequalityCheck:
    name: str
    sigma: float
    threshold: float
    passed: bool
    worst_margin: float
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "sigma": self.sigma, "threshold": self.threshold,
                "passed": self.passed, "worst_margin": self.worst_margin, **self.detail}


@dataclass(frozen=True)
class DominationReport:
    checks: tuple

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        return next(c for c in self.checks if c.name == name)

    def to_dict(self):
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


def lower_smoothing_threshold(alpha: float, reading: str = "literal") -> float:
    """sigma_bar with P(0 < Y < 2 alpha) = 1/3 for centered Gaussian Y.

    ``literal``: Y has variance sigma_bar^2.  ``kernel``: Y has density
    psi_{sigma_bar}, i.e. variance sigma_bar^2 / 2.
    """
    z = float(stats.norm.ppf(5.0 / 6.0))
    if reading == "literal":
        return 2.0 * alpha / z
    if reading == "kernel":
        return 2.0 * math.sqrt(2.0) * alpha / z
    raise InputError("reading must be 'literal' or 'kernel'")


def _grid(reach=8.0, n=1601):
    return np.linspace(-reach, reach, n)


def check_lower_domination(f: NumericDensity, alpha, xi, M, sigma=None,
                           reading="literal", grid=None, slack=1e-9) -> InequalityCheck:
    """K_sigma f >= (xi sqrt(pi) / (3M)) f for sigma below sigma_bar."""
    bar = lower_smoothing_threshold(alpha, reading)
    sigma = 0.5 * bar if sigma is None else sigma
    if not sigma < bar:
        raise InputError(f"sigma = {sigma} is not below sigma_bar = {bar:.6g}")
    x = _grid() if grid is None else np.asarray(grid, dtype=float)
    kf = KernelSmoother(f, sigma).power(1, x)
    rhs = xi * SQRT_PI / (3.0 * M) * np.asarray(f(x), dtype=float)
    margin = kf - rhs
    worst = float(np.min(margin))
    return InequalityCheck("lower_domination", sigma, bar, worst >= -slack, worst,
                           {"reading": reading})


def check_iterate_envelope(f: NumericDensity, M, sigma, k, p=0.5, grid=None,
                           slack=1e-9) -> InequalityCheck:
    """K^i f <= M (2/sqrt3)^i psi(p x) for 1 <= i <= k and
    max(f_k, g_k, h_k / 2) <= 2 M (4/sqrt3)^k psi(p x), for sigma < 1 - p^(1/k)."""
    if not (0 < p < 1) or k < 1:
        raise InputError("need p in (0, 1) and k >= 1")
    thr = 1.0 - p ** (1.0 / k)
    if not sigma < thr:
        raise InputError(f"sigma = {sigma} is not below 1 - p^(1/k) = {thr:.6g}")
    x = _grid() if grid is None else np.asarray(grid, dtype=float)
    sm = KernelSmoother(f, sigma)
    env = psi(p * x)
    worst = math.inf
    # the proof's chain gives (4/sqrt3)^i; the stated form is (2/sqrt3)^i
    per_power = {}
    for i in range(1, k + 1):
        m_i = float(np.min(M * (2.0 / math.sqrt(3.0)) ** i * env - sm.power(i, x)))
        per_power[i] = m_i
        worst = min(worst, m_i)
    fx = np.maximum(np.asarray(f(x), dtype=float), 0.0)
    fk = sm.f_k(k, x)
    gk = np.where(fk > 0.5 * fx, fk, 0.5 * fx)
    budget_like = _KOnly(sigma, k)
    hk = build_h_k(f, budget_like, k=k)(x)
    top = np.maximum(np.maximum(fk, gk), 0.5 * hk)
    m_top = float(np.min(2.0 * M * (4.0 / math.sqrt(3.0)) ** k * env - top))
    worst = min(worst, m_top)
    return InequalityCheck("iterate_envelope", sigma, thr, worst >= -slack, worst,
                           {"p": p, "k": k, "power_margins": per_power,
                            "iterate_margin": m_top})


@dataclass(frozen=True)
class _KOnly:
    sigma: float
    k: int


def check_smoothing_envelope(f: NumericDensity, M, sigma, q1=1.0, q2=0.5, grid=None,
                             slack=1e-9) -> InequalityCheck:
    """If f <= M psi(q1 x) then K_sigma f <= (2/sqrt3) M psi(q1 q2 x) for sigma < 1 - q2^2."""
    if not (0 < q1 <= 1 and 0 < q2 < 1):
        raise InputError("need q1 in (0, 1] and q2 in (0, 1)")
    thr = 1.0 - q2 * q2
    if not sigma < thr:
        raise InputError(f"sigma = {sigma} is not below 1 - q2^2 = {thr:.6g}")
    x = _grid() if grid is None else np.asarray(grid, dtype=float)
    hyp = float(np.min(M * psi(q1 * x) - np.asarray(f(x), dtype=float)))
    kf = KernelSmoother(f, sigma).power(1, x)
    worst = float(np.min(2.0 / math.sqrt(3.0) * M * psi(q1 * q2 * x) - kf))
    return InequalityCheck("smoothing_envelope", sigma, thr,
                           worst >= -slack and hyp >= -slack, worst,
                           {"q1": q1, "q2": q2, "hypothesis_margin": hyp})


def domination_checks(f: NumericDensity, sigma: float, k: int, params, *,
                      sigma_lower: Optional[float] = None, sigma_smooth: Optional[float] = None,
                      p=0.5, q1=1.0, q2=0.5, reading="literal", grid=None,
                      slack=1e-9) -> DominationReport:
    """Grid checks of the three domination inequalities.

    ``params`` supplies alpha, xi and M.  ``sigma`` is used for the iterate
    envelope; the lower bound defaults to half its threshold and the
    smoothing envelope to ``sigma``.
    """
    M = params.M
    checks = (
        check_lower_domination(f, params.alpha, params.xi, M, sigma_lower, reading, grid, slack),
        check_iterate_envelope(f, M, sigma, k, p, grid, slack),
        check_smoothing_envelope(f, M, sigma if sigma_smooth is None else sigma_smooth,
                                 q1, q2, grid, slack),
    )
    return DominationReport(checks)
