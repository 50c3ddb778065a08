"""Hellinger and Kullback-Leibler divergences between evaluable densities,
and Monte Carlo Hellinger risk of density estimators.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import InputError, QuadratureError, RiskError, SamplingError
from .kernel import psi, truncation_radius
from .mixture import Mixture, Sample, eval_density, log_density
from .quadrature import integrate_interval

# components of a mixture are treated as supported on mean +- TAIL_SDS * sigma
# (sigma in the psi convention); erfc(7) is about 4e-23
TAIL_SDS = 7.0


@dataclass(frozen=True)
class NumericDensity:
    """A vectorized density with either a psi envelope M or a support interval.

    ``logpdf`` is optional and only used to sharpen log ratios.  ``sampler``
    maps (n, Generator) to draws and takes precedence over rejection sampling.
    """

    pdf: Callable
    M: Optional[float] = None
    support: Optional[tuple] = None
    breakpoints: tuple = ()
    logpdf: Optional[Callable] = None
    sampler: Optional[Callable] = field(default=None, compare=False)
    name: str = ""

    def __post_init__(self):
        if self.M is None and self.support is None:
            raise InputError("a density needs an envelope M or a support interval")
        if self.M is not None and not (self.M > 0):
            raise InputError("envelope M must be positive")

    def __call__(self, x):
        return self.pdf(np.asarray(x, dtype=float))

    def log(self, x):
        x = np.asarray(x, dtype=float)
        if self.logpdf is not None:
            return self.logpdf(x)
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def domain(self, tol):
        if self.support is not None:
            return float(self.support[0]), float(self.support[1])
        T = truncation_radius(self.M, tol)
        return -T, T

    def checked(self, tol=1e-6, grid_check=True):
        """Return self after verifying normalization and the declared envelope."""
        total = integrate(self, self.M, tol=min(tol, 1e-8), support=self.support,
                          breakpoints=self.breakpoints)
        if abs(total - 1.0) > tol:
            raise InputError(f"density integrates to {total!r}, not 1")
        if grid_check and self.M is not None:
            x = np.linspace(-10.0, 10.0, 10001)
            if np.any(self(x) > self.M * psi(x) * (1 + 1e-12) + 1e-300):
                raise InputError("declared envelope M * psi is violated on the grid")
        return self


def mixture_density(mix: Mixture, name="mixture") -> NumericDensity:
    w = mix.weights
    keep = w >= 1e-15
    s = np.sqrt(mix.variances[keep])
    mu = mix.means[keep]
    lo = float(np.min(mu - TAIL_SDS * s))
    hi = float(np.max(mu + TAIL_SDS * s))

    def sampler(n, rng):
        labels = rng.choice(mix.m, size=n, p=mix.weights)
        sd = np.sqrt(mix.variances / 2.0)
        return mix.means[labels] + sd[labels] * rng.standard_normal(n)

    return NumericDensity(pdf=lambda x: eval_density(mix, x), support=(lo, hi),
                          logpdf=lambda x: log_density(mix, x), sampler=sampler,
                          name=name)


def integrate(f, envelope_M=None, tol=1e-10, support=None, breakpoints=()):
    """Adaptive quadrature over [-T, T] (T from the psi envelope) or the support."""
    if support is not None:
        a, b = float(support[0]), float(support[1])
    elif envelope_M is not None:
        T = truncation_radius(envelope_M, tol)
        a, b = -T, T
    else:
        raise InputError("integrate needs an envelope M or a support interval")
    return integrate_interval(f, a, b, tol=tol, breakpoints=breakpoints)


def _joint_domain(f, g, tol):
    fa, fb = f.domain(tol)
    ga, gb = g.domain(tol)
    a, b = min(fa, ga), max(fb, gb)
    bps = sorted({*f.breakpoints, *g.breakpoints, fa, fb, ga, gb} - {a, b})
    return a, b, tuple(bps)


def hellinger_sq(f: NumericDensity, g: NumericDensity, tol=1e-10) -> float:
    """d_H^2 = (1/2) int (sqrt f - sqrt g)^2, which equals 1 - int sqrt(fg)
    for normalized inputs and keeps relative accuracy when the two are close.
    """
    a, b, bps = _joint_domain(f, g, tol)

    def integrand(x):
        d = np.sqrt(np.maximum(f(x), 0.0)) - np.sqrt(np.maximum(g(x), 0.0))
        return 0.5 * d * d

    val = integrate_interval(integrand, a, b, tol=tol, breakpoints=bps)
    return min(max(val, 0.0), 1.0)


def hellinger_affinity(f: NumericDensity, g: NumericDensity, tol=1e-10) -> float:
    a, b, bps = _joint_domain(f, g, tol)
    return integrate_interval(lambda x: np.sqrt(np.maximum(f(x), 0) * np.maximum(g(x), 0)),
                              a, b, tol=tol, breakpoints=bps)


def _exp_excess(d):
    """e^d - 1 - d without cancellation for small |d|."""
    d = np.asarray(d, dtype=float)
    out = np.expm1(np.minimum(d, 700.0)) - d
    small = np.abs(d) < 1e-2
    ds = d[small]
    out[small] = ds * ds * (0.5 + ds * (1 / 6 + ds * (1 / 24 + ds * (1 / 120 + ds / 720))))
    return out


def kl_div(f: NumericDensity, g: NumericDensity, tol=1e-10,
           floor=1e-300) -> float:
    """int f ln(f/g); math.inf when g vanishes where f does not.

    The integrand is split as [f ln(f/g) - f + g] + f - g.  With
    d = ln g - ln f the bracket is f (e^d - 1 - d), pointwise nonnegative
    and free of cancellation when f and g are close; the mass difference
    is integrated to the roundoff level of f + g.
    """
    a, b, bps = _joint_domain(f, g, tol)
    violated = []

    def integrand(x):
        fx = np.maximum(f(x), 0.0)
        gx = np.maximum(g(x), 0.0)
        live = fx > floor
        # where f vanishes the bracket reduces to g
        out = np.where(live, 0.0, gx)
        with np.errstate(divide="ignore"):
            d = g.log(x[live]) - f.log(x[live])
        if not np.all(np.isfinite(d)):
            violated.append(True)
            d = np.where(np.isfinite(d), d, 0.0)
        big = d > 30.0
        out[live] = np.where(big, gx[live] - fx[live] * (1.0 + d), fx[live] * _exp_excess(d))
        return out

    bracket = integrate_interval(integrand, a, b, tol=tol, breakpoints=bps)
    if violated:
        return math.inf
    mass_diff = integrate_interval(lambda x: np.maximum(f(x), 0) - np.maximum(g(x), 0),
                                   a, b, tol=tol, breakpoints=bps,
                                   noise_scale=lambda x: np.abs(f(x)) + np.abs(g(x)))
    return bracket + mass_diff


def rejection_sample(density: NumericDensity, n: int, rng, max_proposals=10**6,
                     return_rate=False):
    """Draws from density using the proposal psi and the envelope M."""
    if density.sampler is not None:
        x = np.asarray(density.sampler(n, rng), dtype=float)
        return (x, 1.0) if return_rate else x
    if density.M is None:
        raise SamplingError("no sampler and no envelope to reject against")
    M = density.M
    out = []
    got = 0
    proposed = 0
    batch = max(64, int(1.2 * n * M))
    while got < n:
        x = rng.standard_normal(batch) / math.sqrt(2.0)
        u = rng.random(batch)
        keep = u * M * psi(x) <= density(x)
        acc = x[keep]
        out.append(acc)
        got += acc.size
        proposed += batch
        if proposed >= max_proposals and got / proposed < 1.0 / (10.0 * M):
            raise SamplingError(
                f"acceptance rate {got / proposed:.3g} below 1/(10M); envelope misdeclared")
    x = np.concatenate(out)[:n]
    return (x, got / proposed) if return_rate else x


@dataclass(frozen=True)
class RiskRow:
    n: int
    reps: int
    mean_risk: float
    stderr: float
    failures: int = 0


@dataclass(frozen=True)
class RiskReport:
    rows: tuple
    slope: Optional[float]
    slope_ci: Optional[tuple]
    slope_defined: bool

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "reps", "mean_risk", "stderr"])
        for r in self.rows:
            w.writerow([r.n, r.reps, repr(float(r.mean_risk)), repr(float(r.stderr))])
        if self.slope_defined:
            w.writerow(["slope", "ci_low", "ci_high"])
            w.writerow([repr(self.slope), repr(self.slope_ci[0]), repr(self.slope_ci[1])])
        else:
            w.writerow(["slope", "ci_low", "ci_high"])
            w.writerow(["nan", "nan", "nan"])
        return buf.getvalue()


def loglog_slope(xs, ys, level=0.95):
    """Least-squares slope of ln y on ln x with a t-based confidence interval."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    if lx.size < 2 or np.ptp(lx) == 0:
        return None, None
    res = stats.linregress(lx, ly)
    if lx.size < 3:
        return float(res.slope), (float(res.slope), float(res.slope))
    t = stats.t.ppf(0.5 + level / 2, lx.size - 2)
    return float(res.slope), (float(res.slope - t * res.stderr),
                              float(res.slope + t * res.stderr))


def mc_hellinger_risk(truth: NumericDensity, procedure: Callable,
                      n_grid: Sequence[int], reps: int, seed: int,
                      seed_for: Optional[Callable] = None, tol=1e-8,
                      map_fn=map) -> RiskReport:
    """Average d_H^2(truth, procedure(sample)) over reps samples per n.

    Each (n, rep) cell draws from its own generator, so the result does not
    depend on the order in which cells are run.  ``map_fn`` lets a caller
    supply a parallel map.
    """
    if reps < 1:
        raise InputError("reps must be at least 1")
    if seed_for is None:
        def seed_for(n, r):
            return np.random.SeedSequence([seed, n, r])

    def cell(nr):
        n, r = nr
        rng = np.random.default_rng(seed_for(n, r))
        x = rejection_sample(truth, n, rng)
        try:
            est = procedure(Sample(x))
            return hellinger_sq(truth, est, tol=tol)
        except (ArithmeticError, QuadratureError, ValueError):
            return None

    cells = [(int(n), r) for n in n_grid for r in range(reps)]
    results = list(map_fn(cell, cells))
    rows = []
    for n in n_grid:
        vals = [v for (cn, _), v in zip(cells, results) if cn == int(n) and v is not None]
        fails = reps - len(vals)
        if fails > 0.2 * reps:
            raise RiskError(f"{fails} of {reps} replications failed at n={n}")
        arr = np.sort(np.array(vals))
        mean = math.fsum(arr.tolist()) / arr.size
        se = float(np.std(arr, ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        rows.append(RiskRow(int(n), arr.size, mean, se, fails))
    ns = [r.n for r in rows]
    risks = [r.mean_risk for r in rows]
    if len(set(ns)) < 2 or min(risks) <= 0:
        return RiskReport(tuple(rows), None, None, False)
    slope, ci = loglog_slope(ns, risks)
    return RiskReport(tuple(rows), slope, ci, True)
