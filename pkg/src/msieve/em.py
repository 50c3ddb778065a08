"""Constrained EM for a fixed sieve model S_m.

Every M-step is followed by a coordinate-wise projection of the means onto
[-mu_bound, mu_bound] and of the variance parameters onto
[lambda_low, lambda_bar].  Variance parameters follow the psi convention: a
component whose law has variance s^2 has parameter 2 s^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from .errors import FitError, InputError, NumericError
from .mixture import Mixture, Sample, component_log_terms


class InitStrategy(str, Enum):
    QUANTILE = "quantile"
    RANDOM_POINTS = "random_points"
    PLUS_PLUS_STYLE = "plus_plus_style"


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 500
    rel_tolerance: float = 1e-8
    n_starts: int = 10
    init_strategy: InitStrategy = InitStrategy.QUANTILE
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InputError("max_iterations must be at least 1")
        if not self.rel_tolerance > 0:
            raise InputError("rel_tolerance must be positive")
        if self.n_starts < 1:
            raise InputError("n_starts must be at least 1")
        object.__setattr__(self, "init_strategy", InitStrategy(self.init_strategy))


@dataclass(frozen=True)
class StepInfo:
    clamped: bool
    reseeded: tuple = ()


@dataclass(frozen=True)
class FittedModel:
    mixture: Mixture
    final_contrast: float
    iterations_used: int
    converged: bool
    start_index: int
    start_contrasts: tuple = ()
    reseeded: tuple = ()
    failures: tuple = field(default=())

    @property
    def start_dispersion(self):
        ok = [c for c in self.start_contrasts if math.isfinite(c)]
        return max(ok) - min(ok) if ok else float("nan")


def _clamp_box(means, variances, spec):
    mu = np.clip(means, -spec.mu_bound, spec.mu_bound)
    var = np.clip(variances, spec.lambda_low, spec.lambda_bar)
    clamped = bool(np.any(mu != means) or np.any(var != variances))
    return mu, var, clamped


def _sample_variance(x):
    return float(np.var(x, ddof=1)) if x.size > 1 else 1.0


def initialize(sample: Sample, m: int, spec, strategy=InitStrategy.QUANTILE,
               seed: int = 0) -> Mixture:
    """Starting mixture inside the box: uniform weights, clamped sample variance."""
    x = sample.values
    n = x.size
    if n < m:
        raise InputError(f"cannot initialize {m} components from {n} observations")
    strategy = InitStrategy(strategy)
    rng = np.random.default_rng(seed)
    if strategy is InitStrategy.QUANTILE:
        means = np.quantile(x, (np.arange(1, m + 1) - 0.5) / m)
    elif strategy is InitStrategy.RANDOM_POINTS:
        means = rng.choice(x, size=m, replace=False)
    else:
        means = np.empty(m)
        means[0] = x[rng.integers(n)]
        d2 = (x - means[0]) ** 2
        for u in range(1, m):
            total = d2.sum()
            if total <= 0:
                means[u] = x[rng.integers(n)]
            else:
                means[u] = x[rng.choice(n, p=d2 / total)]
            d2 = np.minimum(d2, (x - means[u]) ** 2)
        means = np.sort(means)
    var = np.full(m, _sample_variance(x))
    means, var, _ = _clamp_box(means, var, spec)
    return Mixture.from_arrays(np.full(m, 1.0 / m), means, var, renormalize=True)


def _responsibilities(mix, x):
    """Posterior matrix and per-point log density.

    Works in linear space and falls back to log space only when some
    observation is too far out for the direct sum to stay positive.
    """
    w, mu, var = mix.weights, mix.means, mix.variances
    s = np.sqrt(var)
    z = (x[:, None] - mu) / s
    lin = np.exp(-z * z) * (w / (s * math.sqrt(math.pi)))
    tot = lin.sum(axis=1)
    if np.all(tot > 1e-280):
        return lin / tot[:, None], np.log(tot)
    terms = component_log_terms(mix, x)
    norm = logsumexp(terms, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        bad = int(np.flatnonzero(~np.isfinite(norm.ravel()))[0])
        raise NumericError("mixture density underflows at an observation", index=bad)
    return np.exp(terms - norm), norm.ravel()


def _m_step(mix, x, resp, logdens, spec, starve_floor):
    n = x.size
    nk = resp.sum(axis=0)
    starved = np.flatnonzero(nk < starve_floor)
    safe = np.where(nk < starve_floor, 1.0, nk)
    means = (x @ resp) / safe
    dev2 = (x[:, None] - means) ** 2
    variances = 2.0 * np.einsum("ij,ij->j", resp, dev2) / safe
    weights = nk / n
    reseeded = []
    if starved.size:
        # put starved components on the worst-fit points, one point each
        order = np.argsort(logdens, kind="stable")
        for j, u in enumerate(starved):
            means[u] = x[order[j % n]]
            variances[u] = mix.variances[u]
            weights[u] = 1.0 / n
            reseeded.append(int(u))
    means, variances, clamped = _clamp_box(means, variances, spec)
    new = Mixture.from_arrays(weights, means, variances, renormalize=True)
    return new, StepInfo(clamped=clamped, reseeded=tuple(reseeded))


def em_step(mix: Mixture, sample: Sample, spec, starve_floor=1e-8):
    """One E-step, M-step and projection.  Returns (mixture, StepInfo)."""
    x = sample.values
    resp, logdens = _responsibilities(mix, x)
    return _m_step(mix, x, resp, logdens, spec, starve_floor)


def em_iterate(mix: Mixture, sample: Sample, spec) -> Mixture:
    return em_step(mix, sample, spec)[0]


def run_em(mix, sample, spec, cfg: EmConfig, trace=None, starve_floor=1e-8):
    """Iterate from ``mix`` until the relative contrast change is below
    cfg.rel_tolerance.  ``trace``, if a list, receives (contrast, StepInfo)
    for every step, the contrast being that of the mixture after the step.

    The E-step of each iteration also yields the contrast of the current
    mixture, so the contrast costs nothing extra.
    """
    x = sample.values
    n = x.size
    resp, logdens = _responsibilities(mix, x)
    gamma = -math.fsum(logdens) / n
    reseeded = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        mix, info = _m_step(mix, x, resp, logdens, spec, starve_floor)
        resp, logdens = _responsibilities(mix, x)
        new_gamma = -math.fsum(logdens) / n
        reseeded.extend(info.reseeded)
        if trace is not None:
            trace.append((new_gamma, info))
        delta = abs(gamma - new_gamma)
        gamma = new_gamma
        if not info.reseeded and delta <= cfg.rel_tolerance * max(1.0, abs(gamma)):
            converged = True
            break
    return mix, gamma, it, converged, tuple(reseeded)


def _start_plan(cfg: EmConfig):
    """(strategy, seed) per start; a deterministic strategy is used only once."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_starts)
    plan = []
    for s, ss in enumerate(seeds):
        child = int(ss.generate_state(1)[0])
        strategy = cfg.init_strategy
        if s > 0 and strategy is InitStrategy.QUANTILE:
            strategy = InitStrategy.PLUS_PLUS_STYLE
        plan.append((strategy, child))
    return plan


def split_start(mix: Mixture, spec) -> Mixture:
    """Mixture with one more component: the component with the largest
    weight * variance is replaced by two halves at mean -+ its sd."""
    w, mu, var = mix.weights, mix.means, mix.variances
    u = int(np.argmax(w * var))
    sd = math.sqrt(var[u] / 2.0)
    w2 = np.concatenate([np.delete(w, u), [w[u] / 2, w[u] / 2]])
    mu2 = np.concatenate([np.delete(mu, u), [mu[u] - sd, mu[u] + sd]])
    v2 = np.concatenate([np.delete(var, u), [var[u], var[u]]])
    order = np.argsort(mu2, kind="stable")
    mu2, v2, _ = _clamp_box(mu2[order], v2[order], spec)
    return Mixture.from_arrays(w2[order], mu2, v2, renormalize=True)


def fit_mle(sample: Sample, spec, cfg: EmConfig = EmConfig(), warm_starts=()) -> FittedModel:
    """Best constrained EM run by final contrast over cfg.n_starts seeded
    starts followed by any ``warm_starts`` (mixtures with spec.m components)."""
    best = None
    contrasts = []
    failures = []
    plan = [(strategy, child, None) for strategy, child in _start_plan(cfg)]
    plan += [(None, None, w) for w in warm_starts]
    for s, (strategy, child, warm) in enumerate(plan):
        try:
            if warm is None:
                init = initialize(sample, spec.m, spec, strategy, child)
            else:
                if warm.m != spec.m:
                    raise InputError("warm start has the wrong number of components")
                mu, var, _ = _clamp_box(warm.means, warm.variances, spec)
                init = Mixture.from_arrays(warm.weights, mu, var, renormalize=True)
            mix, gamma, it, conv, res = run_em(init, sample, spec, cfg)
        except NumericError as exc:
            contrasts.append(float("inf"))
            failures.append({"start": s, **exc.to_dict()})
            continue
        contrasts.append(gamma)
        if best is None or gamma < best[1]:
            best = (mix, gamma, it, conv, s, res)
    if best is None:
        raise FitError(f"all {len(plan)} EM starts failed", diagnostics=failures)
    mix, gamma, it, conv, s, res = best
    return FittedModel(mix, gamma, it, conv, s, tuple(contrasts), res, tuple(failures))
