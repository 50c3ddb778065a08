"""Sieve parameterization, the penalty and penalized model selection over m.

For a model index m the sieve S_m holds mixtures of at most m components
with means in [-mu_bound(m), mu_bound(m)] and variance parameters in
[lambda_low(m), lambda_bar], where

    sqrt(lambda_low(m)) = a_bar * (ln m)^{3/2} / m
    mu_bound(m)         = g_tilde * |ln sqrt(lambda_low(m))|^{1/2}.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .em import EmConfig, FittedModel, fit_mle, split_start
from .errors import (CalibrationError, ConfigError, InputError, NumericError,
                     SelectionError)
from .mixture import Sample

SQRT_PI = math.sqrt(math.pi)


@dataclass(frozen=True)
class SieveConfig:
    beta_low: float
    beta_high: float
    a_bar: float
    g_tilde: float
    lambda_bar: float
    kappa: float = 1.0
    c1: float = 1.0
    m_max: int = 50

    def __post_init__(self):
        if not (0 < self.beta_low < self.beta_high):
            raise ConfigError("need 0 < beta_low < beta_high")
        if not self.a_bar > 1:
            raise ConfigError("a_bar must exceed 1")
        for name in ("g_tilde", "lambda_bar", "c1"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.kappa < 0:
            raise ConfigError("kappa must be nonnegative")
        if self.m_max < 2:
            raise ConfigError("m_max must be at least 2")


@dataclass(frozen=True)
class SieveSpec:
    m: int
    lambda_low: float
    mu_bound: float
    lambda_bar: float

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m must be positive")
        if not (0 < self.lambda_low < self.lambda_bar):
            raise ConfigError("need 0 < lambda_low < lambda_bar")
        if not self.mu_bound > 0:
            raise ConfigError("mu_bound must be positive")


def sqrt_lambda_low(m, a_bar):
    return a_bar * math.log(m) ** 1.5 / m


def sieve_spec(m: int, cfg: SieveConfig) -> SieveSpec:
    if m < 2:
        raise ConfigError("sieve models start at m = 2")
    root = sqrt_lambda_low(m, cfg.a_bar)
    lam = root * root
    if lam >= 1.0:
        raise ConfigError(f"lambda_low({m}) = {lam:.6g} is not below 1; increase m or lower a_bar")
    if lam >= cfg.lambda_bar:
        raise ConfigError(f"lambda_low({m}) = {lam:.6g} is not below lambda_bar = {cfg.lambda_bar}")
    mu = cfg.g_tilde * math.sqrt(abs(math.log(root)))
    return SieveSpec(m, lam, mu, cfg.lambda_bar)


def smallest_feasible_m(cfg: SieveConfig, upper: int = 10**6) -> int:
    """Smallest m >= 2 for which sieve_spec succeeds (lambda_low below 1 and lambda_bar)."""
    for m in range(2, upper):
        root = sqrt_lambda_low(m, cfg.a_bar)
        if root * root < min(1.0, cfg.lambda_bar):
            return m
    raise ConfigError("no feasible m")


def dimension(m: int) -> int:
    if m < 1:
        raise InputError("m must be positive")
    return 3 * m - 1


def constant_A(spec: SieveSpec, c1: float = 1.0) -> float:
    """sqrt(ln 6 pi e^2) + sqrt(pi) + sqrt(ln(mu sqrt(8/(c1 lam)))) + sqrt(ln(144 lbar/lam))."""
    arg3 = spec.mu_bound * math.sqrt(8.0 / (c1 * spec.lambda_low))
    arg4 = 144.0 * spec.lambda_bar / spec.lambda_low
    if arg3 < 1.0:
        raise ConfigError(f"mu_bound * sqrt(8/(c1 lambda_low)) = {arg3:.6g} < 1")
    if arg4 < 1.0:
        raise ConfigError(f"144 lambda_bar / lambda_low = {arg4:.6g} < 1")
    return (math.sqrt(math.log(6.0 * math.pi * math.e ** 2)) + SQRT_PI
            + math.sqrt(math.log(arg3)) + math.sqrt(math.log(arg4)))


def penalty_shape(m: int, n: int, spec: SieveSpec, c1: float = 1.0) -> float:
    """The penalty with kappa = 1."""
    if n < 1:
        raise InputError("n must be positive")
    A = constant_A(spec, c1)
    r = dimension(m) / n
    return r * (1.0 + 2.0 * A * A + math.log(1.0 / min(1.0, r * A * A)))


def penalty(m: int, n: int, spec: SieveSpec, cfg: SieveConfig) -> float:
    """kappa (D/n) (1 + 2A^2 + ln(1 / min(1, (D/n) A^2)))."""
    return cfg.kappa * penalty_shape(m, n, spec, cfg.c1)


def g_tilde_from_envelope(M: float, beta: float) -> float:
    """2 sqrt(ln(4M/sqrt(pi)) + k ln(4/sqrt(3)) + 6 beta + 4), k from beta."""
    k = approx_order(beta)
    return 2.0 * math.sqrt(math.log(4.0 * M / SQRT_PI) + k * math.log(4.0 / math.sqrt(3.0))
                           + 6.0 * beta + 4.0)


def g_from_g_tilde(g_tilde: float, beta: float) -> float:
    """Leading constant of the support-point count 54 e^2 g_tilde (6 beta + 5)."""
    return 54.0 * math.e ** 2 * g_tilde * (6.0 * beta + 5.0)


def approx_order(beta: float) -> int:
    """k with beta in (2k, 2k + 2]."""
    if beta <= 0:
        raise InputError("beta must be positive")
    return max(int(math.ceil(beta / 2.0)) - 1, 0)


@dataclass(frozen=True)
class FeasibilityReport:
    G: float
    a_bar: float
    value: float
    holds: bool
    a_bar_needed: float


def condition_10(G: float, a_bar: float) -> FeasibilityReport:
    """(G / a)(ln a / ln 2 + 3)^{3/2} <= 1, plus the smallest a meeting it."""
    def lhs(a):
        return G / a * (math.log(a) / math.log(2.0) + 3.0) ** 1.5

    lo, hi = 1.0, 2.0
    while lhs(hi) > 1.0:
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if lhs(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    v = lhs(a_bar)
    return FeasibilityReport(G, a_bar, v, v <= 1.0, hi)


@dataclass
class SelectionRow:
    m: int
    D: int
    contrast: float
    penalty: float
    criterion: float
    fit: Optional[FittedModel] = None
    error: Optional[dict] = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class SelectionTable:
    rows: list
    selected_m: int
    n: int = 0

    @property
    def selected_row(self):
        return next(r for r in self.rows if r.m == self.selected_m)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "D", "contrast", "penalty", "criterion", "selected"])
        for r in self.rows:
            w.writerow([r.m, r.D, repr(float(r.contrast)), repr(float(r.penalty)),
                        repr(float(r.criterion)), int(r.m == self.selected_m)])
        return buf.getvalue()

    def to_dict(self):
        return {
            "n": self.n,
            "selected_m": self.selected_m,
            "rows": [{
                "m": r.m, "D": r.D,
                "contrast": _json_float(r.contrast),
                "penalty": _json_float(r.penalty),
                "criterion": _json_float(r.criterion),
                "selected": r.m == self.selected_m,
                "converged": None if r.fit is None else r.fit.converged,
                "start_dispersion": None if r.fit is None else _json_float(r.fit.start_dispersion),
                "error": r.error,
            } for r in self.rows],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else None


def argmin_smallest(ms, crits, atol=1e-12):
    """Index of the smallest criterion; values within atol of the minimum tie
    and the smallest m wins."""
    crits = np.asarray(crits, dtype=float)
    best = np.nanmin(crits)
    cands = [m for m, c in zip(ms, crits) if c <= best + atol]
    return min(cands)


@dataclass(frozen=True)
class _Prev:
    m: int
    mixture: object


def select_model(sample: Sample, m_range: Sequence[int], cfg: SieveConfig,
                 em_cfg: EmConfig = EmConfig(), fitter=fit_mle,
                 warm_start: bool = True) -> SelectionTable:
    """Fit every m in m_range and pick the minimizer of contrast + penalty.

    With ``warm_start`` the fit for m also starts from the fit for m - 1
    with its widest component split in two, which keeps the contrast from
    rising along nested models when the seeded starts miss.
    """
    ms = sorted(set(int(m) for m in m_range))
    if not ms or ms[0] < 2 or ms[-1] > sample.n:
        raise InputError("m_range must lie inside {2, ..., n}")
    rows = []
    prev = None
    for m in ms:
        spec = sieve_spec(m, cfg)
        pen = penalty(m, sample.n, spec, cfg)
        warm = ()
        if warm_start and prev is not None and prev.m == m - 1:
            warm = (split_start(prev.mixture, spec),)
        try:
            fit = fitter(sample, spec, em_cfg, warm) if warm else fitter(sample, spec, em_cfg)
        except NumericError as exc:
            rows.append(SelectionRow(m, dimension(m), math.nan, pen, math.nan,
                                     error=exc.to_dict()))
            prev = None
            continue
        prev = _Prev(m, fit.mixture)
        rows.append(SelectionRow(m, dimension(m), fit.final_contrast, pen,
                                 fit.final_contrast + pen, fit))
    good = [r for r in rows if r.ok]
    if not good:
        raise SelectionError("every model fit failed")
    sel = argmin_smallest([r.m for r in good], [r.criterion for r in good])
    return SelectionTable(rows, sel, sample.n)


@dataclass(frozen=True)
class KappaCalibration:
    kappa: float
    slope: float
    slope_ci: tuple
    jump_kappa: Optional[float]
    jump_size: int


def calibrate_kappa(table: SelectionTable, cfg: SieveConfig, n: Optional[int] = None,
                    min_rows=10) -> KappaCalibration:
    """Slope heuristic: regress contrast on the penalty shape over the
    larger half of the models; kappa_hat = 2 |slope|.  Also reports the
    dimension-jump estimate (twice the kappa at the largest drop in the
    selected dimension)."""
    n = n or table.n
    good = [r for r in table.rows if r.ok]
    if len(good) < min_rows:
        raise CalibrationError(f"need at least {min_rows} valid rows, got {len(good)}")
    shapes = np.array([penalty_shape(r.m, n, sieve_spec(r.m, cfg), cfg.c1) for r in good])
    gam = np.array([r.contrast for r in good])
    xs, ys = shapes[len(good) // 2:], gam[len(good) // 2:]
    if np.ptp(xs) <= 1e-12 * max(1.0, np.abs(xs).max()):
        raise CalibrationError("penalty shape has no spread over the large models")
    res = stats.theilslopes(ys, xs)
    if res.slope >= 0 or abs(res.slope) < 1e-14:
        raise CalibrationError("contrast does not decrease with the penalty shape")
    kappa_hat = 2.0 * abs(res.slope)

    # dimension jump: selected D as a function of kappa
    grid = np.geomspace(kappa_hat / 100, kappa_hat * 10, 400)
    dims = []
    ms = [r.m for r in good]
    for k in grid:
        m_sel = argmin_smallest(ms, gam + k * shapes)
        dims.append(dimension(m_sel))
    jumps = -np.diff(dims)
    if jumps.size and jumps.max() > 0:
        j = int(np.argmax(jumps))
        jump_kappa, jump_size = 2.0 * float(grid[j + 1]), int(jumps[j])
    else:
        jump_kappa, jump_size = None, 0
    return KappaCalibration(kappa_hat, float(res.slope),
                            (float(res.low_slope), float(res.high_slope)),
                            jump_kappa, jump_size)


def rescore(table: SelectionTable, cfg: SieveConfig, kappa: float) -> SelectionTable:
    """The same fits scored with a different kappa; no refitting."""
    if kappa < 0:
        raise ConfigError("kappa must be nonnegative")
    rows = []
    for r in table.rows:
        pen = kappa * penalty_shape(r.m, table.n, sieve_spec(r.m, cfg), cfg.c1)
        rows.append(SelectionRow(r.m, r.D, r.contrast, pen, r.contrast + pen, r.fit, r.error))
    good = [r for r in rows if r.ok]
    sel = argmin_smallest([r.m for r in good], [r.criterion for r in good])
    return SelectionTable(rows, sel, table.n)
