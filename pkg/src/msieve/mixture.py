"""Gaussian mixtures under the psi kernel convention.

A component with variance parameter v contributes p * psi_sigma(x - mu) with
sigma = sqrt(v).  Note the kernel convention: the law of that component has
variance v / 2, not v.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import InputError, NumericError
from .kernel import LOG_SQRT_PI

WEIGHT_FLOOR = 1e-15


@dataclass(frozen=True)
class Component:
    weight: float
    mean: float
    variance: float

    def __post_init__(self):
        if not (0.0 <= self.weight <= 1.0) or not math.isfinite(self.weight):
            raise InputError(f"weight {self.weight!r} outside [0, 1]")
        if not math.isfinite(self.mean):
            raise InputError("mean must be finite")
        if not (self.variance > 0.0) or not math.isfinite(self.variance):
            raise InputError(f"variance {self.variance!r} must be positive")


@dataclass(frozen=True)
class Mixture:
    """Ordered list of components whose weights sum to one."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) < 1:
            raise InputError("a mixture needs at least one component")
        for c in comps:
            if not isinstance(c, Component):
                raise InputError("components must be Component instances")
        total = math.fsum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise InputError(f"weights sum to {total!r}, expected 1")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_arrays(cls, weights, means, variances, renormalize=False):
        w = np.asarray(weights, dtype=float)
        if renormalize:
            w = w / math.fsum(w)
        return cls(tuple(Component(float(a), float(b), float(c))
                         for a, b, c in zip(w, means, variances)))

    @property
    def m(self):
        return len(self.components)

    @property
    def weights(self):
        return np.array([c.weight for c in self.components])

    @property
    def means(self):
        return np.array([c.mean for c in self.components])

    @property
    def variances(self):
        return np.array([c.variance for c in self.components])

    def to_dict(self):
        return {"components": [{"weight": c.weight, "mean": c.mean,
                                "variance": c.variance}
                               for c in self.components]}

    @classmethod
    def from_dict(cls, d):
        try:
            comps = d["components"]
            return cls.from_arrays([c["weight"] for c in comps],
                                   [c["mean"] for c in comps],
                                   [c["variance"] for c in comps])
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed mixture JSON: {exc}") from exc

    def permuted(self, order: Sequence[int]) -> "Mixture":
        return Mixture(tuple(self.components[i] for i in order))


@dataclass(frozen=True)
class Sample:
    values: np.ndarray
    seed_provenance: Optional[int] = field(default=None)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size < 1:
            raise InputError("a sample needs at least one observation")
        if not np.all(np.isfinite(v)):
            raise InputError("sample values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self):
        return self.values.size


def _active(mix):
    w = mix.weights
    keep = w >= WEIGHT_FLOOR
    return w[keep], mix.means[keep], np.sqrt(mix.variances[keep])


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InputError("density evaluation point must be finite")
    return x


def component_log_terms(mix: Mixture, x):
    """(n, m) array of ln p_u + ln psi_{sigma_u}(x - mu_u); -inf for p_u = 0."""
    x = _check_x(x)
    w, mu, s = mix.weights, mix.means, np.sqrt(mix.variances)
    z = (x[..., None] - mu) / s
    with np.errstate(divide="ignore"):
        lw = np.where(w >= WEIGHT_FLOOR, np.log(np.maximum(w, 1e-300)), -np.inf)
    return lw - z * z - LOG_SQRT_PI - np.log(s)


def log_density(mix: Mixture, x):
    x = _check_x(x)
    w, mu, s = _active(mix)
    z = (x[..., None] - mu) / s
    terms = np.log(w) - z * z - LOG_SQRT_PI - np.log(s)
    return logsumexp(terms, axis=-1)


def eval_density(mix: Mixture, x):
    """sum_u p_u psi_{sigma_u}(x - mu_u)."""
    x = _check_x(x)
    w, mu, s = _active(mix)
    z = (x[..., None] - mu) / s
    out = np.exp(-z * z) / s @ w / math.sqrt(math.pi)
    return out if out.ndim else float(out)


def empirical_contrast(mix: Mixture, sample: Sample) -> float:
    """gamma_n = -(1/n) sum ln mix(X_i)."""
    ld = log_density(mix, sample.values)
    bad = np.flatnonzero(~np.isfinite(ld))
    if bad.size:
        raise NumericError("mixture density underflows to zero", index=int(bad[0]))
    return -math.fsum(ld) / sample.n


def draw_sample(mix: Mixture, n: int, seed: int) -> Sample:
    """Component by weight, then a normal draw with sd sigma_u / sqrt(2)."""
    if n < 1:
        raise InputError("n must be at least 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(mix.m, size=n, p=mix.weights)
    sd = np.sqrt(mix.variances / 2.0)
    x = mix.means[labels] + sd[labels] * rng.standard_normal(n)
    return Sample(x, seed_provenance=seed)


def posteriors(mix: Mixture, x):
    terms = component_log_terms(mix, x)
    norm = logsumexp(terms, axis=-1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        bad = np.flatnonzero(~np.isfinite(norm.ravel()))
        raise NumericError("posterior row is identically zero", index=int(bad[0]))
    return np.exp(terms - norm)


def map_cluster(mix: Mixture, sample: Sample):
    """MAP labels (0-based, ties to the lowest index) and the posterior matrix."""
    post = posteriors(mix, sample.values)
    # argmax returns the first maximal index, which is the tie rule we want
    return np.argmax(post, axis=1), post


@dataclass(frozen=True)
class MembershipReport:
    passed: bool
    count_ok: bool
    mean_ok: tuple
    variance_ok: tuple

    @property
    def failing_components(self):
        return [i for i, (a, b) in enumerate(zip(self.mean_ok, self.variance_ok))
                if not (a and b)]


def validate_membership(mix: Mixture, spec) -> MembershipReport:
    """Box check of every component against a SieveSpec."""
    mu_ok = tuple(bool(-spec.mu_bound <= c.mean <= spec.mu_bound)
                  for c in mix.components)
    var_ok = tuple(bool(spec.lambda_low <= c.variance <= spec.lambda_bar)
                   for c in mix.components)
    count_ok = mix.m <= spec.m
    return MembershipReport(bool(count_ok and all(mu_ok) and all(var_ok)),
                            bool(count_ok), mu_ok, var_ok)


def read_sample(path) -> Sample:
    vals = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                v = float(s)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: not a number: {s!r}") from exc
            if not math.isfinite(v):
                raise InputError(f"{path}:{lineno}: non-finite value")
            vals.append(v)
    return Sample(np.array(vals))


def format_sample(sample: Sample) -> str:
    return "".join(f"{v!r}\n" for v in sample.values.tolist())


def read_mixture(path) -> Mixture:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from exc
    return Mixture.from_dict(data)
