"""The fixed Gaussian kernel psi(x) = exp(-x^2) / sqrt(pi) and its scalings.

psi has variance 1/2, so psi_sigma(x) = psi(x / sigma) / sigma has variance
sigma^2 / 2.  Anything that draws from psi_sigma must use standard deviation
sigma / sqrt(2).
"""

import math

import numpy as np

SQRT_PI = math.sqrt(math.pi)
LOG_SQRT_PI = 0.5 * math.log(math.pi)


def psi(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-x * x) / SQRT_PI


def psi_sigma(x, sigma):
    """psi_sigma(x) = sigma^-1 psi(x / sigma)."""
    sigma = np.asarray(sigma, dtype=float)
    return psi(np.asarray(x, dtype=float) / sigma) / sigma


def log_psi_sigma(x, sigma):
    sigma = np.asarray(sigma, dtype=float)
    z = np.asarray(x, dtype=float) / sigma
    return -z * z - LOG_SQRT_PI - np.log(sigma)


def sd_from_sigma(sigma):
    """Standard deviation of the law with density psi_sigma."""
    return np.asarray(sigma, dtype=float) / math.sqrt(2.0)


def psi_tail_mass(T):
    """Mass of psi outside [-T, T]."""
    return math.erfc(T)


def truncation_radius(M, tol):
    """Smallest T (to 1e-3) with M * mass(|x| > T under psi) < tol / 10."""
    target = tol / 10.0 / max(M, 1e-300)
    if target >= 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    while math.erfc(hi) >= target:
        hi *= 2.0
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        if math.erfc(mid) >= target:
            lo = mid
        else:
            hi = mid
    return hi
