import math

import numpy as np
import pytest
from hypothesis import given
from scipy.special import logsumexp
from hypothesis import strategies as st

from msieve.approximation import (ApproxBudget, DiscreteMixingMeasure, build_h_k,
                                  build_wp_sigma, convolve, discretize_mixing,
                                  domination_checks, equal_scale_density, f_k_eval,
                                  f_k_recursive, gauss_rule, gaussian_moment_nu,
                                  gaussian_moment_quadrature, kl_decay_curve, lemma9_sum,
                                  lower_smoothing_threshold)
from msieve.divergence import NumericDensity
from msieve.errors import InputError
from msieve.holder import build_omega, proposition1_params
from msieve.kernel import psi_sigma
from msieve.quadrature import integrate_interval

S0 = 0.8
GAUSS = NumericDensity(pdf=lambda x: psi_sigma(x, S0), M=1 / S0, name="gauss")
OMEGA = build_omega(1.2, 0.2)


@given(st.floats(0.05, 0.9), st.integers(1, 4))
def test_convolution_of_gaussians_is_gaussian(sigma, i):
    x = np.linspace(-4, 4, 41)
    want = psi_sigma(x, math.sqrt(S0 ** 2 + i * sigma ** 2))
    assert np.allclose(convolve(GAUSS, sigma, i, x), want, rtol=1e-9, atol=1e-13)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_iterate_has_unit_mass_and_matches_recursion(k):
    sigma = 0.3
    x = np.linspace(-5, 5, 201)
    a = f_k_eval(OMEGA.density(), sigma, k, x)
    b = f_k_recursive(OMEGA.density(), sigma, k, x)
    assert np.max(np.abs(a - b)) <= 1e-8
    mass = integrate_interval(lambda t: f_k_eval(GAUSS, sigma, k, t), -12, 12, tol=1e-12)
    assert mass == pytest.approx(1.0, abs=1e-10)


def test_gauss_rule_matches_legendre_nodes():
    # discrete uniform measure on a fine Gauss-Legendre grid of [-1, 1]
    t, w = np.polynomial.legendre.leggauss(200)
    pts, wts = gauss_rule(t, w, 5)
    ref_t, ref_w = np.polynomial.legendre.leggauss(5)
    assert np.allclose(np.sort(pts), ref_t, atol=1e-12)
    assert np.allclose(wts[np.argsort(pts)], ref_w, atol=1e-12)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8, unique=True),
       st.integers(1, 6))
def test_gauss_rule_matches_moments(atoms, n):
    t = np.array(atoms)
    m = np.linspace(1.0, 2.0, t.size)
    pts, wts = gauss_rule(t, m, n)
    assert 1 <= pts.size <= min(n, t.size)
    for j in range(2 * pts.size):
        assert math.isclose(np.sum(wts * pts ** j), np.sum(m * t ** j), rel_tol=1e-7,
                            abs_tol=1e-7 * np.sum(m * np.abs(t) ** j) + 1e-12)


def test_gaussian_moments_and_alternating_sum():
    for h in (1, 2, 3):
        for t in (0, 2, 4, 6):
            assert gaussian_moment_nu(h, t) == pytest.approx(
                gaussian_moment_quadrature(h, t), rel=1e-11)
    assert gaussian_moment_nu(2, 3) == 0
    for k in range(1, 5):
        for u in range(1, k + 1):
            assert abs(lemma9_sum(u, k)) < 1e-9 * gaussian_moment_nu(k + 1, 2 * u)
    assert abs(lemma9_sum(3, 1)) > 1


def test_smoothing_threshold_constant():
    assert lower_smoothing_threshold(1.2) == pytest.approx(2.4 / 0.967421566101701, rel=1e-12)
    assert lower_smoothing_threshold(1.2, "kernel") == pytest.approx(
        math.sqrt(2) * lower_smoothing_threshold(1.2), rel=1e-14)


def test_budget_values_and_errors():
    b = ApproxBudget.build(2.0, 0.2, 3.0)
    assert b.k == 0 and b.epsilon == pytest.approx(0.2 ** 17) and b.H1 == 12
    assert ApproxBudget.build(2.5, 0.2, 3.0).k == 1
    with pytest.raises(InputError):
        ApproxBudget.build(2.0, 0.99, 3.0)
    with pytest.raises(InputError):
        ApproxBudget(2.0, 1, 0.2, 1e-6, 1.0, 12.0, 3.0)


def test_clipped_iterate_is_a_density():
    b = ApproxBudget.build(3.0, 0.3, OMEGA.M_tilde)
    h = build_h_k(OMEGA.density(), b)
    lo, hi = h.support
    assert integrate_interval(h, lo, hi, tol=1e-12, breakpoints=h.breakpoints) == \
        pytest.approx(1.0, abs=1e-10)
    x = np.linspace(-6, 6, 2001)
    assert np.all(h(x) >= 0.5 * OMEGA(x) / h.g_mass - 1e-14)


def test_discretize_point_mass_is_exact():
    d = discretize_mixing((np.array([0.3]), np.array([1.0])), 2.0, 0.2, 1e-6)
    assert d.size == 1 and d.support_points[0] == pytest.approx(0.3)
    assert d.sup_norm_achieved < 1e-14


def test_discretize_density_within_bound():
    d = discretize_mixing(lambda x: np.exp(-x * x), 3.0, 0.2, 1e-6)
    assert isinstance(d, DiscreteMixingMeasure)
    assert d.sup_norm_achieved <= d.sup_bound and d.size <= d.count_bound


def test_finite_mixture_respects_window_and_bound():
    rep = build_wp_sigma(OMEGA.density(), ApproxBudget.build(2.0, 0.2, OMEGA.M_tilde),
                         return_report=True)
    mix = rep.mixture
    assert np.allclose(mix.variances, 0.04)
    assert np.all(np.abs(mix.means) <= rep.budget.mu_sigma + 1e-12)
    assert mix.m <= rep.component_bound
    x = np.linspace(-5, 5, 101)
    # independent log-space sum over every component, none dropped
    terms = np.log(mix.weights) - (x[:, None] - mix.means) ** 2 / 0.04 - math.log(0.2 * math.sqrt(math.pi))
    assert np.allclose(equal_scale_density(mix).log(x), logsumexp(terms, axis=1), rtol=1e-12)


def test_decay_curve_rows_and_csv():
    curve = kl_decay_curve(OMEGA.density(), 2.0, [0.4, 0.3, 0.2])
    assert len(curve.rows) == 3 and all(r.error is None for r in curve.rows)
    assert curve.monotone() and curve.slope > 2
    lines = curve.to_csv().splitlines()
    assert lines[0] == "sigma,kl,components" and len(lines) == 4
    with pytest.raises(InputError):
        kl_decay_curve(OMEGA.density(), 2.0, [0.2, 0.3])


def test_domination_inequalities_hold_on_base():
    P = proposition1_params(OMEGA, 1.0, 2.0)
    k = 1
    sigma = 0.5 * (1 - 0.5 ** (1 / k))
    rep = domination_checks(OMEGA.density(), sigma, k, P)
    assert rep.passed, rep.to_dict()
    with pytest.raises(InputError):
        domination_checks(OMEGA.density(), 0.9, k, P)
