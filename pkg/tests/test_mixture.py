import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msieve.errors import InputError
from msieve.kernel import psi, psi_sigma, truncation_radius
from msieve.mixture import (Component, Mixture, Sample, draw_sample, empirical_contrast,
                            eval_density, format_sample, log_density, map_cluster,
                            posteriors, read_mixture, read_sample, validate_membership)
from msieve.quadrature import fixed_gauss_legendre
from msieve.selection import SieveConfig, sieve_spec


@st.composite
def mixtures(draw, max_m=5):
    m = draw(st.integers(1, max_m))
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=m, max_size=m)))
    mu = draw(st.lists(st.floats(-5, 5), min_size=m, max_size=m))
    var = draw(st.lists(st.floats(0.05, 4.0), min_size=m, max_size=m))
    return Mixture.from_arrays(w, mu, var, renormalize=True)


@pytest.mark.parametrize("sigma", [0.1, 1.0, 10.0])
def test_scaled_kernel_has_unit_mass(sigma):
    mass = fixed_gauss_legendre(lambda x: psi_sigma(x, sigma), -40 * sigma, 40 * sigma, 400)
    assert abs(mass - 1.0) < 1e-12


def test_kernel_variance_is_one_half():
    var = fixed_gauss_legendre(lambda x: x * x * psi(x), -12, 12, 200)
    assert abs(var - 0.5) < 1e-12


def test_single_standard_component_at_zero():
    mix = Mixture.from_arrays([1.0], [0.0], [1.0])
    assert eval_density(mix, 0.0) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-15)


def test_symmetric_pair_at_zero():
    # e^-1 / sqrt(pi), computed with mpmath at 30 digits
    mix = Mixture.from_arrays([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0])
    assert eval_density(mix, 0.0) == pytest.approx(0.207553748710297351670134124721, rel=1e-14)


def test_density_vanishes_far_out():
    mix = Mixture.from_arrays([0.3, 0.7], [-1.0, 2.0], [0.5, 1.5])
    assert eval_density(mix, 1e3) == 0.0
    assert np.isfinite(log_density(mix, np.array([1e3])))[0]


@given(mixtures(), st.floats(-20, 20))
def test_log_density_matches_density(mix, x):
    d = eval_density(mix, np.array([x]))[0]
    ld = log_density(mix, np.array([x]))[0]
    if d > 1e-250:
        assert ld == pytest.approx(math.log(d), rel=1e-12, abs=1e-12)


@given(mixtures(), st.randoms(use_true_random=False))
def test_contrast_is_permutation_invariant(mix, rnd):
    x = Sample(np.linspace(-4, 4, 37))
    order = list(range(mix.m))
    rnd.shuffle(order)
    a = empirical_contrast(mix, x)
    b = empirical_contrast(mix.permuted(order), x)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@given(mixtures())
def test_mixture_integrates_to_one(mix):
    lo = float(np.min(mix.means - 12 * np.sqrt(mix.variances)))
    hi = float(np.max(mix.means + 12 * np.sqrt(mix.variances)))
    assert abs(fixed_gauss_legendre(lambda x: eval_density(mix, x), lo, hi, 400) - 1) < 1e-10


def test_contrast_stays_finite_where_density_underflows():
    mix = Mixture.from_arrays([1.0], [0.0], [0.01])
    x = Sample([0.0, 400.0])
    assert eval_density(mix, 400.0) == 0.0
    # ln psi_0.1(x) = -(x/0.1)^2 - ln(sqrt(pi) 0.1)
    expected = [-0.5 * math.log(math.pi) - math.log(0.1),
                -4000.0 ** 2 - 0.5 * math.log(math.pi) - math.log(0.1)]
    assert empirical_contrast(mix, x) == pytest.approx(-sum(expected) / 2, rel=1e-15)


def test_invalid_mixtures_rejected():
    with pytest.raises(InputError):
        Mixture.from_arrays([0.5, 0.6], [0, 1], [1, 1])
    with pytest.raises(InputError):
        Component(0.5, 0.0, 0.0)
    with pytest.raises(InputError):
        Sample([1.0, math.nan])
    with pytest.raises(InputError):
        eval_density(Mixture.from_arrays([1.0], [0.0], [1.0]), math.inf)


def test_degenerate_weights_draw_from_first_component():
    mix = Mixture.from_arrays([1.0, 0.0], [-5.0, 5.0], [0.5, 0.5])
    x = draw_sample(mix, 2000, seed=4).values
    assert np.all(x < 0)


def test_draws_follow_kernel_variance_convention():
    mix = Mixture.from_arrays([1.0], [1.0], [2.0])
    x = draw_sample(mix, 200_000, seed=11).values
    # variance parameter 2 means a law with variance 1
    assert abs(np.var(x) - 1.0) < 0.02
    assert abs(np.mean(x) - 1.0) < 0.01


def test_draws_are_deterministic_per_seed():
    mix = Mixture.from_arrays([0.4, 0.6], [0.0, 3.0], [1.0, 1.0])
    assert np.array_equal(draw_sample(mix, 50, 7).values, draw_sample(mix, 50, 7).values)
    assert not np.array_equal(draw_sample(mix, 50, 7).values, draw_sample(mix, 50, 8).values)


def test_map_label_at_first_mean():
    mix = Mixture.from_arrays([0.5, 0.5], [-4.0, 4.0], [0.5, 0.5])
    labels, post = map_cluster(mix, Sample([-4.0, 4.0]))
    assert labels.tolist() == [0, 1]
    assert post[0, 0] > 1 - 1e-12


def test_map_ties_go_to_lowest_index():
    mix = Mixture.from_arrays([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0])
    labels, post = map_cluster(mix, Sample([0.0]))
    assert labels.tolist() == [0]
    assert post[0, 0] == post[0, 1]


@given(mixtures(), st.lists(st.floats(-30, 30), min_size=1, max_size=20))
def test_posterior_rows_sum_to_one(mix, xs):
    post = posteriors(mix, np.array(xs))
    assert np.allclose(post.sum(axis=1), 1.0, atol=1e-12)


@given(mixtures(max_m=6), st.integers(2, 8))
def test_membership_matches_interval_oracle(mix, m):
    spec = sieve_spec(m, SieveConfig(1.0, 3.0, 1.5, 6.0, 4.0))
    rep = validate_membership(mix, spec)
    expected = mix.m <= m and all(
        -spec.mu_bound <= c.mean <= spec.mu_bound and spec.lambda_low <= c.variance <= spec.lambda_bar
        for c in mix.components)
    assert rep.passed == expected


def test_sample_and_mixture_files_round_trip(tmp_path):
    s = Sample([0.1, -2.5, 3.0])
    p = tmp_path / "s.txt"
    p.write_text(format_sample(s))
    assert np.array_equal(read_sample(p).values, s.values)
    mix = Mixture.from_arrays([0.25, 0.75], [0.0, 1.0], [1.0, 2.0])
    q = tmp_path / "m.json"
    import json
    q.write_text(json.dumps(mix.to_dict()))
    assert read_mixture(q) == mix
    bad = tmp_path / "bad.txt"
    bad.write_text("1.0\nabc\n")
    with pytest.raises(InputError):
        read_sample(bad)


def test_truncation_radius_bounds_tail():
    for M, tol in [(1.0, 1e-10), (50.0, 1e-14)]:
        T = truncation_radius(M, tol)
        assert M * math.erfc(T) < tol / 10
