import math

import numpy as np
import pytest

from msieve.divergence import hellinger_sq, kl_div
from msieve.errors import InputError
from msieve.holder import (ClassParams, PerturbationFamily, audit_separation, build_bump,
                           build_omega, card_xi, choose_D, draw_from_family,
                           integer_partitions, log_derivative_coefficients, pair_divergences,
                           proposition1_params, smoothness_index, theorem3_bound,
                           verify_class_conditions, vg_subset)
from msieve.kernel import psi
from msieve.quadrature import fixed_gauss_legendre, integrate_interval

OMEGA = build_omega(1.2, 0.2)


def family(beta=1.0, D=8, bump_beta=None):
    return PerturbationFamily(beta, D, (0,) * D, OMEGA, build_bump(bump_beta or beta))


def test_smoothness_index_is_strict():
    assert [smoothness_index(b) for b in (0.5, 1.0, 1.5, 2.0, 3.0)] == [0, 0, 1, 1, 2]


def test_bump_moments():
    phi = build_bump(2.0)
    assert abs(integrate_interval(phi, 0.25, 0.75, tol=1e-15)) < 1e-13
    assert integrate_interval(lambda y: phi(y) ** 2, 0.25, 0.75, tol=1e-14) == pytest.approx(1, abs=1e-12)


def test_bump_derivatives_agree_with_finite_differences():
    phi = build_bump(2.0)
    y = np.linspace(0.3, 0.7, 9)
    for k in (1, 2):
        h = 1e-4
        fd = (phi.derivative(y + h, k - 1) - phi.derivative(y - h, k - 1)) / (2 * h)
        assert np.allclose(phi.derivative(y, k), fd, rtol=1e-5, atol=1e-5 * phi.A_phi)


def test_bump_constant_dominates_every_order():
    phi = build_bump(2.0)
    y = np.linspace(0.2, 0.8, 200_001)
    for k in range(phi.max_order + 1):
        assert np.max(np.abs(phi.derivative(y, k))) <= phi.A_phi * (1 + 1e-9)
    assert phi.max_order == 3


def test_omega_shape():
    a, xi = OMEGA.alpha, OMEGA.xi
    assert np.allclose(OMEGA(np.linspace(-0.75 * a, 0.75 * a, 11)), 2 * xi, rtol=1e-14)
    assert OMEGA(np.array([a, -a])) == pytest.approx([xi, xi], rel=1e-12)
    mass = integrate_interval(OMEGA, -12, 12, tol=1e-13, breakpoints=OMEGA.breakpoints)
    assert mass == pytest.approx(1.0, abs=1e-11)
    x = np.linspace(-10, 10, 20001)
    assert np.all(OMEGA(x) <= OMEGA.M_tilde * psi(x))


def test_omega_rejects_bad_parameters():
    with pytest.raises(InputError):
        build_omega(1.0, 0.5)


@pytest.mark.parametrize("D", [2, 8, 16])
def test_family_members_are_densities(D):
    fam = family(1.0, D)
    rng = np.random.default_rng(D)
    th = tuple(rng.integers(0, 2, D))
    f = fam.with_theta(th)
    x = np.linspace(-12, 12, 40001)
    assert np.all(f(x) > 0)
    mass = integrate_interval(f, -12, 12, tol=1e-13, breakpoints=f.breakpoints)
    assert mass == pytest.approx(1.0, abs=1e-11)


def test_family_sampling_is_deterministic():
    fam = family(1.0, 8)
    a, rate = draw_from_family(fam, 200, seed=3, return_rate=True)
    b = draw_from_family(fam, 200, seed=3)
    assert np.array_equal(a.values, b.values)
    assert 0 < rate <= 1


def test_log_derivative_combinatorics():
    # Faa di Bruno for ln: (ln f)'' = f''/f - (f')^2/f^2
    assert log_derivative_coefficients(2) == {(0, 1): 1, (2, 0): -1}
    assert [card_xi(t) for t in range(1, 7)] == [1, 2, 3, 5, 7, 11]
    assert len(integer_partitions(5)) == 7


def test_choose_D_by_enumeration():
    assert choose_D(100, 1.0) == 10
    for n, beta in [(50, 0.5), (1000, 2.0), (7, 1.0)]:
        D = choose_D(n, beta)
        assert D % 2 == 0 and D ** (2 * beta + 1) >= 7 * n
        assert D == 2 or (D - 2) ** (2 * beta + 1) < 7 * n


@pytest.mark.parametrize("D", [8, 16, 32])
def test_code_separation_and_size(D):
    Theta = vg_subset(D, 0.5, seed=0)
    assert math.log(len(Theta)) > D / 8
    diff = (Theta[:, None, :] != Theta[None, :, :]).sum(axis=2)
    off = diff[~np.eye(len(Theta), dtype=bool)]
    assert off.min() > D / 4


def test_pair_divergences_match_generic_integrals():
    fam = PerturbationFamily(0.5, 4, (0,) * 4, OMEGA, build_bump(0.5))
    a, b = fam.with_theta((1, 0, 1, 1)), fam.with_theta((0, 0, 1, 0))
    h2, kab, kba = pair_divergences(a, b, 1e-15)
    assert h2 == pytest.approx(hellinger_sq(a.density(), b.density(), 1e-13), rel=1e-9)
    assert kab == pytest.approx(kl_div(a.density(), b.density(), 1e-13), rel=1e-9)
    assert kba == pytest.approx(kl_div(b.density(), a.density(), 1e-13), rel=1e-9)


def test_lower_separation_is_tight_for_small_perturbations():
    fam = family(1.0, 8)
    rep = audit_separation(fam, vg_subset(8, 0.5, seed=1), n=100)
    assert rep.passed
    for p in rep.pairs:
        assert p["h2"] == pytest.approx(p["h2_lower"], rel=1e-6)
        assert p["kl"] <= p["kl_upper"]
    # pairs farther apart than D/2 exceed the stated upper bound
    far = [p for p in rep.pairs if p["hamming"] > 4]
    assert far and all(not p["strict_pass"] for p in far)


def test_theorem3_bound_value():
    v = theorem3_bound(0.2, 1.2, 10.0, 1.0, 100)
    assert v == pytest.approx(0.5 * 0.2 * 1.2 / 100 * 2 ** -8 * 700 ** (-2 / 3), rel=1e-14)


def test_class_conditions_pass_for_a_member():
    P = proposition1_params(OMEGA, 1.0, 2.0)
    fam = family(1.0, 8)
    rep = verify_class_conditions(fam.with_theta((1, 0, 1, 1, 0, 0, 1, 0)), 1.0, P)
    assert rep.passed, rep.to_dict()


def test_class_conditions_catch_a_thin_envelope():
    P = proposition1_params(OMEGA, 1.0, 2.0)
    thin = ClassParams(P.gamma, P.l_plus, P.L_coef, P.eps, P.C, P.alpha, P.xi, 0.5)
    rep = verify_class_conditions(family(1.0, 8), 1.0, thin)
    assert not rep["tail"].passed
    assert rep["smoothness"].passed
