import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msieve.em import (EmConfig, InitStrategy, em_iterate, em_step, fit_mle, initialize,
                       run_em, split_start)
from msieve.errors import InputError
from msieve.mixture import Mixture, Sample, draw_sample, empirical_contrast, validate_membership
from msieve.selection import SieveConfig, sieve_spec

CFG = SieveConfig(1.0, 3.0, 1.5, 6.0, 4.0)
TWO = Mixture.from_arrays([0.4, 0.6], [-3.0, 3.0], [1.0, 1.0])


def test_quantile_start_on_symmetric_sample():
    x = Sample(np.linspace(-2, 2, 401))
    mix = initialize(x, 2, sieve_spec(2, CFG), InitStrategy.QUANTILE)
    assert mix.means.tolist() == pytest.approx([-1.0, 1.0], abs=1e-12)
    assert mix.weights.tolist() == [0.5, 0.5]


@pytest.mark.parametrize("strategy", list(InitStrategy))
@pytest.mark.parametrize("m", [2, 4, 7])
def test_every_start_lies_in_the_sieve(strategy, m):
    x = draw_sample(TWO, 300, seed=m)
    spec = sieve_spec(m, CFG)
    assert validate_membership(initialize(x, m, spec, strategy, seed=5), spec).passed


def test_too_few_observations_for_components():
    with pytest.raises(InputError):
        initialize(Sample([0.0, 1.0]), 3, sieve_spec(3, CFG))


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_projection_keeps_iterates_in_the_sieve(seed, m):
    x = draw_sample(Mixture.from_arrays([0.5, 0.5], [-9.0, 9.0], [0.05, 8.0]), 200, seed)
    spec = sieve_spec(m, CFG)
    mix = initialize(x, m, spec, InitStrategy.RANDOM_POINTS, seed)
    for _ in range(5):
        mix = em_iterate(mix, x, spec)
        assert validate_membership(mix, spec).passed


@given(st.integers(0, 10_000))
def test_unclamped_steps_never_raise_the_contrast(seed):
    x = draw_sample(TWO, 400, seed)
    spec = sieve_spec(3, CFG)
    mix = initialize(x, 3, spec, InitStrategy.PLUS_PLUS_STYLE, seed)
    trace = []
    prev = empirical_contrast(mix, x)
    run_em(mix, x, spec, EmConfig(max_iterations=60, rel_tolerance=1e-14), trace=trace)
    for gamma, info in trace:
        if not info.clamped and not info.reseeded:
            assert prev - gamma >= -1e-9
        prev = gamma


def test_recovers_two_separated_means():
    spec = sieve_spec(2, CFG)
    hits = 0
    for seed in range(30):
        fit = fit_mle(draw_sample(TWO, 2000, seed), spec, EmConfig(n_starts=3, seed=seed))
        hits += bool(np.all(np.abs(np.sort(fit.mixture.means) - [-3.0, 3.0]) < 0.1))
    assert hits >= 27


def test_fit_reports_per_start_contrasts():
    x = draw_sample(TWO, 500, 1)
    fit = fit_mle(x, sieve_spec(3, CFG), EmConfig(n_starts=4))
    assert len(fit.start_contrasts) == 4
    assert fit.final_contrast == min(fit.start_contrasts)
    assert fit.start_dispersion >= 0
    assert fit.final_contrast == pytest.approx(empirical_contrast(fit.mixture, x), abs=1e-6)


def test_fit_is_deterministic():
    x = draw_sample(TWO, 300, 2)
    a = fit_mle(x, sieve_spec(3, CFG), EmConfig(n_starts=3, seed=4))
    b = fit_mle(x, sieve_spec(3, CFG), EmConfig(n_starts=3, seed=4))
    assert a.mixture == b.mixture


def test_warm_start_counts_as_an_extra_start():
    x = draw_sample(TWO, 500, 3)
    prev = fit_mle(x, sieve_spec(2, CFG), EmConfig(n_starts=2)).mixture
    spec = sieve_spec(3, CFG)
    fit = fit_mle(x, spec, EmConfig(n_starts=2), warm_starts=(split_start(prev, spec),))
    assert len(fit.start_contrasts) == 3
    with pytest.raises(InputError):
        fit_mle(x, spec, EmConfig(n_starts=1), warm_starts=(prev,))


def test_split_adds_one_component_and_keeps_mass():
    mix = Mixture.from_arrays([0.2, 0.8], [0.0, 2.0], [0.5, 2.0])
    spec = sieve_spec(3, CFG)
    out = split_start(mix, spec)
    assert out.m == 3
    assert math.fsum(out.weights) == pytest.approx(1.0, abs=1e-15)
    # the heavier, wider component is the one split, around its mean
    assert sorted(out.means.tolist()) == pytest.approx([0.0, 1.0, 3.0])


def test_starved_component_is_reseeded():
    x = Sample(np.concatenate([np.zeros(50) + 0.01 * np.arange(50), [30.0]]))
    spec = sieve_spec(2, CFG)
    far = Mixture.from_arrays([0.5, 0.5], [0.2, -spec.mu_bound], [spec.lambda_low] * 2)
    _, info = em_step(far, x, spec, starve_floor=1e-3)
    assert info.reseeded == (1,)


def test_config_validation():
    with pytest.raises(InputError):
        EmConfig(max_iterations=0)
    with pytest.raises(InputError):
        EmConfig(rel_tolerance=0)
    with pytest.raises(ValueError):
        EmConfig(init_strategy="nope")
