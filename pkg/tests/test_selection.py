import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msieve.em import EmConfig
from msieve.errors import CalibrationError, ConfigError, InputError
from msieve.mixture import Mixture, draw_sample
from msieve.selection import (SelectionRow, SelectionTable, SieveConfig, approx_order,
                              argmin_smallest, calibrate_kappa, condition_10, constant_A,
                              dimension, penalty, penalty_shape, rescore, select_model,
                              sieve_spec, smallest_feasible_m)

CFG = SieveConfig(1.0, 3.0, 1.5, 6.0, 4.0)
THREE = Mixture.from_arrays([0.3, 0.4, 0.3], [-3.0, 0.0, 3.0], [0.5, 0.5, 0.5])


def test_sieve_scaling_at_m10():
    # values from a 30-digit mpmath evaluation of the closed forms
    spec = sieve_spec(10, CFG)
    assert spec.lambda_low == pytest.approx(0.274681609959619286572183810881, rel=1e-14)
    assert spec.mu_bound == pytest.approx(4.82271369796115034569736201786, rel=1e-14)
    assert constant_A(spec) == pytest.approx(8.56512780016450655297005474788, rel=1e-14)
    assert penalty(10, 1000, spec, CFG) == pytest.approx(4.28396202552275099941618428422, rel=1e-13)


def test_dimension_and_order():
    assert [dimension(m) for m in (1, 2, 5)] == [2, 5, 14]
    assert [approx_order(b) for b in (0.5, 2.0, 2.1, 4.0, 4.5)] == [0, 0, 1, 1, 2]


def test_infeasible_models_are_config_errors():
    with pytest.raises(ConfigError):
        sieve_spec(1, CFG)
    with pytest.raises(ConfigError):
        SieveConfig(2.0, 1.0, 1.5, 6.0, 4.0)
    with pytest.raises(ConfigError):
        SieveConfig(1.0, 3.0, 0.9, 6.0, 4.0)
    big = SieveConfig(1.0, 3.0, 8.0, 6.0, 4.0)
    m0 = smallest_feasible_m(big)
    with pytest.raises(ConfigError):
        sieve_spec(m0 - 1, big)
    sieve_spec(m0, big)


@given(st.integers(2, 40), st.integers(10, 10**6), st.floats(0.0, 5.0))
def test_penalty_is_linear_in_kappa(m, n, kappa):
    spec = sieve_spec(m, CFG)
    cfg = SieveConfig(1.0, 3.0, 1.5, 6.0, 4.0, kappa=kappa)
    assert penalty(m, n, spec, cfg) == pytest.approx(kappa * penalty_shape(m, n, spec), rel=1e-14)


@given(st.integers(10, 10**5))
def test_penalty_grows_with_m_for_large_models(n):
    vals = [penalty_shape(m, n, sieve_spec(m, CFG)) for m in range(6, 30)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_argmin_breaks_ties_toward_smaller_m():
    assert argmin_smallest([2, 3, 4], [1.0, 0.5, 0.5]) == 3
    assert argmin_smallest([2, 3, 4], [1.0, 0.5, 0.5 + 1e-13]) == 3
    assert argmin_smallest([2, 3], [math.nan, 0.1]) == 3


def test_selection_matches_recomputed_criterion():
    x = draw_sample(THREE, 2000, seed=21)
    tab = select_model(x, range(2, 8), CFG, EmConfig(n_starts=2))
    crit = {r.m: r.contrast + penalty(r.m, 2000, sieve_spec(r.m, CFG), CFG) for r in tab.rows}
    assert tab.selected_m == min(crit, key=lambda m: (crit[m], m))
    assert tab.selected_m == 3
    lines = tab.to_csv().splitlines()
    assert lines[0] == "m,D,contrast,penalty,criterion,selected"
    assert sum(int(l.split(",")[-1]) for l in lines[1:]) == 1
    d = tab.to_dict()
    assert d["selected_m"] == 3 and len(d["rows"]) == 6


def test_rescore_reuses_fits():
    x = draw_sample(THREE, 500, seed=2)
    tab = select_model(x, range(2, 6), CFG, EmConfig(n_starts=1))
    zero = rescore(tab, CFG, 0.0)
    assert [r.fit for r in zero.rows] == [r.fit for r in tab.rows]
    assert zero.selected_m == min(zero.rows, key=lambda r: (r.contrast, r.m)).m
    same = rescore(tab, CFG, 1.0)
    assert same.selected_m == tab.selected_m
    assert [r.criterion for r in same.rows] == pytest.approx([r.criterion for r in tab.rows])


def test_m_range_must_fit_the_sample():
    with pytest.raises(InputError):
        select_model(draw_sample(THREE, 5, 1), [2, 9], CFG)


def _synthetic_table(contrasts, n=1000):
    rows = [SelectionRow(m, dimension(m), c, 0.0, c) for m, c in contrasts.items()]
    return SelectionTable(rows, min(contrasts), n)


def test_calibration_recovers_a_linear_slope():
    n = 1000
    s = 0.003
    shapes = {m: penalty_shape(m, n, sieve_spec(m, CFG)) for m in range(2, 22)}
    tab = _synthetic_table({m: 1.0 - s * shapes[m] for m in shapes}, n)
    cal = calibrate_kappa(tab, CFG)
    assert cal.kappa == pytest.approx(2 * s, rel=1e-9)
    assert cal.slope_ci[0] <= cal.slope <= cal.slope_ci[1]


def test_calibration_rejects_flat_contrasts():
    tab = _synthetic_table({m: 1.0 for m in range(2, 22)})
    with pytest.raises(CalibrationError):
        calibrate_kappa(tab, CFG)


def test_calibration_needs_enough_rows():
    with pytest.raises(CalibrationError):
        calibrate_kappa(_synthetic_table({2: 1.0, 3: 0.9}), CFG)


def test_condition_10_reports_needed_constant():
    rep = condition_10(0.5, 2.0)
    a = rep.a_bar_needed
    lhs = lambda a: 0.5 / a * (math.log(a) / math.log(2) + 3) ** 1.5
    assert lhs(a) <= 1 + 1e-9
    assert lhs(a * (1 - 1e-6)) > 1 - 1e-6
    assert rep.holds == (lhs(2.0) <= 1)
