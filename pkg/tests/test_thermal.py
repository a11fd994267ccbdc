import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from firesense.errors import DomainError
from firesense.structgen import FirePoint
from firesense.thermal import (SpreadParams, TempCurve, arrival_t1, element_temperature_array,
                               element_temperatures, rate_c, temperature_at)

P = SpreadParams()


def test_iso_stage_at_one_hour():
    assert temperature_at(60.0, TempCurve(5.0, 0.0)) == pytest.approx(345 * math.log10(481), abs=1e-12)
    assert temperature_at(60.0, TempCurve(5.0, 0.0)) == pytest.approx(925.3, abs=0.1)


def test_linear_stage():
    curve = TempCurve(2.5, 20.0)
    assert temperature_at(10.0, curve) == pytest.approx(25.0)
    assert temperature_at(0.0, curve) == 0.0


def test_curve_continuous_at_t1():
    curve = TempCurve(3.0, 12.0)
    below = temperature_at(12.0 - 1e-9, curve)
    at = temperature_at(12.0, curve)
    assert at == pytest.approx(36.0)
    assert abs(at - below) < 1e-6


def test_time_domain_enforced():
    with pytest.raises(DomainError):
        temperature_at(-0.1, TempCurve(1.0, 1.0))
    with pytest.raises(DomainError):
        temperature_at(60.5, TempCurve(1.0, 1.0))


@pytest.mark.parametrize("h,h_f,c", [(1, 1, 5.0), (2, 1, 2.5), (5, 1, 1.0), (1, 2, 2.0), (1, 3, 1.0)])
def test_rate(h, h_f, c):
    assert rate_c(h, h_f) == pytest.approx(c)


def test_geometric_betas():
    assert P.beta_up(2) == pytest.approx(31.2, abs=1e-9)
    assert P.beta_up(1) == pytest.approx(16.0)
    assert P.beta_down(1) == pytest.approx(30.0)
    assert P.beta_down(2) == pytest.approx(30 * (1 + 0.97))
    assert P.beta_up(-3) == P.beta_up(3)


def test_horizontal_arrival():
    fire = FirePoint(0.0, 0.0, 1.5, 1)
    assert arrival_t1((18.0, 0.0, 99.0), 1, fire) == pytest.approx(18 * (1 - math.exp(-1)), abs=1e-12)
    assert arrival_t1((18.0, 0.0, 1.5), 1, fire) == pytest.approx(11.378, abs=1e-3)
    assert arrival_t1((0.0, 0.0, 1.5), 1, fire) == 0.0


def test_vertical_arrival_uses_3d_distance():
    fire = FirePoint(0.0, 0.0, 1.0, 1)
    mid = (3.0, 4.0, 1.0 + 12.0)  # L_s = 13
    up = arrival_t1(mid, 3, fire)
    assert up == pytest.approx(P.beta_up(2) * (1 - math.exp(-13 / 10)))
    fire_hi = FirePoint(0.0, 0.0, 13.0, 3)
    down = arrival_t1((3.0, 4.0, 1.0), 1, fire_hi)
    assert down == pytest.approx(P.beta_down(2) * (1 - math.exp(-13 / 5)))


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 50), st.floats(0, 50), st.integers(-4, 4))
def test_arrival_monotone_in_distance(d1, d2, dh):
    lo, hi = sorted((d1, d2))
    fire = FirePoint(0.0, 0.0, 10.0, 4)
    h = 4 + dh
    z = 10.0 if dh == 0 else 10.0 + dh * 3.0
    t_lo = arrival_t1((lo, 0.0, z), h, fire)
    t_hi = arrival_t1((hi, 0.0, z), h, fire)
    assert t_lo <= t_hi + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 40), st.floats(0, 40), st.floats(0.05, 1.0))
def test_temperature_non_increasing_with_arrival_for_slow_rates(t_a, t_b, c):
    # later arrival never heats more when c <= 1198.6 / (481 - 8 t1) holds on the whole range
    lo, hi = sorted((t_a, t_b))
    assert temperature_at(60, TempCurve(c, hi)) <= temperature_at(60, TempCurve(c, lo)) + 1e-9


def test_fast_growth_can_exceed_immediate_iso():
    # With c = 5 the linear stage outruns the log curve: a later switch is hotter.
    immediate = temperature_at(60, TempCurve(5.0, 0.0))
    delayed = temperature_at(60, TempCurve(5.0, 18.0))
    assert delayed > immediate


def test_element_temperatures(small_structure, fire):
    arr = element_temperature_array(small_structure, fire)
    d = element_temperatures(small_structure, fire)
    assert arr.shape == (len(small_structure.elements),)
    assert [d[e.id] for e in small_structure.elements] == pytest.approx(arr.tolist())
    assert np.all(arr > 0)
    assert np.all(arr < 1200)


def test_params_validation():
    with pytest.raises(ValueError):
        SpreadParams(alpha_up=0)
    with pytest.raises(ValueError):
        SpreadParams(r_up=1.0)
