import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from mpcexec.schedule import Schedule, ScheduleKind, StepOutOfRange, schedule_at

mpmath.mp.dps = 50


def ac_reference(Q, T, psi, t):
    psi = mpmath.mpf(psi)
    return float(Q * (1 - mpmath.sinh(psi * (T - t)) / mpmath.sinh(psi * T)))


def test_twap_midpoint():
    assert schedule_at(Schedule(ScheduleKind.TWAP, 10), 5) == 50.0


@pytest.mark.parametrize("psi", [0.0, 0.01, 0.1, 3.0])
def test_ac_endpoints(psi):
    s = Schedule(ScheduleKind.AC, 10, psi=psi)
    assert s.at(0) == 0.0
    assert s.at(10) == 100.0


def test_ac_worked_value():
    got = Schedule(ScheduleKind.AC, 10, psi=0.1).at(5)
    assert got == pytest.approx(55.66, abs=5e-3)
    assert got == pytest.approx(ac_reference(100, 10, 0.1, 5), rel=1e-14)


def test_ac_default_urgency_is_one_over_horizon():
    s = Schedule(ScheduleKind.AC, 78)
    assert s.psi * s.T == pytest.approx(1.0)
    assert abs(s.at(39) - ac_reference(100, 78, 1 / 78, 39)) <= 1e-12


@given(st.integers(1, 400), st.floats(1e-6, 50))
def test_ac_matches_high_precision(T, psiT):
    s = Schedule(ScheduleKind.AC, T, psi=psiT / T)
    for t in {0, T // 3, T // 2, T - 1, T}:
        assert abs(s.at(t) - ac_reference(100, T, psiT / T, t)) <= 1e-10


def test_large_urgency_is_finite():
    s = Schedule(ScheduleKind.AC, 78, psi=20.0)
    path = s.path()
    assert np.isfinite(path).all()
    assert path[1] == pytest.approx(100 * (1 - math.exp(-20.0)), rel=1e-12)
    assert (np.diff(path) >= 0).all()


@st.composite
def schedules(draw):
    T = draw(st.integers(1, 200))
    kind = draw(st.sampled_from(list(ScheduleKind)))
    if kind is ScheduleKind.AC:
        return Schedule(kind, T, psi=draw(st.floats(0, 5)) / T * draw(st.sampled_from([1, 10])))
    if kind is ScheduleKind.VWAP:
        inc = draw(st.lists(st.integers(0, 1000), min_size=T, max_size=T))
        if sum(inc) == 0:
            inc[-1] = 1
        return Schedule(kind, T, profile=np.concatenate([[0], np.cumsum(inc)]))
    return Schedule(kind, T)


@given(schedules())
def test_boundaries_and_monotone(s):
    path = s.path()
    assert path[0] == 0.0 and path[-1] == s.Q
    assert (np.diff(path) >= -1e-12).all()


@given(st.integers(2, 200), st.floats(1e-3, 10))
def test_ac_front_loaded(T, psiT):
    ac = Schedule(ScheduleKind.AC, T, psi=psiT / T).path()
    tw = Schedule(ScheduleKind.TWAP, T).path()
    assert (ac[1:-1] > tw[1:-1]).all()


@given(st.integers(1, 100), st.floats(0.5, 1e6), st.floats(0, 1e6))
def test_linear_profile_gives_twap(T, rate, offset):
    prof = offset + rate * np.arange(T + 1)
    v = Schedule(ScheduleKind.VWAP, T, profile=prof).path()
    assert np.allclose(v, Schedule(ScheduleKind.TWAP, T).path(), rtol=1e-9, atol=1e-9)


def test_errors():
    s = Schedule(ScheduleKind.TWAP, 5)
    with pytest.raises(StepOutOfRange):
        s.at(6)
    with pytest.raises(StepOutOfRange):
        s.at(-1)
    with pytest.raises(ValueError):
        Schedule(ScheduleKind.VWAP, 3)
    with pytest.raises(ValueError):
        Schedule(ScheduleKind.VWAP, 3, profile=[0, 1, 2])
    with pytest.raises(ValueError):
        Schedule(ScheduleKind.TWAP, 0)
