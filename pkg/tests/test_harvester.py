import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nullrefill.harvester import (
    NullState,
    d_N_update,
    f_null,
    harvest_capacity,
    harvest_power,
    null_step,
    p_null,
    step_p_null,
)

GAINS = (0.0, 0.5, -0.5)


def test_f_null_examples():
    np.testing.assert_allclose(f_null(20.0, 25.0, math.pi / 2, GAINS, 1.0), [0, 2.5, -2.5])
    assert not f_null(25.0, 25.0, math.pi / 2, GAINS, 1.0).any()
    np.testing.assert_allclose(f_null(24.9, 25.0, 0.0, GAINS, 1.0), 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 50.0), st.floats(-100, 100), st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.floats(0.01, 10))
def test_f_null_bound(T, t, gains, omega):
    F = f_null(T, 25.0, t, gains, omega)
    assert np.abs(F).max() <= max(abs(g) for g in gains) * abs(T - 25.0) + 1e-12
    if T >= 25.0:
        assert not F.any()


def test_d_N_examples():
    v2 = np.array([0.5, 0.0, 0.0])
    assert d_N_update(0.1, True, v2, P_M=3.0, P_D=0.5, gamma=1, delta=1.0) == pytest.approx(10.0)
    assert d_N_update(5.0, False, v2, 3.0, 0.5, 1, 1.0) == 1.0
    assert d_N_update(0.1, True, v2, 0.4, 0.5, 1, 1.0) == 1.0
    assert d_N_update(0.1, True, v2, 3.0, 0.5, 0, 1.0) == 1.0
    assert d_N_update(0.1, True, np.zeros(3), 3.0, 0.5, 1, 1.0) == 1.0
    with pytest.raises(ValueError):
        d_N_update(0.1, True, v2, 3.0, 0.5, 1, 0.0)


def test_discrete_d_N_tends_to_continuous_law():
    v2 = np.array([0.5, 0.0, 0.0])
    d = [d_N_update(0.1, True, v2, 3.0, 0.5, 1, 1.0, dt=dt) for dt in (1e-3, 1e-4, 1e-5)]
    errs = [abs(x - 10.0) for x in d]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-2


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-2, 2), min_size=3, max_size=3),
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.floats(0.0, 20.0), st.floats(0.0, 5.0), st.floats(1e-3, 2.0),
)
def test_floor_guarantee(v2, F, P_M, P_D, delta):
    v2, F, dt = np.array(v2), np.array(F), 0.002
    if np.linalg.norm(v2) <= 1e-6:
        return
    d = d_N_update(0.1, True, v2, P_M, P_D, 1, delta, dt=dt, F_null=F)
    need = P_M - P_D
    if math.isinf(d):
        assert harvest_capacity(v2, F, dt) < need
        return
    assert d >= delta
    s = NullState(v2, d, delta, F, np.zeros(3))
    P_N = step_p_null(s, null_step(s, dt))
    assert P_N == pytest.approx(harvest_power(v2, F, d, dt), rel=1e-12, abs=1e-15)
    assert P_D + P_N - P_M >= -1e-12 * max(1.0, P_M)


def test_decay_without_excitation():
    d, dt = 2.0, 0.002
    s = NullState.initial(GAINS, d, v2=np.array([1.0, -2.0, 0.5]))
    v0 = np.linalg.norm(s.v2)
    for _ in range(int(round(5 / d / dt))):
        s = null_step(s, dt)
    assert np.linalg.norm(s.v2) <= 0.007 * v0
    assert np.linalg.norm(s.v2) == pytest.approx(v0 * math.exp(-5), rel=1e-4)


def test_rest_is_equilibrium():
    s = NullState.initial(GAINS, 1.0)
    for _ in range(10):
        s = null_step(s, 0.002)
    assert not s.v2.any()


def test_steady_state_under_constant_force():
    f = np.array([0.0, 1.0, -2.0])
    s = NullState(np.zeros(3), 1.0, 1.0, f, np.zeros(3))
    for _ in range(int(20 / 0.002)):
        s = null_step(s, 0.002)
    np.testing.assert_allclose(s.v2, f / 1.0, rtol=1e-3)


def test_null_step_errors():
    s = NullState.initial(GAINS, 1.0)
    with pytest.raises(ValueError):
        null_step(s, 0.0)
    with pytest.raises(FloatingPointError):
        null_step(NullState(np.array([np.inf, 0, 0]), 1.0, 1.0, np.zeros(3), np.zeros(3)), 0.002)
    with pytest.raises(ValueError):
        NullState.initial(GAINS, 0.0)


def test_p_null_examples():
    assert p_null(NullState(np.array([0, 0, 1.0]), 1.0, 1.0, np.zeros(3), np.zeros(3))) == 1.0
    assert p_null(NullState.initial(GAINS, 1.0)) == 0.0
    assert p_null(NullState(np.array([0.5, 0, 0]), 7.0, 7.0, np.zeros(3), np.zeros(3))) == 1.75


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.floats(1e-2, 50.0), st.floats(1e-4, 1e-2),
)
def test_null_energy_identity(v2, F, d, dt):
    # Delta H2 = dt (F.v_mid - P_N) exactly for the midpoint damper
    s = NullState(np.array(v2), d, d, np.array(F), np.zeros(3))
    new = null_step(s, dt)
    P_N = step_p_null(s, new)
    v_mid = 0.5 * (s.v2 + new.v2)
    dH = new.kinetic_energy() - s.kinetic_energy()
    assert P_N >= 0
    assert abs(dH - dt * (float(s.F_null @ v_mid) - P_N)) <= 1e-12 * max(1.0, s.kinetic_energy())
