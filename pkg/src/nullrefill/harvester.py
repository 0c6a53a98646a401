"""Damped null-space motion used to harvest energy for the tank.

The self-motion coordinates obey unit-inertia dynamics

    v2_dot = -d_N v2 + F_null

with the damping force taken at the step midpoint, so a step dissipates
exactly ``dt * d_N |v_mid|^2`` and never a negative amount.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

V2_EPS = 1e-6


@dataclass(frozen=True)
class NullState:
    v2: np.ndarray
    d_N: float
    delta: float
    F_null: np.ndarray
    gains: np.ndarray
    omega: float = 1.0

    @classmethod
    def initial(cls, gains, delta: float, omega: float = 1.0, v2=None) -> "NullState":
        gains = np.asarray(gains, dtype=float)
        if delta <= 0:
            raise ValueError("minimum null damping delta must be positive")
        v2 = np.zeros(gains.shape[0]) if v2 is None else np.asarray(v2, dtype=float)
        return cls(v2, delta, delta, np.zeros_like(v2), gains, omega)

    def kinetic_energy(self) -> float:
        return 0.5 * float(self.v2 @ self.v2)


def f_null(T: float, T_star: float, t: float, gains, omega: float) -> np.ndarray:
    """Excitation ``gains * |T - T*| * sin(omega t)``, active only below T*."""
    gains = np.asarray(gains, dtype=float)
    if T >= T_star:
        return np.zeros_like(gains)
    return gains * (abs(T - T_star) * math.sin(omega * t))


def _mid_velocity(v2, F, d, dt):
    return (v2 + 0.5 * dt * F) / (1.0 + 0.5 * dt * d)


def harvest_power(v2, F, d: float, dt: float) -> float:
    """Power dissipated over one step with damping ``d`` (dt = 0: instantaneous)."""
    w = _mid_velocity(np.asarray(v2, dtype=float), np.asarray(F, dtype=float), d, dt)
    return d * float(w @ w)


def harvest_capacity(v2, F, dt: float) -> float:
    """Largest power one step can harvest, reached at d = 2 / dt."""
    w = np.asarray(v2, dtype=float) + 0.5 * dt * np.asarray(F, dtype=float)
    return float(w @ w) / (2.0 * dt)


def d_N_update(
    T: float,
    at_floor: bool,
    v2,
    P_M: float,
    P_D: float,
    gamma: int,
    delta: float,
    dt: float = 0.0,
    F_null=None,
    v2_eps: float = V2_EPS,
) -> float:
    """Null damping: ``delta`` normally, raised at the floor to cover the deficit.

    With ``dt = 0`` this is ``max((gamma P_M - P_D) / v2.v2, delta)``. With
    ``dt > 0`` the damping is chosen so the discrete step's dissipation
    (midpoint velocity, excitation ``F_null``) meets the same deficit; the
    two coincide as dt -> 0. Returns ``inf`` when one step cannot harvest
    enough.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    v2 = np.asarray(v2, dtype=float)
    if not at_floor or np.linalg.norm(v2) <= v2_eps:
        return delta
    need = gamma * P_M - P_D
    if dt == 0.0:
        return max(need / float(v2 @ v2), delta)
    F = np.zeros_like(v2) if F_null is None else np.asarray(F_null, dtype=float)
    if need <= harvest_power(v2, F, delta, dt):
        return delta
    w = v2 + 0.5 * dt * F
    W = float(w @ w)
    disc = W * (W - 2.0 * need * dt)
    if disc < 0.0:
        return math.inf
    # smallest root of need * (1 + dt d / 2)^2 = d W, in cancellation-free form
    return max(2.0 * need / ((W - need * dt) + math.sqrt(disc)), delta)


def null_step(s: NullState, dt: float) -> NullState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    h = 0.5 * dt * s.d_N
    v_new = ((1.0 - h) * s.v2 + dt * s.F_null) / (1.0 + h)
    if not math.isfinite(float(v_new.sum())):
        raise FloatingPointError("non-finite null velocity")
    return NullState(v_new, s.d_N, s.delta, s.F_null, s.gains, s.omega)


def p_null(s: NullState) -> float:
    return s.d_N * float(s.v2 @ s.v2)


def step_p_null(before: NullState, after: NullState) -> float:
    """Power dissipated by the null damper over the step ``before -> after``."""
    v_mid = 0.5 * (before.v2 + after.v2)
    return before.d_N * float(v_mid @ v_mid)
