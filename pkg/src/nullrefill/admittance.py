"""Time-varying admittance dynamics of the main task.

    M(t) x1_ddot + (D(t) + psi I) x1_dot = F1

The velocity update treats the damping force at the step midpoint, so one
step changes the kinetic energy H1 = 1/2 x1_dot^T M x1_dot by exactly

    dt * (F1 . v_mid - v_mid^T (D + psi I) v_mid) + 1/2 v_new^T dM v_new

where dM = M_dot * dt is the inertia change applied during the step. The
position is advanced with the updated velocity.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

V_EPS = 1e-6
X_EPS = 1e-6
SIGN_HYSTERESIS = 1e-3


class ConfigError(ValueError):
    """Invalid admittance or schedule parameters."""


@dataclass(frozen=True)
class AdmittanceState:
    x1: np.ndarray
    x1dot: np.ndarray
    M: np.ndarray
    D: np.ndarray
    Mdot: np.ndarray
    psi: float = 0.0

    @classmethod
    def initial(cls, M, D, x1=None, x1dot=None) -> "AdmittanceState":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        D = np.atleast_2d(np.asarray(D, dtype=float))
        m1 = M.shape[0]
        x1 = np.zeros(m1) if x1 is None else np.asarray(x1, dtype=float)
        x1dot = np.zeros(m1) if x1dot is None else np.asarray(x1dot, dtype=float)
        s = cls(x1, x1dot, M, D, np.zeros_like(M), 0.0)
        s.validate()
        return s

    def validate(self):
        m1 = self.M.shape[0]
        for name in ("M", "D", "Mdot"):
            A = getattr(self, name)
            if A.shape != (m1, m1):
                raise ConfigError(f"{name} must be {m1}x{m1}")
            if not np.allclose(A, A.T, rtol=0, atol=1e-12):
                raise ConfigError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(self.M)[0] <= 0:
            raise ConfigError("inertia M must be positive definite")
        if np.linalg.eigvalsh(self.D + self.psi * np.eye(m1))[0] < -1e-12:
            raise ConfigError("damping D + psi I must be positive semidefinite")

    def kinetic_energy(self) -> float:
        return 0.5 * float(self.x1dot @ self.M @ self.x1dot)


def _check_finite(*arrays):
    # a sum is non-finite iff some entry is (or it overflows, also an error)
    for a in arrays:
        if not math.isfinite(float(a.sum())):
            raise FloatingPointError("non-finite value in admittance update")


def admittance_acceleration(s: AdmittanceState, F1) -> np.ndarray:
    """Continuous-time acceleration M^-1 (F1 - (D + psi I) x1_dot)."""
    F1 = np.asarray(F1, dtype=float)
    return np.linalg.solve(s.M, F1 - s.D @ s.x1dot - s.psi * s.x1dot)


def admittance_step(s: AdmittanceState, F1, dt: float) -> AdmittanceState:
    """Advance the admittance by one step of length ``dt``.

    Uses M at the start of the step for the momentum balance, then applies
    the inertia increment ``Mdot * dt``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    F1 = np.asarray(F1, dtype=float)
    m = s.M.shape[0]
    A_inv, B = _step_matrices(s.M.tobytes(), s.D.tobytes(), m, float(s.psi), float(dt))
    v_new = A_inv.dot(B.dot(s.x1dot) + dt * F1)
    x1_new = s.x1 + dt * v_new
    # a non-finite force or velocity propagates into x1_new
    _check_finite(x1_new)
    # keep M's identity while it is constant so the step matrices stay cached
    M_new = s.M + s.Mdot * dt if s.Mdot.any() else s.M
    return AdmittanceState(x1_new, v_new, M_new, s.D, s.Mdot, s.psi)


@lru_cache(maxsize=32)
def _step_matrices(M_bytes: bytes, D_bytes: bytes, m: int, psi: float, dt: float):
    """``(M + H)^-1`` and ``M - H`` with ``H = dt/2 (D + psi I)``; cached because
    M and D stay constant over most steps."""
    M = np.frombuffer(M_bytes).reshape(m, m)
    half = 0.5 * dt * (np.frombuffer(D_bytes).reshape(m, m) + psi * np.eye(m))
    A_inv = np.linalg.inv(M + half)
    B = M - half
    A_inv.flags.writeable = False
    B.flags.writeable = False
    return A_inv, B


def compute_powers(s: AdmittanceState) -> tuple[float, float]:
    """Instantaneous dissipated power P_D (over D + psi I) and inertia power P_M."""
    v = s.x1dot
    P_D = float(v @ s.D @ v) + s.psi * float(v @ v)
    P_M = 0.5 * float(v @ s.Mdot @ v)
    return P_D, P_M


@dataclass(frozen=True)
class StepPowers:
    """Powers realised over one discrete admittance step."""

    P_D: float  # dissipation in D (excluding psi)
    P_psi: float  # dissipation in psi I
    P_M: float
    port: float  # F1 . v_mid


def step_powers(before: AdmittanceState, after: AdmittanceState, F1) -> StepPowers:
    v_mid = 0.5 * (before.x1dot + after.x1dot)
    v = after.x1dot
    return StepPowers(
        P_D=float(v_mid.dot(before.D.dot(v_mid))),
        P_psi=before.psi * float(v_mid.dot(v_mid)) if before.psi else 0.0,
        P_M=0.5 * float(v.dot(before.Mdot.dot(v))),
        port=float(v_mid.dot(F1)),
    )


def psi_update(
    s: AdmittanceState,
    tank_at_floor: bool,
    v2,
    P_M: float,
    P_D: float,
    v2_eps: float = V_EPS,
    x_eps: float = X_EPS,
) -> float:
    """Main-task damping injected when the tank sits at its floor and the
    null motion is at rest."""
    if not tank_at_floor:
        return 0.0
    if np.linalg.norm(v2) > v2_eps:
        return 0.0
    vv = float(s.x1dot @ s.x1dot)
    if np.sqrt(vv) <= x_eps:
        return 0.0
    return max((P_M - P_D) / vv, 0.0)


def psi_for_balance(
    s: AdmittanceState,
    F1,
    dt: float,
    phi: int,
    gamma: int,
    credit_D: float,
    other_inflow: float,
) -> float:
    """Smallest psi >= 0 making the step's tank flow non-negative.

    The flow is ``phi * (credit_D * P_D + P_psi) + other_inflow - gamma * P_M``
    evaluated on the discrete step taken with that psi; ``credit_D`` is the
    credited fraction of the D dissipation. ``other_inflow``
    covers every contribution independent of psi (null harvest, slack above
    the floor). Falls back to the most dissipative psi if no root exists.
    """

    def flow(psi):
        trial = replace(s, psi=psi)
        p = step_powers(trial, admittance_step(trial, F1, dt), F1)
        return phi * (credit_D * p.P_D + p.P_psi) + other_inflow - gamma * p.P_M

    if flow(0.0) >= 0.0:
        return 0.0
    # Beyond ~2 M / dt the midpoint update overshoots and dissipates less.
    psi_hi = 2.0 * float(np.linalg.eigvalsh(s.M)[0]) / dt
    if flow(psi_hi) < 0.0:
        return psi_hi
    psi = brentq(flow, 0.0, psi_hi, xtol=1e-14, rtol=1e-15)
    while flow(psi) < 0.0:
        psi = psi * (1 + 1e-12) + 1e-15
    return psi


@dataclass(frozen=True)
class ParameterSchedule:
    """How M and D are varied during a run.

    ``force_sign`` mode ramps M by +/- delta_M (times identity) whenever the
    driving force component changes sign; ``time_table`` applies the
    ``(time, delta)`` pairs of ``table`` at the given instants. A
    ``ramp_duration`` of 0 applies the change within a single step.
    """

    mode: str = "force_sign"
    delta_M: float = 3.0
    ramp_duration: float = 0.5
    D_nominal: float = 0.75
    D_injected: float = 4.0
    axis: int = 2
    increase_on: str = "negative"
    hysteresis: float = SIGN_HYSTERESIS
    table: tuple = field(default_factory=tuple)

    def validate(self, M0):
        if self.mode not in ("force_sign", "time_table"):
            raise ConfigError(f"unknown schedule mode {self.mode!r}")
        if self.ramp_duration < 0:
            raise ConfigError("ramp_duration must be >= 0")
        if self.delta_M < 0:
            raise ConfigError("delta_M must be >= 0")
        if self.increase_on not in ("negative", "positive"):
            raise ConfigError("increase_on must be 'negative' or 'positive'")
        if self.D_nominal < 0 or self.D_injected < 0:
            raise ConfigError("damping levels must be >= 0")
        lam = float(np.linalg.eigvalsh(np.atleast_2d(M0))[0])
        if self.mode == "force_sign":
            if lam - self.delta_M <= 0:
                raise ConfigError(
                    f"inertia step {self.delta_M} kg would make M non positive definite"
                )
        else:
            level = 0.0
            for _, delta in sorted(self.table):
                level += delta
                if lam + level <= 0:
                    raise ConfigError("time table drives M non positive definite")


class InertiaScheduler:
    """Stateful driver of the inertia schedule.

    Ramps never overlap: a change requested while a ramp is running is
    queued and starts from the M reached when the current ramp ends.
    """

    def __init__(self, sched: ParameterSchedule, dt: float):
        self.sched = sched
        self.dt = dt
        self._sign = 0
        self._queue: list[float] = []
        self._target = None
        self._steps_left = 0
        self._table = sorted(sched.table)
        self._table_idx = 0
        self.net_requested = 0.0

    def _request(self, delta: float):
        if delta != 0.0:
            self._queue.append(delta)
            self.net_requested += delta

    def _detect(self, F1, t: float):
        sched = self.sched
        if sched.mode == "force_sign":
            f = float(F1[sched.axis])
            new = 1 if f > sched.hysteresis else (-1 if f < -sched.hysteresis else 0)
            if new == 0:
                return
            if self._sign == 0:
                self._sign = new
                return
            if new != self._sign:
                self._sign = new
                inc = (new < 0) == (sched.increase_on == "negative")
                self._request(sched.delta_M if inc else -sched.delta_M)
        else:
            while self._table_idx < len(self._table) and self._table[self._table_idx][0] <= t + 1e-12:
                self._request(float(self._table[self._table_idx][1]))
                self._table_idx += 1

    def schedule_step(self, s: AdmittanceState, F1, t: float) -> AdmittanceState:
        """Return ``s`` with the inertia rate to apply over the step at ``t``."""
        self._detect(F1, t)
        m1 = s.M.shape[0]
        if self._steps_left == 0 and self._queue:
            delta = self._queue.pop(0)
            self._target = s.M + delta * np.eye(m1)
            self._steps_left = max(1, int(round(self.sched.ramp_duration / self.dt)))
        if self._steps_left == 0:
            return AdmittanceState(s.x1, s.x1dot, s.M, s.D, np.zeros_like(s.M), s.psi)
        # Spread the remaining change evenly so the ramp lands on target.
        Mdot = (self._target - s.M) / (self._steps_left * self.dt)
        self._steps_left -= 1
        return AdmittanceState(s.x1, s.x1dot, s.M, s.D, Mdot, s.psi)

    @property
    def ramping(self) -> bool:
        return self._steps_left > 0
