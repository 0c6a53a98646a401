"""Energy tank with storage cap, extraction gate and non-depletion floor."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FLOOR_BAND = 0.01


class TankConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TankState:
    """Tank energy ``T`` [J]; the state ``xt = sqrt(2 T)`` is derived.

    Energy is integrated directly so the 1/xt factor of the state equation
    never appears. ``phi`` and ``gamma`` hold the gates for the next step.
    """

    T: float
    eps_floor: float = 0.1
    T_star: float = 25.0
    T_bar: float = 40.0
    phi: int = 1
    gamma: int = 0
    band: float = FLOOR_BAND

    def __post_init__(self):
        if not (0 < self.eps_floor < self.T_star < self.T_bar):
            if self.eps_floor >= self.T_star:
                raise TankConfigError(
                    f"floor exceeds target: eps_floor={self.eps_floor} >= T_star={self.T_star}"
                )
            raise TankConfigError("tank thresholds must satisfy 0 < eps_floor < T_star < T_bar")
        if self.T < self.eps_floor:
            raise TankConfigError(f"initial energy {self.T} below floor {self.eps_floor}")

    @property
    def xt(self) -> float:
        return math.sqrt(2.0 * self.T)

    @property
    def at_floor(self) -> bool:
        return self.T <= self.eps_floor + self.band

    def gated(self, Mdot) -> "TankState":
        """Evaluate both gates from the current energy and inertia rate."""
        return _evolve(self, phi=phi_gate(self.T, self.T_bar), gamma=gamma_gate(Mdot))


def _evolve(tank: TankState, **changes) -> TankState:
    # skips re-validation; only used for fields that cannot break invariants
    new = object.__new__(TankState)
    new.__dict__.update(tank.__dict__, **changes)
    return new


def phi_gate(T: float, T_bar: float) -> int:
    return 1 if T <= T_bar else 0


def gamma_gate(Mdot) -> int:
    """1 when the inertia is growing, 0 when it is constant or shrinking.

    Only isotropic-sign rates are accepted; a rate that grows some
    directions while shrinking others has no single gate value.
    """
    Mdot = np.atleast_2d(np.asarray(Mdot, dtype=float))
    if not Mdot.any():
        return 0
    diag = np.diag(Mdot)
    if not (Mdot - np.diag(diag)).any():
        lam = diag
    else:
        lam = np.linalg.eigvalsh(0.5 * (Mdot + Mdot.T))
    tol = 1e-12 * max(1.0, float(np.max(np.abs(lam))))
    pos = np.any(lam > tol)
    neg = np.any(lam < -tol)
    if pos and neg:
        raise TankConfigError("indefinite inertia rate: gate is undefined")
    return 1 if pos else 0


def tank_flow(tank: TankState, P_D: float, P_N: float, P_M: float) -> float:
    return tank.phi * (P_D + P_N) - tank.gamma * P_M


def tank_step(tank: TankState, P_D: float, P_N: float, P_M: float, dt: float):
    """Integrate the tank energy over one step using the stored gates.

    Returns ``(new_tank, clamped)``; ``clamped`` is True when the energy
    would have fallen below the floor and was held at it.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    T = tank.T + tank_flow(tank, P_D, P_N, P_M) * dt
    clamped = T < tank.eps_floor
    if clamped:
        T = tank.eps_floor
    return _evolve(tank, T=T), clamped


def needs_refill(tank: TankState) -> bool:
    return tank.T < tank.T_star
