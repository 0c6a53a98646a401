"""Fixed-step closed-loop simulation of tank-based variable admittance with
null-space refill, plus the passivity monitor.

One step at t = k * dt runs, in order:

 1. task decomposition at q
 2. force sample, inertia schedule, damping level
 3. gates phi / gamma from the pre-step tank energy
 4. admittance step
 5. step powers P_D, P_M
 6. null excitation, null damping law, null step
 7. tank step
 8. floor guard: if the tank would end below its floor, the null damping is
    raised to cover the deficit; if the null motion cannot (or is at rest)
    it is stopped and main-task damping psi is solved for within the step
 9. joint velocity composition and q <- q + q_dot dt
10. storage / port-energy ledger
11. record

Every energy stream is evaluated on the discrete step itself, so

    E_in(t) + S(0) - S(t) = sum of (1 - phi)(P_D + P_N) - (1 - gamma) P_M
                            + uncredited dissipation - clamp injections

holds to round-off, and the passivity margin is exact rather than an
integration-error estimate.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .admittance import (
    AdmittanceState,
    InertiaScheduler,
    admittance_step,
    psi_for_balance,
    step_powers,
)
from .decomposition import SingularityError, decompose, selection_matrix
from .harvester import (
    V2_EPS,
    NullState,
    d_N_update,
    f_null,
    harvest_power,
    null_step,
    step_p_null,
)
from .kinematics import geometric_jacobian
from .scenario import Scenario
from .tank import needs_refill, tank_step

PASSIVITY_C = 1e-5  # W, tolerance budget per unit time and step length

FLAG_CLAMP = 1
FLAG_NEAR_SINGULAR = 2
FLAG_FLOOR = 4
FLAG_NULL_BRAKE = 8
FLAG_INJECTING = 16

FIELDS = (
    "t", "q", "qdot", "x1", "x1dot", "v2", "F1", "F_null", "M_trace", "D_trace",
    "psi", "d_N", "T", "phi", "gamma", "P_D", "P_N", "P_M", "P_psi", "S", "E_in", "flags",
)


@dataclass(frozen=True)
class StepRecord:
    t: float
    q: np.ndarray
    qdot: np.ndarray
    x1: np.ndarray
    x1dot: np.ndarray
    v2: np.ndarray
    F1: np.ndarray
    F_null: np.ndarray
    M_trace: float
    D_trace: float
    psi: float
    d_N: float
    T: float
    phi: int
    gamma: int
    P_D: float
    P_N: float
    P_M: float
    P_psi: float
    S: float
    E_in: float
    flags: int


class Records:
    """Column-stored record stream; row 0 is the initial state."""

    def __init__(self, rows: int, n: int, m1: int, m2: int):
        self.n, self.m1, self.m2 = n, m1, m2
        z = lambda *shape: np.zeros(shape)  # noqa: E731
        self.t = z(rows)
        self.q, self.qdot = z(rows, n), z(rows, n)
        self.x1, self.x1dot = z(rows, m1), z(rows, m1)
        self.x1dot_realized = z(rows, m1)
        self.v2 = z(rows, m2)
        self.F1, self.F_null = z(rows, m1), z(rows, m2)
        for name in ("M_trace", "D_trace", "psi", "d_N", "T", "P_D", "P_N", "P_M",
                     "P_psi", "S", "E_in", "sigma_min", "credited"):
            setattr(self, name, z(rows))
        self.phi = np.zeros(rows, dtype=np.int8)
        self.gamma = np.zeros(rows, dtype=np.int8)
        self.flags = np.zeros(rows, dtype=np.int64)
        self.count = 0

    _VECTORS = ("q", "qdot", "x1", "x1dot", "x1dot_realized", "v2", "F1", "F_null")
    _SCALARS = ("M_trace", "D_trace", "psi", "d_N", "T", "P_D", "P_N", "P_M", "P_psi",
                "S", "E_in", "sigma_min", "credited", "phi", "gamma", "flags")

    def fill(self, vec_rows, scalar_rows, dt: float):
        """Store rows 1.. from per-step tuples ordered as _VECTORS / _SCALARS."""
        k = len(vec_rows)
        if k == 0:
            return
        self.t[1:k + 1] = np.arange(1, k + 1) * dt
        for name, col in zip(self._VECTORS, zip(*vec_rows)):
            getattr(self, name)[1:k + 1] = col
        table = np.array(scalar_rows)
        for j, name in enumerate(self._SCALARS):
            getattr(self, name)[1:k + 1] = table[:, j]

    def truncate(self, rows: int):
        for k, v in list(vars(self).items()):
            if isinstance(v, np.ndarray):
                setattr(self, k, v[:rows])
        self.count = rows

    def __len__(self):
        return self.count

    def __getitem__(self, i) -> StepRecord:
        if not -self.count <= i < self.count:
            raise IndexError(i)
        return StepRecord(**{f: (getattr(self, f)[i].copy() if getattr(self, f).ndim > 1
                                 else getattr(self, f)[i].item()) for f in FIELDS})

    def __iter__(self):
        for i in range(self.count):
            yield self[i]


@dataclass
class RunSummary:
    scenario: str
    strategy: str
    status: str
    steps: int
    passivity_pass: bool
    worst_violation: float
    worst_step_violation: float
    passivity_tol: float
    max_velocity_deviation: float
    max_velocity_deviation_all: float
    psi_active_fraction: float
    T_min: float
    T_max: float
    clamp_count: int
    clamp_count_moving: int
    energy_harvested: float
    max_v2: float
    sigma_min: float
    basis_rate: float  # max |Z(k+1) - Z(k)|_max / |q(k+1) - q(k)|
    runtime_s: float
    message: str = ""

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class RunResult:
    scenario: Scenario
    records: Records
    summary: RunSummary
    ideal_x1dot: np.ndarray = field(repr=False, default=None)


def passivity_tolerance(scenario: Scenario) -> float:
    return PASSIVITY_C * scenario.dt * scenario.duration


def _damping(scenario: Scenario, level: float) -> np.ndarray:
    return level * np.eye(scenario.m1)


def _initial_state(scenario: Scenario):
    adm = AdmittanceState.initial(
        scenario.M0 * np.eye(scenario.m1), _damping(scenario, scenario.schedule.D_nominal)
    )
    return adm, InertiaScheduler(scenario.schedule, scenario.dt)


def force_sequence(scenario: Scenario) -> np.ndarray:
    """Task force F1 = G F_e sampled at every step start."""
    G = selection_matrix(scenario.task_rows, 6)
    force = scenario.force.sampled(scenario.duration)
    return np.array([G @ force(k * scenario.dt) for k in range(scenario.steps)])


def ideal_reference(scenario: Scenario, F1_seq=None) -> np.ndarray:
    """Task velocity of the bare admittance (scheduled M, nominal D, no tank).

    Row 0 is the initial velocity; row k+1 follows step k.
    """
    if F1_seq is None:
        F1_seq = force_sequence(scenario)
    adm, sched = _initial_state(scenario)
    out = np.zeros((len(F1_seq) + 1, scenario.m1))
    out[0] = adm.x1dot
    dt = scenario.dt
    for k, F1 in enumerate(F1_seq):
        adm = sched.schedule_step(adm, F1, k * dt)
        adm = admittance_step(adm, F1, dt)
        out[k + 1] = adm.x1dot
    return out


def run(scenario: Scenario, with_reference: bool = True) -> RunResult:
    scenario.validate()
    started = time.perf_counter()
    dt = scenario.dt
    chain = scenario.chain
    n, m1 = chain.n, scenario.m1
    m2 = n - m1
    steps = scenario.steps
    rows = list(scenario.task_rows)
    strategy = scenario.strategy
    credit_D = not scenario.zero_P_D
    sigma_tol = scenario.sigma_tol
    null_on = strategy == "null_refill"
    D_nom = _damping(scenario, scenario.schedule.D_nominal)
    D_inj = _damping(scenario, scenario.schedule.D_injected)
    nom_level = scenario.schedule.D_nominal
    brake_d = 2.0 / dt

    F1_seq = force_sequence(scenario)
    adm, sched = _initial_state(scenario)
    tank = scenario.tank.state()
    null = NullState.initial(scenario.null.gains, scenario.null.delta, scenario.null.omega)
    q = np.array(scenario.q0, dtype=float)

    rec = Records(steps + 1, n, m1, m2)
    rec.q[0] = q
    rec.M_trace[0] = np.trace(adm.M)
    rec.D_trace[0] = adm.D.trace()
    rec.T[0] = tank.T
    rec.phi[0] = tank.phi
    rec.d_N[0] = null.d_N
    S = adm.kinetic_energy() + tank.T + null.kinetic_energy()
    rec.S[0] = S
    E_in = 0.0

    prev_Z = None
    q_prev = q
    basis_rate = 0.0
    onset = 0.0
    was_refilling = False
    status, message = "ok", ""
    last = steps
    smin_run = math.inf
    vec_rows, scalar_rows = [], []
    traced_M = traced_D = None
    M_tr = D_tr = 0.0

    for k in range(steps):
        t = k * dt
        flags = 0
        # 1. decomposition
        J1 = geometric_jacobian(chain, q)[rows]
        try:
            dec = decompose(J1, sigma_tol, prev_Z)
        except SingularityError as exc:
            status = "singular"
            message = f"t={t:.3f}s: {exc}"
            last = k
            smin_run = min(smin_run, exc.sigma_min)
            break
        if prev_Z is not None:
            dq = float(np.abs(q - q_prev).max())
            if dq > 0.0:
                basis_rate = max(basis_rate, float(np.abs(dec.Z - prev_Z).max()) / dq)
        prev_Z, q_prev = dec.Z, q
        smin_run = min(smin_run, dec.sigma_min)
        if dec.sigma_min < 10 * sigma_tol * dec.sigma_max:
            flags |= FLAG_NEAR_SINGULAR

        # 2. force, schedule, damping level
        F1 = F1_seq[k]
        adm = sched.schedule_step(adm, F1, t)
        injecting = strategy == "damping_injection" and needs_refill(tank)
        adm = AdmittanceState(adm.x1, adm.x1dot, adm.M, D_inj if injecting else D_nom, adm.Mdot, 0.0)
        level = scenario.schedule.D_injected if injecting else nom_level
        if injecting:
            flags |= FLAG_INJECTING

        # 3. gates from pre-step energy
        tank = tank.gated(adm.Mdot)
        if scenario.force_gamma is not None:
            tank = replace(tank, gamma=int(scenario.force_gamma))
        if scenario.force_phi is not None:
            tank = replace(tank, phi=int(scenario.force_phi))
        phi, gamma = tank.phi, tank.gamma

        # 4-5. admittance step and its powers
        adm_new = admittance_step(adm, F1, dt)
        pw = step_powers(adm, adm_new, F1)

        # 6. null excitation and damping
        refilling = null_on and needs_refill(tank)
        if refilling and not was_refilling:
            onset = t
        was_refilling = refilling
        if null_on:
            t_exc = t - onset if scenario.null.phase == "onset" else t
            Fn = f_null(tank.T, tank.T_star, t_exc, null.gains, null.omega)
        else:
            Fn = np.zeros(m2)
        d = null.delta
        # zero_P_D withholds the nominal damping stream; injected damping still refills
        w_D = 1.0 if credit_D else (1.0 - nom_level / level if injecting and level > 0 else 0.0)
        P_Dc = w_D * pw.P_D
        P_N_nom = harvest_power(null.v2, Fn, d, dt)
        slack = (tank.T - tank.eps_floor) / dt
        predicted = tank.T + dt * (phi * (P_Dc + P_N_nom) - gamma * pw.P_M)
        psi = 0.0
        if tank.at_floor or predicted < tank.eps_floor + tank.band:
            flags |= FLAG_FLOOR
        if predicted < tank.eps_floor:
            # deficit the tank cannot absorb; 1e-12 margin keeps T >= floor
            moving = null_on and float(null.v2 @ null.v2) > V2_EPS**2
            d_req = math.inf
            if moving:
                d_req = d_N_update(tank.T, True, null.v2, pw.P_M * (1 + 1e-12),
                                   phi * P_Dc + slack, gamma, null.delta, dt, Fn)
            if math.isfinite(d_req):
                d = d_req
            else:
                # null motion exhausted: stop it and damp the main task instead
                if null_on:
                    flags |= FLAG_NULL_BRAKE
                    Fn = np.zeros(m2)
                    d = brake_d
                P_N_brake = harvest_power(null.v2, Fn, d, dt)
                # same relative margin as the d_N route
                margin = 1e-12 * gamma * pw.P_M + 1e-15
                psi = psi_for_balance(adm, F1, dt, phi, gamma, w_D,
                                      phi * P_N_brake + slack - margin)
                if psi > 0.0:
                    adm = AdmittanceState(adm.x1, adm.x1dot, adm.M, adm.D, adm.Mdot, psi)
                    adm_new = admittance_step(adm, F1, dt)
                    pw = step_powers(adm, adm_new, F1)
                    P_Dc = w_D * pw.P_D
        null = NullState(null.v2, d, null.delta, Fn, null.gains, null.omega)
        null_new = null_step(null, dt)
        P_N = step_p_null(null, null_new)

        # 7. tank
        credited = P_Dc + pw.P_psi
        tank_new, clamped = tank_step(tank, credited, P_N, pw.P_M, dt)
        if clamped:
            flags |= FLAG_CLAMP

        # 9. joints
        qdot = dec.J1_pinv @ adm_new.x1dot + dec.Z.T @ null_new.v2
        realized = J1 @ qdot
        q = q + dt * qdot

        # 10. ledger
        v2_mid = 0.5 * (null.v2 + null_new.v2)
        E_in += dt * (pw.port + float(Fn @ v2_mid))
        S = adm_new.kinetic_energy() + tank_new.T + null_new.kinetic_energy()

        # 11. record
        if adm_new.M is not traced_M:
            traced_M, M_tr = adm_new.M, adm_new.M.trace()
        if adm.D is not traced_D:
            traced_D, D_tr = adm.D, adm.D.trace()
        vec_rows.append((q, qdot, adm_new.x1, adm_new.x1dot, realized, null_new.v2, F1, Fn))
        scalar_rows.append((M_tr, D_tr, psi, d, tank_new.T, pw.P_D + pw.P_psi, P_N, pw.P_M,
                            pw.P_psi, S, E_in, dec.sigma_min, credited, phi, gamma, flags))

        adm, null, tank = adm_new, null_new, tank_new

    rec.fill(vec_rows, scalar_rows, dt)
    rec.truncate(last + 1)
    ideal = ideal_reference(scenario, F1_seq)[: last + 1] if with_reference else None
    runtime = time.perf_counter() - started
    summary = summarize(scenario, rec, ideal, status, message, runtime, smin_run, basis_rate)
    return RunResult(scenario, rec, summary, ideal)


@dataclass(frozen=True)
class PassivityReport:
    passed: bool
    worst_violation: float
    worst_step_violation: float
    tol: float
    margin: np.ndarray = field(repr=False)


def passivity_check(records: Records, tol: float, step_tol: float | None = None) -> PassivityReport:
    """Check E_in(t) + S(0) - S(t) >= -tol at every record, and the per-step
    power inequality (port energy >= storage increase) within ``step_tol``."""
    margin = records.E_in + records.S[0] - records.S
    worst = float(margin.min()) if len(margin) else 0.0
    step = np.diff(records.E_in) - np.diff(records.S)
    worst_step = float(step.min()) if step.size else 0.0
    if step_tol is None:
        step_tol = tol
    passed = worst >= -tol and worst_step >= -step_tol
    return PassivityReport(passed, worst, worst_step, tol, margin)


def velocity_deviation(records: Records, ideal: np.ndarray) -> tuple[float, float]:
    """Max |realised task velocity - ideal| over psi == 0 steps, and over all steps."""
    if ideal is None or len(records) < 2:
        return 0.0, 0.0
    dev = np.abs(records.x1dot_realized[1:] - ideal[1:len(records)]).max(axis=1)
    quiet = records.psi[1:] == 0.0
    return (float(dev[quiet].max()) if quiet.any() else 0.0), float(dev.max())


def summarize(scenario, rec: Records, ideal, status, message, runtime, smin,
              basis_rate: float = 0.0) -> RunSummary:
    tol = passivity_tolerance(scenario)
    rep = passivity_check(rec, tol)
    dev_quiet, dev_all = velocity_deviation(rec, ideal)
    steps = len(rec) - 1
    clamps = (rec.flags[1:] & FLAG_CLAMP) != 0
    v2_prev = np.linalg.norm(rec.v2[:-1], axis=1) if steps else np.zeros(0)
    return RunSummary(
        scenario=scenario.name,
        strategy=scenario.strategy,
        status=status,
        steps=steps,
        passivity_pass=bool(rep.passed),
        worst_violation=rep.worst_violation,
        worst_step_violation=rep.worst_step_violation,
        passivity_tol=tol,
        max_velocity_deviation=dev_quiet,
        max_velocity_deviation_all=dev_all,
        psi_active_fraction=float(np.mean(rec.psi[1:] > 0)) if steps else 0.0,
        T_min=float(rec.T.min()),
        T_max=float(rec.T.max()),
        clamp_count=int(clamps.sum()),
        clamp_count_moving=int((clamps & (v2_prev > V2_EPS)).sum()),
        energy_harvested=float(rec.P_N[1:].sum() * scenario.dt),
        max_v2=float(np.linalg.norm(rec.v2, axis=1).max()),
        sigma_min=float(smin),
        basis_rate=basis_rate,
        runtime_s=runtime,
        message=message,
    )
