"""Scenario description, force profiles and YAML loading/validation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .admittance import ConfigError, ParameterSchedule
from .decomposition import DEFAULT_SIGMA_TOL
from .kinematics import PRESETS, ChainModel, KinematicsError
from .tank import TankConfigError, TankState

log = logging.getLogger(__name__)

STRATEGIES = ("null_refill", "damping_injection", "none")


class ScenarioError(ValueError):
    """Scenario file could not be parsed or violates an invariant."""


@dataclass(frozen=True)
class ForceProfile:
    """External wrench F_e(t) (6-vector), held constant between samples.

    kinds:
      zero       -- no force
      constant   -- ``wrench`` for all t
      square     -- ``amplitude`` on ``axis``, sign flipping every ``half_period``
      samples    -- rows ``[t, fx, fy, fz, tx, ty, tz]``, zero-order hold
      random_steps -- seeded piecewise-constant levels on ``axis`` with
                      |level| <= amplitude and holds in [hold_min, hold_max]
    """

    kind: str = "square"
    axis: int = 2
    amplitude: float = 2.0
    half_period: float = 10.0
    start_sign: int = 1
    wrench: tuple = (0.0,) * 6
    samples: tuple = ()
    hold_min: float = 2.0
    hold_max: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "square", "samples", "random_steps"):
            raise ScenarioError(f"unknown force profile kind {self.kind!r}")
        if not 0 <= self.axis < 6:
            raise ScenarioError("force axis must be in 0..5")
        if self.kind == "square" and self.half_period <= 0:
            raise ScenarioError("half_period must be positive")
        if self.kind == "random_steps" and not 0 < self.hold_min <= self.hold_max:
            raise ScenarioError("random_steps needs 0 < hold_min <= hold_max")

    def sampled(self, duration: float) -> "ForceProfile":
        """Resolve ``random_steps`` into explicit samples (deterministic in seed)."""
        if self.kind != "random_steps":
            return self
        rng = np.random.default_rng(self.seed)
        rows, t = [], 0.0
        while t < duration:
            w = [0.0] * 6
            w[self.axis] = float(rng.uniform(-self.amplitude, self.amplitude))
            rows.append((t, *w))
            t += float(rng.uniform(self.hold_min, self.hold_max))
        return replace(self, kind="samples", samples=tuple(rows))

    def __call__(self, t: float) -> np.ndarray:
        w = np.zeros(6)
        if self.kind == "zero":
            return w
        if self.kind == "constant":
            return np.array(self.wrench, dtype=float)
        if self.kind == "square":
            k = math.floor(t / self.half_period + 1e-9)
            w[self.axis] = self.amplitude * self.start_sign * (1 if k % 2 == 0 else -1)
            return w
        if self.kind == "samples":
            row = None
            for s in self.samples:
                if s[0] <= t + 1e-12:
                    row = s
                else:
                    break
            if row is not None:
                w[:] = row[1:7]
            return w
        raise ScenarioError("random_steps profile must be resolved with sampled()")


@dataclass(frozen=True)
class TankParams:
    eps_floor: float = 0.1
    T_star: float = 25.0
    T_bar: float = 40.0
    T0: float = 25.0

    def state(self) -> TankState:
        return TankState(self.T0, self.eps_floor, self.T_star, self.T_bar)


@dataclass(frozen=True)
class NullParams:
    delta: float = 1e-2
    gains: tuple = (0.0, 0.5, -0.5)
    omega: float = 1.0
    phase: str = "global"  # or "onset": sin restarts at each activation


@dataclass(frozen=True)
class Scenario:
    name: str
    chain: ChainModel
    q0: tuple
    strategy: str = "null_refill"
    schedule: ParameterSchedule = field(default_factory=ParameterSchedule)
    force: ForceProfile = field(default_factory=ForceProfile)
    duration: float = 60.0
    dt: float = 0.002
    M0: float = 6.0
    tank: TankParams = field(default_factory=TankParams)
    null: NullParams = field(default_factory=NullParams)
    zero_P_D: bool = False
    task_rows: tuple = (0, 1, 2)
    sigma_tol: float = DEFAULT_SIGMA_TOL
    # Test hooks: force a gate to a fixed value (negative controls).
    force_gamma: int | None = None
    force_phi: int | None = None
    defaulted: tuple = ()

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def m1(self) -> int:
        return len(self.task_rows)

    def validate(self) -> "Scenario":
        if self.strategy not in STRATEGIES:
            raise ScenarioError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not self.dt > 0:
            raise ScenarioError("dt must be positive")
        if not self.duration >= self.dt:
            raise ScenarioError("duration must be at least one step")
        if len(self.q0) != self.chain.n:
            raise ScenarioError(f"q0 has {len(self.q0)} entries, chain has {self.chain.n} joints")
        m2 = self.chain.n - self.m1
        if m2 < 1:
            raise ScenarioError("task leaves no redundancy (m1 >= n)")
        if len(self.null.gains) != m2:
            raise ScenarioError(f"need {m2} null gains, got {len(self.null.gains)}")
        if self.null.delta <= 0:
            raise ScenarioError("null damping delta must be positive")
        if self.null.phase not in ("global", "onset"):
            raise ScenarioError("null phase must be 'global' or 'onset'")
        if self.M0 <= 0:
            raise ScenarioError("M0 must be positive")
        if sorted(set(self.task_rows)) != sorted(self.task_rows) or not all(
            0 <= r < 6 for r in self.task_rows
        ):
            raise ScenarioError("task_rows must be distinct indices in 0..5")
        if self.schedule.axis >= self.m1:
            raise ScenarioError("schedule axis must index the task force")
        try:
            self.tank.state()
            self.schedule.validate(self.M0 * np.eye(self.m1))
        except (TankConfigError, ConfigError) as exc:
            raise ScenarioError(str(exc)) from exc
        return self


def random_scenario(seed: int, duration: float = 5.0, dt: float = 0.002) -> Scenario:
    """Randomised stress scenario: forces up to 10 N, inertia steps up to 5 kg.

    Tank level, damping, refill strategy and the P_D credit are drawn as
    well, with a bias toward low tank levels so the floor logic is exercised.
    """
    rng = np.random.default_rng(seed)
    delta_M = float(rng.uniform(0.0, 5.0))
    M0 = float(rng.uniform(delta_M + 1.0, delta_M + 10.0))
    D0 = float(rng.uniform(1.0, 5.0))
    eps = 0.1
    T0 = float(eps + rng.uniform(0.0, 1.0) ** 3 * 30.0)
    force = ForceProfile(
        kind="random_steps",
        axis=int(rng.integers(0, 3)),
        amplitude=float(rng.uniform(0.5, 10.0)),
        hold_min=0.3,
        hold_max=2.0,
        seed=int(rng.integers(0, 2**31)),
    )
    sched = ParameterSchedule(
        delta_M=delta_M,
        ramp_duration=float(rng.choice([0.0, 0.1, 0.5])),
        D_nominal=D0,
        D_injected=D0 + float(rng.uniform(0.0, 5.0)),
        axis=force.axis,
        increase_on=str(rng.choice(["negative", "positive"])),
    )
    gains = tuple(float(g) for g in rng.uniform(-1.0, 1.0, 3))
    return Scenario(
        name=f"random_{seed}",
        chain=PRESETS["ur10e_like"](40.0),
        q0=(-0.48, 0.98, -1.03, 1.04, -0.96, 2.5),
        strategy=str(rng.choice(["null_refill", "null_refill", "damping_injection"])),
        schedule=sched,
        force=force,
        duration=duration,
        dt=dt,
        M0=M0,
        tank=TankParams(eps, 25.0, 40.0, T0),
        null=NullParams(float(rng.uniform(0.2, 3.0)), gains, float(rng.uniform(0.5, 3.0))),
        zero_P_D=bool(rng.integers(0, 2)),
    ).validate()


# -- loading ---------------------------------------------------------------

_TOP_KEYS = {
    "name", "chain", "q0", "strategy", "schedule", "force", "duration", "dt",
    "admittance", "tank", "null_space", "test", "task_rows", "sigma_tol",
}


def bundled_dir():
    return resources.files("nullrefill") / "scenarios"


def bundled_names() -> list[str]:
    return sorted(p.name[:-5] for p in bundled_dir().iterdir() if p.name.endswith(".yaml"))


def resolve_path(name: str) -> Path:
    """Accept a file path or the name of a bundled scenario."""
    p = Path(name)
    if p.exists():
        return p
    for cand in (name, name + "_nullrefill"):
        res = bundled_dir() / f"{cand}.yaml"
        if res.is_file():
            return Path(str(res))
    raise ScenarioError(f"scenario not found: {name}")


def _sub(doc: dict, key: str) -> dict:
    val = doc.get(key) or {}
    if not isinstance(val, dict):
        raise ScenarioError(f"section {key!r} must be a mapping")
    return val


def _take(section: dict, key: str, default, defaulted: list, prefix: str, cast=float):
    if key in section:
        try:
            return cast(section[key])
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{prefix}{key}: {exc}") from exc
    defaulted.append(prefix + key)
    return default


def _chain(doc: dict, defaulted: list) -> ChainModel:
    c = doc.get("chain")
    if c is None:
        defaulted.append("chain")
        return PRESETS["ur10e_like"]()
    if not isinstance(c, dict):
        raise ScenarioError("chain must be a mapping")
    scale = float(c.get("scale", 1.0))
    try:
        if "dh" in c:
            return ChainModel.from_rows(c["dh"], name=c.get("name", "custom"), scale=scale)
        preset = c.get("preset", "ur10e_like")
        if preset not in PRESETS:
            raise ScenarioError(f"unknown chain preset {preset!r}")
        return PRESETS[preset](scale)
    except KinematicsError as exc:
        raise ScenarioError(f"chain: {exc}") from exc


def scenario_from_dict(doc: dict, name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ScenarioError(f"unknown top-level keys: {sorted(unknown)}")
    d: list[str] = []
    chain = _chain(doc, d)
    q0 = doc.get("q0")
    if q0 is None:
        d.append("q0")
        q0 = (0.0,) * chain.n
    q0 = tuple(float(v) for v in q0)

    adm = _sub(doc, "admittance")
    sch = _sub(doc, "schedule")
    D0 = _take(adm, "D0", 0.75, d, "admittance.")
    schedule = ParameterSchedule(
        mode=_take(sch, "mode", "force_sign", d, "schedule.", str),
        delta_M=_take(sch, "delta_M", 3.0, d, "schedule."),
        ramp_duration=_take(sch, "ramp_duration", 0.5, d, "schedule."),
        D_nominal=D0,
        D_injected=_take(sch, "D_injected", 4.0, d, "schedule."),
        axis=_take(sch, "axis", 2, d, "schedule.", int),
        increase_on=_take(sch, "increase_on", "negative", d, "schedule.", str),
        table=tuple(tuple(float(x) for x in row) for row in sch.get("table", ())),
    )

    f = _sub(doc, "force")
    force = ForceProfile(
        kind=_take(f, "kind", "square", d, "force.", str),
        axis=_take(f, "axis", 2, d, "force.", int),
        amplitude=_take(f, "amplitude", 2.0, d, "force."),
        half_period=_take(f, "half_period", 10.0, d, "force."),
        start_sign=_take(f, "start_sign", 1, d, "force.", int),
        wrench=tuple(float(v) for v in f.get("wrench", (0.0,) * 6)),
        samples=tuple(tuple(float(v) for v in row) for row in f.get("samples", ())),
        hold_min=float(f.get("hold_min", 2.0)),
        hold_max=float(f.get("hold_max", 10.0)),
        seed=int(f.get("seed", 0)),
    )

    tk = _sub(doc, "tank")
    T_star = _take(tk, "T_star", 25.0, d, "tank.")
    tank = TankParams(
        eps_floor=_take(tk, "eps_floor", 0.1, d, "tank."),
        T_star=T_star,
        T_bar=_take(tk, "T_bar", 40.0, d, "tank."),
        T0=_take(tk, "T0", T_star, d, "tank."),
    )

    nl = _sub(doc, "null_space")
    if "gains" in nl:
        gains = tuple(float(g) for g in nl["gains"])
    else:
        d.append("null_space.gains")
        gains = (0.0, 0.5, -0.5)
    null = NullParams(
        delta=_take(nl, "delta", 1e-2, d, "null_space."),
        gains=gains,
        omega=_take(nl, "omega", 1.0, d, "null_space."),
        phase=_take(nl, "phase", "global", d, "null_space.", str),
    )

    test = _sub(doc, "test")
    duration = _take(doc, "duration", 60.0, d, "")
    sc = Scenario(
        name=str(doc.get("name", name)),
        chain=chain,
        q0=q0,
        strategy=_take(doc, "strategy", "null_refill", d, "", str),
        schedule=schedule,
        force=force,
        duration=duration,
        dt=_take(doc, "dt", 0.002, d, ""),
        M0=_take(adm, "M0", 6.0, d, "admittance."),
        tank=tank,
        null=null,
        zero_P_D=bool(test.get("zero_P_D", False)),
        task_rows=tuple(int(r) for r in doc.get("task_rows", (0, 1, 2))),
        sigma_tol=float(doc.get("sigma_tol", DEFAULT_SIGMA_TOL)),
        force_gamma=test.get("force_gamma"),
        force_phi=test.get("force_phi"),
        defaulted=tuple(d),
    )
    return sc.validate()


def load_scenario(path) -> Scenario:
    """Parse and validate a YAML scenario file (or bundled scenario name)."""
    p = resolve_path(str(path))
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ScenarioError(f"{p}: parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    sc = scenario_from_dict(doc, name=p.stem)
    if sc.defaulted:
        log.info("%s: defaulted: %s", sc.name, ", ".join(sc.defaulted))
    return sc
