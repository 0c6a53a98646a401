"""Serial-chain kinematics for revolute manipulators.

Each joint is described by a standard Denavit-Hartenberg row
``(a, alpha, d, theta_offset)``: link length [m], link twist [rad],
link offset [m] and joint-angle offset [rad]. The link transform is

    T_i = Rz(q_i + theta_offset) * Tz(d) * Tx(a) * Rx(alpha)

Only revolute joints are supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class KinematicsError(ValueError):
    """Raised on malformed chain descriptions or joint vectors."""


@dataclass(frozen=True)
class DHJoint:
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0


@dataclass(frozen=True)
class ChainModel:
    """Purely kinematic description of an n-DOF revolute chain."""

    joints: tuple[DHJoint, ...]
    name: str = "chain"
    _rows: np.ndarray = field(init=False, repr=False, compare=False)
    _fixed: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.joints) < 1:
            raise KinematicsError("a chain needs at least one joint")
        rows = np.array(
            [[j.a, j.alpha, j.d, j.theta_offset] for j in self.joints], dtype=float
        )
        if not np.all(np.isfinite(rows)):
            raise KinematicsError("DH parameters must be finite")
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "_rows", rows)
        # q-independent factor Tz(d) Tx(a) Rx(alpha) of every link
        a, alpha, d, _ = rows.T
        ca, sa = np.cos(alpha), np.sin(alpha)
        C = np.zeros((len(rows), 4, 4))
        C[:, 0, 0] = 1.0
        C[:, 0, 3] = a
        C[:, 1, 1] = ca
        C[:, 1, 2] = -sa
        C[:, 2, 1] = sa
        C[:, 2, 2] = ca
        C[:, 2, 3] = d
        C[:, 3, 3] = 1.0
        object.__setattr__(self, "_fixed", C)

    @property
    def n(self) -> int:
        return len(self.joints)

    @classmethod
    def from_rows(cls, rows, name: str = "chain", scale: float = 1.0) -> "ChainModel":
        """Build a chain from ``(a, alpha, d, theta_offset)`` rows.

        ``scale`` multiplies every length (a and d); angles are untouched.
        """
        joints = []
        for i, row in enumerate(rows):
            if len(row) != 4:
                raise KinematicsError(f"joint {i}: expected 4 DH parameters, got {len(row)}")
            a, alpha, d, off = (float(v) for v in row)
            joints.append(DHJoint(a * scale, alpha, d * scale, off))
        return cls(tuple(joints), name=name)

    def dh_rows(self) -> np.ndarray:
        return self._rows.copy()


# Publicly documented nominal DH table of a UR10e-class arm.
UR10E_LIKE_ROWS = (
    (0.0, math.pi / 2, 0.1807, 0.0),
    (-0.6127, 0.0, 0.0, 0.0),
    (-0.57155, 0.0, 0.0, 0.0),
    (0.0, math.pi / 2, 0.17415, 0.0),
    (0.0, -math.pi / 2, 0.11985, 0.0),
    (0.0, 0.0, 0.11655, 0.0),
)


def ur10e_like(scale: float = 1.0) -> ChainModel:
    """Default 6-DOF chain with UR10e-like geometry."""
    name = "ur10e_like" if scale == 1.0 else f"ur10e_like_x{scale:g}"
    return ChainModel.from_rows(UR10E_LIKE_ROWS, name=name, scale=scale)


PRESETS = {"ur10e_like": ur10e_like}


def _check_q(model: ChainModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n,):
        raise KinematicsError(f"expected joint vector of length {model.n}, got shape {q.shape}")
    return q


def link_transforms(model: ChainModel, q) -> np.ndarray:
    """All n link transforms stacked as an (n, 4, 4) array."""
    theta = _check_q(model, q) + model._rows[:, 3]
    c, s = np.cos(theta), np.sin(theta)
    R = np.zeros((model.n, 4, 4))
    R[:, 0, 0] = c
    R[:, 0, 1] = -s
    R[:, 1, 0] = s
    R[:, 1, 1] = c
    R[:, 2, 2] = 1.0
    R[:, 3, 3] = 1.0
    return R @ model._fixed


def frame_transforms(model: ChainModel, q) -> np.ndarray:
    """Cumulative base-to-frame transforms ``T_0 .. T_n`` as (n+1, 4, 4); T_0 = I."""
    frames = [np.eye(4)]
    for A in link_transforms(model, q):
        frames.append(frames[-1].dot(A))
    return np.array(frames)


def forward_kinematics(model: ChainModel, q) -> tuple[np.ndarray, np.ndarray]:
    """End-effector position (3,) and rotation matrix (3, 3)."""
    T = frame_transforms(model, q)[-1]
    return T[:3, 3].copy(), T[:3, :3].copy()


def geometric_jacobian(model: ChainModel, q) -> np.ndarray:
    """6 x n geometric Jacobian; rows 0-2 translational, rows 3-5 rotational."""
    F = frame_transforms(model, q)
    z = F[:-1, :3, 2].T
    r = F[-1, :3, 3, None] - F[:-1, :3, 3].T
    J = np.empty((6, model.n))
    # z x r per column; np.cross is slow for these tiny shapes
    J[0] = z[1] * r[2] - z[2] * r[1]
    J[1] = z[2] * r[0] - z[0] * r[2]
    J[2] = z[0] * r[1] - z[1] * r[0]
    J[3:] = z
    return J
