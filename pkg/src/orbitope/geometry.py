"""Rotation and pose types, hull membership, quaternion/Gram maps, projection onto SO(n).

Conventions
-----------
* 3x3 hull rotations are plain ``(3, 3)`` arrays ``X = (x_ij)``.
* A planar hull rotation is the pair ``(x, y)`` standing for the matrix
  ``[[x, -y], [y, x]]``; ``x = cos(theta)``, ``y = sin(theta)`` on the circle.
* Quaternions are ``(u0, u1, u2, u3)`` with ``u0`` the scalar part.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

DEFAULT_TOL = 1e-7


class Membership(NamedTuple):
    inside: bool
    margin: float


class Projection(NamedTuple):
    rotation: np.ndarray
    degenerate: bool


class Rotation2Hull(NamedTuple):
    """Point ``(x, y)`` of the unit disk, i.e. an element of conv(SO(2))."""

    x: float
    y: float

    @classmethod
    def from_angle(cls, theta: float) -> Rotation2Hull:
        return cls(float(np.cos(theta)), float(np.sin(theta)))

    @classmethod
    def from_matrix(cls, R) -> Rotation2Hull:
        R = np.asarray(R, dtype=float)
        # least-squares fit onto the rotation-like subspace
        return cls(0.5 * (R[0, 0] + R[1, 1]), 0.5 * (R[1, 0] - R[0, 1]))

    def matrix(self) -> np.ndarray:
        return np.array([[self.x, -self.y], [self.y, self.x]])

    @property
    def angle(self) -> float:
        return float(np.arctan2(self.y, self.x))


def _as_rotation_block(R) -> np.ndarray:
    if isinstance(R, Rotation2Hull):
        return R.matrix()
    R = np.asarray(R, dtype=float)
    if R.shape not in ((2, 2), (3, 3)):
        raise ValueError(f"rotation block must be 2x2 or 3x3, got {R.shape}")
    return R


@dataclass(frozen=True)
class HullPose:
    """Relaxed pose: rotation block in conv(SO(n)) plus a free translation."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = _as_rotation_block(self.R)
        t = np.asarray(self.t, dtype=float).reshape(-1)
        if t.shape != (R.shape[0],):
            raise ValueError("translation length must match rotation dimension")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def dim(self) -> int:
        return self.R.shape[0]

    def matrix(self) -> np.ndarray:
        n = self.dim
        S = np.eye(n + 1)
        S[:n, :n] = self.R
        S[:n, n] = self.t
        return S

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.R.T + self.t


@dataclass(frozen=True)
class RigidPose:
    """Element of SE(n). ``flags`` carries solver/baseline notes such as
    ``"degenerate"`` or ``"max-iters"``; they never affect the pose itself."""

    R: np.ndarray
    t: np.ndarray
    flags: frozenset = field(default=frozenset(), compare=False)

    def __post_init__(self):
        R = _as_rotation_block(self.R)
        t = np.asarray(self.t, dtype=float).reshape(-1)
        if t.shape != (R.shape[0],):
            raise ValueError("translation length must match rotation dimension")
        if not is_rotation(R, 1e-9):
            raise ValueError("R is not a proper rotation (R^T R = I, det R = +1)")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "flags", frozenset(self.flags))

    @classmethod
    def identity(cls, n: int = 3) -> RigidPose:
        return cls(np.eye(n), np.zeros(n))

    @property
    def dim(self) -> int:
        return self.R.shape[0]

    def matrix(self) -> np.ndarray:
        return HullPose(self.R, self.t).matrix()

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def as_hull(self) -> HullPose:
        return HullPose(self.R, self.t)


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    n = R.shape[0]
    if not np.all(np.isfinite(R)):
        return False
    return bool(
        np.max(np.abs(R.T @ R - np.eye(n))) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def so3_lmi(X) -> np.ndarray:
    """4x4 symmetric matrix whose PSD-ness characterises conv(SO(3)).

    Affine in the entries of ``X``; equals the identity at ``X = 0`` and
    ``4 u u^T`` at ``X = quat_to_rotation(u)``.
    """
    X = np.asarray(X, dtype=float)
    (x11, x12, x13), (x21, x22, x23), (x31, x32, x33) = X
    return np.array(
        [
            [1 + x11 + x22 + x33, x32 - x23, x13 - x31, x21 - x12],
            [x32 - x23, 1 + x11 - x22 - x33, x21 + x12, x13 + x31],
            [x13 - x31, x21 + x12, 1 - x11 + x22 - x33, x32 + x23],
            [x21 - x12, x13 + x31, x32 + x23, 1 - x11 - x22 + x33],
        ]
    )


def hull_membership_so3(X, tol: float = DEFAULT_TOL) -> Membership:
    if tol < 0:
        raise ValueError("tol must be non-negative")
    margin = float(np.linalg.eigvalsh(so3_lmi(X))[0])
    return Membership(margin >= -tol, margin)


def hull_membership_so2(R, tol: float = DEFAULT_TOL) -> Membership:
    """Disk test for a planar hull rotation given as ``Rotation2Hull`` or 2x2 matrix."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if not isinstance(R, Rotation2Hull):
        R = Rotation2Hull.from_matrix(R)
    margin = 1.0 - R.x * R.x - R.y * R.y
    return Membership(margin >= -tol, float(margin))


def hull_membership(R, tol: float = DEFAULT_TOL) -> Membership:
    R = _as_rotation_block(R)
    if R.shape == (2, 2):
        return hull_membership_so2(R, tol)
    return hull_membership_so3(R, tol)


def _check_unit(u, tol: float) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape != (4,):
        raise ValueError("quaternion must have 4 components")
    if abs(np.linalg.norm(u) - 1.0) > tol:
        raise ValueError(f"quaternion is not unit norm (|u| = {np.linalg.norm(u)!r})")
    return u


def quat_to_rotation(u, tol: float = 1e-9) -> np.ndarray:
    u0, u1, u2, u3 = _check_unit(u, tol)
    return np.array(
        [
            [2 * (u0 * u0 + u1 * u1) - 1, 2 * (u1 * u2 - u0 * u3), 2 * (u1 * u3 + u0 * u2)],
            [2 * (u1 * u2 + u0 * u3), 2 * (u0 * u0 + u2 * u2) - 1, 2 * (u2 * u3 - u0 * u1)],
            [2 * (u1 * u3 - u0 * u2), 2 * (u2 * u3 + u0 * u1), 2 * (u0 * u0 + u3 * u3) - 1],
        ]
    )


def gram_to_rotation(V) -> np.ndarray:
    """Affine image of a 4x4 Gram matrix: ``quat_to_rotation`` with ``u_a u_b -> V_ab``.

    Maps ``{V >= 0, trace V = 1}`` onto conv(SO(3)).
    """
    V = np.asarray(V, dtype=float)
    if V.shape != (4, 4):
        raise ValueError("Gram matrix must be 4x4")
    V = 0.5 * (V + V.T)
    return np.array(
        [
            [2 * (V[0, 0] + V[1, 1]) - 1, 2 * (V[1, 2] - V[0, 3]), 2 * (V[1, 3] + V[0, 2])],
            [2 * (V[1, 2] + V[0, 3]), 2 * (V[0, 0] + V[2, 2]) - 1, 2 * (V[2, 3] - V[0, 1])],
            [2 * (V[1, 3] - V[0, 2]), 2 * (V[2, 3] + V[0, 1]), 2 * (V[0, 0] + V[3, 3]) - 1],
        ]
    )


def project_to_rotation(S) -> Projection:
    """Nearest proper rotation to ``S`` in Frobenius norm.

    Uses ``U diag(1, .., 1, det(U V^T)) V^T``. ``degenerate`` is set when the
    minimiser is not unique (repeated or vanishing trailing singular values).
    """
    S = _as_rotation_block(S)
    if not np.all(np.isfinite(S)):
        raise ValueError("S must be finite")
    U, sig, Vt = np.linalg.svd(S)
    d = 1.0 if np.linalg.det(U @ Vt) >= 0 else -1.0
    D = np.ones(S.shape[0])
    D[-1] = d
    R = (U * D) @ Vt
    eps = 1e-9 * max(sig[0], 1.0)
    if d > 0:
        degenerate = sig[-2] + sig[-1] <= eps
    else:
        degenerate = sig[-2] - sig[-1] <= eps
    return Projection(R, bool(degenerate))


def random_rotation(rng=None, n: int = 3) -> np.ndarray:
    """Haar-uniform rotation; ``rng`` is a seed or ``numpy.random.Generator``."""
    rng = np.random.default_rng(rng)
    if n == 2:
        theta = rng.uniform(0.0, 2 * np.pi)
        return Rotation2Hull.from_angle(theta).matrix()
    if n != 3:
        raise ValueError("only n = 2 or 3 is supported")
    u = rng.standard_normal(4)
    return quat_to_rotation(u / np.linalg.norm(u))
