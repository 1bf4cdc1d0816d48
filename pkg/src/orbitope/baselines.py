"""Reference estimators: closed-form SVD alignment, PCA axis alignment and
Levenberg-Marquardt on a local angle(-axis) chart."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .estimation import (
    CorrespondenceSet,
    ProjectionSpec,
    _check,
    residual,
    weighted_centroids,
)
from .geometry import RigidPose, project_to_rotation

PCA_GAP_TOL = 1e-4


def _euclidean(corr: CorrespondenceSet):
    if corr.observations.shape[1] != corr.n:
        raise ValueError("observations must live in model coordinates")


def horn_svd(corr: CorrespondenceSet) -> RigidPose:
    """Weighted closed-form alignment; the global minimiser for P = identity.

    Flags ``"degenerate"`` when the cross-covariance does not pin the rotation
    down (e.g. collinear points).
    """
    _euclidean(corr)
    w = corr.w
    mbar, obar = weighted_centroids(corr)
    H = ((corr.observations - obar) * w[:, None]).T @ (corr.model - mbar)
    R, degenerate = project_to_rotation(H)
    flags = {"degenerate"} if degenerate else set()
    return RigidPose(R, obar - R @ mbar, flags=frozenset(flags))


def _principal_axes(points, w):
    c = w @ points / w.sum()
    X = points - c
    cov = (X * w[:, None]).T @ X / w.sum()
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    return c, vals[order], vecs[:, order]


def _ambiguous(vals) -> bool:
    scale = max(vals[0], np.finfo(float).tiny)
    return bool(np.any(np.abs(np.diff(vals)) <= PCA_GAP_TOL * scale))


def pca_align(corr: CorrespondenceSet) -> RigidPose:
    """Map the model's principal axes onto the observations' principal axes.

    Every proper sign pattern for the axes is tried and the one with the
    smallest residual kept; ``"axis-ambiguous"`` marks near-equal principal
    values.
    """
    _euclidean(corr)
    n, w = corr.n, corr.w
    cm, vm, Em = _principal_axes(corr.model, w)
    co, vo, Eo = _principal_axes(corr.observations, w)
    best = None
    for signs in itertools.product((1.0, -1.0), repeat=n):
        R = Eo @ np.diag(signs) @ Em.T
        if np.linalg.det(R) < 0:
            continue
        R, _ = project_to_rotation(R)
        pose = RigidPose(R, co - R @ cm)
        r = residual(corr, ProjectionSpec.identity(n), pose)
        if best is None or r < best[0]:
            best = (r, pose)
    flags = {"axis-ambiguous"} if (_ambiguous(vm) or _ambiguous(vo)) else set()
    return RigidPose(best[1].R, best[1].t, flags=frozenset(flags))


@dataclass(frozen=True)
class LmConfig:
    max_iters: int = 200
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.5
    grad_tol: float = 1e-10

    def __post_init__(self):
        if self.max_iters < 1 or min(self.damping_init, self.grad_tol) <= 0:
            raise ValueError("max_iters, damping_init and grad_tol must be positive")
        if not self.damping_up > 1.0 > self.damping_down > 0.0:
            raise ValueError("need damping_up > 1 > damping_down > 0")


def _hat(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _hat_rows(V):
    H = np.zeros((V.shape[0], 3, 3))
    H[:, 0, 1], H[:, 0, 2] = -V[:, 2], V[:, 1]
    H[:, 1, 0], H[:, 1, 2] = V[:, 2], -V[:, 0]
    H[:, 2, 0], H[:, 2, 1] = -V[:, 1], V[:, 0]
    return H


def _exp(delta) -> np.ndarray:
    """Rotation for an angle (2-D) or angle-axis vector (3-D)."""
    if delta.shape == (1,):
        c, s = np.cos(delta[0]), np.sin(delta[0])
        return np.array([[c, -s], [s, c]])
    th = np.linalg.norm(delta)
    K = _hat(delta)
    if th < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(th) / th * K + (1 - np.cos(th)) / th**2 * K @ K


def _residuals_and_jacobian(corr, proj, R, t):
    n = corr.n
    PR = proj.P[:, :n]
    sw = np.sqrt(corr.w)[:, None]
    Rm = corr.model @ R.T
    r = sw * (corr.observations - (Rm + t) @ PR.T - proj.P[:, n])
    # left increments R <- exp(delta) R: d(Rm) = delta x Rm = -[Rm]_x delta
    if n == 3:
        dRm = -_hat_rows(Rm)
    else:
        dRm = np.stack([-Rm[:, 1], Rm[:, 0]], axis=1)[:, :, None]
    J_rot = -sw[:, :, None] * np.einsum("rj,njk->nrk", PR, dRm)
    J_t = -sw[:, :, None] * np.broadcast_to(PR, (corr.N,) + PR.shape)
    J = np.concatenate([J_rot, J_t], axis=2)
    return r.reshape(-1), J.reshape(-1, J.shape[2])


def levenberg_marquardt(
    corr: CorrespondenceSet,
    proj: ProjectionSpec | None = None,
    init: RigidPose | None = None,
    cfg: LmConfig | None = None,
) -> RigidPose:
    """Local least-squares refinement of ``sum c_i ||o_i - P S m_i||^2``.

    The rotation is updated multiplicatively, ``R <- exp(delta) R``, so the
    chart is re-centred on the current iterate every step.  Damping is
    Marquardt-scaled and adjusted by ``damping_up``/``damping_down``.
    """
    proj = proj or ProjectionSpec.identity(corr.n)
    _check(corr, proj)
    cfg = cfg or LmConfig()
    n = corr.n
    init = init or RigidPose.identity(n)
    R, t = init.R.copy(), init.t.copy()
    p = 3 if n == 3 else 1

    r, J = _residuals_and_jacobian(corr, proj, R, t)
    cost = r @ r
    lam = cfg.damping_init
    flags = {"max-iters"}
    for _ in range(cfg.max_iters):
        g = J.T @ r
        if np.max(np.abs(g)) <= cfg.grad_tol:
            flags = set()
            break
        A = J.T @ J
        step = np.linalg.solve(A + lam * np.diag(np.diag(A) + 1e-12), -g)
        R_new = _exp(step[:p]) @ R
        R_new, _ = project_to_rotation(R_new)
        t_new = t + step[p:]
        r_new, J_new = _residuals_and_jacobian(corr, proj, R_new, t_new)
        cost_new = r_new @ r_new
        if cost_new < cost:
            R, t, r, J, cost = R_new, t_new, r_new, J_new, cost_new
            lam *= cfg.damping_down
        else:
            lam *= cfg.damping_up
            if lam > 1e16:
                # no representable improvement left: stationary to rounding
                flags = set()
                break
    return RigidPose(R, t, flags=frozenset(flags))
