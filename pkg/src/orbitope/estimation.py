"""Relaxed least-squares pose estimation over conv(SE(n)).

Two objective forms can be handed to the hull solver:

``"quadratic"``
    ``sum_i c_i ||o_i - P S m_i||^2`` with ``S`` ranging over the hull.
``"linear"``
    Only valid when ``P`` is an isometry (``[I | 0]`` or orthogonal).  On
    SO(n) the term ``||R m_i||^2`` equals ``||m_i||^2``, so it is replaced by
    that constant.  What remains is linear in ``R`` and its minimum over the
    hull sits at an extreme point, i.e. a proper rotation.

``estimate`` uses the linear form whenever ``P`` allows it.  The quadratic
form over the hull is generally *not* tight once the data are noisy: the
optimum can sit strictly inside the hull.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .conic import (
    LmiQuadraticProgram,
    SolverConfig,
    SolverResult,
    is_exact,
    rotation_basis,
    soft_threshold,
    solve_hull_qp,
)
from .geometry import HullPose, RigidPose, project_to_rotation

OUTLIER_NORM = 1e-6


@dataclass(frozen=True)
class CorrespondenceSet:
    """Paired model points ``m_i`` (n-vectors) and observations ``o_i``.

    Observations have as many components as the projection has rows; with the
    default identity projection that is ``n``.
    """

    model: np.ndarray
    observations: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        m = np.array(self.model, dtype=float, ndmin=2)
        o = np.array(self.observations, dtype=float, ndmin=2)
        if m.ndim != 2 or o.ndim != 2:
            raise ValueError("model and observations must be 2-D arrays of points")
        if m.shape[1] not in (2, 3):
            raise ValueError("model points must have 2 or 3 coordinates")
        if m.shape[0] != o.shape[0] or m.shape[0] < 1:
            raise ValueError(
                f"model and observations need equal, non-zero length ({m.shape[0]} vs {o.shape[0]})"
            )
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(o))):
            raise ValueError("coordinates must be finite")
        w = None
        if self.weights is not None:
            w = np.array(self.weights, dtype=float).reshape(-1)
            if w.shape != (m.shape[0],):
                raise ValueError("weights must have one entry per correspondence")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("weights must be finite and strictly positive")
        object.__setattr__(self, "model", m)
        object.__setattr__(self, "observations", o)
        object.__setattr__(self, "weights", w)

    @property
    def N(self) -> int:
        return self.model.shape[0]

    @property
    def n(self) -> int:
        return self.model.shape[1]

    @property
    def w(self) -> np.ndarray:
        return np.ones(self.N) if self.weights is None else self.weights

    def with_observations(self, observations) -> CorrespondenceSet:
        return replace(self, observations=observations)


@dataclass(frozen=True)
class ProjectionSpec:
    """Matrix applied to homogeneous model coordinates ``(S m, 1)``."""

    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float, ndmin=2)
        if P.shape[1] not in (3, 4) or not 1 <= P.shape[0] <= P.shape[1]:
            raise ValueError(f"P must have n+1 columns and at most n+1 rows, got {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ValueError("P must be finite")
        object.__setattr__(self, "P", P)

    @classmethod
    def identity(cls, n: int = 3) -> ProjectionSpec:
        return cls(np.eye(n, n + 1))

    @property
    def n(self) -> int:
        return self.P.shape[1] - 1

    @property
    def rows(self) -> int:
        return self.P.shape[0]

    @property
    def is_identity(self) -> bool:
        n = self.n
        return bool(
            np.array_equal(self.P, np.eye(n, n + 1)) or np.array_equal(self.P, np.eye(n + 1))
        )

    @property
    def is_orthogonal(self) -> bool:
        P = self.P
        return P.shape[0] == P.shape[1] and bool(np.allclose(P.T @ P, np.eye(P.shape[0]), atol=1e-10))

    @property
    def is_isometric(self) -> bool:
        return self.is_identity or self.is_orthogonal


@dataclass
class EstimateReport:
    hull_pose: HullPose
    rigid_pose: RigidPose
    exact: bool
    residual: float
    diagnostics: SolverResult
    relaxation: str
    outliers: list = field(default_factory=list)
    z1: np.ndarray | None = None
    converged: bool = True
    objective_history: list = field(default_factory=list, repr=False)

    @property
    def rounds(self) -> int:
        return len(self.objective_history)


def _check(corr: CorrespondenceSet, proj: ProjectionSpec):
    if proj.n != corr.n:
        raise ValueError(f"projection is for n = {proj.n} but model points have n = {corr.n}")
    if proj.rows != corr.observations.shape[1]:
        raise ValueError(
            f"observations have {corr.observations.shape[1]} components, projection gives {proj.rows}"
        )


def project_points(proj: ProjectionSpec, pose, points) -> np.ndarray:
    """``P S m`` for every row ``m`` of ``points``; ``pose`` is a Hull/RigidPose."""
    n = proj.n
    return pose.apply(points) @ proj.P[:, :n].T + proj.P[:, n]


def residual(corr: CorrespondenceSet, proj: ProjectionSpec, pose) -> float:
    r = corr.observations - project_points(proj, pose, corr.model)
    return float(np.sum(corr.w * np.sum(r * r, axis=1)))


def assemble(
    corr: CorrespondenceSet,
    proj: ProjectionSpec | None = None,
    objective: str = "quadratic",
    with_translation: bool = True,
) -> LmiQuadraticProgram:
    """Normal-equation form of the weighted residual; O(N) time, O(d^2) memory.

    ``x^T Q x + c^T x + k`` equals ``sum_i c_i ||o_i - P S m_i||^2`` for the
    pose encoded by ``x`` (exactly for ``"quadratic"``; on SO(n) for ``"linear"``).
    Without translation the pose is ``S = [R 0; 0 1]``.
    """
    proj = proj or ProjectionSpec.identity(corr.n)
    _check(corr, proj)
    if objective not in ("quadratic", "linear"):
        raise ValueError("objective must be 'quadratic' or 'linear'")
    n = corr.n
    w = corr.w
    m = corr.model
    PR = proj.P[:, :n]
    y = corr.observations - proj.P[:, n]
    B = rotation_basis(n)

    G = PR.T @ PR
    M2 = (m * w[:, None]).T @ m
    msum = w @ m
    wsum = w.sum()

    if objective == "linear":
        if not proj.is_isometric or proj.rows != n:
            raise ValueError("the linear objective needs P = [I | 0]; reduce orthogonal P first")
        Qrr = np.zeros((B.shape[1], B.shape[1]))
        const = float(np.trace(M2))
    else:
        Qrr = B.T @ np.kron(G, M2) @ B
        const = 0.0
    cr = -2.0 * B.T @ (PR.T @ ((y * w[:, None]).T @ m)).reshape(-1)
    k = float(np.sum(w * np.sum(y * y, axis=1))) + const

    if not with_translation:
        return LmiQuadraticProgram(Qrr, cr, k, dim=n, n_trans=0)

    Qrt = B.T @ np.kron(G, msum[:, None])
    Qtt = wsum * G
    if objective == "linear" and np.max(np.abs(msum)) > 1e-9 * max(1.0, np.abs(m).max() * wsum):
        raise ValueError("the linear objective with translation needs a weighted-centred model")
    Q = np.block([[Qrr, Qrt], [Qrt.T, Qtt]])
    ct = -2.0 * PR.T @ (w @ y)
    return LmiQuadraticProgram(Q, np.concatenate([cr, ct]), k, dim=n, n_trans=n)


def weighted_centroids(corr: CorrespondenceSet) -> tuple[np.ndarray, np.ndarray]:
    w = corr.w / corr.w.sum()
    return w @ corr.model, w @ corr.observations


def center_translation(corr: CorrespondenceSet) -> tuple[np.ndarray, CorrespondenceSet]:
    """Offset between weighted centroids and the correspondence set with both sides centred.

    Only meaningful for the identity projection.
    """
    if corr.observations.shape[1] != corr.n:
        raise ValueError("centring requires observations in model coordinates (P = identity)")
    mbar, obar = weighted_centroids(corr)
    centered = CorrespondenceSet(corr.model - mbar, corr.observations - obar, corr.weights)
    return obar - mbar, centered


def _reduce_isometric(corr: CorrespondenceSet, proj: ProjectionSpec) -> CorrespondenceSet:
    """Rewrite an orthogonal-P problem as an identity-P one with the same argmin."""
    n = corr.n
    if proj.P.shape == (n, n + 1):
        return corr
    # ||o - P S m~|| = ||P^T o - S m~||; the homogeneous row only adds a constant
    return corr.with_observations((corr.observations @ proj.P)[:, :n])


def refit_translation(corr: CorrespondenceSet, proj: ProjectionSpec, R) -> np.ndarray:
    """Least-squares translation for a fixed rotation (minimum norm if unobservable)."""
    n = corr.n
    PR = proj.P[:, :n]
    w = corr.w
    y = corr.observations - proj.P[:, n] - corr.model @ R.T @ PR.T
    lhs = w.sum() * (PR.T @ PR)
    rhs = PR.T @ (w @ y)
    return np.linalg.lstsq(lhs, rhs, rcond=1e-12)[0]


def _min_points(corr: CorrespondenceSet):
    need = 3 if corr.n == 3 else 2
    if corr.N < need:
        raise ValueError(f"need at least {need} correspondences in {corr.n}-D, got {corr.N}")


def _rotation_ambiguous(corr: CorrespondenceSet) -> bool:
    """True when the model spans fewer than n - 1 directions about its centroid
    (collinear in 3-D, coincident in 2-D): the rotation is then not unique."""
    mbar, _ = weighted_centroids(corr)
    X = (corr.model - mbar) * np.sqrt(corr.w)[:, None]
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[0] <= 1e-12 * max(1.0, np.abs(corr.model).max()):
        return True
    return corr.n == 3 and (len(sv) < 2 or sv[1] <= 1e-10 * sv[0])


def _finish(hull: HullPose, R_rigid, t_rigid, degenerate, res, corr, proj, relaxation) -> EstimateReport:
    flags = set()
    if degenerate or _rotation_ambiguous(corr):
        flags.add("degenerate")
    if not res.converged:
        flags.add("solver-failed")
    rigid = RigidPose(R_rigid, t_rigid, flags=frozenset(flags))
    exact = (
        res.converged
        and "degenerate" not in flags
        and is_exact(hull.R, res.boundary_margin)
        and np.linalg.norm(hull.R - rigid.R) <= 1e-4
    )
    return EstimateReport(
        hull_pose=hull,
        rigid_pose=rigid,
        exact=bool(exact),
        residual=residual(corr, proj, rigid),
        diagnostics=res,
        relaxation=relaxation,
        converged=res.converged,
    )


def estimate(
    corr: CorrespondenceSet,
    proj: ProjectionSpec | None = None,
    cfg: SolverConfig | None = None,
    relaxation: str = "auto",
) -> EstimateReport:
    """Solve the hull relaxation and project the result onto SE(n).

    ``relaxation`` is ``"auto"`` (linear form for isometric P, else quadratic),
    ``"linear"`` or ``"quadratic"``.
    """
    proj = proj or ProjectionSpec.identity(corr.n)
    _check(corr, proj)
    _min_points(corr)
    if relaxation == "auto":
        relaxation = "linear" if proj.is_isometric else "quadratic"
    if relaxation not in ("linear", "quadratic"):
        raise ValueError("relaxation must be 'auto', 'linear' or 'quadratic'")
    if relaxation == "linear" and not proj.is_isometric:
        raise ValueError("the linear relaxation requires an isometric projection")

    if proj.is_isometric:
        euclid = _reduce_isometric(corr, proj)
        _, centered = center_translation(euclid)
        prob = assemble(centered, None, relaxation, with_translation=False)
        res = solve_hull_qp(prob, cfg)
        R_hull, _ = prob.split(res.x)
        mbar, obar = weighted_centroids(euclid)
        R_rigid, degenerate = project_to_rotation(R_hull)
        hull = HullPose(R_hull, obar - R_hull @ mbar)
        return _finish(hull, R_rigid, obar - R_rigid @ mbar, degenerate, res, corr, proj, relaxation)

    prob = assemble(corr, proj, "quadratic", with_translation=True)
    res = solve_hull_qp(prob, cfg)
    R_hull, t_hull = prob.split(res.x)
    R_rigid, degenerate = project_to_rotation(R_hull)
    t_rigid = refit_translation(corr, proj, R_rigid)
    return _finish(HullPose(R_hull, t_hull), R_rigid, t_rigid, degenerate, res, corr, proj, relaxation)


def robust_objective(corr, proj, pose, z1, lam) -> float:
    r = corr.observations - project_points(proj, pose, corr.model) - z1
    return float(np.sum(corr.w * np.sum(r * r, axis=1)) + lam * np.abs(z1).sum())


def estimate_robust(
    corr: CorrespondenceSet,
    proj: ProjectionSpec | None = None,
    lam: float = 0.1,
    cfg: SolverConfig | None = None,
    max_rounds: int = 100,
    tol: float = 1e-9,
    relaxation: str = "auto",
) -> EstimateReport:
    """l1-robust estimate: ``min ||(O - P S M) - Z1||^2 + lam ||Z1||_1`` over the hull.

    Exact block coordinate descent: hull QP on the corrected observations
    ``O - Z1`` (relaxation chosen as in :func:`estimate`), then ``Z1`` by soft
    thresholding of the residual.  Weights
    enter the squared term only, so the per-point threshold is ``lam / (2 c_i)``.
    ``lam`` is in data units.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    proj = proj or ProjectionSpec.identity(corr.n)
    _check(corr, proj)
    _min_points(corr)

    w = corr.w
    kappa = (lam / (2.0 * w))[:, None]
    z1 = np.zeros_like(corr.observations)
    history = []
    best = None
    prev = np.inf
    converged = False

    for _ in range(max_rounds):
        shifted = corr.with_observations(corr.observations - z1)
        step = estimate(shifted, proj, cfg, relaxation)
        hull, res = step.hull_pose, step.diagnostics
        r = corr.observations - project_points(proj, hull, corr.model)
        z1 = soft_threshold(r, kappa)
        F = robust_objective(corr, proj, hull, z1, lam)
        history.append(F)
        if best is None or F < best[0]:
            best = (F, hull, z1.copy(), res)
        if prev - F < tol:
            converged = True
            break
        prev = F

    _, hull, z1, res = best
    R_rigid, degenerate = project_to_rotation(hull.R)
    t_rigid = refit_translation(corr.with_observations(corr.observations - z1), proj, R_rigid)
    report = _finish(hull, R_rigid, t_rigid, degenerate, res, corr, proj, step.relaxation)
    report.z1 = z1
    report.outliers = [int(i) for i in np.flatnonzero(np.linalg.norm(z1, axis=1) > OUTLIER_NORM)]
    report.objective_history = history
    report.converged = converged and res.converged
    if not converged:
        report.rigid_pose = RigidPose(
            report.rigid_pose.R, report.rigid_pose.t, flags=report.rigid_pose.flags | {"max-rounds"}
        )
    return report
