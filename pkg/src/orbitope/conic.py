"""Dense log-barrier solver for convex quadratics over conv(SO(n)) x R^n.

Decision vector layout: rotation coordinates first, then (optionally) the
translation.  For n = 3 the rotation coordinates are the nine entries of the
matrix in row-major order; for n = 2 they are the disk coordinates ``(x, y)``
of ``[[x, -y], [y, x]]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import so3_lmi

EXACT_MARGIN = 1e-5
EXACT_SV_TOL = 1e-4
FLOOR_DECREMENT = 1e-6


def rotation_basis(n: int) -> np.ndarray:
    """Linear map from rotation coordinates to the row-major entries of R."""
    if n == 3:
        return np.eye(9)
    if n == 2:
        return np.array([[1.0, 0.0], [0.0, -1.0], [0.0, 1.0], [1.0, 0.0]])
    raise ValueError("only n = 2 or 3 is supported")


def rotation_from_coords(z, n: int) -> np.ndarray:
    return (rotation_basis(n) @ np.asarray(z, dtype=float)).reshape(n, n)


def coords_from_rotation(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    n = R.shape[0]
    B = rotation_basis(n)
    # B has orthogonal columns, so this is the least-squares coordinate fit
    return (B.T @ R.reshape(-1)) / np.sum(B * B, axis=0)


@dataclass(frozen=True)
class SolverConfig:
    barrier_mu0: float = 1.0
    mu_decrease: float = 0.2
    newton_tol: float = 1e-10
    gap_tol: float = 1e-8
    max_outer: int = 60
    max_newton: int = 50

    def __post_init__(self):
        if not 0.0 < self.mu_decrease < 1.0:
            raise ValueError("mu_decrease must lie in (0, 1)")
        if min(self.barrier_mu0, self.newton_tol, self.gap_tol) <= 0:
            raise ValueError("barrier_mu0, newton_tol and gap_tol must be positive")
        if self.max_outer < 1 or self.max_newton < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class LmiQuadraticProgram:
    """``minimize x^T Q x + c^T x + k`` with the rotation block of ``x`` in the hull."""

    Q: np.ndarray
    c: np.ndarray
    k: float
    dim: int
    n_trans: int = 0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.n_trans not in (0, self.dim):
            raise ValueError("n_trans must be 0 or dim")
        d = self.n_rot + self.n_trans
        Q = np.asarray(self.Q, dtype=float)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if Q.shape != (d, d) or c.shape != (d,):
            raise ValueError(f"expected Q of shape {(d, d)} and c of length {d}")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(c)) and np.isfinite(self.k)):
            raise ValueError("problem data must be finite")
        Q = 0.5 * (Q + Q.T)
        lam_min = np.linalg.eigvalsh(Q)[0]
        if lam_min < -1e-10 * max(1.0, np.abs(Q).max()):
            raise ValueError(f"Q is not positive semidefinite (min eigenvalue {lam_min:.3g})")
        self.Q = Q
        self.c = c
        self.k = float(self.k)

    @property
    def n_rot(self) -> int:
        return 9 if self.dim == 3 else 2

    @property
    def size(self) -> int:
        return self.n_rot + self.n_trans

    @property
    def rotation_slice(self) -> slice:
        return slice(0, self.n_rot)

    @property
    def translation_slice(self) -> slice:
        return slice(self.n_rot, self.size)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.Q @ x + self.c @ x + self.k)

    def split(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        R = rotation_from_coords(x[self.rotation_slice], self.dim)
        t = x[self.translation_slice] if self.n_trans else np.zeros(self.dim)
        return R, np.array(t, dtype=float)


class SO3Barrier:
    """``-log det`` of the 4x4 hull matrix, as a function of the 9 entries."""

    nu = 4
    size = 9

    def __init__(self):
        basis = np.eye(9).reshape(9, 3, 3)
        self.A = np.array([so3_lmi(E) - np.eye(4) for E in basis])

    def matrix(self, z) -> np.ndarray:
        return np.eye(4) + np.tensordot(z, self.A, axes=1)

    def margin(self, z) -> float:
        return float(np.linalg.eigvalsh(self.matrix(z))[0])

    def interior(self, z) -> bool:
        try:
            np.linalg.cholesky(self.matrix(z))
        except np.linalg.LinAlgError:
            return False
        return True

    def value(self, z) -> float:
        sign, logdet = np.linalg.slogdet(self.matrix(z))
        return -logdet if sign > 0 else np.inf

    def derivatives(self, z):
        M = self.matrix(z)
        L = np.linalg.cholesky(M)
        Winv = np.linalg.inv(M)
        G = Winv @ self.A
        grad = -np.trace(G, axis1=1, axis2=2)
        hess = np.einsum("kij,lji->kl", G, G)
        return -2.0 * np.sum(np.log(np.diag(L))), grad, 0.5 * (hess + hess.T)


class SO2Barrier:
    """``-log(1 - x^2 - y^2)`` on the unit disk."""

    nu = 1
    size = 2

    def margin(self, z) -> float:
        return float(1.0 - z @ z)

    def interior(self, z) -> bool:
        return self.margin(z) > 0.0

    def value(self, z) -> float:
        s = self.margin(z)
        return -np.log(s) if s > 0 else np.inf

    def derivatives(self, z):
        s = self.margin(z)
        grad = 2.0 * z / s
        hess = 2.0 * np.eye(2) / s + 4.0 * np.outer(z, z) / (s * s)
        return -np.log(s), grad, hess


_BARRIERS = {3: SO3Barrier(), 2: SO2Barrier()}


def hull_barrier(n: int):
    try:
        return _BARRIERS[n]
    except KeyError:
        raise ValueError("only n = 2 or 3 is supported") from None


@dataclass
class SolverResult:
    x: np.ndarray
    objective: float
    barrier_gap: float
    outer_iters: int
    newton_iters: int
    boundary_margin: float
    converged: bool
    # objective, margin and iterate at the end of each centering step
    history: list = field(default_factory=list, repr=False)


def _free_directions(prob: LmiQuadraticProgram) -> np.ndarray:
    """Columns spanning rotation coordinates plus the translation directions
    the objective actually sees; unseen translation directions stay at zero."""
    p, d = prob.n_rot, prob.size
    cols = [np.eye(d)[:, :p]]
    if prob.n_trans:
        Qtt = prob.Q[p:, p:]
        w, V = np.linalg.eigh(Qtt)
        keep = w > 1e-12 * max(1.0, np.abs(prob.Q).max())
        T = np.zeros((d, int(keep.sum())))
        T[p:, :] = V[:, keep]
        cols.append(T)
    return np.hstack(cols)


def solve_hull_qp(prob: LmiQuadraticProgram, cfg: SolverConfig | None = None) -> SolverResult:
    """Path-following barrier method started from the hull centre.

    Terminates once ``nu * mu`` (in objective units) drops below ``gap_tol``;
    ``nu`` is 4 for the 4x4 LMI and 1 for the disk.
    """
    cfg = cfg or SolverConfig()
    bar = hull_barrier(prob.dim)
    p = prob.n_rot

    T = _free_directions(prob)
    Qr = T.T @ prob.Q @ T
    cr = T.T @ prob.c
    # work on a unit-scale objective so mu0 is meaningful for any data size
    scale = max(1.0, float(np.abs(Qr).max()), float(np.abs(cr).max()))
    Qs, cs = Qr / scale, cr / scale

    def f(y):
        return y @ Qs @ y + cs @ y

    y = np.zeros(T.shape[1])
    mu = cfg.barrier_mu0
    newton_total = 0
    history = []
    converged = True
    outer = 0

    for outer in range(1, cfg.max_outer + 1):
        centered = False
        prev_dec = np.inf
        for _ in range(cfg.max_newton):
            z = y[:p]
            phi, gphi, Hphi = bar.derivatives(z)
            g = 2.0 * Qs @ y + cs
            g[:p] += mu * gphi
            H = 2.0 * Qs
            H[:p, :p] += mu * Hphi
            try:
                dy = np.linalg.solve(H, -g)
            except np.linalg.LinAlgError:
                dy = np.linalg.lstsq(H, -g, rcond=None)[0]
            lam2 = float(-g @ dy)
            newton_total += 1
            dec = lam2 / (2.0 * mu)
            # second clause: decrement stuck at the rounding floor of a nearly
            # singular LMI, well inside the quadratic-convergence region
            if dec <= cfg.newton_tol or (dec <= FLOOR_DECREMENT and dec > 0.1 * prev_dec):
                centered = True
                break
            prev_dec = dec
            slope = g @ dy
            step = 1.0
            while not bar.interior(z + step * dy[:p]):
                step *= 0.5
            # self-concordant regime: a full feasible step is always a descent step
            if np.sqrt(max(lam2, 0.0) / mu) >= 0.25:
                F0 = f(y) + mu * phi
                while step > 1e-12 and (
                    f(y + step * dy) + mu * bar.value(z + step * dy[:p]) > F0 + 0.01 * step * slope
                ):
                    step *= 0.5
            y = y + step * dy
        x = T @ y
        history.append((prob.objective(x), bar.margin(y[:p]), x.copy()))
        if not centered:
            converged = False
            break
        if bar.nu * mu * scale <= cfg.gap_tol:
            break
        mu *= cfg.mu_decrease
    else:
        converged = False

    x = T @ y
    gap = bar.nu * mu * scale
    return SolverResult(
        x=x,
        objective=prob.objective(x),
        barrier_gap=gap,
        outer_iters=outer,
        newton_iters=newton_total,
        boundary_margin=bar.margin(y[:p]),
        converged=converged and gap <= cfg.gap_tol,
        history=history,
    )


def soft_threshold(r, kappa):
    """Elementwise shrinkage ``sign(r) * max(|r| - kappa, 0)``; ``kappa`` may be
    a scalar or broadcastable array."""
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa < 0):
        raise ValueError("kappa must be non-negative")
    r = np.asarray(r, dtype=float)
    return np.sign(r) * np.maximum(np.abs(r) - kappa, 0.0)


def is_exact(R, margin: float) -> bool:
    """Hull solution counts as a group element: on the boundary with unit singular values."""
    sv = np.linalg.svd(np.asarray(R, dtype=float), compute_uv=False)
    return bool(margin <= EXACT_MARGIN and np.all(np.abs(sv - 1.0) <= EXACT_SV_TOL))
