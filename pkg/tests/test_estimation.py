import numpy as np
import pytest

from orbitope.baselines import horn_svd
from orbitope.conic import SolverConfig
from orbitope.estimation import (
    CorrespondenceSet,
    ProjectionSpec,
    assemble,
    center_translation,
    estimate,
    estimate_robust,
    residual,
    robust_objective,
)
from orbitope.geometry import HullPose, RigidPose, gram_to_rotation, random_rotation


def make(rng, N=30, n=3, delta=0.0, weights=None):
    R = random_rotation(rng, n)
    t = rng.uniform(-1, 1, n)
    m = rng.standard_normal((N, n))
    o = m @ R.T + t + delta * rng.standard_normal((N, n))
    return CorrespondenceSet(m, o, weights), RigidPose(R, t)


def hull_point(rng, n=3):
    if n == 2:
        r, a = np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi)
        return np.array([[r * np.cos(a), -r * np.sin(a)], [r * np.sin(a), r * np.cos(a)]])
    A = rng.standard_normal((4, 4))
    V = A @ A.T
    return gram_to_rotation(V / np.trace(V))


def direct_sum(corr, proj, R, t):
    n = corr.n
    total = 0.0
    for w, m, o in zip(corr.w, corr.model, corr.observations):
        s = np.append(R @ m + t, 1.0)
        r = o - proj.P @ s
        total += w * r @ r
    return total


# -- data types -----------------------------------------------------------------


def test_correspondence_validation():
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((3, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((3, 4)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((3, 3)), np.zeros((3, 3)), weights=[1, 0, 1])
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((3, 3)), np.full((3, 3), np.inf))


def test_projection_flags():
    assert ProjectionSpec.identity(3).is_identity
    assert ProjectionSpec(np.eye(4)).is_identity
    Q = np.eye(4)
    Q[:3, :3] = random_rotation(np.random.default_rng(0))
    assert ProjectionSpec(Q).is_orthogonal and not ProjectionSpec(Q).is_identity
    ortho = ProjectionSpec(np.eye(2, 4))
    assert not ortho.is_isometric
    with pytest.raises(ValueError):
        ProjectionSpec(np.eye(5))


def test_estimate_needs_minimum_points():
    with pytest.raises(ValueError, match="at least 3"):
        estimate(CorrespondenceSet(np.eye(3)[:2], np.eye(3)[:2]))


def test_dimension_mismatch_rejected():
    corr = CorrespondenceSet(np.zeros((4, 3)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        assemble(corr, ProjectionSpec.identity(2))
    with pytest.raises(ValueError):
        assemble(corr, ProjectionSpec(np.eye(2, 4)))


# -- assembly -------------------------------------------------------------------------


def test_assemble_single_point():
    e1 = np.array([[1.0, 0, 0]])
    prob = assemble(CorrespondenceSet(e1, e1))
    x = np.r_[np.eye(3).reshape(-1), np.zeros(3)]
    assert prob.objective(x) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("P", ["identity", "orthographic", "orthogonal", "general"])
def test_assemble_matches_direct_sum(n, P):
    rng = np.random.default_rng(1)
    if P == "identity":
        proj = ProjectionSpec.identity(n)
    elif P == "orthographic":
        proj = ProjectionSpec(np.eye(n - 1, n + 1))
    elif P == "orthogonal":
        Qm, _ = np.linalg.qr(rng.standard_normal((n + 1, n + 1)))
        proj = ProjectionSpec(Qm)
    else:
        proj = ProjectionSpec(rng.standard_normal((n, n + 1)))
    N = 12
    corr = CorrespondenceSet(
        rng.standard_normal((N, n)), rng.standard_normal((N, proj.rows)), rng.uniform(0.5, 2, N)
    )
    prob = assemble(corr, proj)
    for _ in range(50):
        R, t = hull_point(rng, n), rng.standard_normal(n)
        z = prob.n_rot
        x = np.empty(prob.size)
        x[:z] = R.reshape(-1) if n == 3 else [R[0, 0], R[1, 0]]
        x[z:] = t
        direct = direct_sum(corr, proj, R, t)
        assert prob.objective(x) == pytest.approx(direct, rel=1e-10, abs=1e-10)


def test_linear_form_agrees_on_rotations():
    rng = np.random.default_rng(2)
    corr, _ = make(rng, delta=0.3)
    _, centered = center_translation(corr)
    lin = assemble(centered, objective="linear", with_translation=False)
    quad = assemble(centered, objective="quadratic", with_translation=False)
    for _ in range(20):
        x = random_rotation(rng).reshape(-1)
        assert lin.objective(x) == pytest.approx(quad.objective(x), rel=1e-12)


def test_linear_form_requires_isometry():
    corr = CorrespondenceSet(np.zeros((3, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        assemble(corr, ProjectionSpec(np.eye(2, 4)), objective="linear")


def test_doubling_weights():
    rng = np.random.default_rng(3)
    corr, _ = make(rng, delta=0.1, weights=rng.uniform(0.5, 2, 30))
    a = assemble(corr)
    b = assemble(CorrespondenceSet(corr.model, corr.observations, 2 * corr.weights))
    np.testing.assert_allclose(b.Q, 2 * a.Q, rtol=1e-13)
    np.testing.assert_allclose(b.c, 2 * a.c, rtol=1e-13)
    assert b.k == pytest.approx(2 * a.k, rel=1e-13)
    ra = estimate(corr).rigid_pose
    rb = estimate(CorrespondenceSet(corr.model, corr.observations, 2 * corr.weights)).rigid_pose
    np.testing.assert_allclose(ra.R, rb.R, atol=1e-7)


# -- centring -------------------------------------------------------------------------


def test_center_translation_examples():
    rng = np.random.default_rng(4)
    m = rng.standard_normal((10, 3))
    t0, _ = center_translation(CorrespondenceSet(m, m))
    np.testing.assert_allclose(t0, 0, atol=1e-15)
    t0, _ = center_translation(CorrespondenceSet(m, m + [1, 2, 3]))
    np.testing.assert_allclose(t0, [1, 2, 3], atol=1e-14)
    corr, _ = make(rng, weights=rng.uniform(0.1, 3, 30))
    _, c = center_translation(corr)
    np.testing.assert_allclose(c.w @ c.observations, 0, atol=1e-12)
    np.testing.assert_allclose(c.w @ c.model, 0, atol=1e-12)


# -- estimate ----------------------------------------------------------------------------


def test_noiseless_3d_recovers_pose():
    rng = np.random.default_rng(5)
    for _ in range(10):
        corr, truth = make(rng)
        rep = estimate(corr)
        assert rep.exact
        np.testing.assert_allclose(rep.rigid_pose.R, truth.R, atol=1e-5)
        np.testing.assert_allclose(rep.rigid_pose.t, truth.t, atol=1e-5)
        assert np.linalg.norm(rep.hull_pose.R - rep.rigid_pose.R) <= 1e-4


def test_2d_square_angle():
    theta = np.pi / 3
    side = np.linspace(-1, 1, 3)
    square = np.array(
        [(x, -1) for x in side] + [(1, y) for y in side[1:]] + [(x, 1) for x in side[::-1][1:]] + [(-1, y) for y in side[::-1][1:-1]]
    ) + [0.3, 0.1]  # off-centre so rotation about the centroid still matters
    square = np.r_[square, [[0.2, 0.7], [0.5, -0.4]]]
    assert len(square) == 10
    c, s = np.cos(theta), np.sin(theta)
    o = square @ np.array([[c, -s], [s, c]]).T
    rep = estimate(CorrespondenceSet(square, o))
    R = rep.rigid_pose.R
    assert np.arctan2(R[1, 0], R[0, 0]) == pytest.approx(theta, abs=1e-6)
    # closed-form 2D Procrustes oracle
    mc, oc = square - square.mean(0), o - o.mean(0)
    oracle = np.arctan2(np.sum(mc[:, 0] * oc[:, 1] - mc[:, 1] * oc[:, 0]), np.sum(mc * oc))
    assert oracle == pytest.approx(theta, abs=1e-12)


def test_orthographic_projection_sound():
    rng = np.random.default_rng(6)
    proj = ProjectionSpec(np.eye(2, 4))
    for _ in range(5):
        R, t = random_rotation(rng), rng.uniform(-1, 1, 3)
        m = rng.standard_normal((25, 3))
        truth = RigidPose(R, t)
        corr = CorrespondenceSet(m, truth.apply(m)[:, :2])
        rep = estimate(corr, proj)
        assert rep.relaxation == "quadratic"
        # the hull optimum lower-bounds every rigid pose
        assert rep.diagnostics.objective <= residual(corr, proj, truth) + 1e-8
        assert np.isfinite(rep.residual)


def test_orthogonal_projection_is_exact():
    rng = np.random.default_rng(7)
    Qm, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    proj = ProjectionSpec(Qm)
    corr, truth = make(rng, delta=0.05)
    homog = np.c_[corr.observations, np.ones(corr.N)]
    pcorr = corr.with_observations(homog @ Qm.T)
    rep = estimate(pcorr, proj)
    assert rep.relaxation == "linear" and rep.exact
    np.testing.assert_allclose(rep.rigid_pose.R, horn_svd(corr).R, atol=1e-6)


@pytest.mark.parametrize("n", [2, 3])
def test_matches_horn_with_noise(n):
    rng = np.random.default_rng(8 + n)
    for N in (n + 1, 23, 200):
        for delta in (0.0, 0.01, 0.1, 1.0):
            corr, _ = make(rng, N=N, n=n, delta=delta)
            rep = estimate(corr)
            horn = horn_svd(corr)
            assert rep.exact
            np.testing.assert_allclose(rep.rigid_pose.R, horn.R, atol=1e-6)
            assert rep.residual <= residual(corr, ProjectionSpec.identity(n), horn) + 1e-8


def test_weighted_matches_weighted_horn():
    rng = np.random.default_rng(10)
    corr, _ = make(rng, delta=0.2, weights=rng.uniform(0.1, 5, 30))
    np.testing.assert_allclose(estimate(corr).rigid_pose.R, horn_svd(corr).R, atol=1e-6)


def test_quadratic_relaxation_noiseless_exact():
    rng = np.random.default_rng(11)
    corr, truth = make(rng)
    rep = estimate(corr, relaxation="quadratic", cfg=SolverConfig(gap_tol=1e-12))
    assert rep.exact
    np.testing.assert_allclose(rep.rigid_pose.R, truth.R, atol=1e-6)


def test_quadratic_relaxation_lower_bound():
    rng = np.random.default_rng(12)
    for _ in range(10):
        corr, _ = make(rng, N=10, delta=0.5)
        rep = estimate(corr, relaxation="quadratic")
        horn = horn_svd(corr)
        gap = rep.diagnostics.barrier_gap
        assert rep.diagnostics.objective <= residual(corr, ProjectionSpec.identity(3), horn) + gap + 1e-9
        assert rep.residual >= residual(corr, ProjectionSpec.identity(3), horn) - 1e-9


def test_equivariance():
    rng = np.random.default_rng(13)
    corr, _ = make(rng, delta=0.1)
    Qr = random_rotation(rng)
    R1 = estimate(corr).rigid_pose.R
    R2 = estimate(corr.with_observations(corr.observations @ Qr.T)).rigid_pose.R
    np.testing.assert_allclose(R2, Qr @ R1, atol=1e-6)


def test_degenerate_collinear():
    m = np.outer(np.linspace(-1, 1, 6), [1.0, 0.5, 0.2])
    rep = estimate(CorrespondenceSet(m, m + 1.0))
    assert not rep.exact
    assert "degenerate" in rep.rigid_pose.flags
    # still a minimiser: the line is matched
    assert rep.residual <= 1e-6


def test_solver_failure_flagged():
    rng = np.random.default_rng(14)
    corr, _ = make(rng, delta=0.1)
    rep = estimate(corr, cfg=SolverConfig(max_newton=1))
    assert not rep.exact and not rep.converged
    assert "solver-failed" in rep.rigid_pose.flags


def test_bad_relaxation_name():
    rng = np.random.default_rng(15)
    corr, _ = make(rng)
    with pytest.raises(ValueError):
        estimate(corr, relaxation="cubic")
    with pytest.raises(ValueError):
        estimate(
            CorrespondenceSet(corr.model, corr.observations[:, :2]), ProjectionSpec(np.eye(2, 4)), relaxation="linear"
        )


# -- robust ------------------------------------------------------------------------------------


def test_robust_large_lambda_equals_plain():
    rng = np.random.default_rng(16)
    corr, _ = make(rng, delta=0.05)
    plain = estimate(corr)
    r = corr.observations - plain.rigid_pose.apply(corr.model)
    lam = 1e3 * np.abs(r).max()
    rob = estimate_robust(corr, lam=lam)
    np.testing.assert_array_equal(rob.z1, 0.0)
    assert rob.outliers == []
    np.testing.assert_allclose(rob.rigid_pose.R, plain.rigid_pose.R, atol=1e-8)
    np.testing.assert_allclose(rob.rigid_pose.t, plain.rigid_pose.t, atol=1e-8)


def test_robust_small_lambda_absorbs_residual():
    rng = np.random.default_rng(17)
    corr, _ = make(rng, delta=0.2)
    rep = estimate_robust(corr, lam=1e-8)
    r = corr.observations - rep.hull_pose.apply(corr.model)
    assert np.abs(r - rep.z1).max() <= 1e-8


def test_robust_monotone_and_flags_outliers():
    rng = np.random.default_rng(18)
    corr, truth = make(rng, N=200, delta=0.01)
    bad = rng.choice(200, 15, replace=False)
    obs = corr.observations.copy()
    obs[bad] += 2.0
    rep = estimate_robust(corr.with_observations(obs), lam=0.1)
    h = rep.objective_history
    assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))
    assert set(bad) <= set(rep.outliers)
    assert rep.converged
    np.testing.assert_allclose(rep.rigid_pose.R, truth.R, atol=0.02)


def test_robust_objective_value():
    rng = np.random.default_rng(19)
    corr, truth = make(rng, N=5)
    z1 = rng.standard_normal((5, 3))
    proj = ProjectionSpec.identity(3)
    r = corr.observations - truth.apply(corr.model) - z1
    assert robust_objective(corr, proj, truth, z1, 0.3) == pytest.approx(np.sum(r * r) + 0.3 * np.abs(z1).sum())


def test_robust_max_rounds_flag():
    rng = np.random.default_rng(20)
    corr, _ = make(rng, N=60, delta=0.05)
    obs = corr.observations.copy()
    obs[:10] += 3.0
    rep = estimate_robust(corr.with_observations(obs), lam=0.1, max_rounds=1)
    assert not rep.converged and "max-rounds" in rep.rigid_pose.flags


def test_robust_rejects_bad_lambda():
    rng = np.random.default_rng(21)
    corr, _ = make(rng)
    with pytest.raises(ValueError):
        estimate_robust(corr, lam=0.0)


def test_robust_general_projection_runs():
    rng = np.random.default_rng(22)
    proj = ProjectionSpec(np.eye(2, 4))
    corr, truth = make(rng, N=40)
    pc = CorrespondenceSet(corr.model, corr.observations[:, :2])
    rep = estimate_robust(pc, proj, lam=0.5)
    assert rep.relaxation == "quadratic"
    assert isinstance(rep.hull_pose, HullPose)
