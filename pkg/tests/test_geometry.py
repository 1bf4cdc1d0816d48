import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitope.geometry import (
    HullPose,
    RigidPose,
    Rotation2Hull,
    gram_to_rotation,
    hull_membership,
    hull_membership_so2,
    hull_membership_so3,
    is_rotation,
    project_to_rotation,
    quat_to_rotation,
    random_rotation,
    so3_lmi,
)


def unit_quats(rng, k):
    u = rng.standard_normal((k, 4))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def rodrigues(axis, angle):
    a = np.asarray(axis, float) / np.linalg.norm(axis)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


# -- so3_lmi --------------------------------------------------------------


def test_lmi_identity():
    np.testing.assert_allclose(so3_lmi(np.eye(3)), np.diag([4.0, 0, 0, 0]), atol=0)


def test_lmi_zero():
    np.testing.assert_array_equal(so3_lmi(np.zeros((3, 3))), np.eye(4))


def test_lmi_quaternion_gram():
    rng = np.random.default_rng(1)
    for u in unit_quats(rng, 100):
        np.testing.assert_allclose(so3_lmi(quat_to_rotation(u)), 4 * np.outer(u, u), atol=1e-12)


def test_lmi_is_symmetric_affine():
    rng = np.random.default_rng(2)
    A, B = rng.standard_normal((2, 3, 3))
    L = so3_lmi(A)
    assert np.allclose(L, L.T)
    # affine: L(aA + (1-a)B) = aL(A) + (1-a)L(B)
    np.testing.assert_allclose(so3_lmi(0.3 * A + 0.7 * B), 0.3 * L + 0.7 * so3_lmi(B), atol=1e-12)


# -- membership -----------------------------------------------------------


def test_membership_so3_examples():
    m = hull_membership_so3(np.eye(3))
    assert m.inside and abs(m.margin) < 1e-12
    m = hull_membership_so3(1.1 * np.eye(3))
    assert not m.inside and m.margin == pytest.approx(-0.1)
    m = hull_membership_so3(np.zeros((3, 3)))
    assert m.inside and m.margin == pytest.approx(1.0)


def test_membership_so2_examples():
    assert hull_membership_so2(Rotation2Hull(1.0, 0.0)) == (True, 0.0)
    m = hull_membership_so2(Rotation2Hull(0.6, 0.8))
    assert m.inside and abs(m.margin) < 1e-12
    assert hull_membership_so2(Rotation2Hull(1.0, 1.0)) == (False, -1.0)


def test_membership_dispatch_2d_matrix():
    R = Rotation2Hull.from_angle(0.4).matrix()
    assert hull_membership(R).inside
    assert hull_membership(0.5 * R).margin == pytest.approx(0.75)


def test_rotations_on_boundary():
    rng = np.random.default_rng(3)
    for _ in range(50):
        assert abs(hull_membership_so3(random_rotation(rng)).margin) < 1e-9


def test_convex_combinations_inside():
    rng = np.random.default_rng(4)
    for _ in range(50):
        k = rng.integers(2, 6)
        a = rng.dirichlet(np.ones(k))
        X = sum(ai * random_rotation(rng) for ai in a)
        assert hull_membership_so3(X).margin >= -1e-12


def test_reflection_outside():
    assert not hull_membership_so3(np.diag([1.0, 1.0, -1.0])).inside


# -- quaternions / Gram map ----------------------------------------------


def test_quat_examples():
    np.testing.assert_allclose(quat_to_rotation([1, 0, 0, 0]), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(quat_to_rotation([0, 1, 0, 0]), np.diag([1.0, -1, -1]), atol=1e-15)
    R = quat_to_rotation([np.sqrt(0.5), np.sqrt(0.5), 0, 0])
    np.testing.assert_allclose(R, rodrigues([1, 0, 0], np.pi / 2), atol=1e-15)
    assert R[1, 2] == pytest.approx(-1) and R[2, 1] == pytest.approx(1)


def test_quat_rejects_non_unit():
    with pytest.raises(ValueError):
        quat_to_rotation([1, 1, 0, 0])


def test_quat_sign_invariant():
    u = unit_quats(np.random.default_rng(5), 1)[0]
    np.testing.assert_allclose(quat_to_rotation(u), quat_to_rotation(-u), atol=1e-15)


def test_quat_is_rotation():
    for u in unit_quats(np.random.default_rng(6), 100):
        assert is_rotation(quat_to_rotation(u), 1e-12)


def test_gram_examples():
    np.testing.assert_allclose(gram_to_rotation(np.diag([1.0, 0, 0, 0])), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(gram_to_rotation(np.eye(4) / 4), np.zeros((3, 3)), atol=1e-15)


def test_gram_roundtrip():
    for u in unit_quats(np.random.default_rng(7), 100):
        np.testing.assert_allclose(gram_to_rotation(np.outer(u, u)), quat_to_rotation(u), atol=1e-12)


def test_gram_image_is_in_hull():
    rng = np.random.default_rng(8)
    for _ in range(50):
        A = rng.standard_normal((4, 4))
        V = A @ A.T
        V /= np.trace(V)
        assert hull_membership_so3(gram_to_rotation(V)).margin >= -1e-12


# -- projection -------------------------------------------------------------


def test_projection_fixes_rotations():
    R = random_rotation(np.random.default_rng(9))
    P, deg = project_to_rotation(R)
    np.testing.assert_allclose(P, R, atol=1e-12)
    assert not deg


def test_projection_half_identity():
    P, deg = project_to_rotation(0.5 * np.eye(3))
    np.testing.assert_allclose(P, np.eye(3), atol=1e-15)
    assert not deg


def test_projection_reflection_is_degenerate():
    S = np.diag([1.0, 1.0, -1.0])
    P, deg = project_to_rotation(S)
    assert deg and is_rotation(P)
    assert np.linalg.norm(P - S) == pytest.approx(2.0)


def test_projection_reflection_distance_brute_force():
    # nearest-rotation distance^2 = 4 for diag(1,1,-1): check over a grid of rotations
    S = np.diag([1.0, 1.0, -1.0])
    rng = np.random.default_rng(10)
    best = min(np.sum((random_rotation(rng) - S) ** 2) for _ in range(3000))
    assert best >= 4.0 - 1e-12


def test_projection_optimal_and_idempotent():
    rng = np.random.default_rng(11)
    for _ in range(10):
        S = rng.standard_normal((3, 3))
        P, _ = project_to_rotation(S)
        assert is_rotation(P) and np.linalg.det(P) > 0
        d = np.linalg.norm(P - S)
        others = [np.linalg.norm(random_rotation(rng) - S) for _ in range(1000)]
        assert d <= min(others) + 1e-12
        np.testing.assert_allclose(project_to_rotation(P)[0], P, atol=1e-12)


def test_projection_2d():
    R = Rotation2Hull.from_angle(1.2).matrix()
    P, deg = project_to_rotation(0.3 * R)
    np.testing.assert_allclose(P, R, atol=1e-14)
    assert not deg


def test_projection_never_reflects():
    rng = np.random.default_rng(12)
    for _ in range(100):
        S = rng.standard_normal((3, 3))
        if np.linalg.det(S) > 0:
            S[:, 0] *= -1
        assert np.linalg.det(project_to_rotation(S)[0]) > 0


# -- random rotations -------------------------------------------------------


def test_random_rotation_deterministic():
    a = random_rotation(np.random.default_rng(42))
    b = random_rotation(np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)
    assert is_rotation(a)
    assert is_rotation(random_rotation(np.random.default_rng(42), n=2))


def test_random_rotation_uniform_mean():
    rng = np.random.default_rng(13)
    mean = sum(random_rotation(rng) for _ in range(10_000)) / 10_000
    assert np.abs(mean).max() < 0.05


# -- poses ---------------------------------------------------------------------


def test_rigid_pose_validates():
    with pytest.raises(ValueError):
        RigidPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        RigidPose(np.eye(3), np.zeros(2))


def test_homogeneous_last_row():
    rng = np.random.default_rng(14)
    H = HullPose(0.5 * random_rotation(rng), rng.standard_normal(3)).matrix()
    np.testing.assert_array_equal(H[3], [0, 0, 0, 1])
    pose = RigidPose(random_rotation(rng), rng.standard_normal(3))
    pts = rng.standard_normal((5, 3))
    homog = np.c_[pts, np.ones(5)] @ pose.matrix().T
    np.testing.assert_allclose(homog[:, :3], pose.apply(pts), atol=1e-14)


def test_rotation2hull_roundtrip():
    h = Rotation2Hull.from_angle(2.5)
    np.testing.assert_allclose(Rotation2Hull.from_matrix(h.matrix()), h, atol=1e-15)
    assert h.angle == pytest.approx(2.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_lmi_gram_property(v):
    u = np.array(v) / np.linalg.norm(v)
    R = quat_to_rotation(u)
    L = so3_lmi(R)
    assert np.trace(L) == pytest.approx(4.0, abs=1e-12)
    assert np.linalg.matrix_rank(L, tol=1e-9) == 1
