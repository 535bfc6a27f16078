import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skewblend.errors import InputError, VerificationFailure
from skewblend.grassmann import (
    Plane,
    apply_linear,
    bilipschitz_check,
    lift_system,
    lifted_lipschitz_empirical,
    orthonormal_frame,
    plane_distance,
    random_plane,
    sup_inf_distance,
)
from skewblend.regions import Region
from skewblend.skewproduct import FiberMap, SkewSystem


def line(theta):
    return Plane.span([[np.cos(theta)], [np.sin(theta)]])


def test_distance_examples():
    e1 = Plane.coordinate(2, [0])
    assert plane_distance(e1, e1) == 0.0
    assert plane_distance(e1, line(np.pi / 6)) == pytest.approx(0.5, abs=1e-15)
    assert plane_distance(Plane.coordinate(3, [0]), Plane.coordinate(3, [1])) == pytest.approx(1.0)
    with pytest.raises(InputError):
        plane_distance(Plane.coordinate(3, [0]), Plane.coordinate(3, [0, 1]))


@pytest.mark.parametrize("seed", range(5))
def test_distance_matches_sup_inf(seed):
    rng = np.random.default_rng(seed)
    for c, ell in ((3, 1), (4, 2), (5, 2)):
        E, F = random_plane(rng, c, ell), random_plane(rng, c, ell)
        assert plane_distance(E, F) == pytest.approx(sup_inf_distance(E, F), abs=1e-9)


@settings(max_examples=50)
@given(st.integers(0, 10 ** 6), st.sampled_from([(2, 1), (3, 1), (4, 2), (5, 3)]))
def test_distance_frame_independent_and_bounded(seed, shape):
    rng = np.random.default_rng(seed)
    c, ell = shape
    E, F = random_plane(rng, c, ell), random_plane(rng, c, ell)
    Q, _ = np.linalg.qr(rng.standard_normal((ell, ell)))
    d = plane_distance(E, F)
    assert 0.0 <= d <= 1.0
    assert abs(plane_distance(Plane(E.frame @ Q), F) - d) < 1e-10
    assert abs(plane_distance(E, Plane(F.frame @ Q)) - d) < 1e-10
    if ell == 1:
        assert abs(plane_distance(F, E) - d) < 1e-12


def test_apply_linear():
    E = Plane.span([[1.0], [1.0]])
    out = apply_linear(np.diag([2.0, 0.5]), E)
    assert np.allclose(np.abs(out.frame[:, 0]), [0.970, 0.2425], atol=1e-3)
    assert plane_distance(apply_linear(np.eye(2), E), E) < 1e-15
    with pytest.raises(InputError):
        apply_linear(np.zeros((2, 2)), E)


def test_apply_linear_frames_orthonormal():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        c = int(rng.integers(2, 6))
        ell = int(rng.integers(1, c))
        out = apply_linear(np.eye(c) + 0.5 * rng.standard_normal((c, c)), random_plane(rng, c, ell))
        assert np.allclose(out.frame.T @ out.frame, np.eye(ell), atol=1e-10)


def test_bilipschitz():
    Q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((3, 3)))
    assert bilipschitz_check(Q, 500)["observed"] <= 1 + 1e-9
    assert bilipschitz_check(np.eye(3), 200)["observed"] == pytest.approx(1.0, abs=1e-12)
    out = bilipschitz_check(np.diag([2.0, 0.5]), 2000)
    assert out["bound"] == pytest.approx(4.0) and out["ok"]


def affine_sys(A, gamma, gamma_hat, nu=0.5, L_D=0.0):
    maps = (FiberMap.affine(A), FiberMap.affine(A, np.full(len(A), 0.1)))
    return SkewSystem(maps, nu=nu, alpha=1.0, gamma=gamma, gamma_hat=gamma_hat, L_D=L_D)


def test_lift_bound_plug_in():
    lift = lift_system(affine_sys(np.diag([0.6, 1.0, 1.1]), 0.6, 0.9), 1)
    assert lift.upper_bound == pytest.approx(1 / 0.54)
    assert lift.upper_bound < 2


def test_lift_refusals():
    with pytest.raises(VerificationFailure) as err:
        lift_system(affine_sys(np.diag([0.6, 2.0]), 0.6, 0.5), 1)
    assert err.value.stage == "lift" and "bunched" in str(err.value)
    with pytest.raises(VerificationFailure):
        lift_system(affine_sys(np.diag([0.6, 1.0]), 0.6, 0.9, L_D=5.0), 1)
    with pytest.raises(InputError):
        lift_system(affine_sys(np.diag([0.6, 1.0]), 0.6, 0.9), 2)


def test_lift_projects_to_base():
    lift = lift_system(affine_sys(np.array([[0.7, 0.2], [0.0, 1.2]]), 0.6, 0.8, nu=0.3), 1)
    rng = np.random.default_rng(3)
    for _ in range(1000):
        s = int(rng.integers(1, 3))
        x = rng.standard_normal(2)
        y, _ = lift.apply(s, x, random_plane(rng, 2, 1))
        assert np.array_equal(y, lift.base.symbol_map(s)(x))


def test_lifted_lipschitz_identity_and_diag():
    ident = lift_system(affine_sys(np.eye(2), 1.0, 1.0), 1)
    assert lifted_lipschitz_empirical(ident, 300) == pytest.approx(1.0, abs=1e-9)
    lift = lift_system(affine_sys(np.diag([0.5, 2.0]), 0.5, 0.5, nu=0.2), 1)
    emp = lifted_lipschitz_empirical(lift, 3000, region=Region.ball([0, 0], 1))
    assert emp <= lift.upper_bound + 1e-6
    assert lift.upper_bound == pytest.approx(4.0)


def test_orthonormal_frame_rejects_rank_deficiency():
    with pytest.raises(InputError):
        orthonormal_frame([[1.0, 2.0], [2.0, 4.0]])
