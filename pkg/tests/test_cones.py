import numpy as np
import pytest

from skewblend.cones import (
    Cone,
    backward_contraction_check,
    cone_contains,
    cone_to_grassmann,
    inverse_system,
    verify_stable_cone,
    verify_unstable_cone,
)
from skewblend.errors import VerificationFailure
from skewblend.grassmann import Plane, apply_linear, random_plane
from skewblend.regions import Region
from skewblend.shift_space import TruncatedSequence
from skewblend.skewproduct import FiberMap, SkewSystem, one_step_system

CONE = Cone.standard(2, 1, 0.5)
REGION = Region.ball([0, 0], 1)


def diag_sys(a, b):
    A = np.diag([a, b])
    return one_step_system([FiberMap.affine(A), FiberMap.affine(A, [0.1, 0.0])], nu=0.1)


@pytest.mark.parametrize("x, inside, margin", [((1, 0), True, 0.5), ((1, 0.5), False, 0.0), ((1, 1), False, -0.5)])
def test_cone_contains(x, inside, margin):
    ok, m = cone_contains(CONE, np.array(x, dtype=float), strict=True)
    assert ok == inside and m == pytest.approx(margin)
    assert cone_contains(CONE, np.array([1.0, 0.5]), strict=False)[0]


def test_expanding_diagonal_cone():
    cert = verify_unstable_cone(diag_sys(3, 1 / 3), CONE, REGION, lam=0.4)
    assert cert.valid and cert.min_margin > 0
    assert cert.min_expansion >= 3 / np.sqrt(1.25) - 1e-12
    sampled = verify_unstable_cone(diag_sys(3, 1 / 3), CONE, REGION, lam=0.4, sample=True)
    worst = min(r["sampled_expansion"] for r in sampled.per_symbol)
    assert 3 / np.sqrt(1.25) - 1e-12 <= worst <= 3 / np.sqrt(1.25) * 1.01


def test_identity_fails_strictly():
    cert = verify_unstable_cone(diag_sys(1, 1), CONE, REGION, lam=0.9, raise_on_fail=False)
    assert not cert.valid and cert.min_margin <= 1e-12


def test_contracting_diagonal_escapes():
    with pytest.raises(VerificationFailure) as err:
        verify_unstable_cone(diag_sys(1 / 3, 3), CONE, REGION, lam=0.4)
    v = np.abs(err.value.witness["v"])
    assert v[1] / v[0] == pytest.approx(0.5)


def test_duality():
    s = SkewSystem.with_tight_constants([FiberMap.affine([[3.0, 0.2], [0.1, 0.4]]),
                                         FiberMap.affine([[2.5, -0.1], [0.0, 0.5]], [0.2, 0])], nu=0.1)
    a = verify_stable_cone(s, CONE, REGION, 0.5, raise_on_fail=False, sample=True)
    b = verify_unstable_cone(inverse_system(s), CONE, REGION, 0.5, raise_on_fail=False, sample=True)
    assert a.min_margin == pytest.approx(b.min_margin, rel=1e-12)
    assert a.min_expansion == pytest.approx(b.min_expansion, rel=1e-12)


def test_backward_contraction_rate():
    s = diag_sys(3, 1 / 3)
    xi = TruncatedSequence((1,) * 10, (1,))
    rep = backward_contraction_check(s, CONE, (xi, np.zeros(2), 10), lam=0.4, vectors=[[1.0, 0.0]])
    assert rep.ok and rep.fitted_rate == pytest.approx(1 / 3, rel=1e-12)
    rim = backward_contraction_check(s, CONE, (xi, np.zeros(2), 10), lam=0.4, vectors=[[1.0, 0.5]])
    assert not rim.ok
    ident = backward_contraction_check(diag_sys(1, 1), CONE, (xi, np.zeros(2), 10), lam=0.9)
    assert not ident.ok and ident.fitted_rate == pytest.approx(1.0)


def test_cone_to_grassmann():
    ok, m = cone_to_grassmann(CONE, Plane.coordinate(2, [0]))
    assert ok and m == pytest.approx(0.5)
    assert not cone_to_grassmann(CONE, Plane.coordinate(2, [1]))[0]
    for theta in np.linspace(0.05, 1.2, 24):
        E = Plane.span([[np.cos(theta)], [np.sin(theta)]])
        assert cone_to_grassmann(CONE, E)[0] == (np.tan(theta) < 0.5)


def test_plane_invariance_follows_from_vectors():
    s = diag_sys(3, 1 / 3)
    C3 = Cone.standard(3, 1, 0.5)
    s3 = one_step_system([FiberMap.affine(np.diag([3, 0.5, 1 / 3]))] * 2, nu=0.1)
    assert verify_unstable_cone(s3, C3, Region.ball([0, 0, 0], 1), 0.4).valid
    rng = np.random.default_rng(0)
    for _ in range(200):
        E = random_plane(rng, 3, 1)
        if cone_to_grassmann(C3, E)[0]:
            assert cone_to_grassmann(C3, apply_linear(s3.symbol_map(1).A, E))[0]
    assert s.d == 2
