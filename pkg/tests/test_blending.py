import numpy as np
import pytest

from skewblend.blending import build_translation_family, verify_conley_moser, verify_covering
from skewblend.errors import InputError, VerificationFailure
from skewblend.regions import Region
from skewblend.skewproduct import FiberMap, SkewSystem, one_step_system

B_REF, D_REF = Region.interval(-0.9, 0.9), Region.interval(-1, 1)


def contracting_system(maps):
    # all maps contract, so only a loose gamma_hat keeps partial hyperbolicity
    return SkewSystem(tuple(maps), nu=0.2, alpha=1.0, gamma=0.5, gamma_hat=0.5)


def test_reference_covering(ref_cert):
    assert ref_cert.valid
    assert 0.52 <= ref_cert.lebesgue_lower <= 0.534
    assert ref_cert.delta_max >= 0.156
    assert ref_cert.delta_max == pytest.approx(ref_cert.system.gamma * ref_cert.lebesgue_lower / 2)
    assert ref_cert.holder_bound == 0.0


def test_lebesgue_bound_tightens_with_h(ref_sys):
    vals = [verify_covering(ref_sys, [1, 2], B_REF, D_REF, h).lebesgue_lower for h in (0.02, 0.01, 0.005, 0.001)]
    assert vals == sorted(vals)
    assert 0.534 - vals[-1] <= 0.02


def test_full_interval_is_not_covered(ref_sys):
    with pytest.raises(VerificationFailure) as err:
        verify_covering(ref_sys, [1, 2], Region.interval(-1, 1), Region.interval(-1.5, 1.5), 0.001)
    w = err.value.witness
    assert abs(abs(w["point"][0]) - 1) < 0.01


def test_identity_maps_fail():
    ident = FiberMap.affine(np.eye(1))
    sys = SkewSystem((ident, ident), nu=0.5, alpha=1.0, gamma=1.0, gamma_hat=1.0)
    with pytest.raises((VerificationFailure, InputError)):
        verify_covering(sys, [1, 2], B_REF, D_REF, 0.01)


def test_covering_soundness(ref_cert):
    pts = B_REF.sample(np.random.default_rng(0), 10_000)
    depth = ref_cert.depths(pts).max(axis=0).reshape(-1)
    assert np.all(depth > 0)


def test_covering_survives_small_translations(ref_sys, ref_cert):
    rng = np.random.default_rng(5)
    eta = ref_cert.slack * ref_sys.gamma / 2 * 0.99
    for _ in range(10):
        maps = [m.then(FiberMap.translation(rng.uniform(-eta, eta, 1))) for m in ref_sys.maps]
        assert verify_covering(ref_sys.replace_maps(maps), [1, 2], B_REF, D_REF, 0.002).valid


def test_cu_mode_uses_inverses():
    maps = (FiberMap.affine([[1.5]], [-0.5]), FiberMap.affine([[1.5]], [0.5]))
    sys = SkewSystem(maps, nu=0.5, alpha=1.0, gamma=0.6, gamma_hat=0.6)
    cert = verify_covering(sys, [1, 2], B_REF, D_REF, 0.001, mode="cu")
    assert cert.valid and cert.mode == "cu"


def test_translation_family_one_dim():
    fam = build_translation_family(FiberMap.affine([[0.5]]), [0.0], 0.1)
    d = fam.delta
    assert fam.k == 3
    assert np.allclose(sorted(fam.offsets[:, 0]), [-0.6 * d, 0, 0.6 * d])
    assert fam.offsets[0, 0] == 0.0
    assert np.allclose(fam.B.bounds(), ([-d], [d]))
    sys = contracting_system(fam.maps)
    cert = verify_covering(sys, range(1, 4), fam.B, fam.D)
    assert cert.cover_margin >= 0.1 * d - 2 * cert.correction


def test_translation_family_two_dim():
    fam = build_translation_family(FiberMap.affine(np.diag([0.5, 0.5])), [0.0, 0.0], 0.1)
    assert fam.k <= 9
    sys = contracting_system(fam.maps)
    assert verify_covering(sys, range(1, fam.k + 1), fam.B, fam.D).valid


def test_translation_family_shrinks_with_eps():
    phi = FiberMap.affine([[0.5]])
    reach = [np.abs(build_translation_family(phi, [0.0], e).offsets).max() for e in (0.1, 0.01, 0.001)]
    assert reach[0] > reach[1] > reach[2] and reach[2] < 1e-3


def test_translation_family_rejects_bad_input():
    with pytest.raises(InputError):
        build_translation_family(FiberMap.affine([[2.0]]), [0.0], 0.1)
    with pytest.raises(InputError):
        build_translation_family(FiberMap.affine([[0.5]], [1.0]), [0.0], 0.1)


def test_conley_moser_diagonal():
    sys = one_step_system([FiberMap.affine(np.diag([0.5, 3.0]))] * 2, nu=0.25)
    cert = verify_conley_moser(sys, [1], Region.interval(-1, 1), Region.interval(-1, 1))
    assert cert.valid and cert.cs_index == 1
    assert cert.margin_cs == pytest.approx(0.5)
    assert cert.margin_cu == pytest.approx(2 / 3)
    assert cert.contraction_cs == pytest.approx(0.5) and cert.contraction_cu == pytest.approx(1 / 3)


def test_conley_moser_offset_leaves_domain():
    sys = one_step_system([FiberMap.affine(np.diag([0.5, 3.0]), [0.8, 0.0])] * 2, nu=0.25)
    with pytest.raises(VerificationFailure) as err:
        verify_conley_moser(sys, [1], Region.interval(-1, 1), Region.interval(-1, 1))
    assert err.value.witness["margin_cs"] < 0


def test_conley_moser_identity_and_non_block():
    ident = SkewSystem((FiberMap.affine(np.eye(2)),) * 2, nu=0.5, alpha=1.0, gamma=1.0, gamma_hat=1.0)
    with pytest.raises(VerificationFailure) as err:
        verify_conley_moser(ident, [1], Region.interval(-1, 1), Region.interval(-1, 1))
    assert err.value.witness["singular_value"] == pytest.approx(1.0)
    shear = one_step_system([FiberMap.affine([[0.5, 0.1], [0.0, 3.0]])] * 2, nu=0.25)
    with pytest.raises(InputError):
        verify_conley_moser(shear, [1], Region.interval(-1, 1), Region.interval(-1, 1))
