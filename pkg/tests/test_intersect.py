import itertools

import numpy as np
import pytest
from conftest import depth_two_system

from skewblend.errors import InputError
from skewblend.intersect import (
    HorizontalDisc,
    holder_transverse_bound,
    holder_transverse_spread,
    lex_least_admissible,
    refine_intersection,
    verify_lambda_u,
)
from skewblend.regions import Region
from skewblend.shift_space import TruncatedSequence, random_sequence
from skewblend.skewproduct import FiberMap, one_step_system

BASE = TruncatedSequence((), (1,) * 4)


def test_first_symbols_and_backward_images(ref_cert):
    trace = refine_intersection(ref_cert, HorizontalDisc.constant(BASE, [0.0], 0.1), 3)
    assert trace.chosen == (1, 2, 1)
    assert np.allclose([s.center_A[0] for s in trace.steps], [0.5, 0.25, 0.875])
    assert trace.word == lex_least_admissible(ref_cert, [0.0], 3)


def test_constant_disc_has_zero_diameter(ref_cert):
    trace = refine_intersection(ref_cert, HorizontalDisc.constant(BASE, [0.1], 0.1), 12)
    assert trace.valid
    assert all(s.diam_V == 0.0 for s in trace.steps)


def brute_force_word(sys, B, x0, length):
    # independent of the certificate: plain inverse maps and strict membership
    for combo in itertools.product(range(1, sys.d + 1), repeat=length):
        x = np.array([float(x0)])
        for s in combo:
            x = sys.symbol_map(s).inverse_apply(x)
            if not B.signed_distance(x) > 0:
                break
        else:
            return combo
    return None


@pytest.mark.parametrize("x0", [0.0, 0.3, -0.45, 0.7])
def test_word_matches_exhaustive_search(ref_cert, ref_sys, x0):
    trace = refine_intersection(ref_cert, HorizontalDisc.constant(BASE, [x0], 0.1), 8)
    assert trace.chosen == brute_force_word(ref_sys, ref_cert.B, x0, 8)


def holder_disc(C, nu):
    def rule(w):
        return np.array([0.5 * C * nu * (w[-1] - 1) + 0.5 * C * nu ** 2 * (w[-2] - 1)])
    return HorizontalDisc.from_rule(TruncatedSequence((1, 1), (1,) * 4), rule, depth=2, d=2, radius=0.1, C=C)


def test_holder_disc_diameters(ref_cert):
    disc = holder_disc(0.05, 0.5)
    assert disc.check(0.5, 2)["holder_slack"] >= 0
    trace = refine_intersection(ref_cert, disc, 12)
    for s in trace.steps:
        assert s.diam_V <= 0.05 * 0.5 ** s.m + 1e-15
        assert s.diam_A <= s.pullback_bound + 1e-15
        assert s.diam_A < ref_cert.lebesgue_lower
    diams = [s.diam_V for s in trace.steps]
    assert diams == sorted(diams, reverse=True)


def test_disc_preconditions(ref_cert):
    with pytest.raises(InputError):
        refine_intersection(ref_cert, HorizontalDisc.constant(BASE, [0.0], 0.5), 3)
    with pytest.raises(InputError):
        refine_intersection(ref_cert, HorizontalDisc.constant(BASE, [0.95], 0.1), 3)
    with pytest.raises(InputError):
        refine_intersection(ref_cert, HorizontalDisc.constant(BASE, [0.0], 0.1), 0)


def test_transverse_bound_plug_in():
    sys = depth_two_system(0.02)
    direct = 0.02 * 2 ** 3 * sum((0.5 / 0.6) ** j for j in range(3)) * 0.5 ** 4
    assert holder_transverse_bound(sys, 4, 3) == pytest.approx(direct, rel=1e-14)
    assert direct == pytest.approx(0.0252, abs=1e-4)


def test_transverse_bound_zero_for_one_step(ref_sys):
    assert holder_transverse_bound(ref_sys, 3, 5) == 0.0
    out = holder_transverse_spread(ref_sys, TruncatedSequence((1, 2, 1, 2), (1,)), [0.1], 4, 50, np.random.default_rng(0))
    assert out["spread"] == 0.0


def test_transverse_spread_below_bound():
    sys = depth_two_system(0.05, seed=3)
    out = holder_transverse_spread(sys, TruncatedSequence((2, 1, 1, 2, 1), (1, 2, 2)), [0.2], 3, 300, np.random.default_rng(1))
    assert out["max_ratio"] <= 1 + 1e-9


def test_lambda_u_replay(ref_cert, ref_sys):
    trace = refine_intersection(ref_cert, HorizontalDisc.constant(BASE, [0.2], 0.1), 12)
    rep = verify_lambda_u(ref_sys, (trace.sequence, trace.point), ref_cert.B, 12)
    assert rep.ok and rep.margin > 0


def test_lambda_u_stationary_orbit():
    sys = one_step_system([FiberMap.affine([[0.5]]), FiberMap.affine([[0.5]], [0.3])], nu=0.1)
    B = Region.interval(-1, 1)
    for depth in (1, 5, 20):
        xi = TruncatedSequence((1,) * depth, (1,))
        assert verify_lambda_u(sys, (xi, np.zeros(1)), B, depth).ok


def test_lambda_u_random_points_fail(ref_sys):
    rng = np.random.default_rng(4)
    fails = 0
    for _ in range(50):
        xi = random_sequence(rng, 2, 20)
        x = rng.uniform(-0.9, 0.9, 1)
        fails += not verify_lambda_u(ref_sys, (xi, x), Region.interval(-0.9, 0.9), 20).ok
    assert fails >= 45
