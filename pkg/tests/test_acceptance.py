"""Acceptance checks, one test per criterion; each prints a PASS/FAIL line."""

import itertools
import time
from fractions import Fraction

import numpy as np
import pytest
from conftest import depth_two_system, reference_system

from skewblend.blending import verify_conley_moser, verify_covering
from skewblend.cones import Cone, backward_contraction_check, verify_unstable_cone
from skewblend.cycles import (
    build_cycle_scenario,
    certify_tangency,
    find_transition,
    make_tangency_scenario,
    robustness_probe,
)
from skewblend.errors import VerificationFailure
from skewblend.grassmann import (
    Plane,
    bilipschitz_check,
    lift_system,
    lifted_lipschitz_empirical,
    plane_distance,
    random_plane,
    sup_inf_distance,
)
from skewblend.intersect import HorizontalDisc, holder_transverse_spread, refine_intersection, verify_lambda_u
from skewblend.regions import Region
from skewblend.shift_space import TruncatedSequence
from skewblend.skewproduct import FiberMap, SkewSystem, one_step_system

B_REF, D_REF = Region.interval(-0.9, 0.9), Region.interval(-1, 1)


@pytest.mark.criterion("1 reference covering")
def test_reference_covering(criterion):
    sys = reference_system()
    t0 = time.perf_counter()
    cert = verify_covering(sys, [1, 2], B_REF, D_REF, 0.001)
    dt = time.perf_counter() - t0
    L = cert.lebesgue_lower
    criterion(cert.valid and 0.52 <= L <= 0.534 and cert.delta_max >= 0.156 and dt < 1.0,
              f"L={L:.5f} delta_max={cert.delta_max:.5f} time={dt:.3f}s")


def lex_least_oracle(sys, B, x0, length):
    for word in itertools.product(range(1, sys.d + 1), repeat=length):
        x = np.array([x0])
        for s in word:
            x = sys.symbol_map(s).inverse_apply(x)
            if not B.signed_distance(x) > 0:
                break
        else:
            return word
    return None


@pytest.mark.criterion("2 nested refinement")
def test_refinement(criterion):
    sys = reference_system()
    cert = verify_covering(sys, [1, 2], B_REF, D_REF, 0.001)
    problems = []
    for x0 in np.linspace(-0.6, 0.6, 7):
        trace = refine_intersection(cert, HorizontalDisc.constant(TruncatedSequence((), (1,) * 4), [x0], 0.1), 12)
        for s in trace.steps:
            if not (s.diam_V <= s.delta_bound + 1e-15 and s.diam_A <= s.pullback_bound + 1e-15
                    and s.diam_A < cert.lebesgue_lower and s.orbit_margin > 0):
                problems.append(("diam", x0, s.n))
        if not verify_lambda_u(sys, (trace.sequence, trace.point), B_REF, 12).ok:
            problems.append(("lambda_u", x0))
        if trace.chosen[:8] != lex_least_oracle(sys, B_REF, x0, 8):
            problems.append(("word", x0))
    criterion(not problems, f"7 discs, N=12, problems={problems}")


@pytest.mark.criterion("3 Hoelder transverse bound")
def test_holder_bound(criterion):
    # cylinders follow admissible past words, so backward orbits stay in D
    cert = verify_covering(reference_system(), [1, 2], B_REF, D_REF, 0.001)
    viol, worst = 0, 0.0
    for C0 in (0.01, 0.02, 0.05):
        sys = depth_two_system(C0)
        rng = np.random.default_rng(int(C0 * 1000))
        for _ in range(10):
            x0 = rng.uniform(-0.6, 0.6, 1)
            disc = HorizontalDisc.constant(TruncatedSequence((), (1,) * 4), x0, 0.1)
            past = refine_intersection(cert, disc, 6).sequence.past
            cyl = TruncatedSequence(past, tuple(rng.integers(1, 3, 3).tolist()))
            out = holder_transverse_spread(sys, cyl, x0, 4, 100, rng, D=D_REF)
            worst = max(worst, out["max_ratio"])
            viol += out["max_ratio"] > 1 + 1e-12
    criterion(viol == 0, f"3000 pairs, violations={viol}, worst spread/bound={worst:.4f}")


@pytest.mark.criterion("4 plane distance")
def test_plane_distance(criterion):
    rng = np.random.default_rng(4)
    shapes = [(2, 1), (3, 1), (3, 2), (4, 1), (4, 2), (5, 2), (6, 1), (6, 2)]
    worst = 0.0
    for k in range(10_000):
        c, ell = shapes[k % len(shapes)]
        E, F = random_plane(rng, c, ell), random_plane(rng, c, ell)
        worst = max(worst, abs(plane_distance(E, F) - sup_inf_distance(E, F)))
    e1 = Plane.coordinate(2, [0])
    thetas = np.linspace(-np.pi, np.pi, 100)
    rot = max(abs(plane_distance(e1, Plane.span([[np.cos(t)], [np.sin(t)]])) - abs(np.sin(t))) for t in thetas)
    criterion(worst <= 1e-9 and rot <= 1e-9, f"10^4 pairs max error {worst:.2e}; rotation max error {rot:.2e}")


@pytest.mark.criterion("5 bi-Lipschitz")
def test_bilipschitz(criterion):
    rng = np.random.default_rng(5)
    worst_excess, n = -np.inf, 0
    for cond in np.geomspace(1, 1e3, 20):
        c = int(rng.integers(2, 6))
        U, _ = np.linalg.qr(rng.standard_normal((c, c)))
        V, _ = np.linalg.qr(rng.standard_normal((c, c)))
        s = np.geomspace(1, cond, c)
        out = bilipschitz_check(U @ np.diag(s) @ V.T, 500, rng)
        worst_excess = max(worst_excess, out["observed"] - out["bound"])
        n += 500
    criterion(worst_excess <= 1e-9, f"{n} samples, cond up to 1e3, max(observed-bound)={worst_excess:.3g}")


def scenario_systems():
    out = {"block_2d": one_step_system([FiberMap.affine(np.diag([0.5, 2.0])),
                                        FiberMap.affine(np.diag([0.5, 2.0]), [0.1, 0])], nu=0.2)}
    for args in ((2, 1, 1, 1), (3, 1, 2, 2), (4, 2, 2, 2)):
        out[f"tangency{args}"] = make_tangency_scenario(*args, 0.2).system
    return out


@pytest.mark.criterion("6 Grassmannian lift")
def test_lift(criterion):
    bad, notes = [], []
    for name, sys in scenario_systems().items():
        for ell in range(1, sys.c):
            lift = lift_system(sys, ell)
            emp = lifted_lipschitz_empirical(lift, 2000, np.random.default_rng(ell), region=Region.ball(np.zeros(sys.c), 1))
            notes.append(f"{name}/l={ell}: {emp:.3f}<={lift.upper_bound:.3f}")
            if emp > lift.upper_bound + 1e-6:
                bad.append(name)
    rng = np.random.default_rng(6)
    mismatch = 0
    for k in range(100):
        nu = rng.uniform(0.1, 0.4)
        g = rng.uniform(nu * 1.01, 0.95)
        if k % 2:
            gh = nu / g * (1 + rng.choice([-1, 1]) * 1e-9)  # bunching boundary
            L = 0.0
        else:
            gh = rng.uniform(max(nu / g, nu) * 1.01, 0.95)
            lim = g * (1 / nu - 1 / gh)
            L = lim * (1 + rng.choice([-1, 1]) * 1e-9)  # derivative boundary
        gh = max(gh, nu * 1.0001)
        maps = (FiberMap.affine(np.diag([g, 1 / gh])),
                FiberMap.affine(np.diag([g, 1 / gh]), [0.1, 0]))
        sys = SkewSystem(maps, nu=nu, alpha=1.0, gamma=g, gamma_hat=gh, L_D=L)
        Fg, Fgh, Fnu, FL = map(Fraction, (g, gh, nu, L))
        expect_refuse = Fg * Fgh <= Fnu or FL >= Fg * (1 / Fnu - 1 / Fgh)
        try:
            lift_system(sys, 1)
            refused = False
        except VerificationFailure:
            refused = True
        mismatch += refused != expect_refuse
    criterion(not bad and mismatch == 0, f"empirical<=bound on {len(notes)} lifts; boundary fuzz mismatches={mismatch}")


@pytest.mark.criterion("7 cones")
def test_cones(criterion):
    A = np.diag([3.0, 1 / 3])
    sys = one_step_system([FiberMap.affine(A), FiberMap.affine(A, [0.1, 0.0])], nu=0.1)
    cone, region = Cone.standard(2, 1, 0.5), Region.ball([0, 0], 1)
    cert = verify_unstable_cone(sys, cone, region, 0.4)
    xi = TruncatedSequence((1,) * 10, (1,))
    rep = backward_contraction_check(sys, cone, (xi, np.zeros(2), 10), 0.4, vectors=[[1.0, 0.0]])
    eta = cert.min_margin * (1 / 3) / 4
    rng = np.random.default_rng(7)
    passed = 0
    for _ in range(100):
        maps = []
        for m in sys.maps:
            P = rng.standard_normal((2, 2))
            maps.append(FiberMap.affine(m.A + eta * P / np.linalg.norm(P, 2), m.b))
        passed += verify_unstable_cone(sys.replace_maps(maps), cone, region, 0.4, raise_on_fail=False).min_margin > 0
    ok = cert.min_expansion >= 2.68 and cert.min_margin > 0 and abs(rep.fitted_rate - 1 / 3) < 1e-12 and passed == 100
    criterion(ok, f"expansion={cert.min_expansion:.4f} margin={cert.min_margin:.4f} "
                  f"backward rate={rep.fitted_rate:.12f} perturbed {passed}/100")


@pytest.mark.criterion("8 codimension-two tangency")
def test_tangency(criterion, tangency_c4):
    _, cert, dt = tangency_c4
    rel = cert.rates["max_relative_error"] if cert.rates else np.inf
    ok = cert.valid and cert.c_T == 2 and cert.d_T == 2 and cert.report.N == 20 and rel <= 0.1 and dt < 60
    criterion(ok, f"valid={cert.valid} c_T={cert.c_T} d_T={cert.d_T} rate error={rel:.2e} time={dt:.1f}s")


@pytest.mark.criterion("9 robustness probe")
def test_probe(criterion, tangency_c4, cycle_2d):
    lines, ok = [], True
    small = certify_tangency(make_tangency_scenario(2, 1, 1, 1, 0.2))
    targets = [("cycle c=2", cycle_2d[1], cycle_2d[1].system.gamma),
               ("tangency c=2", small, small.source.system.gamma),
               ("tangency c=4", tangency_c4[1], tangency_c4[1].source.system.gamma)]
    for name, cert, gamma in targets:
        good = robustness_probe(cert, cert.slack * gamma / 4, 100, seed=9)
        bad = robustness_probe(cert, 10 * cert.slack, 5, seed=9)
        named = bool(bad.failures) and all(f.get("stage") for f in bad.failures)
        ok &= good.passed == 100 and named
        stages = sorted({f["stage"] for f in bad.failures})
        lines.append(f"{name}: {good.passed}/100 at slack*gamma/4, {len(bad.failures)}/5 fail at 10*slack {stages}")
    criterion(ok, "; ".join(lines))


def brute_transition(sys, pts, target, max_depth):
    for n in range(1, max_depth + 1):
        for word in itertools.product(range(1, sys.d + 1), repeat=n):
            X = pts.copy()
            for s in word:
                f = sys.symbol_map(s)
                X = X @ f.A.T + f.b
            if np.any(target.signed_distance(X) > 0):
                return word
    return None


@pytest.mark.criterion("10 transition search")
def test_transition_optimal(criterion):
    rng = np.random.default_rng(10)
    mismatches, found = 0, 0
    for _ in range(50):
        c, d = int(rng.integers(1, 3)), int(rng.integers(2, 4))
        maps = [FiberMap.affine(np.diag(rng.uniform(0.4, 1.6, c)), rng.uniform(-1, 1, c)) for _ in range(d)]
        sys = one_step_system(maps, nu=0.05)
        pts = rng.uniform(-1, 1, (3, c))
        target = Region.ball(rng.uniform(-2, 2, c), rng.uniform(0.1, 0.5))
        depth = int(rng.integers(1, 7))
        want = brute_transition(sys, pts, target, depth)
        try:
            got = find_transition(sys, pts, target, depth).word
        except VerificationFailure:
            got = None
        found += got is not None
        mismatches += got != want
    criterion(mismatches == 0, f"50 configs, {found} with a transition, mismatches={mismatches}")


@pytest.mark.criterion("11 Conley-Moser")
def test_conley_moser(criterion):
    sys = one_step_system([FiberMap.affine(np.diag([0.5, 3.0]))] * 2, nu=0.25)
    cert = verify_conley_moser(sys, [1, 2], Region.interval(-1, 1), Region.interval(-1, 1))
    exact = (cert.contraction_cs == 0.5 and abs(cert.contraction_cu - 1 / 3) < 1e-15
             and cert.margin_cs == 0.5 and abs(cert.margin_cu - 2 / 3) < 1e-15)
    ident = SkewSystem((FiberMap.affine(np.eye(2)),) * 2, nu=0.5, alpha=1.0, gamma=1.0, gamma_hat=1.0)
    try:
        verify_conley_moser(ident, [1, 2], Region.interval(-1, 1), Region.interval(-1, 1))
        rejected = False
    except VerificationFailure:
        rejected = True
    criterion(cert.valid and exact and rejected,
              f"diag block margins ({cert.margin_cs}, {cert.margin_cu:.6f}); identity rejected={rejected}")
