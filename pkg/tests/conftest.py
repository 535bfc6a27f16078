import numpy as np
import pytest

from skewblend import FiberMap, Region, SkewSystem, verify_covering


def reference_system() -> SkewSystem:
    maps = (FiberMap.affine([[2 / 3]], [-1 / 3]), FiberMap.affine([[2 / 3]], [1 / 3]))
    return SkewSystem(maps, nu=0.5, alpha=1.0, gamma=0.6, gamma_hat=0.6)


@pytest.fixture(scope="session")
def ref_sys():
    return reference_system()


@pytest.fixture(scope="session")
def ref_cert(ref_sys):
    return verify_covering(ref_sys, [1, 2], Region.interval(-0.9, 0.9), Region.interval(-1, 1), 0.001, "cs")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def depth_two_system(C0: float, seed: int = 0) -> SkewSystem:
    """Reference maps plus window-2 translations scaled so that the tight Hoelder constant is ``C0``."""
    base = reference_system()
    r = np.random.default_rng(seed)
    raw = r.uniform(-1, 1, size=(4, 2, 1))
    probe = base.replace_maps(base.maps, window=2, shifts=raw, C0=1e9)
    scale = C0 / probe.tight_holder_constant()
    return base.replace_maps(base.maps, window=2, shifts=raw * scale, C0=C0)


@pytest.fixture(scope="session")
def tangency_c4():
    """``(system, certificate, seconds)`` for the codimension-two scenario."""
    import time

    from skewblend import build_tangency_scenario

    t0 = time.perf_counter()
    sys, cert = build_tangency_scenario(4, 2, 2, 2, 0.2)
    return sys, cert, time.perf_counter() - t0


@pytest.fixture(scope="session")
def cycle_2d():
    from skewblend import build_cycle_scenario

    return build_cycle_scenario(2, 1, 1, 0.2)


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record a named acceptance check; the line is printed in the terminal summary."""
    name = request.node.get_closest_marker("criterion").args[0]
    ACCEPTANCE[name] = (False, "did not finish")

    def report(ok: bool, detail: str):
        ACCEPTANCE[name] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail

    return report


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion recorded in the summary")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: (len(k.split()[0]), k)):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
