import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from frontlab.cell import DiffusionSpec, FlowSpec, ScalarField, build_cell, make_flow

settings.register_profile(
    "frontlab", deadline=None, max_examples=25, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("frontlab")

_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """``criterion(k, ok, detail)`` records one sub-check of acceptance item ``k``."""

    def record(k, ok, detail):
        _ACCEPTANCE.setdefault(k, []).append((bool(ok), detail))
        line = f"ACCEPTANCE {k} {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[k]
        ok = all(p for p, _ in parts)
        failed = [d for p, d in parts if not p]
        tail = "" if ok else " | failing: " + "; ".join(failed)
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} "
                                    f"({sum(p for p, _ in parts)}/{len(parts)} checks){tail}")


def unit_problem(n=16, N=2, zeta=1.0):
    cell = build_cell(N, [1.0] * N, [n] * N)
    return cell, DiffusionSpec.identity(cell), ScalarField.constant(cell, zeta)


def shear(cell, profile="sin", amplitude=1.0):
    return make_flow(FlowSpec("shear", amplitude=amplitude, profile=profile), cell)


def cellular(cell, amplitude=1.0):
    return make_flow(FlowSpec("cellular", amplitude=amplitude), cell)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
