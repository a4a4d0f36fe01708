import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frontlab import speed as speed_mod
from frontlab.cell import FlowSpec, ScalarField, VectorField, make_flow
from frontlab.discrete import OperatorSpec, assemble
from frontlab.eigen import principal_eigenvalue
from frontlab.speed import (SpeedCurve, SpeedPoint, SweepError, amplitude_sweep,
                            estimate_linear_limit, golden_section, minimal_speed, write_speed_csv)

from conftest import shear, unit_problem


def test_homogeneous_speed():
    cell, A, zeta = unit_problem(32)
    p = minimal_speed(cell, A, None, zeta, [1.0, 0.0], 0.0)
    assert p.c_star == pytest.approx(2.0, abs=1e-5)
    assert p.lam_star == pytest.approx(1.0, abs=1e-4)
    assert p.c_star == pytest.approx(p.k / p.lam_star, rel=1e-14)
    assert p.interior


def test_homogeneous_speed_scales_with_zeta():
    cell, A, zeta = unit_problem(16, zeta=4.0)
    p = minimal_speed(cell, A, None, zeta, [1.0, 0.0], 0.0)
    assert p.c_star == pytest.approx(4.0, abs=1e-5)
    assert p.lam_star == pytest.approx(2.0, abs=1e-4)


def test_shear_speed_matches_dense_lambda_scan():
    cell, A, zeta = unit_problem(32)
    q = shear(cell)
    M, e = 8.0, np.array([1.0, 0.0])
    p = minimal_speed(cell, A, q, zeta, e, M)
    lams = np.linspace(0.5 * p.lam_star, 2.0 * p.lam_star, 2000)
    best, start = math.inf, None
    for lam in lams:
        r = principal_eigenvalue(assemble(OperatorSpec(cell, A, q, M, zeta, e, lam, p.scheme)),
                                 start=start)
        start = r.eigenfunction.values
        best = min(best, r.k / lam)
    assert abs(p.c_star - best) <= 1e-5 * best


def test_minimal_on_scanned_grid():
    cell, A, zeta = unit_problem(16)
    p = minimal_speed(cell, A, shear(cell, "two_bump"), zeta, [0.6, 0.8], 5.0)
    assert all(p.c_star <= c * (1 + 1e-12) for _, c in p.scan)


def test_golden_section_quadratic():
    x, fx = golden_section(lambda t: (t - 1.7) ** 2 + 3.0, 0.1, 10.0, rtol=1e-10)
    assert x == pytest.approx(1.7, rel=1e-7)  # sqrt(machine eps) limit of a flat minimum
    assert fx == pytest.approx(3.0, abs=1e-15)


@settings(max_examples=6)
@given(M=st.floats(0.5, 12), angle=st.floats(0.1, 1.4))
def test_direction_symmetry(M, angle):
    cell, A, zeta = unit_problem(12)
    q = shear(cell, "two_bump")
    e = np.array([math.cos(angle), math.sin(angle)])
    flipped = VectorField(cell, -q.values, True, True)
    c1 = minimal_speed(cell, A, q, zeta, e, M).c_star
    c2 = minimal_speed(cell, A, flipped, zeta, -e, M).c_star
    assert c1 == pytest.approx(c2, rel=1e-7)


def test_sweep_without_advection_is_constant():
    cell, A, zeta = unit_problem(8)
    curve = amplitude_sweep(cell, A, None, zeta, [1.0, 0.0], [0.0, 1.0, 2.0])
    for p in curve.points:
        assert p.c_star == pytest.approx(2.0, abs=1e-5)


def test_sweep_rejects_unordered_amplitudes():
    cell, A, zeta = unit_problem(8)
    with pytest.raises(ValueError):
        amplitude_sweep(cell, A, None, zeta, [1.0, 0.0], [2.0, 1.0])


def test_sweep_refines_grid_by_peclet_bound():
    cell, A, zeta = unit_problem(8)

    def rebuild(res):
        from frontlab.cell import DiffusionSpec, build_cell
        c = build_cell(2, [1, 1], res)
        return c, DiffusionSpec.identity(c), shear(c), ScalarField.constant(c, 1.0)

    curve = amplitude_sweep(cell, A, shear(cell), zeta, [1.0, 0.0], [1.0, 8.0],
                            rebuild=rebuild, peclet_max=0.2)
    assert curve.points[0].resolution == (8, 8)
    assert curve.points[1].resolution == (32, 32)


def test_sweep_failure_returns_partial_curve(monkeypatch):
    cell, A, zeta = unit_problem(8)
    real = speed_mod.minimal_speed
    calls = []

    def flaky(*args, **kw):
        calls.append(1)
        if len(calls) == 2:
            raise RuntimeError("boom")
        return real(*args, **kw)

    monkeypatch.setattr(speed_mod, "minimal_speed", flaky)
    with pytest.raises(SweepError) as info:
        amplitude_sweep(cell, A, None, zeta, [1.0, 0.0], [0.0, 1.0, 2.0])
    assert len(info.value.curve.points) == 1


def test_parallel_sweep_matches_serial():
    cell, A, zeta = unit_problem(12)
    q = shear(cell)
    serial = amplitude_sweep(cell, A, q, zeta, [1.0, 0.0], [1.0, 2.0, 4.0])
    parallel = amplitude_sweep(cell, A, q, zeta, [1.0, 0.0], [1.0, 2.0, 4.0], workers=2)
    assert [p.c_star for p in serial.points] == [p.c_star for p in parallel.points]


def _synthetic(Ms, c):
    return SpeedCurve([SpeedPoint(M, 1.0, c(M), c(M), "central", (8, 8)) for M in Ms])


def test_linear_limit_exact_for_affine_curve():
    est = estimate_linear_limit(_synthetic([2.0, 4.0, 8.0, 16.0], lambda M: 0.3 * M + 1.7))
    assert est.limit == pytest.approx(0.3, abs=1e-10)
    assert est.monotone


def test_linear_limit_without_advection_is_zero():
    est = estimate_linear_limit(_synthetic([1.0, 2.0, 4.0], lambda M: 2.0))
    assert est.limit == pytest.approx(0.0, abs=1e-14)
    assert np.all(est.differences < 0)


def test_linear_limit_flags_non_monotone():
    vals = {1.0: 1.0, 2.0: 3.0, 3.0: 3.3, 4.0: 4.5}
    est = estimate_linear_limit(_synthetic(list(vals), vals.get))
    assert not est.monotone


def test_linear_limit_returns_last_ratio_when_converged():
    est = estimate_linear_limit(_synthetic([1.0, 2.0, 3.0], lambda M: 0.5 * M))
    assert est.limit == est.last_ratio == 0.5


def test_limit_needs_three_points():
    with pytest.raises(ValueError):
        estimate_linear_limit(_synthetic([1.0, 2.0], lambda M: M))


def test_two_cylinder_speed_increasing_ratio_converging():
    from frontlab.cell import DiffusionSpec, build_cell
    cell = build_cell(3, [1, 1, 1], [2, 16, 16])
    q = make_flow(FlowSpec("two_cylinder", radius=0.2, gap=0.05), cell)
    A = DiffusionSpec.identity(cell)
    zeta = ScalarField.constant(cell, 1.0)
    curve = amplitude_sweep(cell, A, q, zeta, [1.0, 0.0, 0.0], [8.0, 16.0, 32.0])
    r = curve.c_over_M
    assert np.all(r > 0)
    assert np.all(np.diff([p.c_star for p in curve.points]) > 0)
    est = estimate_linear_limit(curve)
    # c*/M approaches the extrapolated limit monotonically
    assert np.all(np.diff(np.abs(r - est.limit)) < 0)


def test_speed_csv(tmp_path):
    path = tmp_path / "s.csv"
    write_speed_csv(path, _synthetic([0.0, 2.0], lambda M: 2.0 + M))
    data = path.read_bytes()
    assert b"\r" not in data
    lines = data.decode().splitlines()
    assert lines[0] == "M,lambda_star,k,c_star,c_star_over_M,scheme,resolution"
    assert lines[1].split(",")[4] == "inf"
    assert lines[2].split(",")[-1] == "8x8"
