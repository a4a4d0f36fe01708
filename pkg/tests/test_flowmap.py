import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frontlab.cell import FlowSpec, ScalarField, VectorField, build_cell, make_flow
from frontlab.flowmap import (first_integral_conservation, integrate_streamline,
                              interpolate_linear, interpolate_spectral, orbit_period, rk4_paths,
                              stream_function_2d, time_step_study, volume_preservation_check,
                              write_trace_csv)

from conftest import cellular, shear, unit_problem

SQUARE = np.array([[0.1, 0.1], [0.4, 0.1], [0.4, 0.4], [0.1, 0.4]])
CUBE = np.array(np.meshgrid(*[[0.1, 0.3]] * 3, indexing="ij")).reshape(3, -1).T


def translation(X):
    return np.tile([1.0, 0.5, 0.25][: X.shape[1]], (len(X), 1))


def linear_growth(X):
    out = np.zeros_like(X)
    out[:, 0] = X[:, 0]
    return out


def test_translation_is_exact():
    tr = integrate_streamline(translation, [0.2, 0.3], 2.5, 0.1, periods=(1.0, 1.0))
    np.testing.assert_allclose(tr.end, [2.7, 1.55], atol=1e-14)
    np.testing.assert_allclose(tr.wrapped[-1], [0.7, 0.55], atol=1e-14)
    assert np.allclose(np.diff(tr.times), 0.1)


def test_stagnation_point_stays_put():
    cell, _, _ = unit_problem(16)
    tr = integrate_streamline(cellular(cell), [0.25, 0.25], 3.0, 0.01)
    assert np.abs(tr.unwrapped - [0.25, 0.25]).max() <= 1e-15


def test_grid_field_uses_interpolation():
    cell, _, _ = unit_problem(32)
    q = shear(cell)
    q_grid = VectorField(cell, q.values)
    a = integrate_streamline(q, [0.1, 0.3], 1.0, 0.01)
    b = integrate_streamline(q_grid, [0.1, 0.3], 1.0, 0.01)
    assert abs(a.end[0] - b.end[0]) <= 1e-2
    assert b.end[1] == 0.3


def test_orbit_return_error_is_fourth_order():
    cell, _, _ = unit_problem(16)
    q = cellular(cell)
    seed = [0.3, 0.25]
    T1, d1 = orbit_period(q, seed, 1e-2, 0.5)
    T2, d2 = orbit_period(q, seed, 5e-3, 0.5)
    assert T1 == pytest.approx(T2, rel=1e-3)
    omega, qmax = 4 * math.pi**2, 2 * math.pi  # velocity-gradient and speed scales
    assert d1 <= (1e-2 * omega) ** 4 * T1 * qmax
    assert d1 / d2 >= 14  # halving dt gains at least ~2^4


@settings(max_examples=10)
@given(s=st.floats(0, 1), t=st.floats(0, 1), x=st.floats(0, 1), y=st.floats(0, 1))
def test_group_property(s, t, x, y):
    cell, _, _ = unit_problem(16)
    vel = cellular(cell).func
    dt = 1e-3
    _, A = rk4_paths(vel, [[x, y]], s + t, dt)
    _, B = rk4_paths(vel, [[x, y]], t, dt)
    _, C = rk4_paths(vel, B[-1], s, dt)
    assert np.abs(A[-1] - C[-1]).max() <= 1e-9


def test_backward_integration_inverts():
    cell, _, _ = unit_problem(16)
    q = cellular(cell)
    errs = []
    for dt in (1e-3, 5e-4):
        fwd = integrate_streamline(q, [0.13, 0.71], 1.3, dt)
        back = integrate_streamline(q, fwd.end, -1.3, dt)
        errs.append(np.abs(back.end - [0.13, 0.71]).max())
    assert errs[0] <= 1e-7
    assert errs[0] / errs[1] >= 14


def test_volume_translation():
    assert volume_preservation_check(translation, SQUARE, 1.0, 1e-2).deviation <= 1e-12
    assert volume_preservation_check(translation, CUBE, 1.0, 1e-2).deviation <= 1e-12


def test_volume_cellular():
    cell, _, _ = unit_problem(32)
    res = volume_preservation_check(cellular(cell), SQUARE, 1.0, 1e-3)
    assert res.deviation <= 1e-6 and not res.flagged


def test_volume_detects_compressible_control():
    for region in (SQUARE, CUBE):
        res = volume_preservation_check(linear_growth, region, 1.0, 1e-3)
        assert res.deviation == pytest.approx(math.e - 1, rel=1e-9)


def test_volume_accepts_unordered_corners():
    cell, _, _ = unit_problem(32)
    shuffled = SQUARE[[0, 2, 1, 3]]
    res = volume_preservation_check(cellular(cell), shuffled, 0.5, 1e-3)
    assert res.deviation <= 1e-6


def test_volume_three_dimensional_shear():
    cell = build_cell(3, [1, 1, 1], [4, 16, 16])
    q = make_flow(FlowSpec("two_cylinder", radius=0.2, gap=0.05), cell)
    res = volume_preservation_check(q, CUBE + 0.2, 1.0, 1e-2)
    assert res.deviation <= 1e-6


def test_volume_fourth_order_in_time():
    cell, _, _ = unit_problem(16)
    errs, orders = time_step_study(cellular(cell), SQUARE, 1.0,
                                   [0.02, 0.01, 0.005, 0.0025, 0.000625])
    assert np.all(np.diff(errs) < 0)
    assert np.all(orders >= 3.5)


def test_shear_cos_is_conserved():
    cell, _, _ = unit_problem(32)
    w = ScalarField.from_function(cell, lambda x1, x2: np.cos(2 * np.pi * x2))
    rep = first_integral_conservation(shear(cell), w, [[0.1, 0.2], [0.7, 0.33]], 10.0, 1e-2)
    assert rep.max_drift <= 1e-8


def test_non_first_integral_drift_matches_transport():
    cell, _, _ = unit_problem(32)
    q = shear(cell)
    seeds = np.array([[0.0, 0.1], [0.2, 0.8]])
    T = 0.4
    rep = first_integral_conservation(q, lambda X: X[:, 0], seeds, T, 1e-2)
    np.testing.assert_allclose(rep.per_seed, np.abs(T * np.sin(2 * np.pi * seeds[:, 1])),
                               rtol=1e-12)


def test_zero_flow_has_no_drift():
    cell, _, _ = unit_problem(8)
    q = VectorField(cell, np.zeros((2, 8, 8)))
    w = ScalarField.from_function(cell, lambda x1, x2: np.sin(2 * np.pi * x1))
    assert first_integral_conservation(q, w, [[0.3, 0.4]], 5.0, 0.1).max_drift == 0.0


def test_stream_function_drift_cellular():
    cell, _, _ = unit_problem(32)
    q = cellular(cell)
    phi = stream_function_2d(q)
    seeds = np.random.default_rng(3).uniform(0, 1, (3, 2))
    rep = first_integral_conservation(q, phi, seeds, 10.0, 5e-4, w_interpolation="spectral")
    assert rep.max_drift <= 1e-8


def test_stream_function_recovers_cellular():
    n = 32
    cell, _, _ = unit_problem(n)
    phi = stream_function_2d(cellular(cell))
    x1, x2 = cell.mesh()
    exact = np.sin(2 * np.pi * x1) * np.sin(2 * np.pi * x2)
    assert np.abs(phi.values - exact).max() <= (1 / n) ** 2


def test_stream_function_shear():
    n = 64
    cell, _, _ = unit_problem(n)
    q = shear(cell)
    phi = stream_function_2d(q)
    _, x2 = cell.mesh()
    # q1 = -d2 phi gives phi = cos(2 pi x2) / (2 pi) up to a constant
    exact = np.cos(2 * np.pi * x2) / (2 * np.pi)
    err = np.abs(phi.values - exact).max()
    assert err <= 2 * (1 / n) ** 2  # second-order stencil constant pi h^2 / 3
    g = cell.gradient(phi.values)
    assert np.abs(np.sum(q.values * g, axis=0)).max() <= 1e-12


def test_stream_function_zero_and_errors():
    cell, _, _ = unit_problem(8)
    zero = VectorField(cell, np.zeros((2, 8, 8)))
    assert np.all(stream_function_2d(zero).values == 0.0)
    const = np.zeros((2, 8, 8))
    const[0] = 1.0
    with pytest.raises(ValueError, match="circulation"):
        stream_function_2d(VectorField(cell, const))
    cell3 = build_cell(3, [1, 1, 1], [4, 4, 4])
    with pytest.raises(ValueError):
        stream_function_2d(VectorField(cell3, np.zeros((3, 4, 4, 4))))


@given(x=st.floats(0, 1), y=st.floats(0, 1))
def test_interpolants(x, y):
    cell, _, _ = unit_problem(16)
    x1, x2 = cell.mesh()
    trig = np.cos(2 * np.pi * x1) * np.sin(4 * np.pi * x2)
    P = np.array([[x, y]])
    exact = np.cos(2 * np.pi * x) * np.sin(4 * np.pi * y)
    assert interpolate_spectral(cell, trig, P)[0] == pytest.approx(exact, abs=1e-12)
    assert abs(interpolate_linear(cell, trig, P)[0] - exact) <= 0.2


def test_trace_csv(tmp_path):
    cell, _, _ = unit_problem(16)
    phi = stream_function_2d(cellular(cell))
    tr = integrate_streamline(cellular(cell), [0.3, 0.25], 0.05, 0.01, w=phi)
    path = tmp_path / "t.csv"
    write_trace_csv(path, tr)
    lines = path.read_bytes().decode().split("\n")
    assert lines[0] == "t,x1,x2,w"
    assert len([ln for ln in lines if ln]) == 7


def test_rejects_bad_step():
    with pytest.raises(ValueError):
        rk4_paths(translation, [[0.0, 0.0]], 1.0, 0.0)
