import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import rodrigues, travel_time_literal
from rotisar.geometry import (
    C0, ArrayLayout, GeometryError, RotationParams, Scene, Trajectory, axis_rotation,
    doppler_factor, doppler_ratio_offset, reduced_travel_time, rotation_matrix,
    scatterer_position, travel_time, travel_time_shift,
)

angles = st.floats(0.0, math.pi)
azimuths = st.floats(0.0, 2 * math.pi, exclude_max=True)
rates = st.floats(0.0, 5.0)
times = st.floats(-20.0, 20.0)


@settings(max_examples=60, deadline=None)
@given(angles, azimuths, rates, times)
def test_rotation_matrix_is_proper_orthogonal(theta, phi, omega, s):
    r = rotation_matrix(s, RotationParams(theta, phi, omega))
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-13)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(angles, azimuths, rates, times)
def test_spin_is_rotation_about_axis(theta, phi, omega, s):
    p = RotationParams(theta, phi, omega)
    expected = rodrigues(p.axis, omega * s) @ axis_rotation(theta, phi)
    assert np.allclose(rotation_matrix(s, p), expected, atol=1e-12)


def test_axis_points_along_z_for_zero_tilt():
    assert np.allclose(RotationParams(0.0, 1.0, 1.0).axis, [0, 0, 1])


def test_body_z_stays_on_axis(rotation):
    s = np.linspace(-3, 3, 7)
    mapped = rotation_matrix(s, rotation) @ np.array([0.0, 0.0, 1.0])
    assert np.allclose(mapped, rotation.axis, atol=1e-14)


@pytest.mark.parametrize("bad", [(-0.1, 0, 1), (3.2, 0, 1), (1, 6.3, 1), (1, 0, -1)])
def test_rotation_params_validate(bad):
    with pytest.raises(ValueError):
        RotationParams(*bad)


@settings(max_examples=60, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), rates)
def test_wrapped_keeps_axis(theta, phi, omega):
    p = RotationParams.wrapped(theta, phi, omega)
    ref = axis_rotation(theta, phi) @ np.array([0.0, 0.0, 1.0])
    assert np.allclose(p.axis, ref, atol=1e-12)


def test_period():
    assert RotationParams(1, 1, 2 * np.pi / 5).period == pytest.approx(5.0)
    assert RotationParams(1, 1, 0.0).period == np.inf


def test_trajectory_is_linear(trajectory):
    assert np.allclose(trajectory.at(2.0), [15200.0, 0.0, 500e3])


def test_scatterer_position_orbits_centre(trajectory, rotation):
    off = np.array([0.3, -0.2, 0.0])
    s = np.linspace(0, 5, 11)
    rel = scatterer_position(s, trajectory, rotation, off) - trajectory.at(s)
    assert np.allclose(np.linalg.norm(rel, axis=-1), np.linalg.norm(off))


def test_travel_time_matches_literal_formula(layout):
    v = np.array([7600.0, -300.0, 20.0])
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.uniform([-1e5, -1e5, 4e5], [1e5, 1e5, 6e5])
        got = travel_time(x, layout, None, v)
        for r in range(layout.num_receivers):
            ref = travel_time_literal(x, layout.emitter, layout.receivers[r], v)
            assert got[r] == pytest.approx(ref, rel=1e-14)


def test_doppler_factor_definition(layout):
    x = np.array([1e3, 2e3, 5e5])
    v = np.array([7600.0, 0.0, 0.0])
    ua = (x - layout.emitter) / np.linalg.norm(x - layout.emitter)
    ub = (x - layout.receivers[2]) / np.linalg.norm(x - layout.receivers[2])
    assert doppler_factor(x, layout, 2, v) == pytest.approx(1 - v @ (ua + ub) / C0, rel=1e-15)


def test_shift_agrees_with_difference_for_large_offsets(layout):
    x = np.array([3e3, -2e3, 5e5])
    d = np.array([40.0, 25.0, -10.0])
    v = np.array([7600.0, 0.0, 0.0])
    got = travel_time_shift(x, d, layout, None, v)
    ref = travel_time(x + d, layout, None, v) - travel_time(x, layout, None, v)
    assert np.allclose(got, ref, rtol=1e-9, atol=0)


def test_shift_is_accurate_for_tiny_offsets(layout):
    # for a millimetre offset the plain difference loses most digits; compare
    # with the first-order change computed from a centred finite difference
    x = np.array([3e3, -2e3, 5e5])
    v = np.array([7600.0, 0.0, 0.0])
    d = np.array([1e-3, 0.0, 0.0])
    got = travel_time_shift(x, d, layout, 0, v)
    h = np.array([10.0, 0.0, 0.0])
    grad = (travel_time(x + h, layout, 0, v) - travel_time(x - h, layout, 0, v)) / 20.0
    assert got == pytest.approx(grad * 1e-3, rel=1e-6)
    assert travel_time_shift(x, -d, layout, 0, v) == pytest.approx(-got, rel=1e-6)


def test_reduced_travel_time_zero_at_centre(trajectory, rotation, layout):
    s = np.linspace(-1, 1, 5)
    tau = reduced_travel_time(s[:, None], trajectory, rotation, np.zeros((1, 3)), layout,
                              None, trajectory.velocity)
    assert tau.shape == (5, 1, layout.num_receivers)
    assert np.all(tau == 0.0)


def test_reduced_travel_time_scale(trajectory, rotation, layout):
    # an offset of a few decimetres changes the two-way path by at most twice its size
    off = np.array([[0.3, 0.0, 0.0]])
    s = np.linspace(0, 5, 50)
    tau = reduced_travel_time(s[:, None], trajectory, rotation, off, layout, None,
                              trajectory.velocity)
    assert np.max(np.abs(tau)) <= 2 * 0.3 / C0 * 1.001
    assert np.max(np.abs(tau)) > 0.5 * 0.3 / C0


def test_doppler_ratio_offset_small(trajectory, rotation, layout):
    r = doppler_ratio_offset(0.3, trajectory, rotation, np.array([0.2, 0.1, 0.0]), layout, 1,
                             trajectory.velocity)
    assert 0 < abs(r) < 1e-8


def test_coincident_points_raise(layout):
    with pytest.raises(GeometryError):
        travel_time_shift(layout.receivers[0], np.ones(3), layout, 0, np.zeros(3))


def test_random_layout_deterministic_and_inside():
    a = ArrayLayout.random(9, 1000.0, 50.0, seed=4)
    b = ArrayLayout.random(9, 1000.0, 50.0, seed=4)
    assert np.array_equal(a.receivers, b.receivers)
    assert np.all(np.abs(a.receivers[:, :2]) <= 500.0)
    assert a.receiver_height == 50.0


def test_grid_layout():
    g = ArrayLayout.grid(3, 90.0, 10.0)
    assert g.num_receivers == 9
    assert np.allclose(np.unique(g.receivers[:, 0]), [-30, 0, 30])


def test_layout_rejects_non_planar():
    with pytest.raises(ValueError):
        ArrayLayout(np.zeros(3), np.array([[0, 0, 1.0], [1, 0, 2.0]]), 1.0)


def test_scene_validation():
    sc = Scene([[0.1, 0.2]])
    assert sc.offsets.shape == (1, 3) and sc.reflectivities[0] == 1.0
    with pytest.raises(ValueError):
        Scene([[0.1, 0.2, 0.3]])
    with pytest.raises(ValueError):
        Scene([[0.1, 0.2]], [1.0, 2.0])
    assert len(Scene(np.zeros((0, 2)))) == 0


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory([0, 0], [1, 0, 0])
