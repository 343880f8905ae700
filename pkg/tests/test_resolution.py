import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from rotisar.geometry import ArrayLayout, RotationParams
from rotisar.resolution import (
    array_sum, bessel_j0, finest_spot, first_zero, interference_pattern_approx,
    j0_quadrature, kernel_array, kernel_effective, kernel_rotation_bessel, main_lobe_scale,
)

OMEGA = 2 * np.pi * 9.6e9
A, H = 200e3, 485e3


def test_j0_against_reference_library():
    x = np.concatenate([np.linspace(0, 30, 3001), np.linspace(30, 400, 2001)])
    assert np.max(np.abs(bessel_j0(x) - special.j0(x))) < 1e-12


def test_j0_against_quadrature_identity():
    x = np.linspace(0, 60, 601)
    assert np.max(np.abs(bessel_j0(x) - j0_quadrature(x))) < 1e-10


def test_j0_is_even_and_scalar_friendly():
    assert bessel_j0(-3.0) == bessel_j0(3.0)
    assert isinstance(bessel_j0(1.0), float)
    assert first_zero(bessel_j0, 1.0, 3.0) == pytest.approx(2.404825557695773, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_array_kernel_even_and_separable(x1, x2):
    k = lambda a, b: kernel_array(np.array([a, b]), OMEGA, A, H)
    assert k(x1, x2) == k(-x1, x2) == k(x1, -x2)
    assert k(x1, x2) * k(0, 0) == pytest.approx(k(x1, 0) * k(0, x2), rel=1e-12, abs=1e-300)


def test_main_lobe_scale_is_first_zero():
    lobe = main_lobe_scale(OMEGA, A, H)
    assert lobe == pytest.approx(0.0757, abs=5e-4)
    z = first_zero(lambda u: kernel_array(np.column_stack([u, 0 * u]), OMEGA, A, H),
                   0.5 * lobe, 1.5 * lobe)
    assert z == pytest.approx(lobe, rel=1e-9)


def test_dense_receiver_sum_tends_to_kernel():
    lay = ArrayLayout.grid(60, A, 15e3)
    x = np.column_stack([np.linspace(-0.1, 0.1, 21), np.linspace(0.05, -0.03, 21)])
    got = array_sum(x, OMEGA, lay.receivers, H, A)
    ref = kernel_array(x, OMEGA, A, H)
    assert np.max(np.abs(got - ref)) < 0.01 * A ** 2


def test_effective_kernel_is_rotation_invariant_for_flat_spin():
    rot = RotationParams(np.pi, 0.0, 2 * np.pi / 5)
    x = np.array([0.05, 0.02])
    base = kernel_effective(x, OMEGA, A, H, rot, rot.period, nodes=2049)
    for ang in (0.3, 1.1, 2.5):
        c, s = np.cos(ang), np.sin(ang)
        xr = np.array([c * x[0] - s * x[1], s * x[0] + c * x[1]])
        assert kernel_effective(xr, OMEGA, A, H, rot, rot.period, nodes=2049) == \
            pytest.approx(base, rel=1e-4)


def test_effective_kernel_reduces_to_array_kernel_without_spin():
    rot = RotationParams(np.pi / 2, 0.3, 0.0)
    x = np.array([[0.01, 0.03], [0.0, 0.0]])
    got = kernel_effective(x, OMEGA, A, H, rot, 2.0)
    from rotisar.geometry import rotation_matrix
    world = (rotation_matrix(0.0, rot) @ np.column_stack([x, np.zeros(2)]).T).T
    assert np.allclose(got, 2.0 * kernel_array(world, OMEGA, A, H))


def test_bessel_kernel_and_finest_spot():
    lam = 2 * np.pi * 299_792_458.0 / OMEGA
    theta = 3 * np.pi / 4
    zero = first_zero(lambda r: kernel_rotation_bessel(r, OMEGA, theta), 1e-4, lam)
    assert zero == pytest.approx(2.404825557695773 * lam / (4 * np.pi * np.sin(theta)), rel=1e-9)
    assert finest_spot(lam, theta) == pytest.approx(lam / (2 * np.sin(theta)))


def test_pattern_diagonal_ignores_bessel_for_single_target():
    # on u = v with one scatterer the J0 factor is J0(0) = 1
    rot = RotationParams(3 * np.pi / 4, 0.5, 2 * np.pi / 5)
    u = np.column_stack([np.linspace(-0.1, 0.1, 9), np.zeros(9)])
    got = interference_pattern_approx(u, u, [[0.0, 0.0]], [1.0], [OMEGA], [1.0], A, H, rot, 5.0,
                                      nodes=257)
    beff = kernel_effective(u, OMEGA, A, H, rot, 5.0, nodes=257)
    assert np.allclose(got, beff * np.conj(beff))


def test_pattern_diagonal_bessel_argument_is_target_separation():
    rot = RotationParams(3 * np.pi / 4, 0.5, 2 * np.pi / 5)
    ys = np.array([[0.0, 0.0], [0.02, 0.01]])
    u = np.array([[0.01, 0.0]])
    got = interference_pattern_approx(u, u, ys, [1.0, 1.0], [OMEGA], [1.0], A, H, rot, 5.0,
                                      nodes=257)
    b = [kernel_effective(u - y, OMEGA, A, H, rot, 5.0, nodes=257)[0] for y in ys]
    j = kernel_rotation_bessel(np.linalg.norm(ys[0] - ys[1]), OMEGA, rot.theta_rot)
    expected = abs(b[0]) ** 2 + abs(b[1]) ** 2 + 2 * j * (b[0] * np.conj(b[1])).real
    assert got[0] == pytest.approx(expected, rel=1e-10)


def test_first_zero_requires_sign_change():
    with pytest.raises(ValueError):
        first_zero(lambda x: 1 + x * 0, 0.0, 1.0)
