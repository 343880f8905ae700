"""Analytic point-spread kernels of the array, the rotation and their product.

These are idealised, closed-form counterparts of the migrated interference
matrix and serve as analysis tools and independent references:

* the array kernel of a square receiver aperture of side ``a`` at range
  ``H`` is a separable product of sincs with main-lobe scale ``lambda H / a``;
* integrating it over the rotation gives the effective kernel;
* averaging the in-plane phase over one revolution gives a Bessel J0 kernel
  whose first zero fixes the finest spot, about ``lambda / (2 sin theta)``.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import C0, RotationParams, rotation_matrix

_SERIES_LIMIT = 20.0


def _j0_series(x):
    # extended precision keeps the alternating sum accurate up to |x| ~ 20
    q = -(np.asarray(x, np.longdouble) ** 2) / 4
    term = np.ones_like(q)
    total = term.copy()
    for k in range(1, 80):
        term = term * q / (k * k)
        total += term
        if np.all(np.abs(term) < 1e-22 * np.maximum(np.abs(total), 1e-300)):
            break
    return total.astype(float)


def _j0_asymptotic(x):
    """Hankel expansion J0 = sqrt(2 / pi x) (P cos chi - Q sin chi).

    The terms ``a_k / x^k`` follow ``a_k = a_{k-1} (-(2k - 1)^2) / (8k)``;
    P collects the even ones and Q the odd ones with alternating signs.  The
    sum stops before the terms start to grow.
    """
    x = np.asarray(x, float)
    p = np.ones_like(x)
    q = np.zeros_like(x)
    term = np.ones_like(x)
    for k in range(1, 40):
        nxt = term * (-(2 * k - 1) ** 2) / (8.0 * k * x)
        if np.all(np.abs(nxt) >= np.abs(term)) or np.all(np.abs(term) < 1e-18):
            break
        term = nxt
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2:
            q += sign * term
        else:
            p += sign * term
    chi = x - np.pi / 4
    return np.sqrt(2.0 / (np.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def bessel_j0(x):
    """Bessel function of the first kind, order zero.

    Power series (summed in extended precision) for ``|x| < 20`` and the
    Hankel asymptotic expansion beyond; absolute error below 1e-12.
    """
    x = np.abs(np.asarray(x, float))
    out = np.empty_like(x)
    small = x < _SERIES_LIMIT
    if np.any(small):
        out[small] = _j0_series(x[small])
    if np.any(~small):
        out[~small] = _j0_asymptotic(x[~small])
    return out if out.ndim else float(out)


def j0_quadrature(x, nodes: int | None = None):
    """J0 from the angular average of exp(i x cos phi) (trapezoid rule)."""
    x = np.atleast_1d(np.asarray(x, float))
    n = nodes or int(2 * np.max(np.abs(x), initial=0.0) + 64)
    phi = 2 * np.pi * np.arange(n) / n
    return np.mean(np.cos(np.outer(x, np.cos(phi))), axis=1)


def _sinc(u):
    return np.sinc(np.asarray(u) / np.pi)


def kernel_array(x, omega: float, aperture: float, height: float):
    """a^2 sinc(k a x1 / 2H) sinc(k a x2 / 2H) for planar offsets x (..., >=2)."""
    x = np.asarray(x, float)
    scale = omega / C0 * aperture / (2 * height)
    return aperture ** 2 * _sinc(scale * x[..., 0]) * _sinc(scale * x[..., 1])


def array_sum(x, omega: float, receivers, height: float, aperture: float):
    """Discrete receiver sum normalized to ``a^2`` at the origin.

    ``sum_R exp(-i (w / c) (x_R,1 x_1 + x_R,2 x_2) / H) * a^2 / N_R``; tends to
    :func:`kernel_array` for a dense uniform receiver grid.
    """
    x = np.asarray(x, float)
    rec = np.asarray(receivers, float)[:, :2]
    phase = (omega / C0 / height) * np.tensordot(x[..., :2], rec, axes=([-1], [1]))
    return np.sum(np.exp(-1j * phase), axis=-1) * aperture ** 2 / len(rec)


def main_lobe_scale(omega: float, aperture: float, height: float) -> float:
    """Offset of the first zero of the array kernel: lambda H / a."""
    return 2 * np.pi * C0 * height / (omega * aperture)


def kernel_effective(x, omega: float, aperture: float, height: float,
                     rotation: RotationParams, duration: float, nodes: int | None = None):
    """Integral over slow time of the array kernel at rotated offsets.

    ``x`` are body-frame planar offsets.  The trapezoid rule uses at least
    256 nodes per rotation period.
    """
    x = np.asarray(x, float)
    if x.shape[-1] == 2:
        x = np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)
    if nodes is None:
        periods = duration / rotation.period if rotation.omega_r > 0 else 0.0
        nodes = int(max(257, np.ceil(256 * periods) + 1))
    s = np.linspace(-duration / 2, duration / 2, nodes)
    rot = rotation_matrix(s, rotation)  # (N, 3, 3)
    world = np.einsum("nij,...j->...ni", rot, x)
    vals = kernel_array(world, omega, aperture, height)
    return np.trapezoid(vals, s, axis=-1)


def kernel_rotation_bessel(r, omega: float, theta_rot: float):
    """J0((w / c) 2 sin(theta) r)."""
    return bessel_j0(omega / C0 * 2 * np.sin(theta_rot) * np.asarray(r, float))


def finest_spot(wavelength: float, theta_rot: float) -> float:
    """lambda / (2 sin theta): spot scale set by the first zero of the J0 kernel."""
    return wavelength / (2 * np.sin(theta_rot))


def interference_pattern_approx(u, v, scatterers, reflectivities, omegas, weights,
                                aperture: float, height: float, rotation: RotationParams,
                                duration: float, nodes: int | None = None):
    """Closed-form approximation of the two-point interference pattern.

    Parameters
    ----------
    u, v : array (..., 2)
        Search-point pairs (body-frame planar offsets); broadcast together.
    scatterers, reflectivities : arrays (K, 2), (K,)
    omegas, weights : arrays (W,)
        Angular frequencies and the matching spectral weights, typically
        ``|xi|^2`` times the quadrature step.

    Returns
    -------
    complex array
        ``sum_w weight sum_ij rho_i rho_j B_eff(u - y_i) B_eff(v - y_j)
        J0((w / c) 2 sin(theta) |(u - y_i) - (v - y_j)|)``; only normalized
        values are meaningful.
    """
    u = np.asarray(u, float)[..., :2]
    v = np.asarray(v, float)[..., :2]
    u, v = np.broadcast_arrays(u, v)
    ys = np.asarray(scatterers, float)[:, :2]
    rho = np.asarray(reflectivities, float)
    total = np.zeros(u.shape[:-1], complex)
    for w, wt in zip(np.atleast_1d(omegas), np.atleast_1d(weights)):
        beff_u = [kernel_effective(u - y, w, aperture, height, rotation, duration, nodes)
                  for y in ys]
        beff_v = [kernel_effective(v - y, w, aperture, height, rotation, duration, nodes)
                  for y in ys]
        for i, yi in enumerate(ys):
            for j, yj in enumerate(ys):
                r = np.linalg.norm((u - yi) - (v - yj), axis=-1)
                total += wt * rho[i] * rho[j] * beff_u[i] * np.conj(beff_v[j]) \
                    * kernel_rotation_bessel(r, w, rotation.theta_rot)
    return total


def first_zero(fn, start: float, stop: float, samples: int = 4001) -> float:
    """First sign change of ``fn`` on [start, stop], refined by bisection."""
    xs = np.linspace(start, stop, samples)
    ys = fn(xs)
    idx = np.nonzero(np.sign(ys[1:]) != np.sign(ys[:-1]))[0]
    if len(idx) == 0:
        raise ValueError("no zero crossing in the interval")
    lo, hi = xs[idx[0]], xs[idx[0] + 1]
    flo = fn(np.array([lo]))[0]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        fm = fn(np.array([mid]))[0]
        if math.copysign(1, fm) == math.copysign(1, flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)
