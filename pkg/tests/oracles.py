"""Independent reference implementations used only by the tests.

They favour literal loops and textbook formulas over speed so that they
share as little code as possible with the library.
"""

from __future__ import annotations

import math

import numpy as np

C = 299_792_458.0


def rodrigues(axis, angle):
    """Rotation by ``angle`` about the unit vector ``axis``."""
    k = np.asarray(axis, float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * kx @ kx


def travel_time_literal(x, emitter, receiver, v):
    """Bistatic time with the first-order Doppler factor, scalar arithmetic."""
    a = [x[i] - emitter[i] for i in range(3)]
    b = [x[i] - receiver[i] for i in range(3)]
    na = math.sqrt(sum(c * c for c in a))
    nb = math.sqrt(sum(c * c for c in b))
    gamma = 1 - sum(v[i] * (a[i] / na + b[i] / nb) for i in range(3)) / C
    return na / C + nb * gamma / C


def migrate_bruteforce(cross, taus, omegas):
    """Literal quadruple sum of conj(A[R,k]) C[R,R'] A[R',k'].

    ``cross`` has shape (R, R, S, W) and ``taus`` (S, K, R).
    """
    n_r, _, n_s, n_w = cross.shape
    k = taus.shape[1]
    x = np.zeros((k, k), complex)
    for i in range(n_s):
        for j in range(n_w):
            w = omegas[j]
            for r in range(n_r):
                for rp in range(n_r):
                    c = cross[r, rp, i, j]
                    for kk in range(k):
                        left = complex(math.cos(w * taus[i, kk, r]),
                                       -math.sin(w * taus[i, kk, r])) * c
                        for kp in range(k):
                            x[kk, kp] += left * complex(math.cos(w * taus[i, kp, rp]),
                                                        math.sin(w * taus[i, kp, rp]))
    return x


def fourier_sum(t, values, omegas):
    """Riemann sum of values(t) exp(+i w t) dt, one frequency at a time."""
    dt = t[1] - t[0]
    return np.array([np.sum(values * np.exp(1j * w * t)) * dt for w in omegas])


def correlate_literal(u, up, dt):
    """sum_t u(t) up(t + lag) dt for every integer lag, as an explicit loop."""
    n = len(u)
    out = np.zeros(2 * n - 1)
    for m in range(-(n - 1), n):
        acc = 0.0
        for i in range(n):
            j = i + m
            if 0 <= j < n:
                acc += u[i] * up[j]
        out[m + n - 1] = acc * dt
    return out


def gaussian_blob(grid_coords, centre, fwhm):
    """Isotropic Gaussian image of given FWHM on a square grid (rows = y)."""
    gx, gy = np.meshgrid(grid_coords, grid_coords, indexing="xy")
    sigma = fwhm / (2 * math.sqrt(2 * math.log(2)))
    return np.exp(-((gx - centre[0]) ** 2 + (gy - centre[1]) ** 2) / (2 * sigma ** 2))
