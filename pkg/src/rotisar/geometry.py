"""Rigid-body kinematics and bistatic travel times.

All positions are in meters, times in seconds.  Functions broadcast over
leading axes; vectors always live in the trailing axis of length 3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

C0 = 299_792_458.0  # speed of light [m/s]


class GeometryError(ValueError):
    """Raised for degenerate configurations (coincident points etc.)."""


@dataclass(frozen=True)
class RotationParams:
    """Axis direction (theta, phi) and spin rate of a fixed-axis rotation."""

    theta_rot: float
    phi_rot: float
    omega_r: float

    def __post_init__(self):
        if not 0.0 <= self.theta_rot <= np.pi:
            raise ValueError(f"theta_rot={self.theta_rot} outside [0, pi]")
        if not 0.0 <= self.phi_rot < 2 * np.pi:
            raise ValueError(f"phi_rot={self.phi_rot} outside [0, 2pi)")
        if self.omega_r < 0:
            raise ValueError(f"omega_r={self.omega_r} must be >= 0")

    @classmethod
    def wrapped(cls, theta: float, phi: float, omega: float) -> "RotationParams":
        """Build from unconstrained values, folding angles into range."""
        theta = float(np.mod(theta, 2 * np.pi))
        if theta > np.pi:
            theta = 2 * np.pi - theta
            phi = phi + np.pi
        phi = float(np.mod(phi, 2 * np.pi))
        if phi >= 2 * np.pi:  # mod of a tiny negative number rounds up to 2 pi
            phi = 0.0
        return cls(theta, phi, abs(float(omega)))

    @property
    def axis(self) -> np.ndarray:
        """Unit rotation axis in the world frame."""
        return axis_rotation(self.theta_rot, self.phi_rot) @ np.array([0.0, 0.0, 1.0])

    @property
    def period(self) -> float:
        return 2 * np.pi / self.omega_r if self.omega_r > 0 else np.inf


@dataclass(frozen=True)
class Trajectory:
    position: np.ndarray  # x_T at s = 0
    velocity: np.ndarray  # v_T

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        if self.position.shape != (3,) or self.velocity.shape != (3,):
            raise ValueError("trajectory position and velocity must be 3-vectors")

    def at(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.position + s[..., None] * self.velocity


@dataclass(frozen=True)
class ArrayLayout:
    """Ground emitter plus a planar array of receivers at a common height."""

    emitter: np.ndarray
    receivers: np.ndarray  # (N_R, 3)
    aperture: float  # side length a of the receiver area [m]

    def __post_init__(self):
        rec = np.atleast_2d(np.asarray(self.receivers, dtype=float))
        object.__setattr__(self, "emitter", np.asarray(self.emitter, dtype=float))
        object.__setattr__(self, "receivers", rec)
        if rec.shape[0] < 2 or rec.shape[1] != 3:
            raise ValueError("need at least two receivers given as 3-vectors")
        if not np.allclose(rec[:, 2], rec[0, 2], rtol=0, atol=1e-9):
            raise ValueError("receivers must share one height (planar array)")

    @property
    def num_receivers(self) -> int:
        return self.receivers.shape[0]

    @property
    def receiver_height(self) -> float:
        return float(self.receivers[0, 2])

    @classmethod
    def random(cls, count: int, area: float, height: float, seed: int,
               emitter=(0.0, 0.0, 0.0)) -> "ArrayLayout":
        """Receivers uniformly distributed on an ``area`` x ``area`` square."""
        rng = np.random.default_rng(seed)
        xy = rng.uniform(-area / 2, area / 2, size=(count, 2))
        rec = np.column_stack([xy, np.full(count, float(height))])
        return cls(np.asarray(emitter, dtype=float), rec, float(area))

    @classmethod
    def grid(cls, per_side: int, area: float, height: float,
             emitter=(0.0, 0.0, 0.0)) -> "ArrayLayout":
        """Regular per_side x per_side receiver lattice (cell-centred)."""
        c = (np.arange(per_side) + 0.5) / per_side * area - area / 2
        gx, gy = np.meshgrid(c, c, indexing="xy")
        rec = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, float(height))])
        return cls(np.asarray(emitter, dtype=float), rec, float(area))


@dataclass(frozen=True)
class Scene:
    """Point scatterers in the body (rotating) frame, all with z = 0.

    Offsets may be given as (K, 2) planar coordinates or (K, 3) vectors.
    """

    offsets: np.ndarray
    reflectivities: np.ndarray | None = None

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=float)
        if off.size == 0:
            off = np.zeros((0, 3))
        off = np.atleast_2d(off)
        if off.shape[1] == 2:
            off = np.column_stack([off, np.zeros(len(off))])
        if off.ndim != 2 or off.shape[1] != 3:
            raise ValueError("offsets must have shape (K, 2) or (K, 3)")
        if np.any(off[:, 2] != 0.0):
            raise ValueError("scatterers must lie in the plane perpendicular to the axis")
        rho = self.reflectivities
        rho = np.ones(len(off)) if rho is None else np.asarray(rho, dtype=float).ravel()
        if rho.shape != (len(off),):
            raise ValueError("one reflectivity per offset required")
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "reflectivities", rho)

    def __len__(self):
        return len(self.offsets)

    def union(self, other: "Scene") -> "Scene":
        return Scene(np.vstack([self.offsets, other.offsets]),
                     np.concatenate([self.reflectivities, other.reflectivities]))

    def scaled(self, factor: float) -> "Scene":
        return Scene(self.offsets, factor * self.reflectivities)

    @classmethod
    def empty(cls) -> "Scene":
        return cls(np.zeros((0, 3)))


def rot_z(angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(angle.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out


def axis_rotation(theta: float, phi: float) -> np.ndarray:
    """Matrix taking the rotation-plane frame back to world coordinates."""
    ct, st = np.cos(theta), np.sin(theta)
    tilt = np.array([[ct, 0.0, -st], [0.0, 1.0, 0.0], [st, 0.0, ct]])
    return rot_z(phi) @ tilt


def rotation_matrix(s, p: RotationParams) -> np.ndarray:
    """R(s) = R_Omega(phi, theta) @ R_z(omega_r * s); shape (..., 3, 3)."""
    return axis_rotation(p.theta_rot, p.phi_rot) @ rot_z(p.omega_r * np.asarray(s, dtype=float))


def scatterer_position(s, traj: Trajectory, p: RotationParams, offset,
                       axis_offset=None) -> np.ndarray:
    return traj.at(s) + _body_displacement(s, p, offset, axis_offset)


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1))


def _check_distinct(dist, what):
    if np.any(dist == 0.0):
        raise GeometryError(f"target coincides with the {what}")


def _legs(x, layout: ArrayLayout, receiver_index):
    """Vectors from emitter and receiver(s) to x.

    With ``receiver_index=None`` a receiver axis is appended to the leading
    shape of x, so results carry a trailing (N_R,) dimension.
    """
    if receiver_index is None:
        x = x[..., None, :]
        rec = layout.receivers
    else:
        rec = layout.receivers[receiver_index]
    a = x - layout.emitter
    b = x - rec
    return np.broadcast_arrays(a, b)


def doppler_factor(x, layout: ArrayLayout, receiver_index, v) -> np.ndarray:
    """First-order Doppler scale gamma_R(x, x_E, v).

    ``receiver_index`` may be an int, an index array, or None for all
    receivers; the receiver axis broadcasts against the leading axes of x.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    a, b = _legs(x, layout, receiver_index)
    na, nb = _norm(a), _norm(b)
    _check_distinct(na, "emitter")
    _check_distinct(nb, "receiver")
    los = a / na[..., None] + b / nb[..., None]
    return 1.0 - np.sum(v * los, axis=-1) / C0


def travel_time(x, layout: ArrayLayout, receiver_index, v) -> np.ndarray:
    """Bistatic travel time t_R = |x-x_E|/c + |x-x_R| gamma_R / c."""
    x = np.asarray(x, dtype=float)
    a, b = _legs(x, layout, receiver_index)
    na, nb = _norm(a), _norm(b)
    gamma = doppler_factor(x, layout, receiver_index, v)
    return na / C0 + nb * gamma / C0


def _shift_terms(x, delta, layout, receiver_index, v):
    """Stable increments of path length and Doppler factor for x -> x + delta.

    Returns (dt, dgamma, gamma0): travel-time change, gamma change and the
    Doppler factor at x.  Uses |a + d| - |a| = (2 a.d + d.d) / (|a + d| + |a|)
    for both legs and the matching identity for the unit-vector change.
    """
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    v = np.asarray(v, dtype=float)
    a, b = _legs(x, layout, receiver_index)
    if receiver_index is None:
        delta = delta[..., None, :]

    def leg(base):
        n0 = _norm(base)
        _check_distinct(n0, "leg endpoint")
        n1 = _norm(base + delta)
        dn = (2 * np.sum(base * delta, axis=-1) + np.sum(delta * delta, axis=-1)) / (n0 + n1)
        du = delta / n1[..., None] - base * (dn / (n0 * n1))[..., None]
        return n0, dn, du

    na0, dna, dua = leg(a)
    nb0, dnb, dub = leg(b)
    gamma0 = 1.0 - np.sum(v * (a / na0[..., None] + b / nb0[..., None]), axis=-1) / C0
    dgamma = -np.sum(v * (dua + dub), axis=-1) / C0
    dt = (dna + dnb * (gamma0 + dgamma) + nb0 * dgamma) / C0
    return dt, dgamma, gamma0


def travel_time_shift(x, delta, layout: ArrayLayout, receiver_index, v) -> np.ndarray:
    """t_R(x + delta) - t_R(x) evaluated without catastrophic cancellation."""
    return _shift_terms(x, delta, layout, receiver_index, v)[0]


def _body_displacement(s, p, offset, axis_offset):
    s = np.asarray(s, dtype=float)
    delta = np.einsum("...ij,...j->...i", rotation_matrix(s, p), np.asarray(offset, dtype=float))
    if axis_offset is not None:
        delta = delta + np.asarray(axis_offset, dtype=float)
    return delta


def reduced_travel_time(s, traj: Trajectory, p: RotationParams, offset,
                        layout: ArrayLayout, receiver_index, v,
                        axis_offset=None) -> np.ndarray:
    """t_R^k(s) - t_R(s): delay of a body-frame offset relative to the centre.

    ``s`` and ``offset`` broadcast against each other (``offset`` keeps its
    trailing length-3 axis).  ``receiver_index=None`` appends a receiver axis.
    """
    s = np.asarray(s, dtype=float)
    delta = _body_displacement(s, p, offset, axis_offset)
    centre = traj.at(s)
    centre = np.broadcast_to(centre, delta.shape)
    return travel_time_shift(centre, delta, layout, receiver_index, v)


def doppler_ratio_offset(s, traj: Trajectory, p: RotationParams, offset,
                         layout: ArrayLayout, receiver_index, v,
                         axis_offset=None) -> np.ndarray:
    """gamma_R(x_k(s)) / gamma_R(x_L(s)) - 1, computed without cancellation."""
    s = np.asarray(s, dtype=float)
    delta = _body_displacement(s, p, offset, axis_offset)
    centre = np.broadcast_to(traj.at(s), delta.shape)
    _, dgamma, gamma0 = _shift_terms(centre, delta, layout, receiver_index, v)
    return dgamma / gamma0
