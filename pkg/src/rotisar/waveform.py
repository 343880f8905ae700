"""Pulse model, echo synthesis and additive noise.

Echoes are stored already Doppler-rescaled and aligned to the moving window
centre: sample ``j`` of pulse ``i`` at receiver ``R`` is the rescaled field at
absolute time ``t_R(x_L(s_i)) + t_j``.  In that frame a scatterer at body
offset ``y_k`` produces ``-rho_k f''(t - tau_k) / (4 pi r)^2`` with
``tau_k = t_R^k(s) - t_R(s)``, and its spectrum is ``xi(s, w) A_{R,k}(s, w)``.

Fourier convention throughout: ``u_hat(w) = int u(t) exp(+i w t) dt``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    C0,
    ArrayLayout,
    RotationParams,
    Scene,
    Trajectory,
    doppler_factor,
    doppler_ratio_offset,
    reduced_travel_time,
    scatterer_position,
    travel_time,
)

AMPLITUDE_MODES = ("common", "receiver")


class WindowTooSmallError(ValueError):
    """A scatterer delay falls outside the fast-time window."""


class ZeroSignalError(ValueError):
    """Noise was requested relative to an all-zero signal."""


@dataclass(frozen=True)
class Pulse:
    """Modulated Gaussian pulse train.

    ``bandwidth`` is the standard deviation of the pulse spectrum in Hz, so
    the envelope is ``exp(-(2 pi B)^2 t^2 / 2)``.  ``sample_rate`` and
    ``window`` describe the fast-time grid and may be ``None`` when only
    frequency-domain data is needed.
    """

    carrier: float
    bandwidth: float
    spacing: float
    num_pulses: int
    sample_rate: float | None = None
    window: float | None = None
    num_freqs: int = 64
    truncation: float = 1.5

    def __post_init__(self):
        if self.num_pulses < 1:
            raise ValueError("num_pulses must be >= 1")
        if self.spacing <= 0:
            raise ValueError("pulse spacing must be positive")
        if self.carrier <= 0 or self.bandwidth <= 0:
            raise ValueError("carrier and bandwidth must be positive")
        if self.num_freqs < 1:
            raise ValueError("num_freqs must be >= 1")
        if self.sample_rate is not None:
            nyquist = 2 * (self.carrier + 3 * self.bandwidth)
            if self.sample_rate < nyquist:
                raise ValueError(
                    f"sample_rate {self.sample_rate:.4g} Hz below 2(f_o + 3B) = {nyquist:.4g} Hz")
            if self.window is None or self.window <= 0:
                raise ValueError("time-domain sampling needs a positive window")

    @property
    def omega0(self) -> float:
        return 2 * np.pi * self.carrier

    @property
    def beta(self) -> float:
        """Envelope decay constant in rad/s."""
        return 2 * np.pi * self.bandwidth

    @property
    def wavelength(self) -> float:
        return C0 / self.carrier

    def with_pulses(self, num_pulses: int) -> "Pulse":
        return replace(self, num_pulses=int(num_pulses))


def slow_times(p: Pulse, num_pulses: int | None = None) -> np.ndarray:
    """Pulse emission times centred on s = 0."""
    n = p.num_pulses if num_pulses is None else int(num_pulses)
    return (np.arange(n) - (n - 1) / 2) * p.spacing


def fast_times(p: Pulse) -> np.ndarray:
    """Fast-time grid relative to the window centre; contains t = 0."""
    if p.sample_rate is None:
        raise ValueError("pulse has no fast-time sampling configured")
    n = int(round(p.window * p.sample_rate))
    return (np.arange(n) - n // 2) / p.sample_rate


def frequency_grid(p: Pulse) -> np.ndarray:
    """Angular frequencies spanning 2 pi [f_o - cB, f_o + cB]."""
    lo = p.carrier - p.truncation * p.bandwidth
    hi = p.carrier + p.truncation * p.bandwidth
    if p.num_freqs == 1:
        return np.array([p.omega0])
    return 2 * np.pi * np.linspace(lo, hi, p.num_freqs)


def pulse_value(t, p: Pulse):
    t = np.asarray(t, dtype=float)
    return np.cos(p.omega0 * t) * np.exp(-0.5 * (p.beta * t) ** 2)


def pulse_second_derivative(t, p: Pulse):
    """Closed-form f''(t) of the modulated Gaussian."""
    t = np.asarray(t, dtype=float)
    w, b2 = p.omega0, p.beta ** 2
    env = np.exp(-0.5 * b2 * t * t)
    c, s = np.cos(w * t), np.sin(w * t)
    return env * ((b2 * b2 * t * t - b2 - w * w) * c + 2 * w * b2 * t * s)


def pulse_spectrum(omega, p: Pulse):
    """Fourier transform of f; real and even in omega."""
    omega = np.asarray(omega, dtype=float)
    b = p.beta
    g = lambda d: np.exp(-0.5 * (d / b) ** 2)
    return np.sqrt(2 * np.pi) / (2 * b) * (g(omega - p.omega0) + g(omega + p.omega0))


@dataclass(frozen=True)
class Scenario:
    """Everything needed to synthesize data: geometry, motion and pulse.

    ``amplitude`` selects how the 1/(4 pi r)^2 spreading is evaluated:
    ``"common"`` uses the range from the window centre to the receiver
    centroid for all receivers, ``"receiver"`` uses each receiver's range.
    """

    layout: ArrayLayout
    trajectory: Trajectory
    rotation: RotationParams
    pulse: Pulse
    axis_offset: np.ndarray | None = None
    amplitude: str = "common"

    def __post_init__(self):
        if self.amplitude not in AMPLITUDE_MODES:
            raise ValueError(f"amplitude must be one of {AMPLITUDE_MODES}")

    def with_rotation(self, rotation: RotationParams) -> "Scenario":
        return replace(self, rotation=rotation)

    def with_pulse(self, pulse: Pulse) -> "Scenario":
        return replace(self, pulse=pulse)

    @property
    def slow_times(self) -> np.ndarray:
        return slow_times(self.pulse)

    @property
    def velocity(self) -> np.ndarray:
        return self.trajectory.velocity


@dataclass(frozen=True)
class EchoSet:
    """Aligned, rescaled echoes for all receivers and pulses.

    data has shape (N_R, S, N): real samples over ``axis`` = fast time
    [s] when ``domain == "time"``, complex spectra over ``axis`` = angular
    frequency [rad/s] when ``domain == "freq"``.
    """

    domain: str
    data: np.ndarray
    slow_times: np.ndarray
    axis: np.ndarray

    def __post_init__(self):
        if self.domain not in ("time", "freq"):
            raise ValueError("domain must be 'time' or 'freq'")
        if self.data.shape[1:] != (len(self.slow_times), len(self.axis)):
            raise ValueError("data shape does not match the slow-time and sample axes")

    @property
    def num_receivers(self) -> int:
        return self.data.shape[0]

    def select_pulses(self, index) -> "EchoSet":
        return EchoSet(self.domain, self.data[:, index], self.slow_times[index], self.axis)


def delays(s, scenario: Scenario, offsets, rotation: RotationParams | None = None,
           receiver_index=None) -> np.ndarray:
    """Reduced travel times tau[s, k, R] of body offsets (K, 3) at pulses s."""
    rot = scenario.rotation if rotation is None else rotation
    s = np.atleast_1d(np.asarray(s, dtype=float))
    offsets = np.asarray(offsets, dtype=float).reshape(-1, 3)
    return reduced_travel_time(s[:, None], scenario.trajectory, rot, offsets[None, :, :],
                               scenario.layout, receiver_index, scenario.velocity,
                               scenario.axis_offset)


def spreading(s, scenario: Scenario) -> np.ndarray:
    """Range r used in 1/(4 pi r)^2, shape (S, N_R)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    centre = scenario.trajectory.at(s)
    rec = scenario.layout.receivers
    if scenario.amplitude == "common":
        r = np.linalg.norm(centre - rec.mean(axis=0), axis=-1)
        return np.repeat(r[:, None], len(rec), axis=1)
    return np.linalg.norm(centre[:, None, :] - rec[None, :, :], axis=-1)


def amplitude_profile(s, omegas, scenario: Scenario) -> np.ndarray:
    """xi(s, w) = w^2 f_hat(w) / (4 pi r)^2, shape (S, N_R, N_w)."""
    omegas = np.asarray(omegas, dtype=float)
    r = spreading(s, scenario)
    spec = omegas ** 2 * pulse_spectrum(omegas, scenario.pulse)
    return spec[None, None, :] / (4 * np.pi * r[:, :, None]) ** 2


def sensing_entry(s, omega, scenario: Scenario, receiver_index, grid_point,
                  rotation: RotationParams | None = None) -> complex:
    """A_{R,k}(s, w) = exp(i w (t_R^k(s) - t_R(s))) for one grid point."""
    tau = delays(s, scenario, grid_point, rotation, receiver_index)
    return complex(np.exp(1j * float(omega) * tau.ravel()[0]))


def _check_window(tau, t):
    half = min(-t[0], t[-1])
    if tau.size and np.max(np.abs(tau)) > half:
        raise WindowTooSmallError(
            f"scatterer delay {np.max(np.abs(tau)):.3e} s exceeds half-window {half:.3e} s")


def synthesize_time(scenario: Scenario, scene: Scene, s=None, exact_doppler: bool = False,
                    chunk: int = 64) -> EchoSet:
    """Time-domain echoes for all receivers at pulses ``s`` (default: all).

    With ``exact_doppler`` the per-scatterer Doppler ratio gamma_k / gamma_0
    is retained in the pulse argument instead of being set to one.
    """
    s = scenario.slow_times if s is None else np.atleast_1d(np.asarray(s, dtype=float))
    t = fast_times(scenario.pulse)
    n_r = scenario.layout.num_receivers
    out = np.zeros((n_r, len(s), len(t)))
    if len(scene) == 0:
        return EchoSet("time", out, s, t)
    rho = scene.reflectivities
    for i0 in range(0, len(s), chunk):
        ss = s[i0:i0 + chunk]
        tau = delays(ss, scenario, scene.offsets)  # (S, K, R)
        _check_window(tau, t)
        arg = t[None, None, None, :] - tau[..., None]
        if exact_doppler:
            t_ref = travel_time(scenario.trajectory.at(ss), scenario.layout, None,
                                scenario.velocity)  # (S, R)
            ratio = doppler_ratio_offset(ss[:, None], scenario.trajectory, scenario.rotation,
                                         scene.offsets[None], scenario.layout, None,
                                         scenario.velocity, scenario.axis_offset)
            arg = arg + ratio[..., None] * (t_ref[:, None, :, None] + t[None, None, None, :])
        field = np.einsum("k,skrn->srn", rho, pulse_second_derivative(arg, scenario.pulse))
        r = spreading(ss, scenario)
        out[:, i0:i0 + chunk] = np.moveaxis(-field / (4 * np.pi * r[..., None]) ** 2, 1, 0)
    return EchoSet("time", out, s, t)


def synthesize_echo_time(s: float, scenario: Scenario, scene: Scene, receiver_index: int,
                         exact_doppler: bool = False) -> np.ndarray:
    """Single aligned, rescaled time-domain echo on the fast-time grid."""
    return synthesize_time(scenario, scene, [s], exact_doppler).data[receiver_index, 0]


def synthesize_echo_raw(s: float, scenario: Scenario, scene: Scene, receiver_index: int):
    """Unscaled echo on absolute receive time.

    Returns ``(t_abs, values, gamma_ref, t_ref)``.  The absolute grid is
    chosen so that rescaling by ``gamma_ref`` and subtracting ``t_ref``
    lands exactly on the aligned fast-time grid.
    """
    t = fast_times(scenario.pulse)
    centre = scenario.trajectory.at(s)
    lay, v = scenario.layout, scenario.velocity
    gamma_ref = float(doppler_factor(centre, lay, receiver_index, v))
    t_ref = float(travel_time(centre, lay, receiver_index, v))
    t_abs = (t_ref + t) / gamma_ref
    values = np.zeros_like(t)
    r = spreading(s, scenario)[0, receiver_index]
    for y, rho in zip(scene.offsets, scene.reflectivities):
        xk = scatterer_position(s, scenario.trajectory, scenario.rotation, y, scenario.axis_offset)
        gk = float(doppler_factor(xk, lay, receiver_index, v))
        tk = float(travel_time(xk, lay, receiver_index, v))
        values -= rho * pulse_second_derivative(gk * t_abs - tk, scenario.pulse)
    return t_abs, values / (4 * np.pi * r) ** 2, gamma_ref, t_ref


def synthesize_freq(scenario: Scenario, scene: Scene, s=None, omegas=None,
                    chunk: int = 64) -> EchoSet:
    """Frequency-domain echoes xi(s, w) sum_k rho_k A_{R,k}(s, w)."""
    s = scenario.slow_times if s is None else np.atleast_1d(np.asarray(s, dtype=float))
    w = frequency_grid(scenario.pulse) if omegas is None else np.asarray(omegas, dtype=float)
    n_r = scenario.layout.num_receivers
    out = np.zeros((n_r, len(s), len(w)), dtype=complex)
    if len(scene) == 0:
        return EchoSet("freq", out, s, w)
    rho = scene.reflectivities
    for i0 in range(0, len(s), chunk):
        ss = s[i0:i0 + chunk]
        tau = delays(ss, scenario, scene.offsets)  # (S, K, R)
        phase = np.exp(1j * tau[..., None] * w)
        total = np.einsum("k,skrw->srw", rho, phase)
        xi = amplitude_profile(ss, w, scenario)
        out[:, i0:i0 + chunk] = np.moveaxis(xi * total, 1, 0)
    return EchoSet("freq", out, s, w)


def synthesize_echo_freq(s: float, scenario: Scenario, scene: Scene, receiver_index: int,
                         omegas=None) -> np.ndarray:
    return synthesize_freq(scenario, scene, [s], omegas).data[receiver_index, 0]


def time_to_freq(echoes: EchoSet, omegas) -> EchoSet:
    """Direct Fourier sum of sampled echoes at arbitrary angular frequencies."""
    if echoes.domain != "time":
        raise ValueError("expected time-domain echoes")
    t = echoes.axis
    dt = t[1] - t[0]
    kernel = np.exp(1j * np.outer(t, omegas)) * dt
    return EchoSet("freq", echoes.data @ kernel, echoes.slow_times, np.asarray(omegas, float))


def add_noise(echoes: EchoSet, snr_db: float, seed: int) -> EchoSet:
    """Add white Gaussian noise at the requested aggregate SNR.

    SNR is the mean signal power over all stored samples divided by the
    noise variance.  Real data receives real noise, complex data circular
    complex noise.  Each pulse draws from its own child stream of ``seed``
    so results do not depend on chunking.
    """
    if np.isinf(snr_db) and snr_db > 0:
        return echoes
    data = echoes.data
    power = np.mean(np.abs(data) ** 2)
    if power == 0:
        raise ZeroSignalError("cannot set an SNR relative to an all-zero signal")
    sigma = np.sqrt(power / 10 ** (snr_db / 10))
    children = np.random.SeedSequence(seed).spawn(data.shape[1])
    noise = np.empty_like(data)
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        shape = (data.shape[0], data.shape[2])
        if np.iscomplexobj(data):
            noise[:, i] = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) \
                * (sigma / np.sqrt(2))
        else:
            noise[:, i] = rng.standard_normal(shape) * sigma
    return replace(echoes, data=data + noise)
