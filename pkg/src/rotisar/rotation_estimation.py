"""Rotation-axis and spin-rate estimation from autocorrelation supports.

Each receiver sees the support of its echo autocorrelation breathe as the
object turns: the support is widest when the eccentric scatterers line up
with the bistatic look direction.  The times of those maxima, together with
the look directions at those times, pin down the axis and the spin rate
through a least-squares fit of accumulated rotation angle.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.optimize import minimize
from scipy.signal import find_peaks

from .geometry import RotationParams, axis_rotation, doppler_factor


class NoPeaksError(RuntimeError):
    """The support traces carry too few maxima to estimate anything."""


class DegenerateDirectionError(ValueError):
    """The look direction is orthogonal to the rotation plane's reference."""


class InsufficientDataError(ValueError):
    """Fewer than two data points were supplied to the loss."""


class FlatLossWarning(UserWarning):
    """The coarse loss scan shows almost no contrast."""


@dataclass(frozen=True)
class SupportTrace:
    receiver_index: int
    slow_times: np.ndarray
    support: np.ndarray
    smoothed: np.ndarray | None = None
    peak_times: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class EstimationOptions:
    """Tuning knobs of :func:`estimate_rotation`.

    ``alpha`` is the relative threshold of the support rule, ``window`` the
    smoothing length in slow-time steps.  ``theta_steps`` x ``phi_steps`` is
    the coarse axis scan, ``omega_steps`` candidates span ``+-omega_span``
    around the spin rate suggested by the peak spacing.
    """

    alpha: float = 0.001
    window: int = 100
    theta_steps: int = 64
    phi_steps: int = 128
    omega_steps: int = 9
    omega_span: float = 0.2
    tolerance: float = 1e-6
    max_lag: float | None = None


@dataclass(frozen=True)
class RotationEstimate:
    theta_hat: float
    phi_hat: float
    omega_hat: float
    loss: float
    peak_times: np.ndarray
    directions: np.ndarray
    receivers: np.ndarray
    coarse_best: float = np.nan
    coarse_median: float = np.nan

    @property
    def params(self) -> RotationParams:
        return RotationParams(self.theta_hat, self.phi_hat, self.omega_hat)

    def relative_errors(self, truth: RotationParams) -> np.ndarray:
        est = np.array([self.theta_hat, self.phi_hat, self.omega_hat])
        ref = np.array([truth.theta_rot, truth.phi_rot, truth.omega_r])
        return np.abs(est - ref) / np.abs(ref)


def support_from_envelope(lags, envelope, alpha: float) -> np.ndarray:
    """Support ``2 max{tau : |C(tau)| >= alpha max |C|}`` along the last axis.

    The crossing is located by linear interpolation between the last lag
    above threshold and the next one, so the result varies continuously with
    the data instead of jumping by whole lag samples.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    lags = np.asarray(lags, float)
    env = np.abs(np.asarray(envelope, float))
    peak = env.max(axis=-1)
    if np.any(peak == 0):
        raise ZeroDivisionError("autocorrelation vanishes for at least one pulse")
    pos = lags >= 0
    lp = lags[pos]
    m = env[..., pos]
    thr = alpha * peak
    above = m >= thr[..., None]
    last = np.where(above, np.arange(len(lp)), -1).max(axis=-1)
    nxt = np.minimum(last + 1, len(lp) - 1)
    m0 = np.take_along_axis(m, last[..., None], -1)[..., 0]
    m1 = np.take_along_axis(m, nxt[..., None], -1)[..., 0]
    step = lp[1] - lp[0] if len(lp) > 1 else 0.0
    gap = m0 - m1
    frac = np.where((nxt > last) & (gap > 0), (m0 - thr) / np.where(gap > 0, gap, 1.0), 0.0)
    return 2 * (lp[last] + np.clip(frac, 0.0, 1.0) * step)


def support_trace(correlations, receiver_index: int, alpha: float) -> SupportTrace:
    """Per-pulse support of one receiver's autocorrelation envelope."""
    if correlations.auto is None:
        raise ValueError("correlation set has no autocorrelations")
    env = correlations.auto[receiver_index]
    if np.any(env.max(axis=-1) == 0):
        raise ZeroDivisionError(f"receiver {receiver_index}: all-zero autocorrelation")
    supp = support_from_envelope(correlations.lags, env, alpha)
    return SupportTrace(receiver_index, correlations.slow_times, supp)


def smooth(trace, window: int) -> np.ndarray:
    """Gaussian smoothing, sigma = window/6, kernel cut at +-window/2."""
    return gaussian_filter1d(np.asarray(trace, float), window / 6.0, truncate=3.0,
                             mode="nearest")


def smooth_and_find_peaks(trace, window: int, slow_times=None) -> np.ndarray:
    """Times of local maxima of the smoothed trace.

    Maxima closer than ``window/2`` steps to either end are discarded, since
    the smoothing there is one-sided.  Each peak is refined by a parabola
    through its neighbours.  With ``slow_times=None`` fractional indices are
    returned.
    """
    values = trace.support if isinstance(trace, SupportTrace) else np.asarray(trace, float)
    if slow_times is None and isinstance(trace, SupportTrace):
        slow_times = trace.slow_times
    n = len(values)
    if n <= window:
        raise ValueError(f"trace of length {n} not longer than the window {window}")
    sm = smooth(values, window)
    idx, props = find_peaks(sm, distance=max(1, window // 2), plateau_size=1)
    # a flat top is located at its centre; single-sample tops get a parabola
    centre = 0.5 * (props["left_edges"] + props["right_edges"])
    flat = props["plateau_sizes"] > 1
    edge = window // 2
    keep = (centre > edge) & (centre < n - 1 - edge)
    idx, centre, flat = idx[keep], centre[keep], flat[keep]
    a, b, c = sm[idx - 1], sm[idx], sm[idx + 1]
    den = a - 2 * b + c
    shift = np.where(den != 0, 0.5 * (a - c) / np.where(den != 0, den, 1.0), 0.0)
    frac = np.where(flat, centre, idx + shift)
    if slow_times is None:
        return frac
    slow_times = np.asarray(slow_times, float)
    step = slow_times[1] - slow_times[0]
    return slow_times[0] + frac * step


def direction_vector(s, scenario, receiver_index) -> np.ndarray:
    """Bistatic look direction unit(x_L - x_E) + gamma_R unit(x_L - x_R)."""
    x = scenario.trajectory.at(np.asarray(s, float))
    lay = scenario.layout
    a = x - lay.emitter
    b = x - lay.receivers[receiver_index]
    gamma = doppler_factor(x, lay, receiver_index, scenario.velocity)
    ua = a / np.linalg.norm(a, axis=-1)[..., None]
    ub = b / np.linalg.norm(b, axis=-1)[..., None]
    return ua + ub * np.asarray(gamma)[..., None]


def _plane_components(theta, phi, d):
    """Numerator and denominator of the angle ratio, broadcasting over d."""
    d = np.asarray(d, float)
    ct, st, cp, sp = np.cos(theta), np.sin(theta), np.cos(phi), np.sin(phi)
    num = -d[..., 0] * sp + d[..., 1] * cp
    den = d[..., 0] * ct * cp + d[..., 1] * ct * sp + d[..., 2] * st
    return num, den


def g_ratio(theta: float, phi: float, d) -> float:
    """Tangent of the look direction's angle inside the rotation plane.

    Raises :class:`DegenerateDirectionError` when the denominator is below
    ``1e-12 |d|``; :func:`g_ratio_matrix` evaluates the same quantity by
    explicit matrix application.
    """
    d = np.asarray(d, float)
    num, den = _plane_components(theta, phi, d)
    if abs(den) < 1e-12 * np.linalg.norm(d):
        raise DegenerateDirectionError("look direction orthogonal to the in-plane reference")
    return float(num / den)


def g_ratio_matrix(theta: float, phi: float, d) -> float:
    body = axis_rotation(theta, phi).T @ np.asarray(d, float)
    return float(body[1] / body[0])


def wrap_half_turn(x):
    """Map angles into [-pi/2, pi/2), the branch on which tan is one-to-one."""
    return np.mod(np.asarray(x) + np.pi / 2, np.pi) - np.pi / 2


def loss(theta: float, phi: float, omega: float, peak_times, directions) -> float:
    """Sum of squared residuals of in-plane angle increments vs omega * ds.

    Data must be sorted by time.  The in-plane angle is taken with atan2,
    which equals arctan of :func:`g_ratio` modulo pi, and each residual is
    wrapped to a half turn because tan repeats every pi.
    """
    t = np.asarray(peak_times, float)
    if len(t) < 2:
        raise InsufficientDataError("the loss needs at least two data points")
    num, den = _plane_components(theta, phi, directions)
    ang = np.arctan2(num, den)
    r = wrap_half_turn(np.diff(ang) - omega * np.diff(t))
    return float(np.sum(r * r))


def _loss_grid(thetas, phis, omegas, t, d):
    """Loss over the full tensor grid, shape (T, P, W)."""
    ct, st = np.cos(thetas)[:, None, None], np.sin(thetas)[:, None, None]
    cp, sp = np.cos(phis)[None, :, None], np.sin(phis)[None, :, None]
    dt = np.diff(t)
    out = np.empty((len(thetas), len(phis), len(omegas)))
    num = -d[:, 0] * sp + d[:, 1] * cp                      # (1, P, N)
    den = (d[:, 0] * cp + d[:, 1] * sp) * ct + d[:, 2] * st  # (T, P, N)
    ang = np.arctan2(np.broadcast_to(num, den.shape), den)
    dang = np.diff(ang, axis=-1)
    for k, om in enumerate(omegas):
        r = wrap_half_turn(dang - om * dt)
        out[:, :, k] = np.sum(r * r, axis=-1)
    return out


def collect_peaks(correlations, scenario, options: EstimationOptions):
    """Support traces, merged peak times, look directions and receiver ids."""
    traces, times, dirs, recv = [], [], [], []
    for r in range(correlations.num_receivers):
        tr = support_trace(correlations, r, options.alpha)
        pk = smooth_and_find_peaks(tr, options.window)
        tr = SupportTrace(r, tr.slow_times, tr.support, smooth(tr.support, options.window), pk)
        traces.append(tr)
        times.append(pk)
        dirs.append(direction_vector(pk, scenario, r).reshape(-1, 3))
        recv.append(np.full(len(pk), r))
    t = np.concatenate(times)
    order = np.argsort(t, kind="stable")
    return traces, t[order], np.concatenate(dirs)[order], np.concatenate(recv)[order]


def initial_spin_rate(traces) -> float:
    """pi over the median spacing of consecutive peaks within a receiver."""
    gaps = np.concatenate([np.diff(tr.peak_times) for tr in traces if len(tr.peak_times) > 1]
                          or [np.zeros(0)])
    if len(gaps) == 0:
        raise NoPeaksError("no receiver shows two support maxima")
    return float(np.pi / np.median(gaps))


def fit_rotation(peak_times, directions, omega_guess: float,
                 options: EstimationOptions = EstimationOptions(), receivers=None):
    """Coarse scan over the axis and spin rate, then simplex refinement."""
    t = np.asarray(peak_times, float)
    d = np.asarray(directions, float)
    if len(t) < 2:
        raise NoPeaksError("fewer than two support maxima across all receivers")
    thetas = (np.arange(options.theta_steps) + 0.5) * np.pi / options.theta_steps
    phis = np.arange(options.phi_steps) * 2 * np.pi / options.phi_steps
    omegas = omega_guess * np.linspace(1 - options.omega_span, 1 + options.omega_span,
                                       options.omega_steps)
    grid = _loss_grid(thetas, phis, omegas, t, d)
    best = np.unravel_index(np.argmin(grid), grid.shape)
    coarse_best, coarse_median = float(grid[best]), float(np.median(grid))
    if coarse_median > 0 and (coarse_median - coarse_best) / coarse_median < 0.05:
        warnings.warn("loss surface is nearly flat; the estimate is unreliable", FlatLossWarning)
    x0 = np.array([thetas[best[0]], phis[best[1]], omegas[best[2]]])
    fun = lambda x: loss(x[0], x[1], x[2], t, d)
    scale = np.array([np.pi / options.theta_steps, 2 * np.pi / options.phi_steps,
                      omegas[1] - omegas[0] if len(omegas) > 1 else 0.05 * omega_guess])
    simplex = np.vstack([x0, x0 + np.diag(scale)])
    res = minimize(fun, x0, method="Nelder-Mead",
                   options=dict(xatol=options.tolerance, fatol=1e-14, maxiter=20000,
                                initial_simplex=simplex))
    x = res.x if res.fun <= coarse_best else x0
    p = RotationParams.wrapped(*x)
    final = loss(p.theta_rot, p.phi_rot, p.omega_r, t, d)
    rec = np.zeros(len(t), int) if receivers is None else np.asarray(receivers)
    return RotationEstimate(p.theta_rot, p.phi_rot, p.omega_r, final, t, d, rec,
                            coarse_best, coarse_median)


def estimate_rotation(correlations, scenario, options: EstimationOptions = EstimationOptions(),
                      return_traces: bool = False):
    """Estimate (theta, phi, omega) from a :class:`CorrelationSet`.

    ``scenario`` supplies geometry and the linear trajectory; its rotation
    field is ignored.
    """
    traces, t, d, recv = collect_peaks(correlations, scenario, options)
    if len(t) < 2:
        raise NoPeaksError("fewer than two support maxima across all receivers")
    est = fit_rotation(t, d, initial_spin_rate(traces), options, recv)
    return (est, traces) if return_traces else est


def write_diagnostics(out_dir, estimate: RotationEstimate, traces, slices: int = 90) -> list[Path]:
    """Support traces, detected peaks and loss slices as CSV files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / "support_traces.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["receiver", "slow_time", "support", "smoothed"])
        for tr in traces:
            sm = tr.smoothed if tr.smoothed is not None else np.full(len(tr.support), np.nan)
            for s, v, m in zip(tr.slow_times, tr.support, sm):
                w.writerow([tr.receiver_index, repr(float(s)), repr(float(v)), repr(float(m))])
    written.append(path)
    path = out / "peaks.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["receiver", "peak_time", "d1", "d2", "d3"])
        for r, s, d in zip(estimate.receivers, estimate.peak_times, estimate.directions):
            w.writerow([int(r), repr(float(s)), *(repr(float(x)) for x in d)])
    written.append(path)
    thetas = np.linspace(0, np.pi, slices + 1)
    phis = np.linspace(0, 2 * np.pi, 2 * slices + 1)
    surf = _loss_grid(thetas, phis, [estimate.omega_hat], estimate.peak_times,
                      estimate.directions)[:, :, 0]
    path = out / "loss_theta_phi.csv"
    np.savetxt(path, surf, delimiter=",", fmt="%.9e",
               header="rows: theta in [0, pi]; columns: phi in [0, 2pi]; omega at estimate")
    written.append(path)
    omegas = estimate.omega_hat * np.linspace(0.5, 1.5, 201)
    vals = [loss(estimate.theta_hat, estimate.phi_hat, om, estimate.peak_times,
                 estimate.directions) for om in omegas]
    path = out / "loss_omega.csv"
    np.savetxt(path, np.column_stack([omegas, vals]), delimiter=",", fmt="%.9e",
               header="omega,loss", comments="")
    written.append(path)
    return written
