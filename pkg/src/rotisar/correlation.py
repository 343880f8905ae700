"""Doppler-rescaled cross-correlations and autocorrelation envelopes.

Sign convention: for real aligned echoes the lag-domain correlation is
``C_RR'(tau) = int u_R(t) u_R'(t + tau) dt`` and its transform satisfies
``int C_RR'(tau) exp(-i w tau) dtau = u_hat_R(w) conj(u_hat_R'(w))``, which is
exactly the frequency-domain product stored in :class:`CorrelationSet`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import doppler_factor
from .waveform import EchoSet, Pulse, pulse_second_derivative, pulse_spectrum

MAGIC = b"ISARCORR"
FORMAT_VERSION = 1


class GridMismatchError(ValueError):
    """Two echoes do not share a sample grid."""


@dataclass(frozen=True)
class Echo:
    """A single echo: samples over a time axis or a frequency axis."""

    axis: np.ndarray
    values: np.ndarray
    domain: str = "time"


def reference_gamma(scenario, receiver_index, x0, v0) -> float:
    """Doppler factor gamma_R(x0, x_E, v0) used to rescale one receiver."""
    return float(doppler_factor(np.asarray(x0, float), scenario.layout, receiver_index,
                                np.asarray(v0, float)))


def rescale_echo(echo: Echo, gamma: float) -> Echo:
    """Return the echo seen through ``u_tilde(t) = u(t / gamma)``.

    In time the sample taken at ``t`` now sits at ``gamma t``.  In frequency
    ``u_tilde_hat(w) = gamma u_hat(gamma w)``, so the sample at ``w`` moves
    to ``w / gamma`` and is multiplied by ``gamma``.  Rescaling by ``gamma``
    and then ``1 / gamma`` is the identity.
    """
    if gamma <= 0:
        raise ValueError("Doppler factor must be positive")
    if echo.domain == "time":
        return Echo(echo.axis * gamma, echo.values.copy(), "time")
    return Echo(echo.axis / gamma, echo.values * gamma, "freq")


def cross_correlate_freq(u_r, u_rp, axis_r=None, axis_rp=None, delay_r=None, delay_rp=None):
    """Cross-spectrum ``u_r * conj(u_rp)`` for one receiver pair.

    Parameters
    ----------
    u_r, u_rp : array_like
        Complex spectra, or :class:`Echo` objects in the frequency domain.
    axis_r, axis_rp : array_like, optional
        Angular frequency grids; required to match when given.
    delay_r, delay_rp : float, optional
        Travel times to remove before the product, applied as the phase
        ramps ``exp(-i w delay)``.  Use these for echoes that are not yet
        aligned to the window centre.
    """
    if isinstance(u_r, Echo):
        axis_r, u_r = u_r.axis, u_r.values
    if isinstance(u_rp, Echo):
        axis_rp, u_rp = u_rp.axis, u_rp.values
    u_r = np.asarray(u_r)
    u_rp = np.asarray(u_rp)
    if u_r.shape != u_rp.shape:
        raise GridMismatchError("spectra have different lengths")
    if axis_r is not None and axis_rp is not None and not np.array_equal(axis_r, axis_rp):
        raise GridMismatchError("spectra are sampled on different frequency grids")
    w = axis_r if axis_r is not None else axis_rp
    if delay_r is not None or delay_rp is not None:
        if w is None:
            raise ValueError("delays need a frequency axis")
        if delay_r is not None:
            u_r = u_r * np.exp(-1j * w * delay_r)
        if delay_rp is not None:
            u_rp = u_rp * np.exp(-1j * w * delay_rp)
    return u_r * np.conj(u_rp)


def cross_spectra(echoes: EchoSet) -> np.ndarray:
    """All pairwise cross-spectra, shape (N_R, N_R, S, N_w)."""
    if echoes.domain != "freq":
        raise ValueError("cross-spectra need frequency-domain echoes")
    u = echoes.data
    return u[:, None] * np.conj(u[None, :])


def cross_correlate_time(u_r, u_rp, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Linear cross-correlation ``sum_t u_r(t) u_rp(t + tau) dt`` over all lags."""
    u_r = np.asarray(u_r, float)
    u_rp = np.asarray(u_rp, float)
    n = len(u_r)
    c = np.correlate(u_rp, u_r, mode="full") * dt
    lags = (np.arange(2 * n - 1) - (n - 1)) * dt
    return lags, c


def _analytic_autocorrelation(x, nfft, band=None, dt=1.0):
    """Complex autocorrelation whose real part is the linear autocorrelation.

    ``band=(f_lo, f_hi)`` in Hz keeps only that part of the one-sided power
    spectrum, which is a zero-phase band-pass applied before correlating.
    """
    spec = np.fft.fft(x, nfft, axis=-1)
    power = np.abs(spec) ** 2
    weights = np.zeros(nfft)
    weights[0] = 1.0
    weights[1:(nfft + 1) // 2] = 2.0
    if nfft % 2 == 0:
        weights[nfft // 2] = 1.0
    if band is not None:
        f = np.fft.fftfreq(nfft, dt)
        weights = weights * ((f >= band[0]) & (f <= band[1]))
    return np.fft.ifft(power * weights, axis=-1)


def lag_grid(n_samples: int, dt: float, max_lag: float | None = None,
             decimation: int = 1) -> np.ndarray:
    """Symmetric lag grid including zero, spaced ``decimation * dt``."""
    if max_lag is None:
        half = n_samples // 2
    else:
        half = min(n_samples - 1, int(np.floor(max_lag / dt + 1e-9)))
    m = half // decimation
    return np.arange(-m, m + 1) * decimation * dt


def autocorrelation_envelope(echoes: EchoSet, max_lag: float | None = None,
                             decimation: int = 4, band=None, chunk: int = 256):
    """Envelope of the fast-time autocorrelation of every echo.

    The analytic autocorrelation is formed from the one-sided power spectrum
    of each echo; its real part is ``int u(t) u(t + tau) dt`` and its modulus
    is the envelope.  Samples are kept on a lag grid spanning ``+-max_lag``
    (default half the fast-time window) with spacing ``decimation`` samples.
    ``band=(f_lo, f_hi)`` restricts the power spectrum to the pulse band so
    out-of-band noise does not raise the envelope floor.

    Returns ``(lags, envelope)`` with envelope shape (N_R, S, L).
    """
    if echoes.domain != "time":
        raise ValueError("autocorrelation needs time-domain echoes")
    t = echoes.axis
    dt = t[1] - t[0]
    n = len(t)
    lags = lag_grid(n, dt, max_lag, decimation)
    idx = np.rint(lags / dt).astype(int) % (2 * n)
    n_r, n_s = echoes.data.shape[:2]
    out = np.empty((n_r, n_s, len(lags)))
    for i0 in range(0, n_s, chunk):
        block = echoes.data[:, i0:i0 + chunk]
        c = _analytic_autocorrelation(block, 2 * n, band, dt) * dt
        out[:, i0:i0 + chunk] = np.abs(c[..., idx])
    return lags, out


def autocorrelate_time(echoes: EchoSet, receiver_index: int, pulse_index: int,
                       max_lag: float | None = None, decimation: int = 1):
    """Real autocorrelation ``C_R(s, tau)`` of one echo on the lag grid."""
    t = echoes.axis
    dt = t[1] - t[0]
    n = len(t)
    lags = lag_grid(n, dt, max_lag, decimation)
    idx = np.rint(lags / dt).astype(int) % (2 * n)
    c = _analytic_autocorrelation(echoes.data[receiver_index, pulse_index], 2 * n) * dt
    return lags, c.real[idx]


def pulse_autocorrelation(tau, p: Pulse, nodes: int = 64, panels: int | None = None):
    """G(tau) = int f''(t) f''(t + tau) dt by Gauss-Legendre quadrature.

    Uses ``G(tau) = (1/pi) int_0^inf w^4 f_hat(w)^2 cos(w tau) dw`` on the
    interval where the spectrum is non-negligible, split into panels.
    """
    tau = np.atleast_1d(np.asarray(tau, float))
    lo = max(0.0, p.omega0 - 12 * p.beta)
    hi = p.omega0 + 12 * p.beta
    if panels is None:
        # enough panels to resolve cos(w tau) for the largest requested lag
        cycles = (hi - lo) * np.max(np.abs(tau), initial=0.0) / (2 * np.pi)
        panels = int(max(16, np.ceil(cycles / 4)))
    x, wts = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    w = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * wts[None, :]).ravel()
    density = w ** 4 * pulse_spectrum(w, p) ** 2 * wt
    return (np.cos(np.outer(tau, w)) @ density) / np.pi


def pulse_autocorrelation_fft(tau, p: Pulse, oversample: int = 8):
    """Same kernel from a finely sampled f'' and an FFT correlation."""
    fs = oversample * 2 * (p.carrier + 6 * p.bandwidth)
    dt = 1.0 / fs
    half = 14.0 / p.beta + np.max(np.abs(tau))
    n = int(np.ceil(half / dt))
    t = np.arange(-n, n + 1) * dt
    f2 = pulse_second_derivative(t, p)
    m = len(t)
    spec = np.fft.rfft(f2, 2 * m)
    c = np.fft.irfft(np.abs(spec) ** 2, 2 * m) * dt
    lags = np.fft.fftfreq(2 * m, 1.0 / (2 * m)) * dt
    order = np.argsort(lags)
    return np.interp(tau, lags[order], c[order])


@dataclass(frozen=True)
class CorrelationSet:
    """Cross-spectra and autocorrelation envelopes of one acquisition.

    Attributes
    ----------
    cross : complex array (N_R, N_R, S, N_w) or None
        ``u_hat_R(s, w) conj(u_hat_R'(s, w))`` on ``freqs``.
    auto : real array (N_R, S, L) or None
        Envelope of ``C_R(s, tau)`` on ``lags``.
    x0, v0 : reference position and velocity of the rescaling window.
    """

    slow_times: np.ndarray
    freqs: np.ndarray | None = None
    cross: np.ndarray | None = None
    lags: np.ndarray | None = None
    auto: np.ndarray | None = None
    x0: np.ndarray | None = None
    v0: np.ndarray | None = None

    @property
    def num_receivers(self) -> int:
        arr = self.cross if self.cross is not None else self.auto
        return arr.shape[0]

    def select_pulses(self, index) -> "CorrelationSet":
        return CorrelationSet(
            self.slow_times[index], self.freqs,
            None if self.cross is None else self.cross[:, :, index],
            self.lags, None if self.auto is None else self.auto[:, index],
            self.x0, self.v0)

    def save(self, path) -> None:
        write_correlations(path, self)

    @classmethod
    def load(cls, path) -> "CorrelationSet":
        return read_correlations(path)


def build_correlations(freq_echoes: EchoSet | None, time_echoes: EchoSet | None,
                       x0, v0, max_lag=None, decimation: int = 4, band=None) -> CorrelationSet:
    """Assemble a :class:`CorrelationSet` from aligned echoes."""
    if freq_echoes is None and time_echoes is None:
        raise ValueError("need at least one echo set")
    slow = (freq_echoes or time_echoes).slow_times
    freqs = cross = lags = auto = None
    if freq_echoes is not None:
        freqs, cross = freq_echoes.axis, cross_spectra(freq_echoes)
    if time_echoes is not None:
        if time_echoes.slow_times.shape != slow.shape or \
                not np.allclose(time_echoes.slow_times, slow):
            raise GridMismatchError("time and frequency echoes cover different pulses")
        lags, auto = autocorrelation_envelope(time_echoes, max_lag, decimation, band)
    return CorrelationSet(slow, freqs, cross, lags, auto,
                          np.asarray(x0, float), np.asarray(v0, float))


def _arr_meta(a):
    return None if a is None else {"shape": list(a.shape), "dtype": a.dtype.str}


def write_correlations(path, cs: CorrelationSet) -> None:
    """Binary layout.

    ``b"ISARCORR"`` magic, little-endian uint32 format version, uint32
    header length, UTF-8 JSON header, then the arrays listed in the header
    (``slow_times``, ``freqs``, ``cross``, ``lags``, ``auto``) back to back,
    row-major, little-endian, with the dtype recorded per array
    (complex128 / float64 by default so a reload is bit-exact).
    """
    arrays = {
        "slow_times": np.asarray(cs.slow_times, "<f8"),
        "freqs": None if cs.freqs is None else np.asarray(cs.freqs, "<f8"),
        "cross": None if cs.cross is None else np.ascontiguousarray(cs.cross, "<c16"),
        "lags": None if cs.lags is None else np.asarray(cs.lags, "<f8"),
        "auto": None if cs.auto is None else np.ascontiguousarray(cs.auto, "<f8"),
    }
    header = {
        "arrays": {k: _arr_meta(v) for k, v in arrays.items()},
        "order": list(arrays),
        "x0": None if cs.x0 is None else [float(v) for v in cs.x0],
        "v0": None if cs.v0 is None else [float(v) for v in cs.v0],
    }
    blob = json.dumps(header).encode()
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for key in header["order"]:
            if arrays[key] is not None:
                fh.write(arrays[key].tobytes(order="C"))


def read_correlations(path) -> CorrelationSet:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a correlation file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[16:16 + hlen])
    pos = 16 + hlen
    out = {}
    for key in header["order"]:
        meta = header["arrays"][key]
        if meta is None:
            out[key] = None
            continue
        dtype = np.dtype(meta["dtype"])
        count = int(np.prod(meta["shape"]))
        out[key] = np.frombuffer(raw, dtype, count, pos).reshape(meta["shape"]).copy()
        pos += count * dtype.itemsize
    vec = lambda v: None if v is None else np.asarray(v, float)
    return CorrelationSet(out["slow_times"], out["freqs"], out["cross"], out["lags"],
                          out["auto"], vec(header["x0"]), vec(header["v0"]))


def write_auto_csv(path, cs: CorrelationSet, receiver_index: int) -> None:
    """Autocorrelation envelope of one receiver: rows are pulses, columns lags."""
    if cs.auto is None:
        raise ValueError("correlation set has no autocorrelations")
    header = "slow_time," + ",".join(f"{v:.6e}" for v in cs.lags)
    rows = np.column_stack([cs.slow_times, cs.auto[receiver_index]])
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.9e")
