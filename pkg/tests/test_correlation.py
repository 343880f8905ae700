import struct

import numpy as np
import pytest

from oracles import correlate_literal, fourier_sum
from rotisar.correlation import (
    MAGIC, CorrelationSet, Echo, GridMismatchError, autocorrelate_time,
    autocorrelation_envelope, build_correlations, cross_correlate_freq,
    cross_correlate_time, cross_spectra, lag_grid, pulse_autocorrelation,
    pulse_autocorrelation_fft, read_correlations, reference_gamma, rescale_echo,
    write_correlations,
)
from rotisar.waveform import Pulse, frequency_grid, synthesize_freq, synthesize_time, time_to_freq


@pytest.fixture(scope="module")
def echoes(small_scenario, two_point_scene):
    return (synthesize_time(small_scenario, two_point_scene),
            synthesize_freq(small_scenario, two_point_scene))


def test_time_correlation_matches_literal_sum():
    rng = np.random.default_rng(0)
    u, up = rng.standard_normal(40), rng.standard_normal(40)
    lags, c = cross_correlate_time(u, up, 0.5)
    assert np.allclose(c, correlate_literal(u, up, 0.5), atol=1e-12)
    assert lags[0] == -19.5 and lags[-1] == 19.5


def test_correlation_transform_is_spectral_product(echoes):
    # int C(tau) exp(-i w tau) dtau = u_hat_R conj(u_hat_R')
    et, _ = echoes
    t = et.axis
    dt = t[1] - t[0]
    w = frequency_grid(Pulse(2.4e9, 311e6, 0.015, 1, num_freqs=12))
    u0, u1 = et.data[0, 3], et.data[2, 3]
    lags, c = cross_correlate_time(u0, u1, dt)
    lhs = fourier_sum(lags, c, -w)
    spec = time_to_freq(et.select_pulses([3]), w).data[:, 0]
    rhs = cross_correlate_freq(spec[0], spec[2])
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-9 * np.abs(rhs).max())


def test_cross_spectra_hermitian(echoes):
    _, ef = echoes
    c = cross_spectra(ef)
    assert c.shape == (5, 5, 20, 16)
    assert np.allclose(c, np.conj(np.swapaxes(c, 0, 1)))
    diag = np.einsum("rrsw->rsw", c)
    assert np.all(np.abs(diag.imag) <= 1e-14 * diag.real)


def test_cross_correlate_freq_checks_grids():
    w = np.arange(4.0)
    with pytest.raises(GridMismatchError):
        cross_correlate_freq(np.ones(4), np.ones(5))
    with pytest.raises(GridMismatchError):
        cross_correlate_freq(Echo(w, np.ones(4), "freq"), Echo(w + 1, np.ones(4), "freq"))


def test_delay_removal_aligns_spectra():
    w = np.linspace(1.0, 2.0, 8)
    u = np.exp(0.3j * w)
    got = cross_correlate_freq(u * np.exp(1j * w * 2.0), u * np.exp(1j * w * 5.0), w, w, 2.0, 5.0)
    assert np.allclose(got, np.abs(u) ** 2)


@pytest.mark.parametrize("domain", ["time", "freq"])
def test_rescale_round_trip(domain):
    e = Echo(np.linspace(0, 1, 5), np.arange(5.0) + 1j, domain)
    back = rescale_echo(rescale_echo(e, 1.0001), 1 / 1.0001)
    assert np.allclose(back.axis, e.axis) and np.allclose(back.values, e.values)
    with pytest.raises(ValueError):
        rescale_echo(e, 0.0)


def test_frequency_rescale_is_transform_of_time_rescale():
    # u(t / g) has transform g u_hat(g w)
    p = Pulse(2.4e9, 311e6, 0.015, 1)
    from rotisar.waveform import pulse_spectrum, pulse_value
    g = 1.01
    t = np.arange(-3000, 3001) * 2e-12
    w = 2 * np.pi * np.linspace(2.2e9, 2.6e9, 5)
    lhs = fourier_sum(t, pulse_value(t / g, p), w).real
    e = rescale_echo(Echo(w * g, pulse_spectrum(w * g, p), "freq"), g)
    assert np.allclose(e.axis, w)
    assert np.allclose(lhs, e.values, rtol=1e-8)


def test_reference_gamma(small_scenario):
    x0 = small_scenario.trajectory.position
    g = reference_gamma(small_scenario, 0, x0, small_scenario.velocity)
    assert 0.99999 < g < 1.00001


def test_lag_grid():
    lags = lag_grid(100, 1.0)
    assert lags[0] == -50 and lags[-1] == 50 and 0.0 in lags
    lags = lag_grid(100, 0.5, max_lag=10.2, decimation=4)
    assert np.allclose(np.diff(lags), 2.0) and lags[-1] == 10.0


def test_analytic_autocorrelation_real_part(echoes):
    et, _ = echoes
    dt = et.axis[1] - et.axis[0]
    lags, c = autocorrelate_time(et, 1, 4)
    full_lags, ref = cross_correlate_time(et.data[1, 4], et.data[1, 4], dt)
    assert np.allclose(c, np.interp(lags, full_lags, ref), atol=1e-12 * np.abs(ref).max())


def test_envelope_bounds_correlation(echoes):
    et, _ = echoes
    lags, env = autocorrelation_envelope(et, decimation=1)
    _, c = autocorrelate_time(et, 2, 6)
    assert np.all(env[2, 6] >= np.abs(c) - 1e-9 * env[2, 6].max())
    assert np.argmax(env[2, 6]) == len(lags) // 2
    assert np.allclose(env[2, 6], env[2, 6][::-1], rtol=1e-10, atol=1e-12 * env[2, 6].max())


def test_band_limit_keeps_in_band_signal(echoes):
    et, _ = echoes
    _, full = autocorrelation_envelope(et, decimation=1)
    _, band = autocorrelation_envelope(et, decimation=1, band=(1.2e9, 3.6e9))
    assert np.allclose(band, full, rtol=1e-3, atol=1e-3 * full.max())


def test_pulse_autocorrelation_quadrature_vs_fft():
    p = Pulse(2.4e9, 311e6, 0.015, 1)
    tau = np.linspace(-2e-9, 2e-9, 41)
    a = pulse_autocorrelation(tau, p)
    # the FFT reference interpolates linearly between lags, hence the fine sampling
    b = pulse_autocorrelation_fft(tau, p, oversample=64)
    assert np.allclose(a, b, rtol=0, atol=1e-4 * np.abs(a).max())


def test_centre_scatterer_autocorrelation_is_pulse_kernel(small_scenario):
    from rotisar.geometry import Scene
    from rotisar.waveform import spreading
    e = synthesize_time(small_scenario, Scene([[0.0, 0.0]]))
    lags, c = autocorrelate_time(e, 0, 0)
    r = spreading(e.slow_times[:1], small_scenario)[0, 0]
    ref = pulse_autocorrelation(lags, small_scenario.pulse) / (4 * np.pi * r) ** 4
    assert np.allclose(c, ref, rtol=0, atol=1e-6 * np.abs(ref).max())


def test_build_and_store_bit_exact(tmp_path, echoes, small_scenario):
    et, ef = echoes
    tr = small_scenario.trajectory
    cs = build_correlations(ef, et, tr.position, tr.velocity, decimation=2)
    path = tmp_path / "c.bin"
    write_correlations(path, cs)
    back = read_correlations(path)
    for name in ("slow_times", "freqs", "cross", "lags", "auto", "x0", "v0"):
        a, b = getattr(cs, name), getattr(back, name)
        assert a.dtype == b.dtype and np.array_equal(a, b)
    assert path.read_bytes()[:8] == MAGIC
    sub = cs.select_pulses(slice(2, 5))
    assert sub.cross.shape[2] == 3 and sub.auto.shape[1] == 3


def test_store_partial_set(tmp_path, echoes, small_scenario):
    _, ef = echoes
    cs = build_correlations(ef, None, small_scenario.trajectory.position, np.zeros(3))
    cs.save(tmp_path / "x")
    back = CorrelationSet.load(tmp_path / "x")
    assert back.auto is None and back.lags is None and np.array_equal(back.cross, cs.cross)


def test_reader_rejects_foreign_files(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(b"NOTACORR" + b"\0" * 16)
    with pytest.raises(ValueError, match="not a correlation file"):
        read_correlations(bad)
    newer = tmp_path / "newer"
    newer.write_bytes(MAGIC + struct.pack("<II", 99, 2) + b"{}")
    with pytest.raises(ValueError, match="version"):
        read_correlations(newer)


def test_build_checks_pulses(echoes):
    et, ef = echoes
    with pytest.raises(ValueError):
        build_correlations(None, None, np.zeros(3), np.zeros(3))
    with pytest.raises(GridMismatchError):
        build_correlations(ef, et.select_pulses(slice(0, 3)), np.zeros(3), np.zeros(3))
