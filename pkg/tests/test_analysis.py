import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vivrl.analysis import (dominant_frequency, fft_radix2, mean_alpha, spectrum, steady_amplitude,
                            suppression_ratio)
from vivrl.errors import NoDominantFrequencyError, ParameterDomainError
from vivrl.records import RunRecord


def _record(y, dt, f_n=1.96, alpha=None):
    t = dt * np.arange(1, len(y) + 1)
    a = np.zeros_like(t) if alpha is None else alpha
    return RunRecord(t, np.asarray(y, float), np.zeros_like(t), np.zeros_like(t), a,
                     -np.abs(y), meta={"f_n_hz": f_n, "dt_s": dt})


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10), st.integers(0, 2 ** 31 - 1))
def test_fft_matches_numpy(log_n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(2 ** log_n) + 1j * rng.standard_normal(2 ** log_n)
    assert np.allclose(fft_radix2(x), np.fft.fft(x), rtol=1e-10, atol=1e-9)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ParameterDomainError):
        fft_radix2(np.ones(12))


@settings(max_examples=50, deadline=None)
@given(st.integers(64, 3000), st.integers(0, 2 ** 31 - 1))
def test_parseval(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    spec, xw = spectrum(x, 100.0)
    assert spec.energy() == pytest.approx(float(np.sum(xw * xw)), rel=1e-6)


def test_spectrum_grid():
    spec, _ = spectrum(np.sin(np.arange(1000)), 50.0)
    assert np.all(np.diff(spec.freqs_hz) > 0)
    assert np.allclose(np.diff(spec.freqs_hz), spec.bin_width_hz)
    assert np.all(spec.magnitudes >= 0)


def test_dominant_frequency_pure_tone():
    fs = 100.0
    t = np.arange(1000) / fs
    f = dominant_frequency(np.sin(2 * np.pi * 3.0 * t), fs)
    assert abs(f - 3.0) <= 0.5 * fs / 1024


def test_dominant_frequency_two_tones():
    fs = 100.0
    t = np.arange(1000) / fs
    x = np.sin(2 * np.pi * 2.0 * t) + 0.3 * np.sin(2 * np.pi * 5.0 * t)
    assert dominant_frequency(x, fs) == pytest.approx(2.0, abs=0.05)


def test_dominant_frequency_errors():
    with pytest.raises(NoDominantFrequencyError):
        dominant_frequency(np.full(200, 3.0), 10.0)
    with pytest.raises(NoDominantFrequencyError):
        dominant_frequency(np.zeros(200), 10.0)
    with pytest.raises(ParameterDomainError):
        dominant_frequency(np.ones(10), 10.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 8.0), st.floats(1e-3, 1e3), st.floats(-50, 50), st.floats(0, 6.3))
def test_dominant_frequency_invariances(f, scale, offset, phase):
    fs = 50.0
    t = np.arange(1500) / fs
    x = np.sin(2 * np.pi * f * t + phase)
    f0 = dominant_frequency(x, fs)
    assert dominant_frequency(scale * x + offset, fs) == pytest.approx(f0, rel=1e-6, abs=1e-9)
    assert abs(f0 - f) <= fs / 2048


def test_steady_amplitude_examples():
    dt = 0.01
    t = dt * np.arange(1, 5001)
    rec = _record(0.6 * np.sin(2 * np.pi * 1.96 * t), dt)
    assert steady_amplitude(rec) == pytest.approx(0.6, rel=0.01)
    assert steady_amplitude(_record(np.zeros(5000), dt)) == 0.0


def test_steady_amplitude_window_too_short():
    with pytest.raises(ParameterDomainError):
        steady_amplitude(_record(np.zeros(100), 0.01))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2 * np.pi))
def test_steady_amplitude_phase_invariant(phase):
    dt = 0.01
    t = dt * np.arange(1, 5001)
    rec = _record(0.6 * np.sin(2 * np.pi * 1.96 * t + phase), dt)
    assert steady_amplitude(rec) == pytest.approx(0.6, rel=0.01)


def test_suppression_examples():
    assert suppression_ratio(0.03, 0.6) == pytest.approx(0.95)
    assert suppression_ratio(0.6, 0.6) == 0.0
    assert suppression_ratio(0.12, 0.6) == pytest.approx(0.8)
    with pytest.raises(ParameterDomainError):
        suppression_ratio(0.1, 0.0)


def test_mean_alpha_examples():
    dt = 0.01
    t = dt * np.arange(1, 1001)
    sym = _record(np.zeros(1000), dt, alpha=np.sin(2 * np.pi * t))
    assert abs(mean_alpha(sym)) < 1e-12
    const = _record(np.zeros(1000), dt, alpha=np.full(1000, 0.3))
    assert mean_alpha(const) == pytest.approx(0.3)
    with pytest.raises(ParameterDomainError):
        mean_alpha(RunRecord.empty())
