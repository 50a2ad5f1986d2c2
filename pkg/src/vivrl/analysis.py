"""Spectral and amplitude metrics for run records."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoDominantFrequencyError, ParameterDomainError
from .records import RunRecord

MIN_SIGNAL_LENGTH = 64


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def fft_radix2(x) -> np.ndarray:
    """Iterative Cooley-Tukey FFT; ``len(x)`` must be a power of two."""
    a = np.asarray(x, dtype=complex).copy()
    n = a.size
    if n == 0 or n & (n - 1):
        raise ParameterDomainError(f"radix-2 FFT needs a power-of-two length, got {n}")
    bits = n.bit_length() - 1
    if bits:
        idx = np.arange(n)
        rev = np.zeros(n, dtype=np.int64)
        for b in range(bits):
            rev |= ((idx >> b) & 1) << (bits - 1 - b)
        a = a[rev]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        a = a.reshape(-1, size)
        even = a[:, :half].copy()
        odd = a[:, half:] * tw
        a[:, :half] = even + odd
        a[:, half:] = even - odd
        a = a.reshape(-1)
        size *= 2
    return a


@dataclass
class Spectrum:
    """One-sided magnitude spectrum of a windowed, zero-padded series."""

    freqs_hz: np.ndarray
    magnitudes: np.ndarray
    bin_width_hz: float
    n_fft: int

    def energy(self) -> float:
        """Time-domain energy recovered through Parseval's relation."""
        m2 = self.magnitudes ** 2
        inner = m2[1:-1].sum() if self.n_fft > 1 else 0.0
        return float((m2[0] + 2.0 * inner + m2[-1]) / self.n_fft)


def spectrum(signal, fs_hz: float, window: bool = True) -> tuple[Spectrum, np.ndarray]:
    """Return the spectrum and the windowed (pre-padding) series it came from."""
    x = np.asarray(signal, dtype=float)
    if fs_hz <= 0:
        raise ParameterDomainError("sampling rate must be positive")
    x = x - x.mean()
    if window:
        x = x * np.hanning(x.size)
    n_fft = next_pow2(x.size)
    padded = np.zeros(n_fft)
    padded[: x.size] = x
    mags = np.abs(fft_radix2(padded)[: n_fft // 2 + 1])
    df = fs_hz / n_fft
    return Spectrum(np.arange(mags.size) * df, mags, df, n_fft), x


def dominant_frequency(signal, fs_hz: float) -> float:
    """Peak frequency of a Hann-windowed spectrum, refined by a parabola
    through the peak bin and its neighbours."""
    x = np.asarray(signal, dtype=float)
    if x.size < MIN_SIGNAL_LENGTH:
        raise ParameterDomainError(f"need at least {MIN_SIGNAL_LENGTH} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ParameterDomainError("signal contains non-finite samples")
    spec, xw = spectrum(x, fs_hz)
    scale = np.abs(x).max()
    if scale == 0.0 or np.abs(xw).max() <= 1e-12 * scale:
        raise NoDominantFrequencyError("signal has no oscillatory content")
    m = spec.magnitudes
    k = 1 + int(np.argmax(m[1:]))
    left = m[k - 1]
    # the spectrum is mirror-symmetric about Nyquist
    right = m[k + 1] if k + 1 < m.size else m[k - 1]
    denom = left - 2.0 * m[k] + right
    offset = 0.0 if denom == 0.0 else 0.5 * (left - right) / denom
    offset = float(np.clip(offset, -0.5, 0.5))
    return (k + offset) * spec.bin_width_hz


def steady_amplitude(record: RunRecord, window_fraction: float = 0.4,
                     min_periods: float = 5.0, f_hz: float | None = None) -> float:
    """sqrt(2) x RMS of Y/D over the trailing ``window_fraction`` of the record."""
    if not 0.0 < window_fraction <= 1.0:
        raise ParameterDomainError("window_fraction must lie in (0, 1]")
    n = len(record)
    start = int(np.floor(n * (1.0 - window_fraction)))
    y = np.asarray(record.y_over_d[start:], dtype=float)
    if f_hz is None:
        f_hz = float(record.meta.get("f_n_hz", 0.0))
    span = y.size * record.dt_s if n > 1 else 0.0
    if y.size < 2 or (f_hz > 0 and span * f_hz < min_periods):
        raise ParameterDomainError(
            f"steady window spans {span:.3g} s; need {min_periods} periods")
    return float(np.sqrt(2.0) * np.sqrt(np.mean(y * y)))


def suppression_ratio(controlled: float, uncontrolled: float) -> float:
    if not uncontrolled > 0:
        raise ParameterDomainError("uncontrolled amplitude must be positive")
    return 1.0 - controlled / uncontrolled


def mean_alpha(record: RunRecord) -> float:
    if len(record) == 0:
        raise ParameterDomainError("empty record")
    return float(np.mean(record.alpha))


def dominant_ratio(signal, fs_hz: float, f_n_hz: float) -> float:
    """Dominant frequency over ``f_n_hz``; NaN when the signal is flat."""
    try:
        return dominant_frequency(signal, fs_hz) / f_n_hz
    except NoDominantFrequencyError:
        return float("nan")
