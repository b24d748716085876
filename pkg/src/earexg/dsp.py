"""Streaming and batch signal processing: IIR filters, Welch spectra,
RMS envelopes, and threshold-based deflection detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal


class FilterDesignError(ValueError):
    """Requested filter parameters are outside the valid design range."""


@dataclass(frozen=True)
class BiquadCoeffs:
    """Second-order IIR section, a0 normalized to 1."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def __post_init__(self):
        poles = np.roots([1.0, self.a1, self.a2])
        if np.any(np.abs(poles) >= 1.0):
            raise FilterDesignError(f"unstable biquad, poles at {poles}")

    @property
    def sos_row(self) -> np.ndarray:
        return np.array([self.b0, self.b1, self.b2, 1.0, self.a1, self.a2])


@dataclass(frozen=True)
class BiquadCascade:
    """Chain of biquad sections applied in series."""

    sections: tuple[BiquadCoeffs, ...]

    def __post_init__(self):
        if not self.sections:
            raise FilterDesignError("cascade needs at least one section")

    @property
    def sos(self) -> np.ndarray:
        return np.vstack([s.sos_row for s in self.sections])


def _as_sos(filt) -> np.ndarray:
    if isinstance(filt, BiquadCoeffs):
        return filt.sos_row.reshape(1, 6)
    if isinstance(filt, BiquadCascade):
        return filt.sos
    return np.asarray(filt, dtype=float).reshape(-1, 6)


def design_notch(f0: float, q: float, sps: float) -> BiquadCoeffs:
    """Design a notch biquad centered at f0 with quality factor q.

    Gain is 1 at DC and Nyquist, -3 dB at f0 +- f0/(2q).
    """
    if not 0 < f0 < sps / 2:
        raise FilterDesignError(f"notch frequency {f0} Hz outside (0, {sps / 2}) Hz")
    if q <= 0:
        raise FilterDesignError("q must be positive")
    b, a = signal.iirnotch(f0, q, fs=sps)
    return BiquadCoeffs(b[0], b[1], b[2], a[1], a[2])


def design_bandpass(lo: float, hi: float, sps: float, order: int = 4) -> BiquadCascade:
    """Butterworth bandpass as a biquad cascade.

    -3 dB points sit at lo and hi; skirts roll off at >= 6*order dB/octave.
    """
    if not 0 < lo < hi < sps / 2:
        raise FilterDesignError(f"invalid band ({lo}, {hi}) Hz at {sps} SPS")
    sos = signal.butter(order, [lo, hi], btype="band", fs=sps, output="sos")
    sections = tuple(
        BiquadCoeffs(r[0] / r[3], r[1] / r[3], r[2] / r[3], r[4] / r[3], r[5] / r[3])
        for r in sos
    )
    return BiquadCascade(sections)


def magnitude_response(filt, freqs, sps: float) -> np.ndarray:
    """|H(f)| of a biquad or cascade at the given frequencies."""
    _, h = signal.sosfreqz(_as_sos(filt), worN=np.atleast_1d(freqs).astype(float), fs=sps)
    return np.abs(h)


def filter_series(filt, x) -> np.ndarray:
    """Run x through the filter once, from zero initial state."""
    return signal.sosfilt(_as_sos(filt), np.asarray(x, dtype=float))


class StreamingFilter:
    """Stateful filter for chunked streams; chunk boundaries do not change
    the output relative to filtering the concatenated signal.

    With settle_dc=True the state is seeded so a constant input produces a
    constant output from the first sample (no DC startup transient).
    """

    def __init__(self, filt, settle_dc: bool = False):
        self._sos = _as_sos(filt)
        self._settle_dc = settle_dc
        self._zi = None

    def process(self, chunk) -> np.ndarray:
        x = np.asarray(chunk, dtype=float)
        if x.size == 0:
            return x.copy()
        if self._zi is None:
            zi = signal.sosfilt_zi(self._sos)
            self._zi = zi * (x[0] if self._settle_dc else 0.0)
        y, self._zi = signal.sosfilt(self._sos, x, zi=self._zi)
        return y

    def reset(self):
        self._zi = None


def impulse_noise_gain(filt, n: int = 8192) -> float:
    """sqrt(sum h^2): the RMS gain of the filter for white-noise input."""
    imp = np.zeros(n)
    imp[0] = 1.0
    h = filter_series(filt, imp)
    return float(np.sqrt(np.sum(h * h)))


@dataclass(frozen=True)
class PsdEstimate:
    """One-sided power spectral density in uV^2/Hz."""

    freqs: np.ndarray
    power: np.ndarray
    window_s: float
    overlap: float

    def __post_init__(self):
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("frequency bins must be ascending")
        if np.any(self.power < 0):
            raise ValueError("power must be non-negative")

    @property
    def total_power(self) -> float:
        return float(np.trapezoid(self.power, self.freqs))


def welch_psd(series, sps: float, window_s: float = 2.0, overlap: float = 0.5) -> PsdEstimate:
    """Welch PSD with Hann windows.

    Total integrated power matches the series variance to within a few
    percent for stationary inputs.
    """
    x = np.asarray(series, dtype=float)
    nperseg = int(round(window_s * sps))
    if nperseg < 2:
        raise ValueError("window too short")
    if len(x) < nperseg:
        raise ValueError(f"series of {len(x)} samples is shorter than one {nperseg}-sample window")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must be in [0, 1)")
    freqs, power = signal.welch(
        x, fs=sps, window="hann", nperseg=nperseg, noverlap=int(nperseg * overlap)
    )
    return PsdEstimate(freqs=freqs, power=power, window_s=window_s, overlap=overlap)


def band_power(psd: PsdEstimate, lo: float, hi: float) -> float:
    """Trapezoidal integral of the PSD over [lo, hi], in uV^2."""
    if lo >= hi:
        raise ValueError(f"empty band ({lo}, {hi})")
    mask = (psd.freqs >= lo) & (psd.freqs <= hi)
    if mask.sum() < 2:
        raise ValueError(f"band ({lo}, {hi}) Hz covers fewer than two PSD bins")
    return float(np.trapezoid(psd.power[mask], psd.freqs[mask]))


def rms_envelope(series, window_s: float, sps: float) -> np.ndarray:
    """Sliding-window RMS, length n - window + 1, aligned to window centers."""
    x = np.asarray(series, dtype=float)
    win = int(round(window_s * sps))
    if win < 1:
        raise ValueError("window must cover at least one sample")
    if win > len(x):
        raise ValueError(f"{win}-sample window longer than {len(x)}-sample series")
    csum = np.concatenate(([0.0], np.cumsum(x * x)))
    mean_sq = (csum[win:] - csum[:-win]) / win
    return np.sqrt(np.maximum(mean_sq, 0.0))


@dataclass(frozen=True)
class DeflectionEvent:
    """One suprathreshold excursion: onset time, sign, and signed peak."""

    onset_s: float
    direction: str  # "positive" | "negative"
    amplitude_uv: float

    @property
    def sign(self) -> int:
        return 1 if self.direction == "positive" else -1


def _runs(mask: np.ndarray):
    edges = np.flatnonzero(np.diff(np.concatenate(([0], mask.astype(np.int8), [0]))))
    return zip(edges[0::2], edges[1::2])


def detect_deflections(
    series, sps: float, threshold_uv: float, min_duration_s: float
) -> list[DeflectionEvent]:
    """Find contiguous excursions beyond +-threshold of the median baseline
    lasting at least min_duration_s. Scaling the series and the threshold by
    the same factor leaves event times and directions unchanged."""
    if threshold_uv <= 0:
        raise ValueError("threshold must be positive")
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        return []
    d = x - np.median(x)
    min_samples = max(1, int(round(min_duration_s * sps)))
    events = []
    for sign, mask in ((1, d > threshold_uv), (-1, d < -threshold_uv)):
        for start, stop in _runs(mask):
            if stop - start < min_samples:
                continue
            seg = d[start:stop]
            peak = seg.max() if sign > 0 else seg.min()
            events.append(
                DeflectionEvent(
                    onset_s=float(start / sps),
                    direction="positive" if sign > 0 else "negative",
                    amplitude_uv=float(peak),
                )
            )
    events.sort(key=lambda e: e.onset_s)
    return events
