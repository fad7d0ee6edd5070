"""Deterministic EEG preprocessing.

Resampling (integer decimation with FIR anti-aliasing), zero-phase FIR
band-pass filtering, analytic-signal amplitude/phase via the frequency-domain
Hilbert transform, and window segmentation with cross-interval concatenation.

All operations are pure functions of their inputs and safe to call
concurrently on shared read-only recordings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import filtfilt, firwin

from .errors import (
    ConfigError,
    EmptyBoundariesError,
    InvalidSignalError,
    TooShortSignalError,
    UnsupportedResampleError,
)

# Canonical analysis bands (Hz). "broadband" is the preprocessing passband.
BAND_EDGES = {
    "theta": (4.0, 7.0),
    "alpha": (8.0, 12.0),
    "beta": (13.0, 29.0),
    "gamma": (30.0, 45.0),
    "broadband": (1.0, 45.0),
}
BAND_ORDER = ("theta", "alpha", "beta", "gamma")


@dataclass(frozen=True)
class BandSpec:
    """A named pass band."""

    name: str
    low_hz: float
    high_hz: float

    def __post_init__(self):
        if not 0 < self.low_hz < self.high_hz:
            raise ConfigError(f"invalid band edges ({self.low_hz}, {self.high_hz})")

    @classmethod
    def of(cls, name: str) -> "BandSpec":
        if name not in BAND_EDGES:
            raise ConfigError(f"unknown band '{name}' (choose from {sorted(BAND_EDGES)})")
        low, high = BAND_EDGES[name]
        return cls(name, low, high)


@dataclass
class EEGRecording:
    """Multi-channel EEG series in microvolts.

    data is [channels, samples]; channel_names has one label per channel.
    """

    data: np.ndarray
    sample_rate_hz: float
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise InvalidSignalError("recording data must be [channels, samples]")
        if self.data.shape[0] < 1 or self.data.shape[1] < 2:
            raise InvalidSignalError("recording needs >= 1 channel and >= 2 samples")
        if not np.all(np.isfinite(self.data)):
            raise InvalidSignalError("recording contains non-finite values")
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample rate must be positive")
        if not self.channel_names:
            self.channel_names = [f"ch{i:02d}" for i in range(self.data.shape[0])]
        if len(self.channel_names) != self.data.shape[0]:
            raise InvalidSignalError("channel_names length must match channel count")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass
class AnalyticSeries:
    """Instantaneous amplitude (>= 0, uV) and phase (radians in (-pi, pi])."""

    amplitude: np.ndarray
    phase: np.ndarray


@dataclass
class SegmentedSample:
    """One data sample: the k-th window from each of n intervals.

    All segments share channel count and window length so the segments can be
    concatenated into a [channels, n * window] block.
    """

    segments: list[np.ndarray]
    window_seconds: float

    def __post_init__(self):
        if not self.segments:
            raise InvalidSignalError("a segmented sample needs >= 1 segment")
        shape = self.segments[0].shape
        if any(s.shape != shape for s in self.segments):
            raise InvalidSignalError("segments must share channel count and length")

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def concatenated(self) -> np.ndarray:
        return np.concatenate(self.segments, axis=1)


def _anti_alias_kernel(rate_hz: float, target_hz: float) -> np.ndarray:
    # Transition band 0.9..1.0 of the new Nyquist; Hamming window gives
    # > 50 dB stopband, doubled again by forward-backward application.
    factor = int(round(rate_hz / target_hz))
    numtaps = 66 * factor + 1
    cutoff = 0.95 * (target_hz / 2.0)
    return firwin(numtaps, cutoff, window="hamming", fs=rate_hz)


def resample(rec: EEGRecording, target_hz: float) -> EEGRecording:
    """Decimate to ``target_hz`` after FIR anti-alias low-pass filtering.

    Only integer decimation factors are supported; upsampling or a
    non-integer ratio raises ``UnsupportedResampleError``.
    """
    if target_hz <= 0:
        raise ConfigError("target rate must be positive")
    if target_hz > rec.sample_rate_hz:
        raise UnsupportedResampleError(
            f"cannot upsample {rec.sample_rate_hz} Hz to {target_hz} Hz"
        )
    ratio = rec.sample_rate_hz / target_hz
    factor = int(round(ratio))
    if abs(ratio - factor) > 1e-9:
        raise UnsupportedResampleError(
            f"{rec.sample_rate_hz} Hz -> {target_hz} Hz is not an integer decimation"
        )
    if factor == 1:
        return EEGRecording(rec.data.copy(), rec.sample_rate_hz, list(rec.channel_names))
    taps = _anti_alias_kernel(rec.sample_rate_hz, target_hz)
    if rec.n_samples <= 3 * len(taps):
        raise TooShortSignalError(
            f"recording of {rec.n_samples} samples is too short for the "
            f"{len(taps)}-tap anti-alias filter"
        )
    smoothed = filtfilt(taps, [1.0], rec.data, axis=1)
    return EEGRecording(smoothed[:, ::factor], target_hz, list(rec.channel_names))


def bandpass_kernel(band: BandSpec, rate_hz: float) -> np.ndarray:
    """Linear-phase windowed-sinc (Hamming) band-pass taps.

    Tap count is 4 * (rate / low edge), rounded up to odd, so the kernel
    spans about four periods of the lowest passband frequency.
    """
    if band.high_hz >= rate_hz / 2:
        raise ConfigError(
            f"band '{band.name}' ({band.low_hz}-{band.high_hz} Hz) is invalid "
            f"at {rate_hz} Hz sampling"
        )
    numtaps = int(round(4.0 * rate_hz / band.low_hz))
    if numtaps % 2 == 0:
        numtaps += 1
    return firwin(numtaps, [band.low_hz, band.high_hz], pass_zero=False,
                  window="hamming", fs=rate_hz)


def bandpass(rec: EEGRecording, band: BandSpec) -> EEGRecording:
    """Zero-phase FIR band-pass: forward-backward application of a
    linear-phase windowed-sinc kernel. Output length equals input length."""
    taps = bandpass_kernel(band, rec.sample_rate_hz)
    if rec.n_samples <= 3 * len(taps):
        raise TooShortSignalError(
            f"recording of {rec.n_samples} samples is shorter than 3x the "
            f"{len(taps)}-tap kernel for band '{band.name}'"
        )
    filtered = filtfilt(taps, [1.0], rec.data, axis=1)
    return EEGRecording(filtered, rec.sample_rate_hz, list(rec.channel_names))


def hilbert_analytic(data_or_rec) -> AnalyticSeries:
    """Analytic signal per channel via the frequency-domain method.

    FFT, zero the negative frequencies, double the positive ones (DC and
    Nyquist kept), inverse FFT. Amplitude is the modulus, phase the argument
    mapped into (-pi, pi].
    """
    data = data_or_rec.data if isinstance(data_or_rec, EEGRecording) else np.asarray(data_or_rec, dtype=np.float64)
    single = data.ndim == 1
    if single:
        data = data[None, :]
    n = data.shape[1]
    if n < 8:
        raise InvalidSignalError("analytic signal needs >= 8 samples")
    if not np.all(np.isfinite(data)):
        raise InvalidSignalError("non-finite values in input signal")

    spectrum = np.fft.fft(data, axis=1)
    weights = np.zeros(n)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[n // 2] = 1.0
        weights[1 : n // 2] = 2.0
    else:
        weights[1 : (n + 1) // 2] = 2.0
    analytic = np.fft.ifft(spectrum * weights[None, :], axis=1)

    amplitude = np.abs(analytic)
    phase = np.angle(analytic)
    phase = np.where(phase <= -np.pi, phase + 2.0 * np.pi, phase)
    if single:
        amplitude, phase = amplitude[0], phase[0]
    return AnalyticSeries(amplitude=amplitude, phase=phase)


def segment_and_concat(
    rec: EEGRecording,
    boundaries: list[tuple[float, float]],
    window_s: float,
) -> list[SegmentedSample]:
    """Cut each interval into consecutive windows and emit one sample per
    window index, each holding that window from every interval.

    The emitted sample count is the minimum whole-window count over the
    intervals; partial trailing windows are discarded. An interval shorter
    than one window yields zero samples and a warning.
    """
    if not boundaries:
        raise EmptyBoundariesError("no segmentation intervals given")
    if window_s <= 0:
        raise ConfigError("window length must be positive")
    rate = rec.sample_rate_hz
    window = int(round(window_s * rate))
    duration_s = rec.n_samples / rate

    ordered = sorted(boundaries)
    counts = []
    starts = []
    for (start_s, end_s), nxt in zip(ordered, ordered[1:] + [(None, None)]):
        if start_s < 0 or end_s > duration_s + 1e-9 or end_s <= start_s:
            raise ConfigError(f"interval ({start_s}, {end_s}) outside recording")
        if nxt[0] is not None and end_s > nxt[0] + 1e-9:
            raise ConfigError("segmentation intervals overlap")
        n_windows = int((end_s - start_s) / window_s + 1e-9)
        if n_windows == 0:
            warnings.warn(
                f"interval ({start_s}, {end_s}) s is shorter than one "
                f"{window_s} s window; no samples emitted",
                stacklevel=2,
            )
        counts.append(n_windows)
        starts.append(int(round(start_s * rate)))

    n_samples = min(counts)
    samples = []
    for k in range(n_samples):
        segments = [
            rec.data[:, s + k * window : s + (k + 1) * window].copy() for s in starts
        ]
        samples.append(SegmentedSample(segments=segments, window_seconds=window_s))
    return samples
