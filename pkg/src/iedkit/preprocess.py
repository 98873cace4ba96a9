"""Turn raw multichannel EEG into fixed-size standardized windows.

The chain is: take/recycle channels to a fixed count, crop or zero-pad to a
fixed duration, band-pass each channel with a Butterworth IIR filter, then
z-score each channel. Defaults give 30 channels x 7500 samples (30 s at
250 Hz) with a 0.5-49 Hz band.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal as sps

from .edf_io import EdfFile

__all__ = [
    "PreprocessError",
    "EmptyRecordingError",
    "InvalidBandError",
    "SampleRateMismatchError",
    "RawRecording",
    "PreparedRecording",
    "FilterCoefficients",
    "PreprocessConfig",
    "normalize_channels",
    "fit_window",
    "design_bandpass",
    "frequency_response",
    "apply_filter",
    "standardize",
    "preprocess_recording",
    "recording_from_edf",
]

EPILEPTIC = "epileptic"
NON_EPILEPTIC = "non_epileptic"
LABELS = (NON_EPILEPTIC, EPILEPTIC)


class PreprocessError(ValueError):
    pass


class EmptyRecordingError(PreprocessError):
    pass


class InvalidBandError(PreprocessError):
    pass


class SampleRateMismatchError(PreprocessError):
    pass


@dataclass
class RawRecording:
    patient_id: str
    label: str
    sample_rate: float
    channels: np.ndarray  # (C, S), physical units

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 2 or 0 in self.channels.shape:
            raise EmptyRecordingError(f"need a non-empty (C, S) matrix, got {self.channels.shape}")
        if self.sample_rate <= 0:
            raise PreprocessError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.label not in LABELS:
            raise PreprocessError(f"unknown label {self.label!r}")


@dataclass
class PreparedRecording:
    patient_id: str
    label: str
    window: np.ndarray  # (channels, samples), standardized
    file_path: str = ""

    @property
    def target(self) -> int:
        return int(self.label == EPILEPTIC)


@dataclass
class FilterCoefficients:
    """Digital Butterworth band-pass in transfer-function and zero-pole-gain form.

    ``order`` is the analog low-pass prototype order; the band-pass has
    ``2 * order`` poles.
    """

    b: np.ndarray
    a: np.ndarray
    zeros: np.ndarray
    poles: np.ndarray
    gain: float
    fs: float
    low_hz: float
    high_hz: float
    order: int

    @property
    def num_poles(self) -> int:
        return len(self.poles)

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles) < 1.0))


@dataclass(frozen=True)
class PreprocessConfig:
    sample_rate: float = 250.0
    n_channels: int = 30
    duration_s: float = 30.0
    low_hz: float = 0.5
    high_hz: float = 49.0
    filter_order: int = 2
    zero_phase: bool = False
    resample: bool = False

    @property
    def window_len(self) -> int:
        return int(round(self.sample_rate * self.duration_s))


def normalize_channels(channels, n_channels=30):
    """Keep the first ``n_channels`` rows, or recycle leading rows to reach it."""
    channels = np.asarray(channels)
    if channels.ndim != 2 or channels.shape[0] == 0 or channels.shape[1] == 0:
        raise EmptyRecordingError(f"empty recording, shape {channels.shape}")
    count = channels.shape[0]
    if count >= n_channels:
        return channels[:n_channels].copy()
    # Recycling wraps again when fewer than half the target are present.
    index = np.arange(n_channels) % count
    return channels[index]


def fit_window(channels, target_len=7500):
    """Crop to the first ``target_len`` samples or zero-pad the tail."""
    channels = np.asarray(channels)
    length = channels.shape[1]
    if length < 1:
        raise EmptyRecordingError("recording has no samples")
    if length >= target_len:
        return channels[:, :target_len].copy()
    out = np.zeros((channels.shape[0], target_len), dtype=channels.dtype)
    out[:, :length] = channels
    return out


def design_bandpass(fs=250.0, low=0.5, high=49.0, order=2) -> FilterCoefficients:
    """Butterworth band-pass via analog prototype and pre-warped bilinear transform."""
    if not (0 < low < high < fs / 2):
        raise InvalidBandError(f"need 0 < low < high < fs/2, got low={low}, high={high}, fs={fs}")
    if order < 1:
        raise InvalidBandError(f"order must be >= 1, got {order}")

    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))  # left half-plane

    fs2 = 2.0 * fs
    w_lo = fs2 * np.tan(np.pi * low / fs)
    w_hi = fs2 * np.tan(np.pi * high / fs)
    bw = w_hi - w_lo
    w0_sq = w_lo * w_hi

    # s -> (s^2 + w0^2) / (s * bw): each prototype pole splits into a pair.
    half = proto * bw / 2.0
    root = np.sqrt(half * half - w0_sq)
    poles_a = np.concatenate([half + root, half - root])
    zeros_a = np.zeros(order)
    gain_a = bw ** order

    poles = (fs2 + poles_a) / (fs2 - poles_a)
    # Zeros at s=0 land on z=1; the ones at infinity land on z=-1.
    zeros = np.concatenate([(fs2 + zeros_a) / (fs2 - zeros_a), -np.ones(order)])
    gain = float(np.real(gain_a * np.prod(fs2 - zeros_a) / np.prod(fs2 - poles_a)))

    b = gain * np.real(np.poly(zeros))
    a = np.real(np.poly(poles))
    return FilterCoefficients(
        b=b, a=a, zeros=zeros.real.astype(np.float64), poles=poles, gain=gain,
        fs=fs, low_hz=low, high_hz=high, order=order,
    )


def frequency_response(coeffs: FilterCoefficients, freqs_hz):
    """Complex H(e^{jw}) from the polynomial coefficients at the given frequencies."""
    w = 2 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / coeffs.fs
    zinv = np.exp(-1j * w)
    num = np.polyval(coeffs.b[::-1], zinv)
    den = np.polyval(coeffs.a[::-1], zinv)
    return num / den


def apply_filter(coeffs: FilterCoefficients, x, zero_phase=False):
    """Causal direct-form filtering with zero initial state.

    With ``zero_phase`` the signal is filtered forward then backward.
    """
    x = np.asarray(x, dtype=np.float64)
    y = sps.lfilter(coeffs.b, coeffs.a, x, axis=-1)
    if zero_phase:
        y = sps.lfilter(coeffs.b, coeffs.a, y[..., ::-1], axis=-1)[..., ::-1]
    return y


def standardize(window, min_std=1e-12):
    """Per-channel z-score with the population std; flat channels become zero."""
    window = np.asarray(window, dtype=np.float64)
    mean = window.mean(axis=-1, keepdims=True)
    centred = window - mean
    std = np.sqrt((centred * centred).mean(axis=-1, keepdims=True))
    flat = std < min_std
    out = centred / np.where(flat, 1.0, std)
    out[np.broadcast_to(flat, out.shape)] = 0.0
    return out


def _resample(channels, source_fs, target_fs):
    ratio = Fraction(target_fs).limit_denominator(10000) / Fraction(source_fs).limit_denominator(10000)
    return sps.resample_poly(channels, ratio.numerator, ratio.denominator, axis=-1)


def preprocess_recording(raw: RawRecording, config: PreprocessConfig = PreprocessConfig(),
                         coeffs: FilterCoefficients | None = None,
                         file_path: str = "") -> PreparedRecording:
    """Run the full chain on one recording.

    Order: (optional resample) -> channel count -> crop/pad -> band-pass -> z-score.
    """
    channels = raw.channels
    if raw.sample_rate != config.sample_rate:
        if not config.resample:
            raise SampleRateMismatchError(
                f"recording is {raw.sample_rate} Hz, expected {config.sample_rate} Hz"
            )
        channels = _resample(channels, raw.sample_rate, config.sample_rate)
    if coeffs is None:
        coeffs = design_bandpass(config.sample_rate, config.low_hz, config.high_hz,
                                 config.filter_order)
    channels = normalize_channels(channels, config.n_channels)
    channels = fit_window(channels, config.window_len)
    channels = apply_filter(coeffs, channels, zero_phase=config.zero_phase)
    return PreparedRecording(
        patient_id=raw.patient_id,
        label=raw.label,
        window=standardize(channels),
        file_path=file_path,
    )


def recording_from_edf(edf: EdfFile, patient_id: str, label: str) -> RawRecording:
    """Stack EDF signals into a RawRecording.

    Signals whose sample rate differs from the most common one are dropped.
    """
    if not edf.signals:
        raise EmptyRecordingError("EDF file has no signals")
    rates = [s.sample_rate(edf.header.record_duration_s) for s in edf.signals]
    values, counts = np.unique(rates, return_counts=True)
    rate = values[np.argmax(counts)]
    rows = [x for x, r in zip(edf.samples, rates) if r == rate]
    return RawRecording(
        patient_id=patient_id, label=label, sample_rate=float(rate),
        channels=np.vstack(rows),
    )
