"""Reading and writing of EDF (European Data Format) files.

Only the base format is handled: a 256-byte ASCII header, 256 ASCII bytes per
signal, then data records of interleaved 16-bit little-endian samples. EDF+
annotation channels and BDF are not supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "EdfError",
    "TruncatedFileError",
    "MalformedFieldError",
    "BadScalingError",
    "RangeOverflowError",
    "EdfHeader",
    "SignalSpec",
    "EdfFile",
    "parse_edf",
    "write_edf",
    "read_edf",
    "save_edf",
    "physical_value",
    "digital_value",
]

DIGITAL_LIMITS = (-32768, 32767)

_HEADER_FIELDS = (
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("num_records", 8),
    ("record_duration_s", 8),
    ("num_signals", 4),
)

# Per-signal fields, each stored as num_signals consecutive blocks.
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dim", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


class EdfError(ValueError):
    """Base class for EDF decoding and encoding failures."""


class TruncatedFileError(EdfError):
    pass


class MalformedFieldError(EdfError):
    pass


class BadScalingError(EdfError):
    pass


class RangeOverflowError(EdfError):
    pass


@dataclass
class EdfHeader:
    version: str = "0"
    patient_id: str = ""
    recording_id: str = ""
    start_date: str = "01.01.00"
    start_time: str = "00.00.00"
    num_records: int = 0
    record_duration_s: float = 1.0
    num_signals: int = 0
    reserved: str = ""

    @property
    def header_bytes(self) -> int:
        return 256 + 256 * self.num_signals


@dataclass
class SignalSpec:
    label: str
    physical_min: float
    physical_max: float
    samples_per_record: int
    digital_min: int = DIGITAL_LIMITS[0]
    digital_max: int = DIGITAL_LIMITS[1]
    physical_dim: str = "uV"
    transducer: str = ""
    prefiltering: str = ""
    reserved: str = ""

    def __post_init__(self):
        if self.physical_max == self.physical_min:
            raise BadScalingError(f"signal {self.label!r}: physical_max equals physical_min")
        if not DIGITAL_LIMITS[0] <= self.digital_min < self.digital_max <= DIGITAL_LIMITS[1]:
            raise BadScalingError(
                f"signal {self.label!r}: invalid digital range "
                f"[{self.digital_min}, {self.digital_max}]"
            )
        if self.samples_per_record <= 0:
            raise MalformedFieldError(f"signal {self.label!r}: samples_per_record must be > 0")

    @property
    def gain(self) -> float:
        """Physical units per digital step."""
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)

    def sample_rate(self, record_duration_s: float) -> float:
        return self.samples_per_record / record_duration_s


@dataclass
class EdfFile:
    header: EdfHeader
    signals: list[SignalSpec] = field(default_factory=list)
    samples: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.header.num_signals = len(self.signals)
        if len(self.samples) != len(self.signals):
            raise EdfError("one sample array is required per signal")
        for spec, values in zip(self.signals, self.samples):
            expected = self.header.num_records * spec.samples_per_record
            if len(values) != expected:
                raise EdfError(
                    f"signal {spec.label!r} has {len(values)} samples, expected {expected}"
                )

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.signals]


def physical_value(digital, spec: SignalSpec):
    """Map digital sample value(s) to physical units with the EDF affine scaling."""
    if spec.digital_max == spec.digital_min:
        raise BadScalingError("digital_max equals digital_min")
    digital = np.asarray(digital, dtype=np.float64)
    out = spec.physical_min + (digital - spec.digital_min) * (
        (spec.physical_max - spec.physical_min) / (spec.digital_max - spec.digital_min)
    )
    return float(out) if out.ndim == 0 else out


def digital_value(physical, spec: SignalSpec) -> np.ndarray:
    """Quantize physical values to digital, rounding half away from zero."""
    physical = np.asarray(physical, dtype=np.float64)
    lo, hi = sorted((spec.physical_min, spec.physical_max))
    if physical.size and (physical.min() < lo or physical.max() > hi):
        raise RangeOverflowError(
            f"signal {spec.label!r}: sample outside [{lo}, {hi}]"
        )
    exact = spec.digital_min + (physical - spec.physical_min) / spec.gain
    rounded = np.sign(exact) * np.floor(np.abs(exact) + 0.5)
    return np.clip(rounded, spec.digital_min, spec.digital_max).astype(np.int16)


def _decode_text(raw: bytes) -> str:
    return raw.decode("ascii", errors="replace").rstrip(" ")


def _decode_int(raw: bytes, name: str) -> int:
    text = _decode_text(raw).strip()
    try:
        return int(text)
    except ValueError:
        raise MalformedFieldError(f"field {name!r} is not an integer: {text!r}") from None


def _decode_float(raw: bytes, name: str) -> float:
    text = _decode_text(raw).strip()
    try:
        value = float(text)
    except ValueError:
        raise MalformedFieldError(f"field {name!r} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise MalformedFieldError(f"field {name!r} is not finite: {text!r}")
    return value


def _encode_text(value: str, width: int, name: str) -> bytes:
    raw = str(value).encode("ascii")
    if len(raw) > width:
        raise MalformedFieldError(f"field {name!r} longer than {width} chars: {value!r}")
    if any(b < 32 or b > 126 for b in raw):
        raise MalformedFieldError(f"field {name!r} has non-printable characters")
    return raw.ljust(width, b" ")


def _format_number(value: float, width: int, name: str) -> str:
    """Shortest decimal text for value that fits width chars."""
    if float(value).is_integer() and abs(value) < 10 ** (width - 1):
        text = str(int(value))
    else:
        text = repr(float(value))
        if len(text) > width:
            for digits in range(width, 0, -1):
                text = f"{value:.{digits}g}"
                if len(text) <= width:
                    break
    if len(text) > width:
        raise MalformedFieldError(f"field {name!r}: {value!r} does not fit {width} chars")
    return text


def parse_edf(data: bytes) -> EdfFile:
    """Decode a complete EDF byte stream."""
    data = bytes(data)
    if len(data) < 256:
        raise TruncatedFileError(f"file is {len(data)} bytes, shorter than the 256-byte header")

    fields = {}
    offset = 0
    for name, width in _HEADER_FIELDS:
        fields[name] = data[offset:offset + width]
        offset += width

    num_signals = _decode_int(fields["num_signals"], "num_signals")
    header_bytes = _decode_int(fields["header_bytes"], "header_bytes")
    num_records = _decode_int(fields["num_records"], "num_records")
    duration = _decode_float(fields["record_duration_s"], "record_duration_s")
    if num_signals < 0:
        raise MalformedFieldError(f"num_signals is negative: {num_signals}")
    if header_bytes != 256 + 256 * num_signals:
        raise MalformedFieldError(
            f"header_bytes {header_bytes} != 256 + 256*{num_signals}"
        )
    if num_records < 0:
        raise MalformedFieldError(f"num_records must be >= 0, got {num_records}")
    if duration <= 0:
        raise MalformedFieldError(f"record_duration_s must be > 0, got {duration}")
    if len(data) < header_bytes:
        raise TruncatedFileError(
            f"file is {len(data)} bytes but the header declares {header_bytes}"
        )

    header = EdfHeader(
        version=_decode_text(fields["version"]),
        patient_id=_decode_text(fields["patient_id"]),
        recording_id=_decode_text(fields["recording_id"]),
        start_date=_decode_text(fields["start_date"]),
        start_time=_decode_text(fields["start_time"]),
        num_records=num_records,
        record_duration_s=duration,
        num_signals=num_signals,
        reserved=_decode_text(fields["reserved"]),
    )

    raw_signal = {}
    for name, width in _SIGNAL_FIELDS:
        raw_signal[name] = [
            data[offset + i * width:offset + (i + 1) * width] for i in range(num_signals)
        ]
        offset += width * num_signals

    signals = []
    for i in range(num_signals):
        label = _decode_text(raw_signal["label"][i])
        pmin = _decode_float(raw_signal["physical_min"][i], "physical_min")
        pmax = _decode_float(raw_signal["physical_max"][i], "physical_max")
        if pmin == pmax:
            raise BadScalingError(f"signal {label!r}: physical_max equals physical_min")
        signals.append(SignalSpec(
            label=label,
            transducer=_decode_text(raw_signal["transducer"][i]),
            physical_dim=_decode_text(raw_signal["physical_dim"][i]),
            physical_min=pmin,
            physical_max=pmax,
            digital_min=_decode_int(raw_signal["digital_min"][i], "digital_min"),
            digital_max=_decode_int(raw_signal["digital_max"][i], "digital_max"),
            prefiltering=_decode_text(raw_signal["prefiltering"][i]),
            samples_per_record=_decode_int(
                raw_signal["samples_per_record"][i], "samples_per_record"
            ),
            reserved=_decode_text(raw_signal["reserved"][i]),
        ))

    spr = np.array([s.samples_per_record for s in signals], dtype=np.int64)
    record_samples = int(spr.sum())
    body = len(data) - header_bytes
    expected = num_records * record_samples * 2
    if body != expected:
        raise TruncatedFileError(
            f"data section is {body} bytes; {num_records} records of "
            f"{record_samples} samples need {expected}"
        )

    digital = np.frombuffer(data, dtype="<i2", offset=header_bytes)
    if num_signals:
        records = digital.reshape(num_records, record_samples)
    bounds = np.concatenate([[0], np.cumsum(spr)])
    samples = []
    for i, spec in enumerate(signals):
        block = records[:, bounds[i]:bounds[i + 1]].reshape(-1)
        samples.append(physical_value(block, spec))
    return EdfFile(header=header, signals=signals, samples=samples)


def write_edf(edf: EdfFile) -> bytes:
    """Encode an EdfFile to bytes that parse_edf accepts."""
    header = edf.header
    num_signals = len(edf.signals)
    out = bytearray()
    values = {
        "version": header.version,
        "patient_id": header.patient_id,
        "recording_id": header.recording_id,
        "start_date": header.start_date,
        "start_time": header.start_time,
        "header_bytes": str(256 + 256 * num_signals),
        "reserved": header.reserved,
        "num_records": str(header.num_records),
        "record_duration_s": _format_number(header.record_duration_s, 8, "record_duration_s"),
        "num_signals": str(num_signals),
    }
    for name, width in _HEADER_FIELDS:
        out += _encode_text(values[name], width, name)

    for name, width in _SIGNAL_FIELDS:
        for spec in edf.signals:
            value = getattr(spec, name)
            if name in ("physical_min", "physical_max"):
                text = _format_number(value, width, name)
                # Quantization uses the in-memory bounds, so they must survive the text field.
                if float(text) != float(value):
                    raise MalformedFieldError(
                        f"signal {spec.label!r}: {name} {value!r} is not exactly "
                        f"representable in {width} characters"
                    )
                value = text
            out += _encode_text(value, width, name)

    if num_signals and header.num_records:
        digital = [
            digital_value(values, spec).reshape(header.num_records, spec.samples_per_record)
            for spec, values in zip(edf.signals, edf.samples)
        ]
        out += np.concatenate(digital, axis=1).astype("<i2").tobytes()
    return bytes(out)


def read_edf(path) -> EdfFile:
    return parse_edf(Path(path).read_bytes())


def save_edf(edf: EdfFile, path) -> None:
    Path(path).write_bytes(write_edf(edf))
