"""Manifests, patient-disjoint splits, oversampling and synthetic EEG."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .edf_io import EdfFile, EdfHeader, SignalSpec, write_edf
from .preprocess import EPILEPTIC, LABELS, NON_EPILEPTIC

__all__ = [
    "DataError",
    "ParseError",
    "DuplicatePathError",
    "InconsistentLabelError",
    "TooFewPatientsError",
    "TooFewFilesError",
    "ConfigInvalidError",
    "ManifestEntry",
    "Manifest",
    "SplitAssignment",
    "SynthConfig",
    "SynthEvent",
    "SynthDataset",
    "load_manifest",
    "parse_manifest",
    "write_manifest",
    "patient_split",
    "train_val_split",
    "split_manifest",
    "oversample_minority",
    "generate_synthetic",
    "write_synthetic",
]

MANIFEST_FIELDS = ("patient_id", "file_path", "label")


class DataError(ValueError):
    pass


class ParseError(DataError):
    pass


class DuplicatePathError(DataError):
    pass


class InconsistentLabelError(DataError):
    pass


class TooFewPatientsError(DataError):
    pass


class TooFewFilesError(DataError):
    pass


class ConfigInvalidError(DataError):
    pass


def _round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ManifestEntry:
    patient_id: str
    file_path: str
    label: str

    @property
    def target(self):
        return int(self.label == EPILEPTIC)


@dataclass
class Manifest:
    entries: list

    def __post_init__(self):
        seen = set()
        labels = {}
        for e in self.entries:
            if e.label not in LABELS:
                raise ParseError(f"unknown label {e.label!r} for {e.file_path}")
            if e.file_path in seen:
                raise DuplicatePathError(f"{e.file_path} listed more than once")
            seen.add(e.file_path)
            if labels.setdefault(e.patient_id, e.label) != e.label:
                raise InconsistentLabelError(
                    f"patient {e.patient_id} has both {labels[e.patient_id]} and {e.label} files"
                )

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def patients(self, label=None):
        """Patient ids in first-appearance order, optionally for one class."""
        out = {}
        for e in self.entries:
            if label is None or e.label == label:
                out.setdefault(e.patient_id, None)
        return list(out)

    def count(self, label):
        return sum(e.label == label for e in self.entries)


def parse_manifest(text: str) -> Manifest:
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError("manifest is empty; a header line is required")
    header = [c.strip() for c in rows[0]]
    if tuple(header) != MANIFEST_FIELDS:
        raise ParseError(f"manifest header must be {','.join(MANIFEST_FIELDS)}, got {header}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise ParseError(f"line {lineno}: expected 3 fields, got {len(row)}")
        pid, path, label = (c.strip() for c in row)
        if not pid or not path:
            raise ParseError(f"line {lineno}: empty patient_id or file_path")
        if label not in LABELS:
            raise ParseError(f"line {lineno}: label must be one of {LABELS}, got {label!r}")
        entries.append(ManifestEntry(pid, path, label))
    return Manifest(entries)


def load_manifest(path) -> Manifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def write_manifest(manifest: Manifest, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_FIELDS)
    for e in manifest:
        writer.writerow((e.patient_id, e.file_path, e.label))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


@dataclass
class SplitAssignment:
    """Maps each manifest file_path to ``train``, ``val`` or ``test``."""

    assignment: dict
    seed: int

    def entries(self, manifest, split):
        return [e for e in manifest if self.assignment[e.file_path] == split]

    def patients(self, manifest, split):
        return {e.patient_id for e in self.entries(manifest, split)}

    def to_csv(self, manifest):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("file_path", "patient_id", "label", "split"))
        for e in manifest:
            writer.writerow((e.file_path, e.patient_id, e.label, self.assignment[e.file_path]))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, seed=-1):
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls({r["file_path"]: r["split"] for r in rows}, seed)


def _class_fraction(frac, label):
    return frac[label] if isinstance(frac, dict) else frac


def patient_split(manifest: Manifest, test_patient_frac=0.2, seed=0) -> SplitAssignment:
    """Move a fraction of each class's patients, with all their files, to test.

    ``test_patient_frac`` is one fraction or a ``{label: fraction}`` mapping.
    Counts round to nearest, with at least one test patient and one training
    patient per class. Everything else is marked ``train``.
    """
    rng = np.random.default_rng(seed)
    test = set()
    for label in LABELS:
        patients = sorted(manifest.patients(label))
        if len(patients) < 2:
            raise TooFewPatientsError(f"need >= 2 {label} patients, have {len(patients)}")
        n_test = _round_half_up(_class_fraction(test_patient_frac, label) * len(patients))
        n_test = min(max(n_test, 1), len(patients) - 1)
        chosen = rng.permutation(len(patients))[:n_test]
        test.update(patients[i] for i in chosen)
    assignment = {e.file_path: ("test" if e.patient_id in test else "train") for e in manifest}
    return SplitAssignment(assignment, seed)


def train_val_split(entries, val_frac=0.2, seed=0, by_patient=False):
    """Class-stratified split of training entries into (train, val).

    The split is file-level by default; ``by_patient`` keeps each patient's
    files on one side instead.
    """
    entries = list(entries)
    rng = np.random.default_rng(seed)
    val = set()
    for label in LABELS:
        group = [e for e in entries if e.label == label]
        if val_frac == 0:
            continue
        if by_patient:
            patients = sorted({e.patient_id for e in group})
            if len(patients) < 2:
                raise TooFewPatientsError(f"need >= 2 {label} patients for a validation split")
            n_val = min(max(_round_half_up(val_frac * len(patients)), 1), len(patients) - 1)
            chosen = {patients[i] for i in rng.permutation(len(patients))[:n_val]}
            val.update(e.file_path for e in group if e.patient_id in chosen)
        else:
            if len(group) < 2:
                raise TooFewFilesError(f"need >= 2 {label} files, have {len(group)}")
            n_val = min(max(_round_half_up(val_frac * len(group)), 1), len(group) - 1)
            val.update(group[i].file_path for i in rng.permutation(len(group))[:n_val])
    train = [e for e in entries if e.file_path not in val]
    valid = [e for e in entries if e.file_path in val]
    return train, valid


def split_manifest(manifest: Manifest, test_patient_frac=0.2, val_frac=0.2, seed=0,
                   val_by_patient=False) -> SplitAssignment:
    """Patient-disjoint test split, then a validation split of the remainder."""
    split = patient_split(manifest, test_patient_frac, seed)
    _, val = train_val_split(split.entries(manifest, "train"), val_frac, seed + 1,
                             by_patient=val_by_patient)
    for e in val:
        split.assignment[e.file_path] = "val"
    return split


def oversample_minority(entries, seed=0):
    """Duplicate every minority-class entry once, then shuffle.

    A tie between the classes is a no-op and returns the input order.
    """
    entries = list(entries)
    counts = {label: sum(e.label == label for e in entries) for label in LABELS}
    if counts[EPILEPTIC] == counts[NON_EPILEPTIC]:
        return entries
    minority = min(LABELS, key=lambda lab: counts[lab])
    out = entries + [e for e in entries if e.label == minority]
    order = np.random.default_rng(seed).permutation(len(out))
    return [out[i] for i in order]


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 20  # per class
    recordings_per_patient: int = 3
    channels: int = 8
    duration_s: float = 10.0
    sample_rate: float = 100.0
    spikes_per_window: tuple = (3, 8)
    spike_amplitude: float = 8.0  # multiple of background std
    spike_ms: float = 70.0
    slow_wave_ms: float = 250.0
    min_channels: int = 6
    seed: int = 0

    def validate(self):
        lo, hi = self.spikes_per_window
        if min(self.n_patients, self.recordings_per_patient, self.channels) < 1:
            raise ConfigInvalidError("patient, recording and channel counts must be >= 1")
        if self.sample_rate <= 0 or self.duration_s <= 0:
            raise ConfigInvalidError("sample_rate and duration_s must be > 0")
        if not 1 <= lo <= hi:
            raise ConfigInvalidError(f"spikes_per_window must satisfy 1 <= lo <= hi, got {lo, hi}")
        if self.spike_amplitude <= 0:
            raise ConfigInvalidError("spike_amplitude must be > 0")
        if self.event_samples >= self.n_samples:
            raise ConfigInvalidError("recording too short for one spike-and-wave event")
        if not (self.sample_rate * self.duration_s).is_integer():
            raise ConfigInvalidError("sample_rate * duration_s must be a whole number")
        if not float(self.sample_rate).is_integer():
            raise ConfigInvalidError("sample_rate must be a whole number of Hz")
        if not float(self.duration_s).is_integer():
            raise ConfigInvalidError("duration_s must be whole seconds (one EDF record each)")

    @property
    def n_samples(self):
        return int(round(self.sample_rate * self.duration_s))

    @property
    def spike_samples(self):
        return max(3, int(round(self.spike_ms * self.sample_rate / 1000.0)))

    @property
    def wave_samples(self):
        return max(2, int(round(self.slow_wave_ms * self.sample_rate / 1000.0)))

    @property
    def event_samples(self):
        return self.spike_samples + self.wave_samples


@dataclass(frozen=True)
class SynthEvent:
    onset: int  # sample index of spike start
    channels: tuple  # injected channel indices
    spike_samples: int
    wave_samples: int


@dataclass
class SynthDataset:
    files: dict  # file_path -> EdfFile
    manifest: Manifest
    events: dict  # file_path -> list[SynthEvent]
    background_std: dict  # file_path -> per-channel std of the background alone
    config: SynthConfig

    def edf_bytes(self):
        return {path: write_edf(f) for path, f in self.files.items()}


def _spike_and_wave(cfg, amplitude):
    n_spike, n_wave = cfg.spike_samples, cfg.wave_samples
    # Triangle peaking mid-spike, then a half-sine slow wave at half amplitude.
    spike = amplitude * (1.0 - np.abs(np.linspace(-1.0, 1.0, n_spike)))
    wave = 0.5 * amplitude * np.sin(np.pi * (np.arange(n_wave) + 0.5) / n_wave)
    return np.concatenate([spike, wave])


def _synth_recording(cfg, epileptic, rng):
    n = cfg.n_samples
    t = np.arange(n) / cfg.sample_rate
    freqs = rng.uniform(2.0, 12.0, size=(cfg.channels, 3))
    amps = rng.uniform(0.5, 2.0, size=(cfg.channels, 3))
    phases = rng.uniform(0.0, 2 * np.pi, size=(cfg.channels, 3))
    background = np.einsum(
        "ck,ckn->cn", amps, np.sin(2 * np.pi * freqs[..., None] * t + phases[..., None])
    )
    background += rng.standard_normal((cfg.channels, n))
    std = background.std(axis=1)
    data = background.copy()
    events = []
    if epileptic:
        lo, hi = cfg.spikes_per_window
        count = int(rng.integers(lo, hi + 1))
        min_ch = min(cfg.min_channels, cfg.channels)
        for _ in range(count):
            onset = int(rng.integers(0, n - cfg.event_samples + 1))
            width = int(rng.integers(min_ch, cfg.channels + 1))
            first = int(rng.integers(0, cfg.channels - width + 1))
            chans = tuple(range(first, first + width))
            for c in chans:
                data[c, onset:onset + cfg.event_samples] += _spike_and_wave(
                    cfg, cfg.spike_amplitude * std[c]
                )
            events.append(SynthEvent(onset, chans, cfg.spike_samples, cfg.wave_samples))
    return data, std, events


def _to_edf(cfg, data, patient_id, recording_id):
    fs = int(cfg.sample_rate)
    signals = []
    for c in range(cfg.channels):
        bound = float(math.ceil(np.abs(data[c]).max() * 1.01 + 1e-9))
        signals.append(SignalSpec(
            label=f"EEG CH{c + 1:02d}", physical_min=-bound, physical_max=bound,
            samples_per_record=fs, physical_dim="uV", transducer="synthetic",
        ))
    header = EdfHeader(
        patient_id=patient_id, recording_id=recording_id,
        num_records=cfg.n_samples // fs, record_duration_s=1.0,
    )
    return EdfFile(header=header, signals=signals, samples=[row for row in data])


def generate_synthetic(config: SynthConfig) -> SynthDataset:
    """Deterministic synthetic cohort of background EEG with or without IED transients.

    Each recording draws from its own stream seeded by
    (seed, class, patient, recording), so output does not depend on
    generation order.
    """
    config.validate()
    files, events, stds, entries = {}, {}, {}, []
    for class_index, label in enumerate((EPILEPTIC, NON_EPILEPTIC)):
        prefix = "ep" if label == EPILEPTIC else "ne"
        for p in range(config.n_patients):
            patient_id = f"{prefix}{p:03d}"
            for r in range(config.recordings_per_patient):
                rng = np.random.default_rng([config.seed, class_index, p, r])
                data, std, evs = _synth_recording(config, label == EPILEPTIC, rng)
                path = f"{patient_id}_r{r:02d}.edf"
                files[path] = _to_edf(config, data, patient_id, f"{label} rec {r}")
                events[path] = evs
                stds[path] = std
                entries.append(ManifestEntry(patient_id, path, label))
    return SynthDataset(files, Manifest(entries), events, stds, config)


def write_synthetic(config: SynthConfig, out_dir) -> SynthDataset:
    """Generate the cohort and write ``*.edf`` plus ``manifest.csv`` into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = generate_synthetic(config)
    for path, blob in dataset.edf_bytes().items():
        (out / path).write_bytes(blob)
    write_manifest(dataset.manifest, out / "manifest.csv")
    return dataset
