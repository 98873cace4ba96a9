"""Run configuration: INI-style ``key = value`` sections mapped onto dataclasses.

Sections: ``synth``, ``preprocess``, ``split``, ``cnn``, ``lstm``, ``ensemble``,
``train``, ``ensemble_train`` and ``run``. Every key must name a field of the
section's dataclass; anything else is rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields, replace

from .datapipe import SynthConfig
from .models import BiLSTMConfig, EnsembleConfig, ResidualCNNConfig
from .preprocess import PreprocessConfig
from .trainer import TrainConfig

__all__ = ["ConfigError", "SplitConfig", "RunSettings", "RunConfig", "parse_config",
           "load_config", "desk_config"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SplitConfig:
    test_frac_epileptic: float = 0.2
    test_frac_non_epileptic: float = 0.2
    val_frac: float = 0.2
    val_by_patient: bool = False

    @property
    def test_fractions(self):
        return {"epileptic": self.test_frac_epileptic,
                "non_epileptic": self.test_frac_non_epileptic}


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    threshold: float = 0.5
    threads: int = 1


_SECTIONS = {
    "synth": SynthConfig,
    "preprocess": PreprocessConfig,
    "split": SplitConfig,
    "cnn": ResidualCNNConfig,
    "lstm": BiLSTMConfig,
    "ensemble": EnsembleConfig,
    "train": TrainConfig,
    "ensemble_train": TrainConfig,
    "run": RunSettings,
}


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    cnn: ResidualCNNConfig = field(default_factory=ResidualCNNConfig)
    lstm: BiLSTMConfig = field(default_factory=BiLSTMConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ensemble_train: TrainConfig = field(default_factory=TrainConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def with_seed(self, seed):
        """Route one seed to every random component."""
        return replace(
            self,
            synth=replace(self.synth, seed=seed),
            train=replace(self.train, seed=seed),
            ensemble_train=replace(self.ensemble_train, seed=seed),
            run=replace(self.run, seed=seed),
        )

    def override(self, section, **values):
        return replace(self, **{section: replace(getattr(self, section), **values)})

    def to_text(self):
        parser = configparser.ConfigParser()
        for name in _SECTIONS:
            obj = getattr(self, name)
            parser[name] = {f.name: _format_value(getattr(obj, f.name)) for f in fields(obj)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def _format_value(value):
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def _parse_value(text, default, key):
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            kind = type(default[0]) if default else int
            return tuple(kind(t) for t in items)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None
    return text


def parse_config(text, base=None) -> RunConfig:
    """Overlay the sections in ``text`` onto ``base`` (defaults when None)."""
    config = base or RunConfig()
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        current = getattr(config, section)
        known = {f.name: getattr(current, f.name) for f in fields(current)}
        values = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _parse_value(raw, known[key], f"[{section}] {key}")
        if section == "lstm" and "variant" in values:
            try:
                preset = BiLSTMConfig.named(values["variant"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            values.setdefault("bidirectional", preset.bidirectional)
            values.setdefault("head", preset.head)
        try:
            config = replace(config, **{section: replace(current, **values)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None
    return config


def load_config(path, base=None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def desk_config(seed=42) -> RunConfig:
    """Small synthetic setup: 8 channels x 10 s at 100 Hz, narrow layers."""
    return RunConfig(
        synth=SynthConfig(n_patients=20, recordings_per_patient=3, channels=8,
                          duration_s=10.0, sample_rate=100.0, spike_amplitude=8.0),
        preprocess=PreprocessConfig(sample_rate=100.0, n_channels=8, duration_s=10.0),
        cnn=ResidualCNNConfig(in_channels=8, length=1000, filters=16,
                              pools=(5, 5, 2, 2, 5, 2, 1), head=(32, 16), variant="desk"),
        lstm=BiLSTMConfig(in_channels=8, length=1000, conv_filters=16, units=(16, 8),
                          head=(32, 16), variant="paper-text"),
        train=TrainConfig(batch_size=16, max_epochs=80, patience=10),
        ensemble_train=TrainConfig(batch_size=4, max_epochs=30, patience=3, lr=0.01,
                                   min_delta=1e-3),
    ).with_seed(seed)
