"""Residual CNN, Bi-LSTM network and the stacked ensemble over both.

Every model consumes a batch ``(N, channels, samples)`` and returns ``(N,)``
probabilities of the epileptic class.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .neuralcore import LSTM, Conv1D, Dense, ShapeMismatchError, Tensor, no_grad
from .neuralcore import functional as F

__all__ = [
    "NotTrainedError",
    "ResidualCNNConfig",
    "BiLSTMConfig",
    "EnsembleConfig",
    "ModelSpec",
    "ParamCountReport",
    "Model",
    "ResidualCNN",
    "BiLSTMNet",
    "Ensemble",
    "build_residual_cnn",
    "build_bilstm_model",
    "build_ensemble",
    "build_from_spec",
    "count_params",
    "forward",
    "predict_proba",
]


class NotTrainedError(RuntimeError):
    """A sub-model handed to the ensemble was never trained or loaded."""


@dataclass(frozen=True)
class ResidualCNNConfig:
    in_channels: int = 30
    length: int = 7500
    filters: int = 128
    kernel: int = 5
    # Two pools for batch 1, two for batch 2, three for batch 3.
    pools: tuple = (5, 5, 5, 5, 3, 2, 2)
    dropout: float = 0.5
    head: tuple = (128, 64)
    variant: str = "paper"


@dataclass(frozen=True)
class BiLSTMConfig:
    """Conv front end, two stacked recurrent layers, dense head.

    ``paper-text`` runs both recurrent layers bidirectionally with a 128/64
    head. ``paper-count`` runs them forward-only with a 128/128 head, which is
    the reading that reproduces the published 62,945 parameter total.
    """

    in_channels: int = 30
    length: int = 7500
    conv_filters: int = 32
    kernel: int = 5
    pool: int = 5
    units: tuple = (64, 32)
    bidirectional: bool = True
    head: tuple = (128, 64)
    dropout: float = 0.5
    variant: str = "paper-text"

    @classmethod
    def named(cls, variant, **overrides):
        if variant == "paper-text":
            base = dict(bidirectional=True, head=(128, 64))
        elif variant == "paper-count":
            base = dict(bidirectional=False, head=(128, 128))
        else:
            raise ValueError(f"unknown Bi-LSTM variant {variant!r}")
        base.update(overrides)
        return cls(variant=variant, **base)


@dataclass(frozen=True)
class EnsembleConfig:
    head: tuple = (32, 32)
    variant: str = "paper"


_CONFIGS = {
    "residual_cnn": ResidualCNNConfig,
    "bilstm": BiLSTMConfig,
    "ensemble": EnsembleConfig,
}


@dataclass
class ModelSpec:
    name: str
    config: object
    layers: list = field(default_factory=list)
    children: dict = field(default_factory=dict)

    @property
    def variant(self):
        return self.config.variant

    def to_dict(self):
        out = {"name": self.name, "config": dataclasses.asdict(self.config)}
        if self.children:
            out["children"] = {k: v.to_dict() for k, v in self.children.items()}
        return out

    @classmethod
    def from_dict(cls, data):
        cfg_cls = _CONFIGS[data["name"]]
        raw = dict(data["config"])
        for key, value in raw.items():
            if isinstance(value, list):
                raw[key] = tuple(value)
        children = {k: cls.from_dict(v) for k, v in data.get("children", {}).items()}
        return cls(name=data["name"], config=cfg_cls(**raw), children=children)


@dataclass
class ParamCountReport:
    per_layer: dict
    total: int
    trainable_total: int

    def format(self):
        lines = [f"{name},{count}" for name, count in self.per_layer.items()]
        lines.append(f"total,{self.total}")
        lines.append(f"trainable,{self.trainable_total}")
        return "\n".join(lines)


class Model:
    spec: ModelSpec

    def __init__(self):
        self.layers = []
        self.trained = False

    def named_parameters(self):
        return [(p.name, p) for layer in self.layers for p in layer.params]

    @property
    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def freeze(self):
        for p in self.parameters:
            p.trainable = False

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, trainable=None):
        named = dict(self.named_parameters())
        if set(named) != set(state):
            missing = sorted(set(named) - set(state))
            extra = sorted(set(state) - set(named))
            raise KeyError(f"state mismatch; missing {missing[:3]}, unexpected {extra[:3]}")
        for name, p in named.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeMismatchError(f"{name}: checkpoint {value.shape} vs model {p.shape}")
            p.data[...] = value
            if trainable is not None:
                p.trainable = trainable[name]

    def _check_input(self, x):
        expected = (self.spec.config.in_channels, self.spec.config.length)
        if tuple(x.shape[1:]) != expected:
            raise ShapeMismatchError(f"{self.spec.name} expects (N, {expected[0]}, "
                                     f"{expected[1]}), got {tuple(x.shape)}")

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def __call__(self, x, training=False, rng=None):
        return self.forward(x, training=training, rng=rng)


def _as_input(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class ResidualCNN(Model):
    """Three convolutional batches whose outputs are upsampled and summed."""

    def __init__(self, config: ResidualCNNConfig, rng, dtype=np.float64):
        super().__init__()
        if len(config.pools) != 7:
            raise ValueError("residual CNN needs exactly seven pool sizes")
        self.config = config
        self.dtype = dtype
        lengths = [config.length]
        for pool in config.pools:
            if lengths[-1] % pool:
                raise ShapeMismatchError(
                    f"length {lengths[-1]} is not divisible by pool {pool}"
                )
            lengths.append(lengths[-1] // pool)
        self.lengths = lengths[1:]
        batch_out = (self.lengths[1], self.lengths[3], self.lengths[6])
        for out in batch_out[1:]:
            if batch_out[0] % out:
                raise ShapeMismatchError(
                    f"batch output length {out} does not divide {batch_out[0]}"
                )
        self.up_factors = (batch_out[0] // batch_out[1], batch_out[0] // batch_out[2])

        self.convs = []
        cin = config.in_channels
        for i in range(7):
            self.convs.append(Conv1D(f"conv{i + 1}", cin, config.filters, config.kernel,
                                     "tanh", rng, dtype))
            cin = config.filters
        h1, h2 = config.head
        self.fc1 = Dense("fc1", config.filters, h1, "tanh", rng, dtype)
        self.fc2 = Dense("fc2", h1, h2, "tanh", rng, dtype)
        self.out = Dense("out", h2, 1, "sigmoid", rng, dtype)
        self.layers = [*self.convs, self.fc1, self.fc2, self.out]

        p = config.pools
        layers = []
        for i in range(7):
            layers.append(("conv1d", dict(filters=config.filters, kernel=config.kernel,
                                          activation="tanh", batch=1 + min(i // 2, 2))))
            layers.append(("maxpool1d", dict(pool=p[i])))
            if i < 4:
                layers.append(("dropout", dict(rate=config.dropout)))
        layers += [
            ("upsample_sum", dict(factors=self.up_factors)),
            ("global_avg_pool", {}),
            ("dense", dict(units=h1, activation="tanh")),
            ("dropout", dict(rate=config.dropout)),
            ("dense", dict(units=h2, activation="tanh")),
            ("dense", dict(units=1, activation="sigmoid")),
        ]
        self.spec = ModelSpec("residual_cnn", config, layers)

    def forward(self, x, training=False, rng=None):
        x = _as_input(x, self.dtype)
        self._check_input(x)
        pools, rate = self.config.pools, self.config.dropout
        h = x
        outs = []
        for i, conv in enumerate(self.convs):
            h = F.maxpool1d(conv(h), pools[i])
            if i < 4:
                h = F.dropout(h, rate, training, rng)
            if i in (1, 3, 6):
                outs.append(h)
        merged = F.add(outs[0],
                       F.upsample_repeat(outs[1], self.up_factors[0]),
                       F.upsample_repeat(outs[2], self.up_factors[1]))
        h = F.global_avg_pool(merged, axis=-1)
        h = F.dropout(self.fc1(h), rate, training, rng)
        h = self.out(self.fc2(h))
        return F.reshape(h, (h.shape[0],))


class BiLSTMNet(Model):
    """Conv front end feeding two stacked sequence-to-sequence LSTM layers."""

    def __init__(self, config: BiLSTMConfig, rng, dtype=np.float64):
        super().__init__()
        if config.length % config.pool:
            raise ShapeMismatchError(
                f"length {config.length} is not divisible by pool {config.pool}"
            )
        self.config = config
        self.dtype = dtype
        direction = "bidirectional" if config.bidirectional else "forward"
        self.conv = Conv1D("conv", config.in_channels, config.conv_filters, config.kernel,
                           "relu", rng, dtype)
        self.recurrent = []
        features = config.conv_filters
        for i, units in enumerate(config.units):
            layer = LSTM(f"lstm{i + 1}", features, units, direction, rng, dtype)
            self.recurrent.append(layer)
            features = layer.out_features
        h1, h2 = config.head
        self.fc1 = Dense("fc1", features, h1, "tanh", rng, dtype)
        self.fc2 = Dense("fc2", h1, h2, "tanh", rng, dtype)
        self.out = Dense("out", h2, 1, "sigmoid", rng, dtype)
        self.layers = [self.conv, *self.recurrent, self.fc1, self.fc2, self.out]

        layers = [
            ("conv1d", dict(filters=config.conv_filters, kernel=config.kernel,
                            activation="relu")),
            ("maxpool1d", dict(pool=config.pool)),
            ("dropout", dict(rate=config.dropout)),
        ]
        for units in config.units:
            layers += [
                ("lstm", dict(units=units, direction=direction, return_sequences=True)),
                ("relu", {}),
                ("dropout", dict(rate=config.dropout)),
            ]
        layers += [
            ("global_avg_pool", {}),
            ("dense", dict(units=h1, activation="tanh")),
            ("dense", dict(units=h2, activation="tanh")),
            ("dense", dict(units=1, activation="sigmoid")),
        ]
        self.spec = ModelSpec("bilstm", config, layers)

    def forward(self, x, training=False, rng=None):
        x = _as_input(x, self.dtype)
        self._check_input(x)
        rate = self.config.dropout
        h = F.maxpool1d(self.conv(x), self.config.pool)
        h = F.dropout(h, rate, training, rng)
        h = F.transpose(h, (0, 2, 1))  # (N, time, features)
        for layer in self.recurrent:
            h = F.dropout(F.relu(layer(h)), rate, training, rng)
        h = F.global_avg_pool(h, axis=1)
        h = self.out(self.fc2(self.fc1(h)))
        return F.reshape(h, (h.shape[0],))


class Ensemble(Model):
    """Dense head over the concatenated probabilities of two frozen sub-models."""

    def __init__(self, cnn: Model, lstm: Model, config: EnsembleConfig, rng, dtype=np.float64):
        super().__init__()
        self.config = config
        self.dtype = dtype
        self.cnn = cnn
        self.lstm = lstm
        h1, h2 = config.head
        self.fc1 = Dense("head.fc1", 2, h1, "tanh", rng, dtype)
        self.fc2 = Dense("head.fc2", h1, h2, "tanh", rng, dtype)
        self.out = Dense("head.out", h2, 1, "sigmoid", rng, dtype)
        self.layers = [self.fc1, self.fc2, self.out]
        self.spec = ModelSpec(
            "ensemble", config,
            [("concat", dict(inputs=("residual_cnn", "bilstm"))),
             ("dense", dict(units=h1, activation="tanh")),
             ("dense", dict(units=h2, activation="tanh")),
             ("dense", dict(units=1, activation="sigmoid"))],
            children={"cnn": cnn.spec, "lstm": lstm.spec},
        )

    def named_parameters(self):
        return ([(f"cnn/{n}", p) for n, p in self.cnn.named_parameters()]
                + [(f"lstm/{n}", p) for n, p in self.lstm.named_parameters()]
                + [(p.name, p) for layer in self.layers for p in layer.params])

    @property
    def head_parameters(self):
        return [p for layer in self.layers for p in layer.params]

    def head(self, pair, training=False, rng=None):
        """Head on an (N, 2) tensor of [p_cnn, p_lstm]."""
        h = self.out(self.fc2(self.fc1(_as_input(pair, self.dtype))))
        return F.reshape(h, (h.shape[0],))

    def sub_outputs(self, x):
        p_cnn = self.cnn.forward(x)
        p_lstm = self.lstm.forward(x)
        return F.concat([F.reshape(p_cnn, (-1, 1)), F.reshape(p_lstm, (-1, 1))], axis=1)

    def forward(self, x, training=False, rng=None):
        # Sub-models always run in inference mode.
        return self.head(self.sub_outputs(x), training=training, rng=rng)


def build_residual_cnn(config=None, seed=0, dtype=np.float64) -> ResidualCNN:
    return ResidualCNN(config or ResidualCNNConfig(), np.random.default_rng(seed), dtype)


def build_bilstm_model(config=None, seed=0, dtype=np.float64) -> BiLSTMNet:
    return BiLSTMNet(config or BiLSTMConfig(), np.random.default_rng(seed), dtype)


def build_ensemble(cnn: Model, lstm: Model, config=None, seed=0, dtype=np.float64,
                   require_trained=True) -> Ensemble:
    """Freeze both sub-models and attach a fresh trainable head."""
    if require_trained:
        for name, model in (("residual CNN", cnn), ("Bi-LSTM", lstm)):
            if not model.trained:
                raise NotTrainedError(f"{name} must be trained or loaded from a checkpoint")
    cnn.freeze()
    lstm.freeze()
    return Ensemble(cnn, lstm, config or EnsembleConfig(), np.random.default_rng(seed), dtype)


def build_from_spec(spec, seed=0, dtype=np.float64) -> Model:
    """Rebuild an untrained model (and sub-models) from a ModelSpec or its dict form."""
    if isinstance(spec, dict):
        spec = ModelSpec.from_dict(spec)
    if spec.name == "residual_cnn":
        return build_residual_cnn(spec.config, seed, dtype)
    if spec.name == "bilstm":
        return build_bilstm_model(spec.config, seed, dtype)
    if spec.name == "ensemble":
        cnn = build_from_spec(spec.children["cnn"], seed, dtype)
        lstm = build_from_spec(spec.children["lstm"], seed, dtype)
        return build_ensemble(cnn, lstm, spec.config, seed, dtype, require_trained=False)
    raise ValueError(f"unknown model {spec.name!r}")


def count_params(model: Model) -> ParamCountReport:
    """Count parameters by enumerating the arrays themselves."""
    per_layer = {}
    total = trainable = 0
    for name, p in model.named_parameters():
        layer = name.rsplit(".", 1)[0]
        per_layer[layer] = per_layer.get(layer, 0) + p.data.size
        total += p.data.size
        if p.trainable:
            trainable += p.data.size
    return ParamCountReport(per_layer=per_layer, total=total, trainable_total=trainable)


def predict_proba(model: Model, x, batch_size=32) -> np.ndarray:
    """Inference-mode probabilities for a batch of windows."""
    x = np.asarray(x)
    out = np.empty(len(x), dtype=np.float64)
    with no_grad():
        for start in range(0, len(x), batch_size):
            out[start:start + batch_size] = model.forward(x[start:start + batch_size]).data
    return out


def forward(model: Model, window) -> float:
    """Probability for a single (channels, samples) window."""
    window = getattr(window, "window", window)
    with no_grad():
        return float(model.forward(np.asarray(window)[None]).data[0])
