import numpy as np
import pytest

from gradcases import DESK_CNN, DESK_LSTM
from iedkit.models import (
    BiLSTMConfig,
    NotTrainedError,
    ResidualCNNConfig,
    build_bilstm_model,
    build_residual_cnn,
    count_params,
    predict_proba,
)
from iedkit.trainer import (
    Checkpoint,
    CorruptCheckpointError,
    Dataset,
    EarlyStopping,
    EmptyDatasetError,
    NonFiniteLossError,
    TrainConfig,
    VersionMismatchError,
    decode_checkpoint,
    encode_checkpoint,
    format_history,
    load_checkpoint,
    parameter_digest,
    save_checkpoint,
    train,
    train_ensemble,
    write_history,
)


def toy_data(n=24, seed=0):
    """Windows whose label decides the sign of a shared bump on every channel."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    bump = np.exp(-0.5 * ((np.arange(60) - 30) / 4.0) ** 2)
    x = 0.3 * rng.normal(size=(n, 4, 60)) + np.where(y[:, None, None] == 1, 2.0, -2.0) * bump
    return Dataset(x, y)


FAST = TrainConfig(batch_size=8, max_epochs=4, patience=2, lr=3e-3, seed=5)


class TestEarlyStopping:
    def test_patience_semantics(self):
        stopper = EarlyStopping(patience=3)
        stops = [stopper.update(e, v)[1] for e, v in enumerate([0.9, 0.7, 0.6, 0.65, 0.7, 0.8])]
        assert stops == [False] * 5 + [True]
        assert stopper.best_epoch == 2

    def test_min_delta(self):
        stopper = EarlyStopping(patience=2, min_delta=0.01)
        stopper.update(0, 0.5)
        improved, _ = stopper.update(1, 0.495)
        assert not improved and stopper.best_epoch == 0

    def test_train_returns_global_argmin(self):
        model = build_residual_cnn(DESK_CNN, seed=1)
        history, best = train(model, toy_data(), toy_data(seed=1),
                              TrainConfig(batch_size=8, max_epochs=6, patience=6, seed=2))
        losses = [r.val_loss for r in history]
        assert best.epoch == int(np.argmin(losses))
        # The model is left holding the best epoch's weights.
        for name, p in model.named_parameters():
            np.testing.assert_array_equal(p.data, best.params[name])


class TestTrain:
    def test_separable_points(self):
        config = ResidualCNNConfig(in_channels=4, length=60, filters=8,
                                   pools=(2, 3, 1, 2, 5, 1, 1), head=(6, 5), dropout=0.0)
        data = toy_data(n=2)
        model = build_residual_cnn(config, seed=0)
        # 200 single-batch epochs: one RMSprop step each, so a larger step than the default
        history, _ = train(model, data, data, TrainConfig(batch_size=2, max_epochs=200,
                                                          patience=200, lr=1e-2, seed=0))
        assert history[-1].train_loss < 0.01

    def test_learns_toy_task(self):
        model = build_bilstm_model(BiLSTMConfig.named("paper-text", **DESK_LSTM), seed=0)
        history, _ = train(model, toy_data(48), toy_data(24, seed=1),
                           TrainConfig(batch_size=8, max_epochs=15, patience=15, lr=5e-3))
        assert history[-1].val_loss < history[0].val_loss

    def test_history_records(self):
        history, _ = train(build_residual_cnn(DESK_CNN), toy_data(), toy_data(seed=1), FAST)
        assert [r.epoch for r in history] == list(range(len(history)))
        assert all(r.train_loss >= 0 and r.val_loss >= 0 and r.seconds >= 0 for r in history)

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            model = build_residual_cnn(DESK_CNN, seed=3)
            history, best = train(model, toy_data(), toy_data(seed=1), FAST)
            runs.append((format_history(history, include_time=False), encode_checkpoint(best)))
        assert runs[0] == runs[1]

    def test_seed_changes_run(self):
        outs = []
        for seed in (1, 2):
            model = build_residual_cnn(DESK_CNN, seed=3)
            history, _ = train(model, toy_data(), toy_data(seed=1),
                               TrainConfig(batch_size=8, max_epochs=2, patience=2, seed=seed))
            outs.append(format_history(history, include_time=False))
        assert outs[0] != outs[1]

    def test_empty_dataset(self):
        empty = Dataset(np.zeros((0, 4, 60)), np.zeros(0))
        with pytest.raises(EmptyDatasetError):
            train(build_residual_cnn(DESK_CNN), empty, toy_data(), FAST)

    def test_non_finite_loss(self):
        data = toy_data()
        data.x[:] = np.nan
        with pytest.raises(NonFiniteLossError):
            train(build_residual_cnn(DESK_CNN), data, toy_data(), FAST)

    def test_single_precision_mode(self):
        model = build_residual_cnn(DESK_CNN, dtype=np.float32)
        history, _ = train(model, toy_data(), toy_data(seed=1),
                           TrainConfig(batch_size=8, max_epochs=2, patience=2,
                                       precision="single"))
        assert np.isfinite(history[-1].val_loss)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(patience=0)


@pytest.fixture(scope="module")
def trained_pair():
    train_set, val_set = toy_data(), toy_data(seed=1)
    cnn = build_residual_cnn(DESK_CNN, seed=0)
    lstm = build_bilstm_model(BiLSTMConfig.named("paper-text", **DESK_LSTM), seed=1)
    _, ck_cnn = train(cnn, train_set, val_set, FAST)
    _, ck_lstm = train(lstm, train_set, val_set, FAST)
    return ck_cnn, ck_lstm, train_set, val_set


class TestEnsembleTraining:
    def test_only_head_trains(self, trained_pair):
        ck_cnn, ck_lstm, train_set, val_set = trained_pair
        config = TrainConfig(batch_size=4, max_epochs=5, patience=5, lr=0.01)
        _, best, ens = train_ensemble(ck_cnn, ck_lstm, train_set, val_set, config)
        assert count_params(ens).trainable_total == 1_185
        assert parameter_digest(ens.cnn) == parameter_digest(ck_cnn.restore())
        assert parameter_digest(ens.lstm) == parameter_digest(ck_lstm.restore())
        for name, value in ck_cnn.params.items():
            np.testing.assert_array_equal(best.params[f"cnn/{name}"], value)
        assert not any(best.trainable[f"cnn/{n}"] for n in ck_cnn.params)

    def test_precomputed_head_matches_full_forward(self, trained_pair):
        ck_cnn, ck_lstm, train_set, val_set = trained_pair
        _, best, ens = train_ensemble(ck_cnn, ck_lstm, train_set, val_set,
                                      TrainConfig(batch_size=4, max_epochs=2, patience=2))
        restored = best.restore()
        np.testing.assert_array_equal(predict_proba(restored, val_set.x),
                                      predict_proba(ens, val_set.x))

    def test_missing_checkpoint(self, trained_pair):
        ck_cnn, _, train_set, val_set = trained_pair
        with pytest.raises(NotTrainedError):
            train_ensemble(ck_cnn, None, train_set, val_set)


class TestCheckpoint:
    def test_round_trip_forward_bit_exact(self, trained_pair, tmp_path):
        ck_cnn, _, _, val_set = trained_pair
        save_checkpoint(ck_cnn, tmp_path / "cnn.ckpt")
        loaded = load_checkpoint(tmp_path / "cnn.ckpt")
        assert loaded.epoch == ck_cnn.epoch and loaded.seed == ck_cnn.seed
        x = np.random.default_rng(0).normal(size=(10, 4, 60))
        assert predict_proba(loaded.restore(), x).tobytes() == \
            predict_proba(ck_cnn.restore(), x).tobytes()

    def test_flags_survive(self, trained_pair):
        ck_cnn, ck_lstm, train_set, val_set = trained_pair
        _, best, _ = train_ensemble(ck_cnn, ck_lstm, train_set, val_set,
                                    TrainConfig(batch_size=4, max_epochs=1, patience=1))
        again = decode_checkpoint(encode_checkpoint(best))
        assert again.trainable == best.trainable
        assert again.model_name == "ensemble"

    def test_truncated(self, trained_pair):
        blob = encode_checkpoint(trained_pair[0])
        for cut in (0, 5, 20, len(blob) // 2, len(blob) - 1):
            with pytest.raises(CorruptCheckpointError):
                decode_checkpoint(blob[:cut])

    def test_bit_flip(self, trained_pair):
        blob = bytearray(encode_checkpoint(trained_pair[0]))
        blob[len(blob) // 2] ^= 0x01
        with pytest.raises(CorruptCheckpointError):
            decode_checkpoint(bytes(blob))

    def test_version_mismatch(self, trained_pair):
        blob = encode_checkpoint(trained_pair[0])
        with pytest.raises(VersionMismatchError):
            decode_checkpoint(b"NNCKPT2\n" + blob[8:])

    def test_full_cnn_size(self):
        ckpt = Checkpoint.from_model(build_residual_cnn())
        size = len(encode_checkpoint(ckpt))
        assert 536_449 * 8 < size < 536_449 * 8 + 8_192

    def test_history_file(self, tmp_path):
        history, _ = train(build_residual_cnn(DESK_CNN), toy_data(), toy_data(seed=1),
                           TrainConfig(batch_size=8, max_epochs=2, patience=2))
        write_history(history, tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,seconds"
        assert len(lines) == len(history) + 1
        epoch, train_loss, val_loss, _ = lines[1].split(",")
        assert float(val_loss) == history[0].val_loss
