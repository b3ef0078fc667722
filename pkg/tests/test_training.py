import math
import struct

import numpy as np
import pytest

from lidnet.data import DataError
from lidnet.encoder import EncoderConfig
from lidnet.features import compute_mfsc
from lidnet.model import LidModel
from lidnet.synthetic import tone_dataset
from lidnet.tensor import ContractError, Parameter
from lidnet.training import (
    Checkpoint,
    CheckpointFormatError,
    CheckpointShapeError,
    NumericError,
    TrainConfig,
    Utterance,
    cosine_lr,
    evaluate_model,
    load_checkpoint,
    restore,
    save_checkpoint,
    sgd_step,
    snapshot,
    train_loop,
    write_history_csv,
)

TINY = EncoderConfig(blocks=1, subblocks=1, channels=8, kernel_schedule=(3,))


def _model(seed=0, cfg=TINY, n_classes=4):
    return LidModel.init(cfg, 4, n_classes, np.random.default_rng(seed))


@pytest.fixture(scope="module")
def tones():
    return [Utterance(compute_mfsc(clip).frames, label, f"tone{i}")
            for i, (clip, label) in enumerate(tone_dataset(24, 4, seed=1, duration=0.25))]


class TestCosine:
    def test_endpoints(self):
        assert cosine_lr(0, total_steps=1000) == pytest.approx(0.005, abs=1e-12)
        assert cosine_lr(1000, total_steps=1000) == pytest.approx(1e-4, abs=1e-12)

    def test_midpoint(self):
        assert cosine_lr(500, total_steps=1000) == pytest.approx(0.00255, abs=1e-9)

    def test_clamps_after_horizon(self):
        assert cosine_lr(5000, total_steps=1000) == pytest.approx(1e-4, abs=1e-12)

    def test_monotone_and_bounded(self):
        lrs = [cosine_lr(s, total_steps=97) for s in range(98)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))
        assert all(1e-4 - 1e-15 <= v <= 0.005 + 1e-15 for v in lrs)

    def test_bad_horizon(self):
        with pytest.raises(ValueError):
            cosine_lr(0, total_steps=0)


class TestSgd:
    def test_single_value(self):
        p = Parameter("p", [1.0])
        sgd_step([p], {"p": np.array([2.0])}, 0.005)
        assert p.data[0] == pytest.approx(0.99)

    def test_zero_lr(self):
        p = Parameter("p", [1.0, -3.0])
        sgd_step([p], {"p": np.array([5.0, 5.0])}, 0.0)
        np.testing.assert_array_equal(p.data, [1.0, -3.0])

    def test_linearity(self):
        with_two = Parameter("p", [0.5, 2.0])
        with_one = Parameter("p", [0.5, 2.0])
        g = {"p": np.array([1.5, -0.25])}
        sgd_step([with_two], g, 0.25)
        sgd_step([with_two], g, 0.5)
        sgd_step([with_one], g, 0.75)
        np.testing.assert_allclose(with_two.data, with_one.data, atol=1e-7)

    def test_non_trainable_untouched(self):
        frozen = Parameter("running", [1.0], trainable=False)
        sgd_step([frozen], {}, 0.1)
        assert frozen.data[0] == 1.0

    def test_missing_gradient(self):
        with pytest.raises(ContractError):
            sgd_step([Parameter("p", [1.0])], {}, 0.1)

    @pytest.mark.parametrize("lr", [0.01, 0.5, 1.0, 1.99])
    def test_quadratic_decreases(self, lr):
        p = Parameter("p", np.random.default_rng(0).normal(size=5))
        before = 0.5 * float((p.data ** 2).sum())
        sgd_step([p], {"p": p.data.copy()}, lr)
        assert 0.5 * float((p.data ** 2).sum()) < before


class TestTrainLoop:
    def test_step_zero_loss_is_log_k(self, tones):
        res = train_loop(_model(), tones, tones, TrainConfig(batch_size=8, max_epochs=1))
        assert res.history[0].train_loss == pytest.approx(math.log(4), rel=1e-5)
        assert res.history[0].lr == pytest.approx(0.005)

    def test_history_monotone_in_step(self, tones):
        res = train_loop(_model(), tones, tones, TrainConfig(batch_size=8, max_epochs=2, plateau_patience=5))
        steps = [r.step for r in res.history]
        assert steps == list(range(len(steps))) and len(steps) == 6
        assert res.epochs == 2

    def test_loss_goes_down(self, tones):
        res = train_loop(_model(), tones, tones, TrainConfig(lr_init=0.05, lr_min=1e-3, batch_size=8,
                                                               max_epochs=6, plateau_patience=6))
        assert res.best_val_loss < math.log(4) - 0.05

    def test_patience_zero_stops_at_first_non_improvement(self, tones):
        seen = []
        # a tiny lr keeps val loss within min_delta, so epoch 2 cannot improve
        cfg = TrainConfig(lr_init=1e-6, lr_min=1e-7, batch_size=8, max_epochs=10, plateau_patience=0)
        train_loop(_model(), tones, tones, cfg, on_epoch=lambda e, v: seen.append(e))
        assert seen == [1, 2]

    def test_stops_at_max_epochs(self, tones):
        cfg = TrainConfig(lr_init=1e-6, lr_min=1e-7, batch_size=8, max_epochs=3, plateau_patience=10)
        assert train_loop(_model(), tones, tones, cfg).epochs == 3

    def test_deterministic(self, tones):
        cfg = TrainConfig(batch_size=4, max_epochs=2, seed=5)
        runs = [[r.train_loss for r in train_loop(_model(3), tones, tones, cfg).history[:10]] for _ in range(2)]
        assert runs[0] == runs[1]

    def test_restores_best_state(self, tones):
        model = _model()
        res = train_loop(model, tones, tones, TrainConfig(batch_size=8, max_epochs=2))
        for name, arr in snapshot(model).items():
            np.testing.assert_array_equal(arr, res.best_state[name])
        assert evaluate_model(model, tones).loss == pytest.approx(res.best_val_loss, abs=1e-6)

    def test_nan_raises(self, tones):
        model = _model()
        model.sap.W.data[...] = np.nan
        with pytest.raises(NumericError):
            train_loop(model, tones, tones, TrainConfig(batch_size=8, max_epochs=1))

    def test_empty_and_bad_labels(self, tones):
        with pytest.raises(DataError):
            train_loop(_model(), [], tones, TrainConfig())
        bad = [Utterance(tones[0].features, 7, "line 3")]
        with pytest.raises(DataError, match="line 3"):
            train_loop(_model(), bad, tones, TrainConfig())

    def test_crop_and_bucket_options_run(self, tones):
        cfg = TrainConfig(batch_size=8, max_epochs=1, crop_frames=10, bucket_by_length=True)
        assert len(train_loop(_model(), tones, tones, cfg).history) == 3

    def test_history_csv(self, tones, tmp_path):
        res = train_loop(_model(), tones, tones, TrainConfig(batch_size=8, max_epochs=1))
        write_history_csv(tmp_path / "h.csv", res.history)
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "step,lr,train_loss,epoch,val_loss"
        assert lines[1].split(",")[1] == "0.0050"
        assert lines[-1].split(",")[-1] != ""


class TestEvaluate:
    def test_favoring_logits_give_accuracy_one(self):
        model = _model()
        model.classifier.b_out.data[...] = [0, 0, 5, 0]
        res = evaluate_model(model, [Utterance(np.ones((5, 40), np.float32), 2)])
        assert res.accuracy == 1.0 and res.predictions == [2]

    def test_repeatable(self, tones):
        model = _model()
        a, b = evaluate_model(model, tones), evaluate_model(model, tones)
        assert a.loss == b.loss and a.predictions == b.predictions
        assert len(a.predictions) == len(tones)

    def test_padding_invariance(self, tones):
        model = _model(cfg=EncoderConfig(blocks=2, subblocks=2, channels=8, kernel_schedule=(5, 7)))
        model.classifier.W_out.data[...] = np.random.default_rng(0).normal(size=(8, 4))
        short = Utterance(tones[0].features[:9], tones[0].label)
        long = Utterance(tones[1].features, tones[1].label)
        alone = evaluate_model(model, [short]).loss
        together = evaluate_model(model, [short, long])
        batched = float(-np.log(together.probabilities[0, short.label]))
        assert batched == pytest.approx(alone, abs=1e-5)


class TestCheckpoint:
    def _ckpt(self):
        model = _model()
        return Checkpoint(snapshot(model), step=17, config={"train.lr": "0.005"},
                          rng_state={"seed": 1}, best_val_loss=0.25)

    def test_roundtrip_byte_identical(self, tmp_path):
        ckpt = self._ckpt()
        save_checkpoint(tmp_path / "a.ckpt", ckpt)
        back = load_checkpoint(tmp_path / "a.ckpt")
        save_checkpoint(tmp_path / "b.ckpt", back)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert back.step == 17 and back.best_val_loss == 0.25 and back.rng_state == {"seed": 1}
        assert back.config == {"train.lr": "0.005"}
        for name, arr in ckpt.params.items():
            assert back.params[name].tobytes() == arr.astype("<f4").tobytes()

    def test_header_layout(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", Checkpoint({"w": np.ones((2, 3), np.float32)}, step=4))
        blob = (tmp_path / "a.ckpt").read_bytes()
        assert blob[:4] == b"LIDC"
        assert struct.unpack("<II", blob[4:12]) == (1, 1)
        assert struct.unpack("<H", blob[12:14]) == (1,) and blob[14:15] == b"w"
        assert blob[15] == 2 and struct.unpack("<II", blob[16:24]) == (2, 3)
        assert struct.unpack("<QI", blob[48:60]) == (4, 0)
        assert len(blob) == 60

    def test_shape_mismatch_names_parameter(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", self._ckpt())
        other = _model(cfg=EncoderConfig(blocks=1, subblocks=1, channels=6, kernel_schedule=(3,)))
        with pytest.raises(CheckpointShapeError, match="encoder.prologue"):
            restore(other, load_checkpoint(tmp_path / "a.ckpt").params)

    def test_restore_into_same_architecture(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", self._ckpt())
        model = _model(seed=9)
        restore(model, load_checkpoint(tmp_path / "a.ckpt").params)
        for name, arr in snapshot(model).items():
            np.testing.assert_array_equal(arr, self._ckpt().params[name])

    def test_version_rejected(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", self._ckpt())
        blob = bytearray((tmp_path / "a.ckpt").read_bytes())
        blob[4:8] = struct.pack("<I", 2)
        (tmp_path / "b.ckpt").write_bytes(bytes(blob))
        with pytest.raises(CheckpointFormatError, match="version"):
            load_checkpoint(tmp_path / "b.ckpt")

    def test_bad_magic(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", self._ckpt())
        (tmp_path / "b.ckpt").write_bytes(b"NOPE" + (tmp_path / "a.ckpt").read_bytes()[4:])
        with pytest.raises(CheckpointFormatError, match="header"):
            load_checkpoint(tmp_path / "b.ckpt")

    @pytest.mark.parametrize("cut, section", [(10, "header"), (200, "parameter"), (-3, "footer")])
    def test_truncation_names_section(self, tmp_path, cut, section):
        save_checkpoint(tmp_path / "a.ckpt", self._ckpt())
        blob = (tmp_path / "a.ckpt").read_bytes()
        (tmp_path / "b.ckpt").write_bytes(blob[:cut])
        with pytest.raises(CheckpointFormatError, match=section):
            load_checkpoint(tmp_path / "b.ckpt")


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_init=1e-4, lr_min=1e-3)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
