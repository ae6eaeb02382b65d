import csv
import os

import numpy as np
import pytest

from linecounter.augment import AugmentConfig
from linecounter.batch_loader import BatchLoader, epochOrder
from linecounter.checkpoint import loadCheckpoint
from linecounter.errors import ConfigError, NonFiniteError
from linecounter.model import build
from linecounter.train import (
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
    LOG_FILE,
    STATE_FILE,
    TrainConfig,
    Trainer,
    TrainerState,
    splitPairs,
    train,
)
from linecounter.train_state import TrainState


def _recordLosses(trainer, losses, stop_after=None):
    original = trainer.trainStep

    def recording(*args):
        loss, skipped = original(*args)
        losses.append(loss)
        if stop_after is not None and len(losses) == stop_after:
            trainer.requestStop()
        return loss, skipped

    trainer.trainStep = recording


def _readLog(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


@pytest.fixture
def make_trainer(tiny_config, tiny_pairs, tmp_path):
    def factory(out="run", epochs=1, batch_size=2, seed=3, augment=None):
        config = TrainConfig(epochs=epochs, batch_size=batch_size, seed=seed)
        model = build(tiny_config, seed=seed)
        return Trainer(model, tiny_pairs, tiny_pairs[:2], config, str(tmp_path / out), augment_config=augment)

    return factory


class TestTrainer:
    def test_zero_epochs_writes_the_untrained_model(self, make_trainer):
        trainer = make_trainer(epochs=0)
        assert trainer.train() == TrainerState.DONE
        loaded, _, _ = loadCheckpoint(os.path.join(trainer.out_dir, BEST_CHECKPOINT))
        for a, b in zip(trainer.model.parameters(), loaded.parameters()):
            np.testing.assert_array_equal(a.data, b.data)
        assert os.path.exists(os.path.join(trainer.out_dir, LAST_CHECKPOINT))
        assert not os.path.exists(trainer.log_path)

    def test_log_header_and_rows(self, make_trainer):
        trainer = make_trainer(epochs=2)
        assert trainer.train() == TrainerState.DONE
        rows = _readLog(trainer.log_path)
        assert rows[0] == ["epoch", "loss", "dr", "ra", "fm", "lr"]
        assert [row[0] for row in rows[1:]] == ["1", "2"]
        assert all(0.0 <= float(row[4]) <= 1.0 for row in rows[1:])

    def test_fixed_seed_gives_identical_first_epoch(self, make_trainer):
        first, second = make_trainer(out="a"), make_trainer(out="b")
        first.train()
        second.train()
        assert _readLog(first.log_path)[1] == _readLog(second.log_path)[1]

    def test_state_file_tracks_progress(self, make_trainer):
        trainer = make_trainer(epochs=1, batch_size=4)
        trainer.train()
        state = TrainState(os.path.join(trainer.out_dir, STATE_FILE))
        assert state.loadState()
        assert state["epoch"] == 1
        assert state["batch"] == 0
        assert state["step"] == 2
        assert state["best_epoch"] == 1

    def test_resume_reproduces_the_remaining_steps(self, make_trainer, tiny_pairs):
        augment = AugmentConfig(probabilities={"perspective": 0.5, "thin_plate_spline": 0.5, "drop_line": 0.2})
        reference = make_trainer(out="reference", batch_size=1, augment=augment)
        reference_losses = []
        _recordLosses(reference, reference_losses)
        reference.train()
        assert len(reference_losses) == 8

        interrupted = make_trainer(out="interrupted", batch_size=1, augment=augment)
        first_losses = []
        _recordLosses(interrupted, first_losses, stop_after=3)
        assert interrupted.train() == TrainerState.INTERRUPTED
        assert first_losses == reference_losses[:3]

        resumed = Trainer.resume(
            os.path.join(interrupted.out_dir, LAST_CHECKPOINT),
            tiny_pairs,
            tiny_pairs[:2],
            interrupted.config,
            interrupted.out_dir,
            augment_config=augment,
        )
        resumed_losses = []
        _recordLosses(resumed, resumed_losses)
        assert resumed.train() == TrainerState.DONE
        assert len(resumed_losses) == 5
        assert resumed_losses == reference_losses[3:]

    def test_nan_batch_is_dumped(self, make_trainer):
        trainer = make_trainer()
        images = np.full((1, 1, 32, 32), np.nan, dtype=np.float32)
        linemaps = np.ones((1, 1, 32, 32), dtype=np.int32)
        with pytest.raises(NonFiniteError) as excinfo:
            trainer.trainStep(images, linemaps, epoch=1, batch_id=6)
        assert excinfo.value.batch_id == 6
        assert excinfo.value.seed == 3
        dump = np.load(os.path.join(trainer.out_dir, "nonfinite_e1_b6.npz"))
        assert int(dump["batch_id"]) == 6

    def test_blank_batch_is_skipped(self, make_trainer):
        trainer = make_trainer()
        before = [p.data.copy() for p in trainer.model.parameters()]
        images = np.ones((2, 1, 32, 32), dtype=np.float32)
        loss, skipped = trainer.trainStep(images, np.zeros((2, 1, 32, 32), dtype=np.int32), epoch=1, batch_id=0)
        assert skipped and loss == 0.0
        assert trainer.optimizer.t == 0
        for a, b in zip(before, trainer.model.parameters()):
            np.testing.assert_array_equal(a, b.data)

    def test_module_level_train(self, tiny_config, tiny_pairs, tmp_path):
        trainer = train(build(tiny_config), tiny_pairs[:4], epochs=1, out_dir=str(tmp_path / "run"))
        assert trainer.trainer_state == TrainerState.DONE
        assert os.path.exists(tmp_path / "run" / BEST_CHECKPOINT)
        assert os.path.exists(tmp_path / "run" / LOG_FILE)

    @pytest.mark.slow
    def test_single_page_overfit(self, tiny_pairs, tmp_path):
        from linecounter.model import ModelConfig

        config = ModelConfig(encoder_channels=(8, 16), counter_hidden=16, input_size=(32, 32))
        losses = []
        trainer = Trainer(build(config), tiny_pairs[:1], tiny_pairs[:1],
                          TrainConfig(epochs=500, batch_size=1, lr=1e-3), str(tmp_path / "overfit"))
        _recordLosses(trainer, losses)
        trainer.train()
        assert min(losses) < 0.1


class TestTrainConfig:
    @pytest.mark.parametrize("values", [{"epochs": -1}, {"batch_size": 0}, {"lr": 0.0}, {"val_fraction": 1.0}])
    def test_invalid_values(self, values):
        with pytest.raises(ConfigError):
            TrainConfig(**values).validate()

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            TrainConfig.fromDict({"momentum": 0.9})

    def test_split_is_seeded_and_disjoint(self):
        pairs = list(range(10))
        train_a, val_a = splitPairs(pairs, 0.1, seed=5)
        train_b, val_b = splitPairs(pairs, 0.1, seed=5)
        assert (train_a, val_a) == (train_b, val_b)
        assert len(val_a) == 1 and len(train_a) == 9
        assert sorted(train_a + val_a) == pairs

    def test_single_page_validates_on_itself(self):
        assert splitPairs(["page"], 0.1, seed=0) == (["page"], ["page"])


class TestTrainState:
    def test_save_and_load(self, tmp_path):
        path = tmp_path / STATE_FILE
        TrainState(path, epoch=4, batch=2, lr=5e-5).saveState()
        restored = TrainState(path)
        assert restored.loadState()
        assert (restored["epoch"], restored["batch"], restored["lr"]) == (4, 2, 5e-5)

    def test_missing_file(self, tmp_path):
        assert not TrainState(tmp_path / STATE_FILE).loadState()

    def test_unknown_field(self):
        with pytest.raises(KeyError):
            TrainState(momentum=0.9)


class TestBatchLoader:
    def _batches(self, pairs, **kwargs):
        return [(b, images.copy(), labels.copy()) for b, images, labels in BatchLoader(pairs, **kwargs)]

    def test_same_seed_same_batches(self, tiny_pairs):
        kwargs = dict(batch_size=3, seed=1, epoch=2, augment_config=AugmentConfig())
        first, second = self._batches(tiny_pairs, **kwargs), self._batches(tiny_pairs, **kwargs)
        assert [b for b, _, _ in first] == [0, 1, 2]
        for (_, images_a, labels_a), (_, images_b, labels_b) in zip(first, second):
            np.testing.assert_array_equal(images_a, images_b)
            np.testing.assert_array_equal(labels_a, labels_b)

    def test_batch_layout(self, tiny_pairs):
        batches = self._batches(tiny_pairs, batch_size=3, seed=0, epoch=1)
        assert batches[0][1].shape == (3, 1, 32, 32) and batches[0][1].dtype == np.float32
        assert batches[0][2].dtype == np.int32
        assert batches[-1][1].shape[0] == 2

    def test_skipped_batches_are_not_produced(self, tiny_pairs):
        batches = self._batches(tiny_pairs, batch_size=2, seed=0, epoch=1, skip_batches=3)
        assert [b for b, _, _ in batches] == [3]

    def test_order_depends_on_epoch(self):
        assert not np.array_equal(epochOrder(50, seed=0, epoch=1), epochOrder(50, seed=0, epoch=2))
        np.testing.assert_array_equal(epochOrder(50, seed=0, epoch=1), epochOrder(50, seed=0, epoch=1))

    def test_producer_errors_reach_the_consumer(self, tiny_pairs):
        broken = [tiny_pairs[0], (np.ones((8, 8), dtype=np.float32), np.zeros((8, 8), dtype=np.int32))]
        with pytest.raises(ValueError):
            self._batches(broken, batch_size=2, seed=0, epoch=1)
