import logging
import math
import os
import time
from dataclasses import asdict, dataclass, fields
from enum import Enum

import numpy as np

from linecounter.batch_loader import BatchLoader
from linecounter.checkpoint import loadCheckpoint, saveCheckpoint
from linecounter.errors import ConfigError, NonFiniteError
from linecounter.evaluation import evaluateCorpus
from linecounter.inference import lineMapFromCounts, predictCounts
from linecounter.linemap import countMapFromLineMap
from linecounter.model import lossMaskedL1
from linecounter.optim import Adam, PlateauScheduler
from linecounter.resize import resizePad
from linecounter.train_state import TrainState
from linecounter.utils import logEpochStats, writeCSV

logger = logging.getLogger(__name__)

LOG_FIELDS = ["epoch", "loss", "dr", "ra", "fm", "lr"]
BEST_CHECKPOINT = "best.lcnt"
LAST_CHECKPOINT = "last.lcnt"
STATE_FILE = "train_state.json"
LOG_FILE = "train_log.csv"


class TrainerState(Enum):
    IDLE = 0
    TRAINING = 1
    VALIDATING = 2
    INTERRUPTED = 3
    DONE = 4


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 4
    lr: float = 1e-4
    patience: int = 20
    lr_factor: float = 0.5
    seed: int = 0
    val_fraction: float = 0.1
    fg_threshold: float = 0.5
    match_threshold: float = 0.9
    max_queue_size: int = 4

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError(
                f"epochs must be >= 0, batch_size and patience >= 1 "
                f"(got {self.epochs}, {self.batch_size}, {self.patience})"
            )
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        return self

    @classmethod
    def fromDict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Unknown train config keys: {sorted(unknown)}")
        return cls(**values)

    def toDict(self):
        return asdict(self)


def splitPairs(pairs, val_fraction, seed):
    """
    Hold out a seeded fraction of the pages for validation.

    With fewer than two pages, or a zero fraction, the training pages double as
    the validation set.
    """
    if len(pairs) < 2 or val_fraction <= 0:
        return list(pairs), list(pairs)
    order = np.random.default_rng(seed).permutation(len(pairs))
    val_count = max(1, int(math.ceil(len(pairs) * val_fraction)))
    val = [pairs[i] for i in sorted(order[:val_count])]
    train = [pairs[i] for i in sorted(order[val_count:])]
    return train, val


def preparePairs(pairs, input_size):
    """Resize and pad every (image, linemap) pair to the model input size."""
    prepared = []
    for image, linemap in pairs:
        image, linemap, _ = resizePad(image, linemap, input_size)
        prepared.append((image, linemap))
    return prepared


class Trainer:
    """
    Runs the training recipe: masked L1 loss, Adam, batch size 4, lr halved on a
    validation-FM plateau, best-FM checkpoint kept.

    Attributes:
        model (LineCounterModel): Network being trained.
        optimizer (Adam): Optimizer over the model parameters.
        scheduler (PlateauScheduler): Learning-rate schedule driven by validation FM.
        train_state (TrainState): Progress counters, persisted for resume.
        trainer_state (TrainerState): Current phase of the loop.
        out_dir (str): Receives checkpoints, the CSV log and the state file.

        EPOCHS (int): Last epoch to run.
        BATCH_SIZE (int): Samples per optimizer step.
        SEED (int): Run seed; fixes data order and augmentation.
    """

    def __init__(self, model, train_pairs, val_pairs, config, out_dir, augment_config=None, optimizer=None,
                 train_state=None):
        self.model = model
        self.config = config.validate()
        self.out_dir = out_dir
        self.augment_config = augment_config
        os.makedirs(out_dir, exist_ok=True)

        self.EPOCHS = config.epochs
        self.BATCH_SIZE = config.batch_size
        self.SEED = config.seed
        self.FG_THRESHOLD = config.fg_threshold
        self.MATCH_THRESHOLD = config.match_threshold

        self.train_pairs = preparePairs(train_pairs, model.config.input_size)
        self.val_pages = []
        for image, linemap in val_pairs:
            padded, _, record = resizePad(image, target=model.config.input_size)
            self.val_pages.append((image, linemap, padded, record))

        self.optimizer = optimizer or Adam(model.parameters(), lr=config.lr)
        self.scheduler = PlateauScheduler(self.optimizer, patience=config.patience, factor=config.lr_factor)
        self.train_state = train_state or TrainState(os.path.join(out_dir, STATE_FILE), lr=self.optimizer.lr)
        self.train_state.path = os.path.join(out_dir, STATE_FILE)
        self.trainer_state = TrainerState.IDLE
        self._stop_requested = False

        state = self.train_state.getState()
        if state["plateau_best"] is not None:
            self.scheduler.loadState({"best": state["plateau_best"], "bad_epochs": state["bad_epochs"]})

    @property
    def log_path(self):
        return os.path.join(self.out_dir, LOG_FILE)

    @classmethod
    def resume(cls, checkpoint_path, train_pairs, val_pairs, config, out_dir, augment_config=None):
        """Rebuild a trainer from a checkpoint and the state file saved beside it."""
        model, optimizer, _ = loadCheckpoint(checkpoint_path, optimizer_factory=lambda p: Adam(p, lr=config.lr))
        train_state = TrainState(os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), STATE_FILE))
        train_state.loadState()
        optimizer.lr = train_state["lr"]
        return cls(model, train_pairs, val_pairs, config, out_dir, augment_config, optimizer, train_state)

    def requestStop(self):
        self._stop_requested = True

    def train(self):
        """
        Train until config.epochs, or until interrupted.

        Returns:
            TrainerState: DONE, or INTERRUPTED when requestStop() was called.
        """
        start_epoch = self.train_state["epoch"]
        if start_epoch == 0 and self.train_state["batch"] == 0 and os.path.exists(self.log_path):
            os.remove(self.log_path)
        if self.EPOCHS == 0:
            logger.info("epochs=0: writing the untrained checkpoint")
            self.saveLast()
            saveCheckpoint(os.path.join(self.out_dir, BEST_CHECKPOINT), self.model, self.optimizer)
            self.trainer_state = TrainerState.DONE
            return self.trainer_state

        logger.info(
            f"Training {self.model.parameterCount()} parameters on {len(self.train_pairs)} pages "
            f"(validation {len(self.val_pages)}), epochs {start_epoch + 1}..{self.EPOCHS}"
        )
        for epoch in range(start_epoch + 1, self.EPOCHS + 1):
            started = time.time()
            self.trainer_state = TrainerState.TRAINING
            if not self.trainEpoch(epoch):
                self.trainer_state = TrainerState.INTERRUPTED
                self.saveLast()
                logger.info(f"Interrupted during epoch {epoch}; checkpoint and state saved")
                return self.trainer_state

            self.trainer_state = TrainerState.VALIDATING
            report = self.validate()
            self.endEpoch(epoch, report, time.time() - started)
            if self._stop_requested:
                self.trainer_state = TrainerState.INTERRUPTED
                return self.trainer_state

        self.trainer_state = TrainerState.DONE
        return self.trainer_state

    def trainEpoch(self, epoch):
        """Run the optimizer over one epoch; returns False when stopped early."""
        loader = BatchLoader(
            self.train_pairs,
            self.BATCH_SIZE,
            self.SEED,
            epoch,
            self.augment_config,
            self.config.max_queue_size,
            skip_batches=self.train_state["batch"],
        )
        try:
            for batch_id, images, linemaps in loader:
                loss, skipped = self.trainStep(images, linemaps, epoch, batch_id)
                state = self.train_state.getState()
                self.train_state.updateState(
                    batch=batch_id + 1,
                    step=state["step"] + (0 if skipped else 1),
                    epoch_loss_sum=state["epoch_loss_sum"] + (0.0 if skipped else loss),
                    epoch_batches=state["epoch_batches"] + (0 if skipped else 1),
                    skipped=state["skipped"] + int(skipped),
                )
                if self._stop_requested:
                    return False
        finally:
            loader.stop()
        return True

    def trainStep(self, images, linemaps, epoch, batch_id):
        """
        One forward/backward/update on a batch.

        Returns:
            tuple: (loss value, skipped). A batch without any text pixel is skipped.
        """
        self.model.train()
        self.optimizer.zeroGrad()
        counts = countMapFromLineMap(linemaps)
        try:
            prediction = self.model(images)
            loss = lossMaskedL1(prediction, counts.values, counts.mask)
        except NonFiniteError as e:
            self.dumpBatch(images, linemaps, epoch, batch_id, e.where or "forward")
            raise

        value = loss.item()
        if not math.isfinite(value):
            self.dumpBatch(images, linemaps, epoch, batch_id, "loss")
        if loss.empty_mask:
            logger.warning(f"Epoch {epoch} batch {batch_id}: no text pixels, batch skipped")
            return 0.0, True

        loss.backward()
        try:
            self.optimizer.step()
        except NonFiniteError as e:
            self.dumpBatch(images, linemaps, epoch, batch_id, e.where)
        logger.debug(f"Epoch {epoch} batch {batch_id}: loss {value:.5f}")
        return value, False

    def dumpBatch(self, images, linemaps, epoch, batch_id, where):
        path = os.path.join(self.out_dir, f"nonfinite_e{epoch}_b{batch_id}.npz")
        np.savez(path, images=images, linemaps=linemaps, epoch=epoch, batch_id=batch_id, seed=self.SEED)
        logger.error(f"Non-finite value in {where} at epoch {epoch} batch {batch_id} (seed {self.SEED}); batch dumped to {path}")
        raise NonFiniteError(
            f"Non-finite value in {where} at epoch {epoch}, batch {batch_id}, seed {self.SEED}; batch saved to {path}",
            where=where,
            batch_id=batch_id,
            seed=self.SEED,
        )

    def validate(self):
        """Segment every validation page and score it against its ground truth."""
        if not self.val_pages:
            return None
        pairs = []
        for start in range(0, len(self.val_pages), self.BATCH_SIZE):
            chunk = self.val_pages[start:start + self.BATCH_SIZE]
            counts = predictCounts(self.model, np.stack([page[2] for page in chunk]))
            for (image, linemap, _, record), page_counts in zip(chunk, counts):
                pairs.append((linemap, lineMapFromCounts(page_counts, image, record, self.FG_THRESHOLD)))
        return evaluateCorpus(pairs, self.MATCH_THRESHOLD, source="validation set")

    def endEpoch(self, epoch, report, seconds):
        state = self.train_state.getState()
        loss = state["epoch_loss_sum"] / state["epoch_batches"] if state["epoch_batches"] else float("nan")
        dr, ra, fm = (report.dr, report.ra, report.fm) if report else (0.0, 0.0, 0.0)

        self.scheduler.step(fm)
        improved = fm > state["best_fm"]
        best_fm, best_epoch = (fm, epoch) if improved else (state["best_fm"], state["best_epoch"])
        self.train_state.updateState(
            epoch=epoch,
            batch=0,
            lr=self.optimizer.lr,
            best_fm=best_fm,
            best_epoch=best_epoch,
            bad_epochs=self.scheduler.bad_epochs,
            plateau_best=float(self.scheduler.best),
            epoch_loss_sum=0.0,
            epoch_batches=0,
        )
        if improved:
            saveCheckpoint(os.path.join(self.out_dir, BEST_CHECKPOINT), self.model, self.optimizer,
                           metadata={"epoch": epoch, "fm": fm})
            logger.info(f"New best validation FM {fm:.4f} at epoch {epoch}")
        self.saveLast()

        writeCSV(self.log_path, {"epoch": epoch, "loss": loss, "dr": dr, "ra": ra, "fm": fm, "lr": self.optimizer.lr},
                 LOG_FIELDS)
        logEpochStats(logger, epoch, loss, dr, ra, fm, self.optimizer.lr, seconds, state["skipped"])

    def saveLast(self):
        state = self.train_state.getState()
        saveCheckpoint(os.path.join(self.out_dir, LAST_CHECKPOINT), self.model, self.optimizer,
                       metadata={"epoch": state["epoch"], "batch": state["batch"]})
        self.train_state.saveState()


def train(model, dataset, epochs, batch_size=4, lr=1e-4, patience=20, out_dir="runs/train", val_pairs=None,
          augment_config=None, seed=0):
    """
    Train a model on (image, linemap) pairs with the default recipe.

    Args:
        model (LineCounterModel): Network to train in place.
        dataset (list[tuple]): Training pairs.
        epochs (int): Number of epochs; 0 writes the untrained checkpoint.
        val_pairs (list[tuple]): Validation pairs; defaults to the training pairs.

    Returns:
        Trainer: The finished trainer (log at trainer.log_path, best checkpoint in out_dir).
    """
    config = TrainConfig(epochs=epochs, batch_size=batch_size, lr=lr, patience=patience, seed=seed)
    trainer = Trainer(model, dataset, val_pairs if val_pairs is not None else dataset, config, out_dir, augment_config)
    trainer.train()
    return trainer
