import json
import logging
import os
import threading

logger = logging.getLogger(__name__)

DEFAULT_STATE = {
    "epoch": 0,
    "batch": 0,
    "step": 0,
    "lr": 1e-4,
    "best_fm": -1.0,
    "best_epoch": 0,
    "bad_epochs": 0,
    "plateau_best": None,
    "epoch_loss_sum": 0.0,
    "epoch_batches": 0,
    "skipped": 0,
}


class TrainState:
    """
    Progress counters shared between the training loop and the interrupt handler.

    "epoch" counts completed epochs and "batch" the completed batches of the
    epoch in progress. Saved as JSON next to the checkpoint so an interrupted
    run resumes at the exact batch it stopped after.
    """

    def __init__(self, path=None, **kwargs):
        self.path = path
        self._state = dict(DEFAULT_STATE)
        self._lock = threading.Lock()
        self.updateState(**kwargs)

    def getState(self):
        with self._lock:
            return self._state.copy()

    def updateState(self, **kwargs):
        with self._lock:
            for key, value in kwargs.items():
                if key not in self._state:
                    raise KeyError(f"Unknown training state field: {key}")
                self._state[key] = value

    def __getitem__(self, key):
        with self._lock:
            return self._state[key]

    def saveState(self, path=None):
        path = path or self.path
        state = self.getState()
        tmp_path = f"{path}.tmp"
        with open(tmp_path, "w") as f:
            json.dump(state, f, indent=2)
        os.replace(tmp_path, path)
        logger.debug(f"Training state saved to {path}")

    def loadState(self, path=None):
        path = path or self.path
        if not os.path.exists(path):
            logger.info(f"No training state at {path}. Starting from defaults...")
            return False
        with open(path, "r") as f:
            saved_state = json.load(f)
        self.updateState(**{k: v for k, v in saved_state.items() if k in DEFAULT_STATE})
        logger.info(f"Loaded training state from {path}: epoch {self['epoch']}, step {self['step']}")
        return True
