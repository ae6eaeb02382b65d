import logging
import queue
import threading

import numpy as np

from linecounter.augment import AugmentKind, augment
from linecounter.linemap import LABEL_DTYPE

logger = logging.getLogger(__name__)

AUGMENT_ORDER = (AugmentKind.DROP_LINE, AugmentKind.PERSPECTIVE, AugmentKind.THIN_PLATE_SPLINE)
STARVATION_TIMEOUT = 5.0


def epochOrder(count, seed, epoch):
    """Sample order of one epoch, a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(count)


def augmentSample(image, linemap, config, seed, epoch, index):
    """
    Apply the configured random augmentations to one sample.

    The draws come from an RNG seeded by (seed, epoch, index), so a sample's
    augmentation does not depend on which thread produces it or when.
    """
    if config is None or not config.enabled:
        return image, linemap
    rng = np.random.default_rng([seed, epoch, index])
    magnitudes = {
        AugmentKind.PERSPECTIVE: config.perspective_magnitude,
        AugmentKind.THIN_PLATE_SPLINE: config.tps_magnitude,
        AugmentKind.DROP_LINE: 0.0,
    }
    for kind in AUGMENT_ORDER:
        probability = config.probabilities.get(kind.value, 0.0)
        draw, sub_seed = rng.random(), int(rng.integers(2**31))
        if draw < probability:
            image, linemap = augment(image, linemap, kind, magnitudes[kind], sub_seed, config.tps_grid)
    return image, linemap


class BatchLoader(threading.Thread):
    """
    Producer thread that assembles one epoch of training batches ahead of the loop.

    Batches are put on a bounded queue as (batch_id, images [B, 1, H, W],
    linemaps [B, 1, H, W]); a final None marks the end of the epoch. An exception
    in the producer is forwarded through the queue and re-raised by the consumer.

    Attributes:
        pairs (list[tuple]): (image, linemap) samples, already at the model input size.
        BATCH_SIZE (int): Samples per batch; the last batch may be smaller.
        seed (int): Run seed.
        epoch (int): 1-based epoch this loader produces.
    """

    def __init__(self, pairs, batch_size, seed, epoch, augment_config=None, max_queue_size=4, skip_batches=0):
        super().__init__(daemon=True)
        self.pairs = pairs
        self.BATCH_SIZE = batch_size
        self.seed = seed
        self.epoch = epoch
        self.augment_config = augment_config
        self.skip_batches = skip_batches
        self.batch_queue = queue.Queue(maxsize=max_queue_size)
        self._stop_event = threading.Event()

    def run(self):
        try:
            order = epochOrder(len(self.pairs), self.seed, self.epoch)
            for batch_id, start in enumerate(range(0, len(order), self.BATCH_SIZE)):
                if self._stop_event.is_set():
                    return
                if batch_id < self.skip_batches:
                    continue
                indices = order[start:start + self.BATCH_SIZE]
                self._put((batch_id, *self.makeBatch(indices)))
        except Exception as e:
            self._put(e)
        finally:
            self._put(None)

    def makeBatch(self, indices):
        images, linemaps = [], []
        for index in indices:
            image, linemap = self.pairs[index]
            image, linemap = augmentSample(image, linemap, self.augment_config, self.seed, self.epoch, int(index))
            images.append(image)
            linemaps.append(linemap)
        return (
            np.stack(images).astype(np.float32)[:, None],
            np.stack(linemaps).astype(LABEL_DTYPE)[:, None],
        )

    def _put(self, item):
        while not self._stop_event.is_set():
            try:
                self.batch_queue.put(item, timeout=0.5)
                return
            except queue.Full:
                continue

    def stop(self):
        self._stop_event.set()

    def __iter__(self):
        if not self.is_alive() and self.ident is None:
            self.start()
        while True:
            try:
                item = self.batch_queue.get(timeout=STARVATION_TIMEOUT)
            except queue.Empty:
                logger.debug(f"Training loop waiting on batch loader (epoch {self.epoch})")
                continue
            if item is None:
                return
            if isinstance(item, Exception):
                raise item
            yield item
