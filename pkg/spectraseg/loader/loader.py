"""Streaming multi-worker loader.

Training images are split into disjoint sets, one per worker. Every worker decodes one image at a time, augments it,
extracts the parts its model kind trains on and writes exactly ``batch_size / n_workers`` samples into each slot of a
bounded ring buffer. The consumer takes slots in order once every worker has filled its share.
"""
import threading
import numpy as np
from dataclasses import dataclass, field, asdict
from loguru import logger

from spectraseg import errors
from spectraseg import preprocessing as sps_preprocessing
from spectraseg import transforms as sps_transforms
from spectraseg import utils as sps_utils
from spectraseg.keywords import ConfigKW, KindKW, LoaderParamsKW, ModalityKW, TrainingParamsKW
from spectraseg.loader.datacube import read_cube, read_labels
from spectraseg.loader.parts import Parts, extract_parts


@dataclass
class LoaderConfig:
    """Settings of one streaming loader.

    Attributes:
        kind (str): Model kind, selects the parts extracted from every image.
        modality (str): Input modality read for every image.
        batch_size (int): Samples per batch, divisible by ``n_workers``.
        epoch_size (int): Samples per epoch, divisible by ``batch_size``.
        n_workers (int): Producer threads.
        buffer_capacity (int): Ring buffer slots, at least 2.
        seed (int): Base seed; worker streams derive from (seed, worker, epoch).
        n_classes (int): Number of classes (fuzzy labels of the superpixel kind).
        augmentation (dict): ``augmentation`` section, None disables augmentation.
        superpixel (dict): ``superpixel`` section.
        preprocessing (dict): ``preprocessing`` section applied on load; None when files are already preprocessed.
    """
    kind: str
    modality: str = ModalityKW.HSI
    batch_size: int = 12
    epoch_size: int = 120
    n_workers: int = 12
    buffer_capacity: int = 4
    seed: int = 0
    n_classes: int = None
    augmentation: dict = None
    superpixel: dict = None
    preprocessing: dict = None

    def __post_init__(self):
        if self.n_workers < 1:
            raise ValueError(f"n_workers must be positive, got {self.n_workers}")
        if self.batch_size < 1 or self.batch_size % self.n_workers:
            raise ValueError(f"Batch size {self.batch_size} is not divisible by {self.n_workers} workers")
        if self.buffer_capacity < 2:
            raise ValueError(f"Ring buffer capacity must be at least 2, got {self.buffer_capacity}")
        if self.epoch_size < self.batch_size or self.epoch_size % self.batch_size:
            raise ValueError(f"Epoch size {self.epoch_size} is not a multiple of batch size {self.batch_size}")
        if self.kind == KindKW.SUPERPIXEL and self.n_classes is None:
            raise ValueError("The superpixel kind needs n_classes for its fuzzy labels")

    @property
    def worker_batch(self):
        return self.batch_size // self.n_workers

    @property
    def n_batches(self):
        return self.epoch_size // self.batch_size

    @classmethod
    def from_context(cls, context, kind, modality, batch_size, epoch_size, n_classes, seed=None,
                     preprocessing=None):
        loader_params = context[ConfigKW.LOADER_PARAMETERS]
        training = context[ConfigKW.TRAINING_PARAMETERS]
        return cls(kind=kind, modality=modality, batch_size=batch_size, epoch_size=epoch_size,
                   n_workers=loader_params[LoaderParamsKW.N_WORKERS],
                   buffer_capacity=loader_params[LoaderParamsKW.BUFFER_CAPACITY],
                   seed=context[ConfigKW.SEED] if seed is None else seed, n_classes=n_classes,
                   augmentation=training[TrainingParamsKW.AUGMENTATION],
                   superpixel=context[ConfigKW.SUPERPIXEL], preprocessing=preprocessing)


@dataclass
class LoaderCounters:
    """Instrumentation of one epoch, dumped as JSON for accounting checks."""
    epoch: int = 0
    batches_emitted: int = 0
    samples_emitted: int = 0
    images_loaded: int = 0
    resident_images: int = 0
    peak_residency: int = 0
    blocked_puts: int = 0
    per_worker_samples: list = field(default_factory=list)

    def save(self, path):
        sps_utils.save_json(asdict(self), path)


def partition_images(images, n_workers, seed, epoch=0):
    """Distribute images into disjoint per-worker lists, reshuffled every epoch.

    With fewer images than workers, the surplus workers reuse images round-robin.

    Args:
        images (list): Items to distribute, e.g. :class:`ImageRecord`.
        n_workers (int): Number of workers.
        seed (int): Base seed.
        epoch (int): Epoch number; with ``seed`` it fixes the permutation.

    Returns:
        list: ``n_workers`` lists of images.
    """
    if not images:
        raise errors.EmptySelectionError("No image to distribute over the loader workers")
    rng = np.random.default_rng([seed, epoch])
    perm = rng.permutation(len(images))
    if len(images) < n_workers:
        logger.warning(f"{len(images)} images for {n_workers} workers, workers share images round-robin.")
        return [[images[perm[w % len(images)]]] for w in range(n_workers)]
    return [[images[i] for i in chunk] for chunk in np.array_split(perm, n_workers)]


class RingBuffer(object):
    """Bounded ring of batch slots filled by several producers and drained in order by one consumer.

    Slot ``t`` accepts writes only while ``t < next_read + capacity``; producers ahead of that block.

    Args:
        capacity (int): Number of slots.
        n_workers (int): Number of producers, each owning one segment of every slot.
    """
    def __init__(self, capacity, n_workers):
        self.capacity = capacity
        self.n_workers = n_workers
        self.blocked_puts = 0
        self._slots = {}
        self._next = 0
        self._error = None
        self._closed = False
        self._cond = threading.Condition()

    def put(self, worker, t, part):
        """Write the segment of ``worker`` into slot ``t``. Returns False when the buffer was closed or failed."""
        with self._cond:
            if t >= self._next + self.capacity:
                self.blocked_puts += 1
            while t >= self._next + self.capacity and not self._stopped:
                self._cond.wait()
            if self._stopped:
                return False
            slot = self._slots.setdefault(t, [None] * self.n_workers)
            slot[worker] = part
            self._cond.notify_all()
            return True

    def get(self):
        """Return the next complete slot as one concatenated :class:`Parts`, in worker order."""
        with self._cond:
            while self._error is None and not self._ready():
                self._cond.wait()
            if self._error is not None:
                if isinstance(self._error, errors.EmptyLoaderError):
                    raise self._error
                raise errors.LoaderWorkerError(f"Loader worker failed: {self._error!r}") from self._error
            parts = self._slots.pop(self._next)
            self._next += 1
            self._cond.notify_all()
        return Parts.concatenate(parts)

    def fail(self, exc):
        with self._cond:
            if self._error is None:
                self._error = exc
            self._cond.notify_all()

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def _stopped(self):
        return self._closed or self._error is not None

    def _ready(self):
        slot = self._slots.get(self._next)
        return slot is not None and all(part is not None for part in slot)


def load_image(rec, modality, preprocessing=None, with_rgb=False):
    """Decode the ``modality`` cube, labels and optionally the RGB cube of one image record.

    Returns:
        tuple: ``(cube, labels, rgb)`` arrays; ``rgb`` is None unless requested.
    """
    path = rec.path_for(modality)
    if preprocessing is None:
        cube = read_cube(path)
    else:
        cube = sps_preprocessing.load_preprocessed(path, preprocessing)
    labels = read_labels(rec.label).labels
    rgb = None
    if with_rgb:
        rgb = cube.data if modality == ModalityKW.RGB else read_cube(rec.path_for(ModalityKW.RGB)).data
    return cube.data, labels, rgb


class StreamingLoader(object):
    """Epoch-wise batch stream over a fixed list of training images.

    Args:
        cfg (LoaderConfig): Loader settings.
        images (list): :class:`ImageRecord` of the training images.

    Attributes:
        counters (LoaderCounters): Instrumentation of the most recent epoch.
    """
    def __init__(self, cfg, images):
        if not images:
            raise errors.EmptyLoaderError("The loader received no training image")
        self.cfg = cfg
        self.images = list(images)
        self.counters = LoaderCounters()
        self._lock = threading.Lock()

    def __len__(self):
        return self.cfg.n_batches

    def _load_parts(self, rec, rng):
        cfg = self.cfg
        cube, labels, rgb = load_image(rec, cfg.modality, cfg.preprocessing, with_rgb=cfg.kind == KindKW.SUPERPIXEL)
        with self._lock:
            self.counters.images_loaded += 1
            self.counters.resident_images += 1
            self.counters.peak_residency = max(self.counters.peak_residency, self.counters.resident_images)
        try:
            others = () if rgb is None else (rgb,)
            if cfg.augmentation is not None:
                cube, labels, *others = sps_transforms.augment(cube, labels, rng, cfg.augmentation, *others)
            rgb = others[0] if others else None
            return extract_parts(cube, labels, cfg.kind, rng, n_classes=cfg.n_classes, rgb=rgb,
                                 superpixel_params=cfg.superpixel)
        finally:
            with self._lock:
                self.counters.resident_images -= 1

    def _worker(self, w, images, epoch, ring):
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, w, epoch])
        b_j = cfg.worker_batch
        buffered = None
        position = 0
        n_empty = 0
        try:
            for t in range(cfg.n_batches):
                while buffered is None or len(buffered) < b_j:
                    rec = images[position % len(images)]
                    position += 1
                    parts = self._load_parts(rec, rng)
                    if len(parts) == 0:
                        n_empty += 1
                        if n_empty >= len(images):
                            raise errors.EmptyLoaderError(f"Worker {w}: no image of its set yields a sample "
                                                          f"for kind {cfg.kind}")
                        continue
                    n_empty = 0
                    buffered = parts if buffered is None else Parts.concatenate([buffered, parts])
                if not ring.put(w, t, buffered.take(0, b_j)):
                    return
                buffered = buffered.take(b_j, None)
                with self._lock:
                    self.counters.per_worker_samples[w] += b_j
        except Exception as exc:
            logger.error(f"Loader worker {w} failed: {exc!r}")
            ring.fail(exc)

    def epoch(self, epoch=0):
        """Yield the ``cfg.n_batches`` batches of one epoch as :class:`Parts`.

        Raises:
            EmptyLoaderError: a worker found no sample in its images.
            LoaderWorkerError: a worker raised; the original exception is chained.
        """
        cfg = self.cfg
        self.counters = LoaderCounters(epoch=epoch, per_worker_samples=[0] * cfg.n_workers)
        ring = RingBuffer(cfg.buffer_capacity, cfg.n_workers)
        threads = [threading.Thread(target=self._worker, args=(w, images, epoch, ring), daemon=True,
                                    name=f"spectraseg-loader-{w}")
                   for w, images in enumerate(partition_images(self.images, cfg.n_workers, cfg.seed, epoch))]
        for thread in threads:
            thread.start()
        try:
            for _ in range(cfg.n_batches):
                batch = ring.get()
                self.counters.batches_emitted += 1
                self.counters.samples_emitted += len(batch)
                yield batch
        finally:
            ring.close()
            for thread in threads:
                thread.join()
            self.counters.blocked_puts = ring.blocked_puts
            logger.debug(f"Epoch {epoch}: {self.counters.samples_emitted} samples from "
                         f"{self.counters.images_loaded} image loads, {ring.blocked_puts} blocked writes.")


def stream_batches(cfg, images, epoch=0, path_counters=None):
    """Iterate over one epoch of batches; dump the loader counters to ``path_counters`` once it is exhausted."""
    loader = StreamingLoader(cfg, images)
    yield from loader.epoch(epoch)
    if path_counters is not None:
        loader.counters.save(path_counters)
