import math
import time
import datetime
import numpy as np
import pandas as pd
from dataclasses import dataclass, field, asdict
from loguru import logger
from pathlib import Path
from tqdm import tqdm

from spectraseg import errors
from spectraseg import evaluation as sps_evaluation
from spectraseg import inference as sps_inference
from spectraseg import losses as sps_losses
from spectraseg import models as sps_models
from spectraseg import optim as sps_optim
from spectraseg import superpixel as sps_superpixel
from spectraseg import utils as sps_utils
from spectraseg.keywords import ConfigKW, KindKW, LoaderParamsKW, ModalityKW, ModelParamsKW, TrainingParamsKW
from spectraseg.loader.datacube import record_pixel_counts
from spectraseg.loader.loader import LoaderConfig, StreamingLoader, load_image

CLASS_WEIGHT_MODES = ("none", "inverse_proportional")
REFERENCE_IMAGES = 500
REFERENCE_SHAPE = (480, 640)


def scaled_epoch_size(epoch_size, scale, batch_size):
    """Scale an epoch size and round it down to a multiple of the batch size (at least one batch)."""
    return max(batch_size, int(math.floor(epoch_size * scale / batch_size)) * batch_size)


def matched_epoch_size(kind, batch_size, shape=REFERENCE_SHAPE, n_images=REFERENCE_IMAGES, n_segments=1000):
    """Epoch size of ``kind`` covering as many pixels as ``n_images`` whole images, floored to the batch size.

    Args:
        kind (str): Model kind.
        batch_size (int): Batch size of the kind.
        shape (tuple): Image height and width.
        n_images (int): Whole images per epoch of the image kind.
        n_segments (int): Superpixels per image.
    """
    h, w = shape
    if kind == KindKW.PIXEL:
        samples = n_images * h * w
    elif kind == KindKW.SUPERPIXEL:
        samples = n_images * n_segments
    elif kind in sps_models.PATCH_SIZES:
        samples = n_images * h * w / sps_models.PATCH_SIZES[kind] ** 2
    else:
        samples = n_images
    return scaled_epoch_size(samples, 1., batch_size)


@dataclass
class TrainConfig:
    """Everything one training run depends on.

    Attributes:
        kind (str): Model kind.
        modality (str): Input modality.
        n_classes (int): Number of classes.
        epochs (int): Training epochs.
        batch_size (int): Samples per batch.
        epoch_size (int): Samples per epoch, a multiple of ``batch_size``.
        seed (int): Seed of weights, dropout, loader and augmentation.
        learning_rate (float): Initial Adam learning rate.
        gamma (float): Per-epoch exponential learning-rate decay.
        swa_start (float): Fraction of the epochs after which weight snapshots are averaged.
        class_weights (str): ``none`` or ``inverse_proportional``.
        loss (str): Loss name, see :data:`spectraseg.losses.LOSSES`.
    """
    kind: str
    modality: str = ModalityKW.HSI
    n_classes: int = sps_models.N_CLASSES
    epochs: int = 100
    batch_size: int = 12
    epoch_size: int = 500
    seed: int = 0
    learning_rate: float = 0.001
    gamma: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    swa_start: float = 0.75
    class_weights: str = "none"
    loss: str = "cross_entropy"
    base_channels: int = 8
    dropout: float = 0.1
    bn_momentum: float = 0.1
    augmentation: dict = None
    superpixel: dict = None
    preprocessing: dict = None
    n_workers: int = 12
    buffer_capacity: int = 4

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.epoch_size % self.batch_size:
            raise ValueError(f"Epoch size {self.epoch_size} is not divisible by batch size {self.batch_size}")
        if self.class_weights not in CLASS_WEIGHT_MODES:
            raise ValueError(f"Unknown class weight mode {self.class_weights!r}, choose among {CLASS_WEIGHT_MODES}")
        if not 0. <= self.swa_start <= 1.:
            raise ValueError(f"swa_start must lie in [0, 1], got {self.swa_start}")
        sps_losses.get_loss(self.loss)

    @property
    def swa_first_epoch(self):
        return min(int(math.floor(self.swa_start * self.epochs)), self.epochs - 1)

    @classmethod
    def from_context(cls, context, kind, modality, n_classes, seed=None, scale=None):
        training = context[ConfigKW.TRAINING_PARAMETERS]
        model = context[ConfigKW.MODEL]
        loader = context[ConfigKW.LOADER_PARAMETERS]
        batch_size = training[TrainingParamsKW.BATCH_SIZE][kind]
        scale = context.get(ConfigKW.SCALE, 1.) if scale is None else scale
        return cls(kind=kind, modality=modality, n_classes=n_classes, epochs=training[TrainingParamsKW.EPOCHS],
                   batch_size=batch_size,
                   epoch_size=scaled_epoch_size(training[TrainingParamsKW.EPOCH_SIZE][kind], scale, batch_size),
                   seed=context[ConfigKW.SEED] if seed is None else seed,
                   learning_rate=training[TrainingParamsKW.LEARNING_RATE], gamma=training[TrainingParamsKW.GAMMA],
                   beta1=training[TrainingParamsKW.BETA1], beta2=training[TrainingParamsKW.BETA2],
                   epsilon=training[TrainingParamsKW.EPSILON], swa_start=training[TrainingParamsKW.SWA_START],
                   class_weights=training[TrainingParamsKW.CLASS_WEIGHTS], loss=training[TrainingParamsKW.LOSS][kind],
                   base_channels=model[ModelParamsKW.BASE_CHANNELS], dropout=model[ModelParamsKW.DROPOUT],
                   bn_momentum=model[ModelParamsKW.BN_MOMENTUM],
                   augmentation=training[TrainingParamsKW.AUGMENTATION], superpixel=context[ConfigKW.SUPERPIXEL],
                   n_workers=loader[LoaderParamsKW.N_WORKERS],
                   buffer_capacity=loader[LoaderParamsKW.BUFFER_CAPACITY])

    def loader_config(self):
        return LoaderConfig(kind=self.kind, modality=self.modality, batch_size=self.batch_size,
                            epoch_size=self.epoch_size, n_workers=self.n_workers,
                            buffer_capacity=self.buffer_capacity, seed=self.seed, n_classes=self.n_classes,
                            augmentation=self.augmentation, superpixel=self.superpixel,
                            preprocessing=self.preprocessing)


@dataclass
class TrainResult:
    """Outcome of :func:`train`."""
    history: pd.DataFrame
    best_epoch: int
    best_score: float
    checkpoints: dict = field(default_factory=dict)
    swa_scores: dict = field(default_factory=dict)


class ValidationSet(object):
    """Decoded validation images (and their superpixels) kept in memory for per-epoch scoring."""
    def __init__(self, name, records, cfg):
        self.name = name
        self.items = []
        with_rgb = cfg.kind == KindKW.SUPERPIXEL
        for rec in records:
            cube, labels, rgb = load_image(rec, cfg.modality, cfg.preprocessing, with_rgb=with_rgb)
            dec = None
            if with_rgb:
                dec = sps_superpixel.decompose(rec.path_for(ModalityKW.RGB), cfg.superpixel)
            self.items.append((rec.subject, rec.image_id, cube, labels, dec))
        if not self.items:
            raise errors.EmptySelectionError(f"Validation set {name!r} is empty")

    def score(self, net, cfg):
        """Hierarchical DSC of ``net`` on this set."""
        pairs = [(subject, image_id,
                  sps_inference.predict_image(net, cube, superpixel_params=cfg.superpixel, decomposition=dec).labels,
                  labels)
                 for subject, image_id, cube, labels, dec in self.items]
        return sps_evaluation.hierarchical_score(pairs, cfg.n_classes)


def _loss_weights(cfg, images):
    if cfg.class_weights == "none":
        return None
    weights = sps_losses.class_weights(record_pixel_counts(images, cfg.n_classes))
    logger.info(f"Inverse proportional class weights: {np.round(weights, 3).tolist()}")
    return weights


def train(cfg, train_images, val_sets, path_output, debugging=False):
    """Train one network.

    Every epoch streams ``cfg.epoch_size`` samples through Adam, decays the learning rate, scores each validation
    set with the hierarchical DSC and keeps the best epoch (scored on the first validation set). Snapshots after
    ``cfg.swa_start`` of the epochs are averaged into a stochastic-weight-averaging network whose batchnorm
    statistics are recomputed on one more epoch of training batches.

    Args:
        cfg (TrainConfig): Run settings.
        train_images (list): :class:`ImageRecord` of the training images.
        val_sets (dict): Validation set name -> list of :class:`ImageRecord`; may be empty.
        path_output (str): Folder receiving ``best.ckpt``, ``final.ckpt``, ``swa.ckpt``, ``history.csv`` and
            ``train_config.json``.
        debugging (bool): Log per-batch losses.

    Returns:
        TrainResult

    Raises:
        EmptyLoaderError: no training sample could be extracted.
        TrainingDivergedError: the loss became NaN or infinite.
    """
    begin_time = time.time()
    path_output = Path(path_output)
    path_output.mkdir(parents=True, exist_ok=True)
    sps_utils.save_json(asdict(cfg), path_output / "train_config.json")

    spec = sps_models.model_spec(cfg.kind, cfg.modality, cfg.n_classes, cfg.base_channels, cfg.dropout,
                                 cfg.bn_momentum, cfg.seed)
    net = sps_models.build_network(spec)
    sps_utils.display_selected_model_spec(cfg.kind, cfg.modality, spec)
    loss_fn = sps_losses.get_loss(cfg.loss)
    weights = _loss_weights(cfg, train_images)
    params = net.parameters()
    adam = sps_optim.adam_state(params, cfg.learning_rate, cfg.gamma, cfg.beta1, cfg.beta2, cfg.epsilon)
    swa = sps_optim.SwaState()
    loader = StreamingLoader(cfg.loader_config(), train_images)
    validation = [ValidationSet(name, records, cfg) for name, records in val_sets.items()]
    logger.info(f"Training {cfg.kind}/{cfg.modality} for {cfg.epochs} epochs of {len(loader)} batches "
                f"({cfg.batch_size} samples), {len(train_images)} training images.")

    checkpoints = {"best": path_output / "best.ckpt", "final": path_output / "final.ckpt"}
    history = []
    best_epoch, best_score = -1, -np.inf
    for epoch in tqdm(range(cfg.epochs), desc="Training", disable=not debugging):
        start_time = time.time()
        lr = adam.lr
        losses = []
        for i_batch, batch in enumerate(loader.epoch(epoch)):
            logits = net.forward(batch.inputs, train=True)
            value, grad = loss_fn(logits, batch.targets, weights)
            if not np.isfinite(value):
                raise errors.TrainingDivergedError(f"Loss is {value} at epoch {epoch}, batch {i_batch} "
                                                   f"(learning rate {lr:.3g})")
            net.zero_grad()
            net.backward(grad)
            sps_optim.adam_step(adam, params)
            losses.append(value)
            if debugging:
                logger.debug(f"Epoch {epoch} batch {i_batch}: loss {value:.5f}")
        sps_optim.epoch_decay(adam)

        row = {"epoch": epoch, "loss": float(np.mean(losses)), "learning_rate": lr}
        for val in validation:
            row[f"val_{val.name}"] = val.score(net, cfg)
        score = row[f"val_{validation[0].name}"] if validation else -row["loss"]
        if score > best_score:
            best_epoch, best_score = epoch, score
            sps_models.save_model(net, checkpoints["best"])
        if epoch >= cfg.swa_first_epoch:
            sps_optim.swa_update(swa, params)
        history.append(row)
        logger.info(" ".join([f"Epoch {epoch}:"] + [f"{k} {v:.4g}" for k, v in row.items() if k != "epoch"]) +
                    f" ({time.time() - start_time:.1f} s)")

    sps_models.save_model(net, checkpoints["final"])
    sps_optim.swa_finalize(swa, net, (batch.inputs for batch in loader.epoch(cfg.epochs)))
    checkpoints["swa"] = path_output / "swa.ckpt"
    sps_models.save_model(net, checkpoints["swa"])
    swa_scores = {val.name: val.score(net, cfg) for val in validation}
    if swa_scores:
        logger.info(f"SWA validation DSC: {swa_scores}")

    history = pd.DataFrame(history)
    history.to_csv(path_output / "history.csv", index=False)
    logger.info(f"Best epoch {best_epoch} (score {best_score:.4f}); training took "
                f"{datetime.timedelta(seconds=round(time.time() - begin_time))}")
    return TrainResult(history, best_epoch, float(best_score), checkpoints, swa_scores)
