"""Full-image segmentation from trained networks of every granularity, and fold ensembling."""
import numpy as np
from dataclasses import dataclass
from joblib import Parallel, delayed
from loguru import logger
from pathlib import Path

from spectraseg import errors
from spectraseg import models as sps_models
from spectraseg import superpixel as sps_superpixel
from spectraseg.keywords import KindKW, ModalityKW, SuperpixelKW
from spectraseg.loader.datacube import Datacube, LabelMap, write_labels, write_scores
from spectraseg.loader.loader import load_image
from spectraseg.losses import softmax

PREDICTION_SUFFIX = "_pred.lbl"
SCORES_SUFFIX = "_scores.cube"


@dataclass
class SegmentationPrediction:
    """Per-pixel class ids with the softmax scores they were taken from.

    Attributes:
        labels (ndarray): uint8 (H, W) class ids.
        scores (ndarray): float (H, W, n_classes) softmax scores, or None.
    """
    labels: np.ndarray
    scores: np.ndarray = None

    @classmethod
    def from_scores(cls, scores):
        return cls(np.argmax(scores, axis=-1).astype(np.uint8), scores)

    def label_map(self, n_classes=None):
        return LabelMap(self.labels, n_classes)


def _batched(net, x, batch_size):
    out = [net.forward(x[i:i + batch_size], train=False) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, net.spec["n_classes"]))


def grid_shape(height, width, patch_size):
    """Rows and columns of the non-overlapping patch grid covering an image once padded."""
    return -(-height // patch_size), -(-width // patch_size)


def predict_patches(net, cube, patch_size, batch_size=16):
    """Scores of a grid of non-overlapping patches; the image is zero-padded at the bottom and right first."""
    h, w, c = cube.shape
    rows, cols = grid_shape(h, w, patch_size)
    padded = np.pad(cube, ((0, rows * patch_size - h), (0, cols * patch_size - w), (0, 0)))
    tiles = padded.reshape(rows, patch_size, cols, patch_size, c).transpose(0, 2, 4, 1, 3)
    tiles = tiles.reshape(rows * cols, c, patch_size, patch_size)
    logits = _batched(net, tiles, batch_size)
    o = logits.shape[1]
    scores = softmax(logits, axis=1).reshape(rows, cols, o, patch_size, patch_size)
    scores = scores.transpose(0, 3, 1, 4, 2).reshape(rows * patch_size, cols * patch_size, o)
    return scores[:h, :w]


def predict_image(net, cube, rgb=None, superpixel_params=None, decomposition=None, batch_size=4096):
    """Segment one image with a network of any kind.

    Args:
        net (Network): Trained network; ``net.spec`` names kind and modality.
        cube (Datacube or ndarray): (H, W, C) input of the network modality.
        rgb (Datacube or ndarray): RGB cube, needed by the superpixel kind unless ``decomposition`` is given.
        superpixel_params (dict): ``superpixel`` configuration section.
        decomposition (SuperpixelDecomposition): Precomputed segments.
        batch_size (int): Pixels or crops per forward pass.

    Returns:
        SegmentationPrediction: covers every pixel, scores included.
    """
    kind, modality = net.spec["kind"], net.spec["modality"]
    if isinstance(cube, Datacube) and cube.modality != modality:
        raise errors.DimensionMismatchError(f"A {modality} network cannot segment a {cube.modality} cube")
    data = np.asarray(getattr(cube, "data", cube), dtype=np.float64)
    if data.ndim != 3 or data.shape[2] != net.spec["in_channels"]:
        raise errors.DimensionMismatchError(f"Expected (H, W, {net.spec['in_channels']}) {modality} data, "
                                            f"got {data.shape}")
    h, w, c = data.shape

    if kind == KindKW.PIXEL:
        logits = _batched(net, data.reshape(-1, c), batch_size)
        scores = softmax(logits, axis=1).reshape(h, w, -1)
    elif kind in sps_models.PATCH_SIZES:
        scores = predict_patches(net, data, sps_models.PATCH_SIZES[kind], max(1, batch_size // 256))
    elif kind == KindKW.SUPERPIXEL:
        params = superpixel_params or {}
        dec = decomposition
        if dec is None:
            if rgb is None:
                raise ValueError("Superpixel inference needs the RGB cube or a decomposition")
            dec = sps_superpixel.slico(rgb, n_segments=params.get(SuperpixelKW.N_SEGMENTS, 1000),
                                       max_num_iter=params.get(SuperpixelKW.MAX_NUM_ITER, 10),
                                       sigma=params.get(SuperpixelKW.SIGMA, 3.),
                                       convert2lab=params.get(SuperpixelKW.CONVERT2LAB, True))
        size = params.get(SuperpixelKW.CROP_SIZE, sps_superpixel.CROP_SIZE)
        crops = np.stack([sps_superpixel.extract_superpixel_cube(data, dec, s, size).transpose(2, 0, 1)
                          for s in range(dec.n_segments)])
        segment_scores = softmax(_batched(net, crops, max(1, batch_size // 256)), axis=1)
        scores = segment_scores[dec.segments]
    else:
        scores = softmax(net.forward(data.transpose(2, 0, 1)[None], train=False), axis=1)[0].transpose(1, 2, 0)
    return SegmentationPrediction.from_scores(scores)


def ensemble(predictions):
    """Average the softmax scores of several predictions and take the argmax (lowest class id on ties)."""
    if not predictions:
        raise errors.EmptySelectionError("ensemble needs at least one prediction")
    shapes = {p.scores.shape for p in predictions}
    if len(shapes) != 1:
        raise ValueError(f"Cannot ensemble score maps of shapes {sorted(shapes)}")
    return SegmentationPrediction.from_scores(np.mean([p.scores for p in predictions], axis=0))


def prediction_path(path_output, rec, suffix=PREDICTION_SUFFIX):
    return Path(path_output, rec.subject, rec.image_id + suffix)


def _segment_record(nets, rec, preprocessing, superpixel_params, path_output, save_scores):
    modality = nets[0].spec["modality"]
    with_rgb = nets[0].spec["kind"] == KindKW.SUPERPIXEL
    cube, _, rgb = load_image(rec, modality, preprocessing, with_rgb=with_rgb)
    dec = None
    if with_rgb:
        dec = sps_superpixel.decompose(rec.path_for(ModalityKW.RGB), superpixel_params)
    members = [predict_image(net, cube, rgb, superpixel_params, decomposition=dec) for net in nets]
    pred = ensemble(members)
    write_labels(pred.label_map(), prediction_path(path_output, rec))
    if save_scores:
        write_scores(pred.scores.astype(np.float32), prediction_path(path_output, rec, SCORES_SUFFIX))
    return rec.image_id


def segment_images(checkpoints, records, path_output, preprocessing=None, superpixel_params=None, save_scores=True,
                   n_jobs=1):
    """Segment images with one checkpoint or the ensemble of several (e.g. one per fold).

    Label maps go to ``<path_output>/<subject>/<image_id>_pred.lbl`` and scores next to them.

    Returns:
        list: ids of the segmented images.
    """
    nets = [sps_models.load_model(p) for p in checkpoints]
    if not nets:
        raise errors.EmptySelectionError("No checkpoint to predict with")
    specs = {(n.spec["kind"], n.spec["modality"]) for n in nets}
    if len(specs) != 1:
        raise ValueError(f"Ensembled checkpoints must share kind and modality, got {sorted(specs)}")
    logger.info(f"Segmenting {len(records)} images with {len(nets)} {nets[0].spec['kind']}/"
                f"{nets[0].spec['modality']} network(s)")
    return Parallel(n_jobs=n_jobs)(delayed(_segment_record)(nets, rec, preprocessing, superpixel_params, path_output,
                                                            save_scores) for rec in records)
