"""Training samples extracted from one (augmented) image."""
import math
import numpy as np
from dataclasses import dataclass

from spectraseg.keywords import KindKW, SuperpixelKW
from spectraseg.loader.datacube import IGNORE
from spectraseg.models import PATCH_SIZES
from spectraseg import superpixel as sps_superpixel


@dataclass
class Parts:
    """Samples of one image stacked along the first axis.

    Attributes:
        inputs (ndarray): ``(n, C)`` spectra, ``(n, C, P, P)`` patches/superpixel crops or ``(1, C, H, W)`` images.
        targets (ndarray): ``(n,)`` class ids, ``(n, P, P)`` label patches, ``(n, O)`` fuzzy labels or ``(1, H, W)``.
    """
    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return len(self.inputs)

    def take(self, start, stop):
        return Parts(self.inputs[start:stop], self.targets[start:stop])

    @staticmethod
    def concatenate(parts):
        return Parts(np.concatenate([p.inputs for p in parts]), np.concatenate([p.targets for p in parts]))


def n_grid_patches(height, width, patch_size):
    """Number of tiles of a non-overlapping grid covering the image."""
    return math.ceil(height / patch_size) * math.ceil(width / patch_size)


def _empty(cube, kind, n_classes):
    c = cube.shape[2]
    if kind == KindKW.PIXEL:
        return Parts(np.zeros((0, c)), np.zeros(0, dtype=np.uint8))
    if kind == KindKW.SUPERPIXEL:
        return Parts(np.zeros((0, c, sps_superpixel.CROP_SIZE, sps_superpixel.CROP_SIZE)), np.zeros((0, n_classes)))
    size = PATCH_SIZES.get(kind)
    shape = (size, size) if size else cube.shape[:2]
    return Parts(np.zeros((0, c) + shape), np.zeros((0,) + shape, dtype=np.uint8))


def extract_parts(cube, labels, kind, rng, n_classes=None, rgb=None, superpixel_params=None):
    """Split one image into the samples a model of ``kind`` trains on.

    * pixel: every non-IGNORE spectrum once, in random order.
    * patch_32 / patch_64: as many random patch positions as a grid tiling would produce; images smaller than the
      patch are padded with zeros and IGNORE.
    * superpixel: SLICO on ``rgb``, then one masked 32x32 crop and fuzzy label per segment holding valid pixels.
    * image: the whole image.

    A fully IGNORE image yields no sample.

    Args:
        cube (ndarray): (H, W, C) preprocessed data.
        labels (ndarray): (H, W) class ids.
        kind (str): Model kind.
        rng (Generator): Random stream of the calling worker.
        n_classes (int): Number of classes (superpixel kind).
        rgb (Datacube): RGB cube to segment (superpixel kind).
        superpixel_params (dict): ``superpixel`` configuration section.

    Returns:
        Parts
    """
    cube = np.asarray(cube, dtype=np.float64)
    labels = np.asarray(labels)
    if not (labels != IGNORE).any():
        return _empty(cube, kind, n_classes)
    h, w, _ = cube.shape

    if kind == KindKW.PIXEL:
        rows, cols = np.nonzero(labels != IGNORE)
        order = rng.permutation(len(rows))
        rows, cols = rows[order], cols[order]
        return Parts(cube[rows, cols], labels[rows, cols])

    if kind in PATCH_SIZES:
        size = PATCH_SIZES[kind]
        pad_h, pad_w = max(size - h, 0), max(size - w, 0)
        if pad_h or pad_w:
            cube = np.pad(cube, ((0, pad_h), (0, pad_w), (0, 0)))
            labels = np.pad(labels, ((0, pad_h), (0, pad_w)), constant_values=IGNORE)
        n = n_grid_patches(h, w, size)
        r0 = rng.integers(0, cube.shape[0] - size + 1, size=n)
        c0 = rng.integers(0, cube.shape[1] - size + 1, size=n)
        inputs = np.stack([cube[r:r + size, c:c + size].transpose(2, 0, 1) for r, c in zip(r0, c0)])
        targets = np.stack([labels[r:r + size, c:c + size] for r, c in zip(r0, c0)])
        return Parts(inputs, targets)

    if kind == KindKW.SUPERPIXEL:
        params = superpixel_params or {}
        dec = sps_superpixel.slico(rgb, n_segments=params.get(SuperpixelKW.N_SEGMENTS, 1000),
                                   max_num_iter=params.get(SuperpixelKW.MAX_NUM_ITER, 10),
                                   sigma=params.get(SuperpixelKW.SIGMA, 3.),
                                   convert2lab=params.get(SuperpixelKW.CONVERT2LAB, True))
        fuzzy, empty = sps_superpixel.fuzzy_labels(dec, labels, n_classes)
        size = params.get(SuperpixelKW.CROP_SIZE, sps_superpixel.CROP_SIZE)
        segments = rng.permutation(np.flatnonzero(~empty))
        inputs = np.stack([sps_superpixel.extract_superpixel_cube(cube, dec, s, size).transpose(2, 0, 1)
                           for s in segments])
        return Parts(inputs, fuzzy[segments])

    return Parts(cube.transpose(2, 0, 1)[None], labels[None])

