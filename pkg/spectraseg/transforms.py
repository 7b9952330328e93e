"""Per-image geometric augmentation applied before parts are extracted.

Shift, scale, rotation, horizontal flip and vertical flip are each drawn with probability ``p`` and combined into one affine map
about the image center. Data are interpolated bilinearly with 0 outside the frame; label maps use nearest
neighbour with IGNORE outside the frame.
"""
import math
import numpy as np
from dataclasses import dataclass
from scipy.ndimage import affine_transform

from spectraseg.keywords import AugmentationKW
from spectraseg.loader.datacube import IGNORE

DEFAULT_AUGMENTATION = {AugmentationKW.APPLIED: True, AugmentationKW.PROBABILITY: 0.5,
                        AugmentationKW.SHIFT_LIMIT: 0.0625, AugmentationKW.SCALE_LIMIT: 0.1,
                        AugmentationKW.ROTATE_LIMIT: 45, AugmentationKW.FLIP: True}


@dataclass(frozen=True)
class AugmentParams:
    """Geometric transform applied to one image.

    Attributes:
        shift (tuple): Translation as fractions of (height, width).
        scale (float): Zoom factor about the image center.
        angle (float): Rotation in degrees.
        flip (bool): Mirror the columns.
        flip_v (bool): Mirror the rows.
    """
    shift: tuple = (0., 0.)
    scale: float = 1.
    angle: float = 0.
    flip: bool = False
    flip_v: bool = False

    @property
    def is_identity(self):
        return self.shift == (0., 0.) and self.scale == 1. and self.angle == 0. and not self.flip \
            and not self.flip_v


def sample_augmentation(rng, params=None):
    """Draw an :class:`AugmentParams`. The five on/off decisions come from one ``rng.random(5)`` draw."""
    params = DEFAULT_AUGMENTATION if params is None else params
    if not params[AugmentationKW.APPLIED]:
        return AugmentParams()
    p = params[AugmentationKW.PROBABILITY]
    apply = rng.random(5) < p
    shift = rng.uniform(-params[AugmentationKW.SHIFT_LIMIT], params[AugmentationKW.SHIFT_LIMIT], size=2)
    scale = 1. + rng.uniform(-params[AugmentationKW.SCALE_LIMIT], params[AugmentationKW.SCALE_LIMIT])
    angle = rng.uniform(-params[AugmentationKW.ROTATE_LIMIT], params[AugmentationKW.ROTATE_LIMIT])
    return AugmentParams(shift=(float(shift[0]), float(shift[1])) if apply[0] else (0., 0.),
                         scale=float(scale) if apply[1] else 1.,
                         angle=float(angle) if apply[2] else 0.,
                         flip=bool(apply[3] and params[AugmentationKW.FLIP]),
                         flip_v=bool(apply[4] and params[AugmentationKW.FLIP]))


def inverse_map(params, shape):
    """Matrix and offset sending output (row, col) to input coordinates."""
    h, w = shape
    center = np.array([(h - 1) / 2., (w - 1) / 2.])
    translation = np.array([params.shift[0] * h, params.shift[1] * w])
    theta = math.radians(params.angle)
    rotation = np.array([[math.cos(theta), -math.sin(theta)],
                         [math.sin(theta), math.cos(theta)]]) / params.scale
    flip = np.diag([-1. if params.flip_v else 1., -1. if params.flip else 1.])
    flip_offset = np.array([h - 1. if params.flip_v else 0., w - 1. if params.flip else 0.])
    matrix = flip @ rotation
    offset = flip @ (center - rotation @ (center + translation)) + flip_offset
    return matrix, offset


def _warp(array, matrix, offset, order, cval):
    if array.ndim == 2:
        return affine_transform(array, matrix, offset=offset, order=order, mode='constant', cval=cval)
    full = np.eye(3)
    full[:2, :2] = matrix
    return affine_transform(array, full, offset=np.append(offset, 0.), order=order, mode='constant', cval=cval)


def apply_augmentation(params, labels, *cubes):
    """Apply one geometric transform to a label map and any number of (height, width, channels) arrays.

    Returns:
        tuple: transformed labels followed by the transformed arrays, in input order.
    """
    labels = np.asarray(labels)
    if params.is_identity:
        return (labels,) + tuple(np.asarray(c) for c in cubes)
    if params.shift == (0., 0.) and params.scale == 1. and params.angle == 0.:
        mirror = (slice(None, None, -1 if params.flip_v else 1), slice(None, None, -1 if params.flip else 1))
        return (labels[mirror].copy(),) + tuple(np.asarray(c)[mirror].copy() for c in cubes)
    matrix, offset = inverse_map(params, labels.shape)
    out_labels = _warp(labels.astype(np.uint8), matrix, offset, order=0, cval=IGNORE)
    out_cubes = tuple(_warp(np.asarray(c, dtype=np.float64), matrix, offset, order=1, cval=0.) for c in cubes)
    return (out_labels,) + out_cubes


def augment(cube, labels, rng, params=None, *others):
    """Randomly augment ``cube`` and ``labels`` (and ``others``, e.g. the paired RGB cube) with one shared transform.

    Args:
        cube (ndarray): (height, width, channels) data.
        labels (ndarray): (height, width) class ids.
        rng (Generator or int): Random stream or seed.
        params (dict): ``augmentation`` configuration section.

    Returns:
        tuple: ``(cube, labels, *others)`` after the transform.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    transform = sample_augmentation(rng, params)
    out = apply_augmentation(transform, labels, cube, *others)
    return (out[1], out[0]) + out[2:]
