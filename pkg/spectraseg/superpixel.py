"""SLICO superpixels on RGB, fuzzy labels and fixed-size superpixel cubes."""
import hashlib
import json
import numpy as np
from dataclasses import dataclass
from loguru import logger
from pathlib import Path
from scipy import ndimage
from skimage.segmentation import slic
from skimage.transform import resize

from spectraseg import utils as sps_utils
from spectraseg.keywords import ModalityKW, SuperpixelKW
from spectraseg.loader.datacube import IGNORE, LabelMap, read_cube, read_segments, write_segments

CROP_SIZE = 32


@dataclass(frozen=True)
class SuperpixelDecomposition:
    """Segment id per pixel plus per-segment geometry.

    Attributes:
        segments (ndarray): int64 (height, width) ids, contiguous from 0.
        counts (ndarray): Pixel count per segment.
        bboxes (ndarray): (n_segments, 4) rows of ``(row_start, col_start, row_stop, col_stop)``, stop exclusive.
        centroids (ndarray): (n_segments, 2) mean (row, col) per segment.
    """
    segments: np.ndarray
    counts: np.ndarray
    bboxes: np.ndarray
    centroids: np.ndarray

    @property
    def n_segments(self):
        return len(self.counts)

    @classmethod
    def from_segments(cls, segments):
        """Relabel an arbitrary id map to contiguous ids and compute segment geometry."""
        _, inverse = np.unique(segments, return_inverse=True)
        segments = inverse.reshape(np.shape(segments)).astype(np.int64)
        n = int(segments.max()) + 1
        counts = np.bincount(segments.ravel(), minlength=n)
        rows, cols = np.indices(segments.shape)
        centroids = np.stack([np.bincount(segments.ravel(), rows.ravel(), n) / counts,
                              np.bincount(segments.ravel(), cols.ravel(), n) / counts], axis=1)
        bboxes = np.array([[s[0].start, s[1].start, s[0].stop, s[1].stop]
                           for s in ndimage.find_objects(segments + 1)], dtype=np.int64)
        for arr in (segments, counts, bboxes, centroids):
            arr.setflags(write=False)
        return cls(segments, counts, bboxes, centroids)


def slico(rgb, n_segments=1000, max_num_iter=10, sigma=3., convert2lab=True):
    """SLIC with adaptive compactness (SLICO) on a reconstructed RGB cube.

    The image is scaled to [0, 1], smoothed per channel with a Gaussian of width ``sigma``, converted to CIELAB
    (D65) and clustered from a regular seed grid. Fragments smaller than a quarter of the mean segment area are merged
    into a neighbour, so every segment is 4-connected.

    Args:
        rgb (Datacube or ndarray): RGB cube or (height, width, 3) array.
        n_segments (int): Requested number of segments.
        max_num_iter (int): k-means iterations.
        sigma (float): Width of the smoothing kernel.
        convert2lab (bool): Cluster in CIELAB rather than RGB.

    Returns:
        SuperpixelDecomposition
    """
    image = np.asarray(getattr(rgb, "data", rgb), dtype=np.float64)
    image = image / max(image.max(), np.finfo(float).tiny)
    n_pixels = image.shape[0] * image.shape[1]
    if n_segments > n_pixels:
        logger.warning(f"Image of {n_pixels} pixels is smaller than the seed grid for {n_segments} segments, "
                       f"using {n_pixels} seeds.")
        n_segments = n_pixels
    segments = slic(image, n_segments=n_segments, max_num_iter=max_num_iter, sigma=sigma, slic_zero=True,
                    convert2lab=convert2lab, enforce_connectivity=True, min_size_factor=0.25, start_label=0,
                    channel_axis=-1)
    return SuperpixelDecomposition.from_segments(segments)


def fuzzy_labels(dec, labels, n_classes):
    """Relative class frequencies inside every segment.

    Args:
        dec (SuperpixelDecomposition): Segments.
        labels (LabelMap): Reference labels with the same dimensions.
        n_classes (int): Number of classes O.

    Returns:
        ndarray, ndarray: (n_segments, O) frequencies and a boolean mask of all-IGNORE segments (rows of zeros).
    """
    lab = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    if lab.shape != dec.segments.shape:
        raise ValueError(f"Label map {lab.shape} does not match decomposition {dec.segments.shape}")
    valid = lab != IGNORE
    flat = dec.segments[valid] * n_classes + lab[valid].astype(np.int64)
    hist = np.bincount(flat, minlength=dec.n_segments * n_classes).reshape(dec.n_segments, n_classes)
    totals = hist.sum(axis=1, keepdims=True)
    empty = totals[:, 0] == 0
    freq = np.divide(hist, totals, out=np.zeros(hist.shape), where=totals > 0)
    return freq, empty


def extract_superpixel_cube(cube, dec, segment_id, size=CROP_SIZE):
    """Masked bounding-box crop of one segment, bilinearly resized to ``size`` x ``size``.

    Returns:
        ndarray: float64 (size, size, channels); pixels outside the segment were zeroed before resizing.
    """
    r0, c0, r1, c1 = dec.bboxes[segment_id]
    crop = np.asarray(getattr(cube, "data", cube))[r0:r1, c0:c1].astype(np.float64)
    crop = np.where((dec.segments[r0:r1, c0:c1] == segment_id)[..., None], crop, 0.)
    if crop.shape[:2] == (size, size):
        return crop
    return resize(crop, (size, size, crop.shape[2]), order=1, mode='edge', anti_aliasing=False,
                  preserve_range=True)


def superpixel_performance_limit(dec, labels, n_classes):
    """Best achievable superpixel segmentation: every segment takes its modal reference class.

    Ties go to the lowest class id. All-IGNORE segments and reference IGNORE pixels are IGNORE in the output.
    """
    freq, empty = fuzzy_labels(dec, labels, n_classes)
    segment_class = np.where(empty, IGNORE, np.argmax(freq, axis=1)).astype(np.uint8)
    out = segment_class[dec.segments]
    lab = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    out[lab == IGNORE] = IGNORE
    return LabelMap(out)


def decompose(path_rgb, params):
    """Run :func:`slico` on an RGB cube file, reusing ``SPECTRASEG_CACHE`` when it is set."""
    kwargs = {"n_segments": params[SuperpixelKW.N_SEGMENTS], "max_num_iter": params[SuperpixelKW.MAX_NUM_ITER],
              "sigma": params[SuperpixelKW.SIGMA], "convert2lab": params[SuperpixelKW.CONVERT2LAB]}
    path_cache = sps_utils.get_cache_dir()
    cached = None
    if path_cache is not None:
        key = json.dumps({"sha": sps_utils.file_sha256(path_rgb), "params": kwargs}, sort_keys=True)
        cached = Path(path_cache, "superpixels", hashlib.sha256(key.encode()).hexdigest()[:24] + ".seg")
        if cached.is_file():
            return SuperpixelDecomposition.from_segments(read_segments(cached))
    rgb = read_cube(path_rgb)
    if rgb.modality != ModalityKW.RGB:
        raise ValueError(f"{path_rgb}: superpixels are computed on RGB cubes, got {rgb.modality}")
    dec = slico(rgb, **kwargs)
    if cached is not None:
        write_segments(dec.segments, cached)
    return dec
