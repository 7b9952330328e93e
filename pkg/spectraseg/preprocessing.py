import hashlib
import json
import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pathlib import Path
from scipy import ndimage

from spectraseg import utils as sps_utils
from spectraseg.keywords import ModalityKW, PreprocessingKW
from spectraseg.loader.datacube import DatasetIndex, ImageRecord, read_cube, write_cube, read_labels, write_labels

MEDIAN_SIZE = (5, 5, 3)


def l1_normalize(cube):
    """Scale every pixel spectrum to unit l1 norm.

    All-zero spectra stay zero and are counted instead of producing NaNs.

    Args:
        cube (Datacube): Input cube, finite and non-negative.

    Returns:
        Datacube, int: normalized cube and number of all-zero pixels.
    """
    data = cube.data.astype(np.float64)
    norm = data.sum(axis=2, keepdims=True)
    out = np.divide(data, norm, out=np.zeros_like(data), where=norm > 0)
    n_zero = int(np.count_nonzero(norm == 0))
    if n_zero:
        logger.debug(f"{n_zero} all-zero spectra left unnormalized.")
    return cube.replace(out), n_zero


def median_filter_5x5x3(cube):
    """Median over a centered 5x5x3 (spatial, spatial, spectral) window.

    Borders are mirrored without repeating the edge voxel (``abc|cb``).
    """
    return cube.replace(ndimage.median_filter(cube.data, size=MEDIAN_SIZE, mode='mirror'))


def preprocess_hsi(cube, normalize=True, smooth=True, filter_first=False):
    """Normalize then median-filter an HSI cube (or the reverse with ``filter_first``).

    Returns:
        Datacube, int: preprocessed cube and number of all-zero pixels found by the normalization.
    """
    n_zero = 0
    if smooth and filter_first:
        cube = median_filter_5x5x3(cube)
    if normalize:
        cube, n_zero = l1_normalize(cube)
    if smooth and not filter_first:
        cube = median_filter_5x5x3(cube)
    return cube, n_zero


def preprocess_cube(cube, params):
    """Apply the configured chain. RGB and TPI cubes pass through unless ``all_modalities`` is set."""
    if cube.modality != ModalityKW.HSI and not params[PreprocessingKW.ALL_MODALITIES]:
        return cube, 0
    return preprocess_hsi(cube, normalize=params[PreprocessingKW.L1_NORMALIZE],
                          smooth=params[PreprocessingKW.MEDIAN_FILTER],
                          filter_first=params[PreprocessingKW.FILTER_FIRST])


def _cache_key(path, params):
    payload = json.dumps({"sha": sps_utils.file_sha256(path), "params": params}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def load_preprocessed(path, params):
    """Read and preprocess one cube, reusing ``SPECTRASEG_CACHE`` when it is set."""
    path_cache = sps_utils.get_cache_dir()
    if path_cache is not None:
        cached = Path(path_cache, "preprocessed", _cache_key(path, params) + ".cube")
        if cached.is_file():
            return read_cube(cached)
    cube, _ = preprocess_cube(read_cube(path), params)
    if path_cache is not None:
        write_cube(cube, cached)
    return cube


def _preprocess_record(rec, root_in, root_out, params, modalities):
    def out_path(path):
        return Path(root_out, Path(path).resolve().relative_to(Path(root_in).resolve()))

    n_zero = 0
    paths = {}
    for modality in modalities:
        if modality != ModalityKW.HSI and modality not in rec.modalities:
            continue
        src = rec.path_for(modality)
        cube, zeros = preprocess_cube(read_cube(src), params)
        n_zero += zeros
        paths[modality] = out_path(src)
        write_cube(cube, paths[modality])
    label = out_path(rec.label)
    write_labels(read_labels(rec.label), label)
    reannotation = None
    if rec.reannotation is not None:
        reannotation = out_path(rec.reannotation)
        write_labels(read_labels(rec.reannotation), reannotation)
    new_rec = ImageRecord(subject=rec.subject, image_id=rec.image_id,
                          cube=paths.get(ModalityKW.HSI, out_path(rec.cube)), label=label,
                          modalities={m: p for m, p in paths.items() if m != ModalityKW.HSI},
                          reannotation=reannotation)
    return new_rec, n_zero


def preprocess_dataset(index, path_output, params, modalities=(ModalityKW.HSI, ModalityKW.RGB, ModalityKW.TPI),
                       n_jobs=1):
    """Preprocess every image of ``index`` into ``path_output``, mirroring its layout.

    Returns:
        DatasetIndex: index of the preprocessed dataset (written as ``index.json``).
    """
    path_output = Path(path_output)
    modalities = [ModalityKW.HSI] + [m for m in modalities if m != ModalityKW.HSI]
    records = Parallel(n_jobs=n_jobs)(delayed(_preprocess_record)(rec, index.root, path_output, params, modalities)
                                      for rec in index.images())
    subjects = {}
    total_zero = 0
    for rec, n_zero in records:
        subjects.setdefault(rec.subject, []).append(rec)
        total_zero += n_zero
    if total_zero:
        logger.warning(f"{total_zero} all-zero spectra were left as zeros.")
    out = DatasetIndex(subjects, index.class_table, path_output)
    out.save(path_output / "index.json")
    logger.info(f"Preprocessed {len(records)} images into {path_output}")
    return out
