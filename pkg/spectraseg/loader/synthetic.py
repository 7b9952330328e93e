"""Synthetic labeled hyperspectral scenes.

Each subject gets its own spectral shift, each image its own organ layout. Class spectra are sums of Gaussians over
the HSI wavelength axis, organ regions are seeded Voronoi cells smoothed by one majority-filter pass, and the paired
RGB and TPI cubes are linear functionals of the HSI spectrum.
"""
import numpy as np
from dataclasses import dataclass, fields, asdict
from joblib import Parallel, delayed
from loguru import logger
from pathlib import Path
from scipy import ndimage
from scipy.spatial import cKDTree

from spectraseg import errors
from spectraseg.keywords import ConfigKW, ModalityKW, SynthKW
from spectraseg.loader.datacube import Datacube, LabelMap, ClassTable, DatasetIndex, ImageRecord, IGNORE, \
    hsi_wavelengths, write_cube, write_labels

N_ORGAN_CLASSES = 19

RGB_WINDOWS = ((500., 550.), (550., 620.), (620., 700.))
TPI_CENTERS = (560., 680., 800., 960.)
TPI_WIDTH = 30.


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic dataset. Generation is a pure function of these fields.

    Attributes:
        n_subjects (int): Number of subjects.
        images_per_subject (int): Images generated for each subject.
        n_classes (int): Number of organ classes, at most 19.
        width (int): Image width in pixels.
        height (int): Image height in pixels.
        shift_scale (float): Standard deviation of the per-subject spectral tilt and log-amplitude shift.
        noise_std (float): Standard deviation of the i.i.d. per-voxel noise.
        spatial_noise_std (float): Amplitude of a smooth, spatially correlated spectral perturbation.
        blob_range (tuple): Inclusive range of Voronoi seeds per image.
        reannotate (bool): Also write a second annotation with perturbed organ borders.
        seed (int): RNG seed.
        class_spectra (tuple): Optional explicit ``((center, width, amplitude), ...)`` mixture per class.
    """
    n_subjects: int = 8
    images_per_subject: int = 6
    n_classes: int = 6
    width: int = 64
    height: int = 64
    shift_scale: float = 0.05
    noise_std: float = 0.01
    spatial_noise_std: float = 0.0
    blob_range: tuple = (6, 12)
    reannotate: bool = True
    seed: int = 0
    class_spectra: tuple = None

    def __post_init__(self):
        if self.n_classes < 1:
            raise errors.EmptySelectionError("The synthetic dataset needs at least one class")
        if self.n_classes > N_ORGAN_CLASSES:
            raise errors.InvalidDataError(f"At most {N_ORGAN_CLASSES} classes are supported, got {self.n_classes}")
        if self.n_subjects < 1 or self.images_per_subject < 1:
            raise errors.EmptySelectionError("The synthetic dataset needs at least one image")
        if self.noise_std < 0 or self.spatial_noise_std < 0 or self.shift_scale < 0:
            raise errors.InvalidDataError("Noise and shift scales must be non-negative")
        if self.width < 1 or self.height < 1:
            raise errors.InvalidDataError("Image dimensions must be positive")
        if self.blob_range[0] < 1 or self.blob_range[1] < self.blob_range[0]:
            raise errors.InvalidDataError(f"Invalid blob range {self.blob_range}")
        object.__setattr__(self, 'blob_range', tuple(self.blob_range))

    @classmethod
    def from_context(cls, context):
        """Build from the ``synthetic`` section and the global seed of a configuration dict."""
        params = dict(context[ConfigKW.SYNTHETIC])
        names = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in params.items() if k in names}
        kwargs['seed'] = context[ConfigKW.SEED]
        return cls(**kwargs)


def _gaussian_mixture(wavelengths, components):
    spectrum = np.full(len(wavelengths), 0.05)
    for center, width, amplitude in components:
        spectrum += amplitude * np.exp(-0.5 * ((wavelengths - center) / width) ** 2)
    return spectrum


def class_mixtures(cfg):
    """Gaussian-mixture parameters of every class mean spectrum."""
    if cfg.class_spectra is not None:
        if len(cfg.class_spectra) != cfg.n_classes:
            raise errors.InvalidDataError("class_spectra needs one mixture per class")
        return [tuple(tuple(c) for c in mixture) for mixture in cfg.class_spectra]
    rng = np.random.default_rng([cfg.seed, 0])
    span = 500. / cfg.n_classes
    mixtures = []
    for o in range(cfg.n_classes):
        n_components = int(rng.integers(1, 4))
        main = 500. + (o + 0.5) * span
        centers = [main] + list(rng.uniform(520., 980., n_components - 1))
        mixtures.append(tuple((float(c), float(rng.uniform(15., 60.)), float(rng.uniform(0.4, 1.0)))
                              for c in centers))
    return mixtures


def class_mean_spectra(cfg):
    """Mean spectrum of every class, shape (n_classes, 100), float64."""
    wavelengths = np.asarray(hsi_wavelengths())
    return np.stack([_gaussian_mixture(wavelengths, m) for m in class_mixtures(cfg)])


def subject_shifts(cfg):
    """Per-subject (log-amplitude, tilt) pairs, centered so a single subject is unshifted."""
    rng = np.random.default_rng([cfg.seed, 1])
    shifts = rng.normal(0., 1., size=(cfg.n_subjects, 2)) * cfg.shift_scale
    return shifts - shifts.mean(axis=0)


def rgb_from_hsi(spectra, wavelengths):
    """Integrate spectra over three band windows. ``spectra`` has the spectral axis last."""
    wavelengths = np.asarray(wavelengths)
    bands = [spectra[..., (wavelengths >= lo) & (wavelengths < hi)].mean(axis=-1) for lo, hi in RGB_WINDOWS]
    return np.stack(bands, axis=-1)


def tpi_functionals(wavelengths):
    """Four non-negative weight vectors, each summing to 1."""
    wavelengths = np.asarray(wavelengths)
    weights = np.stack([np.exp(-0.5 * ((wavelengths - c) / TPI_WIDTH) ** 2) for c in TPI_CENTERS])
    return weights / weights.sum(axis=1, keepdims=True)


def tpi_from_hsi(spectra, wavelengths):
    return spectra @ tpi_functionals(wavelengths).T


def _majority_filter(labels, n_classes):
    """One 3x3 majority pass; a pixel keeps its label on ties."""
    votes = np.empty((n_classes,) + labels.shape)
    for o in range(n_classes):
        votes[o] = ndimage.uniform_filter((labels == o).astype(float), size=3, mode='nearest')
        votes[o] += (labels == o) * 1e-3
    return np.argmax(votes, axis=0).astype(np.uint8)


def _voronoi_layout(rng, cfg, seeds=None, seed_classes=None):
    h, w = cfg.height, cfg.width
    if seeds is None:
        n_blobs = int(rng.integers(cfg.blob_range[0], cfg.blob_range[1] + 1))
        seeds = rng.uniform([0, 0], [h, w], size=(n_blobs, 2))
        base = np.arange(cfg.n_classes)[:min(n_blobs, cfg.n_classes)]
        extra = rng.integers(cfg.n_classes, size=max(n_blobs - cfg.n_classes, 0))
        seed_classes = rng.permutation(np.concatenate([base, extra]))
    grid = np.stack(np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing='ij'), axis=-1).reshape(-1, 2)
    _, nearest = cKDTree(seeds).query(grid)
    labels = seed_classes[nearest].reshape(h, w).astype(np.uint8)
    return _majority_filter(labels, cfg.n_classes), seeds, seed_classes


def _mark_unsure(rng, labels):
    """Set a random half of the organ-border pixels to IGNORE, keeping at least one valid pixel."""
    border = (ndimage.maximum_filter(labels, size=3, mode='nearest') !=
              ndimage.minimum_filter(labels, size=3, mode='nearest'))
    unsure = border & (rng.random(labels.shape) < 0.5)
    if unsure.all():
        unsure.flat[0] = False
    out = labels.copy()
    out[unsure] = IGNORE
    return out


def generate_image(cfg, subject_idx, image_idx, mean_spectra=None, shifts=None):
    """Generate one image of one subject.

    Returns:
        dict: ``HSI``/``RGB``/``TPI`` Datacubes, ``labels`` LabelMap and, if requested, ``reannotation``.
    """
    mean_spectra = class_mean_spectra(cfg) if mean_spectra is None else mean_spectra
    shifts = subject_shifts(cfg) if shifts is None else shifts
    wavelengths = np.asarray(hsi_wavelengths())
    rng = np.random.default_rng([cfg.seed, 2, subject_idx, image_idx])

    layout, seeds, seed_classes = _voronoi_layout(rng, cfg)

    log_amplitude, tilt = shifts[subject_idx]
    subject_spectra = mean_spectra * np.exp(log_amplitude)
    if tilt != 0:
        subject_spectra = subject_spectra + tilt * (wavelengths - 750.) / 500.
    spectra = subject_spectra[layout]
    if cfg.spatial_noise_std > 0:
        field = ndimage.gaussian_filter(rng.normal(size=layout.shape), sigma=max(cfg.height, cfg.width) / 16.)
        field /= max(np.abs(field).max(), 1e-12)
        direction = mean_spectra[rng.integers(cfg.n_classes)] - mean_spectra.mean(axis=0)
        spectra = spectra + cfg.spatial_noise_std * field[..., None] * direction
    if cfg.noise_std > 0:
        spectra = spectra + rng.normal(0., cfg.noise_std, size=spectra.shape)
    spectra = np.maximum(spectra, 0.)

    labels = _mark_unsure(rng, layout)
    hsi = Datacube(spectra, ModalityKW.HSI, tuple(wavelengths))
    hsi_data = hsi.data.astype(np.float64)
    sample = {ModalityKW.HSI: hsi,
              ModalityKW.RGB: Datacube(rgb_from_hsi(hsi_data, wavelengths), ModalityKW.RGB,
                                       tuple(float(np.mean(win)) for win in RGB_WINDOWS)),
              ModalityKW.TPI: Datacube(tpi_from_hsi(hsi_data, wavelengths), ModalityKW.TPI),
              'labels': LabelMap(labels, cfg.n_classes)}
    if cfg.reannotate:
        jittered = seeds + rng.normal(0., 1., size=seeds.shape)
        relabeled, _, _ = _voronoi_layout(rng, cfg, jittered, seed_classes)
        sample['reannotation'] = LabelMap(_mark_unsure(rng, relabeled), cfg.n_classes)
    return sample


def _write_image(cfg, path_output, subject_idx, image_idx, mean_spectra, shifts):
    subject = f"S{subject_idx + 1:02d}"
    image_id = f"{subject}_I{image_idx + 1:02d}"
    sample = generate_image(cfg, subject_idx, image_idx, mean_spectra, shifts)
    path_subject = Path(path_output, subject)
    cube_path = path_subject / f"{image_id}_hsi.cube"
    write_cube(sample[ModalityKW.HSI], cube_path)
    modalities = {}
    for modality in (ModalityKW.RGB, ModalityKW.TPI):
        modalities[modality] = path_subject / f"{image_id}_{modality.lower()}.cube"
        write_cube(sample[modality], modalities[modality])
    label_path = path_subject / f"{image_id}_labels.lbl"
    write_labels(sample['labels'], label_path)
    reannotation = None
    if cfg.reannotate:
        reannotation = path_subject / f"{image_id}_reannotation.lbl"
        write_labels(sample['reannotation'], reannotation)
    return ImageRecord(subject=subject, image_id=image_id, cube=cube_path.resolve(), label=label_path.resolve(),
                       modalities={m: p.resolve() for m, p in modalities.items()},
                       reannotation=reannotation.resolve() if reannotation else None)


def generate_synthetic_dataset(cfg, path_output, n_jobs=1):
    """Write a synthetic dataset and its index.

    Args:
        cfg (SynthConfig): Generator parameters.
        path_output (str): Output directory; receives one folder per subject and ``index.json``.
        n_jobs (int): Number of parallel image writers.

    Returns:
        DatasetIndex: Index of the written dataset.
    """
    path_output = Path(path_output)
    path_output.mkdir(parents=True, exist_ok=True)
    mean_spectra = class_mean_spectra(cfg)
    shifts = subject_shifts(cfg)
    logger.info(f"Generating {cfg.n_subjects} subjects x {cfg.images_per_subject} images "
                f"({cfg.height}x{cfg.width}, {cfg.n_classes} classes) in {path_output}")
    jobs = [(s, i) for s in range(cfg.n_subjects) for i in range(cfg.images_per_subject)]
    records = Parallel(n_jobs=n_jobs)(delayed(_write_image)(cfg, path_output, s, i, mean_spectra, shifts)
                                      for s, i in jobs)
    subjects = {}
    for rec in records:
        subjects.setdefault(rec.subject, []).append(rec)
    index = DatasetIndex(subjects, ClassTable.default(cfg.n_classes), path_output)
    index.save(path_output / "index.json")
    return index


def synth_config_dict(cfg):
    """Plain-JSON view of a SynthConfig, as recorded next to generated data."""
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}
