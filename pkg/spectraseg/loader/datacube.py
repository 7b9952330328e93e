"""Datacube and label-map data model with its on-disk format.

A cube file is one JSON header line followed by a raw little-endian payload::

    {"channels": 100, "height": 480, "modality": "HSI", "wavelengths": [...], "width": 640}\\n
    <height * width * channels float32 values, channel innermost>

Label files share the header minus ``wavelengths`` and carry an 8-bit payload. Segment-id maps use the label layout
with ``"dtype": "uint32"``.
"""
import json
import numpy as np
from dataclasses import dataclass, field
from loguru import logger
from pathlib import Path

from spectraseg import errors
from spectraseg.keywords import ModalityKW, IndexKW

IGNORE = 255

MODALITY_CHANNELS = {ModalityKW.HSI: 100, ModalityKW.TPI: 4, ModalityKW.RGB: 3}
HSI_RANGE = (500., 1000.)

LABEL_MODALITY = "LABEL"
SEGMENT_MODALITY = "SEGMENTS"
SCORE_MODALITY = "SCORES"

_CUBE_DTYPE = np.dtype('<f4')
_PAYLOAD_DTYPES = {'uint8': np.dtype('u1'), 'uint32': np.dtype('<u4'), 'float32': _CUBE_DTYPE}

DEFAULT_PALETTE = ['#e6194b', '#3cb44b', '#ffe119', '#4363d8', '#f58231', '#911eb4', '#46f0f0', '#f032e6',
                   '#bcf60c', '#fabebe', '#008080', '#e6beff', '#9a6324', '#fffac8', '#800000', '#aaffc3',
                   '#808000', '#ffd8b1', '#000075']


def hsi_wavelengths(channels=100):
    """Evenly spaced wavelength axis covering the HSI camera range (nm)."""
    return tuple(float(w) for w in np.linspace(HSI_RANGE[0], HSI_RANGE[1], channels))


@dataclass(frozen=True)
class Datacube:
    """Reflectance volume of one image in one modality.

    Attributes:
        data (ndarray): float32 array of shape (height, width, channels), read-only.
        modality (str): One of ``HSI``, ``TPI``, ``RGB``.
        wavelengths (tuple): One value per channel (nm). Empty for TPI.
    """
    data: np.ndarray
    modality: str
    wavelengths: tuple = ()

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, order="C")
        if data.ndim != 3:
            raise errors.DimensionMismatchError(f"Datacube data must be 3-D (height, width, channels), "
                                                f"got shape {data.shape}")
        expected = MODALITY_CHANNELS.get(self.modality)
        if expected is None:
            raise errors.DimensionMismatchError(f"Unknown modality {self.modality!r}")
        if data.shape[2] != expected:
            raise errors.DimensionMismatchError(f"{self.modality} cubes have {expected} channels, "
                                                f"got {data.shape[2]}")
        wavelengths = tuple(float(w) for w in self.wavelengths)
        if wavelengths and len(wavelengths) != data.shape[2]:
            raise errors.DimensionMismatchError(f"{len(wavelengths)} wavelengths for {data.shape[2]} channels")
        if self.modality == ModalityKW.HSI:
            wl = np.asarray(wavelengths)
            if len(wl) != data.shape[2] or np.any(np.diff(wl) <= 0) or wl[0] < HSI_RANGE[0] or wl[-1] > HSI_RANGE[1]:
                raise errors.DimensionMismatchError("HSI wavelengths must be strictly increasing within "
                                                    f"[{HSI_RANGE[0]:g}, {HSI_RANGE[1]:g}] nm")
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise errors.InvalidDataError("Datacube values must be finite and non-negative")
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'wavelengths', wavelengths)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def replace(self, data):
        """New cube of the same modality and wavelength axis holding ``data``."""
        return Datacube(data=data, modality=self.modality, wavelengths=self.wavelengths)


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class ids with ``IGNORE`` (255) for unsure pixels.

    Attributes:
        labels (ndarray): uint8 array of shape (height, width), read-only.
        n_classes (int): If given, every non-IGNORE value is checked to be below it.
    """
    labels: np.ndarray
    n_classes: int = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise errors.DimensionMismatchError(f"Label maps are 2-D, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > IGNORE):
            raise errors.InvalidDataError("Label values must fit in one byte")
        labels = np.array(labels, dtype=np.uint8, order="C")
        if self.n_classes is not None:
            valid = labels[labels != IGNORE]
            if valid.size and valid.max() >= self.n_classes:
                raise errors.InvalidDataError(f"Label {valid.max()} outside [0, {self.n_classes - 1}]")
        labels.setflags(write=False)
        object.__setattr__(self, 'labels', labels)

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    def check_matches(self, cube):
        if (self.height, self.width) != (cube.height, cube.width):
            raise errors.DimensionMismatchError(f"Label map {self.height}x{self.width} does not match cube "
                                                f"{cube.height}x{cube.width}")


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    name: str
    color: str


@dataclass(frozen=True)
class ClassTable:
    """Ordered organ classes. Ids are contiguous from 0 and names are unique."""
    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        if [e.class_id for e in entries] != list(range(len(entries))):
            raise errors.InvalidDataError("Class ids must be contiguous from 0")
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise errors.InvalidDataError("Class names must be unique")
        object.__setattr__(self, 'entries', entries)

    @property
    def n_classes(self):
        return len(self.entries)

    @property
    def names(self):
        return [e.name for e in self.entries]

    @classmethod
    def default(cls, n_classes):
        return cls(tuple(ClassEntry(i, f"organ_{i:02d}", DEFAULT_PALETTE[i % len(DEFAULT_PALETTE)])
                         for i in range(n_classes)))

    def to_json(self):
        return [{"id": e.class_id, "name": e.name, "color": e.color} for e in self.entries]

    @classmethod
    def from_json(cls, obj):
        return cls(tuple(ClassEntry(int(e["id"]), e["name"], e["color"]) for e in obj))


def _write_volume(path, header, array, dtype):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fhandle:
        fhandle.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fhandle.write(np.ascontiguousarray(array).astype(dtype, copy=False).tobytes())


def _read_volume(path, required):
    """Return the parsed header and raw payload of a cube/label file."""
    with open(path, "rb") as fhandle:
        line = fhandle.readline()
        payload = fhandle.read()
    if not line.endswith(b"\n"):
        raise errors.MalformedHeaderError(f"{path}: missing header line")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise errors.MalformedHeaderError(f"{path}: header is not valid JSON ({err})") from err
    if not isinstance(header, dict):
        raise errors.MalformedHeaderError(f"{path}: header must be a JSON object")
    missing = [k for k in required if k not in header]
    if missing:
        raise errors.MalformedHeaderError(f"{path}: header lacks {', '.join(missing)}")
    for key in ("width", "height", "channels"):
        if not isinstance(header[key], int) or header[key] < 1:
            raise errors.MalformedHeaderError(f"{path}: {key} must be a positive integer")
    return header, payload


def _payload_array(path, header, payload, dtype):
    shape = (header["height"], header["width"], header["channels"])
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) < expected:
        raise errors.TruncatedPayloadError(f"{path}: payload has {len(payload)} bytes, header announces {expected}")
    if len(payload) > expected:
        raise errors.DimensionMismatchError(f"{path}: payload has {len(payload)} bytes, header announces {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape)


def write_cube(cube, path):
    """Write a Datacube to ``path`` (float32, little-endian, channel innermost).

    Args:
        cube (Datacube): Cube to write.
        path (str or Path): Output file.
    """
    header = {"width": cube.width, "height": cube.height, "channels": cube.channels,
              "modality": cube.modality, "wavelengths": list(cube.wavelengths)}
    _write_volume(path, header, cube.data, _CUBE_DTYPE)


def read_cube(path):
    """Read a Datacube written by :func:`write_cube`.

    Raises:
        MalformedHeaderError: the header line cannot be parsed.
        DimensionMismatchError: header fields are inconsistent with each other or with the payload size.
        TruncatedPayloadError: the payload is shorter than announced.
    """
    header, payload = _read_volume(path, ("width", "height", "channels", "modality", "wavelengths"))
    modality = header["modality"]
    if modality not in MODALITY_CHANNELS:
        raise errors.MalformedHeaderError(f"{path}: unknown modality {modality!r}")
    if header["channels"] != MODALITY_CHANNELS[modality]:
        raise errors.DimensionMismatchError(f"{path}: {modality} cubes have {MODALITY_CHANNELS[modality]} channels, "
                                            f"header says {header['channels']}")
    if header["wavelengths"] and len(header["wavelengths"]) != header["channels"]:
        raise errors.DimensionMismatchError(f"{path}: {len(header['wavelengths'])} wavelengths for "
                                            f"{header['channels']} channels")
    data = _payload_array(path, header, payload, _CUBE_DTYPE)
    return Datacube(data=data, modality=modality, wavelengths=tuple(header["wavelengths"]))


def write_labels(label_map, path, modality=LABEL_MODALITY):
    labels = label_map.labels if isinstance(label_map, LabelMap) else np.asarray(label_map)
    dtype = 'uint8' if modality == LABEL_MODALITY else 'uint32'
    header = {"width": int(labels.shape[1]), "height": int(labels.shape[0]), "channels": 1, "modality": modality}
    if dtype != 'uint8':
        header["dtype"] = dtype
    _write_volume(path, header, labels, _PAYLOAD_DTYPES[dtype])


def read_labels(path, n_classes=None):
    """Read a LabelMap (8-bit payload)."""
    header, payload = _read_volume(path, ("width", "height", "channels", "modality"))
    if header["channels"] != 1:
        raise errors.DimensionMismatchError(f"{path}: label maps have 1 channel, header says {header['channels']}")
    labels = _payload_array(path, header, payload, _PAYLOAD_DTYPES[header.get("dtype", "uint8")])[..., 0]
    return LabelMap(labels=labels, n_classes=n_classes)


def write_segments(segments, path):
    """Write a superpixel segment-id map as a 32-bit label file."""
    write_labels(np.asarray(segments, dtype=np.uint32), path, modality=SEGMENT_MODALITY)


def read_segments(path):
    header, payload = _read_volume(path, ("width", "height", "channels", "modality"))
    return _payload_array(path, header, payload, _PAYLOAD_DTYPES[header.get("dtype", "uint32")])[..., 0]


def write_scores(scores, path):
    """Write per-pixel softmax scores (height, width, classes) as a raw float32 volume."""
    scores = np.asarray(scores, dtype=np.float32)
    header = {"width": scores.shape[1], "height": scores.shape[0], "channels": scores.shape[2],
              "modality": SCORE_MODALITY}
    _write_volume(path, header, scores, _CUBE_DTYPE)


def read_scores(path):
    header, payload = _read_volume(path, ("width", "height", "channels", "modality"))
    return _payload_array(path, header, payload, _CUBE_DTYPE)


@dataclass(frozen=True)
class ImageRecord:
    """Files belonging to one image of one subject. Paths are absolute."""
    subject: str
    image_id: str
    cube: Path
    label: Path
    modalities: dict = field(default_factory=dict)
    reannotation: Path = None

    def path_for(self, modality):
        if modality == ModalityKW.HSI:
            return self.cube
        return self.modalities[modality]


class DatasetIndex(object):
    """Subjects and their image records, persisted as JSON next to the data.

    Args:
        subjects (dict): Ordered mapping subject id -> list of :class:`ImageRecord`.
        class_table (ClassTable): Organ classes of the dataset.
        root (Path): Directory relative paths are resolved against.
    """
    def __init__(self, subjects, class_table, root=None):
        ids = list(subjects)
        if len(set(ids)) != len(ids):
            raise errors.InvalidDataError("Subject ids must be unique")
        self.subjects = dict(subjects)
        self.class_table = class_table
        self.root = Path(root) if root is not None else None

    @property
    def subject_ids(self):
        return list(self.subjects)

    @property
    def n_classes(self):
        return self.class_table.n_classes

    def images(self, subjects=None):
        """Image records of ``subjects`` (all subjects if None), in index order."""
        subjects = self.subject_ids if subjects is None else subjects
        return [rec for s in subjects for rec in self.subjects[s]]

    def record(self, image_id):
        for rec in self.images():
            if rec.image_id == image_id:
                return rec
        raise KeyError(image_id)

    def subset(self, subjects):
        return DatasetIndex({s: self.subjects[s] for s in subjects}, self.class_table, self.root)

    def to_json(self, root):
        def rel(p):
            return None if p is None else str(Path(p).resolve().relative_to(Path(root).resolve()))
        return {IndexKW.CLASS_TABLE: self.class_table.to_json(),
                IndexKW.SUBJECTS: [{IndexKW.SUBJECT: s,
                                    IndexKW.IMAGES: [{IndexKW.IMAGE_ID: r.image_id, IndexKW.CUBE: rel(r.cube),
                                                      IndexKW.LABEL: rel(r.label),
                                                      IndexKW.MODALITIES: {m: rel(p) for m, p in
                                                                           sorted(r.modalities.items())},
                                                      "reannotation": rel(r.reannotation)}
                                                     for r in recs]}
                                   for s, recs in self.subjects.items()]}

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fhandle:
            json.dump(self.to_json(path.parent), fhandle, indent=2)
            fhandle.write("\n")

    @classmethod
    def load(cls, path, validate=True):
        path = Path(path)
        root = path.parent
        with path.open() as fhandle:
            obj = json.load(fhandle)
        subjects = {}
        for entry in obj[IndexKW.SUBJECTS]:
            s = entry[IndexKW.SUBJECT]
            if s in subjects:
                raise errors.InvalidDataError(f"Duplicate subject id {s!r} in {path}")
            subjects[s] = [ImageRecord(subject=s, image_id=img[IndexKW.IMAGE_ID], cube=root / img[IndexKW.CUBE],
                                       label=root / img[IndexKW.LABEL],
                                       modalities={m: root / p for m, p in img.get(IndexKW.MODALITIES, {}).items()},
                                       reannotation=root / img["reannotation"] if img.get("reannotation") else None)
                           for img in entry[IndexKW.IMAGES]]
        index = cls(subjects, ClassTable.from_json(obj[IndexKW.CLASS_TABLE]), root)
        if validate:
            index.validate()
        return index

    def validate(self):
        """Check that every referenced file exists and parses, with matching dimensions."""
        for rec in self.images():
            for path in [rec.cube, rec.label, *rec.modalities.values()]:
                if not Path(path).is_file():
                    raise FileNotFoundError(f"{rec.image_id}: missing file {path}")
            cube = read_cube(rec.cube)
            read_labels(rec.label, self.n_classes).check_matches(cube)
            for path in rec.modalities.values():
                other = read_cube(path)
                if (other.height, other.width) != (cube.height, cube.width):
                    raise errors.DimensionMismatchError(f"{rec.image_id}: {path} does not match the HSI cube")
        logger.debug(f"Validated {len(self.images())} images from {len(self.subjects)} subjects.")


def class_pixel_counts(index, split):
    """Per-class pixel totals over the images of the subjects in ``split``.

    Args:
        index (DatasetIndex): Dataset.
        split (list): Subject ids.

    Returns:
        ndarray: int64 counts of length ``index.n_classes``; IGNORE pixels are not counted.
    """
    if not split:
        raise errors.EmptySelectionError("class_pixel_counts needs at least one subject")
    return record_pixel_counts(index.images(split), index.n_classes)


def record_pixel_counts(records, n_classes):
    """Per-class pixel totals over the reference label maps of ``records``."""
    counts = np.zeros(n_classes, dtype=np.int64)
    for rec in records:
        labels = read_labels(rec.label).labels
        counts += np.bincount(labels[labels != IGNORE], minlength=n_classes)[:n_classes]
    return counts
