"""Per-class segmentation metrics: DSC, symmetric ASD and NSD with class-specific tolerances.

All label maps are 2-D class-id arrays (or :class:`LabelMap`). IGNORE pixels of either map are removed from both
class masks before any metric is computed. Boundaries use 4-connectivity; pixels on the image edge count as boundary.
"""
import numpy as np
import pandas as pd
from dataclasses import dataclass, field
from loguru import logger
from scipy import ndimage
from scipy.spatial import cKDTree
from sklearn.metrics import confusion_matrix

from spectraseg import errors
from spectraseg.keywords import MetricsKW
from spectraseg.loader.datacube import IGNORE, LabelMap

DISTANCE_CUTOVER = 10000
CROSS = ndimage.generate_binary_structure(2, 1)
AGGREGATIONS = {"mean": np.mean, "median": np.median, "q95": lambda values: np.quantile(values, 0.95)}


def _as_array(label_map):
    return label_map.labels if isinstance(label_map, LabelMap) else np.asarray(label_map)


def _valid_pair(pred, ref):
    pred, ref = _as_array(pred), _as_array(ref)
    if pred.shape != ref.shape:
        raise ValueError(f"Shape mismatch: prediction {pred.shape} vs reference {ref.shape}")
    return pred, ref, (pred != IGNORE) & (ref != IGNORE)


def class_masks(pred, ref, class_id):
    """Boolean masks of ``class_id`` in prediction and reference, IGNORE removed from both.

    Raises:
        ClassNotInReferenceError: the reference holds no valid pixel of ``class_id``.
    """
    pred, ref, valid = _valid_pair(pred, ref)
    mask_ref = (ref == class_id) & valid
    if not mask_ref.any():
        raise errors.ClassNotInReferenceError(f"Class {class_id} is not annotated in the reference")
    return (pred == class_id) & valid, mask_ref


def dice_coefficient(mask_pred, mask_ref):
    """2|P∩R| / (|P| + |R|) of two boolean masks; NaN when both are empty."""
    total = mask_pred.sum() + mask_ref.sum()
    if total == 0:
        return np.nan
    return 2. * np.logical_and(mask_pred, mask_ref).sum() / total


def dsc(pred, ref, class_id):
    """Dice similarity coefficient of one class. 0 when the class was not predicted."""
    return float(dice_coefficient(*class_masks(pred, ref, class_id)))


def boundary_mask(mask):
    """Pixels of ``mask`` with at least one 4-neighbour outside the mask or on the image edge."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise errors.EmptyMaskError("Cannot compute the boundary of an empty mask")
    return mask & ~ndimage.binary_erosion(mask, structure=CROSS, border_value=0)


def boundary(mask):
    """Boundary pixel coordinates of ``mask`` as an (n, 2) int array of (row, col), row-major order."""
    return np.argwhere(boundary_mask(mask))


def nearest_distances(points, target_mask, cutover=DISTANCE_CUTOVER):
    """Euclidean distance from every point to the nearest pixel of ``target_mask``.

    Small targets are searched exactly with a k-d tree, larger ones through an exact Euclidean distance transform.
    """
    points = np.asarray(points).reshape(-1, 2)
    n_target = int(np.count_nonzero(target_mask))
    if n_target == 0:
        raise errors.EmptyMaskError("Distance to an empty boundary is undefined")
    if n_target < cutover:
        distances, _ = cKDTree(np.argwhere(target_mask)).query(points)
        return np.asarray(distances, dtype=np.float64)
    edt = ndimage.distance_transform_edt(~np.asarray(target_mask, dtype=bool))
    return edt[points[:, 0], points[:, 1]].astype(np.float64)


def boundary_distances(mask_pred, mask_ref, cutover=DISTANCE_CUTOVER):
    """Nearest-boundary distances in both directions.

    Returns:
        ndarray, ndarray: distances from every predicted boundary pixel to the reference boundary and from every
        reference boundary pixel to the predicted boundary.
    """
    b_pred, b_ref = boundary_mask(mask_pred), boundary_mask(mask_ref)
    return (nearest_distances(np.argwhere(b_pred), b_ref, cutover),
            nearest_distances(np.argwhere(b_ref), b_pred, cutover))


def asd_from_distances(d_pred, d_ref):
    """Symmetric average surface distance of two distance sets."""
    return float((np.sum(d_pred) + np.sum(d_ref)) / (len(d_pred) + len(d_ref)))


def nsd_from_distances(d_pred, d_ref, tau):
    """Fraction of boundary distances not larger than ``tau``, pooled over both directions."""
    d_pred, d_ref = np.asarray(d_pred), np.asarray(d_ref)
    return float((np.count_nonzero(d_pred <= tau) + np.count_nonzero(d_ref <= tau)) / (len(d_pred) + len(d_ref)))


def asd(pred, ref, class_id, cutover=DISTANCE_CUTOVER):
    """Symmetric average surface distance of one class, in pixels.

    Returns:
        float: NaN when the class was not predicted; see :func:`resolve_missing_asd`.
    """
    mask_pred, mask_ref = class_masks(pred, ref, class_id)
    if not mask_pred.any():
        return np.nan
    return asd_from_distances(*boundary_distances(mask_pred, mask_ref, cutover))


def nsd(pred, ref, class_id, tau, cutover=DISTANCE_CUTOVER):
    """Normalized surface distance of one class with tolerance ``tau`` (a number or a :class:`ThresholdTable`).

    Raises:
        MissingThresholdError: no tolerance is available for ``class_id``.
    """
    tau = tau[class_id] if isinstance(tau, ThresholdTable) else tau
    if tau is None:
        raise errors.MissingThresholdError(f"No NSD tolerance for class {class_id}")
    mask_pred, mask_ref = class_masks(pred, ref, class_id)
    if not mask_pred.any():
        return 0.
    return nsd_from_distances(*boundary_distances(mask_pred, mask_ref, cutover), tau)


def reference_classes(ref, n_classes=None):
    """Sorted class ids annotated in ``ref`` (IGNORE excluded)."""
    ids = np.unique(_as_array(ref))
    ids = ids[ids != IGNORE]
    if n_classes is not None:
        ids = ids[ids < n_classes]
    return [int(i) for i in ids]


def image_metrics(pred, ref, thresholds=None, n_classes=None, cutover=DISTANCE_CUTOVER):
    """DSC, ASD and NSD for every class annotated in ``ref``.

    Args:
        pred (ndarray): Predicted class ids.
        ref (ndarray): Reference class ids.
        thresholds (ThresholdTable or float): NSD tolerances; NSD is NaN for classes without one.
        n_classes (int): Ignore reference ids beyond this count.
        cutover (int): Boundary size above which distances use a distance transform.

    Returns:
        DataFrame: one row per reference class with ``class_id``, ``dsc``, ``asd``, ``nsd`` and ``predicted``;
        unresolved ASD placeholders are NaN.
    """
    pred, ref, valid = _valid_pair(pred, ref)
    rows = []
    for class_id in reference_classes(np.where(valid, ref, IGNORE), n_classes):
        mask_pred, mask_ref = class_masks(pred, ref, class_id)
        row = {"class_id": class_id, MetricsKW.DSC: float(dice_coefficient(mask_pred, mask_ref)),
               MetricsKW.ASD: np.nan, MetricsKW.NSD: 0., "predicted": bool(mask_pred.any())}
        tau = thresholds.get(class_id) if isinstance(thresholds, ThresholdTable) else thresholds
        if row["predicted"]:
            d_pred, d_ref = boundary_distances(mask_pred, mask_ref, cutover)
            row[MetricsKW.ASD] = asd_from_distances(d_pred, d_ref)
            row[MetricsKW.NSD] = np.nan if tau is None else nsd_from_distances(d_pred, d_ref, tau)
        elif tau is None:
            row[MetricsKW.NSD] = np.nan
        rows.append(row)
    return pd.DataFrame(rows, columns=["class_id", MetricsKW.DSC, MetricsKW.ASD, MetricsKW.NSD, "predicted"])


def resolve_missing_asd(values):
    """Replace the ASD of unpredicted classes by the maximum ASD of the other classes of the same image.

    Args:
        values (DataFrame): Leaf values with ``subject``, ``image_id``, ``asd`` and ``predicted`` columns.

    Returns:
        DataFrame, list: resolved copy and the ids of images where no class was predicted (their ASD stays NaN).
    """
    values = values.copy()
    image_max = values.groupby(["subject", "image_id"])[MetricsKW.ASD].transform("max")
    missing = ~values["predicted"].astype(bool)
    values.loc[missing, MetricsKW.ASD] = image_max[missing]
    excluded = sorted(values.loc[values[MetricsKW.ASD].isna() & missing, "image_id"].unique())
    for image_id in excluded:
        logger.warning(f"{image_id}: no reference class was predicted, image excluded from ASD aggregation.")
    return values, list(excluded)


@dataclass
class ThresholdTable:
    """Class-specific NSD tolerances estimated from pairs of annotations.

    Attributes:
        tau (dict): class id -> tolerance in pixels.
        per_image (DataFrame): ``subject``, ``image_id``, ``class_id``, ``tau_i`` rows the tolerances derive from.
        aggregation (str): ``mean``, ``median`` or ``q95``.
        subject_sd (dict): class id -> SD across subjects of the per-subject aggregated tolerance.
        undefined (list): classes never annotated in both images of a pair.
    """
    tau: dict
    per_image: pd.DataFrame = field(default_factory=pd.DataFrame)
    aggregation: str = "mean"
    subject_sd: dict = field(default_factory=dict)
    undefined: list = field(default_factory=list)

    def __getitem__(self, class_id):
        try:
            return self.tau[int(class_id)]
        except KeyError:
            raise errors.MissingThresholdError(f"No NSD tolerance for class {class_id}") from None

    def get(self, class_id, default=None):
        return self.tau.get(int(class_id), default)

    def to_json(self):
        return {"aggregation": self.aggregation,
                "tau": {str(k): v for k, v in sorted(self.tau.items())},
                "subject_sd": {str(k): v for k, v in sorted(self.subject_sd.items())},
                "undefined": list(self.undefined),
                "per_image": self.per_image.to_dict(orient="records")}

    @classmethod
    def from_json(cls, obj):
        return cls(tau={int(k): float(v) for k, v in obj["tau"].items()},
                   per_image=pd.DataFrame(obj.get("per_image", [])),
                   aggregation=obj.get("aggregation", "mean"),
                   subject_sd={int(k): float(v) for k, v in obj.get("subject_sd", {}).items()},
                   undefined=[int(c) for c in obj.get("undefined", [])])


def estimate_thresholds(pairs, n_classes, aggregation="mean", cutover=DISTANCE_CUTOVER):
    """Estimate one NSD tolerance per class from annotation/re-annotation pairs.

    For every pair and every class annotated in both maps, the boundary distances of both directions are pooled
    and reduced by ``aggregation`` to one value ``tau_i``. The tolerance of a class is the mean of its ``tau_i``
    over all pairs. Classes annotated in only one map of a pair are skipped for that pair.

    Args:
        pairs (iterable): ``(subject, image_id, annotation, reannotation)`` tuples.
        n_classes (int): Number of classes.
        aggregation (str): ``mean``, ``median`` or ``q95`` over the pooled distances of one pair.
        cutover (int): See :func:`nearest_distances`.

    Returns:
        ThresholdTable
    """
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"Unknown threshold aggregation {aggregation!r}, choose among {sorted(AGGREGATIONS)}")
    func = AGGREGATIONS[aggregation]
    rows = []
    for subject, image_id, ann_a, ann_b in pairs:
        a, b = _remove_ignore_union(ann_a, ann_b)
        for class_id in sorted(set(reference_classes(a, n_classes)) & set(reference_classes(b, n_classes))):
            d_a, d_b = boundary_distances(a == class_id, b == class_id, cutover)
            rows.append({"subject": subject, "image_id": image_id, "class_id": class_id,
                         "tau_i": float(func(np.concatenate([d_a, d_b])))})
    if not rows:
        raise errors.EmptySelectionError("No class is annotated in both images of any pair")
    per_image = pd.DataFrame(rows)
    tau = {int(c): float(group["tau_i"].mean()) for c, group in per_image.groupby("class_id")}
    per_subject = per_image.groupby(["class_id", "subject"])["tau_i"].mean()
    subject_sd = {int(c): float(np.std(v.to_numpy())) for c, v in per_subject.groupby(level="class_id")}
    undefined = [c for c in range(n_classes) if c not in tau]
    if undefined:
        logger.warning(f"No NSD tolerance for classes {undefined}: never annotated in both images of a pair.")
    return ThresholdTable(tau=tau, per_image=per_image, aggregation=aggregation, subject_sd=subject_sd,
                          undefined=undefined)


def confusion(preds, refs, subjects, n_classes):
    """Row-normalized confusion matrix averaged over subjects.

    Counts are summed over the images of each subject and every row holding reference pixels is divided by its
    sum. Subjects without pixels of a reference class do not contribute to that row.

    Args:
        preds (list): Predicted label maps.
        refs (list): Reference label maps, same order.
        subjects (list): Subject id of every image.
        n_classes (int): Number of classes.

    Returns:
        ndarray: (n_classes, n_classes) matrix, reference class along rows; rows never annotated are NaN.
    """
    labels = np.arange(n_classes)
    counts = {}
    for pred, ref, subject in zip(preds, refs, subjects):
        pred, ref, valid = _valid_pair(pred, ref)
        valid &= ref < n_classes
        cm = confusion_matrix(ref[valid], pred[valid], labels=labels)
        counts[subject] = counts.get(subject, 0) + cm
    if not counts:
        raise errors.EmptySelectionError("confusion needs at least one image")
    normalized = []
    for cm in counts.values():
        totals = cm.sum(axis=1, keepdims=True)
        normalized.append(np.divide(cm, totals, out=np.full(cm.shape, np.nan), where=totals > 0))
    stacked = np.stack(normalized)
    defined = ~np.isnan(stacked).all(axis=0)
    out = np.full((n_classes, n_classes), np.nan)
    out[defined] = np.nanmean(stacked[:, defined], axis=0)
    return out


def _remove_ignore_union(ann_a, ann_b):
    a, b, valid = _valid_pair(ann_a, ann_b)
    return np.where(valid, a, IGNORE), np.where(valid, b, IGNORE)


@dataclass
class Agreement:
    """Agreement between two annotations of one image.

    Attributes:
        values (DataFrame): ``class_id``, ``dsc``, ``asd``, ``nsd`` for classes annotated in both maps.
        new_classes (list): classes annotated only in the second map.
        missing_classes (list): classes annotated only in the first map.
    """
    values: pd.DataFrame
    new_classes: list
    missing_classes: list


def rater_agreement(ann_a, ann_b, n_classes=None, thresholds=None, cutover=DISTANCE_CUTOVER):
    """Per-class DSC, ASD and NSD between two annotations after removing the union of their IGNORE pixels."""
    a, b = _remove_ignore_union(ann_a, ann_b)
    classes_a, classes_b = set(reference_classes(a, n_classes)), set(reference_classes(b, n_classes))
    rows = []
    for class_id in sorted(classes_a & classes_b):
        mask_a, mask_b = a == class_id, b == class_id
        d_a, d_b = boundary_distances(mask_a, mask_b, cutover)
        tau = thresholds.get(class_id) if isinstance(thresholds, ThresholdTable) else thresholds
        rows.append({"class_id": class_id, MetricsKW.DSC: float(dice_coefficient(mask_a, mask_b)),
                     MetricsKW.ASD: asd_from_distances(d_a, d_b),
                     MetricsKW.NSD: np.nan if tau is None else nsd_from_distances(d_a, d_b, tau)})
    values = pd.DataFrame(rows, columns=["class_id", MetricsKW.DSC, MetricsKW.ASD, MetricsKW.NSD])
    return Agreement(values, sorted(classes_b - classes_a), sorted(classes_a - classes_b))
