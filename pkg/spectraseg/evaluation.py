"""Hierarchical evaluation: class values are averaged per image, images per subject, subjects across the cohort."""
import numpy as np
import pandas as pd
from dataclasses import dataclass, field
from joblib import Parallel, delayed
from loguru import logger
from pathlib import Path

from spectraseg import errors
from spectraseg import inference as sps_inference
from spectraseg import metrics as sps_metrics
from spectraseg import superpixel as sps_superpixel
from spectraseg import utils as sps_utils
from spectraseg.keywords import MetricsKW, ModalityKW
from spectraseg.loader.datacube import read_labels

METRICS = [MetricsKW.DSC, MetricsKW.ASD, MetricsKW.NSD]
LEAF_COLUMNS = ["subject", "image_id", "class_id"]


def _hierarchy(values, metrics):
    images = values.groupby(["subject", "image_id"])[metrics].mean().reset_index()
    subjects = images.groupby("subject")[metrics].mean()
    cohort = pd.DataFrame({"mean": subjects.mean(), "sd": subjects.std(ddof=0)})
    return images, subjects, cohort


@dataclass
class MetricReport:
    """Metric values at every aggregation level.

    Attributes:
        values (DataFrame): one row per (subject, image, class) with ASD placeholders resolved.
        images (DataFrame): class means per image.
        subjects (DataFrame): image means per subject, indexed by subject.
        cohort (DataFrame): mean and SD across subjects, indexed by metric.
        excluded_images (list): images without any predicted reference class, left out of ASD.
    """
    values: pd.DataFrame
    images: pd.DataFrame
    subjects: pd.DataFrame
    cohort: pd.DataFrame
    excluded_images: list = field(default_factory=list)

    @property
    def metrics(self):
        return list(self.cohort.index)

    def score(self, metric=MetricsKW.DSC):
        """Cohort mean of ``metric``."""
        return float(self.cohort.loc[metric, "mean"])

    def flat(self):
        """One row per subject x class x metric, the value being the mean over the subject's images."""
        per_class = self.values.groupby(["subject", "class_id"])[self.metrics].mean().reset_index()
        return per_class.melt(id_vars=["subject", "class_id"], value_vars=self.metrics, var_name="metric",
                              value_name="value").sort_values(["subject", "class_id", "metric"], kind="stable")

    def to_json(self):
        missing = self.values.loc[~self.values["predicted"].astype(bool), LEAF_COLUMNS] \
            if "predicted" in self.values else self.values.iloc[:0][LEAF_COLUMNS]
        return {"cohort": {m: {"mean": float(self.cohort.loc[m, "mean"]), "sd": float(self.cohort.loc[m, "sd"])}
                           for m in self.metrics},
                "subjects": {s: {m: float(row[m]) for m in self.metrics} for s, row in self.subjects.iterrows()},
                "images": self.images.to_dict(orient="records"),
                "values": self.values.to_dict(orient="records"),
                "missing_classes": missing.to_dict(orient="records"),
                "excluded_images": list(self.excluded_images)}

    def save(self, path_output, name="metrics"):
        """Write ``<name>.json`` and the flat ``<name>.csv`` into ``path_output``."""
        path_output = Path(path_output)
        path_output.mkdir(parents=True, exist_ok=True)
        sps_utils.save_json(self.to_json(), path_output / f"{name}.json")
        self.flat().to_csv(path_output / f"{name}.csv", index=False)
        logger.info(f"Metric report written to {path_output / name}.json/.csv")


def aggregate(values, subjects=None):
    """Aggregate leaf metric values class -> image -> subject -> cohort.

    Args:
        values (DataFrame): rows keyed by ``subject``, ``image_id``, ``class_id`` with one column per metric and a
            ``predicted`` flag; ASD of unpredicted classes may be NaN.
        subjects (list): Subjects expected in the report.

    Returns:
        MetricReport
    """
    for column in LEAF_COLUMNS:
        if column not in values:
            raise ValueError(f"Metric values lack the {column!r} column")
    if subjects is not None:
        empty = sorted(set(subjects) - set(values["subject"]))
        if empty:
            raise errors.EmptySelectionError(f"Subjects without any evaluated image: {empty}")
    if values.empty:
        raise errors.EmptySelectionError("No metric value to aggregate")
    values = values.copy()
    if "predicted" not in values:
        values["predicted"] = True
    metrics = [m for m in METRICS if m in values]
    excluded = []
    if MetricsKW.ASD in metrics:
        values, excluded = sps_metrics.resolve_missing_asd(values)
    images, per_subject, cohort = _hierarchy(values, metrics)
    return MetricReport(values.reset_index(drop=True), images, per_subject, cohort, excluded)


def _evaluate_pair(subject, image_id, pred, ref, thresholds, n_classes, cutover):
    values = sps_metrics.image_metrics(pred, ref, thresholds=thresholds, n_classes=n_classes, cutover=cutover)
    values.insert(0, "image_id", image_id)
    values.insert(0, "subject", subject)
    return values


def evaluate_pairs(pairs, thresholds=None, n_classes=None, cutover=sps_metrics.DISTANCE_CUTOVER, n_jobs=1):
    """Leaf metric values of ``(subject, image_id, prediction, reference)`` tuples."""
    frames = Parallel(n_jobs=n_jobs)(delayed(_evaluate_pair)(s, i, p, r, thresholds, n_classes, cutover)
                                     for s, i, p, r in pairs)
    if not frames:
        raise errors.EmptySelectionError("No image to evaluate")
    return pd.concat(frames, ignore_index=True)


def hierarchical_score(pairs, n_classes=None, metric=MetricsKW.DSC):
    """Cohort mean of the DSC over ``(subject, image_id, prediction, reference)`` tuples.

    Used as the validation score during training; only DSC is computed.
    """
    if metric != MetricsKW.DSC:
        return aggregate(evaluate_pairs(pairs, n_classes=n_classes)).score(metric)
    rows = []
    for subject, image_id, pred, ref in pairs:
        for class_id in sps_metrics.reference_classes(ref, n_classes):
            rows.append({"subject": subject, "image_id": image_id, "class_id": class_id,
                         MetricsKW.DSC: sps_metrics.dsc(pred, ref, class_id)})
    if not rows:
        raise errors.EmptySelectionError("No annotated class in the validation images")
    _, _, cohort = _hierarchy(pd.DataFrame(rows), [MetricsKW.DSC])
    return float(cohort.loc[MetricsKW.DSC, "mean"])


def evaluate_predictions(index, path_predictions, thresholds=None, subjects=None,
                         cutover=sps_metrics.DISTANCE_CUTOVER, n_jobs=1, classes=None):
    """Evaluate the predicted label maps stored under ``path_predictions`` against the index references.

    Only reference classes in ``classes`` are scored when it is given.

    Returns:
        MetricReport
    """
    subjects = index.subject_ids if subjects is None else subjects
    pairs = []
    for rec in index.images(subjects):
        path_pred = sps_inference.prediction_path(path_predictions, rec)
        if not path_pred.is_file():
            raise FileNotFoundError(f"{rec.image_id}: no prediction at {path_pred}")
        pairs.append((rec.subject, rec.image_id, read_labels(path_pred).labels, read_labels(rec.label).labels))
    logger.info(f"Evaluating {len(pairs)} predictions from {path_predictions}")
    values = evaluate_pairs(pairs, thresholds=thresholds, n_classes=index.n_classes, cutover=cutover, n_jobs=n_jobs)
    if classes is not None:
        values = values[values["class_id"].isin(list(classes))]
    return aggregate(values, subjects)


def performance_limit_report(index, superpixel_params, thresholds=None, subjects=None,
                             cutover=sps_metrics.DISTANCE_CUTOVER, n_jobs=1):
    """Score the best achievable superpixel segmentation (modal reference class per segment)."""
    subjects = index.subject_ids if subjects is None else subjects
    pairs = []
    for rec in index.images(subjects):
        ref = read_labels(rec.label)
        dec = sps_superpixel.decompose(rec.path_for(ModalityKW.RGB), superpixel_params)
        limit = sps_superpixel.superpixel_performance_limit(dec, ref, index.n_classes)
        pairs.append((rec.subject, rec.image_id, limit.labels, ref.labels))
    values = evaluate_pairs(pairs, thresholds=thresholds, n_classes=index.n_classes, cutover=cutover, n_jobs=n_jobs)
    return aggregate(values, subjects)


def select_quantile_images(image_tables, quantiles=(0.05, 0.5, 0.95), metric=MetricsKW.DSC):
    """Images whose score, averaged across models, lies closest to the given quantiles.

    Args:
        image_tables (list): ``MetricReport.images`` frames of several models.
        quantiles (tuple): Quantiles in [0, 1].
        metric (str): Metric column.

    Returns:
        dict: quantile -> image id.
    """
    if not image_tables:
        raise errors.EmptySelectionError("No model to select images from")
    stacked = pd.concat(image_tables, ignore_index=True)
    mean = stacked.groupby("image_id")[metric].mean().dropna()
    selection = {}
    for q in quantiles:
        target = np.quantile(mean.to_numpy(), q)
        selection[q] = str((mean - target).abs().sort_values(kind="stable").index[0])
    return selection
