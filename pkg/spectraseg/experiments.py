"""Cross-validation runs, generalization tracking, the training-set-size study and seed variability."""
import itertools
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from pathlib import Path

from spectraseg import errors
from spectraseg import evaluation as sps_evaluation
from spectraseg import inference as sps_inference
from spectraseg import metrics as sps_metrics
from spectraseg import training as sps_training
from spectraseg import utils as sps_utils
from spectraseg.keywords import ConfigKW, DatasetKW, DataSizeKW, EvaluationParamsKW, ModelParamsKW
from spectraseg.loader.split import subject_class_images

KNOWN = "known"
UNKNOWN = "unknown"


def thresholds_from_context(context):
    """NSD tolerances named by ``dataset.path_thresholds``, or None."""
    path = context[ConfigKW.DATASET].get(DatasetKW.PATH_THRESHOLDS)
    if not path:
        return None
    return sps_metrics.ThresholdTable.from_json(sps_utils.load_json(path))


def run_path(path_output, kind, modality, fold=None):
    name = algorithm_dir(kind, modality)
    return Path(path_output, name if fold is None else f"{name}/fold_{fold}")


def algorithm_dir(kind, modality):
    return f"{kind}_{modality}"


def train_fold(context, index, plan, fold, kind, modality, path_output, seed=None):
    """Train one (kind, modality) network on one fold, validated on V_unknown and V_known."""
    images = plan.fold_images(index, fold)
    cfg = sps_training.TrainConfig.from_context(context, kind, modality, index.n_classes, seed=seed)
    val_sets = {UNKNOWN: images[UNKNOWN]}
    if images[KNOWN]:
        val_sets[KNOWN] = images[KNOWN]
    logger.info(f"Fold {fold} {kind}/{modality}: {len(images['train'])} training images, "
                f"{len(images[UNKNOWN])} V_unknown, {len(images[KNOWN])} V_known")
    return sps_training.train(cfg, images["train"], val_sets, run_path(path_output, kind, modality, fold),
                              debugging=context.get(ConfigKW.DEBUGGING, False))


def run_cross_validation(context, index, plan, path_output, kinds=None, modalities=None, n_jobs=1):
    """Train every (fold, kind, modality) combination; runs execute concurrently.

    Returns:
        dict: (kind, modality) -> list of :class:`TrainResult`, one per fold.
    """
    kinds = kinds or context[ConfigKW.MODEL][ModelParamsKW.KINDS]
    modalities = modalities or context[ConfigKW.MODEL][ModelParamsKW.MODALITIES]
    runs = list(itertools.product(kinds, modalities, range(plan.k)))
    logger.info(f"Cross-validation: {len(runs)} training runs")
    results = Parallel(n_jobs=n_jobs)(delayed(train_fold)(context, index, plan, fold, kind, modality, path_output)
                                      for kind, modality, fold in runs)
    out = {}
    for (kind, modality, _), result in zip(runs, results):
        out.setdefault((kind, modality), []).append(result)
    return out


def fold_checkpoints(path_output, kind, modality, k, checkpoint="best"):
    paths = [run_path(path_output, kind, modality, fold) / f"{checkpoint}.ckpt" for fold in range(k)]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise FileNotFoundError(f"Missing checkpoints {missing}")
    return paths


def score_test_subjects(context, index, plan, path_output, kind, modality, checkpoint="best", n_jobs=1):
    """Segment the test subjects with the fold ensemble of one algorithm and score them.

    Predictions and ``metrics.json``/``metrics.csv`` go to ``<path_output>/<kind>_<modality>/test``.

    Returns:
        MetricReport
    """
    evaluation = context[ConfigKW.EVALUATION_PARAMETERS]
    checkpoints = fold_checkpoints(path_output, kind, modality, plan.k, checkpoint)
    if not evaluation[EvaluationParamsKW.ENSEMBLE]:
        checkpoints = checkpoints[:1]
    path_test = run_path(path_output, kind, modality) / "test"
    records = index.images(plan.test_subjects)
    sps_inference.segment_images(checkpoints, records, path_test, superpixel_params=context[ConfigKW.SUPERPIXEL],
                                 n_jobs=n_jobs)
    report = sps_evaluation.evaluate_predictions(index, path_test, thresholds_from_context(context),
                                                 plan.test_subjects,
                                                 evaluation[EvaluationParamsKW.DISTANCE_CUTOVER], n_jobs)
    report.save(path_test)
    return report


def track_generalization(history, known=KNOWN, unknown=UNKNOWN):
    """Per-epoch DSC on V_unknown and V_known with their gap ``known - unknown``.

    Args:
        history (DataFrame or str): Training history or the path of a ``history.csv``.

    Returns:
        DataFrame: ``epoch``, ``dsc_unknown``, ``dsc_known``, ``gap`` columns.
    """
    if not isinstance(history, pd.DataFrame):
        history = pd.read_csv(history)
    col_known, col_unknown = f"val_{known}", f"val_{unknown}"
    if col_known not in history:
        raise errors.EmptySelectionError("The run was not validated on V_known")
    if col_unknown not in history:
        raise errors.EmptySelectionError("The run was not validated on V_unknown")
    gap = pd.DataFrame({"epoch": history["epoch"], "dsc_unknown": history[col_unknown],
                        "dsc_known": history[col_known]})
    gap["gap"] = gap["dsc_known"] - gap["dsc_unknown"]
    return gap


def generalization_table(path_output, kind, modality, k):
    """Gap series of every fold of one algorithm, stacked with a ``fold`` column."""
    frames = []
    for fold in range(k):
        gap = track_generalization(run_path(path_output, kind, modality, fold) / "history.csv")
        gap.insert(0, "fold", fold)
        frames.append(gap)
    return pd.concat(frames, ignore_index=True)


def common_classes(index, subjects):
    """Classes annotated in at least one image of every subject."""
    counts = subject_class_images(index.subset(subjects))
    present = np.stack([counts[s] > 0 for s in subjects]).all(axis=0)
    return [int(c) for c in np.flatnonzero(present)]


def sample_subjects(subjects, sizes, repeats, seed):
    """Subject subsets of each size, drawn without replacement within a draw.

    Identical subsets of one size are kept once, so ``n = len(subjects)`` yields a single run.

    Returns:
        list: ``(n, repeat, subjects)`` tuples.
    """
    n_max = len(subjects)
    draws = []
    for n in sizes:
        if not 1 <= n <= n_max:
            raise ValueError(f"Cannot sample {n} subjects out of {n_max}")
        seen = set()
        for repeat in range(repeats):
            rng = np.random.default_rng([seed, n, repeat])
            chosen = sorted(rng.choice(subjects, size=n, replace=False).tolist())
            if tuple(chosen) in seen:
                continue
            seen.add(tuple(chosen))
            draws.append((n, repeat, chosen))
    return draws


def _datasize_run(context, index, plan, kind, modality, n, repeat, subjects, classes, path_output):
    path_run = Path(path_output, algorithm_dir(kind, modality), f"n_{n}", f"repeat_{repeat}")
    cfg = sps_training.TrainConfig.from_context(context, kind, modality, index.n_classes)
    result = sps_training.train(cfg, index.images(subjects), {}, path_run,
                                debugging=context.get(ConfigKW.DEBUGGING, False))
    evaluation = context[ConfigKW.EVALUATION_PARAMETERS]
    path_test = path_run / "test"
    sps_inference.segment_images([result.checkpoints["best"]], index.images(plan.test_subjects), path_test,
                                 superpixel_params=context[ConfigKW.SUPERPIXEL])
    report = sps_evaluation.evaluate_predictions(index, path_test, thresholds_from_context(context),
                                                 plan.test_subjects,
                                                 evaluation[EvaluationParamsKW.DISTANCE_CUTOVER], classes=classes)
    report.save(path_test)
    row = {"kind": kind, "modality": modality, "n": n, "repeat": repeat, "subjects": " ".join(subjects)}
    row.update({m: report.score(m) for m in report.metrics})
    return row


def run_datasize_study(context, index, plan, path_output, kinds=None, modality=None, n_jobs=1):
    """Train on n sampled training subjects (no folds, no ensembling) and score the test subjects.

    Metrics are restricted to the classes annotated in every training subject unless ``datasize_study.classes``
    names them.

    Returns:
        DataFrame: one row per (kind, n, repeat) with the sampled subjects and the test metrics.
    """
    study = context[ConfigKW.DATASIZE_STUDY]
    kinds = kinds or context[ConfigKW.MODEL][ModelParamsKW.KINDS]
    modality = modality or context[ConfigKW.MODEL][ModelParamsKW.MODALITIES][0]
    subjects = plan.train_subjects
    sizes = study[DataSizeKW.SIZES] or list(range(1, len(subjects)))
    classes = study[DataSizeKW.CLASSES]
    if classes is None:
        classes = common_classes(index, subjects)
    else:
        counts = subject_class_images(index.subset(subjects))
        for c in classes:
            absent = [s for s in subjects if not counts[s][c]]
            if absent:
                raise errors.InfeasibleSplitError(c, f"not annotated in training subjects {absent}")
    if not classes:
        raise errors.EmptySelectionError("No class is annotated in every training subject")
    draws = sample_subjects(subjects, sizes, study[DataSizeKW.REPEATS], context[ConfigKW.SEED])
    logger.info(f"Data size study: {len(draws)} draws x {len(kinds)} kinds on classes {classes}")
    rows = Parallel(n_jobs=n_jobs)(delayed(_datasize_run)(context, index, plan, kind, modality, n, repeat, chosen,
                                                          classes, path_output)
                                   for kind in kinds for n, repeat, chosen in draws)
    table = pd.DataFrame(rows)
    Path(path_output).mkdir(parents=True, exist_ok=True)
    table.to_csv(Path(path_output, "datasize.csv"), index=False)
    return table


def datasize_curves(table):
    """Mean and SD of every metric per (kind, n) across repeats."""
    metrics = [m for m in sps_evaluation.METRICS if m in table]
    return table.groupby(["kind", "n"])[metrics].agg(["mean", "std"]).reset_index()


def metric_ranges(reports):
    """Minimum, maximum and width of the cohort mean of every metric across runs.

    Args:
        reports (list): :class:`MetricReport` of runs differing only in their seed.

    Returns:
        DataFrame: one row per metric.
    """
    if not reports:
        raise errors.EmptySelectionError("No run to compare")
    scores = pd.DataFrame([{m: r.score(m) for m in r.metrics} for r in reports])
    ranges = pd.DataFrame({"metric": scores.columns, "min": scores.min().to_numpy(),
                           "max": scores.max().to_numpy()})
    ranges["width"] = ranges["max"] - ranges["min"]
    return ranges


def seed_variability(context, index, plan, path_output, kind, modality, seeds=(0, 1, 2, 3, 4), n_jobs=1):
    """Train one algorithm on all training subjects with several seeds and report the metric ranges on test."""
    path_output = Path(path_output)
    evaluation = context[ConfigKW.EVALUATION_PARAMETERS]

    def _run(seed):
        path_run = path_output / algorithm_dir(kind, modality) / f"seed_{seed}"
        cfg = sps_training.TrainConfig.from_context(context, kind, modality, index.n_classes, seed=seed)
        result = sps_training.train(cfg, plan.full_training_images(index), {}, path_run)
        sps_inference.segment_images([result.checkpoints["best"]], index.images(plan.test_subjects),
                                     path_run / "test", superpixel_params=context[ConfigKW.SUPERPIXEL])
        return sps_evaluation.evaluate_predictions(index, path_run / "test", thresholds_from_context(context),
                                                   plan.test_subjects,
                                                   evaluation[EvaluationParamsKW.DISTANCE_CUTOVER])

    reports = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(_run)(s) for s in seeds)
    ranges = metric_ranges(reports)
    ranges.to_csv(path_output / f"seed_variability_{algorithm_dir(kind, modality)}.csv", index=False)
    logger.info(f"Seed variability of {kind}/{modality} over {len(seeds)} runs:\n{ranges.to_string(index=False)}")
    return ranges
