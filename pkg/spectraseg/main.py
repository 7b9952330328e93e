import sys
import json
import copy
import argparse
import pandas as pd
from loguru import logger
from pathlib import Path

from spectraseg import __version__
from spectraseg import errors
from spectraseg import evaluation as sps_evaluation
from spectraseg import experiments as sps_experiments
from spectraseg import inference as sps_inference
from spectraseg import metrics as sps_metrics
from spectraseg import models as sps_models
from spectraseg import preprocessing as sps_preprocessing
from spectraseg import ranking as sps_ranking
from spectraseg import superpixel as sps_superpixel
from spectraseg import training as sps_training
from spectraseg import utils as sps_utils
from spectraseg.config_manager import ConfigurationManager
from spectraseg.keywords import ConfigKW, DatasetKW, EvaluationParamsKW, ModalityKW, ModelParamsKW, RankingKW
from spectraseg.loader.datacube import DatasetIndex, read_labels, write_segments
from spectraseg.loader.split import SplitPlan, split_from_context
from spectraseg.loader.synthetic import SynthConfig, generate_synthetic_dataset, synth_config_dict
from spectraseg.utils import Metavar

COMMANDS = ("synth", "preprocess", "slic", "train", "predict", "evaluate", "agreement", "rank", "datasize",
            "report")
CHECKPOINTS = ("best", "swa", "final")
PREPROCESS_MODALITIES = {"hsi": ModalityKW.HSI, "rgb": ModalityKW.RGB, "tpi": ModalityKW.TPI}
SPLIT_FILE = "split.json"
EXIT_ERROR = 1


def get_parser():
    parser = argparse.ArgumentParser(prog="spectraseg", add_help=False,
                                     description="Hyperspectral organ segmentation benchmark.")
    parser.add_argument("command", choices=COMMANDS, help="Pipeline step to run.")

    optional_args = parser.add_argument_group('OPTIONAL ARGUMENTS')
    optional_args.add_argument("-c", "--config", required=False, type=str, metavar=Metavar.file,
                               help="JSON configuration file merged over the package defaults.")
    optional_args.add_argument("--seed", required=False, type=int, metavar=Metavar.int,
                               help="Global seed, overrides the configuration.")
    optional_args.add_argument("-j", "--jobs", dest="jobs", required=False, type=int, metavar=Metavar.int,
                               help="Maximum number of parallel jobs.")
    optional_args.add_argument("-o", "--out", dest="out", required=False, type=str, metavar=Metavar.folder,
                               help="Output folder, overrides 'path_output'.")
    optional_args.add_argument("--scale", required=False, type=float, metavar=Metavar.float,
                               help="Factor applied to every epoch size (desk-scale runs).")
    optional_args.add_argument("--data", dest="data", required=False, type=str, metavar=Metavar.folder,
                               help="Dataset folder containing index.json, overrides 'dataset:path_data'.")
    optional_args.add_argument("--predictions", required=False, type=str, metavar=Metavar.folder,
                               help="Folder of predicted label maps (evaluate).")
    optional_args.add_argument("--subjects", required=False, nargs="+", metavar=Metavar.str,
                               help="Restrict predict/evaluate to these subjects.")
    optional_args.add_argument("--checkpoint", required=False, choices=CHECKPOINTS, default="best",
                               help="Checkpoint of every fold used by predict.")
    optional_args.add_argument("--dry-run", dest="dry_run", action="store_true",
                               help="Validate the configuration and inputs without writing anything.")
    optional_args.add_argument("--gnuplot", action="store_true",
                               help="report: also write gnuplot scripts next to the tables.")
    optional_args.add_argument("--modality", dest="modalities", required=False, nargs="+",
                               choices=PREPROCESS_MODALITIES, metavar=Metavar.str,
                               help="preprocess: modalities to write, among " + ", ".join(PREPROCESS_MODALITIES) +
                                    ". HSI is always written. Default: all.")
    optional_args.add_argument("-h", "--help", action="help", default=argparse.SUPPRESS,
                               help="Shows function documentation.")
    return parser


def get_context(args):
    """Configuration dict with the command-line overrides applied."""
    context = copy.deepcopy(ConfigurationManager(args.config).get_config())
    context[ConfigKW.COMMAND] = args.command
    if args.seed is not None:
        context[ConfigKW.SEED] = args.seed
    if args.jobs is not None:
        if args.jobs < 1:
            raise ValueError(f"--jobs must be positive, got {args.jobs}")
        context[ConfigKW.N_JOBS] = args.jobs
    if args.out is not None:
        context[ConfigKW.PATH_OUTPUT] = args.out
    if args.scale is not None:
        if args.scale <= 0:
            raise ValueError(f"--scale must be positive, got {args.scale}")
        context[ConfigKW.SCALE] = args.scale
    if args.data is not None:
        context[ConfigKW.DATASET][DatasetKW.PATH_DATA] = args.data
    return context


def path_index(context):
    dataset = context[ConfigKW.DATASET]
    return Path(dataset.get(DatasetKW.PATH_INDEX) or Path(dataset[DatasetKW.PATH_DATA], "index.json"))


def load_index(context):
    path = path_index(context)
    if not path.is_file():
        raise FileNotFoundError(f"No dataset index at {path}")
    return DatasetIndex.load(path)


def load_split(context, index):
    """Split saved by ``train`` in the output folder, else the configured or a freshly drawn one."""
    path_split = Path(context[ConfigKW.PATH_OUTPUT], SPLIT_FILE)
    if path_split.is_file() and not context[ConfigKW.DATASET].get(DatasetKW.PATH_SPLIT):
        return SplitPlan.load(path_split, index)
    return split_from_context(context, index)


def algorithms(context):
    model = context[ConfigKW.MODEL]
    return [(kind, modality) for kind in model[ModelParamsKW.KINDS] for modality in model[ModelParamsKW.MODALITIES]]


def check_context(context):
    """Fail early on invalid model, training or loader settings."""
    for kind, modality in algorithms(context):
        if kind not in sps_models.KINDS:
            raise ValueError(f"Unknown model kind {kind!r}, choose among {sps_models.KINDS}")
        if modality not in (ModalityKW.HSI, ModalityKW.RGB, ModalityKW.TPI):
            raise ValueError(f"Unknown modality {modality!r}")
        sps_training.TrainConfig.from_context(context, kind, modality, sps_models.N_CLASSES).loader_config()
    for metric, direction in context[ConfigKW.RANKING][RankingKW.METRICS].items():
        if metric not in sps_evaluation.METRICS:
            raise ValueError(f"Cannot rank on unknown metric {metric!r}")
        sps_ranking.rank_means([0.], direction)
    SynthConfig.from_context(context)


def run_synth(context):
    cfg = SynthConfig.from_context(context)
    path_output = Path(context[ConfigKW.PATH_OUTPUT])
    generate_synthetic_dataset(cfg, path_output, context[ConfigKW.N_JOBS])
    sps_utils.save_json(synth_config_dict(cfg), path_output / "synth_config.json")


def run_preprocess(context, modalities=None):
    """Preprocess the dataset; ``modalities`` are command-line names (hsi, rgb, tpi), all of them when None."""
    index = load_index(context)
    names = PREPROCESS_MODALITIES if not modalities else modalities
    sps_preprocessing.preprocess_dataset(index, context[ConfigKW.PATH_OUTPUT], context[ConfigKW.PREPROCESSING],
                                         modalities=[PREPROCESS_MODALITIES[name] for name in names],
                                         n_jobs=context[ConfigKW.N_JOBS])


def run_slic(context):
    """Superpixel maps of every image and the superpixel performance limit."""
    index = load_index(context)
    path_output = Path(context[ConfigKW.PATH_OUTPUT])
    params = context[ConfigKW.SUPERPIXEL]
    for rec in index.images():
        dec = sps_superpixel.decompose(rec.path_for(ModalityKW.RGB), params)
        write_segments(dec.segments, path_output / rec.subject / f"{rec.image_id}.seg")
    report = sps_evaluation.performance_limit_report(index, params, sps_experiments.thresholds_from_context(context),
                                                     n_jobs=context[ConfigKW.N_JOBS])
    report.save(path_output, "performance_limit")


def run_train(context):
    index = load_index(context)
    path_output = Path(context[ConfigKW.PATH_OUTPUT])
    plan = load_split(context, index)
    plan.save(path_output / SPLIT_FILE)
    results = sps_experiments.run_cross_validation(context, index, plan, path_output,
                                                   n_jobs=context[ConfigKW.N_JOBS])
    for (kind, modality), runs in results.items():
        best = [r.best_score for r in runs]
        logger.info(f"{kind}/{modality}: best validation scores per fold {[round(b, 4) for b in best]}")
        try:
            table = sps_experiments.generalization_table(path_output, kind, modality, plan.k)
        except errors.EmptySelectionError as err:
            logger.warning(f"{kind}/{modality}: {err}")
            continue
        table.to_csv(sps_experiments.run_path(path_output, kind, modality) / "generalization.csv", index=False)


def run_predict(context, checkpoint="best", subjects=None):
    index = load_index(context)
    path_output = Path(context[ConfigKW.PATH_OUTPUT])
    plan = load_split(context, index)
    if subjects is None:
        for kind, modality in algorithms(context):
            report = sps_experiments.score_test_subjects(context, index, plan, path_output, kind, modality,
                                                         checkpoint, context[ConfigKW.N_JOBS])
            logger.info(f"{kind}/{modality} test DSC {report.score():.4f}")
        return
    records = index.images(subjects)
    for kind, modality in algorithms(context):
        checkpoints = sps_experiments.fold_checkpoints(path_output, kind, modality, plan.k, checkpoint)
        if not context[ConfigKW.EVALUATION_PARAMETERS][EvaluationParamsKW.ENSEMBLE]:
            checkpoints = checkpoints[:1]
        sps_inference.segment_images(checkpoints, records,
                                     sps_experiments.run_path(path_output, kind, modality) / "predictions",
                                     superpixel_params=context[ConfigKW.SUPERPIXEL], n_jobs=context[ConfigKW.N_JOBS])


def run_evaluate(context, path_predictions=None, subjects=None):
    index = load_index(context)
    path_predictions = path_predictions or context[ConfigKW.DATASET].get(DatasetKW.PATH_PREDICTIONS)
    if not path_predictions:
        raise FileNotFoundError("evaluate needs --predictions or 'dataset:path_predictions'")
    evaluation = context[ConfigKW.EVALUATION_PARAMETERS]
    report = sps_evaluation.evaluate_predictions(index, path_predictions,
                                                 sps_experiments.thresholds_from_context(context), subjects,
                                                 evaluation[EvaluationParamsKW.DISTANCE_CUTOVER],
                                                 context[ConfigKW.N_JOBS])
    report.save(context[ConfigKW.PATH_OUTPUT])
    logger.info(f"Cohort metrics:\n{report.cohort.to_string()}")
    return report


def run_agreement(context):
    """Estimate the NSD tolerances from the reannotations and score the inter-rater agreement."""
    index = load_index(context)
    path_output = Path(context[ConfigKW.PATH_OUTPUT])
    evaluation = context[ConfigKW.EVALUATION_PARAMETERS]
    cutover = evaluation[EvaluationParamsKW.DISTANCE_CUTOVER]
    records = [rec for rec in index.images() if rec.reannotation is not None]
    if not records:
        raise errors.EmptySelectionError("No image of the index has a reannotation")
    pairs = [(rec.subject, rec.image_id, read_labels(rec.label).labels, read_labels(rec.reannotation).labels)
             for rec in records]
    thresholds = sps_metrics.estimate_thresholds(pairs, index.n_classes,
                                                 evaluation[EvaluationParamsKW.THRESHOLD_AGGREGATION], cutover)
    sps_utils.save_json(thresholds.to_json(), path_output / "thresholds.json")
    frames, changes = [], []
    for subject, image_id, a, b in pairs:
        agreement = sps_metrics.rater_agreement(a, b, index.n_classes, thresholds, cutover)
        values = agreement.values.copy()
        values.insert(0, "image_id", image_id)
        values.insert(0, "subject", subject)
        frames.append(values)
        changes.append({"subject": subject, "image_id": image_id, "new_classes": agreement.new_classes,
                        "missing_classes": agreement.missing_classes})
    values = pd.concat(frames, ignore_index=True)
    values.to_csv(path_output / "agreement.csv", index=False)
    sps_utils.save_json(changes, path_output / "agreement_classes.json")
    summary = values.groupby("class_id")[sps_evaluation.METRICS].agg(["mean", "std"])
    logger.info(f"Inter-rater agreement per class:\n{summary.to_string()}")


def collect_test_reports(path_output):
    """Test-set ``metrics.json`` of every algorithm folder under ``path_output``.

    Returns:
        dict: algorithm id -> parsed report.
    """
    reports = {}
    for path in sorted(Path(path_output).glob("*/test/metrics.json")):
        kind, modality = path.parent.parent.name.rsplit("_", 1)
        reports[sps_ranking.algorithm_id(kind, modality)] = sps_utils.load_json(path)
    if not reports:
        raise errors.EmptySelectionError(f"No test report under {path_output}, run 'predict' first")
    return reports


def subject_scores(reports, metric):
    return pd.DataFrame({alg: pd.Series({s: v[metric] for s, v in report["subjects"].items()})
                         for alg, report in reports.items()}).sort_index()


def run_rank(context):
    path_output = Path(context[ConfigKW.PATH_OUTPUT])
    ranking = context[ConfigKW.RANKING]
    reports = collect_test_reports(path_output)
    directions = ranking[RankingKW.METRICS]
    scores = {}
    for metric, direction in directions.items():
        table = subject_scores(reports, metric)
        if table.isna().any().any():
            logger.warning(f"Skipping {metric}: undefined for some subjects")
            continue
        scores[metric] = table
        boot = sps_ranking.bootstrap_ranks(table, ranking[RankingKW.N_BOOT], ranking[RankingKW.SAMPLE_SIZE],
                                           ranking[RankingKW.SEED], direction)
        boot.save(path_output / "ranking", metric)
        logger.info(f"Bootstrap ranking on {metric}:\n{boot.summary().to_string(index=False)}")
    ranks = sps_ranking.mean_then_rank(scores, directions)
    sps_ranking.line_plot(ranks).to_csv(path_output / "ranking" / "mean_then_rank.csv", index=False)


def run_datasize(context):
    index = load_index(context)
    plan = load_split(context, index)
    path_output = Path(context[ConfigKW.PATH_OUTPUT], "datasize")
    table = sps_experiments.run_datasize_study(context, index, plan, path_output, n_jobs=context[ConfigKW.N_JOBS])
    sps_experiments.datasize_curves(table).to_csv(path_output / "datasize_curves.csv")


GNUPLOT_PERFORMANCE = """set datafile separator ','
set style data histogram
set style fill solid border -1
set ylabel '{metric}'
set xtics rotate by -45
set terminal pngcairo size 800,500
set output '{metric}.png'
plot '< grep ",{metric}," performance.csv' using 3:xtic(1) title 'mean'
"""


def run_report(context, gnuplot=False):
    """Collate the test reports into cohort, per-class and per-image tables."""
    path_output = Path(context[ConfigKW.PATH_OUTPUT])
    path_report = path_output / "report"
    reports = collect_test_reports(path_output)
    cohort_rows, class_rows, image_tables = [], [], []
    for alg, report in reports.items():
        for metric, stats in report["cohort"].items():
            cohort_rows.append({"algorithm": alg, "metric": metric, "mean": stats["mean"], "sd": stats["sd"]})
        values = pd.DataFrame(report["values"])
        per_class = values.groupby("class_id")[[m for m in sps_evaluation.METRICS if m in values]].mean()
        class_rows.append(per_class.reset_index().assign(algorithm=alg))
        image_tables.append(pd.DataFrame(report["images"]).assign(algorithm=alg))
    path_report.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(cohort_rows).to_csv(path_report / "performance.csv", index=False)
    pd.concat(class_rows, ignore_index=True).to_csv(path_report / "per_class.csv", index=False)
    pd.concat(image_tables, ignore_index=True).to_csv(path_report / "per_image.csv", index=False)
    selection = sps_evaluation.select_quantile_images(image_tables)
    sps_utils.save_json({str(q): image_id for q, image_id in selection.items()}, path_report / "quantile_images.json")
    logger.info(f"Images at the DSC quantiles: {selection}")

    for alg_dir in sorted(p for p in path_output.iterdir() if p.is_dir()):
        path_gap = alg_dir / "generalization.csv"
        if path_gap.is_file():
            gap = pd.read_csv(path_gap).groupby("epoch")[["dsc_unknown", "dsc_known", "gap"]].mean()
            gap.to_csv(path_report / f"generalization_{alg_dir.name}.csv")
    if gnuplot:
        for metric in sps_evaluation.METRICS:
            (path_report / f"{metric}.gp").write_text(GNUPLOT_PERFORMANCE.format(metric=metric))
    logger.info(f"Report tables written to {path_report}")


def run_command(context, args=None):
    """Run the command named by ``context['command']``.

    Args:
        context (dict): Configuration with command-line overrides applied.
        args (Namespace): Parsed arguments carrying the command-specific options.
    """
    command = context[ConfigKW.COMMAND]
    dry_run = bool(args is not None and args.dry_run)
    logger.remove()
    if not dry_run:
        path_output = Path(context[ConfigKW.PATH_OUTPUT])
        path_output.mkdir(parents=True, exist_ok=True)
        logger.add(str(path_output / context[ConfigKW.LOG_FILE]))
    logger.add(sys.stdout, level="DEBUG" if context[ConfigKW.DEBUGGING] else "INFO")
    logger.info(f"spectraseg {__version__}: {command}")

    check_context(context)
    if dry_run:
        if command not in ("synth", "rank", "report"):
            load_index(context)
        logger.info("Configuration is valid, nothing written (dry run).")
        return

    sps_utils.save_json(context, Path(context[ConfigKW.PATH_OUTPUT], f"config_{command}.json"))
    if command == "synth":
        run_synth(context)
    elif command == "preprocess":
        run_preprocess(context, args.modalities if args else None)
    elif command == "slic":
        run_slic(context)
    elif command == "train":
        run_train(context)
    elif command == "predict":
        run_predict(context, args.checkpoint if args else "best", args.subjects if args else None)
    elif command == "evaluate":
        run_evaluate(context, args.predictions if args else None, args.subjects if args else None)
    elif command == "agreement":
        run_agreement(context)
    elif command == "rank":
        run_rank(context)
    elif command == "datasize":
        run_datasize(context)
    elif command == "report":
        run_report(context, bool(args and args.gnuplot))


def report_error(err):
    sys.stderr.write(json.dumps({"error": type(err).__name__, "message": str(err)}) + "\n")
    return EXIT_ERROR


def main(args=None):
    """Command-line entry point; returns the exit code.

    Args:
        args (list): Arguments, e.g. ``["synth", "--seed", "7", "--out", "d/"]``; ``sys.argv`` if None.
    """
    try:
        args = sps_utils.get_arguments(get_parser(), args)
        context = get_context(args)
        run_command(context, args)
    except (errors.SpectrasegError, sps_utils.ArgParseException, OSError, ValueError, KeyError) as err:
        logger.error(f"{type(err).__name__}: {err}")
        return report_error(err)
    return 0


def run_main():
    sps_utils.init_spectraseg()
    sys.exit(main())


if __name__ == "__main__":
    run_main()
