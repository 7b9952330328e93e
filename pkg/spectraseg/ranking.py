"""Bootstrap ranking of algorithms (``kind#modality``) over per-subject test scores."""
import numpy as np
import pandas as pd
from dataclasses import dataclass
from loguru import logger
from pathlib import Path
from scipy.stats import rankdata

from spectraseg import errors

DIRECTIONS = ("maximize", "minimize")


def algorithm_id(kind, modality):
    return f"{kind}#{modality}"


def _check_scores(scores):
    scores = pd.DataFrame(scores)
    if scores.empty or scores.shape[1] == 0:
        raise errors.EmptySelectionError("Ranking needs at least one algorithm and one subject")
    if scores.isna().any().any():
        missing = scores.columns[scores.isna().any()].tolist()
        raise ValueError(f"Missing scores for algorithms {missing}")
    return scores


def _check_direction(direction):
    if direction not in DIRECTIONS:
        raise ValueError(f"Unknown ranking direction {direction!r}, choose among {DIRECTIONS}")


def rank_means(means, direction="maximize"):
    """Rank along the last axis; rank 1 is the best value, ties share their average rank."""
    _check_direction(direction)
    means = np.asarray(means, dtype=np.float64)
    return rankdata(-means if direction == "maximize" else means, method="average", axis=-1)


def scores_from_reports(reports, metric):
    """Subjects x algorithms table of subject-level values.

    Args:
        reports (dict): algorithm id -> :class:`MetricReport` of the same test subjects.
        metric (str): Metric column.
    """
    columns = {alg: report.subjects[metric] for alg, report in reports.items()}
    subject_sets = {tuple(sorted(col.index)) for col in columns.values()}
    if len(subject_sets) > 1:
        raise ValueError("All algorithms must be scored on the same subjects")
    return pd.DataFrame(columns).sort_index()


@dataclass
class RankingTable:
    """Ranks of every algorithm in every bootstrap sample.

    Attributes:
        algorithms (list): Algorithm ids, column order of ``ranks``.
        ranks (ndarray): (n_boot, n_algorithms) ranks.
        direction (str): ``maximize`` or ``minimize``.
    """
    algorithms: list
    ranks: np.ndarray
    direction: str = "maximize"

    @property
    def n_boot(self):
        return len(self.ranks)

    def histogram(self):
        """Algorithm x rank table of bootstrap frequencies; every row sums to ``n_boot``."""
        frame = pd.DataFrame(self.ranks, columns=self.algorithms).melt(var_name="algorithm", value_name="rank")
        counts = frame.groupby(["algorithm", "rank"]).size().unstack(fill_value=0)
        return counts.reindex(self.algorithms)

    def summary(self):
        """Median rank and 95 % interval per algorithm."""
        return pd.DataFrame({"algorithm": self.algorithms,
                             "median_rank": np.median(self.ranks, axis=0),
                             "rank_low": np.percentile(self.ranks, 2.5, axis=0),
                             "rank_high": np.percentile(self.ranks, 97.5, axis=0),
                             "mean_rank": self.ranks.mean(axis=0)})

    def blob_plot(self):
        """Long ``(algorithm, rank, frequency)`` table for blob plots."""
        hist = self.histogram()
        frame = hist.reset_index().melt(id_vars="algorithm", var_name="rank", value_name="frequency")
        frame = frame[frame["frequency"] > 0]
        order = {alg: i for i, alg in enumerate(self.algorithms)}
        return frame.sort_values(["algorithm", "rank"], key=lambda col: col.map(order) if col.name == "algorithm"
                                 else col, kind="stable").reset_index(drop=True)

    def save(self, path_output, name):
        path_output = Path(path_output)
        path_output.mkdir(parents=True, exist_ok=True)
        self.blob_plot().to_csv(path_output / f"{name}_blob.csv", index=False)
        self.summary().to_csv(path_output / f"{name}_summary.csv", index=False)


def bootstrap_ranks(scores, n_boot=1000, sample_size=5, seed=1, direction="maximize", indices=None):
    """Rank algorithms on bootstrap samples of subjects.

    Each sample draws ``sample_size`` subjects with replacement; every algorithm's mean over the drawn subjects is
    ranked. The draw is ``default_rng(seed).integers(0, n_subjects, size=(n_boot, sample_size))``.

    Args:
        scores (DataFrame): Subjects x algorithms values.
        n_boot (int): Number of bootstrap samples.
        sample_size (int): Subjects per sample.
        seed (int): Seed of the subject draws.
        direction (str): ``maximize`` (DSC, NSD) or ``minimize`` (ASD).
        indices (ndarray): Explicit (n_samples, sample_size) subject positions replacing the random draw.

    Returns:
        RankingTable
    """
    _check_direction(direction)
    scores = _check_scores(scores)
    values = scores.to_numpy(dtype=np.float64)
    if indices is None:
        if n_boot < 1 or sample_size < 1:
            raise ValueError("n_boot and sample_size must be positive")
        indices = np.random.default_rng(seed).integers(0, len(values), size=(n_boot, sample_size))
    indices = np.atleast_2d(indices)
    means = values[indices].mean(axis=1)
    table = RankingTable(list(scores.columns), rank_means(means, direction), direction)
    logger.debug(f"Bootstrap ranking of {len(table.algorithms)} algorithms over {table.n_boot} samples")
    return table


def mean_then_rank(scores_per_metric, directions):
    """Rank algorithms per metric on their mean over subjects.

    Args:
        scores_per_metric (dict): metric -> subjects x algorithms DataFrame.
        directions (dict): metric -> ``maximize`` or ``minimize``.

    Returns:
        DataFrame: algorithms x metrics ranks.
    """
    if not scores_per_metric:
        raise errors.EmptySelectionError("mean_then_rank needs at least one metric")
    out = {}
    for metric, scores in scores_per_metric.items():
        scores = _check_scores(scores)
        out[metric] = pd.Series(rank_means(scores.mean(axis=0).to_numpy(), directions[metric]), index=scores.columns)
    return pd.DataFrame(out)


def line_plot(ranks):
    """Long ``(metric, algorithm, rank)`` table of :func:`mean_then_rank` output for line plots."""
    return ranks.rename_axis("algorithm").reset_index().melt(id_vars="algorithm", var_name="metric",
                                                             value_name="rank")[["metric", "algorithm", "rank"]]
