#!/usr/bin/env python
# -*- coding: utf-8
# pytest unit tests for spectraseg.ranking

import logging
import numpy as np
import pandas as pd
import pytest
from pathlib import Path
from scipy.stats import rankdata

from spectraseg import errors
from spectraseg import evaluation as sps_evaluation
from spectraseg import ranking as sps_ranking
from testing.unit_tests.t_utils import create_tmp_dir, __tmp_dir__
from testing.common_testing_util import remove_tmp_dir

logger = logging.getLogger(__name__)

SUBJECTS = ["S01", "S02", "S03", "S04", "S05", "S06"]


def setup_function():
    create_tmp_dir()


def _scores(seed=0, n_algorithms=4):
    rng = np.random.default_rng(seed)
    return pd.DataFrame(rng.random((len(SUBJECTS), n_algorithms)), index=SUBJECTS,
                        columns=[sps_ranking.algorithm_id(k, "HSI") for k in ["pixel", "patch_32", "patch_64",
                                                                             "image"][:n_algorithms]])


def _reference_ranks(scores, n_boot, sample_size, seed, direction):
    values = scores.to_numpy()
    draws = np.random.default_rng(seed).integers(0, len(values), size=(n_boot, sample_size))
    ranks = []
    for draw in draws:
        means = values[draw].mean(axis=0)
        ranks.append(rankdata(-means if direction == "maximize" else means, method="average"))
    return np.array(ranks)


def test_algorithm_id():
    assert sps_ranking.algorithm_id("patch_32", "TPI") == "patch_32#TPI"


@pytest.mark.parametrize("direction", ["maximize", "minimize"])
def test_bootstrap_matches_reference(direction):
    scores = _scores()
    table = sps_ranking.bootstrap_ranks(scores, n_boot=200, sample_size=5, seed=1, direction=direction)
    expected = _reference_ranks(scores, 200, 5, 1, direction)
    np.testing.assert_array_equal(table.ranks, expected)
    hist = table.histogram()
    assert list(hist.index) == list(scores.columns)
    assert (hist.sum(axis=1) == 200).all()
    ref_counts = pd.Series(expected[:, 0]).value_counts()
    for rank, count in ref_counts.items():
        assert hist.loc[scores.columns[0], rank] == count


def test_single_algorithm_always_first():
    table = sps_ranking.bootstrap_ranks(_scores(n_algorithms=1), n_boot=50, sample_size=3)
    assert (table.ranks == 1).all()


def test_dominant_algorithm_always_first():
    scores = _scores()
    scores["best#HSI"] = scores.max(axis=1) + 0.1
    table = sps_ranking.bootstrap_ranks(scores, n_boot=100, sample_size=2, seed=3)
    assert (table.ranks[:, -1] == 1).all()
    minimized = sps_ranking.bootstrap_ranks(-scores, n_boot=100, sample_size=2, seed=3, direction="minimize")
    np.testing.assert_array_equal(minimized.ranks, table.ranks)


def test_invariant_under_monotone_transform():
    scores = _scores(5)
    table = sps_ranking.bootstrap_ranks(scores, n_boot=100, sample_size=1, seed=2)
    # Single-subject samples keep the ordering of any strictly increasing transform.
    transformed = sps_ranking.bootstrap_ranks(np.exp(3. * scores), n_boot=100, sample_size=1, seed=2)
    np.testing.assert_array_equal(table.ranks, transformed.ranks)


def test_identity_sample_equals_mean_then_rank():
    scores = _scores(7)
    indices = np.arange(len(SUBJECTS))[None]
    table = sps_ranking.bootstrap_ranks(scores, indices=indices)
    assert table.n_boot == 1
    ranks = sps_ranking.mean_then_rank({"dsc": scores}, {"dsc": "maximize"})
    np.testing.assert_array_equal(table.ranks[0], ranks["dsc"].to_numpy())


def test_mean_then_rank_ties_and_direction():
    scores = pd.DataFrame({"a#HSI": [1., 3.], "b#HSI": [2., 2.], "c#HSI": [0., 1.]}, index=["S01", "S02"])
    ranks = sps_ranking.mean_then_rank({"dsc": scores, "asd": scores}, {"dsc": "maximize", "asd": "minimize"})
    assert ranks.loc[:, "dsc"].tolist() == [1.5, 1.5, 3.]
    assert ranks.loc[:, "asd"].tolist() == [2.5, 2.5, 1.]
    long = sps_ranking.line_plot(ranks)
    assert list(long.columns) == ["metric", "algorithm", "rank"]
    assert len(long) == 6
    with pytest.raises(errors.EmptySelectionError):
        sps_ranking.mean_then_rank({}, {})


@pytest.mark.parametrize("kwargs, exception", [
    ({"scores": pd.DataFrame()}, errors.EmptySelectionError),
    ({"scores": pd.DataFrame({"a#HSI": [1., np.nan]})}, ValueError),
    ({"scores": pd.DataFrame({"a#HSI": [1.]}), "n_boot": 0}, ValueError),
    ({"scores": pd.DataFrame({"a#HSI": [1.]}), "sample_size": 0}, ValueError),
    ({"scores": pd.DataFrame({"a#HSI": [1.]}), "direction": "up"}, ValueError),
])
def test_bootstrap_invalid(kwargs, exception):
    with pytest.raises(exception):
        sps_ranking.bootstrap_ranks(**kwargs)


def test_summary_blob_plot_and_save():
    scores = _scores(9)
    table = sps_ranking.bootstrap_ranks(scores, n_boot=40, sample_size=3, seed=4)
    summary = table.summary()
    assert list(summary["algorithm"]) == list(scores.columns)
    assert (summary["rank_low"] <= summary["median_rank"]).all()
    assert (summary["median_rank"] <= summary["rank_high"]).all()
    blob = table.blob_plot()
    assert (blob["frequency"] > 0).all()
    assert blob.groupby("algorithm")["frequency"].sum().eq(40).all()
    assert blob["algorithm"].iloc[0] == scores.columns[0]
    table.save(__tmp_dir__, "dsc")
    assert Path(__tmp_dir__, "dsc_blob.csv").is_file()
    assert len(pd.read_csv(Path(__tmp_dir__, "dsc_summary.csv"))) == 4


def test_scores_from_reports():
    def report(values):
        leaves = pd.DataFrame({"subject": list(values), "image_id": [s + "_I01" for s in values],
                               "class_id": 0, "dsc": list(values.values())})
        return sps_evaluation.aggregate(leaves)

    reports = {"pixel#HSI": report({"S02": 0.5, "S01": 0.7}), "image#RGB": report({"S01": 0.6, "S02": 0.9})}
    scores = sps_ranking.scores_from_reports(reports, "dsc")
    assert list(scores.index) == ["S01", "S02"]
    assert scores.loc["S02", "image#RGB"] == pytest.approx(0.9)
    reports["patch_32#TPI"] = report({"S01": 0.1})
    with pytest.raises(ValueError):
        sps_ranking.scores_from_reports(reports, "dsc")


def teardown_function():
    remove_tmp_dir()
