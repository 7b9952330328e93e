#!/usr/bin/env python
# -*- coding: utf-8
# pytest unit tests for spectraseg.evaluation

import logging
import numpy as np
import pandas as pd
import pytest
from pathlib import Path

from spectraseg import errors
from spectraseg import evaluation as sps_evaluation
from spectraseg.inference import prediction_path
from spectraseg.loader.datacube import read_labels, write_labels
from spectraseg.utils import load_json
from testing.unit_tests.t_utils import create_tmp_dir, __tmp_dir__
from testing.common_testing_util import remove_tmp_dir

logger = logging.getLogger(__name__)


def setup_function():
    create_tmp_dir()


def _leaves(rows):
    return pd.DataFrame(rows, columns=["subject", "image_id", "class_id", "dsc"])


def test_aggregate_single_image():
    report = sps_evaluation.aggregate(_leaves([("A", "A1", 0, 0.8), ("A", "A1", 1, 0.6)]))
    assert report.score("dsc") == pytest.approx(0.7)
    assert report.metrics == ["dsc"]
    assert report.cohort.loc["dsc", "sd"] == 0.


def test_aggregate_is_hierarchical():
    values = _leaves([("A", "A1", 0, 1.0),
                      ("B", "B1", 0, 0.0), ("B", "B2", 0, 0.0), ("B", "B3", 0, 0.6)])
    report = sps_evaluation.aggregate(values)
    # Subject means 1.0 and 0.2; the image-level mean would be 0.4.
    assert report.subjects.loc["B", "dsc"] == pytest.approx(0.2)
    assert report.score("dsc") == pytest.approx(0.6)
    assert report.cohort.loc["dsc", "sd"] == pytest.approx(0.4)
    assert len(report.images) == 4


def test_aggregate_resolves_asd():
    values = pd.DataFrame({"subject": ["A", "A", "B"], "image_id": ["A1", "A1", "B1"], "class_id": [0, 1, 0],
                           "dsc": [0.9, 0., 0.], "asd": [2., np.nan, np.nan], "nsd": [0.8, 0., 0.],
                           "predicted": [True, False, False]})
    report = sps_evaluation.aggregate(values)
    assert report.values.loc[1, "asd"] == 2.
    assert report.excluded_images == ["B1"]
    # B1 carries no ASD, so the cohort ASD rests on subject A alone.
    assert report.score("asd") == pytest.approx(2.)
    assert report.score("dsc") == pytest.approx(0.225)


@pytest.mark.parametrize("values, subjects", [
    (pd.DataFrame({"subject": ["A"], "class_id": [0], "dsc": [1.]}), None),
    (_leaves([]), None),
    (_leaves([("A", "A1", 0, 1.)]), ["A", "B"]),
])
def test_aggregate_invalid(values, subjects):
    with pytest.raises((ValueError, errors.EmptySelectionError)):
        sps_evaluation.aggregate(values, subjects)


def test_report_flat_and_save():
    values = pd.DataFrame({"subject": ["A", "A", "A"], "image_id": ["A1", "A1", "A2"], "class_id": [0, 1, 0],
                           "dsc": [1., 0.5, 0.5], "nsd": [1., 0., 0.5], "predicted": [True, False, True]})
    report = sps_evaluation.aggregate(values)
    flat = report.flat()
    assert list(flat.columns) == ["subject", "class_id", "metric", "value"]
    assert len(flat) == 2 * 2
    row = flat[(flat["class_id"] == 0) & (flat["metric"] == "dsc")]
    assert row["value"].item() == pytest.approx(0.75)

    report.save(__tmp_dir__, "test")
    saved = load_json(Path(__tmp_dir__, "test.json"))
    assert saved["cohort"]["dsc"]["mean"] == pytest.approx(report.score("dsc"))
    assert saved["missing_classes"] == [{"subject": "A", "image_id": "A1", "class_id": 1}]
    assert len(pd.read_csv(Path(__tmp_dir__, "test.csv"))) == 4


def test_hierarchical_score():
    ref = np.array([[0, 1]])
    assert sps_evaluation.hierarchical_score([("A", "A1", ref, ref)]) == 1.
    pairs = [("A", "A1", np.array([[0, 0]]), ref), ("B", "B1", ref, ref)]
    assert sps_evaluation.hierarchical_score(pairs) == pytest.approx((1 / 3 + 1) / 2)
    assert sps_evaluation.hierarchical_score([("A", "A1", ref, ref)], metric="asd") == 0.


def test_evaluate_predictions_identity():
    index = create_tmp_dir(generate_data_testing=True)
    path_pred = Path(__tmp_dir__, "predictions")
    for rec in index.images():
        write_labels(read_labels(rec.label), prediction_path(path_pred, rec))
    report = sps_evaluation.evaluate_predictions(index, path_pred, thresholds=1., n_jobs=2)
    assert report.score("dsc") == 1.
    assert report.score("asd") == 0.
    assert report.score("nsd") == 1.
    assert sorted(report.subjects.index) == index.subject_ids
    assert report.excluded_images == []

    class_id = int(report.values.loc[report.values["subject"] == "S01", "class_id"].max())
    subset = sps_evaluation.evaluate_predictions(index, path_pred, thresholds=1., subjects=["S01"],
                                                 classes=[class_id])
    assert set(subset.values["class_id"]) == {class_id}
    assert list(subset.subjects.index) == ["S01"]

    prediction_path(path_pred, index.images()[0]).unlink()
    with pytest.raises(FileNotFoundError):
        sps_evaluation.evaluate_predictions(index, path_pred)


def test_performance_limit_report(monkeypatch):
    index = create_tmp_dir(generate_data_testing=True)
    monkeypatch.setenv("SPECTRASEG_CACHE", str(Path(__tmp_dir__, "cache")))
    params = {"n_segments": 16, "max_num_iter": 5, "sigma": 1.0, "convert2lab": True, "crop_size": 32}
    report = sps_evaluation.performance_limit_report(index, params, thresholds=1., subjects=["S01", "S02"])
    assert 0. < report.score("dsc") <= 1.
    assert report.values["nsd"].between(0., 1.).all()
    assert list(report.subjects.index) == ["S01", "S02"]


def test_select_quantile_images():
    first = pd.DataFrame({"image_id": ["a", "b", "c"], "dsc": [0.1, 0.5, 0.9]})
    second = pd.DataFrame({"image_id": ["a", "b", "c"], "dsc": [0.3, 0.5, 0.7]})
    selection = sps_evaluation.select_quantile_images([first, second], quantiles=(0., 0.5, 1.))
    assert selection == {0.: "a", 0.5: "b", 1.: "c"}
    with pytest.raises(errors.EmptySelectionError):
        sps_evaluation.select_quantile_images([])


def teardown_function():
    remove_tmp_dir()
