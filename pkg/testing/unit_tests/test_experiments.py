#!/usr/bin/env python
# -*- coding: utf-8
# pytest unit tests for spectraseg.experiments

import copy
import logging
import numpy as np
import pandas as pd
import pytest
from pathlib import Path

from spectraseg import errors
from spectraseg import evaluation as sps_evaluation
from spectraseg import experiments as sps_experiments
from spectraseg import metrics as sps_metrics
from spectraseg.config_manager import ConfigurationManager
from spectraseg.loader.split import make_splits
from spectraseg.utils import save_json
from testing.unit_tests.t_utils import create_tmp_dir, __tmp_dir__
from testing.common_testing_util import remove_tmp_dir

logger = logging.getLogger(__name__)


def setup_function():
    create_tmp_dir()


def _context(**training):
    context = copy.deepcopy(ConfigurationManager().get_config())
    context["training_parameters"].update({"epochs": 1, "batch_size": {"pixel": 64}, "epoch_size": {"pixel": 128},
                                           "augmentation": {"applied": False}})
    context["training_parameters"].update(training)
    context["loader_parameters"].update({"n_workers": 2, "buffer_capacity": 2})
    context["model"].update({"kinds": ["pixel"], "modalities": ["RGB"]})
    context["datasize_study"].update({"sizes": [1, 3], "repeats": 2})
    return context


def _index_and_plan():
    index = create_tmp_dir(generate_data_testing=True, n_subjects=5, n_classes=3)
    return index, make_splits(index, k=2, n_test=1, seed=6, n_candidates=50)


def test_run_path():
    assert sps_experiments.run_path("out", "patch_32", "TPI") == Path("out", "patch_32_TPI")
    assert sps_experiments.run_path("out", "pixel", "HSI", 3) == Path("out", "pixel_HSI", "fold_3")


def test_track_generalization():
    history = pd.DataFrame({"epoch": [0, 1], "loss": [1., 0.5], "val_unknown": [0.4, 0.6],
                            "val_known": [0.5, 0.9]})
    gap = sps_experiments.track_generalization(history)
    assert list(gap.columns) == ["epoch", "dsc_unknown", "dsc_known", "gap"]
    np.testing.assert_allclose(gap["gap"], [0.1, 0.3])
    with pytest.raises(errors.EmptySelectionError):
        sps_experiments.track_generalization(history.drop(columns="val_known"))
    with pytest.raises(errors.EmptySelectionError):
        sps_experiments.track_generalization(history.drop(columns="val_unknown"))


@pytest.mark.parametrize("sizes, repeats", [([1, 2], 3), ([4], 5), ([2, 4], 1)])
def test_sample_subjects(sizes, repeats):
    subjects = ["S01", "S02", "S03", "S04"]
    draws = sps_experiments.sample_subjects(subjects, sizes, repeats, seed=0)
    assert draws == sps_experiments.sample_subjects(subjects, sizes, repeats, seed=0)
    for n in sizes:
        chosen = [tuple(d[2]) for d in draws if d[0] == n]
        assert 1 <= len(chosen) <= repeats
        assert len(set(chosen)) == len(chosen)
        assert all(len(c) == n and list(c) == sorted(c) and len(set(c)) == n for c in chosen)
    if 4 in sizes:
        assert len([d for d in draws if d[0] == 4]) == 1


@pytest.mark.parametrize("sizes", [[0], [5]])
def test_sample_subjects_invalid(sizes):
    with pytest.raises(ValueError):
        sps_experiments.sample_subjects(["S01", "S02", "S03", "S04"], sizes, 2, seed=0)


def test_datasize_curves():
    table = pd.DataFrame({"kind": ["pixel"] * 3, "n": [1, 1, 2], "repeat": [0, 1, 0], "dsc": [0.2, 0.4, 0.7],
                          "asd": [3., 5., 1.]})
    curves = sps_experiments.datasize_curves(table)
    assert curves[("dsc", "mean")].tolist() == pytest.approx([0.3, 0.7])
    assert curves[("asd", "std")].iloc[0] == pytest.approx(np.std([3., 5.], ddof=1))


def test_metric_ranges():
    def report(dsc):
        return sps_evaluation.aggregate(pd.DataFrame({"subject": ["A"], "image_id": ["A1"], "class_id": [0],
                                                      "dsc": [dsc]}))

    ranges = sps_experiments.metric_ranges([report(0.5), report(0.8), report(0.6)])
    row = ranges.set_index("metric").loc["dsc"]
    assert row["min"] == 0.5 and row["max"] == 0.8
    assert row["width"] == pytest.approx(0.3)
    with pytest.raises(errors.EmptySelectionError):
        sps_experiments.metric_ranges([])


def test_thresholds_from_context():
    context = _context()
    assert sps_experiments.thresholds_from_context(context) is None
    path = Path(__tmp_dir__, "thresholds.json")
    save_json(sps_metrics.ThresholdTable(tau={0: 1.5, 2: 3.}).to_json(), path)
    context["dataset"]["path_thresholds"] = str(path)
    assert sps_experiments.thresholds_from_context(context).tau == {0: 1.5, 2: 3.}


def test_common_classes():
    index, _ = _index_and_plan()
    classes = sps_experiments.common_classes(index, index.subject_ids)
    assert classes == sorted(classes)
    for c in classes:
        assert 0 <= c < 3


def test_cross_validation_and_test_scoring():
    index, plan = _index_and_plan()
    path_output = Path(__tmp_dir__, "cv")
    context = _context()
    with pytest.raises(FileNotFoundError):
        sps_experiments.fold_checkpoints(path_output, "pixel", "RGB", plan.k)
    results = sps_experiments.run_cross_validation(context, index, plan, path_output)
    assert list(results) == [("pixel", "RGB")]
    assert len(results[("pixel", "RGB")]) == 2
    assert len(sps_experiments.fold_checkpoints(path_output, "pixel", "RGB", plan.k)) == 2

    table = sps_experiments.generalization_table(path_output, "pixel", "RGB", plan.k)
    assert table["fold"].tolist() == [0, 1]
    np.testing.assert_allclose(table["gap"], table["dsc_known"] - table["dsc_unknown"])

    report = sps_experiments.score_test_subjects(context, index, plan, path_output, "pixel", "RGB")
    assert list(report.subjects.index) == plan.test_subjects
    assert 0. <= report.score("dsc") <= 1.
    path_test = sps_experiments.run_path(path_output, "pixel", "RGB") / "test"
    assert (path_test / "metrics.json").is_file()
    assert len(list(path_test.rglob("*_pred.lbl"))) == len(index.images(plan.test_subjects))


def test_datasize_study():
    index, plan = _index_and_plan()
    path_output = Path(__tmp_dir__, "datasize")
    context = _context()
    context["datasize_study"]["sizes"] = [1, len(plan.train_subjects)]
    table = sps_experiments.run_datasize_study(context, index, plan, path_output)
    assert (path_output / "datasize.csv").is_file()
    assert set(table["n"]) == {1, len(plan.train_subjects)}
    assert (table["n"] == len(plan.train_subjects)).sum() == 1
    assert {"kind", "modality", "repeat", "subjects", "dsc", "asd"} <= set(table.columns)
    assert table["dsc"].between(0., 1.).all()


def test_seed_variability():
    index, plan = _index_and_plan()
    path_output = Path(__tmp_dir__, "seeds")
    ranges = sps_experiments.seed_variability(_context(), index, plan, path_output, "pixel", "RGB", seeds=(0, 1))
    assert set(ranges["metric"]) == {"dsc", "asd", "nsd"}
    dsc = ranges.set_index("metric").loc["dsc"]
    assert dsc["width"] >= 0.
    assert (path_output / "seed_variability_pixel_RGB.csv").is_file()


def teardown_function():
    remove_tmp_dir()
