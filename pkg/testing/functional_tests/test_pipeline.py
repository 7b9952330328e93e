import logging
import pandas as pd
from pathlib import Path

from spectraseg import main as sps_main
from spectraseg.loader.split import SplitPlan
from spectraseg.utils import load_json
from testing.functional_tests.t_utils import FUNCTIONAL_CONFIG, __tmp_dir__, create_tmp_dir, write_config
from testing.common_testing_util import remove_tmp_dir

logger = logging.getLogger(__name__)

PATH_DATA = Path(__tmp_dir__, "data")
PATH_OUT = Path(__tmp_dir__, "benchmark")


def setup_function():
    create_tmp_dir()


def _run(command, path_config, *extra):
    return sps_main.main([command, "-c", path_config, "--data", str(PATH_DATA), "--out", str(PATH_OUT), *extra])


def test_train_predict_rank_report():
    training = dict(FUNCTIONAL_CONFIG["training_parameters"], batch_size={"pixel": 64, "image": 4},
                    epoch_size={"pixel": 256, "image": 8})
    path_config = write_config(Path(__tmp_dir__, "config.json"),
                               model={"kinds": ["pixel", "image"], "modalities": ["RGB"]},
                               training_parameters=training,
                               datasize_study={"sizes": [1], "repeats": 1},
                               dataset={"path_thresholds": str(PATH_OUT / "thresholds.json")})
    assert sps_main.main(["synth", "-c", path_config, "--seed", "3", "--out", str(PATH_DATA)]) == 0
    assert _run("agreement", path_config) == 0
    assert _run("train", path_config) == 0

    plan = SplitPlan.load(PATH_OUT / "split.json")
    assert plan.k == 2 and len(plan.test_subjects) == 1
    for algorithm in ("pixel_RGB", "image_RGB"):
        for fold in range(2):
            path_fold = PATH_OUT / algorithm / f"fold_{fold}"
            assert (path_fold / "best.ckpt").is_file() and (path_fold / "swa.ckpt").is_file()
            assert len(pd.read_csv(path_fold / "history.csv")) == 2
        assert (PATH_OUT / algorithm / "generalization.csv").is_file()

    assert _run("predict", path_config) == 0
    for algorithm in ("pixel_RGB", "image_RGB"):
        metrics = load_json(PATH_OUT / algorithm / "test" / "metrics.json")
        assert list(metrics["subjects"]) == plan.test_subjects
        assert 0. <= metrics["cohort"]["dsc"]["mean"] <= 1.

    assert _run("rank", path_config) == 0
    blob = pd.read_csv(PATH_OUT / "ranking" / "dsc_blob.csv")
    assert set(blob["algorithm"]) <= {"pixel#RGB", "image#RGB"}
    assert blob.groupby("algorithm")["frequency"].sum().eq(50).all()
    lines = pd.read_csv(PATH_OUT / "ranking" / "mean_then_rank.csv")
    assert "dsc" in set(lines["metric"])

    assert _run("report", path_config, "--gnuplot") == 0
    performance = pd.read_csv(PATH_OUT / "report" / "performance.csv")
    assert set(performance["algorithm"]) == {"pixel#RGB", "image#RGB"}
    assert (PATH_OUT / "report" / "dsc.gp").is_file()
    assert set(load_json(PATH_OUT / "report" / "quantile_images.json")) == {"0.05", "0.5", "0.95"}


def test_datasize_command():
    path_config = write_config(Path(__tmp_dir__, "config.json"), datasize_study={"sizes": [1, 2], "repeats": 2})
    assert sps_main.main(["synth", "-c", path_config, "--seed", "3", "--out", str(PATH_DATA)]) == 0
    assert _run("datasize", path_config) == 0
    table = pd.read_csv(PATH_OUT / "datasize" / "datasize.csv")
    assert set(table["n"]) == {1, 2}
    assert len(table) <= 4
    assert (PATH_OUT / "datasize" / "datasize_curves.csv").is_file()


def teardown_function():
    remove_tmp_dir()
