import pytest
from pathlib import Path

from spectraseg.config_manager import ConfigurationManager, update
from spectraseg.utils import save_json
from testing.unit_tests.t_utils import create_tmp_dir, __tmp_dir__
from testing.common_testing_util import remove_tmp_dir


def setup_function():
    create_tmp_dir()


def test_update_merges_nested_sections():
    default = {"model": {"kinds": ["pixel"], "dropout": 0.1}, "seed": 0}
    merged = update(default, {"model": {"dropout": 0.3}, "seed": 4, "extra": {"a": 1}})
    assert merged == {"model": {"kinds": ["pixel"], "dropout": 0.3}, "seed": 4, "extra": {"a": 1}}
    # A scalar never replaces a whole section.
    assert update({"model": {"dropout": 0.1}}, {"model": 3}) == {"model": {"dropout": 0.1}}


def test_defaults_only():
    config = ConfigurationManager().get_config()
    assert config["superpixel"]["n_segments"] == 1000
    assert config["split_dataset"]["k_folds"] == 5
    assert config["ranking"]["metrics"] == {"dsc": "maximize", "asd": "minimize", "nsd": "maximize"}


def test_user_config_overrides_and_legacy_keys():
    path = Path(__tmp_dir__, "config.json")
    save_json({"debugging": True, "log_directory": "out_dir", "model": {"kinds": ["image"]},
               "loader_parameters": {"workers": 3}}, path)
    config = ConfigurationManager(str(path)).get_config()
    assert config["path_output"] == "out_dir"
    assert "log_directory" not in config
    assert config["loader_parameters"]["n_workers"] == 3
    assert config["model"]["kinds"] == ["image"]
    assert config["model"]["modalities"] == ["HSI"]


@pytest.mark.parametrize("name, exception", [("missing.json", ValueError), ("folder", IsADirectoryError),
                                             ("config.yaml", ValueError), ("config.txt", ValueError)])
def test_invalid_config_path(name, exception):
    Path(__tmp_dir__, "folder").mkdir()
    for existing in ("config.yaml", "config.txt"):
        Path(__tmp_dir__, existing).write_text("{}")
    with pytest.raises(exception):
        ConfigurationManager(str(Path(__tmp_dir__, name)))


def teardown_function():
    remove_tmp_dir()
