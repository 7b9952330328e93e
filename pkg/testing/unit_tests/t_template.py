# -*- coding: utf-8 -*-
"""Unit test skeleton

Copy this file to ``test_<module>.py`` when adding tests for ``spectraseg/<module>.py``. It is not
collected by pytest.

Data:
    ``create_tmp_dir(generate_data_testing=True)`` writes a small synthetic dataset (4 subjects,
    3 images each, 24x24 pixels, 4 classes) under ``tmp/data_testing``; ``DatasetIndex.load`` on its
    ``index.json`` gives the records. Tests that only need arrays should build them inline instead.
    ::

        tmp/
        | --- data_testing/
        |     | --- index.json
        |     | --- S01/ ... S04/

    ``remove_tmp_dir`` deletes ``tmp`` after every test, nothing is shared between tests.

Run:
    ``pytest testing/unit_tests/test_<module>.py``
"""

import logging
from pathlib import Path

from spectraseg.loader.datacube import DatasetIndex
from testing.unit_tests.t_utils import create_tmp_dir, __data_testing_dir__, __tmp_dir__
from testing.common_testing_util import remove_tmp_dir

logger = logging.getLogger(__name__)


def setup_function():
    create_tmp_dir(generate_data_testing=True)


def test_template():
    index = DatasetIndex.load(Path(__data_testing_dir__, "index.json"))
    logger.info(index.subject_ids)

    # Outputs go under tmp
    path_out = Path(__tmp_dir__, "my_output_dir")
    path_out.mkdir()
    assert path_out.is_dir()


def teardown_function():
    remove_tmp_dir()
