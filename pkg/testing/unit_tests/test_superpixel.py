import logging
import numpy as np
import pytest
from pathlib import Path
from scipy import ndimage

from spectraseg import superpixel as sps_superpixel
from spectraseg.loader.datacube import IGNORE, LabelMap, read_cube
from testing.unit_tests.t_utils import create_tmp_dir, __tmp_dir__
from testing.common_testing_util import remove_tmp_dir

logger = logging.getLogger(__name__)

PARAMS = {"n_segments": 16, "max_num_iter": 10, "sigma": 1.0, "convert2lab": True, "crop_size": 32}


def setup_function():
    create_tmp_dir()


def test_from_segments_relabels():
    dec = sps_superpixel.SuperpixelDecomposition.from_segments(np.array([[5, 5, 9], [9, 9, 7]]))
    np.testing.assert_array_equal(dec.segments, [[0, 0, 2], [2, 2, 1]])
    np.testing.assert_array_equal(dec.counts, [2, 1, 3])
    np.testing.assert_array_equal(dec.bboxes[2], [0, 0, 2, 3])
    np.testing.assert_allclose(dec.centroids[0], [0., 0.5])
    assert dec.n_segments == 3


def test_slico_segments_are_connected():
    index = create_tmp_dir(generate_data_testing=True)
    rgb = read_cube(index.images()[0].modalities["RGB"])
    dec = sps_superpixel.slico(rgb, n_segments=16, sigma=1.)
    assert dec.segments.shape == (24, 24)
    assert dec.segments.min() == 0
    assert set(np.unique(dec.segments)) == set(range(dec.n_segments))
    assert dec.counts.sum() == 24 * 24
    for s in range(dec.n_segments):
        _, n_components = ndimage.label(dec.segments == s)
        assert n_components == 1


@pytest.mark.parametrize("convert2lab", [True, False])
def test_slico_deterministic(convert2lab):
    rgb = np.random.default_rng(0).random((12, 12, 3))
    first = sps_superpixel.slico(rgb, n_segments=9, sigma=1., convert2lab=convert2lab)
    second = sps_superpixel.slico(rgb, n_segments=9, sigma=1., convert2lab=convert2lab)
    np.testing.assert_array_equal(first.segments, second.segments)


def test_slico_more_segments_than_pixels():
    dec = sps_superpixel.slico(np.random.default_rng(0).random((4, 4, 3)), n_segments=100, sigma=0.)
    assert 1 <= dec.n_segments <= 16


def test_fuzzy_labels():
    dec = sps_superpixel.SuperpixelDecomposition.from_segments(np.array([[0, 0, 1], [0, 2, 2]]))
    labels = np.array([[1, 0, IGNORE], [1, 2, 2]])
    freq, empty = sps_superpixel.fuzzy_labels(dec, LabelMap(labels), 3)
    np.testing.assert_allclose(freq, [[1 / 3, 2 / 3, 0.], [0., 0., 0.], [0., 0., 1.]])
    np.testing.assert_array_equal(empty, [False, True, False])
    with pytest.raises(ValueError):
        sps_superpixel.fuzzy_labels(dec, np.zeros((3, 3)), 3)


def test_performance_limit():
    dec = sps_superpixel.SuperpixelDecomposition.from_segments(np.array([[0, 0, 1, 1], [0, 0, 2, 2]]))
    labels = np.array([[1, 0, IGNORE, IGNORE], [0, 1, 2, 1]])
    limit = sps_superpixel.superpixel_performance_limit(dec, labels, 3)
    # Segment 0 ties between classes 0 and 1 and takes the lower id; segment 1 holds only IGNORE.
    np.testing.assert_array_equal(limit.labels, [[0, 0, IGNORE, IGNORE], [0, 0, 1, 1]])


def test_extract_superpixel_cube():
    segments = np.zeros((10, 10), dtype=int)
    segments[2:6, 3:9] = 1
    dec = sps_superpixel.SuperpixelDecomposition.from_segments(segments)
    cube = np.full((10, 10, 4), 0.5)
    crop = sps_superpixel.extract_superpixel_cube(cube, dec, 1, size=32)
    assert crop.shape == (32, 32, 4)
    np.testing.assert_allclose(crop, 0.5)
    # Segment 0 surrounds segment 1: its box is the whole image with the hole zeroed.
    crop = sps_superpixel.extract_superpixel_cube(cube, dec, 0, size=10)
    np.testing.assert_array_equal(crop[2:6, 3:9], 0.)
    np.testing.assert_array_equal(crop[0], 0.5)


def test_decompose_uses_cache(monkeypatch):
    index = create_tmp_dir(generate_data_testing=True)
    path_cache = Path(__tmp_dir__, "cache")
    monkeypatch.setenv("SPECTRASEG_CACHE", str(path_cache))
    rec = index.images()[1]
    first = sps_superpixel.decompose(rec.modalities["RGB"], PARAMS)
    assert len(list(path_cache.rglob("*.seg"))) == 1
    second = sps_superpixel.decompose(rec.modalities["RGB"], PARAMS)
    np.testing.assert_array_equal(first.segments, second.segments)
    with pytest.raises(ValueError):
        sps_superpixel.decompose(rec.cube, PARAMS)


def teardown_function():
    remove_tmp_dir()
