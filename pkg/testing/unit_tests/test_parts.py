import numpy as np
import pytest

from spectraseg.loader import parts as sps_parts
from spectraseg.loader.datacube import IGNORE
from spectraseg.loader.synthetic import SynthConfig, generate_image

N_CLASSES = 4


def _sample(h=24, w=24, seed=0):
    sample = generate_image(SynthConfig(n_subjects=1, images_per_subject=1, n_classes=N_CLASSES, width=w, height=h,
                                        blob_range=(4, 6), seed=seed), 0, 0)
    return sample["HSI"].data, sample["labels"].labels, sample["RGB"]


@pytest.mark.parametrize("height, width, size, expected", [(24, 24, 32, 1), (64, 64, 32, 4), (70, 40, 32, 6),
                                                           (480, 640, 64, 80)])
def test_n_grid_patches(height, width, size, expected):
    assert sps_parts.n_grid_patches(height, width, size) == expected


def test_pixel_parts_cover_valid_pixels_once():
    cube, labels, _ = _sample()
    parts = sps_parts.extract_parts(cube, labels, "pixel", np.random.default_rng(0))
    valid = labels != IGNORE
    assert len(parts) == valid.sum()
    assert parts.inputs.shape == (valid.sum(), 100)
    np.testing.assert_array_equal(np.sort(parts.targets), np.sort(labels[valid]))
    np.testing.assert_allclose(np.sort(parts.inputs.sum(axis=1)), np.sort(cube[valid].sum(axis=1)), rtol=1e-10)


def test_patches_pad_small_images():
    cube, labels, _ = _sample()
    parts = sps_parts.extract_parts(cube, labels, "patch_32", np.random.default_rng(0))
    assert parts.inputs.shape == (1, 100, 32, 32)
    assert parts.targets.shape == (1, 32, 32)
    assert (parts.targets[0, 24:] == IGNORE).all()
    np.testing.assert_array_equal(parts.inputs[0, :, 24:], 0.)
    np.testing.assert_array_equal(parts.targets[0, :24, :24], labels)


def test_patches_count_follows_grid():
    cube, labels, _ = _sample(40, 70)
    parts = sps_parts.extract_parts(cube, labels, "patch_32", np.random.default_rng(1))
    assert len(parts) == 6
    assert parts.inputs.shape[1:] == (100, 32, 32)


def test_image_part():
    cube, labels, _ = _sample()
    parts = sps_parts.extract_parts(cube, labels, "image", np.random.default_rng(0))
    assert parts.inputs.shape == (1, 100, 24, 24)
    np.testing.assert_array_equal(parts.targets[0], labels)


def test_superpixel_parts():
    cube, labels, rgb = _sample()
    params = {"n_segments": 16, "max_num_iter": 10, "sigma": 1.0, "convert2lab": True, "crop_size": 32}
    parts = sps_parts.extract_parts(cube, labels, "superpixel", np.random.default_rng(0), n_classes=N_CLASSES,
                                    rgb=rgb, superpixel_params=params)
    assert len(parts) > 0
    assert parts.inputs.shape[1:] == (100, 32, 32)
    assert parts.targets.shape[1] == N_CLASSES
    np.testing.assert_allclose(parts.targets.sum(axis=1), 1.)


@pytest.mark.parametrize("kind, input_shape", [("pixel", (0, 100)), ("patch_64", (0, 100, 64, 64)),
                                               ("image", (0, 100, 24, 24)), ("superpixel", (0, 100, 32, 32))])
def test_all_ignore_yields_nothing(kind, input_shape):
    cube, labels, rgb = _sample()
    labels = np.full_like(labels, IGNORE)
    parts = sps_parts.extract_parts(cube, labels, kind, np.random.default_rng(0), n_classes=N_CLASSES, rgb=rgb)
    assert len(parts) == 0
    assert parts.inputs.shape == input_shape


def test_take_and_concatenate():
    parts = sps_parts.Parts(np.arange(10.).reshape(5, 2), np.arange(5))
    head = parts.take(0, 2)
    tail = parts.take(2, 5)
    assert len(head) == 2 and len(tail) == 3
    joined = sps_parts.Parts.concatenate([head, tail])
    np.testing.assert_array_equal(joined.inputs, parts.inputs)
    np.testing.assert_array_equal(joined.targets, parts.targets)
