#!/usr/bin/env python
# -*- coding: utf-8
# pytest unit tests for spectraseg.transforms

import numpy as np
import pytest

from spectraseg import transforms as sps_transforms
from spectraseg.loader.datacube import IGNORE
from spectraseg.transforms import AugmentParams

ALWAYS = {"applied": True, "probability": 1.0, "shift_limit": 0.0625, "scale_limit": 0.1, "rotate_limit": 45,
          "flip": True}


def _image(h=7, w=9, c=3, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((h, w, c)), rng.integers(0, 4, size=(h, w)).astype(np.uint8)


def test_sample_not_applied_is_identity():
    params = sps_transforms.sample_augmentation(np.random.default_rng(0), {**ALWAYS, "applied": False})
    assert params.is_identity


def test_sample_within_limits():
    rng = np.random.default_rng(1)
    for _ in range(20):
        params = sps_transforms.sample_augmentation(rng, ALWAYS)
        assert abs(params.shift[0]) <= 0.0625 and abs(params.shift[1]) <= 0.0625
        assert 0.9 <= params.scale <= 1.1
        assert abs(params.angle) <= 45
        assert params.flip and params.flip_v
    params = sps_transforms.sample_augmentation(np.random.default_rng(1), {**ALWAYS, "flip": False})
    assert not params.flip and not params.flip_v


def test_identity_returns_inputs():
    cube, labels = _image()
    out_labels, out_cube = sps_transforms.apply_augmentation(AugmentParams(), labels, cube)
    np.testing.assert_array_equal(out_labels, labels)
    np.testing.assert_array_equal(out_cube, cube)


def test_flip_is_exact():
    cube, labels = _image()
    other = cube[..., :1] * 2
    out_labels, out_cube, out_other = sps_transforms.apply_augmentation(AugmentParams(flip=True), labels, cube, other)
    np.testing.assert_array_equal(out_labels, labels[:, ::-1])
    np.testing.assert_array_equal(out_cube, cube[:, ::-1])
    np.testing.assert_array_equal(out_other, other[:, ::-1])


def test_vertical_flip_is_exact():
    cube, labels = _image()
    out_labels, out_cube = sps_transforms.apply_augmentation(AugmentParams(flip_v=True), labels, cube)
    np.testing.assert_array_equal(out_labels, labels[::-1])
    np.testing.assert_array_equal(out_cube, cube[::-1])


def test_both_flips_twice_is_identity():
    cube, labels = _image()
    both = AugmentParams(flip=True, flip_v=True)
    once = sps_transforms.apply_augmentation(both, labels, cube)
    np.testing.assert_array_equal(once[0], labels[::-1, ::-1])
    out_labels, out_cube = sps_transforms.apply_augmentation(both, *once)
    np.testing.assert_array_equal(out_labels, labels)
    np.testing.assert_array_equal(out_cube, cube)


def test_both_flips_undo_half_turn():
    cube, labels = _image()
    params = AugmentParams(angle=180., flip=True, flip_v=True)
    out_labels, out_cube = sps_transforms.apply_augmentation(params, labels, cube)
    np.testing.assert_array_equal(out_labels, labels)
    np.testing.assert_allclose(out_cube, cube, atol=1e-9)


def test_half_turn():
    cube, labels = _image()
    out_labels, out_cube = sps_transforms.apply_augmentation(AugmentParams(angle=180.), labels, cube)
    np.testing.assert_array_equal(out_labels, labels[::-1, ::-1])
    np.testing.assert_allclose(out_cube, cube[::-1, ::-1], atol=1e-9)


def test_zoom_out_fills_outside():
    cube, labels = _image(9, 9)
    out_labels, out_cube = sps_transforms.apply_augmentation(AugmentParams(scale=0.5), labels, cube)
    assert out_labels[0, 0] == IGNORE
    np.testing.assert_array_equal(out_cube[0, 0], 0.)
    # The center pixel is a fixed point.
    assert out_labels[4, 4] == labels[4, 4]
    np.testing.assert_allclose(out_cube[4, 4], cube[4, 4])


def test_shift_moves_content():
    cube, labels = _image(8, 8)
    out_labels, _ = sps_transforms.apply_augmentation(AugmentParams(shift=(0.25, 0.)), labels, cube)
    np.testing.assert_array_equal(out_labels[2:], labels[:-2])
    assert (out_labels[:2] == IGNORE).all()


def test_augment_shared_transform_and_determinism():
    cube, labels = _image()
    rgb = cube * 0.5
    first = sps_transforms.augment(cube, labels, 7, ALWAYS, rgb)
    second = sps_transforms.augment(cube, labels, np.random.default_rng(7), ALWAYS, rgb)
    assert len(first) == 3
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)
    out_cube, out_labels, out_rgb = first
    assert out_cube.shape == cube.shape and out_labels.shape == labels.shape
    np.testing.assert_allclose(out_rgb, out_cube * 0.5)


@pytest.mark.parametrize("params", [AugmentParams(angle=30.), AugmentParams(scale=1.1, flip=True),
                                    AugmentParams(shift=(0.05, -0.05), angle=-10.)])
def test_labels_stay_in_label_set(params):
    cube, labels = _image(12, 12)
    out_labels, _ = sps_transforms.apply_augmentation(params, labels, cube)
    assert set(np.unique(out_labels)) <= set(np.unique(labels)) | {IGNORE}
