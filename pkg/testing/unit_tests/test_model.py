#!/usr/bin/env python
# -*- coding: utf-8
# pytest unit tests for spectraseg.models and spectraseg.network

import logging
import numpy as np
import pytest
from pathlib import Path

from spectraseg import errors
from spectraseg import models as sps_models
from spectraseg.gradcheck import check_module
from spectraseg.network import count_parameters, read_checkpoint
from testing.unit_tests.t_utils import create_tmp_dir, __tmp_dir__
from testing.common_testing_util import remove_tmp_dir

logger = logging.getLogger(__name__)


def setup_function():
    create_tmp_dir()


@pytest.mark.parametrize("modality, expected", [("HSI", 34275), ("RGB", 27619), ("TPI", 27819)])
def test_pixel_net_parameter_count(modality, expected):
    net = sps_models.build_pixel_net(modality, n_classes=19)
    assert count_parameters(net) == expected


@pytest.mark.parametrize("kind, shape, out_shape", [
    ("pixel", (5, 100), (5, 4)),
    ("superpixel", (3, 100, 32, 32), (3, 4)),
    ("patch_32", (2, 100, 32, 32), (2, 4, 32, 32)),
    ("image", (1, 100, 20, 27), (1, 4, 20, 27)),
])
def test_forward_shapes(kind, shape, out_shape):
    net = sps_models.build_network(sps_models.model_spec(kind, "HSI", n_classes=4, base_channels=2))
    x = np.random.default_rng(0).random(shape)
    assert net.forward(x).shape == out_shape
    assert net.forward(x, train=True).shape == out_shape


def test_unet_pads_to_multiple_of_eight():
    net = sps_models.build_unet("RGB", base_channels=2, n_classes=3)
    x = np.random.default_rng(0).random((1, 3, 13, 9))
    out = net.forward(x, train=True)
    assert out.shape == (1, 3, 13, 9)
    dx = net.backward(np.ones_like(out))
    assert dx.shape == x.shape


def test_model_spec_errors():
    with pytest.raises(ValueError):
        sps_models.model_spec("voxel", "HSI")
    with pytest.raises(ValueError):
        sps_models.model_spec("pixel", "CT")


def test_wrong_input_channels():
    net = sps_models.build_pixel_net("TPI", n_classes=3)
    with pytest.raises(errors.ShapeMismatchError):
        net.forward(np.ones((2, 3)))


@pytest.mark.parametrize("build, shape", [
    (lambda: sps_models.build_pixel_net("HSI", n_classes=3, seed=1), (6, 100)),
    (lambda: sps_models.build_pixel_net("RGB", n_classes=3, seed=1), (6, 3)),
    (lambda: sps_models.build_unet("RGB", base_channels=2, n_classes=3, seed=1), (2, 3, 8, 8)),
    (lambda: sps_models.build_superpixel_net("TPI", base_channels=2, n_classes=3, seed=1), (2, 4, 8, 8)),
])
def test_network_gradients(build, shape):
    net = build()
    x = np.random.default_rng(5).normal(size=shape)
    errs = check_module(net.module, x, seed=2, eps=1e-6, max_checks=8)
    logger.debug(errs)
    assert max(errs.values()) < 1e-4


def test_checkpoint_round_trip():
    net = sps_models.build_unet("TPI", base_channels=2, n_classes=3, seed=4)
    x = np.random.default_rng(0).random((2, 4, 8, 8))
    net.forward(x, train=True)
    path = Path(__tmp_dir__, "net.ckpt")
    sps_models.save_model(net, path)
    loaded = sps_models.load_model(path)
    assert loaded.spec == net.spec
    np.testing.assert_array_equal(loaded.forward(x), net.forward(x))
    spec, arrays = read_checkpoint(path)
    assert spec["kind"] == "image"
    assert any(name.startswith("buffer:") and name.endswith("running_mean") for name in arrays)


def test_checkpoint_truncated():
    net = sps_models.build_pixel_net("RGB", n_classes=3)
    path = Path(__tmp_dir__, "net.ckpt")
    sps_models.save_model(net, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(errors.CheckpointError):
        sps_models.load_model(path)
    path.write_bytes(b"garbage\n")
    with pytest.raises(errors.CheckpointError):
        read_checkpoint(path)


def test_build_is_deterministic():
    first = sps_models.build_pixel_net("HSI", n_classes=5, seed=3)
    second = sps_models.build_pixel_net("HSI", n_classes=5, seed=3)
    for (_, a), (_, b) in zip(first.named_parameters(), second.named_parameters()):
        np.testing.assert_array_equal(a.value, b.value)
    x = np.random.default_rng(0).random((4, 100))
    np.testing.assert_array_equal(first.forward(x, train=True), second.forward(x, train=True))


def teardown_function():
    remove_tmp_dir()
