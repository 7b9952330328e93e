#!/usr/bin/env python
# -*- coding: utf-8
# pytest unit tests for spectraseg.layers: finite differences plus a torch forward oracle when torch is installed

import logging
import numpy as np
import pytest

from spectraseg import errors
from spectraseg import gradcheck as sps_gradcheck
from spectraseg import layers as sps_layers

logger = logging.getLogger(__name__)

TOLERANCE = 1e-5


def _rng(seed=0):
    return np.random.default_rng(seed)


@pytest.mark.parametrize("module, shape", [
    (sps_layers.Linear(6, 4, _rng()), (5, 6)),
    (sps_layers.Conv1d(2, 3, 5, _rng()), (3, 2, 12)),
    (sps_layers.Conv1d(2, 3, 3, _rng(), padding=1), (2, 2, 7)),
    (sps_layers.AvgPool1d(2), (2, 3, 9)),
    (sps_layers.Conv2d(2, 3, 3, _rng()), (2, 2, 5, 6)),
    (sps_layers.MaxPool2d(), (2, 2, 4, 6)),
    (sps_layers.BilinearUpsample(), (1, 2, 3, 4)),
    (sps_layers.BatchNorm(3), (6, 3)),
    (sps_layers.BatchNorm(2), (3, 2, 4, 4)),
    (sps_layers.ELU(), (4, 5)),
    (sps_layers.Dropout(0.3, seed=1), (4, 5)),
    (sps_layers.Flatten(), (2, 3, 4)),
    (sps_layers.GlobalAvgPool2d(), (2, 3, 4, 5)),
    (sps_layers.Sequential(sps_layers.Linear(4, 6, _rng(1)), sps_layers.BatchNorm(6), sps_layers.ELU(),
                           sps_layers.Dropout(0.2), sps_layers.Linear(6, 3, _rng(2))), (8, 4)),
])
def test_layer_gradients(module, shape):
    x = _rng(3).normal(size=shape)
    errs = sps_gradcheck.check_module(module, x, seed=0)
    logger.debug(errs)
    assert max(errs.values()) < TOLERANCE


def test_gradcheck_relative_error():
    assert sps_gradcheck.relative_error(np.zeros(3), np.zeros(3)) == 0.
    assert sps_gradcheck.relative_error(np.ones(3), np.ones(3)) == 0.
    assert sps_gradcheck.relative_error(np.ones(3), -np.ones(3)) == pytest.approx(1.)


def test_numerical_gradient_quadratic():
    a = np.array([1., -2., 3.])
    grad = sps_gradcheck.numerical_gradient(lambda: float((a ** 2).sum()), a)
    np.testing.assert_allclose(grad, 2 * np.array([1., -2., 3.]), rtol=1e-6)
    np.testing.assert_array_equal(a, [1., -2., 3.])


def test_backward_before_forward():
    layer = sps_layers.Linear(3, 2, _rng())
    with pytest.raises(errors.BackwardBeforeForwardError):
        layer.backward(np.ones((1, 2)))
    layer.forward(np.ones((1, 3)), train=False)
    with pytest.raises(errors.BackwardBeforeForwardError):
        layer.backward(np.ones((1, 2)))


@pytest.mark.parametrize("module, x", [
    (sps_layers.Linear(3, 2, _rng()), np.ones((2, 4))),
    (sps_layers.Conv1d(2, 3, 5, _rng()), np.ones((1, 2, 4))),
    (sps_layers.Conv2d(3, 3, 3, _rng()), np.ones((1, 2, 4, 4))),
    (sps_layers.MaxPool2d(), np.ones((1, 1, 3, 4))),
    (sps_layers.BatchNorm(4), np.ones((2, 3))),
    (sps_layers.AvgPool1d(4), np.ones((1, 1, 3))),
])
def test_shape_mismatch(module, x):
    with pytest.raises(errors.ShapeMismatchError):
        module.forward(x)


def test_batchnorm_running_stats():
    bn = sps_layers.BatchNorm(2, momentum=0.1)
    x = _rng().normal(2., 3., size=(10, 2))
    bn.forward(x, train=True)
    np.testing.assert_allclose(bn.buffers["running_mean"], 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(bn.buffers["running_var"], 0.9 + 0.1 * x.var(axis=0, ddof=1))
    out = bn.forward(x, train=False)
    expected = (x - bn.buffers["running_mean"]) / np.sqrt(bn.buffers["running_var"] + bn.eps)
    np.testing.assert_allclose(out, expected)


def test_batchnorm_cumulative():
    bn = sps_layers.BatchNorm(1)
    batches = [np.array([[0.], [2.]]), np.array([[4.], [8.]])]
    bn.start_cumulative()
    for b in batches:
        bn.forward(b, train=True)
    bn.finish_cumulative()
    np.testing.assert_allclose(bn.buffers["running_mean"], [(1. + 6.) / 2])
    np.testing.assert_allclose(bn.buffers["running_var"], [(2. + 8.) / 2])


def test_dropout_eval_and_scaling():
    drop = sps_layers.Dropout(0.5, seed=0)
    x = np.ones((100, 10))
    np.testing.assert_array_equal(drop.forward(x, train=False), x)
    out = drop.forward(x, train=True)
    assert set(np.unique(out)) <= {0., 2.}


def test_reseed_reproduces_masks():
    net = sps_layers.Sequential(sps_layers.Dropout(0.5), sps_layers.Dropout(0.5))
    x = np.ones((4, 8))
    net.reseed(3)
    first = net.forward(x, train=True)
    net.reseed(3)
    np.testing.assert_array_equal(net.forward(x, train=True), first)


def test_interpolation_matrix_aligned_corners():
    mat = sps_layers.interpolation_matrix(3, 5)
    np.testing.assert_allclose(mat @ np.array([0., 1., 2.]), [0., 0.5, 1., 1.5, 2.])
    np.testing.assert_allclose(mat.sum(axis=1), 1.)


def test_named_parameters():
    net = sps_layers.Sequential(sps_layers.Linear(2, 3, _rng()), sps_layers.BatchNorm(3))
    names = [name for name, _ in net.named_parameters()]
    assert names == ["layers.0.weight", "layers.0.bias", "layers.1.gamma", "layers.1.beta"]
    assert sum(p.size for p in net.parameters()) == 6 + 3 + 3 + 3


# Forward oracle against torch's reference operators
def _torch():
    return pytest.importorskip("torch")


def test_conv1d_matches_torch():
    torch = _torch()
    layer = sps_layers.Conv1d(3, 4, 5, _rng(), padding=2)
    x = _rng(1).normal(size=(2, 3, 11))
    expected = torch.nn.functional.conv1d(torch.from_numpy(x), torch.from_numpy(layer.weight.value),
                                          torch.from_numpy(layer.bias.value), padding=2).numpy()
    np.testing.assert_allclose(layer.forward(x), expected, atol=1e-10)


def test_conv2d_matches_torch():
    torch = _torch()
    layer = sps_layers.Conv2d(3, 2, 3, _rng())
    x = _rng(1).normal(size=(2, 3, 6, 5))
    expected = torch.nn.functional.conv2d(torch.from_numpy(x), torch.from_numpy(layer.weight.value),
                                          torch.from_numpy(layer.bias.value), padding=1).numpy()
    np.testing.assert_allclose(layer.forward(x), expected, atol=1e-10)


def test_pool_upsample_elu_match_torch():
    torch = _torch()
    x = _rng(2).normal(size=(2, 3, 4, 6))
    tx = torch.from_numpy(x)
    np.testing.assert_allclose(sps_layers.MaxPool2d().forward(x), torch.nn.functional.max_pool2d(tx, 2).numpy())
    np.testing.assert_allclose(sps_layers.BilinearUpsample().forward(x),
                               torch.nn.functional.interpolate(tx, scale_factor=2, mode="bilinear",
                                                               align_corners=True).numpy(), atol=1e-10)
    np.testing.assert_allclose(sps_layers.ELU().forward(x), torch.nn.functional.elu(tx).numpy(), atol=1e-12)
    x1 = _rng(3).normal(size=(2, 3, 9))
    np.testing.assert_allclose(sps_layers.AvgPool1d(2).forward(x1),
                               torch.nn.functional.avg_pool1d(torch.from_numpy(x1), 2).numpy(), atol=1e-12)


def test_batchnorm_matches_torch():
    torch = _torch()
    x = _rng(4).normal(size=(4, 3, 2, 2))
    bn = sps_layers.BatchNorm(3, momentum=0.1)
    ref = torch.nn.BatchNorm2d(3, momentum=0.1).double()
    out = bn.forward(x, train=True)
    expected = ref(torch.from_numpy(x)).detach().numpy()
    np.testing.assert_allclose(out, expected, atol=1e-8)
    np.testing.assert_allclose(bn.buffers["running_mean"], ref.running_mean.numpy(), atol=1e-10)
    np.testing.assert_allclose(bn.buffers["running_var"], ref.running_var.numpy(), atol=1e-10)
