"""Segmentation losses computed on logits.

Every loss returns ``(value, grad)`` where ``grad`` is the gradient with respect to the logits. Logits are
``(N, O)`` or ``(N, O, H, W)``; integer targets use ``IGNORE`` (255) for pixels that take no part in the loss.
"""
import numpy as np
from scipy.special import log_softmax as _log_softmax, softmax as _softmax

from spectraseg import errors
from spectraseg.loader.datacube import IGNORE


def softmax(logits, axis=1):
    return _softmax(logits, axis=axis)


def _rows(logits):
    """View logits as (pixels, classes) plus a function restoring the original layout."""
    if logits.ndim == 2:
        return logits, lambda g: g
    n, o = logits.shape[:2]
    moved = np.moveaxis(logits, 1, -1)
    shape = moved.shape
    return moved.reshape(-1, o), lambda g: np.moveaxis(g.reshape(shape), -1, 1)


def _class_weights(weights, n_classes):
    return np.ones(n_classes) if weights is None else np.asarray(weights, dtype=np.float64)


def cross_entropy(logits, target, weights=None):
    """Class-weighted mean negative log-likelihood over non-IGNORE pixels.

    Args:
        logits (ndarray): Network output.
        target (ndarray): Class ids, shape of ``logits`` without the class axis.
        weights (ndarray): Optional per-class weights.
    """
    rows, restore = _rows(logits)
    target = np.asarray(target).reshape(-1)
    n_classes = rows.shape[1]
    valid = target != IGNORE
    grad = np.zeros_like(rows)
    if not valid.any():
        return 0., restore(grad)
    logp = _log_softmax(rows[valid], axis=1)
    y = target[valid].astype(np.int64)
    w = _class_weights(weights, n_classes)[y]
    total = w.sum()
    value = float(-(w * logp[np.arange(len(y)), y]).sum() / total)
    g = np.exp(logp)
    g[np.arange(len(y)), y] -= 1.
    grad[valid] = g * (w / total)[:, None]
    return value, restore(grad)


def dice_loss(logits, target, weights=None):
    """One minus the (weighted) mean soft Dice over the classes present in the batch.

    Dice is computed per class over all non-IGNORE pixels of the batch. A class is present when it occurs in the
    target or in the hard prediction; absent classes contribute nothing.
    """
    rows, restore = _rows(logits)
    target = np.asarray(target).reshape(-1)
    n_classes = rows.shape[1]
    valid = target != IGNORE
    grad = np.zeros_like(rows)
    if not valid.any():
        return 0., restore(grad)
    p = softmax(rows[valid])
    t = np.eye(n_classes)[target[valid].astype(np.int64)]
    intersection = (p * t).sum(axis=0)
    denominator = p.sum(axis=0) + t.sum(axis=0)
    dice = 2. * intersection / denominator
    present = (t.sum(axis=0) > 0) | np.isin(np.arange(n_classes), np.argmax(p, axis=1))
    w = _class_weights(weights, n_classes) * present
    value = float(1. - (w * dice).sum() / w.sum())
    dp = -(w / w.sum()) * (2. * t - dice) / denominator
    grad[valid] = p * (dp - (dp * p).sum(axis=1, keepdims=True))
    return value, restore(grad)


def kl_divergence(logits, fuzzy, weights=None):
    """Mean KL(q || softmax) between fuzzy label vectors ``q`` (rows summing to 1) and the prediction.

    With class weights, each sample is weighted by ``q . weights``.
    """
    q = np.asarray(fuzzy, dtype=np.float64)
    if q.shape != logits.shape or not np.allclose(q.sum(axis=1), 1.):
        raise ValueError("Fuzzy targets must match the logits and sum to 1 per sample")
    logp = _log_softmax(logits, axis=1)
    logq = np.log(np.where(q > 0, q, 1.))
    per_sample = (q * (logq - logp)).sum(axis=1)
    w = q @ _class_weights(weights, logits.shape[1])
    total = w.sum()
    value = float((w * per_sample).sum() / total)
    grad = (np.exp(logp) - q) * (w / total)[:, None]
    return value, grad


def dice_ce(logits, target, weights=None, weight_dice=0.5):
    """Equally weighted sum of Dice and cross-entropy losses."""
    v_dice, g_dice = dice_loss(logits, target, weights)
    v_ce, g_ce = cross_entropy(logits, target, weights)
    return weight_dice * v_dice + (1. - weight_dice) * v_ce, weight_dice * g_dice + (1. - weight_dice) * g_ce


LOSSES = {"cross_entropy": cross_entropy, "dice": dice_loss, "kl_divergence": kl_divergence, "dice_ce": dice_ce}


def get_loss(name):
    if name not in LOSSES:
        raise ValueError(f"Unknown loss {name!r}, choose among {sorted(LOSSES)}")
    return LOSSES[name]


def class_weights(counts):
    """Inverse-proportional class weights, normalized to mean 1.

    Args:
        counts (array_like): Pixel count per class; zero counts are clamped to 1.

    Returns:
        ndarray: weight per class.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or not counts.any():
        raise errors.EmptySelectionError("Class weights need at least one nonzero class count")
    inverse = 1. / np.maximum(counts, 1.)
    return inverse / inverse.mean()
