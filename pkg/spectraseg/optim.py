import numpy as np
from dataclasses import dataclass, field
from loguru import logger

from spectraseg import errors
from spectraseg.layers import BatchNorm


@dataclass
class AdamState:
    """Adam moments plus an exponential per-epoch learning-rate schedule ``lr = lr0 * gamma ** epoch``."""
    m: list
    v: list
    lr0: float = 0.001
    gamma: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    epoch: int = 0

    @property
    def lr(self):
        return self.lr0 * self.gamma ** self.epoch


def adam_state(params, lr0=0.001, gamma=0.99, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(m=[np.zeros_like(p.value) for p in params], v=[np.zeros_like(p.value) for p in params],
                     lr0=lr0, gamma=gamma, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state, params, grads=None):
    """One bias-corrected Adam update, in place.

    Args:
        state (AdamState): Optimizer state, updated in place.
        params (list): Parameters to update.
        grads (list): Gradients; defaults to each parameter's ``grad``.
    """
    grads = [p.grad for p in params] if grads is None else grads
    if len(grads) != len(params) or len(params) != len(state.m):
        raise ValueError("Adam state, parameters and gradients must have the same length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    lr = state.lr
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.value.shape:
            raise ValueError(f"Gradient shape {g.shape} does not match parameter {p.value.shape}")
        m *= b1
        m += (1. - b1) * g
        v *= b2
        v += (1. - b2) * g * g
        m_hat = m / (1. - b1 ** state.step)
        v_hat = v / (1. - b2 ** state.step)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def epoch_decay(state):
    """Advance the learning-rate schedule by one epoch."""
    state.epoch += 1


@dataclass
class SwaState:
    """Running mean of parameter snapshots."""
    average: list = field(default=None)
    n_snapshots: int = 0


def swa_update(swa, params):
    swa.n_snapshots += 1
    values = [np.asarray(p.value if hasattr(p, "value") else p, dtype=np.float64) for p in params]
    if swa.average is None:
        swa.average = [v.copy() for v in values]
        return
    for avg, v in zip(swa.average, values):
        avg += (v - avg) / swa.n_snapshots


def swa_finalize(swa, net, batches):
    """Install the averaged weights and recompute batchnorm statistics over one pass of ``batches``.

    Args:
        swa (SwaState): Accumulated snapshots.
        net (Network): Network whose parameters are replaced.
        batches (iterable): Training inputs; each item is either an input array or an ``(input, target)`` pair.
    """
    if swa.n_snapshots == 0:
        raise errors.SwaError("swa_finalize needs at least one snapshot")
    for p, avg in zip(net.parameters(), swa.average):
        p.value = avg.copy()
    norms = [m for m in net.module.modules() if isinstance(m, BatchNorm)]
    if not norms:
        return
    for m in norms:
        m.start_cumulative()
    n_batches = 0
    for batch in batches:
        x = batch[0] if isinstance(batch, tuple) else batch
        net.forward(x, train=True)
        n_batches += 1
    for m in norms:
        m.finish_cumulative()
    for m in net.module.modules():
        m._cache = None
    logger.info(f"SWA: averaged {swa.n_snapshots} snapshots, batchnorm statistics from {n_batches} batches.")
