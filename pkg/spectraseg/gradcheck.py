"""Central finite-difference checks for modules and losses."""
import numpy as np

TINY = 1e-12


def relative_error(analytic, numeric):
    """``||a - n|| / max(||a|| + ||n||, tiny)``; zero when both gradients vanish."""
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), TINY))


def _pick(rng, size, max_checks):
    if max_checks is None or size <= max_checks:
        return np.arange(size)
    return np.sort(rng.choice(size, max_checks, replace=False))


def numerical_gradient(f, array, eps=1e-4, indices=None):
    """Central differences of the scalar function ``f()`` with respect to entries of ``array`` (perturbed in place)."""
    flat = array.reshape(-1)
    indices = np.arange(flat.size) if indices is None else indices
    grad = np.zeros(len(indices))
    for n, i in enumerate(indices):
        original = flat[i]
        flat[i] = original + eps
        f_plus = f()
        flat[i] = original - eps
        f_minus = f()
        flat[i] = original
        grad[n] = (f_plus - f_minus) / (2. * eps)
    return grad


def check_module(module, x, seed=0, eps=1e-4, max_checks=40):
    """Compare analytic and numeric gradients of ``sum(module(x) * r)`` for a fixed random ``r``.

    Dropout streams are reseeded before every forward pass so all evaluations see the same mask.

    Returns:
        dict: relative error for ``"input"`` and for every named parameter.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    module.reseed(seed)
    out = module.forward(x, train=True)
    upstream = rng.normal(size=out.shape)
    module.zero_grad()
    dx = module.backward(upstream)
    analytic = {name: p.grad.copy() for name, p in module.named_parameters()}

    def objective():
        module.reseed(seed)
        value = float((module.forward(x, train=True) * upstream).sum())
        for m in module.modules():
            m._cache = None
        return value

    errors = {}
    idx = _pick(rng, x.size, max_checks)
    errors["input"] = relative_error(dx.reshape(-1)[idx], numerical_gradient(objective, x, eps, idx))
    for name, p in module.named_parameters():
        idx = _pick(rng, p.value.size, max_checks)
        errors[name] = relative_error(analytic[name].reshape(-1)[idx],
                                      numerical_gradient(objective, p.value, eps, idx))
    return errors


def check_loss(loss, logits, target, eps=1e-4, **kwargs):
    """Relative error between the analytic logit gradient of ``loss`` and central differences."""
    logits = np.array(logits, dtype=np.float64)
    _, grad = loss(logits, target, **kwargs)
    numeric = numerical_gradient(lambda: loss(logits, target, **kwargs)[0], logits, eps)
    return relative_error(grad, numeric)
