"""Dense float64 layers with hand-written reverse-mode gradients.

Layouts are ``(N, C, L)`` for spectra and ``(N, C, H, W)`` for images. A training-mode ``forward`` caches what
``backward`` needs; ``backward`` accumulates parameter gradients and returns the gradient of the input.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from spectraseg import errors


class Parameter(object):
    """Trainable array and its gradient accumulator."""
    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def size(self):
        return self.value.size


class Module(object):
    """Base class. Parameters, buffers and sub-modules are discovered from instance attributes."""
    def __init__(self):
        self.name = type(self).__name__
        self._cache = None

    # Introspection
    def named_children(self):
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
        for key, child in self.named_children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for key, value in getattr(self, "buffers", {}).items():
            yield prefix + key, value
        for key, child in self.named_children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def modules(self):
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def assign_names(self, prefix="net"):
        self.name = prefix
        for key, child in self.named_children():
            child.assign_names(f"{prefix}.{key}")

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0.

    def reseed(self, seed):
        """Reset the random streams of every dropout layer from ``seed``."""
        dropouts = [m for m in self.modules() if isinstance(m, Dropout)]
        for i, m in enumerate(dropouts):
            m.rng = np.random.default_rng([seed, i])

    # Computation
    def __call__(self, x, train=False):
        return self.forward(x, train)

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def _pop_cache(self):
        if self._cache is None:
            raise errors.BackwardBeforeForwardError(f"{self.name}: backward called without a training forward pass")
        cache, self._cache = self._cache, None
        return cache

    def _check_input(self, x, ndim, channels=None):
        if x.ndim != ndim:
            raise errors.ShapeMismatchError(self.name, f"expected a {ndim}-D input, got shape {x.shape}")
        if channels is not None and x.shape[1] != channels:
            raise errors.ShapeMismatchError(self.name, f"expected {channels} channels, got {x.shape[1]}")


def _uniform(rng, fan_in, shape):
    bound = 1. / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Fully connected layer ``y = x W^T + b``."""
    def __init__(self, in_features, out_features, rng):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(_uniform(rng, in_features, (out_features, in_features)))
        self.bias = Parameter(_uniform(rng, in_features, (out_features,)))

    def forward(self, x, train=False):
        self._check_input(x, 2, self.in_features)
        if train:
            self._cache = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad):
        x = self._pop_cache()
        self.weight.grad += grad.T @ x
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value


class Conv1d(Module):
    """1-D convolution over ``(N, C, L)``; ``padding=0`` is a valid convolution."""
    def __init__(self, in_channels, out_channels, kernel_size, rng, padding=0):
        super().__init__()
        self.in_channels = in_channels
        self.kernel_size = kernel_size
        self.padding = padding
        fan_in = in_channels * kernel_size
        self.weight = Parameter(_uniform(rng, fan_in, (out_channels, in_channels, kernel_size)))
        self.bias = Parameter(_uniform(rng, fan_in, (out_channels,)))

    def forward(self, x, train=False):
        self._check_input(x, 3, self.in_channels)
        xp = np.pad(x, ((0, 0), (0, 0), (self.padding, self.padding)))
        if xp.shape[2] < self.kernel_size:
            raise errors.ShapeMismatchError(self.name, f"length {x.shape[2]} is shorter than the kernel")
        windows = sliding_window_view(xp, self.kernel_size, axis=2)
        if train:
            self._cache = (windows, xp.shape)
        return np.einsum('nclk,ock->nol', windows, self.weight.value, optimize=True) + self.bias.value[:, None]

    def backward(self, grad):
        windows, padded_shape = self._pop_cache()
        self.weight.grad += np.einsum('nclk,nol->ock', windows, grad, optimize=True)
        self.bias.grad += grad.sum(axis=(0, 2))
        dwin = np.einsum('nol,ock->nclk', grad, self.weight.value, optimize=True)
        dxp = np.zeros(padded_shape)
        n_out = grad.shape[2]
        for j in range(self.kernel_size):
            dxp[:, :, j:j + n_out] += dwin[..., j]
        return dxp[:, :, self.padding:padded_shape[2] - self.padding]


class AvgPool1d(Module):
    """Non-overlapping average pooling; a trailing remainder shorter than the kernel is dropped."""
    def __init__(self, kernel_size=2):
        super().__init__()
        self.kernel_size = kernel_size

    def forward(self, x, train=False):
        self._check_input(x, 3)
        k = self.kernel_size
        n_out = x.shape[2] // k
        if n_out == 0:
            raise errors.ShapeMismatchError(self.name, f"length {x.shape[2]} is shorter than the kernel")
        if train:
            self._cache = x.shape
        return x[:, :, :n_out * k].reshape(x.shape[0], x.shape[1], n_out, k).mean(axis=3)

    def backward(self, grad):
        shape = self._pop_cache()
        k = self.kernel_size
        dx = np.zeros(shape)
        dx[:, :, :grad.shape[2] * k] = np.repeat(grad / k, k, axis=2)
        return dx


class Conv2d(Module):
    """2-D convolution over ``(N, C, H, W)`` with zero padding, stride 1."""
    def __init__(self, in_channels, out_channels, kernel_size, rng, padding=1):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = padding
        fan_in = in_channels * kernel_size ** 2
        self.weight = Parameter(_uniform(rng, fan_in, (out_channels, in_channels, kernel_size, kernel_size)))
        self.bias = Parameter(_uniform(rng, fan_in, (out_channels,)))

    def forward(self, x, train=False):
        self._check_input(x, 4, self.in_channels)
        p, k = self.padding, self.kernel_size
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        h_out, w_out = xp.shape[2] - k + 1, xp.shape[3] - k + 1
        if h_out < 1 or w_out < 1:
            raise errors.ShapeMismatchError(self.name, f"input {x.shape[2:]} is smaller than the kernel")
        out = np.zeros((x.shape[0], h_out, w_out, self.out_channels))
        for i in range(k):
            for j in range(k):
                out += np.tensordot(xp[:, :, i:i + h_out, j:j + w_out], self.weight.value[:, :, i, j],
                                    axes=([1], [1]))
        if train:
            self._cache = xp
        return out.transpose(0, 3, 1, 2) + self.bias.value[:, None, None]

    def backward(self, grad):
        xp = self._pop_cache()
        p, k = self.padding, self.kernel_size
        h_out, w_out = grad.shape[2], grad.shape[3]
        self.bias.grad += grad.sum(axis=(0, 2, 3))
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                window = xp[:, :, i:i + h_out, j:j + w_out]
                self.weight.grad[:, :, i, j] += np.tensordot(grad, window, axes=([0, 2, 3], [0, 2, 3]))
                dxp[:, :, i:i + h_out, j:j + w_out] += np.tensordot(grad, self.weight.value[:, :, i, j],
                                                                    axes=([1], [0])).transpose(0, 3, 1, 2)
        return dxp[:, :, p:xp.shape[2] - p, p:xp.shape[3] - p]


class MaxPool2d(Module):
    """2x2 max pooling with stride 2 over even spatial dimensions. Ties route the gradient to the first maximum."""
    def forward(self, x, train=False):
        self._check_input(x, 4)
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise errors.ShapeMismatchError(self.name, f"spatial size {h}x{w} is not even")
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        idx = np.argmax(blocks, axis=-1)
        if train:
            self._cache = (idx, x.shape)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        idx, (n, c, h, w) = self._pop_cache()
        blocks = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=-1)
        return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


def interpolation_matrix(n_in, n_out):
    """Linear interpolation weights with aligned corners, shape (n_out, n_in)."""
    mat = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        mat[:, 0] = 1.
        return mat
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    mat[np.arange(n_out), lo] = 1. - frac
    mat[np.arange(n_out), lo + 1] += frac
    return mat


class BilinearUpsample(Module):
    """Bilinear resize of ``(N, C, H, W)`` to a target size (twice the input by default), corners aligned."""
    def forward(self, x, train=False, size=None):
        self._check_input(x, 4)
        size = size or (2 * x.shape[2], 2 * x.shape[3])
        a_h = interpolation_matrix(x.shape[2], size[0])
        a_w = interpolation_matrix(x.shape[3], size[1])
        if train:
            self._cache = (a_h, a_w)
        return a_h @ x @ a_w.T

    def backward(self, grad):
        a_h, a_w = self._pop_cache()
        return a_h.T @ grad @ a_w


class BatchNorm(Module):
    """Batch normalization over every axis except the channel axis 1.

    Running statistics use ``momentum`` and the unbiased batch variance; evaluation uses them.
    """
    def __init__(self, num_features, momentum=0.1, eps=1e-5):
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(num_features))
        self.beta = Parameter(np.zeros(num_features))
        self.buffers = {"running_mean": np.zeros(num_features), "running_var": np.ones(num_features)}
        self.cumulative = None

    def _shape(self, x):
        return (1, -1) + (1,) * (x.ndim - 2)

    def forward(self, x, train=False):
        if x.ndim < 2 or x.shape[1] != self.num_features:
            raise errors.ShapeMismatchError(self.name, f"expected {self.num_features} channels, got shape {x.shape}")
        axes = (0,) + tuple(range(2, x.ndim))
        shape = self._shape(x)
        if train:
            m = x.size // self.num_features
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            unbiased = var * m / (m - 1) if m > 1 else var
            if self.cumulative is not None:
                self.cumulative.append((mean, unbiased))
            else:
                self.buffers["running_mean"] = (1 - self.momentum) * self.buffers["running_mean"] + self.momentum * mean
                self.buffers["running_var"] = (1 - self.momentum) * self.buffers["running_var"] + \
                    self.momentum * unbiased
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1. / np.sqrt(var + self.eps)
        x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        if train:
            self._cache = (x_hat, inv_std, axes, shape)
        return self.gamma.value.reshape(shape) * x_hat + self.beta.value.reshape(shape)

    def backward(self, grad):
        x_hat, inv_std, axes, shape = self._pop_cache()
        m = grad.size // self.num_features
        self.gamma.grad += (grad * x_hat).sum(axis=axes)
        self.beta.grad += grad.sum(axis=axes)
        dx_hat = grad * self.gamma.value.reshape(shape)
        return (inv_std.reshape(shape) / m) * (m * dx_hat - dx_hat.sum(axis=axes).reshape(shape) -
                                               x_hat * (dx_hat * x_hat).sum(axis=axes).reshape(shape))

    def start_cumulative(self):
        """Collect per-batch statistics instead of updating the running averages."""
        self.cumulative = []

    def finish_cumulative(self):
        """Set running statistics to the plain average of the collected batches."""
        if self.cumulative:
            self.buffers["running_mean"] = np.mean([s[0] for s in self.cumulative], axis=0)
            self.buffers["running_var"] = np.mean([s[1] for s in self.cumulative], axis=0)
        self.cumulative = None


class ELU(Module):
    """Exponential linear unit with alpha = 1."""
    def forward(self, x, train=False):
        out = np.where(x > 0, x, np.expm1(np.minimum(x, 0.)))
        if train:
            self._cache = (x, out)
        return out

    def backward(self, grad):
        x, out = self._pop_cache()
        return grad * np.where(x > 0, 1., out + 1.)


class Dropout(Module):
    """Inverted dropout: surviving activations are scaled by ``1 / (1 - p)`` at train time only."""
    def __init__(self, p=0.1, seed=0):
        super().__init__()
        self.p = p
        self.rng = np.random.default_rng(seed)

    def forward(self, x, train=False):
        if not train:
            return x
        if self.p == 0:
            mask = np.ones_like(x)
        else:
            mask = (self.rng.random(x.shape) >= self.p) / (1. - self.p)
        self._cache = mask
        return x * mask

    def backward(self, grad):
        return grad * self._pop_cache()


class Flatten(Module):
    def forward(self, x, train=False):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._pop_cache())


class GlobalAvgPool2d(Module):
    """Mean over the spatial axes, ``(N, C, H, W)`` to ``(N, C)``."""
    def forward(self, x, train=False):
        self._check_input(x, 4)
        if train:
            self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self._pop_cache()
        return np.broadcast_to(grad[:, :, None, None] / (h * w), (n, c, h, w)).copy()


class Sequential(Module):
    """Chain of modules applied in order."""
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad
