import numpy as np
from loguru import logger

from spectraseg import errors
from spectraseg.keywords import KindKW, ModalityKW
from spectraseg.layers import Module, Sequential, Conv1d, AvgPool1d, Conv2d, MaxPool2d, BilinearUpsample, Linear, \
    BatchNorm, ELU, Dropout, Flatten, GlobalAvgPool2d
from spectraseg.loader.datacube import MODALITY_CHANNELS
from spectraseg.network import Network, read_checkpoint, save_checkpoint

N_CLASSES = 19
PATCH_SIZES = {KindKW.PATCH_32: 32, KindKW.PATCH_64: 64}
KINDS = [KindKW.PIXEL, KindKW.SUPERPIXEL, KindKW.PATCH_32, KindKW.PATCH_64, KindKW.IMAGE]


class SpectralConvNet(Module):
    """Pixel classifier on a single HSI spectrum.

    Three blocks of valid 1-D convolution (kernel 5), batchnorm, ELU and average pooling (kernel 2) with 64, 32 and
    16 filters, followed by fully connected layers of 100 and 50 units and a linear classifier.

    Args:
        n_channels (int): Spectrum length.
        n_classes (int): Number of output classes.
        rng (Generator): Initialization stream.
        dropout_rate (float): Dropout after the hidden fully connected layers.
        bn_momentum (float): Batch normalization momentum.
    """
    def __init__(self, n_channels, n_classes, rng, dropout_rate=0.1, bn_momentum=0.1):
        super().__init__()
        self.n_channels = n_channels
        layers = []
        in_feat, length = 1, n_channels
        for out_feat in (64, 32, 16):
            layers += [Conv1d(in_feat, out_feat, 5, rng), BatchNorm(out_feat, bn_momentum), ELU(), AvgPool1d(2)]
            in_feat, length = out_feat, (length - 4) // 2
        if length < 1:
            raise errors.ShapeMismatchError("SpectralConvNet", f"spectrum of {n_channels} channels is too short")
        layers.append(Flatten())
        self.body = Sequential(*layers, *_dense_stack(in_feat * length, (100, 50), n_classes, rng, dropout_rate,
                                                      bn_momentum))

    def forward(self, x, train=False):
        self._check_input(x, 2, self.n_channels)
        return self.body.forward(x[:, None, :], train)

    def backward(self, grad):
        return self.body.backward(grad)[:, 0, :]


def _dense_stack(in_features, hidden, n_classes, rng, dropout_rate, bn_momentum):
    layers = []
    for units in hidden:
        layers += [Linear(in_features, units, rng), BatchNorm(units, bn_momentum), ELU(), Dropout(dropout_rate)]
        in_features = units
    layers.append(Linear(in_features, n_classes, rng))
    return layers


class DenseNet(Sequential):
    """Pixel classifier for low-dimensional inputs (RGB, TPI): fully connected layers of 200, 100 and 50 units."""
    def __init__(self, n_channels, n_classes, rng, dropout_rate=0.1, bn_momentum=0.1):
        super().__init__(*_dense_stack(n_channels, (200, 100, 50), n_classes, rng, dropout_rate, bn_momentum))


class DownConv(Module):
    """Two successive series of convolution, batch normalization, ELU and dropout.
    Used in U-Net's encoder and, through :class:`UpConv`, in its decoder.

    Args:
        in_feat (int): Number of channels in the input image.
        out_feat (int): Number of channels in the output image.
        rng (Generator): Initialization stream.
        dropout_rate (float): Probability of dropout.
        bn_momentum (float): Batch normalization momentum.
    """
    def __init__(self, in_feat, out_feat, rng, dropout_rate=0.1, bn_momentum=0.1):
        super().__init__()
        self.block = Sequential(Conv2d(in_feat, out_feat, 3, rng), BatchNorm(out_feat, bn_momentum), ELU(),
                                Dropout(dropout_rate),
                                Conv2d(out_feat, out_feat, 3, rng), BatchNorm(out_feat, bn_momentum), ELU(),
                                Dropout(dropout_rate))

    def forward(self, x, train=False):
        return self.block.forward(x, train)

    def backward(self, grad):
        return self.block.backward(grad)


class UpConv(Module):
    """Bilinear upsampling to the skip-connection size, concatenation with the skip features, then DownConv.

    Attributes:
        upsample (BilinearUpsample): Resize with aligned corners.
        downconv (DownConv): Convolutions applied to the concatenation.
    """
    def __init__(self, in_feat, out_feat, rng, dropout_rate=0.1, bn_momentum=0.1):
        super().__init__()
        self.upsample = BilinearUpsample()
        self.downconv = DownConv(in_feat, out_feat, rng, dropout_rate, bn_momentum)

    def forward(self, x, y, train=False):
        x = self.upsample.forward(x, train, size=y.shape[2:])
        if train:
            self._cache = x.shape[1]
        return self.downconv.forward(np.concatenate([x, y], axis=1), train)

    def backward(self, grad):
        n_up = self._pop_cache()
        grad = self.downconv.backward(grad)
        return self.upsample.backward(grad[:, :n_up]), grad[:, n_up:]


class Encoder(Module):
    """Encoding part of the U-Net model.
    It returns the feature maps for the skip connections, the bottom features last.

    Args:
        in_channel (int): Number of channels in the input image.
        rng (Generator): Initialization stream.
        depth (int): Number of down convolutions minus bottom down convolution.
        n_filters (int): Number of base filters; block ``i`` has ``n_filters * 2 ** i``.
    """
    def __init__(self, in_channel, rng, depth=3, n_filters=8, dropout_rate=0.1, bn_momentum=0.1):
        super().__init__()
        self.depth = depth
        self.down_path = []
        for i in range(depth):
            out_feat = n_filters * 2 ** i
            self.down_path += [DownConv(in_channel, out_feat, rng, dropout_rate, bn_momentum), MaxPool2d()]
            in_channel = out_feat
        self.conv_bottom = DownConv(in_channel, in_channel, rng, dropout_rate, bn_momentum)
        self.out_channel = in_channel

    def forward(self, x, train=False):
        features = []
        for i in range(self.depth):
            x = self.down_path[2 * i].forward(x, train)
            features.append(x)
            x = self.down_path[2 * i + 1].forward(x, train)
        features.append(self.conv_bottom.forward(x, train))
        return features

    def backward(self, grads):
        grad = self.conv_bottom.backward(grads[-1])
        for i in reversed(range(self.depth)):
            grad = self.down_path[2 * i + 1].backward(grad)
            if grads[i] is not None:
                grad = grad + grads[i]
            grad = self.down_path[2 * i].backward(grad)
        return grad


class Decoder(Module):
    """Decoding part of the U-Net model.

    Args:
        out_channel (int): Number of output classes.
        rng (Generator): Initialization stream.
        depth (int): Number of up convolutions.
        n_filters (int): Number of base filters in the U-Net.
    """
    def __init__(self, out_channel, rng, depth=3, n_filters=8, dropout_rate=0.1, bn_momentum=0.1):
        super().__init__()
        self.depth = depth
        self.up_path = []
        in_channel = n_filters * 2 ** depth
        self.up_path.append(UpConv(in_channel, n_filters * 2 ** (depth - 1), rng, dropout_rate, bn_momentum))
        for i in range(1, depth):
            in_channel //= 2
            self.up_path.append(UpConv(in_channel + n_filters * 2 ** (depth - i - 1), n_filters * 2 ** (depth - i - 1),
                                       rng, dropout_rate, bn_momentum))
        self.last_conv = Conv2d(n_filters, out_channel, 3, rng)

    def forward(self, features, train=False):
        x = features[-1]
        for k, i in enumerate(reversed(range(self.depth))):
            x = self.up_path[k].forward(x, features[i], train)
        return self.last_conv.forward(x, train)

    def backward(self, grad):
        grad = self.last_conv.backward(grad)
        feature_grads = [None] * (self.depth + 1)
        for k in reversed(range(self.depth)):
            grad, skip = self.up_path[k].backward(grad)
            feature_grads[self.depth - 1 - k] = skip
        feature_grads[-1] = grad
        return feature_grads


class Unet(Module):
    """Small U-Net: depth 3, widths (n, 2n, 4n), per-pixel logits at the input resolution.

    Inputs are zero-padded at the bottom and right to a multiple of ``2 ** depth`` and the logits cropped back.
    """
    def __init__(self, in_channel, out_channel, rng, depth=3, n_filters=8, dropout_rate=0.1, bn_momentum=0.1):
        super().__init__()
        self.in_channel = in_channel
        self.multiple = 2 ** depth
        self.encoder = Encoder(in_channel, rng, depth, n_filters, dropout_rate, bn_momentum)
        self.decoder = Decoder(out_channel, rng, depth, n_filters, dropout_rate, bn_momentum)

    def forward(self, x, train=False):
        self._check_input(x, 4, self.in_channel)
        h, w = x.shape[2:]
        pad_h, pad_w = -h % self.multiple, -w % self.multiple
        x = np.pad(x, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)))
        if train:
            self._cache = (pad_h, pad_w)
        return self.decoder.forward(self.encoder.forward(x, train), train)[:, :, :h, :w]

    def backward(self, grad):
        pad_h, pad_w = self._pop_cache()
        grad = np.pad(grad, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)))
        dx = self.encoder.backward(self.decoder.backward(grad))
        return dx[:, :, :dx.shape[2] - pad_h, :dx.shape[3] - pad_w]


class SuperpixelClassifier(Module):
    """U-Net encoder followed by a classification head: global average pooling, dropout and a linear layer."""
    def __init__(self, in_channel, out_channel, rng, depth=3, n_filters=8, dropout_rate=0.1, bn_momentum=0.1):
        super().__init__()
        self.in_channel = in_channel
        self.encoder = Encoder(in_channel, rng, depth, n_filters, dropout_rate, bn_momentum)
        self.head = Sequential(GlobalAvgPool2d(), Dropout(dropout_rate), Linear(self.encoder.out_channel,
                                                                                out_channel, rng))

    def forward(self, x, train=False):
        self._check_input(x, 4, self.in_channel)
        features = self.encoder.forward(x, train)
        if train:
            self._cache = len(features)
        return self.head.forward(features[-1], train)

    def backward(self, grad):
        n_features = self._pop_cache()
        grads = [None] * (n_features - 1) + [self.head.backward(grad)]
        return self.encoder.backward(grads)


def model_spec(kind, modality, n_classes=N_CLASSES, base_channels=8, dropout=0.1, bn_momentum=0.1, seed=0):
    """Build specification stored in checkpoints."""
    if kind not in KINDS:
        raise ValueError(f"Unknown model kind {kind!r}, choose among {KINDS}")
    if modality not in MODALITY_CHANNELS:
        raise ValueError(f"Unknown modality {modality!r}")
    return {"kind": kind, "modality": modality, "in_channels": MODALITY_CHANNELS[modality], "n_classes": n_classes,
            "base_channels": base_channels, "dropout": dropout, "bn_momentum": bn_momentum, "seed": seed}


def build_network(spec):
    """Instantiate the network described by ``spec`` (see :func:`model_spec`)."""
    rng = np.random.default_rng(spec["seed"])
    kind, c, o = spec["kind"], spec["in_channels"], spec["n_classes"]
    kwargs = {"dropout_rate": spec["dropout"], "bn_momentum": spec["bn_momentum"]}
    if kind == KindKW.PIXEL:
        if spec["modality"] == ModalityKW.HSI:
            module = SpectralConvNet(c, o, rng, **kwargs)
        else:
            module = DenseNet(c, o, rng, **kwargs)
    elif kind == KindKW.SUPERPIXEL:
        module = SuperpixelClassifier(c, o, rng, n_filters=spec["base_channels"], **kwargs)
    else:
        module = Unet(c, o, rng, n_filters=spec["base_channels"], **kwargs)
    net = Network(module, spec)
    net.reseed(spec["seed"])
    return net


def build_pixel_net(modality, n_classes=N_CLASSES, seed=0, dropout=0.1, bn_momentum=0.1):
    return build_network(model_spec(KindKW.PIXEL, modality, n_classes, dropout=dropout, bn_momentum=bn_momentum,
                                    seed=seed))


def build_unet(modality, base_channels=8, n_classes=N_CLASSES, seed=0, dropout=0.1, bn_momentum=0.1,
               kind=KindKW.IMAGE):
    return build_network(model_spec(kind, modality, n_classes, base_channels, dropout, bn_momentum, seed))


def build_superpixel_net(modality, base_channels=8, n_classes=N_CLASSES, seed=0, dropout=0.1, bn_momentum=0.1):
    return build_network(model_spec(KindKW.SUPERPIXEL, modality, n_classes, base_channels, dropout, bn_momentum,
                                    seed))


def save_model(net, path):
    save_checkpoint(net, path)
    logger.debug(f"Saved {net.spec['kind']}/{net.spec['modality']} checkpoint to {path}")


def load_model(path):
    """Rebuild a network from a checkpoint written by :func:`save_model`."""
    spec, arrays = read_checkpoint(path)
    net = build_network(spec)
    net.load_state(arrays)
    return net
