"""Shared convolutional feature extractor.

A stack of 3x3 conv blocks (conv -> per-channel scale/shift -> ReLU).
Rows (range) are zero padded, columns (azimuth) wrap around, so shifting the
input by a multiple of the stack's total stride shifts the output exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DataError, ShapeError
from .scan_model import PolarImage
from .weights_io import load_container, save_container


@dataclass(frozen=True, eq=False)
class FeatureMap:
    data: np.ndarray  # (C, Hf, Wf)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def roll(self, shift):
        return FeatureMap(np.roll(self.data, shift, axis=2))


@dataclass(frozen=True, eq=False)
class ConvLayer:
    kernel: np.ndarray  # (Cout, Cin, k, k)
    bias: np.ndarray
    scale: np.ndarray
    shift: np.ndarray
    stride: int = 2
    relu: bool = True

    @property
    def in_channels(self):
        return self.kernel.shape[1]

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    def spec(self):
        return {"kernel_size": int(self.kernel.shape[-1]), "stride": self.stride,
                "in_channels": int(self.in_channels), "out_channels": int(self.out_channels),
                "nonlinearity": "relu" if self.relu else "none"}


@dataclass(frozen=True, eq=False)
class BackboneWeights:
    layers: list
    high: list = field(default_factory=list)
    input_scale: float = 1.0 / 64.0

    @property
    def stride(self):
        return int(np.prod([l.stride for l in self.layers]))

    @property
    def total_stride(self):
        return self.stride * int(np.prod([l.stride for l in self.high]))

    @property
    def channels(self):
        return self.layers[-1].out_channels

    @property
    def high_channels(self):
        return self.high[-1].out_channels if self.high else None


def _conv_layer(rng, cin, cout, stride=2, relu=True):
    std = np.sqrt(2.0 / (cin * 9))
    return ConvLayer(
        kernel=(rng.standard_normal((cout, cin, 3, 3)) * std).astype(np.float32),
        bias=(rng.standard_normal(cout) * 0.01).astype(np.float32),
        scale=np.ones(cout, dtype=np.float32),
        shift=np.zeros(cout, dtype=np.float32),
        stride=stride, relu=relu)


def init_backbone(seed=0, channels=(8, 16, 32, 64, 128), high_channels=128):
    """Seeded random weights: five stride-2 blocks plus one high block."""
    rng = np.random.default_rng(seed)
    layers = []
    cin = 1
    for c in channels:
        layers.append(_conv_layer(rng, cin, c))
        cin = c
    high = [_conv_layer(rng, cin, high_channels)] if high_channels else []
    return BackboneWeights(layers, high)


def validate_weights(weights):
    """Return a list of problems (empty when the weights are usable)."""
    errors = []
    all_layers = [("layer", i, l) for i, l in enumerate(weights.layers)]
    all_layers += [("high", i, l) for i, l in enumerate(weights.high)]
    if not weights.layers:
        errors.append("backbone has no layers")
    prev = 1
    for kind, i, l in all_layers:
        name = f"{kind} {i}"
        k = np.asarray(l.kernel)
        if k.ndim != 4 or k.shape[2] != k.shape[3] or k.shape[2] % 2 == 0:
            errors.append(f"{name}: kernel must be (Cout, Cin, k, k) with odd k, got {k.shape}")
            continue
        if k.shape[1] != prev:
            errors.append(f"{name}: expects {k.shape[1]} input channels, previous layer gives {prev}")
        for attr in ("bias", "scale", "shift"):
            v = np.asarray(getattr(l, attr))
            if v.shape != (k.shape[0],):
                errors.append(f"{name}: {attr} shape {v.shape} != ({k.shape[0]},)")
            elif not np.isfinite(v).all():
                errors.append(f"{name}: non-finite {attr}")
        if not np.isfinite(k).all():
            errors.append(f"{name}: non-finite kernel entry")
        if l.stride < 1:
            errors.append(f"{name}: stride must be >= 1")
        prev = k.shape[0]
    if not np.isfinite(weights.input_scale):
        errors.append("non-finite input_scale")
    return errors


def _check(weights):
    errs = validate_weights(weights)
    if errs:
        raise DataError("invalid backbone weights: " + "; ".join(errs))


def _block(x, layer, sh, sw, dw):
    y = _kernels.conv2d(x, layer.kernel, sh, sw, dw)
    y += layer.bias[None, :, None, None]
    y *= layer.scale[None, :, None, None]
    y += layer.shift[None, :, None, None]
    if layer.relu:
        np.maximum(y, 0, out=y)
    return y


def _as_batch(images):
    if isinstance(images, PolarImage):
        return images.pixels[None]
    arr = np.asarray(images, dtype=np.float64)
    return arr[None] if arr.ndim == 2 else arr


def extract_batch(images, weights):
    """(B, H, W) images -> (mid (B, C, H/s, W/s), high or None)."""
    _check(weights)
    x = _as_batch(images)
    s = weights.total_stride
    if x.shape[1] % s or x.shape[2] % s:
        raise ShapeError(f"image {x.shape[1:]} not divisible by total stride {s}")
    y = (x * weights.input_scale).astype(np.float32)[:, None]
    for l in weights.layers:
        y = _block(y, l, l.stride, l.stride, 1)
    mid = y
    for l in weights.high:
        y = _block(y, l, l.stride, l.stride, 1)
    return mid, (y if weights.high else None)


def extract(image, weights):
    mid, high = extract_batch(image, weights)
    return FeatureMap(mid[0]), (FeatureMap(high[0]) if high is not None else None)


def extract_dense(image, weights):
    """Azimuth-dense extraction: rows are strided as usual but every input
    column gets an output column (dilated, a trous). Column ``P*q + p`` of the
    result equals column ``q`` of ``extract`` on the input rolled left by
    ``p``, for P the cumulative stride. Any integer column shift of the input
    shifts both outputs by the same amount.
    """
    _check(weights)
    x = _as_batch(image)
    s = weights.total_stride
    if x.shape[1] % s or x.shape[2] % s:
        raise ShapeError(f"image {x.shape[1:]} not divisible by total stride {s}")
    y = (x * weights.input_scale).astype(np.float32)[:, None]
    dil = 1
    for l in weights.layers:
        y = _block(y, l, l.stride, 1, dil)
        dil *= l.stride
    mid = FeatureMap(y[0])
    for l in weights.high:
        y = _block(y, l, l.stride, 1, dil)
        dil *= l.stride
    return mid, (FeatureMap(y[0]) if weights.high else None)


# ---------------------------------------------------------------------------
# serialisation


def backbone_tensors(weights, prefix="backbone"):
    meta = {"input_scale": weights.input_scale,
            "layers": [l.spec() for l in weights.layers],
            "high": [l.spec() for l in weights.high]}
    tensors = {}
    for kind, layers in (("main", weights.layers), ("high", weights.high)):
        for i, l in enumerate(layers):
            for attr in ("kernel", "bias", "scale", "shift"):
                tensors[f"{prefix}.{kind}.{i}.{attr}"] = getattr(l, attr)
    return meta, tensors


def backbone_from_tensors(meta, tensors, prefix="backbone"):
    def build(kind):
        out = []
        for i, spec in enumerate(meta[kind]):
            key = f"{prefix}.{'main' if kind == 'layers' else 'high'}.{i}"
            try:
                out.append(ConvLayer(tensors[key + ".kernel"], tensors[key + ".bias"],
                                     tensors[key + ".scale"], tensors[key + ".shift"],
                                     int(spec["stride"]), spec["nonlinearity"] == "relu"))
            except KeyError as exc:
                raise DataError(f"missing tensor {exc}") from None
        return out

    return BackboneWeights(build("layers"), build("high"), float(meta["input_scale"]))


def save_backbone(weights, path):
    meta, tensors = backbone_tensors(weights)
    save_container(path, {"backbone": meta}, tensors)


def load_backbone(path):
    meta, tensors = load_container(path)
    return backbone_from_tensors(meta["backbone"], tensors)
