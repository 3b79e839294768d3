"""AlexNet-encoder FCN with a two-stage up-convolution decoder.

The layer stack is fixed; channel widths and the patch size are
parameters. ``fcn_spec()`` with the default widths and a 608 px patch
gives the reference shapes::

    Data      3 x 608 x 608      Conv6     256 x 35 x 35
    Conv1    96 x 150 x 150      Conv7     256 x 35 x 35
    Pool1    96 x 75 x 75        Up-conv1   32 x 150 x 150
    Conv2   128 x 75 x 75        Concat    128 x 150 x 150
    Pool2   128 x 37 x 37        Conv8      64 x 150 x 150
    Conv3-5 192 x 37 x 37        Up-conv2    2 x 608 x 608
    Pool5   192 x 35 x 35        Prob        2 x 608 x 608
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import layers as L
from .layers import ShapeError

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "NetworkValidationError",
    "DEFAULT_WIDTHS",
    "fcn_spec",
    "propagate_shapes",
    "valid_patch_sizes",
    "nearest_valid_sizes",
    "input_support",
    "random_weights",
    "widths_from_weights",
    "Network",
    "build_network",
    "segment_patch",
]

KINDS = ("input", "convolution", "max-pool", "relu", "lrn", "up-convolution", "concat", "softmax")

DEFAULT_WIDTHS = {
    "Conv1": 96,
    "Conv2": 128,
    "Conv3": 192,
    "Conv4": 192,
    "Conv5": 192,
    "Conv6": 256,
    "Conv7": 256,
    "Up-conv1": 32,
    "Conv8": 64,
}

LRN_PARAMS = dict(n=5, alpha=1e-4, beta=0.75, k=2.0)


class NetworkValidationError(ValueError):
    """Weights or spec inconsistent with the layer stack."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    out_channels: int | None = None
    kernel: tuple[int, int] | None = None
    stride: int = 1
    padding: int = 0
    pool_rounding: str = "floor"
    # names of the layers feeding this one; empty means "the previous layer"
    bottoms: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown layer kind {self.kind!r}")
        if self.stride < 1:
            raise ValueError(f"{self.name}: stride must be >= 1")
        needs_kernel = self.kind in ("convolution", "max-pool", "up-convolution")
        if needs_kernel != (self.kernel is not None):
            raise ValueError(f"{self.name}: kernel must be given exactly for conv/pool/up-conv layers")

    @property
    def has_weights(self) -> bool:
        return self.kind in ("convolution", "up-convolution")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    patch_size: int = 608
    in_channels: int = 3

    def __getitem__(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    @property
    def weighted_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.has_weights]


def fcn_spec(patch_size: int = 608, widths: Mapping[str, int] | None = None, width_scale: float = 1.0) -> NetworkSpec:
    """The inflorescence FCN layer stack.

    ``widths`` overrides individual output channel counts; ``width_scale``
    shrinks all of them (at least one channel each), which keeps the
    topology and spatial shapes but makes test inference cheap.
    """
    w = dict(DEFAULT_WIDTHS)
    if width_scale != 1.0:
        w = {k: max(1, int(round(v * width_scale))) for k, v in w.items()}
    if widths:
        unknown = set(widths) - set(DEFAULT_WIDTHS)
        if unknown:
            raise ValueError(f"unknown layer widths: {sorted(unknown)}")
        w.update(widths)

    def conv(name, k, pad, stride=1):
        return [
            LayerSpec(name, "convolution", w[name], (k, k), stride, pad),
            LayerSpec(f"{name}/relu", "relu"),
        ]

    stack = [LayerSpec("Data", "input", 3)]
    stack += conv("Conv1", 11, 0, stride=4)
    stack += [
        LayerSpec("Pool1", "max-pool", kernel=(3, 3), stride=2, pool_rounding="ceil"),
        LayerSpec("Norm1", "lrn"),
    ]
    stack += conv("Conv2", 5, 2)
    stack += [
        LayerSpec("Pool2", "max-pool", kernel=(3, 3), stride=2, pool_rounding="ceil"),
        LayerSpec("Norm2", "lrn"),
    ]
    stack += conv("Conv3", 3, 1) + conv("Conv4", 3, 1) + conv("Conv5", 3, 1)
    stack += [LayerSpec("Pool5", "max-pool", kernel=(3, 3), stride=1, pool_rounding="ceil")]
    stack += conv("Conv6", 3, 1) + conv("Conv7", 3, 1)
    stack += [
        LayerSpec("Up-conv1", "up-convolution", w["Up-conv1"], (14, 14), stride=4),
        # ReLU runs in place, so "Conv1" here is the rectified activation
        LayerSpec("Concat", "concat", bottoms=("Conv1/relu", "Up-conv1")),
    ]
    stack += conv("Conv8", 3, 1)
    stack += [
        LayerSpec("Up-conv2", "up-convolution", 2, (12, 12), stride=4),
        LayerSpec("Prob", "softmax"),
    ]
    return NetworkSpec(tuple(stack), patch_size=patch_size)


def _bottoms(spec: NetworkSpec, idx: int) -> tuple[str, ...]:
    layer = spec.layers[idx]
    return layer.bottoms or (spec.layers[idx - 1].name,)


def propagate_shapes(spec: NetworkSpec, height: int | None = None, width: int | None = None) -> dict[str, tuple[int, int, int]]:
    """Output ``(C, H, W)`` of every layer for the given input size.

    Raises ``ShapeError`` naming the first layer whose shape arithmetic fails.
    """
    height = spec.patch_size if height is None else height
    width = height if width is None else width
    shapes: dict[str, tuple[int, int, int]] = {}
    for idx, layer in enumerate(spec.layers):
        if layer.kind == "input":
            shapes[layer.name] = (spec.in_channels, height, width)
            continue
        ins = [shapes[b] for b in _bottoms(spec, idx)]
        c, h, w = ins[0]
        if layer.kind == "convolution":
            k = layer.kernel
            h2 = L.conv_output_size(h, k[0], layer.stride, layer.padding)
            w2 = L.conv_output_size(w, k[1], layer.stride, layer.padding)
            out = (layer.out_channels, h2, w2)
        elif layer.kind == "max-pool":
            k = layer.kernel
            if k[0] > h or k[1] > w:
                raise ShapeError(f"{layer.name}: pool kernel {k} larger than input {h}x{w}")
            out = (c, L.pool_output_size(h, k[0], layer.stride, layer.pool_rounding),
                   L.pool_output_size(w, k[1], layer.stride, layer.pool_rounding))
        elif layer.kind == "up-convolution":
            k = layer.kernel
            out = (layer.out_channels, L.upconv_output_size(h, k[0], layer.stride), L.upconv_output_size(w, k[1], layer.stride))
        elif layer.kind == "concat":
            if any(s[1:] != ins[0][1:] for s in ins):
                raise ShapeError(f"{layer.name}: spatial mismatch between inputs {ins}")
            out = (sum(s[0] for s in ins), h, w)
        else:  # relu, lrn, softmax keep the shape
            out = (c, h, w)
        if out[1] < 1 or out[2] < 1:
            raise ShapeError(f"{layer.name}: non-positive output size {out} for input {ins[0]}")
        shapes[layer.name] = out
    return shapes


def _size_ok(spec: NetworkSpec, size: int) -> bool:
    try:
        shapes = propagate_shapes(spec, size, size)
    except ShapeError:
        return False
    return shapes[spec.layers[-1].name][1:] == (size, size)


def valid_patch_sizes(spec: NetworkSpec, upper: int = 4096) -> list[int]:
    """All patch sizes <= ``upper`` whose output resolution equals the input."""
    return [n for n in range(1, upper + 1) if _size_ok(spec, n)]


def nearest_valid_sizes(spec: NetworkSpec, size: int) -> tuple[int | None, int | None]:
    """Closest valid sizes below and above ``size`` (None if there is none)."""
    below = next((n for n in range(size - 1, 0, -1) if _size_ok(spec, n)), None)
    above = next((n for n in range(size + 1, size + 4097) if _size_ok(spec, n)), None)
    return below, above


def input_support(spec: NetworkSpec, size: int, lo: int, hi: int, layer: str | None = None) -> tuple[int, int, bool]:
    """Input rows (or columns) that output cells ``lo..hi`` depend on.

    Works on one spatial axis of a ``size``-wide input. Returns the
    inclusive input interval and whether it was reached without touching
    any zero padding, clipped pooling window or truncated up-convolution
    sum; when that flag is True the outputs are fully determined by the
    interval's input values and its phase relative to the patch origin.
    """
    shapes = propagate_shapes(spec, size, size)
    index = {l.name: i for i, l in enumerate(spec.layers)}

    def back(name: str, a: int, b: int) -> tuple[int, int, bool]:
        idx = index[name]
        lay = spec.layers[idx]
        if lay.kind == "input":
            return a, b, True
        bottoms = _bottoms(spec, idx)
        n_in = shapes[bottoms[0]][1]
        clean = True
        if lay.kind == "convolution":
            k, st, p = lay.kernel[0], lay.stride, lay.padding
            a, b = a * st - p, b * st - p + k - 1
        elif lay.kind == "max-pool":
            k, st = lay.kernel[0], lay.stride
            a, b = a * st, b * st + k - 1
        elif lay.kind == "up-convolution":
            k, st = lay.kernel[0], lay.stride
            a, b = -(-(a - k + 1) // st), b // st
        elif lay.kind == "concat":
            spans = [back(bot, a, b) for bot in bottoms]
            return min(s[0] for s in spans), max(s[1] for s in spans), all(s[2] for s in spans)
        if a < 0 or b > n_in - 1:
            clean = False
            a, b = max(a, 0), min(b, n_in - 1)
        a2, b2, c2 = back(bottoms[0], a, b)
        return a2, b2, clean and c2

    return back(layer or spec.layers[-1].name, lo, hi)


def _weight_shapes(spec: NetworkSpec) -> dict[str, tuple[tuple[int, ...], tuple[int, ...]]]:
    # input channel counts do not depend on the spatial size
    shapes = propagate_shapes(spec, 64)
    out = {}
    for idx, layer in enumerate(spec.layers):
        if layer.has_weights:
            cin = shapes[_bottoms(spec, idx)[0]][0]
            out[layer.name] = ((layer.out_channels, cin) + tuple(layer.kernel), (layer.out_channels,))
    return out


def random_weights(spec: NetworkSpec, seed: int = 0, scale: float = 0.05) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Seeded uniform ``[-scale, scale]`` weights and biases for every weighted layer."""
    rng = np.random.default_rng(seed)
    store = {}
    for name, (wshape, bshape) in _weight_shapes(spec).items():
        w = rng.uniform(-scale, scale, size=wshape).astype(np.float32)
        b = rng.uniform(-scale, scale, size=bshape).astype(np.float32)
        store[name] = (w, b)
    return store


def widths_from_weights(store: Mapping[str, tuple[np.ndarray, np.ndarray]]) -> dict[str, int]:
    """Recover layer widths from a weight store (output-channel axis of each blob)."""
    return {name: int(store[name][0].shape[0]) for name in DEFAULT_WIDTHS if name in store}


class Network:
    """A validated layer stack plus weights. Immutable once built; ``forward`` is reentrant."""

    def __init__(self, spec: NetworkSpec, weights: Mapping[str, tuple[np.ndarray, np.ndarray]]):
        self.spec = spec
        if not _size_ok(spec, spec.patch_size):
            raise NetworkValidationError(
                f"patch size {spec.patch_size} does not map to an equal-size output; "
                f"nearest valid sizes {nearest_valid_sizes(spec, spec.patch_size)}"
            )
        expected = _weight_shapes(spec)
        problems = []
        params = {}
        for name, (wshape, bshape) in expected.items():
            if name not in weights:
                problems.append(f"{name}: missing weights")
                continue
            w, b = weights[name]
            w = np.asarray(w, dtype=np.float32)
            b = np.asarray(b, dtype=np.float32)
            if w.shape != wshape:
                problems.append(f"{name}: weight shape {w.shape}, expected {wshape}")
            if b.shape != bshape:
                problems.append(f"{name}: bias shape {b.shape}, expected {bshape}")
            w.setflags(write=False)
            b.setflags(write=False)
            params[name] = (w, b)
        if problems:
            raise NetworkValidationError("; ".join(problems))
        self.params = params
        self.shapes = propagate_shapes(spec)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Run the stack on a ``(3, H, W)`` float tensor; returns the ``Prob`` output."""
        x = np.asarray(x, dtype=np.float32)
        c, h, w = x.shape
        for size in (h, w):
            if not _size_ok(self.spec, size):
                below, above = nearest_valid_sizes(self.spec, size)
                raise ShapeError(f"patch dimension {size} is not supported; nearest valid sizes are {below} and {above}")
        blobs: dict[str, np.ndarray] = {}
        spec = self.spec
        for idx, layer in enumerate(spec.layers):
            if layer.kind == "input":
                if c != spec.in_channels:
                    raise ShapeError(f"expected {spec.in_channels} input channels, got {c}")
                blobs[layer.name] = x
                continue
            names = _bottoms(spec, idx)
            inp = blobs[names[0]]
            if layer.kind == "convolution":
                w_, b_ = self.params[layer.name]
                out = L.conv_forward(inp, w_, b_, layer.stride, layer.padding)
            elif layer.kind == "up-convolution":
                w_, b_ = self.params[layer.name]
                out = L.up_conv_forward(inp, w_, b_, layer.stride)
            elif layer.kind == "relu":
                out = L.relu(inp)
            elif layer.kind == "max-pool":
                out = L.max_pool(inp, layer.kernel[0], layer.stride, layer.pool_rounding)
            elif layer.kind == "lrn":
                out = L.lrn(inp, **LRN_PARAMS)
            elif layer.kind == "concat":
                out = L.concat_channels(inp, blobs[names[1]])
            elif layer.kind == "softmax":
                out = L.softmax_channels(inp)
            else:  # pragma: no cover - guarded by LayerSpec
                raise ValueError(layer.kind)
            blobs[layer.name] = out
        return blobs[spec.layers[-1].name]


def build_network(spec: NetworkSpec, weights: Mapping[str, tuple[np.ndarray, np.ndarray]]) -> Network:
    return Network(spec, weights)


def segment_patch(net: Network, patch: np.ndarray) -> np.ndarray:
    """Class probabilities ``(2, H, W)`` for an ``(H, W, 3)`` uint8 patch.

    Channel 0 is non-inflorescence, channel 1 inflorescence. Pixel values
    are scaled to ``[0, 1]`` before the first convolution.
    """
    patch = np.asarray(patch)
    if patch.ndim != 3 or patch.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) patch, got shape {patch.shape}")
    x = patch.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0)
    return net.forward(x)
