"""Minimal deterministic CNN forward pass with named tap points and feature-map masking.

Activations are numpy arrays of shape ``(C, H, W)`` in float32 (channel-major,
then row, then column). Kernels accumulate in float64 and round to float32 on
output so results do not depend on BLAS summation width.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .fileio import atomic_write

MAGIC = "FMFNET1"


class NetworkError(ValueError):
    """Raised for invalid network specifications or forward-pass arguments."""


class NetworkFormatError(NetworkError):
    """Raised when an FMFNET1 file cannot be parsed."""

    def __init__(self, message: str, layer: str | None = None, offset: int | None = None):
        where = []
        if layer is not None:
            where.append(f"layer {layer!r}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.layer = layer
        self.offset = offset


def as_tensor(data, shape: tuple[int, int, int] | None = None) -> np.ndarray:
    """Return a read-only float32 ``(C, H, W)`` array, checking finiteness."""
    arr = np.array(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise NetworkError(f"tensor must be (C, H, W), got shape {arr.shape}")
    if shape is not None and arr.shape != shape:
        raise NetworkError(f"tensor shape {arr.shape} does not match expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise NetworkError("tensor contains non-finite values")
    arr.setflags(write=False)
    return arr


def _frozen(arr, shape: tuple[int, ...], what: str, name: str) -> np.ndarray:
    out = np.array(arr, dtype=np.float32)
    if out.size != math.prod(shape):
        raise NetworkError(f"{name}: {what} has {out.size} values, expected {math.prod(shape)}")
    out = out.reshape(shape)
    out.setflags(write=False)
    return out


# --------------------------------------------------------------------------
# layer kernels


def conv2d(x: np.ndarray, weights: np.ndarray, biases: np.ndarray, stride: int = 1,
           padding: int = 0) -> np.ndarray:
    cin, h, w = x.shape
    cout, wcin, kh, kw = weights.shape
    if wcin != cin:
        raise NetworkError(f"conv2d: input has {cin} channels, weights expect {wcin}")
    xp = np.pad(x.astype(np.float64), ((0, 0), (padding, padding), (padding, padding)))
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise NetworkError("conv2d: kernel larger than padded input")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (cin, oh, ow, kh, kw)
    oh, ow = win.shape[1], win.shape[2]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(cin * kh * kw, oh * ow)
    out = weights.reshape(cout, -1).astype(np.float64) @ cols
    out += biases.astype(np.float64)[:, None]
    return out.reshape(cout, oh, ow).astype(np.float32)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0))


def _pool_extent(n: int, kernel: int, stride: int) -> int:
    out = max(1, -(-(n - kernel) // stride) + 1)
    while (out - 1) * stride >= n:
        out -= 1
    return out


def maxpool(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Spatial max pooling; windows hanging over the border use the valid cells only."""
    c, h, w = x.shape
    oh, ow = _pool_extent(h, kernel, stride), _pool_extent(w, kernel, stride)
    ph = max(0, (oh - 1) * stride + kernel - h)
    pw = max(0, (ow - 1) * stride + kernel - w)
    xp = np.pad(x, ((0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :oh, :ow]
    return win.max(axis=(3, 4)).astype(np.float32)


def lrn(x: np.ndarray, depth_radius: int, alpha: float, beta: float, bias: float) -> np.ndarray:
    """Cross-channel local response normalisation.

    ``out[c] = x[c] / (bias + alpha * sum(x[c']**2 for |c' - c| <= depth_radius)) ** beta``
    """
    x64 = x.astype(np.float64)
    sq = np.pad(x64 * x64, ((depth_radius, depth_radius), (0, 0), (0, 0)))
    n = x.shape[0]
    sqr_sum = np.zeros_like(x64)
    for k in range(2 * depth_radius + 1):
        sqr_sum += sq[k:k + n]
    return (x64 / (bias + alpha * sqr_sum) ** beta).astype(np.float32)


def fully_connected(x: np.ndarray, weights: np.ndarray, biases: np.ndarray) -> np.ndarray:
    flat = x.reshape(-1).astype(np.float64)
    if flat.size != weights.shape[1]:
        raise NetworkError(f"fully_connected: input has {flat.size} values, weights expect {weights.shape[1]}")
    out = weights.astype(np.float64) @ flat + biases.astype(np.float64)
    return out.astype(np.float32).reshape(-1, 1, 1)


# --------------------------------------------------------------------------
# layer descriptions


@dataclass(frozen=True, eq=False)
class Conv:
    name: str
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    weights: np.ndarray
    biases: np.ndarray
    stride: int = 1
    padding: int = 0
    kind = "conv"

    def __post_init__(self):
        if self.stride < 1 or self.kernel_h < 1 or self.kernel_w < 1 or self.padding < 0:
            raise NetworkError(f"{self.name}: need stride >= 1, kernel >= 1, padding >= 0")
        shape = (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
        object.__setattr__(self, "weights", _frozen(self.weights, shape, "weights", self.name))
        object.__setattr__(self, "biases", _frozen(self.biases, (self.out_channels,), "biases", self.name))

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise NetworkError(f"{self.name}: expects {self.in_channels} input channels, got {c}")
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise NetworkError(f"{self.name}: kernel does not fit input of size {h}x{w}")
        return (self.out_channels, oh, ow)

    def __call__(self, x):
        return conv2d(x, self.weights, self.biases, self.stride, self.padding)

    def blobs(self):
        return (self.weights, self.biases)


@dataclass(frozen=True)
class ReLU:
    name: str
    kind = "relu"

    def output_shape(self, shape):
        return shape

    def __call__(self, x):
        return relu(x)

    def blobs(self):
        return ()


@dataclass(frozen=True)
class MaxPool:
    name: str
    kernel: int
    stride: int
    kind = "maxpool"

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise NetworkError(f"{self.name}: need kernel >= 1 and stride >= 1")

    def output_shape(self, shape):
        c, h, w = shape
        return (c, _pool_extent(h, self.kernel, self.stride), _pool_extent(w, self.kernel, self.stride))

    def __call__(self, x):
        return maxpool(x, self.kernel, self.stride)

    def blobs(self):
        return ()


@dataclass(frozen=True)
class LRN:
    name: str
    depth_radius: int
    alpha: float
    beta: float
    bias: float = 1.0
    kind = "lrn"

    def __post_init__(self):
        if self.depth_radius < 0:
            raise NetworkError(f"{self.name}: depth radius must be >= 0")

    def output_shape(self, shape):
        return shape

    def __call__(self, x):
        return lrn(x, self.depth_radius, self.alpha, self.beta, self.bias)

    def blobs(self):
        return ()


@dataclass(frozen=True, eq=False)
class FullyConnected:
    name: str
    in_dim: int
    out_dim: int
    weights: np.ndarray
    biases: np.ndarray
    kind = "fc"

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights, (self.out_dim, self.in_dim), "weights", self.name))
        object.__setattr__(self, "biases", _frozen(self.biases, (self.out_dim,), "biases", self.name))

    def output_shape(self, shape):
        if math.prod(shape) != self.in_dim:
            raise NetworkError(f"{self.name}: expects {self.in_dim} inputs, got {math.prod(shape)}")
        return (self.out_dim, 1, 1)

    def __call__(self, x):
        return fully_connected(x, self.weights, self.biases)

    def blobs(self):
        return (self.weights, self.biases)


Layer = Union[Conv, ReLU, MaxPool, LRN, FullyConnected]


@dataclass(frozen=True)
class FilterMask:
    """Feature maps to zero at the output of one convolutional layer."""

    layer: str
    removed: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "removed", frozenset(int(i) for i in self.removed))

    def __len__(self):
        return len(self.removed)

    def union(self, indices: Iterable[int]) -> "FilterMask":
        return FilterMask(self.layer, self.removed | frozenset(indices))

    def sorted(self) -> list[int]:
        return sorted(self.removed)


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Ordered layers plus input shape ``(W, H, C)``; validated on construction."""

    input_shape: tuple[int, int, int]
    layers: tuple[Layer, ...]
    _shapes: tuple = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if len(self.layers) == 0:
            raise NetworkError("network has no layers")
        index = {}
        for i, layer in enumerate(self.layers):
            if layer.name in index:
                raise NetworkError(f"duplicate layer name {layer.name!r}")
            index[layer.name] = i
        w, h, c = self.input_shape
        shape = (c, h, w)
        shapes = []
        for layer in self.layers:
            shape = layer.output_shape(shape)
            shapes.append(shape)
        object.__setattr__(self, "_shapes", tuple(shapes))
        object.__setattr__(self, "_index", index)

    @property
    def tensor_shape(self) -> tuple[int, int, int]:
        """Input shape in array order ``(C, H, W)``."""
        w, h, c = self.input_shape
        return (c, h, w)

    @property
    def names(self) -> list[str]:
        return [layer.name for layer in self.layers]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise NetworkError(f"unknown layer {name!r}") from None

    def layer(self, name: str) -> Layer:
        return self.layers[self.index(name)]

    def output_shape(self, name: str) -> tuple[int, int, int]:
        """Activation shape ``(C, H, W)`` at the named layer."""
        return self._shapes[self.index(name)]

    def conv_names(self) -> list[str]:
        return [layer.name for layer in self.layers if isinstance(layer, Conv)]

    def activation_tap(self, name: str) -> str:
        """The ReLU directly after ``name`` if there is one, else ``name`` itself."""
        i = self.index(name)
        if i + 1 < len(self.layers) and isinstance(self.layers[i + 1], ReLU):
            return self.layers[i + 1].name
        return name

    def with_zeroed_maps(self, mask: FilterMask) -> "NetworkSpec":
        """Clone with the weights and biases of the masked feature maps set to zero."""
        layer = self.layer(mask.layer)
        if not isinstance(layer, Conv):
            raise NetworkError(f"mask layer {mask.layer!r} is not a convolution")
        idx = mask.sorted()
        w = np.array(layer.weights)
        b = np.array(layer.biases)
        w[idx] = 0
        b[idx] = 0
        layers = list(self.layers)
        layers[self.index(mask.layer)] = replace(layer, weights=w, biases=b)
        return NetworkSpec(self.input_shape, tuple(layers))

    def check_mask(self, mask: FilterMask) -> None:
        layer = self.layer(mask.layer)
        if not isinstance(layer, Conv):
            raise NetworkError(f"mask layer {mask.layer!r} is not a convolution")
        c = layer.out_channels
        bad = [i for i in mask.removed if not 0 <= i < c]
        if bad:
            raise NetworkError(f"mask indices {sorted(bad)} out of range for {c} maps in {mask.layer!r}")
        if len(mask.removed) > c // 2:
            raise NetworkError(
                f"mask removes {len(mask.removed)} of {c} maps in {mask.layer!r}; "
                f"at most {c // 2} (half the stack) may be removed")


# --------------------------------------------------------------------------
# forward passes


def _zero_channels(x: np.ndarray, removed) -> np.ndarray:
    if not removed:
        return x
    x = x.copy()
    x[sorted(removed)] = 0
    return x


def _run(net: NetworkSpec, x: np.ndarray, start: int, stop: int, mask: FilterMask | None,
         mask_at: int | None) -> np.ndarray:
    for i in range(start, stop + 1):
        x = net.layers[i](x)
        if mask_at == i:
            x = _zero_channels(x, mask.removed)
    if not x.flags.writeable:
        return x
    x.setflags(write=False)
    return x


def forward(net: NetworkSpec, image, tap: str, mask: FilterMask | None = None) -> np.ndarray:
    """Activation at ``tap`` for one image, with ``mask`` applied at its layer's output."""
    stop = net.index(tap)
    mask_at = None
    if mask is not None:
        net.check_mask(mask)
        mask_at = net.index(mask.layer)
        if mask_at > stop:
            raise NetworkError(f"mask layer {mask.layer!r} comes after tap {tap!r}")
    x = np.asarray(image, dtype=np.float32)
    if x.shape != net.tensor_shape:
        raise NetworkError(f"input shape {x.shape} does not match network input {net.tensor_shape}")
    return _run(net, x, 0, stop, mask, mask_at)


def forward_cached(net: NetworkSpec, cached, start: str, tap: str,
                   mask: FilterMask | None = None) -> np.ndarray:
    """Resume from the unmasked activation ``cached`` at layer ``start``.

    Zeroing channel j of the cached activation is the same as zeroing map j's
    weights and bias, so this equals ``forward(net, image, tap, mask)`` exactly.
    """
    begin = net.index(start)
    stop = net.index(tap)
    if begin > stop:
        raise NetworkError(f"cache layer {start!r} comes after tap {tap!r}")
    x = np.asarray(cached, dtype=np.float32)
    if x.shape != net.output_shape(start):
        raise NetworkError(f"cached shape {x.shape} does not match {start!r} output {net.output_shape(start)}")
    if mask is not None:
        if mask.layer != start:
            raise NetworkError(f"mask layer {mask.layer!r} must equal cache layer {start!r}")
        net.check_mask(mask)
        x = _zero_channels(x, mask.removed)
    return _run(net, x, begin + 1, stop, None, None)


# --------------------------------------------------------------------------
# FMFNET1 serialisation
#
# Text header, one line per layer, terminated by "end"; then a contiguous
# little-endian float32 blob holding each parameterised layer's weights
# (conv: out, in, row, col) followed by its biases, in layer order.


def _fmt(v: float) -> str:
    return repr(float(v))


def _header_line(layer: Layer) -> str:
    if isinstance(layer, Conv):
        return (f"conv {layer.name} in={layer.in_channels} out={layer.out_channels} "
                f"kh={layer.kernel_h} kw={layer.kernel_w} stride={layer.stride} pad={layer.padding}")
    if isinstance(layer, ReLU):
        return f"relu {layer.name}"
    if isinstance(layer, MaxPool):
        return f"maxpool {layer.name} kernel={layer.kernel} stride={layer.stride}"
    if isinstance(layer, LRN):
        return (f"lrn {layer.name} radius={layer.depth_radius} alpha={_fmt(layer.alpha)} "
                f"beta={_fmt(layer.beta)} bias={_fmt(layer.bias)}")
    if isinstance(layer, FullyConnected):
        return f"fc {layer.name} in={layer.in_dim} out={layer.out_dim}"
    raise NetworkError(f"cannot serialise layer {layer!r}")


def dumps_network(net: NetworkSpec) -> bytes:
    w, h, c = net.input_shape
    lines = [MAGIC, f"input {w} {h} {c}", f"layers {len(net.layers)}"]
    lines += [_header_line(layer) for layer in net.layers]
    lines.append("end")
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for layer in net.layers for a in layer.blobs())
    return ("\n".join(lines) + "\n").encode("ascii") + blob


def save_network(net: NetworkSpec, path) -> None:
    atomic_write(path, dumps_network(net))


_INT_KEYS = {"in", "out", "kh", "kw", "stride", "pad", "kernel", "radius"}


def _parse_fields(tokens: list[str], name: str, offset: int) -> dict:
    fields = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep:
            raise NetworkFormatError(f"expected key=value, got {tok!r}", name, offset)
        try:
            fields[key] = int(value) if key in _INT_KEYS else float(value)
        except ValueError:
            raise NetworkFormatError(f"bad value for {key!r}: {value!r}", name, offset) from None
    return fields


def loads_network(data: bytes) -> NetworkSpec:
    offset = 0

    def next_line():
        nonlocal offset
        end = data.find(b"\n", offset)
        if end < 0:
            raise NetworkFormatError("unterminated header", offset=offset)
        start, offset = offset, end + 1
        try:
            return start, data[start:end].decode("ascii").strip()
        except UnicodeDecodeError:
            raise NetworkFormatError("header is not ASCII text", offset=start) from None

    if not data.startswith(MAGIC.encode()):
        raise NetworkFormatError(f"missing {MAGIC} magic", offset=0)
    next_line()
    pos, line = next_line()
    parts = line.split()
    try:
        if parts[0] != "input" or len(parts) != 4:
            raise ValueError
        input_shape = tuple(int(v) for v in parts[1:])
    except (ValueError, IndexError):
        raise NetworkFormatError(f"malformed input line {line!r}", offset=pos) from None
    pos, line = next_line()
    parts = line.split()
    try:
        if parts[0] != "layers" or len(parts) != 2:
            raise ValueError
        n_layers = int(parts[1])
    except (ValueError, IndexError):
        raise NetworkFormatError(f"malformed layers line {line!r}", offset=pos) from None

    headers = []
    for _ in range(n_layers):
        pos, line = next_line()
        parts = line.split()
        if len(parts) < 2:
            raise NetworkFormatError(f"malformed layer line {line!r}", offset=pos)
        headers.append((parts[0], parts[1], _parse_fields(parts[2:], parts[1], pos), pos))
    pos, line = next_line()
    if line != "end":
        raise NetworkFormatError(f"expected 'end' after {n_layers} layers, got {line!r}", offset=pos)

    blob_off = offset

    def take(count: int, name: str) -> np.ndarray:
        nonlocal blob_off
        nbytes = 4 * count
        if blob_off + nbytes > len(data):
            have = (len(data) - blob_off) // 4
            raise NetworkFormatError(f"truncated blob: need {count} values, {have} left", name, blob_off)
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=blob_off).astype(np.float32)
        blob_off += nbytes
        return arr

    layers = []
    for kind, name, f, pos in headers:
        try:
            if kind == "conv":
                shape = (f["out"], f["in"], f["kh"], f["kw"])
                w = take(math.prod(shape), name)
                b = take(f["out"], name)
                layers.append(Conv(name, f["in"], f["out"], f["kh"], f["kw"], w, b,
                                   stride=f.get("stride", 1), padding=f.get("pad", 0)))
            elif kind == "relu":
                layers.append(ReLU(name))
            elif kind == "maxpool":
                layers.append(MaxPool(name, f["kernel"], f["stride"]))
            elif kind == "lrn":
                layers.append(LRN(name, f["radius"], f["alpha"], f["beta"], f.get("bias", 1.0)))
            elif kind == "fc":
                w = take(f["out"] * f["in"], name)
                b = take(f["out"], name)
                layers.append(FullyConnected(name, f["in"], f["out"], w, b))
            else:
                raise NetworkFormatError(f"unknown layer kind {kind!r}", name, pos)
        except KeyError as e:
            raise NetworkFormatError(f"missing field {e.args[0]!r}", name, pos) from None
        except NetworkFormatError:
            raise
        except NetworkError as e:
            raise NetworkFormatError(str(e), name, pos) from None
    if blob_off != len(data):
        raise NetworkFormatError(f"{len(data) - blob_off} trailing bytes after last blob", offset=blob_off)
    try:
        return NetworkSpec(input_shape, tuple(layers))
    except NetworkError as e:
        # shape-chain failures name the offending layer in the message
        name = next((l.name for l in layers if str(e).startswith(l.name + ":")), None)
        pos = next((h[3] for h in headers if h[1] == name), None)
        raise NetworkFormatError(str(e), name, pos) from None


def load_network(path) -> NetworkSpec:
    return loads_network(Path(path).read_bytes())
