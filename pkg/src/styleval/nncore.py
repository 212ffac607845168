"""Minimal differentiable convolutional network for feature extraction.

A small VGG-shaped stack (conv 3x3 stride 1 same-padding, relu, maxpool 2x2)
evaluated in float64. Only the gradient with respect to the *input image* is
ever needed, so convolutions carry no weight gradients. Named taps (R11..R51,
R42) mark the relu outputs that style and content losses read.

Loss closures see a dict of tap name -> FeatureMap and must return both the
scalar value and the gradient with respect to each feature map they read;
`input_gradient` backpropagates those through the stack to the pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

STYLE_TAPS = ("R11", "R21", "R31", "R41", "R51")
CONTENT_TAP = "R42"
ALL_TAPS = ("R11", "R21", "R31", "R41", "R42", "R51")


class TapError(KeyError):
    pass


class ActivationError(FloatingPointError):
    """Non-finite activation at a tap; usually corrupt weights."""


class WeightFormatError(ValueError):
    """Malformed NNW1 weight file."""


@dataclass(frozen=True)
class FeatureMap:
    """One layer's activations, laid out (H, W, C) row-major."""

    tap: str
    data: np.ndarray

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def positions(self) -> int:
        return self.data.shape[0] * self.data.shape[1]

    def matrix(self) -> np.ndarray:
        """Features as a (C, M) matrix, positions in row-major scan order."""
        h, w, c = self.data.shape
        return self.data.reshape(h * w, c).T


@dataclass
class ConvLayer:
    kernel: np.ndarray  # (out, in, kh, kw)
    bias: np.ndarray  # (out,)
    name: str = "conv"

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]


@dataclass
class ReluLayer:
    name: str = "relu"


@dataclass
class MaxPoolLayer:
    name: str = "pool"


Layer = ConvLayer | ReluLayer | MaxPoolLayer


@dataclass
class NetworkSpec:
    layers: list
    taps: dict  # tap name -> layer index (output of that layer)
    input_shift: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def validate(self) -> None:
        prev_out = 3
        for layer in self.layers:
            if isinstance(layer, ConvLayer):
                if layer.in_channels != prev_out:
                    raise ValueError(
                        f"conv {layer.name}: expects {layer.in_channels} input "
                        f"channels, previous layer provides {prev_out}"
                    )
                prev_out = layer.out_channels
        for name, idx in self.taps.items():
            if not 0 <= idx < len(self.layers):
                raise TapError(f"tap {name} points at invalid layer {idx}")


def desk_net(seed: int = 0, widths=(8, 16, 32, 64, 64), pools=(True, True, True, True)) -> NetworkSpec:
    """Desk-scale five-block network mirroring the VGG tap layout.

    Kernels are He-initialized from the seed, biases zero; real weight sets
    can be loaded through the NNW1 format instead. `pools` switches the
    max-pool after blocks 1..4 (all on = VGG layout; gradient-check nets
    drop late pools so every tap survives an 8px input).
    """
    rng = np.random.default_rng(seed)

    def conv(cin, cout, name):
        k = rng.standard_normal((cout, cin, 3, 3)) * np.sqrt(2.0 / (cin * 9))
        # rounded through f32 so NNW1 round trips are bit-exact
        k = k.astype("<f4").astype(np.float64)
        return ConvLayer(kernel=k, bias=np.zeros(cout), name=name)

    w1, w2, w3, w4, w5 = widths
    layers: list = []
    taps = {}

    def block(convs, tap_names, pool_name):
        for c, tname in zip(convs, tap_names):
            layers.append(c)
            layers.append(ReluLayer(c.name.replace("conv", "relu")))
            if tname:
                taps[tname] = len(layers) - 1
        if pool_name:
            layers.append(MaxPoolLayer(pool_name))

    block([conv(3, w1, "conv1_1")], ["R11"], "pool1" if pools[0] else None)
    block([conv(w1, w2, "conv2_1")], ["R21"], "pool2" if pools[1] else None)
    block([conv(w2, w3, "conv3_1")], ["R31"], "pool3" if pools[2] else None)
    block(
        [conv(w3, w4, "conv4_1"), conv(w4, w4, "conv4_2")],
        ["R41", "R42"],
        "pool4" if pools[3] else None,
    )
    block([conv(w4, w5, "conv5_1")], ["R51"], None)
    net = NetworkSpec(layers=layers, taps=taps)
    net.validate()
    return net


# ---------------------------------------------------------------------------
# forward / backward primitives
# ---------------------------------------------------------------------------

def _conv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    kh, kw = layer.kernel.shape[2], layer.kernel.shape[3]
    pt, pb = (kh - 1) // 2, kh // 2
    pl, pr = (kw - 1) // 2, kw // 2
    xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0)))
    # (H, W, C, kh, kw) -> (H*W, kh*kw*C)
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))
    h, w = win.shape[0], win.shape[1]
    cols = win.transpose(0, 1, 3, 4, 2).reshape(h * w, kh * kw * x.shape[2])
    wmat = layer.kernel.transpose(2, 3, 1, 0).reshape(kh * kw * x.shape[2], -1)
    out = cols @ wmat + layer.bias
    return out.reshape(h, w, layer.out_channels)


def _conv_backward(dy: np.ndarray, layer: ConvLayer, in_shape) -> np.ndarray:
    h, w, cin = in_shape
    kh, kw = layer.kernel.shape[2], layer.kernel.shape[3]
    pt, pb = (kh - 1) // 2, kh // 2
    pl, pr = (kw - 1) // 2, kw // 2
    wmat = layer.kernel.transpose(2, 3, 1, 0).reshape(kh * kw * cin, -1)
    dcols = (dy.reshape(-1, layer.out_channels) @ wmat.T).reshape(h, w, kh, kw, cin)
    dxp = np.zeros((h + pt + pb, w + pl + pr, cin))
    for di in range(kh):
        for dj in range(kw):
            dxp[di : di + h, dj : dj + w] += dcols[:, :, di, dj, :]
    return dxp[pt : pt + h, pl : pl + w]


def _pool_forward(x: np.ndarray):
    h, w, c = x.shape
    he, we = (h // 2) * 2, (w // 2) * 2
    xc = x[:he, :we]
    win = xc.reshape(he // 2, 2, we // 2, 2, c).transpose(0, 2, 1, 3, 4)
    win = win.reshape(he // 2, we // 2, 4, c)
    idx = np.argmax(win, axis=2)  # first max in (0,0),(0,1),(1,0),(1,1) order
    out = np.take_along_axis(win, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return out, (idx, x.shape)


def _pool_backward(dy: np.ndarray, cache) -> np.ndarray:
    idx, in_shape = cache
    h, w, c = in_shape
    ho, wo = dy.shape[0], dy.shape[1]
    dwin = np.zeros((ho, wo, 4, c))
    np.put_along_axis(dwin, idx[:, :, None, :], dy[:, :, None, :], axis=2)
    dx = np.zeros(in_shape)
    dx[: ho * 2, : wo * 2] = (
        dwin.reshape(ho, wo, 2, 2, c).transpose(0, 2, 1, 3, 4).reshape(ho * 2, wo * 2, c)
    )
    return dx


def _run_layers(x: np.ndarray, net: NetworkSpec, last_idx: int, keep_cache: bool):
    """Run layers 0..last_idx; returns activations per layer index + caches."""
    acts = {}
    caches = {}
    cur = x
    for i, layer in enumerate(net.layers[: last_idx + 1]):
        if cur.shape[0] < 1 or cur.shape[1] < 1:
            raise ValueError(f"input too small: no spatial extent left at layer {i}")
        if isinstance(layer, ConvLayer):
            if keep_cache:
                caches[i] = cur.shape
            cur = _conv_forward(cur, layer)
        elif isinstance(layer, ReluLayer):
            if keep_cache:
                caches[i] = cur > 0
            cur = np.maximum(cur, 0.0)
        elif isinstance(layer, MaxPoolLayer):
            cur, cache = _pool_forward(cur)
            if keep_cache:
                caches[i] = cache
        else:
            raise TypeError(f"unknown layer type {type(layer)!r}")
        acts[i] = cur
    return acts, caches


def _resolve_taps(net: NetworkSpec, taps) -> dict:
    out = {}
    for name in taps:
        if name not in net.taps:
            raise TapError(f"unknown tap {name!r}; net has {sorted(net.taps)}")
        out[name] = net.taps[name]
    return out


def forward(image: np.ndarray, net: NetworkSpec, taps) -> dict:
    """Feature maps at the requested taps. Deterministic for fixed inputs."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    tap_idx = _resolve_taps(net, taps)
    if not tap_idx:
        return {}
    last = max(tap_idx.values())
    x0 = image - net.input_shift
    acts, _ = _run_layers(x0, net, last, keep_cache=False)
    result = {}
    for name, idx in tap_idx.items():
        data = acts[idx]
        if not np.all(np.isfinite(data)):
            raise ActivationError(f"non-finite activation at tap {name}")
        result[name] = FeatureMap(tap=name, data=data)
    return result


def input_gradient(image: np.ndarray, net: NetworkSpec, loss, taps):
    """Evaluate `loss` on the tap features and backpropagate to the image.

    `loss(features)` gets tap name -> FeatureMap and must return
    (value, {tap: dLoss/dFeature array}). Returns (value, dLoss/dImage).
    """
    image = np.asarray(image, dtype=np.float64)
    tap_idx = _resolve_taps(net, taps)
    last = max(tap_idx.values())
    x0 = image - net.input_shift
    acts, caches = _run_layers(x0, net, last, keep_cache=True)
    features = {name: FeatureMap(tap=name, data=acts[idx]) for name, idx in tap_idx.items()}
    value, fgrads = loss(features)
    if not np.isfinite(value):
        raise ActivationError(f"loss returned non-finite value {value!r}")

    grads_at = {}
    for name, g in fgrads.items():
        idx = tap_idx[name]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != acts[idx].shape:
            raise ValueError(f"gradient shape {g.shape} != feature shape {acts[idx].shape} at {name}")
        grads_at[idx] = grads_at.get(idx, 0.0) + g

    dcur = np.zeros_like(acts[last])
    for i in range(last, -1, -1):
        if i in grads_at:
            dcur = dcur + grads_at[i]
        layer = net.layers[i]
        if isinstance(layer, ConvLayer):
            dcur = _conv_backward(dcur, layer, caches[i])
        elif isinstance(layer, ReluLayer):
            dcur = dcur * caches[i]
        elif isinstance(layer, MaxPoolLayer):
            dcur = _pool_backward(dcur, caches[i])
    return value, dcur


# ---------------------------------------------------------------------------
# upsampling
# ---------------------------------------------------------------------------

def _nn_index(target: int, source: int) -> np.ndarray:
    return (np.arange(target) * source) // target


def upsample(fm: FeatureMap, target_h: int, target_w: int) -> FeatureMap:
    """Nearest-neighbor replication to (target_h, target_w)."""
    if target_h < fm.height or target_w < fm.width:
        raise ValueError(
            f"target {(target_h, target_w)} smaller than source {(fm.height, fm.width)}"
        )
    rows = _nn_index(target_h, fm.height)
    cols = _nn_index(target_w, fm.width)
    return FeatureMap(tap=fm.tap, data=fm.data[rows][:, cols])


def upsample_array(data: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    rows = _nn_index(target_h, data.shape[0])
    cols = _nn_index(target_w, data.shape[1])
    return data[rows][:, cols]


def upsample_adjoint(grad: np.ndarray, source_h: int, source_w: int) -> np.ndarray:
    """Adjoint of nearest-neighbor upsampling: sum over replicated positions."""
    th, tw, c = grad.shape
    rows = _nn_index(th, source_h)
    cols = _nn_index(tw, source_w)
    tmp = np.zeros((source_h, tw, c))
    np.add.at(tmp, rows, grad)
    out = np.zeros((source_h, source_w, c))
    np.add.at(out.transpose(1, 0, 2), cols, tmp.transpose(1, 0, 2))
    return out


# ---------------------------------------------------------------------------
# NNW1 weight files
# ---------------------------------------------------------------------------

_MAGIC = b"NNW1"
_SHIFT_MAGIC = b"SHFT"
_TYPE_CODES = {ConvLayer: 0, ReluLayer: 1, MaxPoolLayer: 2}


def save_weights(net: NetworkSpec, path) -> None:
    import struct

    chunks = [_MAGIC, struct.pack("<I", len(net.layers))]
    for layer in net.layers:
        name = layer.name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name)) + name)
        chunks.append(struct.pack("<B", _TYPE_CODES[type(layer)]))
        if isinstance(layer, ConvLayer):
            o, i, kh, kw = layer.kernel.shape
            chunks.append(struct.pack("<IIII", o, i, kh, kw))
            chunks.append(layer.kernel.astype("<f4").tobytes())
            chunks.append(layer.bias.astype("<f4").tobytes())
    if np.any(net.input_shift != 0.0):
        chunks.append(_SHIFT_MAGIC + np.asarray(net.input_shift, dtype="<f4").tobytes())
    with open(str(path), "wb") as f:
        f.write(b"".join(chunks))


def load_weights(path) -> NetworkSpec:
    import struct

    with open(str(path), "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise WeightFormatError(f"bad magic {raw[:4]!r}")
    pos = 4

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise WeightFormatError(f"truncated file while reading {what}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    (n_layers,) = struct.unpack("<I", take(4, "layer count"))
    layers = []
    conv_seen = 0
    for li in range(n_layers):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (code,) = struct.unpack("<B", take(1, "type code"))
        if code == 0:
            o, i, kh, kw = struct.unpack("<IIII", take(16, "conv dims"))
            if min(o, i, kh, kw) < 1 or max(o, i) > 1 << 16 or max(kh, kw) > 64:
                raise WeightFormatError(f"implausible conv dims {(o, i, kh, kw)}")
            kern = np.frombuffer(take(4 * o * i * kh * kw, "kernel data"), dtype="<f4")
            bias = np.frombuffer(take(4 * o, "bias data"), dtype="<f4")
            layers.append(
                ConvLayer(
                    kernel=kern.astype(np.float64).reshape(o, i, kh, kw),
                    bias=bias.astype(np.float64),
                    name=name,
                )
            )
            conv_seen += 1
        elif code == 1:
            layers.append(ReluLayer(name=name))
        elif code == 2:
            layers.append(MaxPoolLayer(name=name))
        else:
            raise WeightFormatError(f"unknown layer type code {code}")
    shift = np.zeros(3)
    if pos < len(raw):
        if raw[pos : pos + 4] != _SHIFT_MAGIC or len(raw) - pos != 16:
            raise WeightFormatError("trailing bytes are not a shift block")
        shift = np.frombuffer(raw[pos + 4 :], dtype="<f4").astype(np.float64)

    taps = _infer_taps(layers)
    net = NetworkSpec(layers=layers, taps=taps, input_shift=shift)
    net.validate()
    return net


def _infer_taps(layers) -> dict:
    """Tap names from the VGG naming convention (reluB_C), if present."""
    taps = {}
    for i, layer in enumerate(layers):
        if isinstance(layer, ReluLayer):
            n = layer.name.lower().replace("relu", "").replace("_", "")
            if len(n) == 2 and n.isdigit():
                taps[f"R{n}"] = i
    return taps
