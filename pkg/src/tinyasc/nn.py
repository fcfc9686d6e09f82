"""Sequential layer engine with hand-written backward passes.

Activations are NHWC: (batch, freq, time, channel). Parameters live in a flat
``dict[str, np.ndarray]`` keyed ``<layer>.<tensor>``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ShapeError(ValueError):
    pass


class LayerKind(str, enum.Enum):
    CONV3X3 = "conv3x3"
    DECOMPOSED = "decomposed"
    BATCHNORM = "batchnorm"
    RELU = "relu"
    AVGPOOL = "avgpool2x2"
    GAP = "gap"
    DROPOUT = "dropout"
    DENSE = "dense"
    SOFTMAX = "softmax"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    name: str = ""
    in_channels: int = 0
    out_channels: int = 0
    rate: float = 0.0
    # decomposed only: first 1x1 sub-conv carries a bias (set when a BN is folded in)
    bias: bool = False


@dataclass(frozen=True)
class TensorInfo:
    shape: tuple[int, ...]
    quantizable: bool  # conv/dense weights; everything else stays fp32
    trainable: bool


def conv(name, cin, cout):
    return LayerSpec(LayerKind.CONV3X3, name, cin, cout)


def batchnorm(name, channels):
    return LayerSpec(LayerKind.BATCHNORM, name, channels, channels)


def relu():
    return LayerSpec(LayerKind.RELU)


def avgpool():
    return LayerSpec(LayerKind.AVGPOOL)


def gap():
    return LayerSpec(LayerKind.GAP)


def dropout(rate=0.1):
    return LayerSpec(LayerKind.DROPOUT, rate=rate)


def dense(name, cin, cout):
    return LayerSpec(LayerKind.DENSE, name, cin, cout)


def softmax_layer():
    return LayerSpec(LayerKind.SOFTMAX)


# --- decomposition ------------------------------------------------------------


def sub_kernels(layer: LayerSpec) -> list[tuple[int, int, int, int]]:
    """(kh, kw, cin, cout) for each of the four sub-convolutions."""
    ci, co = layer.in_channels, layer.out_channels
    return [(1, 1, ci, ci // 4), (3, 1, ci // 4, ci // 2), (1, 3, ci // 2, ci // 4), (1, 1, ci // 4, co)]


def decompose(layer: LayerSpec) -> LayerSpec:
    """Replace a 3x3 conv by the 1x1 -> 3x1 -> 1x3 -> 1x1 chain.

    Layers whose input channel count is not divisible by 4 are returned unchanged.
    """
    if layer.kind is not LayerKind.CONV3X3:
        raise ValueError(f"can only decompose conv3x3 layers, got {layer.kind}")
    if layer.in_channels % 4:
        return layer
    return LayerSpec(LayerKind.DECOMPOSED, layer.name, layer.in_channels, layer.out_channels)


def decomposed_weight_count(cin: int, cout: int) -> int:
    return cin * cin + cin * cout // 4


# --- parameter bookkeeping ----------------------------------------------------


def tensor_infos(layer: LayerSpec) -> dict[str, TensorInfo]:
    n, ci, co = layer.name, layer.in_channels, layer.out_channels
    kind = layer.kind
    if kind is LayerKind.CONV3X3:
        return {f"{n}.w": TensorInfo((3, 3, ci, co), True, True)}
    if kind is LayerKind.DECOMPOSED:
        out = {f"{n}.{i}": TensorInfo(k, True, True) for i, k in enumerate(sub_kernels(layer))}
        if layer.bias:
            out[f"{n}.b"] = TensorInfo((ci // 4,), False, True)
        return out
    if kind is LayerKind.BATCHNORM:
        return {
            f"{n}.g": TensorInfo((ci,), False, True),
            f"{n}.b": TensorInfo((ci,), False, True),
            f"{n}.m": TensorInfo((ci,), False, False),
            f"{n}.v": TensorInfo((ci,), False, False),
        }
    if kind is LayerKind.DENSE:
        return {f"{n}.w": TensorInfo((ci, co), True, True), f"{n}.b": TensorInfo((co,), False, True)}
    return {}


def model_tensors(layers) -> dict[str, TensorInfo]:
    out: dict[str, TensorInfo] = {}
    for layer in layers:
        out.update(tensor_infos(layer))
    return out


@dataclass
class ParamCount:
    per_tensor: dict[str, int] = field(default_factory=dict)
    per_layer: dict[str, int] = field(default_factory=dict)
    quantizable: int = 0
    small: int = 0

    @property
    def total(self) -> int:
        return self.quantizable + self.small


def param_count(layers) -> ParamCount:
    pc = ParamCount()
    for layer in layers:
        infos = tensor_infos(layer)
        if not infos:
            continue
        layer_total = 0
        for name, info in infos.items():
            c = int(np.prod(info.shape))
            pc.per_tensor[name] = c
            layer_total += c
            if info.quantizable:
                pc.quantizable += c
            else:
                pc.small += c
        pc.per_layer[layer.name] = layer_total
    return pc


def conv_weight_count(layers) -> int:
    """Number of convolution kernel weights (standard or decomposed) in ``layers``."""
    total = 0
    for layer in layers:
        if layer.kind in (LayerKind.CONV3X3, LayerKind.DECOMPOSED):
            total += sum(int(np.prod(i.shape)) for i in tensor_infos(layer).values() if i.quantizable)
    return total


def init_params(layers, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-uniform weights, zero biases, BN gamma=1 beta=0 mean=0 var=1."""
    params = {}
    for name, info in model_tensors(layers).items():
        suffix = name.rsplit(".", 1)[1]
        if info.quantizable:
            fan_in = int(np.prod(info.shape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, size=info.shape).astype(dtype)
        elif suffix in ("g", "v"):
            params[name] = np.ones(info.shape, dtype=dtype)
        else:
            params[name] = np.zeros(info.shape, dtype=dtype)
    return params


# --- primitives ---------------------------------------------------------------


def conv_forward(x, w, b=None):
    """Stride-1, zero 'same'-padded cross-correlation with an odd (kh, kw) kernel."""
    n, h, wd, c = x.shape
    kh, kw, ci, co = w.shape
    if c != ci:
        raise ShapeError(f"layer/input shape conflict: conv expects {ci} channels, got {c}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
    out = np.zeros((n, h, wd, co), dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + h, j:j + wd, :] @ w[i, j]
    if b is not None:
        out += b
    return out, (xp, w, b is not None, x.shape)


def conv_backward(dout, cache):
    xp, w, has_bias, (n, h, wd, c) = cache
    kh, kw, ci, co = w.shape
    ph, pw = kh // 2, kw // 2
    dxp = np.zeros_like(xp, dtype=np.result_type(xp, dout))
    dw = np.empty(w.shape, dtype=np.result_type(xp, dout))
    d2 = dout.reshape(-1, co)
    for i in range(kh):
        for j in range(kw):
            dw[i, j] = xp[:, i:i + h, j:j + wd, :].reshape(-1, ci).T @ d2
            dxp[:, i:i + h, j:j + wd, :] += dout @ w[i, j].T
    dx = dxp[:, ph:ph + h, pw:pw + wd, :]
    db = d2.sum(axis=0) if has_bias else None
    return dx, dw, db


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _check_channels(layer, x):
    if x.shape[-1] != layer.in_channels:
        raise ShapeError(
            f"layer/input shape conflict: {layer.kind.value} {layer.name!r} expects "
            f"{layer.in_channels} channels, got input {x.shape}"
        )


# --- layer dispatch -----------------------------------------------------------


def forward(layer: LayerSpec, params, x, mode="infer", rng=None):
    """Run one layer. Returns ``(output, cache)``; train-mode BN updates running stats in ``params``."""
    kind = layer.kind
    train = mode == "train"
    n = layer.name

    if kind is LayerKind.CONV3X3:
        if x.ndim != 4:
            raise ShapeError(f"layer/input shape conflict: conv needs 4-D input, got {x.shape}")
        _check_channels(layer, x)
        return conv_forward(x, params[f"{n}.w"])

    if kind is LayerKind.DECOMPOSED:
        if x.ndim != 4:
            raise ShapeError(f"layer/input shape conflict: conv needs 4-D input, got {x.shape}")
        _check_channels(layer, x)
        caches = []
        for i in range(4):
            bias = params[f"{n}.b"] if (i == 0 and layer.bias) else None
            x, c = conv_forward(x, params[f"{n}.{i}"], bias)
            caches.append(c)
        return x, caches

    if kind is LayerKind.BATCHNORM:
        if x.ndim != 4:
            raise ShapeError(f"layer/input shape conflict: batchnorm needs 4-D input, got {x.shape}")
        _check_channels(layer, x)
        gamma, beta = params[f"{n}.g"], params[f"{n}.b"]
        if train:
            mu = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            rm, rv = params[f"{n}.m"], params[f"{n}.v"]
            params[f"{n}.m"] = (BN_MOMENTUM * rm + (1 - BN_MOMENTUM) * mu).astype(rm.dtype)
            params[f"{n}.v"] = (BN_MOMENTUM * rv + (1 - BN_MOMENTUM) * var).astype(rv.dtype)
        else:
            mu, var = params[f"{n}.m"], params[f"{n}.v"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mu) * inv
        return gamma * xhat + beta, (xhat, inv, gamma, train)

    if kind is LayerKind.RELU:
        return np.maximum(x, 0), x > 0

    if kind is LayerKind.AVGPOOL:
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"layer/input shape conflict: 2x2 pooling needs even dims, got {x.shape}")
        return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4)), x.shape

    if kind is LayerKind.GAP:
        if x.ndim != 4:
            raise ShapeError(f"layer/input shape conflict: GAP needs 4-D input, got {x.shape}")
        return x.mean(axis=(1, 2)), x.shape

    if kind is LayerKind.DROPOUT:
        if not train or layer.rate == 0:
            return x, None
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = 1.0 - layer.rate
        mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * mask, mask

    if kind is LayerKind.DENSE:
        if x.ndim != 2:
            raise ShapeError(f"layer/input shape conflict: dense needs 2-D input, got {x.shape}")
        _check_channels(layer, x)
        return x @ params[f"{n}.w"] + params[f"{n}.b"], x

    if kind is LayerKind.SOFTMAX:
        y = softmax(x)
        return y, y

    raise ValueError(f"unknown layer kind {kind}")


def backward(layer: LayerSpec, params, cache, dout):
    """Gradient of one layer. Returns ``(dx, {param_name: grad})``."""
    kind = layer.kind
    n = layer.name
    if cache is None and not (kind is LayerKind.DROPOUT):
        raise RuntimeError(f"backward without forward for layer {layer.kind.value} {n!r}")

    if kind is LayerKind.CONV3X3:
        dx, dw, _ = conv_backward(dout, cache)
        return dx, {f"{n}.w": dw}

    if kind is LayerKind.DECOMPOSED:
        grads = {}
        for i in reversed(range(4)):
            dout, dw, db = conv_backward(dout, cache[i])
            grads[f"{n}.{i}"] = dw
            if db is not None:
                grads[f"{n}.b"] = db
        return dout, grads

    if kind is LayerKind.BATCHNORM:
        xhat, inv, gamma, train = cache
        dgamma = (dout * xhat).sum(axis=(0, 1, 2))
        dbeta = dout.sum(axis=(0, 1, 2))
        if train:
            m = dout.shape[0] * dout.shape[1] * dout.shape[2]
            dx = (gamma * inv / m) * (m * dout - dbeta - xhat * dgamma)
        else:
            dx = dout * gamma * inv
        return dx, {f"{n}.g": dgamma, f"{n}.b": dbeta}

    if kind is LayerKind.RELU:
        return dout * cache, {}

    if kind is LayerKind.AVGPOOL:
        b, h, w, c = cache
        dx = np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2) * 0.25
        return dx, {}

    if kind is LayerKind.GAP:
        b, h, w, c = cache
        return np.broadcast_to(dout[:, None, None, :] / (h * w), cache).copy(), {}

    if kind is LayerKind.DROPOUT:
        return (dout if cache is None else dout * cache), {}

    if kind is LayerKind.DENSE:
        x = cache
        return dout @ params[f"{n}.w"].T, {f"{n}.w": x.T @ dout, f"{n}.b": dout.sum(axis=0)}

    if kind is LayerKind.SOFTMAX:
        y = cache
        return y * (dout - (dout * y).sum(axis=-1, keepdims=True)), {}

    raise ValueError(f"unknown layer kind {kind}")


def run_forward(layers, params, x, mode="infer", rng=None, logits=False):
    """Forward through a layer sequence; with ``logits=True`` stop before a trailing softmax."""
    caches = []
    for layer in layers:
        if logits and layer.kind is LayerKind.SOFTMAX:
            break
        x, cache = forward(layer, params, x, mode, rng)
        caches.append(cache)
    return x, caches


def run_backward(layers, params, caches, dout):
    grads = {}
    for layer, cache in reversed(list(zip(layers, caches))):
        dout, g = backward(layer, params, cache, dout)
        grads.update(g)
    return dout, grads
