"""M1/M2/M3 builders and model size accounting."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import NUM_CLASSES
from .nn import (
    BN_EPS,
    LayerKind,
    LayerSpec,
    avgpool,
    batchnorm,
    conv,
    decompose,
    dense,
    dropout,
    gap,
    init_params,
    model_tensors,
    relu,
    softmax_layer,
)

# One tuple per table row: (output channels, pooling after BN).
# Pooling is "ap" only where the printed output size halves; the M3 table
# lists AP on rows whose printed size is unchanged, and those are skipped.
TABLES: dict[str, tuple[tuple[int, str | None], ...]] = {
    "M1": ((16, "ap"), (32, "ap"), (64, "ap"), (128, "gap")),
    "M2": ((16, None), (16, "ap"), (32, None), (32, "ap"), (64, "ap"), (64, "gap")),
    "M3": ((16, None), (16, "ap"), (32, None), (32, "ap"), (64, None), (64, "ap"), (128, None), (128, "gap")),
}
MODEL_IDS = {"M1": 1, "M2": 2, "M3": 3}
DROPOUT_RATE = 0.1
IN_CHANNELS = 3


@dataclass(frozen=True)
class ModelSpec:
    id: str
    layers: tuple[LayerSpec, ...]
    num_classes: int = NUM_CLASSES
    decomposed: bool = False

    @property
    def numeric_id(self) -> int:
        return MODEL_IDS[self.id]

    @property
    def conv_layer_count(self) -> int:
        return sum(l.kind in (LayerKind.CONV3X3, LayerKind.DECOMPOSED) for l in self.layers)

    def tensors(self):
        return model_tensors(self.layers)


def normalize_id(model_id: str | int) -> str:
    if isinstance(model_id, int):
        for k, v in MODEL_IDS.items():
            if v == model_id:
                return k
    else:
        key = model_id.strip().upper()
        if key in MODEL_IDS:
            return key
    raise ValueError(f"unknown model id {model_id!r}")


def build_spec(model_id: str | int, decomposed: bool = False, num_classes: int = NUM_CLASSES) -> ModelSpec:
    mid = normalize_id(model_id)
    layers: list[LayerSpec] = []
    cin = IN_CHANNELS
    for k, (cout, pool) in enumerate(TABLES[mid], start=1):
        c = conv(f"c{k}", cin, cout)
        layers.append(decompose(c) if decomposed else c)
        layers += [relu(), batchnorm(f"n{k}", cout)]
        if pool == "ap":
            layers.append(avgpool())
        elif pool == "gap":
            layers.append(gap())
        layers.append(dropout(DROPOUT_RATE))
        cin = cout
    layers += [dense("fc", cin, num_classes), softmax_layer()]
    return ModelSpec(mid, tuple(layers), num_classes, decomposed)


def build(model_id: str | int, decomposed: bool = False, seed: int = 0, num_classes: int = NUM_CLASSES):
    """Return ``(ModelSpec, params)`` with He-uniform initialization."""
    spec = build_spec(model_id, decomposed, num_classes)
    return spec, init_params(spec.layers, np.random.default_rng(seed))


def shape_trace(spec: ModelSpec, input_shape=(128, 128, 3)) -> list[tuple[int, ...]]:
    """Per-table-row output shapes (excluding batch), then the class vector shape."""
    h, w, c = input_shape
    rows = []
    for layer in spec.layers:
        k = layer.kind
        if k in (LayerKind.CONV3X3, LayerKind.DECOMPOSED):
            if c != layer.in_channels:
                raise ValueError(f"layer/input shape conflict at {layer.name}")
            c = layer.out_channels
        elif k is LayerKind.AVGPOOL:
            h, w = h // 2, w // 2
        elif k is LayerKind.GAP:
            h = w = None
        elif k is LayerKind.DROPOUT:
            rows.append((c,) if h is None else (h, w, c))
        elif k is LayerKind.DENSE:
            c = layer.out_channels
    rows.append((c,))
    return rows


def fold_batchnorm(spec: ModelSpec, params: dict[str, np.ndarray]):
    """Fold every BN whose next weighted layer is a decomposed conv or the dense layer.

    BN follows ReLU, so it cannot merge into the preceding conv; it is instead an
    exact per-channel affine on the input of the next 1x1 sub-conv (or dense layer),
    since only pooling/dropout sit in between. BNs feeding a padded 3x3 conv are kept.
    Returns ``(folded_spec, folded_params)`` computing the same inference function.
    """
    layers = list(spec.layers)
    out_params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    keep = [True] * len(layers)
    for i, layer in enumerate(layers):
        if layer.kind is not LayerKind.BATCHNORM:
            continue
        j = next(
            (j for j in range(i + 1, len(layers))
             if layers[j].kind in (LayerKind.CONV3X3, LayerKind.DECOMPOSED, LayerKind.DENSE)),
            None,
        )
        if j is None or layers[j].kind is LayerKind.CONV3X3:
            continue
        n = layer.name
        scale = out_params.pop(f"{n}.g") / np.sqrt(out_params.pop(f"{n}.v") + BN_EPS)
        shift = out_params.pop(f"{n}.b") - scale * out_params.pop(f"{n}.m")
        nxt = layers[j]
        if nxt.kind is LayerKind.DENSE:
            w = out_params[f"{nxt.name}.w"]
            out_params[f"{nxt.name}.b"] = out_params[f"{nxt.name}.b"] + shift @ w
            out_params[f"{nxt.name}.w"] = scale[:, None] * w
        else:
            w = out_params[f"{nxt.name}.0"]  # (1, 1, cin, cin/4)
            bias = out_params.get(f"{nxt.name}.b", 0.0)
            out_params[f"{nxt.name}.b"] = bias + shift @ w[0, 0]
            out_params[f"{nxt.name}.0"] = w * scale[None, None, :, None]
            layers[j] = replace(nxt, bias=True)
        keep[i] = False
    folded = replace(spec, layers=tuple(l for l, k in zip(layers, keep) if k))
    dtype = next(iter(params.values())).dtype if params else np.float32
    return folded, {k: v.astype(dtype) for k, v in out_params.items()}


def folded_spec(spec: ModelSpec) -> ModelSpec:
    """Layer structure of :func:`fold_batchnorm` without touching parameter values."""
    dummy = {}
    for name, info in spec.tensors().items():
        dummy[name] = np.ones(info.shape, dtype=np.float32)
    return fold_batchnorm(spec, dummy)[0]


KB = 1000  # challenge convention: 1 KB = 1000 bytes


@dataclass
class SizeReport:
    per_tensor: dict[str, int]
    total_bytes: int

    @property
    def total_kb(self) -> float:
        return self.total_bytes / KB


def size_report(spec: ModelSpec, precision_map: dict[str, str] | None = None) -> SizeReport:
    """Payload bytes per tensor: i8 tensors cost 1 byte/value + a 4-byte scale, f32 cost 4 bytes/value.

    ``precision_map`` maps tensor name to ``"i8"`` or ``"f32"``; by default weights
    are i8 and everything else f32.
    """
    per = {}
    for name, info in spec.tensors().items():
        count = int(np.prod(info.shape))
        prec = (precision_map or {}).get(name, "i8" if info.quantizable else "f32")
        per[name] = count + 4 if prec == "i8" else 4 * count
    return SizeReport(per, sum(per.values()))


def infer(spec: ModelSpec, params: dict[str, np.ndarray], x: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Inference-mode class probabilities for a (N, freq, time, chan) batch."""
    from .nn import run_forward

    outs = [run_forward(spec.layers, params, x[i:i + chunk], mode="infer")[0] for i in range(0, len(x), chunk)]
    return np.concatenate(outs) if outs else np.zeros((0, spec.num_classes))
