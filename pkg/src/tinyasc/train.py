"""KL-divergence training with L2 regularization and Adam."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, Batch, augment_batch, center_crop
from .models import ModelSpec, build, infer
from .nn import run_backward, run_forward, softmax

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 100
    l2: float = 1e-4
    learning_rate: float = 1e-3
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def trainable(spec: ModelSpec, params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """The parameters covered by the L2 term and updated by Adam (BN running stats excluded)."""
    return {name: params[name] for name, info in spec.tensors().items() if info.trainable}


def l2_sq(theta: dict[str, np.ndarray] | None) -> float:
    if not theta:
        return 0.0
    return float(sum(np.sum(np.asarray(w, dtype=np.float64) ** 2) for w in theta.values()))


def kl_loss(y, y_hat, theta: dict[str, np.ndarray] | None = None, l2: float = 0.0) -> float:
    """sum_n sum_c y ln(y / y_hat) + (l2 / 2) ||theta||^2, with 0 ln 0 = 0."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"label/prediction shape mismatch: {y.shape} vs {y_hat.shape}")
    if not (y_hat > 0).all():
        raise ValueError("invalid probability input: predictions must be strictly positive")
    pos = y > 0
    kl = float(np.sum(y[pos] * (np.log(y[pos]) - np.log(y_hat[pos]))))
    return kl + 0.5 * l2 * l2_sq(theta)


def loss_gradient(y, logits, theta: dict[str, np.ndarray] | None = None, l2: float = 0.0):
    """Gradients of ``kl_loss(y, softmax(logits), theta, l2)``.

    Returns ``(d_logits, d_theta)``; ``d_logits = softmax(logits) - y`` per row,
    which assumes each label row sums to one.
    """
    y = np.asarray(y)
    p = softmax(np.asarray(logits, dtype=np.float64))
    if not (p > 0).all():
        raise ValueError("invalid probability input: softmax underflowed to zero")
    d_theta = {k: l2 * w for k, w in (theta or {}).items()}
    return p - y, d_theta


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig):
    """In-place Adam update with bias correction of every tensor named in ``grads``."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        w = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        params[name] = (w - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(w.dtype)
    return params, state


def one_hot(labels, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes), dtype=np.float64)
    out[np.arange(len(labels)), np.asarray(labels, dtype=int)] = 1.0
    return out


def accuracy(spec: ModelSpec, params, features: np.ndarray, labels, crop: int = 128) -> float:
    x = np.stack([center_crop(f, crop) for f in features]) if features.shape[2] != crop else features
    pred = infer(spec, params, x).argmax(axis=1)
    return float(np.mean(pred == np.asarray(labels)))


@dataclass
class EpochLog:
    epoch: int
    loss: float
    acc: float

    def line(self) -> str:
        return f"epoch={self.epoch} loss={self.loss:.6f} acc={self.acc:.4f}"


def fit(
    features: np.ndarray,
    labels,
    model_id: str = "M1",
    decomposed: bool = True,
    cfg: TrainConfig = TrainConfig(),
    aug: AugmentConfig = AugmentConfig(),
    num_classes: int = 10,
    on_epoch=None,
):
    """Train one model from scratch on (N, freq, time, 3) features.

    Returns ``(spec, params, history)``. ``loss`` in the history is the epoch's
    summed batch loss divided by the number of training items.
    """
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=int)
    if len(features) == 0:
        raise ValueError("empty training set")
    if features.ndim != 4 or features.shape[3] != 3 or features.shape[2] < aug.crop_target:
        raise ValueError(f"features of shape {features.shape} do not fit the model input")
    spec, params = build(model_id, decomposed, seed=cfg.seed, num_classes=num_classes)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    targets = one_hot(labels, num_classes)
    history: list[EpochLog] = []
    n = len(features)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = augment_batch(Batch(features[idx], targets[idx]), aug, rng)
            logits, caches = run_forward(spec.layers, params, batch.inputs, mode="train", rng=rng, logits=True)
            theta = trainable(spec, params)
            probs = softmax(logits.astype(np.float64))
            total += kl_loss(batch.labels, probs, theta, cfg.l2)
            d_logits, d_theta = loss_gradient(batch.labels, logits, theta, cfg.l2)
            _, grads = run_backward(spec.layers, params, caches, d_logits.astype(np.float32))
            for k, g in d_theta.items():
                grads[k] = grads[k] + g
            adam_step(params, grads, state, cfg)
        entry = EpochLog(epoch, total / n, accuracy(spec, params, features, labels, aug.crop_target))
        history.append(entry)
        log.info(entry.line())
        if on_epoch is not None:
            on_epoch(entry)
    return spec, params, history
