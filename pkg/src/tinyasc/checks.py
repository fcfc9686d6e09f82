"""Finite-difference gradient checks and the invariant suite behind ``tinyasc selftest``."""

from __future__ import annotations

import numpy as np

from .nn import (
    LayerKind,
    LayerSpec,
    backward,
    forward,
    init_params,
    run_backward,
    run_forward,
    softmax,
    tensor_infos,
)

FD_STEP = 1e-5


def rel_error(analytic, numeric) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    return float(np.linalg.norm(a - n) / denom) if denom > 0 else 0.0


def numerical_gradient(f, arr: np.ndarray, indices=None, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` wrt entries of ``arr`` (perturbed in place)."""
    flat = arr.reshape(-1)
    indices = range(flat.size) if indices is None else indices
    out = []
    for i in indices:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def _sample(size: int, rng, limit: int | None):
    if limit is None or size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, limit, replace=False))


LAYER_CASES = {
    LayerKind.CONV3X3: (LayerSpec(LayerKind.CONV3X3, "c", 3, 4), (2, 6, 5, 3)),
    LayerKind.DECOMPOSED: (LayerSpec(LayerKind.DECOMPOSED, "d", 8, 6, bias=True), (2, 5, 6, 8)),
    LayerKind.BATCHNORM: (LayerSpec(LayerKind.BATCHNORM, "n", 3, 3), (3, 4, 4, 3)),
    LayerKind.RELU: (LayerSpec(LayerKind.RELU), (2, 4, 4, 3)),
    LayerKind.AVGPOOL: (LayerSpec(LayerKind.AVGPOOL), (2, 4, 6, 3)),
    LayerKind.GAP: (LayerSpec(LayerKind.GAP), (2, 4, 4, 3)),
    LayerKind.DROPOUT: (LayerSpec(LayerKind.DROPOUT, rate=0.1), (2, 4, 4, 3)),
    LayerKind.DENSE: (LayerSpec(LayerKind.DENSE, "f", 6, 4), (3, 6)),
    LayerKind.SOFTMAX: (LayerSpec(LayerKind.SOFTMAX), (3, 5)),
}


def check_layer(layer: LayerSpec, input_shape, seed: int = 0, mode: str = "train") -> dict[str, float]:
    """Relative error between analytic and numerical gradients for input and every parameter."""
    rng = np.random.default_rng(seed)
    params = init_params([layer], rng, dtype=np.float64)
    for name, info in tensor_infos(layer).items():
        if not info.quantizable:
            params[name] = rng.uniform(0.5, 1.5, info.shape) if name.endswith(".v") else rng.uniform(-1, 1, info.shape)
    x = rng.uniform(-1, 1, input_shape)
    out, _ = forward(layer, dict(params), x, mode, np.random.default_rng(seed + 1))
    weight = rng.uniform(-1, 1, out.shape)

    def loss():
        y, _ = forward(layer, dict(params), x, mode, np.random.default_rng(seed + 1))
        return float(np.sum(y * weight))

    _, cache = forward(layer, dict(params), x, mode, np.random.default_rng(seed + 1))
    dx, grads = backward(layer, params, cache, weight)
    errors = {"input": rel_error(dx, numerical_gradient(loss, x))}
    for name, g in grads.items():
        errors[name] = rel_error(g, numerical_gradient(loss, params[name]))
    return errors


def check_network(layers, input_shape, num_classes: int, seed: int = 0, l2: float = 1e-4, per_tensor: int | None = 12):
    """End-to-end check of KL+L2 loss through a whole layer stack in train mode.

    Returns the relative error over the concatenation of all sampled gradient entries.
    """
    from .train import kl_loss, loss_gradient

    rng = np.random.default_rng(seed)
    params = init_params(layers, rng, dtype=np.float64)
    for name, info in {k: v for l in layers for k, v in tensor_infos(l).items()}.items():
        if name.endswith((".g", ".b")):
            params[name] = rng.uniform(0.5, 1.5, info.shape) if name.endswith(".g") else rng.uniform(-0.5, 0.5, info.shape)
    trainable = [k for l in layers for k, v in tensor_infos(l).items() if v.trainable]
    x = rng.uniform(-1, 1, input_shape)
    y = rng.dirichlet(np.ones(num_classes), size=input_shape[0])

    def loss():
        logits, _ = run_forward(layers, params, x, "train", np.random.default_rng(seed + 1), logits=True)
        theta = {k: params[k] for k in trainable}
        return kl_loss(y, softmax(logits), theta, l2)

    logits, caches = run_forward(layers, params, x, "train", np.random.default_rng(seed + 1), logits=True)
    theta = {k: params[k] for k in trainable}
    d_logits, d_theta = loss_gradient(y, logits, theta, l2)
    dx, grads = run_backward(layers, params, caches, d_logits)
    analytic, numeric = [], []
    idx = _sample(x.size, rng, per_tensor)
    analytic.append(dx.reshape(-1)[idx])
    numeric.append(numerical_gradient(loss, x, idx))
    for name in trainable:
        g = grads[name] + d_theta[name]
        idx = _sample(g.size, rng, per_tensor)
        analytic.append(g.reshape(-1)[idx])
        numeric.append(numerical_gradient(loss, params[name], idx))
    return rel_error(np.concatenate(analytic), np.concatenate(numeric))


def run_selftest(seeds=range(5)) -> list[tuple[str, bool, str]]:
    """Quick invariant suite: layer/network gradients, fusion and loss analytics, size budget."""
    from .fusion import decide, log_fuse, prod_fuse
    from .models import build, build_spec
    from .quant import deployment_model, serialize
    from .train import kl_loss

    results = []
    for kind, (layer, shape) in LAYER_CASES.items():
        worst = max(max(check_layer(layer, shape, s).values()) for s in seeds)
        results.append((f"gradcheck {kind.value}", worst < 1e-4, f"max rel err {worst:.2e}"))
    m1 = build_spec("M1", decomposed=True, num_classes=10)
    worst = max(check_network(m1.layers, (4, 16, 16, 3), 10, s) for s in seeds)
    results.append(("gradcheck M1 end-to-end", worst < 1e-3, f"max rel err {worst:.2e}"))

    loss = kl_loss(np.eye(10)[:1], np.full((1, 10), 0.1))
    results.append(("kl one-hot vs uniform = ln 10", abs(loss - np.log(10)) < 1e-9, f"{loss:.9f}"))
    fused = prod_fuse([[0.6, 0.4], [0.5, 0.5]])
    results.append(("prod fusion worked example", fused.tolist() == [0.15, 0.1], str(fused.tolist())))
    rng = np.random.default_rng(0)
    v = rng.uniform(1e-6, 1.0, size=(10_000, 3, 10))
    mism = sum(decide(prod_fuse(row)) != decide(log_fuse(row)) for row in v)
    results.append(("decide vs log-domain oracle", mism == 0, f"{mism} mismatches / 10000"))

    total = 0
    for mid in ("M1", "M2", "M3"):
        spec, params = build(mid, decomposed=True)
        total_m = len(serialize(deployment_model(spec, params)))
        total = max(total, 3 * total_m)
    results.append(("largest 3-model ensemble < 128000 B", total < 128000, f"{total} bytes"))
    return results
