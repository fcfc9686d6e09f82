"""Online batch augmentation: random temporal crop, bin erasure, mixup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentConfig:
    crop_target: int = 128
    erase_bins: int = 10
    erase_axis_prob: float = 0.5  # probability of erasing along time
    mixup_dist: str = "beta"  # "beta" or "uniform"
    alpha: float = 0.4
    rng_seed: int = 0

    def __post_init__(self):
        if self.mixup_dist not in ("beta", "uniform"):
            raise ValueError(f"unknown mixup distribution {self.mixup_dist!r}")
        if not 0.0 <= self.erase_axis_prob <= 1.0:
            raise ValueError("erase_axis_prob must lie in [0, 1]")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass
class Batch:
    inputs: np.ndarray  # (N, freq, time, chan)
    labels: np.ndarray  # (N, C), rows on the probability simplex

    def __post_init__(self):
        if len(self.inputs) < 1 or len(self.inputs) != len(self.labels):
            raise ValueError("batch needs N >= 1 inputs with one label row each")


def random_crop(spec: np.ndarray, target: int, rng: np.random.Generator) -> np.ndarray:
    """Crop the time axis (axis 1) of a (freq, time, chan) array to ``target`` frames."""
    frames = spec.shape[1]
    if target > frames:
        raise ValueError(f"crop larger than input: {target} > {frames}")
    start = int(rng.integers(0, frames - target + 1))
    return spec[:, start:start + target]


def center_crop(spec: np.ndarray, target: int) -> np.ndarray:
    frames = spec.shape[1]
    if target > frames:
        raise ValueError(f"crop larger than input: {target} > {frames}")
    start = (frames - target) // 2
    return spec[:, start:start + target]


def spec_erase(spec: np.ndarray, n_bins: int, rng: np.random.Generator, time_prob: float = 0.5) -> np.ndarray:
    """Zero one block of ``n_bins`` consecutive time or frequency bins (all channels)."""
    out = np.array(spec, copy=True)
    axis = 1 if rng.random() < time_prob else 0
    if n_bins > out.shape[axis]:
        raise ValueError(f"erase block too large: {n_bins} > {out.shape[axis]}")
    if n_bins == 0:
        return out
    start = int(rng.integers(0, out.shape[axis] - n_bins + 1))
    if axis == 1:
        out[:, start:start + n_bins] = 0
    else:
        out[start:start + n_bins] = 0
    return out


def draw_ratio(cfg: AugmentConfig, rng: np.random.Generator) -> float:
    if cfg.mixup_dist == "uniform":
        return float(rng.uniform(0.0, 1.0))
    return float(rng.beta(cfg.alpha, cfg.alpha))


def mixup(batch: Batch, cfg: AugmentConfig, rng: np.random.Generator, ratio: float | None = None) -> Batch:
    """Mix each item with a randomly permuted partner using one ratio for the whole batch."""
    lam = draw_ratio(cfg, rng) if ratio is None else float(ratio)
    perm = rng.permutation(len(batch.inputs))
    x = lam * batch.inputs + (1.0 - lam) * batch.inputs[perm]
    y = lam * batch.labels + (1.0 - lam) * batch.labels[perm]
    return Batch(x.astype(batch.inputs.dtype), y)


def augment_batch(batch: Batch, cfg: AugmentConfig, rng: np.random.Generator, ratio: float | None = None) -> Batch:
    """Crop, then erase, then mix, as done for every training batch."""
    items = []
    for spec in batch.inputs:
        spec = random_crop(spec, cfg.crop_target, rng)
        items.append(spec_erase(spec, cfg.erase_bins, rng, cfg.erase_axis_prob))
    return mixup(Batch(np.stack(items), batch.labels), cfg, rng, ratio)
