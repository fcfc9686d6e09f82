"""Per-model prediction, PROD late fusion, and per-class / per-device accuracy reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import SCENES
from .augment import center_crop
from .models import ModelSpec, infer

DEVICE_ROWS = ("a", "b", "c", "s1", "s2", "s3", "s4", "s5", "s6")
CLASS_TITLES = (
    "Airport",
    "Bus",
    "Metro",
    "Metro station",
    "Park",
    "Public square",
    "Shopping mall",
    "Street pedestrian",
    "Street traffic",
    "Tram",
)
TEST_CROP = 128


def predict(spec: ModelSpec, params, spectrogram: np.ndarray) -> np.ndarray:
    """Class probabilities for one (freq, time, 3) spectrogram; time is center-cropped to 128."""
    if spectrogram.ndim != 3 or spectrogram.shape[2] != 3:
        raise ValueError(f"layer/input shape conflict: expected (freq, time, 3), got {spectrogram.shape}")
    x = center_crop(spectrogram, TEST_CROP)[None].astype(np.float32)
    return infer(spec, params, x)[0].astype(np.float64)


def predict_many(spec: ModelSpec, params, spectrograms) -> np.ndarray:
    x = np.stack([center_crop(s, TEST_CROP) for s in spectrograms]).astype(np.float32)
    return infer(spec, params, x).astype(np.float64)


def _stack(vectors) -> np.ndarray:
    try:
        v = np.asarray(vectors, dtype=np.float64)
    except ValueError:
        raise ValueError("length mismatch between probability vectors") from None
    if v.ndim < 2 or v.shape[0] < 1:
        raise ValueError("need S >= 1 probability vectors")
    return v


def prod_fuse(vectors) -> np.ndarray:
    """(1/S) * elementwise product over the S model outputs (axis 0)."""
    v = _stack(vectors)
    return np.prod(v, axis=0) / v.shape[0]


def log_fuse(vectors) -> np.ndarray:
    """Logarithm of :func:`prod_fuse`, computed without underflow."""
    v = _stack(vectors)
    with np.errstate(divide="ignore"):
        return np.log(v).sum(axis=0) - np.log(v.shape[0])


def decide(scores) -> int | np.ndarray:
    """Index of the largest score; ties go to the lowest index. Works row-wise on 2-D input."""
    s = np.asarray(scores, dtype=np.float64)
    # -inf is allowed: it is the log-domain image of a zero fused score
    if np.isnan(s).any() or np.isposinf(s).any():
        raise ValueError("scores must be finite")
    idx = np.argmax(s, axis=-1)
    return int(idx) if s.ndim == 1 else idx


def fuse_and_decide(vectors) -> int | np.ndarray:
    return decide(log_fuse(vectors))


@dataclass
class Cell:
    correct: int = 0
    total: int = 0

    @property
    def acc(self) -> float | None:
        return 100.0 * self.correct / self.total if self.total else None


@dataclass
class EvalReport:
    classes: dict[str, Cell] = field(default_factory=lambda: {s: Cell() for s in SCENES})
    devices: dict[str, Cell] = field(default_factory=lambda: {d: Cell() for d in DEVICE_ROWS})
    overall: Cell = field(default_factory=Cell)
    title: str = "Ensemble"

    def add(self, scene: str, device: str, correct: bool) -> None:
        for cell in (self.classes[scene], self.devices.setdefault(device, Cell()), self.overall):
            cell.total += 1
            cell.correct += int(correct)

    def merge(self, other: "EvalReport") -> "EvalReport":
        out = EvalReport(title=self.title)
        for src in (self, other):
            for k, c in src.classes.items():
                out.classes[k].correct += c.correct
                out.classes[k].total += c.total
            for k, c in src.devices.items():
                d = out.devices.setdefault(k, Cell())
                d.correct += c.correct
                d.total += c.total
            out.overall.correct += src.overall.correct
            out.overall.total += src.overall.total
        return out

    def to_text(self) -> str:
        def fmt(cell):
            return f"{cell.acc:6.1f}" if cell.acc is not None else "     -"

        width = max(len(t) for t in CLASS_TITLES)
        lines = [f"{'Category':<{width}}  {self.title:>8}  {'n':>5}", "-" * (width + 17)]
        for scene, title in zip(SCENES, CLASS_TITLES):
            c = self.classes[scene]
            lines.append(f"{title:<{width}}  {fmt(c):>8}  {c.total:>5}")
        lines.append("-" * (width + 17))
        for dev, c in self.devices.items():
            lines.append(f"{'Device ' + dev.upper():<{width}}  {fmt(c):>8}  {c.total:>5}")
        lines.append("-" * (width + 17))
        lines.append(f"{'Average':<{width}}  {fmt(self.overall):>8}  {self.overall.total:>5}")
        return "\n".join(lines) + "\n"

    def to_records(self) -> str:
        def acc(cell):
            return f"{cell.acc:.4f}" if cell.acc is not None else "nan"

        lines = [f"class={s} acc={acc(c)} n={c.total}" for s, c in self.classes.items()]
        lines += [f"device={d} acc={acc(c)} n={c.total}" for d, c in self.devices.items()]
        lines.append(f"overall acc={acc(self.overall)} n={self.overall.total}")
        return "\n".join(lines) + "\n"


def evaluate(entries, model_outputs, fusion: str = "prod", title: str = "Ensemble") -> EvalReport:
    """Fuse per-model probabilities and score them.

    ``entries`` are manifest entries (anything with ``scene`` and ``device``);
    ``model_outputs`` is a list of S arrays of shape (len(entries), C), one per model.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("empty evaluation split")
    if fusion != "prod":
        raise ValueError(f"unsupported fusion rule {fusion!r}")
    stacked = _stack(model_outputs)
    if stacked.shape[1] != len(entries):
        raise ValueError("model outputs do not match the number of evaluation items")
    pred = fuse_and_decide(stacked)
    pred = np.atleast_1d(pred)
    report = EvalReport(title=title)
    for e, p in zip(entries, pred):
        report.add(e.scene, e.device, SCENES[int(p)] == e.scene)
    return report
