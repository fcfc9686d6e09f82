"""DCASE-style manifests, flat key=value run config, and a synthetic corpus."""

from __future__ import annotations

import csv
import dataclasses
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import SCENES
from .augment import AugmentConfig
from .frontend import AudioClip, FrontendConfig, write_wav
from .train import TrainConfig

DEVICES = ("a", "b", "c", "s1", "s2", "s3", "s4", "s5", "s6")


class DataError(Exception):
    """Bad or missing input data (manifest rows, feature files, model files)."""


@dataclass(frozen=True, order=True)
class ManifestEntry:
    path: str
    scene: str
    city: str
    device: str
    split: str

    @property
    def label(self) -> int:
        return SCENES.index(self.scene)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def device_histogram(self, split: str | None = None) -> dict[str, int]:
        rows = self.entries if split is None else self.split(split)
        return dict(sorted(Counter(e.device for e in rows).items()))


def _filename_tokens(filename: str) -> list[str]:
    return Path(filename).stem.split("-")


def device_from_filename(filename: str) -> str:
    tokens = _filename_tokens(filename)
    if len(tokens) < 2:
        raise DataError(f"cannot infer device from filename {filename!r}")
    return tokens[-1].lower()


def city_from_filename(filename: str) -> str:
    tokens = _filename_tokens(filename)
    return tokens[1] if len(tokens) > 2 else ""


def _read_tsv(path: Path, required: tuple[str, ...]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            return []
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}:1: missing column(s) {', '.join(missing)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: malformed row, expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, dict(zip(header, (c.strip() for c in row)))))
        return rows


def parse_manifest(train_csv=None, eval_csv=None, meta_csv=None) -> DatasetManifest:
    """Join DCASE fold CSVs (``filename\\tscene_label``) with the optional meta CSV.

    Device comes from the meta ``source_label`` column, else from the trailing
    ``-<device>.wav`` filename token. Entries are returned sorted by path.
    """
    meta: dict[str, dict] = {}
    if meta_csv is not None:
        for lineno, row in _read_tsv(Path(meta_csv), ("filename",)):
            meta[row["filename"]] = row

    entries: dict[str, ManifestEntry] = {}
    for split, path in (("train", train_csv), ("eval", eval_csv)):
        if path is None:
            continue
        for lineno, row in _read_tsv(Path(path), ("filename", "scene_label")):
            fname, scene = row["filename"], row["scene_label"]
            if scene not in SCENES:
                raise DataError(f"{path}:{lineno}: unknown scene label {scene!r}")
            if fname in entries:
                raise DataError(f"{path}:{lineno}: duplicate filename {fname!r}")
            m = meta.get(fname, {})
            device = (m.get("source_label") or "").lower() or device_from_filename(fname)
            if device not in DEVICES:
                raise DataError(f"{path}:{lineno}: unknown device {device!r}")
            ident = m.get("identifier") or ""
            city = ident.split("-")[0] if ident else city_from_filename(fname)
            entries[fname] = ManifestEntry(fname, scene, city, device, split)
    return DatasetManifest(sorted(entries.values()))


# --- flat config ------------------------------------------------------------------


@dataclass
class RunConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data_root: str = "."
    feature_dir: str = "features"
    model_dir: str = "models"
    report_path: str = "report.txt"
    train_csv: str | None = None
    eval_csv: str | None = None
    meta_csv: str | None = None

    PATH_KEYS = ("data_root", "feature_dir", "model_dir", "report_path", "train_csv", "eval_csv", "meta_csv")

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "RunConfig":
        sections = {"frontend": FrontendConfig, "augment": AugmentConfig, "train": TrainConfig}
        overrides: dict[str, dict] = {k: {} for k in sections}
        paths = {}
        for key, raw in items.items():
            if key in cls.PATH_KEYS:
                paths[key] = raw
                continue
            for sect, klass in sections.items():
                fields = {f.name: f for f in dataclasses.fields(klass)}
                if key in fields:
                    overrides[sect][key] = _coerce(raw, fields[key].default)
                    break
            else:
                raise DataError(f"unknown config key {key!r}")
        built = {sect: klass(**overrides[sect]) for sect, klass in sections.items()}
        return cls(**built, **paths)


def _coerce(raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int) and not isinstance(default, bool) and not hasattr(default, "name"):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def read_config(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    items = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    return items


# --- synthetic corpus ---------------------------------------------------------------

SR = 44100


def _noise(rng, n):
    return rng.standard_normal(n)


def synth_clip(scene: int, rng: np.random.Generator, sr: int = SR, seconds: float = 1.0) -> np.ndarray:
    """One second of a texture that identifies ``scene`` regardless of small random variation.

    Each class differs in spectro-temporal texture (modulation, harmonicity,
    impulsiveness) rather than only in absolute frequency.
    """
    n = int(sr * seconds)
    t = np.arange(n) / sr
    f0 = rng.uniform(0.9, 1.1)
    phase = rng.uniform(0, 2 * np.pi)
    kind = scene % 10
    if kind == 0:  # stationary broadband noise
        x = _noise(rng, n)
    elif kind == 1:  # slow deep amplitude modulation of noise
        x = _noise(rng, n) * (0.5 + 0.5 * np.sin(2 * np.pi * 3 * f0 * t + phase)) ** 2
    elif kind == 2:  # dense harmonic complex
        x = sum(np.sin(2 * np.pi * 220 * f0 * h * t + h * phase) / h for h in range(1, 30))
    elif kind == 3:  # fast click train
        x = np.zeros(n)
        x[(np.arange(0, n, int(sr / (40 * f0))) + rng.integers(0, 200)) % n] = 30.0
        x += 0.01 * _noise(rng, n)
    elif kind == 4:  # short rising chirps
        x = np.zeros(n)
        for start in np.arange(0.0, 1.0, 0.25) + rng.uniform(0, 0.05):
            seg = (t >= start) & (t < start + 0.12)
            tau = t[seg] - start
            x[seg] = np.sin(2 * np.pi * (2000 * f0 * tau + 0.5 * 30000 * tau**2)) * np.hanning(seg.sum())
        x += 0.01 * _noise(rng, n)
    elif kind == 5:  # single steady tone over faint noise
        x = np.sin(2 * np.pi * 1000 * f0 * t + phase) + 0.01 * _noise(rng, n)
    elif kind == 6:  # sparse click train
        x = np.zeros(n)
        x[(np.arange(0, n, int(sr / (6 * f0))) + rng.integers(0, 2000)) % n] = 30.0
        x += 0.01 * _noise(rng, n)
    elif kind == 7:  # fast amplitude modulation of noise
        x = _noise(rng, n) * (0.5 + 0.5 * np.sin(2 * np.pi * 16 * f0 * t + phase)) ** 2
    elif kind == 8:  # one slow exponential sweep across the whole clip
        inst = 300 * f0 * (40.0 ** (t / seconds))
        x = np.sin(2 * np.pi * np.cumsum(inst) / sr + phase) + 0.01 * _noise(rng, n)
    else:  # vibrato tone
        inst = 1500 * f0 + 300 * np.sin(2 * np.pi * 5 * t + phase)
        x = np.sin(2 * np.pi * np.cumsum(inst) / sr) + 0.01 * _noise(rng, n)
    x = x / (np.abs(x).max() + 1e-12)
    return 0.5 * rng.uniform(0.6, 1.0) * x


def make_corpus(root, per_class: int = 4, eval_per_class: int = 2, scenes=SCENES, seed: int = 0) -> DatasetManifest:
    """Write a labeled WAV corpus plus DCASE-format CSVs under ``root``.

    Files: ``audio/<scene>-<city>-<id>-<seg>-<device>.wav``, ``fold1_train.csv``,
    ``fold1_evaluate.csv`` and ``meta.csv``.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    cities = ("lisbon", "london", "lyon", "milan")
    rows = {"train": [], "eval": []}
    meta = []
    counter = 0
    for scene in scenes:
        label = SCENES.index(scene)
        for k in range(per_class):
            split = "eval" if k >= per_class - eval_per_class else "train"
            device = DEVICES[counter % len(DEVICES)]
            city = cities[counter % len(cities)]
            ident = f"{city}-{1000 + counter}"
            fname = f"audio/{scene}-{ident}-{counter * 10}-0-{device}.wav"
            write_wav(root / fname, AudioClip(synth_clip(label, rng), SR))
            rows[split].append((fname, scene))
            meta.append((fname, scene, ident, device))
            counter += 1

    def dump(name, header, data):
        with open(root / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(header)
            w.writerows(data)

    dump("fold1_train.csv", ("filename", "scene_label"), rows["train"])
    dump("fold1_evaluate.csv", ("filename", "scene_label"), rows["eval"])
    dump("meta.csv", ("filename", "scene_label", "identifier", "source_label"), meta)
    return parse_manifest(root / "fold1_train.csv", root / "fold1_evaluate.csv", root / "meta.csv")
