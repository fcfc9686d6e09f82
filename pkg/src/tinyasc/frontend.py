"""Spectrogram front end: STFT power, Mel/Gammatone/CQT filterbanks, log, deltas.

All arrays use (frequency, time, channel) axis order. Feature files use the
LCFT container (see :func:`write_features`).
"""

from __future__ import annotations

import enum
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FilterbankKind(enum.IntEnum):
    MEL = 0
    GAMMATONE = 1
    CQT = 2

    @classmethod
    def parse(cls, name: "str | int | FilterbankKind") -> "FilterbankKind":
        if isinstance(name, (int, FilterbankKind)):
            return cls(int(name))
        key = name.strip().lower()
        aliases = {"mel": cls.MEL, "gam": cls.GAMMATONE, "gammatone": cls.GAMMATONE, "cqt": cls.CQT}
        if key not in aliases:
            raise ValueError(f"unknown filterbank kind {name!r}")
        return aliases[key]

    @property
    def short(self) -> str:
        return ("mel", "gam", "cqt")[self.value]


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int


@dataclass(frozen=True)
class FrontendConfig:
    n_fft: int = 4096
    window_len: int = 2048
    hop: int = 306
    n_filters: int = 128
    target_frames: int = 135
    filterbank_kind: FilterbankKind = FilterbankKind.MEL
    log_floor: float = 1e-10
    sample_rate: int = 44100
    delta_width: int = 9
    cqt_fmin: float = 32.7
    gammatone_fmin: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "filterbank_kind", FilterbankKind.parse(self.filterbank_kind))
        if self.n_fft < self.window_len:
            raise ValueError("n_fft must be >= window_len")
        if self.target_frames < 1 or self.n_filters < 1 or self.hop < 1:
            raise ValueError("target_frames, n_filters and hop must be positive")
        if not self.log_floor > 0:
            raise ValueError("log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length ``n``."""
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


def _check_clip(clip: AudioClip, cfg: FrontendConfig) -> np.ndarray:
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"unsupported sample rate: {clip.sample_rate}")
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("audio must be mono (1-D)")
    if len(x) < cfg.window_len:
        raise ValueError(f"input too short: {len(x)} < {cfg.window_len} samples")
    return x


def frame_count(n_samples: int, window_len: int, hop: int) -> int:
    return (n_samples - window_len) // hop + 1


def stft_power(clip: AudioClip, cfg: FrontendConfig) -> np.ndarray:
    """|FFT|^2 of Hann-windowed, unpadded frames; shape (n_fft/2+1, frames, 1)."""
    x = _check_clip(clip, cfg)
    n_frames = frame_count(len(x), cfg.window_len, cfg.hop)
    idx = np.arange(cfg.window_len)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * hann_window(cfg.window_len)
    spec = np.fft.rfft(frames, n=cfg.n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    return power.T[:, :, None]


def _fft_freqs(cfg: FrontendConfig) -> np.ndarray:
    return np.arange(cfg.n_bins) * cfg.sample_rate / cfg.n_fft


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def hz_to_erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f))


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e) / 21.4) - 1.0) / 0.00437


def erb_bandwidth(f):
    """Glasberg & Moore equivalent rectangular bandwidth in Hz."""
    return 24.7 * (4.37 * np.asarray(f) / 1000.0 + 1.0)


def filter_centers(cfg: FrontendConfig) -> np.ndarray:
    """Center frequencies (Hz) of the filterbank rows, ascending."""
    nyq = cfg.sample_rate / 2.0
    n = cfg.n_filters
    kind = cfg.filterbank_kind
    if kind is FilterbankKind.MEL:
        return mel_to_hz(np.linspace(0.0, hz_to_mel(nyq), n + 2))[1:-1]
    if kind is FilterbankKind.GAMMATONE:
        return erb_rate_to_hz(np.linspace(hz_to_erb_rate(cfg.gammatone_fmin), hz_to_erb_rate(nyq), n))
    ratio = (nyq / cfg.cqt_fmin) ** (1.0 / n)
    return cfg.cqt_fmin * ratio ** np.arange(n)


def _ensure_nonempty(weights: np.ndarray, centers: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    # Filters narrower than one FFT bin fall back to their nearest bin.
    empty = ~(weights > 0).any(axis=1)
    if empty.any():
        bins = np.clip(np.round(centers[empty] * cfg.n_fft / cfg.sample_rate).astype(int), 0, cfg.n_bins - 1)
        weights[np.flatnonzero(empty), bins] = 1.0
    return weights


def build_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Non-negative (n_filters, n_fft/2+1) weighting matrix for ``cfg.filterbank_kind``."""
    freqs = _fft_freqs(cfg)
    centers = filter_centers(cfg)
    kind = cfg.filterbank_kind

    if kind is FilterbankKind.MEL:
        edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0), cfg.n_filters + 2))
        lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        up = (freqs[None, :] - lo) / (mid - lo)
        down = (hi - freqs[None, :]) / (hi - mid)
        weights = np.maximum(0.0, np.minimum(up, down))
    elif kind is FilterbankKind.GAMMATONE:
        b = 1.019 * erb_bandwidth(centers)[:, None]
        weights = (1.0 + ((freqs[None, :] - centers[:, None]) / b) ** 2) ** -2.0
        weights /= weights.max(axis=1, keepdims=True)
    else:
        log_ratio = np.log(centers[1] / centers[0])
        with np.errstate(divide="ignore"):
            logf = np.log(freqs)
        dist = np.abs(logf[None, :] - np.log(centers)[:, None]) / log_ratio
        weights = np.maximum(0.0, 1.0 - dist)
        weights[:, 0] = 0.0
    return _ensure_nonempty(weights, centers, cfg)


def fit_frames(spec: np.ndarray, target: int) -> np.ndarray:
    """Center-trim (extra frame dropped at the end) or edge-replicate the time axis to ``target``."""
    n = spec.shape[1]
    if n >= target:
        start = (n - target) // 2
        return spec[:, start:start + target]
    left = (target - n) // 2
    pad = [(0, 0), (left, target - n - left)] + [(0, 0)] * (spec.ndim - 2)
    return np.pad(spec, pad, mode="edge")


def log_filterbank_spectrogram(clip: AudioClip, cfg: FrontendConfig, filterbank: np.ndarray | None = None) -> np.ndarray:
    power = stft_power(clip, cfg)[:, :, 0]
    fb = build_filterbank(cfg) if filterbank is None else filterbank
    energy = fb @ power
    logspec = 10.0 * np.log10(energy + cfg.log_floor)
    return fit_frames(logspec, cfg.target_frames)[:, :, None]


def _delta(x: np.ndarray, m: int) -> np.ndarray:
    t = x.shape[1]
    padded = np.pad(x, [(0, 0), (m, m)], mode="edge")
    num = np.zeros_like(x)
    for n in range(1, m + 1):
        num += n * (padded[:, m + n:m + n + t] - padded[:, m - n:m - n + t])
    return num / (2.0 * sum(n * n for n in range(1, m + 1)))


def add_deltas(spec: np.ndarray, width: int = 9) -> np.ndarray:
    """Stack regression delta and delta-delta channels onto a 1-channel spectrogram."""
    if width < 1 or width % 2 == 0:
        raise ValueError(f"invalid delta width: {width}")
    if spec.ndim != 3 or spec.shape[2] != 1:
        raise ValueError("add_deltas expects a (freq, time, 1) spectrogram")
    if width > 2 * spec.shape[1] + 1:
        raise ValueError(f"invalid delta width: {width} exceeds 2*frames+1")
    base = spec[:, :, 0]
    m = (width - 1) // 2
    d1 = _delta(base, m)
    d2 = _delta(d1, m)
    return np.stack([base, d1, d2], axis=-1)


def extract(clip: AudioClip, cfg: FrontendConfig, filterbank: np.ndarray | None = None) -> np.ndarray:
    """Full front end: clip -> (n_filters, target_frames, 3) float32 spectrogram."""
    logspec = log_filterbank_spectrogram(clip, cfg, filterbank)
    return add_deltas(logspec, cfg.delta_width).astype(np.float32)


# --- file formats -----------------------------------------------------------

LCFT_MAGIC = b"LCFT"
LCFT_VERSION = 1
_LCFT_HEADER = struct.Struct("<4sBBIII")


def encode_features(spec: np.ndarray, kind: FilterbankKind) -> bytes:
    spec = np.asarray(spec)
    if spec.ndim != 3:
        raise ValueError("feature tensor must be 3-D (freq, time, chan)")
    header = _LCFT_HEADER.pack(LCFT_MAGIC, LCFT_VERSION, int(FilterbankKind.parse(kind)), *spec.shape)
    return header + np.ascontiguousarray(spec, dtype="<f4").tobytes()


def decode_features(blob: bytes) -> tuple[np.ndarray, FilterbankKind]:
    if len(blob) < _LCFT_HEADER.size:
        raise ValueError("truncated LCFT header")
    magic, version, kind, f, t, c = _LCFT_HEADER.unpack_from(blob)
    if magic != LCFT_MAGIC:
        raise ValueError(f"bad LCFT magic {magic!r}")
    if version != LCFT_VERSION:
        raise ValueError(f"unsupported LCFT version {version}")
    n = f * t * c
    body = blob[_LCFT_HEADER.size:]
    if len(body) != 4 * n:
        raise ValueError(f"LCFT payload has {len(body)} bytes, expected {4 * n}")
    data = np.frombuffer(body, dtype="<f4").reshape(f, t, c).astype(np.float32)
    return data, FilterbankKind(kind)


def write_features(path: str | Path, spec: np.ndarray, kind: FilterbankKind) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_features(spec, kind))


def read_features(path: str | Path) -> tuple[np.ndarray, FilterbankKind]:
    return decode_features(Path(path).read_bytes())


def read_wav(path: str | Path) -> AudioClip:
    """Read a mono 16-bit PCM WAV, normalized by 1/32768."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(np.asarray(clip.samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())
