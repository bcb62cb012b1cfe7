"""Toy dual-stream encoders and the LayerStack file format.

A long analysis window gives the harmonic (music) view and a short window the
temporal (vocal) view. Externally computed features from real pretrained
encoders enter through :func:`load_layerstack`.
"""

from __future__ import annotations

import struct
import wave
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-10
TARGET_RATE = 24_000
MAX_DURATION = 90.0

STREAM_TAGS = {"music": 0, "vocal": 1}
_TAG_NAMES = {v: k for k, v in STREAM_TAGS.items()}

LAYERSTACK_MAGIC = b"CLMS"
LAYERSTACK_VERSION = 1
_HEADER = struct.Struct("<4sIBIIId")


class ConfigError(ValueError):
    pass


class InputTooShortError(ValueError):
    pass


class LayerStackFormatError(ValueError):
    pass


class TruncatedFileError(OSError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class LayerStack:
    """L layers of T x d features for one stream of one track (float32 storage)."""

    layers: np.ndarray
    stream: str
    frame_hop: float

    def __post_init__(self):
        arr = np.asarray(self.layers, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"layers must be a non-empty (L, T, d) array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("layer stack contains non-finite values")
        if self.stream not in STREAM_TAGS:
            raise ValueError(f"unknown stream tag {self.stream!r}")
        self.layers = arr

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def n_frames(self) -> int:
        return self.layers.shape[1]

    @property
    def dim(self) -> int:
        return self.layers.shape[2]


@dataclass(frozen=True)
class EncoderSpec:
    stream: str
    window: int
    hop: int
    n_filters: int = 32
    n_layers: int = 4
    projection_seed: int = 0

    def __post_init__(self):
        if self.stream not in STREAM_TAGS:
            raise ConfigError(f"unknown stream tag {self.stream!r}")
        if not (self.window >= self.hop > 0):
            raise ConfigError(f"need window >= hop > 0, got window={self.window} hop={self.hop}")
        if self.n_filters < 1 or self.n_layers < 1:
            raise ConfigError("n_filters and n_layers must be >= 1")


MUSIC_SPEC = EncoderSpec("music", window=1024, hop=512, projection_seed=0)
VOCAL_SPEC = EncoderSpec("vocal", window=256, hop=128, projection_seed=1)


# -- preprocessing ------------------------------------------------------------

def lowpass_taps(cutoff: float, numtaps: int = 101) -> np.ndarray:
    """Blackman-windowed sinc low-pass; ``cutoff`` in cycles/sample (< 0.5)."""
    m = np.arange(numtaps) - (numtaps - 1) / 2
    h = 2 * cutoff * np.sinc(2 * cutoff * m) * np.blackman(numtaps)
    return h / h.sum()


def preprocess(w: Waveform, target_rate: float = TARGET_RATE,
               max_duration: float = MAX_DURATION) -> Waveform:
    """Head-trim to ``max_duration`` seconds and resample to ``target_rate``."""
    if target_rate <= 0:
        raise ConfigError(f"target_rate must be positive, got {target_rate}")
    if len(w.samples) == 0:
        raise ValueError("empty waveform")
    keep = int(np.floor(max_duration * w.sample_rate + 1e-9))
    x = w.samples[:keep]
    if w.sample_rate == target_rate:
        return Waveform(x.copy(), target_rate)
    ratio = target_rate / w.sample_rate
    if ratio < 1:
        # 0.9 leaves a transition band below the new Nyquist
        x = np.convolve(x, lowpass_taps(0.5 * ratio * 0.9), mode="same")
    n_out = max(1, int(np.floor(len(x) * ratio + 1e-9)))
    pos = np.arange(n_out) / ratio
    y = np.interp(pos, np.arange(len(x)), x)
    return Waveform(np.clip(y, -1.0, 1.0), target_rate)


def read_wav(path: str | Path) -> Waveform:
    """Read PCM WAV (8/16/32-bit integer); channels are averaged to mono."""
    with wave.open(str(path), "rb") as fh:
        n_ch, width, rate, n = fh.getnchannels(), fh.getsampwidth(), fh.getframerate(), fh.getnframes()
        raw = fh.readframes(n)
    if width == 1:
        x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif width == 2:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 4:
        x = np.frombuffer(raw, dtype="<i4").astype(np.float64) / 2147483648.0
    else:
        raise ValueError(f"{path}: unsupported sample width {width}")
    x = x.reshape(-1, n_ch).mean(axis=1)
    return Waveform(x, float(rate))


def write_wav(w: Waveform, path: str | Path) -> None:
    pcm = np.round(np.clip(w.samples, -1.0, 32767 / 32768) * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(pcm.tobytes())


# -- toy encoder ---------------------------------------------------------------

def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def triangular_filterbank(n_filters: int, window: int, sample_rate: float) -> np.ndarray:
    """(n_filters, window//2+1) mel-spaced triangles; every row touches a bin."""
    n_bins = window // 2 + 1
    freqs = np.linspace(0.0, sample_rate / 2, n_bins)
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2), n_filters + 2))
    fb = np.zeros((n_filters, n_bins))
    for i in range(n_filters):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - freqs) / max(hi - mid, 1e-12)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
        if fb[i].sum() == 0.0:
            fb[i, int(np.argmin(np.abs(freqs - mid)))] = 1.0
    return fb


def frame_count(n_samples: int, window: int, hop: int) -> int:
    return (n_samples - window) // hop + 1


def filterbank_energies(w: Waveform, spec: EncoderSpec) -> np.ndarray:
    """Linear (T, d) filterbank energies of the framed magnitude spectrum."""
    n = len(w.samples)
    if n < spec.window:
        raise InputTooShortError(f"waveform has {n} samples, shorter than one window ({spec.window})")
    t = frame_count(n, spec.window, spec.hop)
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, spec.window)[::spec.hop][:t]
    mag = np.abs(np.fft.rfft(frames * np.hanning(spec.window), axis=1))
    return mag @ triangular_filterbank(spec.n_filters, spec.window, w.sample_rate).T


def orthogonal_projections(d: int, count: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(count):
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        mats.append(q * np.sign(np.diag(r)))
    return mats


def expand_layers(first: np.ndarray, n_layers: int, seed: int) -> np.ndarray:
    """Stack ``first`` (T, d) with n_layers-1 successive tanh(x @ Q) layers."""
    out = [first]
    for q in orthogonal_projections(first.shape[1], n_layers - 1, seed):
        out.append(np.tanh(out[-1] @ q))
    return np.stack(out)


def encode(w: Waveform, spec: EncoderSpec) -> LayerStack:
    first = np.log(filterbank_energies(w, spec) + LOG_FLOOR)
    layers = expand_layers(first, spec.n_layers, spec.projection_seed)
    return LayerStack(layers, spec.stream, spec.hop / w.sample_rate)


def encode_many(waves: Sequence[Waveform], spec: EncoderSpec, workers: int = 1) -> list[LayerStack]:
    """Encode in parallel; results come back in input order."""
    if workers <= 1:
        return [encode(w, spec) for w in waves]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda w: encode(w, spec), waves))


# -- file format -------------------------------------------------------------------

def layerstack_bytes(stack: LayerStack) -> bytes:
    L, T, d = stack.layers.shape
    head = _HEADER.pack(LAYERSTACK_MAGIC, LAYERSTACK_VERSION, STREAM_TAGS[stack.stream],
                        L, T, d, float(stack.frame_hop))
    return head + np.ascontiguousarray(stack.layers, dtype="<f4").tobytes()


def save_layerstack(stack: LayerStack, path: str | Path) -> None:
    Path(path).write_bytes(layerstack_bytes(stack))


def load_layerstack(path: str | Path) -> LayerStack:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < 4 or head[:4] != LAYERSTACK_MAGIC:
            raise LayerStackFormatError(f"{path}: bad magic {head[:4]!r}")
        if len(head) < _HEADER.size:
            raise TruncatedFileError(f"{path}: truncated header, expected {_HEADER.size} bytes, "
                                     f"got {len(head)}")
        _, version, tag, L, T, d, hop = _HEADER.unpack(head)
        if version != LAYERSTACK_VERSION:
            raise LayerStackFormatError(f"{path}: unsupported version {version}")
        if tag not in _TAG_NAMES:
            raise LayerStackFormatError(f"{path}: unknown stream tag {tag}")
        expected = 4 * L * T * d
        payload = fh.read(expected)
        if len(payload) != expected:
            raise TruncatedFileError(f"{path}: truncated payload, expected {expected} bytes, "
                                     f"got {len(payload)}")
    layers = np.frombuffer(payload, dtype="<f4").reshape(L, T, d).astype(np.float32)
    return LayerStack(layers, _TAG_NAMES[tag], hop)


def stacks_equal(stacks: Iterable[LayerStack]) -> bool:
    blobs = [layerstack_bytes(s) for s in stacks]
    return all(b == blobs[0] for b in blobs)
