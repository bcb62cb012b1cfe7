"""Manifests, generator-held-out splits, feature datasets and the synthetic
paired-stream generator.

Synthetic tracks share one smoothed latent trajectory between the music and
vocal streams when real. For fakes the vocal stream is driven by a mixture of
that trajectory and an independent one, so ``coupling`` controls how far the
fake joint distribution drifts from the real one.
"""

from __future__ import annotations

import csv
import hashlib
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoders import ConfigError, LayerStack, expand_layers, load_layerstack, save_layerstack

TIERS = ("Real", "FullyFake", "MostlyFake")
SPLITS = ("train", "val", "test")
MANIFEST_COLUMNS = ("id", "path", "label", "tier", "generator", "split")

# generator-held-out split of the published benchmark
TABLE3_TRAIN = frozenset({"Suno 3.5", "Udio 1.5", "Diffrythm", "Suno 2"})
TABLE3_TEST = frozenset({"Suno 1", "Suno 3", "Riffusion", "Yue", "Voice Clones"})
TABLE3_COUNTS = {
    "Suno 3.5": (23695, 0), "Udio 1.5": (19500, 0), "Diffrythm": (4606, 0), "Suno 2": (110, 0),
    "Suno 1": (0, 48), "Suno 3": (0, 3512), "Riffusion": (0, 7057), "Yue": (0, 5278),
    "Voice Clones": (0, 1166),
}

SMOOTH_WINDOW = 5


class ManifestError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class TrackRecord:
    id: str
    path: str
    label: int
    tier: str
    generator: str
    split: str

    def feature_paths(self, root: Path) -> tuple[Path, Path]:
        parts = self.path.split(",")
        if len(parts) != 2:
            raise ManifestError(f"{self.id}: expected 'music,vocal' feature paths, got {self.path!r}")
        return root / parts[0], root / parts[1]


def normalize_generator(name: str) -> str:
    return re.sub(r"[^a-z0-9.]", "", name.lower())


# -- manifests ---------------------------------------------------------------------

def parse_manifest(path: str | Path) -> list[TrackRecord]:
    records: list[TrackRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh, delimiter="\t")
        header = next(rows, None)
        if header is None or tuple(header) != MANIFEST_COLUMNS:
            raise ManifestError(f"{path}:1: header must be {' '.join(MANIFEST_COLUMNS)!r}")
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}")
            tid, src, label, tier, gen, split = row
            if label not in ("0", "1"):
                raise ManifestError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            if tier not in TIERS:
                raise ManifestError(f"{path}:{lineno}: unknown tier {tier!r}")
            if split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
            if (tier == "Real") != (label == "0"):
                raise ManifestError(f"{path}:{lineno}: tier {tier} inconsistent with label {label}")
            if tid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {tid!r}")
            seen.add(tid)
            records.append(TrackRecord(tid, src, int(label), tier, gen, split))
    return records


def write_manifest(records: Iterable[TrackRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in records:
            w.writerow([r.id, r.path, r.label, r.tier, r.generator, r.split])


def _unit_hash(seed: int, key: str) -> float:
    h = hashlib.sha256(f"{seed}:{key}".encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little") / 2.0 ** 64


def split_ood(records: Sequence[TrackRecord], train_generators: Iterable[str],
              test_generators: Iterable[str], seed: int = 0, val_fraction: float = 0.1,
              real_test_fraction: float = 0.1):
    """Route fakes by generator and reals by seeded hash into (train, val, test).

    Fakes from generators in neither set are treated as unseen and go to test.
    """
    train_g = {normalize_generator(g) for g in train_generators}
    test_g = {normalize_generator(g) for g in test_generators}
    overlap = train_g & test_g
    if overlap:
        raise ConfigError(f"generator sets overlap: {sorted(overlap)}")
    out: dict[str, list[TrackRecord]] = {s: [] for s in SPLITS}
    for r in records:
        u = _unit_hash(seed, r.id)
        if r.label == 0:
            if u < real_test_fraction:
                split = "test"
            else:
                v = (u - real_test_fraction) / max(1e-12, 1.0 - real_test_fraction)
                split = "val" if v < val_fraction else "train"
        else:
            g = normalize_generator(r.generator)
            if g in train_g:
                split = "val" if u < val_fraction else "train"
            else:
                split = "test"
        out[split].append(replace(r, split=split))
    return out["train"], out["val"], out["test"]


# -- feature datasets ---------------------------------------------------------------

@dataclass
class FeatureDataset:
    ids: list[str]
    music: np.ndarray   # (N, L, T, d) float64
    vocal: np.ndarray
    labels: np.ndarray
    generators: list[str]

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx: Sequence[int]) -> "FeatureDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return FeatureDataset([self.ids[i] for i in idx], self.music[idx], self.vocal[idx],
                              self.labels[idx], [self.generators[i] for i in idx])


def dataset_from_stacks(ids, pairs: Sequence[tuple[LayerStack, LayerStack]], labels,
                        generators) -> FeatureDataset:
    if not pairs:
        return FeatureDataset([], np.zeros((0, 1, 1, 1)), np.zeros((0, 1, 1, 1)),
                              np.zeros(0, dtype=np.int64), [])
    shapes = {(m.layers.shape, v.layers.shape) for m, v in pairs}
    if len(shapes) != 1:
        raise ValueError(f"all tracks need equal stack shapes to batch, found {sorted(shapes)}")
    music = np.stack([m.layers for m, _ in pairs]).astype(np.float64)
    vocal = np.stack([v.layers for _, v in pairs]).astype(np.float64)
    return FeatureDataset(list(ids), music, vocal, np.asarray(labels, dtype=np.int64), list(generators))


def load_split(records: Sequence[TrackRecord], root: str | Path, split: str) -> FeatureDataset:
    root = Path(root)
    chosen = [r for r in records if r.split == split]
    pairs = []
    for r in chosen:
        mp, vp = r.feature_paths(root)
        pairs.append((load_layerstack(mp), load_layerstack(vp)))
    return dataset_from_stacks([r.id for r in chosen], pairs, [r.label for r in chosen],
                               [r.generator for r in chosen])


# -- synthetic generator ------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n_real: int = 1375
    n_fake: int = 1375
    latent_dim: int = 4
    T: int = 32
    d: int = 32
    L: int = 4
    coupling: float = 0.2
    noise_scale: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.n_real < 0 or self.n_fake < 0:
            raise ConfigError("track counts must be >= 0")
        if not 0.0 <= self.coupling <= 1.0:
            raise ConfigError(f"coupling must lie in [0, 1], got {self.coupling}")
        if self.latent_dim > self.d:
            raise ConfigError(f"latent_dim {self.latent_dim} exceeds feature dim {self.d}")
        if min(self.latent_dim, self.T, self.d, self.L) < 1:
            raise ConfigError("latent_dim, T, d and L must be >= 1")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")


@dataclass
class SynthTrack:
    id: str
    music: LayerStack
    vocal: LayerStack
    label: int


def smoothed_latent(rng: np.random.Generator, latent_dim: int, T: int) -> np.ndarray:
    """(T, latent_dim) moving-average-smoothed Gaussian noise with unit variance."""
    raw = rng.standard_normal((T + SMOOTH_WINDOW - 1, latent_dim))
    kernel = np.ones(SMOOTH_WINDOW) / math.sqrt(SMOOTH_WINDOW)
    return np.stack([np.convolve(raw[:, k], kernel, mode="valid") for k in range(latent_dim)], axis=1)


def _mixing_matrices(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([spec.seed, 0x5EED])
    scale = 1.0 / math.sqrt(spec.latent_dim)
    return (rng.standard_normal((spec.latent_dim, spec.d)) * scale,
            rng.standard_normal((spec.latent_dim, spec.d)) * scale)


def synth_track(spec: SynthSpec, index: int, label: int, mixers=None) -> SynthTrack:
    a_m, a_v = mixers if mixers is not None else _mixing_matrices(spec)
    rng = np.random.default_rng([spec.seed, index])
    z = smoothed_latent(rng, spec.latent_dim, spec.T)
    z_other = smoothed_latent(rng, spec.latent_dim, spec.T)
    zv = z if label == 0 else spec.coupling * z + (1.0 - spec.coupling) * z_other
    m1 = z @ a_m + spec.noise_scale * rng.standard_normal((spec.T, spec.d))
    v1 = zv @ a_v + spec.noise_scale * rng.standard_normal((spec.T, spec.d))
    music = LayerStack(expand_layers(m1, spec.L, spec.seed * 2 + 1000), "music", 1.0)
    vocal = LayerStack(expand_layers(v1, spec.L, spec.seed * 2 + 1001), "vocal", 1.0)
    return SynthTrack(f"synth-{index:05d}", music, vocal, label)


def synth_labels(spec: SynthSpec) -> np.ndarray:
    labels = np.array([0] * spec.n_real + [1] * spec.n_fake, dtype=np.int64)
    return np.random.default_rng([spec.seed, 0x1AB]).permutation(labels)


def synth_dataset(spec: SynthSpec) -> list[SynthTrack]:
    mixers = _mixing_matrices(spec)
    return [synth_track(spec, i, int(lab), mixers) for i, lab in enumerate(synth_labels(spec))]


def synth_feature_dataset(spec: SynthSpec) -> FeatureDataset:
    tracks = synth_dataset(spec)
    return dataset_from_stacks([t.id for t in tracks], [(t.music, t.vocal) for t in tracks],
                               [t.label for t in tracks],
                               ["real" if t.label == 0 else "synth" for t in tracks])


def assign_synth_splits(n: int, n_val: int, n_test: int, seed: int) -> list[str]:
    if n_val + n_test > n:
        raise ConfigError(f"val ({n_val}) + test ({n_test}) exceeds {n} tracks")
    order = np.random.default_rng([seed, 0x5B1]).permutation(n)
    splits = ["train"] * n
    for i in order[:n_test]:
        splits[i] = "test"
    for i in order[n_test:n_test + n_val]:
        splits[i] = "val"
    return splits


def materialize_synth(spec: SynthSpec, out_dir: str | Path, n_val: int = 250,
                      n_test: int = 500) -> list[TrackRecord]:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    tracks = synth_dataset(spec)
    splits = assign_synth_splits(len(tracks), n_val, n_test, spec.seed)
    records = []
    for t, split in zip(tracks, splits):
        mp = f"features/{t.id}.music.clms"
        vp = f"features/{t.id}.vocal.clms"
        save_layerstack(t.music, out / mp)
        save_layerstack(t.vocal, out / vp)
        tier = "Real" if t.label == 0 else "FullyFake"
        gen = "real" if t.label == 0 else "synth"
        records.append(TrackRecord(t.id, f"{mp},{vp}", t.label, tier, gen, split))
    write_manifest(records, out / "manifest.tsv")
    return records


# -- cross-stream statistics ---------------------------------------------------------

def canonical_correlation(x: np.ndarray, y: np.ndarray, k: int) -> float:
    """First canonical correlation between the top-k principal subspaces of x and y."""
    def whiten(a):
        a = a - a.mean(axis=0)
        u, s, _ = np.linalg.svd(a, full_matrices=False)
        keep = min(k, int((s > 1e-10 * max(s[0], 1e-300)).sum()))
        return u[:, :keep]
    ux, uy = whiten(x), whiten(y)
    if ux.shape[1] == 0 or uy.shape[1] == 0:
        return 0.0
    return float(min(1.0, np.linalg.svd(ux.T @ uy, compute_uv=False)[0]))


def cross_stream_statistic(track: SynthTrack, k: int | None = None) -> float:
    k = k if k is not None else max(1, min(track.music.dim, track.music.n_frames // 4))
    return canonical_correlation(track.music.layers[0].astype(np.float64),
                                 track.vocal.layers[0].astype(np.float64), k)


def kl_discrete(p: Sequence[float], q: Sequence[float]) -> float:
    """KL(p || q) in nats with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise DomainError(f"distributions must be equal-length vectors, got {p.shape} and {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise DomainError("probabilities must be nonnegative")
    if abs(p.sum() - 1.0) > 1e-9 or abs(q.sum() - 1.0) > 1e-9:
        raise DomainError("both distributions must sum to 1 within 1e-9")
    support = p > 0
    if np.any(q[support] == 0):
        raise DomainError("q has zero mass where p is positive")
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def histogram_kl(real_stats: Sequence[float], fake_stats: Sequence[float], bins: int = 20,
                 pseudo_count: float = 0.5) -> float:
    """KL between smoothed histograms of a statistic on [0, 1] for reals vs fakes."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    hr = np.histogram(np.clip(real_stats, 0, 1), edges)[0] + pseudo_count
    hf = np.histogram(np.clip(fake_stats, 0, 1), edges)[0] + pseudo_count
    return kl_discrete(hr / hr.sum(), hf / hf.sum())


def coupling_gap(spec: SynthSpec, bins: int = 20) -> float:
    tracks = synth_dataset(spec)
    stats = np.array([cross_stream_statistic(t) for t in tracks])
    labels = np.array([t.label for t in tracks])
    return histogram_kl(stats[labels == 0], stats[labels == 1], bins)
