"""Skeleton-sequence datasets: types, on-disk format, normalization and a
synthetic generator with a planted informative window.

A sequence is a float32 array of shape ``(n_frames, landmarks, coords)``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
SPLITS = ("train", "test", "unlabeled")


class DatasetFormatError(ValueError):
    """Missing or malformed manifest."""


class IntegrityError(ValueError):
    """Binary payload does not match what the manifest declares."""


class ValidationError(ValueError):
    """A sequence or dataset violates its invariants."""


@dataclass
class Sample:
    sequence: np.ndarray
    label: int | None
    sample_id: str

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.label == other.label
            and self.sample_id == other.sample_id
            and self.sequence.shape == other.sequence.shape
            and self.sequence.dtype == other.sequence.dtype
            and self.sequence.tobytes() == other.sequence.tobytes()
        )


@dataclass
class Dataset:
    samples: list[Sample]
    class_count: int
    landmark_count: int
    coord_dim: int
    split_tag: str = "train"
    max_len: int = 64

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([-1 if s.label is None else s.label for s in self.samples], dtype=np.int64)

    @property
    def is_labeled(self) -> bool:
        return bool(self.samples) and all(s.label is not None for s in self.samples)

    def stacked(self, n_frames: int | None = None) -> np.ndarray:
        """Return a ``(M, n_frames, L, D)`` float32 array, padding/truncating each sequence."""
        n = self.max_len if n_frames is None else n_frames
        if not self.samples:
            return np.zeros((0, n, self.landmark_count, self.coord_dim), dtype=np.float32)
        return np.stack([pad_or_truncate(s.sequence, n) for s in self.samples])

    def subset(self, indices, split_tag: str | None = None) -> "Dataset":
        return Dataset(
            samples=[self.samples[i] for i in indices],
            class_count=self.class_count,
            landmark_count=self.landmark_count,
            coord_dim=self.coord_dim,
            split_tag=self.split_tag if split_tag is None else split_tag,
            max_len=self.max_len,
        )

    def validate(self) -> None:
        if self.split_tag not in SPLITS:
            raise ValidationError(f"split_tag must be one of {SPLITS}, got {self.split_tag!r}")
        seen = set()
        problems = []
        for i, s in enumerate(self.samples):
            if s.sample_id in seen:
                problems.append(f"sample {i}: duplicate sample_id {s.sample_id!r}")
            seen.add(s.sample_id)
            try:
                validate(s.sequence)
            except ValidationError as exc:
                problems.append(f"sample {i} ({s.sample_id}): {exc}")
                continue
            if s.sequence.shape[1:] != (self.landmark_count, self.coord_dim):
                problems.append(
                    f"sample {i} ({s.sample_id}): shape {s.sequence.shape[1:]} != "
                    f"({self.landmark_count}, {self.coord_dim})"
                )
            if s.label is not None and not 0 <= s.label < self.class_count:
                problems.append(f"sample {i} ({s.sample_id}): label {s.label} outside [0, {self.class_count})")
            if s.label is None and self.split_tag != "unlabeled":
                problems.append(f"sample {i} ({s.sample_id}): missing label in {self.split_tag} split")
        if problems:
            raise ValidationError("; ".join(problems))


def validate(seq: np.ndarray) -> None:
    """Raise ValidationError listing every invariant the sequence violates."""
    seq = np.asarray(seq)
    problems = []
    if seq.ndim != 3:
        raise ValidationError(f"expected (frames, landmarks, coords) array, got ndim={seq.ndim}")
    n, lm, d = seq.shape
    if n < 1:
        problems.append("sequence has zero frames")
    if lm < 1:
        problems.append("landmark_count must be positive")
    if d not in (2, 3):
        problems.append(f"coord_dim must be 2 or 3, got {d}")
    bad = ~np.isfinite(seq)
    if bad.any():
        frames = sorted(set(np.nonzero(bad)[0].tolist()))
        problems.append(f"non-finite values at frame(s) {frames}")
    if problems:
        raise ValidationError("; ".join(problems))


def pad_or_truncate(seq: np.ndarray, target_n: int) -> np.ndarray:
    """Keep the first ``target_n`` frames, or append zero frames up to it."""
    if target_n < 1:
        raise ValueError(f"target_n must be >= 1, got {target_n}")
    n = seq.shape[0]
    if n == target_n:
        return seq.copy()
    if n > target_n:
        return seq[:target_n].copy()
    pad = np.zeros((target_n - n,) + seq.shape[1:], dtype=seq.dtype)
    return np.concatenate([seq, pad], axis=0)


# --------------------------------------------------------------------------- io


def save_dataset(dataset: Dataset, path) -> None:
    dataset.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(dataset.samples):
        fname = f"{i:06d}.f32"
        arr = np.ascontiguousarray(s.sequence, dtype="<f4")
        with open(path / fname, "wb") as fh:
            fh.write(arr.tobytes(order="C"))
        entries.append(
            {"id": s.sample_id, "label": s.label, "file": fname, "n_frames": int(arr.shape[0])}
        )
    manifest = {
        "version": FORMAT_VERSION,
        "landmark_count": dataset.landmark_count,
        "coord_dim": dataset.coord_dim,
        "max_len": dataset.max_len,
        "class_count": dataset.class_count,
        "split": dataset.split_tag,
        "samples": entries,
    }
    tmp = path / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1) + "\n")
    os.replace(tmp, path / "manifest.json")


def load_dataset(path) -> Dataset:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise DatasetFormatError(f"no manifest.json in {path}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"corrupt manifest {mpath}: {exc}") from exc
    required = ("version", "landmark_count", "coord_dim", "max_len", "class_count", "samples")
    missing = [k for k in required if k not in manifest]
    if missing:
        raise DatasetFormatError(f"manifest {mpath} missing fields {missing}")
    if manifest["version"] != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported manifest version {manifest['version']}")

    lm, d = int(manifest["landmark_count"]), int(manifest["coord_dim"])
    samples = []
    for entry in manifest["samples"]:
        fpath = path / entry["file"]
        if not fpath.is_file():
            raise IntegrityError(f"payload {fpath} missing")
        raw = fpath.read_bytes()
        n = int(entry["n_frames"])
        expected = n * lm * d * 4
        if len(raw) != expected:
            raise IntegrityError(
                f"{entry['file']}: manifest declares {n} frames ({expected} bytes), payload has {len(raw)} bytes"
            )
        seq = np.frombuffer(raw, dtype="<f4").reshape(n, lm, d).astype(np.float32)
        try:
            validate(seq)
        except ValidationError as exc:
            raise ValidationError(f"{entry['id']}: {exc}") from exc
        samples.append(Sample(seq, entry["label"], entry["id"]))

    ds = Dataset(
        samples=samples,
        class_count=int(manifest["class_count"]),
        landmark_count=lm,
        coord_dim=d,
        split_tag=manifest.get("split", "train"),
        max_len=int(manifest["max_len"]),
    )
    ds.validate()
    return ds


# -------------------------------------------------------------------- synthetic


@dataclass
class SyntheticConfig:
    class_count: int = 10
    samples_per_class: int = 20
    n_frames: int = 24
    landmark_count: int = 75
    coord_dim: int = 2
    signal_start_fraction: float = 1 / 3
    signal_end_fraction: float = 1 / 4
    noise_scale: float = 0.1
    amplitude: float = 0.4
    seed: int = 0
    split_tag: str = "train"
    family: int = 0
    id_prefix: str = field(default="s")

    def window(self) -> tuple[int, int]:
        """Frame range ``[start, stop)`` carrying class information."""
        start = math.ceil(self.n_frames * self.signal_start_fraction)
        stop = self.n_frames - math.ceil(self.n_frames * self.signal_end_fraction)
        return start, stop

    def check(self) -> None:
        for name in ("signal_start_fraction", "signal_end_fraction"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if self.signal_start_fraction >= 1 - self.signal_end_fraction:
            raise ValueError("signal_start_fraction must be < 1 - signal_end_fraction")
        start, stop = self.window()
        if stop - start < 2:
            raise ValueError(f"signal window [{start}, {stop}) needs at least 2 frames")
        if self.class_count < 1 or self.samples_per_class < 1:
            raise ValueError("class_count and samples_per_class must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        if self.coord_dim not in (2, 3):
            raise ValueError("coord_dim must be 2 or 3")


def _class_paths(cfg: SyntheticConfig):
    """Per-pair base pose, per-landmark phases and frequency.

    Classes ``2j`` and ``2j+1`` share pair ``j``'s path and differ only in the
    direction it is traversed, so order inside the window is what separates them.
    The path layout depends on ``family`` but not on ``seed``: two datasets of
    one family with different seeds draw fresh samples from the same classes.
    """
    rng = np.random.default_rng([cfg.family, 7919])
    n_pairs = (cfg.class_count + 1) // 2
    lm, d = cfg.landmark_count, cfg.coord_dim
    base = rng.uniform(-0.5, 0.5, size=(n_pairs, lm, d))
    phase = rng.uniform(0, 2 * np.pi, size=(n_pairs, lm, d))
    freq = rng.uniform(0.6, 1.2, size=(n_pairs, 1, d))
    return base, phase, freq


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    cfg.check()
    start, stop = cfg.window()
    width = stop - start
    base, phase, freq = _class_paths(cfg)
    rng = np.random.default_rng(cfg.seed)
    n, lm, d = cfg.n_frames, cfg.landmark_count, cfg.coord_dim
    t = np.linspace(0.0, 1.0, width)[:, None, None]

    samples = []
    for c in range(cfg.class_count):
        pair, reverse = divmod(c, 2)
        progress = 1.0 - t if reverse else t
        for i in range(cfg.samples_per_class):
            seq = rng.normal(0.0, cfg.noise_scale, size=(n, lm, d))
            amp = cfg.amplitude * (1.0 + 0.1 * rng.standard_normal())
            offset = 0.05 * rng.standard_normal(size=(1, 1, d))
            path = base[pair] + amp * np.sin(2 * np.pi * freq[pair] * progress + phase[pair])
            seq[start:stop] += path + offset
            samples.append(Sample(seq.astype(np.float32), c, f"{cfg.id_prefix}{c:03d}_{i:04d}"))

    return Dataset(
        samples=samples,
        class_count=cfg.class_count,
        landmark_count=lm,
        coord_dim=d,
        split_tag=cfg.split_tag,
        max_len=n,
    )


def stratified_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded per-class split into (train, test)."""
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    train_idx, test_idx = [], []
    for c in range(dataset.class_count):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        n_test = max(1, round(test_fraction * idx.size)) if idx.size > 1 else 0
        test_idx.extend(idx[:n_test].tolist())
        train_idx.extend(idx[n_test:].tolist())
    return dataset.subset(sorted(train_idx), "train"), dataset.subset(sorted(test_idx), "test")
