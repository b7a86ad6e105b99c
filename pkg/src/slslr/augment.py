"""Positive-pair generators for skeleton sequences.

All functions take ``(N, L, D)`` arrays and an explicit ``numpy.random.Generator``
and never modify their input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MODES = ("part_permutation", "classical", "combined", "segment")


@dataclass
class PartPermutationConfig:
    ks_fraction: float = 1 / 3
    ke_fraction: float = 1 / 4
    ks: int | None = None
    ke: int | None = None

    def bounds(self, n: int) -> tuple[int, int]:
        """Resolve ``(ks, ke)`` frame counts for a sequence of ``n`` frames."""
        for name in ("ks_fraction", "ke_fraction"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        ks = math.ceil(n * self.ks_fraction) if self.ks is None else self.ks
        ke = math.ceil(n * self.ke_fraction) if self.ke is None else self.ke
        if ks < 0 or ke < 0:
            raise ValueError("ks and ke must be nonnegative")
        if ks + ke >= n:
            raise ValueError(f"central region empty: ks={ks}, ke={ke}, N={n}")
        return ks, ke


@dataclass
class ClassicalAugmentSpec:
    rotation_max_deg: float = 15.0
    noise_sigma: float = 0.01
    flip_prob: float = 0.5
    translation_max: float = 0.1

    def check(self) -> None:
        for name in ("rotation_max_deg", "noise_sigma", "translation_max"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")


@dataclass
class AugmentationConfig:
    """Which positive-pair generator the trainer uses, plus its settings.

    ``segment`` permutes only the first or last ``segment_k`` frames and is what
    the boundary search trains with.
    """

    mode: str = "part_permutation"
    part: PartPermutationConfig | None = None
    classical: ClassicalAugmentSpec | None = None
    segment_k: int = 1
    segment_position: str = "first"

    def __post_init__(self):
        if self.part is None:
            self.part = PartPermutationConfig()
        if self.classical is None:
            self.classical = ClassicalAugmentSpec()


def temporal_permutation(seq: np.ndarray, first: int, last: int, rng: np.random.Generator) -> np.ndarray:
    """Shuffle frames ``first..last`` (inclusive); every other frame is copied as is."""
    n = seq.shape[0]
    if not 0 <= first <= last < n:
        raise ValueError(f"need 0 <= first <= last < N, got first={first}, last={last}, N={n}")
    out = seq.copy()
    out[first : last + 1] = seq[first + rng.permutation(last - first + 1)]
    return out


def part_permutation_pair(seq: np.ndarray, cfg: PartPermutationConfig, rng: np.random.Generator):
    n = seq.shape[0]
    ks, ke = cfg.bounds(n)
    views = []
    for _ in range(2):
        v = seq
        if ks > 0:
            v = temporal_permutation(v, 0, ks - 1, rng)
        if ke > 0:
            v = temporal_permutation(v, n - ke, n - 1, rng)
        views.append(v if v is not seq else seq.copy())
    return views[0], views[1]


def segment_pair(seq: np.ndarray, k: int, position: str, rng: np.random.Generator):
    """Two views with the first (or last) ``k`` frames independently shuffled."""
    n = seq.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if position == "first":
        first, last = 0, k - 1
    elif position == "last":
        first, last = n - k, n - 1
    else:
        raise ValueError(f"position must be 'first' or 'last', got {position!r}")
    return temporal_permutation(seq, first, last, rng), temporal_permutation(seq, first, last, rng)


def classical_augment(seq: np.ndarray, spec: ClassicalAugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Rotation about each frame's centroid, coordinate noise, horizontal flip, translation.

    One angle, flip decision and shift is drawn per sequence; noise is i.i.d.
    Rotation acts on the first two coordinates.
    """
    spec.check()
    out = seq.astype(np.float64, copy=True)

    angle = np.deg2rad(rng.uniform(-spec.rotation_max_deg, spec.rotation_max_deg))
    flip = rng.random() < spec.flip_prob
    shift = rng.uniform(-spec.translation_max, spec.translation_max, size=seq.shape[-1])

    if angle != 0.0:
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        xy = out[..., :2]
        centroid = xy.mean(axis=1, keepdims=True)
        out[..., :2] = (xy - centroid) @ rot.T + centroid
    if spec.noise_sigma > 0:
        out += rng.normal(0.0, spec.noise_sigma, size=out.shape)
    if flip:
        out[..., 0] = -out[..., 0]
    out += shift
    return out.astype(seq.dtype)


def make_positive_pair(seq: np.ndarray, mode: str, cfg: AugmentationConfig, rng: np.random.Generator):
    if mode == "part_permutation":
        return part_permutation_pair(seq, cfg.part, rng)
    if mode == "classical":
        return classical_augment(seq, cfg.classical, rng), classical_augment(seq, cfg.classical, rng)
    if mode == "combined":
        v1, v2 = part_permutation_pair(seq, cfg.part, rng)
        return classical_augment(v1, cfg.classical, rng), classical_augment(v2, cfg.classical, rng)
    if mode == "segment":
        return segment_pair(seq, cfg.segment_k, cfg.segment_position, rng)
    raise ValueError(f"unknown augmentation mode {mode!r}; expected one of {MODES}")
