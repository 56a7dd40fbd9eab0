"""Visual token production: frame encoders, average-pooling adapter and the
additive temporal-token table.

A frame sampled at time ``t`` of a ``T``-second video receives temporal row
``floor(N * t / T)`` (clamped to ``N - 1``), added to each of its pooled tokens.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Protocol, Sequence

import numpy as np

from . import kernels
from .numerics import ShapeError, as_matrix, read_matrix
from .sampling import SamplingPlan, VideoTimeline

TokenFrequency = Literal["low", "high", "mixed"]

# Round-off guard for temporal_bin: a time produced as (i / N) * T must map back to i.
_BIN_EPS = 1e-9


class DegenerateTimelineError(ValueError):
    pass


@dataclass(frozen=True)
class FrameFeature:
    video_id: str
    frame_index: int
    tokens: np.ndarray

    def __post_init__(self):
        tokens = as_matrix(self.tokens)
        if tokens.shape[0] < 1:
            raise ShapeError("a frame feature needs at least one token")
        object.__setattr__(self, "tokens", tokens)


@dataclass(frozen=True)
class TokenMatrix:
    tokens: np.ndarray
    timestamps_s: tuple[float, ...]
    frequency: TokenFrequency

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float64)
        if tokens.ndim != 2:
            raise ShapeError(f"tokens must be 2-D, got {tokens.shape}")
        ts = tuple(float(t) for t in self.timestamps_s)
        if len(ts) != tokens.shape[0]:
            raise ShapeError(f"{len(ts)} timestamps for {tokens.shape[0]} tokens")
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("token timestamps must be non-decreasing")
        if tokens.flags.writeable:
            tokens = tokens.copy()
            tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "timestamps_s", ts)

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    @staticmethod
    def concat(parts: Sequence[TokenMatrix]) -> TokenMatrix:
        if not parts:
            raise ValueError("nothing to concatenate")
        freqs = {p.frequency for p in parts}
        return TokenMatrix(
            np.vstack([p.tokens for p in parts]),
            tuple(t for p in parts for t in p.timestamps_s),
            freqs.pop() if len(freqs) == 1 else "mixed",
        )


@dataclass(frozen=True)
class TemporalTokenTable:
    table: np.ndarray

    def __post_init__(self):
        table = as_matrix(self.table)
        if table.shape[0] < 1:
            raise ShapeError("temporal table needs at least one bin")
        object.__setattr__(self, "table", table)

    @property
    def bins(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @classmethod
    def zeros(cls, bins: int, dim: int) -> TemporalTokenTable:
        return cls(np.zeros((bins, dim)))

    @classmethod
    def random(cls, bins: int, dim: int, seed: int, scale: float = 0.1) -> TemporalTokenTable:
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, size=(bins, dim)))


class VisualBackend(Protocol):
    tokens_per_frame: int

    def encode(self, video_id: str, frame_index: int) -> FrameFeature: ...


def _philox_key(seed: int, video_id: str, frame_index: int) -> int:
    digest = hashlib.blake2b(f"{seed}\x1f{video_id}\x1f{frame_index}".encode(), digest_size=16)
    return int.from_bytes(digest.digest(), "little")


def mock_encode(video_id: str, frame_index: int, seed: int, p: int, c: int) -> FrameFeature:
    """Deterministic stand-in for a frozen image encoder: a ``p x c`` matrix
    with entries uniform in [-1, 1), drawn from a Philox stream keyed by
    ``(seed, video_id, frame_index)``."""
    if p < 1 or c < 1:
        raise ValueError("p and c must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=_philox_key(seed, video_id, frame_index)))
    return FrameFeature(video_id, frame_index, rng.uniform(-1.0, 1.0, size=(p, c)))


@dataclass(frozen=True)
class MockEncoder:
    seed: int = 0
    patch_tokens: int = 256
    dim: int = 16
    tokens_per_frame: int = 64

    def encode(self, video_id: str, frame_index: int) -> FrameFeature:
        return mock_encode(video_id, frame_index, self.seed, self.patch_tokens, self.dim)


@dataclass
class FileBackend:
    """Features produced offline, one ``<root>/<video_id>/<frame_index>.mat`` per frame."""

    root: Path
    tokens_per_frame: int = 64
    _cache: dict = field(default_factory=dict, repr=False)

    def encode(self, video_id: str, frame_index: int) -> FrameFeature:
        key = (video_id, frame_index)
        if key not in self._cache:
            path = Path(self.root) / video_id / f"{frame_index}.mat"
            if not path.is_file():
                raise FileNotFoundError(f"no feature file {path}")
            self._cache[key] = FrameFeature(video_id, frame_index, read_matrix(path))
        return self._cache[key]


def adapt(feature: FrameFeature, out_tokens: int) -> np.ndarray:
    """Average-pool contiguous row blocks down to ``out_tokens`` tokens."""
    p = feature.tokens.shape[0]
    if out_tokens < 1 or p % out_tokens:
        raise ShapeError(f"{p} tokens cannot be pooled into {out_tokens} equal blocks")
    return kernels.block_mean(feature.tokens, out_tokens)


def temporal_bin(t_s: float, duration_s: float, n_bins: int) -> int:
    if not duration_s > 0:
        raise DegenerateTimelineError("duration must be positive")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if not 0 <= t_s <= duration_s:
        raise ValueError(f"time {t_s} outside [0, {duration_s}]")
    return min(math.floor(n_bins * t_s / duration_s + _BIN_EPS), n_bins - 1)


def bin_start(i: int, duration_s: float, n_bins: int) -> float:
    return (i / n_bins) * duration_s


def bin_center(i: int, duration_s: float, n_bins: int) -> float:
    return (i + 0.5) * duration_s / n_bins


def encode_plan(
    plan: SamplingPlan,
    timeline: VideoTimeline,
    backend: VisualBackend,
    table: TemporalTokenTable,
    out_tokens: int,
) -> TokenMatrix:
    rows = []
    stamps: list[float] = []
    for idx, ts in zip(plan.frame_indices, plan.timestamps_s):
        pooled = adapt(backend.encode(timeline.video_id, idx), out_tokens)
        if pooled.shape[1] != table.dim:
            raise ShapeError(f"feature width {pooled.shape[1]} != temporal table dim {table.dim}")
        rows.append(pooled + table.table[temporal_bin(ts, timeline.duration_s, table.bins)])
        stamps.extend([ts] * out_tokens)
    tokens = np.vstack(rows) if rows else np.zeros((0, table.dim))
    return TokenMatrix(tokens, tuple(stamps), plan.frequency)
