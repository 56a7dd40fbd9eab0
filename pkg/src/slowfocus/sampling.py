"""Frame-time coordinates and the two sampling regimes.

Low-frequency sampling takes every ``M_L``-th frame of the whole video.
High-frequency sampling re-samples a grounded segment with a stride chosen so
that at most ``N_H`` frames come out of it:
``M_H = max(ceil(frames_in_segment / N_H), 1)``.

Segments are half-open ``[start_s, end_s)`` in seconds and a frame belongs to a
segment when its timestamp ``index / fps`` does.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

Frequency = Literal["low", "high"]


class DegenerateSegmentError(ValueError):
    """A segment contains no frame of the timeline."""


@dataclass(frozen=True)
class VideoTimeline:
    frame_count: int
    fps: float
    video_id: str = "video"

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError(f"frame_count must be >= 1, got {self.frame_count}")
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.fps

    def timestamp(self, frame_index: int) -> float:
        return frame_index / self.fps

    @classmethod
    def from_duration(cls, duration_s: float, fps: float, video_id: str = "video") -> VideoTimeline:
        return cls(max(1, round(duration_s * fps)), fps, video_id)


@dataclass(frozen=True, order=True)
class Segment:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (math.isfinite(self.start_s) and math.isfinite(self.end_s)):
            raise ValueError("segment bounds must be finite")
        if not 0 <= self.start_s < self.end_s:
            raise ValueError(f"invalid segment [{self.start_s}, {self.end_s})")

    @property
    def length_s(self) -> float:
        return self.end_s - self.start_s

    def check_within(self, duration_s: float) -> None:
        if self.end_s > duration_s:
            raise ValueError(
                f"segment [{self.start_s}, {self.end_s}) exceeds duration {duration_s}"
            )

    def as_list(self) -> list[float]:
        return [self.start_s, self.end_s]


@dataclass(frozen=True)
class SamplingConfig:
    """``low_interval_frames=None`` means one frame per second (``M_L = round(fps)``)."""

    low_interval_frames: int | None = None
    high_target_count: int = 20

    def __post_init__(self):
        if self.low_interval_frames is not None and self.low_interval_frames < 1:
            raise ValueError("low_interval_frames must be >= 1")
        if self.high_target_count < 1:
            raise ValueError("high_target_count must be >= 1")

    def low_interval(self, timeline: VideoTimeline) -> int:
        if self.low_interval_frames is not None:
            return self.low_interval_frames
        return max(1, round(timeline.fps))


@dataclass(frozen=True)
class SamplingPlan:
    frame_indices: tuple[int, ...]
    timestamps_s: tuple[float, ...]
    frequency: Frequency

    def __post_init__(self):
        if len(self.frame_indices) != len(self.timestamps_s):
            raise ValueError("frame_indices and timestamps_s differ in length")
        if any(b <= a for a, b in zip(self.frame_indices, self.frame_indices[1:])):
            raise ValueError("frame indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frame_indices)

    @classmethod
    def from_indices(
        cls, indices: Iterable[int], timeline: VideoTimeline, frequency: Frequency
    ) -> SamplingPlan:
        idx = tuple(int(i) for i in indices)
        if idx and (idx[0] < 0 or idx[-1] >= timeline.frame_count):
            raise ValueError("frame index outside the timeline")
        return cls(idx, tuple(timeline.timestamp(i) for i in idx), frequency)


def _first_frame_at_or_after(t: float, fps: float) -> int:
    i = max(0, math.ceil(t * fps) - 1)
    while i / fps < t:
        i += 1
    while i > 0 and (i - 1) / fps >= t:
        i -= 1
    return i


def frames_in_segment(segment: Segment, timeline: VideoTimeline) -> range:
    """Indices of frames whose timestamp lies in ``[start_s, end_s)``."""
    lo = _first_frame_at_or_after(segment.start_s, timeline.fps)
    hi = _first_frame_at_or_after(segment.end_s, timeline.fps)
    return range(min(lo, timeline.frame_count), min(hi, timeline.frame_count))


def sample_low(timeline: VideoTimeline, cfg: SamplingConfig) -> SamplingPlan:
    step = cfg.low_interval(timeline)
    return SamplingPlan.from_indices(range(0, timeline.frame_count, step), timeline, "low")


def high_interval(segment: Segment, timeline: VideoTimeline, cfg: SamplingConfig) -> int:
    segment.check_within(timeline.duration_s)
    n = len(frames_in_segment(segment, timeline))
    if n == 0:
        raise DegenerateSegmentError(
            f"segment [{segment.start_s}, {segment.end_s}) contains no frames"
        )
    return max(-(-n // cfg.high_target_count), 1)


def sample_high(
    timeline: VideoTimeline, segments: Sequence[Segment], cfg: SamplingConfig
) -> SamplingPlan:
    """Dense plan over every non-degenerate segment, merged by sorted union."""
    picked: set[int] = set()
    usable = 0
    for seg in segments:
        frames = frames_in_segment(seg, timeline)
        if len(frames) == 0:
            continue
        usable += 1
        step = high_interval(seg, timeline, cfg)
        picked.update(frames[::step])
    if usable == 0:
        raise DegenerateSegmentError("no segment contains any frame")
    return SamplingPlan.from_indices(sorted(picked), timeline, "high")
