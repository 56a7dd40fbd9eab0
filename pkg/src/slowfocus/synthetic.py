"""Deterministic synthetic datasets for desk-scale runs.

Ground-truth segments are bin-aligned (both ends are exact bin starts) so that
writing them in the segment protocol and parsing them back is lossless.
"""
from __future__ import annotations

import random
from typing import Sequence

import numpy as np

from .corpus import Annotation, Clip, FeatureStream
from .grounding import GroundingProtocol, segment_from_bins
from .orchestrator import QaItem
from .sampling import Segment, VideoTimeline

ACTIONS = ("jump", "run", "throw", "catch", "spin", "kick", "swim", "climb")


def synth_items(n: int, seed: int, proto: GroundingProtocol | None = None,
                fps_choices: Sequence[float] = (1.0, 2.0, 5.0, 10.0),
                duration_range: tuple[int, int] = (20, 60)) -> list[QaItem]:
    proto = proto or GroundingProtocol()
    rng = random.Random(seed)
    items = []
    for k in range(n):
        fps = rng.choice(fps_choices)
        duration = rng.randint(*duration_range)
        video = VideoTimeline(int(duration * fps), fps, f"vid{k:04d}")
        # at least 5% of the video, at most 40%
        length = rng.randint(proto.n_bins // 20, 2 * proto.n_bins // 5)
        start = rng.randint(0, proto.n_bins - 1 - length)
        seg = segment_from_bins(start, start + length, video.duration_s, proto)
        action = rng.choice(ACTIONS)
        items.append(
            QaItem(
                f"q{k:04d}",
                video,
                f"When does the person {action} in video {k}?",
                (seg,),
                f"the person does {action} and then rests",
            )
        )
    return items


def reference_records(items: Sequence[QaItem]) -> list[dict]:
    docs = []
    for it in items:
        doc = {"item_id": it.item_id, "question": it.question}
        if it.gt_segments:
            doc["start_s"] = min(s.start_s for s in it.gt_segments)
            doc["end_s"] = max(s.end_s for s in it.gt_segments)
        if it.reference_answer is not None:
            doc["answer_text"] = it.reference_answer
        docs.append(doc)
    return docs


def shot_stream(
    shot_lengths: Sequence[int],
    fps: float = 1.0,
    dim: int = 8,
    noise: float = 0.01,
    seed: int = 0,
    video_id: str = "stream",
) -> FeatureStream:
    """Stream of len(shot_lengths) shots, each a noisy copy of its own orthogonal prototype."""
    if len(shot_lengths) > dim:
        raise ValueError("need at least one feature dimension per shot")
    rng = np.random.default_rng(seed)
    rows = []
    for k, n in enumerate(shot_lengths):
        proto = np.zeros(dim)
        proto[k] = 1.0
        rows.append(proto + noise * rng.standard_normal((n, dim)))
    return FeatureStream(video_id, np.vstack(rows), fps)


def synth_annotation(video_id: str, n_clips: int, seed: int,
                     actions: Sequence[str] = ACTIONS) -> Annotation:
    rng = random.Random(f"{seed}:{video_id}")
    t = 0.0
    clips = []
    for _ in range(n_clips):
        length = float(rng.randint(5, 20))
        k = rng.randint(1, 2)
        clips.append(Clip(Segment(t, t + length), "", tuple(rng.sample(list(actions), k))))
        t += length
    return Annotation(video_id, t, 1.0, tuple(clips))

