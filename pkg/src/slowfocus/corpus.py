"""Benchmark construction: shot splitting, clip stitching and QA task generation.

Splitting puts a boundary at frame ``i`` whenever the cosine distance between
frames ``i-1`` and ``i`` exceeds the cut threshold. Stitching then walks the
clips left to right and folds a clip into the one before it when either of them
is shorter than ``min_clip_s`` or when the previous clip's last frame and the
current clip's first frame are within ``merge_distance`` of each other.
"""
from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Protocol, Sequence

import numpy as np

from . import kernels
from .grounding import GroundingProtocol, format_segment
from .sampling import Segment, VideoTimeline

MIN_CLIP_S = 5.0
MERGE_DISTANCE = 0.1

Task = Literal["captioning", "first_last_grounding", "sequence_reasoning", "count_of_times", "multi_turn"]
TASKS: tuple[str, ...] = (
    "captioning",
    "first_last_grounding",
    "sequence_reasoning",
    "count_of_times",
    "multi_turn",
)


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureStream:
    video_id: str
    features: np.ndarray
    fps: float

    def __post_init__(self):
        f = np.array(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 2:
            raise FeatureError("a feature stream needs at least two frames of equal length")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        f.setflags(write=False)
        object.__setattr__(self, "features", f)

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps

    def frame_at(self, t_s: float) -> int:
        return min(self.n_frames - 1, max(0, round(t_s * self.fps)))


@dataclass(frozen=True)
class ClipBoundarySet:
    boundaries_s: tuple[float, ...]
    duration_s: float

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries_s)
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError("boundaries must be strictly increasing")
        if b and not (0 < b[0] and b[-1] < self.duration_s):
            raise ValueError("boundaries must lie strictly inside the video")
        object.__setattr__(self, "boundaries_s", b)

    def clips(self) -> list[Segment]:
        edges = (0.0, *self.boundaries_s, self.duration_s)
        return [Segment(a, b) for a, b in zip(edges, edges[1:])]

    def to_dict(self) -> dict:
        return {"boundaries_s": list(self.boundaries_s), "duration_s": self.duration_s}

    @classmethod
    def from_dict(cls, doc: dict) -> ClipBoundarySet:
        return cls(tuple(doc["boundaries_s"]), float(doc["duration_s"]))


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(kernels.adjacent_cosine_distance(np.vstack([a, b]))[0])


def _check_norms(features: np.ndarray) -> None:
    zero = np.flatnonzero(np.einsum("ij,ij->i", features, features) == 0)
    if zero.size:
        raise FeatureError(f"zero-norm feature vector at frame {int(zero[0])}")


def detect_boundaries(stream: FeatureStream, cut_threshold: float) -> ClipBoundarySet:
    if not 0 < cut_threshold <= 2:
        raise ValueError("cut_threshold must be in (0, 2]")
    _check_norms(stream.features)
    dist = kernels.adjacent_cosine_distance(stream.features)
    cuts = np.flatnonzero(dist > cut_threshold) + 1
    return ClipBoundarySet(tuple(int(i) / stream.fps for i in cuts), stream.duration_s)


def stitch(
    boundaries: ClipBoundarySet,
    stream: FeatureStream,
    min_clip_s: float = MIN_CLIP_S,
    merge_distance: float = MERGE_DISTANCE,
) -> ClipBoundarySet:
    """One left-to-right merging pass; see the module docstring for the rule."""
    clips = boundaries.clips()
    if not clips:
        return boundaries
    kept = [clips[0]]
    for clip in clips[1:]:
        prev = kept[-1]
        start_frame = stream.frame_at(clip.start_s)
        end_frame = max(0, start_frame - 1)
        short = clip.length_s < min_clip_s or prev.length_s < min_clip_s
        close = (
            _cosine_distance(stream.features[end_frame], stream.features[start_frame])
            <= merge_distance
        )
        if short or close:
            kept[-1] = Segment(prev.start_s, clip.end_s)
        else:
            kept.append(clip)
    return ClipBoundarySet(tuple(c.start_s for c in kept[1:]), boundaries.duration_s)


# -- annotations and QA records ----------------------------------------------


@dataclass(frozen=True)
class Clip:
    segment: Segment
    caption: str = ""
    actions: tuple[str, ...] = ()


@dataclass(frozen=True)
class Annotation:
    video_id: str
    duration_s: float
    fps: float
    clips: tuple[Clip, ...]

    def __post_init__(self):
        for a, b in zip(self.clips, self.clips[1:]):
            if b.segment.start_s < a.segment.end_s:
                raise ValueError("annotation clips must be sorted and non-overlapping")
        for c in self.clips:
            c.segment.check_within(self.duration_s)

    @classmethod
    def from_dict(cls, doc: dict) -> Annotation:
        clips = tuple(
            Clip(
                Segment(float(c["start_s"]), float(c["end_s"])),
                c.get("caption", ""),
                tuple(c.get("actions", ())),
            )
            for c in doc["clips"]
        )
        return cls(doc["video_id"], float(doc["duration_s"]), float(doc.get("fps", 1.0)), clips)

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "duration_s": self.duration_s,
            "fps": self.fps,
            "clips": [
                {
                    "start_s": c.segment.start_s,
                    "end_s": c.segment.end_s,
                    "caption": c.caption,
                    "actions": list(c.actions),
                }
                for c in self.clips
            ],
        }


@dataclass(frozen=True)
class Turn:
    question: str
    answer: str


@dataclass(frozen=True)
class QaRecord:
    record_id: str
    video_id: str
    duration_s: float
    fps: float
    task: Task
    subtype: str
    turns: tuple[Turn, ...]
    gt_segments: tuple[Segment, ...]
    clip_count: int

    def __post_init__(self):
        if not self.turns:
            raise ValueError("a QA record needs at least one turn")
        if self.task != "captioning" and not self.gt_segments:
            raise ValueError(f"{self.task} records must carry ground-truth segments")

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "video_id": self.video_id,
            "duration_s": self.duration_s,
            "fps": self.fps,
            "task": self.task,
            "subtype": self.subtype,
            "turns": [{"question": t.question, "answer": t.answer} for t in self.turns],
            "gt_segments": [s.as_list() for s in self.gt_segments],
            "clip_count": self.clip_count,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> QaRecord:
        return cls(
            doc["record_id"],
            doc["video_id"],
            float(doc["duration_s"]),
            float(doc["fps"]),
            doc["task"],
            doc.get("subtype", ""),
            tuple(Turn(t["question"], t["answer"]) for t in doc["turns"]),
            tuple(Segment(float(s), float(e)) for s, e in doc.get("gt_segments", [])),
            int(doc.get("clip_count", 0)),
        )

    def to_items(self):
        """One inference item per turn, for the two-round pipeline."""
        from .orchestrator import QaItem

        video = VideoTimeline.from_duration(self.duration_s, self.fps, self.video_id)
        return [
            QaItem(f"{self.record_id}:{i}", video, t.question, self.gt_segments, t.answer)
            for i, t in enumerate(self.turns)
        ]


class CaptionerBackend(Protocol):
    def caption(self, video_id: str, segment: Segment, actions: Sequence[str]) -> str: ...


class MockCaptioner:
    def caption(self, video_id: str, segment: Segment, actions: Sequence[str]) -> str:
        what = " and ".join(actions) if actions else "activity"
        return f"clip of {what} from {segment.start_s:g}s to {segment.end_s:g}s"


def fill_captions(ann: Annotation, captioner: CaptionerBackend) -> Annotation:
    clips = tuple(
        c if c.caption else Clip(c.segment, captioner.caption(ann.video_id, c.segment, c.actions), c.actions)
        for c in ann.clips
    )
    return Annotation(ann.video_id, ann.duration_s, ann.fps, clips)


# Three paraphrases per question kind; {seg}, {action}, {q} are filled in.
TEMPLATES: dict[str, tuple[str, ...]] = {
    "caption": (
        "What actions happen {seg}?",
        "Describe the activity in the video {seg}.",
        "Which actions can be recognized {seg}?",
    ),
    "first": (
        "When does '{action}' happen for the first time?",
        "Find the first occurrence of '{action}' in the video.",
        "At which segment is '{action}' first performed?",
    ),
    "last": (
        "When does '{action}' happen for the last time?",
        "Find the last occurrence of '{action}' in the video.",
        "At which segment is '{action}' performed for the final time?",
    ),
    "after": (
        "What happens right after '{action}' {seg}?",
        "Which action follows '{action}' {seg}?",
        "After '{action}' {seg}, what does the person do next?",
    ),
    "before": (
        "What happens right before '{action}' {seg}?",
        "Which action precedes '{action}' {seg}?",
        "Before '{action}' {seg}, what was the person doing?",
    ),
    "times": (
        "How many times does '{action}' occur in the video?",
        "Count the occurrences of '{action}' in the video.",
        "How often is '{action}' performed in the video?",
    ),
}


def _describe(clip: Clip) -> str:
    return clip.caption or (", ".join(clip.actions) if clip.actions else "activity")


def _label(clip: Clip) -> str:
    return " and ".join(clip.actions) if clip.actions else _describe(clip)


def gen_tasks(ann: Annotation, proto: GroundingProtocol, seed: int) -> list[QaRecord]:
    """Record counts per video: one caption per clip, first and last grounding
    per distinct action, before/after for each adjacent clip pair, one count per
    distinct action and one multi-turn dialogue."""
    if not ann.clips:
        raise ValueError("annotation has no clips")
    rng = random.Random(f"{seed}:{ann.video_id}")
    dur = ann.duration_s
    clips = ann.clips

    def seg_text(s: Segment) -> str:
        return format_segment(s, dur, proto)

    def ask(kind: str, **kw) -> str:
        return rng.choice(TEMPLATES[kind]).format(**kw)

    records: list[QaRecord] = []

    def add(task, subtype, turns, segs):
        records.append(
            QaRecord(
                f"{ann.video_id}-{len(records):04d}", ann.video_id, dur, ann.fps,
                task, subtype, tuple(turns), tuple(segs), len(clips),
            )
        )

    for clip in clips:
        q = ask("caption", seg=seg_text(clip.segment))
        subtype = "ar" if len(clip.actions) <= 1 else "asr"
        add("captioning", subtype, [Turn(q, _describe(clip))], [clip.segment])

    occurrences: dict[str, list[int]] = {}
    for i, clip in enumerate(clips):
        for action in clip.actions:
            occurrences.setdefault(action, [])
            if not occurrences[action] or occurrences[action][-1] != i:
                occurrences[action].append(i)

    for action, where in occurrences.items():
        for kind, idx in (("first", where[0]), ("last", where[-1])):
            seg = clips[idx].segment
            add("first_last_grounding", kind, [Turn(ask(kind, action=action), seg_text(seg))], [seg])

    for a, b in zip(clips, clips[1:]):
        q = ask("after", action=_label(a), seg=seg_text(a.segment))
        add("sequence_reasoning", "after", [Turn(q, _label(b))], [a.segment, b.segment])
        q = ask("before", action=_label(b), seg=seg_text(b.segment))
        add("sequence_reasoning", "before", [Turn(q, _label(a))], [a.segment, b.segment])

    for action, where in occurrences.items():
        q = ask("times", action=action)
        add("count_of_times", "times", [Turn(q, str(len(where)))], [clips[i].segment for i in where])

    turns = [Turn(ask("caption", seg=seg_text(clips[0].segment)), _describe(clips[0]))]
    segs = [clips[0].segment]
    if occurrences:
        action = rng.choice(sorted(occurrences))
        where = occurrences[action]
        turns.append(Turn(ask("first", action=action), seg_text(clips[where[0]].segment)))
        turns.append(Turn(ask("times", action=action), str(len(where))))
        segs.extend(clips[i].segment for i in where if i != 0)
    else:
        turns.append(Turn(ask("caption", seg=seg_text(clips[-1].segment)), _describe(clips[-1])))
        segs.append(clips[-1].segment)
    add("multi_turn", "mtqa", turns, sorted(set(segs)))
    return records


def expected_record_count(ann: Annotation) -> int:
    clips = len(ann.clips)
    actions = len({a for c in ann.clips for a in c.actions})
    return clips + 2 * actions + 2 * (clips - 1) + actions + 1


@dataclass
class CorpusStats:
    tasks: dict[str, int] = field(default_factory=lambda: {t: 0 for t in TASKS})
    subtypes: dict[str, int] = field(default_factory=dict)
    clip_histogram: dict[int, int] = field(default_factory=dict)
    records: int = 0
    videos: int = 0

    def __add__(self, other: CorpusStats) -> CorpusStats:
        def add(a, b):
            return {k: a.get(k, 0) + b.get(k, 0) for k in sorted(set(a) | set(b), key=str)}

        return CorpusStats(
            add(self.tasks, other.tasks),
            add(self.subtypes, other.subtypes),
            add(self.clip_histogram, other.clip_histogram),
            self.records + other.records,
            self.videos + other.videos,
        )

    def to_dict(self) -> dict:
        return {
            "records": self.records,
            "videos": self.videos,
            "tasks": dict(self.tasks),
            "subtypes": dict(sorted(self.subtypes.items())),
            "clip_histogram": {str(k): v for k, v in sorted(self.clip_histogram.items())},
        }


def corpus_stats(records: Iterable[QaRecord]) -> CorpusStats:
    stats = CorpusStats()
    clips_per_video: dict[str, int] = {}
    for r in records:
        stats.records += 1
        stats.tasks[r.task] = stats.tasks.get(r.task, 0) + 1
        stats.subtypes[r.subtype] = stats.subtypes.get(r.subtype, 0) + 1
        clips_per_video[r.video_id] = r.clip_count
    stats.videos = len(clips_per_video)
    stats.clip_histogram = dict(sorted(Counter(clips_per_video.values()).items()))
    return stats


def read_jsonl(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_jsonl(path: str | Path, docs: Iterable[dict]) -> None:
    Path(path).write_text("".join(json.dumps(d, sort_keys=True) + "\n" for d in docs))
