"""Two-round inference: ground the question on low-frequency tokens, re-sample
the grounded segments densely, mix both frequencies and ask again.

Round 1 sends ``[h_low]`` with the grounding prompt and parses the reply into
segments (falling back to the whole video when nothing parses). Round 2 sends
``[h_low, mix(h_low, h_high)]`` with the clue-augmented prompt. With
``injected_segments`` set, round 1 is skipped and those segments are used.
"""
from __future__ import annotations

import base64
import json
import logging
import re
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

import numpy as np

from .encoding import TemporalTokenTable, TokenMatrix, VisualBackend, encode_plan
from .grounding import GroundingParseError, GroundingProtocol, build_q1, build_q2, format_segment, parse_segments
from .mma import MmaParams, mix
from .sampling import SamplingConfig, Segment, VideoTimeline, sample_high, sample_low

log = logging.getLogger(__name__)

Block = tuple[str, TokenMatrix]


class BackendError(RuntimeError):
    """A language backend failed to produce a reply."""


class LanguageBackend(Protocol):
    def generate(self, blocks: Sequence[Block], prompt: str) -> str: ...


@dataclass
class MockBackend:
    """Regex fixture table: the first rule whose pattern is found in the prompt
    supplies the reply. Records every call."""

    rules: list[tuple[str, str]] = field(default_factory=list)
    default: str = ""
    max_concurrency: int | None = None
    calls: list[dict] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._compiled = [(re.compile(p), r) for p, r in self.rules]
        self._lock = threading.Lock()

    def generate(self, blocks: Sequence[Block], prompt: str) -> str:
        with self._lock:
            self.calls.append(
                {"prompt": prompt, "blocks": [(label, m.n) for label, m in blocks]}
            )
        for pattern, reply in self._compiled:
            if pattern.search(prompt):
                return reply
        return self.default

    @property
    def call_count(self) -> int:
        return len(self.calls)

    @classmethod
    def from_dict(cls, doc: dict) -> MockBackend:
        rules = [(r["pattern"], r["reply"]) for r in doc.get("rules", [])]
        return cls(rules, doc.get("default", ""))

    @classmethod
    def from_file(cls, path: str | Path) -> MockBackend:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "rules": [{"pattern": p, "reply": r} for p, r in self.rules],
            "default": self.default,
        }


def q1_pattern(question: str) -> str:
    return r"reason the question: " + re.escape(question) + r"\Z"


def q2_pattern(question: str) -> str:
    return r"Additional temporal clues to focus on: [^\n]*\n" + re.escape(question) + r"\Z"


def oracle_rules(items: Iterable[QaItem], proto: GroundingProtocol) -> list[tuple[str, str]]:
    """Rules that answer round 1 with each item's ground-truth segments and
    round 2 with its reference answer."""
    rules = []
    for item in items:
        if item.gt_segments:
            text = " and ".join(
                format_segment(s, item.video.duration_s, proto) for s in item.gt_segments
            )
            rules.append((q1_pattern(item.question), text))
        if item.reference_answer is not None:
            rules.append((q2_pattern(item.question), item.reference_answer))
    return rules


# -- remote transport ---------------------------------------------------------


def encode_block(label: str, m: TokenMatrix) -> dict:
    data = np.ascontiguousarray(m.tokens, dtype="<f4").tobytes()
    return {
        "label": label,
        "rows": m.n,
        "cols": m.dim,
        "data": base64.b64encode(data).decode("ascii"),
        "timestamps": list(m.timestamps_s),
    }


def decode_block(doc: dict) -> Block:
    raw = base64.b64decode(doc["data"])
    tokens = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(doc["rows"], doc["cols"])
    return doc["label"], TokenMatrix(tokens, tuple(doc["timestamps"]), "mixed")


def encode_request(blocks: Sequence[Block], prompt: str) -> dict:
    return {"prompt": prompt, "blocks": [encode_block(label, m) for label, m in blocks]}


def decode_reply(doc: Any) -> str:
    if not isinstance(doc, dict) or not isinstance(doc.get("text"), str):
        raise BackendError(f"malformed backend reply: {doc!r}")
    return doc["text"]


@dataclass
class RemoteBackend:
    """POSTs ``encode_request`` documents as JSON to ``endpoint``."""

    endpoint: str
    timeout_s: float = 60.0
    retries: int = 2
    max_concurrency: int | None = 1

    def generate(self, blocks: Sequence[Block], prompt: str) -> str:
        body = json.dumps(encode_request(blocks, prompt)).encode()
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(
                self.endpoint, data=body, headers={"Content-Type": "application/json"}
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                    return decode_reply(json.loads(resp.read()))
            except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
                last = exc
                log.warning("backend call %d/%d failed: %s", attempt + 1, self.retries + 1, exc)
                time.sleep(min(0.1 * 2**attempt, 2.0))
        raise BackendError(f"backend {self.endpoint} failed: {last}")


# -- inference ----------------------------------------------------------------


@dataclass(frozen=True)
class InferenceConfig:
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    proto: GroundingProtocol = field(default_factory=GroundingProtocol)
    tokens_per_frame: int = 64
    injected_segments: tuple[Segment, ...] | None = None


@dataclass
class Backends:
    visual: VisualBackend
    language: LanguageBackend
    table: TemporalTokenTable
    mma: MmaParams


@dataclass
class DialogueTrace:
    item_id: str | None = None
    video_id: str = ""
    question: str = ""
    q1_prompt: str | None = None
    q1_reply: str | None = None
    parsed_segments: list[list[float]] = field(default_factory=list)
    fallback_used: bool = False
    injected: bool = False
    q2_prompt: str | None = None
    answer: str | None = None
    low_frames: list[int] = field(default_factory=list)
    high_frames: list[int] = field(default_factory=list)
    token_counts: dict[str, int] = field(default_factory=dict)
    error: str | None = None
    error_kind: str | None = None

    @property
    def segments(self) -> list[Segment]:
        return [Segment(s, e) for s, e in self.parsed_segments]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class QaItem:
    item_id: str
    video: VideoTimeline
    question: str
    gt_segments: tuple[Segment, ...] = ()
    reference_answer: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> QaItem:
        fps = float(doc["fps"])
        if "frame_count" in doc:
            video = VideoTimeline(int(doc["frame_count"]), fps, doc["video_id"])
        else:
            video = VideoTimeline.from_duration(float(doc["duration_s"]), fps, doc["video_id"])
        return cls(
            str(doc["item_id"]),
            video,
            doc["question"],
            tuple(Segment(float(s), float(e)) for s, e in doc.get("gt_segments", [])),
            doc.get("reference_answer"),
        )

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "video_id": self.video.video_id,
            "frame_count": self.video.frame_count,
            "fps": self.video.fps,
            "question": self.question,
            "gt_segments": [s.as_list() for s in self.gt_segments],
            "reference_answer": self.reference_answer,
        }


def _encode_low(video: VideoTimeline, backends: Backends, cfg: InferenceConfig, trace: DialogueTrace):
    plan = sample_low(video, cfg.sampling)
    trace.low_frames = list(plan.frame_indices)
    h_low = encode_plan(plan, video, backends.visual, backends.table, cfg.tokens_per_frame)
    trace.token_counts["h_low"] = h_low.n
    return h_low


def _ground(video, question, backends, cfg, h_low, trace) -> list[Segment]:
    if cfg.injected_segments is not None:
        segments = list(cfg.injected_segments)
        for s in segments:
            s.check_within(video.duration_s)
        trace.injected = True
    else:
        trace.q1_prompt = build_q1(question)
        trace.q1_reply = backends.language.generate([("h_low", h_low)], trace.q1_prompt)
        try:
            segments = parse_segments(trace.q1_reply, video.duration_s, cfg.proto)
        except GroundingParseError:
            segments = [Segment(0.0, video.duration_s)]
            trace.fallback_used = True
    trace.parsed_segments = [s.as_list() for s in segments]
    return segments


def ground(video: VideoTimeline, question: str, backends: Backends,
           cfg: InferenceConfig) -> tuple[list[Segment], DialogueTrace]:
    trace = DialogueTrace(video_id=video.video_id, question=question)
    h_low = None
    if cfg.injected_segments is None:
        h_low = _encode_low(video, backends, cfg, trace)
    return _ground(video, question, backends, cfg, h_low, trace), trace


def answer(video: VideoTimeline, question: str, backends: Backends,
           cfg: InferenceConfig) -> tuple[str, DialogueTrace]:
    trace = DialogueTrace(video_id=video.video_id, question=question)
    h_low = _encode_low(video, backends, cfg, trace)
    segments = _ground(video, question, backends, cfg, h_low, trace)

    plan = sample_high(video, segments, cfg.sampling)
    trace.high_frames = list(plan.frame_indices)
    h_high = encode_plan(plan, video, backends.visual, backends.table, cfg.tokens_per_frame)
    mixed = mix(h_low, h_high, backends.mma)
    trace.token_counts["pi"] = mixed.n

    trace.q2_prompt = build_q2(question, segments, video.duration_s, cfg.proto)
    trace.answer = backends.language.generate([("h_low", h_low), ("pi", mixed)], trace.q2_prompt)
    return trace.answer, trace


def _run_item(item: QaItem, backends: Backends, cfg: InferenceConfig, mode: str,
              inject_gt: bool) -> DialogueTrace:
    if inject_gt:
        cfg = replace(cfg, injected_segments=tuple(item.gt_segments))
    try:
        if mode == "ground":
            _, trace = ground(item.video, item.question, backends, cfg)
        else:
            _, trace = answer(item.video, item.question, backends, cfg)
    except Exception as exc:  # isolate per-item failures
        log.error("item %s failed: %s", item.item_id, exc)
        trace = DialogueTrace(video_id=item.video.video_id, question=item.question)
        trace.error = f"{type(exc).__name__}: {exc}"
        trace.error_kind = "backend" if isinstance(exc, BackendError) else "item"
    trace.item_id = item.item_id
    return trace


def run_batch(
    items: Sequence[QaItem],
    backends: Backends,
    cfg: InferenceConfig,
    *,
    mode: str = "answer",
    inject_gt: bool = False,
    jobs: int = 1,
) -> list[tuple[DialogueTrace, str]]:
    """Runs every item independently; output order is input order."""
    if mode not in ("answer", "ground"):
        raise ValueError(f"unknown mode {mode!r}")
    workers = max(1, jobs)
    hint = getattr(backends.language, "max_concurrency", None)
    if hint is not None:
        workers = min(workers, hint)

    def run(item: QaItem) -> DialogueTrace:
        return _run_item(item, backends, cfg, mode, inject_gt)

    if workers == 1:
        traces = [run(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(run, items))
    return [(t, item.item_id) for t, item in zip(traces, items)]


def read_items(path: str | Path) -> list[QaItem]:
    """Dataset lines are either ``QaItem`` records or corpus QA records (one item per turn)."""
    items = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        if "turns" in doc:
            from .corpus import QaRecord

            items.extend(QaRecord.from_dict(doc).to_items())
        else:
            items.append(QaItem.from_dict(doc))
    return items
