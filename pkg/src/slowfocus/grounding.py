"""Text protocol for temporal segments and the two dialogue prompts.

A segment is written ``from SSS to EEE`` where both numbers are zero-padded
indices into ``N`` equal bins of the video (``000``-``999`` for ``N = 1000``).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .encoding import bin_start, temporal_bin
from .sampling import Segment

VIDEO_TOKEN = "<video>"
Q1_TEMPLATE = "Please provide the temporal segment help to reason the question: <question>"
Q2_TEMPLATE = "Additional temporal clues to focus on: <clues>\n<question>"
CLUE_SEPARATOR = ", "

_SEGMENT_RE = re.compile(r"from\s+(\d+)\s+to\s+(\d+)")


class GroundingParseError(ValueError):
    """The reply contained no usable ``from s to e`` segment."""


@dataclass(frozen=True)
class GroundingProtocol:
    n_bins: int = 1000

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")

    @property
    def digits(self) -> int:
        return len(str(self.n_bins - 1))

    def to_bin(self, t_s: float, duration_s: float) -> int:
        return temporal_bin(t_s, duration_s, self.n_bins)

    def to_seconds(self, bin_index: int, duration_s: float) -> float:
        return bin_start(bin_index, duration_s, self.n_bins)


def format_segment(seg: Segment, duration_s: float, proto: GroundingProtocol) -> str:
    seg.check_within(duration_s)
    start = proto.to_bin(seg.start_s, duration_s)
    end = proto.to_bin(seg.end_s, duration_s)
    # keep the text non-degenerate: sub-bin segments and the clamped last bin
    if end <= start:
        if start < proto.n_bins - 1:
            end = start + 1
        else:
            start = end - 1
    w = proto.digits
    return f"from {start:0{w}d} to {end:0{w}d}"


def segment_from_bins(start_bin: int, end_bin: int, duration_s: float,
                      proto: GroundingProtocol) -> Segment:
    return Segment(proto.to_seconds(start_bin, duration_s), proto.to_seconds(end_bin, duration_s))


def parse_segments(reply: str, duration_s: float, proto: GroundingProtocol) -> list[Segment]:
    """All ``from s to e`` matches as seconds, sorted, overlaps merged.

    Matches with ``s >= e`` or bins past ``N - 1`` are dropped.
    """
    spans = []
    for m in _SEGMENT_RE.finditer(reply):
        s, e = int(m.group(1)), int(m.group(2))
        if s < e <= proto.n_bins - 1:
            spans.append((s, e))
    if not spans:
        raise GroundingParseError(f"no temporal segment in reply: {reply!r}")
    spans.sort()
    merged = [list(spans[0])]
    for s, e in spans[1:]:
        if s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [segment_from_bins(s, e, duration_s, proto) for s, e in merged]


def build_q1(question: str) -> str:
    if not question:
        raise ValueError("question must be non-empty")
    return f"{VIDEO_TOKEN}\n" + Q1_TEMPLATE.replace("<question>", question, 1)


def build_q2(question: str, segments: Sequence[Segment], duration_s: float,
             proto: GroundingProtocol) -> str:
    if not question:
        raise ValueError("question must be non-empty")
    if not segments:
        raise ValueError("at least one segment is required")
    clues = CLUE_SEPARATOR.join(format_segment(s, duration_s, proto) for s in segments)
    # clues first: a question containing "<clues>" must survive verbatim
    return f"{VIDEO_TOKEN}\n" + Q2_TEMPLATE.replace("<clues>", clues, 1).replace(
        "<question>", question, 1
    )
