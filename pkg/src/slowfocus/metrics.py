"""Grounding and captioning metrics, plus a judge interface for QA accuracy.

Text is normalised the same way for every caption metric: lowercase, every
non-alphanumeric character becomes a space, split on whitespace.

Conventions fixed here:

* BLEU-4: clipped n-gram precisions for n = 1..4, geometric mean, brevity
  penalty against the reference length closest to the candidate (shorter
  wins ties). For n >= 2 a zero match count is smoothed to ``1 / (total + 1)``.
* ROUGE-L: LCS F-measure with beta = 1.2, best reference wins.
* METEOR (reported as ``meteor-exact``): exact unigram matches only, greedy
  left-to-right alignment, ``Fmean = 10PR / (R + 9P)``, multiplied by
  ``1 - 0.5 * (chunks / matches) ** 3``; best reference wins.
* CIDEr: plain TF-IDF cosine over n = 1..4 with document frequencies from the
  reference sets, averaged over references and n, times 10. No length penalty.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from . import kernels
from .sampling import Segment

THRESHOLDS = (0.3, 0.5, 0.7)
TABLE_COLUMNS = ("mIoU", "R@0.3", "R@0.5", "R@0.7", "B", "M", "R", "C", "Acc", "Score")

_NON_WORD = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    return _NON_WORD.sub(" ", text.lower()).split()


# -- grounding ----------------------------------------------------------------


@dataclass(frozen=True)
class GroundingPrediction:
    item_id: str
    predicted: Segment
    reference: Segment


def iou(a: Segment, b: Segment) -> float:
    inter = min(a.end_s, b.end_s) - max(a.start_s, b.start_s)
    if inter <= 0:
        return 0.0
    union = max(a.end_s, b.end_s) - min(a.start_s, b.start_s)
    return inter / union


def grounding_report(
    preds: Sequence[GroundingPrediction | float],
) -> tuple[float, dict[float, float]]:
    """Mean IoU and recall at each threshold. Accepts predictions or raw IoUs."""
    if not preds:
        raise ValueError("grounding_report needs at least one prediction")
    ious = [p if isinstance(p, float) else iou(p.predicted, p.reference) for p in preds]
    n = len(ious)
    recall = {th: sum(v >= th for v in ious) / n for th in THRESHOLDS}
    return sum(ious) / n, recall


# -- captioning ---------------------------------------------------------------


@dataclass(frozen=True)
class CaptionPair:
    item_id: str
    candidate: str
    references: tuple[str, ...]

    def __post_init__(self):
        refs = (self.references,) if isinstance(self.references, str) else tuple(self.references)
        if not refs:
            raise ValueError("a caption pair needs at least one reference")
        object.__setattr__(self, "references", refs)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(pair: CaptionPair) -> float:
    cand = tokenize(pair.candidate)
    refs = [tokenize(r) for r in pair.references]
    c = len(cand)
    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, 5):
        counts = _ngrams(cand, n)
        max_ref: Counter = Counter()
        for r in refs:
            max_ref |= _ngrams(r, n)
        matched = sum(min(v, max_ref[g]) for g, v in counts.items())
        total = sum(counts.values())
        if matched == 0:
            if n == 1:
                return 0.0
            matched, total = 1, total + 1
        log_p += math.log(matched / total) / 4
    r = min((len(x) for x in refs), key=lambda length: (abs(length - c), length))
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_p)


def rouge_l(pair: CaptionPair, beta: float = 1.2) -> float:
    cand = tokenize(pair.candidate)
    best = 0.0
    for ref in pair.references:
        r = tokenize(ref)
        lcs = kernels.lcs_length(*_shared_ids(cand, r)) if cand and r else 0
        if lcs == 0:
            continue
        prec, rec = lcs / len(cand), lcs / len(r)
        best = max(best, (1 + beta**2) * prec * rec / (rec + beta**2 * prec))
    return best


def _shared_ids(a: Sequence[str], b: Sequence[str]) -> tuple[list[int], list[int]]:
    vocab: dict[str, int] = {}
    ids_a = [vocab.setdefault(t, len(vocab)) for t in a]
    ids_b = [vocab.setdefault(t, len(vocab)) for t in b]
    return ids_a, ids_b


def meteor_simplified(pair: CaptionPair) -> float:
    cand = tokenize(pair.candidate)
    best = 0.0
    for ref in pair.references:
        r = tokenize(ref)
        used = [False] * len(r)
        align: list[tuple[int, int]] = []
        for i, tok in enumerate(cand):
            for j, rt in enumerate(r):
                if not used[j] and rt == tok:
                    used[j] = True
                    align.append((i, j))
                    break
        m = len(align)
        if m == 0:
            continue
        chunks = 1 + sum(
            1 for (i0, j0), (i1, j1) in zip(align, align[1:]) if not (i1 == i0 + 1 and j1 == j0 + 1)
        )
        prec, rec = m / len(cand), m / len(r)
        fmean = 10 * prec * rec / (rec + 9 * prec)
        best = max(best, fmean * (1 - 0.5 * (chunks / m) ** 3))
    return best


def _tfidf(counts: Counter, df: Counter, n_docs: int) -> dict:
    return {g: tf * math.log(n_docs / max(1.0, df[g])) for g, tf in counts.items()}


def _cosine(a: dict, b: dict) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)


def cider_per_item(pairs: Sequence[CaptionPair]) -> list[float]:
    if not pairs:
        raise ValueError("CIDEr needs a non-empty corpus")
    n_docs = len(pairs)
    cands = [tokenize(p.candidate) for p in pairs]
    refs = [[tokenize(r) for r in p.references] for p in pairs]
    dfs = []
    for n in range(1, 5):
        df: Counter = Counter()
        for rs in refs:
            df.update({g for r in rs for g in _ngrams(r, n)})
        dfs.append(df)
    scores = []
    for cand, rs in zip(cands, refs):
        total = 0.0
        for n, df in enumerate(dfs, start=1):
            vc = _tfidf(_ngrams(cand, n), df, n_docs)
            total += sum(_cosine(vc, _tfidf(_ngrams(r, n), df, n_docs)) for r in rs) / len(rs)
        scores.append(10.0 * total / 4)
    return scores


def cider(pairs: Sequence[CaptionPair]) -> float:
    scores = cider_per_item(pairs)
    return sum(scores) / len(scores)


# -- judge --------------------------------------------------------------------


class JudgeBackend(Protocol):
    def judge(self, question: str, reference: str, candidate: str) -> tuple[bool, float]: ...


class MockJudge:
    """Correct iff the normalised texts are equal; score = 5 x unigram F1."""

    def judge(self, question: str, reference: str, candidate: str) -> tuple[bool, float]:
        ref, cand = tokenize(reference), tokenize(candidate)
        overlap = sum((Counter(ref) & Counter(cand)).values())
        if overlap == 0:
            return ref == cand, 0.0 if ref != cand else 5.0
        p, r = overlap / len(cand), overlap / len(ref)
        return ref == cand, 5.0 * 2 * p * r / (p + r)


@dataclass(frozen=True)
class JudgeItem:
    question: str
    reference: str
    candidate: str


@dataclass(frozen=True)
class JudgeResult:
    acc: float | None
    score: float | None
    judged: int
    errored: int


def judge_report(items: Iterable[JudgeItem], backend: JudgeBackend) -> JudgeResult:
    correct, scores, errored = 0, [], 0
    for it in items:
        try:
            ok, score = backend.judge(it.question, it.reference, it.candidate)
        except Exception:
            errored += 1
            continue
        correct += bool(ok)
        scores.append(float(score))
    if not scores:
        return JudgeResult(None, None, 0, errored)
    return JudgeResult(correct / len(scores), sum(scores) / len(scores), len(scores), errored)


# -- reports ------------------------------------------------------------------


@dataclass
class MetricReport:
    mIoU: float | None = None
    recall_at: dict[float, float] = field(default_factory=dict)
    bleu4: float | None = None
    meteor: float | None = None
    rouge_l: float | None = None
    cider: float | None = None
    acc: float | None = None
    score: float | None = None
    n_grounding: int = 0
    n_caption: int = 0
    n_judged: int = 0
    n_judge_errors: int = 0

    def columns(self) -> dict[str, float | None]:
        return {
            "mIoU": self.mIoU,
            "R@0.3": self.recall_at.get(0.3),
            "R@0.5": self.recall_at.get(0.5),
            "R@0.7": self.recall_at.get(0.7),
            "B": self.bleu4,
            "M": self.meteor,
            "R": self.rouge_l,
            "C": self.cider,
            "Acc": self.acc,
            "Score": self.score,
        }

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["recall_at"] = {str(k): v for k, v in self.recall_at.items()}
        doc["meteor_variant"] = "meteor-exact"
        return doc

    def table(self) -> str:
        cols = self.columns()
        width = 8
        header = "".join(f"{name:>{width}}" for name in TABLE_COLUMNS)
        row = "".join(
            f"{'-':>{width}}" if cols[name] is None else f"{cols[name]:>{width}.4f}"
            for name in TABLE_COLUMNS
        )
        return header + "\n" + row + "\n"


def evaluate(
    grounding: Sequence[GroundingPrediction | float] = (),
    captions: Sequence[CaptionPair] = (),
    judge_items: Sequence[JudgeItem] = (),
    judge: JudgeBackend | None = None,
) -> MetricReport:
    report = MetricReport()
    if grounding:
        report.mIoU, report.recall_at = grounding_report(grounding)
        report.n_grounding = len(grounding)
    if captions:
        n = len(captions)
        report.bleu4 = sum(bleu4(p) for p in captions) / n
        report.meteor = sum(meteor_simplified(p) for p in captions) / n
        report.rouge_l = sum(rouge_l(p) for p in captions) / n
        report.cider = cider(captions)
        report.n_caption = n
    if judge is not None and judge_items:
        res = judge_report(judge_items, judge)
        report.acc, report.score = res.acc, res.score
        report.n_judged, report.n_judge_errors = res.judged, res.errored
    return report


def _read_jsonl(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def evaluate_files(pred_path: str | Path, ref_path: str | Path,
                   judge: JudgeBackend | None = None) -> MetricReport:
    """Pairs prediction and reference lines by ``item_id``.

    Prediction lines: ``item_id, predicted_start_s, predicted_end_s, answer_text``.
    Reference lines: ``item_id, start_s, end_s`` and ``answer_text`` or
    ``references`` (list), optionally ``question``. A reference with a segment
    whose prediction has none counts as IoU 0.
    """
    preds = {str(d["item_id"]): d for d in _read_jsonl(pred_path)}
    grounding: list[GroundingPrediction | float] = []
    captions: list[CaptionPair] = []
    judge_items: list[JudgeItem] = []
    for ref in _read_jsonl(ref_path):
        item_id = str(ref["item_id"])
        pred = preds.get(item_id, {})
        if ref.get("start_s") is not None and ref.get("end_s") is not None:
            gt = Segment(float(ref["start_s"]), float(ref["end_s"]))
            ps, pe = pred.get("predicted_start_s"), pred.get("predicted_end_s")
            if ps is None or pe is None:
                grounding.append(0.0)
            else:
                grounding.append(GroundingPrediction(item_id, Segment(float(ps), float(pe)), gt))
        texts = ref.get("references") or ([ref["answer_text"]] if ref.get("answer_text") else [])
        if texts:
            cand = pred.get("answer_text") or ""
            captions.append(CaptionPair(item_id, cand, tuple(texts)))
            judge_items.append(JudgeItem(ref.get("question", ""), texts[0], cand))
    return evaluate(grounding, captions, judge_items, judge)
