"""Built-in consistency checks run by ``slowfocus selftest``.

Each check returns ``(name, passed, detail)``. Metric values are compared with
a frozen fixture file (``data/selftest.json`` unless another path is given).
"""
from __future__ import annotations

import json
import random
from pathlib import Path

import numpy as np

from . import kernels
from .grounding import GroundingProtocol, format_segment, parse_segments
from .metrics import CaptionPair, bleu4, cider, meteor_simplified, rouge_l
from .mma import MmaParams, mma_jvp, mma_forward
from .numerics import finite_diff_jvp
from .sampling import SamplingConfig, Segment, VideoTimeline, high_interval, sample_high

DEFAULT_FIXTURES = Path(__file__).parent / "data" / "selftest.json"

Check = tuple[str, bool, str]


class FixtureError(ValueError):
    pass


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def check_jvp(seeds: int = 100, h: float = 1e-6, tol: float = 1e-4) -> Check:
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        n_l, n_h, d = 5, 3, 8
        params = MmaParams.init(d, seed)
        low, high = rng.normal(size=(n_l, d)), rng.normal(size=(n_h, d))
        t_low, t_high = rng.normal(size=(n_l, d)), rng.normal(size=(n_h, d))
        analytic = mma_jvp(low, high, params, t_low, t_high)
        x = np.vstack([low, high])
        v = np.vstack([t_low, t_high])
        numeric = finite_diff_jvp(lambda z: mma_forward(z[:n_l], z[n_l:], params), x, v, h)
        worst = max(worst, rel_err(analytic, numeric))
    return "mma jvp vs finite differences", worst <= tol, f"max rel-err {worst:.2e} (tol {tol:g})"


def check_round_trip(n: int = 10_000, seed: int = 0) -> Check:
    proto = GroundingProtocol()
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(n):
        dur = rng.uniform(1.0, 3600.0)
        width = dur / proto.n_bins
        a = rng.uniform(0.0, dur - width)
        b = rng.uniform(a + width, dur)
        (got,) = parse_segments(format_segment(Segment(a, b), dur, proto), dur, proto)
        worst = max(worst, abs(got.start_s - a) / width, abs(got.end_s - b) / width)
    return "segment protocol round-trip", worst <= 1.0 + 1e-9, f"max error {worst:.4f} bins"


def check_sampling(n: int = 2_000, seed: int = 0) -> Check:
    """Stride formula vs the smallest stride that fits the frame budget."""
    rng = random.Random(seed)
    bad = 0
    for _ in range(n):
        frames = rng.randint(1, 600)
        nh = rng.randint(1, 64)
        tl = VideoTimeline(frames, 1.0)
        cfg = SamplingConfig(high_target_count=nh)
        seg = Segment(0.0, float(frames))
        brute = next(s for s in range(1, frames + 1) if len(range(0, frames, s)) <= nh)
        count = len(sample_high(tl, [seg], cfg))
        if high_interval(seg, tl, cfg) != brute or count > nh:
            bad += 1
        elif frames % nh == 0 and count != min(frames, nh):
            bad += 1
    return "high-frequency sampling law", bad == 0, f"{bad} violations in {n} cases"


def check_kernel_parity(seed: int = 0) -> Check:
    if not kernels.compiled_available():
        return "compiled/fallback kernel parity", True, "compiled extension not built; skipped"
    c, p = kernels.get_impl("cython"), kernels.get_impl("python")
    rng = np.random.default_rng(seed)
    q, k, v = rng.normal(size=(70, 8)), rng.normal(size=(90, 8)), rng.normal(size=(90, 8))
    worst = max(
        float(abs(c.attention(q, k, v, 2.0) - p.attention(q, k, v, 2.0)).max()),
        float(abs(c.matmul(q, k.T.copy()) - p.matmul(q, k.T.copy())).max()),
        float(abs(c.row_softmax(q, 1.5) - p.row_softmax(q, 1.5)).max()),
    )
    return "compiled/fallback kernel parity", worst <= 1e-12, f"max abs diff {worst:.1e}"


def load_fixtures(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
        cases = doc["caption_cases"]
        for case in cases:
            case["candidate"], case["references"], case["expected"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FixtureError(f"unreadable selftest fixtures {path}: {exc}") from None
    return doc


def check_metric_fixtures(doc: dict, tol: float = 1e-9) -> list[Check]:
    pairs = []
    results = []
    funcs = {"bleu4": bleu4, "rouge_l": rouge_l, "meteor_exact": meteor_simplified}
    for i, case in enumerate(doc["caption_cases"]):
        pair = CaptionPair(str(i), case["candidate"], tuple(case["references"]))
        pairs.append(pair)
        for name, fn in funcs.items():
            if name in case["expected"]:
                got, want = fn(pair), float(case["expected"][name])
                results.append(
                    (f"{name} fixture {i}", abs(got - want) <= tol, f"got {got:.12f} want {want:.12f}")
                )
    if "corpus_cider" in doc:
        got, want = cider(pairs), float(doc["corpus_cider"])
        results.append(("cider fixture corpus", abs(got - want) <= tol, f"got {got:.12f} want {want:.12f}"))
    return results


def run_all(fixtures: str | Path = DEFAULT_FIXTURES, seeds: int = 100) -> list[Check]:
    checks = [check_jvp(seeds), check_round_trip(), check_sampling(), check_kernel_parity()]
    checks.extend(check_metric_fixtures(load_fixtures(fixtures)))
    return checks
