"""Compiled vs fallback kernels, per kernel and end to end.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--items 50] [--json out.json]

Per-kernel timings call both implementations in-process on identical inputs.
The end-to-end timing runs the oracle pipeline in a child process per backend
(the backend is fixed at import, via SLOWFOCUS_PURE_PYTHON).
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from slowfocus import kernels

PIPELINE = """
import time
from slowfocus import kernels
from slowfocus.encoding import MockEncoder, TemporalTokenTable
from slowfocus.grounding import GroundingProtocol
from slowfocus.mma import MmaParams
from slowfocus.orchestrator import Backends, InferenceConfig, MockBackend, oracle_rules, run_batch
from slowfocus.synthetic import synth_items

items = synth_items({n}, 0)
b = Backends(MockEncoder(0, 256, 16, 64), MockBackend(oracle_rules(items, GroundingProtocol())),
             TemporalTokenTable.random(1000, 16, 0), MmaParams.init(16, 1))
best = float("inf")
for _ in range({repeat}):
    t = time.perf_counter()
    run_batch(items, b, InferenceConfig())
    best = min(best, time.perf_counter() - t)
print(kernels.BACKEND, best)
"""


def cases(rng):
    q, k = rng.normal(size=(1088, 16)), rng.normal(size=(2944, 16))
    big = rng.normal(size=(256, 16))
    feats = rng.normal(size=(5000, 64))
    a, b = rng.normal(size=(200, 200)), rng.normal(size=(200, 200))
    s1 = rng.integers(0, 30, size=400).astype(np.int64)
    s2 = rng.integers(0, 30, size=400).astype(np.int64)
    return {
        "attention 1088x2944x16": lambda m: m.attention(q, k, k, 4.0),
        "matmul 200x200x200": lambda m: m.matmul(a, b),
        "row_softmax 1088x2944": (lambda m, s=q @ k.T: m.row_softmax(s, 4.0)),
        "block_mean 256->64": lambda m: m.block_mean(big, 64),
        "cosine distance 5000x64": lambda m: m.adjacent_cosine_distance(feats),
        "lcs 400x400": lambda m: m.lcs_length(s1, s2) if m is not kernels.get_impl("python")
        else m.lcs_length(list(s1), list(s2)),
    }


def bench(fn, repeat: int) -> float:
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def pipeline(backend: str, n: int, repeat: int) -> float:
    env = dict(os.environ)
    env.pop("SLOWFOCUS_PURE_PYTHON", None)
    if backend == "python":
        env["SLOWFOCUS_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", PIPELINE.format(n=n, repeat=repeat)],
                         env=env, capture_output=True, text=True, check=True).stdout.split()
    if out[0] != backend:
        raise RuntimeError(f"asked for {backend}, child used {out[0]}")
    return float(out[1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--items", type=int, default=50)
    ap.add_argument("--json")
    args = ap.parse_args(argv)

    if not kernels.compiled_available():
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    impls = {name: kernels.get_impl(name) for name in ("cython", "python")}
    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        t = {k: bench(lambda m=m: fn(m), args.repeat) for k, m in impls.items()}
        rows.append({"case": name, **t, "speedup": t["python"] / t["cython"]})
    t = {k: pipeline(k, args.items, max(1, args.repeat // 2)) for k in impls}
    rows.append({"case": f"pipeline, {args.items} items", **t, "speedup": t["python"] / t["cython"]})

    print(f"{'case':<28}{'cython':>12}{'python':>12}{'speedup':>10}")
    for r in rows:
        print(f"{r['case']:<28}{r['cython'] * 1e3:>10.3f}ms{r['python'] * 1e3:>10.3f}ms{r['speedup']:>9.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
