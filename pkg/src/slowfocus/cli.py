"""``slowfocus`` command line.

Exit codes: 0 success, 1 check/metric failure, 2 usage or I/O error,
3 backend failure on at least one item.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, kernels
from .corpus import (
    Annotation,
    ClipBoundarySet,
    FeatureStream,
    MockCaptioner,
    QaRecord,
    corpus_stats,
    detect_boundaries,
    fill_captions,
    gen_tasks,
    read_jsonl,
    stitch,
    write_jsonl,
)
from .encoding import FileBackend, MockEncoder, TemporalTokenTable
from .grounding import GroundingProtocol
from .metrics import MockJudge, evaluate_files
from .mma import MmaParams
from .numerics import read_matrix
from .orchestrator import (
    Backends,
    InferenceConfig,
    MockBackend,
    RemoteBackend,
    oracle_rules,
    read_items,
    run_batch,
)
from .sampling import SamplingConfig

log = logging.getLogger("slowfocus")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _need_file(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {p} does not exist")
    return p


def _inference_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True, help="JSONL of QA items or corpus QA records")
    p.add_argument("--features", help="directory of <video_id>/<frame>.mat features (default: mock encoder)")
    p.add_argument("--backend", choices=("mock", "remote"), default="mock")
    p.add_argument("--fixtures", help="mock reply table (JSON); default answers with each item's ground truth")
    p.add_argument("--endpoint", help="URL of the remote language backend")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--nh", type=int, default=20, help="dense frames per grounded segment")
    p.add_argument("--nbins", type=int, default=1000, help="temporal bins")
    p.add_argument("--tokens-per-frame", type=int, default=64)
    p.add_argument("--low-interval", type=int, default=None, help="frames between low-frequency samples (default: fps)")
    p.add_argument("--feature-dim", type=int, default=16, help="mock encoder channels")
    p.add_argument("--patch-tokens", type=int, default=256, help="mock encoder tokens per frame")
    p.add_argument("--inject-gt", action="store_true", help="skip round 1 and use ground-truth segments")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)


def _setup(args):
    items = read_items(_need_file(args.dataset, "--dataset"))
    cfg = InferenceConfig(
        SamplingConfig(args.low_interval, args.nh),
        GroundingProtocol(args.nbins),
        args.tokens_per_frame,
    )
    if args.features:
        root = Path(args.features)
        if not root.is_dir():
            raise UsageError(f"--features {root} is not a directory")
        visual = FileBackend(root, args.tokens_per_frame)
        if not items:
            raise UsageError("dataset is empty")
        dim = visual.encode(items[0].video.video_id, 0).tokens.shape[1]
    else:
        visual = MockEncoder(args.seed, args.patch_tokens, args.feature_dim, args.tokens_per_frame)
        dim = args.feature_dim

    if args.backend == "remote":
        if not args.endpoint:
            raise UsageError("--endpoint is required with --backend remote")
        language = RemoteBackend(args.endpoint, args.timeout, args.retries)
    elif args.fixtures:
        language = MockBackend.from_file(_need_file(args.fixtures, "--fixtures"))
    else:
        language = MockBackend(oracle_rules(items, cfg.proto))

    backends = Backends(
        visual,
        language,
        TemporalTokenTable.random(args.nbins, dim, args.seed),
        MmaParams.init(dim, args.seed + 1),
    )
    return items, backends, cfg


def _span(trace) -> tuple[float | None, float | None]:
    if not trace.parsed_segments:
        return None, None
    return min(s for s, _ in trace.parsed_segments), max(e for _, e in trace.parsed_segments)


def _prediction(trace) -> dict:
    start, end = _span(trace)
    return {
        "item_id": trace.item_id,
        "predicted_start_s": start,
        "predicted_end_s": end,
        "segments": trace.parsed_segments,
        "fallback_used": trace.fallback_used,
        "answer_text": trace.answer,
        "error": trace.error,
    }


def _finish(results, out: Path) -> int:
    errors = [t for t, _ in results if t.error]
    if errors:
        err_path = out.with_name(out.name + ".errors.jsonl")
        write_jsonl(err_path, ({"item_id": t.item_id, "error": t.error} for t in errors))
        for t in errors:
            log.error("item %s: %s", t.item_id, t.error)
    if any(t.error_kind == "backend" for t in errors):
        return EXIT_BACKEND
    return EXIT_FAIL if errors else EXIT_OK


def cmd_ground(args) -> int:
    items, backends, cfg = _setup(args)
    results = run_batch(items, backends, cfg, mode="ground", inject_gt=args.inject_gt, jobs=args.jobs)
    out = Path(args.out)
    write_jsonl(out, (_prediction(t) for t, _ in results))
    return _finish(results, out)


def cmd_answer(args) -> int:
    items, backends, cfg = _setup(args)
    results = run_batch(items, backends, cfg, mode="answer", inject_gt=args.inject_gt, jobs=args.jobs)
    out = Path(args.out)
    out.write_text("".join(t.to_json() + "\n" for t, _ in results))
    if args.predictions:
        write_jsonl(args.predictions, (_prediction(t) for t, _ in results))
    return _finish(results, out)


def cmd_eval(args) -> int:
    report = evaluate_files(
        _need_file(args.predictions, "--predictions"),
        _need_file(args.references, "--references"),
        MockJudge() if args.judge == "mock" else None,
    )
    sys.stdout.write(report.table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if report.n_grounding == 0 and report.n_caption == 0:
        log.error("no prediction could be paired with a reference")
        return EXIT_FAIL
    return EXIT_OK


def _stream(args) -> FeatureStream:
    path = _need_file(args.features, "--features")
    return FeatureStream(args.video_id or path.stem, read_matrix(path), args.fps)


def cmd_corpus_split(args) -> int:
    stream = _stream(args)
    bounds = detect_boundaries(stream, args.cut_threshold)
    if args.stitch:
        bounds = stitch(bounds, stream, args.min_clip, args.merge_distance)
    Path(args.out).write_text(json.dumps(bounds.to_dict(), sort_keys=True) + "\n")
    return EXIT_OK


def cmd_corpus_stitch(args) -> int:
    stream = _stream(args)
    bounds = ClipBoundarySet.from_dict(json.loads(_need_file(args.boundaries, "--boundaries").read_text()))
    stitched = stitch(bounds, stream, args.min_clip, args.merge_distance)
    Path(args.out).write_text(json.dumps(stitched.to_dict(), sort_keys=True) + "\n")
    return EXIT_OK


def cmd_corpus_gen(args) -> int:
    proto = GroundingProtocol(args.nbins)
    captioner = MockCaptioner()
    records = []
    for doc in read_jsonl(_need_file(args.annotations, "--annotations")):
        ann = fill_captions(Annotation.from_dict(doc), captioner)
        records.extend(gen_tasks(ann, proto, args.seed))
    write_jsonl(args.out, (r.to_dict() for r in records))
    return EXIT_OK


def cmd_corpus_stats(args) -> int:
    records = []
    for path in args.records:
        records.extend(QaRecord.from_dict(d) for d in read_jsonl(_need_file(path, "--records")))
    text = json.dumps(corpus_stats(records).to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_corpus_synth(args) -> int:
    from .synthetic import reference_records, synth_items

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    proto = GroundingProtocol(args.nbins)
    items = synth_items(args.n, args.seed, proto)
    write_jsonl(out / "dataset.jsonl", (it.to_dict() for it in items))
    write_jsonl(out / "references.jsonl", reference_records(items))
    fixtures = MockBackend(oracle_rules(items, proto)).to_dict()
    (out / "fixtures.json").write_text(json.dumps(fixtures, indent=2) + "\n")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import DEFAULT_FIXTURES, FixtureError, run_all

    print(f"kernel backend: {kernels.BACKEND}")
    try:
        checks = run_all(args.fixtures or DEFAULT_FIXTURES, args.seeds)
    except FixtureError as exc:
        print(f"FAIL  fixtures: {exc}")
        return EXIT_USAGE
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    failed = sum(not ok for _, ok, _ in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slowfocus", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground", help="round 1 only: predict segments per item")
    _inference_args(p)
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("answer", help="full two-round inference, writes traces")
    _inference_args(p)
    p.add_argument("--predictions", help="also write a predictions file for `eval`")
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("--predictions", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--judge", choices=("none", "mock"), default="none")
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_eval)

    corpus = sub.add_parser("corpus", help="benchmark construction tools")
    csub = corpus.add_subparsers(dest="corpus_command", required=True)

    def stream_args(q):
        q.add_argument("--features", required=True, help="matrix text file, one row per frame")
        q.add_argument("--fps", type=float, required=True)
        q.add_argument("--video-id")
        q.add_argument("--min-clip", type=float, default=5.0)
        q.add_argument("--merge-distance", type=float, default=0.1)
        q.add_argument("--out", required=True)

    q = csub.add_parser("split", help="detect shot boundaries")
    stream_args(q)
    q.add_argument("--cut-threshold", type=float, default=0.5)
    q.add_argument("--stitch", action="store_true", help="also run the stitching pass")
    q.set_defaults(func=cmd_corpus_split)

    q = csub.add_parser("stitch", help="merge short or similar clips")
    stream_args(q)
    q.add_argument("--boundaries", required=True)
    q.set_defaults(func=cmd_corpus_stitch)

    q = csub.add_parser("gen", help="generate QA records from annotations")
    q.add_argument("--annotations", required=True)
    q.add_argument("--nbins", type=int, default=1000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_corpus_gen)

    q = csub.add_parser("stats", help="task and clip-count summary")
    q.add_argument("--records", nargs="+", required=True)
    q.add_argument("--out")
    q.set_defaults(func=cmd_corpus_stats)

    q = csub.add_parser("synth", help="write a synthetic dataset, references and oracle fixtures")
    q.add_argument("--n", type=int, default=10)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--nbins", type=int, default=1000)
    q.add_argument("--out-dir", required=True)
    q.set_defaults(func=cmd_corpus_synth)

    p = sub.add_parser("selftest", help="gradient, round-trip and metric oracle checks")
    p.add_argument("--fixtures", help="frozen metric fixture file")
    p.add_argument("--seeds", type=int, default=100)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
