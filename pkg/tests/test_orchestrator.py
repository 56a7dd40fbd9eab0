import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from slowfocus.encoding import MockEncoder, TemporalTokenTable, TokenMatrix
from slowfocus.grounding import GroundingProtocol
from slowfocus.mma import MmaParams
from slowfocus.orchestrator import (
    BackendError,
    Backends,
    InferenceConfig,
    MockBackend,
    QaItem,
    RemoteBackend,
    answer,
    decode_block,
    decode_reply,
    encode_block,
    encode_request,
    ground,
    oracle_rules,
    read_items,
    run_batch,
)
from slowfocus.sampling import SamplingConfig, Segment, VideoTimeline, sample_high, sample_low

VIDEO = VideoTimeline(100, 1.0, "v100")
DIM = 4


def make(language, tpf=2):
    backends = Backends(
        MockEncoder(seed=0, patch_tokens=8, dim=DIM),
        language,
        TemporalTokenTable.random(1000, DIM, 0),
        MmaParams.init(DIM, 1),
    )
    return backends, InferenceConfig(tokens_per_frame=tpf)


class Boom:
    def generate(self, blocks, prompt):
        raise BackendError("down")


def test_ground_parses_reply():
    backends, cfg = make(MockBackend([(r"reason the question", "from 250 to 500")]))
    segs, trace = ground(VIDEO, "When?", backends, cfg)
    assert segs == [Segment(25.0, 50.0)]
    assert trace.q1_reply == "from 250 to 500" and not trace.fallback_used


def test_ground_falls_back_to_whole_video():
    backends, cfg = make(MockBackend(default="no idea"))
    segs, trace = ground(VIDEO, "When?", backends, cfg)
    assert segs == [Segment(0.0, 100.0)] and trace.fallback_used


def test_injection_skips_round_one():
    lang = MockBackend(default="x")
    backends, cfg = make(lang)
    cfg = InferenceConfig(tokens_per_frame=2, injected_segments=(Segment(10.0, 30.0),))
    segs, trace = ground(VIDEO, "When?", backends, cfg)
    assert segs == [Segment(10.0, 30.0)] and trace.injected
    assert lang.call_count == 0 and trace.q1_prompt is None


def test_answer_trace_and_token_counts():
    lang = MockBackend([(r"reason the question", "from 250 to 500"), (r"Additional temporal", "a dog")])
    backends, cfg = make(lang)
    text, trace = answer(VIDEO, "What runs?", backends, cfg)
    assert text == "a dog"
    assert trace.q1_prompt.endswith("What runs?") and trace.q2_prompt.endswith("\nWhat runs?")
    assert "from 250 to 500" in trace.q2_prompt
    low = sample_low(VIDEO, SamplingConfig())
    high = sample_high(VIDEO, [Segment(25.0, 50.0)], SamplingConfig())
    assert trace.low_frames == list(low.frame_indices)
    assert trace.high_frames == list(high.frame_indices)
    assert trace.token_counts == {"h_low": len(low) * 2, "pi": len(high) * 2}
    assert [b for b, _ in lang.calls[1]["blocks"]] == ["h_low", "pi"]
    assert lang.calls[1]["blocks"][1][1] == len(high) * 2


def test_full_injection_high_covers_low():
    video = VideoTimeline(30, 1.0, "short")
    backends, _ = make(MockBackend(default="ok"))
    cfg = InferenceConfig(SamplingConfig(high_target_count=40), tokens_per_frame=2,
                          injected_segments=(Segment(0.0, 30.0),))
    _, trace = answer(video, "q", backends, cfg)
    assert set(trace.low_frames) <= set(trace.high_frames)


def test_fallback_path_still_answers():
    backends, cfg = make(MockBackend([(r"Additional", "fine")], default="???"))
    text, trace = answer(VIDEO, "q", backends, cfg)
    assert text == "fine" and trace.fallback_used
    assert trace.high_frames == list(range(0, 100, 5))


def _items(n=3):
    return [QaItem(f"i{k}", VIDEO, f"question {k}?", (Segment(10.0 * k, 10.0 * k + 20),), f"ans {k}")
            for k in range(n)]


def test_run_batch_empty_and_order():
    backends, cfg = make(MockBackend())
    assert run_batch([], backends, cfg) == []
    items = _items()
    backends, cfg = make(MockBackend(oracle_rules(items, GroundingProtocol())))
    out = run_batch(items, backends, cfg)
    assert [i for _, i in out] == ["i0", "i1", "i2"]
    assert [t.answer for t, _ in out] == ["ans 0", "ans 1", "ans 2"]
    again = run_batch(items, backends, cfg)
    assert [t.to_json() for t, _ in out] == [t.to_json() for t, _ in again]


def test_run_batch_isolates_failures():
    items = _items()

    class Flaky(MockBackend):
        def generate(self, blocks, prompt):
            if "question 1?" in prompt:
                raise BackendError("boom")
            return super().generate(blocks, prompt)

    backends, cfg = make(Flaky(oracle_rules(items, GroundingProtocol())))
    out = run_batch(items, backends, cfg)
    assert [t.error is None for t, _ in out] == [True, False, True]
    assert out[1][0].error_kind == "backend"


def test_run_batch_threads_match_serial():
    items = _items(6)
    backends, cfg = make(MockBackend(oracle_rules(items, GroundingProtocol())))
    serial = [t.to_json() for t, _ in run_batch(items, backends, cfg)]
    threaded = [t.to_json() for t, _ in run_batch(items, backends, cfg, jobs=4)]
    assert serial == threaded


def test_run_batch_ground_mode_and_injection():
    items = _items(2)
    backends, cfg = make(MockBackend())
    out = run_batch(items, backends, cfg, mode="ground", inject_gt=True)
    assert [t.parsed_segments for t, _ in out] == [[[0.0, 20.0]], [[10.0, 30.0]]]
    assert all(t.answer is None for t, _ in out)
    with pytest.raises(ValueError):
        run_batch(items, backends, cfg, mode="bogus")


def test_mock_backend_round_trip(tmp_path):
    mb = MockBackend([("a+", "x")], default="d")
    (tmp_path / "f.json").write_text(json.dumps(mb.to_dict()))
    back = MockBackend.from_file(tmp_path / "f.json")
    assert back.generate([], "caaat") == "x" and back.generate([], "b") == "d"


def test_wire_format():
    m = TokenMatrix(np.array([[0.5, -1.25], [3.0, 4.0]]), (1.0, 2.0), "low")
    doc = encode_block("h_low", m)
    label, back = decode_block(json.loads(json.dumps(doc)))
    assert label == "h_low" and np.array_equal(back.tokens, m.tokens)
    assert back.timestamps_s == (1.0, 2.0)
    assert encode_request([("h_low", m)], "p")["prompt"] == "p"
    assert decode_reply({"text": "hi"}) == "hi"
    with pytest.raises(BackendError):
        decode_reply({"txt": "hi"})


class _Handler(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Handler.seen.append(body)
        reply = json.dumps({"text": f"{len(body['blocks'])} blocks"}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(reply)))
        self.end_headers()
        self.wfile.write(reply)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    httpd = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{httpd.server_address[1]}/"
    httpd.shutdown()


def test_remote_backend(server):
    m = TokenMatrix(np.ones((2, 3)), (0.0, 0.0), "low")
    rb = RemoteBackend(server, timeout_s=5)
    assert rb.generate([("h_low", m), ("pi", m)], "hello") == "2 blocks"
    assert _Handler.seen[-1]["prompt"] == "hello"


def test_remote_backend_unreachable():
    rb = RemoteBackend("http://127.0.0.1:9/", timeout_s=0.5, retries=1)
    with pytest.raises(BackendError):
        rb.generate([], "x")


def test_read_items(tmp_path):
    items = _items(2)
    path = tmp_path / "d.jsonl"
    path.write_text("".join(json.dumps(i.to_dict()) + "\n" for i in items))
    assert read_items(path) == items
    rec = {"record_id": "r", "video_id": "v", "duration_s": 10.0, "fps": 1.0, "task": "captioning",
           "subtype": "ar", "turns": [{"question": "a?", "answer": "b"}, {"question": "c?", "answer": "d"}],
           "gt_segments": [[0.0, 5.0]], "clip_count": 1}
    path.write_text(json.dumps(rec) + "\n")
    got = read_items(path)
    assert [i.item_id for i in got] == ["r:0", "r:1"] and got[1].reference_answer == "d"
