from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from avts.clustering import (
    JOINT_CLUSTERING,
    PAIRWISE_SIMILARITY,
    TOPIC_DETECTION,
    HTTPBackend,
    LLMBackend,
    LLMBackendError,
    MockBackend,
    SimilarityMatrix,
    ahc,
    build_prompt,
    cluster_conversations,
    cluster_session,
    detect_topic,
    fallback_assign,
    joint_cluster,
    make_backend,
    overlap_ratio,
    pairwise_similarity,
    parse_reply,
    similarity_matrix,
)
from avts.datamodel import sample_cocktail_session
from avts.evalmetrics import pairwise_f1
from oracles import canonical_partition, threshold_partitions

# --------------------------------------------------------------------- overlap


def test_overlap_examples():
    assert overlap_ratio([(0, 10)], [(5, 15)]) == pytest.approx(5 / 15)
    assert overlap_ratio([(0, 10)], [(10, 20)]) == 0.0
    assert overlap_ratio([(0, 10)], [(0, 10)]) == 1.0
    assert overlap_ratio([], []) == 0.0
    # overlapping intervals inside one timeline are merged first
    assert overlap_ratio([(0, 6), (4, 10)], [(5, 15)]) == pytest.approx(5 / 15)


interval_lists = st.lists(
    st.tuples(st.integers(0, 50), st.integers(1, 10)).map(lambda t: (float(t[0]), float(t[0] + t[1]))),
    max_size=6,
)


@settings(max_examples=100, deadline=None)
@given(interval_lists, interval_lists)
def test_overlap_properties(p, q):
    r = overlap_ratio(p, q)
    assert 0.0 <= r <= 1.0
    assert r == overlap_ratio(q, p)
    # frame-grid oracle on a 0.5 s grid
    grid = np.arange(0, 61, 0.5) + 0.25
    a = np.zeros_like(grid, dtype=bool)
    b = np.zeros_like(grid, dtype=bool)
    for s, e in p:
        a |= (grid > s) & (grid < e)
    for s, e in q:
        b |= (grid > s) & (grid < e)
    union = (a | b).sum()
    assert r == pytest.approx((a & b).sum() / union if union else 0.0)


# --------------------------------------------------------------------- AHC


def test_ahc_examples():
    d = np.array([[0, 0.1, 0.9], [0.1, 0, 0.8], [0.9, 0.8, 0]])
    assert ahc(d, 0.5) == [[0, 1], [2]]
    assert ahc(d, 0.85) == [[0, 1, 2]]  # average of 0.9 and 0.8
    assert ahc(d, 0.0) == [[0], [1], [2]]
    assert ahc(np.zeros((0, 0)), 0.5) == []
    assert ahc(np.zeros((1, 1)), 0.5) == [[0]]


def test_ahc_tie_break_is_lexicographic():
    # all pairs at 0.2, merging any pair pushes the rest to 0.9
    d = np.full((3, 3), 0.2)
    np.fill_diagonal(d, 0)
    assert ahc(d, 0.2) == [[0, 1, 2]]
    d2 = np.array([[0, 0.2, 0.9, 0.9], [0.2, 0, 0.9, 0.9], [0.9, 0.9, 0, 0.2], [0.9, 0.9, 0.2, 0]])
    assert ahc(d2, 0.5) == [[0, 1], [2, 3]]
    d3 = np.array([[0, 0.3, 0.3], [0.3, 0, 1.0], [0.3, 1.0, 0]])
    assert ahc(d3, 0.3) == [[0, 1], [2]]  # (0,1) beats (0,2); then avg(0.3, 1.0) > 0.3


def test_ahc_cannot_link():
    d = np.array([[0, 0.1, 0.1], [0.1, 0, 0.1], [0.1, 0.1, 0]])
    assert ahc(d, 0.5, cannot_link=[0, 1]) == [[0, 2], [1]]


def test_ahc_input_errors():
    with pytest.raises(ValueError):
        ahc(np.array([[0, np.nan], [np.nan, 0]]), 0.5)
    with pytest.raises(ValueError):
        ahc(np.array([[0, 0.1], [0.2, 0]]), 0.5)
    with pytest.raises(ValueError):
        ahc(np.ones((2, 2)), 0.5)
    with pytest.raises(ValueError):
        ahc(np.zeros((2, 3)), 0.5)


def random_distance(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, n))
    d = (x + x.T) / 2
    np.fill_diagonal(d, 0)
    return d


@pytest.mark.parametrize("seed", range(30))
def test_ahc_matches_scipy_average_linkage(seed):
    n = 2 + seed % 9
    d = random_distance(n, seed)
    t = 0.3 + 0.02 * seed % 0.4
    labels = fcluster(linkage(squareform(d, checks=False), "average"), t=t, criterion="distance")
    assert canonical_partition(ahc(d, t)) == canonical_partition(dict(enumerate(labels)))


@pytest.mark.parametrize("seed", range(15))
def test_ahc_output_satisfies_block_oracle(seed):
    # planted blocks: near within, far across
    rng = np.random.default_rng(seed)
    sizes = rng.integers(1, 3, size=int(rng.integers(1, 4)))
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    d = np.where(labels[:, None] == labels[None, :], rng.uniform(0, 0.2, (n, n)), rng.uniform(0.6, 1, (n, n)))
    d = np.triu(d, 1) + np.triu(d, 1).T
    got = ahc(d, 0.3)
    assert sorted(got) in threshold_partitions(d, 0.3)
    assert canonical_partition(got) == canonical_partition(dict(enumerate(labels)))


@pytest.mark.parametrize("seed", range(10))
def test_ahc_permutation_invariance(seed):
    d = random_distance(7, 100 + seed)
    perm = np.random.default_rng(seed).permutation(7)
    base = canonical_partition(ahc(d, 0.4))
    permuted = ahc(d[np.ix_(perm, perm)], 0.4)
    assert canonical_partition([[int(perm[i]) for i in c] for c in permuted]) == base


# --------------------------------------------------------------------- LLM layer


def test_mock_topic_detection_rule():
    mock = MockBackend()
    assert not detect_topic("yeah yeah right okay", mock)
    assert not detect_topic("the engine and the wheels and the brakes", mock)  # 3 content types
    assert detect_topic("engine wheels brakes garage mechanic", mock)
    assert not detect_topic("   ", mock)


def test_mock_similarity_is_jaccard():
    mock = MockBackend()
    assert pairwise_similarity("apple banana cherry", "banana cherry date", mock) == pytest.approx(2 / 4)
    assert pairwise_similarity("apple", "the date", mock) == 0.0
    with pytest.raises(ValueError):
        pairwise_similarity("", "apple", mock)


def test_similarity_matrix_parallel_equals_serial():
    texts = {f"s{i}": " ".join(f"w{(i * 3 + k) % 11}" for k in range(6)) for i in range(6)}
    a = similarity_matrix(texts, MockBackend())
    b = similarity_matrix(texts, MockBackend(), parallelism=4)
    assert a.speaker_ids == b.speaker_ids and np.array_equal(a.scores, b.scores)


def test_similarity_matrix_validation():
    with pytest.raises(ValueError):
        SimilarityMatrix(["a", "b"], np.array([[1, 0.3], [0.2, 1]]))
    with pytest.raises(ValueError):
        SimilarityMatrix(["a", "b"], np.array([[1, 1.3], [1.3, 1]]))
    with pytest.raises(ValueError):
        SimilarityMatrix(["a"], np.array([[0.5]]))


def test_prompt_and_parse_roundtrip():
    prompt = build_prompt(PAIRWISE_SIMILARITY, {"transcripts": {"A": "x y", "B": "z"}})
    assert "[[ ## transcripts ## ]]" in prompt and "[[ ## topic_similarity ## ]]" in prompt
    assert "topic_similarity` (float)" in prompt
    assert parse_reply(PAIRWISE_SIMILARITY, "[[ ## topic_similarity ## ]]\n0.25\n\n[[ ## completed ## ]]") == {
        "topic_similarity": 0.25
    }
    assert parse_reply(TOPIC_DETECTION, '```json\n{"contains_topic": false}\n```') == {"contains_topic": False}
    assert parse_reply(JOINT_CLUSTERING, '[[ ## groups ## ]]\n[["a", "b"], ["c"]]') == {"groups": [["a", "b"], ["c"]]}
    for bad in ("nothing useful", "[[ ## topic_similarity ## ]]\nhigh", '{"topic_similarity": "x"}'):
        with pytest.raises(ValueError):
            parse_reply(PAIRWISE_SIMILARITY, bad)


class ScriptedBackend(LLMBackend):
    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def _raw_complete(self, sig, inputs):
        self.calls += 1
        return parse_reply(sig, self.replies.pop(0))


def test_retry_once_then_succeed():
    backend = ScriptedBackend(["garbage", "[[ ## topic_similarity ## ]]\n0.6"])
    assert pairwise_similarity("a b", "c d", backend) == 0.6
    assert backend.calls == 2


def test_out_of_range_similarity_is_retried_then_fails():
    backend = ScriptedBackend(["[[ ## topic_similarity ## ]]\n1.7"] * 2)
    with pytest.raises(LLMBackendError):
        pairwise_similarity("a b", "c d", backend)
    assert backend.calls == 2


def test_joint_reply_must_be_partition():
    backend = ScriptedBackend(['[[ ## groups ## ]]\n[["a"], ["a", "b"]]', '[[ ## groups ## ]]\n[["a"]]'])
    with pytest.raises(LLMBackendError):
        joint_cluster({"a": "x", "b": "y"}, backend)


def test_make_backend(monkeypatch):
    assert isinstance(make_backend("mock"), MockBackend)
    monkeypatch.delenv("LLM_BASE_URL", raising=False)
    with pytest.raises(LLMBackendError):
        make_backend("http")
    with pytest.raises(ValueError):
        make_backend("other")


@pytest.fixture
def chat_server():
    """A local chat-completions endpoint answering from a queue."""
    state = {"replies": [], "requests": []}

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            state["requests"].append({"path": self.path, "body": body, "auth": self.headers.get("Authorization")})
            status, content = state["replies"].pop(0)
            payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]}).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    state["url"] = f"http://127.0.0.1:{server.server_port}/v1"
    yield state
    server.shutdown()


def test_http_backend_roundtrip(chat_server):
    chat_server["replies"] = [(200, "[[ ## topic_similarity ## ]]\n0.8\n\n[[ ## completed ## ]]")]
    backend = HTTPBackend(chat_server["url"], "some-model", api_key="k")
    assert pairwise_similarity("a b", "c d", backend) == 0.8
    req = chat_server["requests"][0]
    assert req["path"] == "/v1/chat/completions"
    assert req["body"]["temperature"] == 0.0 and req["body"]["model"] == "some-model"
    assert req["auth"] == "Bearer k"
    assert "[[ ## transcripts ## ]]" in req["body"]["messages"][0]["content"]


def test_http_backend_retries_malformed_reply(chat_server):
    chat_server["replies"] = [(200, "no idea"), (200, '{"contains_topic": true}')]
    assert detect_topic("a b c", HTTPBackend(chat_server["url"], "m"))
    assert len(chat_server["requests"]) == 2


def test_http_backend_server_error(chat_server):
    chat_server["replies"] = [(500, "")]
    with pytest.raises(LLMBackendError):
        detect_topic("a b c", HTTPBackend(chat_server["url"], "m"))


# --------------------------------------------------------------------- fallback and pipeline


def test_fallback_mean_overlap_distance():
    # overlaps of P with A and C are 0.2 and 0.4, so the mean distance is 0.3
    tl = {"A": [(0, 10)], "C": [(5, 10)], "P": [(8, 10)]}
    assert fallback_assign([["A", "C"]], ["P"], tl, threshold=0.3) == [["A", "C", "P"]]
    assert fallback_assign([["A", "C"]], ["P"], tl, threshold=0.29) == [["A", "C"], ["P"]]


def test_fallback_zero_overlap_goes_to_own_conversation():
    tl = {"A": [(0, 10)], "B": [(0, 4)], "P": [(5, 12)]}
    assert fallback_assign([["A"], ["B"]], ["P"], tl) == [["A"], ["B", "P"]]


def test_fallback_never_merges_core_clusters():
    # core clusters never overlap each other, yet stay apart
    tl = {"A": [(0, 1)], "B": [(2, 3)], "P": [(5, 6)]}
    out = fallback_assign([["A"], ["B"]], ["P"], tl)
    assert len(out) == 2
    assert not any("A" in c and "B" in c for c in out)


def test_fallback_missing_timeline():
    with pytest.raises(KeyError):
        fallback_assign([["A"]], ["P"], {"A": [(0, 1)]})


TRANSCRIPTS = {
    "a1": "engine wheels brakes garage mechanic",
    "a2": "garage engine brakes wheels mechanic tyres",
    "b1": "recipe oven flour sugar butter",
    "b2": "oven flour butter sugar recipe dough",
    "p1": "yeah mhm",
    "p2": "right okay",
}
TIMELINES = {
    "a1": [(0, 5)],
    "a2": [(5, 10)],
    "b1": [(0, 4)],
    "b2": [(4, 10)],
    "p1": [(10, 11)],  # overlaps nobody
    "p2": [(2, 3)],  # overlaps a1 and b1
}


def test_pipeline_modes():
    mock = MockBackend()
    ids = list(TRANSCRIPTS)
    pw = cluster_conversations(ids, TRANSCRIPTS, TIMELINES, mock, "pairwise")
    assert pw.as_lists() == [["a1", "a2"], ["b1", "b2"], ["p1"], ["p2"]]
    assert pw.active == {"a1": True, "a2": True, "b1": True, "b2": True, "p1": False, "p2": False}
    joint = cluster_conversations(ids, TRANSCRIPTS, TIMELINES, mock, "joint")
    assert joint.as_lists()[:2] == [["a1", "a2"], ["b1", "b2"]]
    full = cluster_conversations(ids, TRANSCRIPTS, TIMELINES, mock, "pairwise_fallback")
    assert len(full.as_lists()) == 2  # every passive speaker joins a conversation
    with pytest.raises(ValueError):
        cluster_conversations(ids, TRANSCRIPTS, TIMELINES, mock, "other")
    with pytest.raises(KeyError):
        cluster_conversations(ids + ["zz"], TRANSCRIPTS, TIMELINES, mock)


def test_tau_controls_core_clusters():
    mock = MockBackend()
    ids = ["a1", "a2", "b1", "b2"]
    # both pairs have Jaccard 5/6: apart at tau 0.9, merged at 0.8
    sep = cluster_conversations(ids, TRANSCRIPTS, TIMELINES, mock, "pairwise", tau=0.9)
    assert sep.as_lists() == [["a1"], ["a2"], ["b1"], ["b2"]]
    assert cluster_conversations(ids, TRANSCRIPTS, TIMELINES, mock, "pairwise", tau=0.8).as_lists() == [
        ["a1", "a2"],
        ["b1", "b2"],
    ]


@pytest.mark.parametrize("i", range(6))
def test_end_to_end_on_synthetic_sessions(world, i):
    sess = sample_cocktail_session(world, np.random.default_rng([42, i]), f"s{i}")
    hyps = {s.speaker_id: " ".join(s.transcript) for s in sess.speakers}
    pred = cluster_session(sess, hyps, MockBackend())
    assert pairwise_f1(pred.groups, sess.gold_groups)[2] == 1.0


def test_all_passive_reduces_to_overlap_baseline(world):
    sess = sample_cocktail_session(world, np.random.default_rng(9), "s")
    hyps = {s.speaker_id: "yeah" for s in sess.speakers}
    fb = cluster_session(sess, hyps, MockBackend(), "pairwise_fallback")
    ov = cluster_session(sess, hyps, MockBackend(), "overlap")
    assert fb.groups == ov.groups
    assert not any(fb.active.values())
