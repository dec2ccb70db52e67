"""Conversation-group clustering.

Active speakers (those with a detectable topic) are clustered by pairwise
LLM topic similarity; passive speakers are then attached to the resulting
groups by speech overlap, each core group acting as one pseudo-speaker.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..datamodel.types import Session
from .ahc import ahc
from .llm import JOINT_CLUSTERING, PAIRWISE_SIMILARITY, TOPIC_DETECTION, LLMBackend
from .overlap import overlap_ratio

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.7
DEFAULT_FALLBACK_TAU = 0.5
PSEUDO_DISTANCE = 1.0


@dataclass
class SimilarityMatrix:
    speaker_ids: list[str]
    scores: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=float)
        if s.shape != (len(self.speaker_ids),) * 2:
            raise ValueError("scores must be square and match speaker_ids")
        if not np.array_equal(s, s.T):
            raise ValueError("similarity must be symmetric")
        if ((s < 0) | (s > 1)).any():
            raise ValueError("similarity must lie in [0, 1]")
        if len(s) and not np.all(np.diag(s) == 1.0):
            raise ValueError("self-similarity must be 1")
        self.scores = s

    def distance(self) -> np.ndarray:
        return 1.0 - self.scores


@dataclass
class ClusterAssignment:
    groups: dict[str, int]
    active: dict[str, bool] = field(default_factory=dict)

    def as_lists(self) -> list[list[str]]:
        out: dict[int, list[str]] = {}
        for sid, g in self.groups.items():
            out.setdefault(g, []).append(sid)
        return [out[g] for g in sorted(out)]

    def to_json(self, session_id: str) -> dict:
        return {"session_id": session_id, "groups": self.as_lists(), "active": dict(self.active)}


def _canonical(clusters: Sequence[Sequence[str]], order: Sequence[str]) -> dict[str, int]:
    """Number groups by first appearance in ``order``."""
    label = {s: k for k, c in enumerate(clusters) for s in c}
    remap: dict[int, int] = {}
    return {s: remap.setdefault(label[s], len(remap)) for s in order}


def detect_topic(transcript: str, backend: LLMBackend) -> bool:
    if not transcript.strip():
        return False
    return bool(backend.complete(TOPIC_DETECTION, {"transcript": transcript})["contains_topic"])


def _check_unit(out: dict) -> None:
    v = out["topic_similarity"]
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"topic_similarity {v} outside [0, 1]")


def pairwise_similarity(t_i: str, t_j: str, backend: LLMBackend, ids: tuple[str, str] = ("A", "B")) -> float:
    if not t_i.strip() or not t_j.strip():
        raise ValueError("pairwise similarity needs two nonempty transcripts")
    out = backend.complete(PAIRWISE_SIMILARITY, {"transcripts": {ids[0]: t_i, ids[1]: t_j}}, validate=_check_unit)
    return float(out["topic_similarity"])


def similarity_matrix(transcripts: Mapping[str, str], backend: LLMBackend, parallelism: int = 1) -> SimilarityMatrix:
    """One query per unordered pair; results are keyed by pair so the
    completion order of concurrent queries is irrelevant."""
    ids = list(transcripts)
    pairs = list(itertools.combinations(range(len(ids)), 2))

    def query(p: tuple[int, int]) -> float:
        i, j = p
        return pairwise_similarity(transcripts[ids[i]], transcripts[ids[j]], backend, (ids[i], ids[j]))

    if parallelism > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            scores = dict(zip(pairs, pool.map(query, pairs)))
    else:
        scores = {p: query(p) for p in pairs}
    m = np.eye(len(ids))
    for (i, j), v in scores.items():
        m[i, j] = m[j, i] = v
    return SimilarityMatrix(ids, m)


def fallback_assign(
    core: Sequence[Sequence[str]],
    passive: Sequence[str],
    timelines: Mapping[str, Sequence[tuple[float, float]]],
    threshold: float = DEFAULT_FALLBACK_TAU,
) -> list[list[str]]:
    """Attach passive speakers to core clusters by speech overlap.

    Nodes are the core clusters (as pseudo-speakers) followed by the passive
    speakers. Pseudo-pseudo distance is 1.0, passive-cluster distance is the
    mean overlap ratio with the cluster members, passive-passive distance is
    their overlap ratio. Core clusters are never merged with each other. With
    no core clusters this reduces to plain overlap clustering.
    """
    for sid in list(passive) + [s for c in core for s in c]:
        if sid not in timelines:
            raise KeyError(f"no timeline for speaker {sid!r}")
    k, n = len(core), len(core) + len(passive)
    d = np.zeros((n, n))
    for a in range(k):
        for b in range(a + 1, k):
            d[a, b] = d[b, a] = PSEUDO_DISTANCE
    for p, sp in enumerate(passive, start=k):
        for c, members in enumerate(core):
            d[p, c] = d[c, p] = float(np.mean([overlap_ratio(timelines[sp], timelines[q]) for q in members]))
        for q in range(p + 1, n):
            d[p, q] = d[q, p] = overlap_ratio(timelines[sp], timelines[passive[q - k]])
    merged = ahc(d, threshold, cannot_link=range(k))
    out = []
    for cl in merged:
        members: list[str] = []
        for node in cl:
            members.extend(core[node] if node < k else [passive[node - k]])
        out.append(members)
    return out


def joint_cluster(transcripts: Mapping[str, str], backend: LLMBackend) -> list[list[str]]:
    """Ask for the whole grouping in a single call."""
    if not transcripts:
        raise ValueError("need at least one transcript")
    ids = set(transcripts)

    def check(out: dict) -> None:
        flat = [s for g in out["groups"] for s in g]
        if len(flat) != len(set(flat)) or set(flat) != ids or any(not g for g in out["groups"]):
            raise ValueError("reply is not a partition of the speaker ids")

    return [list(g) for g in backend.complete(JOINT_CLUSTERING, {"transcripts": dict(transcripts)}, validate=check)["groups"]]


def session_timelines(session: Session, source: str = "reference") -> dict[str, list[tuple[float, float]]]:
    if source == "reference":
        return {s.speaker_id: list(s.activity) for s in session.speakers}
    if source == "asd":
        return {s.speaker_id: list(s.asd_segments or []) for s in session.speakers}
    raise ValueError(f"unknown timeline source {source!r}")


def cluster_conversations(
    speaker_ids: Sequence[str],
    transcripts: Mapping[str, str],
    timelines: Mapping[str, Sequence[tuple[float, float]]],
    backend: LLMBackend,
    mode: str = "pairwise_fallback",
    tau: float = DEFAULT_TAU,
    fallback_tau: float = DEFAULT_FALLBACK_TAU,
    parallelism: int = 1,
) -> ClusterAssignment:
    """Modes: ``pairwise_fallback`` (full pipeline), ``pairwise`` (passive
    speakers stay singletons), ``joint`` (single LLM call), ``overlap``
    (overlap-only baseline)."""
    ids = list(speaker_ids)
    missing = [s for s in ids if s not in transcripts or s not in timelines]
    if missing:
        raise KeyError(f"speakers without transcript or timeline: {missing}")
    if mode == "joint":
        groups = joint_cluster({s: transcripts[s] for s in ids}, backend)
        return ClusterAssignment(_canonical(groups, ids), {s: True for s in ids})
    if mode == "overlap":
        groups = fallback_assign([], ids, timelines, fallback_tau)
        return ClusterAssignment(_canonical(groups, ids), {s: False for s in ids})
    if mode not in ("pairwise", "pairwise_fallback"):
        raise ValueError(f"unknown clustering mode {mode!r}")

    active = {s: detect_topic(transcripts[s], backend) for s in ids}
    act = [s for s in ids if active[s]]
    pas = [s for s in ids if not active[s]]
    core: list[list[str]] = []
    if act:
        sim = similarity_matrix({s: transcripts[s] for s in act}, backend, parallelism)
        core = [[act[i] for i in c] for c in ahc(sim.distance(), 1.0 - tau)]
    if mode == "pairwise" or not pas:
        groups = core + [[s] for s in pas]
    else:
        groups = fallback_assign(core, pas, timelines, fallback_tau)
    return ClusterAssignment(_canonical(groups, ids), active)


def cluster_session(
    session: Session,
    hypotheses: Mapping[str, str],
    backend: LLMBackend,
    mode: str = "pairwise_fallback",
    timelines: str = "reference",
    tau: float = DEFAULT_TAU,
    fallback_tau: float = DEFAULT_FALLBACK_TAU,
    parallelism: int = 1,
) -> ClusterAssignment:
    return cluster_conversations(
        session.speaker_ids,
        hypotheses,
        session_timelines(session, timelines),
        backend,
        mode,
        tau,
        fallback_tau,
        parallelism,
    )
