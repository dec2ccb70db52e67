"""Word error rate, pairwise conversation-clustering F1, the joint score and
the transcription-error robustness protocol."""

from __future__ import annotations

import itertools
import math
import re
import string
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

WER_INF = math.inf

DEFAULT_DISTRACTORS = (
    # function words: harmless to content-word similarity
    "a", "an", "of", "in", "on", "at", "is", "was", "be", "have", "had", "do", "but", "or", "if",
    "then", "that", "this", "there", "they", "you", "he", "she", "i", "me", "my", "our", "your",
    "with", "for", "from", "by", "as", "not", "no", "just", "like", "well", "um", "uh",
    # generic content words
    "time", "people", "thing", "day", "week", "money", "work", "house", "car", "phone",
)

_PUNCT = re.compile(f"[{re.escape(string.punctuation.replace(chr(39), '').replace('-', ''))}]")


def normalize(text: str) -> list[str]:
    return _PUNCT.sub(" ", text.lower()).split()


def _words(x: str | Sequence[str], normalize_text: bool) -> list[str]:
    if isinstance(x, str):
        return normalize(x) if normalize_text else x.split()
    return [str(w) for w in x]


@dataclass
class WerBreakdown:
    substitutions: int
    insertions: int
    deletions: int
    ref_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        if self.ref_words == 0:
            return WER_INF if self.insertions > 0 else 0.0
        return self.errors / self.ref_words

    def __add__(self, other: WerBreakdown) -> WerBreakdown:
        return WerBreakdown(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.ref_words + other.ref_words,
        )


def edit_ops(ref: Sequence, hyp: Sequence) -> WerBreakdown:
    """Unit-cost Levenshtein alignment. Among equal-cost backtraces prefer
    substitution, then insertion, then deletion."""
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        ri = ref[i - 1]
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (ri != hyp[j - 1])
            d[i, j] = min(sub, d[i, j - 1] + 1, d[i - 1, j] + 1)
    i, j = n, m
    s = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return WerBreakdown(int(s), ins, dels, n)


def wer(ref: str | Sequence[str], hyp: str | Sequence[str], normalize_text: bool = True) -> WerBreakdown:
    return edit_ops(_words(ref, normalize_text), _words(hyp, normalize_text))


def _same_group_pairs(groups: Mapping[str, int]) -> set[frozenset[str]]:
    return {frozenset(p) for p in itertools.combinations(sorted(groups), 2) if groups[p[0]] == groups[p[1]]}


def groups_to_labels(groups: Iterable[Iterable[str]]) -> dict[str, int]:
    return {s: k for k, grp in enumerate(groups) for s in grp}


def pairwise_f1(pred: Mapping[str, int], gold: Mapping[str, int]) -> tuple[float, float, float]:
    """Precision, recall and F1 over unordered same-group speaker pairs."""
    if set(pred) != set(gold):
        raise ValueError(f"speaker sets differ: {sorted(set(pred) ^ set(gold))}")
    p_pairs, g_pairs = _same_group_pairs(pred), _same_group_pairs(gold)
    if not p_pairs and not g_pairs:
        return 1.0, 1.0, 1.0
    hit = len(p_pairs & g_pairs)
    precision = hit / len(p_pairs) if p_pairs else 0.0
    recall = hit / len(g_pairs) if g_pairs else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def joint_score(wer_value: float, f1: float) -> float:
    """Mean of WER (capped at 1) and clustering error ``1 - F1``."""
    if wer_value < 0 or not 0.0 <= f1 <= 1.0:
        raise ValueError("need wer >= 0 and f1 in [0, 1]")
    return (min(wer_value, 1.0) + 1.0 - f1) / 2.0


def corrupt_transcript(
    text: str | Sequence[str],
    wer_target: float,
    rng: np.random.Generator,
    distractors: Sequence[str] = DEFAULT_DISTRACTORS,
    mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3),
) -> list[str]:
    """Inject ``round(wer_target * n)`` errors split over (substitution,
    insertion, deletion) by ``mix``; new words come from ``distractors``."""
    words = text.split() if isinstance(text, str) else list(text)
    if not 0.0 <= wer_target <= 1.0:
        raise ValueError("wer_target must lie in [0, 1]")
    n = len(words)
    if n == 0:
        if wer_target > 0:
            raise ValueError("cannot corrupt an empty transcript")
        return []
    total = int(round(wer_target * n))
    w = np.asarray(mix, dtype=float)
    w = w / w.sum()
    n_sub = int(round(total * w[0]))
    n_del = int(round(total * w[2]))
    n_del = min(n_del, n)
    n_sub = min(n_sub, n - n_del)
    n_ins = total - n_sub - n_del if w[1] > 0 else 0
    positions = rng.permutation(n)
    sub_pos = set(int(i) for i in positions[:n_sub])
    del_pos = set(int(i) for i in positions[n_sub : n_sub + n_del])
    # An insertion that reaches a deletion through a run of edited words
    # aligns back into substitutions and the measured WER drops, so insertion
    # slots (slot i sits before word i) must be fenced off by an intact word.
    edited = sub_pos | del_pos

    def reaches_deletion(i: int) -> bool:
        j = i - 1
        while j >= 0 and j in edited:
            if j in del_pos:
                return True
            j -= 1
        j = i
        while j < n and j in edited:
            if j in del_pos:
                return True
            j += 1
        return False

    slots = [i for i in range(n + 1) if not reaches_deletion(i)] or list(range(n + 1))
    inserts: dict[int, int] = {}
    for _ in range(n_ins):
        i = slots[int(rng.integers(len(slots)))]
        inserts[i] = inserts.get(i, 0) + 1

    def substitute(word: str) -> str:
        choices = [d for d in distractors if d != word] or list(distractors)
        return choices[int(rng.integers(len(choices)))]

    out: list[str] = []
    intact: list[int] = []  # output positions still holding their reference word
    for i in range(n + 1):
        for _ in range(inserts.get(i, 0)):
            out.append(distractors[int(rng.integers(len(distractors)))])
        if i == n or i in del_pos:
            continue
        if i in sub_pos:
            out.append(substitute(words[i]))
        else:
            intact.append(len(out))
            out.append(words[i])
    # Where insertions and deletions balance out, intact words realign with
    # the reference for free; top up with substitutions until the measured
    # error count reaches the planned one.
    while intact:
        short = total - edit_ops(words, out).errors
        if short <= 0:
            break
        for k in sorted(rng.choice(len(intact), size=min(short, len(intact)), replace=False), reverse=True):
            pos = intact.pop(int(k))
            out[pos] = substitute(out[pos])
    return out


@dataclass
class SessionScore:
    session_id: str
    errors: WerBreakdown
    f1: float

    @property
    def wer(self) -> float:
        return self.errors.wer

    @property
    def joint(self) -> float:
        return joint_score(self.wer, self.f1)

    def to_dict(self) -> dict:
        w = self.wer
        return {
            "session_id": self.session_id,
            "wer": None if math.isinf(w) else w,
            "substitutions": self.errors.substitutions,
            "insertions": self.errors.insertions,
            "deletions": self.errors.deletions,
            "ref_words": self.errors.ref_words,
            "f1": self.f1,
            "joint": self.joint,
        }


@dataclass
class ScoreReport:
    sessions: list[SessionScore]

    @property
    def corpus_wer(self) -> float | None:
        """Micro-averaged over all reference words."""
        if not self.sessions:
            return None
        total = WerBreakdown(0, 0, 0, 0)
        for s in self.sessions:
            total = total + s.errors
        return total.wer

    @property
    def mean_f1(self) -> float | None:
        return float(np.mean([s.f1 for s in self.sessions])) if self.sessions else None

    @property
    def mean_joint(self) -> float | None:
        """Per-session joint scores averaged over sessions."""
        return float(np.mean([s.joint for s in self.sessions])) if self.sessions else None

    def to_dict(self) -> dict:
        w = self.corpus_wer
        return {
            "sessions": [s.to_dict() for s in self.sessions],
            "aggregate": {
                "n_sessions": len(self.sessions),
                "wer": None if w is None or math.isinf(w) else w,
                "f1": self.mean_f1,
                "joint": self.mean_joint,
            },
        }


def score_session(
    session_id: str,
    references: Mapping[str, str | Sequence[str]],
    hypotheses: Mapping[str, str | Sequence[str]],
    pred_groups: Mapping[str, int],
    gold_groups: Mapping[str, int],
    normalize_text: bool = True,
) -> SessionScore:
    """WER pooled over the session's speakers plus clustering F1."""
    missing = sorted(set(references) - set(hypotheses))
    if missing:
        raise KeyError(f"{session_id}: no hypothesis for {missing}")
    errs = WerBreakdown(0, 0, 0, 0)
    for sid in sorted(references):
        errs = errs + wer(references[sid], hypotheses[sid], normalize_text)
    return SessionScore(session_id, errs, pairwise_f1(pred_groups, gold_groups)[2])


@dataclass
class CurvePoint:
    wer_level: float
    mean_f1: float
    per_seed_f1: list[float]
    measured_wer: float


def robustness_curve(
    sessions: Sequence,
    wer_levels: Sequence[float],
    backend,
    seeds: Sequence[int],
    mode: str = "pairwise_fallback",
    timelines: str = "reference",
    distractors: Sequence[str] = DEFAULT_DISTRACTORS,
) -> list[CurvePoint]:
    """Corrupt every reference transcript at each WER level, re-cluster and
    score pairwise F1 against the gold groups; F1 is averaged over sessions
    and then over seeds."""
    from .clustering.pipeline import cluster_session

    points = []
    for level in wer_levels:
        per_seed = []
        errs = WerBreakdown(0, 0, 0, 0)
        for seed in seeds:
            rng = np.random.default_rng([int(seed), int(round(level * 1000))])
            f1s = []
            for sess in sessions:
                hyps = {}
                for spk in sess.speakers:
                    words = corrupt_transcript(spk.transcript, level, rng, distractors) if spk.transcript else []
                    errs = errs + edit_ops(spk.transcript, words)
                    hyps[spk.speaker_id] = " ".join(words)
                pred = cluster_session(sess, hyps, backend, mode, timelines)
                f1s.append(pairwise_f1(pred.groups, sess.gold_groups)[2])
            per_seed.append(float(np.mean(f1s)))
        points.append(CurvePoint(float(level), float(np.mean(per_seed)), per_seed, errs.wer))
    return points


def write_curve(points: Sequence[CurvePoint], table_path, plot_path=None, label: str = "mock") -> None:
    """Write the curve as JSON and optionally plot F1 against injected WER."""
    import json
    from pathlib import Path

    Path(table_path).write_text(
        json.dumps(
            [
                {"wer_level": p.wer_level, "mean_f1": p.mean_f1, "measured_wer": p.measured_wer, "per_seed_f1": p.per_seed_f1}
                for p in points
            ],
            indent=1,
        )
    )
    if plot_path is None:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot([100 * p.wer_level for p in points], [p.mean_f1 for p in points], marker="o", label=label)
    ax.set_xlabel("injected WER [%]")
    ax.set_ylabel("clustering F1")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(plot_path, metadata={"Date": None} if str(plot_path).endswith(".svg") else None)
    plt.close(fig)
