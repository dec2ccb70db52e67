"""Synthetic audio-visual corpus.

Every token owns an acoustic embedding and a lip embedding; every speaker owns
an acoustic and a visual embedding. A rendered frame is the sum of the token
and speaker embeddings plus Gaussian noise. Summing two speakers' acoustic
streams leaves no cue about which of them is the target, while the target's
visual stream carries its token identities directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .types import (
    ACOUSTIC_RATE_HZ,
    VISUAL_RATE_HZ,
    FeatureSequence,
    Session,
    SpeakerRecord,
    VideoTrack,
)

DEFAULT_TOPIC_POOLS: dict[str, list[str]] = {
    "cooking": ["recipe", "oven", "garlic", "pasta", "bake", "flavor", "kitchen", "sauce"],
    "travel": ["flight", "hotel", "beach", "passport", "luggage", "island", "airport", "ticket"],
    "football": ["goal", "striker", "league", "referee", "stadium", "penalty", "coach", "match"],
    "music": ["guitar", "concert", "melody", "drummer", "album", "chorus", "piano", "band"],
}
DEFAULT_BACKCHANNEL = ["yeah", "mhm", "okay", "right"]
DEFAULT_FUNCTION_WORDS = ["the", "and", "we", "it", "to", "so"]


@dataclass
class SyntheticCorpusConfig:
    n_speakers: int = 12
    vocab_size: int = 42
    acoustic_dim: int = 24
    visual_dim: int = 24
    frames_per_token_acoustic: int = 2
    frames_per_token_visual: int = 4
    noise_std: float = 0.3
    seed: int = 0
    topic_pools: dict[str, list[str]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_TOPIC_POOLS.items()})
    backchannel_words: list[str] = field(default_factory=lambda: list(DEFAULT_BACKCHANNEL))
    function_words: list[str] = field(default_factory=lambda: list(DEFAULT_FUNCTION_WORDS))
    n_utterances: int = 400
    min_tokens: int = 4
    max_tokens: int = 16
    speaker_scale: float = 0.5

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.acoustic_dim < 1 or self.visual_dim < 1:
            raise ValueError("feature dims must be positive")
        if self.frames_per_token_acoustic < 1:
            raise ValueError("frames_per_token_acoustic must be >= 1")
        if self.frames_per_token_visual != 2 * self.frames_per_token_acoustic:
            raise ValueError("frames_per_token_visual must be exactly 2x frames_per_token_acoustic")
        if self.n_speakers < 1:
            raise ValueError("n_speakers must be >= 1")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ValueError("need 1 <= min_tokens <= max_tokens")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        words = self.backchannel_words + [w for p in self.topic_pools.values() for w in p] + self.function_words
        if len(set(words)) != len(words):
            raise ValueError("backchannel, topic and function words must be distinct")
        if len(words) > self.vocab_size:
            raise ValueError(f"vocab_size {self.vocab_size} cannot hold {len(words)} named words")

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticCorpusConfig:
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass(eq=False)
class Utterance:
    utt_id: str
    speaker_id: str
    tokens: list[int]
    acoustic: FeatureSequence
    visual: FeatureSequence

    @property
    def duration_s(self) -> float:
        return self.acoustic.duration_s


class SyntheticWorld:
    """Embedding tables and renderers shared by every utterance of a corpus."""

    def __init__(self, cfg: SyntheticCorpusConfig):
        cfg.validate()
        self.cfg = cfg
        words = list(cfg.backchannel_words)
        for pool in cfg.topic_pools.values():
            words.extend(pool)
        words.extend(cfg.function_words)
        words.extend(f"tok{i}" for i in range(len(words), cfg.vocab_size))
        self.words = words
        self._word_ids = {w: i + 1 for i, w in enumerate(words)}

        rng = np.random.default_rng([cfg.seed, 0])
        v = cfg.vocab_size + 1  # row 0 is the blank and is never rendered
        self.token_acoustic = rng.standard_normal((v, cfg.acoustic_dim))
        self.token_lip = rng.standard_normal((v, cfg.visual_dim))
        self.rest_pose = rng.standard_normal(cfg.visual_dim)
        self.speaker_acoustic = cfg.speaker_scale * rng.standard_normal((cfg.n_speakers, cfg.acoustic_dim))
        self.speaker_visual = cfg.speaker_scale * rng.standard_normal((cfg.n_speakers, cfg.visual_dim))
        self.speaker_ids = [f"spk{i:03d}" for i in range(cfg.n_speakers)]

    @property
    def vocab_size(self) -> int:
        return self.cfg.vocab_size

    def word_id(self, word: str) -> int:
        return self._word_ids[word]

    def encode_words(self, words: list[str]) -> list[int]:
        return [self._word_ids[w] for w in words]

    def decode_ids(self, ids: list[int]) -> list[str]:
        return [self.words[i - 1] for i in ids]

    def speaker_index(self, speaker_id: str) -> int:
        return self.speaker_ids.index(speaker_id)

    def render(self, speaker: int, tokens: list[int], rng: np.random.Generator) -> tuple[FeatureSequence, FeatureSequence]:
        """Render a fully voiced utterance."""
        n = len(tokens) * self.cfg.frames_per_token_acoustic
        return self.render_timeline(speaker, [(0, tokens)], n, rng)

    def render_timeline(
        self,
        speaker: int,
        turns: list[tuple[int, list[int]]],
        n_frames: int,
        rng: np.random.Generator,
    ) -> tuple[FeatureSequence, FeatureSequence]:
        """Render ``n_frames`` acoustic frames (and ``2 * n_frames`` visual ones)
        with each ``(start_frame, tokens)`` turn voiced and everything else silent
        with the lips at rest."""
        cfg = self.cfg
        fa, fv = cfg.frames_per_token_acoustic, cfg.frames_per_token_visual
        ac = cfg.noise_std * rng.standard_normal((n_frames, cfg.acoustic_dim))
        vis = self.rest_pose + self.speaker_visual[speaker] + cfg.noise_std * rng.standard_normal(
            (2 * n_frames, cfg.visual_dim)
        )
        for start, toks in turns:
            if not toks:
                continue
            ids = np.asarray(toks)
            if ids.min() < 1 or ids.max() > cfg.vocab_size:
                raise ValueError("token id outside vocabulary")
            end = start + len(toks) * fa
            if start < 0 or end > n_frames:
                raise ValueError("turn does not fit in the timeline")
            ac[start:end] += np.repeat(self.token_acoustic[ids], fa, axis=0) + self.speaker_acoustic[speaker]
            vis[2 * start : 2 * end] += np.repeat(self.token_lip[ids] - self.rest_pose, fv, axis=0)
        return (
            FeatureSequence(ac, ACOUSTIC_RATE_HZ, "acoustic"),
            FeatureSequence(vis, VISUAL_RATE_HZ, "visual"),
        )

    def render_silent_video(self, speaker: int, n_acoustic_frames: int, rng: np.random.Generator) -> FeatureSequence:
        _, vis = self.render_timeline(speaker, [], n_acoustic_frames, rng)
        return vis

    def sample_tokens(self, n: int, rng: np.random.Generator) -> list[int]:
        """Uniform tokens with no immediate repeats."""
        out: list[int] = []
        for _ in range(n):
            while True:
                t = int(rng.integers(1, self.cfg.vocab_size + 1))
                if not out or t != out[-1] or self.cfg.vocab_size == 1:
                    break
            out.append(t)
        return out


@dataclass(eq=False)
class SyntheticCorpus:
    world: SyntheticWorld
    utterances: list[Utterance]


def generate_synthetic_corpus(cfg: SyntheticCorpusConfig) -> SyntheticCorpus:
    """Single-speaker utterances, deterministic in ``cfg.seed``."""
    world = SyntheticWorld(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    utts = []
    for i in range(cfg.n_utterances):
        spk = int(rng.integers(cfg.n_speakers))
        toks = world.sample_tokens(int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1)), rng)
        ac, vis = world.render(spk, toks, rng)
        utts.append(Utterance(f"utt{i:06d}", world.speaker_ids[spk], toks, ac, vis))
    return SyntheticCorpus(world, utts)


def _no_repeat_choice(options: list[str], prev: str | None, rng: np.random.Generator) -> str:
    choices = [w for w in options if w != prev] or options
    return choices[int(rng.integers(len(choices)))]


def generate_conversation_session(
    world: SyntheticWorld,
    topics: list[str],
    actives: list[int],
    passives: list[int],
    rng: np.random.Generator,
    session_id: str = "session",
    active_words: tuple[int, int] = (30, 45),
    turn_words: tuple[int, int] = (5, 10),
    passive_turns: tuple[int, int] = (2, 4),
    content_ratio: float = 0.7,
    face_gaps: int = 0,
) -> Session:
    """A cocktail-party session with one conversation per topic.

    Speakers of one group take turns, so their speech never overlaps; different
    groups talk at the same time. Passive speakers only produce backchannels.
    """
    n_groups = len(topics)
    if n_groups < 1:
        raise ValueError("need at least one group")
    if not len(actives) == len(passives) == n_groups:
        raise ValueError("topics, actives and passives must have one entry per group")
    for g in range(n_groups):
        if actives[g] + passives[g] < 1:
            raise ValueError(f"group {g} has zero speakers")
        if topics[g] not in world.cfg.topic_pools:
            raise ValueError(f"unknown topic {topics[g]!r}")
    total = sum(actives) + sum(passives)
    if total > world.cfg.n_speakers:
        raise ValueError(f"world has {world.cfg.n_speakers} speakers, session needs {total}")

    fa = world.cfg.frames_per_token_acoustic
    spk_idx = [int(i) for i in rng.permutation(world.cfg.n_speakers)[:total]]
    members: list[tuple[int, int, bool]] = []  # (world speaker, group, active)
    k = 0
    for g in range(n_groups):
        for j in range(actives[g] + passives[g]):
            members.append((spk_idx[k], g, j < actives[g]))
            k += 1

    turns: dict[int, list[tuple[int, list[str]]]] = {m[0]: [] for m in members}
    is_active = {s: act for s, _, act in members}
    last_word: dict[int, str | None] = {m[0]: None for m in members}
    clock: list[int] = []
    prev: list[int | None] = []

    def say(s: int, g: int, pool: list[str], limit: int) -> int:
        words: list[str] = []
        if is_active[s]:
            for _ in range(min(limit, int(rng.integers(turn_words[0], turn_words[1] + 1)))):
                src = pool if rng.random() < content_ratio else world.cfg.function_words
                words.append(_no_repeat_choice(src, words[-1] if words else last_word[s], rng))
        else:
            for _ in range(int(rng.integers(1, 3))):
                words.append(_no_repeat_choice(world.cfg.backchannel_words, words[-1] if words else last_word[s], rng))
        turns[s].append((clock[g], words))
        last_word[s] = words[-1]
        clock[g] += len(words) * fa + int(rng.integers(1, 4))
        prev[g] = s
        return len(words) if is_active[s] else 1

    for g in range(n_groups):
        pool = world.cfg.topic_pools[topics[g]]
        group = [m[0] for m in members if m[1] == g]
        quota = {
            s: int(rng.integers(active_words[0], active_words[1] + 1)) if is_active[s]
            else int(rng.integers(passive_turns[0], passive_turns[1] + 1))
            for s in group
        }
        clock.append(int(rng.integers(0, 4)))
        prev.append(None)
        while any(q > 0 for q in quota.values()):
            cands = [s for s, q in quota.items() if q > 0 and s != prev[g]] or [s for s, q in quota.items() if q > 0]
            w = np.array([1.0 if is_active[s] else 0.5 for s in cands])
            s = cands[int(rng.choice(len(cands), p=w / w.sum()))]
            quota[s] -= say(s, g, pool, quota[s])
    # every conversation lasts the whole session, otherwise a short group
    # leaves stretches where nobody overlaps with anybody
    end_frame = max(clock)
    for g in range(n_groups):
        pool = world.cfg.topic_pools[topics[g]]
        talkers = [m[0] for m in members if m[1] == g and is_active[m[0]]]
        while talkers and clock[g] < end_frame:
            cands = [s for s in talkers if s != prev[g]] or talkers
            say(cands[int(rng.integers(len(cands)))], g, pool, turn_words[1])
    end_frame = max(clock)

    n_frames = end_frame + 2
    duration = n_frames / ACOUSTIC_RATE_HZ
    speakers = []
    gold = {}
    mixed = np.zeros((n_frames, world.cfg.acoustic_dim))
    for s, g, _ in members:
        sid = world.speaker_ids[s]
        tok_turns = [(st, world.encode_words(ws)) for st, ws in turns[s]]
        ac, vis = world.render_timeline(s, tok_turns, n_frames, rng)
        mixed += ac.data
        activity = [(st / ACOUSTIC_RATE_HZ, (st + len(ws) * fa) / ACOUSTIC_RATE_HZ) for st, ws in turns[s]]
        speakers.append(
            SpeakerRecord(
                speaker_id=sid,
                audio=ac,
                video_tracks=_split_tracks(vis, n_frames, face_gaps, rng),
                transcript=[w for _, ws in turns[s] for w in ws],
                activity=activity,
                asd_segments=list(activity),
            )
        )
        gold[sid] = g
    order = [int(i) for i in rng.permutation(len(speakers))]
    session = Session(
        session_id=session_id,
        speakers=[speakers[i] for i in order],
        mixed_audio=FeatureSequence(mixed, ACOUSTIC_RATE_HZ, "acoustic"),
        duration_s=duration,
        gold_groups={speakers[i].speaker_id: gold[speakers[i].speaker_id] for i in order},
    )
    session.validate()
    return session


def sample_cocktail_session(
    world: SyntheticWorld,
    rng: np.random.Generator,
    session_id: str = "session",
    n_groups: tuple[int, int] = (2, 3),
    n_speakers: tuple[int, int] = (4, 9),
    min_passive: int = 1,
    face_gaps: int = 0,
) -> Session:
    """Draw a random layout (every group gets at least one active speaker,
    the session at least ``min_passive`` passive ones) and generate it."""
    pools = sorted(world.cfg.topic_pools)
    hi_groups = min(n_groups[1], len(pools))
    g = int(rng.integers(n_groups[0], hi_groups + 1))
    lo = max(n_speakers[0], g + min_passive)
    hi = min(n_speakers[1], world.cfg.n_speakers)
    if lo > hi:
        raise ValueError("speaker range cannot fit the requested groups")
    total = int(rng.integers(lo, hi + 1))
    topics = [pools[int(i)] for i in rng.permutation(len(pools))[:g]]
    actives = [1] * g
    passives = [0] * g
    for _ in range(min_passive):
        passives[int(rng.integers(g))] += 1
    for _ in range(total - g - min_passive):
        k = int(rng.integers(g))
        if rng.random() < 0.6:
            actives[k] += 1
        else:
            passives[k] += 1
    return generate_conversation_session(world, topics, actives, passives, rng, session_id, face_gaps=face_gaps)


def _split_tracks(vis: FeatureSequence, n_frames: int, n_gaps: int, rng: np.random.Generator) -> list[VideoTrack]:
    """Cut ``n_gaps`` missing-face regions (on the acoustic frame grid) out of a full track."""
    keep = np.ones(n_frames, dtype=bool)
    for _ in range(n_gaps):
        length = int(rng.integers(max(1, n_frames // 20), max(2, n_frames // 8)))
        start = int(rng.integers(0, max(1, n_frames - length)))
        keep[start : start + length] = False
    tracks = []
    f = 0
    while f < n_frames:
        if not keep[f]:
            f += 1
            continue
        g = f
        while g < n_frames and keep[g]:
            g += 1
        tracks.append(
            VideoTrack(f / ACOUSTIC_RATE_HZ, g / ACOUSTIC_RATE_HZ, vis.slice_frames(2 * f, 2 * g))
        )
        f = g
    return tracks
