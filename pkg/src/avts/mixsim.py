"""Overlapped-mixture and cocktail-party session simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datamodel.synthetic import SyntheticWorld, Utterance
from .datamodel.types import (
    ACOUSTIC_RATE_HZ,
    FeatureSequence,
    Session,
    SpeakerRecord,
    TargetSpeakerExample,
    VideoTrack,
)

GAIN_RANGE = (0.5, 1.25)


@dataclass(eq=False)
class MixtureSpec:
    component_utterances: list[Utterance]
    gains: list[float]
    bucket_id: int = 0
    mixture_id: str = ""

    def __post_init__(self) -> None:
        if len(self.gains) != len(self.component_utterances):
            raise ValueError("need one gain per component")
        if any(g <= 0 for g in self.gains):
            raise ValueError("gains must be positive")

    @property
    def n_speakers(self) -> int:
        return len(self.component_utterances)


def nearest_rank_percentile(values: list[float], pct: float) -> float:
    if not values:
        raise ValueError("empty input")
    ordered = sorted(values)
    rank = math.ceil(pct / 100.0 * len(ordered))
    return ordered[max(rank, 1) - 1]


def filter_by_duration_percentile(utterances: list[Utterance], low_pct: float = 5.0) -> list[Utterance]:
    """Drop utterances shorter than the ``low_pct`` nearest-rank percentile."""
    if not utterances:
        raise ValueError("empty input")
    if low_pct <= 0:
        return list(utterances)
    cut = nearest_rank_percentile([u.duration_s for u in utterances], low_pct)
    return [u for u in utterances if u.duration_s >= cut]


def assign_buckets(durations: list[float], n_buckets: int) -> list[int]:
    """Equal-width bucket index over ``[min, max]`` for each duration."""
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    lo, hi = min(durations), max(durations)
    width = (hi - lo) / n_buckets
    if width == 0:
        return [0] * len(durations)
    return [min(int((d - lo) / width), n_buckets - 1) for d in durations]


def bucket_sample(
    utterances: list[Utterance],
    n_buckets: int,
    rng: np.random.Generator,
    sizes: list[int],
) -> list[tuple[int, list[Utterance]]]:
    """Draw one group of distinct-speaker utterances per entry of ``sizes``,
    each group taken from a single duration bucket.

    Returns ``(bucket_id, utterances)`` pairs.
    """
    bucket_of = assign_buckets([u.duration_s for u in utterances], n_buckets)
    buckets: dict[int, list[Utterance]] = {}
    for u, b in zip(utterances, bucket_of):
        buckets.setdefault(b, []).append(u)
    keys = sorted(buckets)
    draws = []
    for k in sizes:
        eligible = [b for b in keys if len({u.speaker_id for u in buckets[b]}) >= k]
        if not eligible:
            raise ValueError(f"no bucket holds {k} utterances from distinct speakers")
        weights = np.array([len(buckets[b]) for b in eligible], dtype=float)
        b = eligible[int(rng.choice(len(eligible), p=weights / weights.sum()))]
        pool = buckets[b]
        chosen: list[Utterance] = []
        seen: set[str] = set()
        for i in rng.permutation(len(pool)):
            u = pool[int(i)]
            if u.speaker_id not in seen:
                chosen.append(u)
                seen.add(u.speaker_id)
                if len(chosen) == k:
                    break
        draws.append((b, chosen))
    return draws


def make_mixture(spec: MixtureSpec) -> list[TargetSpeakerExample]:
    """Fully overlapped mixture: every component starts at frame 0 and all are
    cut to the shortest one. Emits one example per component speaker."""
    comps = spec.component_utterances
    if not comps:
        raise ValueError("mixture needs at least one component")
    dims = {(u.acoustic.dim, u.visual.dim) for u in comps}
    if len(dims) != 1:
        raise ValueError(f"component feature dims differ: {sorted(dims)}")
    n = min(u.acoustic.frames for u in comps)
    mixed = np.zeros((n, comps[0].acoustic.dim), dtype=np.float64)
    for g, u in zip(spec.gains, comps):
        mixed += g * u.acoustic.data[:n].astype(np.float64)
    audio = FeatureSequence(mixed, ACOUSTIC_RATE_HZ, "acoustic")
    out = []
    for u in comps:
        fpt = u.acoustic.frames // max(len(u.tokens), 1)
        n_tok = n // fpt if u.tokens else 0
        out.append(
            TargetSpeakerExample(
                audio=audio,
                video=u.visual.slice_frames(0, 2 * n),
                tokens=list(u.tokens[:n_tok]),
                speaker_id=u.speaker_id,
                source_id=spec.mixture_id,
            )
        )
    return out


def make_silent_example(
    mixture: TargetSpeakerExample,
    absent_speaker: str,
    world: SyntheticWorld,
    rng: np.random.Generator,
    present_speakers: list[str] | None = None,
) -> TargetSpeakerExample:
    """Pair a mixture with the resting lips of a speaker who is not in it."""
    if present_speakers is not None and absent_speaker in present_speakers:
        raise ValueError(f"speaker {absent_speaker} is part of the mixture")
    video = world.render_silent_video(world.speaker_index(absent_speaker), mixture.audio.frames, rng)
    return TargetSpeakerExample(
        audio=mixture.audio,
        video=video,
        tokens=[],
        speaker_id=absent_speaker,
        source_id=mixture.source_id + "+silent",
    )


@dataclass
class SimulationConfig:
    n_mixtures: int = 2000
    speaker_weights: dict[int, float] = field(default_factory=lambda: {2: 1.0})
    silent_fraction: float = 0.1
    n_buckets: int = 10
    low_pct: float = 5.0
    seed: int = 0


def simulate_mixtures(
    utterances: list[Utterance], world: SyntheticWorld, cfg: SimulationConfig
) -> tuple[list[MixtureSpec], list[TargetSpeakerExample]]:
    """Filter, bucket-sample and mix; returns the specs and all examples
    (including the silent-target ones)."""
    rng = np.random.default_rng([cfg.seed, 2])
    pool = filter_by_duration_percentile(utterances, cfg.low_pct)
    ks = sorted(cfg.speaker_weights)
    w = np.array([cfg.speaker_weights[k] for k in ks], dtype=float)
    if any(k < 1 for k in ks) or w.sum() <= 0:
        raise ValueError("invalid speaker-count weights")
    sizes = [ks[int(i)] for i in rng.choice(len(ks), size=cfg.n_mixtures, p=w / w.sum())]
    specs = []
    examples: list[TargetSpeakerExample] = []
    for i, (bucket, comps) in enumerate(bucket_sample(pool, cfg.n_buckets, rng, sizes)):
        gains = [float(g) for g in rng.uniform(*GAIN_RANGE, size=len(comps))]
        spec = MixtureSpec(comps, gains, bucket, f"mix{i:06d}")
        specs.append(spec)
        exs = make_mixture(spec)
        examples.extend(exs)
        if rng.random() < cfg.silent_fraction:
            present = [u.speaker_id for u in comps]
            absent = [s for s in world.speaker_ids if s not in present]
            if absent:
                spk = absent[int(rng.integers(len(absent)))]
                examples.append(make_silent_example(exs[0], spk, world, rng, present))
    return specs, examples


def mix_sessions(sessions: list[Session], rng: np.random.Generator | None = None, session_id: str | None = None) -> Session:
    """Overlay 2-4 disjoint sessions into one cocktail-party recording.

    Acoustic streams are summed after zero-padding to the longest session;
    gold groups keep each input session's membership. ``rng`` optionally
    shuffles the speaker order.
    """
    if not 2 <= len(sessions) <= 4:
        raise ValueError("mix between 2 and 4 sessions")
    seen: set[str] = set()
    for s in sessions:
        for sid in s.speaker_ids:
            if sid in seen:
                raise ValueError(f"duplicate speaker id {sid!r}")
            seen.add(sid)
    dims = {s.mixed_audio.dim for s in sessions}
    if len(dims) != 1:
        raise ValueError("sessions have different acoustic dims")
    n = max(s.mixed_audio.frames for s in sessions)
    mixed = np.zeros((n, dims.pop()), dtype=np.float64)
    speakers: list[SpeakerRecord] = []
    gold: dict[str, int] = {}
    group_ids: dict[tuple[int, int], int] = {}
    for k, s in enumerate(sessions):
        mixed[: s.mixed_audio.frames] += s.mixed_audio.data
        for spk in s.speakers:
            key = (k, s.gold_groups[spk.speaker_id] if s.gold_groups else 0)
            gold[spk.speaker_id] = group_ids.setdefault(key, len(group_ids))
            speakers.append(spk)
    if rng is not None:
        speakers = [speakers[int(i)] for i in rng.permutation(len(speakers))]
    out = Session(
        session_id=session_id or "+".join(s.session_id for s in sessions),
        speakers=speakers,
        mixed_audio=FeatureSequence(mixed, ACOUSTIC_RATE_HZ, "acoustic"),
        duration_s=max(s.duration_s for s in sessions),
        gold_groups={spk.speaker_id: gold[spk.speaker_id] for spk in speakers},
    )
    out.validate()
    return out


def examples_to_sessions(examples: list[TargetSpeakerExample], words: list[str]) -> list[Session]:
    """Group examples sharing a mixture into manifest sessions (one speaker
    record per example, the full video as a single track)."""
    by_mix: dict[str, list[TargetSpeakerExample]] = {}
    for ex in examples:
        by_mix.setdefault(ex.source_id.split("+")[0], []).append(ex)
    sessions = []
    for mix_id, exs in by_mix.items():
        audio = exs[0].audio
        dur = audio.duration_s
        speakers = []
        for ex in exs:
            speakers.append(
                SpeakerRecord(
                    speaker_id=ex.speaker_id,
                    video_tracks=[VideoTrack(0.0, dur, ex.video)] if dur > 0 else [],
                    transcript=[words[t - 1] for t in ex.tokens],
                    activity=[(0.0, dur)] if ex.tokens else [],
                )
            )
        sessions.append(Session(mix_id, speakers, audio, dur, None))
    return sessions


def sessions_to_examples(sessions: list[Session], word_ids: dict[str, int]) -> list[TargetSpeakerExample]:
    """Inverse of :func:`examples_to_sessions` for single-track speakers."""
    out = []
    for sess in sessions:
        for spk in sess.speakers:
            if len(spk.video_tracks) != 1:
                raise ValueError(f"{sess.session_id}/{spk.speaker_id}: training examples need exactly one video track")
            out.append(
                TargetSpeakerExample(
                    audio=sess.mixed_audio,
                    video=spk.video_tracks[0].features,
                    tokens=[word_ids[w] for w in spk.transcript],
                    speaker_id=spk.speaker_id,
                    source_id=sess.session_id,
                )
            )
    return out
