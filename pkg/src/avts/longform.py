"""Long-form inference: black-frame gap filling, chunked visual encoding and
the three decoding strategies (whole session, per face track, per ASD span)."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .avfusion import AVEncoder
from .datamodel.types import ACOUSTIC_RATE_HZ, VISUAL_RATE_HZ, FeatureSequence, Session, VideoTrack
from .model import AVTSModel

DEFAULT_CHUNK_S = 20.0


class InferenceStrategy(str, enum.Enum):
    FULL_LONGFORM = "full_longform"
    PER_TRACK = "per_track"
    ASD_SEGMENTS = "asd"


@dataclass
class Segment:
    start_s: float
    end_s: float
    text: str


@dataclass
class SpeakerHypothesis:
    words: list[str]
    segments: list[Segment] = field(default_factory=list)

    @property
    def text(self) -> str:
        return " ".join(self.words)

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "segments": [{"start_s": s.start_s, "end_s": s.end_s, "text": s.text} for s in self.segments],
        }


def fill_gaps(tracks: list[VideoTrack], duration_s: float, dim: int | None = None) -> tuple[FeatureSequence, np.ndarray]:
    """Continuous 25 Hz stream over ``[0, duration_s)`` with missing-face
    frames set to zero. Returns the stream and a boolean gap mask."""
    n = int(round(duration_s * VISUAL_RATE_HZ))
    if dim is None:
        if not tracks:
            raise ValueError("dim is required when there are no tracks")
        dim = tracks[0].features.dim
    data = np.zeros((n, dim), dtype=np.float32)
    gap = np.ones(n, dtype=bool)
    prev_end = -math.inf
    for tr in tracks:
        if tr.start_s < prev_end:
            raise ValueError("video tracks overlap or are unsorted")
        prev_end = tr.end_s
        start = int(round(tr.start_s * VISUAL_RATE_HZ))
        stop = min(n, start + tr.features.frames, int(round(tr.end_s * VISUAL_RATE_HZ)))
        if stop > start:
            data[start:stop] = tr.features.data[: stop - start]
            gap[start:stop] = False
    return FeatureSequence(data, VISUAL_RATE_HZ, "visual"), gap


@torch.no_grad()
def chunk_visual_features(v: FeatureSequence, encoder: AVEncoder, chunk_s: float = DEFAULT_CHUNK_S) -> list[Tensor]:
    """Encode non-overlapping ``chunk_s`` windows independently and
    concatenate every layer along time."""
    if v.kind != "visual":
        raise ValueError("expected visual features")
    if chunk_s <= 0:
        raise ValueError("chunk_s must be > 0")
    step = max(1, int(round(chunk_s * v.rate_hz)))
    dtype = next(encoder.parameters()).dtype
    x = torch.as_tensor(v.data, dtype=dtype)
    if v.frames == 0:
        return [h[0] for h in encoder.encode_visual(x[None])]
    per_chunk = [encoder.encode_visual(x[s : s + step][None]) for s in range(0, v.frames, step)]
    return [torch.cat([c[k][0] for c in per_chunk], dim=0) for k in range(len(per_chunk[0]))]


def _audio_slice(audio: FeatureSequence, start_s: float, end_s: float) -> tuple[int, int]:
    a0 = int(math.floor(start_s * ACOUSTIC_RATE_HZ + 1e-9))
    a1 = min(audio.frames, int(math.ceil(end_s * ACOUSTIC_RATE_HZ - 1e-9)))
    return a0, a1


def _decode(model: AVTSModel, audio: FeatureSequence, video: FeatureSequence, chunk_s: float) -> list[int]:
    if audio.frames == 0:
        return []
    stack = chunk_visual_features(video, model.encoder, chunk_s)
    return model.transcribe(audio, stack=[s[None] for s in stack])


def transcribe_speaker(
    session: Session,
    speaker_id: str,
    model: AVTSModel,
    strategy: InferenceStrategy | str = InferenceStrategy.FULL_LONGFORM,
    chunk_s: float = DEFAULT_CHUNK_S,
) -> SpeakerHypothesis:
    strategy = InferenceStrategy(strategy)
    spk = session.speaker(speaker_id)
    audio = session.mixed_audio
    dim = spk.video_tracks[0].features.dim if spk.video_tracks else model.enc_cfg.visual_input_dim

    if strategy is InferenceStrategy.FULL_LONGFORM:
        video, _ = fill_gaps(spk.video_tracks, session.duration_s, dim)
        video = video.slice_frames(0, 2 * audio.frames)
        words = model.ids_to_words(_decode(model, audio, video, chunk_s))
        return SpeakerHypothesis(words, [Segment(0.0, session.duration_s, " ".join(words))])

    if strategy is InferenceStrategy.PER_TRACK:
        spans = [(t.start_s, t.end_s, t.features) for t in spk.video_tracks]
    else:
        if not spk.asd_segments:
            raise ValueError(f"speaker {speaker_id} has no ASD segments")
        full, _ = fill_gaps(spk.video_tracks, session.duration_s, dim)
        spans = []
        for s, e in spk.asd_segments:
            a0, a1 = _audio_slice(audio, s, e)
            spans.append((s, e, full.slice_frames(2 * a0, 2 * a1)))

    words: list[str] = []
    segments = []
    for s, e, vis in spans:
        a0, a1 = _audio_slice(audio, s, e)
        seg_words = model.ids_to_words(_decode(model, audio.slice_frames(a0, a1), vis, chunk_s))
        words.extend(seg_words)
        segments.append(Segment(s, e, " ".join(seg_words)))
    return SpeakerHypothesis(words, segments)


def transcribe_session(
    session: Session,
    model: AVTSModel,
    strategy: InferenceStrategy | str = InferenceStrategy.FULL_LONGFORM,
    chunk_s: float = DEFAULT_CHUNK_S,
    jobs: int = 1,
) -> dict[str, SpeakerHypothesis]:
    """Hypotheses for every speaker; speakers are independent jobs."""
    ids = session.speaker_ids
    if jobs <= 1:
        return {sid: transcribe_speaker(session, sid, model, strategy, chunk_s) for sid in ids}
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = pool.map(lambda sid: transcribe_speaker(session, sid, model, strategy, chunk_s), ids)
        return dict(zip(ids, results))


def hypotheses_to_json(session_id: str, hyps: dict[str, SpeakerHypothesis]) -> dict:
    return {"session_id": session_id, "speakers": {sid: h.to_dict() for sid, h in hyps.items()}}
