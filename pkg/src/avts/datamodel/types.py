"""Core value types: feature sequences, speakers, sessions and training examples."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

ACOUSTIC_RATE_HZ = 12.5
VISUAL_RATE_HZ = 25.0

FeatureKind = Literal["acoustic", "visual"]
Interval = tuple[float, float]


@dataclass(eq=False)
class FeatureSequence:
    """A ``[frames x dim]`` float32 matrix sampled at ``rate_hz``."""

    data: np.ndarray
    rate_hz: float
    kind: FeatureKind

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"feature data must be 2-D, got shape {self.data.shape}")
        if self.data.shape[1] < 1:
            raise ValueError("feature dim must be positive")
        if self.kind not in ("acoustic", "visual"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")

    @property
    def frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    @property
    def duration_s(self) -> float:
        return self.frames / self.rate_hz

    def slice_frames(self, start: int, end: int) -> FeatureSequence:
        return FeatureSequence(self.data[start:end].copy(), self.rate_hz, self.kind)

    def with_data(self, data: np.ndarray) -> FeatureSequence:
        return FeatureSequence(data, self.rate_hz, self.kind)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.rate_hz == other.rate_hz
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self) -> str:
        return f"FeatureSequence(kind={self.kind}, rate_hz={self.rate_hz}, shape={self.data.shape})"


@dataclass(eq=True)
class VideoTrack:
    """A contiguous face track; regions between tracks have no face."""

    start_s: float
    end_s: float
    features: FeatureSequence


@dataclass
class SpeakerRecord:
    speaker_id: str
    audio: FeatureSequence | None = None
    video_tracks: list[VideoTrack] = field(default_factory=list)
    transcript: list[str] = field(default_factory=list)
    activity: list[Interval] = field(default_factory=list)
    asd_segments: list[Interval] | None = None

    def validate(self) -> None:
        prev_end = -np.inf
        for i, tr in enumerate(self.video_tracks):
            if not tr.end_s > tr.start_s:
                raise ValueError(f"speaker {self.speaker_id}: video_tracks[{i}] has end_s <= start_s")
            if tr.start_s < prev_end:
                raise ValueError(f"speaker {self.speaker_id}: video_tracks[{i}] overlaps or is unsorted")
            if tr.features.kind != "visual":
                raise ValueError(f"speaker {self.speaker_id}: video_tracks[{i}] is not visual")
            prev_end = tr.end_s
        for name in ("activity", "asd_segments"):
            for i, (s, e) in enumerate(getattr(self, name) or []):
                if not e > s:
                    raise ValueError(f"speaker {self.speaker_id}: {name}[{i}] has end <= start")


@dataclass
class Session:
    session_id: str
    speakers: list[SpeakerRecord]
    mixed_audio: FeatureSequence
    duration_s: float
    gold_groups: dict[str, int] | None = None

    def speaker(self, speaker_id: str) -> SpeakerRecord:
        for spk in self.speakers:
            if spk.speaker_id == speaker_id:
                return spk
        raise KeyError(f"session {self.session_id} has no speaker {speaker_id!r}")

    @property
    def speaker_ids(self) -> list[str]:
        return [s.speaker_id for s in self.speakers]

    def validate(self) -> None:
        ids = self.speaker_ids
        if len(set(ids)) != len(ids):
            raise ValueError(f"session {self.session_id}: duplicate speaker ids")
        tol = 1e-6
        for spk in self.speakers:
            spk.validate()
            spans = [(t.start_s, t.end_s) for t in spk.video_tracks]
            spans += list(spk.activity) + list(spk.asd_segments or [])
            for s, e in spans:
                if s < -tol or e > self.duration_s + tol:
                    raise ValueError(
                        f"session {self.session_id}: speaker {spk.speaker_id} timeline "
                        f"[{s}, {e}) exceeds duration {self.duration_s}"
                    )
        if self.gold_groups is not None and set(self.gold_groups) != set(ids):
            raise ValueError(f"session {self.session_id}: gold_groups must cover every speaker exactly once")


@dataclass(eq=False)
class TargetSpeakerExample:
    """One training item: mixture audio, target video, target token ids."""

    audio: FeatureSequence
    video: FeatureSequence
    tokens: list[int]
    speaker_id: str = ""
    source_id: str = ""

    @property
    def is_silent(self) -> bool:
        return len(self.tokens) == 0
