"""JSON manifests: a top-level list of sessions with feature files referenced
by paths relative to the manifest.

Session object::

    {"session_id": str, "duration_s": float, "mixed_audio": path,
     "gold_groups": {speaker_id: int} | null,
     "speakers": [{"speaker_id": str, "audio": path | null,
                   "video_tracks": [{"start_s", "end_s", "features": path}],
                   "transcript": [str], "activity": [[start_s, end_s]],
                   "asd_segments": [[start_s, end_s]] | null}]}
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any

from .features import FeatureFileError, read_features, write_features
from .types import FeatureSequence, Session, SpeakerRecord, VideoTrack


class ManifestError(ValueError):
    """Schema violation or unresolvable reference in a manifest."""


def _require(obj: dict, key: str, where: str, types: type | tuple[type, ...]) -> Any:
    if not isinstance(obj, dict):
        raise ManifestError(f"{where}: expected an object")
    if key not in obj:
        raise ManifestError(f"{where}.{key}: missing field")
    val = obj[key]
    if not isinstance(val, types) or isinstance(val, bool) and bool not in _as_tuple(types):
        raise ManifestError(f"{where}.{key}: wrong type {type(val).__name__}")
    return val


def _as_tuple(t: type | tuple[type, ...]) -> tuple[type, ...]:
    return t if isinstance(t, tuple) else (t,)


def _intervals(raw: Any, where: str) -> list[tuple[float, float]]:
    if not isinstance(raw, list):
        raise ManifestError(f"{where}: expected a list of [start_s, end_s]")
    out = []
    for i, iv in enumerate(raw):
        if (
            not isinstance(iv, list)
            or len(iv) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in iv)
        ):
            raise ManifestError(f"{where}[{i}]: expected [start_s, end_s]")
        s, e = float(iv[0]), float(iv[1])
        if not e > s:
            raise ManifestError(f"{where}[{i}]: end_s must exceed start_s")
        out.append((s, e))
    return out


class _FeatureLoader:
    def __init__(self, root: Path):
        self.root = root

    def __call__(self, rel: str, where: str, kind: str) -> FeatureSequence:
        path = self.root / rel
        if not path.is_file():
            raise ManifestError(f"{where}: dangling feature reference {rel!r}")
        try:
            seq = read_features(path)
        except FeatureFileError as exc:
            raise ManifestError(f"{where}: unreadable feature file {rel!r}: {exc}") from exc
        if seq.kind != kind:
            raise ManifestError(f"{where}: expected {kind} features, file holds {seq.kind}")
        return seq


def _parse_speaker(raw: dict, where: str, load: _FeatureLoader) -> SpeakerRecord:
    spk_id = _require(raw, "speaker_id", where, str)
    audio_ref = raw.get("audio")
    if audio_ref is not None and not isinstance(audio_ref, str):
        raise ManifestError(f"{where}.audio: expected path or null")
    tracks = []
    prev_end = float("-inf")
    for i, tr in enumerate(_require(raw, "video_tracks", where, list)):
        tw = f"{where}.video_tracks[{i}]"
        s = float(_require(tr, "start_s", tw, (int, float)))
        e = float(_require(tr, "end_s", tw, (int, float)))
        if not e > s:
            raise ManifestError(f"{tw}.end_s: end_s must exceed start_s")
        if s < prev_end:
            raise ManifestError(f"{tw}.start_s: tracks must be sorted and disjoint")
        prev_end = e
        tracks.append(VideoTrack(s, e, load(_require(tr, "features", tw, str), f"{tw}.features", "visual")))
    transcript = _require(raw, "transcript", where, list)
    if not all(isinstance(w, str) for w in transcript):
        raise ManifestError(f"{where}.transcript: expected a list of strings")
    asd_raw = raw.get("asd_segments")
    return SpeakerRecord(
        speaker_id=spk_id,
        audio=load(audio_ref, f"{where}.audio", "acoustic") if audio_ref is not None else None,
        video_tracks=tracks,
        transcript=list(transcript),
        activity=_intervals(_require(raw, "activity", where, list), f"{where}.activity"),
        asd_segments=None if asd_raw is None else _intervals(asd_raw, f"{where}.asd_segments"),
    )


def parse_manifest(doc: Any, root: str | Path) -> list[Session]:
    load = _FeatureLoader(Path(root))
    if not isinstance(doc, list):
        raise ManifestError("manifest: top level must be a list of sessions")
    sessions = []
    for n, raw in enumerate(doc):
        where = f"sessions[{n}]"
        sid = _require(raw, "session_id", where, str)
        speakers = [
            _parse_speaker(s, f"{where}.speakers[{k}]", load)
            for k, s in enumerate(_require(raw, "speakers", where, list))
        ]
        gold = raw.get("gold_groups")
        if gold is not None:
            if not isinstance(gold, dict) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in gold.values()
            ):
                raise ManifestError(f"{where}.gold_groups: expected mapping speaker_id -> int")
            gold = dict(gold)
        session = Session(
            session_id=sid,
            speakers=speakers,
            mixed_audio=load(_require(raw, "mixed_audio", where, str), f"{where}.mixed_audio", "acoustic"),
            duration_s=float(_require(raw, "duration_s", where, (int, float))),
            gold_groups=gold,
        )
        try:
            session.validate()
        except ValueError as exc:
            raise ManifestError(f"{where}: {exc}") from exc
        sessions.append(session)
    return sessions


def load_manifest(path: str | Path) -> list[Session]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path}: invalid JSON: {exc}") from exc
    return parse_manifest(doc, path.parent)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def save_manifest(sessions: list[Session], path: str | Path, feature_dir: str = "features") -> None:
    """Write ``sessions`` to ``path`` plus one ``.avts`` file per feature sequence."""
    path = Path(path)
    root = path.parent
    (root / feature_dir).mkdir(parents=True, exist_ok=True)

    def put(seq: FeatureSequence, name: str) -> str:
        rel = f"{feature_dir}/{_safe(name)}.avts"
        write_features(root / rel, seq)
        return rel

    doc = []
    for si, sess in enumerate(sessions):
        prefix = f"{si:05d}_{sess.session_id}"
        speakers = []
        for spk in sess.speakers:
            sp = f"{prefix}_{spk.speaker_id}"
            speakers.append(
                {
                    "speaker_id": spk.speaker_id,
                    "audio": None if spk.audio is None else put(spk.audio, f"{sp}_audio"),
                    "video_tracks": [
                        {"start_s": t.start_s, "end_s": t.end_s, "features": put(t.features, f"{sp}_video{k}")}
                        for k, t in enumerate(spk.video_tracks)
                    ],
                    "transcript": list(spk.transcript),
                    "activity": [[s, e] for s, e in spk.activity],
                    "asd_segments": None if spk.asd_segments is None else [[s, e] for s, e in spk.asd_segments],
                }
            )
        doc.append(
            {
                "session_id": sess.session_id,
                "duration_s": sess.duration_s,
                "mixed_audio": put(sess.mixed_audio, f"{prefix}_mix"),
                "gold_groups": sess.gold_groups,
                "speakers": speakers,
            }
        )
    path.write_text(json.dumps(doc, indent=1))
