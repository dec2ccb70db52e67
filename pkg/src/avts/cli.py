"""Command-line entry point: simulate, train, transcribe, cluster, score,
pipeline and robustness.

Exit codes: 0 success, 2 configuration error, 3 LLM backend error, 4 data
error. Every failure message is prefixed with the stage that raised it.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import torch
import yaml

from .avfusion import EncoderConfig
from .clustering.llm import LLMBackend, LLMBackendError, make_backend
from .clustering.pipeline import DEFAULT_FALLBACK_TAU, DEFAULT_TAU, ClusterAssignment, cluster_session
from .datamodel.features import FeatureFileError
from .datamodel.manifest import ManifestError, load_manifest, save_manifest
from .datamodel.synthetic import (
    SyntheticCorpusConfig,
    SyntheticWorld,
    generate_synthetic_corpus,
    sample_cocktail_session,
)
from .datamodel.types import Session, TargetSpeakerExample
from .evalmetrics import ScoreReport, robustness_curve, score_session, write_curve
from .longform import InferenceStrategy, hypotheses_to_json, transcribe_session
from .mixsim import SimulationConfig, examples_to_sessions, sessions_to_examples, simulate_mixtures
from .model import AVTSModel, CheckpointError, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, toy_train_config, train

log = logging.getLogger("avts")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_DATA = 0, 2, 3, 4

TRAIN_CLEAN = "train_clean.json"
TRAIN_MIX = "train_mixtures.json"
DEV_MIX = "dev_mixtures.json"
TEST_MIX = "test_mixtures.json"
CONVERSATIONS = "conversations.json"
VOCAB = "vocab.json"


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, code: int, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.code = code


# --------------------------------------------------------------------------- config


@dataclass
class SimulateSection:
    held_out_fraction: float = 0.2
    train_mixtures: int = 2000
    dev_mixtures: int = 100
    test_mixtures: int = 200
    train_silent_fraction: float = 0.1
    test_silent_fraction: float = 0.5
    speaker_weights: dict[int, float] = field(default_factory=lambda: {2: 1.0})
    n_buckets: int = 10
    low_pct: float = 5.0
    conversations: int = 20
    face_gaps: int = 0


@dataclass
class ClusterSection:
    backend: str = "mock"
    mode: str = "pairwise_fallback"
    tau: float = DEFAULT_TAU
    fallback_tau: float = DEFAULT_FALLBACK_TAU
    timelines: str = "reference"
    parallelism: int = 1


@dataclass
class PipelineConfig:
    """Settings for ``transcribe -> cluster -> score``; paths are resolved
    relative to the config file."""

    manifest: str | None = None
    checkpoint: str | None = None
    out_dir: str = "run"
    strategy: str = InferenceStrategy.FULL_LONGFORM.value
    chunk_s: float = 20.0
    cluster: ClusterSection = field(default_factory=ClusterSection)

    def validate(self) -> None:
        if not self.manifest or not Path(self.manifest).is_file():
            raise ConfigError(f"manifest not found: {self.manifest}")
        if not self.checkpoint or not Path(self.checkpoint).is_file():
            raise ConfigError(f"checkpoint not found: {self.checkpoint}")
        InferenceStrategy(self.strategy)
        _check_cluster(self.cluster)


@dataclass
class ProjectConfig:
    seed: int = 0
    threads: int = 1
    corpus: SyntheticCorpusConfig = field(default_factory=lambda: SyntheticCorpusConfig(n_utterances=1500))
    simulate: SimulateSection = field(default_factory=SimulateSection)
    model: dict = field(default_factory=lambda: {"d_a": 32, "d_v": 32, "n_acoustic_layers": 2, "n_visual_layers": 2})
    train: TrainConfig = field(default_factory=toy_train_config)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    robustness: dict = field(default_factory=lambda: {"wer_levels": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6], "seeds": 10})


def _check_cluster(c: ClusterSection) -> None:
    if c.backend not in ("mock", "http"):
        raise ConfigError(f"unknown backend {c.backend!r}")
    if c.mode not in ("pairwise_fallback", "pairwise", "joint", "overlap"):
        raise ConfigError(f"unknown clustering mode {c.mode!r}")
    if c.timelines not in ("reference", "asd"):
        raise ConfigError(f"unknown timeline source {c.timelines!r}")
    if not 0.0 <= c.tau <= 1.0 or not 0.0 <= c.fallback_tau < 1.0:
        raise ConfigError("need tau in [0, 1] and fallback_tau in [0, 1)")


def _section(cls, raw: Any, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def load_config(path: str | Path | None) -> ProjectConfig:
    if path is None:
        return ProjectConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    unknown = set(raw) - {f for f in ProjectConfig.__dataclass_fields__}
    if unknown:
        raise ConfigError(f"{p}: unknown section(s) {sorted(unknown)}")
    cfg = ProjectConfig()
    cfg.seed = int(raw.get("seed", cfg.seed))
    cfg.threads = int(raw.get("threads", cfg.threads))
    try:
        if "corpus" in raw:
            cfg.corpus = SyntheticCorpusConfig.from_dict({"seed": cfg.seed, **(raw["corpus"] or {})})
        else:
            cfg.corpus.seed = cfg.seed
        cfg.simulate = _section(SimulateSection, raw.get("simulate"), "simulate")
        if raw.get("model") is not None:
            cfg.model = dict(raw["model"])
        if raw.get("train") is not None:
            cfg.train = TrainConfig.from_dict({"seed": cfg.seed, **raw["train"]})
        else:
            cfg.train.seed = cfg.seed
        praw = dict(raw.get("pipeline") or {})
        cluster = _section(ClusterSection, praw.pop("cluster", None), "pipeline.cluster")
        cfg.pipeline = _section(PipelineConfig, praw, "pipeline")
        cfg.pipeline.cluster = cluster
        for key in ("manifest", "checkpoint", "out_dir"):
            val = getattr(cfg.pipeline, key)
            if val is not None and not Path(val).is_absolute():
                setattr(cfg.pipeline, key, str(p.parent / val))
        if raw.get("robustness") is not None:
            cfg.robustness.update(raw["robustness"])
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{p}: {exc}") from exc
    _check_cluster(cfg.pipeline.cluster)
    return cfg


# --------------------------------------------------------------------------- helpers


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path: str | Path, what: str) -> Any:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid JSON: {exc}") from exc


def _load_sessions(path: str | Path) -> list[Session]:
    if not Path(path).is_file():
        raise ConfigError(f"manifest not found: {path}")
    return load_manifest(path)


def _load_model(path: str | Path) -> AVTSModel:
    if not Path(path).is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    model, _ = load_checkpoint(path)
    model.eval()
    return model


def _backend(cfg: ClusterSection) -> LLMBackend:
    try:
        return make_backend(cfg.backend)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parallel(fn: Callable, items: list, jobs: int) -> list:
    """Map preserving input order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _hyp_texts(doc: Any) -> dict[str, dict[str, str]]:
    """``{session_id: {speaker_id: text}}`` from a hypotheses file."""
    if not isinstance(doc, list):
        raise DataError("hypotheses file must hold a list of sessions")
    out = {}
    for i, entry in enumerate(doc):
        try:
            out[entry["session_id"]] = {sid: h["text"] for sid, h in entry["speakers"].items()}
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataError(f"hypotheses[{i}]: malformed entry ({exc})") from exc
    return out


def _cluster_groups(doc: Any) -> dict[str, dict[str, int]]:
    if not isinstance(doc, list):
        raise DataError("clusters file must hold a list of sessions")
    out = {}
    for i, entry in enumerate(doc):
        try:
            out[entry["session_id"]] = {s: k for k, grp in enumerate(entry["groups"]) for s in grp}
        except (KeyError, TypeError) as exc:
            raise DataError(f"clusters[{i}]: malformed entry ({exc})") from exc
    return out


# --------------------------------------------------------------------------- stages


def build_datasets(cfg: ProjectConfig) -> tuple[SyntheticWorld, dict[str, list[TargetSpeakerExample]]]:
    """Clean training utterances plus train/dev/test mixtures. Dev and test
    mixtures are built from held-out utterances only."""
    corpus = generate_synthetic_corpus(cfg.corpus)
    world = corpus.world
    sim = cfg.simulate
    n_hold = int(round(sim.held_out_fraction * len(corpus.utterances)))
    train_u = corpus.utterances[: len(corpus.utterances) - n_hold]
    held_u = corpus.utterances[len(corpus.utterances) - n_hold :]
    if not train_u or not held_u:
        raise ConfigError("held_out_fraction leaves an empty split")

    def mixtures(utts, n, silent, seed):
        sc = SimulationConfig(n, dict(sim.speaker_weights), silent, sim.n_buckets, sim.low_pct, seed)
        return simulate_mixtures(utts, world, sc)[1]

    return world, {
        TRAIN_CLEAN: [TargetSpeakerExample(u.acoustic, u.visual, u.tokens, u.speaker_id, u.utt_id) for u in train_u],
        TRAIN_MIX: mixtures(train_u, sim.train_mixtures, sim.train_silent_fraction, cfg.seed + 1),
        DEV_MIX: mixtures(held_u, sim.dev_mixtures, sim.test_silent_fraction, cfg.seed + 3),
        TEST_MIX: mixtures(held_u, sim.test_mixtures, sim.test_silent_fraction, cfg.seed + 2),
    }


def build_conversations(cfg: ProjectConfig, world: SyntheticWorld) -> list[Session]:
    return [
        sample_cocktail_session(
            world, np.random.default_rng([cfg.seed, 7, i]), f"conv{i:03d}", face_gaps=cfg.simulate.face_gaps
        )
        for i in range(cfg.simulate.conversations)
    ]


def run_simulate(cfg: ProjectConfig, out_dir: Path, only_manifest: Path | None = None) -> dict:
    """Write the training, dev and test mixture manifests, the clean
    pre-training manifest and a set of cocktail-party sessions. With
    ``only_manifest`` just the training mixtures are written, to that path."""
    world, sets = build_datasets(cfg)
    vocab_doc = {"words": world.words, "topic_pools": world.cfg.topic_pools}
    if only_manifest is not None:
        exs = sets[TRAIN_MIX]
        save_manifest(examples_to_sessions(exs, world.words), only_manifest, feature_dir=f"features_{only_manifest.stem}")
        _write_json(only_manifest.parent / VOCAB, vocab_doc)
        return {only_manifest.name: len(exs)}
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name, exs in sets.items():
        save_manifest(examples_to_sessions(exs, world.words), out_dir / name, feature_dir=f"features_{Path(name).stem}")
        counts[name] = len(exs)
    conv = build_conversations(cfg, world)
    save_manifest(conv, out_dir / CONVERSATIONS, feature_dir="features_conversations")
    counts[CONVERSATIONS] = len(conv)
    _write_json(out_dir / VOCAB, vocab_doc)
    return counts


def clean_dev_split(clean: list[TargetSpeakerExample]) -> list[TargetSpeakerExample]:
    """Dev set for clean pre-training: the first tenth of the clean data."""
    return clean[: max(1, len(clean) // 10)]


def build_model(cfg: ProjectConfig, vocab: list[str], **overrides: Any) -> AVTSModel:
    """Fresh model from the ``model`` section; ``overrides`` replace encoder settings."""
    enc = {**cfg.model, **overrides}
    d_pred = enc.pop("d_pred", 32)
    d_joint = enc.pop("d_joint", 64)
    enc.setdefault("acoustic_input_dim", cfg.corpus.acoustic_dim)
    enc.setdefault("visual_input_dim", cfg.corpus.visual_dim)
    try:
        enc_cfg = EncoderConfig(**enc)
        enc_cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc
    torch.manual_seed(cfg.seed)
    model = AVTSModel(enc_cfg, vocab, d_pred, d_joint)
    return model.double() if cfg.train.dtype == "float64" else model


def run_train(cfg: ProjectConfig, data_dir: Path, out_dir: Path) -> dict:
    vocab = _read_json(data_dir / VOCAB, "vocabulary")["words"]
    ids = {w: i + 1 for i, w in enumerate(vocab)}
    corpora = {}
    for key, name in (("clean", TRAIN_CLEAN), ("mixtures", TRAIN_MIX), ("dev", DEV_MIX)):
        corpora[key] = sessions_to_examples(_load_sessions(data_dir / name), ids)
    corpora["clean_dev"] = clean_dev_split(corpora["clean"])
    model = build_model(cfg, vocab)
    try:
        result = train(model, cfg.train, corpora, out_dir)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    final = out_dir / "final.avck"
    save_checkpoint(final, model, {"stage": "final"})
    best = out_dir / "best.avck"
    if result.best_checkpoint is not None:
        shutil.copyfile(out_dir / result.best_checkpoint, best)
    else:
        shutil.copyfile(final, best)
    return {"best": result.best_checkpoint, "final_train_loss": result.final_train_loss}


def run_transcribe(sessions: list[Session], model: AVTSModel, strategy: str, chunk_s: float, jobs: int) -> list[dict]:
    def one(sess: Session) -> dict:
        return hypotheses_to_json(sess.session_id, transcribe_session(sess, model, strategy, chunk_s))

    return _parallel(one, sessions, jobs)


def run_cluster(
    sessions: list[Session],
    hyps: dict[str, dict[str, str]] | None,
    backend: LLMBackend,
    c: ClusterSection,
    jobs: int,
) -> list[dict]:
    def one(sess: Session) -> dict:
        if hyps is None:
            texts = {s.speaker_id: " ".join(s.transcript) for s in sess.speakers}
        else:
            if sess.session_id not in hyps:
                raise DataError(f"no hypotheses for session {sess.session_id}")
            texts = hyps[sess.session_id]
        a: ClusterAssignment = cluster_session(
            sess, texts, backend, c.mode, c.timelines, c.tau, c.fallback_tau, c.parallelism
        )
        return a.to_json(sess.session_id)

    return _parallel(one, sessions, jobs)


def run_score(sessions: list[Session], hyps: dict[str, dict[str, str]], groups: dict[str, dict[str, int]]) -> ScoreReport:
    scores = []
    for sess in sessions:
        sid = sess.session_id
        if sid not in hyps or sid not in groups:
            raise DataError(f"session {sid} lacks hypotheses or clusters")
        if sess.gold_groups is None:
            raise DataError(f"session {sid} has no gold groups")
        refs = {s.speaker_id: s.transcript for s in sess.speakers}
        try:
            scores.append(score_session(sid, refs, hyps[sid], groups[sid], sess.gold_groups))
        except (KeyError, ValueError) as exc:
            raise DataError(f"session {sid}: {exc}") from exc
    return ScoreReport(scores)


def report_json(report: ScoreReport, timestamp: bool = True) -> dict:
    doc = report.to_dict()
    if timestamp:
        doc["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return doc


def run_pipeline(pc: PipelineConfig, jobs: int = 1) -> ScoreReport:
    """Transcribe, cluster and score every session; writes hypotheses.json,
    clusters.json and report.json into ``pc.out_dir``."""
    pc.validate()
    out = Path(pc.out_dir)
    with _stage("transcribe"):
        sessions = _load_sessions(pc.manifest)
        model = _load_model(pc.checkpoint)
        hyp_doc = run_transcribe(sessions, model, pc.strategy, pc.chunk_s, jobs)
        _write_json(out / "hypotheses.json", hyp_doc)
    hyps = _hyp_texts(hyp_doc)
    with _stage("cluster"):
        backend = _backend(pc.cluster)
        clu_doc = run_cluster(sessions, hyps, backend, pc.cluster, jobs)
        _write_json(out / "clusters.json", clu_doc)
    with _stage("score"):
        report = run_score(sessions, hyps, _cluster_groups(clu_doc))
        _write_json(out / "report.json", report_json(report))
    return report


class _stage:
    """Context manager translating exceptions into stage-tagged exit codes."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self) -> _stage:
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc is None or isinstance(exc, StageError):
            return False
        if isinstance(exc, (ConfigError, FileNotFoundError)):
            raise StageError(self.name, EXIT_CONFIG, str(exc)) from exc
        if isinstance(exc, LLMBackendError):
            raise StageError(self.name, EXIT_BACKEND, str(exc)) from exc
        if isinstance(exc, (DataError, ManifestError, FeatureFileError, CheckpointError, KeyError)):
            raise StageError(self.name, EXIT_DATA, str(exc)) from exc
        if isinstance(exc, ValueError):
            raise StageError(self.name, EXIT_CONFIG, str(exc)) from exc
        return False


# --------------------------------------------------------------------------- argparse


def _add_cluster_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("mock", "http"))
    p.add_argument("--mode", choices=("pairwise_fallback", "pairwise", "joint", "overlap"))
    p.add_argument("--timelines", choices=("reference", "asd"))
    p.add_argument("--tau", type=float)
    p.add_argument("--fallback-tau", type=float)


def _apply_cluster_flags(c: ClusterSection, args: argparse.Namespace) -> ClusterSection:
    c = ClusterSection(**asdict(c))
    for key in ("backend", "mode", "timelines", "tau", "fallback_tau"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(c, key, val)
    _check_cluster(c)
    return c


def _parse_weights(text: str) -> dict[int, float]:
    try:
        pairs = [item.split(":") for item in text.split(",") if item.strip()]
        weights = {int(k): float(v) for k, v in pairs}
    except ValueError as exc:
        raise ConfigError(f"--speakers: expected k:w[,k:w...], got {text!r}") from exc
    if not weights or any(not 2 <= k <= 4 or w < 0 for k, w in weights.items()):
        raise ConfigError("--speakers: counts must lie in 2..4 with non-negative weights")
    return weights


def _apply_simulate_flags(cfg: ProjectConfig, args: argparse.Namespace) -> None:
    if args.corpus_config:
        p = Path(args.corpus_config)
        if not p.is_file():
            raise ConfigError(f"corpus config not found: {p}")
        raw = yaml.safe_load(p.read_text()) or {}
        cfg.corpus = SyntheticCorpusConfig.from_dict({"seed": cfg.seed, **raw})
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.corpus.seed = args.seed
    if args.n_mixtures is not None:
        cfg.simulate.train_mixtures = args.n_mixtures
    if args.speakers:
        cfg.simulate.speaker_weights = _parse_weights(args.speakers)
    if args.silent_fraction is not None:
        if not 0.0 <= args.silent_fraction <= 1.0:
            raise ConfigError("--silent-fraction must lie in [0, 1]")
        cfg.simulate.train_silent_fraction = args.silent_fraction


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avts", description="Audio-visual target-speaker ASR and conversation clustering.")
    ap.add_argument("--config", help="YAML config file")
    ap.add_argument("--jobs", type=int, default=1, help="sessions processed in parallel")
    ap.add_argument("--threads", type=int, help="torch intra-op threads (1 for bit-exact reruns)")
    ap.add_argument("-v", "--verbose", action="store_true")
    # the shared flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate synthetic corpora and manifests")
    out = p.add_mutually_exclusive_group(required=True)
    out.add_argument("--out-dir", help="write every manifest into this directory")
    out.add_argument("--out-manifest", help="write only the training mixtures manifest")
    p.add_argument("--corpus-config", help="YAML mapping of synthetic corpus settings")
    p.add_argument("--n-mixtures", type=int)
    p.add_argument("--speakers", help="speaker-count weights, e.g. 2:1,3:1,4:0.5")
    p.add_argument("--silent-fraction", type=float)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", parents=[common], help="run the training curriculum")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("transcribe", parents=[common], help="decode every speaker of every session")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--strategy", choices=[s.value for s in InferenceStrategy])
    p.add_argument("--chunk-s", type=float)
    p.add_argument("--out", default="hypotheses.json")

    p = sub.add_parser("cluster", parents=[common], help="group speakers into conversations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--hypotheses", help="hypotheses.json; reference transcripts when omitted")
    _add_cluster_flags(p)
    p.add_argument("--out", default="clusters.json")

    p = sub.add_parser("score", parents=[common], help="WER, clustering F1 and joint score")
    p.add_argument("--manifest", required=True)
    p.add_argument("--hypotheses", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--out", default="report.json")
    p.add_argument("--no-timestamp", action="store_true")

    p = sub.add_parser("pipeline", parents=[common], help="transcribe, cluster and score")
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--out-dir")
    p.add_argument("--strategy", choices=[s.value for s in InferenceStrategy])
    _add_cluster_flags(p)

    p = sub.add_parser("robustness", parents=[common], help="clustering F1 under injected transcription errors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--levels", type=float, nargs="+")
    p.add_argument("--seeds", type=int)
    _add_cluster_flags(p)
    return ap


def _dispatch(args: argparse.Namespace) -> dict:
    with _stage("config"):
        cfg = load_config(args.config)
    threads = args.threads if args.threads is not None else cfg.threads
    torch.set_num_threads(max(1, threads))
    cmd = args.command

    if cmd == "simulate":
        with _stage("config"):
            _apply_simulate_flags(cfg, args)
        with _stage("simulate"):
            if args.out_manifest:
                return run_simulate(cfg, Path(args.out_manifest).parent, Path(args.out_manifest))
            return run_simulate(cfg, Path(args.out_dir))

    if cmd == "train":
        with _stage("train"):
            return run_train(cfg, Path(args.data_dir), Path(args.out_dir))

    if cmd == "transcribe":
        with _stage("transcribe"):
            sessions = _load_sessions(args.manifest)
            model = _load_model(args.checkpoint)
            strategy = args.strategy or cfg.pipeline.strategy
            chunk_s = args.chunk_s if args.chunk_s is not None else cfg.pipeline.chunk_s
            doc = run_transcribe(sessions, model, strategy, chunk_s, args.jobs)
            _write_json(Path(args.out), doc)
            return {"sessions": len(doc)}

    if cmd == "cluster":
        with _stage("cluster"):
            c = _apply_cluster_flags(cfg.pipeline.cluster, args)
            sessions = _load_sessions(args.manifest)
            hyps = _hyp_texts(_read_json(args.hypotheses, "hypotheses")) if args.hypotheses else None
            doc = run_cluster(sessions, hyps, _backend(c), c, args.jobs)
            _write_json(Path(args.out), doc)
            return {"sessions": len(doc)}

    if cmd == "score":
        with _stage("score"):
            sessions = _load_sessions(args.manifest)
            report = run_score(
                sessions,
                _hyp_texts(_read_json(args.hypotheses, "hypotheses")),
                _cluster_groups(_read_json(args.clusters, "clusters")),
            )
            doc = report_json(report, timestamp=not args.no_timestamp)
            _write_json(Path(args.out), doc)
            return doc["aggregate"]

    if cmd == "pipeline":
        pc = cfg.pipeline
        for key in ("manifest", "checkpoint", "out_dir", "strategy"):
            if getattr(args, key) is not None:
                setattr(pc, key, getattr(args, key))
        with _stage("config"):
            pc.cluster = _apply_cluster_flags(pc.cluster, args)
            pc.validate()
        return report_json(run_pipeline(pc, args.jobs), timestamp=False)["aggregate"]

    if cmd == "robustness":
        with _stage("robustness"):
            c = _apply_cluster_flags(cfg.pipeline.cluster, args)
            sessions = _load_sessions(args.manifest)
            levels = args.levels or cfg.robustness["wer_levels"]
            n_seeds = args.seeds or int(cfg.robustness["seeds"])
            backend = _backend(c)
            points = robustness_curve(sessions, levels, backend, range(n_seeds), c.mode, c.timelines)
            out = Path(args.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_curve(points, out / "robustness.json", out / "robustness.png", label=backend.kind)
            return {"levels": [p.wer_level for p in points], "f1": [round(p.mean_f1, 4) for p in points]}

    raise StageError("cli", EXIT_CONFIG, f"unknown command {cmd}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        summary = _dispatch(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
