"""Staged training: per-stage frozen parameter groups, per-group learning-rate
multipliers, AdamW with decoupled weight decay and a Noam schedule."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, augment_pair
from .datamodel.types import ACOUSTIC_RATE_HZ, TargetSpeakerExample
from .model import PARAM_GROUPS, AVTSModel, load_checkpoint, save_checkpoint
from .transducer import batch_nll

log = logging.getLogger(__name__)

# Values reported for the full-scale system; toy configs override them.
FULL_SCALE_DEFAULTS = {
    "peak_lr": 2.5e-5,
    "acoustic_encoder_multiplier": 0.2,
    "warmup_steps": 10_000,
    "weight_decay": 1e-2,
    "finetune_lr_factor": 0.5,
    "segment_s": 50.0,
}


def noam_lr(step: int, peak_lr: float, warmup: int) -> float:
    """Linear warm-up to ``peak_lr`` at ``step == warmup``, then ``1/sqrt(step)`` decay."""
    if step < 1:
        raise ValueError("step must be >= 1")
    if warmup < 1:
        raise ValueError("warmup must be >= 1")
    return peak_lr * min(step / warmup, math.sqrt(warmup / step))


@dataclass
class StageConfig:
    name: str
    data: list[str]
    steps: int
    peak_lr: float
    frozen: list[str] = field(default_factory=list)
    lr_multipliers: dict[str, float] = field(default_factory=dict)
    audio_only: bool = False
    zero_audio: bool = False
    resume_best: bool = False
    dev: str | None = None

    def validate(self) -> None:
        unknown = [g for g in list(self.frozen) + list(self.lr_multipliers) if g not in PARAM_GROUPS]
        if unknown:
            raise ValueError(f"stage {self.name}: unknown parameter group(s) {unknown}")
        if any(m <= 0 for m in self.lr_multipliers.values()):
            raise ValueError(f"stage {self.name}: lr multipliers must be > 0")
        if self.steps < 0 or self.peak_lr <= 0:
            raise ValueError(f"stage {self.name}: need steps >= 0 and peak_lr > 0")
        if not self.data:
            raise ValueError(f"stage {self.name}: no data selected")


@dataclass
class TrainConfig:
    stages: list[StageConfig]
    warmup_steps: int = FULL_SCALE_DEFAULTS["warmup_steps"]
    weight_decay: float = FULL_SCALE_DEFAULTS["weight_decay"]
    segment_s: float = FULL_SCALE_DEFAULTS["segment_s"]
    batch_size: int = 16
    seed: int = 0
    checkpoint_every: int = 0  # 0: only at stage end
    log_every: int = 50
    frames_per_token: int = 2
    augment: AugmentConfig | None = None
    dtype: str = "float32"

    def validate(self) -> None:
        if self.segment_s <= 0:
            raise ValueError("segment_s must be > 0")
        if self.batch_size < 1 or self.warmup_steps < 1:
            raise ValueError("batch_size and warmup_steps must be >= 1")
        for st in self.stages:
            st.validate()

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        stages = []
        for s in d.pop("stages"):
            s = dict(s)
            if isinstance(s.get("data"), str):
                s["data"] = [s["data"]]
            stages.append(StageConfig(**s))
        aug = d.pop("augment", None)
        cfg = cls(stages=stages, augment=AugmentConfig.from_dict(aug) if aug is not None else None, **d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


@dataclass
class Batch:
    audio: torch.Tensor
    a_lens: torch.Tensor
    video: torch.Tensor
    v_lens: torch.Tensor
    targets: torch.Tensor
    u_lens: torch.Tensor


def sample_segment(ex: TargetSpeakerExample, segment_s: float, fpt: int, rng: np.random.Generator) -> TargetSpeakerExample:
    """Random token-aligned window of at most ``segment_s`` seconds."""
    if ex.audio.duration_s <= segment_s:
        return ex
    seg_frames = max(fpt, int(segment_s * ACOUSTIC_RATE_HZ) // fpt * fpt)
    if ex.tokens:
        n_tok = seg_frames // fpt
        k = int(rng.integers(0, len(ex.tokens) - n_tok + 1))
        start, tokens = k * fpt, ex.tokens[k : k + n_tok]
    else:
        start, tokens = int(rng.integers(0, ex.audio.frames - seg_frames + 1)), []
    return TargetSpeakerExample(
        audio=ex.audio.slice_frames(start, start + seg_frames),
        video=ex.video.slice_frames(2 * start, 2 * (start + seg_frames)),
        tokens=list(tokens),
        speaker_id=ex.speaker_id,
        source_id=ex.source_id,
    )


def collate(
    examples: list[TargetSpeakerExample],
    dtype: torch.dtype = torch.float32,
    augment: AugmentConfig | None = None,
    rng: np.random.Generator | None = None,
    zero_audio: bool = False,
) -> Batch:
    pairs = []
    for ex in examples:
        a, v = ex.audio, ex.video
        if augment is not None and rng is not None:
            a, v = augment_pair(a, v, augment, rng)
        pairs.append((a.data, v.data))
    B = len(examples)
    na = max(p[0].shape[0] for p in pairs)
    nv = max(p[1].shape[0] for p in pairs)
    U = max(len(ex.tokens) for ex in examples)
    audio = np.zeros((B, na, pairs[0][0].shape[1]), dtype=np.float32)
    video = np.zeros((B, nv, pairs[0][1].shape[1]), dtype=np.float32)
    targets = np.ones((B, U), dtype=np.int64)
    for i, ((a, v), ex) in enumerate(zip(pairs, examples)):
        if not zero_audio:
            audio[i, : a.shape[0]] = a
        video[i, : v.shape[0]] = v
        targets[i, : len(ex.tokens)] = ex.tokens
    return Batch(
        audio=torch.from_numpy(audio).to(dtype),
        a_lens=torch.tensor([p[0].shape[0] for p in pairs]),
        video=torch.from_numpy(video).to(dtype),
        v_lens=torch.tensor([p[1].shape[0] for p in pairs]),
        targets=torch.from_numpy(targets),
        u_lens=torch.tensor([len(ex.tokens) for ex in examples]),
    )


def batch_loss(model: AVTSModel, batch: Batch, fusion: bool = True) -> torch.Tensor:
    """Per-item transducer NLL ``[B]``."""
    enc = model.encoder(batch.audio, batch.video, batch.v_lens, fusion=fusion)
    return batch_nll(enc, batch.a_lens, batch.targets, batch.u_lens, model.head)


@torch.no_grad()
def evaluate_loss(model: AVTSModel, examples: list[TargetSpeakerExample], fusion: bool = True, batch_size: int = 64) -> float:
    """Mean per-example NLL in eval mode."""
    was = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    total = 0.0
    for i in range(0, len(examples), batch_size):
        total += float(batch_loss(model, collate(examples[i : i + batch_size], dtype), fusion).sum())
    model.train(was)
    return total / max(len(examples), 1)


def select_checkpoint(metric_log: list[dict]) -> str:
    """Checkpoint with the lowest dev loss; ties go to the latest entry."""
    best = None
    for rec in metric_log:
        if rec.get("checkpoint") is None or rec.get("dev_loss") is None:
            continue
        if best is None or rec["dev_loss"] <= best["dev_loss"]:
            best = rec
    if best is None:
        raise ValueError("metric log holds no checkpoints")
    return best["checkpoint"]


@dataclass
class TrainResult:
    metric_log: list[dict]
    best_checkpoint: str | None
    final_train_loss: float


def _resolve_data(names: list[str], corpora: dict[str, list[TargetSpeakerExample]]) -> list[TargetSpeakerExample]:
    out: list[TargetSpeakerExample] = []
    for n in names:
        if n not in corpora:
            raise KeyError(f"unknown corpus {n!r}; available: {sorted(corpora)}")
        out.extend(corpora[n])
    if not out:
        raise ValueError(f"stage data {names} is empty")
    return out


def train(
    model: AVTSModel,
    cfg: TrainConfig,
    corpora: dict[str, list[TargetSpeakerExample]],
    out_dir: str | Path | None = None,
) -> TrainResult:
    cfg.validate()
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 3])
    dtype = next(model.parameters()).dtype
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "metrics.jsonl"
        log_path.write_text("")
    metric_log: list[dict] = []
    global_step = 0
    last_loss = float("nan")

    def record(rec: dict) -> None:
        metric_log.append(rec)
        if out is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")

    for stage in cfg.stages:
        if stage.resume_best and any(r.get("checkpoint") for r in metric_log):
            best, _ = load_checkpoint(out / select_checkpoint(metric_log)) if out is not None else (None, None)
            if best is not None:
                model.load_state_dict(best.state_dict())
        data = _resolve_data(stage.data, corpora)
        dev = corpora.get(stage.dev) if stage.dev else None
        fusion = not stage.audio_only
        groups = model.param_groups()
        opt_groups = []
        for g in PARAM_GROUPS:
            params = [p for _, p in groups[g]]
            frozen = g in stage.frozen or (stage.audio_only and g in ("adapters", "visual_encoder"))
            for p in params:
                p.requires_grad_(not frozen)
            if not frozen and params:
                opt_groups.append({"params": params, "lr_mult": stage.lr_multipliers.get(g, 1.0), "name": g})
        model.train()
        opt = torch.optim.AdamW(opt_groups, lr=stage.peak_lr, weight_decay=cfg.weight_decay) if opt_groups else None
        order = rng.permutation(len(data))
        cursor = 0
        running = []
        for step in range(1, stage.steps + 1):
            global_step += 1
            idx = []
            while len(idx) < cfg.batch_size:
                if cursor == len(order):
                    order, cursor = rng.permutation(len(data)), 0
                idx.append(int(order[cursor]))
                cursor += 1
            exs = [sample_segment(data[i], cfg.segment_s, cfg.frames_per_token, rng) for i in idx]
            batch = collate(exs, dtype, cfg.augment, rng, stage.zero_audio)
            lr = noam_lr(step, stage.peak_lr, cfg.warmup_steps)
            loss = batch_loss(model, batch, fusion).mean()
            if opt is not None:
                for pg in opt.param_groups:
                    pg["lr"] = lr * pg["lr_mult"]
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
            last_loss = loss.item()
            running.append(last_loss)
            is_ckpt = step == stage.steps or (cfg.checkpoint_every and step % cfg.checkpoint_every == 0)
            if is_ckpt or step % cfg.log_every == 0:
                rec = {
                    "stage": stage.name,
                    "step": step,
                    "global_step": global_step,
                    "lr": lr,
                    "train_loss": float(np.mean(running)),
                    "dev_loss": None,
                    "checkpoint": None,
                }
                running = []
                if is_ckpt:
                    if dev:
                        rec["dev_loss"] = evaluate_loss(model, dev, fusion)
                    if out is not None:
                        name = f"ckpt_{stage.name}_{step:06d}.avck"
                        save_checkpoint(out / name, model, {"stage": stage.name, "step": step})
                        rec["checkpoint"] = name
                log.info("stage=%s step=%d lr=%.3g loss=%.4f dev=%s", stage.name, step, lr, rec["train_loss"], rec["dev_loss"])
                record(rec)
        for p in model.parameters():
            p.requires_grad_(True)
    best = None
    if any(r.get("checkpoint") and r.get("dev_loss") is not None for r in metric_log):
        best = select_checkpoint(metric_log)
    return TrainResult(metric_log, best, last_loss)


def toy_train_config(
    steps: tuple[int, int, int] = (600, 2000, 2000),
    peak_lr: float = 3e-3,
    warmup: int = 100,
    batch_size: int = 16,
    seed: int = 0,
) -> TrainConfig:
    """The default desk-scale curriculum.

    0. audio-only recogniser on clean single-speaker speech (stand-in for the
       pre-trained acoustic model);
    1. fusion adapters only, on mixtures; everything else frozen;
    2. adapters plus the acoustic encoder at a 5x smaller learning rate.
    """
    head_and_visual = ["visual_encoder", "predictor", "joiner"]
    return TrainConfig(
        stages=[
            StageConfig("asr_pretrain", ["clean"], steps[0], peak_lr, frozen=["visual_encoder", "adapters"], audio_only=True, dev="clean_dev"),
            StageConfig("adapters", ["mixtures"], steps[1], peak_lr, frozen=head_and_visual + ["acoustic_encoder"], dev="dev"),
            StageConfig(
                "adapters_encoder",
                ["mixtures"],
                steps[2],
                peak_lr,
                frozen=head_and_visual,
                lr_multipliers={"acoustic_encoder": FULL_SCALE_DEFAULTS["acoustic_encoder_multiplier"]},
                dev="dev",
            ),
        ],
        warmup_steps=warmup,
        batch_size=batch_size,
        seed=seed,
        augment=AugmentConfig(mask_rate=0.0),
    )


def audio_only_train_config(
    steps: tuple[int, int] = (600, 4000),
    peak_lr: float = 3e-3,
    warmup: int = 100,
    batch_size: int = 16,
    seed: int = 0,
) -> TrainConfig:
    """Ablation curriculum without visual input: the same clean pre-training,
    then every acoustic parameter trained on mixtures for as many steps as
    the two fusion stages of :func:`toy_train_config` together."""
    return TrainConfig(
        stages=[
            StageConfig("asr_pretrain", ["clean"], steps[0], peak_lr, audio_only=True, dev="clean_dev"),
            StageConfig("mixtures", ["mixtures"], steps[1], peak_lr, audio_only=True, dev="dev"),
        ],
        warmup_steps=warmup,
        batch_size=batch_size,
        seed=seed,
        augment=AugmentConfig(mask_rate=0.0),
    )
