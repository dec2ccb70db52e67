"""Full target-speaker model (fused encoder + transducer head) and its checkpoint format.

Checkpoint layout (little-endian)::

    magic        4 bytes  b"AVCK"
    version      u32      1
    header_len   u64
    header       UTF-8 JSON: {"config": {...}, "tensors": [{"name", "dtype", "shape", "offset"}]}
    payload      concatenated raw tensors, row-major

Adapter tensors are named ``<symbol>.<layer>``, e.g. ``alpha_logits.1``,
``W_gate.2``, ``conv.weight.1``; everything else keeps its module path.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import Tensor, nn

from .avfusion import AVEncoder, EncoderConfig, check_rates
from .datamodel.types import FeatureSequence
from .transducer import TransducerHead, greedy_decode

PARAM_GROUPS = ("acoustic_encoder", "visual_encoder", "adapters", "predictor", "joiner")
_GROUP_PREFIX = {
    "acoustic_encoder": ("encoder.acoustic_in.", "encoder.acoustic_layers."),
    "visual_encoder": ("encoder.visual_layers.",),
    "adapters": ("encoder.adapters.",),
    "predictor": ("head.embed.", "head.pred."),
    "joiner": ("head.enc_proj.", "head.pred_proj.", "head.out."),
}

CKPT_MAGIC = b"AVCK"
CKPT_VERSION = 1
_DTYPES = {torch.float32: ("f32", "<f4"), torch.float64: ("f64", "<f8")}
_DTYPE_NAMES = {"f32": (torch.float32, "<f4"), "f64": (torch.float64, "<f8")}


class CheckpointError(ValueError):
    pass


class AVTSModel(nn.Module):
    def __init__(self, enc_cfg: EncoderConfig, vocab: list[str], d_pred: int = 32, d_joint: int = 64):
        super().__init__()
        self.enc_cfg = enc_cfg
        self.vocab = list(vocab)
        self.d_pred = d_pred
        self.d_joint = d_joint
        self.encoder = AVEncoder(enc_cfg)
        self.head = TransducerHead(len(vocab), enc_cfg.d_a, d_pred, d_joint)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def config(self) -> dict:
        return {"encoder": self.enc_cfg.to_dict(), "vocab": self.vocab, "d_pred": self.d_pred, "d_joint": self.d_joint}

    @classmethod
    def from_config(cls, cfg: dict) -> AVTSModel:
        return cls(EncoderConfig(**cfg["encoder"]), cfg["vocab"], cfg.get("d_pred", 32), cfg.get("d_joint", 64))

    def group_of(self, name: str) -> str:
        for group, prefixes in _GROUP_PREFIX.items():
            if name.startswith(prefixes):
                return group
        raise KeyError(f"parameter {name} belongs to no group")

    def param_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups: dict[str, list[tuple[str, nn.Parameter]]] = {g: [] for g in PARAM_GROUPS}
        for name, p in self.named_parameters():
            groups[self.group_of(name)].append((name, p))
        return groups

    def _tensor(self, seq: FeatureSequence) -> Tensor:
        dtype = next(self.parameters()).dtype
        return torch.as_tensor(seq.data, dtype=dtype)[None]

    def encode(
        self,
        audio: FeatureSequence,
        video: FeatureSequence | None = None,
        fusion: bool = True,
        stack: list[Tensor] | None = None,
    ) -> Tensor:
        """Single-item encoder output ``[N_a, d_a]``."""
        if audio.kind != "acoustic":
            raise ValueError("audio must be acoustic features")
        v = None
        if fusion and stack is None and video is not None:
            if video.kind != "visual":
                raise ValueError("video must be visual features")
            check_rates(audio.frames, video.frames)
            v = self._tensor(video)
        elif stack is not None:
            check_rates(audio.frames, stack[0].shape[-2])
        return self.encoder(self._tensor(audio), v, fusion=fusion, stack=stack)[0]

    @torch.no_grad()
    def transcribe(
        self,
        audio: FeatureSequence,
        video: FeatureSequence | None = None,
        fusion: bool = True,
        stack: list[Tensor] | None = None,
    ) -> list[int]:
        was_training = self.training
        self.eval()
        try:
            enc = self.encode(audio, video, fusion, stack)
            return greedy_decode(enc, self.head)
        finally:
            self.train(was_training)

    def ids_to_words(self, ids: list[int]) -> list[str]:
        return [self.vocab[i - 1] for i in ids]


def _export_name(name: str) -> str:
    if name.startswith("encoder.adapters."):
        layer, rest = name[len("encoder.adapters.") :].split(".", 1)
        return f"{rest}.{layer}"
    return name


def _import_name(name: str, adapter_layers: set[str]) -> str:
    head, _, last = name.rpartition(".")
    if last in adapter_layers and head and not name.startswith(("encoder.", "head.")):
        return f"encoder.adapters.{last}.{head}"
    return name


def encode_checkpoint(model: AVTSModel, extra: dict | None = None) -> bytes:
    tensors = []
    chunks = []
    offset = 0
    for name, t in model.state_dict().items():
        t = t.detach().cpu().contiguous()
        code, np_dtype = _DTYPES[t.dtype]
        raw = t.numpy().astype(np_dtype, copy=False).tobytes()
        tensors.append({"name": _export_name(name), "dtype": code, "shape": list(t.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"config": model.config(), "extra": extra or {}, "tensors": tensors}, sort_keys=True).encode()
    return CKPT_MAGIC + struct.pack("<IQ", CKPT_VERSION, len(header)) + header + b"".join(chunks)


def decode_checkpoint(buf: bytes) -> tuple[AVTSModel, dict]:
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", buf, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 4 + struct.calcsize("<IQ")
    header = json.loads(buf[start : start + hlen])
    payload = memoryview(buf)[start + hlen :]
    model = AVTSModel.from_config(header["config"])
    layers = set(model.encoder.adapters.keys())
    dtypes = {t["dtype"] for t in header["tensors"]}
    if dtypes == {"f64"}:
        model = model.double()
    state = {}
    for t in header["tensors"]:
        torch_dtype, np_dtype = _DTYPE_NAMES[t["dtype"]]
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(payload, dtype=np_dtype, count=n, offset=t["offset"]).reshape(t["shape"])
        state[_import_name(t["name"], layers)] = torch.from_numpy(arr.copy()).to(torch_dtype)
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")
    model.load_state_dict(state)
    return model, header.get("extra", {})


def save_checkpoint(path: str | Path, model: AVTSModel, extra: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(model, extra))


def load_checkpoint(path: str | Path) -> tuple[AVTSModel, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
