"""Per-layer gated fusion of target-speaker visual features into an acoustic encoder.

For every fused acoustic layer ``l``:

1. ``f = sum_i softmax(alpha_logits)_i * visual_layer_i``          (layer weighting)
2. ``f_al = LN(Dropout(FFN(Conv1D(f))))`` at the acoustic rate      (alignment)
3. ``g = sigmoid(W_gate [LN(e_a) || f_al] + b_gate)``               (gate)
4. ``e_out = g * e_a + (1 - g) * f_al``                             (fusion)

``e_out`` replaces the acoustic layer output and feeds the next layer.
The acoustic and visual backbones are small affine+tanh stacks.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

CONV_KERNEL = 5
CONV_STRIDE = 2
CONV_PADDING = 2


@dataclass
class EncoderConfig:
    acoustic_input_dim: int = 24
    visual_input_dim: int = 24
    d_a: int = 32
    d_v: int = 32
    n_acoustic_layers: int = 2
    n_visual_layers: int = 2
    fusion_at_layers: tuple[int, ...] | None = None  # 1-based; None fuses every layer
    ffn_hidden: int | None = None  # defaults to 4 * d_a
    dropout_p: float = 0.1

    def __post_init__(self) -> None:
        if self.fusion_at_layers is not None:
            self.fusion_at_layers = tuple(sorted(int(x) for x in self.fusion_at_layers))

    @property
    def fused_layers(self) -> tuple[int, ...]:
        if self.fusion_at_layers is None:
            return tuple(range(1, self.n_acoustic_layers + 1))
        return self.fusion_at_layers

    def validate(self) -> None:
        for name in ("acoustic_input_dim", "visual_input_dim", "d_a", "d_v", "n_acoustic_layers", "n_visual_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        bad = [l for l in self.fused_layers if not 1 <= l <= self.n_acoustic_layers]
        if bad:
            raise ValueError(f"fusion_at_layers {bad} outside [1, {self.n_acoustic_layers}]")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion_at_layers"] = None if self.fusion_at_layers is None else list(self.fusion_at_layers)
        return d


def conv_output_length(n_v: int) -> int:
    return (n_v + 2 * CONV_PADDING - CONV_KERNEL) // CONV_STRIDE + 1


def aggregate_visual_layers(stack: list[Tensor] | Tensor, alpha_logits: Tensor) -> Tensor:
    """Convex combination of the visual layers with softmax weights."""
    layers = torch.stack(list(stack)) if not isinstance(stack, Tensor) else stack
    if layers.shape[0] != alpha_logits.shape[0]:
        raise ValueError(f"{layers.shape[0]} visual layers but {alpha_logits.shape[0]} weights")
    w = torch.softmax(alpha_logits, dim=0).to(layers.dtype)
    return torch.tensordot(w, layers, dims=([0], [0]))


def compute_gate(e_a: Tensor, f_al: Tensor, W_gate: Tensor, b_gate: Tensor, ln_gate: nn.LayerNorm) -> Tensor:
    if e_a.shape != f_al.shape:
        raise ValueError(f"shape mismatch {tuple(e_a.shape)} vs {tuple(f_al.shape)}")
    z = torch.cat([ln_gate(e_a), f_al], dim=-1)
    return torch.sigmoid(z @ W_gate.T + b_gate)


def fuse(e_a: Tensor, f_al: Tensor, g: Tensor) -> Tensor:
    if not e_a.shape == f_al.shape == g.shape:
        raise ValueError("fuse needs equal shapes")
    return g * e_a + (1.0 - g) * f_al


def _fit_length(x: Tensor, n: int) -> Tensor:
    """Truncate or right-zero-pad along the time axis (dim -2)."""
    cur = x.shape[-2]
    if cur >= n:
        return x[..., :n, :]
    pad = x.new_zeros(*x.shape[:-2], n - cur, x.shape[-1])
    return torch.cat([x, pad], dim=-2)


class FusionAdapter(nn.Module):
    """Learned weights for one fused acoustic layer."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        hidden = cfg.ffn_hidden or 4 * cfg.d_a
        self.alpha_logits = nn.Parameter(torch.zeros(cfg.n_visual_layers))
        self.conv = nn.Conv1d(cfg.d_v, cfg.d_a, CONV_KERNEL, stride=CONV_STRIDE, padding=CONV_PADDING)
        self.ffn_in = nn.Linear(cfg.d_a, hidden)
        self.ffn_out = nn.Linear(hidden, cfg.d_a)
        self.dropout = nn.Dropout(cfg.dropout_p)
        self.ln_ffn = nn.LayerNorm(cfg.d_a)
        self.ln_gate = nn.LayerNorm(cfg.d_a)
        bound = 1.0 / math.sqrt(2 * cfg.d_a)
        self.W_gate = nn.Parameter(torch.empty(cfg.d_a, 2 * cfg.d_a).uniform_(-bound, bound))
        self.b_gate = nn.Parameter(torch.zeros(cfg.d_a))

    def align(self, f: Tensor, n_a: int, v_lens: Tensor | None = None) -> Tensor:
        """``[B, N_v, d_v] -> [B, n_a, d_a]``; frames past ``ceil(v_len / 2)`` are zero."""
        h = self.conv(f.transpose(1, 2)).transpose(1, 2)
        h = self.ffn_out(F.silu(self.ffn_in(h)))
        h = self.ln_ffn(self.dropout(h))
        if v_lens is not None:
            keep = torch.arange(h.shape[1], device=h.device)[None, :] < (v_lens[:, None] + 1) // 2
            h = h * keep[..., None].to(h.dtype)
        return _fit_length(h, n_a)

    def forward(self, e_a: Tensor, stack: list[Tensor], v_lens: Tensor | None = None) -> tuple[Tensor, Tensor]:
        f = aggregate_visual_layers(stack, self.alpha_logits)
        f_al = self.align(f, e_a.shape[1], v_lens)
        g = compute_gate(e_a, f_al, self.W_gate, self.b_gate, self.ln_gate)
        return fuse(e_a, f_al, g), g


class AcousticLayer(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.linear = nn.Linear(d, d)

    def forward(self, x: Tensor) -> Tensor:
        return x + torch.tanh(self.linear(x))


class AVEncoder(nn.Module):
    """Toy acoustic encoder with gated visual fusion and a toy visual encoder."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.acoustic_in = nn.Linear(cfg.acoustic_input_dim, cfg.d_a)
        self.acoustic_layers = nn.ModuleList(AcousticLayer(cfg.d_a) for _ in range(cfg.n_acoustic_layers))
        self.visual_layers = nn.ModuleList(
            nn.Linear(cfg.visual_input_dim if i == 0 else cfg.d_v, cfg.d_v) for i in range(cfg.n_visual_layers)
        )
        self.adapters = nn.ModuleDict({str(l): FusionAdapter(cfg) for l in cfg.fused_layers})

    def encode_visual(self, video: Tensor, v_lens: Tensor | None = None) -> list[Tensor]:
        """All visual layer activations; the encoder never sees audio."""
        video = self._crop_visual(video)
        out = []
        h = video
        for layer in self.visual_layers:
            h = torch.tanh(layer(h))
            out.append(h)
        if v_lens is not None:
            keep = (torch.arange(video.shape[-2], device=video.device)[None, :] < v_lens[:, None])[..., None]
            out = [x * keep.to(x.dtype) for x in out]
        return out

    def _crop_visual(self, video: Tensor) -> Tensor:
        want = self.cfg.visual_input_dim
        have = video.shape[-1]
        if have == want:
            return video
        if have < want:
            raise ValueError(f"visual dim {have} smaller than model input dim {want}")
        off = (have - want) // 2
        return video[..., off : off + want]

    def forward(
        self,
        audio: Tensor,
        video: Tensor | None = None,
        v_lens: Tensor | None = None,
        fusion: bool = True,
        stack: list[Tensor] | None = None,
        return_gates: bool = False,
    ):
        """``audio [B, N_a, D_a]`` and ``video [B, N_v, D_v]`` -> ``[B, N_a, d_a]``.

        A precomputed visual ``stack`` (e.g. from chunked encoding) may replace ``video``.
        """
        fuse_now = fusion and len(self.adapters) > 0
        if fuse_now and stack is None:
            if video is None:
                raise ValueError("fusion requires video or a visual stack")
            stack = self.encode_visual(video, v_lens)
        h = self.acoustic_in(audio)
        gates = {}
        for l, layer in enumerate(self.acoustic_layers, start=1):
            h = layer(h)
            if fuse_now and str(l) in self.adapters:
                h, g = self.adapters[str(l)](h, stack, v_lens)
                gates[l] = g
        return (h, gates) if return_gates else h


def check_rates(n_a: int, n_v: int) -> None:
    if abs(conv_output_length(n_v) - n_a) > 1:
        raise ValueError(f"rate mismatch: {n_v} visual frames for {n_a} acoustic frames")
