"""Monotonic transducer: prediction/joint network, log-space forward loss and
greedy decoding. Blank is index 0; tokens are ``1..V``."""

from __future__ import annotations

import torch
from torch import Tensor, nn

BLANK = 0


class TransducerHead(nn.Module):
    """Predictor (embedding of the previous token + affine/tanh) and joiner."""

    def __init__(self, vocab_size: int, d_enc: int, d_pred: int = 32, d_joint: int = 64):
        super().__init__()
        self.vocab_size = vocab_size
        self.embed = nn.Embedding(vocab_size + 1, d_pred)
        self.pred = nn.Linear(d_pred, d_pred)
        self.enc_proj = nn.Linear(d_enc, d_joint)
        self.pred_proj = nn.Linear(d_pred, d_joint, bias=False)
        self.out = nn.Linear(d_joint, vocab_size + 1)

    def predictor(self, prev_tokens: Tensor) -> Tensor:
        return torch.tanh(self.pred(self.embed(prev_tokens)))

    def joint(self, enc: Tensor, pred: Tensor) -> Tensor:
        """``enc [B, T, d]``, ``pred [B, U1, p]`` -> logits ``[B, T, U1, V+1]``."""
        return self.out(torch.tanh(self.enc_proj(enc)[:, :, None, :] + self.pred_proj(pred)[:, None, :, :]))

    def logits(self, enc: Tensor, targets: Tensor) -> Tensor:
        """Joint logits for every (frame, prefix length) given padded targets ``[B, U]``."""
        prev = torch.cat([targets.new_full((targets.shape[0], 1), BLANK), targets], dim=1)
        return self.joint(enc, self.predictor(prev))


def transducer_log_likelihood(log_probs: Tensor, targets: Tensor, t_lens: Tensor, u_lens: Tensor) -> Tensor:
    """``log P(y | x)`` summed over all monotonic alignments.

    ``log_probs [B, T, U+1, V+1]`` are normalised over the last axis;
    ``targets [B, U]`` is padded with any valid id. Returns ``[B]``.

    Row ``t`` of the lattice obeys
    ``alpha[t, u] = logaddexp(alpha[t-1, u] + blank[t-1, u], alpha[t, u-1] + emit[t, u-1])``;
    the within-row recursion is solved in closed form with a log-cumsum-exp.
    """
    B, T, U1, _ = log_probs.shape
    U = U1 - 1
    blank = log_probs[..., BLANK]
    if U > 0:
        idx = targets[:, None, :, None].expand(B, T, U, 1)
        emit = log_probs[:, :, :U, :].gather(-1, idx).squeeze(-1)
    else:
        emit = log_probs.new_zeros(B, T, 0)
    zero = log_probs.new_zeros(B, T, 1)
    csum = torch.cat([zero, emit.cumsum(-1)], dim=-1)  # [B, T, U+1]
    rows = [csum[:, 0]]
    for t in range(1, T):
        a = rows[-1] + blank[:, t - 1]
        c = csum[:, t]
        rows.append(c + torch.logcumsumexp(a - c, dim=-1))
    alpha = torch.stack(rows, dim=1)
    b = torch.arange(B, device=log_probs.device)
    return alpha[b, t_lens - 1, u_lens] + blank[b, t_lens - 1, u_lens]


def _check_inputs(t_lens: Tensor, u_lens: Tensor, targets: Tensor, vocab_size: int) -> None:
    if (t_lens < 1).any():
        raise ValueError("transducer needs at least one encoder frame")
    for b in range(targets.shape[0]):
        tok = targets[b, : int(u_lens[b])]
        if tok.numel() and (int(tok.min()) < 1 or int(tok.max()) > vocab_size):
            raise ValueError(f"target token outside vocabulary 1..{vocab_size}")


def batch_nll(enc: Tensor, t_lens: Tensor, targets: Tensor, u_lens: Tensor, head: TransducerHead) -> Tensor:
    """Per-item negative log-likelihood ``[B]``."""
    _check_inputs(t_lens, u_lens, targets, head.vocab_size)
    log_probs = torch.log_softmax(head.logits(enc, targets), dim=-1)
    return -transducer_log_likelihood(log_probs, targets, t_lens, u_lens)


def transducer_nll(encoder_out: Tensor, targets: list[int] | Tensor, head: TransducerHead) -> Tensor:
    """Loss for a single ``[T, d]`` encoder output."""
    if encoder_out.shape[0] < 1:
        raise ValueError("transducer needs at least one encoder frame")
    tgt = torch.as_tensor(targets, dtype=torch.long).reshape(1, -1)
    t_lens = torch.tensor([encoder_out.shape[0]])
    u_lens = torch.tensor([tgt.shape[1]])
    return batch_nll(encoder_out[None], t_lens, tgt, u_lens, head)[0]


def greedy_from_table(best: Tensor | list, max_symbols_per_frame: int = 5) -> list[int]:
    """Greedy search given ``best[t][prev]`` = argmax symbol at frame ``t``
    when the last emitted token is ``prev`` (valid for a one-token predictor)."""
    hyp: list[int] = []
    prev = BLANK
    for row in best:
        for _ in range(max_symbols_per_frame):
            k = int(row[prev])
            if k == BLANK:
                break
            hyp.append(k)
            prev = k
    return hyp


@torch.no_grad()
def greedy_decode(encoder_out: Tensor, head: TransducerHead, max_symbols_per_frame: int = 5) -> list[int]:
    """Frame-synchronous greedy decoding of a ``[T, d]`` encoder output."""
    if encoder_out.shape[0] == 0:
        return []
    every_prev = torch.arange(head.vocab_size + 1)
    logits = head.joint(encoder_out[None], head.predictor(every_prev)[None])[0]  # [T, V+1, V+1]
    return greedy_from_table(logits.argmax(-1).tolist(), max_symbols_per_frame)
