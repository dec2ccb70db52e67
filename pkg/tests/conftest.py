from __future__ import annotations

import numpy as np
import pytest
import torch

from avts.avfusion import EncoderConfig
from avts.datamodel import SyntheticCorpusConfig, SyntheticWorld
from avts.model import AVTSModel

torch.set_num_threads(1)

# criterion id -> (passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def world() -> SyntheticWorld:
    return SyntheticWorld(SyntheticCorpusConfig())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def tiny_model(vocab_size: int = 3, dtype=torch.float64, dropout_p: float = 0.0, seed: int = 0, **enc) -> AVTSModel:
    cfg = dict(
        acoustic_input_dim=4,
        visual_input_dim=4,
        d_a=4,
        d_v=4,
        n_acoustic_layers=2,
        n_visual_layers=2,
        ffn_hidden=8,
        dropout_p=dropout_p,
    )
    cfg.update(enc)
    torch.manual_seed(seed)
    model = AVTSModel(EncoderConfig(**cfg), [f"w{i}" for i in range(vocab_size)], d_pred=4, d_joint=6)
    return model.to(dtype)
