from __future__ import annotations

import numpy as np
import pytest
import torch

from reactmotion.models import Arch, ModelConfig, MotionModel, build_model
from reactmotion.skeleton import default_topology
from reactmotion.synthetic import mirrored_delay_pair

TINY = ModelConfig(d_model=16, n_heads=2, d_ffn=32, dropout=0.0, n_routers=4)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def topo():
    return default_topology()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def pair():
    return mirrored_delay_pair(80, seed=3)


@pytest.fixture
def tiny_cfg():
    return TINY


def tiny_model(arch=Arch.SIMPLE, person_id=False, seed=0, **kw):
    return build_model(TINY.with_(arch=arch, use_person_id=person_id, **kw), seed=seed)


def random_frame(rng, scale=0.5):
    """17 random joints around a standing pelvis."""
    return rng.normal(0.0, scale, (17, 3)) + np.array([0.0, 1.0, 0.0])


class MirrorOracle(MotionModel):
    """Emits the mirror of the newest subject frame; NaN from call ``fail_at`` on."""

    def __init__(self, fail_at=None, value=float("nan")):
        super().__init__(TINY)
        self.calls = 0
        self.fail_at = fail_at
        self.value = value

    def forward(self, x_ctx, y_ctx, past=None, person_ids=(0, 1)):
        self._check(x_ctx, y_ctx, past)
        self.calls += 1
        out = x_ctx[:, -1].clone()
        out = out.reshape(-1, 17, 3) * torch.tensor([-1.0, 1.0, -1.0])
        out = out.reshape(-1, 51)
        if self.fail_at is not None and self.calls > self.fail_at:
            out[:, 4] = self.value
        return out
