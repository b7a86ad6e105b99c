import numpy as np
import pytest
import torch

from slslr.augment import AugmentationConfig
from slslr.data import SyntheticConfig, generate_synthetic
from slslr.model import EncoderConfig, HeadConfig
from slslr.trainer import PretrainConfig

torch.set_num_threads(1)


def tiny_encoder(**kw):
    base = dict(blocks=2, heads=2, embed_dim=16, max_len=12, input_dim=6, dropout=0.1)
    base.update(kw)
    return EncoderConfig(**base)


def tiny_head():
    return HeadConfig(projection_hidden=16, projection_out=8, predictor_hidden=8)


@pytest.fixture
def small_dataset():
    return generate_synthetic(
        SyntheticConfig(class_count=4, samples_per_class=6, n_frames=12, landmark_count=3, seed=3)
    )


@pytest.fixture
def tiny_cfg():
    return PretrainConfig(
        epochs=2,
        batch_size=8,
        learning_rate=0.01,
        seed=1,
        augmentation=AugmentationConfig(),
        encoder=tiny_encoder(),
        head=tiny_head(),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
