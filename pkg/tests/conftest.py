import numpy as np
import pytest
import torch

from seine.codec import IdentityCodec
from seine.denoiser import DenoiserConfig, build_denoiser
from seine.diffusion import build_schedule


@pytest.fixture
def sched():
    return build_schedule(200, 1e-4, 0.02)


@pytest.fixture
def codec():
    return IdentityCodec()


def randomize_head(model, seed=0):
    """Give the zero-initialised output head random weights so outputs depend on input."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        model.conv_out.weight.copy_(0.05 * torch.randn(model.conv_out.weight.shape, generator=gen))
        model.conv_out.bias.copy_(0.05 * torch.randn(model.conv_out.bias.shape, generator=gen))
    return model


@pytest.fixture
def model():
    m = build_denoiser(DenoiserConfig(), seed=0)
    m.eval()
    return randomize_head(m)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
