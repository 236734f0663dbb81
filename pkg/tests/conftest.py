import numpy as np
import pytest

from e2edrive.config import tiny_config
from e2edrive.model import DrivingModel
from e2edrive.rng import SplitMix64


def random_image(seed: int) -> np.ndarray:
    return SplitMix64(seed).uniform_array(64 * 64 * 3).reshape(64, 64, 3)


def random_ego(seed: int) -> np.ndarray:
    return SplitMix64(seed).normal_array(32)


@pytest.fixture
def tiny_model():
    return DrivingModel(tiny_config(), seed=3)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
