from __future__ import annotations

import numpy as np
import pytest

from regretsls.ltv_model import LtvSystem
from regretsls.sls_core import ControlGains, block_lower_mask


def random_system(rng: np.random.Generator, T: int, dx: int, du: int, dy: int, scale: float = 0.5) -> LtvSystem:
    A = [scale * rng.standard_normal((dx, dx)) for _ in range(T)]
    B = [rng.standard_normal((dx, du)) for _ in range(T)]
    C = [rng.standard_normal((dy, dx)) for _ in range(T)]
    return LtvSystem(A, B, C)


def random_gains(rng: np.random.Generator, T: int, du: int, dy: int, scale: float = 0.3) -> ControlGains:
    K = scale * rng.standard_normal((du * T, dy * T)) * block_lower_mask(T, du, dy)
    return ControlGains(K, T, du, dy)


def random_dims(rng: np.random.Generator, T_max: int = 10, dx_max: int = 6, du_max: int = 3, dy_max: int = 3):
    return (int(rng.integers(1, T_max + 1)), int(rng.integers(1, dx_max + 1)), int(rng.integers(1, du_max + 1)),
            int(rng.integers(1, dy_max + 1)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"\ncriterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
