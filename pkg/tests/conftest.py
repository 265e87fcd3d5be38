import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vrstream.optimizer import OptimizationProblem  # noqa: E402
from vrstream.ratedist import RateModel  # noqa: E402
from vrstream.viewmodel import TransitionModel, ViewSpace  # noqa: E402

import oracles  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG = ROOT / "scenarios" / "default.yaml"


@pytest.fixture
def default_config_path():
    return DEFAULT_CONFIG


def small_problem(seed, K=8, a=1, T_s=1, H=1, v_max=1, sigma=10**0.5, d_max=46.0, C=2.0, B=4.0):
    rng = np.random.default_rng(seed)
    P = oracles.banded_matrix(K, v_max, rng)
    return OptimizationProblem(
        ViewSpace(K, a), TransitionModel(P, v_max), RateModel(sigma, d_max), T_s, H, C, B
    )


@pytest.fixture
def problem8():
    return small_problem(0)
