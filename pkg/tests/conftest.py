import itertools
from pathlib import Path

import numpy as np
import pytest

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "omegasim" / "scenarios"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIOS


def hamming(a: str, b: str) -> int:
    """Independent per-character distance used as an oracle."""
    assert len(a) == len(b)
    return sum(x != y for x, y in zip(a, b))


def all_bitstrings(width: int):
    return ["".join(bits) for bits in itertools.product("01", repeat=width)]
