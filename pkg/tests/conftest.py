"""Shared fixtures for the test suites."""

from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from models import DataMatrix, FactorPair
from tests.factories import RANK_ONE_VALUES, random_pair


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def rank_one_matrix() -> DataMatrix:
    return DataMatrix(values=RANK_ONE_VALUES)


@pytest.fixture
def planted(rng) -> FactorPair:
    return random_pair(rng, 5, 2, 4)


@pytest.fixture
def write_csv(tmp_path: Path) -> Callable[[str, str], Path]:
    """Write raw CSV text to tmp_path/name and return the path."""

    def _write(name: str, text: str) -> Path:
        path = tmp_path / name
        path.write_bytes(text.encode("utf-8"))
        return path

    return _write
