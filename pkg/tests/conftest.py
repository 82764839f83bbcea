from __future__ import annotations

import numpy as np
import pytest

from tripletseg.schema import load_schema


@pytest.fixture(scope="session")
def schema():
    return load_schema()


@pytest.fixture()
def rng():
    return np.random.default_rng(20260818)
