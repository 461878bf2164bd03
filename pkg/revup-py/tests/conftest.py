from __future__ import annotations

import numpy as np
import pytest
from loguru import logger

from revup.config import SyntheticConfig
from revup.data import Dataset, FeatureSchema
from revup.synthetic import SyntheticTruth, generate_synthetic
from revup.utils import Vocabulary


def tiny_schema() -> FeatureSchema:
    return FeatureSchema(
        numeric_columns=["x0", "x1", "x2"],
        vocabularies={"color": Vocabulary(["red", "blue", "green"])},
        treatment_column="group",
        response_column="spend",
        treatment_mapping={"T": 1, "C": 0},
    )


def random_dataset(n: int, seed: int = 0, positive_rate: float = 0.5) -> Dataset:
    """Both groups present, a mix of zero and positive responses."""
    rng = np.random.default_rng(seed)
    treatment = np.arange(n) % 2
    buys = rng.random(n) < positive_rate
    response = np.where(buys, np.round(rng.lognormal(0.0, 1.0, n), 3), 0.0)
    return Dataset.from_arrays(
        tiny_schema(),
        rng.normal(size=(n, 3)),
        rng.integers(1, 4, size=(n, 1)),
        treatment,
        response,
    )


@pytest.fixture
def schema() -> FeatureSchema:
    return tiny_schema()


@pytest.fixture
def dataset() -> Dataset:
    return random_dataset(40)


@pytest.fixture(scope="session")
def small_synthetic() -> tuple[Dataset, SyntheticTruth]:
    return generate_synthetic(SyntheticConfig(n=600, d_numeric=3), seed=0)


@pytest.fixture
def log_messages():
    """Messages logged at WARNING or above while the test runs."""
    messages: list[str] = []
    handler = logger.add(
        lambda m: messages.append(m.record["message"]), level="WARNING"
    )
    yield messages
    logger.remove(handler)
