"""Testing setup."""

import numpy as np
import pytest

from revup import autodiff, data, losses, metrics, model


@pytest.fixture(autouse=True)
def _add_revup(doctest_namespace):
    doctest_namespace.update(
        {
            "np": np,
            "autodiff": autodiff,
            "data": data,
            "losses": losses,
            "metrics": metrics,
            "model": model,
        }
    )
