from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest

from revup import autodiff as ad
from revup.autodiff import Tensor


def numeric_grad(
    f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += h
        down[idx] -= h
        out[idx] = (f(Tensor(up)).item() - f(Tensor(down)).item()) / (2 * h)
    return out


def analytic_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    leaf = Tensor(x.copy())
    f(leaf).backward()
    assert leaf.grad is not None
    return leaf.grad


X = np.array([[0.3, -1.2, 2.0], [-0.7, 0.5, 1.1]])
W = np.array([[0.2, -0.4], [1.0, 0.3], [-0.5, 0.8]])


@pytest.mark.parametrize(
    "f",
    [
        lambda x: (x * x + 3.0 * x - 1.0).sum(),
        lambda x: (x / (2.0 + x * x)).sum(),
        lambda x: (1.0 / (3.0 + x)).mean(),
        lambda x: ad.exp(x).sum(),
        lambda x: ad.log(ad.square(x) + 1.0).sum(),
        lambda x: ad.sigmoid(x).sum(),
        lambda x: ad.softplus(x).sum(),
        lambda x: ad.log_sigmoid(x).sum(),
        lambda x: ad.elu(x).sum(),
        lambda x: ad.square(ad.matmul(x, W)).sum(),
        lambda x: ad.logsumexp(x),
        lambda x: (ad.log_softmax(x[0]) * np.array([1.0, 2.0, 3.0])).sum(),
        lambda x: ad.square(x[:, 1] - x[:, 0]).mean(),
        lambda x: ad.concat([x, ad.exp(x)], axis=1).sum(),
        lambda x: (ad.take_rows(x, np.array([1, 1, 0])) * 2.0).sum(),
        lambda x: (x + np.array([1.0, 2.0, 3.0])).sum() * (x * np.ones((2, 1))).sum(),
    ],
)
def test_gradients_match_finite_differences(f):
    assert np.allclose(analytic_grad(f, X), numeric_grad(f, X), rtol=1e-6, atol=1e-8)


def test_where_routes_gradient_to_selected_branch():
    x = Tensor(np.array([1.0, 2.0]))
    y = ad.where(np.array([True, False]), 2.0 * x, 3.0 * x)
    y.sum().backward()
    assert x.grad is not None
    assert x.grad.tolist() == [2.0, 3.0]


def test_clamp_max():
    x = Tensor(np.array([1.0, 100.0]))
    y = ad.clamp_max(x, 60.0)
    y.sum().backward()
    assert y.value.tolist() == [1.0, 60.0]
    assert x.grad is not None
    assert x.grad.tolist() == [1.0, 0.0]


def test_repeated_index_accumulates():
    x = Tensor(np.array([1.0, 2.0]))
    x[np.array([0, 0, 1])].sum().backward()
    assert x.grad is not None
    assert x.grad.tolist() == [2.0, 1.0]


def test_shared_subexpression():
    x = Tensor(np.array(3.0))
    y = x * x
    (y + y).backward()
    assert x.grad is not None
    assert x.grad.item() == 12.0


def test_numpy_on_the_left_stays_a_tensor():
    x = Tensor(np.array([1.0, 2.0]))
    y = np.array([3.0, 3.0]) - x
    assert isinstance(y, Tensor)
    y.sum().backward()
    assert x.grad is not None
    assert x.grad.tolist() == [-1.0, -1.0]


def test_stable_at_extremes():
    x = np.array([-800.0, 800.0])
    assert np.all(np.isfinite(ad.softplus(x).value))
    assert np.all(np.isfinite(ad.log_sigmoid(x).value))
    assert np.isfinite(ad.logsumexp(x).value)


def test_backward_needs_scalar():
    with pytest.raises(ValueError, match="scalar"):
        Tensor(np.ones(3)).backward()


def test_mean_of_empty_is_zero():
    assert ad.mean(np.empty(0)).item() == 0.0
