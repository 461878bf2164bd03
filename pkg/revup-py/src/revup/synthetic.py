"""Synthetic randomized trials with known per-record uplift.

Covariates are uniform on the unit cube and treatment is a fair coin. Each arm
draws revenue from a zero-inflated lognormal whose purchase probability and
log-scale location are affine in the covariates, so the true conditional
uplift has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from revup.config import ArmCoefficients, SyntheticConfig
from revup.data import Dataset, FeatureSchema
from revup.utils import spawn_generators

TREATMENT_COLUMN = "treatment"
RESPONSE_COLUMN = "response"


@dataclass(frozen=True)
class SyntheticTruth:
    """Generating parameters of every record, aligned with the dataset."""

    p1: np.ndarray
    mu1: np.ndarray
    p0: np.ndarray
    mu0: np.ndarray
    sigma: float

    @property
    def cate(self) -> np.ndarray:
        """True uplift: difference of the two arms' lognormal-mixture means."""
        half_var = 0.5 * self.sigma**2
        return self.p1 * np.exp(self.mu1 + half_var) - self.p0 * np.exp(
            self.mu0 + half_var
        )

    def take(self, indices: np.ndarray) -> SyntheticTruth:
        return SyntheticTruth(
            self.p1[indices], self.mu1[indices], self.p0[indices], self.mu0[indices],
            self.sigma,
        )

    def __len__(self) -> int:
        return len(self.p1)


def synthetic_schema(d_numeric: int) -> FeatureSchema:
    """Numeric columns `x0..x{d-1}`, treatment written as "1"/"0".

    Example:
        >>> synthetic_schema(2).numeric_columns
        ['x0', 'x1']
    """
    return FeatureSchema(
        numeric_columns=[f"x{i}" for i in range(d_numeric)],
        vocabularies={},
        treatment_column=TREATMENT_COLUMN,
        response_column=RESPONSE_COLUMN,
        treatment_mapping={"1": 1, "0": 0},
    )


def draw_coefficients(
    d_numeric: int, rng: np.random.Generator
) -> tuple[ArmCoefficients, ArmCoefficients]:
    """Seeded (treated, control) arm coefficients.

    The treated arm is the control arm shifted up in every coefficient, the
    intercept `b` by at least 0.25. Covariates are non-negative, so treatment
    raises the purchase probability and never lowers the log-scale location:
    the true uplift is positive for every record and varies with `x`.
    """
    scale = 2.0 / np.sqrt(d_numeric)
    control = ArmCoefficients(
        a=rng.normal(0.0, scale, d_numeric).tolist(),
        b=float(rng.normal(-0.5, 0.5)),
        c=rng.normal(0.0, scale, d_numeric).tolist(),
        d=float(rng.normal(0.0, 0.5)),
    )
    shift_a = np.abs(rng.normal(0.0, scale, d_numeric))
    shift_c = np.abs(rng.normal(0.0, 0.5 * scale, d_numeric))
    treated = ArmCoefficients(
        a=(np.asarray(control.a) + shift_a).tolist(),
        b=control.b + 0.25 + abs(float(rng.normal(0.0, 0.25))),
        c=(np.asarray(control.c) + shift_c).tolist(),
        d=control.d + abs(float(rng.normal(0.0, 0.25))),
    )
    return treated, control


def arm_parameters(
    coef: ArmCoefficients, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Purchase probability and log-scale location of one arm at `x`."""
    p = expit(x @ np.asarray(coef.a) + coef.b)
    mu = x @ np.asarray(coef.c) + coef.d
    return p, mu


def sample_response(
    p: np.ndarray, mu: np.ndarray, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """Zero with probability `1 - p`, else `exp(Normal(mu, sigma^2))`."""
    buys = rng.random(p.shape) < p
    spend = np.exp(rng.normal(mu, sigma))
    return np.where(buys, spend, 0.0)


def generate_synthetic(
    config: SyntheticConfig, seed: int
) -> tuple[Dataset, SyntheticTruth]:
    """Generate a seeded synthetic trial and its ground truth.

    Coefficients come from `config.treated`/`config.control` when given,
    otherwise they are drawn from `config.coefficient_seed` (or `seed`).
    """
    cov_rng, treat_rng, resp_rng, coef_rng = spawn_generators(seed, 4)
    if config.coefficient_seed is not None:
        coef_rng = np.random.default_rng(config.coefficient_seed)
    treated_coef, control_coef = draw_coefficients(config.d_numeric, coef_rng)
    if config.treated is not None:
        treated_coef = config.treated
    if config.control is not None:
        control_coef = config.control

    n, d = config.n, config.d_numeric
    x = cov_rng.random((n, d))
    t = (treat_rng.random(n) < 0.5).astype(np.int64)
    p1, mu1 = arm_parameters(treated_coef, x)
    p0, mu0 = arm_parameters(control_coef, x)
    y = sample_response(
        np.where(t == 1, p1, p0), np.where(t == 1, mu1, mu0), config.sigma, resp_rng
    )

    dataset = Dataset.from_arrays(
        synthetic_schema(d), x, np.zeros((n, 0), dtype=np.int64), t, y
    )
    return dataset, SyntheticTruth(p1, mu1, p0, mu0, config.sigma)
