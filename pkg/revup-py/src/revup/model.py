"""The uplift network: embeddings, a shared representation and two arm heads.

Parameters live in :class:`ModelParams`, an ordered mapping from dotted names
to float64 arrays::

    embedding.<column>           (vocabulary size, embedding_dim)
    representation.<i>.weight    (fan_in, fan_out)
    representation.<i>.bias      (fan_out,)
    treated.<i>.weight / .bias   treated-arm head layers
    control.<i>.weight / .bias   control-arm head layers

Dense layers compute `x @ weight + bias`. Both heads end in a linear layer of
width 3 (purchase logit, log-scale location, raw spread) in ZILN mode or 1 in
MSE mode.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger
from scipy.special import expit

from revup import autodiff as ad
from revup.autodiff import Tensor
from revup.config import Activation, HeadMode, ModelConfig
from revup.data import FeatureBatch, FeatureSchema, SampleRecord
from revup.exceptions import (
    CheckpointError,
    NonFiniteError,
    ShapeError,
    VocabularyError,
)
from revup.serialization.checkpoint import SerialCheckpoint, SerialTensor

if TYPE_CHECKING:
    from pathlib import Path

#: Clamp on the exponent of the ZILN mean, `mu + sigma^2 / 2`.
MAX_LOG_MEAN = 60.0

LossEvaluator = Callable[[Mapping[str, Tensor]], Tensor]


@dataclass(eq=False)
class ModelParams(Mapping[str, np.ndarray]):
    """Named parameter arrays, in a fixed order."""

    tensors: dict[str, np.ndarray]

    __hash__ = None  # type: ignore[assignment]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ModelParams) and self.equals(other)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def size(self) -> int:
        """Total number of scalar parameters."""
        return sum(a.size for a in self.tensors.values())

    def copy(self) -> ModelParams:
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def leaves(self) -> dict[str, Tensor]:
        """Fresh graph leaves holding copies of the parameters."""
        return {k: Tensor(v.copy(), name=k) for k, v in self.tensors.items()}

    def check_finite(self, where: str = "parameters") -> None:
        """Raises:
        NonFiniteError: Naming the first parameter with a NaN or infinity.
        """
        for name, value in self.tensors.items():
            if not np.all(np.isfinite(value)):
                raise NonFiniteError(where, name)

    def equals(self, other: ModelParams) -> bool:
        """Bit-for-bit equality of names, shapes and values."""
        return list(self) == list(other) and all(
            np.array_equal(self[k], other[k]) for k in self
        )


#: Same names and shapes as the parameters they differentiate.
Gradients = ModelParams


def is_regularized(name: str) -> bool:
    """Whether the L2 penalty covers a parameter: weights and embeddings only.

    Example:
        >>> is_regularized("representation.0.weight"), is_regularized("treated.1.bias")
        (True, False)
    """
    return not name.endswith(".bias")


# --------------------------------------------
# --------------- Construction ---------------
# --------------------------------------------


def input_dim(config: ModelConfig, schema: FeatureSchema) -> int:
    return len(schema.numeric_columns) + config.embedding_dim * len(
        schema.vocabularies
    )


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_model(config: ModelConfig, schema: FeatureSchema, seed: int) -> ModelParams:
    """Draw initial parameters.

    Weights and embedding tables are uniform in `±sqrt(6 / (fan_in + fan_out))`
    and biases are zero.

    Example:
        >>> from revup.utils import Vocabulary
        >>> schema = FeatureSchema(["x"], {"c": Vocabulary("abcd")}, "t", "y")
        >>> params = init_model(ModelConfig(), schema, seed=0)
        >>> params["embedding.c"].shape
        (5, 10)

    Raises:
        ShapeError: If the input has no features.
    """
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for col, voc in schema.vocabularies.items():
        tensors[f"embedding.{col}"] = _glorot(rng, len(voc), config.embedding_dim)

    width = input_dim(config, schema)
    if width == 0:
        msg = "the schema declares no numeric or categorical features"
        raise ShapeError(msg)
    for i, out in enumerate(config.representation_layers):
        tensors[f"representation.{i}.weight"] = _glorot(rng, width, out)
        tensors[f"representation.{i}.bias"] = np.zeros(out)
        width = out

    head_widths = [*config.head_layers, config.head_outputs]
    for arm in ("treated", "control"):
        fan_in = width
        for i, out in enumerate(head_widths):
            tensors[f"{arm}.{i}.weight"] = _glorot(rng, fan_in, out)
            tensors[f"{arm}.{i}.bias"] = np.zeros(out)
            fan_in = out
    params = ModelParams(tensors)
    logger.debug("Initialized {} parameters in {} arrays", params.size, len(params))
    return params


# --------------------------------------------
# ------------------ Forward -----------------
# --------------------------------------------


@dataclass(frozen=True)
class ZilnParams:
    """Per-sample zero-inflated lognormal parameters (scalars or arrays)."""

    p: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class ForwardOutput:
    """Evaluated network outputs. Both heads cover every sample."""

    representation: np.ndarray
    treated: ZilnParams | np.ndarray
    control: ZilnParams | np.ndarray


@dataclass(frozen=True)
class GraphOutput:
    """Differentiable network outputs; heads are the raw final-layer values."""

    representation: Tensor
    treated: Tensor
    control: Tensor


def _activate(x: Tensor, activation: Activation) -> Tensor:
    return ad.elu(x) if activation is Activation.ELU else ad.relu(x)


def _check(x: Tensor, where: str, layer: int) -> Tensor:
    if not np.all(np.isfinite(x.value)):
        raise NonFiniteError(where, f"layer {layer}")
    return x


def _layer_count(params: Mapping[str, object], prefix: str) -> int:
    return sum(1 for k in params if k.startswith(prefix) and k.endswith(".weight"))


def _mlp(
    leaves: Mapping[str, Tensor],
    prefix: str,
    x: Tensor,
    activation: Activation,
    activate_last: bool,
) -> Tensor:
    n_layers = _layer_count(leaves, f"{prefix}.")
    for i in range(n_layers):
        weight, bias = leaves[f"{prefix}.{i}.weight"], leaves[f"{prefix}.{i}.bias"]
        if x.shape[1] != weight.shape[0]:
            msg = (
                f"{prefix} layer {i} expects {weight.shape[0]} inputs, got {x.shape[1]}"
            )
            raise ShapeError(msg)
        x = x @ weight + bias
        if activate_last or i < n_layers - 1:
            x = _activate(x, activation)
        _check(x, prefix, i)
    return x


def forward_graph(
    leaves: Mapping[str, Tensor], config: ModelConfig, batch: FeatureBatch
) -> GraphOutput:
    """Differentiable forward pass over a batch.

    Raises:
        VocabularyError: If a category index is outside its embedding table.
        NonFiniteError: If a layer produces NaN or infinity.
        ShapeError: If the batch or parameters do not chain.
    """
    parts: list[Tensor] = [ad.as_tensor(batch.numeric)]
    tables = [k for k in leaves if k.startswith("embedding.")]
    if len(tables) != batch.categorical.shape[1]:
        msg = (
            f"{batch.categorical.shape[1]} categorical features for"
            f" {len(tables)} embedding tables"
        )
        raise ShapeError(msg)
    for j, name in enumerate(tables):
        table = leaves[name]
        idx = batch.categorical[:, j]
        bad = np.flatnonzero((idx < 0) | (idx >= table.shape[0]))
        if len(bad):
            raise VocabularyError(
                name.removeprefix("embedding."), int(idx[bad[0]]), table.shape[0]
            )
        parts.append(ad.take_rows(table, idx))
    x = ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]

    phi = _mlp(leaves, "representation", x, config.activation, activate_last=True)
    return GraphOutput(
        representation=phi,
        treated=_mlp(leaves, "treated", phi, config.activation, activate_last=False),
        control=_mlp(leaves, "control", phi, config.activation, activate_last=False),
    )


def ziln_parts(raw: Tensor, config: ModelConfig) -> tuple[Tensor, Tensor, Tensor]:
    """Split a ZILN head into (purchase logit, location, floored spread)."""
    logit = raw[:, 0]
    mu = raw[:, 1]
    sigma = ad.softplus(raw[:, 2]) + config.sigma_floor
    return logit, mu, sigma


def response_mean(raw: Tensor, config: ModelConfig) -> Tensor:
    """Differentiable point prediction of a head.

    The ZILN mean `p * exp(mu + sigma^2 / 2)` with the exponent clamped at
    :data:`MAX_LOG_MEAN`, or the scalar output in MSE mode.
    """
    if config.head_mode is HeadMode.MSE:
        return raw[:, 0]
    logit, mu, sigma = ziln_parts(raw, config)
    log_mean = ad.clamp_max(mu + 0.5 * ad.square(sigma), MAX_LOG_MEAN)
    return ad.sigmoid(logit) * ad.exp(log_mean)


def _as_batch(batch: FeatureBatch | Sequence[SampleRecord]) -> FeatureBatch:
    if isinstance(batch, FeatureBatch):
        out = batch
    else:
        if not batch:
            msg = "empty batch"
            raise ShapeError(msg)
        out = FeatureBatch.from_records(
            batch, len(batch[0].numeric), len(batch[0].categorical)
        )
    if len(out) == 0:
        msg = "empty batch"
        raise ShapeError(msg)
    return out


def _constants(params: ModelParams) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.tensors.items()}


def _head_values(raw: Tensor, config: ModelConfig) -> ZilnParams | np.ndarray:
    if config.head_mode is HeadMode.MSE:
        return raw.value[:, 0].copy()
    logit, mu, sigma = ziln_parts(raw, config)
    return ZilnParams(p=expit(logit.value), mu=mu.value, sigma=sigma.value)


def forward(
    params: ModelParams,
    config: ModelConfig,
    batch: FeatureBatch | Sequence[SampleRecord],
) -> ForwardOutput:
    """Evaluate the network on a non-empty batch; see :func:`forward_graph`."""
    graph = forward_graph(_constants(params), config, _as_batch(batch))
    return ForwardOutput(
        representation=graph.representation.value,
        treated=_head_values(graph.treated, config),
        control=_head_values(graph.control, config),
    )


def predict_response(
    head: ZilnParams | np.ndarray | float, mode: HeadMode
) -> np.ndarray:
    """Point prediction from a head output.

    Example:
        >>> z = ZilnParams(p=0.5, mu=0.0, sigma=math.sqrt(2 * math.log(2)))
        >>> round(float(predict_response(z, HeadMode.ZILN)), 12)
        1.0
        >>> float(predict_response(3.7, HeadMode.MSE))
        3.7
    """
    if mode is HeadMode.MSE or not isinstance(head, ZilnParams):
        return np.asarray(head, dtype=np.float64)
    sigma = np.asarray(head.sigma, dtype=np.float64)
    log_mean = np.minimum(np.asarray(head.mu) + 0.5 * sigma**2, MAX_LOG_MEAN)
    return np.asarray(head.p) * np.exp(log_mean)


def predict_arms(
    params: ModelParams,
    config: ModelConfig,
    records: FeatureBatch | Sequence[SampleRecord],
) -> tuple[np.ndarray, np.ndarray]:
    """Point predictions of the treated and control heads for every record."""
    out = forward(params, config, records)
    return (
        predict_response(out.treated, config.head_mode),
        predict_response(out.control, config.head_mode),
    )


def predict_uplift(
    params: ModelParams,
    config: ModelConfig,
    records: FeatureBatch | Sequence[SampleRecord],
) -> np.ndarray:
    """Predicted uplift of every record: treated minus control prediction."""
    treated, control = predict_arms(params, config, records)
    return treated - control


# --------------------------------------------
# ----------------- Gradients ----------------
# --------------------------------------------


def gradient(params: ModelParams, loss_evaluator: LossEvaluator) -> Gradients:
    """Exact gradient of a scalar loss by reverse-mode differentiation.

    Args:
        params: Point of evaluation.
        loss_evaluator: Builds the scalar loss graph from parameter leaves.

    Raises:
        NonFiniteError: Naming the first parameter with a non-finite gradient.
    """
    leaves = params.leaves()
    loss = loss_evaluator(leaves)
    loss.backward()
    grads = Gradients(
        {
            k: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
            for k, leaf in leaves.items()
        }
    )
    grads.check_finite("gradient")
    return grads


def _scalar_loss(params: ModelParams, loss_evaluator: LossEvaluator) -> float:
    return loss_evaluator(_constants(params)).item()


def verify_gradients(
    params: ModelParams,
    loss_evaluator: LossEvaluator,
    h: float = 1e-5,
    max_checks: int = 500,
    seed: int = 0,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Every parameter is checked when there are at most `max_checks` of them,
    otherwise a seeded random subsample of `max(max_checks, 200)`. The relative
    error of a pair is `|a - n| / max(1e-8, |a| + |n|)`.

    Example:
        >>> p = ModelParams({"w": np.array([1.5, -2.0])})
        >>> loss = lambda leaves: (leaves["w"] * leaves["w"]).sum()
        >>> verify_gradients(p, loss) < 1e-9
        True
    """
    analytic = gradient(params, loss_evaluator)
    coords = [
        (name, idx)
        for name, arr in params.tensors.items()
        for idx in np.ndindex(arr.shape)
    ]
    if len(coords) > max_checks:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(coords), size=max(max_checks, 200), replace=False)
        coords = [coords[i] for i in sorted(picks)]

    shifted = params.copy()
    worst = 0.0
    for name, idx in coords:
        original = shifted.tensors[name][idx]
        shifted.tensors[name][idx] = original + h
        upper = _scalar_loss(shifted, loss_evaluator)
        shifted.tensors[name][idx] = original - h
        lower = _scalar_loss(shifted, loss_evaluator)
        shifted.tensors[name][idx] = original
        numeric = (upper - lower) / (2.0 * h)
        a = float(analytic.tensors[name][idx])
        worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
    return worst


# --------------------------------------------
# ---------------- Checkpoints ---------------
# --------------------------------------------


def to_checkpoint(
    params: ModelParams, config: ModelConfig, schema: FeatureSchema
) -> SerialCheckpoint:
    return SerialCheckpoint(
        architecture=config,
        feature_schema=schema.to_serial(),
        schema_fingerprint=schema.fingerprint(),
        tensors=[SerialTensor.encode(k, v) for k, v in params.tensors.items()],
    )


def save_checkpoint(
    path: Path, params: ModelParams, config: ModelConfig, schema: FeatureSchema
) -> None:
    path.write_text(to_checkpoint(params, config, schema).to_json(), encoding="utf-8")
    logger.info("Wrote checkpoint {}", path)


def load_checkpoint(path: Path) -> tuple[ModelParams, ModelConfig, FeatureSchema]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        CheckpointError: If the file is unreadable or internally inconsistent.
    """
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        serial = SerialCheckpoint.load_json(raw)
        params = ModelParams({t.name: t.decode() for t in serial.tensors})
    except (OSError, ValueError) as err:
        msg = f"Cannot read checkpoint {path}: {err}"
        raise CheckpointError(msg) from err
    schema = FeatureSchema.from_serial(serial.feature_schema)
    if schema.fingerprint() != serial.schema_fingerprint:
        msg = f"Checkpoint {path} has an inconsistent schema fingerprint."
        raise CheckpointError(msg)
    expected = init_model(serial.architecture, schema, seed=0)
    shapes = {k: v.shape for k, v in expected.tensors.items()}
    if {k: v.shape for k, v in params.tensors.items()} != shapes:
        msg = f"Checkpoint {path} tensors do not match its architecture and schema."
        raise CheckpointError(msg)
    return params, serial.architecture, schema
