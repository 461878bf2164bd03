"""Dual-group mini-batch training with Adam and validation-based selection.

Each step draws `batch_size` treated and `batch_size` control records, samples
`pair_sample_size` of each for the ranking losses, evaluates the weighted
objective on the union batch and takes one Adam step. After every epoch the
model is scored on the validation set; training keeps the parameters with the
best normalized AUUC (validation KRCC where AUUC is undefined) and
stops after `patience` epochs without improvement.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from revup.autodiff import Tensor
from revup.config import EvalConfig, HeadMode, ModelConfig, TrainConfig
from revup.data import Dataset, FeatureBatch, partition_by_treatment
from revup.exceptions import (
    Divergence,
    GroupTooSmall,
    LossError,
    NonFiniteError,
    TrainingError,
)
from revup.losses import (
    LossBreakdown,
    LossTerms,
    loss_cr_rank,
    loss_lu_rank,
    loss_mmd,
    loss_mse,
    loss_wr_rank,
    objective,
    response_scale,
    ziln_nll,
)
from revup.metrics import MetricReport, Scored, evaluate
from revup.model import (
    Gradients,
    ModelParams,
    forward_graph,
    gradient,
    init_model,
    predict_arms,
    response_mean,
    ziln_parts,
)
from revup.serialization.history import SerialEpoch, SerialHistory
from revup.utils import spawn_generators


# --------------------------------------------
# ------------------- Adam -------------------
# --------------------------------------------


@dataclass
class AdamState:
    """First and second moment estimates and the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> AdamState:
        return cls(
            {k: np.zeros_like(a) for k, a in params.items()},
            {k: np.zeros_like(a) for k, a in params.items()},
        )


def adam_step(
    params: ModelParams, grads: Gradients, state: AdamState, config: TrainConfig
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified.

    Raises:
        NonFiniteError: If an updated parameter is not finite.
    """
    if list(params) != list(grads) or list(params) != list(state.m):
        msg = "parameter, gradient and optimizer state names differ"
        raise TrainingError(msg)
    beta1, beta2 = config.adam_betas
    t = state.t + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, value in params.items():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        step = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        updated = value - step
        if not np.all(np.isfinite(updated)):
            raise NonFiniteError("Adam update", name)
        new_params[name], new_m[name], new_v[name] = updated, m, v
    return ModelParams(new_params), AdamState(new_m, new_v, t)


# --------------------------------------------
# ------------------ Pairs -------------------
# --------------------------------------------


@dataclass(frozen=True)
class PairSample:
    """Index pairs for the ranking losses, one row per pair."""

    tt: np.ndarray
    cc: np.ndarray
    tc: np.ndarray
    ct: np.ndarray


def sample_pairs(
    batch_t: np.ndarray, batch_c: np.ndarray, size: int, rng: np.random.Generator
) -> PairSample:
    """Draw `size` distinct indices from each group and form all pairs.

    Within-group pairs are unordered, `size * (size - 1) / 2` per group.
    Cross-group pairs are all `size * size` (treated, control) combinations and
    the same combinations as (control, treated).

    Example:
        >>> rng = np.random.default_rng(0)
        >>> pairs = sample_pairs(np.arange(4), np.arange(4), 2, rng)
        >>> [len(pairs.tt), len(pairs.cc), len(pairs.tc), len(pairs.ct)]
        [1, 1, 4, 4]

    Raises:
        GroupTooSmall: If a batch holds fewer than `size` indices.
    """
    batch_t, batch_c = np.asarray(batch_t), np.asarray(batch_c)
    for group, batch in (("treated", batch_t), ("control", batch_c)):
        if len(batch) < size:
            raise GroupTooSmall(f"{group} batch", len(batch), size)
    draw_t = rng.choice(batch_t, size=size, replace=False)
    draw_c = rng.choice(batch_c, size=size, replace=False)
    if size < 2:
        logger.warning("Pair sample size {} yields no within-group pairs", size)
    upper_i, upper_j = np.triu_indices(size, k=1)
    grid_t, grid_c = np.meshgrid(draw_t, draw_c, indexing="ij")
    tc = np.stack([grid_t.ravel(), grid_c.ravel()], axis=1)
    return PairSample(
        tt=np.stack([draw_t[upper_i], draw_t[upper_j]], axis=1),
        cc=np.stack([draw_c[upper_i], draw_c[upper_j]], axis=1),
        tc=tc,
        ct=tc[:, ::-1].copy(),
    )


# --------------------------------------------
# ----------------- Objective ----------------
# --------------------------------------------


def _concat(a: FeatureBatch, b: FeatureBatch) -> FeatureBatch:
    return FeatureBatch(
        np.concatenate([a.numeric, b.numeric]),
        np.concatenate([a.categorical, b.categorical]),
        np.concatenate([a.treatment, b.treatment]),
        np.concatenate([a.response, b.response]),
    )


def _regression(raw: Tensor, y: np.ndarray, config: ModelConfig) -> Tensor:
    if config.head_mode is HeadMode.MSE:
        return loss_mse(raw[:, 0], y)
    logit, mu, sigma = ziln_parts(raw, config)
    return ziln_nll(y, logit, mu, sigma)


def batch_objective(
    leaves: Mapping[str, Tensor],
    model_config: ModelConfig,
    train_config: TrainConfig,
    batch_t: FeatureBatch,
    batch_c: FeatureBatch,
    pairs: PairSample,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted objective of one step.

    Pair indices refer to positions within `batch_t` and `batch_c`. Every loss
    is differentiated end to end, including through the point predictions
    feeding the ranking losses.
    """
    nt = len(batch_t)
    out = forward_graph(leaves, model_config, _concat(batch_t, batch_c))
    y_t, y_c = batch_t.response, batch_c.response
    treated_rows, control_rows = out.treated[:nt], out.control[nt:]

    regression = _regression(treated_rows, y_t, model_config) + _regression(
        control_rows, y_c, model_config
    )

    # ranking terms work in units of the batch's mean positive response
    scale = response_scale(y_t, y_c)
    y_t, y_c = y_t / scale, y_c / scale
    yhat1 = response_mean(out.treated, model_config) / scale
    yhat0 = response_mean(out.control, model_config) / scale
    yhat1_t, yhat0_c = yhat1[:nt], yhat0[nt:]

    tt, cc, tc, ct = pairs.tt, pairs.cc, pairs.tc, pairs.ct
    wr = loss_wr_rank(
        yhat1_t[tt[:, 0]], yhat1_t[tt[:, 1]], y_t[tt[:, 0]], y_t[tt[:, 1]]
    ) + loss_wr_rank(
        yhat0_c[cc[:, 0]], yhat0_c[cc[:, 1]], y_c[cc[:, 0]], y_c[cc[:, 1]]
    )
    cr = loss_cr_rank(
        yhat1_t[tc[:, 0]], y_t[tc[:, 0]], y_c[tc[:, 1]], yhat0_c[tc[:, 1]]
    ) + loss_cr_rank(
        yhat0_c[ct[:, 0]], y_c[ct[:, 0]], y_t[ct[:, 1]], yhat1_t[ct[:, 1]]
    )

    uplift = yhat1 - yhat0
    lu = loss_lu_rank(uplift[:nt], y_t, uplift[nt:], y_c)

    weights = train_config.weights
    mmd: Tensor | float = 0.0
    if weights.w_mmd > 0:
        mmd = loss_mmd(out.representation[:nt], out.representation[nt:])

    return objective(
        LossTerms(ziln=regression, wr_rank=wr, cr_rank=cr, lu_rank=lu, mmd=mmd),
        weights,
        leaves,
    )


# --------------------------------------------
# ------------------ Training ----------------
# --------------------------------------------


def evaluate_epoch(
    params: ModelParams,
    config: ModelConfig,
    val: Dataset,
    eval_config: EvalConfig | None = None,
    true_uplift: np.ndarray | None = None,
) -> MetricReport:
    """Score every record and compute the full metric report.

    MAPE uses the prediction of each record's observed arm.
    """
    eval_config = eval_config or EvalConfig()
    batch = val.batch
    treated, control = predict_arms(params, config, batch)
    observed = np.where(batch.treatment == 1, treated, control)
    scored = Scored(treated - control, batch.treatment, batch.response, observed)
    return evaluate(scored, eval_config.buckets, eval_config.h, true_uplift)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: LossBreakdown
    validation: MetricReport


@dataclass
class TrainHistory:
    """Per-epoch losses and validation reports of one run."""

    seed: int
    model_config: ModelConfig
    train_config: TrainConfig
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def best(self) -> EpochRecord:
        return next(e for e in self.epochs if e.epoch == self.best_epoch)

    def to_serial(self) -> SerialHistory:
        return SerialHistory(
            seed=self.seed,
            best_epoch=self.best_epoch,
            stopped_early=self.stopped_early,
            architecture=self.model_config,
            train_config=self.train_config,
            epochs=[
                SerialEpoch(
                    epoch=e.epoch,
                    train_loss=e.train_loss.to_serial(),
                    validation=e.validation.to_serial(),
                )
                for e in self.epochs
            ],
        )


SELECTED_BY_KRCC = "selection: AUUC undefined, ranked by validation KRCC"


def selection_key(report: MetricReport) -> tuple[int, float]:
    """Order epochs by AUUC, then by KRCC where AUUC is undefined.

    Any epoch with a finite AUUC outranks every epoch without one.

    Example:
        >>> good = MetricReport(0.6, 0.5, 0.1, 1.0, 30.0, 0.2)
        >>> flat = MetricReport(math.nan, math.nan, 0.9, 1.0, 30.0, 0.2)
        >>> selection_key(good) > selection_key(flat)
        True
        >>> selection_key(flat)
        (0, 0.9)
    """
    if math.isfinite(report.auuc_norm):
        return 1, report.auuc_norm
    if math.isfinite(report.krcc):
        return 0, report.krcc
    return -1, -math.inf


def train(
    train_set: Dataset,
    val: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    eval_config: EvalConfig | None = None,
    val_truth: np.ndarray | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Train an uplift network and return the best-validation parameters.

    Args:
        train_set: Training records, at least `batch_size` in each group.
        val: Validation records with both groups.
        model_config: Network architecture.
        train_config: Optimization settings, including the seed.
        eval_config: Bucket count and LIFT percentile of validation reports.
        val_truth: Known per-record uplift of `val`, for truth KRCC.

    Raises:
        GroupTooSmall: If a training group is smaller than the batch size, or
            the validation set lacks a group.
        Divergence: If the objective or an Adam update becomes non-finite, or
            the objective exceeds `max_loss`.
    """
    cfg = train_config
    treated, control = partition_by_treatment(train_set)
    for group, ds in (("treated", treated), ("control", control)):
        if len(ds) < cfg.batch_size:
            raise GroupTooSmall(group, len(ds), cfg.batch_size)
    val_t, val_c = partition_by_treatment(val)
    for group, ds in (("validation treated", val_t), ("validation control", val_c)):
        if len(ds) == 0:
            raise GroupTooSmall(group, 0, 1)

    shuffle_rng, pair_rng = spawn_generators(cfg.seed, 2)
    params = init_model(model_config, train_set.schema, cfg.seed)
    state = AdamState.zeros(params)
    tb, cb = treated.batch, control.batch
    nt, nc = len(tb), len(cb)
    steps = math.ceil(max(nt, nc) / cfg.batch_size)
    positions = np.arange(cfg.batch_size)
    logger.info(
        "Training on {} treated and {} control records, {} steps per epoch",
        nt,
        nc,
        steps,
    )

    history = TrainHistory(cfg.seed, model_config, cfg)
    best_params, stale = params, 0
    best_key: tuple[int, float] = (-1, -math.inf)
    for epoch in range(1, cfg.max_epochs + 1):
        perm_t, perm_c = shuffle_rng.permutation(nt), shuffle_rng.permutation(nc)
        losses: list[LossBreakdown] = []
        for step in range(steps):
            window = step * cfg.batch_size + positions
            batch_t = tb.take(perm_t[window % nt])
            batch_c = cb.take(perm_c[window % nc])
            pairs = sample_pairs(positions, positions, cfg.pair_sample_size, pair_rng)
            seen: list[LossBreakdown] = []

            def step_loss(
                leaves: Mapping[str, Tensor],
                batch_t: FeatureBatch = batch_t,
                batch_c: FeatureBatch = batch_c,
                pairs: PairSample = pairs,
            ) -> Tensor:
                total, breakdown = batch_objective(
                    leaves, model_config, cfg, batch_t, batch_c, pairs
                )
                seen.append(breakdown)
                if not math.isfinite(breakdown.total) or breakdown.total > cfg.max_loss:
                    raise Divergence(epoch, step, breakdown.total)
                return total

            try:
                grads = gradient(params, step_loss)
            except (NonFiniteError, LossError) as err:
                raise Divergence(epoch, step, math.nan) from err
            try:
                params, state = adam_step(params, grads, state, cfg)
            except NonFiniteError as err:
                raise Divergence(epoch, step, seen[-1].total) from err
            losses.append(seen[-1])
            logger.debug("epoch {} step {} loss {:.6g}", epoch, step, seen[-1].total)

        epoch_loss = LossBreakdown.mean(losses)
        report = evaluate_epoch(params, model_config, val, eval_config, val_truth)
        key = selection_key(report)
        if key[0] == 0:
            report.flags.append(SELECTED_BY_KRCC)
            logger.warning("Epoch {}: validation AUUC undefined, using KRCC", epoch)
        history.epochs.append(EpochRecord(epoch, epoch_loss, report))
        if epoch == 1 or key > best_key:
            best_params, best_key, stale = params, key, 0
            history.best_epoch = epoch
        else:
            stale += 1
        logger.info(
            "epoch {}: loss {:.6g}, val AUUC {:.4f}, KRCC {:.4f}",
            epoch,
            epoch_loss.total,
            report.auuc_norm,
            report.krcc,
        )
        if stale >= cfg.patience:
            history.stopped_early = True
            logger.info(
                "Stopping early after epoch {}; best epoch {}",
                epoch,
                history.best_epoch,
            )
            break
    return best_params, history
