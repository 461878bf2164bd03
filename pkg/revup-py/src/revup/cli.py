"""Command line interface.

Every command reads an optional JSON run configuration (``--config``), applies
flag overrides (``--seed``, ``--out``, ``--overwrite`` and dotted paths such
as ``--train.batch_size 64``), writes the resolved configuration to
``config.json`` in the output directory, then its own artifacts. Existing
files are only replaced with ``--overwrite``. On failure the command exits
with status 1 and removes the files it wrote.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import ValidationError

import revup
from revup.config import DataConfig, RunConfig, SyntheticConfig
from revup.data import (
    Dataset,
    FeatureSchema,
    adapt_hillstrom,
    fit_vocabularies,
    load_csv,
    load_hillstrom,
    recode,
    split_indices,
    write_csv,
)
from revup.exceptions import CheckpointError, ConfigError, OutputExists, RevupError
from revup.metrics import export_curves
from revup.model import load_checkpoint, save_checkpoint
from revup.serialization.history import SerialMetricReport, summarize_reports
from revup.synthetic import SyntheticTruth, generate_synthetic
from revup.trainer import evaluate_epoch, train
from revup.utils import Vocabulary

if TYPE_CHECKING:
    from collections.abc import Sequence

    from revup.metrics import MetricReport


class Artifacts:
    """Files written by one command, removed again if the command fails."""

    def __init__(self, directory: Path, overwrite: bool) -> None:
        self.directory = directory
        self.overwrite = overwrite
        self.written: list[Path] = []

    def reserve(self, *names: str) -> None:
        """Fail early if any planned artifact already exists.

        Raises:
            OutputExists: Unless overwriting is allowed.
        """
        for name in names:
            path = self.directory / name
            if path.exists() and not self.overwrite:
                raise OutputExists(str(path))

    def path(self, name: str) -> Path:
        self.reserve(name)
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / name
        self.written.append(path)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.path(name)
        path.write_text(text, encoding="utf-8")
        logger.info("Wrote {}", path)
        return path

    def remove_written(self) -> None:
        for path in self.written:
            path.unlink(missing_ok=True)
            logger.info("Removed partial output {}", path)
        self.written.clear()


# --------------------------------------------
# --------------- Configuration --------------
# --------------------------------------------


def parse_overrides(tokens: Sequence[str]) -> dict[str, Any]:
    """Turn ``--a.b value`` tokens into a nested mapping.

    Values are parsed as JSON, falling back to plain strings.

    Example:
        >>> parse_overrides(["--train.batch_size", "64", "--model.head_mode=mse"])
        {'train': {'batch_size': 64}, 'model': {'head_mode': 'mse'}}

    Raises:
        ConfigError: On a malformed token.
    """
    out: dict[str, Any] = {}
    items = list(tokens)
    while items:
        token = items.pop(0)
        if not token.startswith("--"):
            msg = f"Unexpected argument {token!r}."
            raise ConfigError(msg)
        key, eq, raw = token[2:].partition("=")
        if not eq:
            if not items:
                msg = f"Override {token} needs a value."
                raise ConfigError(msg)
            raw = items.pop(0)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return out


def _deep_update(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def load_run_config(args: argparse.Namespace, overrides: Sequence[str]) -> RunConfig:
    """Merge the config file, dotted overrides and flags, then validate.

    Raises:
        ConfigError: If the file cannot be read.
        pydantic.ValidationError: If the merged configuration is invalid.
    """
    raw: dict[str, Any] = {}
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            msg = f"Cannot read config {args.config}: {err}"
            raise ConfigError(msg) from err
    _deep_update(raw, parse_overrides(overrides))
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw.setdefault("output", {})["directory"] = args.out
    if args.overwrite:
        raw.setdefault("output", {})["overwrite"] = True
    return RunConfig.model_validate(raw).resolved()


# --------------------------------------------
# ------------------- Data -------------------
# --------------------------------------------


def _require_data(cfg: RunConfig) -> DataConfig:
    if cfg.data is None:
        msg = "This command needs a data block (data.path or data.synthetic)."
        raise ConfigError(msg)
    return cfg.data


def load_data(data: DataConfig, seed: int) -> tuple[Dataset, SyntheticTruth | None]:
    """The configured dataset and, for synthetic data, its ground truth."""
    if data.synthetic is not None:
        return generate_synthetic(data.synthetic, seed)
    assert data.path is not None
    if data.hillstrom_arm is not None:
        return adapt_hillstrom(load_hillstrom(data.path), data.hillstrom_arm), None
    assert data.schema_spec is not None
    return load_csv(data.path, data.schema_spec), None


def _load_for_checkpoint(
    data: DataConfig, seed: int, schema: FeatureSchema
) -> tuple[Dataset, SyntheticTruth | None]:
    """Load data encoded with a checkpoint's vocabularies.

    Raises:
        CheckpointError: If the data's column roles differ from the checkpoint's.
    """
    spec = data.schema_spec
    if data.path is not None and spec is not None and not data.hillstrom_arm:
        roles = FeatureSchema.from_spec(
            spec, {c: Vocabulary() for c in spec.categorical_columns}
        )
        _check_fingerprint(roles, schema)
        return load_csv(data.path, spec, vocabularies=schema.vocabularies), None
    dataset, truth = load_data(data, seed)
    _check_fingerprint(dataset.schema, schema)
    return recode(dataset, schema.vocabularies), truth


def _check_fingerprint(found: FeatureSchema, expected: FeatureSchema) -> None:
    if found.fingerprint() != expected.fingerprint():
        msg = (
            "The dataset's column roles do not match the checkpoint schema:"
            f" {found.roles()} vs {expected.roles()}."
        )
        raise CheckpointError(msg)


# --------------------------------------------
# ----------------- Commands -----------------
# --------------------------------------------


def _write_report(out: Artifacts, name: str, report: MetricReport) -> None:
    out.write_text(name, report.to_serial().to_json())


def _summary_line(report: MetricReport) -> str:
    return (
        f"AUUC {report.auuc_norm:.4f}  KRCC {report.krcc:.4f}"
        f"  LIFT@{report.h:g} {report.lift_at_h:.4f}"
    )


def cmd_train(cfg: RunConfig, out: Artifacts, args: argparse.Namespace) -> None:
    """Split, train, and write the best checkpoint, history and reports."""
    out.reserve(
        "config.json",
        "checkpoint.json",
        "history.json",
        "val_metrics.json",
        "test_metrics.json",
    )
    data = _require_data(cfg)
    dataset, truth = load_data(data, cfg.seed)
    parts = split_indices(len(dataset), data.fractions, cfg.seed)
    train_set, val_set, test_set = fit_vocabularies(*(dataset.subset(p) for p in parts))
    truths = [None if truth is None else truth.take(p).cate for p in parts]
    logger.info(
        "Split {} records into {} / {} / {}",
        len(dataset),
        len(train_set),
        len(val_set),
        len(test_set),
    )
    out.write_text("config.json", cfg.model_dump_json(indent=2))

    params, history = train(
        train_set, val_set, cfg.model, cfg.train, cfg.eval, val_truth=truths[1]
    )
    save_checkpoint(out.path("checkpoint.json"), params, cfg.model, train_set.schema)
    out.write_text("history.json", history.to_serial().to_json())
    val_report = history.best.validation
    _write_report(out, "val_metrics.json", val_report)

    summary = val_report
    if len(set(test_set.treatment.tolist())) == 2:
        summary = evaluate_epoch(params, cfg.model, test_set, cfg.eval, truths[2])
        _write_report(out, "test_metrics.json", summary)
    else:
        logger.warning("Test split lacks a treatment group; no test report written")
    print(f"best epoch {history.best_epoch}  {_summary_line(summary)}")


def cmd_eval(cfg: RunConfig, out: Artifacts, args: argparse.Namespace) -> None:
    """Score a dataset with a checkpoint; write the report and both curves."""
    names = ("metrics.json", "uplift_curve.csv", "qini_curve.csv")
    if args.command == "curves":
        names = names[1:]
    out.reserve("config.json", *names)
    params, model_config, schema = load_checkpoint(Path(args.checkpoint))
    dataset, truth = _load_for_checkpoint(_require_data(cfg), cfg.seed, schema)
    out.write_text("config.json", cfg.model_dump_json(indent=2))
    report = evaluate_epoch(
        params,
        model_config,
        dataset,
        cfg.eval,
        None if truth is None else truth.cate,
    )
    if "metrics.json" in names:
        _write_report(out, "metrics.json", report)
    assert report.uplift_curve is not None and report.qini_curve is not None
    export_curves(report.uplift_curve, out.path("uplift_curve.csv"))
    export_curves(report.qini_curve, out.path("qini_curve.csv"))
    if "metrics.json" in names:
        print(_summary_line(report))


def cmd_synth(cfg: RunConfig, out: Artifacts, args: argparse.Namespace) -> None:
    """Write a synthetic dataset, its ground truth and its schema spec."""
    out.reserve("config.json", "dataset.csv", "truth.csv", "schema.json")
    synthetic = (cfg.data.synthetic if cfg.data else None) or SyntheticConfig()
    dataset, truth = generate_synthetic(synthetic, cfg.seed)
    out.write_text("config.json", cfg.model_dump_json(indent=2))
    write_csv(dataset, out.path("dataset.csv"))
    pd.DataFrame(
        {
            "index": np.arange(len(truth)),
            "cate": truth.cate,
            "p1": truth.p1,
            "mu1": truth.mu1,
            "p0": truth.p0,
            "mu0": truth.mu0,
        }
    ).to_csv(out.path("truth.csv"), index=False, lineterminator="\n")
    out.write_text("schema.json", dataset.schema.to_spec().model_dump_json(indent=2))
    logger.info("Generated {} synthetic records", len(dataset))


def cmd_prepare(cfg: RunConfig, out: Artifacts, args: argparse.Namespace) -> None:
    """Raw Hillstrom export to a one-arm dataset with a binary treatment."""
    data = _require_data(cfg)
    if data.path is None or data.hillstrom_arm is None:
        msg = "prepare needs data.path and data.hillstrom_arm."
        raise ConfigError(msg)
    name = f"hillstrom_{data.hillstrom_arm}.csv"
    out.reserve("config.json", name, "schema.json")
    dataset = adapt_hillstrom(load_hillstrom(data.path), data.hillstrom_arm)
    out.write_text("config.json", cfg.model_dump_json(indent=2))
    write_csv(dataset, out.path(name))
    out.write_text("schema.json", dataset.schema.to_spec().model_dump_json(indent=2))
    logger.info("Prepared {} Hillstrom-{} records", len(dataset), data.hillstrom_arm)


def cmd_summarize(cfg: RunConfig, out: Artifacts, args: argparse.Namespace) -> None:
    """Mean and standard deviation of metrics across report files."""
    out.reserve("config.json", "summary.json")
    reports = []
    for path in args.reports:
        try:
            reports.append(
                SerialMetricReport.load_json(
                    json.loads(Path(path).read_text(encoding="utf-8"))
                )
            )
        except (OSError, ValueError) as err:
            msg = f"Cannot read metric report {path}: {err}"
            raise ConfigError(msg) from err
    summary = summarize_reports(reports)
    out.write_text("config.json", cfg.model_dump_json(indent=2))
    out.write_text("summary.json", json.dumps(summary, indent=2))
    for name, stats in summary.items():
        mean, std, n = stats["mean"], stats["std"], stats["n"]
        print(f"{name:<10} {mean:.4f} ± {std:.4f} (n={n:g})")


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "curves": cmd_eval,
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "summarize": cmd_summarize,
}


# --------------------------------------------
# ------------------- Entry ------------------
# --------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="run seed (split, init, batching)")
    common.add_argument("--out", help="output directory")
    common.add_argument(
        "--overwrite", action="store_true", help="replace existing artifacts"
    )
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR"],
    )

    parser = argparse.ArgumentParser(
        prog="revup",
        description="Revenue uplift modeling. Extra --section.key VALUE flags"
        " override configuration values.",
    )
    parser.add_argument("--version", action="version", version=revup.__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train and select a model")
    for name, text in (
        ("eval", "evaluate a checkpoint"),
        ("curves", "export uplift and Qini curves"),
    ):
        cmd = sub.add_parser(name, parents=[common], help=text)
        cmd.add_argument("--checkpoint", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic trial")
    sub.add_parser(
        "prepare", parents=[common], help="build a Hillstrom one-arm dataset"
    )
    summarize = sub.add_parser(
        "summarize", parents=[common], help="average metric reports over seeds"
    )
    summarize.add_argument("reports", nargs="+")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logger.remove()
    logger.add(sys.stderr, level=args.log_level)

    out: Artifacts | None = None
    try:
        cfg = load_run_config(args, extra)
        out = Artifacts(cfg.output.directory, cfg.output.overwrite)
        COMMANDS[args.command](cfg, out, args)
    except (RevupError, ValidationError) as err:
        logger.error("{}", err)
        if out is not None:
            out.remove_written()
        return 1
    return 0
