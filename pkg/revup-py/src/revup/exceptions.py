"""revup exceptions."""

from __future__ import annotations

from dataclasses import dataclass


class RevupError(Exception):
    """Base class for all errors raised by revup."""

    @property
    def msg(self) -> str:
        return self.__class__.__doc__ or self.__class__.__name__

    def __str__(self) -> str:
        return self.msg


# ----------------------------------------
# --------------- Data -------------------
# ----------------------------------------


class DataError(RevupError):
    """Invalid input data."""


@dataclass
class MissingFile(DataError):
    """Input file does not exist."""

    path: str

    @property
    def msg(self) -> str:
        return f"Input file {self.path} does not exist."


@dataclass
class UnreadableFile(DataError):
    """Input file is not a well-formed UTF-8 CSV."""

    path: str
    reason: str

    @property
    def msg(self) -> str:
        return f"Cannot read {self.path} as CSV: {self.reason}"


@dataclass
class MissingColumn(DataError):
    """A declared column is absent from the input."""

    column: str
    source: str

    @property
    def msg(self) -> str:
        return f"Column {self.column!r} not found in {self.source}."


@dataclass
class CellParseError(DataError):
    """A numeric cell could not be parsed."""

    row: int
    column: str
    value: str

    @property
    def msg(self) -> str:
        return (
            f"Row {self.row}, column {self.column!r}: cannot parse {self.value!r}"
            " as a number."
        )


@dataclass
class UnknownTreatmentValue(DataError):
    """Treatment cell outside the declared two-value mapping."""

    row: int
    value: str
    allowed: tuple[str, ...]

    @property
    def msg(self) -> str:
        return (
            f"Row {self.row}: treatment value {self.value!r} is not one of"
            f" {list(self.allowed)}."
        )


@dataclass
class NegativeResponse(DataError):
    """Revenue responses must be non-negative."""

    row: int
    value: float

    @property
    def msg(self) -> str:
        return f"Row {self.row}: response {self.value} is negative."


@dataclass
class InvalidRecord(DataError):
    """Record does not validate against its schema."""

    reason: str

    @property
    def msg(self) -> str:
        return f"Invalid record: {self.reason}"


class EmptyDataset(DataError):
    """Operation requires at least one record."""


@dataclass
class InvalidFractions(DataError):
    """Split fractions must be positive and sum to one."""

    fractions: tuple[float, ...]

    @property
    def msg(self) -> str:
        return (
            f"Split fractions {self.fractions} must be positive and sum to 1"
            " within 1e-9."
        )


@dataclass
class UnknownSegment(DataError):
    """Hillstrom segment value outside the known campaign arms."""

    value: str

    @property
    def msg(self) -> str:
        return f"Unknown Hillstrom segment {self.value!r}."


# ----------------------------------------
# --------------- Model ------------------
# ----------------------------------------


class ModelError(RevupError):
    """Invalid model state or input."""


@dataclass
class NonFiniteError(ModelError):
    """A computed quantity is NaN or infinite."""

    where: str
    location: str

    @property
    def msg(self) -> str:
        return f"Non-finite values in {self.where} at {self.location}."


@dataclass
class VocabularyError(ModelError):
    """Category index outside the embedding table of its column."""

    column: str
    index: int
    size: int

    @property
    def msg(self) -> str:
        return (
            f"Category index {self.index} out of range for column {self.column!r}"
            f" with vocabulary size {self.size}."
        )


@dataclass
class ShapeError(ModelError):
    """Parameter or input shapes do not chain."""

    detail: str

    @property
    def msg(self) -> str:
        return f"Shape mismatch: {self.detail}"


# ----------------------------------------
# ------------ Losses / training ---------
# ----------------------------------------


@dataclass
class LossError(RevupError):
    """A loss is undefined for its inputs."""

    detail: str

    @property
    def msg(self) -> str:
        return self.detail


class TrainingError(RevupError):
    """Training cannot proceed."""


@dataclass
class GroupTooSmall(TrainingError):
    """A treatment group has fewer records than the batch size."""

    group: str
    size: int
    batch_size: int

    @property
    def msg(self) -> str:
        return (
            f"The {self.group} group has {self.size} records, fewer than the"
            f" batch size {self.batch_size}."
        )


@dataclass
class Divergence(TrainingError):
    """Training loss became non-finite or exploded."""

    epoch: int
    step: int
    value: float

    @property
    def msg(self) -> str:
        return (
            f"Training diverged at epoch {self.epoch}, step {self.step}:"
            f" loss {self.value}."
        )


# ----------------------------------------
# ---------- Metrics / artifacts ---------
# ----------------------------------------


@dataclass
class MetricError(RevupError):
    """A metric cannot be computed at all."""

    detail: str

    @property
    def msg(self) -> str:
        return self.detail


@dataclass
class CheckpointError(RevupError):
    """Checkpoint cannot be used."""

    detail: str

    @property
    def msg(self) -> str:
        return self.detail


@dataclass
class ConfigError(RevupError):
    """Invalid run configuration."""

    detail: str

    @property
    def msg(self) -> str:
        return self.detail


@dataclass
class OutputExists(RevupError):
    """Refusing to overwrite an existing artifact."""

    path: str

    @property
    def msg(self) -> str:
        return f"{self.path} already exists; pass --overwrite to replace it."
