"""Records, schemas and datasets of randomized-trial revenue data.

A :class:`Dataset` is an immutable, ordered collection of :class:`SampleRecord`
validated against a :class:`FeatureSchema`. Model code consumes the columnar
:class:`FeatureBatch` view of a dataset.
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, Literal, overload

import numpy as np
import pandas as pd
from loguru import logger

from revup.config import SchemaSpec
from revup.exceptions import (
    CellParseError,
    EmptyDataset,
    InvalidFractions,
    InvalidRecord,
    MissingColumn,
    MissingFile,
    NegativeResponse,
    UnknownSegment,
    UnknownTreatmentValue,
    UnreadableFile,
)
from revup.serialization.checkpoint import SerialCategorical, SerialSchema
from revup.utils import Vocabulary, fingerprint

if TYPE_CHECKING:
    from pathlib import Path

    from numpy.typing import ArrayLike


@dataclass(frozen=True)
class SampleRecord:
    """One individual: covariates, received treatment and observed revenue.

    Example:
        >>> SampleRecord((0.5,), (), treatment=1, response=3.0)
        SampleRecord(numeric=(0.5,), categorical=(), treatment=1, response=3.0)
    """

    numeric: tuple[float, ...]
    categorical: tuple[int, ...]
    treatment: int
    response: float

    def __post_init__(self) -> None:
        if self.treatment not in (0, 1):
            msg = f"treatment {self.treatment} is not 0 or 1"
            raise InvalidRecord(msg)
        if not math.isfinite(self.response) or self.response < 0:
            msg = f"response {self.response} is not a finite value >= 0"
            raise InvalidRecord(msg)


@dataclass
class FeatureSchema:
    """Column roles and categorical vocabularies of a dataset."""

    numeric_columns: list[str]
    #: Categorical column name to vocabulary, in column order.
    vocabularies: dict[str, Vocabulary]
    treatment_column: str | None
    response_column: str
    treatment_mapping: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_spec(
        cls, spec: SchemaSpec, vocabularies: Mapping[str, Vocabulary]
    ) -> FeatureSchema:
        return cls(
            numeric_columns=list(spec.numeric_columns),
            vocabularies={c: vocabularies[c] for c in spec.categorical_columns},
            treatment_column=spec.treatment_column,
            response_column=spec.response_column,
            treatment_mapping=dict(spec.treatment_mapping),
        )

    @property
    def categorical_columns(self) -> list[str]:
        return list(self.vocabularies)

    def to_spec(self, delimiter: str = ",") -> SchemaSpec:
        """Column-role declaration that reloads CSVs written with this schema."""
        return SchemaSpec(
            numeric_columns=self.numeric_columns,
            categorical_columns=self.categorical_columns,
            treatment_column=self.treatment_column,
            treatment_mapping=self.treatment_mapping,
            response_column=self.response_column,
            delimiter=delimiter,
        )

    def roles(self) -> dict[str, object]:
        """Column roles without vocabularies."""
        return {
            "numeric": self.numeric_columns,
            "categorical": self.categorical_columns,
            "treatment": self.treatment_column,
            "treatment_mapping": self.treatment_mapping,
            "response": self.response_column,
        }

    def fingerprint(self) -> str:
        """Digest of the column roles, used to match checkpoints to data."""
        return fingerprint(self.roles())

    def to_serial(self) -> SerialSchema:
        return SerialSchema(
            numeric_columns=self.numeric_columns,
            categorical=[
                SerialCategorical(name=col, categories=voc.categories())
                for col, voc in self.vocabularies.items()
            ],
            treatment_column=self.treatment_column,
            treatment_mapping=self.treatment_mapping,
            response_column=self.response_column,
        )

    @classmethod
    def from_serial(cls, serial: SerialSchema) -> FeatureSchema:
        return cls(
            numeric_columns=list(serial.numeric_columns),
            vocabularies={c.name: Vocabulary(c.categories) for c in serial.categorical},
            treatment_column=serial.treatment_column,
            response_column=serial.response_column,
            treatment_mapping=dict(serial.treatment_mapping),
        )

    def validate(self, record: SampleRecord) -> None:
        """Check a record's feature lengths and category indices.

        Raises:
            InvalidRecord: If the record does not fit the schema.
        """
        if len(record.numeric) != len(self.numeric_columns):
            msg = (
                f"{len(record.numeric)} numeric features, schema declares"
                f" {len(self.numeric_columns)}"
            )
            raise InvalidRecord(msg)
        if len(record.categorical) != len(self.vocabularies):
            msg = (
                f"{len(record.categorical)} categorical features, schema declares"
                f" {len(self.vocabularies)}"
            )
            raise InvalidRecord(msg)
        for idx, (col, voc) in zip(record.categorical, self.vocabularies.items()):
            if not 0 <= idx < len(voc):
                msg = f"category index {idx} out of range for {col!r}"
                raise InvalidRecord(msg)


@dataclass(frozen=True)
class FeatureBatch:
    """Columnar view of records: the arrays the model consumes."""

    #: (n, d_numeric) float64
    numeric: np.ndarray
    #: (n, n_categorical) int64
    categorical: np.ndarray
    #: (n,) int64 in {0, 1}
    treatment: np.ndarray
    #: (n,) float64 >= 0
    response: np.ndarray

    @classmethod
    def from_records(
        cls, records: Sequence[SampleRecord], n_numeric: int, n_categorical: int
    ) -> FeatureBatch:
        n = len(records)
        return cls(
            numeric=np.array(
                [r.numeric for r in records], dtype=np.float64
            ).reshape(n, n_numeric),
            categorical=np.array(
                [r.categorical for r in records], dtype=np.int64
            ).reshape(n, n_categorical),
            treatment=np.array([r.treatment for r in records], dtype=np.int64),
            response=np.array([r.response for r in records], dtype=np.float64),
        )

    def __len__(self) -> int:
        return len(self.response)

    def take(self, indices: ArrayLike) -> FeatureBatch:
        """Rows at `indices`, in that order."""
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureBatch(
            self.numeric[idx], self.categorical[idx], self.treatment[idx],
            self.response[idx],
        )


@dataclass(frozen=True)
class Dataset(Sequence[SampleRecord]):
    """Immutable ordered collection of records sharing one schema.

    Raises:
        InvalidRecord: If any record does not validate against the schema.
    """

    schema: FeatureSchema
    records: tuple[SampleRecord, ...]

    def __post_init__(self) -> None:
        for r in self.records:
            self.schema.validate(r)

    @classmethod
    def from_arrays(
        cls,
        schema: FeatureSchema,
        numeric: np.ndarray,
        categorical: np.ndarray,
        treatment: np.ndarray,
        response: np.ndarray,
    ) -> Dataset:
        records = tuple(
            SampleRecord(
                tuple(float(v) for v in x), tuple(int(v) for v in c), int(t), float(y)
            )
            for x, c, t, y in zip(numeric, categorical, treatment, response)
        )
        return cls(schema, records)

    @overload
    def __getitem__(self, index: int) -> SampleRecord: ...
    @overload
    def __getitem__(self, index: slice) -> Dataset: ...

    def __getitem__(self, index: int | slice) -> SampleRecord | Dataset:
        if isinstance(index, slice):
            return Dataset(self.schema, self.records[index])
        return self.records[index]

    def __iter__(self) -> Iterator[SampleRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, indices: Sequence[int] | np.ndarray) -> Dataset:
        """Records at `indices`, in that order, with the same schema."""
        return Dataset(self.schema, tuple(self.records[int(i)] for i in indices))

    @cached_property
    def batch(self) -> FeatureBatch:
        """Columnar arrays of all records."""
        return FeatureBatch.from_records(
            self.records,
            len(self.schema.numeric_columns),
            len(self.schema.vocabularies),
        )

    @property
    def treatment(self) -> np.ndarray:
        return self.batch.treatment

    @property
    def response(self) -> np.ndarray:
        return self.batch.response


# --------------------------------------------
# ----------------- CSV ----------------------
# --------------------------------------------


#: Plain decimal or scientific notation and nothing else.
_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"


def _to_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return math.nan


def _parse_numbers(frame: pd.DataFrame, column: str) -> np.ndarray:
    # float() parses shortest-repr output back to the identical double
    raw = frame[column]
    cells = raw.where(raw.str.fullmatch(_NUMBER), "nan")
    values = np.fromiter(map(_to_float, cells), dtype=np.float64, count=len(raw))
    bad = np.flatnonzero(~np.isfinite(values))
    if len(bad):
        row = int(bad[0])
        raise CellParseError(row + 1, column, raw.iloc[row])
    return values


def load_csv(
    path: Path,
    spec: SchemaSpec,
    vocabularies: Mapping[str, Vocabulary] | None = None,
) -> Dataset:
    """Load a dataset from a CSV file with a header row.

    Categorical vocabularies are built in first-appearance order unless
    `vocabularies` are supplied, in which case unseen categories map to the
    reserved unknown index 0.

    Args:
        path: UTF-8 CSV file.
        spec: Column roles and the treatment value mapping.
        vocabularies: Pre-fitted vocabularies, e.g. from a checkpoint.

    Raises:
        MissingFile: If `path` does not exist.
        UnreadableFile: If the file is not UTF-8 or not well-formed CSV.
        MissingColumn: If a declared column is absent.
        CellParseError: If a numeric or response cell is not a plain finite
            decimal, e.g. padded or written with digit separators. Rows are
            numbered from 1, excluding the header.
        UnknownTreatmentValue: If a treatment cell is not in `spec.treatment_mapping`.
        NegativeResponse: If a response is negative.
    """
    if not path.exists():
        raise MissingFile(str(path))
    try:
        frame = pd.read_csv(
            path,
            sep=spec.delimiter,
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
        )
    except (UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise UnreadableFile(str(path), str(err)) from err
    declared = [
        *spec.numeric_columns,
        *spec.categorical_columns,
        spec.response_column,
    ]
    if spec.treatment_column is not None:
        declared.append(spec.treatment_column)
    for col in declared:
        if col not in frame.columns:
            raise MissingColumn(col, str(path))

    n = len(frame)
    numeric = np.empty((n, len(spec.numeric_columns)), dtype=np.float64)
    for j, col in enumerate(spec.numeric_columns):
        numeric[:, j] = _parse_numbers(frame, col)

    response = _parse_numbers(frame, spec.response_column)
    negative = np.flatnonzero(response < 0)
    if len(negative):
        row = int(negative[0])
        raise NegativeResponse(row + 1, float(response[row]))

    treatment = np.zeros(n, dtype=np.int64)
    if spec.treatment_column is not None:
        mapped = frame[spec.treatment_column].map(spec.treatment_mapping)
        unknown = np.flatnonzero(mapped.isna().to_numpy())
        if len(unknown):
            row = int(unknown[0])
            raise UnknownTreatmentValue(
                row + 1,
                frame[spec.treatment_column].iloc[row],
                tuple(spec.treatment_mapping),
            )
        treatment = mapped.to_numpy(dtype=np.int64)

    vocabs: dict[str, Vocabulary] = {}
    categorical = np.empty((n, len(spec.categorical_columns)), dtype=np.int64)
    for j, col in enumerate(spec.categorical_columns):
        values = frame[col].tolist()
        if vocabularies is None:
            voc = Vocabulary.fit(values)
        else:
            voc = vocabularies[col]
            unseen = sum(1 for v in values if v not in voc)
            if unseen:
                logger.warning(
                    "{} values of column {!r} are unseen and map to the unknown"
                    " category",
                    unseen,
                    col,
                )
        vocabs[col] = voc
        categorical[:, j] = [voc.index(v) for v in values]

    schema = FeatureSchema.from_spec(spec, vocabs)
    logger.debug("Loaded {} records from {}", n, path)
    return Dataset.from_arrays(schema, numeric, categorical, treatment, response)


def write_csv(dataset: Dataset, path: Path, delimiter: str = ",") -> None:
    """Write a dataset so that :func:`load_csv` with
    `dataset.schema.to_spec()` reloads it record for record.
    """
    schema = dataset.schema
    spec = schema.to_spec(delimiter)
    batch = dataset.batch
    columns: dict[str, object] = {}
    for j, col in enumerate(schema.numeric_columns):
        columns[col] = batch.numeric[:, j]
    for j, (col, voc) in enumerate(schema.vocabularies.items()):
        columns[col] = [voc.category(int(i)) for i in batch.categorical[:, j]]
    if schema.treatment_column is not None:
        columns[schema.treatment_column] = [
            spec.raw_treatment(int(t)) for t in batch.treatment
        ]
    columns[schema.response_column] = batch.response
    pd.DataFrame(columns).to_csv(
        path, sep=delimiter, index=False, lineterminator="\n", encoding="utf-8"
    )


# --------------------------------------------
# -------------- Hillstrom -------------------
# --------------------------------------------

HillstromArm = Literal["men", "women"]

#: Column roles of the public MineThatData e-mail campaign export. `visit` and
#: `conversion` are outcomes and are not used as features.
HILLSTROM_SPEC = SchemaSpec(
    numeric_columns=["recency", "history", "mens", "womens", "newbie"],
    categorical_columns=["history_segment", "zip_code", "channel", "segment"],
    response_column="spend",
)

_SEGMENT_COLUMN = "segment"
_CONTROL_SEGMENT = "No E-Mail"
_ARM_SEGMENTS: dict[str, str] = {"men": "Mens E-Mail", "women": "Womens E-Mail"}


def load_hillstrom(path: Path) -> Dataset:
    """Load the raw Hillstrom export with :data:`HILLSTROM_SPEC`."""
    return load_csv(path, HILLSTROM_SPEC)


def adapt_hillstrom(raw: Dataset, arm: HillstromArm) -> Dataset:
    """Pair one e-mail arm with the no-e-mail control group.

    Rows of the selected arm become treatment 1, "No E-Mail" rows treatment 0,
    and the other arm is dropped. The response is `spend`.

    Raises:
        MissingColumn: If the segment or spend column is absent.
        UnknownSegment: If a segment value is not a known campaign arm.
    """
    schema = raw.schema
    if _SEGMENT_COLUMN not in schema.vocabularies:
        raise MissingColumn(_SEGMENT_COLUMN, "the raw Hillstrom schema")
    if schema.response_column != "spend":
        raise MissingColumn("spend", "the raw Hillstrom schema")

    seg_pos = schema.categorical_columns.index(_SEGMENT_COLUMN)
    seg_voc = schema.vocabularies[_SEGMENT_COLUMN]
    treated_segment = _ARM_SEGMENTS[arm]
    known = {_CONTROL_SEGMENT, *_ARM_SEGMENTS.values()}

    records = []
    for r in raw:
        segment = seg_voc.category(r.categorical[seg_pos])
        if segment not in known:
            raise UnknownSegment(segment)
        if segment not in (treated_segment, _CONTROL_SEGMENT):
            continue
        cats = r.categorical[:seg_pos] + r.categorical[seg_pos + 1 :]
        records.append(
            SampleRecord(
                r.numeric, cats, int(segment == treated_segment), r.response
            )
        )

    new_schema = FeatureSchema(
        numeric_columns=list(schema.numeric_columns),
        vocabularies={
            c: v for c, v in schema.vocabularies.items() if c != _SEGMENT_COLUMN
        },
        treatment_column=_SEGMENT_COLUMN,
        response_column="spend",
        treatment_mapping={treated_segment: 1, _CONTROL_SEGMENT: 0},
    )
    dataset = Dataset(new_schema, tuple(records))
    n_treated = int(dataset.treatment.sum()) if records else 0
    if n_treated == 0 or n_treated == len(dataset):
        logger.warning(
            "Hillstrom-{} dataset has {} treated of {} records; one group is empty",
            arm,
            n_treated,
            len(dataset),
        )
    return dataset


# --------------------------------------------
# ------------- Partitioning -----------------
# --------------------------------------------


def split_indices(
    n: int, fractions: tuple[float, float, float], seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Record positions of the train, validation and test splits.

    Example:
        >>> [len(part) for part in split_indices(100, (0.6, 0.1, 0.3), seed=7)]
        [60, 10, 30]
        >>> [len(part) for part in split_indices(1, (0.6, 0.1, 0.3), seed=7)]
        [0, 0, 1]

    Raises:
        EmptyDataset: If `n` is zero.
        InvalidFractions: If fractions are not positive or do not sum to 1.
    """
    if n == 0:
        raise EmptyDataset
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidFractions(tuple(fractions))
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(n * fractions[0] + 1e-9)
    n_val = math.floor(n * fractions[1] + 1e-9)
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


def split(
    dataset: Dataset, fractions: tuple[float, float, float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle, then contiguous train/validation/test slices.

    Sizes are `floor(n * f_train)`, `floor(n * f_val)` and the remainder.
    See :func:`split_indices` for the errors raised.
    """
    train, val, test = split_indices(len(dataset), fractions, seed)
    return dataset.subset(train), dataset.subset(val), dataset.subset(test)


def partition_by_treatment(dataset: Dataset) -> tuple[Dataset, Dataset]:
    """Treated and control records, each in their original relative order."""
    treated = tuple(r for r in dataset if r.treatment == 1)
    control = tuple(r for r in dataset if r.treatment == 0)
    return Dataset(dataset.schema, treated), Dataset(dataset.schema, control)


def recode(dataset: Dataset, vocabularies: Mapping[str, Vocabulary]) -> Dataset:
    """Re-encode categorical indices against other vocabularies.

    Categories unknown to `vocabularies` map to index 0.

    Raises:
        MissingColumn: If a categorical column has no vocabulary.
    """
    old = dataset.schema.vocabularies
    for col in old:
        if col not in vocabularies:
            raise MissingColumn(col, "the supplied vocabularies")
    columns = [(voc, vocabularies[col]) for col, voc in old.items()]
    schema = FeatureSchema(
        numeric_columns=dataset.schema.numeric_columns,
        vocabularies={col: vocabularies[col] for col in old},
        treatment_column=dataset.schema.treatment_column,
        response_column=dataset.schema.response_column,
        treatment_mapping=dataset.schema.treatment_mapping,
    )
    records = tuple(
        SampleRecord(
            r.numeric,
            tuple(
                nv.index(ov.category(i)) for i, (ov, nv) in zip(r.categorical, columns)
            ),
            r.treatment,
            r.response,
        )
        for r in dataset
    )
    return Dataset(schema, records)


def fit_vocabularies(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Rebuild categorical vocabularies from `train` only and re-encode.

    Categories of `others` that do not occur in `train` map to index 0.
    All datasets must share the schema of `train`.

    Returns:
        `train` followed by `others`, re-encoded against the new vocabularies.
    """
    new = {
        col: Vocabulary.fit(voc.category(r.categorical[j]) for r in train)
        for j, (col, voc) in enumerate(train.schema.vocabularies.items())
    }
    out = tuple(recode(ds, new) for ds in (train, *others))
    if new:
        unseen = sum(int((ds.batch.categorical == 0).sum()) for ds in out[1:])
        if unseen:
            logger.warning(
                "{} categorical values unseen in training map to unknown", unseen
            )
    return out
