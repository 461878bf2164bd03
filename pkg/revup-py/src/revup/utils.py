"""Shared utility classes and functions."""

from __future__ import annotations

import hashlib
import json
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np

#: Category string reserved for index 0, used for values unseen at fit time.
UNKNOWN = "<unk>"


class DuplicateCategory(Exception):
    """Vocabulary categories must be unique."""


@dataclass()
class Vocabulary(Mapping[str, int]):
    """Bidirectional map between category strings and dense embedding indices.

    Index 0 is always the reserved :data:`UNKNOWN` category, so a vocabulary
    fitted on `V - 1` distinct values has size `V` and indices `0..V-1`.

    Args:
        categories: Known categories, in index order starting at 1.

    Raises:
        DuplicateCategory: If a category is repeated.

    Example:
        >>> voc = Vocabulary(["red", "blue"])
        >>> voc["blue"]
        2
        >>> voc.category(1)
        'red'
        >>> len(voc)
        3
    """

    fwd: dict[str, int] = field(default_factory=dict)
    bck: list[str] = field(default_factory=list)

    def __init__(self, categories: Iterable[str] = ()) -> None:
        self.fwd = {UNKNOWN: 0}
        self.bck = [UNKNOWN]
        for c in categories:
            if c in self.fwd:
                raise DuplicateCategory(c)
            self.add(c)

    @classmethod
    def fit(cls, values: Iterable[str]) -> Vocabulary:
        """Build a vocabulary from raw values in first-appearance order.

        Example:
            >>> Vocabulary.fit(["b", "a", "b", "c"]).categories()
            ['b', 'a', 'c']
        """
        voc = cls()
        for v in values:
            if v not in voc.fwd:
                voc.add(v)
        return voc

    def __getitem__(self, key: str) -> int:
        """Index of a known category.

        Raises:
            KeyError: If the category is not in the vocabulary.
        """
        return self.fwd[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self.bck)

    def __len__(self) -> int:
        return len(self.bck)

    def add(self, category: str) -> int:
        """Append a new category and return its index.

        Example:
            >>> voc = Vocabulary()
            >>> voc.add("x")
            1
        """
        if category in self.fwd:
            raise DuplicateCategory(category)
        self.fwd[category] = len(self.bck)
        self.bck.append(category)
        return self.fwd[category]

    def index(self, category: str) -> int:
        """Index of `category`, or 0 if unseen.

        Example:
            >>> Vocabulary(["a"]).index("zzz")
            0
        """
        return self.fwd.get(category, 0)

    def category(self, index: int) -> str:
        """Category string at `index`.

        Raises:
            IndexError: If the index is outside the vocabulary.
        """
        if not 0 <= index < len(self.bck):
            msg = f"Index {index} outside vocabulary of size {len(self.bck)}."
            raise IndexError(msg)
        return self.bck[index]

    def categories(self) -> list[str]:
        """Known categories in index order, excluding the reserved unknown."""
        return self.bck[1:]

    def __repr__(self) -> str:
        return f"Vocabulary({self.categories()})"


def spawn_generators(seed: int, n: int) -> list[np.random.Generator]:
    """Independent numpy generators derived from one integer seed.

    Example:
        >>> a, b = spawn_generators(7, 2)
        >>> bool(a.integers(1000) == spawn_generators(7, 2)[0].integers(1000))
        True
    """
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def fingerprint(payload: Mapping[str, Any]) -> str:
    """Stable SHA-256 hex digest of a JSON-serializable mapping."""
    encoded = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(encoded.encode()).hexdigest()
