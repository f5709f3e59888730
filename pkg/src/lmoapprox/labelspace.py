"""Finite label spaces, label subsets, subset weight tables, and cardinality
distributions.

A :class:`LabelSpace` fixes finitely many track labels in canonical order
(increasing integer index).  Joint existence uncertainty over the space is a
:class:`WeightTable` on the power set: entry ``w(I)`` is the probability that
exactly the tracks in ``I`` exist.  Grouping the table by subset size gives
the :class:`CardinalityDistribution` of the object count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy import stats

__all__ = [
    "Label",
    "LabelSpace",
    "LabelSet",
    "WeightTable",
    "CardinalityDistribution",
    "enumerate_subsets",
    "canonical_prefix",
    "cardinality_from_weights",
    "mean_cardinality",
    "NORMALIZATION_TOL",
    "POISSON_TAIL_MASS",
    "MAX_LABELS",
]

NORMALIZATION_TOL = 1e-9
POISSON_TAIL_MASS = 1e-12
MAX_LABELS = 20


@dataclass(frozen=True, order=True)
class Label:
    """A track label: a canonical positive index plus a display name."""

    index: int
    name: str = ""

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"label index must be >= 1, got {self.index}")
        if not self.name:
            object.__setattr__(self, "name", str(self.index))

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class LabelSet:
    """A subset of a label space, stored in canonical (index) order."""

    members: tuple[Label, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(self.members))
        idx = [lab.index for lab in self.members]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(
                "label set members must be distinct and in increasing index order"
            )

    @classmethod
    def of(cls, labels: Iterable[Label]) -> "LabelSet":
        """Build a set from labels in any order; duplicates are rejected."""
        members = tuple(sorted(labels))
        for a, b in zip(members, members[1:]):
            if a == b:
                raise ValueError(f"duplicate label {a} in label set")
        return cls(members)

    @classmethod
    def empty(cls) -> "LabelSet":
        return cls(())

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[Label]:
        return iter(self.members)

    def __contains__(self, label: Label) -> bool:
        return label in self.members

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(lab.index for lab in self.members)

    def minus(self, label: Label) -> "LabelSet":
        if label not in self.members:
            raise ValueError(f"label {label} not in {self}")
        return LabelSet(tuple(lab for lab in self.members if lab != label))

    def __str__(self) -> str:
        return "{" + ",".join(lab.name for lab in self.members) + "}"


@dataclass(frozen=True)
class LabelSpace:
    """A finite, ordered label space; the order of ``labels`` is canonical."""

    labels: tuple[Label, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        if not 1 <= len(self.labels) <= MAX_LABELS:
            raise ValueError(
                f"label space must hold between 1 and {MAX_LABELS} labels, "
                f"got {len(self.labels)}"
            )
        idx = [lab.index for lab in self.labels]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("label indices must be strictly increasing")
        names = [lab.name for lab in self.labels]
        if len(set(names)) != len(names):
            raise ValueError("label names must be distinct")
        object.__setattr__(
            self, "_position", {lab: i for i, lab in enumerate(self.labels)}
        )
        object.__setattr__(self, "_by_name", {lab.name: lab for lab in self.labels})

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "LabelSpace":
        return cls(tuple(Label(i + 1, str(n)) for i, n in enumerate(names)))

    @classmethod
    def of_size(cls, n: int) -> "LabelSpace":
        return cls.from_names([str(i + 1) for i in range(n)])

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[Label]:
        return iter(self.labels)

    def __contains__(self, label: Label) -> bool:
        return label in self._position

    def position(self, label: Label) -> int:
        """Zero-based position of a label in canonical order."""
        try:
            return self._position[label]
        except KeyError:
            raise ValueError(f"label {label} is not in this label space") from None

    def label(self, key: "int | str | Label") -> Label:
        """Look a label up by canonical index, by name, or pass one through."""
        if isinstance(key, Label):
            if key not in self:
                raise ValueError(f"label {key} is not in this label space")
            return key
        if isinstance(key, str):
            try:
                return self._by_name[key]
            except KeyError:
                raise ValueError(f"no label named {key!r} in this label space") from None
        for lab in self.labels:
            if lab.index == key:
                return lab
        raise ValueError(f"no label with index {key} in this label space")

    def subset(self, keys: Iterable["int | str | Label"]) -> LabelSet:
        return LabelSet.of(self.label(k) for k in keys)

    def prefix(self, n: int) -> LabelSet:
        """The first ``n`` labels in canonical order."""
        if not 0 <= n <= len(self):
            raise ValueError(f"prefix length {n} out of range 0..{len(self)}")
        return LabelSet(self.labels[:n])


def enumerate_subsets(space: LabelSpace, n: "int | None" = None) -> list[LabelSet]:
    """All subsets of the space, or all of cardinality ``n``.

    Deterministic order: by cardinality, then lexicographic on canonical
    indices.  Cardinality ``n=0`` yields only the empty set.
    """
    if n is not None and not 0 <= n <= len(space):
        raise ValueError(f"subset cardinality {n} out of range 0..{len(space)}")
    sizes = range(len(space) + 1) if n is None else (n,)
    return [LabelSet(c) for k in sizes for c in combinations(space.labels, k)]


def canonical_prefix(space: LabelSpace, n: int) -> LabelSet:
    """The canonical prefix subset: the first ``n`` labels of the space."""
    return space.prefix(n)


class WeightTable:
    """Nonnegative weights over every subset of a label space.

    Stored dense over the power set (subsets absent from the input read as
    zero).  By default the table must sum to one within
    ``NORMALIZATION_TOL``; pass ``renormalize=True`` to divide by the total
    instead, or ``check=False`` to defer the verdict to a validator.
    """

    def __init__(
        self,
        space: LabelSpace,
        entries: "Mapping[LabelSet, float] | Iterable[tuple[LabelSet, float]]",
        *,
        renormalize: bool = False,
        check: bool = True,
    ) -> None:
        self._space = space
        values = np.zeros(1 << len(space))
        seen: set[int] = set()
        items = entries.items() if isinstance(entries, Mapping) else entries
        for subset, value in items:
            value = float(value)
            if value < 0:
                raise ValueError(f"negative weight {value} for subset {subset}")
            mask = self._mask(subset)
            if mask in seen:
                raise ValueError(f"duplicate subset {subset} in weight table")
            seen.add(mask)
            values[mask] = value
        total = math.fsum(values)
        if renormalize:
            if total <= 0:
                raise ValueError("cannot renormalize a weight table with zero total")
            values = values / total
        elif check and abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"subset weights sum to {total!r}, expected 1")
        values.flags.writeable = False
        self._values = values

    @property
    def space(self) -> LabelSpace:
        return self._space

    def _mask(self, subset: LabelSet) -> int:
        return sum(1 << self._space.position(lab) for lab in subset)

    def weight(self, subset: LabelSet) -> float:
        return float(self._values[self._mask(subset)])

    def total(self) -> float:
        return math.fsum(self._values)

    def items(self) -> Iterator[tuple[LabelSet, float]]:
        """All (subset, weight) pairs in canonical enumeration order."""
        for subset in enumerate_subsets(self._space):
            yield subset, float(self._values[self._mask(subset)])

    def nonzero(self) -> Iterator[tuple[LabelSet, float]]:
        for subset, value in self.items():
            if value > 0:
                yield subset, value

    def renormalized(self) -> "WeightTable":
        return WeightTable(self._space, dict(self.items()), renormalize=True)


@dataclass(frozen=True, eq=False)
class CardinalityDistribution:
    """Distribution of the object count, finite or truncated Poisson.

    ``probs[n]`` is the probability of exactly ``n`` objects.  Finite kind
    must sum to one; Poisson kind stores the probability mass up to the
    smallest ``n`` whose tail mass falls below ``POISSON_TAIL_MASS`` and
    keeps the rate alongside.
    """

    probs: np.ndarray
    kind: str = "finite"
    rate: "float | None" = None

    def __post_init__(self) -> None:
        arr = np.array(self.probs, dtype=float)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("cardinality probabilities must be a nonempty vector")
        if np.any(arr < 0):
            raise ValueError("cardinality probabilities must be nonnegative")
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)
        if self.kind == "finite":
            total = math.fsum(arr)
            if abs(total - 1.0) > NORMALIZATION_TOL:
                raise ValueError(f"cardinality probabilities sum to {total!r}, expected 1")
        elif self.kind == "poisson":
            if self.rate is None or self.rate <= 0:
                raise ValueError("poisson cardinality requires a positive rate")
            if stats.poisson.sf(arr.size - 1, self.rate) >= POISSON_TAIL_MASS:
                raise ValueError(
                    "poisson cardinality must be truncated where the tail mass "
                    f"is below {POISSON_TAIL_MASS}"
                )
        else:
            raise ValueError(f"unknown cardinality kind {self.kind!r}")

    @classmethod
    def poisson(cls, rate: float) -> "CardinalityDistribution":
        """Poisson counts with the given rate, truncated at tail mass 1e-12."""
        if rate <= 0:
            raise ValueError(f"poisson rate must be positive, got {rate}")
        n_max = int(stats.poisson.isf(POISSON_TAIL_MASS, rate))
        while stats.poisson.sf(n_max, rate) >= POISSON_TAIL_MASS:
            n_max += 1
        while n_max > 0 and stats.poisson.sf(n_max - 1, rate) < POISSON_TAIL_MASS:
            n_max -= 1
        probs = stats.poisson.pmf(np.arange(n_max + 1), rate)
        return cls(probs=probs, kind="poisson", rate=float(rate))

    def __len__(self) -> int:
        return int(self.probs.size)

    def prob(self, n: int) -> float:
        if n < 0:
            raise ValueError("object count cannot be negative")
        return float(self.probs[n]) if n < self.probs.size else 0.0

    def mean(self) -> float:
        if self.kind == "poisson":
            return float(self.rate)
        return math.fsum(n * p for n, p in enumerate(self.probs))


def cardinality_from_weights(weights: WeightTable) -> CardinalityDistribution:
    """Cardinality distribution induced by a subset weight table.

    ``probs[n]`` sums the weights of all subsets of size ``n``.  The table
    must be normalized.
    """
    total = weights.total()
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"weight table sums to {total!r}, expected 1")
    space = weights.space
    probs = np.array(
        [
            math.fsum(weights.weight(s) for s in enumerate_subsets(space, n))
            for n in range(len(space) + 1)
        ]
    )
    return CardinalityDistribution(probs=probs)


def mean_cardinality(rho: CardinalityDistribution) -> float:
    """Expected object count (the rate, for the Poisson kind)."""
    return rho.mean()
