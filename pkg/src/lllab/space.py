"""Finite state spaces, exact distributions and events."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

ExactVector = list  # list[Fraction], dense


def as_fraction(value) -> Fraction:
    """Parse ints, Fractions, floats (by their decimal text) and "num/den" strings."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        # decimal reading, so 0.1 means 1/10 rather than the nearest double
        return Fraction(repr(value))
    raise TypeError(f"expected an exact rational, got {value!r}")


def format_fraction(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


@dataclass(frozen=True)
class StateSpace:
    labels: tuple

    def __post_init__(self):
        if len(self.labels) < 1:
            raise ValueError("state space must have at least one state")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("state labels must be distinct")

    @classmethod
    def of_size(cls, n: int) -> "StateSpace":
        return cls(tuple(str(i) for i in range(n)))

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown state {label!r}") from None

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class Distribution:
    weights: tuple

    def __post_init__(self):
        weights = tuple(as_fraction(w) for w in self.weights)
        object.__setattr__(self, "weights", weights)
        if any(w < 0 for w in weights):
            raise ValueError("distribution weights must be non-negative")
        total = sum(weights, Fraction(0))
        if total != 1:
            raise ValueError(f"distribution weights sum to {total}, not 1")

    @classmethod
    def uniform(cls, n: int) -> "Distribution":
        return cls(tuple(Fraction(1, n) for _ in range(n)))

    @classmethod
    def point(cls, n: int, state: int) -> "Distribution":
        return cls(tuple(Fraction(int(i == state)) for i in range(n)))

    def __len__(self):
        return len(self.weights)

    def __getitem__(self, i: int) -> Fraction:
        return self.weights[i]


@dataclass(frozen=True)
class Event:
    members: frozenset
    size: int

    def __post_init__(self):
        members = frozenset(self.members)
        object.__setattr__(self, "members", members)
        bad = [m for m in members if not (0 <= m < self.size)]
        if bad:
            raise IndexError(f"event members {sorted(bad)} outside 0..{self.size - 1}")

    @classmethod
    def of(cls, members: Iterable[int], size: int) -> "Event":
        return cls(frozenset(members), size)

    @classmethod
    def full(cls, size: int) -> "Event":
        return cls(frozenset(range(size)), size)

    @classmethod
    def empty(cls, size: int) -> "Event":
        return cls(frozenset(), size)

    def __contains__(self, state: int) -> bool:
        return state in self.members

    def __iter__(self):
        return iter(sorted(self.members))

    def __len__(self):
        return len(self.members)


def indicator(event: Event) -> ExactVector:
    return [Fraction(int(i in event.members)) for i in range(event.size)]


def measure(mu: Distribution, event: Event) -> Fraction:
    if len(mu) != event.size:
        raise ValueError("distribution and event live on different spaces")
    return sum((mu.weights[i] for i in event.members), Fraction(0))


class Order(enum.Enum):
    EQ = "eq"
    LEQ = "leq"
    GEQ = "geq"
    INCOMPARABLE = "incomparable"


def compare_vectors(u: Sequence, v: Sequence) -> Order:
    """Entrywise comparison: LEQ means u <= v with some strict entry."""
    if len(u) != len(v):
        raise ValueError(f"length mismatch: {len(u)} vs {len(v)}")
    below = any(a < b for a, b in zip(u, v))
    above = any(a > b for a, b in zip(u, v))
    if below and above:
        return Order.INCOMPARABLE
    if below:
        return Order.LEQ
    if above:
        return Order.GEQ
    return Order.EQ


def precedes(u: Sequence, v: Sequence) -> bool:
    """u ⪯ v, equality allowed."""
    return compare_vectors(u, v) in (Order.EQ, Order.LEQ)
