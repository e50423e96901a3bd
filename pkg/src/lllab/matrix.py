"""Sparse exact matrices over Fractions.

Rows are dicts {column: Fraction} with zero entries dropped. Vectors that
flow through products are sparse dicts as well; `dense` and `sparse`
convert at the boundary.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping, Sequence

ZERO = Fraction(0)
ONE = Fraction(1)


def sparse(values: Sequence) -> dict:
    return {i: Fraction(x) for i, x in enumerate(values) if x != 0}


def dense(vec: Mapping, n: int) -> list:
    out = [ZERO] * n
    for i, x in vec.items():
        out[i] = x
    return out


def ones(n: int) -> dict:
    return {i: ONE for i in range(n)}


def basis(i: int) -> dict:
    return {i: ONE}


def vec_leq(u: Mapping, v: Mapping) -> bool:
    """Entrywise u ⪯ v for sparse vectors (missing entries are zero)."""
    for i, x in u.items():
        if x > v.get(i, ZERO):
            return False
    for i, y in v.items():
        if i not in u and y < 0:
            return False
    return True


def dot(u: Mapping, v: Mapping) -> Fraction:
    if len(u) > len(v):
        u, v = v, u
    total = ZERO
    for i, x in u.items():
        y = v.get(i)
        if y is not None:
            total += x * y
    return total


def vec_scale(c: Fraction, u: Mapping) -> dict:
    if c == 0:
        return {}
    return {i: c * x for i, x in u.items()}


def vec_add(u: Mapping, v: Mapping) -> dict:
    out = dict(u)
    for i, y in v.items():
        s = out.get(i, ZERO) + y
        if s:
            out[i] = s
        else:
            out.pop(i, None)
    return out


class SparseMatrix:
    """Square matrix with sparse rows; treat instances as immutable."""

    __slots__ = ("n", "rows", "_cols")

    def __init__(self, n: int, rows: Iterable[Mapping] | None = None):
        self.n = n
        if rows is None:
            self.rows = tuple({} for _ in range(n))
        else:
            self.rows = tuple({j: Fraction(x) for j, x in r.items() if x != 0} for r in rows)
            if len(self.rows) != n:
                raise ValueError(f"expected {n} rows, got {len(self.rows)}")
        self._cols = None

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(n, ({i: ONE} for i in range(n)))

    @classmethod
    def from_dense(cls, grid: Sequence[Sequence]) -> "SparseMatrix":
        return cls(len(grid), (sparse(r) for r in grid))

    def to_dense(self) -> list:
        return [dense(r, self.n) for r in self.rows]

    def __getitem__(self, key) -> Fraction:
        i, j = key
        return self.rows[i].get(j, ZERO)

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return self.n == other.n and self.rows == other.rows

    def __hash__(self):
        return hash(tuple(tuple(sorted(r.items())) for r in self.rows))

    def __repr__(self):
        nnz = sum(len(r) for r in self.rows)
        return f"SparseMatrix(n={self.n}, nnz={nnz})"

    def nonzero_rows(self) -> list:
        return [i for i, r in enumerate(self.rows) if r]

    def columns(self) -> tuple:
        """Column view: tuple of dicts {row: value}, cached."""
        if self._cols is None:
            cols = [dict() for _ in range(self.n)]
            for i, r in enumerate(self.rows):
                for j, x in r.items():
                    cols[j][i] = x
            self._cols = tuple(cols)
        return self._cols

    def apply(self, vec: Mapping) -> dict:
        """Right product M v."""
        out = {}
        for i, r in enumerate(self.rows):
            if not r:
                continue
            s = ZERO
            if len(r) <= len(vec):
                for j, x in r.items():
                    y = vec.get(j)
                    if y is not None:
                        s += x * y
            else:
                for j, y in vec.items():
                    x = r.get(j)
                    if x is not None:
                        s += x * y
            if s:
                out[i] = s
        return out

    def left(self, vec: Mapping) -> dict:
        """Left product v^T M."""
        out = {}
        for i, y in vec.items():
            for j, x in self.rows[i].items():
                s = out.get(j, ZERO) + y * x
                if s:
                    out[j] = s
                else:
                    out.pop(j, None)
        return out

    def matmul(self, other: "SparseMatrix") -> "SparseMatrix":
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        rows = []
        for r in self.rows:
            acc = {}
            for k, x in r.items():
                for j, y in other.rows[k].items():
                    acc[j] = acc.get(j, ZERO) + x * y
            rows.append({j: v for j, v in acc.items() if v})
        return SparseMatrix(self.n, rows)

    __matmul__ = matmul

    def scale(self, c: Fraction) -> "SparseMatrix":
        return SparseMatrix(self.n, ({j: c * x for j, x in r.items()} for r in self.rows))


def product(factors: Iterable[SparseMatrix], n: int) -> SparseMatrix:
    out = SparseMatrix.identity(n)
    for m in factors:
        out = out @ m
    return out
