"""Multi-index arithmetic on Z^d.

Sup-norm shells, finitely supported weight families and index-set
geometry (translates, overlap counts).  Weight families are sparse maps
from lattice points to reals; norms, translates and overlap counts are
exact up to float summation.  All types are immutable after construction
and safe to share across parallel workers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import signal

from .errors import ValidationError

LatticePoint = tuple[int, ...]


def sup_norm(p: LatticePoint) -> int:
    """Sup-norm max_q |p_q| of a lattice point."""
    return max(abs(c) for c in p)


def add(p: LatticePoint, q: LatticePoint) -> LatticePoint:
    return tuple(a + b for a, b in zip(p, q))


def sub(p: LatticePoint, q: LatticePoint) -> LatticePoint:
    return tuple(a - b for a, b in zip(p, q))


def neg(p: LatticePoint) -> LatticePoint:
    return tuple(-a for a in p)


def origin(d: int) -> LatticePoint:
    return (0,) * d


def unit(axis: int, d: int) -> LatticePoint:
    """Standard basis vector e_axis (1-based axis index)."""
    if not 1 <= axis <= d:
        raise ValidationError(f"axis must be in 1..{d}, got {axis}")
    return tuple(1 if q == axis - 1 else 0 for q in range(d))


def shell_size(j: int, d: int) -> int:
    """Cardinality of the sup-norm shell {i : ||i||_inf = j}."""
    if d < 1:
        raise ValidationError(f"dimension must be >= 1, got {d}")
    if j < 0:
        raise ValidationError(f"shell radius must be >= 0, got {j}")
    if j == 0:
        return 1
    return (2 * j + 1) ** d - (2 * j - 1) ** d


def shell_points(j: int, d: int) -> list[LatticePoint]:
    """All lattice points at sup-norm distance exactly j from the origin.

    Enumerates the boundary of the cube [-j, j]^d without duplicates:
    for each point of the full cube, keep it iff some coordinate attains
    +-j.  The straightforward filter is O((2j+1)^d), fine for the shell
    radii (j <= ~64) and dimensions (d <= 4) this package targets.
    """
    if d < 1:
        raise ValidationError(f"dimension must be >= 1, got {d}")
    if j < 0:
        raise ValidationError(f"shell radius must be >= 0, got {j}")
    if j == 0:
        return [origin(d)]
    pts = [
        p
        for p in itertools.product(range(-j, j + 1), repeat=d)
        if max(abs(c) for c in p) == j
    ]
    return pts


@dataclass(frozen=True)
class Shell:
    """The set of lattice points at fixed sup-norm radius."""

    radius: int
    dimension: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ValidationError("dimension must be >= 1")
        if self.radius < 0:
            raise ValidationError("radius must be >= 0")

    def points(self) -> list[LatticePoint]:
        return shell_points(self.radius, self.dimension)

    def size(self) -> int:
        return shell_size(self.radius, self.dimension)


def _validated_entries(
    entries: Mapping[LatticePoint, float], dimension: int
) -> dict[LatticePoint, float]:
    out: dict[LatticePoint, float] = {}
    for p, v in entries.items():
        p = tuple(int(c) for c in p)
        if len(p) != dimension:
            raise ValidationError(
                f"point {p} has length {len(p)}, expected dimension {dimension}"
            )
        v = float(v)
        if not math.isfinite(v):
            raise ValidationError(f"non-finite weight at {p}")
        if v != 0.0:
            out[p] = v
    if not out:
        raise ValidationError("weight family must have nonempty support")
    return out


@dataclass(frozen=True)
class WeightFamily:
    """Finitely supported real weights b on Z^d.

    The support is stored sparsely; `translate_inner` walks the support,
    so covariance-lag queries cost O(|support|) each regardless of the
    bounding box.
    """

    entries: Mapping[LatticePoint, float]
    dimension: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ValidationError("dimension must be >= 1")
        object.__setattr__(
            self, "entries", _validated_entries(self.entries, self.dimension)
        )

    # -- norms ------------------------------------------------------------

    def norm_lq(self, q: float) -> float:
        """(sum |b_i|^q)^(1/q) for q >= 1."""
        if q < 1:
            raise ValidationError(f"norm exponent must be >= 1, got {q}")
        if q == 2:
            return math.sqrt(math.fsum(v * v for v in self.entries.values()))
        return math.fsum(abs(v) ** q for v in self.entries.values()) ** (1.0 / q)

    @property
    def support_size(self) -> int:
        return len(self.entries)

    # -- translates and inner products -------------------------------------

    def translate(self, k: LatticePoint) -> "WeightFamily":
        """tau_k(b) with tau_k(b)_i = b_{i+k}."""
        return WeightFamily(
            {sub(p, k): v for p, v in self.entries.items()}, self.dimension
        )

    def translate_inner(self, j: LatticePoint) -> float:
        """<b, tau_j(b)> = sum_i b_i * b_{i+j}."""
        j = tuple(int(c) for c in j)
        if len(j) != self.dimension:
            raise ValidationError("lag dimension mismatch")
        get = self.entries.get
        return math.fsum(v * get(add(p, j), 0.0) * 1.0 for p, v in self.entries.items())

    def translate_inner_table(self) -> dict[LatticePoint, float]:
        """All lags j with <b, tau_j(b)> != 0, computed densely in one pass.

        Uses a direct (non-FFT) correlation so 0/1 weight families produce
        exact integer overlap counts.
        """
        dense, lo = self.to_dense()
        corr = signal.correlate(dense, dense, mode="full", method="direct")
        table: dict[LatticePoint, float] = {}
        offset = tuple(n - 1 for n in dense.shape)
        for idx in np.argwhere(corr != 0.0):
            lag = tuple(int(i - o) for i, o in zip(idx, offset))
            table[lag] = float(corr[tuple(idx)])
        return table

    def scaled(self, c: float) -> "WeightFamily":
        if c == 0.0:
            raise ValidationError("scaling a weight family by zero empties it")
        return WeightFamily(
            {p: c * v for p, v in self.entries.items()}, self.dimension
        )

    # -- dense view ---------------------------------------------------------

    def bounding_box(self) -> tuple[LatticePoint, LatticePoint]:
        pts = list(self.entries)
        lo = tuple(min(p[q] for p in pts) for q in range(self.dimension))
        hi = tuple(max(p[q] for p in pts) for q in range(self.dimension))
        return lo, hi

    def to_dense(self) -> tuple[np.ndarray, LatticePoint]:
        """Dense array over the bounding box, plus the box's low corner."""
        lo, hi = self.bounding_box()
        shape = tuple(h - l + 1 for l, h in zip(lo, hi))
        dense = np.zeros(shape)
        for p, v in self.entries.items():
            dense[tuple(c - l for c, l in zip(p, lo))] = v
        return dense, lo


def cube_weights(n: int, d: int) -> WeightFamily:
    """Indicator weights of the cube {1, ..., n}^d."""
    if n < 1:
        raise ValidationError(f"cube side must be >= 1, got {n}")
    if d < 1:
        raise ValidationError(f"dimension must be >= 1, got {d}")
    entries = {p: 1.0 for p in itertools.product(range(1, n + 1), repeat=d)}
    return WeightFamily(entries, d)


def weight_condition_defect(w: WeightFamily, axis: int) -> float:
    """Relative l2 defect ||tau_{e_axis}(b) - b||_2 / ||b||_2.

    The regularity hypothesis behind the normal limit of S_n/||b_n||_2 is
    that this defect vanishes along the weight sequence; it is reported
    per axis as a finite-n diagnostic.
    """
    e = unit(axis, w.dimension)
    norm = w.norm_lq(2)
    if norm == 0.0:
        raise ValidationError("zero weight family")
    shifted = w.translate(e)
    diff_sq = 0.0
    keys = set(w.entries) | set(shifted.entries)
    diff_sq = math.fsum(
        (shifted.entries.get(p, 0.0) - w.entries.get(p, 0.0)) ** 2 for p in keys
    )
    return math.sqrt(diff_sq) / norm


@dataclass(frozen=True)
class IndexSet:
    """A finite set of lattice points Lambda, e.g. a summation region."""

    points: frozenset[LatticePoint]
    dimension: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ValidationError("dimension must be >= 1")
        pts = frozenset(tuple(int(c) for c in p) for p in self.points)
        if not pts:
            raise ValidationError("index set must be nonempty")
        for p in pts:
            if len(p) != self.dimension:
                raise ValidationError(
                    f"point {p} has length {len(p)}, expected {self.dimension}"
                )
        object.__setattr__(self, "points", pts)

    @classmethod
    def cube(cls, n: int, d: int) -> "IndexSet":
        if n < 1:
            raise ValidationError(f"cube side must be >= 1, got {n}")
        return cls(
            frozenset(itertools.product(range(1, n + 1), repeat=d)), d
        )

    @classmethod
    def from_iterable(cls, pts: Iterable[LatticePoint], d: int) -> "IndexSet":
        return cls(frozenset(tuple(p) for p in pts), d)

    @property
    def size(self) -> int:
        return len(self.points)

    def overlap(self, j: LatticePoint) -> int:
        """|Lambda intersect (Lambda - j)| = #{i in Lambda : i + j in Lambda}."""
        j = tuple(int(c) for c in j)
        return sum(1 for p in self.points if add(p, j) in self.points)

    def to_weights(self) -> WeightFamily:
        return WeightFamily({p: 1.0 for p in self.points}, self.dimension)

    def bounding_box(self) -> tuple[LatticePoint, LatticePoint]:
        pts = list(self.points)
        lo = tuple(min(p[q] for p in pts) for q in range(self.dimension))
        hi = tuple(max(p[q] for p in pts) for q in range(self.dimension))
        return lo, hi

    def sorted_points(self) -> list[LatticePoint]:
        """Deterministic ordering used by all samplers and serializers."""
        return sorted(self.points)
