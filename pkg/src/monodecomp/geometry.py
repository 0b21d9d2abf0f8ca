"""Axis-aligned half-open boxes and the arithmetic the decomposition is built on.

Membership is ``lo <= x < hi`` per dimension. The upper face of the global
domain is closed so that every domain point falls in exactly one leaf of an
exact partition; pass the domain box to :func:`contains` to get that behavior.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class GeometryError(ValueError):
    """Malformed geometric input (dimension mismatch, degenerate bounds)."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo <= self.hi:
            raise GeometryError(f"interval lower bound {self.lo} exceeds upper bound {self.hi}")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return self.lo + (self.hi - self.lo) / 2.0


@dataclass(frozen=True)
class Box:
    bounds: tuple[Interval, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "bounds", tuple(self.bounds))
        if not self.bounds:
            raise GeometryError("a box needs at least one dimension")
        for iv in self.bounds:
            if not iv.hi > iv.lo:
                raise GeometryError(f"degenerate interval [{iv.lo}, {iv.hi}) in box")

    @classmethod
    def from_bounds(cls, pairs: Iterable[Sequence[float]]) -> "Box":
        return cls(tuple(Interval(float(lo), float(hi)) for lo, hi in pairs))

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lo(self) -> np.ndarray:
        return np.array([iv.lo for iv in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.array([iv.hi for iv in self.bounds])

    @property
    def center(self) -> np.ndarray:
        return np.array([iv.midpoint for iv in self.bounds])

    @property
    def edges(self) -> np.ndarray:
        return np.array([iv.length for iv in self.bounds])

    def as_list(self) -> list[list[float]]:
        return [[iv.lo, iv.hi] for iv in self.bounds]


@dataclass(frozen=True)
class Domain:
    box: Box
    dimension_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        names = tuple(self.dimension_names) or tuple(f"x{i}" for i in range(self.box.dim))
        object.__setattr__(self, "dimension_names", names)
        if len(names) != self.box.dim:
            raise GeometryError(f"{len(names)} dimension names given for a {self.box.dim}-d box")
        if len(set(names)) != len(names):
            raise GeometryError(f"dimension names must be unique, got {names}")

    @property
    def dim(self) -> int:
        return self.box.dim

    def index(self, name: str) -> int:
        try:
            return self.dimension_names.index(name)
        except ValueError:
            raise GeometryError(f"unknown dimension {name!r}") from None


def hypervolume(b: Box) -> float:
    return float(np.prod(b.edges))


def bisect(b: Box, dim: int) -> tuple[Box, Box]:
    """Split ``b`` at the midpoint of dimension ``dim``; returns (lower, upper)."""
    if not 0 <= dim < b.dim:
        raise GeometryError(f"split dimension {dim} out of range for a {b.dim}-d box")
    iv = b.bounds[dim]
    mid = iv.midpoint
    lower = b.bounds[:dim] + (Interval(iv.lo, mid),) + b.bounds[dim + 1:]
    upper = b.bounds[:dim] + (Interval(mid, iv.hi),) + b.bounds[dim + 1:]
    return Box(lower), Box(upper)


def _check_point(b: Box, p: Sequence[float]) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.shape != (b.dim,):
        raise GeometryError(f"point of shape {arr.shape} does not match a {b.dim}-d box")
    return arr


def contains(b: Box, p: Sequence[float], domain: Box | None = None) -> bool:
    """Half-open membership; faces shared with ``domain``'s upper boundary are closed."""
    arr = _check_point(b, p)
    lo, hi = b.lo, b.hi
    inside = (arr >= lo) & (arr < hi)
    if domain is not None:
        at_top = (hi == domain.hi) & (arr == hi)
        inside |= at_top
    return bool(inside.all())


def closure_contains(b: Box, p: Sequence[float]) -> bool:
    arr = _check_point(b, p)
    return bool(((arr >= b.lo) & (arr <= b.hi)).all())


def slice_extent(b: Box, dim: int, value: float, domain: Box | None = None) -> Box | None:
    """The (d-1)-dimensional cross-section of ``b`` at ``value`` along ``dim``.

    Returns ``None`` when the slice misses the box, or when ``b`` is 1-d
    (nothing is left after removing the sliced dimension).
    """
    if not 0 <= dim < b.dim:
        raise GeometryError(f"slice dimension {dim} out of range for a {b.dim}-d box")
    iv = b.bounds[dim]
    hit = iv.lo <= value < iv.hi
    if not hit and domain is not None:
        hit = value == iv.hi == domain.bounds[dim].hi
    if not hit or b.dim == 1:
        return None
    return Box(b.bounds[:dim] + b.bounds[dim + 1:])


def project(b: Box, dim: int) -> Box:
    """Drop dimension ``dim`` from ``b``."""
    if b.dim == 1:
        raise GeometryError("cannot project a 1-d box")
    return Box(b.bounds[:dim] + b.bounds[dim + 1:])


def boxes_to_arrays(boxes: Sequence[Box]) -> tuple[np.ndarray, np.ndarray]:
    """Stack box bounds into ``(n, d)`` lower and upper arrays."""
    if not boxes:
        return np.empty((0, 0)), np.empty((0, 0))
    lo = np.array([[iv.lo for iv in b.bounds] for b in boxes])
    hi = np.array([[iv.hi for iv in b.bounds] for b in boxes])
    return lo, hi


def locate(lo: np.ndarray, hi: np.ndarray, points: np.ndarray, domain: Box) -> np.ndarray:
    """Index of the leaf containing each point (half-open, closed at the domain top).

    ``lo``/``hi`` are stacked leaf bounds from :func:`boxes_to_arrays`. Points
    outside every leaf get ``-1``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    top = domain.hi
    out = np.full(len(points), -1, dtype=int)
    for i, p in enumerate(points):
        inside = (p >= lo) & ((p < hi) | ((hi == top) & (p == hi)))
        hits = np.flatnonzero(inside.all(axis=1))
        if hits.size:
            out[i] = hits[0]
    return out
