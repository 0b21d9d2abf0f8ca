"""Dominance relation, monotone label inference and noisy-label repair.

Labels are binary and ordered: ``MINUS`` (e.g. penetration) is the higher
class and ``PLUS`` (e.g. rebound) the lower one. A dimension tagged
``INCREASING`` can only push the label up as its value grows, ``DECREASING``
pushes it down, and ``NONE`` dimensions must match exactly for two points to
be comparable at all.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class Direction(Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"
    NONE = "none"


class Label(Enum):
    PLUS = 1
    MINUS = -1

    @property
    def rank(self) -> int:
        """Position in the class order; MINUS ranks above PLUS."""
        return 1 if self is Label.MINUS else 0

    @property
    def flipped(self) -> "Label":
        return Label.PLUS if self is Label.MINUS else Label.MINUS

    @classmethod
    def parse(cls, token: str | int) -> "Label":
        value = int(token)
        if value not in (1, -1):
            raise ValueError(f"label must be +1 or -1, got {token!r}")
        return cls(value)


class Provenance(Enum):
    SIMULATED = "simulated"
    INFERRED = "inferred"


class Dominance(Enum):
    FORCES_GEQ = "forces_geq"
    FORCES_LEQ = "forces_leq"
    INCOMPARABLE = "incomparable"


class MonotonicityViolation(Exception):
    """Both inference directions fired for one point: the witnesses disagree."""

    def __init__(self, point, plus_witness: "LabeledSample", minus_witness: "LabeledSample"):
        self.point = tuple(point)
        self.plus_witness = plus_witness
        self.minus_witness = minus_witness
        super().__init__(
            f"point {self.point} is forced to MINUS by sample {minus_witness.id} "
            f"and to PLUS by sample {plus_witness.id}"
        )


@dataclass(frozen=True)
class MonotonicityProfile:
    directions: tuple[Direction, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "directions", tuple(Direction(d) for d in self.directions))

    @property
    def dim(self) -> int:
        return len(self.directions)

    def indices(self, direction: Direction) -> tuple[int, ...]:
        return tuple(i for i, d in enumerate(self.directions) if d is direction)

    @property
    def signs(self) -> np.ndarray:
        """+1 for increasing, -1 for decreasing, 0 for non-monotone dimensions."""
        lookup = {Direction.INCREASING: 1.0, Direction.DECREASING: -1.0, Direction.NONE: 0.0}
        return np.array([lookup[d] for d in self.directions])


@dataclass(frozen=True)
class LabeledSample:
    id: int
    point: tuple[float, ...]
    label: Label
    provenance: Provenance = Provenance.SIMULATED


def dominates_general(x: Sequence[float], x_prime: Sequence[float], prof: MonotonicityProfile) -> Dominance:
    """How the monotonicity profile orders the labels of ``x`` and ``x_prime``.

    ``FORCES_GEQ`` means label(x) must rank at or above label(x_prime).
    """
    a = np.asarray(x, dtype=float)
    b = np.asarray(x_prime, dtype=float)
    if a.shape != (prof.dim,) or b.shape != (prof.dim,):
        raise ValueError(f"points must have {prof.dim} coordinates")
    if np.array_equal(a, b):
        raise ValueError(f"identical points {tuple(a)} have no dominance relation")
    return _dominance_many(a, b[None, :], prof.signs)[0]


def _dominance_many(p: np.ndarray, others: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """Vectorized relation of ``p`` against each row of ``others``.

    Returns an object array of :class:`Dominance`. Rows identical to ``p``
    come back INCOMPARABLE.
    """
    diff = (p[None, :] - others) * signs[None, :]
    fixed = signs == 0
    same_fixed = np.all(p[None, fixed] == others[:, fixed], axis=1)
    moving = ~fixed
    differs = np.any(p[None, moving] != others[:, moving], axis=1)
    geq = same_fixed & differs & np.all(diff[:, moving] >= 0, axis=1)
    leq = same_fixed & differs & np.all(diff[:, moving] <= 0, axis=1)
    out = np.full(len(others), Dominance.INCOMPARABLE, dtype=object)
    out[geq] = Dominance.FORCES_GEQ
    out[leq] = Dominance.FORCES_LEQ
    return out


def _relation_matrix(points: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """``R[i, j] = True`` when point i forces a label at or above point j (i != j)."""
    diff = (points[:, None, :] - points[None, :, :]) * signs[None, None, :]
    fixed = signs == 0
    moving = ~fixed
    same_fixed = np.all(diff[:, :, fixed] == 0, axis=2) if fixed.any() else np.ones(diff.shape[:2], bool)
    raw = points[:, None, moving] != points[None, :, moving]
    differs = np.any(raw, axis=2)
    return same_fixed & differs & np.all(diff[:, :, moving] >= 0, axis=2)


class WitnessSet:
    """Growing set of labeled points that answers inference queries quickly."""

    def __init__(self, prof: MonotonicityProfile, samples: Iterable[LabeledSample] = ()):
        self.prof = prof
        self._signs = prof.signs
        self._samples: list[LabeledSample] = []
        self._pts = np.empty((0, prof.dim))
        self._ranks = np.empty(0, dtype=int)
        self.extend(samples)

    def __len__(self) -> int:
        return len(self._samples)

    def extend(self, samples: Iterable[LabeledSample]) -> None:
        samples = list(samples)
        if not samples:
            return
        self._samples.extend(samples)
        self._pts = np.vstack([self._pts, np.array([s.point for s in samples], dtype=float)])
        self._ranks = np.concatenate([self._ranks, [s.label.rank for s in samples]])

    def add(self, sample: LabeledSample) -> None:
        self.extend([sample])

    def infer(self, p: Sequence[float]) -> Label | None:
        if not self._samples:
            return None
        point = np.asarray(p, dtype=float)
        diff = (point[None, :] - self._pts) * self._signs[None, :]
        fixed = self._signs == 0
        moving = ~fixed
        comparable = np.all(diff[:, fixed] == 0, axis=1) & np.any(point[None, moving] != self._pts[:, moving], axis=1)
        geq = comparable & np.all(diff[:, moving] >= 0, axis=1)
        leq = comparable & np.all(diff[:, moving] <= 0, axis=1)
        minus_hits = np.flatnonzero(geq & (self._ranks == 1))
        plus_hits = np.flatnonzero(leq & (self._ranks == 0))
        if minus_hits.size and plus_hits.size:
            raise MonotonicityViolation(point, self._samples[plus_hits[0]], self._samples[minus_hits[0]])
        if minus_hits.size:
            return Label.MINUS
        if plus_hits.size:
            return Label.PLUS
        return None


def infer_label(p: Sequence[float], witnesses: Iterable[LabeledSample], prof: MonotonicityProfile) -> Label | None:
    """Label forced on ``p`` by the labeled ``witnesses``, or ``None``.

    Raises :class:`MonotonicityViolation` when the witnesses force both labels.
    """
    return WitnessSet(prof, witnesses).infer(p)


def critical_corner(lo: Sequence[float], hi: Sequence[float], label: Label, prof: MonotonicityProfile):
    """Corner of a box whose label decides the label of the whole box.

    For MINUS it is the corner every other point dominates, for PLUS the one
    dominating every other point. Returns ``None`` when some dimension is
    non-monotone, since no single corner then bounds the box.
    """
    signs = prof.signs
    if np.any(signs == 0):
        return None
    take_lo = signs > 0 if label is Label.MINUS else signs < 0
    return tuple(float(v) for v in np.where(take_lo, np.asarray(lo, float), np.asarray(hi, float)))


def violating_pairs(samples: Sequence[LabeledSample], prof: MonotonicityProfile) -> list[tuple[int, int]]:
    """All ``(i, j)`` index pairs where sample i dominates j yet carries the lower label."""
    if len(samples) < 2:
        return []
    pts = np.array([s.point for s in samples], dtype=float)
    ranks = np.array([s.label.rank for s in samples])
    geq = _relation_matrix(pts, prof.signs)
    bad = geq & (ranks[:, None] < ranks[None, :])
    return [tuple(ij) for ij in np.argwhere(bad)]


@dataclass(frozen=True)
class EnforcementResult:
    samples: list[LabeledSample]
    flips: int
    passes: int
    converged: bool


def enforce_monotonicity(
    samples: Sequence[LabeledSample], prof: MonotonicityProfile, max_passes: int = 5
) -> EnforcementResult:
    """Flip simulated labels until no pair of samples violates the profile.

    Samples are scanned in the given (registration) order. For each violating
    pair the member with fewer consistent comparable neighbors is flipped, the
    later-registered one on a tie. Inferred samples are never flipped; after
    every pass they are re-derived from the current labels.
    """
    if max_passes < 1:
        raise ValueError("max_passes must be at least 1")
    samples = list(samples)
    n = len(samples)
    if n < 2:
        return EnforcementResult(samples, 0, 0, True)

    pts = np.array([s.point for s in samples], dtype=float)
    geq = _relation_matrix(pts, prof.signs)
    comparable = geq | geq.T
    ranks = np.array([s.label.rank for s in samples])
    simulated = np.array([s.provenance is Provenance.SIMULATED for s in samples])

    def consistent_count(i: int) -> int:
        # i above j needs rank_i >= rank_j; i below j needs rank_i <= rank_j
        ok_up = geq[i] & (ranks[i] >= ranks)
        ok_down = geq[:, i] & (ranks[i] <= ranks)
        return int(np.count_nonzero((ok_up | ok_down) & comparable[i]))

    def violators(i: int) -> np.ndarray:
        bad = (geq[i] & (ranks[i] < ranks)) | (geq[:, i] & (ranks[i] > ranks))
        return np.flatnonzero(bad)

    flips = 0
    passes = 0
    converged = False
    while passes < max_passes:
        passes += 1
        flipped_this_pass = 0
        for i in range(n):
            if not simulated[i]:
                continue
            for j in violators(i):
                # the pair may have been repaired by an earlier flip in this scan
                if not ((geq[i, j] and ranks[i] < ranks[j]) or (geq[j, i] and ranks[i] > ranks[j])):
                    continue
                target = i
                if simulated[j]:
                    ci, cj = consistent_count(i), consistent_count(j)
                    if cj < ci or (cj == ci and j > i):
                        target = j
                ranks[target] = 1 - ranks[target]
                flipped_this_pass += 1
                if target == i:
                    break
        _rederive_inferred(ranks, simulated, geq)
        flips += flipped_this_pass
        if not _has_violation(ranks, geq):
            converged = True
            break
    if not converged:
        logger.warning("monotonicity enforcement stopped after %d passes with violations left", passes)

    out = []
    for s, r in zip(samples, ranks):
        label = Label.MINUS if r == 1 else Label.PLUS
        out.append(s if label is s.label else replace(s, label=label))
    return EnforcementResult(out, flips, passes, converged)


def _has_violation(ranks: np.ndarray, geq: np.ndarray) -> bool:
    return bool(np.any(geq & (ranks[:, None] < ranks[None, :])))


def _rederive_inferred(ranks: np.ndarray, simulated: np.ndarray, geq: np.ndarray) -> None:
    # sequential in registration order so earlier re-derived labels act as witnesses
    for i in np.flatnonzero(~simulated):
        forced_minus = np.any(geq[i] & (ranks == 1))
        forced_plus = np.any(geq[:, i] & (ranks == 0))
        if forced_minus and not forced_plus:
            ranks[i] = 1
        elif forced_plus and not forced_minus:
            ranks[i] = 0
