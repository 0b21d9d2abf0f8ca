"""Probability-curve and threshold-surface bounds from a decomposition.

Curves give, for each value of the sweep parameter, the probability mass of
the remaining parameters that is classified MINUS (lower bound) or MINUS or
unresolved (upper bound). Surfaces give, per node of the remaining
parameters, the interval of sweep values where the label change can sit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .decomposer import Campaign, Element, Status, classify_orthants
from .geometry import Box, Interval


class EstimationError(ValueError):
    pass


class MarginalKind(Enum):
    UNIFORM = "uniform"
    NORMAL = "normal"


@dataclass(frozen=True)
class Marginal:
    """Distribution of one parameter, truncated to ``range``."""

    kind: MarginalKind
    range: Interval
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", MarginalKind(self.kind))
        if self.kind is MarginalKind.NORMAL and not self.sigma > 0:
            raise EstimationError("normal marginal needs sigma > 0")
        if not self.range.hi > self.range.lo:
            raise EstimationError("marginal range must have positive length")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "Marginal":
        return cls(MarginalKind.UNIFORM, Interval(lo, hi))

    @classmethod
    def normal(cls, mu: float, sigma: float, lo: float, hi: float) -> "Marginal":
        return cls(MarginalKind.NORMAL, Interval(lo, hi), mu, sigma)

    def _raw(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def cdf(self, x):
        """CDF renormalized over ``range``: maps the range onto exactly [0, 1]."""
        lo, hi = self.range.lo, self.range.hi
        x = np.asarray(x, dtype=float)
        if self.kind is MarginalKind.UNIFORM:
            out = (x - lo) / (hi - lo)
        else:
            a, b = self._raw(lo), self._raw(hi)
            out = (self._raw(x) - a) / (b - a)
        out = np.where(x <= lo, 0.0, np.where(x >= hi, 1.0, out))
        return out if out.ndim else float(out)

    def ppf(self, u):
        lo, hi = self.range.lo, self.range.hi
        u = np.asarray(u, dtype=float)
        if self.kind is MarginalKind.UNIFORM:
            out = lo + u * (hi - lo)
        else:
            a, b = self._raw(lo), self._raw(hi)
            out = self.mu + self.sigma * ndtri(a + u * (b - a))
        out = np.where(u <= 0, lo, np.where(u >= 1, hi, out))
        return out if out.ndim else float(out)

    def measure(self, lo, hi):
        """Probability mass of ``[lo, hi)``."""
        return np.asarray(self.cdf(hi)) - np.asarray(self.cdf(lo))


@dataclass(frozen=True)
class BoundCurve:
    sweep_values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mean: np.ndarray

    def gap_area(self) -> float:
        """Area between the upper and lower curves (trapezoidal rule)."""
        return float(np.trapezoid(self.upper - self.lower, self.sweep_values))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sweep", "lower", "mean", "upper"])
            for row in zip(self.sweep_values, self.lower, self.mean, self.upper):
                w.writerow([f"{v:.9g}" for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "BoundCurve":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], data[:, 3], data[:, 2])


@dataclass(frozen=True)
class BoundSurface:
    axes: tuple[np.ndarray, ...]
    names: tuple[str, ...]
    nodes: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    mean: np.ndarray

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*self.names, "lb", "mean", "ub"])
            for node, lb, mean, ub in zip(self.nodes, self.lb, self.mean, self.ub):
                w.writerow([f"{v:.9g}" for v in (*node, lb, mean, ub)])


def refine_for_bounds(campaign: Campaign) -> list[Element]:
    """Leaves with each unresolved element replaced by its classified orthants.

    The campaign itself is left untouched.
    """
    out: list[Element] = []
    witnesses = campaign.witnesses() if campaign.certify else None
    for e in campaign.leaves:
        if e.status is not Status.UNRESOLVED:
            out.append(Element(e.id, e.box, e.status, set(e.sample_ids), e.birth_iteration, e.parent))
            continue
        ids = sorted(e.sample_ids)
        pts = np.array([campaign.registry[i].point for i in ids], dtype=float).reshape(len(ids), e.box.dim)
        for box, status in classify_orthants(e, campaign.registry, witnesses):
            inside = np.all((pts >= box.lo) & (pts <= box.hi), axis=1)
            kept = {sid for sid, ok in zip(ids, inside) if ok}
            out.append(Element(e.id, box, status, kept, e.birth_iteration, e.parent))
    return out


_STATUS_CODE = {Status.RESOLVED_PLUS: 0, Status.RESOLVED_MINUS: 1, Status.UNRESOLVED: 2}


def _stack(leaves: Sequence[Element]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo = np.array([e.box.lo for e in leaves])
    hi = np.array([e.box.hi for e in leaves])
    codes = np.array([_STATUS_CODE[e.status] for e in leaves])
    return lo, hi, codes


def _column_mask(lo: np.ndarray, hi: np.ndarray, dim: int, value: float, top: float) -> np.ndarray:
    return (lo[:, dim] <= value) & ((value < hi[:, dim]) | ((hi[:, dim] == top) & (value == top)))


def default_sweep_values(lo: float, hi: float, num: int = 241) -> np.ndarray:
    return np.linspace(lo, hi, num)


def probability_curve(
    leaves: Sequence[Element],
    sweep_dim: int,
    marginals: Sequence[Marginal],
    sweep_values: Sequence[float],
    domain: Box | None = None,
    mean: str = "midpoint",
    k: int = 1,
) -> BoundCurve:
    """Lower/upper bounds on P(label = MINUS) at each sweep value.

    ``marginals`` lists the distribution of every non-sweep dimension in
    dimension order. ``domain`` defaults to the bounding box of the leaves.
    """
    if not leaves:
        raise EstimationError("no leaves given")
    lo, hi, codes = _stack(leaves)
    d = lo.shape[1]
    others = [i for i in range(d) if i != sweep_dim]
    if len(marginals) != len(others):
        raise EstimationError(f"expected {len(others)} marginals, got {len(marginals)}")
    s_lo = lo[:, sweep_dim].min() if domain is None else domain.bounds[sweep_dim].lo
    s_hi = hi[:, sweep_dim].max() if domain is None else domain.bounds[sweep_dim].hi
    values = np.asarray(sweep_values, dtype=float)
    if np.any(values < s_lo) or np.any(values > s_hi):
        raise EstimationError(f"sweep values must lie in [{s_lo}, {s_hi}]")

    mass = np.ones(len(leaves))
    for m, i in zip(marginals, others):
        mass *= m.measure(lo[:, i], hi[:, i])

    lower = np.empty(len(values))
    upper = np.empty(len(values))
    for n, v in enumerate(values):
        col = _column_mask(lo, hi, sweep_dim, v, s_hi)
        h_total = mass[col].sum()
        if abs(h_total - 1.0) > 1e-9:
            raise EstimationError(f"projected mass {h_total} at sweep value {v} is not 1; leaves do not tile")
        h1 = mass[col & (codes == 1)].sum()
        h2 = mass[col & (codes == 2)].sum()
        lower[n] = h1 / h_total
        upper[n] = (h1 + h2) / h_total
    lower = np.clip(lower, 0.0, 1.0)
    upper = np.clip(np.maximum(upper, lower), 0.0, 1.0)
    if mean == "midpoint":
        mid = (lower + upper) / 2.0
    elif mean == "knn":
        mid = mean_curve_knn((values, lower), (values, upper), k, values)
    else:
        raise EstimationError(f"unknown mean curve {mean!r}")
    return BoundCurve(values, lower, upper, mid)


def _transform(x: np.ndarray, m: Marginal | None) -> np.ndarray:
    return x if m is None else np.asarray(m.cdf(x), dtype=float)


def to_uniform(obj, marginals: Sequence[Marginal | None]):
    """Probability-integral transform of a point, a :class:`Box` or an :class:`Element`.

    ``marginals`` has one entry per dimension; ``None`` leaves that
    coordinate as it is.
    """
    if isinstance(obj, Element):
        return Element(obj.id, to_uniform(obj.box, marginals), obj.status, set(obj.sample_ids), obj.birth_iteration, obj.parent)
    if isinstance(obj, Box):
        if len(marginals) != obj.dim:
            raise EstimationError("need one marginal entry per dimension")
        return Box.from_bounds(
            (float(_transform(np.float64(iv.lo), m)), float(_transform(np.float64(iv.hi), m)))
            for iv, m in zip(obj.bounds, marginals)
        )
    p = np.asarray(obj, dtype=float)
    if p.shape[-1] != len(marginals):
        raise EstimationError("need one marginal entry per dimension")
    out = p.copy()
    for i, m in enumerate(marginals):
        out[..., i] = _transform(p[..., i], m)
    return out


def from_uniform(p, marginals: Sequence[Marginal | None]) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    out = p.copy()
    for i, m in enumerate(marginals):
        if m is not None:
            out[..., i] = m.ppf(p[..., i])
    return out


def surface_grid(domain: Box, sweep_dim: int, num: int = 21) -> tuple[np.ndarray, ...]:
    """Evenly spaced axes over every non-sweep dimension."""
    return tuple(np.linspace(iv.lo, iv.hi, num) for i, iv in enumerate(domain.bounds) if i != sweep_dim)


def limit_surface(
    leaves: Sequence[Element],
    sweep_dim: int,
    grid: Sequence[np.ndarray],
    domain: Box | None = None,
    names: Sequence[str] | None = None,
) -> BoundSurface:
    """Bounds on the sweep value where the label turns MINUS, per lattice node.

    For each node the column of leaves over it is scanned: unresolved leaves
    contribute their sweep interval, and a resolved PLUS leaf directly below a
    resolved MINUS leaf contributes the shared face. ``lb``/``ub`` are the
    extremes of those contributions. A column that is PLUS throughout pins
    both bounds to the top of the sweep range, MINUS throughout to the bottom.
    """
    if not leaves:
        raise EstimationError("no leaves given")
    lo, hi, codes = _stack(leaves)
    d = lo.shape[1]
    if domain is None:
        domain = Box.from_bounds(zip(lo.min(axis=0), hi.max(axis=0)))
    others = [i for i in range(d) if i != sweep_dim]
    if len(grid) != len(others):
        raise EstimationError(f"expected {len(others)} grid axes, got {len(grid)}")
    axes = tuple(np.asarray(a, dtype=float) for a in grid)
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1) if axes else np.zeros((1, 0))
    top = domain.hi
    bottom = domain.lo
    s_lo, s_hi = domain.bounds[sweep_dim].lo, domain.bounds[sweep_dim].hi

    lb = np.empty(len(nodes))
    ub = np.empty(len(nodes))
    for n, node in enumerate(nodes):
        if np.any(node < bottom[others]) or np.any(node > top[others]):
            raise EstimationError(f"grid node {tuple(node)} lies outside the domain")
        col = np.ones(len(leaves), dtype=bool)
        for value, i in zip(node, others):
            col &= _column_mask(lo, hi, i, value, top[i])
        idx = np.flatnonzero(col)
        idx = idx[np.argsort(lo[idx, sweep_dim], kind="stable")]
        cand_lo, cand_hi = [], []
        for a, b in zip(idx, idx[1:]):
            if codes[a] == 0 and codes[b] == 1:
                cand_lo.append(hi[a, sweep_dim])
                cand_hi.append(hi[a, sweep_dim])
        for a in idx:
            if codes[a] == 2:
                cand_lo.append(lo[a, sweep_dim])
                cand_hi.append(hi[a, sweep_dim])
        if cand_lo:
            lb[n], ub[n] = min(cand_lo), max(cand_hi)
        elif np.all(codes[idx] == 0):
            lb[n] = ub[n] = s_hi
        elif np.all(codes[idx] == 1):
            lb[n] = ub[n] = s_lo
        else:
            lb[n], ub[n] = s_lo, s_hi
    if names is None:
        names = tuple(f"x{i}" for i in others)
    return BoundSurface(axes, tuple(names), nodes, lb, ub, (lb + ub) / 2.0)


def mean_curve_knn(lower_pts, upper_pts, k: int, eval_values: Sequence[float], tol: float = 1e-6) -> np.ndarray:
    """Decision level between the lower and upper curves under k-NN.

    Points of the lower curve form one class and points of the upper curve
    the other. Both axes are scaled to [0, 1] and distances are Chebyshev,
    with Euclidean distance breaking ties. For each evaluation value the
    probability at which the vote switches from the lower class to the upper
    class is located by bisection.
    """
    if k < 1 or k % 2 == 0:
        raise EstimationError("k must be a positive odd number")
    xs_a, ys_a = (np.asarray(a, dtype=float) for a in lower_pts)
    xs_b, ys_b = (np.asarray(a, dtype=float) for a in upper_pts)
    ev = np.asarray(eval_values, dtype=float)
    if np.array_equal(xs_a, xs_b) and np.array_equal(ys_a, ys_b):
        return np.interp(ev, xs_a, ys_a)
    x_all = np.concatenate([xs_a, xs_b])
    x0, span = x_all.min(), np.ptp(x_all) or 1.0
    pts = np.column_stack([(x_all - x0) / span, np.concatenate([ys_a, ys_b])])
    is_upper = np.concatenate([np.zeros(len(xs_a), bool), np.ones(len(xs_b), bool)])
    k = min(k, len(pts))

    def votes_upper(x: float, p: float) -> bool:
        delta = np.abs(pts - np.array([x, p]))
        cheb = delta.max(axis=1)
        eucl = np.hypot(delta[:, 0], delta[:, 1])
        nearest = np.lexsort((eucl, cheb))[:k]
        return int(is_upper[nearest].sum()) * 2 > k

    out = np.empty(len(ev))
    for n, v in enumerate(ev):
        x = (v - x0) / span
        if votes_upper(x, 0.0):
            out[n] = 0.0
            continue
        if not votes_upper(x, 1.0):
            out[n] = 1.0
            continue
        a, b = 0.0, 1.0
        while b - a > tol:
            mid = (a + b) / 2.0
            if votes_upper(x, mid):
                b = mid
            else:
                a = mid
        out[n] = (a + b) / 2.0
    order_a, order_b = np.argsort(xs_a, kind="stable"), np.argsort(xs_b, kind="stable")
    env_lo = np.interp(ev, xs_a[order_a], ys_a[order_a])
    env_hi = np.interp(ev, xs_b[order_b], ys_b[order_b])
    return np.clip(out, np.minimum(env_lo, env_hi), np.maximum(env_lo, env_hi))


def campaign_curve(
    campaign: Campaign,
    marginals: Sequence[Marginal],
    sweep_values: Sequence[float] | None = None,
    mean: str = "midpoint",
    k: int = 1,
) -> BoundCurve:
    """Refine a campaign's leaves and compute its probability curve."""
    box = campaign.domain.box
    iv = box.bounds[campaign.sweep_dim]
    values = default_sweep_values(iv.lo, iv.hi) if sweep_values is None else sweep_values
    return probability_curve(refine_for_bounds(campaign), campaign.sweep_dim, marginals, values, box, mean, k)


def campaign_surface(campaign: Campaign, num: int = 21) -> BoundSurface:
    box = campaign.domain.box
    names = [n for i, n in enumerate(campaign.domain.dimension_names) if i != campaign.sweep_dim]
    grid = surface_grid(box, campaign.sweep_dim, num)
    return limit_surface(refine_for_bounds(campaign), campaign.sweep_dim, grid, box, names)
