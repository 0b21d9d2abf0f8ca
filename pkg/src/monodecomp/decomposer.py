"""Adaptive domain decomposition campaign.

Each iteration bisects every unresolved leaf once, samples the children at
their level-1 sparse-grid points, labels new points by monotone inference
where possible and by the oracle otherwise, then classifies each leaf by the
labels found on its closure.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .geometry import Box, Domain, bisect, hypervolume
from .monotonicity import (
    Direction,
    Label,
    MonotonicityProfile,
    MonotonicityViolation,
    Provenance,
    WitnessSet,
    critical_corner,
)
from .oracle import EvaluationCache, Oracle, OracleEvaluationError, Source, evaluate_batch
from .sparse_grid import SampleRegistry, level1_points

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class Status(Enum):
    RESOLVED_PLUS = "resolved_plus"
    RESOLVED_MINUS = "resolved_minus"
    UNRESOLVED = "unresolved"

    @classmethod
    def of(cls, label: Label) -> "Status":
        return cls.RESOLVED_MINUS if label is Label.MINUS else cls.RESOLVED_PLUS


class CampaignError(RuntimeError):
    pass


class OracleAbort(CampaignError):
    """The oracle keeps failing and the campaign cannot make progress."""


@dataclass
class Element:
    id: int
    box: Box
    status: Status = Status.UNRESOLVED
    sample_ids: set[int] = field(default_factory=set)
    birth_iteration: int = 1
    parent: int | None = None


@dataclass(frozen=True)
class IterationReport:
    iter: int
    fresh_evals: int
    inferred: int
    unresolved_fraction: float
    bisected: int = 0
    conflicts: int = 0
    failures: int = 0
    reopened: int = 0
    leaves: int = 0
    samples: int = 0
    total_fresh: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def closure_status(labels: Sequence[Label | None]) -> Status:
    """Domain-based classification: uniform labels resolve, anything else does not."""
    if not labels or any(lbl is None for lbl in labels):
        return Status.UNRESOLVED
    first = labels[0]
    if all(lbl is first for lbl in labels):
        return Status.of(first)
    return Status.UNRESOLVED


def _in_closure(box: Box, points: np.ndarray) -> np.ndarray:
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    return np.all((points >= box.lo) & (points <= box.hi), axis=1)


def orthants(box: Box) -> list[Box]:
    """The 2**d boxes from bisecting ``box`` once along every dimension."""
    halves = []
    for iv in box.bounds:
        mid = iv.midpoint
        halves.append(((iv.lo, mid), (mid, iv.hi)))
    return [Box.from_bounds(combo) for combo in itertools.product(*halves)]


def classify_orthants(
    element: Element,
    registry: SampleRegistry,
    witnesses: WitnessSet | None = None,
) -> list[tuple[Box, Status]]:
    """Split an element into orthants and classify each from its closure samples.

    Orthants without any sample stay unresolved. With ``witnesses``, a uniform
    orthant only resolves when its critical corner is known (or inferable)
    to carry the same label.
    """
    ids = sorted(element.sample_ids)
    pts = np.array([registry[i].point for i in ids], dtype=float).reshape(len(ids), element.box.dim)
    labels = [registry[i].label for i in ids]
    out = []
    for ob in orthants(element.box):
        mask = _in_closure(ob, pts)
        status = closure_status([labels[k] for k in np.flatnonzero(mask)])
        if witnesses is not None and status is not Status.UNRESOLVED:
            if not _corner_agrees(ob, status, registry, witnesses):
                status = Status.UNRESOLVED
        out.append((ob, status))
    return out


def _corner_agrees(box: Box, status: Status, registry: SampleRegistry, witnesses: WitnessSet) -> bool:
    label = Label.MINUS if status is Status.RESOLVED_MINUS else Label.PLUS
    corner = critical_corner(box.lo, box.hi, label, witnesses.prof)
    if corner is None:
        return True
    known = registry.find(corner)
    if known is not None and registry[known].label is not None:
        return registry[known].label is label
    try:
        return witnesses.infer(corner) is label
    except MonotonicityViolation:
        return False


class Campaign:
    """State of one adaptive classification campaign.

    Build one with :meth:`initialize` (samples the root element) or
    :meth:`from_json` (resume); then call :meth:`run` or :meth:`iterate`.
    """

    def __init__(
        self,
        domain: Domain,
        profile: MonotonicityProfile,
        sweep_dim: int,
        oracle: Oracle | None,
        n_iter_max: int,
        h_min: float,
        cache: EvaluationCache | None = None,
        parallelism: int = 1,
        certify: bool = True,
    ):
        if profile.dim != domain.dim:
            raise CampaignError("profile and domain dimension differ")
        if not 0 <= sweep_dim < domain.dim:
            raise CampaignError(f"sweep dimension {sweep_dim} out of range")
        if profile.directions[sweep_dim] is not Direction.INCREASING:
            raise CampaignError("the sweep dimension must be declared increasing")
        if n_iter_max < 1:
            raise CampaignError("n_iter_max must be at least 1")
        if not 0.0 <= h_min <= 1.0:
            raise CampaignError("h_min must lie in [0, 1]")
        self.domain = domain
        self.profile = profile
        self.sweep_dim = sweep_dim
        self.oracle = oracle
        self.n_iter_max = int(n_iter_max)
        self.h_min = float(h_min)
        self.cache = cache
        self.parallelism = int(parallelism)
        self.certify = bool(certify)
        self.registry = SampleRegistry(domain.box)
        self.leaves: list[Element] = []
        self.pending: set[int] = set()
        self.iter = 0
        self.history: list[IterationReport] = []
        self._next_element = 0
        self._total_fresh = 0
        self._fraction: float | None = None
        self.cache_hits = 0

    # -- construction -----------------------------------------------------

    @classmethod
    def initialize(
        cls,
        domain: Domain,
        profile: MonotonicityProfile,
        sweep_dim: int,
        oracle: Oracle,
        n_iter_max: int,
        h_min: float,
        cache: EvaluationCache | None = None,
        parallelism: int = 1,
        certify: bool = True,
    ) -> "Campaign":
        """Sample the whole domain as one element at its level-1 points."""
        c = cls(domain, profile, sweep_dim, oracle, n_iter_max, h_min, cache, parallelism, certify)
        root = c._new_element(domain.box, parent=None, birth=1)
        c.leaves = [root]
        ids = [c.registry.register(p)[0] for p in level1_points(domain.box)]
        root.sample_ids.update(ids)
        fresh, failures, _ = c._simulate(ids)
        if failures:
            raise OracleEvaluationError(f"{failures} of the initial samples failed to evaluate")
        root.status = c._status_of(root)
        tally = c._certify([root])
        if c.pending:
            raise OracleEvaluationError("a corner sample of the root element failed to evaluate")
        c.iter = 1
        c._total_fresh = fresh + tally["fresh"]
        c._record(
            IterationReport(iter=1, fresh_evals=c._total_fresh, inferred=tally["inferred"], unresolved_fraction=0.0)
        )
        return c

    def _new_element(self, box: Box, parent: int | None, birth: int) -> Element:
        e = Element(self._next_element, box, birth_iteration=birth, parent=parent)
        self._next_element += 1
        return e

    # -- classification ---------------------------------------------------

    def _status_of(self, e: Element) -> Status:
        return closure_status([self.registry[i].label for i in sorted(e.sample_ids)])

    def has_pending(self, e: Element) -> bool:
        return bool(self.pending & e.sample_ids)

    def unresolved_fraction(self) -> float:
        """Unresolved hypervolume fraction at the finest (all-orthant) resolution."""
        if self._fraction is None:
            total = 0.0
            witnesses = self.witnesses() if self.certify else None
            for e in self.leaves:
                if e.status is Status.UNRESOLVED:
                    total += sum(
                        hypervolume(b)
                        for b, s in classify_orthants(e, self.registry, witnesses)
                        if s is Status.UNRESOLVED
                    )
            self._fraction = total / hypervolume(self.domain.box)
        return self._fraction

    @property
    def unresolved_leaves(self) -> list[Element]:
        return [e for e in self.leaves if e.status is Status.UNRESOLVED]

    def choose_split_dimension(self, e: Element) -> int:
        return choose_split_dimension(e, self.registry, self.domain)

    # -- iteration --------------------------------------------------------

    def converged(self) -> bool:
        return self.stop_reason() is not None

    def stop_reason(self) -> str | None:
        if not self.unresolved_leaves:
            return "resolved"
        if self.unresolved_fraction() <= self.h_min:
            return "h_min"
        if self.iter >= self.n_iter_max:
            return "n_iter"
        return None

    def iterate(self) -> IterationReport:
        if self.oracle is None:
            raise CampaignError("no oracle attached; pass one to from_json to resume")
        if self.converged():
            raise CampaignError("campaign already converged")

        fresh = failures = gained = 0
        if self.pending:
            fresh, failures, gained = self._simulate(sorted(self.pending))

        to_split = [e for e in self.leaves if e.status is Status.UNRESOLVED and not self.has_pending(e)]
        next_iter = self.iter + 1
        new_leaves: list[Element] = []
        children: list[Element] = []
        for e in self.leaves:
            if e.status is not Status.UNRESOLVED or self.has_pending(e):
                new_leaves.append(e)
                continue
            dim = self.choose_split_dimension(e)
            pts = self._points_of(e)
            for half in bisect(e.box, dim):
                child = self._new_element(half, parent=e.id, birth=next_iter)
                ids = sorted(e.sample_ids)
                child.sample_ids.update(sid for sid, inside in zip(ids, _in_closure(half, pts)) if inside)
                new_leaves.append(child)
                children.append(child)
        self.leaves = new_leaves

        new_ids: list[int] = []
        for child in children:
            for p in level1_points(child.box):
                sid, is_new = self.registry.register(p)
                if is_new:
                    new_ids.append(sid)
        touched = self._attach(new_ids)

        tally = self._label_new(new_ids)
        fresh += tally["fresh"]
        failures += tally["failures"]

        reopened = 0
        child_ids = {c.id for c in children}
        for e in {x.id: x for x in children + touched}.values():
            before = e.status
            e.status = self._status_of(e)
            if e.id not in child_ids and before is not Status.UNRESOLVED and e.status is Status.UNRESOLVED:
                reopened += 1
        corner_tally = self._certify(children)
        for key in tally:
            tally[key] += corner_tally[key]
        fresh += corner_tally["fresh"]
        failures += corner_tally["failures"]
        reopened += corner_tally["reopened"]
        if not to_split and gained == 0:
            raise OracleAbort(f"{len(self.pending)} samples keep failing; no progress possible")

        self.iter = next_iter
        self._total_fresh += fresh
        self._fraction = None
        return self._record(
            IterationReport(
                iter=self.iter,
                fresh_evals=fresh,
                inferred=tally["inferred"],
                unresolved_fraction=0.0,
                bisected=len(to_split),
                conflicts=tally["conflicts"],
                failures=failures,
                reopened=reopened,
            )
        )

    def run(self, on_iteration: Callable[["Campaign", IterationReport], None] | None = None) -> "Campaign":
        """Iterate until a stopping criterion is met."""
        while not self.converged():
            report = self.iterate()
            if on_iteration is not None:
                on_iteration(self, report)
        return self

    def _record(self, report: IterationReport) -> IterationReport:
        self._fraction = None
        full = IterationReport(
            **{
                **report.to_json(),
                "unresolved_fraction": self.unresolved_fraction(),
                "leaves": len(self.leaves),
                "samples": len(self.registry),
                "total_fresh": self._total_fresh,
            }
        )
        self.history.append(full)
        return full

    def _points_of(self, e: Element) -> np.ndarray:
        ids = sorted(e.sample_ids)
        return np.array([self.registry[i].point for i in ids], dtype=float).reshape(len(ids), self.domain.dim)

    def _attach(self, new_ids: list[int]) -> list[Element]:
        """Add new samples to every leaf whose closure holds them; returns touched leaves."""
        if not new_ids:
            return []
        lo = np.array([e.box.lo for e in self.leaves])
        hi = np.array([e.box.hi for e in self.leaves])
        touched: dict[int, Element] = {}
        for sid in new_ids:
            p = np.asarray(self.registry[sid].point)
            for k in np.flatnonzero(np.all((p >= lo) & (p <= hi), axis=1)):
                self.leaves[k].sample_ids.add(sid)
                touched[k] = self.leaves[k]
        return [touched[k] for k in sorted(touched)]

    def witnesses(self) -> WitnessSet:
        return WitnessSet(self.profile, self.registry.labeled())

    def _label_new(self, ids: list[int], witnesses: WitnessSet | None = None) -> dict[str, int]:
        """Infer what monotonicity forces, simulate the rest."""
        witnesses = self.witnesses() if witnesses is None else witnesses
        tally = {"inferred": 0, "conflicts": 0, "fresh": 0, "failures": 0}
        to_simulate = []
        for sid in ids:
            try:
                label = witnesses.infer(self.registry[sid].point)
            except MonotonicityViolation as exc:
                logger.warning("inference conflict, simulating instead: %s", exc)
                tally["conflicts"] += 1
                label = None
            if label is None:
                to_simulate.append(sid)
            else:
                self.registry.set_label(sid, label, Provenance.INFERRED)
                witnesses.add(self.registry[sid].as_labeled())
                tally["inferred"] += 1
        tally["fresh"], tally["failures"], _ = self._simulate(to_simulate)
        return tally

    def _certify(self, candidates: list[Element]) -> dict[str, int]:
        """Make sure every resolved candidate has its critical corner labeled.

        Corners are registered as samples; a corner with the opposite label
        lands on the element's closure and leaves it unresolved.
        """
        tally = {"inferred": 0, "conflicts": 0, "fresh": 0, "failures": 0, "reopened": 0}
        if not self.certify:
            return tally
        new_ids = []
        for e in candidates:
            if e.status is Status.UNRESOLVED:
                continue
            label = Label.MINUS if e.status is Status.RESOLVED_MINUS else Label.PLUS
            corner = critical_corner(e.box.lo, e.box.hi, label, self.profile)
            if corner is None:
                continue
            sid, is_new = self.registry.register(corner)
            if is_new:
                new_ids.append(sid)
        if not new_ids:
            return tally
        touched = self._attach(new_ids)
        tally.update(self._label_new(new_ids))
        candidate_ids = {e.id for e in candidates}
        for e in touched:
            before = e.status
            e.status = self._status_of(e)
            if before is not Status.UNRESOLVED and e.status is Status.UNRESOLVED and e.id not in candidate_ids:
                tally["reopened"] += 1
        return tally

    def _simulate(self, ids: list[int]) -> tuple[int, int, int]:
        """Label ``ids`` through the oracle; returns (simulated labels, failures, labels gained).

        A cache hit counts as a simulated label so that accounting does not
        depend on what an earlier, interrupted run left in the cache.
        """
        if not ids:
            return 0, 0, 0
        records = evaluate_batch(
            self.oracle, [self.registry[i].point for i in ids], self.cache, self.parallelism
        )
        fresh = failures = 0
        for sid, rec in zip(ids, records):
            self.cache_hits += rec.source is Source.CACHE
            if rec.ok:
                fresh += 1
                self.registry.set_label(sid, rec.label, Provenance.SIMULATED)
                self.pending.discard(sid)
            else:
                logger.warning("evaluation of sample %d failed: %s", sid, rec.error)
                failures += 1
                self.pending.add(sid)
        return fresh, failures, len(ids) - failures

    # -- accounting -------------------------------------------------------

    @property
    def total_fresh(self) -> int:
        return self._total_fresh

    def count(self, provenance: Provenance) -> int:
        return sum(1 for r in self.registry if r.provenance is provenance)

    def partition_volume(self) -> float:
        return sum(hypervolume(e.box) for e in self.leaves)

    # -- persistence ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "domain": {"names": list(self.domain.dimension_names), "bounds": self.domain.box.as_list()},
            "profile": [d.value for d in self.profile.directions],
            "sweep_dim": self.sweep_dim,
            "n_iter_max": self.n_iter_max,
            "h_min": self.h_min,
            "certify": self.certify,
            "iter": self.iter,
            "oracle": None if self.oracle is None else self.oracle.fingerprint,
            "total_fresh": self._total_fresh,
            "next_element": self._next_element,
            "registry": self.registry.to_json(),
            "pending": sorted(self.pending),
            "elements": [
                {
                    "id": e.id,
                    "box": e.box.as_list(),
                    "status": e.status.value,
                    "sample_ids": sorted(e.sample_ids),
                    "birth_iteration": e.birth_iteration,
                    "parent": e.parent,
                }
                for e in self.leaves
            ],
            "history": [r.to_json() for r in self.history],
        }

    @classmethod
    def from_json(
        cls,
        doc: dict,
        oracle: Oracle | None = None,
        n_iter_max: int | None = None,
        h_min: float | None = None,
        cache: EvaluationCache | None = None,
        parallelism: int = 1,
    ) -> "Campaign":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise CampaignError(f"unsupported campaign schema version {doc.get('schema_version')!r}")
        domain = Domain(Box.from_bounds(doc["domain"]["bounds"]), tuple(doc["domain"]["names"]))
        profile = MonotonicityProfile(tuple(Direction(d) for d in doc["profile"]))
        if oracle is not None and doc.get("oracle") not in (None, oracle.fingerprint):
            raise CampaignError("saved campaign was produced by a different oracle")
        c = cls(
            domain,
            profile,
            doc["sweep_dim"],
            oracle,
            doc["n_iter_max"] if n_iter_max is None else n_iter_max,
            doc["h_min"] if h_min is None else h_min,
            cache,
            parallelism,
            doc.get("certify", True),
        )
        c.registry = SampleRegistry.from_json(domain.box, doc["registry"])
        c.pending = set(doc["pending"])
        c.iter = doc["iter"]
        c._total_fresh = doc["total_fresh"]
        c._next_element = doc["next_element"]
        c.leaves = [
            Element(
                row["id"],
                Box.from_bounds(row["box"]),
                Status(row["status"]),
                set(row["sample_ids"]),
                row["birth_iteration"],
                row["parent"],
            )
            for row in doc["elements"]
        ]
        c.history = [IterationReport(**row) for row in doc["history"]]
        return c

    # -- relabeling -------------------------------------------------------

    def relabeled(self, labels: dict[int, Label]) -> "Campaign":
        """A detached copy with some sample labels replaced and leaves reclassified."""
        copy = Campaign.from_json(self.to_json())
        for sid, label in labels.items():
            rec = copy.registry[sid]
            copy.registry.set_label(sid, label, rec.provenance or Provenance.SIMULATED)
        for e in copy.leaves:
            e.status = copy._status_of(e)
        copy._fraction = None
        return copy


def choose_split_dimension(e: Element, registry: SampleRegistry, domain: Domain) -> int:
    """Dimension to bisect ``e`` along.

    The longest edge relative to the domain extent wins. Among equally long
    edges, prefer the cut after which one child holds the fewest samples of
    its minority label; remaining ties go to the lowest index.
    """
    rel = e.box.edges / domain.box.edges
    longest = rel.max()
    tied = [i for i, r in enumerate(rel) if np.isclose(r, longest, rtol=1e-9, atol=0.0)]
    if len(tied) == 1:
        return tied[0]
    ids = sorted(e.sample_ids)
    pts = np.array([registry[i].point for i in ids], dtype=float).reshape(len(ids), e.box.dim)
    ranks = np.array([-1 if registry[i].label is None else registry[i].label.rank for i in ids])
    best, best_score = tied[0], None
    for dim in tied:
        score = None
        for half in bisect(e.box, dim):
            inside = _in_closure(half, pts)
            minus = int(np.count_nonzero(inside & (ranks == 1)))
            plus = int(np.count_nonzero(inside & (ranks == 0)))
            minority = min(minus, plus)
            score = minority if score is None else min(score, minority)
        if best_score is None or score < best_score:
            best, best_score = dim, score
    return best
