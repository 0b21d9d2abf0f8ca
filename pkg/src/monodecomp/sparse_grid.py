"""Level-1 sparse-grid points of an element and the cross-element sample registry."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .geometry import Box
from .monotonicity import Label, LabeledSample, Provenance

# bisection midpoints stay exactly representable for this many levels
QUANT_BITS = 40


def level1_points(b: Box) -> list[tuple[float, ...]]:
    """Center of ``b`` followed by the two face centers of each dimension.

    This is the nested three-point rule {lo, mid, hi} combined at Smolyak
    level 1, so a d-dimensional element yields 2d + 1 points.
    """
    center = [iv.midpoint for iv in b.bounds]
    points = [tuple(center)]
    for i, iv in enumerate(b.bounds):
        for value in (iv.lo, iv.hi):
            p = list(center)
            p[i] = value
            points.append(tuple(p))
    return points


class RegistryError(ValueError):
    pass


@dataclass
class SampleRecord:
    id: int
    point: tuple[float, ...]
    label: Label | None = None
    provenance: Provenance | None = None

    @property
    def labeled(self) -> bool:
        return self.label is not None

    def as_labeled(self) -> LabeledSample:
        if self.label is None:
            raise RegistryError(f"sample {self.id} has no label yet")
        return LabeledSample(self.id, self.point, self.label, self.provenance or Provenance.SIMULATED)


class Quantizer:
    """Maps coordinates onto an integer lattice of pitch ``extent * 2**-bits``."""

    def __init__(self, domain: Box, bits: int = QUANT_BITS):
        self.lo = domain.lo
        self.hi = domain.hi
        self.scale = float(2**bits) / (self.hi - self.lo)

    def key(self, p: Sequence[float]) -> tuple[int, ...]:
        arr = np.asarray(p, dtype=float)
        return tuple(int(v) for v in np.rint((arr - self.lo) * self.scale))

    def inside(self, p: Sequence[float]) -> bool:
        arr = np.asarray(p, dtype=float)
        slack = 0.5 / self.scale
        return bool(np.all(arr >= self.lo - slack) and np.all(arr <= self.hi + slack))


class SampleRegistry:
    """Deduplicating store of every point the campaign has generated.

    Ids are assigned sequentially, so id order is registration order.
    """

    def __init__(self, domain: Box):
        self.domain = domain
        self.quantizer = Quantizer(domain)
        self._by_key: dict[tuple[int, ...], int] = {}
        self._records: list[SampleRecord] = []

    def register(self, p: Sequence[float]) -> tuple[int, bool]:
        if len(p) != self.domain.dim:
            raise RegistryError(f"point {tuple(p)} does not have {self.domain.dim} coordinates")
        if not self.quantizer.inside(p):
            raise RegistryError(f"point {tuple(p)} lies outside the domain")
        key = self.quantizer.key(p)
        existing = self._by_key.get(key)
        if existing is not None:
            return existing, False
        sid = len(self._records)
        self._records.append(SampleRecord(sid, tuple(float(v) for v in p)))
        self._by_key[key] = sid
        return sid, True

    def find(self, p: Sequence[float]) -> int | None:
        return self._by_key.get(self.quantizer.key(p))

    def __getitem__(self, sid: int) -> SampleRecord:
        return self._records[sid]

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[SampleRecord]:
        return iter(self._records)

    def set_label(self, sid: int, label: Label, provenance: Provenance) -> None:
        rec = self._records[sid]
        rec.label = label
        rec.provenance = provenance

    def labeled(self) -> list[LabeledSample]:
        return [r.as_labeled() for r in self._records if r.labeled]

    def points(self) -> np.ndarray:
        return np.array([r.point for r in self._records], dtype=float).reshape(len(self._records), self.domain.dim)

    def to_json(self) -> list[dict]:
        return [
            {
                "id": r.id,
                "point": list(r.point),
                "label": None if r.label is None else r.label.value,
                "provenance": None if r.provenance is None else r.provenance.value,
            }
            for r in self._records
        ]

    @classmethod
    def from_json(cls, domain: Box, rows: list[dict]) -> "SampleRegistry":
        reg = cls(domain)
        for row in sorted(rows, key=lambda r: r["id"]):
            sid, is_new = reg.register(row["point"])
            if not is_new or sid != row["id"]:
                raise RegistryError(f"saved registry is inconsistent at sample {row['id']}")
            if row["label"] is not None:
                reg.set_label(sid, Label(row["label"]), Provenance(row["provenance"]))
        return reg
