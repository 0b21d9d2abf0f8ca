"""Binary simulators behind one interface, plus a persistent evaluation cache.

An oracle is any callable mapping a point to a :class:`Label` that also
exposes a ``fingerprint`` string. The fingerprint keys the cache so results
from different oracles never mix.
"""
from __future__ import annotations

import hashlib
import json
import shlex
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .monotonicity import Direction, Label, MonotonicityProfile
from .sparse_grid import Quantizer


class OracleConfigError(ValueError):
    pass


class OracleEvaluationError(RuntimeError):
    pass


class Oracle(Protocol):
    fingerprint: str

    def __call__(self, point: Sequence[float]) -> Label: ...


def _fingerprint(payload: Mapping) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class SyntheticThreshold:
    """Labels MINUS iff ``x[sweep_dim] >= g(rest)``.

    ``g = intercept + sum(coeffs[i] * x[i] ** exponents[i])`` over the
    non-sweep dimensions ``i``. Coordinates are expected to be positive when
    an exponent other than 1 is used.
    """

    def __init__(
        self,
        intercept: float,
        coeffs: Mapping[int, float],
        sweep_dim: int,
        dim: int,
        exponents: Mapping[int, float] | None = None,
        profile: MonotonicityProfile | None = None,
    ):
        self.intercept = float(intercept)
        self.sweep_dim = int(sweep_dim)
        self.dim = int(dim)
        self.coeffs = {int(k): float(v) for k, v in coeffs.items()}
        self.exponents = {int(k): float(v) for k, v in (exponents or {}).items()}
        if self.sweep_dim in self.coeffs:
            raise OracleConfigError("the sweep dimension cannot carry a threshold coefficient")
        if any(not 0 <= k < self.dim for k in self.coeffs):
            raise OracleConfigError(f"coefficient index out of range for {self.dim} dimensions")
        if any(p <= 0 for p in self.exponents.values()):
            raise OracleConfigError("exponents must be positive to keep the threshold monotone")
        if profile is not None:
            self._check_profile(profile)
        self.fingerprint = _fingerprint(
            {
                "kind": "synthetic_threshold",
                "intercept": self.intercept,
                "coeffs": sorted(self.coeffs.items()),
                "exponents": sorted(self.exponents.items()),
                "sweep_dim": self.sweep_dim,
            }
        )

    def _check_profile(self, profile: MonotonicityProfile) -> None:
        if profile.dim != self.dim:
            raise OracleConfigError("profile and oracle dimension differ")
        if profile.directions[self.sweep_dim] is not Direction.INCREASING:
            raise OracleConfigError("the sweep dimension must be increasing")
        for i, c in self.coeffs.items():
            d = profile.directions[i]
            # raising a decreasing parameter must raise the threshold, and vice versa
            if (d is Direction.DECREASING and c < 0) or (d is Direction.INCREASING and c > 0):
                raise OracleConfigError(
                    f"coefficient {c} on dimension {i} contradicts its declared direction {d.value}"
                )

    def threshold(self, rest: np.ndarray) -> np.ndarray:
        """Threshold for points given as an array of full coordinates ``(..., d)``."""
        rest = np.asarray(rest, dtype=float)
        g = np.full(rest.shape[:-1], self.intercept)
        for i, c in self.coeffs.items():
            g = g + c * rest[..., i] ** self.exponents.get(i, 1.0)
        return g

    def labels(self, points: np.ndarray) -> np.ndarray:
        """Vectorized labels as +1/-1 integers."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.where(points[:, self.sweep_dim] >= self.threshold(points), -1, 1)

    def __call__(self, point: Sequence[float]) -> Label:
        return Label(int(self.labels(np.asarray(point, dtype=float))[0]))


def synthetic_threshold(
    coeffs: Mapping[int, float],
    sweep_dim: int,
    intercept: float,
    dim: int,
    exponents: Mapping[int, float] | None = None,
    profile: MonotonicityProfile | None = None,
) -> SyntheticThreshold:
    return SyntheticThreshold(intercept, coeffs, sweep_dim, dim, exponents, profile)


class SyntheticNoisyThreshold:
    """A threshold oracle whose labels flip pseudorandomly near the boundary.

    Only points whose sweep coordinate lies within ``band_width * sweep_range``
    of the base threshold can flip; each such point flips with probability
    ``flip_rate``, decided by a hash of (seed, point) so repeated calls agree.
    """

    def __init__(
        self,
        base: SyntheticThreshold,
        band_width: float,
        seed: int,
        sweep_range: tuple[float, float],
        flip_rate: float = 0.3,
    ):
        if not 0.0 <= band_width <= 0.1:
            raise OracleConfigError("band_width must lie in [0, 0.1] of the sweep range")
        if not 0.0 <= flip_rate <= 1.0:
            raise OracleConfigError("flip_rate must lie in [0, 1]")
        self.base = base
        self.band_width = float(band_width)
        self.seed = int(seed)
        self.flip_rate = float(flip_rate)
        self.sweep_range = (float(sweep_range[0]), float(sweep_range[1]))
        self.half_band = self.band_width * (self.sweep_range[1] - self.sweep_range[0])
        self.fingerprint = _fingerprint(
            {
                "kind": "synthetic_noisy_threshold",
                "base": base.fingerprint,
                "band_width": self.band_width,
                "seed": self.seed,
                "flip_rate": self.flip_rate,
                "sweep_range": self.sweep_range,
            }
        )

    def in_band(self, point: Sequence[float]) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(abs(p[self.base.sweep_dim] - self.base.threshold(p)) <= self.half_band)

    def _uniform(self, point: Sequence[float]) -> float:
        blob = np.asarray(point, dtype="<f8").tobytes() + self.seed.to_bytes(8, "little", signed=True)
        digest = hashlib.sha256(blob).digest()
        return int.from_bytes(digest[:8], "little") / 2.0**64

    def __call__(self, point: Sequence[float]) -> Label:
        label = self.base(point)
        if self.half_band > 0 and self.in_band(point) and self._uniform(point) < self.flip_rate:
            return label.flipped
        return label


def synthetic_noisy_threshold(
    base: SyntheticThreshold, band_width: float, seed: int, sweep_range: tuple[float, float], flip_rate: float = 0.3
) -> SyntheticNoisyThreshold:
    return SyntheticNoisyThreshold(base, band_width, seed, sweep_range, flip_rate)


class ExternalProcessOracle:
    """Runs ``command`` once per point.

    The point goes to stdin as one line of space-separated coordinates; the
    process must print ``+1`` or ``-1`` as its first stdout token and exit 0.
    """

    def __init__(self, command: str | Sequence[str], timeout: float):
        if timeout <= 0:
            raise OracleConfigError("timeout must be positive")
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise OracleConfigError("empty command")
        self.timeout = float(timeout)
        self.fingerprint = _fingerprint({"kind": "external_process", "command": self.command})

    def __call__(self, point: Sequence[float]) -> Label:
        line = " ".join(repr(float(v)) for v in point) + "\n"
        try:
            proc = subprocess.run(
                self.command, input=line, capture_output=True, text=True, timeout=self.timeout, check=False
            )
        except subprocess.TimeoutExpired:
            raise OracleEvaluationError(f"timed out after {self.timeout}s") from None
        except OSError as exc:
            raise OracleEvaluationError(f"could not start {self.command[0]}: {exc}") from None
        if proc.returncode != 0:
            raise OracleEvaluationError(f"exit status {proc.returncode}: {proc.stderr.strip()[:200]}")
        tokens = proc.stdout.split()
        if not tokens or tokens[0] not in ("+1", "-1"):
            raise OracleEvaluationError(f"malformed reply {proc.stdout[:80]!r}")
        return Label(int(tokens[0]))


class Source(Enum):
    FRESH = "fresh"
    CACHE = "cache"


@dataclass(frozen=True)
class EvaluationRecord:
    point: tuple[float, ...]
    label: Label | None
    wall_time: float
    source: Source
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.label is not None


class EvaluationCache:
    """Label cache keyed by (oracle fingerprint, quantized point).

    With a ``path`` the cache is backed by an append-only JSON-lines file and
    reloaded from it on construction.
    """

    def __init__(self, quantizer: Quantizer, path: str | Path | None = None):
        self.quantizer = quantizer
        self.path = Path(path) if path is not None else None
        self._store: dict[tuple[str, tuple[int, ...]], Label] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open() as fh:
                for line in fh:
                    if line.strip():
                        row = json.loads(line)
                        self._store[(row["oracle"], quantizer.key(row["point"]))] = Label(row["label"])

    def get(self, fingerprint: str, point: Sequence[float]) -> Label | None:
        with self._lock:
            return self._store.get((fingerprint, self.quantizer.key(point)))

    def put_many(self, fingerprint: str, records: Sequence[EvaluationRecord]) -> None:
        rows = []
        with self._lock:
            for rec in records:
                key = (fingerprint, self.quantizer.key(rec.point))
                if rec.label is None or key in self._store:
                    continue
                self._store[key] = rec.label
                rows.append(
                    {"point": list(rec.point), "label": rec.label.value, "oracle": fingerprint, "wall_time": rec.wall_time}
                )
            if self.path is not None and rows:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a") as fh:
                    for row in rows:
                        fh.write(json.dumps(row) + "\n")

    def __len__(self) -> int:
        return len(self._store)

    def entries(self) -> list[tuple[str, tuple[int, ...], Label]]:
        return [(fp, key, label) for (fp, key), label in self._store.items()]


def _evaluate_one(oracle: Oracle, point: tuple[float, ...]) -> EvaluationRecord:
    start = time.perf_counter()
    try:
        label = oracle(point)
    except OracleEvaluationError as exc:
        return EvaluationRecord(point, None, time.perf_counter() - start, Source.FRESH, str(exc))
    return EvaluationRecord(point, label, time.perf_counter() - start, Source.FRESH)


def evaluate_batch(
    oracle: Oracle,
    points: Sequence[Sequence[float]],
    cache: EvaluationCache | None = None,
    parallelism: int = 1,
) -> list[EvaluationRecord]:
    """Label ``points`` in input order, consulting and then updating ``cache``.

    Failed evaluations come back as records with ``label=None`` and an error
    message; they never abort the rest of the batch.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    points = [tuple(float(v) for v in p) for p in points]
    results: list[EvaluationRecord | None] = [None] * len(points)
    todo: list[int] = []
    for i, p in enumerate(points):
        hit = cache.get(oracle.fingerprint, p) if cache is not None else None
        if hit is not None:
            results[i] = EvaluationRecord(p, hit, 0.0, Source.CACHE)
        else:
            todo.append(i)

    if parallelism == 1 or len(todo) <= 1:
        fresh = [_evaluate_one(oracle, points[i]) for i in todo]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            fresh = list(pool.map(lambda i: _evaluate_one(oracle, points[i]), todo))
    for i, rec in zip(todo, fresh):
        results[i] = rec
    if cache is not None:
        cache.put_many(oracle.fingerprint, fresh)
    return results  # type: ignore[return-value]
