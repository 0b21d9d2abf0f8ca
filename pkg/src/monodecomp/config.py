"""Campaign configuration documents.

A config is one JSON object::

    {
      "dimensions": [
        {"name": "velocity", "range": [80, 200], "direction": "increasing"},
        {"name": "lts", "range": [600, 1600], "direction": "decreasing",
         "marginal": {"kind": "normal", "mu": 1100, "sigma": 110}}
      ],
      "sweep": "velocity",
      "oracle": {"kind": "synthetic_threshold", "intercept": 30, "coeffs": {"lts": 0.1}},
      "n_iter_max": 10,
      "h_min": 0.0,
      "sweep_grid": {"num": 241},
      "surface_grid": {"num": 21},
      "output_dir": "out",
      "seed": 0,
      "parallelism": 1,
      "cache": "cache.jsonl",
      "certify": true
    }

Relative paths are resolved against the directory holding the config file;
``cache`` is relative to ``output_dir`` and may be ``null``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .estimators import Marginal
from .geometry import Box, Domain, GeometryError
from .monotonicity import Direction, MonotonicityProfile
from .oracle import (
    ExternalProcessOracle,
    Oracle,
    OracleConfigError,
    SyntheticNoisyThreshold,
    SyntheticThreshold,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DimensionSpec:
    name: str
    lo: float
    hi: float
    direction: Direction
    marginal: dict


@dataclass(frozen=True)
class CampaignConfig:
    dimensions: tuple[DimensionSpec, ...]
    sweep: str
    oracle: dict
    n_iter_max: int
    h_min: float
    sweep_num: int
    surface_num: int
    output_dir: Path
    seed: int
    parallelism: int
    cache: Path | None
    certify: bool

    @property
    def domain(self) -> Domain:
        return Domain(Box.from_bounds((d.lo, d.hi) for d in self.dimensions), tuple(d.name for d in self.dimensions))

    @property
    def profile(self) -> MonotonicityProfile:
        return MonotonicityProfile(tuple(d.direction for d in self.dimensions))

    @property
    def sweep_dim(self) -> int:
        return [d.name for d in self.dimensions].index(self.sweep)

    def marginal_specs(self) -> dict[str, dict]:
        return {d.name: d.marginal for d in self.dimensions if d.name != self.sweep}

    def marginals(self) -> list[Marginal]:
        return build_marginals(self.domain, self.sweep_dim, self.marginal_specs())

    def build_oracle(self) -> Oracle:
        return build_oracle(self.oracle, self.domain, self.profile, self.sweep_dim, self.seed)


def _require(doc: dict, key: str, kind: type | tuple[type, ...]) -> Any:
    if key not in doc:
        raise ConfigError(f"missing required field {key!r}")
    value = doc[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"field {key!r} has the wrong type ({type(value).__name__})")
    return value


def parse_config(doc: dict, base_dir: Path | str = ".") -> CampaignConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    base_dir = Path(base_dir)
    dims = []
    for row in _require(doc, "dimensions", list):
        if not isinstance(row, dict):
            raise ConfigError("each dimension must be an object")
        name = _require(row, "name", str)
        rng = _require(row, "range", list)
        if len(rng) != 2 or not all(isinstance(v, (int, float)) for v in rng) or not rng[0] < rng[1]:
            raise ConfigError(f"dimension {name!r} needs a range [lo, hi] with lo < hi")
        try:
            direction = Direction(row.get("direction", "none"))
        except ValueError:
            raise ConfigError(f"dimension {name!r} has unknown direction {row.get('direction')!r}") from None
        dims.append(DimensionSpec(name, float(rng[0]), float(rng[1]), direction, row.get("marginal") or {"kind": "uniform"}))
    if not dims:
        raise ConfigError("at least one dimension is required")
    names = [d.name for d in dims]
    if len(set(names)) != len(names):
        raise ConfigError("dimension names must be unique")
    sweep = _require(doc, "sweep", str)
    if sweep not in names:
        raise ConfigError(f"sweep dimension {sweep!r} is not declared")
    if dims[names.index(sweep)].direction is not Direction.INCREASING:
        raise ConfigError("the sweep dimension must be increasing")
    n_iter_max = _require(doc, "n_iter_max", int)
    if n_iter_max < 1:
        raise ConfigError("n_iter_max must be at least 1")
    h_min = float(doc.get("h_min", 0.0))
    if not 0.0 <= h_min <= 1.0:
        raise ConfigError("h_min must lie in [0, 1]")
    parallelism = int(doc.get("parallelism", 1))
    if parallelism < 1:
        raise ConfigError("parallelism must be at least 1")
    sweep_num = int(doc.get("sweep_grid", {}).get("num", 241))
    surface_num = int(doc.get("surface_grid", {}).get("num", 21))
    if sweep_num < 2 or surface_num < 2:
        raise ConfigError("grids need at least 2 points")
    output_dir = base_dir / doc.get("output_dir", "out")
    cache = doc.get("cache", "cache.jsonl")
    cfg = CampaignConfig(
        dimensions=tuple(dims),
        sweep=sweep,
        oracle=_require(doc, "oracle", dict),
        n_iter_max=n_iter_max,
        h_min=h_min,
        sweep_num=sweep_num,
        surface_num=surface_num,
        output_dir=output_dir,
        seed=int(doc.get("seed", 0)),
        parallelism=parallelism,
        cache=None if cache is None else output_dir / cache,
        certify=bool(doc.get("certify", True)),
    )
    # fail early on bad oracle or marginal settings
    cfg.build_oracle()
    cfg.marginals()
    return cfg


def load_config(path: str | Path) -> CampaignConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(doc, path.parent)


def build_marginals(domain: Domain, sweep_dim: int, specs: dict[str, dict]) -> list[Marginal]:
    out = []
    for i, name in enumerate(domain.dimension_names):
        if i == sweep_dim:
            continue
        spec = specs.get(name, {"kind": "uniform"})
        iv = domain.box.bounds[i]
        kind = spec.get("kind", "uniform")
        if kind == "uniform":
            out.append(Marginal.uniform(iv.lo, iv.hi))
        elif kind == "normal":
            try:
                mu, sigma = float(spec["mu"]), float(spec["sigma"])
            except (KeyError, TypeError, ValueError):
                raise ConfigError(f"normal marginal for {name!r} needs numeric mu and sigma") from None
            if sigma <= 0:
                raise ConfigError(f"normal marginal for {name!r} needs sigma > 0")
            out.append(Marginal.normal(mu, sigma, iv.lo, iv.hi))
        else:
            raise ConfigError(f"unknown marginal kind {kind!r} for {name!r}")
    return out


def _index_map(domain: Domain, values: dict | list | None, what: str) -> dict[int, float]:
    if values is None:
        return {}
    if isinstance(values, list):
        return {i: float(v) for i, v in enumerate(values) if v is not None}
    if not isinstance(values, dict):
        raise ConfigError(f"oracle {what} must be an object keyed by dimension name")
    try:
        return {domain.index(k): float(v) for k, v in values.items()}
    except GeometryError as exc:
        raise ConfigError(f"oracle {what}: {exc}") from None


def build_oracle(spec: dict, domain: Domain, profile: MonotonicityProfile, sweep_dim: int, seed: int) -> Oracle:
    kind = spec.get("kind")
    try:
        if kind == "synthetic_threshold":
            return SyntheticThreshold(
                float(spec.get("intercept", 0.0)),
                _index_map(domain, spec.get("coeffs"), "coeffs"),
                sweep_dim,
                domain.dim,
                _index_map(domain, spec.get("exponents"), "exponents"),
                profile,
            )
        if kind == "synthetic_noisy_threshold":
            base_spec = spec.get("base")
            if not isinstance(base_spec, dict) or base_spec.get("kind") != "synthetic_threshold":
                raise ConfigError("noisy oracle needs a synthetic_threshold 'base'")
            base = build_oracle(base_spec, domain, profile, sweep_dim, seed)
            iv = domain.box.bounds[sweep_dim]
            return SyntheticNoisyThreshold(
                base,  # type: ignore[arg-type]
                float(spec.get("band_width", 0.0)),
                int(spec.get("seed", seed)),
                (iv.lo, iv.hi),
                float(spec.get("flip_rate", 0.3)),
            )
        if kind == "external_process":
            command = spec.get("command")
            if not command:
                raise ConfigError("external_process oracle needs a command")
            return ExternalProcessOracle(command, float(spec.get("timeout", 600.0)))
    except OracleConfigError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown oracle kind {kind!r}")
