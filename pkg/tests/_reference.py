"""Reference oracles and brute-force checks shared by the tests.

Nothing here reuses the estimation code under test: true curves come from
closed forms or scipy quadrature, dominance audits are plain loops.
"""
from __future__ import annotations

import numpy as np
from scipy import integrate

from monodecomp import Box, Campaign, Direction, Domain, MonotonicityProfile, SyntheticThreshold

VELOCITY = (80.0, 200.0)
LTS = (600.0, 1600.0)
PSS = (100.0, 500.0)

# (intercept, {dim: coeff}, {dim: exponent}) on velocity x lts [x pss]
ORACLES_2D = [
    (30.0, {1: 0.1}, {}),
    (-20.0, {1: 0.15}, {}),
    (60.0, {1: 3.0e-5}, {1: 2.0}),
]
ORACLES_3D = [
    (40.0, {1: 0.07, 2: 0.05}, {}),
    (0.0, {1: 0.1, 2: 0.08}, {}),
]
AFFINE_3D = ORACLES_3D[0]

CRITERIA: list[str] = []


def report(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
    CRITERIA.append(line)
    print(line)


def domain_for(d: int) -> Domain:
    bounds = [VELOCITY, LTS, PSS][:d]
    return Domain(Box.from_bounds(bounds), ("velocity", "lts", "pss")[:d])


def profile_for(d: int) -> MonotonicityProfile:
    return MonotonicityProfile((Direction.INCREASING,) + (Direction.DECREASING,) * (d - 1))


def oracle_for(d: int, spec) -> SyntheticThreshold:
    a, coeffs, exps = spec
    return SyntheticThreshold(a, coeffs, 0, d, exps, profile_for(d))


def new_campaign(d: int, spec, n_iter_max: int = 10, **kw) -> Campaign:
    return Campaign.initialize(domain_for(d), profile_for(d), 0, oracle_for(d, spec), n_iter_max, 0.0, **kw)


def threshold(spec, *rest):
    a, coeffs, exps = spec
    g = a
    for i, x in enumerate(rest, start=1):
        g = g + coeffs.get(i, 0.0) * np.asarray(x, float) ** exps.get(i, 1.0)
    return g


def true_curve_uniform(spec, d: int, values) -> np.ndarray:
    """P(threshold <= v) with uniform non-sweep parameters."""
    a, coeffs, exps = spec
    out = []
    for v in values:
        if d == 2:
            c, p = coeffs[1], exps.get(1, 1.0)
            cut = ((v - a) / c) ** (1.0 / p) if v > a else -np.inf
            out.append(np.clip(cut - LTS[0], 0.0, LTS[1] - LTS[0]) / (LTS[1] - LTS[0]))
        else:
            b, c = coeffs[1], coeffs[2]

            def inner(lts):
                cut = (v - a - b * lts) / c
                return np.clip(cut - PSS[0], 0.0, PSS[1] - PSS[0]) / (PSS[1] - PSS[0])

            kinks = [(v - a - c * q) / b for q in PSS]
            kinks = sorted(k for k in kinks if LTS[0] < k < LTS[1])
            val, _ = integrate.quad(inner, *LTS, points=kinks or None, epsabs=1e-13, epsrel=1e-13, limit=200)
            out.append(val / (LTS[1] - LTS[0]))
    return np.array(out)


def pairwise_violations(points, ranks, signs) -> int:
    """Count ordered pairs (i, j) where i dominates j yet carries the lower label.

    Row by row: i dominates j when it is >= on increasing coordinates, <= on
    decreasing ones, equal on the rest, and not identical on the monotone ones.
    """
    points = np.asarray(points, float)
    ranks = np.asarray(ranks)
    signs = np.asarray(signs, float)
    inc, dec, fix = signs > 0, signs < 0, signs == 0
    bad = 0
    for i, p in enumerate(points):
        dom = np.all(p[inc] >= points[:, inc], axis=1)
        dom &= np.all(p[dec] <= points[:, dec], axis=1)
        dom &= np.all(p[fix] == points[:, fix], axis=1)
        dom &= np.any(p[~fix] != points[:, ~fix], axis=1)
        bad += int(np.count_nonzero(dom & (ranks[i] < ranks)))
    return bad
