"""Acceptance criteria, one test each; every test reports a PASS/FAIL line."""
from __future__ import annotations

import filecmp
import json
import time
from pathlib import Path

import numpy as np
import pytest

from _reference import (
    AFFINE_3D,
    ORACLES_2D,
    ORACLES_3D,
    domain_for,
    new_campaign,
    oracle_for,
    pairwise_violations,
    profile_for,
    report,
    threshold,
    true_curve_uniform,
)
from monodecomp import Box, Campaign, Marginal, Provenance
from monodecomp.cli import main
from monodecomp.config import load_config
from monodecomp.decomposer import Status
from monodecomp.estimators import (
    campaign_curve,
    campaign_surface,
    default_sweep_values,
    probability_curve,
    refine_for_bounds,
    to_uniform,
)
from monodecomp.monotonicity import LabeledSample, enforce_monotonicity
from monodecomp.oracle import SyntheticNoisyThreshold
from monodecomp.sparse_grid import level1_points

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SWEEP = default_sweep_values(80.0, 200.0, 241)


def uniform_marginals(d: int):
    return [Marginal.uniform(600.0, 1600.0), Marginal.uniform(100.0, 500.0)][: d - 1]


def snapshots(campaign: Campaign):
    """Yield the campaign after initialization and after every iteration."""
    yield campaign
    while not campaign.converged():
        campaign.iterate()
        yield campaign


@pytest.fixture(scope="module")
def sandwich_runs():
    """Curve history for the five sandwich oracles, plus every campaign run."""
    runs = []
    start = time.perf_counter()
    for d, spec in [(2, s) for s in ORACLES_2D] + [(3, s) for s in ORACLES_3D]:
        truth = true_curve_uniform(spec, d, SWEEP)
        curves = []
        c = new_campaign(d, spec, n_iter_max=10 if d == 2 else 9)
        for snap in snapshots(c):
            curves.append(campaign_curve(snap, uniform_marginals(d), SWEEP))
        runs.append((d, spec, truth, curves, c))
    return runs, time.perf_counter() - start


def test_c01_sparse_grid_counts():
    start = time.perf_counter()
    counts = {d: len(level1_points(Box.from_bounds([(0.0, 1.0)] * d))) for d in range(1, 8)}
    elapsed = time.perf_counter() - start
    ok = counts[1] == 3 and counts[2] == 5 and all(counts[d] == 2 * d + 1 for d in counts) and elapsed < 1.0
    report(1, "level-1 sparse grid has 2d+1 points", ok, f"counts={counts}, {elapsed:.3f}s")
    assert ok


def test_c02_one_dimensional_halving():
    start = time.perf_counter()
    c = new_campaign(1, (125.0, {}, {}), n_iter_max=12)
    fractions = [c.unresolved_fraction()]
    fresh = []
    while not c.converged():
        r = c.iterate()
        fractions.append(r.unresolved_fraction)
        fresh.append(r.fresh_evals)
    elapsed = time.perf_counter() - start
    expected = [0.5 * 2.0**-k for k in range(len(fractions))]
    ok = len(fractions) >= 11 and fractions == expected and elapsed < 1.0
    report(2, "1-D unresolved fraction halves each iteration", ok, f"{len(fractions) - 1} halvings, fresh/iter={set(fresh)}, {elapsed:.3f}s")
    assert ok
    assert set(fresh) == {1}


def test_c03_sandwich(sandwich_runs):
    runs, elapsed = sandwich_runs
    violations = 0
    snaps = 0
    for d, spec, truth, curves, _ in runs:
        for curve in curves:
            snaps += 1
            violations += int(np.count_nonzero(curve.lower > truth + 1e-12))
            violations += int(np.count_nonzero(truth > curve.upper + 1e-12))
    ok = violations == 0 and len(runs) == 5 and elapsed < 30.0
    report(3, "lower <= P_true <= upper at every sweep value and snapshot", ok, f"{snaps} snapshots, {violations} violations, {elapsed:.1f}s")
    assert ok


def test_c04_gap_shrinkage(sandwich_runs):
    runs, _ = sandwich_runs
    worst = 0.0
    for *_, curves, _c in runs:
        gaps = [curve.gap_area() for curve in curves]
        worst = max(worst, max(b - a for a, b in zip(gaps, gaps[1:])))
    ok = worst <= 1e-12
    report(4, "gap area is non-increasing across iterations", ok, f"largest increase {worst:.3g}")
    assert ok


def test_c05_ballistic_limit_bracketing():
    start = time.perf_counter()
    c = new_campaign(3, AFFINE_3D, n_iter_max=9)
    violations = 0
    gaps = {}
    for snap in snapshots(c):
        s = campaign_surface(snap, 21)
        g = threshold(AFFINE_3D, s.nodes[:, 0], s.nodes[:, 1])
        violations += int(np.count_nonzero(s.lb > g + 1e-12) + np.count_nonzero(g > s.ub + 1e-12))
        gaps[snap.iter] = float(np.max(s.ub - s.lb))
        assert len(s.nodes) == 21 * 21
    elapsed = time.perf_counter() - start
    final = gaps[max(gaps)]
    ok = violations == 0 and gaps[2] >= 2.0 * final and elapsed < 60.0
    report(5, "lb <= g <= ub on the 21x21 grid; max gap shrinks >= 2x", ok, f"gap iter2={gaps[2]:.4g}, final={final:.4g}, {violations} violations, {elapsed:.1f}s")
    assert ok


def test_c06_inference_soundness(sandwich_runs):
    runs, _ = sandwich_runs
    checked = mismatches = 0
    campaigns = [(oracle_for(d, spec), c) for d, spec, *_, c in runs]
    extra = new_campaign(1, (125.0, {}, {}), n_iter_max=12).run()
    campaigns.append((oracle_for(1, (125.0, {}, {})), extra))
    for oracle, c in campaigns:
        for rec in c.registry:
            if rec.provenance is Provenance.INFERRED:
                checked += 1
                mismatches += oracle(rec.point) is not rec.label
    ok = mismatches == 0 and checked >= 200
    report(6, "every inferred label matches the oracle", ok, f"{checked} inferred labels, {mismatches} mismatches")
    assert ok


def _campaign_from_config(path: Path, n_iter_max: int | None = None) -> Campaign:
    cfg = load_config(path)
    return Campaign.initialize(
        cfg.domain, cfg.profile, cfg.sweep_dim, cfg.build_oracle(),
        n_iter_max or cfg.n_iter_max, cfg.h_min, None, cfg.parallelism, cfg.certify,
    )


def test_c07_inference_savings():
    c = _campaign_from_config(CONFIGS / "twod.json", n_iter_max=6).run()
    labeled = c.count(Provenance.SIMULATED) + c.count(Provenance.INFERRED)
    trajectory = [r.total_fresh for r in c.history]
    ok = c.iter == 6 and c.total_fresh <= 60 and c.total_fresh < labeled and c.count(Provenance.INFERRED) >= 1
    report(7, "2-D reference run: fresh calls <= 60 after 6 iterations, inference used", ok, f"fresh trajectory {trajectory}, labeled {labeled}")
    assert ok


def test_c08_marginal_transform_equivalence():
    c = _campaign_from_config(CONFIGS / "threed.json").run()
    normal = [Marginal.normal(1100.0, 110.0, 600.0, 1600.0), Marginal.normal(300.0, 30.0, 100.0, 500.0)]
    leaves = refine_for_bounds(c)
    physical = probability_curve(leaves, 0, normal, SWEEP, c.domain.box)
    mapped = [to_uniform(e, [None, *normal]) for e in leaves]
    unit_box = to_uniform(c.domain.box, [None, *normal])
    transformed = probability_curve(mapped, 0, [Marginal.uniform(0.0, 1.0)] * 2, SWEEP, unit_box)
    diff = max(np.max(np.abs(physical.lower - transformed.lower)), np.max(np.abs(physical.upper - transformed.upper)))

    ref = _campaign_from_config(CONFIGS / "twod.json").run()
    p_norm = campaign_curve(ref, [Marginal.normal(1100.0, 110.0, 600.0, 1600.0)], SWEEP).mean
    p_unif = campaign_curve(ref, [Marginal.uniform(600.0, 1600.0)], SWEEP).mean
    stretch_fail = int(np.count_nonzero(np.abs(p_norm - 0.5) < np.abs(p_unif - 0.5) - 1e-12))
    ok = diff <= 1e-10 and stretch_fail == 0
    report(8, "physical-space and transformed curves agree; normal marginals stretch", ok, f"max diff {diff:.2e}, stretch failures {stretch_fail}")
    assert ok


def test_c09_monte_carlo_equivalence():
    c = new_campaign(2, ORACLES_2D[0], n_iter_max=4).run()
    leaves = refine_for_bounds(c)
    assert len(c.leaves) <= 20
    m = Marginal.uniform(600.0, 1600.0)
    curve = probability_curve(leaves, 0, [m], SWEEP, c.domain.box)

    rng = np.random.default_rng(20240607)
    n = 10**6
    lts = np.sort(rng.uniform(600.0, 1600.0, n))
    lo = np.array([e.box.lo for e in leaves])
    hi = np.array([e.box.hi for e in leaves])
    minus = np.array([e.status is Status.RESOLVED_MINUS for e in leaves])
    unres = np.array([e.status is Status.UNRESOLVED for e in leaves])
    worst = 0.0
    cache: dict[bytes, tuple[float, float]] = {}
    for v, low, up in zip(SWEEP, curve.lower, curve.upper):
        col = (lo[:, 0] <= v) & ((v < hi[:, 0]) | ((hi[:, 0] == 200.0) & (v == 200.0)))
        key = col.tobytes()
        if key not in cache:
            idx = np.flatnonzero(col)
            idx = idx[np.argsort(lo[idx, 1])]
            # leaf holding each sample: last leaf whose lower edge is <= lts
            owner = idx[np.clip(np.searchsorted(lo[idx, 1], lts, side="right") - 1, 0, len(idx) - 1)]
            cache[key] = (np.mean(minus[owner]), np.mean(minus[owner] | unres[owner]))
        mc_low, mc_up = cache[key]
        for est, mc in ((low, mc_low), (up, mc_up)):
            se = np.sqrt(max(mc * (1 - mc), 1.0 / n) / n)
            worst = max(worst, abs(est - mc) / se)
    ok = worst <= 3.0
    report(9, "analytic bounds match a 10^6-sample Monte Carlo estimate", ok, f"{len(c.leaves)} leaves, worst deviation {worst:.2f} SE")
    assert ok


def test_c10_enforcement_repair():
    profile = profile_for(2)
    base = oracle_for(2, ORACLES_2D[0])
    noisy = SyntheticNoisyThreshold(base, 0.02, 11, (80.0, 200.0), 0.3)
    grid = [(v, l) for v in np.linspace(80, 200, 61) for l in np.linspace(600, 1600, 41)]
    samples = [LabeledSample(i, p, noisy(p)) for i, p in enumerate(grid)]
    signs = profile.signs
    before = pairwise_violations(grid, [s.label.rank for s in samples], signs)
    result = enforce_monotonicity(samples, profile, max_passes=5)
    after = pairwise_violations(grid, [s.label.rank for s in result.samples], signs)

    cfg_campaign = _campaign_from_config(CONFIGS / "threed_noisy.json").run()
    labeled = cfg_campaign.registry.labeled()
    r3 = enforce_monotonicity(labeled, cfg_campaign.profile, max_passes=5)
    after3 = pairwise_violations([s.point for s in r3.samples], [s.label.rank for s in r3.samples], cfg_campaign.profile.signs)
    ok = before > 0 and result.converged and result.passes <= 5 and after == 0 and r3.converged and after3 == 0
    report(10, "enforcement reaches a violation-free fixed point in <= 5 passes", ok, f"grid: {before} violating pairs -> {after} in {result.passes} passes ({result.flips} flips); campaign: {after3} left")
    assert ok


def _run_cli(config: Path, *extra: str) -> int:
    return main(["run", str(config), "--enforce-monotonicity", "5", *extra])


def test_c11_determinism_and_resume(tmp_path):
    dirs = {}
    for name in ("first", "second", "resumed"):
        d = tmp_path / name
        d.mkdir()
        doc = json.loads((CONFIGS / "threed_noisy.json").read_text())
        doc["output_dir"] = "out"
        (d / "cfg.json").write_text(json.dumps(doc))
        dirs[name] = d
    assert _run_cli(dirs["first"] / "cfg.json") == 0
    assert _run_cli(dirs["second"] / "cfg.json") == 0
    assert _run_cli(dirs["resumed"] / "cfg.json", "--stop-after", "3") == 4
    partial = json.loads((dirs["resumed"] / "out" / "state.json").read_text())
    assert partial["iter"] == 4
    assert main(["resume", str(dirs["resumed"] / "cfg.json"), str(dirs["resumed"] / "out" / "state.json"), "--enforce-monotonicity", "5"]) == 0

    def mismatches(a: Path, b: Path) -> list[str]:
        cmp = filecmp.dircmp(a, b, ignore=["cache.jsonl"])
        bad = cmp.left_only + cmp.right_only + cmp.diff_files
        for sub in cmp.common_dirs:
            bad += mismatches(a / sub, b / sub)
        return bad

    out = {k: v / "out" for k, v in dirs.items()}
    for path in out["first"].rglob("*"):
        if path.is_file() and path.name != "cache.jsonl":
            assert filecmp.cmp(path, out["second"] / path.relative_to(out["first"]), shallow=False)
    bad = mismatches(out["first"], out["second"]) + mismatches(out["first"], out["resumed"])
    files = sum(1 for p in out["first"].rglob("*") if p.is_file())
    ok = not bad
    report(11, "identical runs and interrupted-then-resumed runs are byte-identical", ok, f"{files} files compared, mismatches {bad}")
    assert ok
