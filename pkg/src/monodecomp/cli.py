"""Command-line driver: ``monodecomp run | resume | curves``.

Exit codes: 0 converged (or curves written), 2 invalid config or state,
3 oracle abort (state saved), 4 stopped early by ``--stop-after`` (state saved).

Everything written under the output directory is a pure function of the
config and seed, except ``cache.jsonl`` which records wall times.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import CampaignConfig, ConfigError, build_marginals, load_config
from .decomposer import Campaign, CampaignError, IterationReport, OracleAbort
from .estimators import Marginal, campaign_curve, campaign_surface, default_sweep_values
from .monotonicity import Provenance, enforce_monotonicity
from .oracle import EvaluationCache, OracleEvaluationError
from .sparse_grid import Quantizer

logger = logging.getLogger("monodecomp")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ORACLE = 3
EXIT_STOPPED = 4


class _Stop(Exception):
    pass


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1) + "\n")


def _estimation_block(cfg: CampaignConfig, mean: str, k: int) -> dict:
    return {
        "marginals": cfg.marginal_specs(),
        "sweep_num": cfg.sweep_num,
        "surface_num": cfg.surface_num,
        "mean_curve": mean,
        "k": k,
    }


def _sweep_values(campaign: Campaign, num: int):
    iv = campaign.domain.box.bounds[campaign.sweep_dim]
    return default_sweep_values(iv.lo, iv.hi, num)


class _Runner:
    def __init__(self, cfg: CampaignConfig, args: argparse.Namespace):
        self.cfg = cfg
        self.out = cfg.output_dir
        self.report_every = args.report_every
        self.mean = args.mean_curve
        self.k = args.knn_k
        self.enforce = args.enforce_monotonicity
        self.stop_after = args.stop_after
        self.marginals = cfg.marginals()
        self.steps = 0

    def checkpoint(self, campaign: Campaign) -> None:
        doc = campaign.to_json()
        doc["estimation"] = _estimation_block(self.cfg, self.mean, self.k)
        _write_json(self.out / "state.json", doc)
        with (self.out / "iterations.jsonl").open("w") as fh:
            for r in campaign.history:
                fh.write(json.dumps(r.to_json()) + "\n")
        if campaign.iter == 1 or campaign.iter % self.report_every == 0 or campaign.converged():
            curve = campaign_curve(
                campaign, self.marginals, _sweep_values(campaign, self.cfg.sweep_num), self.mean, self.k
            )
            curve.to_csv(self.out / "curves" / f"curve_iter{campaign.iter:03d}.csv")

    def on_iteration(self, campaign: Campaign, report: IterationReport) -> None:
        logger.info(
            "iter %d: fresh=%d inferred=%d unresolved=%.6g leaves=%d",
            report.iter, report.fresh_evals, report.inferred, report.unresolved_fraction, report.leaves,
        )
        self.checkpoint(campaign)
        self.steps += 1
        if self.stop_after is not None and self.steps >= self.stop_after and not campaign.converged():
            raise _Stop

    def finalize(self, campaign: Campaign) -> None:
        summary: dict = {
            "stop_reason": campaign.stop_reason(),
            "iterations": campaign.iter,
            "total_fresh": campaign.total_fresh,
            "simulated": campaign.count(Provenance.SIMULATED),
            "inferred": campaign.count(Provenance.INFERRED),
            "samples": len(campaign.registry),
            "leaves": len(campaign.leaves),
            "unresolved_fraction": campaign.unresolved_fraction(),
            "mean_curve": self.mean,
        }
        target = campaign
        if self.enforce:
            result = enforce_monotonicity(campaign.registry.labeled(), campaign.profile, self.enforce)
            changed = {s.id: s.label for s in result.samples if s.label is not campaign.registry[s.id].label}
            if changed:
                target = campaign.relabeled(changed)
            summary["enforcement"] = {
                "flips": result.flips,
                "passes": result.passes,
                "converged": result.converged,
                "changed_samples": sorted(changed),
            }
        curve = campaign_curve(target, self.marginals, _sweep_values(target, self.cfg.sweep_num), self.mean, self.k)
        curve.to_csv(self.out / "curve_final.csv")
        campaign_surface(target, self.cfg.surface_num).to_csv(self.out / "limit_surface.csv")
        summary["gap_area"] = curve.gap_area()
        _write_json(self.out / "summary.json", summary)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.report_every < 1:
        print("error: --report-every must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    if args.enforce_monotonicity is not None and args.enforce_monotonicity < 1:
        print("error: --enforce-monotonicity needs at least 1 pass", file=sys.stderr)
        return EXIT_INVALID

    out = cfg.output_dir
    (out / "curves").mkdir(parents=True, exist_ok=True)
    domain = cfg.domain
    cache = EvaluationCache(Quantizer(domain.box), cfg.cache) if cfg.cache is not None else None
    oracle = cfg.build_oracle()
    runner = _Runner(cfg, args)

    if args.resume:
        try:
            doc = json.loads(Path(args.resume).read_text())
            campaign = Campaign.from_json(doc, oracle, cfg.n_iter_max, cfg.h_min, cache, cfg.parallelism)
        except (OSError, json.JSONDecodeError, KeyError, CampaignError, ValueError) as exc:
            print(f"error: cannot resume from {args.resume}: {exc}", file=sys.stderr)
            return EXIT_INVALID
        if list(campaign.domain.dimension_names) != [d.name for d in cfg.dimensions] or campaign.sweep_dim != cfg.sweep_dim:
            print("error: saved state does not match the config", file=sys.stderr)
            return EXIT_INVALID
    else:
        try:
            campaign = Campaign.initialize(
                domain, cfg.profile, cfg.sweep_dim, oracle, cfg.n_iter_max, cfg.h_min,
                cache, cfg.parallelism, cfg.certify,
            )
        except OracleEvaluationError as exc:
            print(f"error: initial sampling failed: {exc}", file=sys.stderr)
            return EXIT_ORACLE
    runner.checkpoint(campaign)

    try:
        campaign.run(runner.on_iteration)
    except OracleAbort as exc:
        runner.checkpoint(campaign)
        print(f"error: oracle abort: {exc}; state saved to {out / 'state.json'}", file=sys.stderr)
        return EXIT_ORACLE
    except _Stop:
        logger.info("stopped after %d iterations; state saved", runner.steps)
        return EXIT_STOPPED
    runner.finalize(campaign)
    logger.info("converged (%s) after %d iterations", campaign.stop_reason(), campaign.iter)
    return EXIT_OK


def _parse_marginal(token: str) -> tuple[str, dict]:
    name, sep, spec = token.partition("=")
    if not sep or not name:
        raise ConfigError(f"marginal override {token!r} must look like NAME=uniform or NAME=normal:MU:SIGMA")
    parts = spec.split(":")
    if parts == ["uniform"]:
        return name, {"kind": "uniform"}
    if parts[0] == "normal" and len(parts) == 3:
        try:
            return name, {"kind": "normal", "mu": float(parts[1]), "sigma": float(parts[2])}
        except ValueError:
            pass
    raise ConfigError(f"cannot parse marginal override {token!r}")


def cmd_curves(args: argparse.Namespace) -> int:
    try:
        doc = json.loads(Path(args.state).read_text())
        campaign = Campaign.from_json(doc)
    except (OSError, json.JSONDecodeError, KeyError, CampaignError, ValueError) as exc:
        print(f"error: cannot load state {args.state}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    est = doc.get("estimation", {})
    specs = dict(est.get("marginals", {}))
    names = list(campaign.domain.dimension_names)
    sweep_name = names[campaign.sweep_dim]
    try:
        for token in args.marginal or []:
            name, spec = _parse_marginal(token)
            if name not in names:
                raise ConfigError(f"marginal override names unknown dimension {name!r}")
            if name == sweep_name:
                raise ConfigError(f"{name!r} is the sweep dimension and takes no marginal")
            specs[name] = spec
        marginals: list[Marginal] = build_marginals(campaign.domain, campaign.sweep_dim, specs)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    mean = args.mean_curve or est.get("mean_curve", "midpoint")
    k = args.knn_k if args.knn_k is not None else est.get("k", 1)
    sweep_num = args.sweep_num or est.get("sweep_num", 241)
    surface_num = args.surface_num or est.get("surface_num", 21)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    campaign_curve(campaign, marginals, _sweep_values(campaign, sweep_num), mean, k).to_csv(out / "curve.csv")
    campaign_surface(campaign, surface_num).to_csv(out / "limit_surface.csv")
    return EXIT_OK


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--report-every", type=int, default=1, metavar="N", help="write a bound curve every N iterations")
    p.add_argument(
        "--enforce-monotonicity", type=int, default=None, metavar="PASSES",
        help="repair noisy labels before the final estimation",
    )
    p.add_argument("--mean-curve", choices=("midpoint", "knn"), default="midpoint")
    p.add_argument("--knn-k", type=int, default=1, help="neighbors for the knn mean curve")
    p.add_argument(
        "--stop-after", type=int, default=None, metavar="N",
        help="save state and exit (code 4) after N iterations of this invocation",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monodecomp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a campaign from a config file")
    run.add_argument("config")
    run.add_argument("--resume", metavar="STATE", default=None, help="continue from a saved state.json")
    _add_run_options(run)
    run.set_defaults(func=cmd_run)

    resume = sub.add_parser("resume", help="same as run --resume")
    resume.add_argument("config")
    resume.add_argument("resume", metavar="STATE")
    _add_run_options(resume)
    resume.set_defaults(func=cmd_run)

    curves = sub.add_parser("curves", help="re-estimate curves from a saved state without simulating")
    curves.add_argument("state")
    curves.add_argument("--out", required=True, metavar="DIR")
    curves.add_argument(
        "--marginal", action="append", metavar="NAME=SPEC",
        help="override a marginal: NAME=uniform or NAME=normal:MU:SIGMA (repeatable)",
    )
    curves.add_argument("--mean-curve", choices=("midpoint", "knn"), default=None)
    curves.add_argument("--knn-k", type=int, default=None)
    curves.add_argument("--sweep-num", type=int, default=None)
    curves.add_argument("--surface-num", type=int, default=None)
    curves.set_defaults(func=cmd_curves)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
