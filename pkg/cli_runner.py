"""
Command-line surface: run, verify, wongzakai, geometry, export.

Exit codes: 0 success, 1 verification failure, 2 config or manifest error, 3 any other engine error.
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from building_blocks import construct_beltrami_system
from config import SECI_OUTPUT_DIR, load_run_config, log, set_log_level
from export_service import EXPORTS, export_service
from models import ConfigError, ConvexIntegrationError, ManifestError, RunConfig, RunManifest, VerificationFailure
from scheduler import RunContext, run_iterations
from stochastic_flow import NoiseConfig, estimate_K0, fitted_slope, wong_zakai_rates
from verification_service import VerificationService

DEFAULT_CONFIG = "configs/demo.toml"
VERBS = ("run", "verify", "wongzakai", "geometry", "export")


def _config(args) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config = config.with_seed(args.seed)
    return config


def _out_dir(args, default_name: str) -> Path:
    return Path(args.out) if args.out else Path(SECI_OUTPUT_DIR) / default_name


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------

def _run_seed(config: RunConfig, out: Path, n_max: Optional[int]) -> RunManifest:
    every = config.run.snapshot_every
    written = {"states": 0}

    def observer(manifest: RunManifest, context: RunContext) -> None:
        export_service.write_manifest(manifest, out)
        export_service.write_tables(manifest, out)
        for state in context.states[written["states"]:]:
            export_service.write_state_snapshots(state, out, every)
        written["states"] = len(context.states)

    manifest = run_iterations(config, n_max, observer=observer)
    failed = sum(1 for v in manifest.verdicts if v.verdict == "fail")
    log(f"✅ [RUN] {len(manifest.iterations) - 1} step(s) complete, {failed} failing estimate(s); output in {out}")
    return manifest


def cmd_run(args) -> int:
    config = _config(args)
    if args.snapshot_every is not None:
        config = config.model_copy(update={"run": config.run.model_copy(update={"snapshot_every": args.snapshot_every})})
    n_seeds = args.seeds or 1
    first = config.noise.seed
    for seed in range(first, first + n_seeds):
        out = _out_dir(args, f"run_seed{seed}")
        if args.out and n_seeds > 1:
            out = out / f"seed{seed}"
        _run_seed(config.with_seed(seed), out, args.n_max)
    if n_seeds > 1:
        log(f"✅ [RUN] seeds {first}..{first + n_seeds - 1} complete")
    return 0


def cmd_verify(args) -> int:
    config = _config(args)
    report = VerificationService(config).run(args.suite)
    if args.out:
        export_service.write_json(report.model_dump(), Path(args.out) / "verification.json")
    if report.failed:
        names = ", ".join(f"{c.suite}.{c.name}" for c in report.failed)
        raise VerificationFailure(f"{len(report.failed)} invariant(s) failed: {names}")
    log(f"✅ [VERIFY] {len(report.checks)} check(s) passed in {', '.join(report.suites)}")
    return 0


def cmd_wongzakai(args) -> int:
    config = _config(args)
    n_seeds = args.seeds or config.run.n_seeds
    levels = config.noise.levels
    target = config.noise.alpha - config.noise.beta
    rows, slopes = [], {"target_alpha_minus_beta": target}
    flow_slopes, inverse_slopes = [], []
    for seed in range(config.noise.seed, config.noise.seed + n_seeds):
        noise = NoiseConfig.from_settings(config.with_seed(seed).noise, config.grid.N)
        table = wong_zakai_rates(noise, levels, config.schedule.varsigma0)
        rows.extend(table)
        varsigmas = [r.varsigma for r in table]
        flow_slopes.append(fitted_slope(varsigmas, [r.flow_dist for r in table]))
        inverse_slopes.append(fitted_slope(varsigmas, [r.inv_flow_dist for r in table]))
        slopes[f"flow_slope_seed{seed}"] = flow_slopes[-1]
        slopes[f"path_slope_seed{seed}"] = fitted_slope(varsigmas, [r.path_dist for r in table])
    slopes["median_flow_slope"] = float(np.nanmedian(flow_slopes)) if not np.isnan(flow_slopes).all() else float("nan")
    slopes["median_inv_flow_slope"] = (float(np.nanmedian(inverse_slopes))
                                       if not np.isnan(inverse_slopes).all() else float("nan"))
    if args.kappa is not None:
        slopes["K0_estimate"] = estimate_K0(config.noise, config.grid.N, args.kappa, n_seeds)
    export_service.write_wong_zakai(rows, slopes, _out_dir(args, "wongzakai"))
    median = slopes["median_flow_slope"]
    if np.isnan(median):
        log("⚠️ [FLOW] flow distances vanish; no slope to compare", "WARNING")
        return 0
    if median < target - 0.1:
        raise VerificationFailure(f"median flow-distance slope {median:.3f} below α−β−0.1 = {target - 0.1:.3f}")
    log(f"✅ [FLOW] median flow-distance slope {median:.3f} ≥ α−β−0.1 = {target - 0.1:.3f}")
    return 0


def cmd_geometry(args) -> int:
    config = _config(args)
    system = construct_beltrami_system(config.schedule.min_norm_sq)
    path = export_service.write_json(system.manifest(), _out_dir(args, "geometry") / "beltrami_system.json")
    log(f"🔷 [GEOMETRY] |k|²={system.lambda0_sq}, r0={system.r0:.6f}, {len(system.families)} families → {path}")
    return 0


def cmd_export(args) -> int:
    what = list(EXPORTS) if not args.what else [item for chunk in args.what for item in chunk.split(",")]
    unknown = [item for item in what if item not in EXPORTS]
    if unknown:
        raise ManifestError(f"Unknown export(s) {', '.join(unknown)} (known: {', '.join(EXPORTS)})")
    export_service.export(args.run_dir, what, args.out)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    volume = common.add_mutually_exclusive_group()
    volume.add_argument("--verbose", action="store_true", help="Log DEBUG lines")
    volume.add_argument("--quiet", action="store_true", help="Log warnings and errors only")
    common.add_argument("--out", type=str, default=None, help=f"Output directory (default under {SECI_OUTPUT_DIR})")

    configured = argparse.ArgumentParser(add_help=False)
    configured.add_argument("--config", type=str, default=None, help="TOML experiment file")
    configured.add_argument("--seed", type=int, default=None, help="Override [noise].seed")

    parser = argparse.ArgumentParser(prog="seci", description="Stochastic Euler convex integration experiments")
    verbs = parser.add_subparsers(dest="verb", required=True, metavar="{" + ",".join(VERBS) + "}")

    run = verbs.add_parser("run", parents=[common, configured], help="Run the iteration from the zero state")
    run.set_defaults(config=DEFAULT_CONFIG)
    run.add_argument("--n-max", type=int, default=None, help="Override [run].n_max")
    run.add_argument("--snapshot-every", type=int, default=None, help="Store (v, q, R̊) every k-th frame")
    run.add_argument("--seeds", type=int, default=None,
                     help="Run this many consecutive seeds from [noise].seed, one directory each")
    run.set_defaults(handler=cmd_run)

    verify = verbs.add_parser("verify", parents=[common, configured], help="Run invariant suites")
    verify.add_argument("--suite", default="all", choices=["all", *VerificationService.SUITES])
    verify.set_defaults(handler=cmd_verify)

    wongzakai = verbs.add_parser("wongzakai", parents=[common, configured], help="Wong–Zakai rate table")
    wongzakai.set_defaults(config=DEFAULT_CONFIG)
    wongzakai.add_argument("--seeds", type=int, default=None, help="Number of seeds (default [run].n_seeds)")
    wongzakai.add_argument("--kappa", type=float, default=None,
                           help="Also report the smallest K0 with empirical P(t1 ≥ T) ≥ kappa")
    wongzakai.set_defaults(handler=cmd_wongzakai)

    geometry = verbs.add_parser("geometry", parents=[common, configured], help="Write the Beltrami system manifest")
    geometry.set_defaults(handler=cmd_geometry)

    export = verbs.add_parser("export", parents=[common], help="CSV and SVG from an existing run")
    export.add_argument("run_dir", type=str, help="Directory holding manifest.json")
    export.add_argument("--what", action="append", default=None, help=f"Any of {', '.join(EXPORTS)} (repeatable)")
    export.set_defaults(handler=cmd_export)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        set_log_level("DEBUG")
    elif args.quiet:
        set_log_level("WARNING")
    try:
        return args.handler(args)
    except VerificationFailure as exc:
        log(f"❌ [CLI] {exc.error_code}: {exc.message}", "ERROR")
        return 1
    except (ConfigError, ManifestError) as exc:
        log(f"❌ [CLI] {exc.error_code}: {exc.message}", "ERROR")
        return 2
    except ConvexIntegrationError as exc:
        log(f"❌ [CLI] {exc.error_code}: {exc.message}", "ERROR")
        return 3


if __name__ == "__main__":
    sys.exit(main())
