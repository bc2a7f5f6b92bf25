"""Command-line surface: synth, validate, fit, evaluate, report.

Every command exits 0 only when no errors were recorded; outputs are refused
when they already exist (pass --force to overwrite).  All randomness is
seeded: --seed overrides the scenario seed, and the seed in use is written to
the run manifest next to the outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import secrets
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .channel import (
    cir_from_cfr,
    coherence_bandwidth,
    fading_samples_from_cfr,
    fit_pathloss_exponent,
    free_space_loss,
    synth_world,
    SPEED_OF_LIGHT,
)
from .errors import CdiMapError, ConfigurationError
from .evaluate import EvalConfig, run_campaign, world_from_sweeps
from .formats import (
    atomic_write_bytes,
    atomic_write_text,
    load_measurement_dir,
    load_scenario_config,
    records_csv_bytes,
    report_json_bytes,
    save_map,
    sha256_of,
    write_measurement_dir,
    write_run_manifest,
)
from .gpmap import fit_hyperparameters, quantile_dataset_from_samples
from .scenario import SplitSpec, distance, split_train_test
from .stats import quantile_order


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _refuse_existing(paths: list[Path], force: bool) -> None:
    clashes = [p for p in paths if p.exists()]
    if clashes and not force:
        raise ConfigurationError(
            f"refusing to overwrite existing output: {clashes[0]} (use --force)"
        )


def _resolve_seed(arg_seed: int | None, fallback: int | None = None) -> int:
    if arg_seed is not None:
        return arg_seed
    if fallback is not None:
        return fallback
    return secrets.randbits(32)


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args: argparse.Namespace) -> int:
    scenario, sweep_grid, env = load_scenario_config(args.config)
    seed = _resolve_seed(args.seed, scenario.seed)
    out_dir = Path(args.out)
    _refuse_existing([out_dir / "manifest.json"], args.force)
    locations = scenario.locations()
    sweeps = synth_world(env, locations, scenario.bs, sweep_grid, seed=seed)
    config_digest = sha256_of(Path(args.config))
    manifest = write_measurement_dir(
        out_dir, locations, sweeps, mode=args.mode, seed=seed, config_sha256=config_digest
    )
    write_run_manifest(
        out_dir / "run_manifest.json",
        command="synth",
        seed=seed,
        config_sha256=config_digest,
        inputs={str(args.config): config_digest},
        outputs={"manifest.json": sha256_of(manifest)},
    )
    print(f"synth: wrote {len(locations)} records ({args.mode}) to {out_dir} [seed {seed}]")
    return 0


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args: argparse.Namespace) -> int:
    locations, sweeps = load_measurement_dir(args.measurements)
    bs = None
    if args.config:
        scenario, _, _ = load_scenario_config(args.config)
        bs = scenario.bs

    rows = []
    failures = []
    for loc in sorted(locations, key=lambda l: l.id):
        sweep = sweeps[loc.id]
        try:
            cir = cir_from_cfr(sweep)
            peak_idx = int(np.argmax(np.abs(cir.taps)))
            peak_delay = float(cir.delays[peak_idx])
            implied = peak_delay * SPEED_OF_LIGHT
            f_center = 0.5 * (sweep.grid.f_min + sweep.grid.f_max)
            fsl = free_space_loss(implied, f_center) if implied > 0 else float("nan")
            deviation = float(cir.powers_db[peak_idx]) - fsl
            fit = fit_pathloss_exponent(sweep)
            bc = coherence_bandwidth(cir, args.threshold_db)
            geo = distance(loc, bs) if bs is not None else float("nan")
            rows.append((loc, peak_delay, implied, geo, deviation, fit.eta, fit.residual, bc))
        except CdiMapError as err:
            failures.append((loc.id, str(err)))

    header = (
        "id,x,y,z,peak_delay_ns,implied_distance_m,geometric_distance_m,"
        "free_space_deviation_db,eta,eta_residual,coherence_bandwidth_hz"
    )
    lines = [header]
    for loc, delay, implied, geo, dev, eta, resid, bc in rows:
        lines.append(
            f"{loc.id},{loc.x!r},{loc.y!r},{loc.z!r},{delay * 1e9!r},{implied!r},"
            f"{geo!r},{dev!r},{eta!r},{resid!r},{bc!r}"
        )
    table = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(Path(args.out), table)

    if rows:
        etas = np.array([r[5] for r in rows])
        bcs = np.array([r[7] for r in rows if np.isfinite(r[7])])
        print(f"validate: {len(rows)} records ok, {len(failures)} failed")
        print(f"  eta median {np.median(etas):+.3f}  range [{etas.min():+.3f}, {etas.max():+.3f}]")
        if bcs.size:
            print(f"  coherence bandwidth [{bcs.min() / 1e6:.2f}, {bcs.max() / 1e6:.2f}] MHz")
    for loc_id, msg in failures:
        print(f"  location {loc_id}: {msg}", file=sys.stderr)
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args: argparse.Namespace) -> int:
    locations, sweeps = load_measurement_dir(args.measurements)
    seed = _resolve_seed(args.seed, 0)
    locations = sorted(locations, key=lambda l: l.id)
    if args.train_count is not None:
        train, _ = split_train_test(locations, SplitSpec(D=args.train_count, seed=seed))
    else:
        train = locations
    sample_sets = [fading_samples_from_cfr(sweeps[l.id], location_id=l.id) for l in train]
    quantile_order(sample_sets[0].n, args.epsilon)  # fail early with a clear message
    data = quantile_dataset_from_samples(sample_sets, train, epsilon=args.epsilon)
    hp = fit_hyperparameters(data, seed=seed)
    out = Path(args.out)
    _refuse_existing([out], args.force)
    save_map(out, data, hp)
    print(
        f"fit: D={len(train)} eps={args.epsilon} -> {out} "
        f"(mean {hp.mean_const:.3f}, sv {hp.signal_variance:.4g}, "
        f"ls {hp.length_scale:.4g} m, nv {hp.noise_variance:.4g}) [seed {seed}]"
    )
    return 0


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args: argparse.Namespace) -> int:
    locations, sweeps = load_measurement_dir(args.measurements)
    gamma_tx = args.gamma_tx
    if gamma_tx is None:
        if not args.config:
            raise ConfigurationError("provide --gamma-tx or --config with a link budget")
        scenario, _, _ = load_scenario_config(args.config)
        gamma_tx = scenario.link_budget.gamma_tx
    seed = _resolve_seed(args.seed, 0)
    out_dir = Path(args.out)
    report_path = out_dir / "report.json"
    _refuse_existing([report_path], args.force)

    world = world_from_sweeps(sorted(locations, key=lambda l: l.id), sweeps)
    cfg = EvalConfig(
        gamma_tx=gamma_tx,
        epsilon=args.epsilon,
        delta=args.delta,
        D_list=tuple(args.train_counts),
        L=args.reps,
        M=args.baseline_samples,
        seed=seed,
        n_workers=args.workers,
    )
    report = run_campaign(world, cfg)

    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(report_path, report_json_bytes(report, world.locations))
    outputs = {"report.json": sha256_of(report_path)}
    if args.records:
        records_path = out_dir / "records.csv"
        atomic_write_bytes(records_path, records_csv_bytes(report))
        outputs["records.csv"] = sha256_of(records_path)
    write_run_manifest(
        out_dir / "run_manifest.json",
        command="evaluate",
        seed=seed,
        config_sha256=None,
        inputs={str(args.measurements): "dir"},
        outputs=outputs,
    )
    for (D, method) in sorted(report.meta):
        print(
            f"evaluate: D={D:4d} {method:18s} meta={report.meta[(D, method)]:.4f} "
            f"mean_tput={report.mean_tput[(D, method)]:.4f}"
        )
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(args: argparse.Namespace) -> int:
    report_path = Path(args.report)
    if report_path.is_dir():
        report_path = report_path / "report.json"
    doc = json.loads(report_path.read_text())
    if doc.get("format") != "cdimap-eval-report":
        return _fail(f"{report_path}: not an evaluation report")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    loc_coords = {int(l["id"]): l for l in doc.get("locations", [])}
    outage_grid = doc["outage_grid"]
    tput_grid = doc["tput_grid"]
    summary_lines = [f"evaluation report (tool {doc.get('tool_version', '?')})"]
    cfg = doc["config"]
    summary_lines.append(
        f"epsilon={cfg['epsilon']} delta={cfg['delta']} L={cfg['L']} M={cfg['M']} "
        f"gamma_tx={cfg['gamma_tx']} seed={cfg['seed']}"
    )
    outputs: dict[str, str] = {}
    for key, summary in sorted(doc["summaries"].items()):
        D, method = summary["D"], summary["method"]
        summary_lines.append(
            f"D={D:4d} {method:18s} n={summary['n_records']:8d} "
            f"meta={summary['meta_probability']:.4f} "
            f"mean_tput={summary['mean_normalized_throughput']:.4f}"
        )
        base = f"D{D}_{method}"
        cdf_path = out_dir / f"outage_cdf_{base}.csv"
        lines = ["p_out,cdf"] + [
            f"{p!r},{v!r}" for p, v in zip(outage_grid, summary["outage_cdf"])
        ]
        atomic_write_text(cdf_path, "\n".join(lines) + "\n")
        outputs[cdf_path.name] = sha256_of(cdf_path)

        tput_path = out_dir / f"tput_cdf_{base}.csv"
        lines = ["normalized_throughput,cdf"] + [
            f"{t!r},{v!r}" for t, v in zip(tput_grid, summary["tput_cdf"])
        ]
        atomic_write_text(tput_path, "\n".join(lines) + "\n")
        outputs[tput_path.name] = sha256_of(tput_path)

        meta_path = out_dir / f"meta_by_location_{base}.csv"
        lines = ["loc,x,y,meta_probability,records"]
        for loc_id, (prob, count) in sorted(
            ((int(k), v) for k, v in summary["conditional_meta"].items())
        ):
            coord = loc_coords.get(loc_id, {})
            lines.append(
                f"{loc_id},{coord.get('x', float('nan'))!r},"
                f"{coord.get('y', float('nan'))!r},{prob!r},{count}"
            )
        atomic_write_text(meta_path, "\n".join(lines) + "\n")
        outputs[meta_path.name] = sha256_of(meta_path)

    summary_text = "\n".join(summary_lines) + "\n"
    atomic_write_text(out_dir / "summary.txt", summary_text)
    print(summary_text, end="")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdimap",
        description="CDI-map toolkit: synthesize fading worlds, fit quantile maps, "
        "and certify rate-selection reliability",
    )
    parser.add_argument("--version", action="version", version=f"cdimap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize measurement records from a scenario config")
    p.add_argument("--config", required=True, help="scenario config (JSON)")
    p.add_argument("--out", required=True, help="output measurement directory")
    p.add_argument("--mode", choices=("csv", "binary"), default="csv")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="compute per-location validation metrics")
    p.add_argument("measurements", help="measurement directory")
    p.add_argument("--threshold-db", type=float, default=-110.0)
    p.add_argument("--config", default=None, help="scenario config for geometric distances")
    p.add_argument("--out", default=None, help="write the per-location table (CSV)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("fit", help="fit a quantile map from measurements")
    p.add_argument("measurements")
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--train-count", type=int, default=None, help="D locations (default: all)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="fitted-map file (JSON)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="run the Monte Carlo rate-selection campaign")
    p.add_argument("measurements")
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--train-counts", type=int, nargs="+", default=[10, 25, 50, 100])
    p.add_argument("--reps", type=int, default=2000, help="repetitions L (10000 = full protocol)")
    p.add_argument("--baseline-samples", type=int, default=10, help="M draws for the baseline")
    p.add_argument("--gamma-tx", type=float, default=None)
    p.add_argument("--config", default=None, help="scenario config supplying the link budget")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--records", action="store_true", help="also write the flat record CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="emit summary text and plot-ready CSVs")
    p.add_argument("report", help="report.json or its directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CdiMapError as err:
        return _fail(str(err))
    except FileNotFoundError as err:
        return _fail(str(err))


if __name__ == "__main__":
    sys.exit(main())
