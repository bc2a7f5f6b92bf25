"""File codecs: scenario configs, measurement records (text and binary),
manifests, fitted-map files, and campaign reports.

All text formats are JSON or CSV with floats written in shortest
round-trip form (exact float64 recovery); the binary measurement layout is
little-endian float64 throughout.  Every writer goes through an atomic
write-temp-then-rename.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .channel import CFRSweep, EnvironmentSpec, FrequencyGrid
from .errors import ConfigurationError, FormatError
from .evaluate import METHODS, RECORD_DTYPE, EvalConfig, EvalReport
from .gpmap import GPHyperparameters, QuantileDataset
from .scenario import GridSpec, LinkBudget, Location, Scenario

_BINARY_MAGIC = b"CFR1"


# ---------------------------------------------------------------------------
# helpers


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def atomic_write_text(path: Path, payload: str) -> None:
    atomic_write_bytes(path, payload.encode("utf-8"))


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigurationError(f"{context}: missing field '{key}'")
    return mapping[key]


# ---------------------------------------------------------------------------
# scenario config


def scenario_to_dict(
    scenario: Scenario, sweep: FrequencyGrid, env: EnvironmentSpec
) -> dict:
    return {
        "format": "cdimap-scenario",
        "version": 1,
        "seed": scenario.seed,
        "grid": {
            "origin": [scenario.grid.origin.x, scenario.grid.origin.y, scenario.grid.origin.z],
            "rows": scenario.grid.rows,
            "cols": scenario.grid.cols,
            "side": scenario.grid.side,
        },
        "count": scenario.count,
        "bs": [scenario.bs.x, scenario.bs.y, scenario.bs.z],
        "link_budget": {"gamma_tx": scenario.link_budget.gamma_tx},
        "sweep": {"f_min": sweep.f_min, "f_max": sweep.f_max, "n_points": sweep.n_points},
        "environment": {
            "n_scatterers": env.n_scatterers,
            "los_fraction_mean": env.los_fraction_mean,
            "los_fraction_std": env.los_fraction_std,
            "shadowing_std_db": env.shadowing_std_db,
            "corr_length_m": env.corr_length_m,
            "clutter_std_db": env.clutter_std_db,
            "clutter_corr_length_m": env.clutter_corr_length_m,
            "delay_spread_range": list(env.delay_spread_range),
            "ref_frequency_hz": env.ref_frequency_hz,
            "los_fraction_max": env.los_fraction_max,
        },
    }


def scenario_from_dict(doc: dict) -> tuple[Scenario, FrequencyGrid, EnvironmentSpec]:
    ctx = "scenario config"
    if doc.get("format") != "cdimap-scenario":
        raise ConfigurationError(f"{ctx}: not a scenario config (format={doc.get('format')!r})")
    if doc.get("version") != 1:
        raise ConfigurationError(f"{ctx}: unsupported version {doc.get('version')!r}")
    grid_doc = _require(doc, "grid", ctx)
    origin = _require(grid_doc, "origin", ctx + ".grid")
    grid = GridSpec(
        origin=Location(id=-1, x=origin[0], y=origin[1], z=origin[2]),
        rows=int(_require(grid_doc, "rows", ctx + ".grid")),
        cols=int(_require(grid_doc, "cols", ctx + ".grid")),
        side=float(_require(grid_doc, "side", ctx + ".grid")),
    )
    bs_doc = _require(doc, "bs", ctx)
    bs = Location(id=-2, x=bs_doc[0], y=bs_doc[1], z=bs_doc[2])
    budget_doc = _require(doc, "link_budget", ctx)
    if "gamma_tx" in budget_doc:
        budget = LinkBudget(gamma_tx=float(budget_doc["gamma_tx"]))
    else:
        budget = LinkBudget.from_power(
            p_tx_dbm=float(_require(budget_doc, "p_tx_dbm", ctx + ".link_budget")),
            bandwidth_hz=float(_require(budget_doc, "bandwidth_hz", ctx + ".link_budget")),
            n0_w_per_hz=float(_require(budget_doc, "n0_w_per_hz", ctx + ".link_budget")),
        )
    scenario = Scenario(
        grid=grid,
        bs=bs,
        link_budget=budget,
        seed=int(doc.get("seed", 0)),
        count=(int(doc["count"]) if doc.get("count") is not None else None),
    )
    sweep_doc = _require(doc, "sweep", ctx)
    sweep = FrequencyGrid(
        f_min=float(_require(sweep_doc, "f_min", ctx + ".sweep")),
        f_max=float(_require(sweep_doc, "f_max", ctx + ".sweep")),
        n_points=int(_require(sweep_doc, "n_points", ctx + ".sweep")),
    )
    env_doc = _require(doc, "environment", ctx)
    env = EnvironmentSpec(
        n_scatterers=int(_require(env_doc, "n_scatterers", ctx + ".environment")),
        los_fraction_mean=float(_require(env_doc, "los_fraction_mean", ctx + ".environment")),
        los_fraction_std=float(_require(env_doc, "los_fraction_std", ctx + ".environment")),
        shadowing_std_db=float(_require(env_doc, "shadowing_std_db", ctx + ".environment")),
        corr_length_m=float(_require(env_doc, "corr_length_m", ctx + ".environment")),
        clutter_std_db=float(env_doc.get("clutter_std_db", 2.0)),
        clutter_corr_length_m=float(env_doc.get("clutter_corr_length_m", 2.0)),
        delay_spread_range=tuple(_require(env_doc, "delay_spread_range", ctx + ".environment")),
        ref_frequency_hz=float(env_doc.get("ref_frequency_hz", 6e9)),
        los_fraction_max=float(env_doc.get("los_fraction_max", 0.95)),
    )
    return scenario, sweep, env


def load_scenario_config(path: Path) -> tuple[Scenario, FrequencyGrid, EnvironmentSpec]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}") from err
    return scenario_from_dict(doc)


def save_scenario_config(
    path: Path, scenario: Scenario, sweep: FrequencyGrid, env: EnvironmentSpec
) -> None:
    atomic_write_text(path, json.dumps(scenario_to_dict(scenario, sweep, env), indent=2) + "\n")


# ---------------------------------------------------------------------------
# measurement records


def measurement_to_csv(loc: Location, sweep: CFRSweep) -> str:
    grid = sweep.grid
    lines = [
        "# format: cdimap-measurement-csv v1",
        f"# id: {loc.id}",
        f"# x: {loc.x!r}",
        f"# y: {loc.y!r}",
        f"# z: {loc.z!r}",
        f"# f_min: {grid.f_min!r}",
        f"# f_max: {grid.f_max!r}",
        f"# n_points: {grid.n_points}",
        "real,imag",
    ]
    lines.extend(f"{v.real!r},{v.imag!r}" for v in sweep.values)
    return "\n".join(lines) + "\n"


def measurement_from_csv(text: str, source: str = "<csv>") -> tuple[Location, CFRSweep]:
    header: dict[str, str] = {}
    rows: list[complex] = []
    saw_columns = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if ":" in body:
                key, _, value = body.partition(":")
                header[key.strip()] = value.strip()
            continue
        if not saw_columns:
            if line != "real,imag":
                raise FormatError(f"{source}:{lineno}: expected 'real,imag' column header")
            saw_columns = True
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"{source}:{lineno}: expected two comma-separated values")
        try:
            rows.append(complex(float(parts[0]), float(parts[1])))
        except ValueError as err:
            raise FormatError(f"{source}:{lineno}: {err}") from err
    for key in ("id", "x", "y", "z", "f_min", "f_max", "n_points"):
        if key not in header:
            raise FormatError(f"{source}: missing header field '{key}'")
    if header.get("format", "cdimap-measurement-csv v1") != "cdimap-measurement-csv v1":
        raise FormatError(f"{source}: unsupported format '{header['format']}'")
    n_points = int(header["n_points"])
    if len(rows) != n_points:
        raise FormatError(f"{source}: header says {n_points} points, found {len(rows)}")
    loc = Location(
        id=int(header["id"]), x=float(header["x"]), y=float(header["y"]), z=float(header["z"])
    )
    grid = FrequencyGrid(
        f_min=float(header["f_min"]), f_max=float(header["f_max"]), n_points=n_points
    )
    return loc, CFRSweep(grid=grid, values=np.array(rows, dtype=complex))


def measurement_to_binary(loc: Location, sweep: CFRSweep) -> bytes:
    grid = sweep.grid
    head = struct.pack(
        "<4sIq3d2dQ",
        _BINARY_MAGIC,
        1,
        loc.id,
        loc.x,
        loc.y,
        loc.z,
        grid.f_min,
        grid.f_max,
        grid.n_points,
    )
    interleaved = np.empty(2 * grid.n_points, dtype="<f8")
    interleaved[0::2] = sweep.values.real
    interleaved[1::2] = sweep.values.imag
    return head + interleaved.tobytes()


def measurement_from_binary(payload: bytes, source: str = "<binary>") -> tuple[Location, CFRSweep]:
    head_size = struct.calcsize("<4sIq3d2dQ")
    if len(payload) < head_size:
        raise FormatError(f"{source}: truncated header")
    magic, version, loc_id, x, y, z, f_min, f_max, n_points = struct.unpack(
        "<4sIq3d2dQ", payload[:head_size]
    )
    if magic != _BINARY_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != 1:
        raise FormatError(f"{source}: unsupported version {version}")
    expected = head_size + 16 * n_points
    if len(payload) != expected:
        raise FormatError(f"{source}: expected {expected} bytes, got {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f8", offset=head_size)
    values = flat[0::2] + 1j * flat[1::2]
    loc = Location(id=int(loc_id), x=x, y=y, z=z)
    grid = FrequencyGrid(f_min=f_min, f_max=f_max, n_points=int(n_points))
    return loc, CFRSweep(grid=grid, values=values)


def write_measurement_dir(
    out_dir: Path,
    locations: list[Location],
    sweeps: dict[int, CFRSweep],
    mode: str = "csv",
    seed: int | None = None,
    config_sha256: str | None = None,
) -> Path:
    """Write one record file per location plus a manifest; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for loc in sorted(locations, key=lambda l: l.id):
        sweep = sweeps[loc.id]
        if mode == "csv":
            name = f"loc_{loc.id:05d}.csv"
            atomic_write_text(out_dir / name, measurement_to_csv(loc, sweep))
        elif mode == "binary":
            name = f"loc_{loc.id:05d}.cfr"
            atomic_write_bytes(out_dir / name, measurement_to_binary(loc, sweep))
        else:
            raise ConfigurationError(f"unknown measurement mode '{mode}'")
        entries.append({"id": loc.id, "file": name, "sha256": sha256_of(out_dir / name)})
    manifest = {
        "format": "cdimap-measurements",
        "version": 1,
        "tool_version": __version__,
        "mode": mode,
        "seed": seed,
        "config_sha256": config_sha256,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "records": entries,
    }
    path = out_dir / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2) + "\n")
    return path


def load_measurement_dir(path: Path) -> tuple[list[Location], dict[int, CFRSweep]]:
    """Load every record in a measurement directory (manifest-listed or globbed)."""
    path = Path(path)
    manifest = path / "manifest.json"
    if manifest.exists():
        doc = json.loads(manifest.read_text())
        files = [path / entry["file"] for entry in doc.get("records", [])]
    else:
        files = sorted(path.glob("loc_*.csv")) + sorted(path.glob("loc_*.cfr"))
    if not files:
        raise FormatError(f"{path}: no measurement records found")
    locations: list[Location] = []
    sweeps: dict[int, CFRSweep] = {}
    for file in files:
        if not file.exists():
            raise FormatError(f"{file}: listed in manifest but missing")
        if file.suffix == ".csv":
            loc, sweep = measurement_from_csv(file.read_text(), source=str(file))
        else:
            loc, sweep = measurement_from_binary(file.read_bytes(), source=str(file))
        if loc.id in sweeps:
            raise FormatError(f"{file}: duplicate location id {loc.id}")
        locations.append(loc)
        sweeps[loc.id] = sweep
    return locations, sweeps


# ---------------------------------------------------------------------------
# fitted map


def map_to_dict(data: QuantileDataset, hp: GPHyperparameters) -> dict:
    return {
        "format": "cdimap-map",
        "version": 1,
        "epsilon": data.epsilon,
        "n_samples": data.n_samples,
        "noise_floor": data.noise_floor,
        "hyperparameters": {
            "mean_const": hp.mean_const,
            "signal_variance": hp.signal_variance,
            "length_scale": hp.length_scale,
            "noise_variance": hp.noise_variance,
        },
        "entries": [
            {"id": loc.id, "x": loc.x, "y": loc.y, "z": loc.z, "q_hat": q}
            for loc, q in sorted(data.entries, key=lambda e: e[0].id)
        ],
    }


def map_from_dict(doc: dict) -> tuple[QuantileDataset, GPHyperparameters]:
    if doc.get("format") != "cdimap-map":
        raise FormatError(f"not a fitted-map file (format={doc.get('format')!r})")
    if doc.get("version") != 1:
        raise FormatError(f"unsupported map version {doc.get('version')!r}")
    hp_doc = doc["hyperparameters"]
    hp = GPHyperparameters(
        mean_const=float(hp_doc["mean_const"]),
        signal_variance=float(hp_doc["signal_variance"]),
        length_scale=float(hp_doc["length_scale"]),
        noise_variance=float(hp_doc["noise_variance"]),
    )
    entries = tuple(
        (Location(id=int(e["id"]), x=e["x"], y=e["y"], z=e["z"]), float(e["q_hat"]))
        for e in doc["entries"]
    )
    data = QuantileDataset(
        entries=entries,
        epsilon=float(doc["epsilon"]),
        n_samples=int(doc["n_samples"]),
        noise_floor=float(doc.get("noise_floor", 0.0)),
    )
    return data, hp


def save_map(path: Path, data: QuantileDataset, hp: GPHyperparameters) -> None:
    atomic_write_text(path, json.dumps(map_to_dict(data, hp), indent=2) + "\n")


def load_map(path: Path) -> tuple[QuantileDataset, GPHyperparameters]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid JSON: {err.msg}") from err
    return map_from_dict(doc)


# ---------------------------------------------------------------------------
# campaign report


def _key(D: int, method: str) -> str:
    return f"D{D}:{method}"


def report_to_dict(report: EvalReport, locations: list[Location] | None = None) -> dict:
    cfg = report.config
    doc: dict = {
        "format": "cdimap-eval-report",
        "version": 1,
        "tool_version": __version__,
        "config": {
            "epsilon": cfg.epsilon,
            "delta": cfg.delta,
            "D_list": list(cfg.D_list),
            "L": cfg.L,
            "M": cfg.M,
            "gamma_tx": cfg.gamma_tx,
            "seed": cfg.seed,
        },
        "n_locations": report.n_locations,
        "failed_reps": {str(d): reps for d, reps in sorted(report.failed_reps.items())},
        "outage_grid": report.outage_grid.tolist(),
        "tput_grid": report.tput_grid.tolist(),
        "summaries": {},
    }
    if locations is not None:
        doc["locations"] = [
            {"id": l.id, "x": l.x, "y": l.y, "z": l.z} for l in sorted(locations, key=lambda l: l.id)
        ]
    for (D, method), arr in sorted(report.records.items()):
        if arr.size == 0:
            continue
        key = _key(D, method)
        doc["summaries"][key] = {
            "D": D,
            "method": method,
            "n_records": int(arr.size),
            "meta_probability": report.meta[(D, method)],
            "mean_normalized_throughput": report.mean_tput[(D, method)],
            "outage_cdf": report.outage_curves[(D, method)].tolist(),
            "tput_cdf": report.tput_curves[(D, method)].tolist(),
            "conditional_meta": {
                str(loc): [prob, count]
                for loc, (prob, count) in sorted(report.conditional_meta[(D, method)].items())
            },
        }
    return doc


def report_json_bytes(report: EvalReport, locations: list[Location] | None = None) -> bytes:
    return (json.dumps(report_to_dict(report, locations), indent=2, sort_keys=True) + "\n").encode()


def records_csv_bytes(report: EvalReport) -> bytes:
    lines = ["D,method,rep,loc,rate,p_out,r_eps,normalized_throughput"]
    for (D, method) in sorted(report.records):
        arr = report.records[(D, method)]
        for row in arr:
            lines.append(
                f"{D},{method},{row['rep']},{row['loc']},{row['rate']!r},"
                f"{row['p_out']!r},{row['r_eps']!r},{row['tput']!r}"
            )
    return ("\n".join(lines) + "\n").encode()


# ---------------------------------------------------------------------------
# run manifest


def write_run_manifest(
    path: Path,
    command: str,
    seed: int | None,
    config_sha256: str | None,
    inputs: dict[str, str],
    outputs: dict[str, str],
) -> None:
    doc = {
        "format": "cdimap-run-manifest",
        "version": 1,
        "tool_version": __version__,
        "command": command,
        "seed": seed,
        "config_sha256": config_sha256,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "inputs": inputs,
        "outputs": outputs,
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")
