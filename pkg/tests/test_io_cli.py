import json
from pathlib import Path

import numpy as np
import pytest

from cdimap.channel import CFRSweep, EnvironmentSpec, FrequencyGrid
from cdimap.cli import main
from cdimap.errors import ConfigurationError, FormatError
from cdimap.formats import (
    load_map,
    load_measurement_dir,
    load_scenario_config,
    measurement_from_binary,
    measurement_from_csv,
    measurement_to_binary,
    measurement_to_csv,
    save_scenario_config,
    scenario_from_dict,
    sha256_of,
    write_measurement_dir,
)
from cdimap.rng import substream
from cdimap.scenario import GridSpec, LinkBudget, Location, Scenario


def random_sweep(n=64, seed=0):
    rng = substream(seed, "io")
    grid = FrequencyGrid(2e9, 10e9, n)
    values = rng.standard_normal(n) * 1e-4 + 1j * rng.standard_normal(n) * 1e-4
    return CFRSweep(grid=grid, values=values)


def small_scenario(rows=3, cols=3, count=None, seed=5):
    return Scenario(
        grid=GridSpec(origin=Location(id=-1, x=0.0, y=0.0, z=1.5), rows=rows, cols=cols, side=5.0),
        bs=Location(id=-2, x=-10.0, y=-8.0, z=1.5),
        link_budget=LinkBudget(gamma_tx=2.5e14),
        seed=seed,
        count=count,
    )


def write_config(path, scenario=None, n_points=101, env=None):
    save_scenario_config(
        path,
        scenario or small_scenario(),
        FrequencyGrid(2e9, 10e9, n_points),
        env or EnvironmentSpec(),
    )
    return path


class TestMeasurementCodecs:
    def test_csv_round_trip_lossless(self):
        loc = Location(id=7, x=1.25, y=-3.5, z=1.5)
        sweep = random_sweep()
        loc2, sweep2 = measurement_from_csv(measurement_to_csv(loc, sweep))
        assert (loc2.id, loc2.x, loc2.y, loc2.z) == (loc.id, loc.x, loc.y, loc.z)
        assert np.array_equal(sweep2.values, sweep.values)
        assert sweep2.grid == sweep.grid

    def test_binary_round_trip_lossless(self):
        loc = Location(id=3, x=0.1, y=0.2, z=0.3)
        sweep = random_sweep(seed=1)
        loc2, sweep2 = measurement_from_binary(measurement_to_binary(loc, sweep))
        assert np.array_equal(sweep2.values, sweep.values)
        assert (loc2.x, loc2.y, loc2.z) == (loc.x, loc.y, loc.z)

    def test_csv_rejects_point_count_mismatch(self):
        loc = Location(id=7, x=0.0, y=0.0, z=0.0)
        text = measurement_to_csv(loc, random_sweep())
        truncated = "\n".join(text.splitlines()[:-3]) + "\n"
        with pytest.raises(FormatError, match="points"):
            measurement_from_csv(truncated)

    def test_binary_rejects_bad_magic(self):
        loc = Location(id=7, x=0.0, y=0.0, z=0.0)
        payload = bytearray(measurement_to_binary(loc, random_sweep()))
        payload[:4] = b"XXXX"
        with pytest.raises(FormatError, match="magic"):
            measurement_from_binary(bytes(payload))

    @pytest.mark.parametrize("mode", ["csv", "binary"])
    def test_directory_round_trip_and_digests(self, tmp_path, mode):
        locs = [Location(id=i, x=5.0 * i, y=0.0, z=1.5) for i in range(4)]
        sweeps = {l.id: random_sweep(seed=l.id) for l in locs}
        manifest = write_measurement_dir(tmp_path, locs, sweeps, mode=mode, seed=1)
        doc = json.loads(manifest.read_text())
        for entry in doc["records"]:
            assert sha256_of(tmp_path / entry["file"]) == entry["sha256"]
        locs2, sweeps2 = load_measurement_dir(tmp_path)
        assert {l.id for l in locs2} == {l.id for l in locs}
        for l in locs:
            assert np.array_equal(sweeps2[l.id].values, sweeps[l.id].values)

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(FormatError, match="no measurement records"):
            load_measurement_dir(tmp_path)


class TestScenarioConfig:
    def test_round_trip(self, tmp_path):
        path = write_config(tmp_path / "s.json", small_scenario(count=8))
        scenario, sweep, env = load_scenario_config(path)
        assert len(scenario.locations()) == 8
        assert sweep.n_points == 101
        assert env.n_scatterers == EnvironmentSpec().n_scatterers

    def test_missing_field_named(self, tmp_path):
        path = write_config(tmp_path / "s.json")
        doc = json.loads(path.read_text())
        del doc["grid"]["side"]
        with pytest.raises(ConfigurationError, match="side"):
            scenario_from_dict(doc)

    def test_wrong_format_rejected(self):
        with pytest.raises(ConfigurationError, match="format"):
            scenario_from_dict({"format": "other", "version": 1})


class TestCliSynth:
    def test_record_count_and_points(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "s.json")
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "meas")]) == 0
        locs, sweeps = load_measurement_dir(tmp_path / "meas")
        assert len(locs) == 9
        assert all(s.grid.n_points == 101 for s in sweeps.values())

    def test_rerun_same_seed_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path / "s.json")
        main(["synth", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "7"])
        main(["synth", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "7"])
        files = sorted(p.name for p in (tmp_path / "a").glob("loc_*.csv"))
        assert files
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_missing_field_fails_with_name(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "s.json")
        doc = json.loads(cfg.read_text())
        del doc["sweep"]["n_points"]
        cfg.write_text(json.dumps(doc))
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "meas")]) == 1
        assert "n_points" in capsys.readouterr().err

    def test_refuses_overwrite(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "s.json")
        out = tmp_path / "meas"
        assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 1
        assert "refusing to overwrite" in capsys.readouterr().err


class TestCliValidate:
    def test_los_only_world_implied_distance(self, tmp_path, capsys):
        scenario = small_scenario()
        env = EnvironmentSpec(
            n_scatterers=0,
            los_fraction_mean=1.0,
            los_fraction_std=0.0,
            shadowing_std_db=0.0,
            clutter_std_db=0.0,
            los_fraction_max=1.0,
        )
        cfg = write_config(tmp_path / "s.json", scenario, n_points=2001, env=env)
        main(["synth", "--config", str(cfg), "--out", str(tmp_path / "meas")])
        table = tmp_path / "validate.csv"
        rc = main(
            [
                "validate",
                str(tmp_path / "meas"),
                "--config",
                str(cfg),
                "--out",
                str(table),
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "eta median" in out
        grid = FrequencyGrid(2e9, 10e9, 2001)
        bin_width_m = 299792458.0 / (grid.n_points * grid.spacing)
        rows = table.read_text().splitlines()[1:]
        for row in rows:
            fields = row.split(",")
            implied, geometric = float(fields[5]), float(fields[6])
            assert abs(implied - geometric) <= bin_width_m

    def test_empty_directory_fails(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        assert main(["validate", str(tmp_path / "empty")]) == 1
        assert "no measurement records" in capsys.readouterr().err


class TestCliFit:
    @pytest.fixture()
    def meas_dir(self, tmp_path):
        cfg = write_config(tmp_path / "s.json", small_scenario(4, 4), n_points=201)
        main(["synth", "--config", str(cfg), "--out", str(tmp_path / "meas")])
        return tmp_path / "meas"

    def test_nominal_fit(self, meas_dir, tmp_path):
        out = tmp_path / "map.json"
        rc = main(
            ["fit", str(meas_dir), "--train-count", "10", "--seed", "3", "--out", str(out)]
        )
        assert rc == 0
        data, hp = load_map(out)
        assert data.size == 10
        assert hp.length_scale > 0

    def test_too_few_training_locations(self, meas_dir, tmp_path, capsys):
        rc = main(
            ["fit", str(meas_dir), "--train-count", "2", "--seed", "3",
             "--out", str(tmp_path / "map.json")]
        )
        assert rc == 1
        assert "3 training locations" in capsys.readouterr().err

    def test_refit_deterministic(self, meas_dir, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(["fit", str(meas_dir), "--train-count", "8", "--seed", "5", "--out", str(a)])
        main(["fit", str(meas_dir), "--train-count", "8", "--seed", "5", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()


class TestCliEvaluateAndReport:
    @pytest.fixture()
    def eval_out(self, tmp_path):
        cfg = write_config(tmp_path / "s.json", small_scenario(5, 5), n_points=201)
        main(["synth", "--config", str(cfg), "--out", str(tmp_path / "meas")])
        out = tmp_path / "eval"
        rc = main(
            [
                "evaluate", str(tmp_path / "meas"),
                "--config", str(tmp_path / "s.json"),
                "--train-counts", "5",
                "--reps", "2",
                "--seed", "4",
                "--workers", "1",
                "--records",
                "--out", str(out),
            ]
        )
        assert rc == 0
        return out

    def test_report_json_and_genie_identity(self, eval_out):
        doc = json.loads((eval_out / "report.json").read_text())
        assert doc["format"] == "cdimap-eval-report"
        genie = doc["summaries"]["D5:genie"]
        assert genie["mean_normalized_throughput"] == 1.0
        records = (eval_out / "records.csv").read_text().splitlines()
        header = records[0].split(",")
        tput_col = header.index("normalized_throughput")
        genie_rows = [r for r in records[1:] if r.split(",")[1] == "genie"]
        assert genie_rows
        assert all(float(r.split(",")[tput_col]) == 1.0 for r in genie_rows)

    def test_duplicate_output_refused(self, eval_out, tmp_path, capsys):
        rc = main(
            [
                "evaluate", str(tmp_path / "meas"),
                "--gamma-tx", "2.5e14",
                "--train-counts", "5",
                "--reps", "1",
                "--workers", "1",
                "--out", str(eval_out),
            ]
        )
        assert rc == 1
        assert "refusing to overwrite" in capsys.readouterr().err

    def test_report_outputs(self, eval_out, tmp_path, capsys):
        out = tmp_path / "report"
        assert main(["report", str(eval_out), "--out", str(out)]) == 0
        text = capsys.readouterr().out
        doc = json.loads((eval_out / "report.json").read_text())
        meta = doc["summaries"]["D5:cdi_map"]["meta_probability"]
        assert f"meta={meta:.4f}" in text

        cdf = (out / "outage_cdf_D5_cdi_map.csv").read_text().splitlines()[1:]
        values = [float(r.split(",")[1]) for r in cdf]
        assert values == sorted(values)
        assert values[-1] == 1.0

        meta_map = (out / "meta_by_location_D5_cdi_map.csv").read_text().splitlines()[1:]
        assert len(meta_map) == len(doc["summaries"]["D5:cdi_map"]["conditional_meta"])
        assert (out / "summary.txt").exists()


class TestMapFile:
    def test_map_round_trip_bit_exact_predictions(self, tmp_path):
        from cdimap.formats import save_map
        from cdimap.gpmap import GPHyperparameters, QuantileDataset, predict

        rng = substream(0, "map")
        entries = tuple(
            (Location(id=i, x=float(rng.uniform(0, 50)), y=float(rng.uniform(0, 50)), z=0.0),
             float(rng.normal(-2, 1)))
            for i in range(6)
        )
        data = QuantileDataset(entries=entries, epsilon=0.01, n_samples=8001, noise_floor=0.01)
        hp = GPHyperparameters(
            mean_const=-2.1234567890123456,
            signal_variance=1.9876543210987654,
            length_scale=17.345678901234567,
            noise_variance=0.0123456789012345,
        )
        path = tmp_path / "map.json"
        save_map(path, data, hp)
        data2, hp2 = load_map(path)
        assert hp2 == hp
        x = Location(id=999, x=13.7, y=21.9, z=0.0)
        a, b = predict(data, hp, x), predict(data2, hp2, x)
        assert (a.mu, a.sigma2) == (b.mu, b.sigma2)
