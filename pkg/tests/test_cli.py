import hashlib
import json
import subprocess
import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

from paleorecon.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from paleorecon.config import load_config, parse_config
from paleorecon.errors import ConfigError
from paleorecon.ingest import read_table
from paleorecon.pipeline import run_all, validation_table
from paleorecon.prior import PriorModel
from paleorecon.synth import SynthConfig, generate_world, write_world

FAST = """\
monte_carlo: {samples: 50000, pair_samples: 20000, grid_size: 31, rho_grid_size: 101}
prior: {cv_grid: [[0.01, 0.01, 0.01], [0.01, 10, 10]]}
krige: {grid: {lon: [110, 120, 5], lat: [25, 40, 5]}}
"""


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("world")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert main(["synth", "--out", str(root), "--sites", "40", "--years", "30", "--seed", "3"]) == EXIT_OK
    cfg = root / "config.yaml"
    cfg.write_text(cfg.read_text() + FAST)
    return root


def run(*args):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return main([str(a) for a in args])


@pytest.fixture(scope="module")
def full_run(world):
    assert run("run", "--config", world / "config.yaml") == EXIT_OK
    return world / "out"


class TestSynthCommand:
    def test_writes_inputs_and_config(self, world):
        for name in ("reaches.csv", "lme.csv", "ghcn_monthly.csv", "truth.csv", "config.yaml"):
            assert (world / name).exists()
        cfg = load_config(world / "config.yaml")
        assert cfg.years == (1882, 1911)
        assert [t.name for t in cfg.locations] == ["beijing", "shanghai", "hongkong"]

    def test_rejects_tiny_world(self, tmp_path):
        assert run("synth", "--out", tmp_path, "--years", "3") == EXIT_CONFIG


class TestStages:
    def test_outputs_and_headers(self, full_run):
        expected = {
            "variogram_bins.csv": "bin_lo,bin_hi,lag,gamma,count,initial_model,corrected_implied",
            "kriged_beijing.csv": "year,estimate,mspe,n_sites",
            "calibrated_beijing.csv": "year,x_star,err_var",
            "posterior_beijing.csv": "year,mean,var,k_gain",
            "validation.csv": "location,method,correlation,n_years",
        }
        for name, header in expected.items():
            assert (full_run / name).read_text().splitlines()[0] == header
        for name in ("variogram.svg", "calibration_beijing.svg", "prior_beijing.svg",
                     "posterior_beijing.svg", "validation.svg"):
            assert (full_run / name).read_text().lstrip().startswith("<?xml")

    def test_validation_table_has_three_methods(self, full_run):
        rows = (full_run / "validation.csv").read_text().splitlines()[1:]
        methods = {tuple(r.split(",")[:2]) for r in rows}
        for loc in ("beijing", "shanghai", "hongkong"):
            assert {(loc, m) for m in ("calibrated", "ensemble", "assimilated")} <= methods

    def test_manifests_trace_outputs(self, world, full_run):
        text = (world / "config.yaml").read_text()
        digest = hashlib.sha256(text.encode()).hexdigest()
        manifests = sorted(full_run.glob("manifest_*.json"))
        assert {m.name for m in manifests} >= {"manifest_variogram.json", "manifest_krige_beijing.json",
                                               "manifest_qmap_beijing.json", "manifest_prior_beijing.json",
                                               "manifest_assimilate_beijing.json", "manifest_validate.json"}
        covered = set()
        for m in manifests:
            body = json.loads(m.read_text())
            assert body["config_hash"] == digest and body["seed"] == 3
            for name, sha in body["outputs"].items():
                assert hashlib.sha256((full_run / name).read_bytes()).hexdigest() == sha
                covered.add(name)
        produced = {p.name for p in full_run.iterdir() if not p.name.startswith("manifest_")}
        assert produced <= covered

    def test_rerun_is_byte_identical(self, world, full_run, tmp_path):
        assert run("run", "--config", world / "config.yaml", "--out", tmp_path) == EXIT_OK
        names = sorted(p.name for p in full_run.iterdir())
        assert names == sorted(p.name for p in tmp_path.iterdir())
        for name in names:
            assert (full_run / name).read_bytes() == (tmp_path / name).read_bytes(), name

    def test_krige_grid_for_one_year(self, world, tmp_path):
        cfg = world / "config.yaml"
        assert run("variogram", "--config", cfg, "--out", tmp_path) == EXIT_OK
        assert run("krige", "--config", cfg, "--out", tmp_path, "--year", 1900) == EXIT_OK
        grid = read_table(tmp_path / "kriged_1900.csv", ["lat", "lon", "estimate", "mspe"])
        assert len(grid["lat"]) == 4 * 3
        assert np.all((grid["mspe"] >= 0) & (grid["mspe"] <= 1.5))
        assert run("krige", "--config", cfg, "--out", tmp_path, "--year", 1700) == EXIT_DATA

    def test_single_location_stage(self, world, full_run, tmp_path):
        for name in ("variogram.json", "kriged_shanghai.csv"):
            (tmp_path / name).write_bytes((full_run / name).read_bytes())
        assert run("qmap", "--config", world / "config.yaml", "--out", tmp_path, "--location", "shanghai") == 0
        assert (tmp_path / "calibrated_shanghai.csv").read_bytes() == (full_run / "calibrated_shanghai.csv").read_bytes()
        assert not (tmp_path / "calibrated_beijing.csv").exists()

    def test_empty_observations_return_prior(self, world, full_run, tmp_path):
        (tmp_path / "prior_beijing.json").write_bytes((full_run / "prior_beijing.json").read_bytes())
        (tmp_path / "calibrated_beijing.csv").write_text("year,x_star,err_var\n")
        assert run("assimilate", "--config", world / "config.yaml", "--out", tmp_path,
                   "--location", "beijing") == EXIT_OK
        prior = PriorModel.from_dict(json.loads((tmp_path / "prior_beijing.json").read_text()))
        post = read_table(tmp_path / "posterior_beijing.csv", ["year", "mean", "var", "k_gain"])
        np.testing.assert_array_equal(post["mean"], prior.mu)
        np.testing.assert_allclose(post["var"], prior.marginal_variance(), rtol=1e-15)
        assert np.all(post["k_gain"] == 0)


class TestErrors:
    def test_missing_config_flag(self):
        assert run("variogram") == EXIT_CONFIG

    def test_unreadable_config(self, tmp_path):
        assert run("variogram", "--config", tmp_path / "nope.yaml") == EXIT_CONFIG

    def test_bad_config_contents(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("schema_version: 1\nbogus: 3\n")
        assert run("variogram", "--config", cfg) == EXIT_CONFIG
        assert "bogus" in capsys.readouterr().err
        cfg.write_text("schema_version: 2\n")
        assert run("variogram", "--config", cfg) == EXIT_CONFIG

    def test_missing_input_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("schema_version: 1\npaths: {reaches: missing.csv}\n")
        assert run("variogram", "--config", cfg) == EXIT_CONFIG
        assert "missing.csv" in capsys.readouterr().err

    def test_missing_artifact_names_producer(self, world, tmp_path, capsys):
        assert run("krige", "--config", world / "config.yaml", "--out", tmp_path) == EXIT_DATA
        assert "paleorecon variogram" in capsys.readouterr().err
        assert run("assimilate", "--config", world / "config.yaml", "--out", tmp_path) == EXIT_DATA
        assert "paleorecon prior" in capsys.readouterr().err

    def test_unknown_location(self, world, tmp_path):
        assert run("qmap", "--config", world / "config.yaml", "--out", tmp_path, "--location", "x") == EXIT_CONFIG

    def test_malformed_ensemble_reports_line(self, world, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        (tmp_path / "lme.csv").write_text("series_id,year,temp_c\na,1900,warm\n")
        cfg.write_text("schema_version: 1\npaths: {lme: lme.csv}\nlocations: [{name: b, lon: 116, lat: 40}]\n"
                       "years: [1890, 1911]\n")
        assert run("prior", "--config", cfg) == EXIT_DATA
        assert "lme.csv:2" in capsys.readouterr().err

    def test_numeric_failure(self, tmp_path, capsys):
        (tmp_path / "reaches.csv").write_text("year,lat,lon,index\n1900,30,110,0\n1901,30,110,1\n")
        cfg = tmp_path / "c.yaml"
        cfg.write_text("schema_version: 1\npaths: {reaches: reaches.csv}\n")
        assert run("variogram", "--config", cfg) == EXIT_NUMERIC
        assert "pairs" in capsys.readouterr().err

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "paleorecon", "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "variogram" in res.stdout


class TestConfig:
    def test_paths_resolve_against_config_directory(self, tmp_path):
        cfg = parse_config("schema_version: 1\npaths: {reaches: data/r.csv}\noutput_dir: o\n", tmp_path)
        assert cfg.reaches == (tmp_path / "data" / "r.csv").resolve()
        assert cfg.output_dir == (tmp_path / "o").resolve()

    @pytest.mark.parametrize("text", [
        "schema_version: 1\nyears: [1300, 1911]\n",
        "schema_version: 1\nqmap: {target: median}\n",
        "schema_version: 1\nvalidate: {min_months: 8}\n",
        "schema_version: 1\nthreads: 0\n",
        "schema_version: 1\nlocations: [{name: a, lon: 0, lat: 99}]\n",
        "schema_version: 1\nmonte_carlo: {samplez: 3}\n",
        "[1, 2]\n",
    ])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)


@pytest.mark.slow
def test_assimilation_improves_validation_on_synthetic_worlds(tmp_path):
    """In at least 70% of 50 worlds the assimilated series correlates better with the
    stations than the calibrated series does, at every location."""
    wins = 0
    for rep in range(50):
        d = tmp_path / str(rep)
        scfg = SynthConfig(seed=500 + rep, n_sites=100, n_years=80, first_year=1832)
        write_world(generate_world(scfg), scfg, d)
        text = ("schema_version: 1\npaths: {reaches: reaches.csv, lme: lme.csv, ghcn: ghcn_monthly.csv}\n"
                f"years: [1832, 1911]\nseed: {500 + rep}\nplots: false\n" + FAST
                + "locations:\n" + "".join(f"  - {{name: {n}, lon: {lo}, lat: {la}}}\n" for n, lo, la in scfg.targets)
                + "validate: {years: [1862, 1911]}\n")
        cfg = parse_config(text, d)
        cfg.output_dir.mkdir()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            run_all(cfg)
            r = {(a, b): c for a, b, c, _ in validation_table(cfg)}
        wins += all(r[(n, "assimilated")] > r[(n, "calibrated")] for n, _, _ in scfg.targets)
    assert wins >= 35, wins
