import json

import numpy as np
import pytest
import yaml

from bmint import cli
from bmint.io import load_config


def _run(tmp_path, *argv):
    return cli.main(list(argv) + ["--out", str(tmp_path / "out")])


def _only_dir(tmp_path):
    (d,) = (tmp_path / "out").iterdir()
    return d


def test_minimize_dv_value(tmp_path):
    assert _run(tmp_path, "minimize", "dv", "--domain", "unit-square", "--n", "128") == 0
    rec = json.loads((_only_dir(tmp_path) / "result.json").read_text())
    assert rec["value"] == pytest.approx(9.87, abs=0.01)
    assert (_only_dir(tmp_path) / "minimizer.csv").exists()


def test_counting_small_audit(tmp_path):
    assert _run(tmp_path, "counting", "--k", "3", "--p", "2", "--R", "2") == 0
    lines = (_only_dir(tmp_path) / "audit.csv").read_text().splitlines()
    assert lines[0].split(",")[-1] == "equal"
    assert all(line.endswith(",true") for line in lines[1:])


def test_cost_cap_is_numerical_failure(tmp_path):
    assert _run(tmp_path, "counting", "--k", "7", "--p", "1", "--R", "2") == 2


def test_missing_config(tmp_path, capsys):
    path = tmp_path / "absent.yaml"
    assert _run(tmp_path, "spectral", "--config", str(path)) == 1
    assert str(path) in capsys.readouterr().err


def test_unknown_subcommand(tmp_path, capsys):
    assert _run(tmp_path, "frobnicate") == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_key(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("n: 16\nwhatever: 1\n")
    assert _run(tmp_path, "spectral", "--config", str(cfg)) == 1


def test_refuses_to_overwrite(tmp_path):
    args = ("spectral", "--n", "16", "--N", "5")
    assert _run(tmp_path, *args) == 0
    assert _run(tmp_path, *args) == 1
    assert _run(tmp_path, *args, "--force") == 0


def test_seed_goes_into_directory_name(tmp_path):
    assert _run(tmp_path, "simulate", "--n", "16", "--n-samples", "10", "--seed", "7") == 0
    assert _only_dir(tmp_path).name.endswith("-s7")


def test_manifest_and_round_trip(tmp_path):
    cfg = tmp_path / "in.yaml"
    cfg.write_text(yaml.safe_dump({"n": 16, "N": 5, "seed": 3}))
    assert _run(tmp_path, "spectral", "--config", str(cfg)) == 0
    out = _only_dir(tmp_path)
    man = json.loads((out / "manifest.json").read_text())
    assert man["subcommand"] == "spectral" and man["seed"] == 3 and man["output_dir"] == out.name
    assert man["config"]["method"] == "tensor"
    # parse -> serialize -> parse
    resolved = load_config(out / "config.yaml")
    again = yaml.safe_load(yaml.safe_dump(resolved))
    assert again == resolved
    assert cli.main(["spectral", "--config", str(out / "config.yaml"), "--out", str(tmp_path / "out2")]) == 0
    (out2,) = (tmp_path / "out2").iterdir()
    assert out2.name == out.name
    assert json.loads((out2 / "manifest.json").read_text())["config"] == man["config"]


def test_spectral_cache(tmp_path, monkeypatch):
    monkeypatch.delenv("BMINT_CACHE_DIR", raising=False)
    cache = tmp_path / "cache"
    args = ("spectral", "--n", "16", "--N", "8", "--cache-dir", str(cache))
    assert _run(tmp_path, *args) == 0
    assert len(list(cache.iterdir())) == 1
    first = (_only_dir(tmp_path) / "eigenvalues.csv").read_bytes()
    assert _run(tmp_path, *args, "--force") == 0
    assert (_only_dir(tmp_path) / "eigenvalues.csv").read_bytes() == first


def test_no_writes_outside_output(tmp_path, monkeypatch):
    monkeypatch.delenv("BMINT_CACHE_DIR", raising=False)
    monkeypatch.chdir(tmp_path)
    assert _run(tmp_path, "spectral", "--n", "16", "--N", "5") == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out"]


@pytest.mark.parametrize("argv", [
    ("simulate", "--n", "16", "--n-samples", "50"),
    ("minimize", "theta", "--n", "24"),
    ("gamma", "--n", "24"),
])
def test_rerun_byte_identical(tmp_path, argv):
    assert cli.main(list(argv) + ["--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert cli.main(list(argv) + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    (a,) = (tmp_path / "a").iterdir()
    (b,) = (tmp_path / "b").iterdir()
    for f in sorted(a.iterdir()):
        if f.name != "timing.txt":
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_minimize_infinite_value_recorded(tmp_path):
    assert _run(tmp_path, "minimize", "chi", "--n", "24") == 0
    rec = json.loads((_only_dir(tmp_path) / "result.json").read_text())
    assert rec["value"] is None and rec["infinite_reason"]


def test_experiment_scaling_params(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text(yaml.safe_dump({"params": {"n_samples": 20, "eps": 0.05, "s": 0.02}}))
    assert _run(tmp_path, "experiment", "scaling", "--config", str(cfg)) == 0
    rep = json.loads((_only_dir(tmp_path) / "scaling.json").read_text())
    assert rep["expected"] == 2.0 and np.isfinite(rep["ratio"])
