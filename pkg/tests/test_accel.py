import pytest

from bmint import _accel, cli


def test_env_flag_selects_numpy(monkeypatch):
    monkeypatch.setenv(_accel.ENV_FLAG, "1")
    assert _accel.resolve(None) == "numpy"
    monkeypatch.setenv(_accel.ENV_FLAG, "0")
    assert _accel.resolve(None) == ("numba" if _accel.HAVE_NUMBA else "numpy")


def test_unknown_backend():
    with pytest.raises(ValueError):
        _accel.resolve("cuda")


def test_cli_output_independent_of_backend(tmp_path, monkeypatch):
    argv = ["simulate", "--n", "16", "--n-samples", "40", "--t", "0.05"]
    assert cli.main(argv + ["--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv(_accel.ENV_FLAG, "1")
    assert cli.main(argv + ["--out", str(tmp_path / "b")]) == 0
    (a,) = (tmp_path / "a").iterdir()
    (b,) = (tmp_path / "b").iterdir()
    assert (a / "ensemble.csv").read_bytes() == (b / "ensemble.csv").read_bytes()
