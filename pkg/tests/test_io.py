import json
import math

import numpy as np
import pytest

from bmint.geometry import make_grid, unit_square
from bmint.io import (ConfigError, cached_basis, config_hash, format_cell, load_basis, run_directory, write_csv,
                      write_json)


def test_format_cell():
    assert format_cell(1 / 3) == "0.333333333333"
    assert format_cell(7) == "7"
    assert format_cell(True) == "true"


def test_json_infinities_become_null(tmp_path):
    write_json(tmp_path / "x.json", {"b": math.inf, "a": np.float64(1.5)})
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": 1.5, "b": None}


def test_config_hash_is_order_free():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": (1, 2), "a": 1})


def test_run_directory(tmp_path):
    d = run_directory(tmp_path, "spectral", {"n": 4}, 2, False)
    assert d.name.startswith("spectral-") and d.name.endswith("-s2")
    write_csv(d / "t.csv", ["a"], [[1.0]])
    with pytest.raises(ConfigError):
        run_directory(tmp_path, "spectral", {"n": 4}, 2, False)


def test_cache_round_trip_and_checksum(tmp_path):
    g = make_grid(unit_square(), 16)
    b1, hit1 = cached_basis(g, 10, "tensor", tmp_path)
    b2, hit2 = cached_basis(g, 10, "tensor", tmp_path)
    assert (hit1, hit2) == (False, True)
    assert np.array_equal(b1.eigenvalues, b2.eigenvalues) and np.array_equal(b1.fields, b2.fields)
    (path,) = tmp_path.iterdir()
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ConfigError):
        load_basis(path)
