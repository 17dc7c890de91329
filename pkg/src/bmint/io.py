"""Config files, output directories, CSV/JSON writers and the spectral cache."""
from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from pathlib import Path

import numpy as np
import yaml

from .geometry import Grid, make_grid
from .spectral import SpectralBasis

CACHE_ENV = "BMINT_CACHE_DIR"
CACHE_MAGIC = b"BILSPEC1"


class ConfigError(ValueError):
    """Invalid or missing configuration."""


def load_config(path: str | os.PathLike | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return data


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(_plain(cfg), sort_keys=True, default_flow_style=False)


def _plain(obj):
    """Tuples to lists and numpy scalars to Python numbers, recursively."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def run_directory(root: str | os.PathLike, subcommand: str, cfg: dict, seed: int, force: bool) -> Path:
    """``root/<subcommand>-<hash12>-s<seed>``; refuses to reuse a nonempty one without ``force``."""
    out = Path(root) / f"{subcommand}-{config_hash(cfg)[:12]}-s{seed}"
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} exists; use --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _json_safe(obj):
    obj = _plain(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".12g")
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format_cell(v) for v in r])


def field_rows(grid: Grid, fields: dict):
    """Header and rows ``(x, y[, z], name...)`` for node fields."""
    coords = [c.ravel() for c in grid.coords]
    names = list(fields)
    header = ["x", "y", "z"][: grid.d] + names
    cols = coords + [np.asarray(fields[k]).ravel() for k in names]
    return header, list(zip(*cols))


# spectral cache: magic, header length, JSON header, sha256 of payload, payload (little-endian f64)


def cache_dir(explicit: str | None = None) -> Path | None:
    d = explicit or os.environ.get(CACHE_ENV)
    return Path(d) if d else None


def _cache_key(grid: Grid, N: int, method: str) -> str:
    return config_hash({"grid": grid.to_dict(), "N": N, "method": method})[:20]


def save_basis(path: Path, basis: SpectralBasis, method: str) -> None:
    header = {"grid": basis.grid.to_dict(), "N": basis.N, "method": method,
              "modes": None if basis.modes is None else basis.modes.tolist()}
    hb = canonical_json(header).encode()
    payload = np.concatenate([basis.eigenvalues, basis.fields.ravel()]).astype("<f8").tobytes()
    digest = hashlib.sha256(payload).digest()
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        fh.write(digest)
        fh.write(payload)
    os.replace(tmp, path)


def load_basis(path: Path) -> SpectralBasis:
    raw = Path(path).read_bytes()
    if raw[:8] != CACHE_MAGIC:
        raise ConfigError(f"{path}: not a spectral cache file")
    (hl,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hl])
    digest = raw[16 + hl:48 + hl]
    payload = raw[48 + hl:]
    if hashlib.sha256(payload).digest() != digest:
        raise ConfigError(f"{path}: checksum mismatch")
    from .geometry import DomainSpec

    g = header["grid"]
    grid = make_grid(DomainSpec.from_dict(g["domain"]), int(g["n"]))
    arr = np.frombuffer(payload, dtype="<f8").astype(float)
    N = int(header["N"])
    modes = None if header["modes"] is None else np.asarray(header["modes"], dtype=int)
    return SpectralBasis(grid, arr[:N].copy(), arr[N:].reshape((N,) + grid.shape).copy(), None, modes)


def cached_basis(grid: Grid, N: int, method: str = "tensor", directory: Path | None = None):
    """``(basis, hit)``; tensor bases get their 1D factors back on load."""
    from .spectral import dirichlet_eigs, tensor_factors

    if directory is None:
        return dirichlet_eigs(grid, N, method), False
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"spec-{_cache_key(grid, N, method)}.bin"
    if path.exists():
        basis = load_basis(path)
        if basis.grid != grid or basis.N != N:
            raise ConfigError(f"{path}: cache entry does not match the requested basis")
        if method == "tensor":
            basis.factors = tensor_factors(grid)
        return basis, True
    basis = dirichlet_eigs(grid, N, method)
    save_basis(path, basis, method)
    return basis, False
