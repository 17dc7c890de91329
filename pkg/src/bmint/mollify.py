"""Mollifiers, smoothed occupation densities and their pointwise products."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn

from . import _accel
from ._accel import njit
from .geometry import Grid, GridField, GridMeasure, GridMismatchError

PROFILES = ("bump", "cosine")


@dataclass(frozen=True)
class MollifierSpec:
    eps: float
    profile: str = "bump"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}")

    def check(self, grid: Grid) -> None:
        if self.eps < 2 * float(np.max(grid.h)) * (1 - 1e-12):
            raise ValueError(f"eps={self.eps:g} is below the resolvable threshold 2h={2 * np.max(grid.h):g}")


@lru_cache(maxsize=None)
def bump_constant(d: int) -> float:
    """``c`` with ``int c exp(-1/(1-|x|^2)) dx = 1`` over the unit ball in ``R^d``."""
    sphere = 2 * math.pi ** (d / 2) / gamma_fn(d / 2)
    val, _ = integrate.quad(lambda r: r ** (d - 1) * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0,
                            epsabs=0, epsrel=1e-13, limit=200)
    return 1.0 / (sphere * val)


def profile_values(spec: MollifierSpec, disp: np.ndarray) -> np.ndarray:
    """Continuous ``phi_eps`` at displacements ``disp[..., d]``."""
    d = disp.shape[-1]
    u = disp / spec.eps
    if spec.profile == "bump":
        r2 = np.sum(u * u, axis=-1)
        out = np.zeros(r2.shape)
        inside = r2 < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        return out * bump_constant(d) / spec.eps**d
    inside = np.all(np.abs(u) < 1.0, axis=-1)
    val = np.prod((1.0 + np.cos(np.pi * u)) / 2.0, axis=-1)
    return np.where(inside, val, 0.0) / spec.eps**d


def kernel_stencil(spec: MollifierSpec, grid: Grid):
    """Integer node offsets and kernel values, normalised so ``sum(values) * vol = 1``."""
    spec.check(grid)
    reach = [int(math.floor(spec.eps / hj)) for hj in grid.h]
    ranges = [np.arange(-r, r + 1) for r in reach]
    offs = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, grid.d)
    vals = profile_values(spec, offs * grid.h)
    keep = vals > 0
    offs, vals = offs[keep], vals[keep]
    vals = vals / (vals.sum() * grid.cell_volume)
    return np.ascontiguousarray(offs.astype(np.int64)), np.ascontiguousarray(vals)


def bump_kernel(spec: MollifierSpec, grid: Grid, center=None) -> GridField:
    """``phi_eps(. - center)`` sampled on the nodes, renormalised to unit discrete integral."""
    spec.check(grid)
    c = grid.domain.center if center is None else np.asarray(center, dtype=float)
    disp = np.stack(grid.coords, axis=-1) - c
    vals = profile_values(spec, disp)
    total = float(np.sum(vals * grid.weights))
    if total <= 0:
        raise ValueError("kernel support misses every node")
    return GridField(vals / total, grid)


# --------------------------------------------------------------------------
# convolution kernels (direct stencil sums)

@njit
def _scatter_numba(masses, offs, vals, n_grid, out):
    # masses, out: (batch, size) in C order over (n+1)^d nodes
    d = offs.shape[1]
    stride = n_grid + 1
    nb = masses.shape[0]
    size = masses.shape[1]
    idx = np.empty(d, np.int64)
    for b in range(nb):
        for node in range(size):
            m = masses[b, node]
            if m == 0.0:
                continue
            rem = node
            for j in range(d - 1, -1, -1):
                idx[j] = rem % stride
                rem //= stride
            for q in range(offs.shape[0]):
                target = 0
                ok = True
                for j in range(d):
                    y = idx[j] + offs[q, j]
                    if y < 0 or y > n_grid:
                        ok = False
                        break
                    target = target * stride + y
                if ok:
                    out[b, target] += m * vals[q]


def _scatter_numpy(masses, offs, vals, grid):
    nb = masses.shape[0]
    src = masses.reshape((nb,) + grid.shape)
    out = np.zeros_like(src)
    n1 = grid.n + 1
    for o, v in zip(offs, vals):
        dst_sl = [slice(None)]
        src_sl = [slice(None)]
        for j in range(grid.d):
            k = int(o[j])
            if k >= 0:
                dst_sl.append(slice(k, n1))
                src_sl.append(slice(0, n1 - k))
            else:
                dst_sl.append(slice(0, n1 + k))
                src_sl.append(slice(-k, n1))
        out[tuple(dst_sl)] += v * src[tuple(src_sl)]
    return out.reshape(nb, -1)


def smooth_masses(masses: np.ndarray, spec: MollifierSpec, grid: Grid,
                  backend: str | None = None) -> np.ndarray:
    """Batch smoothing: ``masses[..., *grid.shape]`` to densities of the same shape."""
    backend = _accel.resolve(backend)
    offs, vals = kernel_stencil(spec, grid)
    lead = masses.shape[: masses.ndim - grid.d]
    flat = np.ascontiguousarray(masses.reshape(-1, grid.size), dtype=float)
    if backend == "numba":
        out = np.zeros_like(flat)
        _scatter_numba(flat, offs, vals, grid.n, out)
    else:
        out = _scatter_numpy(flat, offs, vals, grid)
    return out.reshape(lead + grid.shape)


def smooth_occupation(occ: GridMeasure, spec: MollifierSpec, backend: str | None = None,
                      return_dropped: bool = False):
    """Density ``y -> sum_z phi_eps(y - z) mass(z)`` on the nodes of ``occ.grid``.

    With ``return_dropped`` the mass lost to boundary truncation is returned too.
    """
    vals = smooth_masses(occ.masses[None], spec, occ.grid, backend)[0]
    field = GridField(vals, occ.grid)
    if return_dropped:
        return field, occ.total - float(np.sum(vals * occ.grid.weights))
    return field


def smooth_test_function(f: GridField, spec: MollifierSpec, backend: str | None = None) -> GridField:
    """Adjoint smoothing ``z -> sum_y w(y) f(y) phi_eps(y - z)``.

    For any measure ``m``: ``<smooth(m), f> = sum_z m(z) * this(z)``.
    The stencil is symmetric, so this is smoothing of the measure ``w f``.
    """
    g = f.grid
    vals = smooth_masses((f.values * g.weights)[None], spec, g, backend)[0]
    return GridField(vals, g)


def intersection_density(fields) -> GridField:
    """Nodewise product; values are sorted per node first so the order of ``fields`` is irrelevant."""
    fields = list(fields)
    if not fields:
        raise ValueError("need at least one field")
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError("fields live on different grids")
    stack = np.sort(np.stack([f.values for f in fields]), axis=0)
    out = stack[0].copy()
    for k in range(1, len(stack)):
        out = out * stack[k]
    return GridField(out, g)


def test_integral(density: GridField, f: GridField) -> float:
    if density.grid != f.grid:
        raise GridMismatchError("density and test function live on different grids")
    return float(np.sum(density.values * f.values * density.grid.weights))


def intersection_integrals(occupations: np.ndarray, spec: MollifierSpec, grid: Grid, f: GridField,
                           backend: str | None = None) -> np.ndarray:
    """``<prod_i smooth(occ_i), f>`` for a batch ``occupations[m, p, *shape]``."""
    if occupations.shape[0] == 0:
        return np.zeros(0)
    dens = smooth_masses(occupations, spec, grid, backend)
    dens = np.sort(dens, axis=1)
    prod = dens[:, 0]
    for i in range(1, dens.shape[1]):
        prod = prod * dens[:, i]
    axes = tuple(range(1, 1 + grid.d))
    return np.sum(prod * (f.values * grid.weights), axis=axes)


# keep pytest from collecting this when imported into a test module
test_integral.__test__ = False
