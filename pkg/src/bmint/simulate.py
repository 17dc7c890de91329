"""Killed Brownian motions in a box, with occupation measures on the grid.

Each motion of each sample draws from its own counter-based stream keyed by
``(seed, sample, motion)``, so any subset of samples can be regenerated
exactly.  Ensembles use this twice: a first pass records exit data for all
samples, a second pass re-runs only the accepted ones to collect their
occupation measures.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from ._accel import njit
from .geometry import DomainSpec, Grid, GridMeasure
from .rng import philox_block, raw_words, stream_key, to_unit, unit_from_words

try:
    from numba import prange
except ImportError:  # pragma: no cover
    prange = range


class EmptyEnsembleError(RuntimeError):
    """No sample survived; estimates under the sub-probability are unavailable."""


@dataclass(frozen=True)
class PathConfig:
    dt: float
    t: float
    b: tuple | None = None
    start: object = "center"
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t > 0:
            raise ValueError("t must be positive")
        if self.b is not None:
            b = tuple(float(v) for v in self.b)
            if any(not v > 0 for v in b):
                raise ValueError("all horizons must be positive")
            object.__setattr__(self, "b", b)
        if not (0 <= int(self.seed) < 2**63):
            raise ValueError("seed must be a nonnegative 63-bit integer")
        object.__setattr__(self, "seed", int(self.seed))

    def horizons(self, p: int) -> np.ndarray:
        b = np.ones(p) if self.b is None else np.asarray(self.b, dtype=float)
        if len(b) != p:
            raise ValueError(f"b has length {len(b)} but p={p}")
        return self.t * b

    def start_points(self, domain: DomainSpec):
        """Returns ``(uniform_flag, points[p, d])``."""
        p, d = domain.p, domain.d
        s = self.start
        if isinstance(s, str):
            if s == "center":
                return False, np.tile(domain.center, (p, 1))
            if s == "uniform":
                return True, np.zeros((p, d))
            raise ValueError(f"unknown start {s!r}")
        pts = np.asarray(s, dtype=float)
        if pts.shape == (d,):
            pts = np.tile(pts, (p, 1))
        if pts.shape != (p, d):
            raise ValueError(f"start must be a point or {p} points in {d} dimensions")
        for x in pts:
            if not domain.contains(x):
                raise ValueError(f"start point {x} is not inside B")
        return False, pts

    def check(self, domain: DomainSpec, grid: Grid) -> None:
        self.horizons(domain.p)
        self.start_points(domain)
        hmin = float(np.min(grid.h))
        if self.dt > hmin**2 / 4:
            warnings.warn(f"dt={self.dt:g} exceeds (min h)^2/4={hmin**2 / 4:g}", RuntimeWarning,
                          stacklevel=3)

    def to_dict(self) -> dict:
        s = self.start
        if not isinstance(s, str):
            s = np.asarray(s, dtype=float).tolist()
        return {"dt": self.dt, "t": self.t, "b": None if self.b is None else list(self.b),
                "start": s, "seed": self.seed}


@dataclass(eq=False)
class PathResult:
    occupations: list
    tau: np.ndarray
    survived: np.ndarray
    endpoints: np.ndarray

    @property
    def accepted(self) -> bool:
        return bool(np.all(self.survived))


@dataclass(eq=False)
class Ensemble:
    """Per-sample exit data for samples ``start .. start + n_sampled - 1``.

    ``occupations`` (if kept) has shape ``(n_accepted, p, *grid.shape)`` in
    sample order and holds occupation masses of accepted samples only.
    """

    domain: DomainSpec
    grid: Grid
    cfg: PathConfig
    start: int
    tau: np.ndarray
    survived: np.ndarray
    endpoints: np.ndarray
    occ_total: np.ndarray
    functionals: np.ndarray | None = None
    occupations: np.ndarray | None = None

    @property
    def n_sampled(self) -> int:
        return len(self.tau)

    @property
    def sample_ids(self) -> np.ndarray:
        return self.start + np.arange(self.n_sampled)

    @property
    def accepted_mask(self) -> np.ndarray:
        return np.all(self.survived, axis=1)

    @property
    def accepted(self) -> int:
        return int(self.accepted_mask.sum())

    @property
    def acceptance(self) -> float:
        return self.accepted / self.n_sampled

    @property
    def results(self) -> list:
        if self.occupations is None:
            raise ValueError("ensemble was generated without occupation measures")
        out = []
        for k, s in enumerate(np.flatnonzero(self.accepted_mask)):
            occ = [GridMeasure(self.occupations[k, i], self.grid) for i in range(self.domain.p)]
            out.append(PathResult(occ, self.tau[s], self.survived[s], self.endpoints[s]))
        return out

    def csv_rows(self, test_fields=None):
        """Rows ``(sample, tau_i.., survived_i.., occupation_i.., test integrals..)``."""
        p = self.domain.p
        header = (["sample"] + [f"tau_{i + 1}" for i in range(p)]
                  + [f"survived_{i + 1}" for i in range(p)]
                  + [f"occupation_{i + 1}" for i in range(p)])
        nf = 0 if self.functionals is None else self.functionals.shape[2]
        for j in range(nf):
            header += [f"test{j + 1}_{i + 1}" for i in range(p)]
        rows = []
        for k in range(self.n_sampled):
            row = [int(self.start + k)]
            row += [float(v) for v in self.tau[k]]
            row += [int(v) for v in self.survived[k]]
            row += [float(v) for v in self.occ_total[k]]
            for j in range(nf):
                row += [float(v) for v in self.functionals[k, :, j]]
            rows.append(row)
        return header, rows


def merge_ensembles(parts) -> Ensemble:
    """Concatenate ensembles over disjoint, contiguous sample ranges (sorted by start)."""
    parts = sorted(parts, key=lambda e: e.start)
    for a, b in zip(parts, parts[1:]):
        if a.start + a.n_sampled != b.start:
            raise ValueError("ensembles must cover contiguous, disjoint sample ranges")
        if a.cfg != b.cfg or a.grid != b.grid:
            raise ValueError("ensembles were generated with different settings")

    def cat(name):
        vals = [getattr(e, name) for e in parts]
        if any(v is None for v in vals):
            return None
        return np.concatenate(vals, axis=0)

    first = parts[0]
    return Ensemble(first.domain, first.grid, first.cfg, first.start, cat("tau"), cat("survived"),
                    cat("endpoints"), cat("occ_total"), cat("functionals"), cat("occupations"))


# --------------------------------------------------------------------------
# numba kernels

@njit
def _motion_numba(seed, stream, uniform_start, x0, lower, upper, dt, horizon, n_grid, h,
                  F, fun_acc, occ, deposit, end):
    d = lower.shape[0]
    k0 = np.uint64(seed)
    k1 = np.uint64(stream)
    buf = np.empty(4, np.uint64)
    buf2 = np.empty(4, np.uint64)
    x = np.empty(d)
    if uniform_start:
        philox_block(np.uint64(1), k0, k1, buf)
        for j in range(d):
            x[j] = lower[j] + (upper[j] - lower[j]) * to_unit(buf[j])
    else:
        for j in range(d):
            x[j] = x0[j]
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    cps = 1 if d == 2 else 2
    stride = n_grid + 1
    z = np.empty(4)
    ub = np.empty(3)
    xn = np.empty(d)
    total = 0.0
    tau = np.inf
    survived = True
    nf = F.shape[0]
    for k in range(n_steps):
        t0 = k * dt
        step = dt if k < n_steps - 1 else horizon - t0
        blk = np.uint64(2 + k * cps)
        philox_block(blk, k0, k1, buf)
        if d == 2:
            r = math.sqrt(-2.0 * math.log(to_unit(buf[0])))
            a = 2.0 * math.pi * to_unit(buf[1])
            z[0] = r * math.cos(a)
            z[1] = r * math.sin(a)
            ub[0] = to_unit(buf[2])
            ub[1] = to_unit(buf[3])
        else:
            philox_block(blk + np.uint64(1), k0, k1, buf2)
            r = math.sqrt(-2.0 * math.log(to_unit(buf[0])))
            a = 2.0 * math.pi * to_unit(buf[1])
            z[0] = r * math.cos(a)
            z[1] = r * math.sin(a)
            r = math.sqrt(-2.0 * math.log(to_unit(buf[2])))
            a = 2.0 * math.pi * to_unit(buf[3])
            z[2] = r * math.cos(a)
            ub[0] = to_unit(buf2[0])
            ub[1] = to_unit(buf2[1])
            ub[2] = to_unit(buf2[2])
        sq = math.sqrt(step)
        for j in range(d):
            xn[j] = x[j] + sq * z[j]
        # deposit node of the pre-step position
        node = 0
        for j in range(d):
            ij = int(math.floor((x[j] - lower[j]) / h[j] + 0.5))
            if ij < 1:
                ij = 1
            elif ij > n_grid - 1:
                ij = n_grid - 1
            node = node * stride + ij
        # observed exit
        frac = 2.0
        for j in range(d):
            if xn[j] <= lower[j]:
                f = (x[j] - lower[j]) / (x[j] - xn[j])
                if f < frac:
                    frac = f
            elif xn[j] >= upper[j]:
                f = (upper[j] - x[j]) / (xn[j] - x[j])
                if f < frac:
                    frac = f
        if frac > 1.0:
            # unobserved crossing of a face by the Brownian bridge
            # exponents above 40 give p < 2^-53 <= u, so skipping exp is exact
            for j in range(d):
                elo = 2.0 * (x[j] - lower[j]) * (xn[j] - lower[j]) / step
                ehi = 2.0 * (upper[j] - x[j]) * (upper[j] - xn[j]) / step
                if elo > 40.0 and ehi > 40.0:
                    continue
                plo = math.exp(-elo)
                phi = math.exp(-ehi)
                if ub[j] < plo + phi:
                    frac = 0.5
                    break
        if frac <= 1.0:
            mass = frac * step
            tau = t0 + mass
            for j in range(d):
                end[j] = x[j] + frac * (xn[j] - x[j])
            survived = False
        else:
            mass = step
        total += mass
        if deposit:
            occ[node] += mass
        for q in range(nf):
            fun_acc[q] += mass * F[q, node]
        if not survived:
            break
        for j in range(d):
            x[j] = xn[j]
    if survived:
        for j in range(d):
            end[j] = x[j]
    return tau, survived, total


@njit(parallel=True)
def _ensemble_numba(seed, s0, n, p, uniform_start, starts, lower, upper, dt, horizons, n_grid, h,
                    F, tau_out, surv_out, end_out, tot_out, fun_out):
    d = lower.shape[0]
    for s in prange(n):
        occ = np.zeros(1)
        for i in range(p):
            fun = np.zeros(F.shape[0])
            end = np.empty(d)
            stream = ((s0 + s) << 8) | i
            tau, surv, tot = _motion_numba(seed, stream, uniform_start, starts[i], lower, upper, dt,
                                           horizons[i], n_grid, h, F, fun, occ, False, end)
            tau_out[s, i] = tau
            surv_out[s, i] = surv
            tot_out[s, i] = tot
            for j in range(d):
                end_out[s, i, j] = end[j]
            for q in range(F.shape[0]):
                fun_out[s, i, q] = fun[q]


@njit(parallel=True)
def _occupation_numba(seed, ids, p, uniform_start, starts, lower, upper, dt, horizons, n_grid, h,
                      occ_out):
    d = lower.shape[0]
    F = np.zeros((0, occ_out.shape[2]))
    for k in prange(ids.shape[0]):
        fun = np.zeros(0)
        end = np.empty(d)
        for i in range(p):
            stream = (ids[k] << 8) | i
            _motion_numba(seed, stream, uniform_start, starts[i], lower, upper, dt, horizons[i],
                          n_grid, h, F, fun, occ_out[k, i], True, end)


# --------------------------------------------------------------------------
# numpy reference path

def _motion_numpy(seed, stream, uniform_start, x0, lower, upper, dt, horizon, n_grid, h, F,
                  deposit, size):
    d = len(lower)
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    cps = 1 if d == 2 else 2
    words = raw_words(seed, stream, 1 + n_steps * cps)
    u = unit_from_words(words)
    if uniform_start:
        x0 = lower + (upper - lower) * u[:d]
    else:
        x0 = np.asarray(x0, dtype=float)
    u = u[4:].reshape(n_steps, 4 * cps)
    if d == 2:
        r = np.sqrt(-2.0 * np.log(u[:, 0]))
        a = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
        ub = u[:, 2:4]
    else:
        r1 = np.sqrt(-2.0 * np.log(u[:, 0]))
        a1 = 2.0 * np.pi * u[:, 1]
        r2 = np.sqrt(-2.0 * np.log(u[:, 2]))
        a2 = 2.0 * np.pi * u[:, 3]
        z = np.stack([r1 * np.cos(a1), r1 * np.sin(a1), r2 * np.cos(a2)], axis=1)
        ub = u[:, 4:7]
    steps = np.full(n_steps, dt)
    steps[-1] = horizon - (n_steps - 1) * dt
    incr = np.sqrt(steps)[:, None] * z
    pos = np.cumsum(np.concatenate([x0[None, :], incr], axis=0), axis=0)
    pre, post = pos[:-1], pos[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        flo = np.where(post <= lower, (pre - lower) / (pre - post), 2.0)
        fhi = np.where(post >= upper, (upper - pre) / (post - pre), 2.0)
    frac = np.minimum(flo, fhi).min(axis=1)
    plo = np.exp(-2.0 * (pre - lower) * (post - lower) / steps[:, None])
    phi = np.exp(-2.0 * (upper - pre) * (upper - post) / steps[:, None])
    bridge = np.any(ub[:, :d] < plo + phi, axis=1)
    frac = np.where((frac > 1.0) & bridge, 0.5, frac)
    hits = np.flatnonzero(frac <= 1.0)
    masses = steps.copy()
    if len(hits):
        k = hits[0]
        masses = masses[: k + 1]
        masses[k] = frac[k] * steps[k]
        tau = k * dt + masses[k]
        end = pre[k] + frac[k] * (post[k] - pre[k])
        survived = False
        pre = pre[: k + 1]
    else:
        tau = np.inf
        end = pos[-1]
        survived = True
    idx = np.clip(np.floor((pre - lower) / h + 0.5).astype(np.int64), 1, n_grid - 1)
    node = np.ravel_multi_index(tuple(idx.T), (n_grid + 1,) * d)
    total = float(masses.sum())
    fun = F[:, node] @ masses
    occ = None
    if deposit:
        occ = np.zeros(size)
        np.add.at(occ, node, masses)
    return tau, survived, total, end, fun, occ


# --------------------------------------------------------------------------
# public API

def _common(domain, grid, cfg):
    if grid.domain != domain:
        raise ValueError("grid was built for a different domain")
    cfg.check(domain, grid)
    uniform, starts = cfg.start_points(domain)
    return (uniform, np.ascontiguousarray(starts), np.asarray(domain.lower, dtype=float),
            np.asarray(domain.upper, dtype=float), cfg.horizons(domain.p), np.asarray(grid.h))


def run_ensemble(domain: DomainSpec, grid: Grid, cfg: PathConfig, n_samples: int, start: int = 0,
                 functionals=None, keep_occupations: bool = True, backend: str | None = None
                 ) -> Ensemble:
    """Simulate samples ``start .. start + n_samples - 1``; never raises on zero acceptance."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    backend = _accel.resolve(backend)
    p, d = domain.p, domain.d
    uniform, starts, lower, upper, horizons, h = _common(domain, grid, cfg)
    if functionals is None:
        F = np.zeros((0, grid.size))
    else:
        F = np.ascontiguousarray(np.asarray(functionals, dtype=float).reshape(-1, grid.size))
    tau = np.empty((n_samples, p))
    surv = np.zeros((n_samples, p), dtype=bool)
    end = np.empty((n_samples, p, d))
    tot = np.empty((n_samples, p))
    fun = np.zeros((n_samples, p, F.shape[0]))
    if backend == "numba":
        _ensemble_numba(cfg.seed, start, n_samples, p, uniform, starts, lower, upper, cfg.dt,
                        horizons, grid.n, h, F, tau, surv, end, tot, fun)
    else:
        for s in range(n_samples):
            for i in range(p):
                r = _motion_numpy(cfg.seed, stream_key(start + s, i), uniform, starts[i], lower,
                                  upper, cfg.dt, horizons[i], grid.n, h, F, False, grid.size)
                tau[s, i], surv[s, i], tot[s, i], end[s, i], fun[s, i] = r[:5]
    ens = Ensemble(domain, grid, cfg, start, tau, surv, end, tot,
                   fun if F.shape[0] else None, None)
    if keep_occupations:
        ids = ens.sample_ids[ens.accepted_mask]
        ens.occupations = occupations_for(domain, grid, cfg, ids, backend=backend)
    return ens


def occupations_for(domain, grid, cfg, sample_ids, backend=None) -> np.ndarray:
    """Occupation masses ``(len(ids), p, *grid.shape)`` for the given samples."""
    backend = _accel.resolve(backend)
    uniform, starts, lower, upper, horizons, h = _common(domain, grid, cfg)
    ids = np.asarray(sample_ids, dtype=np.int64)
    p = domain.p
    out = np.zeros((len(ids), p, grid.size))
    if backend == "numba":
        if len(ids):
            _occupation_numba(cfg.seed, ids, p, uniform, starts, lower, upper, cfg.dt, horizons,
                              grid.n, h, out)
    else:
        F = np.zeros((0, grid.size))
        for k, s in enumerate(ids):
            for i in range(p):
                out[k, i] = _motion_numpy(cfg.seed, stream_key(int(s), i), uniform, starts[i],
                                          lower, upper, cfg.dt, horizons[i], grid.n, h, F, True,
                                          grid.size)[5]
    return out.reshape((len(ids), p) + grid.shape)


def sample_paths(domain: DomainSpec, grid: Grid, cfg: PathConfig, sample: int = 0,
                 backend: str | None = None) -> PathResult:
    """One sample of ``p`` motions with occupation measures."""
    ens = run_ensemble(domain, grid, cfg, 1, start=sample, keep_occupations=False, backend=backend)
    occ = occupations_for(domain, grid, cfg, [sample], backend=backend)[0]
    return PathResult([GridMeasure(occ[i], grid) for i in range(domain.p)], ens.tau[0],
                      ens.survived[0], ens.endpoints[0])


def survival_ensemble(domain: DomainSpec, grid: Grid, cfg: PathConfig, n_samples: int,
                      start: int = 0, keep_occupations: bool = True, functionals=None,
                      backend: str | None = None) -> Ensemble:
    """Ensemble under the sub-probability: raises :class:`EmptyEnsembleError` if none survive."""
    ens = run_ensemble(domain, grid, cfg, n_samples, start, functionals, keep_occupations, backend)
    if ens.accepted == 0:
        raise EmptyEnsembleError(f"0 of {n_samples} samples survived their horizons")
    return ens
