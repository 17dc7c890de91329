"""Exact low-order moments of smoothed intersection integrals, and their Monte Carlo estimators.

The exact oracles use the finite-difference semigroup on a *fine* grid (the
grid of ``basis``) and restrict occupation masses onto the *coarse* grid on
which ``f`` lives, which is also the grid the Monte Carlo ensemble deposits
onto.  Each coarse node owns the dual cell around it; fine nodes on a dual-cell
face split their mass evenly, and masses next to the boundary are attributed
to the nearest interior node exactly like the path simulator does.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from . import _accel
from .counting import (AuditRow, CostCapError, OccupancyMap, audit, phi_count_bound,  # noqa: F401
                       psi_cardinality, psi_enumerate)
from .geometry import Grid, GridField
from .mollify import MollifierSpec, intersection_integrals, kernel_stencil, smooth_masses, \
    smooth_test_function
from .simulate import EmptyEnsembleError, Ensemble, PathConfig, run_ensemble
from .spectral import SpectralBasis, _interp_weights, _kron_sum

# cap on the fine interior size for the dense two-point matrices (p >= 2, k = 2)
TWO_POINT_CAP = 1024


class QuadratureError(RuntimeError):
    """The quadrature error estimate exceeds the requested tolerance."""


# --------------------------------------------------------------------------
# fine -> coarse restriction

def restriction_1d(n_fine: int, n_coarse: int) -> np.ndarray:
    """``(n_coarse + 1, n_fine + 1)`` matrix moving node masses onto coarse dual cells."""
    if n_fine % n_coarse:
        raise ValueError("fine resolution must be a multiple of the coarse one")
    q = n_fine // n_coarse
    R = np.zeros((n_coarse + 1, n_fine + 1))
    for i in range(n_fine + 1):
        if q % 2 == 0 and i % q == q // 2:
            targets = [(i // q, 0.5), (i // q + 1, 0.5)]
        else:
            targets = [(int(math.floor(i / q + 0.5)), 1.0)]
        for c, wgt in targets:
            R[min(max(c, 1), n_coarse - 1), i] += wgt
    return R


def _check_pair(fine: Grid, coarse: Grid) -> int:
    if fine.domain.lower != coarse.domain.lower or fine.domain.upper != coarse.domain.upper:
        raise ValueError("fine and coarse grids cover different boxes")
    if fine.n % coarse.n:
        raise ValueError("fine resolution must be a multiple of the coarse one")
    return fine.n // coarse.n


def restrict(masses: np.ndarray, fine: Grid, coarse: Grid) -> np.ndarray:
    """Fine node masses ``[..., *fine.shape]`` to coarse node masses."""
    _check_pair(fine, coarse)
    R = restriction_1d(fine.n, coarse.n)
    lead = masses.ndim - fine.d
    out = masses
    for j in range(fine.d):
        out = np.moveaxis(np.tensordot(R, out, axes=([1], [lead + j])), 0, lead + j)
    return out


def prolong(values: np.ndarray, fine: Grid, coarse: Grid) -> np.ndarray:
    """Adjoint of :func:`restrict`: coarse node values to fine node values."""
    _check_pair(fine, coarse)
    R = restriction_1d(fine.n, coarse.n)
    out = values
    for j in range(fine.d):
        out = np.moveaxis(np.tensordot(R.T, out, axes=([1], [j])), 0, j)
    return out


# --------------------------------------------------------------------------
# shared helpers

def _starts(start, grid: Grid, p: int) -> np.ndarray:
    dom = grid.domain
    if isinstance(start, str):
        if start == "center":
            return np.tile(dom.center, (p, 1))
        raise ValueError("exact moments need fixed start points")
    pts = np.asarray(start, dtype=float)
    if pts.shape == (grid.d,):
        pts = np.tile(pts, (p, 1))
    if pts.shape != (p, grid.d):
        raise ValueError(f"start must be a point or {p} points")
    for x in pts:
        if not dom.contains(x):
            raise ValueError(f"start point {x} is not inside B")
    return pts


def _horizons(t: float, b, p: int) -> np.ndarray:
    if not t > 0:
        raise ValueError("t must be positive")
    bb = np.ones(p) if b is None else np.asarray(b, dtype=float)
    if bb.shape != (p,) or np.any(bb <= 0):
        raise ValueError("b must hold p positive weights")
    return t * bb


def start_density(grid: Grid, x) -> np.ndarray:
    """Node density of the point mass at ``x`` (multilinear split over the enclosing cell)."""
    i0, frac = _interp_weights(grid, x)
    out = np.zeros(grid.shape)
    w = grid.weights
    for corner in range(2**grid.d):
        bits = [(corner >> j) & 1 for j in range(grid.d)]
        wgt = 1.0
        for j in range(grid.d):
            wgt *= frac[j] if bits[j] else 1.0 - frac[j]
        if wgt == 0.0:
            continue
        idx = tuple(int(i0[j] + bits[j]) for j in range(grid.d))
        out[idx] += wgt / w[idx]
    return out


def _spec(eps, profile) -> MollifierSpec:
    return eps if isinstance(eps, MollifierSpec) else MollifierSpec(float(eps), profile)


def graded_rule(a: float, b: float, levels: int, order: int):
    """Gauss-Legendre panels on ``[a, b]``, refined geometrically towards both ends."""
    x, w = np.polynomial.legendre.leggauss(order)
    left = [0.0] + [2.0 ** (-k) for k in range(levels, 1, -1)] + [0.5]
    right = [1.0 - v for v in reversed(left[:-1])]
    brk = np.array(left + right)
    nodes, weights = [], []
    for lo, hi in zip(brk[:-1], brk[1:]):
        nodes.append(lo + (hi - lo) * (x + 1) / 2)
        weights.append((hi - lo) / 2 * w)
    nodes = a + (b - a) * np.concatenate(nodes)
    weights = (b - a) * np.concatenate(weights)
    return nodes, weights


# --------------------------------------------------------------------------
# first moment

def occupation_mean(basis: SpectralBasis, T: float, x, coarse: Grid, tol: float = 1e-9):
    """Coarse masses ``E_x[l_T(Z); tau > T]`` and the quadrature error (max norm)."""
    fine = basis.grid
    _check_pair(fine, coarse)
    delta = start_density(fine, x)
    ones = np.ones(fine.shape)
    w = fine.weights

    def integrand(r):
        u = basis.semigroup(r, delta) * basis.semigroup(T - r, ones) * w
        return restrict(u, fine, coarse).ravel()

    val, err = integrate.quad_vec(integrand, 0.0, T, epsabs=0.0, epsrel=tol, norm="max",
                                  limit=20000)
    return val.reshape(coarse.shape), float(err)


def exact_moment_k1(f: GridField, t: float, eps, start="center", basis: SpectralBasis = None,
                    b=None, tol: float = 1e-9, profile: str = "bump", return_error: bool = False,
                    backend: str | None = None):
    """``E[<f, l_{eps,t}>; all tau_i > t b_i]`` from the eigen-expansion semigroup.

    ``f`` lives on the coarse (Monte Carlo) grid, ``basis`` on a fine grid of
    the same box.  With ``return_error`` a pair ``(value, error bound)`` is
    returned, where the bound propagates the time-quadrature error.
    """
    if basis is None:
        raise ValueError("basis is required")
    coarse = f.grid
    p = coarse.domain.p
    spec = _spec(eps, profile)
    spec.check(coarse)
    xs = _starts(start, coarse, p)
    T = _horizons(t, b, p)
    dens, errs = [], []
    memo = {}
    for i in range(p):
        key = (tuple(xs[i]), T[i])
        if key not in memo:
            M, err = occupation_mean(basis, T[i], xs[i], coarse, tol=tol * 1e-2)
            memo[key] = (smooth_masses(M, spec, coarse, backend), err)
        dens.append(memo[key][0])
        errs.append(memo[key][1])
    fw = f.values * coarse.weights
    value = float(np.sum(fw * np.prod(dens, axis=0)))
    bound = 0.0
    for i in range(p):
        others = np.prod([dens[j] for j in range(p) if j != i], axis=0) if p > 1 else 1.0
        bound += errs[i] / coarse.cell_volume * float(np.sum(np.abs(fw) * others))
    scale = max(abs(value), float(np.sum(np.abs(fw) * np.prod(dens, axis=0))))
    if bound > max(tol * scale, 1e-300) * 1e3:
        raise QuadratureError(f"quadrature error {bound:g} above tolerance")
    return (value, bound) if return_error else value


def first_moment_dual(f: GridField, t: float, eps, start="center", basis: SpectralBasis = None,
                      tol: float = 1e-10, profile: str = "bump", backend: str | None = None) -> float:
    """``p = 1`` first moment with the mollifier moved onto ``f`` before the time integral.

    Same quantity as :func:`exact_moment_k1`, other order of summation.
    """
    coarse = f.grid
    spec = _spec(eps, profile)
    F = prolong(smooth_test_function(f, spec, backend).values, basis.grid, coarse)
    x = _starts(start, coarse, 1)[0]
    fine = basis.grid
    delta = start_density(fine, x)
    ones = np.ones(fine.shape)
    w = fine.weights

    def integrand(r):
        return float(np.sum(basis.semigroup(r, delta) * basis.semigroup(t - r, ones) * w * F))

    val, _ = integrate.quad(integrand, 0.0, t, epsabs=0.0, epsrel=tol, limit=500)
    return float(val)


# --------------------------------------------------------------------------
# second moment

def _second_moment_p1(basis: SpectralBasis, T: float, x, F: np.ndarray, levels: int, order: int):
    # 2 int_{0<c<r<T} < P_{T-r} delta_x, F P_{r-c}(F S_c) >_w
    fine = basis.grid
    delta = start_density(fine, x)
    ones = np.ones(fine.shape)
    w = fine.weights
    r_nodes, r_wts = graded_rule(0.0, T, levels, order)
    total = 0.0
    s_cache = {}
    for r, wr in zip(r_nodes, r_wts):
        c_nodes, c_wts = graded_rule(0.0, r, levels, order)
        v = np.zeros(fine.shape)
        for c, wc in zip(c_nodes, c_wts):
            sc = s_cache.get(c)
            if sc is None:
                sc = basis.semigroup(c, ones)
            v += wc * basis.semigroup(r - c, F * sc)
        total += wr * float(np.sum(basis.semigroup(T - r, delta) * F * v * w))
    return 2.0 * total


def _kron_semigroup(basis: SpectralBasis, c: float) -> np.ndarray:
    mats = [vec @ (np.exp(-c * lam)[:, None] * vec.T) for lam, vec in basis.factors]
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def two_point_matrix(basis: SpectralBasis, T: float, x, coarse: Grid, levels: int = 8,
                     order: int = 6) -> np.ndarray:
    """``Q[Z, Z'] = E_x[l_T(Z) l_T(Z'); tau > T]`` on all coarse nodes (dense)."""
    fine = basis.grid
    if not basis.separable:
        raise ValueError("two-point moments need the separable basis")
    M = fine.n_interior
    if M > TWO_POINT_CAP:
        raise CostCapError(f"{M} fine interior nodes exceed the two-point cap {TWO_POINT_CAP}")
    inner = fine.interior_slice
    vol = fine.cell_volume
    delta = start_density(fine, x)
    ones = np.ones(fine.shape)
    c_nodes, c_wts = graded_rule(0.0, T, levels, order)
    Tf = np.zeros((M, M))
    for c, wc in zip(c_nodes, c_wts):
        a_nodes, a_wts = graded_rule(0.0, T - c, levels, order)
        G = np.zeros((M, M))
        for a, wa in zip(a_nodes, a_wts):
            u = (basis.semigroup(a, delta)[inner] * vol).ravel()
            s = basis.semigroup(T - c - a, ones)[inner].ravel()
            G += wa * np.outer(u, s)
        Tf += wc * _kron_semigroup(basis, c) * G
    Qf = Tf + Tf.T
    # embed into all fine nodes, then restrict both indices
    ids = np.arange(fine.size).reshape(fine.shape)[inner].ravel()
    full = np.zeros((fine.size, fine.size))
    full[np.ix_(ids, ids)] = Qf
    full = full.reshape(fine.shape + fine.shape)
    out = restrict(full, fine, coarse)
    out = np.moveaxis(out, list(range(fine.d)), list(range(fine.d, 2 * fine.d)))
    out = restrict(out, fine, coarse)
    return out.reshape(coarse.size, coarse.size).T.copy()


def _stencil_matrix(spec: MollifierSpec, grid: Grid) -> np.ndarray:
    """Dense ``Phi[y, Z] = phi_eps(y - Z)`` (node density per unit mass)."""
    offs, vals = kernel_stencil(spec, grid)
    eye = np.eye(grid.size).reshape((grid.size,) + grid.shape)
    return smooth_masses(eye, spec, grid).reshape(grid.size, grid.size).T


def exact_moment_k2(f: GridField, t: float, eps, start="center", basis: SpectralBasis = None,
                    b=None, levels: int = 8, order: int = 6, profile: str = "bump",
                    return_error: bool = False, backend: str | None = None):
    """``E[<f, l_{eps,t}>^2; all tau_i > t b_i]``.

    ``p = 1`` uses a nested Gauss-Legendre rule over the two ordered slice
    times with the semigroup applied to fields.  ``p >= 2`` builds each
    motion's two-point occupation matrix (both time orderings) and needs a
    small fine grid.  The error estimate compares against a coarser rule.
    """
    if basis is None:
        raise ValueError("basis is required")
    coarse = f.grid
    p = coarse.domain.p
    spec = _spec(eps, profile)
    spec.check(coarse)
    xs = _starts(start, coarse, p)
    T = _horizons(t, b, p)

    def evaluate(lv, od):
        if p == 1:
            F = prolong(smooth_test_function(f, spec, backend).values, basis.grid, coarse)
            return _second_moment_p1(basis, T[0], xs[0], F, lv, od)
        Phi = _stencil_matrix(spec, coarse)
        fw = (f.values * coarse.weights).ravel()
        prod = np.ones((coarse.size, coarse.size))
        memo = {}
        for i in range(p):
            key = (tuple(xs[i]), T[i])
            if key not in memo:
                Q = two_point_matrix(basis, T[i], xs[i], coarse, lv, od)
                memo[key] = Phi @ Q @ Phi.T
            prod = prod * memo[key]
        return float(fw @ prod @ fw)

    value = evaluate(levels, order)
    if not return_error:
        return value
    rough = evaluate(max(levels - 2, 2), max(order - 2, 2))
    return value, abs(value - rough)


# --------------------------------------------------------------------------
# Monte Carlo

def jackknife(values: np.ndarray):
    """Mean and delete-one jackknife standard error."""
    y = np.asarray(values, dtype=float)
    n = len(y)
    if n == 0:
        raise EmptyEnsembleError("no samples")
    mean = float(y.mean())
    if n == 1:
        return mean, float("nan")
    loo = (y.sum() - y) / (n - 1)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return mean, se


def intersection_samples(ensemble: Ensemble, f: GridField, eps, profile: str = "bump",
                         backend: str | None = None) -> np.ndarray:
    """``<l_{eps,t}, f>`` per sampled path: zero when some motion was killed."""
    if ensemble.occupations is None:
        raise ValueError("ensemble carries no occupation measures")
    if f.grid != ensemble.grid:
        raise ValueError("test function and ensemble live on different grids")
    spec = _spec(eps, profile)
    out = np.zeros(ensemble.n_sampled)
    out[ensemble.accepted_mask] = intersection_integrals(ensemble.occupations, spec, ensemble.grid,
                                                         f, backend)
    return out


def moment_from_samples(values: np.ndarray, k: int):
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    return jackknife(np.asarray(values, dtype=float) ** k)


def mc_moment(k: int, f: GridField, t: float, eps, ensemble: Ensemble, profile: str = "bump",
              backend: str | None = None):
    """``(estimate, standard error)`` of ``E[<l_{eps,t}, f>^k; survival]``.

    Averages over *all* sampled paths with killed ones counting zero, so the
    estimate refers to the sub-probability.
    """
    if ensemble.n_sampled == 0 or ensemble.accepted == 0:
        raise EmptyEnsembleError("ensemble has no accepted samples")
    if not math.isclose(t, ensemble.cfg.t, rel_tol=1e-12):
        raise ValueError(f"t={t} does not match the ensemble horizon {ensemble.cfg.t}")
    return moment_from_samples(intersection_samples(ensemble, f, eps, profile, backend), k)


def streamed_samples(domain, grid: Grid, cfg: PathConfig, n_samples: int, tests, chunk: int = 4000,
                     start: int = 0, backend: str | None = None) -> np.ndarray:
    """Per-path intersection integrals for several ``(f, MollifierSpec)`` pairs, in chunks.

    Returns ``(len(tests), n_samples)``; memory stays bounded by ``chunk``.
    """
    out = np.zeros((len(tests), n_samples))
    for s0 in range(0, n_samples, chunk):
        m = min(chunk, n_samples - s0)
        ens = run_ensemble(domain, grid, cfg, m, start=start + s0, backend=backend)
        acc = ens.accepted_mask
        if not acc.any():
            continue
        for j, (f, spec) in enumerate(tests):
            out[j, s0:s0 + m][acc] = intersection_integrals(ens.occupations, spec, grid, f, backend)
    return out


__all__ = [
    "AuditRow", "CostCapError", "OccupancyMap", "QuadratureError", "audit", "exact_moment_k1",
    "exact_moment_k2", "first_moment_dual", "graded_rule", "intersection_samples", "jackknife",
    "mc_moment", "moment_from_samples", "occupation_mean", "phi_count_bound", "prolong",
    "psi_cardinality", "psi_enumerate", "restrict", "restriction_1d", "start_density",
    "streamed_samples", "two_point_matrix",
]
