"""Dirichlet spectrum of ``-1/2 Delta`` on a grid and the series built from it.

The finite-difference operator on a box is a Kronecker sum of 1D tridiagonal
matrices, so the default solver diagonalises the 1D factors exactly and forms
tensor products.  The factors are kept: they give the *full* discrete heat
semigroup ``exp(-s H)`` by separable transforms, which the moment oracles use.
A sparse shift-invert solver is available as an independent cross-check.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh_tridiagonal

from .geometry import Grid, GridField


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""


@dataclass(eq=False)
class SpectralBasis:
    """Smallest ``N`` eigenpairs of the discrete ``-1/2 Delta``.

    ``fields`` has shape ``(N, *grid.shape)`` and is L2-orthonormal under the
    trapezoid weights.  ``factors`` (tensor method only) holds, per axis, the
    1D eigenvalues and Euclidean-orthonormal eigenvectors on interior nodes.
    """

    grid: Grid
    eigenvalues: np.ndarray
    fields: np.ndarray
    factors: tuple | None = None
    modes: np.ndarray | None = None
    _integrals: np.ndarray | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return len(self.eigenvalues)

    def field(self, k: int) -> GridField:
        return GridField(self.fields[k], self.grid)

    @property
    def integrals(self) -> np.ndarray:
        """``int psi_n`` for each mode."""
        if self._integrals is None:
            w = self.grid.weights
            self._integrals = np.tensordot(self.fields, w, axes=self.grid.d)
        return self._integrals

    def sup_norms(self) -> np.ndarray:
        return np.abs(self.fields.reshape(self.N, -1)).max(axis=1)

    def tail_bound(self, s: float) -> float:
        """Crude bound ``exp(-s lambda_N) N max ||psi||_inf^2`` on the series tail."""
        return float(np.exp(-s * self.eigenvalues[-1]) * self.N * self.sup_norms().max() ** 2)

    def values_at(self, x) -> np.ndarray:
        """All eigenfields at point ``x`` by multilinear interpolation."""
        return _interp_stack(self.fields, self.grid, x)

    # exact discrete semigroup -------------------------------------------------

    @property
    def separable(self) -> bool:
        return self.factors is not None

    def semigroup(self, s: float, values: np.ndarray) -> np.ndarray:
        """``exp(-s H) v`` for node values ``v`` (boundary entries ignored).

        Uses the full separable basis when available, otherwise the truncated
        eigen-series.  Returns node values with zero boundary.
        """
        if s < 0:
            raise ValueError("semigroup time must be nonnegative")
        g = self.grid
        inner = g.interior_slice
        out = np.zeros(g.shape)
        if self.separable:
            u = np.asarray(values, dtype=float)[inner]
            lam = [f[0] for f in self.factors]
            vecs = [f[1] for f in self.factors]
            c = _apply_axes(u, [q.T for q in vecs])
            decay = np.exp(-s * _kron_sum(lam))
            out[inner] = _apply_axes(c * decay, vecs)
            return out
        coef = np.tensordot(self.fields, np.asarray(values) * g.weights, axes=g.d)
        return np.tensordot(coef * np.exp(-s * self.eigenvalues), self.fields, axes=1)

    def resolvent_apply(self, values: np.ndarray) -> np.ndarray:
        """``H^{-1} v`` (the discrete Green's operator), separable basis only."""
        if not self.separable:
            raise ValueError("resolvent needs the separable basis")
        g = self.grid
        inner = g.interior_slice
        lam = [f[0] for f in self.factors]
        vecs = [f[1] for f in self.factors]
        c = _apply_axes(np.asarray(values, dtype=float)[inner], [q.T for q in vecs])
        out = np.zeros(g.shape)
        out[inner] = _apply_axes(c / _kron_sum(lam), vecs)
        return out

    def survival(self, s: float) -> np.ndarray:
        """``S_s(z) = P_z(tau > s)`` at every node."""
        return self.semigroup(s, np.ones(self.grid.shape))


def _kron_sum(lams) -> np.ndarray:
    out = lams[0]
    for lam in lams[1:]:
        out = np.add.outer(out, lam)
    return out


def _apply_axes(u: np.ndarray, mats) -> np.ndarray:
    """Apply ``mats[j]`` along axis ``j`` of ``u``."""
    for j, m in enumerate(mats):
        u = np.moveaxis(np.tensordot(m, u, axes=([1], [j])), 0, j)
    return u


def _interp_weights(grid: Grid, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.d,):
        raise ValueError(f"point must have {grid.d} coordinates")
    lo = np.asarray(grid.domain.lower)
    hi = np.asarray(grid.domain.upper)
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise ValueError(f"point {x} outside the closed box")
    t = (np.clip(x, lo, hi) - lo) / grid.h
    i0 = np.minimum(np.floor(t).astype(int), grid.n - 1)
    frac = t - i0
    return i0, frac


def _interp_stack(stack: np.ndarray, grid: Grid, x) -> np.ndarray:
    """Multilinear interpolation of ``stack[..., *grid.shape]`` at ``x``."""
    i0, frac = _interp_weights(grid, x)
    d = grid.d
    lead = stack.shape[: stack.ndim - d]
    out = np.zeros(lead)
    for corner in range(2**d):
        bits = [(corner >> j) & 1 for j in range(d)]
        wgt = 1.0
        for j in range(d):
            wgt *= frac[j] if bits[j] else 1.0 - frac[j]
        if wgt == 0.0:
            continue
        idx = tuple(int(i0[j] + bits[j]) for j in range(d))
        out = out + wgt * stack[(Ellipsis,) + idx]
    return out


def interpolate(f: GridField, x) -> float:
    return float(_interp_stack(f.values, f.grid, x))


def neg_half_laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse ``-1/2 Delta_h`` on interior nodes (C order)."""
    mats = []
    for j in range(grid.d):
        m = grid.n - 1
        h = grid.h[j]
        mats.append(sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]) / h**2)
    out = None
    for j in range(grid.d):
        term = None
        for k in range(grid.d):
            blk = mats[j] if k == j else sp.identity(grid.n - 1)
            term = blk if term is None else sp.kron(term, blk)
        out = term if out is None else out + term
    return (0.5 * out).tocsr()


def _fix_signs(fields: np.ndarray) -> np.ndarray:
    flat = fields.reshape(len(fields), -1)
    idx = np.argmax(np.abs(flat), axis=1)
    sgn = np.sign(flat[np.arange(len(flat)), idx])
    sgn[sgn == 0] = 1.0
    return fields * sgn.reshape((-1,) + (1,) * (fields.ndim - 1))


def default_N(grid: Grid) -> int:
    return int(min(500, grid.n_interior // 4))


def dirichlet_eigs(grid: Grid, N: int | None = None, method: str = "tensor",
                   maxiter: int | None = None) -> SpectralBasis:
    """``N`` smallest eigenpairs of the finite-difference ``-1/2 Delta``."""
    if N is None:
        N = default_N(grid)
    N = int(N)
    if N < 1 or N > grid.n_interior:
        raise ValueError(f"N={N} must lie in [1, {grid.n_interior}]")
    if method == "tensor":
        return _eigs_tensor(grid, N)
    if method == "sparse":
        return _eigs_sparse(grid, N, maxiter)
    raise ValueError(f"unknown method {method!r}")


def tensor_factors(grid: Grid) -> tuple:
    """Per-axis eigenvalues and orthonormal eigenvectors of the 1D ``-1/2 d^2/dx^2``."""
    m = grid.n - 1
    factors = []
    for j in range(grid.d):
        h = grid.h[j]
        lam, vec = eigh_tridiagonal(np.full(m, 1.0 / h**2), np.full(m - 1, -0.5 / h**2))
        vec = vec * np.sign(vec[np.argmax(np.abs(vec), axis=0), np.arange(m)])
        factors.append((lam, vec))
    return tuple(factors)


def _eigs_tensor(grid: Grid, N: int) -> SpectralBasis:
    m = grid.n - 1
    factors = tensor_factors(grid)
    sums = _kron_sum([f[0] for f in factors]).ravel()
    order = np.argsort(sums, kind="stable")[:N]
    modes = np.stack(np.unravel_index(order, (m,) * grid.d), axis=1)
    scale = 1.0 / np.sqrt(grid.cell_volume)
    fields = np.zeros((N,) + grid.shape)
    inner = grid.interior_slice
    for k, mode in enumerate(modes):
        v = factors[0][1][:, mode[0]]
        for j in range(1, grid.d):
            v = np.multiply.outer(v, factors[j][1][:, mode[j]])
        fields[(k,) + inner] = v * scale
    fields = _fix_signs(fields)
    return SpectralBasis(grid, sums[order].copy(), fields, tuple(factors), modes)


def _start_vector(n: int) -> np.ndarray:
    # ARPACK's default start vector comes from a global stream; fix it so results are reproducible
    return np.random.default_rng(0x5EED).standard_normal(n)


def _eigs_sparse(grid: Grid, N: int, maxiter: int | None) -> SpectralBasis:
    H = neg_half_laplacian_matrix(grid)
    try:
        vals, vecs = spla.eigsh(H, k=N, sigma=0.0, which="LM", maxiter=maxiter,
                                v0=_start_vector(H.shape[0]))
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"eigsh did not converge: {exc}") from exc
    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    fields = np.zeros((N,) + grid.shape)
    inner = grid.interior_slice
    for k in range(N):
        fields[(k,) + inner] = vecs[:, k].reshape((grid.n - 1,) * grid.d) / np.sqrt(grid.cell_volume)
    return SpectralBasis(grid, vals, _fix_signs(fields))


def transition_density(basis: SpectralBasis, s: float, x, y) -> float:
    """Truncated killed heat kernel ``sum_n exp(-s lambda_n) psi_n(x) psi_n(y)``, clamped at 0."""
    if s <= 0:
        raise ValueError("transition density needs s > 0")
    px = basis.values_at(x)
    py = basis.values_at(y)
    return max(float(np.sum(np.exp(-s * basis.eigenvalues) * px * py)), 0.0)


def survival_probability(basis: SpectralBasis, s: float, x) -> float:
    """``P_x(tau > s)`` from the eigen-series ``sum exp(-s lambda) psi(x) int psi``."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    return float(np.sum(np.exp(-s * basis.eigenvalues) * basis.values_at(x) * basis.integrals))


def expected_exit_time(basis: SpectralBasis, x) -> float:
    """``E_x[tau] = sum psi_n(x) int psi_n / lambda_n``.

    With a separable basis the full discrete sum is used (an exact linear solve).
    """
    if basis.separable:
        u = basis.resolvent_apply(np.ones(basis.grid.shape))
        return interpolate(GridField(u, basis.grid), x)
    return float(np.sum(basis.values_at(x) * basis.integrals / basis.eigenvalues))


def green_function(basis: SpectralBasis, x, y) -> float:
    """Truncated Green's function ``sum psi_n(x) psi_n(y) / lambda_n``.

    Warns when the change over the upper half of the modes exceeds 1% of the
    value (a practical tail estimate; the series converges slowly in d >= 2).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.allclose(x, y, rtol=0, atol=1e-14):
        raise ValueError("Green's function is singular on the diagonal")
    terms = basis.values_at(x) * basis.values_at(y) / basis.eigenvalues
    value = float(terms.sum())
    tail = abs(float(terms[basis.N // 2:].sum()))
    if value != 0 and tail > 0.01 * abs(value):
        warnings.warn(f"Green's function tail estimate {tail:.3g} exceeds 1% of value {value:.3g}",
                      RuntimeWarning, stacklevel=2)
    return value


def truncated_green(basis: SpectralBasis, delta: float, x, y) -> float:
    """``G_delta(x, y) = int_0^delta p_s(x, y) ds`` from the eigen-series."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    lam = basis.eigenvalues
    return float(np.sum(-np.expm1(-delta * lam) / lam * basis.values_at(x) * basis.values_at(y)))


def green_complement(basis: SpectralBasis, delta: float, x, y) -> float:
    """``sum exp(-delta lambda) / lambda psi(x) psi(y)``, so that ``G = G_delta + this``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    lam = basis.eigenvalues
    return float(np.sum(np.exp(-delta * lam) / lam * basis.values_at(x) * basis.values_at(y)))


def weyl_slope(basis: SpectralBasis, index_range=(20, 200)) -> float:
    """Least-squares slope of ``log lambda_n`` against ``log n`` over ``[a, b]`` (1-based)."""
    a, b = (int(v) for v in index_range)
    if a < 1 or b > basis.N or b - a + 1 < 20:
        raise ValueError(f"range [{a}, {b}] must sit in [1, {basis.N}] with at least 20 points")
    lam = basis.eigenvalues[a - 1:b]
    if np.ptp(lam) <= 1e-12 * abs(lam[0]):
        raise ValueError("eigenvalue sequence is constant; basis looks malformed")
    n = np.arange(a, b + 1, dtype=float)
    slope, _ = np.polyfit(np.log(n), np.log(lam), 1)
    return float(slope)


def schroedinger_ground_state(grid: Grid, f, maxiter: int | None = None):
    """Principal eigenpair of ``1/2 Delta_h + f`` with zero boundary data.

    Returns ``(value, psi)`` with ``psi`` L2-normalised, nonnegative.
    """
    fv = f.values if isinstance(f, GridField) else np.asarray(f, dtype=float) * np.ones(grid.shape)
    if not np.all(np.isfinite(fv)):
        raise ValueError("potential must be finite")
    H = neg_half_laplacian_matrix(grid) - sp.diags(fv[grid.interior_slice].ravel())
    sigma = -float(fv[grid.interior_slice].max()) - 1.0
    try:
        vals, vecs = spla.eigsh(H.tocsc(), k=1, sigma=sigma, which="LM", maxiter=maxiter,
                                v0=_start_vector(H.shape[0]))
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"principal eigenvalue did not converge: {exc}") from exc
    psi = np.zeros(grid.shape)
    v = vecs[:, 0]
    if v.sum() < 0:
        v = -v
    psi[grid.interior_slice] = v.reshape((grid.n - 1,) * grid.d) / np.sqrt(grid.cell_volume)
    return -float(vals[0]), GridField(psi, grid)


def schroedinger_principal(grid: Grid, f) -> float:
    """Largest eigenvalue of ``1/2 Delta_h + f``."""
    return schroedinger_ground_state(grid, f)[0]
