"""Rate functionals of Donsker-Varadhan type and their minimisation on grid fields.

All solvers work on interior node vectors in C order.  With ``H`` the sparse
``-1/2 Delta_h`` and ``vol`` the cell volume, the discrete Dirichlet energy is
``E(v) = 2 vol v.Hv``, which equals :func:`geometry.grad_sq_sum` on the padded
field.  Constrained problems use a Sobolev-preconditioned projected gradient
flow with a Newton retraction and backtracking; ``theta`` uses the nonlinear
inverse power method, which decreases the Rayleigh ratio monotonically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .geometry import CompactSubset, DomainSpec, Grid, GridField, GridMeasure, grad_sq_sum, make_grid
from .mollify import MollifierSpec, smooth_masses
from .spectral import ConvergenceError, neg_half_laplacian_matrix, schroedinger_ground_state

MASS_TOL = 1e-6
BOUNDARY_TOL = 1e-12


class InfiniteValue(float):
    """``+inf`` carrying the reason it is infinite.

    Addition and multiplication by nonnegative numbers saturate; ordering is
    that of ``float('inf')``.
    """

    def __new__(cls, reason: str = ""):
        obj = float.__new__(cls, math.inf)
        obj.reason = reason
        return obj

    def __add__(self, other):
        return InfiniteValue(self.reason)

    __radd__ = __add__

    def __mul__(self, other):
        if float(other) < 0:
            raise ValueError("InfiniteValue only scales by nonnegative factors")
        return InfiniteValue(self.reason)

    __rmul__ = __mul__

    def __repr__(self):
        return f"InfiniteValue({self.reason!r})"

    def __reduce__(self):
        return (InfiniteValue, (self.reason,))


def is_infinite(x) -> bool:
    return math.isinf(float(x))


@dataclass(eq=False)
class DensityDecomposition:
    """Fields ``psi_i`` with weights ``b_i``."""

    fields: list
    weights: np.ndarray

    def __post_init__(self):
        self.fields = list(self.fields)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.fields) != len(self.weights):
            raise ValueError("need one weight per field")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")

    @property
    def p(self) -> int:
        return len(self.fields)

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    def energies(self) -> np.ndarray:
        return np.array([grad_sq_sum(f.values, f.grid.h) for f in self.fields])

    def value(self) -> float:
        """``1/2 sum_i b_i ||grad psi_i||^2``."""
        return 0.5 * float(np.dot(self.weights, self.energies()))

    def norms(self) -> np.ndarray:
        return np.array([math.sqrt(float(np.sum(f.values**2 * f.grid.weights))) for f in self.fields])

    def product(self) -> np.ndarray:
        out = np.ones(self.grid.shape)
        for f in self.fields:
            out = out * f.values**2
        return out

    def max_pairwise_distance(self) -> float:
        """Largest L2 distance between two fields (diagnostic only)."""
        w = self.grid.weights
        best = 0.0
        for i in range(self.p):
            for j in range(i + 1, self.p):
                diff = self.fields[i].values - self.fields[j].values
                best = max(best, math.sqrt(float(np.sum(diff * diff * w))))
        return best


@dataclass(eq=False)
class RateResult:
    value: float
    minimizer: DensityDecomposition | None
    iterations: int = 0
    grad_norm: float = 0.0
    converged: bool = True
    restart: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def finite(self) -> bool:
        return not is_infinite(self.value)

    @property
    def reason(self) -> str | None:
        return getattr(self.value, "reason", None)

    def recompute(self) -> float:
        if self.minimizer is None:
            return float(self.value)
        return self.minimizer.value()

    def to_record(self) -> dict:
        rec = {
            "value": None if not self.finite else float(self.value),
            "infinite_reason": self.reason,
            "iterations": int(self.iterations),
            "grad_norm": float(self.grad_norm),
            "converged": bool(self.converged),
            "restart": int(self.restart),
        }
        if self.minimizer is not None:
            rec["weights"] = [float(b) for b in self.minimizer.weights]
        for k, v in self.diagnostics.items():
            if isinstance(v, (int, float, str, bool)) or v is None:
                rec[k] = v
        return rec


def _infinite(reason: str, **diag) -> RateResult:
    return RateResult(InfiniteValue(reason), None, converged=True, diagnostics=dict(diag))


class _Ops:
    """Interior-vector operators on one grid."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.vol = float(grid.cell_volume)
        self.H = neg_half_laplacian_matrix(grid)
        self.m = grid.n_interior
        self.ishape = (grid.n - 1,) * grid.d

    @cached_property
    def lu_H(self):
        return spla.splu(self.H.tocsc())

    @cached_property
    def lu_K(self):
        return spla.splu((self.H + sp.identity(self.m)).tocsc())

    def vec(self, values: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(values[self.grid.interior_slice]).ravel()

    def pad(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        out[self.grid.interior_slice] = v.reshape(self.ishape)
        return out

    def field(self, v: np.ndarray) -> GridField:
        return GridField(self.pad(v), self.grid)

    def energy(self, v: np.ndarray) -> float:
        return 2.0 * self.vol * float(v @ (self.H @ v))

    def norm2(self, v: np.ndarray) -> float:
        return self.vol * float(v @ v)

    def precond(self, g: np.ndarray) -> np.ndarray:
        """``K^{-1} g`` with ``K = vol (H + I)``, columnwise for 2D input."""
        return self.lu_K.solve(np.asarray(g, dtype=float)) / self.vol

    def smooth_directions(self, rng: np.random.Generator, k: int, modes: int = 4) -> np.ndarray:
        """``k`` random combinations of low sine modes, unit L2 norm, as rows."""
        g = self.grid
        out = np.zeros((k, self.m))
        ax = [g.axes[j][1:-1] - g.domain.lower[j] for j in range(g.d)]
        lens = [g.domain.upper[j] - g.domain.lower[j] for j in range(g.d)]
        for r in range(k):
            acc = np.zeros(self.ishape)
            for idx in np.ndindex(*(modes,) * g.d):
                term = rng.standard_normal() / (1.0 + sum(idx))
                for j in range(g.d):
                    shape = [1] * g.d
                    shape[j] = -1
                    term = term * np.sin((idx[j] + 1) * np.pi * ax[j] / lens[j]).reshape(shape)
                acc = acc + term
            v = acc.ravel()
            out[r] = v / math.sqrt(self.norm2(v))
        return out


def _ops(grid: Grid) -> _Ops:
    cache = _OPS_CACHE
    key = (grid.domain, grid.n)
    if key not in cache:
        if len(cache) > 8:
            cache.clear()
        cache[key] = _Ops(grid)
    return cache[key]


_OPS_CACHE: dict = {}


# ---------------------------------------------------------------------------
# generic constrained flow


@dataclass
class _FlowResult:
    x: np.ndarray
    value: float
    iterations: int
    grad_norm: float
    converged: bool
    history: list


def _retract(x, cons, jac, precond, tol=1e-13, max_iter=30):
    """Newton projection onto ``cons(x) = 0`` along ``K^{-1} C``; returns (x, ok)."""
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            c = cons(x)
        if c.size == 0 or np.max(np.abs(c)) <= tol:
            return x, True
        if not np.all(np.isfinite(c)):
            return x, False
        with np.errstate(over="ignore", invalid="ignore"):
            C = jac(x)
            KC = precond(C)
            G = C.T @ KC
            if not (np.all(np.isfinite(G)) and np.all(np.isfinite(KC))):
                return x, False
            lam = np.linalg.lstsq(G, c, rcond=None)[0]
            x = x - KC @ lam
    with np.errstate(over="ignore", invalid="ignore"):
        c = cons(x)
    return x, bool(np.all(np.isfinite(c)) and np.max(np.abs(c)) <= 1e3 * tol)


def _no_cons(x):
    return np.zeros(0)


def _manifold_flow(x0, f, grad, precond, cons=_no_cons, jac=None, tol_rel=1e-6, tol_abs=1e-13,
                   max_iter=20000, eta0=1.0) -> _FlowResult:
    """Projected, preconditioned gradient descent with retraction and backtracking.

    The gradient norm is the dual norm ``sqrt(-g.d)`` of the projected direction.
    Converged when it falls below ``tol_rel`` times its initial value (or ``tol_abs``).
    """
    has_cons = cons is not _no_cons
    x = np.array(x0, dtype=float)
    fx = f(x)
    eta = eta0
    g0 = None
    gnorm = math.inf
    history = [fx]
    it = 0
    for it in range(1, max_iter + 1):
        g = grad(x)
        Kg = precond(g)
        if has_cons:
            C = jac(x)
            KC = precond(C)
            lam = np.linalg.lstsq(C.T @ KC, C.T @ Kg, rcond=None)[0]
            d = -(Kg - KC @ lam)
        else:
            d = -Kg
        slope = float(g @ d)
        gnorm = math.sqrt(max(-slope, 0.0))
        if g0 is None:
            g0 = gnorm
        if gnorm <= max(tol_rel * g0, tol_abs):
            return _FlowResult(x, fx, it - 1, gnorm, True, history)
        accepted = False
        while eta > 1e-14:
            xn = x + eta * d
            ok = True
            if has_cons:
                xn, ok = _retract(xn, cons, jac, precond)
            if ok:
                fn = f(xn)
                if np.isfinite(fn) and fn <= fx + 1e-4 * eta * slope:
                    accepted = True
                    break
            eta *= 0.5
        if not accepted:
            # no descent possible at machine precision: stationary to rounding
            return _FlowResult(x, fx, it, gnorm, gnorm <= 1e-6 * max(g0, 1.0) or fx == history[-1], history)
        x, fx = xn, fn
        history.append(fx)
        eta = min(eta * 2.0, 1e6)
    return _FlowResult(x, fx, it, gnorm, False, history)


# ---------------------------------------------------------------------------
# Donsker-Varadhan


def _check_probability(mu: GridMeasure, tol: float = MASS_TOL) -> None:
    if abs(mu.total - 1.0) > tol:
        raise ValueError(f"measure has total mass {mu.total:.12g}, expected 1")


def dv_rate(mu: GridMeasure) -> float:
    """``1/2 ||grad sqrt(dmu/dx)||^2``, or an infinite sentinel with boundary mass."""
    _check_probability(mu)
    if mu.boundary_mass() > BOUNDARY_TOL:
        return InfiniteValue("mass on boundary nodes: sqrt density is not in H^1_0")
    root = np.sqrt(mu.density().values)
    return 0.5 * grad_sq_sum(root, mu.grid.h)


def _normalize(ops: _Ops, v: np.ndarray) -> np.ndarray:
    v = v / math.sqrt(ops.norm2(v))
    return v if v.sum() >= 0 else -v


def minimize_dv(grid: Grid, method: str = "inverse", init: GridField | None = None, seed: int = 0,
                noise: float = 1e-3, tol: float = 1e-6, max_iter: int | None = None) -> RateResult:
    """Minimise ``psi -> 1/2 ||grad psi||^2`` over ``||psi||_2 = 1``.

    ``method="l2"`` is the explicit normalised flow ``psi <- normalize(psi - eta H psi)``
    with backtracking from ``eta = 0.1 h^2``; ``"inverse"`` replaces the explicit step
    by ``psi <- normalize(H^{-1} psi)`` (the same flow in the H^{-1} metric), which
    converges in a number of steps independent of ``h``.  A seeded perturbation of
    relative size ``noise`` is added to ``init`` so that saddle starts are left.
    Converged when the residual ``||H psi - q psi||`` drops below ``tol`` times its
    initial value, ``q`` the Rayleigh quotient.
    """
    if method not in ("inverse", "l2"):
        raise ValueError("method must be 'inverse' or 'l2'")
    ops = _ops(grid)
    rng = np.random.default_rng(seed)
    if init is None:
        x = np.ones(ops.m)
    else:
        x = ops.vec(init.values).copy()
    x = x / math.sqrt(ops.norm2(x))
    x = x + noise * ops.smooth_directions(rng, 1, modes=6)[0] + noise * rng.standard_normal(ops.m)
    x = _normalize(ops, x)
    if max_iter is None:
        max_iter = 2000 if method == "inverse" else 2_000_000

    def resid(v):
        Hv = ops.H @ v
        q = float(v @ Hv) / float(v @ v)
        r = Hv - q * v
        return q, math.sqrt(ops.norm2(r))

    q, r0 = resid(x)
    r = r0
    eta = 0.1 * float(np.min(grid.h)) ** 2
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if method == "inverse":
            x = _normalize(ops, ops.lu_H.solve(x))
        else:
            while True:
                y = _normalize(ops, x - eta * (ops.H @ x))
                qn = float(y @ (ops.H @ y)) / float(y @ y)
                if qn <= q or eta < 1e-300:
                    break
                eta *= 0.5
            x = y
        q, r = resid(x)
        if r <= tol * r0:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"minimize_dv did not converge in {max_iter} iterations (residual {r:.3g})")
    psi = ops.field(x)
    dec = DensityDecomposition([psi], [1.0])
    return RateResult(dec.value(), dec, it, r, True, diagnostics={"method": method})


# ---------------------------------------------------------------------------
# Theta_B(U) and chi_B


def _u_weights(ops: _Ops, U: CompactSubset) -> np.ndarray:
    return ops.vec(ops.grid.box_weights(U))


def theta_ratio(ops: _Ops, wU: np.ndarray, p: int, x: np.ndarray) -> float:
    """``(p/2) E(x) / (sum_U w x^{2p})^{1/p}``."""
    den = float(np.sum(wU * np.abs(x) ** (2 * p)))
    return 0.5 * p * ops.energy(x) / den ** (1.0 / p)


def theta(domain: DomainSpec, U: CompactSubset, p: int | None = None, n: int = 64,
          grid: Grid | None = None, init: GridField | None = None, tol: float = 1e-6,
          max_iter: int = 20000) -> RateResult:
    """``inf (p/2) ||grad phi||^2`` over ``phi in H^1_0(B)`` with ``||1_U phi||_{2p} = 1``.

    Nonlinear inverse power iteration ``phi <- H^{-1}(w_U phi^{2p-1})`` followed by
    renormalisation; each step does not increase the ratio.  The ``U`` norm uses
    trapezoid weights of the box.  ``init`` allows warm starts.

    The minimizer is returned as ``p`` copies of ``phi/||phi||_2`` with weights
    ``||phi||_2^2``, so that its value reproduces ``(p/2) ||grad phi||^2``.
    """
    p = domain.p if p is None else int(p)
    if p < 1:
        raise ValueError("p must be positive")
    U.check_inside(domain)
    grid = make_grid(domain, n) if grid is None else grid
    if grid.domain != domain:
        raise ValueError("grid does not belong to domain")
    ops = _ops(grid)
    wU = _u_weights(ops, U)
    if not np.any(wU > 0):
        raise ValueError("U contains no grid nodes")
    wr = wU / ops.vol
    x = ops.lu_H.solve(wr) if init is None else np.abs(ops.vec(init.values))

    def norm_u(v):
        return float(np.sum(wU * v ** (2 * p))) ** (1.0 / (2 * p))

    def residual(v):
        Hv = ops.H @ v
        s = wr * v ** (2 * p - 1)
        mu = float(v @ Hv) / float(v @ s)
        return math.sqrt(ops.norm2(Hv - mu * s)) / math.sqrt(ops.norm2(Hv))

    x = np.abs(x) / norm_u(np.abs(x))
    val = theta_ratio(ops, wU, p, x)
    r0 = residual(x)
    r = r0
    history = [val]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        y = ops.lu_H.solve(wr * x ** (2 * p - 1))
        y = np.maximum(y, 0.0)
        x = y / norm_u(y)
        val = theta_ratio(ops, wU, p, x)
        history.append(val)
        r = residual(x)
        if r <= tol * max(r0, 1.0) and abs(history[-2] - val) <= 1e-14 * val:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"theta did not converge in {max_iter} iterations (residual {r:.3g})")
    phi = ops.field(x)
    b = ops.norm2(x)
    psi = ops.field(x / math.sqrt(b))
    dec = DensityDecomposition([psi] * p, [b] * p)
    res = RateResult(dec.value(), dec, it, r, True,
                     diagnostics={"monotone": bool(np.all(np.diff(history) <= 1e-12 * history[0]))})
    res.phi = phi
    return res


def _power_init(ops: _Ops, p: int):
    """Feasible start for chi: ``psi^gamma`` of the ground state with both norms equal to 1."""
    x = _normalize(ops, ops.lu_H.solve(np.ones(ops.m)))
    for _ in range(50):
        x = _normalize(ops, ops.lu_H.solve(x))

    def shaped(gamma):
        y = x**gamma
        return y / math.sqrt(ops.norm2(y))

    def gap(gamma):
        y = shaped(gamma)
        return math.log(ops.vol * float(np.sum(y ** (2 * p))))

    lo, hi = 1e-3, 1.0
    while gap(hi) < 0:
        hi *= 2.0
        if hi > 1e3:
            raise ValueError("could not bracket the power-map initialisation")
    while gap(lo) > 0:
        lo *= 0.5
        if lo < 1e-12:
            raise ValueError("could not bracket the power-map initialisation")
    gamma = brentq(gap, lo, hi, xtol=1e-14)
    return shaped(gamma)


def chi_B(domain: DomainSpec, p: int | None = None, n: int = 64, grid: Grid | None = None,
          tol: float = 1e-6, max_iter: int = 20000) -> RateResult:
    """``inf (p/2) ||grad psi||^2`` over ``psi in H^1_0(B)`` with ``||psi||_2 = ||psi||_{2p} = 1``.

    By Hoelder ``||psi||_{2p} >= |B|^{1/(2p)-1/2} ||psi||_2`` with equality only for
    constants, so the constraint set is empty when ``|B| <= 1``; an infinite
    sentinel is returned in that case.
    """
    p = domain.p if p is None else int(p)
    if p < 2:
        raise ValueError("chi_B needs p >= 2")
    if domain.volume <= 1.0 + 1e-12:
        return _infinite("constraint set empty: |B| <= 1 forces ||psi||_{2p} > ||psi||_2 for psi in H^1_0")
    grid = make_grid(domain, n) if grid is None else grid
    ops = _ops(grid)
    x0 = _power_init(ops, p)

    def f(x):
        return 0.5 * p * ops.energy(x)

    def grad(x):
        return 2.0 * p * ops.vol * (ops.H @ x)

    def cons(x):
        return np.array([ops.vol * float(x @ x) - 1.0, ops.vol * float(np.sum(np.abs(x) ** (2 * p))) - 1.0])

    def jac(x):
        return np.column_stack([2.0 * ops.vol * x, 2.0 * p * ops.vol * np.sign(x) * np.abs(x) ** (2 * p - 1)])

    x0, ok = _retract(x0, cons, jac, ops.precond)
    if not ok:
        raise ConvergenceError("chi_B: could not project the initial field onto the constraints")
    fl = _manifold_flow(x0, f, grad, ops.precond, cons, jac, tol_rel=tol, max_iter=max_iter, eta0=0.1)
    if not fl.converged:
        raise ConvergenceError(f"chi_B did not converge (gradient norm {fl.grad_norm:.3g})")
    psi = ops.field(fl.x)
    dec = DensityDecomposition([psi] * p, [1.0] * p)
    c = cons(fl.x)
    return RateResult(dec.value(), dec, fl.iterations, fl.grad_norm, True,
                      diagnostics={"l2_residual": float(c[0]), "l2p_residual": float(c[1])})


# ---------------------------------------------------------------------------
# I(mu; b) and J(mu): product-constrained decompositions


class _ProductParam:
    """``psi_i^2 = a exp(u_i)`` on the support of ``a``, ``u_p = -sum_{i<p} u_i``.

    The product ``prod_i psi_i^2 = a^p`` holds exactly for every ``u``.
    Free variables are the ``p-1`` blocks ``u_1..u_{p-1}`` stacked.
    """

    def __init__(self, ops: _Ops, a: np.ndarray, p: int, b: np.ndarray, normalized: bool):
        self.ops = ops
        self.a = a
        self.p = p
        self.b = b
        self.normalized = normalized
        self.S = np.flatnonzero(a > 0)
        self.k = self.S.size
        self.aS = a[self.S]
        self._K = (ops.H[self.S][:, self.S] + sp.identity(self.k)).tocsc()
        self._K.sort_indices()
        self._cols = np.repeat(np.arange(self.k), np.diff(self._K.indptr))
        self._rows = self._K.indices
        self.refresh_every = 5
        self.refresh(np.zeros((p - 1) * self.k))

    def split(self, z: np.ndarray) -> np.ndarray:
        u = np.empty((self.p, self.k))
        u[:-1] = z.reshape(self.p - 1, self.k)
        u[-1] = -u[:-1].sum(axis=0)
        return u

    def fields(self, z: np.ndarray) -> np.ndarray:
        u = self.split(z)
        out = np.zeros((self.p, self.ops.m))
        out[:, self.S] = np.sqrt(self.aS * np.exp(u))
        return out

    def objective(self, z: np.ndarray) -> float:
        psi = self.fields(z)
        return 0.5 * float(sum(self.b[i] * self.ops.energy(psi[i]) for i in range(self.p)))

    def gradient(self, z: np.ndarray) -> np.ndarray:
        psi = self.fields(z)
        vol = self.ops.vol
        t = np.array([self.b[i] * vol * (self.ops.H @ psi[i])[self.S] * psi[i][self.S] for i in range(self.p)])
        return (t[:-1] - t[-1]).ravel()

    def cons(self, z: np.ndarray) -> np.ndarray:
        u = self.split(z)
        return self.ops.vol * np.sum(self.aS * np.exp(u), axis=1) - 1.0

    def jac(self, z: np.ndarray) -> np.ndarray:
        u = self.split(z)
        vol = self.ops.vol
        C = np.zeros(((self.p - 1) * self.k, self.p))
        last = -vol * self.aS * np.exp(u[-1])
        for i in range(self.p - 1):
            blk = slice(i * self.k, (i + 1) * self.k)
            C[blk, i] = vol * self.aS * np.exp(u[i])
            C[blk, -1] = last
        return C

    def refresh(self, z: np.ndarray) -> None:
        """Rebuild the metric at ``z``: block ``i`` is ``D_i (H+I) D_i + D_p (H+I) D_p``.

        ``D_j = diag(psi_j)/2`` is the Jacobian of ``psi_j`` in ``u_j``, so this is
        the Sobolev metric pulled back to the ``u`` variables (cross blocks dropped).
        """
        psi = 0.5 * self.fields(z)[:, self.S]
        K = self._K
        last = K.data * psi[-1][self._rows] * psi[-1][self._cols]
        self._lus = []
        for i in range(self.p - 1):
            data = K.data * psi[i][self._rows] * psi[i][self._cols] + last
            M = sp.csc_matrix((data, K.indices, K.indptr), shape=K.shape)
            shift = 1e-10 * float(M.diagonal().max())
            self._lus.append(spla.splu((M + shift * sp.identity(self.k, format="csc")).tocsc()))
        self._age = 0

    def gradient_refresh(self, z: np.ndarray) -> np.ndarray:
        # the metric only needs to be roughly right; rebuilding it every few steps is enough
        self._age += 1
        if self._age >= self.refresh_every:
            self.refresh(z)
        return self.gradient(z)

    def precond(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        squeeze = g.ndim == 1
        G = g.reshape(self.p - 1, self.k, -1)
        out = np.stack([self._lus[i].solve(np.ascontiguousarray(G[i])) for i in range(self.p - 1)])
        out = out.reshape((self.p - 1) * self.k, -1) / self.ops.vol
        return out[:, 0] if squeeze else out

    def from_fields(self, fields: Sequence[np.ndarray]) -> np.ndarray | None:
        """Free variables of a decomposition whose fields are positive on the support."""
        vals = np.array([f[self.S] for f in fields])
        if np.any(vals <= 0):
            return None
        u = np.log(vals**2 / self.aS)
        u = u - u.mean(axis=0)
        return u[:-1].ravel()

    def decomposition(self, z: np.ndarray) -> DensityDecomposition:
        psi = self.fields(z)
        if self.normalized:
            return DensityDecomposition([self.ops.field(v) for v in psi], self.b)
        norms = np.array([self.ops.norm2(v) for v in psi])
        return DensityDecomposition([self.ops.field(v / math.sqrt(s)) for v, s in zip(psi, norms)], norms)

    def random_start(self, rng, amplitude: float) -> np.ndarray:
        dirs = self.ops.smooth_directions(rng, self.p - 1, modes=3)
        dirs = dirs / np.max(np.abs(dirs), axis=1, keepdims=True)
        return amplitude * dirs[:, self.S].ravel()


def _best_of(results: list) -> RateResult:
    best = None
    for r in results:
        if best is None or r.value < best.value - 1e-15:
            best = r
    best.diagnostics["start_values"] = [float(r.value) for r in results]
    best.diagnostics["start_converged"] = [bool(r.converged) for r in results]
    return best


def rate_I(mu: GridMeasure, b=None, p: int | None = None, init: Sequence | None = None,
           n_restarts: int = 3, seed: int = 0, tol: float = 1e-6, max_iter: int = 20000) -> RateResult:
    """``inf 1/2 sum_i b_i ||grad psi_i||^2`` over ``||psi_i||_2 = 1`` and ``prod psi_i^2 = dmu/dx``.

    The product constraint is built into the parameterisation
    ``psi_i^2 = g^{1/p} exp(u_i)`` with ``sum_i u_i = 0``; the normalisations are
    kept by retraction.  Feasibility needs ``int g^{1/p} <= 1`` (AM-GM) and no mass on
    boundary nodes.  When ``int g^{1/p} = 1`` the symmetric split is the only point.

    ``init`` lists candidate decompositions (sequences of fields, or
    :class:`DensityDecomposition` whose fields are used as given); each is
    projected onto the constraints and used as a start, so the result never
    exceeds a feasible candidate.  ``n_restarts`` random smooth starts are added.
    """
    b = np.ones(p if p is not None else 2) if b is None else np.asarray(b, dtype=float)
    p = len(b) if p is None else int(p)
    if p < 2:
        raise ValueError("rate_I needs p >= 2")
    if len(b) != p or np.any(b <= 0):
        raise ValueError("b must hold p positive weights")
    if not mu.total > 0:
        raise ValueError("mu must have positive mass")
    if mu.boundary_mass() > BOUNDARY_TOL:
        return _infinite("mass on boundary nodes: factors cannot vanish on the boundary")
    ops = _ops(mu.grid)
    g = ops.vec(mu.density().values)
    a = g ** (1.0 / p)
    s = ops.vol * float(a.sum())
    if s > 1.0 + 1e-10:
        return _infinite("normalisation infeasible: int g^{1/p} > 1", int_g_1p=s)
    par = _ProductParam(ops, a, p, b, normalized=True)
    if abs(s - 1.0) <= 1e-10:
        z = np.zeros((p - 1) * par.k)
        dec = DensityDecomposition([ops.field(v) for v in par.fields(z) / math.sqrt(s)], b)
        return RateResult(dec.value(), dec, 0, 0.0, True, diagnostics={"int_g_1p": s, "symmetric_only": True})

    starts = []
    for cand in init or []:
        fields = [ops.vec(f.values) for f in cand.fields] if isinstance(cand, DensityDecomposition) \
            else [ops.vec(f.values if isinstance(f, GridField) else np.asarray(f)) for f in cand]
        z = par.from_fields(fields)
        if z is not None:
            starts.append(("candidate", z))
    rng = np.random.default_rng(seed)
    for _ in range(n_restarts):
        starts.append(("random", par.random_start(rng, 1.0)))

    results = []
    for idx, (kind, z0) in enumerate(starts):
        z = None
        amp = 1.0
        for _ in range(6):
            par.refresh(z0 * amp)
            z, ok = _retract(z0 * amp, par.cons, par.jac, par.precond, tol=1e-12, max_iter=60)
            if ok:
                break
            if kind == "candidate":
                break
            amp *= 2.0
        if not ok:
            continue
        par.refresh(z)
        fl = _manifold_flow(z, par.objective, par.gradient_refresh, par.precond, par.cons, par.jac,
                            tol_rel=tol, max_iter=max_iter)
        dec = par.decomposition(fl.x)
        results.append(RateResult(dec.value(), dec, fl.iterations, fl.grad_norm, fl.converged, idx,
                                  diagnostics={"start": kind, "int_g_1p": s,
                                               "constraint_residual": float(np.max(np.abs(par.cons(fl.x)))),
                                               "max_pairwise_distance": dec.max_pairwise_distance()}))
    if not results:
        raise ConvergenceError("rate_I: no start could be projected onto the normalisation constraints")
    return _best_of(results)


def rate_J(mu: GridMeasure, U: CompactSubset, p: int = 2, init: Sequence | None = None,
           n_restarts: int = 3, seed: int = 0, tol: float = 1e-6, max_iter: int = 20000) -> RateResult:
    """``inf 1/2 sum_i ||grad phi_i||^2`` over ``phi_i in H^1_0`` with ``prod phi_i^2 = dmu/dx``.

    No normalisation of the factors.  ``mu`` must give ``U`` mass 1.  Starts:
    the symmetric split ``phi_i = g^{1/(2p)}``, caller candidates, random restarts.
    The minimizer is reported as normalised fields with weights ``||phi_i||_2^2``.
    """
    if p < 2:
        raise ValueError("rate_J needs p >= 2")
    mU = mu.restricted_mass(U)
    if abs(mU - 1.0) > MASS_TOL:
        raise ValueError(f"mu(U) = {mU:.12g}, expected 1")
    if mu.boundary_mass() > BOUNDARY_TOL:
        return _infinite("mass on boundary nodes: factors cannot vanish on the boundary")
    ops = _ops(mu.grid)
    g = ops.vec(mu.density().values)
    a = g ** (1.0 / p)
    par = _ProductParam(ops, a, p, np.ones(p), normalized=False)
    starts = [("symmetric", np.zeros((p - 1) * par.k))]
    for cand in init or []:
        fields = [ops.vec(f.values) * math.sqrt(w) for f, w in zip(cand.fields, cand.weights)] \
            if isinstance(cand, DensityDecomposition) \
            else [ops.vec(f.values if isinstance(f, GridField) else np.asarray(f)) for f in cand]
        z = par.from_fields(fields)
        if z is not None:
            starts.append(("candidate", z))
    rng = np.random.default_rng(seed)
    for _ in range(n_restarts):
        starts.append(("random", par.random_start(rng, 0.5)))
    results = []
    for idx, (kind, z0) in enumerate(starts):
        par.refresh(z0)
        fl = _manifold_flow(z0, par.objective, par.gradient_refresh, par.precond, tol_rel=tol, max_iter=max_iter)
        dec = par.decomposition(fl.x)
        results.append(RateResult(dec.value(), dec, fl.iterations, fl.grad_norm, fl.converged, idx,
                                  diagnostics={"start": kind, "max_pairwise_distance": dec.max_pairwise_distance()}))
    return _best_of(results)


# ---------------------------------------------------------------------------
# I with given marginals, and its smoothed version


def rate_I_full(mu: GridMeasure, mus: Sequence[GridMeasure], b, *, tol: float) -> float:
    """``1/2 sum b_i ||grad psi_i||^2`` for ``psi_i = sqrt(dmu_i/dx)`` if the tuple is compatible.

    Compatibility, each to the explicit relative tolerance ``tol``: unit masses,
    no boundary mass, and ``prod psi_i^2 = dmu/dx`` in sup norm relative to ``max dmu/dx``.
    """
    b = np.asarray(b, dtype=float)
    if len(b) != len(mus) or np.any(b <= 0):
        raise ValueError("need one positive weight per marginal")
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = mu.grid
    for m in mus:
        if m.grid != grid:
            raise ValueError("marginals live on a different grid")
    for i, m in enumerate(mus):
        if abs(m.total - 1.0) > tol:
            return InfiniteValue(f"marginal {i} has mass {m.total:.6g}, not 1")
        if m.boundary_mass() > BOUNDARY_TOL:
            return InfiniteValue(f"marginal {i} charges boundary nodes")
    prod = np.ones(grid.shape)
    for m in mus:
        prod = prod * m.density().values
    g = mu.density().values
    scale = max(float(np.max(g)), 1e-300)
    mismatch = float(np.max(np.abs(prod - g))) / scale
    if mismatch > tol:
        return InfiniteValue(f"product of marginal densities differs from dmu/dx (relative {mismatch:.3g})")
    energies = [grad_sq_sum(np.sqrt(m.density().values), grid.h) for m in mus]
    return 0.5 * float(np.dot(b, energies))


def _smooth_density(q: np.ndarray, spec: MollifierSpec, grid: Grid) -> np.ndarray:
    """Density ``q`` (node values) to ``q * phi_eps`` (node values)."""
    return smooth_masses((q * grid.weights)[None], spec, grid)[0]


def _tikhonov(target: np.ndarray, spec: MollifierSpec, grid: Grid, alpha: float) -> np.ndarray:
    """``argmin ||S q - target||^2 + alpha ||q||^2`` by LSQR; ``S`` is symmetric kernel times weights."""
    w = grid.weights.ravel()
    shape = grid.shape

    def mv(q):
        return _smooth_density(q.reshape(shape), spec, grid).ravel()

    def rmv(r):
        return w * smooth_masses(r.reshape(shape)[None], spec, grid)[0].ravel()

    A = spla.LinearOperator((grid.size, grid.size), matvec=mv, rmatvec=rmv, dtype=float)
    sol = spla.lsqr(A, target.ravel(), damp=math.sqrt(alpha), atol=1e-14, btol=1e-14, iter_lim=5000)[0]
    return sol.reshape(shape)


def rate_I_eps(mu: GridMeasure, mus: Sequence[GridMeasure], b, eps: float, *, tol: float,
               candidates: Sequence | None = None, alpha: float = 1e-6, profile: str = "bump") -> float:
    """Smoothed rate: inner fields ``psi_i`` with ``psi_i^2 * phi_eps = dmu_i/dx``.

    For each marginal the caller candidate ``candidates[i]`` (a field ``psi_i``) is
    forward-verified; without a candidate, or if it fails, ``psi_i^2`` is recovered
    by Tikhonov-regularised inversion and forward-verified.  Then
    ``prod_i dmu_i/dx = dmu/dx`` is checked.  Tolerances are relative sup norms.
    Failure of any check gives an infinite sentinel naming it.
    """
    b = np.asarray(b, dtype=float)
    if len(b) != len(mus) or np.any(b <= 0):
        raise ValueError("need one positive weight per marginal")
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = mu.grid
    spec = MollifierSpec(eps, profile)
    spec.check(grid)
    fields = []
    diag = []
    for i, m in enumerate(mus):
        target = m.density().values
        scale = max(float(np.max(target)), 1e-300)
        psi = None
        if candidates is not None and candidates[i] is not None:
            c = candidates[i]
            cv = c.values if isinstance(c, GridField) else np.asarray(c, dtype=float)
            if np.max(np.abs(cv[~grid.interior])) <= BOUNDARY_TOL:
                err = float(np.max(np.abs(_smooth_density(cv**2, spec, grid) - target))) / scale
                if err <= tol:
                    psi = cv
        if psi is None:
            q = _tikhonov(target, spec, grid, alpha)
            q = np.maximum(q, 0.0)
            q[~grid.interior] = 0.0
            err = float(np.max(np.abs(_smooth_density(q, spec, grid) - target))) / scale
            if err > tol:
                return InfiniteValue(f"deconvolution of marginal {i} failed: forward residual {err:.3g}")
            psi = np.sqrt(q)
        norm = math.sqrt(float(np.sum(psi**2 * grid.weights)))
        if abs(norm - 1.0) > tol:
            return InfiniteValue(f"inner field {i} has L2 norm {norm:.6g}, not 1")
        fields.append(psi)
        diag.append(err)
    prod = np.ones(grid.shape)
    for m in mus:
        prod = prod * m.density().values
    g = mu.density().values
    mismatch = float(np.max(np.abs(prod - g))) / max(float(np.max(g)), 1e-300)
    if mismatch > tol:
        return InfiniteValue(f"product of smoothed marginals differs from dmu/dx (relative {mismatch:.3g})")
    return 0.5 * float(sum(bi * grad_sq_sum(f, grid.h) for bi, f in zip(b, fields)))


@dataclass
class GammaRow:
    eps: float
    delta: float
    value: float
    n_candidates: int
    n_admissible: int


def weak_distance(m1: np.ndarray, m2: np.ndarray, grid: Grid, modes: int = 4) -> float:
    """``max_k |<m1 - m2, e_k>|`` over the sine modes ``e_k`` with ``|k|_inf <= modes``.

    ``m1, m2`` are node masses.  The modes have sup norm 1.
    """
    diff = m1 - m2
    best = 0.0
    lo = np.asarray(grid.domain.lower)
    L = np.asarray(grid.domain.upper) - lo
    for idx in np.ndindex(*(modes,) * grid.d):
        e = np.ones(grid.shape)
        for j in range(grid.d):
            shape = [1] * grid.d
            shape[j] = -1
            e = e * np.sin((idx[j] + 1) * np.pi * (grid.axes[j] - lo[j]) / L[j]).reshape(shape)
        best = max(best, abs(float(np.sum(diff * e))))
    return best


def _cutoff(grid: Grid, ell: float) -> np.ndarray:
    """Product of ramps ``min(1, dist/ell)`` to each face."""
    out = np.ones(grid.shape)
    for j in range(grid.d):
        x = grid.axes[j]
        dist = np.minimum(x - grid.domain.lower[j], grid.domain.upper[j] - x)
        shape = [1] * grid.d
        shape[j] = -1
        out = out * np.clip(dist / ell, 0.0, 1.0).reshape(shape)
    return out


def gamma_probe(mus: Sequence[GridMeasure], b, eps_seq: Sequence[float], delta: float | Sequence[float],
                profile: str = "bump", modes: int = 4) -> list:
    """Upper-bound study of ``inf { I_eps(nu) : d(nu, target) <= delta }``.

    ``mus`` are the target marginals; the joint target is their density product.
    For each ``eps`` a family of inner tuples is built from the target: the
    target roots cut off by boundary ramps of width ``ell`` and then spread by
    ``psi -> sqrt(psi^2 * phi_s)``, for ``ell, s`` on multiples of ``eps``.
    Each member is forward-smoothed at ``eps``, kept when its weak distance (sine
    modes) to the target is at most ``delta``, and scored by ``rate_I_eps`` with the
    member as candidate.  ``delta`` may be a sequence aligned with ``eps_seq``.
    The result lists one :class:`GammaRow` per ``eps``.  Attainment of the
    infimum by this family is not claimed.
    """
    b = np.asarray(b, dtype=float)
    grid = mus[0].grid
    deltas = np.broadcast_to(np.asarray(delta, dtype=float), (len(eps_seq),))
    roots = [np.sqrt(m.density().values) for m in mus]
    rows = []
    for eps, dl in zip(eps_seq, deltas):
        spec = MollifierSpec(eps, profile)
        spec.check(grid)
        family = []
        for ell in (0.0, 0.5 * eps, eps, 2 * eps):
            cut = _cutoff(grid, ell) if ell > 0 else np.ones(grid.shape)
            for s in (0.0, 0.5 * eps, eps):
                tup = []
                for r in roots:
                    q = (r * cut) ** 2
                    if s > 0 and s >= 2 * float(np.max(grid.h)):
                        q = _smooth_density(q, MollifierSpec(s, profile), grid)
                    q[~grid.interior] = 0.0
                    tot = float(np.sum(q * grid.weights))
                    if tot <= 0:
                        break
                    tup.append(np.sqrt(q / tot))
                if len(tup) == len(roots):
                    family.append(tup)
        best = InfiniteValue("no admissible candidate in the delta ball")
        n_ok = 0
        for tup in family:
            smoothed = [_smooth_density(psi**2, spec, grid) for psi in tup]
            dist = max(weak_distance(sm * grid.weights, m.masses, grid, modes) for sm, m in zip(smoothed, mus))
            if dist > dl:
                continue
            n_ok += 1
            marg = [GridMeasure(sm * grid.weights, grid) for sm in smoothed]
            prod = np.ones(grid.shape)
            for sm in smoothed:
                prod = prod * sm
            joint = GridMeasure(prod * grid.weights, grid)
            val = 0.5 * float(sum(bi * grad_sq_sum(psi, grid.h) for bi, psi in zip(b, tup)))
            check = rate_I_eps(joint, marg, b, eps, tol=1e-8, candidates=tup, profile=profile)
            if is_infinite(check):
                continue
            if val < best:
                best = val
        rows.append(GammaRow(float(eps), float(dl), best, len(family), n_ok))
    return rows


# ---------------------------------------------------------------------------
# tilted supremum


def tilted_objective(f: np.ndarray, fs: Sequence[np.ndarray], psis: Sequence[np.ndarray], grid: Grid) -> float:
    w = grid.weights
    prod = np.ones(grid.shape)
    for psi in psis:
        prod = prod * psi**2
    val = float(np.sum(prod * f * w))
    for fi, psi in zip(fs, psis):
        val += float(np.sum(psi**2 * fi * w)) - 0.5 * grad_sq_sum(psi, grid.h)
    return val


def tilted_sup(f, fs: Sequence, grid: Grid, n_starts: int = 5, seed: int = 0, tol: float = 1e-12,
               max_iter: int = 500, return_fields: bool = False):
    """``sup <prod psi_i^2, f> + sum <psi_i^2, f_i> - 1/2 sum ||grad psi_i||^2`` over unit ``psi_i``.

    Block ascent: each ``psi_i`` is replaced by the ground state of
    ``1/2 Delta + f_i + f prod_{j != i} psi_j^2``, which maximises the objective in
    ``psi_i`` with the others fixed.  Start 0 uses the ground states of the ``f_i``;
    the others use seeded random positive smooth fields.  Best value wins, lowest
    start index on ties.
    """
    def vals(x):
        return x.values if isinstance(x, GridField) else np.asarray(x, dtype=float) * np.ones(grid.shape)

    fv = vals(f)
    fsv = [vals(x) for x in fs]
    p = len(fsv)
    if p < 1:
        raise ValueError("need at least one f_i")
    for arr in [fv] + fsv:
        if not np.all(np.isfinite(arr)):
            raise ValueError("test functions must be finite")
    ops = _ops(grid)
    rng = np.random.default_rng(seed)
    best = None
    for start in range(max(n_starts, 1)):
        if start == 0:
            psis = [schroedinger_ground_state(grid, fi)[1].values for fi in fsv]
        else:
            dirs = ops.smooth_directions(rng, p, modes=3)
            psis = []
            for i in range(p):
                base = ops.vec(schroedinger_ground_state(grid, np.zeros(grid.shape))[1].values)
                v = np.abs(base * (1.0 + 0.9 * dirs[i] / np.max(np.abs(dirs[i]))))
                psis.append(ops.pad(v / math.sqrt(ops.norm2(v))))
        val = tilted_objective(fv, fsv, psis, grid)
        converged = False
        for it in range(max_iter):
            for i in range(p):
                others = np.ones(grid.shape)
                for j in range(p):
                    if j != i:
                        others = others * psis[j] ** 2
                psis[i] = schroedinger_ground_state(grid, fsv[i] + fv * others)[1].values
            new = tilted_objective(fv, fsv, psis, grid)
            if abs(new - val) <= tol * max(1.0, abs(new)):
                val = new
                converged = True
                break
            val = new
        if not converged:
            raise ConvergenceError(f"tilted_sup start {start} did not converge in {max_iter} sweeps")
        if best is None or val > best[0] + 1e-15:
            best = (val, [p_.copy() for p_ in psis], start)
    if return_fields:
        return best[0], [GridField(x, grid) for x in best[1]], best[2]
    return best[0]


# ---------------------------------------------------------------------------
# gradient checks


FUNCTIONALS = ("dv", "theta", "chi", "rate_I", "rate_J", "tilted")


def _functional(name: str, grid: Grid, p: int, rng: np.random.Generator):
    """``(f, grad, sample_state)`` on free variables for one functional."""
    ops = _ops(grid)
    ground = ops.vec(schroedinger_ground_state(grid, np.zeros(grid.shape))[1].values)

    def positive_state():
        d = ops.smooth_directions(rng, 1, modes=3)[0]
        return ground * np.exp(0.3 * d / np.max(np.abs(d)))

    if name == "dv":
        def f(x):
            return 0.5 * ops.energy(x) / ops.norm2(x)

        def grad(x):
            n2 = ops.norm2(x)
            return (2.0 * ops.vol * (ops.H @ x) - 2.0 * ops.vol * f(x) * x) / n2

        return f, grad, positive_state
    if name == "theta":
        lo = np.asarray(grid.domain.lower)
        L = np.asarray(grid.domain.upper) - lo
        U = CompactSubset(tuple(lo + 0.25 * L), tuple(lo + 0.75 * L))
        wU = _u_weights(ops, U)

        def f(x):
            return theta_ratio(ops, wU, p, x)

        def grad(x):
            A = 0.5 * p * ops.energy(x)
            B = float(np.sum(wU * x ** (2 * p)))
            dA = 2.0 * p * ops.vol * (ops.H @ x)
            dB = 2.0 * p * wU * x ** (2 * p - 1)
            return dA * B ** (-1.0 / p) - (1.0 / p) * A * B ** (-1.0 / p - 1.0) * dB

        return f, grad, positive_state
    if name == "chi":
        def f(x):
            return 0.5 * p * ops.energy(x)

        def grad(x):
            return 2.0 * p * ops.vol * (ops.H @ x)

        return f, grad, positive_state
    if name in ("rate_I", "rate_J"):
        g = positive_state() ** (2 * p)
        par = _ProductParam(ops, g ** (1.0 / p), p, 1.0 + rng.random(p), normalized=(name == "rate_I"))

        def state():
            return par.random_start(rng, 0.5)

        return par.objective, par.gradient, state
    if name == "tilted":
        fv = [ops.vec(grid.evaluate(lambda *xs: np.cos(np.sum(xs, axis=0))).values)]
        fv += [ops.vec(grid.evaluate(lambda *xs, k=k: np.sin((k + 1) * xs[0])).values) for k in range(p)]
        m = ops.m

        def f(x):
            psis = x.reshape(p, m)
            prod = np.prod(psis**2, axis=0)
            val = ops.vol * float(np.sum(prod * fv[0]))
            for i in range(p):
                val += ops.vol * float(np.sum(psis[i] ** 2 * fv[i + 1])) - 0.5 * ops.energy(psis[i])
            return val

        def grad(x):
            psis = x.reshape(p, m)
            out = np.empty_like(psis)
            for i in range(p):
                others = np.prod(np.delete(psis, i, axis=0) ** 2, axis=0)
                out[i] = (2.0 * ops.vol * psis[i] * (fv[0] * others + fv[i + 1])
                          - 2.0 * ops.vol * (ops.H @ psis[i]))
            return out.ravel()

        def state():
            return np.concatenate([positive_state() for _ in range(p)])

        return f, grad, state
    raise ValueError(f"unknown functional {name!r}; choose from {FUNCTIONALS}")


def gradient_check(name: str, grid: Grid, p: int = 2, n_states: int = 10, seed: int = 0,
                   step: float = 1e-4) -> float:
    """Largest relative error between the analytic directional derivative and a central difference.

    States and directions are seeded; directions are smooth H^1_0 perturbations
    (random sine modes) scaled to the size of the state.
    """
    rng = np.random.default_rng(seed)
    f, grad, state = _functional(name, grid, p, rng)
    worst = 0.0
    for _ in range(n_states):
        x = state()
        if x.size == _ops(grid).m or name == "tilted":
            blocks = x.size // _ops(grid).m
            v = _ops(grid).smooth_directions(rng, blocks, modes=4).ravel()
        else:
            v = rng.standard_normal(x.size)
            v = v / np.max(np.abs(v))
        v = v * (np.linalg.norm(x) / max(np.linalg.norm(v), 1e-300))
        an = float(grad(x) @ v)
        fd = (f(x + step * v) - f(x - step * v)) / (2 * step)
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-12 * max(1.0, abs(f(x)))))
    return worst


# ---------------------------------------------------------------------------
# heuristic tuple from theta


@dataclass
class HeuristicCheck:
    b: np.ndarray
    cond1_residual: float
    cond2_residual: float
    j_identity_residual: float
    theta_value: float


def heuristic_check(phi: GridField, U: CompactSubset, p: int, theta_value: float) -> HeuristicCheck:
    """Residuals of the two conditions for ``b_i = ||phi||^2``, ``psi_i = phi/||phi||``.

    cond1: ``prod b_i int_U prod psi_i^2 = 1``; cond2: ``phi^{2p} = prod b_i psi_i^2``
    nodewise (sup norm relative to ``max phi^{2p}``); the J identity compares
    ``1/2 sum b_i ||grad psi_i||^2`` with ``theta_value``.
    """
    grid = phi.grid
    b = float(np.sum(phi.values**2 * grid.weights))
    psi = phi.values / math.sqrt(b)
    dec = DensityDecomposition([GridField(psi, grid)] * p, [b] * p)
    cond1 = float(np.prod(dec.weights)) * float(np.sum(dec.product() * grid.box_weights(U))) - 1.0
    lhs = phi.values ** (2 * p)
    rhs = np.ones(grid.shape)
    for bi, f in zip(dec.weights, dec.fields):
        rhs = rhs * bi * f.values**2
    cond2 = float(np.max(np.abs(lhs - rhs))) / float(np.max(lhs))
    jres = abs(dec.value() - float(theta_value)) / float(theta_value)
    return HeuristicCheck(dec.weights.copy(), abs(cond1), cond2, jres, float(theta_value))


def heuristic_tuple(res: RateResult, U: CompactSubset) -> HeuristicCheck:
    """:func:`heuristic_check` on the minimizer of :func:`theta`."""
    return heuristic_check(res.phi, U, res.minimizer.p, float(res.value))
