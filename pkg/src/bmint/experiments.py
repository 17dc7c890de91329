"""End-to-end studies: tilted expectations, typical behaviour, scaling, heuristics.

Long horizons make survival in ``B`` a rare event, so the tilted expectations
and the conditioned occupation statistics are computed with a resampled
particle population: each particle carries its weight
``exp(int f) 1{alive}``, the population is resampled when the effective sample
size drops, and the product of mean weights estimates the normalising constant.
All randomness is keyed by ``(seed, step)`` so a run is a pure function of its
configuration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import _accel
from ._accel import njit
from .geometry import CompactSubset, DomainSpec, Grid, GridField, make_grid
from .mollify import MollifierSpec, intersection_integrals, profile_values, smooth_masses
from .simulate import EmptyEnsembleError, PathConfig, run_ensemble
from .spectral import schroedinger_ground_state, schroedinger_principal
from .variational import heuristic_check, theta

EXPERIMENTS = ("gartner_ellis", "ldp_tuple", "heuristic", "scaling", "eps_contraction")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TestFunction:
    """Catalog entry: ``constant``, ``sine``, ``bump`` (Gaussian) or ``signed_bump``.

    Coordinates are taken relative to the box, so the same entry works on any ``B``.
    """

    kind: str
    amplitude: float = 1.0
    width: float = 0.15
    modes: tuple = (1, 1)

    def __post_init__(self):
        if self.kind not in ("constant", "sine", "bump", "signed_bump"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if not self.width > 0:
            raise ValueError("width must be positive")
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))

    def evaluate(self, domain: DomainSpec, x: np.ndarray) -> np.ndarray:
        """Values at points ``x[..., d]``."""
        lo = np.asarray(domain.lower)
        L = np.asarray(domain.upper) - lo
        u = (x - lo) / L
        a = self.amplitude
        if self.kind == "constant":
            return np.full(x.shape[:-1], a)
        if self.kind == "sine":
            m = np.resize(np.asarray(self.modes), u.shape[-1])
            return a * np.prod(np.sin(np.pi * m * u), axis=-1)
        if self.kind == "bump":
            return a * np.exp(-np.sum((u - 0.5) ** 2, axis=-1) / (2 * self.width**2))
        shift = np.zeros(u.shape[-1])
        shift[0] = 0.2
        plus = np.exp(-np.sum((u - 0.5 + shift) ** 2, axis=-1) / (2 * self.width**2))
        minus = np.exp(-np.sum((u - 0.5 - shift) ** 2, axis=-1) / (2 * self.width**2))
        return a * (plus - minus)

    def on_grid(self, grid: Grid) -> GridField:
        pts = np.stack(grid.coords, axis=-1)
        return GridField(self.evaluate(grid.domain, pts), grid)

    def sup(self) -> float:
        return abs(self.amplitude)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "amplitude": self.amplitude, "width": self.width, "modes": list(self.modes)}

    @classmethod
    def from_dict(cls, data: dict) -> "TestFunction":
        return cls(**data)


# not a pytest test class despite the name
TestFunction.__test__ = False

DEFAULT_CATALOG = (
    TestFunction("constant", 0.5),
    TestFunction("sine", 0.5),
    TestFunction("bump", 1.0, 0.15),
)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    domain: DomainSpec = field(default_factory=lambda: DomainSpec((0.0, 0.0), (1.0, 1.0), 2))
    n: int = 32
    dt: float = 1e-3
    eps: float = 0.1
    profile: str = "bump"
    b: tuple | None = None
    catalog: tuple = DEFAULT_CATALOG
    t_ladder: tuple = (1.0, 1.5, 2.0, 2.5, 3.0)
    eps_ladder: tuple = (0.05, 0.1, 0.2)
    budget: int = 10000
    n_seeds: int = 1
    seed: int = 0
    U: CompactSubset | None = None

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; choose from {EXPERIMENTS}")
        for lab in ("t_ladder", "eps_ladder"):
            lad = tuple(float(v) for v in getattr(self, lab))
            if not lad:
                raise ValueError(f"{lab} must be nonempty")
            if list(lad) != sorted(lad):
                raise ValueError(f"{lab} must be sorted ascending")
            if any(v <= 0 for v in lad):
                raise ValueError(f"{lab} entries must be positive")
            object.__setattr__(self, lab, lad)
        cat = tuple(c if isinstance(c, TestFunction) else TestFunction.from_dict(dict(c)) for c in self.catalog)
        object.__setattr__(self, "catalog", cat)
        if self.b is not None:
            object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        if self.budget < 1 or self.n_seeds < 1:
            raise ValueError("budget and n_seeds must be positive")
        if not self.dt > 0 or not self.eps > 0:
            raise ValueError("dt and eps must be positive")

    def horizons(self, t: float) -> np.ndarray:
        b = np.ones(self.domain.p) if self.b is None else np.asarray(self.b)
        if len(b) != self.domain.p:
            raise ValueError("b must have one entry per motion")
        return t * b

    def to_dict(self) -> dict:
        return {
            "name": self.name, "domain": self.domain.to_dict(), "n": self.n, "dt": self.dt,
            "eps": self.eps, "profile": self.profile, "b": None if self.b is None else list(self.b),
            "catalog": [c.to_dict() for c in self.catalog], "t_ladder": list(self.t_ladder),
            "eps_ladder": list(self.eps_ladder), "budget": self.budget, "n_seeds": self.n_seeds,
            "seed": self.seed, "U": None if self.U is None else self.U.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if "domain" in data and isinstance(data["domain"], dict):
            data["domain"] = DomainSpec.from_dict(data["domain"])
        if data.get("U") is not None and isinstance(data["U"], dict):
            data["U"] = CompactSubset.from_dict(data["U"])
        for key in ("t_ladder", "eps_ladder", "catalog"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


# ---------------------------------------------------------------------------
# resampled particle population


@dataclass
class SMCResult:
    times: np.ndarray
    log_z: np.ndarray
    ess_min: float
    n_resample: int
    occupations: list | None = None


@njit
def _deposit_numba(occ, alive, node, mass):
    for k in range(node.shape[0]):
        if alive[k]:
            occ[k, node[k]] += mass


def _deposit(occ, alive, node, mass, backend):
    if backend == "numba":
        _deposit_numba(occ, alive, node, mass)
    else:
        rows = np.flatnonzero(alive)
        occ[rows, node[rows]] += mass


def _nodes(x, lower, h, n):
    idx = np.clip(np.floor((x - lower) / h + 0.5).astype(np.int64), 1, n - 1)
    out = np.zeros(x.shape[0], dtype=np.int64)
    for j in range(x.shape[1]):
        out = out * (n + 1) + idx[:, j]
    return out


def smc_population(domain: DomainSpec, potential, horizon: float, snapshots, dt: float, n_particles: int,
                   seed: int, start=None, grid: Grid | None = None, ess_threshold: float = 0.5,
                   backend: str | None = None) -> SMCResult:
    """Estimate ``log E_x[exp(int_0^t f(W_s) ds); t < tau_B]`` at each snapshot time.

    ``potential`` maps points ``x[N, d]`` to values.  Steps are exact Gaussian
    increments; a step is killed on an observed exit or, with the Brownian-bridge
    probability, on an unobserved one.  The time integral uses the trapezoid
    rule on each step.  With ``grid`` each particle carries its occupation
    masses (deposited as in :mod:`simulate`); at each snapshot the population is
    resampled to equal weights and a copy of the occupations is returned.
    """
    backend = _accel.resolve(backend)
    snaps = np.asarray(sorted(snapshots), dtype=float)
    if snaps[-1] > horizon + 1e-12:
        raise ValueError("snapshot beyond horizon")
    lower = np.asarray(domain.lower, dtype=float)
    upper = np.asarray(domain.upper, dtype=float)
    d = domain.d
    N = int(n_particles)
    x = np.tile(domain.center if start is None else np.asarray(start, dtype=float), (N, 1))
    logw = np.zeros(N)
    log_z = 0.0
    occ = np.zeros((N, grid.size)) if grid is not None else None
    if grid is not None:
        h = np.asarray(grid.h)
    fx = np.asarray(potential(x), dtype=float)
    out_logz = []
    out_occ = [] if grid is not None else None
    n_res = 0
    ess_min = 1.0
    t = 0.0
    k = 0
    snap_steps = [int(round(s / dt)) for s in snaps]
    for sk, sv in zip(snap_steps, snaps):
        if sk < 1 or abs(sk * dt - sv) > 1e-9 * max(1.0, sv):
            raise ValueError("snapshot times must be multiples of dt")
    n_steps = snap_steps[-1]
    next_snap = 0
    while k < n_steps:
        rng = np.random.Generator(np.random.Philox(key=[seed, k]))
        z = rng.standard_normal((N, d))
        u = rng.random((N, d))
        xn = x + math.sqrt(dt) * z
        dead = np.any((xn <= lower) | (xn >= upper), axis=1)
        with np.errstate(over="ignore"):
            plo = np.exp(-2.0 * np.maximum(x - lower, 0) * np.maximum(xn - lower, 0) / dt)
            phi = np.exp(-2.0 * np.maximum(upper - x, 0) * np.maximum(upper - xn, 0) / dt)
        dead |= np.any(u < plo + phi, axis=1)
        alive = ~dead & np.isfinite(logw)
        if occ is not None:
            _deposit(occ, alive, _nodes(x, lower, h, grid.n), dt, backend)
        fn = np.asarray(potential(xn), dtype=float)
        logw = np.where(alive, logw + 0.5 * dt * (fx + fn), -np.inf)
        x, fx = xn, fn
        k += 1
        t = k * dt
        if not np.any(np.isfinite(logw)):
            raise EmptyEnsembleError(f"all particles killed by t={t:g}")
        m = np.max(logw)
        w = np.exp(logw - m)
        ess = w.sum() ** 2 / np.sum(w * w) / N
        ess_min = min(ess_min, ess)
        at_snap = next_snap < len(snap_steps) and k == snap_steps[next_snap]
        if ess < ess_threshold or at_snap:
            log_mean = m + math.log(w.mean())
            # systematic resampling with one uniform per event
            u0 = np.random.Generator(np.random.Philox(key=[seed, 2**40 + k])).random()
            cdf = np.cumsum(w / w.sum())
            cdf[-1] = 1.0
            idx = np.searchsorted(cdf, (u0 + np.arange(N)) / N, side="left")
            x = x[idx]
            fx = fx[idx]
            if occ is not None:
                occ = occ[idx]
            log_z += log_mean
            logw = np.zeros(N)
            n_res += 1
        if at_snap:
            out_logz.append(log_z)
            if occ is not None:
                out_occ.append(occ.reshape((N,) + grid.shape).copy())
            next_snap += 1
    return SMCResult(snaps, np.asarray(out_logz), float(ess_min), n_res, out_occ)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class GartnerEllisRow:
    function: str
    t: float
    mc_tilt: float
    spectral_limit: float


@dataclass
class GartnerEllisReport:
    rows: list
    limits: dict
    spectral: dict
    intercepts: dict

    def relative_errors(self) -> dict:
        return {k: abs(self.limits[k] - self.spectral[k]) / abs(self.spectral[k]) for k in self.limits}


def gartner_ellis_p1(cfg: ExperimentConfig, grid: Grid | None = None, backend: str | None = None
                     ) -> GartnerEllisReport:
    """MC of ``(1/t) log E[exp(int_0^t f(W_s) ds); t < tau]`` against the principal eigenvalue.

    The limit is extrapolated by the least-squares fit ``log Z(t) = L t + c`` over
    the ladder, i.e. ``(1/t) log Z = L + c/t``.  The spectral value is the largest
    eigenvalue of ``1/2 Delta_h + f`` on ``grid`` (default ``n = 64``).
    """
    dom = cfg.domain
    grid = make_grid(dom, 64) if grid is None else grid
    rows, limits, spectral, intercepts = [], {}, {}, {}
    for j, fn in enumerate(cfg.catalog):
        if fn.sup() > 2.0:
            raise ValueError(f"|f| <= 2 required to keep weights tame; {fn.kind} has sup {fn.sup()}")
        label = f"{j}:{fn.kind}"
        res = smc_population(dom, lambda x, fn=fn: fn.evaluate(dom, x), cfg.t_ladder[-1], cfg.t_ladder,
                             cfg.dt, cfg.budget, cfg.seed + 7919 * j, backend=backend)
        lam = schroedinger_principal(grid, fn.on_grid(grid))
        A = np.column_stack([res.times, np.ones_like(res.times)])
        slope, icpt = np.linalg.lstsq(A, res.log_z, rcond=None)[0]
        limits[label] = float(slope)
        intercepts[label] = float(icpt)
        spectral[label] = float(lam)
        for t, lz in zip(res.times, res.log_z):
            rows.append(GartnerEllisRow(label, float(t), float(lz / t), float(lam)))
    return GartnerEllisReport(rows, limits, spectral, intercepts)


@dataclass
class TupleProbeRow:
    t: float
    seed: int
    l1_occupation: list
    l1_intersection: float
    intersection_mass: float
    median_mass: list
    log_survival: list


def ldp_tuple_probe(cfg: ExperimentConfig, backend: str | None = None) -> list:
    """Typical behaviour under survival: occupation densities against ``psi_1^2``.

    For each seed and each ``t`` of the ladder, motion ``i`` is conditioned to
    survive up to ``t b_i`` (resampled population of ``cfg.budget`` particles, no
    tilt).  Reported per row: the mean L1 distance between the smoothed
    ``l^{(i)}/(t b_i)`` and ``psi_1^2``; the same for the intersection density
    ``t^{-p} prod b_i^{-1} prod_i smooth(l^{(i)})`` against ``psi_1^{2p}``; its mean
    total mass; the median total occupation mass per motion; and the log survival
    estimate per motion (how rare the conditioning is).
    """
    dom = cfg.domain
    grid = make_grid(dom, cfg.n)
    spec = MollifierSpec(cfg.eps, cfg.profile)
    spec.check(grid)
    p = dom.p
    w = grid.weights
    psi = schroedinger_ground_state(grid, np.zeros(grid.shape))[1].values
    target = psi**2
    target_p = psi ** (2 * p)
    b = cfg.horizons(1.0)
    rows = []
    for s in range(cfg.n_seeds):
        per_motion = []
        for i in range(p):
            snaps = [t * b[i] for t in cfg.t_ladder]
            res = smc_population(dom, lambda x: np.zeros(len(x)), snaps[-1], snaps, cfg.dt, cfg.budget,
                                 cfg.seed + 1009 * s + 104729 * i, grid=grid, backend=backend)
            per_motion.append(res)
        for k, t in enumerate(cfg.t_ladder):
            dens = []
            l1 = []
            masses = []
            for i in range(p):
                occ = per_motion[i].occupations[k]
                masses.append(float(np.median(occ.reshape(len(occ), -1).sum(axis=1))))
                sm = smooth_masses(occ, spec, grid, backend)
                dens.append(sm)
                l1.append(float(np.mean(np.sum(np.abs(sm / (t * b[i]) - target) * w, axis=(1, 2)))))
            prod = np.ones_like(dens[0])
            for sm in dens:
                prod = prod * sm
            inter = prod / (t**p * float(np.prod(b)))
            mass = float(np.mean(np.sum(inter * w, axis=(1, 2))))
            l1i = float(np.mean(np.sum(np.abs(inter - target_p) * w, axis=(1, 2))))
            rows.append(TupleProbeRow(float(t), s, l1, l1i, mass, masses,
                                      [float(r.log_z[k]) for r in per_motion]))
    return rows


@dataclass
class HeuristicReport:
    b: list
    cond1_residual: float
    cond2_residual: float
    j_identity_residual: float
    theta_value: float
    perturbation: float
    cond1_ok: bool
    cond2_ok: bool

    @property
    def ok(self) -> bool:
        return self.cond1_ok and self.cond2_ok


def heuristic_audit(domain: DomainSpec, U: CompactSubset, p: int | None = None, n: int = 64,
                    perturb: float = 0.0, seed: int = 0, cond1_tol: float = 1e-4,
                    cond2_tol: float = 1e-6) -> HeuristicReport:
    """Check the two heuristic conditions on the tuple built from theta's minimizer.

    ``perturb > 0`` multiplies the minimizer by ``1 + perturb * noise`` (seeded
    uniform noise in ``[-1, 1]``) before the tuple is built, to show the audit flags it.
    """
    p = domain.p if p is None else p
    res = theta(domain, U, p, n=n)
    phi = res.phi
    if perturb > 0:
        rng = np.random.default_rng(seed)
        phi = GridField(phi.values * (1.0 + perturb * rng.uniform(-1, 1, phi.values.shape)), phi.grid)
    hc = heuristic_check(phi, U, p, float(res.value))
    return HeuristicReport([float(v) for v in hc.b], hc.cond1_residual, hc.cond2_residual,
                           hc.j_identity_residual, hc.theta_value, perturb,
                           hc.cond1_residual < cond1_tol, hc.cond2_residual < cond2_tol)


# free-space intersection mass


def _radial_autocorrelation(eps: float, d: int, profile: str = "bump", n_r: int = 257, n_q: int = 400):
    """Table of ``Phi(r) = (phi_eps * phi_eps)(r e_1)`` on ``r in [0, 2 eps]``.

    Quadrature in ``(y_1, rho)`` with ``rho`` the distance to the axis
    (weight ``2`` in d=2, ``2 pi rho`` in d=3); renormalised so ``int Phi = 1``.
    """
    spec = MollifierSpec(eps, profile)

    y1 = (np.arange(n_q) + 0.5) / n_q * 2 * eps - eps
    rho = (np.arange(n_q // 2) + 0.5) / (n_q // 2) * eps
    dy, drho = 2 * eps / n_q, eps / (n_q // 2)
    Y, R = np.meshgrid(y1, rho, indexing="ij")
    wq = (2.0 if d == 2 else 2 * np.pi * R) * dy * drho

    def phi_at(a, r):
        disp = np.zeros(a.shape + (d,))
        disp[..., 0] = a
        disp[..., 1] = r
        return profile_values(spec, disp)

    base = phi_at(Y, R)
    rs = np.linspace(0.0, 2 * eps, n_r)
    tab = np.array([np.sum(base * phi_at(Y - r, R) * wq) for r in rs])
    # int Phi = (int phi)^2 = 1; fix the quadrature constant with the radial integral
    shell = 2 * np.pi * rs if d == 2 else 4 * np.pi * rs**2
    total = np.trapezoid(tab * shell, rs)
    return rs, tab / total


@njit
def _pair_sum(a, b, rs, tab, cell):
    """``sum_{i,j} Phi(|a_i - b_j|)`` with a hash grid on ``b``."""
    d = a.shape[1]
    rmax = rs[-1]
    dr = rs[1] - rs[0]
    nb = b.shape[0]
    lo = np.empty(d)
    for j in range(d):
        lo[j] = min(a[:, j].min(), b[:, j].min()) - rmax
    dims = np.empty(d, np.int64)
    for j in range(d):
        hi = max(a[:, j].max(), b[:, j].max()) + rmax
        dims[j] = int((hi - lo[j]) / cell) + 1
    ncell = 1
    for j in range(d):
        ncell *= dims[j]
    cid = np.empty(nb, np.int64)
    for k in range(nb):
        c = 0
        for j in range(d):
            c = c * dims[j] + int((b[k, j] - lo[j]) / cell)
        cid[k] = c
    order = np.argsort(cid)
    start = np.full(ncell + 1, 0, np.int64)
    for k in range(nb):
        start[cid[k] + 1] += 1
    for c in range(ncell):
        start[c + 1] += start[c]
    total = 0.0
    idx = np.empty(d, np.int64)
    for i in range(a.shape[0]):
        for j in range(d):
            idx[j] = int((a[i, j] - lo[j]) / cell)
        if d == 2:
            for o0 in range(-1, 2):
                for o1 in range(-1, 2):
                    c = (idx[0] + o0) * dims[1] + (idx[1] + o1)
                    for q in range(start[c], start[c + 1]):
                        k = order[q]
                        r = math.sqrt((a[i, 0] - b[k, 0]) ** 2 + (a[i, 1] - b[k, 1]) ** 2)
                        if r < rmax:
                            s = r / dr
                            m = int(s)
                            f = s - m
                            total += tab[m] * (1 - f) + tab[m + 1] * f
        else:
            for o0 in range(-1, 2):
                for o1 in range(-1, 2):
                    for o2 in range(-1, 2):
                        c = ((idx[0] + o0) * dims[1] + (idx[1] + o1)) * dims[2] + (idx[2] + o2)
                        for q in range(start[c], start[c + 1]):
                            k = order[q]
                            r = math.sqrt((a[i, 0] - b[k, 0]) ** 2 + (a[i, 1] - b[k, 1]) ** 2
                                          + (a[i, 2] - b[k, 2]) ** 2)
                            if r < rmax:
                                s = r / dr
                                m = int(s)
                                f = s - m
                                total += tab[m] * (1 - f) + tab[m + 1] * f
    return total


def _pair_sum_numpy(a, b, rs, tab, chunk=512):
    rmax = rs[-1]
    total = 0.0
    for i in range(0, len(a), chunk):
        diff = a[i:i + chunk, None, :] - b[None, :, :]
        r = np.sqrt(np.sum(diff * diff, axis=-1))
        total += float(np.sum(np.interp(r[r < rmax], rs, tab)))
    return total


def free_space_isl_mass(s: float, d: int, eps: float, dt: float, n_samples: int, seed: int,
                        profile: str = "bump", backend: str | None = None) -> np.ndarray:
    """Samples of ``int prod_{i=1,2} (l^{(i)}_s * phi_eps)(y) dy`` for two motions from 0 in ``R^d``.

    Equals ``int int Phi(W^1_a - W^2_b) da db`` with ``Phi = phi_eps * phi_eps``,
    evaluated by the midpoint rule in time.
    """
    backend = _accel.resolve(backend)
    m = int(round(s / dt))
    if abs(m * dt - s) > 1e-9 * s:
        raise ValueError("s must be a multiple of dt")
    rs, tab = _radial_autocorrelation(eps, d, profile)
    tab = np.append(tab, 0.0)
    rs_ext = np.append(rs, rs[-1] + (rs[1] - rs[0]))
    out = np.empty(n_samples)
    for k in range(n_samples):
        rng = np.random.Generator(np.random.Philox(key=[seed, k]))
        inc = rng.standard_normal((2, m, d)) * math.sqrt(dt)
        # positions at midpoints of the steps
        paths = np.cumsum(inc, axis=1) - 0.5 * inc
        a, b = np.ascontiguousarray(paths[0]), np.ascontiguousarray(paths[1])
        if backend == "numba":
            total = _pair_sum(a, b, rs_ext, tab, float(rs[-1]))
        else:
            total = _pair_sum_numpy(a, b, rs, tab[:-1])
        out[k] = total * dt * dt
    return out


@dataclass
class ScalingReport:
    d: int
    p: int
    s: tuple
    means: tuple
    ses: tuple
    ratio: float
    ratio_se: float
    expected: float
    z: float


def scaling_check_isl_mass(p: int = 2, d: int = 2, s: float = 0.05, factor: float = 2.0, eps: float = 0.02,
                           dt: float | None = None, n_samples: int = 2000, seed: int = 0,
                           backend: str | None = None) -> ScalingReport:
    """First-moment ratio of the smoothed intersection mass at ``s`` and ``factor * s``.

    Brownian scaling gives ``factor^{(2p - d(p-1))/2}`` for the unsmoothed mass;
    with ``eps`` small against ``sqrt(s)`` the smoothed mass follows it up to a
    bias of order ``eps^2/s`` (d=2) or ``eps/sqrt(s)`` (d=3).  Motions run in
    free space (no box), so there is no truncation.  Independent seeds for the
    two horizons; with ``factor = 1`` the ratio is 1 in expectation.
    """
    if p != 2:
        raise ValueError("the pair-sum estimator covers p=2 only")
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    dt = (eps / 4) ** 2 if dt is None else dt
    s2 = factor * s
    # round horizons onto the time step
    m1, m2 = int(round(s / dt)), int(round(s2 / dt))
    dt = s / m1
    if abs(m2 * dt - s2) > 1e-9 * s2:
        raise ValueError("factor * s must be a multiple of the time step")
    x1 = free_space_isl_mass(s, d, eps, dt, n_samples, seed, backend=backend)
    x2 = free_space_isl_mass(s2, d, eps, dt, n_samples, seed + 1, backend=backend)
    mu1, mu2 = float(x1.mean()), float(x2.mean())
    se1 = float(x1.std(ddof=1) / math.sqrt(n_samples))
    se2 = float(x2.std(ddof=1) / math.sqrt(n_samples))
    ratio = mu2 / mu1
    rse = ratio * math.sqrt((se1 / mu1) ** 2 + (se2 / mu2) ** 2)
    expected = factor ** ((2 * p - d * (p - 1)) / 2)
    return ScalingReport(d, p, (s, s2), (mu1, mu2), (se1, se2), ratio, rse, expected, (ratio - expected) / rse)


@dataclass
class ContractionRow:
    function: str
    eps: float
    median_abs_diff: float
    mean_abs_diff: float
    se: float
    n: int


def eps_contraction(cfg: ExperimentConfig, t: float = 0.2, backend: str | None = None) -> list:
    """``|<l_{eps,t} - l_{eps/2,t}, f>|`` over accepted samples for each ``eps`` of the ladder.

    Samples are drawn in chunks until ``cfg.budget`` samples are accepted.  The
    grid must resolve the smallest ``eps/2``.
    """
    dom = cfg.domain
    grid = make_grid(dom, cfg.n)
    pc = PathConfig(cfg.dt, t, cfg.b, "center", cfg.seed)
    eps_all = sorted(set(cfg.eps_ladder) | {e / 2 for e in cfg.eps_ladder})
    for e in eps_all:
        MollifierSpec(e, cfg.profile).check(grid)
    fields = [(f"{j}:{fn.kind}", fn.on_grid(grid)) for j, fn in enumerate(cfg.catalog)]
    vals = {e: {lab: [] for lab, _ in fields} for e in eps_all}
    n_acc = 0
    start = 0
    chunk = max(64, cfg.budget // 2)
    while n_acc < cfg.budget:
        ens = run_ensemble(dom, grid, pc, chunk, start=start, keep_occupations=True, backend=backend)
        start += chunk
        occ = ens.occupations
        take = min(len(occ), cfg.budget - n_acc)
        occ = occ[:take]
        n_acc += take
        for e in eps_all:
            spec = MollifierSpec(e, cfg.profile)
            for lab, f in fields:
                vals[e][lab].append(intersection_integrals(occ, spec, grid, f, backend))
        if start > 1000 * cfg.budget:
            raise EmptyEnsembleError("acceptance too low to reach the sample budget")
    rows = []
    for lab, _ in fields:
        for e in cfg.eps_ladder:
            diff = np.abs(np.concatenate(vals[e][lab]) - np.concatenate(vals[e / 2][lab]))
            rows.append(ContractionRow(lab, float(e), float(np.median(diff)), float(diff.mean()),
                                       float(diff.std(ddof=1) / math.sqrt(len(diff))), len(diff)))
    return rows


def rows_to_table(rows) -> tuple:
    """Header and plain rows from a list of dataclass records (lists are expanded)."""
    if not rows:
        return [], []
    header = []
    first = asdict(rows[0])
    for k, v in first.items():
        if isinstance(v, (list, tuple)):
            header += [f"{k}_{i + 1}" for i in range(len(v))]
        else:
            header.append(k)
    out = []
    for r in rows:
        row = []
        for v in asdict(r).values():
            row += list(v) if isinstance(v, (list, tuple)) else [v]
        out.append(row)
    return header, out


def isl_mass_mean(s: float, d: int, eps: float, profile: str = "bump") -> float:
    """Exact ``E int int Phi(W^1_a - W^2_b) da db`` for two motions from 0 in ``R^d``.

    ``W^1_a - W^2_b`` is centred Gaussian with variance ``a + b`` per coordinate, so
    the value is ``int_0^{2s} g(u) min(u, 2s - u) du`` with ``g(u) = int Phi p_u``.
    """
    from scipy import integrate

    rs, tab = _radial_autocorrelation(eps, d, profile)
    shell = 2 * np.pi * rs if d == 2 else 4 * np.pi * rs**2

    def g(u):
        return float(np.trapezoid(tab * shell * np.exp(-rs**2 / (2 * u)) / (2 * np.pi * u) ** (d / 2), rs))

    val, _ = integrate.quad(lambda u: g(u) * min(u, 2 * s - u), 0.0, 2 * s, points=[s], limit=200,
                            epsrel=1e-10)
    return val
