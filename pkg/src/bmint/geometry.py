"""Boxes, grids and the discrete fields and measures that live on them.

Conventions
-----------
A grid with resolution ``n`` has ``n + 1`` nodes per axis, indexed ``ij``
(axis 0 is x).  Fields hold one value per node.  Measures hold one mass per
node as well: the mass of node ``z`` is the mass of its dual cell
``z + [-h/2, h/2]^d`` intersected with the closed box, so boundary nodes own
half (or quarter) cells.  This makes the measure/density round trip exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    """Open axis-aligned box ``B`` and the number of motions ``p``.

    Intersections need ``p >= 2``; ``p = 1`` is accepted for single-motion
    studies (occupation moments, tilted expectations).
    """

    lower: tuple
    upper: tuple
    p: int = 2

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi) or len(lo) not in (2, 3):
            raise ValueError("dimension must be 2 or 3 with matching bounds")
        if not all(np.isfinite(lo + hi)):
            raise ValueError("bounds must be finite")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"empty box: lower={lo} upper={hi}")
        if int(self.p) != self.p or self.p < 1:
            raise ValueError("p must be a positive integer")
        object.__setattr__(self, "p", int(self.p))
        if self.p * (self.d - 2) >= self.d:
            raise ValueError(f"p={self.p} outside the admissible range for d={self.d}")

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x > self.lower) and np.all(x < self.upper))

    def scaled(self, r: float) -> "DomainSpec":
        """The box ``r * B`` (scaling about the origin)."""
        return DomainSpec(tuple(r * v for v in self.lower), tuple(r * v for v in self.upper), self.p)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "p": self.p}

    @classmethod
    def from_dict(cls, data: dict) -> "DomainSpec":
        return cls(tuple(data["lower"]), tuple(data["upper"]), int(data.get("p", 2)))


def unit_square(p: int = 2) -> DomainSpec:
    return DomainSpec((0.0, 0.0), (1.0, 1.0), p)


def unit_cube(p: int = 2) -> DomainSpec:
    return DomainSpec((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), p)


NAMED_DOMAINS = {"unit-square": unit_square, "unit-cube": unit_cube}


@dataclass(frozen=True)
class CompactSubset:
    """Closed box ``U``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi):
            raise ValueError("bounds of U must have matching length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"empty subset: lower={lo} upper={hi}")

    def check_inside(self, domain: DomainSpec, margin: float = 0.0) -> None:
        if len(self.lower) != domain.d:
            raise ValueError("U and B have different dimensions")
        for j in range(domain.d):
            if self.lower[j] - domain.lower[j] <= margin or domain.upper[j] - self.upper[j] <= margin:
                raise ValueError(
                    f"U must sit strictly inside B with margin > {margin:g} on axis {j}"
                )

    def scaled(self, r: float) -> "CompactSubset":
        return CompactSubset(tuple(r * v for v in self.lower), tuple(r * v for v in self.upper))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, data: dict) -> "CompactSubset":
        return cls(tuple(data["lower"]), tuple(data["upper"]))


@dataclass(frozen=True, eq=False)
class Grid:
    domain: DomainSpec
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4:
            raise ValueError(f"grid resolution must be an integer >= 4, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    def __eq__(self, other):
        return isinstance(other, Grid) and self.n == other.n and self.domain == other.domain

    def __hash__(self):
        return hash((self.domain, self.n))

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def shape(self) -> tuple:
        return (self.n + 1,) * self.d

    @property
    def size(self) -> int:
        return (self.n + 1) ** self.d

    @cached_property
    def h(self) -> np.ndarray:
        return (np.asarray(self.domain.upper) - np.asarray(self.domain.lower)) / self.n

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @cached_property
    def axes(self) -> tuple:
        return tuple(
            self.domain.lower[j] + self.h[j] * np.arange(self.n + 1) for j in range(self.d)
        )

    @cached_property
    def coords(self) -> tuple:
        """Node coordinates as a tuple of ``d`` arrays of shape ``self.shape``."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def interior(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[(slice(1, -1),) * self.d] = True
        return m

    @property
    def interior_slice(self) -> tuple:
        return (slice(1, -1),) * self.d

    @property
    def n_interior(self) -> int:
        return (self.n - 1) ** self.d

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid weights: cell volume, halved per boundary axis."""
        w1 = np.ones(self.n + 1)
        w1[0] = w1[-1] = 0.5
        w = self.cell_volume
        for j in range(self.d):
            shape = [1] * self.d
            shape[j] = self.n + 1
            w = w * w1.reshape(shape)
        return np.broadcast_to(w, self.shape).copy()

    def field(self, values) -> "GridField":
        return GridField(np.asarray(values, dtype=float), self)

    def zeros(self) -> "GridField":
        return GridField(np.zeros(self.shape), self)

    def evaluate(self, func) -> "GridField":
        """Sample ``func(*coords)`` on the nodes."""
        return GridField(np.asarray(func(*self.coords), dtype=float) * np.ones(self.shape), self)

    def nearest_interior_index(self, x) -> tuple:
        """Node owning the dual cell of ``x``; boundary cells go to their interior neighbour."""
        x = np.asarray(x, dtype=float)
        idx = np.rint((x - np.asarray(self.domain.lower)) / self.h).astype(int)
        return tuple(np.clip(idx, 1, self.n - 1))

    def box_weights(self, U: CompactSubset) -> np.ndarray:
        """Trapezoid weights of the closed box ``U`` on this grid.

        Nodes strictly inside ``U`` get full weight, nodes on a face of ``U``
        get half weight per face.  Faces that do not fall on grid lines are
        handled by plain inclusion (first-order accurate).
        """
        w = np.ones(self.shape)
        tol = 1e-9
        for j in range(self.d):
            t = (self.axes[j] - U.lower[j]) / self.h[j]
            s = (U.upper[j] - self.axes[j]) / self.h[j]
            a = np.where((t > tol) & (s > tol), 1.0, 0.0)
            a = np.where((np.abs(t) <= tol) | (np.abs(s) <= tol), 0.5, a)
            shape = [1] * self.d
            shape[j] = self.n + 1
            w = w * a.reshape(shape)
        return w * self.cell_volume

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_dict(), "n": self.n}


def make_grid(domain: DomainSpec, n: int) -> Grid:
    return Grid(domain, n)


def _check_same(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatchError("objects live on different grids")


@dataclass(eq=False)
class GridField:
    """Node values on a grid."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite values")

    def boundary_max(self) -> float:
        v = np.abs(self.values).copy()
        v[self.grid.interior] = 0.0
        return float(v.max())

    def is_h10(self, atol: float = 0.0) -> bool:
        return self.boundary_max() <= atol

    def with_values(self, values) -> "GridField":
        return GridField(values, self.grid)

    def __add__(self, other):
        if isinstance(other, GridField):
            _check_same(self.grid, other.grid)
            return GridField(self.values + other.values, self.grid)
        return GridField(self.values + other, self.grid)

    def __sub__(self, other):
        if isinstance(other, GridField):
            _check_same(self.grid, other.grid)
            return GridField(self.values - other.values, self.grid)
        return GridField(self.values - other, self.grid)

    def __mul__(self, other):
        if isinstance(other, GridField):
            _check_same(self.grid, other.grid)
            return GridField(self.values * other.values, self.grid)
        return GridField(self.values * other, self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(-self.values, self.grid)

    def to_measure(self) -> "GridMeasure":
        """Measure with this field as density (must be nonnegative)."""
        return GridMeasure(self.values * self.grid.weights, self.grid)


@dataclass(eq=False)
class GridMeasure:
    """Nonnegative masses per node (dual cell)."""

    masses: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        if self.masses.shape != self.grid.shape:
            raise ValueError(f"mass shape {self.masses.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.masses)):
            raise ValueError("measure has non-finite masses")
        if np.any(self.masses < 0):
            raise ValueError("measure has negative masses")

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def density(self) -> GridField:
        return GridField(self.masses / self.grid.weights, self.grid)

    @classmethod
    def from_density(cls, g: GridField) -> "GridMeasure":
        return g.to_measure()

    def boundary_mass(self) -> float:
        m = self.masses.copy()
        m[self.grid.interior] = 0.0
        return float(m.sum())

    def restricted_mass(self, U: CompactSubset) -> float:
        """Mass of ``U`` using the density against the trapezoid weights of ``U``."""
        return float((self.masses / self.grid.weights * self.grid.box_weights(U)).sum())


def l2_inner(f: GridField, g: GridField) -> float:
    _check_same(f.grid, g.grid)
    return float(np.sum(f.values * g.values * f.grid.weights))


def l2_norm(f: GridField) -> float:
    return float(np.sqrt(max(l2_inner(f, f), 0.0)))


def lp_norm(f: GridField, q: float, weights: np.ndarray | None = None) -> float:
    w = f.grid.weights if weights is None else weights
    return float(np.sum(np.abs(f.values) ** q * w) ** (1.0 / q))


def grad_sq_sum(values: np.ndarray, h) -> float:
    """Sum over all edges of squared forward differences over h, times cell volume."""
    total = 0.0
    vol = float(np.prod(h))
    for j in range(values.ndim):
        diff = np.diff(values, axis=j) / h[j]
        total += float(np.sum(diff * diff))
    return total * vol


def dirichlet_energy(f: GridField, atol: float = 1e-12) -> float:
    """Discrete ``||grad f||_2^2`` by forward differences.

    Equals ``<f, -Delta_h f>`` for the 5/7-point Laplacian, so Rayleigh
    bounds hold exactly at the discrete level.
    """
    scale = max(1.0, float(np.max(np.abs(f.values))))
    if f.boundary_max() > atol * scale:
        raise ValueError("dirichlet_energy needs a field vanishing on the boundary")
    return grad_sq_sum(f.values, f.grid.h)


def neg_laplacian(values: np.ndarray, h) -> np.ndarray:
    """``-Delta_h`` applied to node values, with zero Dirichlet data; boundary rows are 0."""
    out = np.zeros_like(values)
    inner = (slice(1, -1),) * values.ndim
    for j in range(values.ndim):
        lo = [slice(1, -1)] * values.ndim
        hi = [slice(1, -1)] * values.ndim
        lo[j] = slice(0, -2)
        hi[j] = slice(2, None)
        out[inner] += (2.0 * values[inner] - values[tuple(lo)] - values[tuple(hi)]) / h[j] ** 2
    return out
