import numpy as np
import pytest

from bmint.geometry import GridField, GridMeasure, GridMismatchError
from bmint.mollify import (MollifierSpec, intersection_density, intersection_integrals, profile_values,
                           smooth_masses, smooth_occupation, smooth_test_function, test_integral)
from bmint.spectral import dirichlet_eigs


def test_spec_validation(grid32):
    with pytest.raises(ValueError):
        MollifierSpec(0.0)
    with pytest.raises(ValueError):
        MollifierSpec(0.1, "gauss")
    with pytest.raises(ValueError):
        MollifierSpec(0.05).check(grid32)
    MollifierSpec(2 / 32).check(grid32)


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("profile", ["bump", "cosine"])
def test_profile_integrates_to_one(d, profile):
    # midpoint rule on a fine cube around the support
    m = 80 if d == 2 else 40
    ax = (np.arange(m) + 0.5) / m * 2 - 1
    pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1) * 0.1
    vals = profile_values(MollifierSpec(0.1, profile), pts)
    assert vals.sum() * (0.2 / m) ** d == pytest.approx(1.0, rel=2e-3)


def test_smoothing_preserves_interior_mass(grid64):
    masses = np.zeros(grid64.shape)
    masses[32, 32] = 0.7
    dens, dropped = smooth_occupation(GridMeasure(masses, grid64), MollifierSpec(0.1), return_dropped=True)
    assert float(np.sum(dens.values * grid64.weights)) == pytest.approx(0.7, rel=1e-12)
    assert abs(dropped) < 1e-12


def test_boundary_truncation_reports_dropped_mass(grid64):
    masses = np.zeros(grid64.shape)
    masses[2, 32] = 1.0
    _, dropped = smooth_occupation(GridMeasure(masses, grid64), MollifierSpec(0.1), return_dropped=True)
    assert dropped > 0.1


def test_adjoint_identity(grid32):
    rng = np.random.default_rng(1)
    m = rng.random(grid32.shape)
    f = GridField(rng.normal(size=grid32.shape), grid32)
    spec = MollifierSpec(0.1)
    lhs = test_integral(smooth_occupation(GridMeasure(m, grid32), spec), f)
    rhs = float(np.sum(m * smooth_test_function(f, spec).values))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_backends_agree(grid32):
    rng = np.random.default_rng(2)
    m = rng.random((3, 2) + grid32.shape)
    spec = MollifierSpec(0.15)
    assert np.allclose(smooth_masses(m, spec, grid32, "numba"), smooth_masses(m, spec, grid32, "numpy"),
                       rtol=1e-13, atol=1e-13)


def test_product_with_zero_field(grid32):
    psi = dirichlet_eigs(grid32, 1).field(0)
    assert np.all(intersection_density([psi, psi * 0.0]).values == 0)


def test_product_of_ground_states(grid64):
    psi = dirichlet_eigs(grid64, 1).fields[0]
    sq = GridField(psi**2, grid64)
    one = GridField(np.ones(grid64.shape), grid64)
    assert test_integral(intersection_density([sq, sq]), one) == pytest.approx(
        float(np.sum(psi**4 * grid64.weights)), rel=1e-13)


def test_product_order_independent(grid32):
    rng = np.random.default_rng(3)
    fs = [GridField(rng.random(grid32.shape), grid32) for _ in range(3)]
    a = intersection_density(fs).values
    b = intersection_density(fs[::-1]).values
    assert np.array_equal(a, b)


def test_test_integral_signs_and_linearity(grid32):
    rng = np.random.default_rng(4)
    dens = GridField(rng.random(grid32.shape), grid32)
    one = GridField(np.ones(grid32.shape), grid32)
    total = float(np.sum(dens.values * grid32.weights))
    assert test_integral(dens, one) == pytest.approx(total)
    assert test_integral(dens, -one) == pytest.approx(-total)
    f, g = (GridField(rng.normal(size=grid32.shape), grid32) for _ in range(2))
    assert test_integral(dens, 2.0 * f + (-0.5) * g) == pytest.approx(
        2 * test_integral(dens, f) - 0.5 * test_integral(dens, g), abs=1e-10)


def test_grid_mismatch(grid32, grid64):
    with pytest.raises(GridMismatchError):
        test_integral(grid32.zeros(), grid64.zeros())


def test_intersection_integrals_match_fieldwise(grid32):
    rng = np.random.default_rng(5)
    occ = rng.random((4, 2) + grid32.shape) * 1e-3
    spec = MollifierSpec(0.1)
    f = GridField(rng.normal(size=grid32.shape), grid32)
    batch = intersection_integrals(occ, spec, grid32, f)
    for k in range(4):
        dens = [smooth_occupation(GridMeasure(occ[k, i], grid32), spec) for i in range(2)]
        val = test_integral(intersection_density(dens), f)
        assert batch[k] == pytest.approx(val, rel=1e-12)
        assert np.isfinite(val)
