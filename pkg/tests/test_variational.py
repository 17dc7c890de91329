import math

import numpy as np
import pytest

from bmint.geometry import (CompactSubset, DomainSpec, GridField, GridMeasure, dirichlet_energy, make_grid,
                            unit_square)
from bmint.spectral import dirichlet_eigs, schroedinger_principal
from bmint.variational import (FUNCTIONALS, DensityDecomposition, InfiniteValue, chi_B, dv_rate, gamma_probe,
                               gradient_check, heuristic_tuple, is_infinite, minimize_dv, rate_I, rate_I_eps,
                               rate_I_full, rate_J, theta, tilted_objective, tilted_sup)

U0 = CompactSubset((0.25, 0.25), (0.75, 0.75))


def _unit(grid, v):
    return v / math.sqrt(float(np.sum(v * v * grid.weights)))


def _ground(grid):
    return dirichlet_eigs(grid, 1).fields[0]


def _tilted(grid, a=0.3):
    x, y = grid.coords
    return _unit(grid, _ground(grid) * (1 + a * x))


# --- infinite sentinel -------------------------------------------------------------


def test_infinite_value_saturates_and_orders():
    v = InfiniteValue("no split")
    assert is_infinite(v + 3.0) and is_infinite(2.0 * v)
    assert (v + 1.0).reason == "no split"
    assert v > 1e300
    with pytest.raises(ValueError):
        v * -1.0


# --- Donsker-Varadhan -------------------------------------------------------------


def test_minimize_dv_ground_state(grid64):
    res = minimize_dv(grid64)
    assert res.value == pytest.approx(math.pi**2, rel=0.01)
    psi = res.minimizer.fields[0].values
    psi1 = _ground(grid64)
    psi = psi * np.sign(np.sum(psi * psi1))
    assert math.sqrt(float(np.sum((psi - psi1) ** 2 * grid64.weights))) < 0.02
    assert res.recompute() == pytest.approx(res.value, abs=1e-10)


def test_minimize_dv_l2_flow(grid32):
    a = minimize_dv(grid32, method="l2").value
    b = minimize_dv(grid32, method="inverse").value
    assert a == pytest.approx(b, rel=1e-5)


def test_dv_rate_at_ground_state(grid64):
    psi = _ground(grid64)
    mu = GridMeasure(psi**2 * grid64.weights, grid64)
    assert dv_rate(mu) == pytest.approx(dirichlet_eigs(grid64, 1).eigenvalues[0], rel=1e-10)


def test_dv_rate_boundary_mass_is_infinite(grid32):
    w = grid32.weights
    mu = GridMeasure(w / w.sum(), grid32)
    assert is_infinite(dv_rate(mu))


def test_dv_rate_needs_probability(grid32):
    with pytest.raises(ValueError):
        dv_rate(GridMeasure(2 * _ground(grid32) ** 2 * grid32.weights, grid32))


@pytest.mark.parametrize("name", FUNCTIONALS)
def test_gradient_check(name, grid32):
    assert gradient_check(name, make_grid(unit_square(), 16), n_states=10, seed=1) < 1e-4


# --- theta and chi -----------------------------------------------------------------


def test_theta_nested_boxes():
    dom = unit_square(2)
    vals = [theta(dom, CompactSubset((0.5 - r, 0.5 - r), (0.5 + r, 0.5 + r)), n=48).value
            for r in (0.15, 0.2, 0.25, 0.3)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_theta_scaling():
    dom = unit_square(2)
    small = theta(dom, U0, n=48).value
    big = theta(dom.scaled(2.0), U0.scaled(2.0), n=48).value
    assert big / small == pytest.approx(0.5, rel=0.02)


def test_theta_grid_refinement():
    dom = unit_square(2)
    a = theta(dom, U0, n=64).value
    b = theta(dom, U0, n=128).value
    assert a == pytest.approx(b, rel=0.03)


def test_theta_constraint_and_monotone_iterations():
    res = theta(unit_square(2), U0, n=48)
    phi = res.phi.values
    g = res.phi.grid
    assert float(np.sum(phi**4 * g.box_weights(U0))) == pytest.approx(1.0, abs=1e-6)
    assert res.diagnostics["monotone"]
    assert res.recompute() == pytest.approx(res.value, abs=1e-10)


def test_chi_feasible_box():
    dom = DomainSpec((0.0, 0.0), (2.0, 2.0), 2)
    res = chi_B(dom, n=64)
    psi = res.minimizer.fields[0]
    g = psi.grid
    assert float(np.sum(psi.values**2 * g.weights)) == pytest.approx(1.0, abs=1e-6)
    assert float(np.sum(psi.values**4 * g.weights)) == pytest.approx(1.0, abs=1e-6)
    assert chi_B(dom, n=128).value == pytest.approx(res.value, rel=0.03)


def test_chi_unit_square_infeasible():
    res = chi_B(unit_square(2), n=32)
    assert not res.finite and "|B| <= 1" in res.reason


def test_theta_trend_towards_large_boxes():
    dom = DomainSpec((0.0, 0.0), (2.0, 2.0), 2)
    vals = [theta(dom, CompactSubset((1 - r, 1 - r), (1 + r, 1 + r)), n=48).value for r in (0.5, 0.7, 0.9)]
    assert vals[0] >= vals[1] >= vals[2]


# --- rate_J --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def theta48():
    return theta(unit_square(2), U0, n=48)


def test_rate_J_at_theta_minimizer(theta48):
    g = theta48.phi.grid
    mu = GridMeasure(theta48.phi.values**4 * g.weights, g)
    assert rate_J(mu, U0, 2).value == pytest.approx(theta48.value, rel=0.01)


def test_rate_J_symmetric_point_bound(theta48):
    g = theta48.phi.grid
    x, y = g.coords
    dens = (_ground(g) * (1 + 0.4 * x * y)) ** 4
    dens /= float(np.sum(dens * g.box_weights(U0)))
    res = rate_J(GridMeasure(dens * g.weights, g), U0, 2)
    sym = 0.5 * 2 * dirichlet_energy(GridField(dens ** 0.25, g))
    assert res.value <= sym + 1e-6
    assert res.value >= theta48.value - 1e-6


def test_rate_J_needs_unit_mass_on_U(grid32):
    with pytest.raises(ValueError):
        rate_J(GridMeasure(_ground(grid32) ** 4 * grid32.weights, grid32), U0, 2)


# --- rate_I --------------------------------------------------------------------------


def test_rate_I_symmetric_split_exact(grid32):
    psi = _ground(grid32)
    mu = GridMeasure(psi**4 * grid32.weights, grid32)
    res = rate_I(mu, [1.0, 1.0])
    assert res.value == pytest.approx(dirichlet_eigs(grid32, 1).eigenvalues[0] * 2, rel=1e-8)


def test_rate_I_feasible_point_dominance_and_constraints(grid32):
    a, b = _ground(grid32), _tilted(grid32)
    mu = GridMeasure(a**2 * b**2 * grid32.weights, grid32)
    cand = DensityDecomposition([GridField(a, grid32), GridField(b, grid32)], [1.0, 1.0])
    res = rate_I(mu, [1.0, 1.0], init=[cand], seed=1)
    assert res.value <= cand.value() + 1e-6
    dec = res.minimizer
    assert np.allclose(dec.norms(), 1.0, atol=1e-6)
    assert np.max(np.abs(dec.product() - a**2 * b**2)) <= 1e-6 * np.max(a**2 * b**2)
    assert res.recompute() == pytest.approx(res.value, abs=1e-10)


def test_rate_I_monotone_in_b(grid32):
    a, b = _ground(grid32), _tilted(grid32, 0.6)
    mu = GridMeasure(a**2 * b**2 * grid32.weights, grid32)
    low = rate_I(mu, [1.0, 1.0], seed=2)
    high = rate_I(mu, [2.0, 1.0], init=[low.minimizer], seed=2)
    assert high.value >= low.value - 1e-9


def test_rate_I_infinite_cases(grid32):
    w = grid32.weights
    assert not rate_I(GridMeasure(w / w.sum(), grid32), [1.0, 1.0]).finite
    big = GridMeasure(4 * _ground(grid32) ** 4 * w, grid32)
    assert not rate_I(big, [1.0, 1.0]).finite


def test_rate_I_full_and_linearity(grid64):
    psi = _ground(grid64)
    w = grid64.weights
    mus = [GridMeasure(psi**2 * w, grid64)] * 2
    mu = GridMeasure(psi**4 * w, grid64)
    lam = dirichlet_eigs(grid64, 1).eigenvalues[0]
    assert rate_I_full(mu, mus, [1, 1], tol=1e-9) == pytest.approx(2 * lam, rel=1e-10)
    assert rate_I_full(mu, mus, [2, 1], tol=1e-9) / rate_I_full(mu, mus, [1, 1], tol=1e-9) == pytest.approx(1.5)
    wrong = GridMeasure(psi**4 * w * 1.1, grid64)
    assert is_infinite(rate_I_full(wrong, mus, [1, 1], tol=1e-9))


def test_rate_I_eps_forward_verification(grid64):
    from bmint.mollify import MollifierSpec, smooth_masses

    psi = _ground(grid64)
    w = grid64.weights
    spec = MollifierSpec(0.1)
    sm = smooth_masses((psi**2 * w)[None], spec, grid64)[0]
    mus = [GridMeasure(sm * w, grid64)] * 2
    mu = GridMeasure(sm**2 * w, grid64)
    val = rate_I_eps(mu, mus, [1, 1], 0.1, tol=1e-8, candidates=[psi, psi])
    assert val == pytest.approx(2 * dirichlet_eigs(grid64, 1).eigenvalues[0], rel=1e-8)


def test_gamma_probe_finite_for_smooth_target(grid32):
    psi = _ground(grid32)
    mus = [GridMeasure(psi**2 * grid32.weights, grid32)] * 2
    rows = gamma_probe(mus, [1, 1], [0.2, 0.1], 0.05)
    assert len(rows) == 2 and all(r.n_admissible > 0 for r in rows)
    lam = dirichlet_eigs(grid32, 1).eigenvalues[0]
    assert all(r.value >= 2 * lam - 1e-8 for r in rows)


# --- tilted sup ----------------------------------------------------------------------


def test_tilted_sup_decoupled(grid32):
    x, y = grid32.coords
    fs = [np.sin(np.pi * x), 0.5 * y]
    expected = sum(schroedinger_principal(grid32, GridField(f, grid32)) for f in fs)
    assert tilted_sup(np.zeros(grid32.shape), fs, grid32) == pytest.approx(expected, rel=0.01)


def test_tilted_sup_all_zero(grid32):
    z = np.zeros(grid32.shape)
    lam = dirichlet_eigs(grid32, 1).eigenvalues[0]
    assert tilted_sup(z, [z, z], grid32) == pytest.approx(-2 * lam, rel=0.01)


def test_tilted_sup_feasible_lower_bound(grid32):
    z = np.zeros(grid32.shape)
    c = 0.3
    psi = _ground(grid32)
    bound = tilted_objective(c * np.ones(grid32.shape), [z, z], [psi, psi], grid32)
    assert tilted_sup(c * np.ones(grid32.shape), [z, z], grid32) >= bound - 1e-9


# --- heuristic tuple ------------------------------------------------------------------


def test_heuristic_tuple(theta48):
    chk = heuristic_tuple(theta48, U0)
    assert chk.b[0] == chk.b[1]
    assert chk.cond1_residual < 1e-4
    assert chk.cond2_residual < 1e-6
    assert chk.j_identity_residual < 1e-8


def test_dv_rate_second_mode():
    g = make_grid(unit_square(), 128)
    x, y = g.coords
    psi = 2 * np.sin(2 * np.pi * x) * np.sin(np.pi * y)
    mu = GridMeasure(_unit(g, psi) ** 2 * g.weights, g)
    assert dv_rate(mu) == pytest.approx(5 * math.pi**2 / 2, rel=0.015)


def test_minimize_dv_cube():
    from bmint.geometry import unit_cube

    assert minimize_dv(make_grid(unit_cube(), 24)).value == pytest.approx(1.5 * math.pi**2, rel=0.02)


def test_minimize_dv_from_orthogonal_start(grid32):
    psi2 = GridField(dirichlet_eigs(grid32, 2).fields[1], grid32)
    res = minimize_dv(grid32, init=psi2, seed=3)
    assert res.value == pytest.approx(math.pi**2, rel=0.01)


def test_rate_I_symmetric_upper_bound(grid32):
    # psi~ = psi_1^2 normalised: mu = psi~^4 dx, symmetric split psi_i = psi~
    pt = _unit(grid32, _ground(grid32) ** 2)
    mu = GridMeasure(pt**4 * grid32.weights, grid32)
    bound = 0.5 * 2 * dirichlet_energy(GridField(pt, grid32))
    assert rate_I(mu, [1.0, 1.0]).value <= bound + 1e-6


def test_rate_I_eps_close_to_unsmoothed(grid64):
    from bmint.mollify import smooth_masses

    a, b = _ground(grid64), _tilted(grid64)
    w = grid64.weights
    eps = 2 / 64
    sa, sb = (smooth_masses((v**2 * w)[None], __import__("bmint.mollify", fromlist=["MollifierSpec"]).MollifierSpec(eps),
                            grid64)[0] for v in (a, b))
    smooth = rate_I_eps(GridMeasure(sa * sb * w, grid64), [GridMeasure(sa * w, grid64), GridMeasure(sb * w, grid64)],
                        [1, 1], eps, tol=1e-8, candidates=[a, b])
    full = rate_I_full(GridMeasure(a**2 * b**2 * w, grid64), [GridMeasure(a**2 * w, grid64),
                                                             GridMeasure(b**2 * w, grid64)], [1, 1], tol=1e-9)
    assert smooth == pytest.approx(full, rel=0.03)


def test_rate_I_eps_incompatible(grid64):
    psi = _ground(grid64)
    w = grid64.weights
    mus = [GridMeasure(psi**2 * w, grid64)] * 2
    assert is_infinite(rate_I_eps(GridMeasure(psi**4 * w * 1.2, grid64), mus, [1, 1], 0.1, tol=1e-6))


def test_gamma_probe_terminal_and_divergence(grid32):
    psi = _ground(grid32)
    w = grid32.weights
    lam = dirichlet_eigs(grid32, 1).eigenvalues[0]
    rows = gamma_probe([GridMeasure(psi**2 * w, grid32)] * 2, [1, 1], [0.2, 0.1], 0.05)
    assert abs(rows[-1].value / (2 * lam) - 1) <= 0.05
    unif = [GridMeasure(w / w.sum(), grid32)] * 2
    vals = [r.value for r in gamma_probe(unif, [1, 1], [0.25, 0.125, 0.0625], 0.05)]
    assert vals[0] < vals[1] < vals[2]


def test_gamma_probe_smaller_ball_not_lower(grid32):
    psi = _ground(grid32)
    w = grid32.weights
    x, y = grid32.coords
    m = [GridMeasure(_tilted(grid32) ** 2 * w, grid32), GridMeasure(psi**2 * w, grid32)]
    wide = gamma_probe(m, [1, 1], [0.1], 0.1)[0].value
    narrow = gamma_probe(m, [1, 1], [0.1], 0.02)[0].value
    assert narrow >= wide
