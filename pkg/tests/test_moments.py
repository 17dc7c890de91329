import numpy as np
import pytest

from bmint.experiments import TestFunction
from bmint.geometry import DomainSpec, GridField, make_grid
from bmint.mollify import MollifierSpec, smooth_test_function
from bmint.moments import (QuadratureError, exact_moment_k1, exact_moment_k2, first_moment_dual, jackknife,
                           mc_moment, occupation_mean, prolong, restrict, start_density,
                           streamed_samples)
from bmint.simulate import PathConfig, run_ensemble
from bmint.spectral import dirichlet_eigs, survival_probability


@pytest.fixture(scope="module")
def p1():
    dom = DomainSpec((0, 0), (1, 1), 1)
    coarse = make_grid(dom, 32)
    fine = make_grid(dom, 64)
    return dom, coarse, dirichlet_eigs(fine, fine.n_interior)


def test_restrict_prolong_adjoint(p1):
    dom, coarse, basis = p1
    rng = np.random.default_rng(0)
    m = rng.random(basis.grid.shape)
    v = rng.random(coarse.shape)
    assert float(np.sum(restrict(m, basis.grid, coarse) * v)) == pytest.approx(
        float(np.sum(m * prolong(v, basis.grid, coarse))), rel=1e-12)


def test_occupation_mean_total(p1):
    dom, coarse, basis = p1
    T = 0.2
    masses, err = occupation_mean(basis, T, (0.5, 0.5), coarse)
    assert masses.sum() == pytest.approx(T * survival_probability(basis, T, (0.5, 0.5)), rel=1e-8)
    assert err < 1e-8


def test_two_summation_orders_agree(p1):
    dom, coarse, basis = p1
    f = TestFunction("sine", 1.0).on_grid(coarse)
    a = exact_moment_k1(f, 0.3, 0.1, basis=basis)
    b = first_moment_dual(f, 0.3, 0.1, basis=basis)
    assert a == pytest.approx(b, rel=1e-7)


def test_first_moment_against_mc(p1):
    dom, coarse, basis = p1
    f = TestFunction("bump", 1.0, width=0.25).on_grid(coarse)
    exact, err = exact_moment_k1(f, 0.3, 0.1, basis=basis, return_error=True)
    ens = run_ensemble(dom, coarse, PathConfig(1e-4, 0.3, seed=21), 20_000)
    mc, se = mc_moment(1, f, 0.3, 0.1, ens)
    assert abs(mc - exact) <= 3 * se + err


def test_second_moment_cauchy_schwarz(p1):
    dom, coarse, basis = p1
    f = TestFunction("sine", 1.0).on_grid(coarse)
    k1 = exact_moment_k1(f, 0.3, 0.1, basis=basis)
    k2 = exact_moment_k2(f, 0.3, 0.1, basis=basis)
    assert k2 / k1**2 >= 1.0


def test_second_moment_against_mc(p1):
    dom, coarse, basis = p1
    f = TestFunction("constant", 1.0).on_grid(coarse)
    exact, err = exact_moment_k2(f, 0.3, 0.2, basis=basis, return_error=True)
    vals = streamed_samples(dom, coarse, PathConfig(1e-4, 0.3, seed=8), 20_000, [(f, MollifierSpec(0.2))])[0]
    mc, se = jackknife(vals**2)
    assert abs(mc - exact) <= 3 * se + err


def test_jackknife_matches_standard_error():
    rng = np.random.default_rng(3)
    y = rng.normal(size=500)
    mean, se = jackknife(y)
    assert mean == pytest.approx(y.mean())
    assert se == pytest.approx(y.std(ddof=1) / np.sqrt(len(y)), rel=1e-10)


def test_random_start_rejected(p1):
    dom, coarse, basis = p1
    f = TestFunction("constant", 1.0).on_grid(coarse)
    with pytest.raises(ValueError):
        exact_moment_k1(f, 0.3, 0.1, start="uniform", basis=basis)


def test_mismatched_grids_rejected(p1):
    dom, coarse, basis = p1
    f = GridField(np.ones((21, 21)), make_grid(dom, 20))
    with pytest.raises((ValueError, QuadratureError)):
        exact_moment_k1(f, 0.3, 0.1, basis=basis)


def test_constant_f_reduces_to_occupation_integral(p1):
    # f = 1: the mollifier integrates out up to boundary truncation; compare the two orders
    dom, coarse, basis = p1
    f = TestFunction("constant", 1.0).on_grid(coarse)
    assert exact_moment_k1(f, 0.2, 0.1, basis=basis) == pytest.approx(
        first_moment_dual(f, 0.2, 0.1, basis=basis), rel=1e-6)


def test_vanishing_horizon(p1):
    # |<f, l_eps,t>| <= t^p sup|f| since phi_eps has unit mass; the ratio tends to (phi_eps * f)(x)
    dom, coarse, basis = p1
    f = TestFunction("sine", 1.0).on_grid(coarse)
    vals = {t: exact_moment_k1(f, t, 0.1, basis=basis) for t in (0.01, 0.001)}
    assert all(0 < v <= t * 1.0 for t, v in vals.items())
    smoothed = float(np.sum(smooth_test_function(f, MollifierSpec(0.1)).values * start_density(coarse, (0.5, 0.5))
                            * coarse.weights))
    assert vals[0.001] / 0.001 == pytest.approx(smoothed, rel=0.01)


def test_second_moment_exchangeable_starts():
    dom = DomainSpec((0, 0), (1, 1), 2)
    coarse = make_grid(dom, 8)
    fine = make_grid(dom, 16)
    basis = dirichlet_eigs(fine, fine.n_interior)
    f = TestFunction("sine", 1.0).on_grid(coarse)
    xs = [(0.4, 0.5), (0.55, 0.45)]
    a = exact_moment_k2(f, 0.1, 0.25, start=xs, basis=basis)
    b = exact_moment_k2(f, 0.1, 0.25, start=xs[::-1], basis=basis)
    assert a == pytest.approx(b, rel=1e-8)


def test_mc_moment_trivial_cases(p1):
    dom, coarse, basis = p1
    ens = run_ensemble(dom, coarse, PathConfig(1e-4, 0.05, seed=0), 200)
    zero = GridField(np.zeros(coarse.shape), coarse)
    assert mc_moment(1, zero, 0.05, 0.1, ens) == (0.0, 0.0)
    pos = TestFunction("bump", 1.0, 0.2).on_grid(coarse)
    assert mc_moment(2, pos, 0.05, 0.1, ens)[0] >= 0
    with pytest.raises(ValueError):
        mc_moment(4, pos, 0.05, 0.1, ens)
