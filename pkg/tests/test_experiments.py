import math

import numpy as np
import pytest

from bmint.experiments import (DEFAULT_CATALOG, ExperimentConfig, TestFunction, eps_contraction,
                               free_space_isl_mass, gartner_ellis_p1, heuristic_audit, isl_mass_mean,
                               ldp_tuple_probe, rows_to_table, scaling_check_isl_mass, smc_population)
from bmint.geometry import CompactSubset, DomainSpec, unit_square

P1 = DomainSpec((0, 0), (1, 1), 1)


def test_config_round_trip():
    cfg = ExperimentConfig("ldp_tuple", b=(2, 1), U=CompactSubset((0.2, 0.2), (0.8, 0.8)), seed=4)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("bad", [
    {"name": "nope"},
    {"name": "ldp_tuple", "t_ladder": ()},
    {"name": "ldp_tuple", "t_ladder": (2.0, 1.0)},
    {"name": "ldp_tuple", "eps_ladder": (0.0, 0.1)},
    {"name": "ldp_tuple", "budget": 0},
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**bad)


def test_test_functions():
    for fn in DEFAULT_CATALOG:
        assert TestFunction.from_dict(fn.to_dict()) == fn
    x = np.random.default_rng(0).random((400, 2))
    v = TestFunction("signed_bump", 1.0, 0.2).evaluate(unit_square(), x)
    assert v.min() < 0 < v.max()


def test_smc_backends_agree():
    f = TestFunction("sine", 0.5)
    a = smc_population(P1, lambda x: f.evaluate(P1, x), 0.5, [0.25, 0.5], 1e-3, 500, seed=3, backend="numba")
    b = smc_population(P1, lambda x: f.evaluate(P1, x), 0.5, [0.25, 0.5], 1e-3, 500, seed=3, backend="numpy")
    assert np.allclose(a.log_z, b.log_z, rtol=0, atol=1e-12)


def test_gartner_ellis_constant_potential():
    cfg = ExperimentConfig("gartner_ellis", domain=P1, catalog=(TestFunction("constant", 0.5),),
                           t_ladder=(1.0, 2.0), budget=2000, seed=1)
    rep = gartner_ellis_p1(cfg)
    (err,) = rep.relative_errors().values()
    assert err < 0.03


def test_gartner_ellis_rejects_large_potentials():
    cfg = ExperimentConfig("gartner_ellis", domain=P1, catalog=(TestFunction("constant", 3.0),))
    with pytest.raises(ValueError):
        gartner_ellis_p1(cfg)


@pytest.fixture(scope="module")
def ldp_rows():
    cfg = ExperimentConfig("ldp_tuple", domain=unit_square(2), n=32, dt=2e-4, eps=0.1, b=(2, 1),
                           t_ladder=(1.0, 3.0), budget=600, seed=0)
    return ldp_tuple_probe(cfg)


def test_ldp_occupation_concentrates(ldp_rows):
    first, last = ldp_rows[0], ldp_rows[-1]
    assert np.median(last.l1_occupation) < np.median(first.l1_occupation)


def test_ldp_intersection_mass_stays_bounded(ldp_rows):
    masses = [r.intersection_mass for r in ldp_rows]
    assert all(0.5 < m < 10 for m in masses)


def test_ldp_time_homogeneity(ldp_rows):
    for r in ldp_rows:
        assert r.median_mass[0] / r.median_mass[1] == pytest.approx(2.0, rel=0.10)


def test_heuristic_audit_and_perturbation():
    U = CompactSubset((0.25, 0.25), (0.75, 0.75))
    rep = heuristic_audit(unit_square(2), U, n=48)
    assert rep.ok and rep.b[0] == rep.b[1]
    bad = heuristic_audit(unit_square(2), U, n=48, perturb=0.01, seed=1)
    assert bad.cond1_residual > rep.cond1_residual
    assert not bad.ok


def test_isl_oracle_against_mc():
    x = free_space_isl_mass(0.05, 2, 0.05, (0.05 / 4) ** 2, 400, seed=2)
    exact = isl_mass_mean(0.05, 2, 0.05)
    assert abs(x.mean() - exact) < 3 * x.std(ddof=1) / math.sqrt(len(x))


def test_isl_oracle_scaling_limit():
    # eps -> 0: the oracle ratio approaches the scaling exponent
    assert isl_mass_mean(0.1, 2, 0.005) / isl_mass_mean(0.05, 2, 0.005) == pytest.approx(2.0, rel=0.02)


def test_pair_sum_backends_agree():
    a = free_space_isl_mass(0.02, 3, 0.05, 1e-4, 3, seed=0, backend="numba")
    b = free_space_isl_mass(0.02, 3, 0.05, 1e-4, 3, seed=0, backend="numpy")
    assert np.allclose(a, b, rtol=1e-10)


def test_scaling_same_horizon_unbiased():
    rep = scaling_check_isl_mass(d=2, s=0.05, factor=1.0, eps=0.04, n_samples=400, seed=5)
    assert rep.expected == 1.0
    assert abs(rep.z) < 3


def test_eps_contraction_rows():
    cfg = ExperimentConfig("eps_contraction", n=40, dt=1e-4, catalog=(TestFunction("sine", 1.0),),
                           eps_ladder=(0.1, 0.2), budget=60, seed=0)
    rows = eps_contraction(cfg, t=0.1)
    assert [r.eps for r in rows] == [0.1, 0.2]
    assert all(r.n == 60 for r in rows)
    header, table = rows_to_table(rows)
    assert header[:2] == ["function", "eps"] and len(table) == 2
