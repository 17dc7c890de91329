import numpy as np
import pytest

from bmint.experiments import smc_population
from bmint.geometry import DomainSpec, make_grid, unit_square
from bmint.simulate import (EmptyEnsembleError, PathConfig, merge_ensembles, run_ensemble, sample_paths,
                            survival_ensemble)
from bmint.spectral import dirichlet_eigs, expected_exit_time, survival_probability


def test_config_validation(square, grid32):
    with pytest.raises(ValueError):
        PathConfig(0.0, 1.0)
    with pytest.raises(ValueError):
        PathConfig(1e-4, 1.0, b=(1.0, -1.0))
    with pytest.raises(ValueError):
        PathConfig(1e-4, 1.0, b=(1.0,)).horizons(2)
    with pytest.raises(ValueError):
        PathConfig(1e-4, 1.0, start=(1.5, 0.5)).start_points(square)


def test_deterministic(square, grid32):
    cfg = PathConfig(1e-4, 0.05, seed=11)
    a = run_ensemble(square, grid32, cfg, 50)
    b = run_ensemble(square, grid32, cfg, 50)
    assert np.array_equal(a.tau, b.tau)
    assert np.array_equal(a.occupations, b.occupations)


def test_backends_bit_identical(square, grid32):
    cfg = PathConfig(2e-4, 0.03, seed=5)
    a = run_ensemble(square, grid32, cfg, 20, backend="numba")
    b = run_ensemble(square, grid32, cfg, 20, backend="numpy")
    assert np.array_equal(a.tau, b.tau)
    assert np.array_equal(a.survived, b.survived)
    assert np.allclose(a.occupations, b.occupations, rtol=0, atol=1e-15)


def test_chunking_does_not_change_samples(square, grid32):
    cfg = PathConfig(1e-4, 0.05, seed=2)
    whole = run_ensemble(square, grid32, cfg, 40)
    parts = merge_ensembles([run_ensemble(square, grid32, cfg, 15), run_ensemble(square, grid32, cfg, 25, start=15)])
    assert np.array_equal(whole.tau, parts.tau)
    assert np.array_equal(whole.occupations, parts.occupations)


def test_occupation_bookkeeping(square, grid32):
    cfg = PathConfig(1e-4, 0.1, seed=3)
    ens = run_ensemble(square, grid32, cfg, 200, keep_occupations=False)
    horizon = cfg.t
    assert np.all(np.abs(ens.occ_total - np.minimum(ens.tau, horizon)) <= cfg.dt + 1e-12)
    path = sample_paths(square, grid32, cfg, sample=0)
    for i, occ in enumerate(path.occupations):
        assert occ.total == pytest.approx(ens.occ_total[0, i], abs=1e-12)


def test_survivor_occupation_equals_horizon(square, grid32):
    ens = survival_ensemble(square, grid32, PathConfig(1e-4, 0.02, seed=1), 100)
    tot = ens.occupations.reshape(ens.accepted, 2, -1).sum(axis=2)
    assert np.allclose(tot / 0.02, 1.0, atol=1e-10)


def test_short_horizon_survives():
    dom = DomainSpec((0, 0), (1, 1), 1)
    ens = run_ensemble(dom, make_grid(dom, 32), PathConfig(1e-4, 1e-3, seed=0), 10_000, keep_occupations=False)
    assert ens.acceptance >= 0.999


def test_mean_exit_time_against_spectral_oracle():
    dom = DomainSpec((0, 0), (1, 1), 1)
    g = make_grid(dom, 32)
    ens = run_ensemble(dom, g, PathConfig(1e-4, 10.0, seed=7), 10_000, keep_occupations=False)
    tau = ens.tau[:, 0]
    mean, se = tau.mean(), tau.std(ddof=1) / np.sqrt(len(tau))
    exact = expected_exit_time(dirichlet_eigs(make_grid(dom, 128), 50), (0.5, 0.5))
    assert abs(mean - exact) < 3 * se


def test_survival_probability_two_motions(square, grid32):
    t = 0.2
    ens = run_ensemble(square, grid32, PathConfig(1e-4, t, seed=9), 20_000, keep_occupations=False)
    s1 = survival_probability(dirichlet_eigs(make_grid(square, 128), 200), t, (0.5, 0.5))
    p = ens.acceptance
    se = np.sqrt(p * (1 - p) / ens.n_sampled)
    assert abs(p - s1**2) < 3 * se


def test_empty_ensemble_is_signalled(square, grid32):
    with pytest.raises(EmptyEnsembleError):
        survival_ensemble(square, grid32, PathConfig(1e-4, 3.0, seed=0), 20)


def test_half_ensembles_agree(square, grid32):
    cfg = PathConfig(1e-4, 0.1, seed=4)
    a = run_ensemble(square, grid32, cfg, 2000, keep_occupations=False)
    b = run_ensemble(square, grid32, cfg, 2000, start=2000, keep_occupations=False)
    ta, tb = a.tau.min(axis=1), b.tau.min(axis=1)
    ta, tb = np.minimum(ta, 0.1), np.minimum(tb, 0.1)
    pooled = np.sqrt(ta.var(ddof=1) / len(ta) + tb.var(ddof=1) / len(tb))
    assert abs(ta.mean() - tb.mean()) < 4 * pooled


def test_long_horizon_decay_rate():
    # direct sampling cannot reach t=3; a killed-particle population estimates log P(tau > t)
    dom = DomainSpec((0, 0), (1, 1), 1)
    res = smc_population(dom, lambda x: np.zeros(len(x)), 3.0, [1.0, 3.0], 1e-3, 4000, seed=0)
    rate = (res.log_z[1] - res.log_z[0]) / 2.0
    lam1 = np.pi**2
    assert abs(-2 * rate / (2 * lam1) - 1) < 0.10


def test_csv_rows_shape(square, grid32):
    ens = run_ensemble(square, grid32, PathConfig(1e-4, 0.05, seed=0), 5, keep_occupations=False)
    header, rows = ens.csv_rows()
    assert header[0] == "sample" and len(rows) == 5 and all(len(r) == len(header) for r in rows)
