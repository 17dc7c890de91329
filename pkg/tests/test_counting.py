import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmint.counting import (CostCapError, OccupancyMap, audit, in_phi, pair_counts, phi_count_bound,
                            psi_cardinality, psi_enumerate)


def _label(*pairs):
    return tuple(tuple(p) for p in pairs)


def test_single_label_example():
    l = _label((1, 1))
    occ = OccupancyMap(2, 1, 2, {l: 2}, {l: 1})
    assert (occ.m1, occ.m3) == (1, 1)
    assert psi_cardinality(occ) == 2
    assert psi_enumerate(occ, [(1, 1, 1)]) == 2


def test_r_exceeding_A_rejected():
    l = _label((1, 2))
    with pytest.raises(ValueError):
        OccupancyMap(2, 1, 2, {l: 1}, {l: 2})


def test_sequences_outside_phi_count_zero():
    l = _label((1, 2))
    occ = OccupancyMap(1, 1, 2, {l: 1}, {l: 1})
    assert not in_phi(occ, [(2, 1)])
    assert psi_enumerate(occ, [(2, 1)]) == 0


def test_k1_counts_are_zero_or_one():
    for a, b in itertools.product((1, 2), repeat=2):
        l = _label((a, b))
        for r in (0, 1):
            occ = OccupancyMap(1, 1, 2, {l: 1}, {l: r})
            for N in ([(a, b)], [(b, a)], [(1, 1)]):
                assert psi_enumerate(occ, N) in (0, 1)


def test_pure_count_case_k4():
    rows = [r for r in audit(4, 2, 2) if r.m1 == r.K]
    assert rows and all(r.equal for r in rows)


def test_cost_cap():
    l = _label((1, 1))
    with pytest.raises(CostCapError):
        psi_enumerate(OccupancyMap(9, 1, 1, {l: 9}, {}), [(1,) * 10])
    with pytest.raises(CostCapError):
        audit(7, 1, 2)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_formula_matches_enumeration_on_random_inputs(data):
    p = data.draw(st.integers(1, 2))
    R = data.draw(st.integers(1, 2))
    K = data.draw(st.integers(0, 4 if p == 2 else 5))
    m1 = data.draw(st.integers(0, K))
    N = [tuple(data.draw(st.lists(st.integers(1, R), min_size=K + 1, max_size=K + 1))) for _ in range(p)]
    perms = [data.draw(st.permutations(range(K))) for _ in range(p)]
    # realise (A, r) from one permutation tuple so Psi is nonempty
    A, r = {}, {}
    for j in range(K):
        lab = tuple((N[i][perms[i][j]], N[i][perms[i][j] + 1]) for i in range(p))
        A[lab] = A.get(lab, 0) + 1
        if j < m1:
            r[lab] = r.get(lab, 0) + 1
    occ = OccupancyMap(K, p, R, A, r)
    assert in_phi(occ, N)
    n = psi_enumerate(occ, N)
    assert n >= 1
    assert n == psi_cardinality(occ)


def test_phi_bound_holds():
    occ = OccupancyMap(2, 1, 2, {_label((1, 1)): 2}, {})
    count, bound = phi_count_bound(occ)
    assert count == 1 and count <= bound
    occ = OccupancyMap(3, 2, 2, {_label((1, 2), (2, 2)): 1, _label((2, 1), (2, 2)): 1}, {})
    count, bound = phi_count_bound(occ)
    assert 0 <= count <= bound


def test_phi_bound_zero_marginal_row():
    occ = OccupancyMap(2, 1, 2, {_label((2, 2)): 1}, {})
    count, bound = phi_count_bound(occ)
    assert bound >= 0 and count <= bound


def test_pair_counts():
    assert pair_counts((1, 2, 1)) == {(1, 2): 1, (2, 1): 1}


def test_cardinality_integral_for_large_inputs():
    l1, l2 = _label((1, 2), (1, 1)), _label((2, 1), (1, 1))
    occ = OccupancyMap(40, 2, 2, {l1: 20, l2: 20}, {l1: 7, l2: 13})
    n = psi_cardinality(occ)
    assert isinstance(n, int) and n > 2**64
