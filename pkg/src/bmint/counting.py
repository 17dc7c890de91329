"""Occupation-number counting for permuted time slices.

Setting.  There are ``K = m1 + m3`` slots; the first ``m1`` form the block
``S_le`` and the last ``m3`` the block ``S_gt``.  Each motion ``i`` carries a
label sequence ``N_i`` of length ``K + 1`` over ``{1..R}``, so slot ``j``
carries the pair ``(N_i[j], N_i[j+1])``.  A tuple of permutations
``sigma_i`` of the slots moves pairs around; the joint label of slot ``j`` is
``l = (pair_1(sigma_1(j)), ..., pair_p(sigma_p(j)))``.  ``r(l)`` counts joint
label ``l`` on ``S_le`` and ``A(l) - r(l)`` on ``S_gt``.

``psi_cardinality`` is the closed formula, ``psi_enumerate`` the brute-force
count, ``audit`` compares them over every admissible input.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ._accel import njit


class CostCapError(RuntimeError):
    """Raised when an enumeration would exceed its documented budget."""


def _as_label(l, p):
    l = tuple(tuple(int(v) for v in pair) for pair in l)
    if len(l) != p or any(len(pair) != 2 for pair in l):
        raise ValueError(f"label {l} is not a {p}-tuple of pairs")
    return l


@dataclass(frozen=True)
class OccupancyMap:
    """Occupation numbers ``A`` and ``r`` on joint labels ``l in ({1..R}^2)^p``."""

    k: int
    p: int
    R: int
    A: dict = field(default_factory=dict)
    r: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p < 1 or self.R < 1 or self.k < 0:
            raise ValueError("need p >= 1, R >= 1, k >= 0")
        A = {}
        for l, c in self.A.items():
            l = _as_label(l, self.p)
            if any(not 1 <= v <= self.R for pair in l for v in pair):
                raise ValueError(f"label {l} outside 1..{self.R}")
            if int(c) < 0:
                raise ValueError("negative occupation number")
            if c:
                A[l] = int(c)
        r = {}
        for l, c in self.r.items():
            l = _as_label(l, self.p)
            if int(c) < 0:
                raise ValueError("negative occupation number")
            if c:
                r[l] = int(c)
            if int(c) > A.get(l, 0):
                raise ValueError(f"r({l})={c} exceeds A({l})={A.get(l, 0)}")
        if sum(A.values()) > self.k:
            raise ValueError("sum of A exceeds k")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "r", r)

    @property
    def m1(self) -> int:
        return sum(self.r.values())

    @property
    def m3(self) -> int:
        return sum(self.A.values()) - self.m1

    @property
    def K(self) -> int:
        return sum(self.A.values())

    def marginal(self, i: int) -> Counter:
        out = Counter()
        for l, c in self.A.items():
            out[l[i]] += c
        return out

    def key(self) -> str:
        items = sorted((l, c, self.r.get(l, 0)) for l, c in self.A.items())
        return ";".join(f"{l}:{c}/{rc}" for l, c, rc in items)


def _cardinality(m1: int, m3: int, marginals, A_counts, r_counts) -> int:
    num = math.factorial(m1) * math.factorial(m3)
    for marg in marginals:
        for c in marg:
            num *= math.factorial(c)
    den = 1
    for a, r in zip(A_counts, r_counts):
        den *= math.factorial(a)
        num *= math.comb(a, r)
    q, rem = divmod(num, den)
    if rem:  # the formula is always integral; a remainder means a bug upstream
        raise ArithmeticError("non-integral cardinality")
    return q


def psi_cardinality(occ: OccupancyMap) -> int:
    """Closed-form ``#Psi(A, r, N)`` for any ``N`` in ``Phi(A)`` (exact integer)."""
    labels = list(occ.A)
    return _cardinality(occ.m1, occ.m3, [list(occ.marginal(i).values()) for i in range(occ.p)],
                        [occ.A[l] for l in labels], [occ.r.get(l, 0) for l in labels])


def pair_counts(seq) -> Counter:
    seq = list(seq)
    return Counter(zip(seq[:-1], seq[1:]))


def in_phi(occ: OccupancyMap, N) -> bool:
    """Whether the label sequences ``N`` realise the marginals of ``A``."""
    if len(N) != occ.p:
        return False
    for i, seq in enumerate(N):
        if len(seq) != occ.K + 1:
            return False
        if pair_counts(seq) != occ.marginal(i):
            return False
    return True


# --------------------------------------------------------------------------
# brute force

def _permutations(K: int) -> np.ndarray:
    if K == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.permutations(range(K))), dtype=np.int64)


@njit
def _count_tuples(perms, codes, m1, target_r, target_rest, n_labels):
    # codes: (p, K) per-motion pair code in slot order; p in {1, 2}
    p = codes.shape[0]
    K = codes.shape[1]
    n = perms.shape[0]
    cnt_r = np.zeros(n_labels, np.int64)
    cnt_s = np.zeros(n_labels, np.int64)
    total = 0
    if p == 1:
        for a in range(n):
            cnt_r[:] = 0
            cnt_s[:] = 0
            for j in range(K):
                c = codes[0, perms[a, j]]
                if j < m1:
                    cnt_r[c] += 1
                else:
                    cnt_s[c] += 1
            ok = True
            for c in range(n_labels):
                if cnt_r[c] != target_r[c] or cnt_s[c] != target_rest[c]:
                    ok = False
                    break
            if ok:
                total += 1
        return total
    side = int(np.sqrt(n_labels) + 0.5)
    for a in range(n):
        for b in range(n):
            cnt_r[:] = 0
            cnt_s[:] = 0
            for j in range(K):
                c = codes[0, perms[a, j]] * side + codes[1, perms[b, j]]
                if j < m1:
                    cnt_r[c] += 1
                else:
                    cnt_s[c] += 1
            ok = True
            for c in range(n_labels):
                if cnt_r[c] != target_r[c] or cnt_s[c] != target_rest[c]:
                    ok = False
                    break
            if ok:
                total += 1
    return total


def _pair_code(a: int, b: int, R: int) -> int:
    return (a - 1) * R + (b - 1)


def psi_enumerate(occ: OccupancyMap, N, max_tuples: float = 2e9) -> int:
    """Brute-force ``#Psi(A, r, N)``: loop over every permutation tuple of the slots."""
    if occ.p > 2:
        raise CostCapError("enumeration supports p <= 2")
    K = occ.K
    if K > 8:
        raise CostCapError("enumeration supports k <= 8")
    if math.factorial(K) ** occ.p > max_tuples:
        raise CostCapError(f"{math.factorial(K) ** occ.p} permutation tuples exceed the cap")
    if len(N) != occ.p or any(len(seq) != K + 1 for seq in N):
        return 0
    R = occ.R
    if any(not 1 <= int(v) <= R for seq in N for v in seq):
        raise ValueError("label outside 1..R")
    codes = np.array([[_pair_code(seq[j], seq[j + 1], R) for j in range(K)] for seq in N],
                     dtype=np.int64).reshape(occ.p, K)
    side = R * R
    n_labels = side ** occ.p
    target_r = np.zeros(n_labels, np.int64)
    target_s = np.zeros(n_labels, np.int64)
    for l, c in occ.A.items():
        code = 0
        for pair in l:
            code = code * side + _pair_code(pair[0], pair[1], R)
        rc = occ.r.get(l, 0)
        target_r[code] = rc
        target_s[code] = c - rc
    return int(_count_tuples(_permutations(K), codes, occ.m1, target_r, target_s, n_labels))


# --------------------------------------------------------------------------
# Phi(A): label sequences with prescribed pair counts

def walks(K: int, R: int):
    """All label sequences of length ``K + 1`` over ``1..R``."""
    return itertools.product(range(1, R + 1), repeat=K + 1)


def phi_enumerate(occ: OccupancyMap) -> int:
    """``#Phi(A)`` by enumeration: product over motions of matching sequences."""
    K = occ.K
    if K > 8 or occ.R ** (K + 1) > 10**6:
        raise CostCapError("Phi enumeration too large")
    total = 1
    for i in range(occ.p):
        target = occ.marginal(i)
        total *= sum(1 for w in walks(K, occ.R) if pair_counts(w) == target)
    return total


def phi_bound(occ: OccupancyMap) -> float:
    """``k^p * prod_i prod_{l1} Abar_i(l1)! / prod_{l} A_i(l)!`` (first-component marginal ``Abar``)."""
    val = occ.k ** occ.p
    for i in range(occ.p):
        Ai = occ.marginal(i)
        bar = Counter()
        for (a, _), c in Ai.items():
            bar[a] += c
        num = 1
        for c in bar.values():
            num *= math.factorial(c)
        den = 1
        for c in Ai.values():
            den *= math.factorial(c)
        val *= num / den
    return float(val)


def phi_count_bound(occ: OccupancyMap):
    """``(#Phi(A) by enumeration, bound)``."""
    if occ.k > 6:
        raise CostCapError("phi_count_bound supports k <= 6")
    return phi_enumerate(occ), phi_bound(occ)


# --------------------------------------------------------------------------
# exhaustive audit

@njit
def _distinct_orders(perms, codes_row, base):
    # every slot order of one motion's pair codes, grouped: (code sequences, multiplicity)
    n = perms.shape[0]
    K = perms.shape[1]
    keys = np.empty(n, np.int64)
    for a in range(n):
        key = 0
        for j in range(K):
            key = key * base + codes_row[perms[a, j]]
        keys[a] = key
    keys.sort()
    uniq = np.empty(n, np.int64)
    mult = np.empty(n, np.int64)
    m = 0
    for a in range(n):
        if m > 0 and keys[a] == uniq[m - 1]:
            mult[m - 1] += 1
        else:
            uniq[m] = keys[a]
            mult[m] = 1
            m += 1
    seqs = np.empty((m, K), np.int64)
    for u in range(m):
        key = uniq[u]
        for j in range(K - 1, -1, -1):
            seqs[u, j] = key % base
            key //= base
    return seqs, mult[:m]


@njit
def _hist_pairs(seq1, mult1, seq2, mult2, mul, n_joint, m1):
    # joint slot code = seq1 * mul + seq2; key = sorted S_le codes then sorted S_gt codes, base n_joint
    K = seq1.shape[1]
    total = seq1.shape[0] * seq2.shape[0]
    keys = np.empty(total, np.int64)
    weights = np.empty(total, np.int64)
    cr = np.zeros(n_joint, np.int64)
    cs = np.zeros(n_joint, np.int64)
    q = 0
    for a in range(seq1.shape[0]):
        for b in range(seq2.shape[0]):
            cr[:] = 0
            cs[:] = 0
            for j in range(K):
                c = seq1[a, j] * mul + seq2[b, j]
                if j < m1:
                    cr[c] += 1
                else:
                    cs[c] += 1
            key = 0
            for c in range(n_joint):
                for _ in range(cr[c]):
                    key = key * n_joint + c
            for c in range(n_joint):
                for _ in range(cs[c]):
                    key = key * n_joint + c
            keys[q] = key
            weights[q] = mult1[a] * mult2[b]
            q += 1
    return keys, weights


def _encode_counts(r_vec, s_vec, n_joint):
    key = 0
    for vec in (r_vec, s_vec):
        for c, cnt in enumerate(vec):
            for _ in range(int(cnt)):
                key = key * n_joint + c
    return key


def _contingency_tables(rows, cols):
    """All nonnegative integer matrices with the given row and column sums."""
    nr, nc = len(rows), len(cols)
    out = []
    mat = [[0] * nc for _ in range(nr)]

    def rec(i, j, col_left):
        if i == nr:
            if all(c == 0 for c in col_left):
                out.append([row[:] for row in mat])
            return
        row_left = rows[i] - sum(mat[i][:j])
        if j == nc - 1:
            v = row_left
            if v <= col_left[j]:
                mat[i][j] = v
                col_left[j] -= v
                rec(i + 1, 0, col_left)
                col_left[j] += v
            mat[i][j] = 0
            return
        for v in range(min(row_left, col_left[j]) + 1):
            mat[i][j] = v
            col_left[j] -= v
            rec(i, j + 1, col_left)
            col_left[j] += v
        mat[i][j] = 0

    rec(0, 0, list(cols))
    return out


def _joint_labels(p, R):
    pairs = [(a, b) for a in range(1, R + 1) for b in range(1, R + 1)]
    return pairs, list(itertools.product(pairs, repeat=p))


def _expected_table(marg_vecs, m1, p, R, K):
    """All valid ``(A, r)`` with the given per-motion pair counts, keyed like ``_hist_pairs``."""
    pairs, joint = _joint_labels(p, R)
    side = len(pairs)
    if p == 1:
        tables = [np.array(marg_vecs[0], dtype=np.int64)]
    else:
        tables = [np.array(t, dtype=np.int64).reshape(-1)
                  for t in _contingency_tables(list(marg_vecs[0]), list(marg_vecs[1]))]
    expected = {}
    marginals = [list(m) for m in marg_vecs]
    for A_vec in tables:
        nz = np.flatnonzero(A_vec)
        a_nz = [int(A_vec[c]) for c in nz]
        for choice in itertools.product(*[range(a + 1) for a in a_nz]):
            if sum(choice) != m1:
                continue
            r_vec = np.zeros(side**p, dtype=np.int64)
            r_vec[nz] = choice
            card = _cardinality(m1, K - m1, marginals, a_nz, choice)
            expected[_encode_counts(r_vec, A_vec - r_vec, side**p)] = card
    return expected


@dataclass
class AuditRow:
    """One ``(A, r)`` for one class of label sequences sharing the same pair counts.

    ``enum_min``/``enum_max`` range over every ``N`` in the class (``n_sequences`` of them).
    """

    k: int
    p: int
    R: int
    K: int
    m1: int
    a_hash: str
    formula: int
    enum_min: int
    enum_max: int
    n_sequences: int

    @property
    def equal(self) -> bool:
        return self.enum_min == self.enum_max == self.formula


def _hash_key(key: int) -> str:
    return format(key, "x")


def _class_hash(mkey) -> str:
    return hashlib.sha1(repr(mkey).encode()).hexdigest()[:10]


def audit(k: int, p: int, R: int):
    """Compare formula and enumeration for every ``(A, r, N in Phi(A))`` with ``m1 + m3 <= k``.

    Every permutation of every motion's slots is visited.  For ``p = 2`` the
    permutations of each motion are grouped by the slot order of labels they
    produce (with multiplicities), which counts every pair ``(sigma_1,
    sigma_2)`` exactly once.  Each ``N`` is checked individually; rows are
    aggregated over the ``N`` sharing the same per-motion pair counts.
    """
    if p not in (1, 2):
        raise CostCapError("audit supports p in {1, 2}")
    if k > 6:
        raise CostCapError("audit supports k <= 6")
    side = R * R
    n_joint = side**p
    rows = []
    for K in range(0, k + 1):
        perms = _permutations(K)
        seqs = list(walks(K, R))
        grouped = {}
        margs = {}
        for w in seqs:
            codes = np.array([_pair_code(w[j], w[j + 1], R) for j in range(K)], dtype=np.int64)
            if K:
                grouped[w] = _distinct_orders(perms, codes, side)
            else:
                grouped[w] = (np.zeros((1, 0), np.int64), np.ones(1, np.int64))
            margs[w] = tuple(int(x) for x in np.bincount(codes, minlength=side)) if K else (0,) * side
        expected = {}
        stats = {}
        for N in itertools.product(seqs, repeat=p):
            mkey = tuple(margs[w] for w in N)
            s1, c1 = grouped[N[0]]
            if p == 2:
                s2, c2 = grouped[N[1]]
                mul = side
            else:
                s2, c2 = np.zeros((1, K), np.int64), np.ones(1, np.int64)
                mul = 1
            for m1 in range(K + 1):
                ck = (mkey, m1)
                if ck not in expected:
                    table = _expected_table(mkey, m1, p, R, K)
                    ek = np.array(sorted(table), dtype=np.int64)
                    ev = np.array([table[x] for x in ek.tolist()], dtype=np.int64)
                    expected[ck] = (ek, ev)
                    stats[ck] = {}
                ek, ev = expected[ck]
                keys, weights = _hist_pairs(s1, c1, s2, c2, mul, n_joint, m1)
                uk, inv = np.unique(keys, return_inverse=True)
                fw = np.bincount(inv, weights=weights).astype(np.int64)
                st = stats[ck]
                if uk.shape == ek.shape and np.array_equal(uk, ek) and np.array_equal(fw, ev):
                    st["_match"] = st.get("_match", 0) + 1
                    continue
                counts = dict(zip(uk.tolist(), fw.tolist()))
                for x in ek.tolist():
                    counts.setdefault(x, 0)
                for x, c in counts.items():
                    lo, hi, n = st.get(x, (c, c, 0))
                    st[x] = (min(lo, c), max(hi, c), n + 1)
        for (mkey, m1), st in stats.items():
            ek, ev = expected[(mkey, m1)]
            table = dict(zip(ek.tolist(), ev.tolist()))
            n_match = st.pop("_match", 0)
            cls = _class_hash(mkey)
            for x in sorted(set(st) | set(table)):
                f = int(table.get(x, 0))
                if x in st:
                    lo, hi, n = st[x]
                    if x in table and n_match:
                        lo, hi = min(lo, f), max(hi, f)
                else:
                    lo, hi, n = f, f, 0
                rows.append(AuditRow(k, p, R, K, m1, f"{cls}:{_hash_key(x)}", f, int(lo), int(hi),
                                     int(n + n_match) if x in table else int(n)))
    return rows
