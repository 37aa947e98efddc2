import cmath
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddtau.harness import random_cuts, random_nilpotent, random_sl2
from ddtau.kasteleyn import (
    KasteleynFactor,
    assemble,
    count_matchings,
    det_ratio,
    det_ratio_rank1,
    det_ratio_record,
    inverse_entries,
    jump_map,
    kasteleyn_matrix,
    log_det_K,
)
from ddtau.lattice import Representation, build_cut, build_domain, representation
from ddtau.sampling import enumerate_matchings, oracle_correlator


def test_trivial_twists_are_identity():
    d = build_domain(2, 2, 1.0)
    op = assemble(d, representation(d, [(1, 2)], np.zeros((1, 2, 2))))
    assert all(np.array_equal(J, np.eye(2)) for _, J in op.twists)


def test_cut_of_length_four(E12):
    d = build_domain(2, 3, 1.0)
    op = assemble(d, representation(d, [(1, 3)], [0.3 * E12]))
    assert len(op.twists) == 4
    for _, J in op.twists:
        assert np.linalg.det(J) == pytest.approx(1.0, abs=1e-15)


@given(st.floats(0, 2 * np.pi), st.floats(-3, 3))
def test_unipotent_inverse(a, r):
    v = np.array([np.cos(a), np.sin(a)])
    N = r * np.outer(v, [-v[1], v[0]])
    np.testing.assert_allclose((np.eye(2) + N) @ (np.eye(2) - N), np.eye(2), atol=1e-12)


def test_jump_sides(E12):
    d = build_domain(2, 2, 1.0)
    rep = representation(d, [(1, 1)], [0.3 * E12])
    jm = jump_map(d, rep)
    for e, left in zip(rep.cuts[0].crossings, rep.cuts[0].black_left):
        J = jm[d.orient(e)]
        np.testing.assert_array_equal(J, np.eye(2) + (0.3 if left else -0.3) * E12)


@pytest.mark.parametrize("m,n,count", [(1, 1, 2), (2, 1, 5), (2, 2, 36)])
def test_count_matchings(m, n, count):
    assert count_matchings(build_domain(m, n, 1.0)) == count


@pytest.mark.parametrize("m,n", [(2, 3), (3, 2), (1, 4)])
def test_count_matches_enumeration(m, n):
    d = build_domain(m, n, 1.0)
    assert count_matchings(d) == len(enumerate_matchings(d))


def test_count_overflow_reported():
    with pytest.raises(OverflowError):
        count_matchings(build_domain(40, 40, 1.0))


def test_log_det_matches_dense():
    d = build_domain(3, 2, 1.0)
    sign, logabs = log_det_K(d)
    dense = np.linalg.det(kasteleyn_matrix(d).toarray())
    assert sign * np.exp(logabs) == pytest.approx(dense, rel=1e-12)


def test_inverse_entries_2x2():
    d = build_domain(1, 1, 1.0)
    op = assemble(d, representation(d, [], np.zeros((0, 2, 2))))
    for e in d.edges():
        w, b = d.orient(e)
        (val,) = inverse_entries(op, [(b, w)])
        k = op.factor.entry(d.white_index(w), d.black_index(b))
        assert abs(k * val) == pytest.approx(0.5, abs=1e-15)


def test_inverse_entries_reproducible():
    d = build_domain(4, 4, 1.0)
    pairs = [((0, 0), (1, 0)), ((2, 2), (5, 2)), ((7, 7), (0, 1))]
    a = inverse_entries(assemble(d, representation(d, [], np.zeros((0, 2, 2)))), pairs)
    b = inverse_entries(assemble(d, representation(d, [], np.zeros((0, 2, 2)))), pairs)
    assert a == b


def test_trivial_rep_exactly_one():
    d = build_domain(4, 4, 0.5)
    rep = representation(d, [(1, 3), (5, 4)], np.zeros((2, 2, 2)))
    assert det_ratio(assemble(d, rep)) == 1.0


@given(st.integers(0, 2**32 - 1))
def test_single_puncture_is_one(seed):
    rng = np.random.default_rng(seed)
    d = build_domain(4, 3, 1.0)
    face = (int(rng.integers(0, 7)), int(rng.integers(0, 5)))
    N = 3 * random_nilpotent(rng)
    assert abs(det_ratio(assemble(d, representation(d, [face], [N]))) - 1.0) <= 1e-12


def test_two_punctures_against_oracle(E12):
    d = build_domain(2, 2, 1.0)
    rep = representation(d, [(0, 1), (2, 2)], [0.3 * E12, 0.3 * E12])
    assert det_ratio(assemble(d, rep)) == pytest.approx(oracle_correlator(d, rep), abs=1e-10)


def test_block_reduction_matches_dense(E12, E21):
    d = build_domain(3, 2, 1.0)
    rep = representation(d, [(1, 2), (3, 1)], [0.4 * E12, 0.4 * E21])
    op = assemble(d, rep)
    K = op.base.toarray()
    dense = np.linalg.det(op.dense()) / np.linalg.det(np.kron(K, np.eye(2)))
    assert det_ratio(op) == pytest.approx(dense, rel=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_cut_and_conjugation_invariance(seed):
    rng = np.random.default_rng(seed)
    d = build_domain(4, 4, 1.0)
    cols = sorted(rng.choice(7, size=3, replace=False).tolist())
    faces = [(c, int(rng.integers(0, 7))) for c in cols]
    Ns = np.array([random_nilpotent(rng) for _ in faces])
    rep = representation(d, faces, Ns)
    factor = KasteleynFactor(d)
    base = det_ratio(assemble(d, rep, factor))
    cuts = random_cuts(d, faces, 7, rng)
    moved = det_ratio(assemble(d, rep.with_cuts(cuts), factor))
    conj = det_ratio(assemble(d, rep.conjugated(random_sl2(rng)), factor))
    assert abs(moved - base) <= 1e-12 * abs(base)
    assert abs(conj - base) <= 1e-12 * abs(base)


def test_condition_reported(E12):
    d = build_domain(2, 2, 1.0)
    value, info = det_ratio(assemble(d, representation(d, [(1, 1)], [0.3 * E12])), return_info=True)
    assert info["cond"] >= 1.0 and info["flagged"] is False


def test_record_is_json(E12):
    d = build_domain(2, 2, 0.5)
    rec = det_ratio_record(assemble(d, representation(d, [(1, 1)], [0.3 * E12])))
    assert set(rec) == {"m", "n", "delta", "punctures", "N", "det_ratio", "cond", "log_det_K"}
    json.dumps(rec)


def test_rank1_trivial_and_conjugate():
    d = build_domain(2, 2, 1.0)
    cuts = [build_cut(d, (1, 2))]
    assert det_ratio_rank1(d, cuts, [1.0]) == 1.0
    chi = cmath.exp(0.7j)
    a = det_ratio_rank1(d, cuts, [chi])
    b = det_ratio_rank1(d, cuts, [chi.conjugate()])
    assert a == pytest.approx(b.conjugate(), abs=1e-14)


def test_rank1_against_enumeration():
    d = build_domain(2, 2, 1.0)
    cut = build_cut(d, (1, 1))
    chi = cmath.exp(1j * np.pi / 8)
    weight = {d.orient(e): (chi if left else chi.conjugate()) for e, left in zip(cut.crossings, cut.black_left)}
    ms = enumerate_matchings(d)
    total = 0j
    for m in ms:
        w = 1.0
        for e in m.edges():
            w *= weight.get(e, 1.0)
        total += w
    assert det_ratio_rank1(d, [cut], [chi]) == pytest.approx(total / len(ms), abs=1e-12)


def test_rank1_rejects_non_unit():
    d = build_domain(1, 1, 1.0)
    with pytest.raises(ValueError):
        det_ratio_rank1(d, [build_cut(d, (0, 0))], [1.1])


def test_cut_outside_domain_rejected(E12):
    small, big = build_domain(1, 1, 1.0), build_domain(2, 2, 1.0)
    rep = Representation((build_cut(big, (2, 2)),), np.array([0.2 * E12]))
    with pytest.raises(ValueError):
        assemble(small, rep)
