import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddtau import isomonodromy as iso
from ddtau.harness import random_nilpotent


@pytest.fixture(scope="module")
def pair_state():
    E12 = np.array([[0.0, 1.0], [0.0, 0.0]])
    return iso.solve_to([-1 + 1j, 1 + 1j], [0.2 * E12, 0.2 * E12.T])


def test_init_residue(E12):
    s = iso.init_boundary([0.0], [E12])
    np.testing.assert_allclose(s.residues[0], [[0, 1j / (2 * np.pi)], [0, 0]], atol=1e-16)
    assert s.log_tau_acc == 0
    A = s.residues[0]
    np.testing.assert_array_equal(A @ A.conj() - A.conj() @ A, np.zeros((2, 2)))


def test_init_rejects_repeats_and_non_nilpotent(E12):
    with pytest.raises(ValueError):
        iso.init_boundary([0.0, 0.0], [E12, E12])
    with pytest.raises(ValueError):
        iso.init_boundary([0.0], [np.eye(2)])


def test_zero_length_path(pair_state):
    same = iso.deform(pair_state, 0, [pair_state.lambdas[0], pair_state.lambdas[0]])
    np.testing.assert_array_equal(same.residues, pair_state.residues)
    assert same.log_tau_acc == pair_state.log_tau_acc


def test_single_puncture_flow(E12):
    s = iso.solve_to([0.3 + 1j], [0.4 * E12])
    moved = iso.deform(s, 0, [0.3 + 1j, 2 + 3j, -1 + 0.5j])
    np.testing.assert_allclose(moved.residues, s.residues, atol=1e-12)
    assert abs(iso.log_tau(moved)) <= 1e-8
    assert abs(iso.log_tau(iso.solve_to([1j], [0.3 * E12]))) <= 1e-8


def test_contractible_loop(pair_state):
    z = pair_state.lambdas[0]
    loop = [z, z + 0.3, z + 0.3 + 0.4j, z - 0.2 + 0.4j, z - 0.2, z]
    back = iso.deform(pair_state, 0, loop)
    assert abs(back.log_tau_acc - pair_state.log_tau_acc) <= 1e-7
    assert np.abs(back.residues - pair_state.residues).max() <= 1e-7


def test_boundary_targets_return_init(E12):
    s = iso.solve_to([-1 + 1e-3j, 1 + 1e-3j], [0.2 * E12, 0.2 * E12.T])
    np.testing.assert_allclose(s.residues, iso.init_boundary([-1, 1], [0.2 * E12, 0.2 * E12.T]).residues)
    assert s.log_tau_acc == 0


def test_relabeling_symmetry(E12):
    a = iso.log_tau(iso.solve_to([-1 + 1j, 1 + 1j], [0.2 * E12, 0.2 * E12.T]))
    # mirror x -> -x swaps the labels; conjugation by diag(1, -1) flips the sign of N
    b = iso.log_tau(iso.solve_to([-1 + 1j, 1 + 1j], [-0.2 * E12.T, -0.2 * E12]))
    assert a == pytest.approx(b, abs=1e-9)
    assert abs(a) > 1e-5


def test_eps_sensitivity(E12):
    Ns = [0.2 * E12, 0.2 * E12.T]
    a = iso.log_tau(iso.solve_to([-1 + 1j, 1 + 1j], Ns, eps=1e-3))
    b = iso.log_tau(iso.solve_to([-1 + 1j, 1 + 1j], Ns, eps=5e-4))
    assert abs(a - b) < 1e-5


def test_solve_to_errors(E12):
    with pytest.raises(ValueError):
        iso.solve_to([1 + 1j, 1 + 2j], [E12, E12])
    with pytest.raises(ValueError):
        iso.solve_to([1 - 1j], [E12])


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_conservation_along_flow(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    xs = np.sort(rng.choice(np.arange(-3.0, 3.5, 0.5), size=n, replace=False))
    lam = xs + 1j * rng.uniform(0.3, 2.0, size=n)
    s = iso.solve_to(lam, [random_nilpotent(rng) for _ in range(n)])
    assert max(iso.conservation(s).values()) <= 1e-8
    assert abs(s.log_tau_acc.imag) <= 1e-7


def test_imaginary_log_tau_surfaces(pair_state):
    bad = iso.SchlesingerState(pair_state.lambdas, pair_state.residues, 0.1 + 1e-3j, pair_state.nilpotents, 1e-3)
    with pytest.raises(iso.ImaginaryLogTauError):
        iso.log_tau(bad)


def test_closed_contour_is_identity(pair_state):
    R0 = iso.default_base_point(pair_state)
    c = iso.Contour((R0, 5.0, 5.0 + 4j, R0))
    Y = iso.fundamental_solution(pair_state, c)
    np.testing.assert_allclose(Y, iso.infinity_expansion(pair_state, R0), atol=1e-8)


@pytest.mark.parametrize("x", [-3.0, 0.0, 0.5, 4.0])
def test_det_one(pair_state, x):
    Y = iso.fundamental_solution(pair_state, iso.real_axis_contour(pair_state, x))
    assert abs(np.linalg.det(Y) - 1) <= 1e-9


def test_contour_collision(pair_state):
    with pytest.raises(iso.CollisionError):
        iso.fundamental_solution(pair_state, iso.Contour((100.0, -1 + 1j)))


@pytest.mark.parametrize("s", [0.1, 0.3, 1.0])
def test_fuchs_closed_form(E12, s):
    N = s * E12
    st_ = iso.solve_to([1j], [N])
    Y = iso.fundamental_solution(st_, iso.real_axis_contour(st_, 0.0))
    np.testing.assert_allclose(Y, np.eye(2) + N / 2, atol=1e-6)


def test_monodromy_trivial():
    s = iso.solve_to([-1 + 1j, 1 + 1j], np.zeros((2, 2, 2)))
    for k in range(2):
        np.testing.assert_allclose(iso.monodromy(s, k), np.eye(2), atol=1e-9)


def test_monodromy_single_is_jump(E12):
    s = iso.solve_to([1j], [0.3 * E12])
    np.testing.assert_allclose(iso.monodromy(s, 0), np.eye(2) + 0.3 * E12, atol=1e-8)


def test_fresh_traces(E12):
    s = iso.init_boundary([-2.0, 0.0, 2.0], [0.3 * E12, 0.3 * E12.T, 0.3 * np.array([[1, -1], [1, -1.0]])])
    for k in range(3):
        assert abs(np.trace(iso.monodromy(s, k)) - 2) <= 1e-5


def test_isomonodromy(pair_state):
    before = [iso.monodromy(pair_state, k) for k in range(2)]
    z = pair_state.lambdas[0]
    moved = iso.deform(pair_state, 0, [z, z + 0.8j, z + 0.8j - 0.5])
    for k in range(2):
        np.testing.assert_allclose(iso.monodromy(moved, k), before[k], atol=1e-6)


def test_monodromy_independent_of_base_point(pair_state):
    a = iso.monodromy(pair_state, 1, R0=500.0)
    b = iso.monodromy(pair_state, 1, R0=50000.0)
    np.testing.assert_allclose(a, b, atol=1e-7)


def test_robin_single(E12):
    s = iso.solve_to([0.5 + 1j], [0.3 * E12])
    lhs, rhs = iso.robin_check(s, 0)
    assert abs(lhs) <= 1e-8 and abs(rhs) <= 1e-12


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_robin_random(seed):
    rng = np.random.default_rng(seed)
    lam = np.array([-1.0, 0.5, 1.7]) + 1j * rng.uniform(0.5, 1.5, 3)
    s = iso.solve_to(lam, [random_nilpotent(rng) for _ in range(3)])
    for k in range(3):
        lhs, rhs = iso.robin_check(s, k)
        assert abs(lhs - rhs) <= 1e-5


def test_prediction_conjugation_invariant(pair_state):
    G = np.array([[2.0, 1.0], [0.5, 1.0]])
    Gi = np.linalg.inv(G)
    rotated = iso.SchlesingerState(
        pair_state.lambdas, G @ pair_state.residues @ Gi, pair_state.log_tau_acc, None, pair_state.eps0
    )
    for k in range(2):
        assert iso.variation_prediction(rotated, k) == pytest.approx(iso.variation_prediction(pair_state, k), abs=1e-15)


def test_prediction_single_is_zero(E12):
    assert iso.variation_prediction(iso.solve_to([1j], [0.3 * E12]), 0) == 0


def test_small_real_displacement(pair_state):
    d = 1e-3
    z = pair_state.lambdas[0]
    moved = iso.deform(pair_state, 0, [z, z + d])
    fd = iso.log_tau(moved) - iso.log_tau(pair_state)
    pred = 2 * (d * iso.variation_prediction(pair_state, 0)).real
    assert abs(fd - pred) <= 1e-6


def test_mobius(pair_state):
    lt = iso.log_tau(pair_state)
    assert iso.log_tau(iso.mobius_image(pair_state, 1, 0, 0, 1)) == pytest.approx(lt, abs=1e-14)
    assert abs(iso.log_tau(iso.mobius_image(pair_state, np.sqrt(2), 0, 0, 1 / np.sqrt(2))) - lt) <= 1e-6
    assert abs(iso.log_tau(iso.mobius_image(pair_state, 1, 1, 0, 1)) - lt) <= 1e-6
    with pytest.raises(ValueError):
        iso.mobius_image(pair_state, 0, 1, 1, 0)


def test_pinching_decreases(E12):
    A = [1j, 1 + 1.5j]
    B = np.array([1.2j, 1.3 + 1j])
    NA, NB = [0.3 * E12, 0.3 * E12.T], [0.3 * np.array([[1, -1], [1, -1.0]]), 0.3 * E12]
    la = iso.log_tau(iso.solve_to(A, NA))
    lb = iso.log_tau(iso.solve_to(B, NB))
    errs = [abs(iso.log_tau(iso.solve_to(np.concatenate([A, B + M]), NA + NB)) - la - lb) for M in (10, 40)]
    assert errs[1] < errs[0]


def test_state_json_round_trip(pair_state):
    back = iso.state_from_json(iso.state_to_json(pair_state))
    np.testing.assert_array_equal(back.lambdas, pair_state.lambdas)
    np.testing.assert_array_equal(back.residues, pair_state.residues)
    assert back.log_tau_acc == pair_state.log_tau_acc
    assert back.eps0 == pair_state.eps0
