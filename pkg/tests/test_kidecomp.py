import numpy as np
import pytest

from qrd import fixtures
from qrd.ensemble import Ensemble, cq_state, strip_side_info, visible
from qrd.kidecomp import (KIBlock, blind_rate, commutant_dim, find_intertwiner, k_off, k_on, ki_decompose, ki_off,
                          ki_on, preserving_channel, reconstruction_residual, verify_ki)
from qrd.qcore import DensityOp, DimLayout, entropy_of, h2, random_density, random_unitary
from qrd.verify import random_ki_ensemble

PLUS = np.array([1, 1]) / np.sqrt(2)


def ax_state(e):
    m = cq_state(e).matrix
    return DensityOp(m, DimLayout((("A", e.dim_a * e.dim_j), ("X", e.n))), check=False)


def test_identical_states_all_redundant(rng):
    r = random_density(3, rng)
    e = Ensemble.from_states([0.4, 0.6], [r, r])
    dec = ki_decompose(e)
    assert dec.dim_c == 1
    b = dec.blocks[0]
    assert (b.dim_q, b.dim_n) == (1, 3)
    # omega_c equals rho up to the block basis
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(b.omega)), np.sort(np.linalg.eigvalsh(r)), atol=1e-9)
    assert blind_rate(e, dec) == pytest.approx(0.0, abs=1e-9)


def test_orthogonal_pure_states_classical():
    e = fixtures.classical_pair()
    dec = ki_decompose(e)
    assert dec.dim_c == 2
    assert all((b.dim_q, b.dim_n) == (1, 1) for b in dec.blocks)
    assert blind_rate(e, dec) == pytest.approx(1.0, abs=1e-12)


def test_nonorthogonal_pair_purely_quantum():
    e = fixtures.nonorthogonal_pair()
    dec = ki_decompose(e)
    assert dec.dim_c == 1 and (dec.blocks[0].dim_q, dec.blocks[0].dim_n) == (2, 1)
    rep = verify_ki(dec, e)
    assert rep.passed and rep.commutant_dims == [1] and not rep.intertwiners


def test_blind_rate_nonorthogonal_pair():
    lam = (1 + 1 / np.sqrt(2)) / 2
    expected = h2(lam)
    assert expected == pytest.approx(0.600876, abs=1e-6)
    assert blind_rate(fixtures.nonorthogonal_pair()) == pytest.approx(expected, abs=1e-10)


def test_redundant_product_structure():
    e = fixtures.redundant_product()
    dec = ki_decompose(e)
    assert dec.dim_c == 1 and (dec.blocks[0].dim_q, dec.blocks[0].dim_n) == (2, 2)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(dec.blocks[0].omega)), [0.25, 0.75], atol=1e-9)
    assert blind_rate(e, dec) == pytest.approx(blind_rate(fixtures.nonorthogonal_pair()), abs=1e-9)


def test_mixed_classical_quantum_structure():
    # block 0: qubit carrying {|0>, |+>}; block 1: a classical flag; both with a redundant bit
    om = np.diag([0.6, 0.4])
    s0 = np.zeros((6, 6), complex)
    s0[:4, :4] = np.kron(om, np.diag([1, 0]))
    s1 = np.zeros((6, 6), complex)
    s1[:4, :4] = 0.5 * np.kron(om, np.outer(PLUS, PLUS))
    s1[4:, 4:] = 0.5 * np.diag([0.5, 0.5])
    e = Ensemble.from_states([0.5, 0.5], [s0, s1])
    dec = ki_decompose(e)
    shapes = sorted((b.dim_q, b.dim_n) for b in dec.blocks)
    assert shapes == [(1, 2), (2, 2)]
    assert verify_ki(dec, e).passed
    for x in range(2):
        assert sum(b.p_c_given_x[x] for b in dec.blocks) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("name", fixtures.names())
def test_fixture_decompositions_verify(name):
    e = fixtures.get(name)
    dec = ki_decompose(e)
    assert verify_ki(dec, e).passed
    assert reconstruction_residual(dec, e) <= 1e-7


def test_random_block_ensembles(rng):
    for _ in range(30):
        e = random_ki_ensemble(rng)
        assert verify_ki(ki_decompose(e), e).passed


def test_decomposition_deterministic_for_seed(rng):
    e = random_ki_ensemble(rng)
    a, b = ki_decompose(e, seed=3), ki_decompose(e, seed=3)
    np.testing.assert_array_equal(a.iso, b.iso)


def test_ki_off_on_round_trip(rng):
    for e in [fixtures.get(n) for n in fixtures.BASE] + [random_ki_ensemble(rng) for _ in range(10)]:
        dec = ki_decompose(e)
        rho = ax_state(e)
        back = ki_on(dec, ki_off(dec, rho))
        np.testing.assert_allclose(back.matrix, rho.matrix, atol=1e-7)


def test_ki_off_gives_omega_cqx():
    e = fixtures.redundant_product()
    dec = ki_decompose(e)
    omega = ki_off(dec, ax_state(e)).matrix
    dq = dec.dim_q
    expected = np.zeros_like(omega)
    for x in range(e.n):
        cq = np.zeros((dec.dim_c * dq,) * 2, complex)
        for c, b in enumerate(dec.blocks):
            cq[c * dq:c * dq + b.dim_q, c * dq:c * dq + b.dim_q] = b.p_c_given_x[x] * b.rho_cx[x]
        expected += e.probs[x] * np.kron(cq, np.diag(np.eye(e.n)[x]))
    np.testing.assert_allclose(omega, expected, atol=1e-9)


def test_ki_off_on_pure_quantum_is_isometry():
    dec = ki_decompose(fixtures.nonorthogonal_pair())
    assert k_off(dec).env_dim == 1 and k_on(dec).env_dim == 1


def test_preserving_channel(rng):
    for e in [fixtures.redundant_product(), random_ki_ensemble(rng)]:
        dec = ki_decompose(e)
        lam = preserving_channel(dec, rng)
        assert lam.is_cptp()
        for it in e.items:
            np.testing.assert_allclose(lam(it.rho), it.rho, atol=1e-8)


def test_merged_blocks_detected():
    assert commutant_dim([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]) > 1
    assert commutant_dim([np.diag([1.0, 0.0]), np.outer(PLUS, PLUS)]) == 1


def test_split_redundant_detected(rng):
    rs = np.stack([np.diag([1.0, 0]), np.outer(PLUS, PLUS)]).astype(complex)
    u = random_unitary(2, rng)
    pc = np.array([0.5, 0.5])
    a = KIBlock(2, 1, np.ones((1, 1)), pc, rs, np.eye(2))
    b = KIBlock(2, 1, np.ones((1, 1)), pc, np.stack([u @ r @ u.conj().T for r in rs]), np.eye(2))
    v = find_intertwiner(a, b)
    assert v is not None
    for x in range(2):
        np.testing.assert_allclose(v @ rs[x], u @ rs[x] @ u.conj().T @ v, atol=1e-8)
    # a genuinely different block has no intertwiner
    c = KIBlock(2, 1, np.ones((1, 1)), pc, np.stack([np.diag([1.0, 0]), np.diag([0, 1.0])]).astype(complex),
                np.eye(2))
    assert find_intertwiner(a, c) is None


def test_classical_blocks_not_paired():
    one = KIBlock(1, 1, np.ones((1, 1)), np.array([1.0, 0.0]), np.ones((2, 1, 1)), np.eye(1))
    two = KIBlock(1, 1, np.ones((1, 1)), np.array([0.0, 1.0]), np.ones((2, 1, 1)), np.eye(1))
    assert find_intertwiner(one, two) is None
    three = KIBlock(1, 1, np.ones((1, 1)), np.array([0.3, 0.6]), np.ones((2, 1, 1)), np.eye(1))
    four = KIBlock(1, 1, np.ones((1, 1)), np.array([0.7, 0.4]), np.ones((2, 1, 1)), np.eye(1))
    assert find_intertwiner(three, four) is None
    assert find_intertwiner(three, four, per_x_alpha=True) is not None


def test_blind_rate_visible_marginal():
    for name in fixtures.BASE:
        e = fixtures.get(name)
        assert blind_rate(strip_side_info(visible(e))) == pytest.approx(blind_rate(e), abs=1e-9)


def test_blind_rate_redundant_invariance(rng):
    for _ in range(10):
        e = random_ki_ensemble(rng)
        om = random_density(2, rng)
        big = Ensemble.from_states(e.probs, [np.kron(om, it.rho) for it in e.items])
        assert blind_rate(big) == pytest.approx(blind_rate(e), abs=1e-7)


def test_blind_rate_of_mixed_states_below_entropy(rng):
    e = Ensemble.from_states([0.5, 0.5], [random_density(2, rng), random_density(2, rng)])
    assert blind_rate(e) <= entropy_of(e.average_input) + 1e-9
