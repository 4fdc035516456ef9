import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import sqrtm

from qrd.qcore import (DensityOp, DimLayout, LayoutError, PureState, StateError, fannes_bound, fidelity, h2,
                       mutual_information, partial_trace, purify, random_density, random_pure, tensor,
                       trace_distance, vn_entropy)

from conftest import entropy_oracle, ptrace_oracle


def dm(m, *labels_dims):
    return DensityOp(np.asarray(m, complex), DimLayout(tuple(labels_dims)))


def bell():
    v = np.array([1, 0, 0, 1]) / np.sqrt(2)
    return dm(np.outer(v, v), ("A", 2), ("B", 2))


# -- layouts and tensor ----------------------------------------------------------------

def test_layout_rejects_duplicate_labels():
    with pytest.raises(LayoutError):
        DimLayout((("A", 2), ("A", 3)))


def test_tensor_of_maximally_mixed():
    t = tensor(dm(np.eye(2) / 2, ("A", 2)), dm(np.eye(2) / 2, ("B", 2)))
    np.testing.assert_allclose(t.matrix, np.eye(4) / 4)


def test_tensor_of_basis_projectors():
    t = tensor(dm(np.diag([1, 0]), ("A", 2)), dm(np.diag([0, 1]), ("B", 2)))
    np.testing.assert_allclose(t.matrix, np.diag([0, 1, 0, 0]))


def test_tensor_layout_concatenates():
    t = tensor(dm(np.eye(2) / 2, ("A", 2)), dm(np.eye(3) / 3, ("B", 3)))
    assert t.layout.dims == (2, 3) and t.labels == ("A", "B") and t.dim == 6


def test_tensor_label_collision():
    a = dm(np.eye(2) / 2, ("A", 2))
    with pytest.raises(LayoutError):
        tensor(a, a)


# -- density operator validation -------------------------------------------------------

@pytest.mark.parametrize("m", [np.diag([0.5, 0.4]), np.diag([1.2, -0.2]), np.array([[0.5, 0.3], [0.1, 0.5]])])
def test_invalid_density_rejected(m):
    with pytest.raises(StateError):
        dm(m, ("A", 2))


def test_pure_state_norm_checked():
    with pytest.raises(StateError):
        PureState(np.array([1.0, 1.0]), DimLayout.of(A=2))


# -- partial trace -------------------------------------------------------------------

def test_partial_trace_bell_is_maximally_mixed():
    np.testing.assert_allclose(partial_trace(bell(), ["A"]).matrix, np.eye(2) / 2, atol=1e-15)


def test_partial_trace_of_product(rng):
    r, s = random_density(2, rng), random_density(3, rng)
    t = tensor(dm(r, ("A", 2)), dm(s, ("B", 3)))
    np.testing.assert_allclose(partial_trace(t, ["A"]).matrix, r, atol=1e-14)


def test_partial_trace_matches_loop_oracle(rng):
    for _ in range(5):
        m = random_density(12, rng)
        rho = dm(m, ("A", 2), ("B", 3), ("C", 2))
        for keep in (["A"], ["B"], ["A", "C"], ["B", "C"]):
            idx = [rho.layout.index(k) for k in keep]
            np.testing.assert_allclose(partial_trace(rho, keep).matrix, ptrace_oracle(m, (2, 3, 2), idx), atol=1e-13)


def test_nested_partial_traces_commute(rng):
    m = random_density(12, rng)
    rho = dm(m, ("A", 2), ("B", 3), ("C", 2))
    two_step = partial_trace(partial_trace(rho, ["A", "C"]), ["C"])
    np.testing.assert_allclose(two_step.matrix, ptrace_oracle(m, (2, 3, 2), [2]), atol=1e-13)


def test_partial_trace_keeps_layout_order(rng):
    rho = dm(random_density(12, rng), ("A", 2), ("B", 3), ("C", 2))
    assert partial_trace(rho, ["C", "A"]).labels == ("A", "C")


def test_partial_trace_unknown_label():
    with pytest.raises(LayoutError):
        partial_trace(bell(), ["Z"])


# -- entropy and mutual information ------------------------------------------------------

def test_entropy_values():
    assert vn_entropy(np.eye(2) / 2) == pytest.approx(1.0, abs=1e-14)
    assert vn_entropy(np.diag([1.0, 0.0])) == 0.0
    assert vn_entropy(np.diag([0.75, 0.25])) == pytest.approx(0.811278124, abs=1e-9)


def test_entropy_of_pure_states_is_zero(rng):
    for d in (2, 3, 5):
        v = random_pure(d, rng)
        assert abs(vn_entropy(np.outer(v, v.conj()))) < 1e-12


def test_entropy_matches_logm_oracle(rng):
    for d in (2, 3, 4, 6):
        m = random_density(d, rng)
        assert vn_entropy(m) == pytest.approx(entropy_oracle(m), abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 31))
def test_entropy_bounded_by_log_dim(d, seed):
    m = random_density(d, np.random.default_rng(seed), rank=int(np.random.default_rng(seed).integers(1, d + 1)))
    s = vn_entropy(m)
    assert -1e-12 <= s <= np.log2(d) + 1e-12


def test_mutual_information_values():
    assert mutual_information(bell(), ["A"], ["B"]) == pytest.approx(2.0, abs=1e-12)
    prod = tensor(dm(np.diag([0.3, 0.7]), ("A", 2)), dm(np.diag([0.6, 0.4]), ("B", 2)))
    assert mutual_information(prod, ["A"], ["B"]) == pytest.approx(0.0, abs=1e-12)
    cl = dm(np.diag([0.5, 0, 0, 0.5]), ("A", 2), ("B", 2))
    assert mutual_information(cl, ["A"], ["B"]) == pytest.approx(1.0, abs=1e-12)


def test_mutual_information_bad_partition():
    with pytest.raises(LayoutError):
        mutual_information(bell(), ["A"], ["A"])
    with pytest.raises(LayoutError):
        mutual_information(bell(), ["A"], [])


# -- fidelity and trace distance ------------------------------------------------------------

def test_fidelity_values(rng):
    r = random_density(3, rng)
    assert fidelity(r, r) == pytest.approx(1.0, abs=1e-10)
    assert fidelity(np.diag([1, 0]), np.diag([0, 1])) == pytest.approx(0.0, abs=1e-15)
    plus = np.full((2, 2), 0.5)
    assert fidelity(np.diag([1, 0]), plus) == pytest.approx(0.5, abs=1e-12)


def test_fidelity_symmetric_and_matches_sqrtm_oracle(rng):
    for _ in range(10):
        a, b = random_density(3, rng), random_density(3, rng)
        sa = sqrtm(a)
        oracle = np.trace(sqrtm(sa @ b @ sa)).real ** 2
        assert fidelity(a, b) == pytest.approx(oracle, abs=1e-9)
        assert fidelity(a, b) == pytest.approx(fidelity(b, a), abs=1e-10)


def test_fidelity_dimension_mismatch():
    with pytest.raises(LayoutError):
        fidelity(np.eye(2) / 2, np.eye(3) / 3)


def test_trace_distance_values():
    assert trace_distance(np.eye(2) / 2, np.eye(2) / 2) == 0.0
    assert trace_distance(np.diag([1, 0]), np.diag([0, 1])) == pytest.approx(1.0)
    assert trace_distance(np.diag([1, 0]), np.eye(2) / 2) == pytest.approx(0.5)
    with pytest.raises(LayoutError):
        trace_distance(np.eye(2) / 2, np.eye(3) / 3)


def test_fuchs_van_de_graaf(rng):
    for _ in range(20):
        a, b = random_density(3, rng), random_density(3, rng)
        f, t = fidelity(a, b), trace_distance(a, b)
        assert 1 - np.sqrt(f) <= t + 1e-12 <= np.sqrt(1 - f) + 2e-12


# -- Fannes ---------------------------------------------------------------------------------

def test_fannes_values():
    assert fannes_bound(0.0, 5) == 0.0
    assert fannes_bound(0.5, 2) == pytest.approx(1.0)
    assert fannes_bound(0.1, 4) == pytest.approx(0.1 * np.log2(3) + h2(0.1))
    assert fannes_bound(0.1, 4) == pytest.approx(0.627491844, abs=1e-9)


def test_fannes_rejects_out_of_range():
    with pytest.raises(ValueError):
        fannes_bound(0.6, 2)
    with pytest.raises(ValueError):
        fannes_bound(-0.1, 3)


# -- purification ------------------------------------------------------------------------------

def test_purify_pure_input_has_trivial_reference(rng):
    v = random_pure(3, rng)
    p = purify(dm(np.outer(v, v.conj()), ("A", 3)))
    assert p.layout.dims == (3, 1)
    assert abs(abs(np.vdot(p.vector, v)) - 1) < 1e-12


def test_purify_maximally_mixed_is_bell():
    p = purify(dm(np.eye(2) / 2, ("A", 2)))
    assert p.layout.dims == (2, 2)
    red = partial_trace(p.dm(), ["R"]).matrix
    np.testing.assert_allclose(red, np.eye(2) / 2, atol=1e-14)
    # maximally entangled: Schmidt coefficients both 1/sqrt(2)
    np.testing.assert_allclose(np.linalg.svd(p.vector.reshape(2, 2), compute_uv=False), [2 ** -0.5] * 2)


def test_purify_rank3(rng):
    m = random_density(4, rng, rank=3)
    p = purify(dm(m, ("A", 4)))
    assert p.layout.dims == (4, 3)
    np.testing.assert_allclose(partial_trace(p.dm(), ["A"]).matrix, m, atol=1e-9)


def test_purify_is_deterministic(rng):
    m = random_density(3, rng)
    a, b = purify(dm(m, ("A", 3))), purify(dm(m.copy(), ("A", 3)))
    np.testing.assert_array_equal(a.vector, b.vector)


def test_purify_label_collision():
    with pytest.raises(LayoutError):
        purify(dm(np.eye(2) / 2, ("R", 2)))
