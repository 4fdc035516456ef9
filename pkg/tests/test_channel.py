import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qrd.channel import (Channel, ProjectionError, apply, complementary, cptp_residual, dephasing, depolarizing,
                         from_isometry, from_json, from_kraus, identity, partial_trace_channel, project_cptp,
                         random_channel, replacer, to_json)
from qrd.qcore import DensityOp, DimLayout, LayoutError, partial_trace, random_density, random_unitary

from conftest import ptrace_oracle


def kraus_apply(ops, rho):
    return sum(k @ rho @ k.conj().T for k in ops)


def test_choi_convention():
    # choi = sum_ij |i><j| (x) N(|i><j|)
    ch = random_channel(2, 3, np.random.default_rng(1))
    for i in range(2):
        for j in range(2):
            eij = np.zeros((2, 2))
            eij[i, j] = 1
            np.testing.assert_allclose(ch.choi[i * 3:(i + 1) * 3, j * 3:(j + 1) * 3], ch(eij), atol=1e-14)


def test_invalid_choi_rejected():
    with pytest.raises(ValueError):
        Channel(np.eye(4), 2, 2)
    with pytest.raises(LayoutError):
        Channel(np.eye(4), 2, 3)


def test_identity_apply_unchanged(rng):
    rho = DensityOp(random_density(6, rng), DimLayout.of(A=2, B=3))
    np.testing.assert_allclose(apply(identity(2), rho, "A").matrix, rho.matrix, atol=1e-14)


def test_replacer_apply(rng):
    sigma = random_density(2, rng)
    m = random_density(6, rng)
    rho = DensityOp(m, DimLayout.of(A=2, B=3))
    out = apply(replacer(sigma), rho, "A")
    np.testing.assert_allclose(out.matrix, np.kron(sigma, ptrace_oracle(m, (2, 3), [1])), atol=1e-14)


def test_apply_on_middle_factor_keeps_position(rng):
    m = random_density(12, rng)
    rho = DensityOp(m, DimLayout.of(A=2, B=3, C=2))
    out = apply(replacer(np.eye(2) / 2, 3), rho, "B", out_label="B2")
    assert out.labels == ("A", "B2", "C")
    np.testing.assert_allclose(partial_trace(out, ["A", "C"]).matrix, ptrace_oracle(m, (2, 3, 2), [0, 2]), atol=1e-14)


def test_apply_dim_mismatch(rng):
    rho = DensityOp(random_density(6, rng), DimLayout.of(A=2, B=3))
    with pytest.raises(LayoutError):
        apply(identity(2), rho, "B")


def test_choi_apply_equals_kraus_apply(rng):
    for _ in range(20):
        din, dout = rng.integers(1, 4, size=2)
        ch = random_channel(int(din), int(dout), rng)
        rho = random_density(int(din), rng)
        np.testing.assert_allclose(ch(rho), kraus_apply(ch.kraus(), rho), atol=1e-12)


def test_stinespring_dims():
    assert identity(3).stinespring().shape == (3, 3)
    assert depolarizing(2, 1.0).env_dim == 4


def test_stinespring_round_trip(rng):
    for _ in range(100):
        din, dout = (int(v) for v in rng.integers(1, 4, size=2))
        ch = random_channel(din, dout, rng, rank=int(rng.integers(-(-din // dout), din * dout + 1)))
        v = ch.stinespring()
        np.testing.assert_allclose(v.conj().T @ v, np.eye(din), atol=1e-9)
        rho = random_density(din, rng)
        big = v @ rho @ v.conj().T
        np.testing.assert_allclose(ptrace_oracle(big, (dout, ch.env_dim), [0]), ch(rho), atol=1e-8)
        np.testing.assert_allclose(from_isometry(v, dout).choi, ch.choi, atol=1e-8)
        np.testing.assert_allclose(from_kraus(ch.kraus()).choi, ch.choi, atol=1e-8)


def test_complementary_identity_is_constant():
    comp = complementary(identity(2))
    assert comp.dim_out == 1
    np.testing.assert_allclose(comp.choi, np.eye(2))


def test_complementary_of_isometry_channel_is_constant(rng):
    u = random_unitary(3, rng)
    comp = complementary(from_kraus([u]))
    a, b = random_density(3, rng), random_density(3, rng)
    np.testing.assert_allclose(comp(a), comp(b), atol=1e-12)


def test_complementary_twice_same_rank(rng):
    for _ in range(10):
        ch = random_channel(2, 2, rng, rank=int(rng.integers(1, 5)))
        cc = complementary(complementary(ch))
        assert np.linalg.matrix_rank(cc.choi, 1e-8) == np.linalg.matrix_rank(ch.choi, 1e-8)


def test_complementary_output_matches_stinespring(rng):
    ch = random_channel(2, 3, rng)
    v = ch.stinespring()
    rho = random_density(2, rng)
    np.testing.assert_allclose(complementary(ch)(rho), ptrace_oracle(v @ rho @ v.conj().T, (3, ch.env_dim), [1]),
                               atol=1e-12)


def test_constructors():
    d = dephasing(2)
    np.testing.assert_allclose(d(np.diag([0.3, 0.7])), np.diag([0.3, 0.7]))
    np.testing.assert_allclose(depolarizing(3, 1.0).choi, replacer(np.eye(3) / 3).choi)
    r = replacer(np.diag([0.2, 0.8]), 3)
    np.testing.assert_allclose(r(np.eye(3) / 3), r(np.diag([1, 0, 0])))
    for ch in (d, depolarizing(2, 0.3), r, identity(4), partial_trace_channel([2, 3], [1])):
        assert ch.is_cptp()


def test_partial_trace_channel_matches_ptrace(rng):
    m = random_density(12, rng)
    np.testing.assert_allclose(partial_trace_channel([2, 3, 2], [0, 2])(m), ptrace_oracle(m, (2, 3, 2), [0, 2]),
                               atol=1e-14)


# -- projection --------------------------------------------------------------------------

@pytest.mark.parametrize("method", ["alternating", "dykstra", "dual"])
def test_projection_leaves_valid_choi(rng, method):
    ch = random_channel(2, 2, rng)
    np.testing.assert_allclose(project_cptp(ch.choi, 2, 2, method=method).choi, ch.choi, atol=1e-9)


def test_projection_restores_trace_preservation(rng):
    c = random_channel(2, 3, rng).choi * 0.7
    out = project_cptp(c, 2, 3)
    assert cptp_residual(out.choi, 2, 3) <= 1e-9
    assert np.linalg.eigvalsh(out.choi)[0] >= -1e-9


@pytest.mark.parametrize("method", ["alternating", "dykstra", "dual"])
def test_projection_of_perturbed_identity(rng, method):
    g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    out = project_cptp(identity(2).choi + 0.3 * (g + g.conj().T), 2, 2, method=method)
    assert out.is_cptp(1e-8)


def test_dual_projection_is_nearest(rng):
    """Exact projection beats every feasible competitor in Frobenius distance."""
    g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    m = identity(2).choi + 0.5 * (g + g.conj().T)
    p = project_cptp(m, 2, 2, method="dual").choi
    best = np.linalg.norm(m - p)
    for _ in range(200):
        q = random_channel(2, 2, rng).choi
        assert np.linalg.norm(m - q) >= best - 1e-9
        # also points on the segment towards p
        assert np.linalg.norm(m - (0.9 * p + 0.1 * q)) >= best - 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_dual_projection_idempotent(seed):
    r = np.random.default_rng(seed)
    g = r.standard_normal((6, 6)) + 1j * r.standard_normal((6, 6))
    once = project_cptp(g + g.conj().T, 2, 3, method="dual").choi
    twice = project_cptp(once, 2, 3, method="dual").choi
    assert np.linalg.norm(once - twice) <= 1e-10


def test_projection_non_convergence_raises(rng):
    g = rng.standard_normal((9, 9))
    with pytest.raises(ProjectionError):
        project_cptp(10 * (g + g.T), 3, 3, max_rounds=1)


def test_apply_preserves_positivity_and_trace(rng):
    for _ in range(30):
        ch = random_channel(3, 2, rng)
        out = ch.apply_matrix(random_density(6, rng), 2)
        assert np.linalg.eigvalsh(out)[0] >= -1e-12
        assert np.trace(out).real == pytest.approx(1.0, abs=1e-12)


def test_compose_and_tensor(rng):
    a, b = random_channel(2, 3, rng), random_channel(3, 2, rng)
    rho = random_density(2, rng)
    np.testing.assert_allclose(b.compose(a)(rho), b(a(rho)), atol=1e-12)
    r1, r2 = random_density(2, rng), random_density(3, rng)
    np.testing.assert_allclose(a.tensor(b)(np.kron(r1, r2)), np.kron(a(r1), b(r2)), atol=1e-12)


def test_json_round_trip(rng):
    ch = random_channel(2, 3, rng)
    back = from_json(json.loads(json.dumps(to_json(ch))))
    np.testing.assert_allclose(back.choi, ch.choi)
    assert (back.dim_in, back.dim_out) == (2, 3)
