import numpy as np
import pytest

from qrd import fixtures
from qrd.channel import apply, dephasing, identity, random_channel, replacer
from qrd.distortion import Distortion
from qrd.ensemble import Ensemble, purified_source
from qrd.optim import SolverOpts
from qrd.qcore import mutual_information, random_density
from qrd.rdsolver import ReaProblem, brute_force_rea, curve_residuals, rea_curve, rea_point

FAST = SolverOpts(restarts=1)


def objective_oracle(e, ch):
    """1/2 I(B : X X' R) on the full purified source, via labelled states."""
    psi = purified_source(e).dm()
    if e.dim_j == 1:
        psi = psi.reorder(["A", "J", "X", "X'", "R"])
    out = apply(ch, psi, ["A", "J"], out_label="B")
    return 0.5 * mutual_information(out, ["B"], ["X", "X'", "R"])


def test_objective_matches_labelled_computation(rng):
    for _ in range(10):
        e = Ensemble.from_states([0.3, 0.7], [random_density(2, rng), random_density(2, rng, rank=1)])
        prob = ReaProblem(e, Distortion.for_ensemble(e))
        ch = random_channel(2, 2, rng)
        assert prob.value(ch.choi) == pytest.approx(objective_oracle(e, ch), abs=1e-10)


def test_objective_known_channels():
    e = fixtures.classical_pair()
    prob = ReaProblem(e, Distortion.for_ensemble(e))
    assert prob.value(dephasing(2).choi) == pytest.approx(0.5, abs=1e-12)
    # identity keeps the GHZ-like purification pure on B|XX': 1/2 * 2 S(B)
    assert prob.value(identity(2).choi) == pytest.approx(1.0, abs=1e-12)
    assert prob.value(replacer(np.eye(2) / 2).choi) == pytest.approx(0.0, abs=1e-12)
    q = fixtures.nonorthogonal_pair()
    # pure states: identity channel gives 1/2 * 2 S(A)
    assert ReaProblem(q, Distortion.for_ensemble(q)).value(identity(2).choi) == pytest.approx(0.600876, abs=1e-6)


@pytest.mark.parametrize("name", ["single_pure", "single_mixed"])
@pytest.mark.parametrize("D", [0.0, 0.2])
def test_single_state_rate_zero(name, D):
    e = fixtures.get(name)
    pt = rea_point(e, D, Distortion.for_ensemble(e), FAST)
    assert pt.rate == pytest.approx(0.0, abs=1e-6)
    assert pt.feasibility_residual <= 1e-6


def test_classical_pair_exact():
    e = fixtures.classical_pair()
    d = Distortion.for_ensemble(e)
    pt = rea_point(e, 0.0, d, FAST)
    assert pt.rate == pytest.approx(0.5, abs=0.02)
    assert pt.channel.is_cptp(1e-7)
    assert d.cq_value(np.stack([pt.channel(s) for s in e.sigmas])) <= 1e-6


def test_classical_pair_beyond_threshold():
    e = fixtures.classical_pair()
    d = Distortion.for_ensemble(e)
    # constant channel I/2 reaches Delta = 1 - (1/sqrt2)^2 = 0.5
    assert d.cq_value(np.stack([np.eye(2) / 2] * 2)) == pytest.approx(0.5)
    assert rea_point(e, 0.55, d, FAST).rate <= 1e-3


def test_classical_pair_against_dephasing_family():
    """Grid over dephase-then-flip channels bounds the optimum from above."""
    e = fixtures.classical_pair()
    d = Distortion.for_ensemble(e)
    prob = ReaProblem(e, d)
    D = 0.2
    best = np.inf
    for q in np.linspace(0, 0.5, 501):
        c = (1 - 2 * q) * dephasing(2).choi + 2 * q * np.kron(np.eye(2), np.eye(2) / 2)
        if prob.dmap.value(c) <= D:
            best = min(best, prob.value(c))
    assert rea_point(e, D, d, FAST).rate <= best + 1e-6


def test_certificate_feasible_and_rate_nonnegative(rng):
    for _ in range(3):
        e = Ensemble.from_states([0.5, 0.5], [random_density(2, rng), random_density(2, rng)])
        d = Distortion.for_ensemble(e, "trace")
        pt = rea_point(e, 0.1, d, FAST)
        assert pt.rate >= -1e-9
        assert d.cq_value(np.stack([pt.channel(s) for s in e.sigmas])) <= 0.1 + 1e-6
        assert pt.rate == pytest.approx(ReaProblem(e, d).value(pt.channel.choi), abs=1e-9)


def test_negative_distortion_rejected():
    e = fixtures.classical_pair()
    with pytest.raises(ValueError):
        rea_point(e, -0.1, Distortion.for_ensemble(e))


def test_objective_convex_in_channel(rng):
    e = Ensemble.from_states([0.4, 0.6], [random_density(2, rng), random_density(2, rng)])
    prob = ReaProblem(e, Distortion.for_ensemble(e))
    for _ in range(30):
        a, b, t = random_channel(2, 2, rng).choi, random_channel(2, 2, rng).choi, rng.random()
        assert prob.value(t * a + (1 - t) * b) <= t * prob.value(a) + (1 - t) * prob.value(b) + 1e-8


def test_gradient_matches_finite_difference(rng):
    for _ in range(20):
        e = Ensemble.from_states([0.5, 0.5], [random_density(2, rng), random_density(2, rng)])
        prob = ReaProblem(e, Distortion.for_ensemble(e))
        c = 0.7 * random_channel(2, 2, rng).choi + 0.3 * np.eye(4) / 2
        _, g = prob(c)
        dirn = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        dirn = (dirn + dirn.conj().T) / 2
        h = 1e-5
        fd = (prob.value(c + h * dirn) - prob.value(c - h * dirn)) / (2 * h)
        an = np.real(np.vdot(g, dirn))
        assert abs(fd - an) <= 1e-4 * max(abs(an), abs(fd), 1e-3)


def test_curve_single_state_all_zero():
    e = fixtures.single_mixed()
    pts = rea_curve(e, [0.0, 0.1, 0.3], Distortion.for_ensemble(e), FAST)
    assert all(p.rate == pytest.approx(0.0, abs=1e-6) for p in pts)


def test_curve_zero_suffix_and_shape():
    e = fixtures.classical_pair()
    pts = rea_curve(e, [0.0, 0.2, 0.4, 0.5, 0.6], Distortion.for_ensemble(e), FAST)
    assert [p.rate for p in pts[-2:]] == pytest.approx([0.0, 0.0], abs=1e-6)
    mono, conv = curve_residuals(pts)
    assert mono <= 1e-3 and conv <= 1e-3


def test_curve_requires_sorted_grid():
    e = fixtures.classical_pair()
    with pytest.raises(ValueError):
        rea_curve(e, [0.2, 0.1], Distortion.for_ensemble(e))


def test_curve_residuals_detect_violations():
    from qrd.rdsolver import RDPoint

    ch = identity(2)
    pts = [RDPoint(0.0, 1.0, ch, True, 0), RDPoint(0.5, 0.9, ch, True, 0), RDPoint(1.0, 0.0, ch, True, 0)]
    mono, conv = curve_residuals(pts)
    assert mono == 0.0 and conv == pytest.approx(0.4)
    mono, _ = curve_residuals(pts[::-1][:2][::-1] + [RDPoint(1.5, 0.2, ch, True, 0)])
    assert mono == pytest.approx(0.2)


def test_dim_b_knob():
    e = fixtures.classical_pair()
    d3 = Distortion.for_ensemble(e, dim_b=3)
    assert rea_point(e, 0.0, d3, FAST).rate == pytest.approx(0.5, abs=0.02)
    with pytest.raises(ValueError):
        rea_point(e, 0.0, d3, FAST, dim_b=2)


def test_brute_force_small_cases():
    e = fixtures.single_pure()
    assert brute_force_rea(e, 0.1, Distortion.for_ensemble(e), samples=2000, refine=5, rounds=20) <= 1e-3
    c = fixtures.classical_pair()
    val = brute_force_rea(c, 0.0, Distortion.for_ensemble(c))
    assert val == pytest.approx(0.5, abs=0.03)


def test_brute_force_agrees_with_solver():
    e = fixtures.classical_pair()
    d = Distortion.for_ensemble(e)
    bf = brute_force_rea(e, 0.2, d, samples=20_000, refine=30, rounds=150)
    assert bf >= rea_point(e, 0.2, d, FAST).rate - 1e-6
    assert bf == pytest.approx(rea_point(e, 0.2, d, FAST).rate, abs=0.03)


def test_brute_force_dimension_cap():
    e = fixtures.redundant_product()
    with pytest.raises(ValueError):
        brute_force_rea(e, 0.1, Distortion.for_ensemble(e), samples=10)
