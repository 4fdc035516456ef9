import pytest

from qrd.verify import SUITES, PropertyResult, run_suite


@pytest.mark.parametrize("suite", ["entropy", "channels", "ki"])
def test_small_suites_pass(suite):
    res = run_suite(suite, seed=3, instances=10)
    assert res and all(r.passed for r in res), [r.line() for r in res if not r.passed]
    assert all(r.suite == suite and r.n == 10 for r in res)


def test_deterministic():
    a = [r.residual for r in run_suite("entropy", seed=7, instances=8)]
    b = [r.residual for r in run_suite("entropy", seed=7, instances=8)]
    assert a == b


def test_all_covers_every_suite():
    names = {r.suite for r in run_suite("all", seed=1, instances=2)}
    assert names == set(SUITES)


def test_unknown_suite():
    with pytest.raises(ValueError, match="unknown suite"):
        run_suite("bogus")


def test_result_status():
    assert PropertyResult("s", "p", 1, 1e-9, 1e-8).passed
    assert not PropertyResult("s", "p", 1, float("nan"), 1.0).passed
    assert PropertyResult("s", "p", 1, 2.0, 1.0).line().endswith("FAIL")
