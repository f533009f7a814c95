from glaubercut.verify import CHECKS, SUITES, VERIFY_SEED, run_suite


def test_all_checks_registered():
    suites = {suite for suite, _ in CHECKS.values()}
    assert suites == {"invariants", "oracles"} and "all" in SUITES


def test_oracles_pass():
    rep = run_suite("oracles", VERIFY_SEED, 1)
    assert rep["ok"] and rep["n_failed"] == 0
    assert all(c["suite"] == "oracles" for c in rep["checks"])


def test_all_pass_and_order_independent_of_workers():
    a = run_suite("all", VERIFY_SEED, 1)
    b = run_suite("all", VERIFY_SEED, 3)
    assert a["ok"] and a == b
    assert a["n_passed"] == len(CHECKS)


def test_negative_control_is_caught():
    rep = run_suite("invariants", VERIFY_SEED, 2, mutate=0.05)
    assert not rep["ok"]
    assert "marginal_correctness" in rep["failed"]
