"""Acceptance suite: one test per criterion, each recording a single pass/fail line.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the terminal
summary) or ``python3 tests/test_acceptance.py``.
"""

import time

import numpy as np

from dynkinlab.bsde import solve_bsde
from dynkinlab.drivers import make_preset_driver
from dynkinlab.game import (extract_saddles, maximality_check, restricted_horizon_value, value_bruteforce,
                            verify_saddle)
from dynkinlab.instances import d1, m1, random_instance, random_linear_driver, random_zero_jump_instance
from dynkinlab.lattice import StoppingRule, TimeGrid, build_lattice
from dynkinlab.mokobodzki import gamma_threshold, threshold_diagnostics
from dynkinlab.rbsde import (PenaltyScheme, exponential_change, penalty_study, solve_penalized, solve_rbsde)
from dynkinlab.suites import (run_suites, skorokhod_violations, suite_comparison, suite_strict_comparison)

RESULTS: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str):
    RESULTS[number] = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    print(RESULTS[number])
    assert ok, RESULTS[number]


def _random_instances():
    rng = np.random.default_rng(1001)
    return [random_instance(rng, 3, driver=random_linear_driver(rng, (-2.0, 0.0), 1.0)) for _ in range(50)]


def _one_step_box():
    from test_rbsde import one_step_box

    return one_step_box()


def test_criterion_01_oracle_equivalence():
    t0 = time.perf_counter()
    worst_value = worst_gap = 0.0
    for spec in _random_instances():
        bf = value_bruteforce(spec, StoppingRule.root(spec.lattice))
        y = solve_rbsde(spec).root
        worst_value = max(worst_value, abs(y - bf.upper[0]))
        worst_gap = max(worst_gap, abs(bf.upper[0] - bf.lower[0]))
    elapsed = time.perf_counter() - t0
    ok = worst_value <= 1e-9 and worst_gap <= 1e-9 and elapsed < 30
    record(1, "oracle equivalence", ok,
           f"50 instances, max |Y - upper| {worst_value:.2e}, max |upper - lower| {worst_gap:.2e}, {elapsed:.2f}s")


def test_criterion_02_penalty_convergence():
    t0 = time.perf_counter()
    rows = penalty_study(d1(), [1, 4, 16, 64, 256, 1024, 4096])
    errs = [r.sup_error for r in rows]
    nonincreasing = all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    box = penalty_study(_one_step_box(), [1, 9, 99])
    closed = max(abs(r.sup_error - 1 / (1 + r.n)) for r in box)
    elapsed = time.perf_counter() - t0
    ok = nonincreasing and errs[-1] < 1e-3 and closed <= 1e-12 and elapsed < 5
    record(2, "penalty convergence", ok,
           f"desk errors non-increasing {nonincreasing}, e(4096) {errs[-1]:.2e}, "
           f"one-step max |e - 1/(1+n)| {closed:.1e}, {elapsed:.2f}s")


def test_criterion_03_monotone_one_sided():
    spec = d1()
    slack = 1e-12
    prev_lo = prev_hi = None
    ok = True
    for n in (1, 10, 100):
        lo = solve_penalized(spec, n, PenaltyScheme.LOWER_ONLY).y.values
        hi = solve_penalized(spec, n, PenaltyScheme.UPPER_ONLY).y.values
        two = solve_penalized(spec, n, PenaltyScheme.TWO_SIDED).y.values
        ok &= bool(np.all(lo <= two + slack) and np.all(two <= hi + slack))
        if prev_lo is not None:
            ok &= bool(np.all(lo >= prev_lo - slack) and np.all(hi <= prev_hi + slack))
        prev_lo, prev_hi = lo, hi
    record(3, "monotone one-sided schemes", ok, "n in {1, 10, 100} on the desk instance, slack 1e-12")


def test_criterion_04_skorokhod():
    solves = [(spec, solve_rbsde(spec)) for spec in _random_instances()]
    solves.append((d1(), solve_rbsde(d1())))
    solves.append((_one_step_box(), solve_rbsde(_one_step_box())))
    bad = sum(skorokhod_violations(spec, sol, 1e-10) for spec, sol in solves)
    # one-sided penalized schemes still reflect at their other barrier
    spec = d1()
    for n in (1, 10, 100):
        lo = solve_penalized(spec, n, PenaltyScheme.LOWER_ONLY)
        hi = solve_penalized(spec, n, PenaltyScheme.UPPER_ONLY)
        bad += int(np.sum((lo.r_minus.values > 1e-10) & (np.abs(spec.barriers.U - lo.y.values) > 1e-10)))
        bad += int(np.sum((hi.r_plus.values > 1e-10) & (np.abs(hi.y.values - spec.barriers.L) > 1e-10)))
    record(4, "Skorokhod and complementarity", bad == 0, f"{len(solves)} reflected solves, {bad} violations")


def test_criterion_05_comparison():
    res = suite_comparison(np.random.default_rng(505), 100)
    record(5, "comparison", res.passed, f"{res.cases} ordered pairs, max (Y1 - Y2) {res.worst:.2e}")


def test_criterion_06_saddle_verification():
    t0 = time.perf_counter()
    spec = d1()
    root = StoppingRule.root(spec.lattice)
    s = extract_saddles(spec, root)
    star = verify_saddle(spec, root, s.star_pair, tol=1e-9)
    hat = verify_saddle(spec, root, s.hat_pair, tol=1e-9)
    elapsed = time.perf_counter() - t0
    ok = star.passed and hat.passed and elapsed < 60
    record(6, "saddle verification", ok,
           f"26x26 sweep, star violation {star.violation:.1e}, hat violation {hat.violation:.1e}, {elapsed:.2f}s")


def test_criterion_07_maximality():
    rng = np.random.default_rng(707)
    specs = [d1()] + [random_zero_jump_instance(rng, 3) for _ in range(10)]
    failures, saddles = [], 0
    for i, spec in enumerate(specs):
        rep = maximality_check(spec, StoppingRule.root(spec.lattice), tol=1e-9, r_tol=1e-10)
        saddles += rep.n_saddles
        if not rep.passed(("a", "b", "c", "d")):
            failures.append((i, rep.witnesses))
    record(7, "maximality", not failures,
           f"{len(specs)} instances, {saddles} exact saddle pairs, failures {failures or 'none'}")


def test_criterion_08_calculus():
    res = run_suites(["monotonicity", "tower", "localization", "zero_driver"], seed=808)
    ok = all(r.passed for r in res)
    detail = ", ".join(f"{r.name} {r.cases} cases worst {r.worst:.1e}" for r in res)
    record(8, "nonlinear expectation calculus", ok, detail)


def test_criterion_09_strict_comparison():
    from dynkinlab.bsde import strict_comparison_check
    from dynkinlab.lattice import enumerate_stopping_rules
    from dynkinlab.suites import _spec_with

    rng = np.random.default_rng(909)
    lat = build_lattice(TimeGrid(1.0, 3))
    fam = enumerate_stopping_rules(lat)
    failures = 0
    for i in range(100):
        if i % 2 == 0:
            drv = random_linear_driver(rng, (-2.0, 0.0), 1.0)
        else:
            drv = make_preset_driver("bounded_z", [rng.uniform(0, 1), rng.uniform(0, 0.9)])
        spec = _spec_with(lat, drv, rng)
        xi2 = rng.normal(size=lat.n_leaves)
        xi1 = xi2 + np.abs(rng.normal(size=lat.n_leaves)) * (rng.uniform(size=lat.n_leaves) < 0.5)
        xi1[rng.integers(lat.n_leaves)] += 0.25
        sigma = fam[int(rng.integers(len(fam)))]
        failures += not strict_comparison_check(spec, xi1, xi2, sigma, tol=1e-10).holds
    record(9, "strict comparison", failures == 0, f"100 ordered pairs, {failures} nodes with equal values")


def test_criterion_10_threshold_diagnostics():
    spec = m1()
    lat = spec.lattice
    root = StoppingRule.root(lat)
    rep = gamma_threshold(spec.barriers, root)
    first = int(np.ceil(0.5 / lat.dt - 1e-12))
    detected = bool(np.all(rep.gamma_depth == first))
    diag = threshold_diagnostics(spec, root, eps_list=(0.5, 0.1, 0.02))
    g = rep.gamma_depth
    s = extract_saddles(spec, root, (0.5, 0.1, 0.02))
    eps_ok = all(np.all(r.stop_depths() <= g) for pair in s.eps_pairs.values() for r in pair)
    tau_hat_late = int(np.sum(diag.tau_hat_depth > g))
    sigma_hat_late = int(np.sum(diag.sigma_hat_depth > g))
    dp, _ = restricted_horizon_value(spec, root, rep.gamma, method="dp")
    value_gap = abs(dp[0] - solve_rbsde(spec).root)
    ok = detected and eps_ok and tau_hat_late == 0 and sigma_hat_late == 0 and value_gap <= 1e-9
    record(10, "threshold diagnostics", ok,
           f"gamma at depth {first} on all paths {detected}, epsilon pairs within gamma {eps_ok}, "
           f"first-reflection times after gamma on {tau_hat_late} (tau) and {sigma_hat_late} (sigma) "
           f"of {g.size} paths, restricted value gap {value_gap:.1e}")


def test_criterion_11_change_of_variable():
    spec = d1()
    y = solve_rbsde(spec).y.values
    worst = 0.0
    for a in (-1.0, 1.0):
        ch = exponential_change(spec, a)
        worst = max(worst, float(np.max(np.abs(solve_rbsde(ch.spec).y.values - np.exp(a * spec.lattice.times) * y))))
    record(11, "change of variable", worst <= 1e-10, f"max |Y_bar - e^(at) Y| {worst:.1e} for a in {{-1, 1}}")


if __name__ == "__main__":
    import sys

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
