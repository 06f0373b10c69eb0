"""Randomized and exhaustive property suites over small lattices."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bsde import nonlinear_expectation, solve_bsde, stopped_values, strict_comparison_check
from .drivers import ProblemSpec, make_preset_driver
from .game import value_bruteforce
from .instances import d1, random_instance, random_ordered_pair
from .lattice import StoppingRule, TimeGrid, build_lattice, enumerate_stopping_rules
from .rbsde import Side, exponential_change, solve_one_barrier, solve_rbsde

CALCULUS_TOL = 1e-12


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    cases: int
    worst: float
    detail: str = ""


def _drivers():
    return [make_preset_driver("zero"),
            make_preset_driver("linear", [-1.0, 0.5, 0.2]),
            make_preset_driver("monotone_cubic", [0.8]),
            make_preset_driver("bounded_z", [0.5, 0.5])]


def _spec_with(lat, driver, rng) -> ProblemSpec:
    from .lattice import AdaptedProcess, BarrierPair

    big = np.full(lat.n_nodes, 1e6)
    xi = rng.normal(size=lat.n_leaves)
    return ProblemSpec(lat, driver, BarrierPair(AdaptedProcess(lat, -big), AdaptedProcess(lat, big), xi))


def skorokhod_violations(spec: ProblemSpec, sol, tol: float = 1e-10) -> int:
    """Count nodes breaking complementarity, barrier contact or the bounds."""
    L, U = spec.barriers.L, spec.barriers.U
    y, p, m = sol.y.values, sol.r_plus.values, sol.r_minus.values
    bad = (p * m != 0) | ((p > tol) & (np.abs(y - L) > tol)) | ((m > tol) & (np.abs(U - y) > tol))
    bad |= (y < L - tol) | (y > U + tol) | (p < 0) | (m < 0)
    return int(bad.sum())


# ---------------------------------------------------------------------------
# E^f calculus
# ---------------------------------------------------------------------------


def suite_monotonicity(rng, instances: int = 20) -> SuiteResult:
    worst, cases = 0.0, 0
    for n in (1, 2, 3):
        lat = build_lattice(TimeGrid(1.0, n))
        for drv in _drivers():
            for _ in range(instances):
                spec = _spec_with(lat, drv, rng)
                xi1 = rng.normal(size=lat.n_leaves)
                xi2 = xi1 + np.abs(rng.normal(size=lat.n_leaves)) * (rng.uniform(size=lat.n_leaves) < 0.7)
                y1 = solve_bsde(spec, xi1).y.values
                y2 = solve_bsde(spec, xi2).y.values
                worst = max(worst, float(np.max(y1 - y2)))
                cases += 1
    return SuiteResult("monotonicity", worst <= CALCULUS_TOL, cases, worst)


def suite_tower(rng, instances: int = 3) -> SuiteResult:
    """``E_{theta,rho}(E_{rho,tau} X) = E_{theta,tau} X`` over every ordered triple for ``N <= 3``.

    Frozen sweeps are batched over all rules; 60 triples per instance at depth 3
    are also routed through :func:`nonlinear_expectation`.
    """
    worst, cases = 0.0, 0
    for n in (1, 2, 3):
        lat = build_lattice(TimeGrid(1.0, n))
        fam = enumerate_stopping_rules(lat)
        rules = list(fam)
        R = fam.reached
        F = fam.flags
        # le[i, j] is rule_i <= rule_j
        le = np.all(R[:, None, :] | ~R[None, :, :], axis=2)
        rho_idx, tau_idx = np.nonzero(le)
        for drv in _drivers():
            for _ in range(instances):
                spec = _spec_with(lat, drv, rng)
                x = rng.normal(size=lat.n_nodes)
                y_tau = stopped_values(spec, R, np.broadcast_to(x, R.shape))
                outer = stopped_values(spec, R[rho_idx], y_tau[tau_idx])
                err = np.abs(outer - y_tau[tau_idx])
                for t in range(len(fam)):
                    ok_rho = le[t, rho_idx]
                    if not ok_rho.any():
                        continue
                    e = err[ok_rho][:, F[t]]
                    worst = max(worst, float(e.max()))
                    cases += int(ok_rho.sum())
                if n == 3:
                    sampled = 0
                    while sampled < 60:
                        a, b, c = (rules[i] for i in rng.integers(len(rules), size=3))
                        if not (a <= b <= c):
                            continue
                        inner = nonlinear_expectation(spec, c, x, b)
                        out = nonlinear_expectation(spec, b, np.nan_to_num(inner), a)
                        direct = nonlinear_expectation(spec, c, x, a)
                        worst = max(worst, float(np.max(np.abs(out[a.flags] - direct[a.flags]))))
                        sampled += 1
    return SuiteResult("tower", worst <= CALCULUS_TOL, cases, worst)


def suite_localization(rng, instances: int = 1) -> SuiteResult:
    """Indicator data with the driver switched off outside the set factorizes the solve."""
    worst, cases = 0.0, 0
    for n in (1, 2, 3):
        lat = build_lattice(TimeGrid(1.0, n))
        for theta in enumerate_stopping_rules(lat):
            front = theta.frontier
            subsets = itertools.product([False, True], repeat=front.size)
            for pick in subsets:
                chosen = front[np.array(pick, dtype=bool)]
                inside = lat.subtree_mask(chosen) if chosen.size else np.zeros(lat.n_nodes, dtype=bool)
                ind = inside[lat.leaves].astype(float)
                for drv in _drivers()[1:]:
                    for _ in range(instances):
                        spec = _spec_with(lat, drv, rng)
                        xi = rng.normal(size=lat.n_leaves)
                        full = solve_bsde(spec, xi).y.values
                        loc = solve_bsde(spec.replace(driver_mask=inside), ind * xi).y.values
                        f = theta.flags
                        expect = np.where(inside, full, 0.0)
                        worst = max(worst, float(np.max(np.abs(loc[f] - expect[f]))))
                        cases += 1
    return SuiteResult("localization", worst <= CALCULUS_TOL, cases, worst)


def suite_zero_driver(rng, instances: int = 20) -> SuiteResult:
    """With ``f = 0`` the solve is the plain backward average, bit for bit."""
    worst, cases = 0.0, 0
    zero = make_preset_driver("zero")
    for n in (1, 2, 3):
        lat = build_lattice(TimeGrid(1.0, n))
        for _ in range(instances):
            spec = _spec_with(lat, zero, rng)
            xi = rng.normal(size=lat.n_leaves)
            y = solve_bsde(spec, xi).y.values
            avg = np.zeros(lat.n_nodes)
            avg[lat.leaves] = xi
            for k in range(n - 1, -1, -1):
                up, dn = lat.children(k)
                avg[lat.level(k)] = 0.5 * (avg[up] + avg[dn])
            worst = max(worst, float(np.max(np.abs(y - avg))))
            cases += 1
    return SuiteResult("zero_driver", worst == 0.0, cases, worst)


# ---------------------------------------------------------------------------
# reflected solves and games
# ---------------------------------------------------------------------------


def suite_comparison(rng, instances: int = 100) -> SuiteResult:
    worst, cases = -math.inf, 0
    for i in range(instances):
        steps = 1 + i % 6
        p1, p2 = random_ordered_pair(rng, steps)
        y1 = solve_rbsde(p1).y.values
        y2 = solve_rbsde(p2).y.values
        worst = max(worst, float(np.max(y1 - y2)))
        cases += 1
    return SuiteResult("comparison", worst <= 1e-10, cases, worst)


def suite_sandwich(rng, instances: int = 20) -> SuiteResult:
    worst, cases = -math.inf, 0
    for _ in range(instances):
        spec = random_instance(rng, steps=int(rng.integers(1, 6)))
        y = solve_rbsde(spec).y.values
        lo = solve_one_barrier(spec, Side.UPPER).y.values
        hi = solve_one_barrier(spec, Side.LOWER).y.values
        worst = max(worst, float(np.max(lo - y)), float(np.max(y - hi)))
        cases += 1
    return SuiteResult("sandwich", worst <= 1e-12, cases, worst)


def suite_skorokhod(rng, instances: int = 20) -> SuiteResult:
    bad, cases = 0, 0
    for _ in range(instances):
        spec = random_instance(rng, steps=int(rng.integers(1, 6)))
        bad += skorokhod_violations(spec, solve_rbsde(spec))
        cases += 1
    return SuiteResult("skorokhod", bad == 0, cases, float(bad))


def suite_value_identity(rng, instances: int = 20) -> SuiteResult:
    worst, cases = 0.0, 0
    for _ in range(instances):
        spec = random_instance(rng, steps=3)
        root = StoppingRule.root(spec.lattice)
        bf = value_bruteforce(spec, root)
        y = solve_rbsde(spec).root
        worst = max(worst, abs(bf.upper[0] - y), abs(bf.lower[0] - y))
        cases += 1
    return SuiteResult("value_identity", worst <= 1e-9, cases, worst)


def suite_strict_comparison(rng, instances: int = 100) -> SuiteResult:
    lat = build_lattice(TimeGrid(1.0, 3))
    fam = enumerate_stopping_rules(lat)
    failures, cases = 0, 0
    for _ in range(instances):
        drv = make_preset_driver("linear", [rng.uniform(-2, 0), rng.uniform(-1, 1), rng.normal()])
        spec = _spec_with(lat, drv, rng)
        xi2 = rng.normal(size=lat.n_leaves)
        bump = np.abs(rng.normal(size=lat.n_leaves)) * (rng.uniform(size=lat.n_leaves) < 0.5)
        if not bump.any():
            bump[rng.integers(lat.n_leaves)] = 1.0
        sigma = fam[int(rng.integers(len(fam)))]
        res = strict_comparison_check(spec, xi2 + bump, xi2, sigma)
        failures += not res.holds
        cases += 1
    return SuiteResult("strict_comparison", failures == 0, cases, float(failures))


def suite_change_of_variable(rng, instances: int = 10) -> SuiteResult:
    worst, cases = 0.0, 0
    specs = [d1()] + [random_instance(rng, steps=int(rng.integers(1, 5))) for _ in range(instances)]
    for spec in specs:
        y = solve_rbsde(spec).y.values
        for a in (-1.0, 1.0):
            ch = exponential_change(spec, a)
            yb = solve_rbsde(ch.spec).y.values
            worst = max(worst, float(np.max(np.abs(yb - ch.weights * y))))
            cases += 1
    return SuiteResult("change_of_variable", worst <= 1e-10, cases, worst)


SUITES: dict[str, Callable] = {
    "monotonicity": suite_monotonicity,
    "tower": suite_tower,
    "localization": suite_localization,
    "zero_driver": suite_zero_driver,
    "comparison": suite_comparison,
    "sandwich": suite_sandwich,
    "skorokhod": suite_skorokhod,
    "value_identity": suite_value_identity,
    "strict_comparison": suite_strict_comparison,
    "change_of_variable": suite_change_of_variable,
}


EXHAUSTIVE = {"tower", "localization"}


def run_suites(names=None, seed: int = 0, instances: int | None = None) -> list[SuiteResult]:
    """Run suites with one independent stream per suite.

    ``instances`` sets the number of random instances of the randomized suites;
    the exhaustive suites keep their own sweep sizes.
    """
    out = []
    for name in names or SUITES:
        rng = np.random.default_rng([seed, list(SUITES).index(name)])
        fn = SUITES[name]
        out.append(fn(rng) if instances is None or name in EXHAUSTIVE else fn(rng, instances))
    return out
