import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynkinlab.drivers import ProblemSpec, make_preset_driver
from dynkinlab.game import (GuardError, epsilon_saddle_study, extract_saddles, game_report, maximality_check,
                            pair_values, payoff_J, restricted_horizon_value, saddle_violation, value_bruteforce,
                            verify_saddle)
from dynkinlab.instances import d1, d2, random_instance, random_zero_jump_instance
from dynkinlab.lattice import (AdaptedProcess, BarrierPair, RuleFamily, StoppingRule, TimeGrid, build_lattice,
                               enumerate_stopping_rules)
from dynkinlab.rbsde import solve_rbsde

ZERO = make_preset_driver("zero")


def constant_spec(n, c=0.4, driver=ZERO):
    lat = build_lattice(TimeGrid(1.0, n))
    k = AdaptedProcess.constant(lat, c)
    return ProblemSpec(lat, driver, BarrierPair(k, k, np.full(lat.n_leaves, c)))


def inactive_spec(n=3):
    spec = d1()
    lat = spec.lattice
    return spec.replace(barriers=BarrierPair(AdaptedProcess.constant(lat, -1e6), AdaptedProcess.constant(lat, 1e6),
                                             spec.xi))


# -- payoff ---------------------------------------------------------------------

def test_payoff_branches():
    spec = d1()
    lat, bp = spec.lattice, spec.barriers
    nodes = lat.path_nodes("udu")
    leaf = nodes[-1]
    assert payoff_J(lat, "udu", leaf, leaf, bp) == bp.terminal[leaf - lat.offsets[3]]
    assert payoff_J(lat, "udu", nodes[1], nodes[2], bp) == bp.L[nodes[1]]
    assert payoff_J(lat, "udu", leaf, nodes[1], bp) == bp.U[nodes[1]]
    # ties before the horizon pay the lower barrier
    assert payoff_J(lat, "udu", nodes[2], nodes[2], bp) == bp.L[nodes[2]]


def _pathwise_value(spec, tau, sigma):
    """Independent oracle for f = 0: probability-weighted payoff over all paths."""
    lat = spec.lattice
    total = 0.0
    for pos in range(lat.n_leaves):
        nodes = lat.path_nodes(pos)
        t = nodes[np.argmax(tau.flags[nodes])]
        s = nodes[np.argmax(sigma.flags[nodes])]
        total += payoff_J(lat, pos, int(t), int(s), spec.barriers)
    return total / lat.n_leaves


def test_pair_values_against_path_oracle(rng):
    spec = random_instance(rng, 3, driver=ZERO)
    lat = spec.lattice
    fam = enumerate_stopping_rules(lat)
    root = StoppingRule.root(lat)
    table = pair_values(spec, root, fam, fam)
    for _ in range(40):
        i, j = rng.integers(len(fam), size=2)
        assert math.isclose(table[j, i, 0], _pathwise_value(spec, fam[i], fam[j]), rel_tol=1e-12, abs_tol=1e-12)


# -- values ---------------------------------------------------------------------

def test_constant_game():
    spec = constant_spec(3)
    bf = value_bruteforce(spec, StoppingRule.root(spec.lattice))
    assert bf.upper[0] == bf.lower[0] == 0.4


def test_coin_flip_game():
    lat = build_lattice(TimeGrid(1.0, 1))
    xi = (lat.brownian[lat.leaves] > 0).astype(float)
    spec = ProblemSpec(lat, ZERO, BarrierPair(AdaptedProcess.constant(lat, 0.0),
                                              AdaptedProcess.constant(lat, 1.0), xi))
    bf = value_bruteforce(spec, StoppingRule.root(lat))
    assert bf.upper[0] == bf.lower[0] == 0.5
    assert bf.table.shape == (2, 2, 1)


@pytest.mark.parametrize("make", [d1, d2])
def test_desk_value_identity(make):
    spec = make()
    root = StoppingRule.root(spec.lattice)
    bf = value_bruteforce(spec, root)
    y = solve_rbsde(spec).root
    assert abs(bf.upper[0] - y) <= 1e-9 and abs(bf.lower[0] - y) <= 1e-9
    assert len(bf.strategies) == 26


def test_value_identity_at_later_theta(rng):
    spec = random_instance(rng, 3)
    y = solve_rbsde(spec).y.values
    for theta in enumerate_stopping_rules(spec.lattice)[::5]:
        bf = value_bruteforce(spec, theta)
        np.testing.assert_allclose(bf.upper, y[theta.frontier], atol=1e-9)
        np.testing.assert_allclose(bf.lower, y[theta.frontier], atol=1e-9)


def test_guard():
    spec = random_instance(np.random.default_rng(0), 5)
    with pytest.raises(GuardError):
        value_bruteforce(spec, StoppingRule.root(spec.lattice))


# -- restricted horizon ---------------------------------------------------------

def test_restricted_horizon_examples(rng):
    spec = random_instance(rng, 3)
    lat = spec.lattice
    root, term = StoppingRule.root(lat), StoppingRule.terminal(lat)
    up, lo = restricted_horizon_value(spec, root, term)
    bf = value_bruteforce(spec, root)
    assert up[0] == bf.upper[0] and lo[0] == bf.lower[0]
    up, lo = restricted_horizon_value(spec, root, root)
    assert up[0] == lo[0] == spec.barriers.L[0]
    dp, _ = restricted_horizon_value(spec, root, root, method="dp")
    assert dp[0] == spec.barriers.L[0]


def test_restricted_dp_matches_bruteforce(rng):
    for _ in range(5):
        spec = random_instance(rng, 3)
        fam = enumerate_stopping_rules(spec.lattice)
        root = StoppingRule.root(spec.lattice)
        for cut in fam[::4]:
            bf, _ = restricted_horizon_value(spec, root, cut)
            dp, _ = restricted_horizon_value(spec, root, cut, method="dp")
            np.testing.assert_allclose(dp, bf, atol=1e-12)


# -- saddle pairs ---------------------------------------------------------------

def test_saddle_extraction_examples():
    spec = inactive_spec()
    lat = spec.lattice
    root, term = StoppingRule.root(lat), StoppingRule.terminal(lat)
    s = extract_saddles(spec, root, [0.5])
    assert s.star_pair == (term, term) and s.hat_pair == (term, term)

    spec = constant_spec(3)
    root = StoppingRule.root(spec.lattice)
    s = extract_saddles(spec, root)
    assert s.star_pair == (root, root)

    spec = d1()
    root = StoppingRule.root(spec.lattice)
    s = extract_saddles(spec, root, [0.5, 0.1])
    for i in range(2):
        assert s.eps_pairs[0.5][i] <= s.eps_pairs[0.1][i] <= s.star_pair[i]


def test_verify_examples():
    spec = constant_spec(3)
    root = StoppingRule.root(spec.lattice)
    assert verify_saddle(spec, root, (root, root)).passed

    spec = d1()
    lat = spec.lattice
    root, term = StoppingRule.root(lat), StoppingRule.terminal(lat)
    s = extract_saddles(spec, root)
    assert verify_saddle(spec, root, s.star_pair).passed
    assert verify_saddle(spec, root, s.hat_pair).passed

    spec = d2()
    root, term = StoppingRule.root(spec.lattice), StoppingRule.terminal(spec.lattice)
    res = verify_saddle(spec, root, (term, term))
    assert not res.passed and res.witness and res.violation > 1e-3
    assert verify_saddle(spec, root, (term, term), mode="epsilon", eps=1.0).passed


def test_saddle_violation_against_full_table(rng):
    spec = random_instance(rng, 3)
    root = StoppingRule.root(spec.lattice)
    bf = value_bruteforce(spec, root)
    fam = bf.strategies
    mask = bf.saddle_mask()
    for _ in range(30):
        si, ti = rng.integers(len(fam), size=2)
        viol, *_ = saddle_violation(spec, root, (fam[ti], fam[si]), fam)
        assert (viol <= 1e-9) == bool(mask[si, ti])


@settings(max_examples=15)
@given(st.integers(0, 2**31), st.booleans())
def test_saddle_set_invariants(seed, zero_jump):
    rng = np.random.default_rng(seed)
    spec = random_zero_jump_instance(rng, 3) if zero_jump else random_instance(rng, 3)
    fam = enumerate_stopping_rules(spec.lattice)
    theta = fam[int(rng.integers(len(fam)))]
    s = extract_saddles(spec, theta, [0.5, 0.1])
    rules = [r for pair in s.eps_pairs.values() for r in pair] + list(s.star_pair) + list(s.hat_pair)
    assert all(theta <= r for r in rules)
    assert s.star_pair[0] <= s.hat_pair[0] and s.star_pair[1] <= s.hat_pair[1]
    assert verify_saddle(spec, theta, s.star_pair).passed
    rep = game_report(spec, theta, (0.5,))
    assert np.all(rep.value_lower <= rep.value_upper + 1e-12)


def test_epsilon_study_bound(rng):
    spec = d2()
    study = epsilon_saddle_study(spec, StoppingRule.root(spec.lattice), [0.5, 0.1, 0.02])
    assert study.within_bound
    assert study.bound_constant == 2.0  # mu = -1, so (1 - mu^+ dt)^-N = 1


# -- maximality -----------------------------------------------------------------

def test_maximality_inactive():
    spec = inactive_spec()
    root = StoppingRule.root(spec.lattice)
    rep = maximality_check(spec, root)
    assert rep.n_saddles == 1 and all(rep.checks.values())


def test_maximality_constant_barriers():
    spec = constant_spec(3)
    root = StoppingRule.root(spec.lattice)
    rep = maximality_check(spec, root)
    assert rep.n_saddles == 26 * 26 and all(rep.checks.values())


@pytest.mark.parametrize("make", [d1, d2])
def test_maximality_desk(make):
    spec = make()
    rep = maximality_check(spec, StoppingRule.root(spec.lattice))
    assert rep.n_saddles >= 1 and all(rep.checks.values()), rep.witnesses


def test_game_report_desk():
    spec = d2()
    rep = game_report(spec, StoppingRule.root(spec.lattice))
    assert all(rep.checks.values())
