"""Dynkin games on the lattice: payoff, brute-force values, saddle pairs, maximality.

Player one chooses ``tau`` and receives ``L``; player two chooses ``sigma`` and
pays ``U``.  Ties before the horizon pay ``L``; ``xi`` is paid when both wait
until the horizon.  The game is evaluated through the nonlinear expectation
started at a rule ``theta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsde import CLASSIFY_TOL, one_step_increments, stopped_values
from .drivers import ProblemSpec
from .lattice import (BarrierPair, Lattice, LatticeError, RuleFamily, StoppingRule,
                      enumerate_stopping_rules, first_hitting_rule, rule_min)
from .rbsde import CONTACT_TOL, SolutionTriple, solve_rbsde, solve_rbsde_stopped

GAME_DEPTH_CAP = 4
SADDLE_TOL = 1e-9
HAT_TOL = 1e-10
PAIR_CHUNK = 1 << 16


class GuardError(ValueError):
    """Brute-force enumeration requested beyond the supported depth."""


def _guard(lat: Lattice):
    lat.require_full("brute-force game evaluation")
    if lat.steps > GAME_DEPTH_CAP:
        raise GuardError(f"brute-force game sweeps need steps <= {GAME_DEPTH_CAP}, got {lat.steps}")


# ---------------------------------------------------------------------------
# payoff
# ---------------------------------------------------------------------------


def payoff_J(lattice: Lattice, path, tau_node: int, sigma_node: int, barriers: BarrierPair) -> float:
    """Payoff of stopping at ``tau_node`` and ``sigma_node`` along ``path``."""
    nodes = lattice.path_nodes(path)
    pos = {int(n): k for k, n in enumerate(nodes)}
    if tau_node not in pos or sigma_node not in pos:
        raise LatticeError("stopping nodes must lie on the selected path")
    kt, ks = pos[tau_node], pos[sigma_node]
    n = lattice.steps
    if kt <= ks and kt < n:
        return float(barriers.L[tau_node])
    if ks < kt:
        return float(barriers.U[sigma_node])
    leaf = int(nodes[-1]) - lattice.offsets[n]
    return float(barriers.terminal[leaf])


def payoff_nodes(barriers: BarrierPair, tau_flags: np.ndarray) -> np.ndarray:
    """Per-node payoff given that the pair stops at a node.

    At a leaf both players have waited, so ``xi`` is paid; elsewhere the payoff is
    ``L`` if ``tau`` stops at the node and ``U`` otherwise.  ``tau_flags`` may be
    batched along leading axes.
    """
    lat = barriers.lattice
    leaf = np.zeros(lat.n_nodes, dtype=bool)
    leaf[lat.leaves] = True
    xi_ext = np.zeros(lat.n_nodes)
    xi_ext[lat.leaves] = barriers.terminal
    return np.where(leaf, xi_ext, np.where(tau_flags, barriers.L, barriers.U))


# ---------------------------------------------------------------------------
# pair evaluation
# ---------------------------------------------------------------------------


def pair_values(spec: ProblemSpec, theta: StoppingRule, taus: RuleFamily, sigmas: RuleFamily) -> np.ndarray:
    """Values ``E^f_{theta, tau^sigma} J(tau, sigma)`` at the theta frontier.

    Returns an array of shape ``(len(sigmas), len(taus), frontier_width)``.
    """
    lat = spec.lattice
    front = theta.frontier
    pay_tau = payoff_nodes(spec.barriers, taus.flags)
    rt = taus.reached
    rs = sigmas.reached
    nt = len(taus)
    out = np.empty((len(sigmas), nt, front.size))
    step = max(1, PAIR_CHUNK // max(nt, 1))
    for i in range(0, len(sigmas), step):
        block = rs[i:i + step]
        reached = (block[:, None, :] | rt[None, :, :]).reshape(-1, lat.n_nodes)
        payoff = np.broadcast_to(pay_tau[None], (block.shape[0], nt, lat.n_nodes)).reshape(-1, lat.n_nodes)
        y = stopped_values(spec, reached, payoff)
        out[i:i + block.shape[0]] = y[:, front].reshape(block.shape[0], nt, front.size)
    return out


def strategies_after(theta: StoppingRule, family: RuleFamily | None = None) -> RuleFamily:
    family = family if family is not None else enumerate_stopping_rules(theta.lattice)
    return family.after(theta)


@dataclass(frozen=True, eq=False)
class BruteForceValue:
    """Upper and lower values at the theta frontier, with the full pair table."""

    theta: StoppingRule
    frontier: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    strategies: RuleFamily
    table: np.ndarray
    sigma_argmin: np.ndarray
    tau_argmax: np.ndarray

    @property
    def row_max(self) -> np.ndarray:
        """``max_tau`` for each ``sigma``, shape ``(M, W)``."""
        return self.table.max(axis=1)

    @property
    def col_min(self) -> np.ndarray:
        """``min_sigma`` for each ``tau``, shape ``(M, W)``."""
        return self.table.min(axis=0)

    def saddle_mask(self, tol: float = SADDLE_TOL) -> np.ndarray:
        """``mask[s, t]`` is true when ``(tau_t, sigma_s)`` is a saddle at every frontier node."""
        v = self.table
        ok = (v >= self.row_max[:, None, :] - tol) & (v <= self.col_min[None, :, :] + tol)
        return ok.all(axis=2)


def value_bruteforce(spec: ProblemSpec, theta: StoppingRule, *,
                     strategies: RuleFamily | None = None) -> BruteForceValue:
    """Exhaustive ``min_sigma max_tau`` and ``max_tau min_sigma`` over rules at or after ``theta``."""
    _guard(spec.lattice)
    rules = strategies if strategies is not None else strategies_after(theta)
    table = pair_values(spec, theta, rules, rules)
    row_max = table.max(axis=1)
    col_min = table.min(axis=0)
    return BruteForceValue(theta, theta.frontier, row_max.min(axis=0), col_min.max(axis=0), rules,
                           table, row_max.argmin(axis=0), col_min.argmax(axis=0))


def restricted_horizon_value(spec: ProblemSpec, theta: StoppingRule, cutoff: StoppingRule, *,
                             method: str = "bruteforce") -> tuple[np.ndarray, np.ndarray]:
    """Game value when both players must stop at or before ``cutoff``.

    ``method="dp"`` runs the reflected sweep with the data frozen at the cutoff
    frontier, which works at any depth; ``"bruteforce"`` enumerates rules.
    """
    if not theta <= cutoff:
        raise ValueError("cutoff must stop no earlier than theta on every path")
    if method == "dp":
        pay = payoff_nodes(spec.barriers, np.ones(spec.lattice.n_nodes, dtype=bool))
        y = solve_rbsde_stopped(spec, cutoff.reached, pay)
        v = y[theta.frontier]
        return v, v.copy()
    if method != "bruteforce":
        raise ValueError(f"unknown method {method!r}")
    _guard(spec.lattice)
    rules = strategies_after(theta).capped(cutoff)
    res = value_bruteforce(spec, theta, strategies=rules)
    return res.upper, res.lower


# ---------------------------------------------------------------------------
# saddle pairs
# ---------------------------------------------------------------------------


def cumulative_since(lattice: Lattice, increments: np.ndarray, theta: StoppingRule) -> np.ndarray:
    """Running sum of per-node increments from the theta frontier on, node included; zero before."""
    cum = np.where(theta.reached, increments, 0.0)
    for k in range(1, lattice.steps + 1):
        s = lattice.level(k)
        par = lattice.parent[s]
        cum[s] += np.where(theta.reached[par], cum[par], 0.0)
    return cum


@dataclass(frozen=True, eq=False)
class SaddleSet:
    eps_pairs: dict
    star_pair: tuple[StoppingRule, StoppingRule]
    hat_pair: tuple[StoppingRule, StoppingRule]


def extract_saddles(spec: ProblemSpec, theta: StoppingRule, eps_list=(), *,
                    solution: SolutionTriple | None = None, contact_tol: float = CONTACT_TOL,
                    hat_tol: float = HAT_TOL) -> SaddleSet:
    """Epsilon pairs, the first-contact pair and the first-reflection pair after ``theta``."""
    lat = spec.lattice
    sol = solution if solution is not None else solve_rbsde(spec)
    y = sol.y.values
    L, U = spec.barriers.L, spec.barriers.U

    def pair(eps):
        return (first_hitting_rule(lat, theta, y <= L + eps),
                first_hitting_rule(lat, theta, y >= U - eps))

    eps_pairs = {float(e): pair(float(e)) for e in eps_list}
    cp = cumulative_since(lat, sol.r_plus.values, theta)
    cm = cumulative_since(lat, sol.r_minus.values, theta)
    hat = (first_hitting_rule(lat, theta, cp > hat_tol), first_hitting_rule(lat, theta, cm > hat_tol))
    return SaddleSet(eps_pairs, pair(contact_tol), hat)


@dataclass(frozen=True)
class SaddleCheck:
    passed: bool
    violation: float
    slack: float
    witness: str | None = None
    detail: dict = field(default_factory=dict)


def _pair_family(lat: Lattice, rule: StoppingRule) -> RuleFamily:
    return RuleFamily(lat, rule.flags[None, :].copy())


def saddle_violation(spec: ProblemSpec, theta: StoppingRule, pair, strategies: RuleFamily | None = None):
    """Largest gain from a unilateral deviation.

    Returns ``(gain, description, pair value, frontier node of the largest gain)``.
    """
    _guard(spec.lattice)
    tau0, sigma0 = pair
    rules = strategies if strategies is not None else strategies_after(theta)
    lat = spec.lattice
    v0 = pair_values(spec, theta, _pair_family(lat, tau0), _pair_family(lat, sigma0))[0, 0]
    dev_tau = pair_values(spec, theta, rules, _pair_family(lat, sigma0))[0]
    dev_sigma = pair_values(spec, theta, _pair_family(lat, tau0), rules)[:, 0]
    gain_tau = dev_tau - v0[None, :]
    gain_sigma = v0[None, :] - dev_sigma
    gt, gs = float(gain_tau.max()), float(gain_sigma.max())
    if gt >= gs:
        i, w = np.unravel_index(int(np.argmax(gain_tau)), gain_tau.shape)
        who = f"tau #{i} gains {gt:.3g} at node {int(theta.frontier[w])}"
    else:
        i, w = np.unravel_index(int(np.argmax(gain_sigma)), gain_sigma.shape)
        who = f"sigma #{i} gains {gs:.3g} at node {int(theta.frontier[w])}"
    return max(gt, gs), who, v0, int(theta.frontier[w])


def epsilon_constant(spec: ProblemSpec) -> float:
    """Slack factor ``2 (1 - mu^+ dt)^{-N}`` for epsilon pairs of a monotone scheme."""
    lat = spec.lattice
    mu = max(spec.driver.mono_y, 0.0)
    return 2.0 * (1.0 - mu * lat.dt) ** (-lat.steps)


def verify_saddle(spec: ProblemSpec, theta: StoppingRule, pair, mode: str = "exact", *,
                  eps: float | None = None, constant: float | None = None,
                  tol: float = SADDLE_TOL, strategies: RuleFamily | None = None) -> SaddleCheck:
    """Check both saddle inequalities against every enumerated deviation.

    ``mode="epsilon"`` allows a slack ``constant * eps``; the default constant is
    :func:`epsilon_constant`.
    """
    viol, who, v0, node = saddle_violation(spec, theta, pair, strategies)
    if mode == "exact":
        slack = tol
    elif mode == "epsilon":
        if eps is None:
            raise ValueError("epsilon mode needs eps")
        c = epsilon_constant(spec) if constant is None else constant
        slack = c * eps + tol
    else:
        raise ValueError(f"unknown mode {mode!r}")
    passed = viol <= slack
    return SaddleCheck(passed, viol, slack, None if passed else who, {"value": v0, "node": node})


@dataclass(frozen=True)
class EpsilonStudy:
    eps: np.ndarray
    violation: np.ndarray
    ratio: np.ndarray
    fitted_constant: float
    bound_constant: float

    @property
    def within_bound(self) -> bool:
        return bool(np.all(self.violation <= self.bound_constant * self.eps + SADDLE_TOL))


def epsilon_saddle_study(spec: ProblemSpec, theta: StoppingRule, eps_list) -> EpsilonStudy:
    """Violation of the epsilon pairs and a least-squares constant ``C`` in ``v <= C eps``."""
    eps = np.asarray(sorted(float(e) for e in eps_list))
    saddles = extract_saddles(spec, theta, eps)
    rules = strategies_after(theta)
    viol = np.array([max(saddle_violation(spec, theta, saddles.eps_pairs[e], rules)[0], 0.0) for e in eps])
    fitted = float(np.dot(viol, eps) / np.dot(eps, eps))
    return EpsilonStudy(eps, viol, viol / eps, fitted, epsilon_constant(spec))


# ---------------------------------------------------------------------------
# maximality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaximalityReport:
    n_saddles: int
    checks: dict
    witnesses: dict

    def passed(self, names=("a", "b", "c", "d")) -> bool:
        return all(self.checks[n] for n in names)


def maximality_check(spec: ProblemSpec, theta: StoppingRule, *, tol: float = SADDLE_TOL,
                     r_tol: float = HAT_TOL, solution: SolutionTriple | None = None,
                     brute: BruteForceValue | None = None) -> MaximalityReport:
    """Run checks (a) to (e) on every exact saddle pair found by exhaustion.

    (a) ``delta = tau ^ sigma`` stops no later than the hat pair's minimum;
    (b) cumulative reflection since theta vanishes strictly before ``delta``;
    (c) ``Y`` is an ``E^f``-martingale on ``[theta, delta)``;
    (d) ``Y`` equals the pair's payoff on the ``delta`` frontier;
    (e) the first-contact pair stops no later than the saddle pair.
    """
    _guard(spec.lattice)
    lat = spec.lattice
    sol = solution if solution is not None else solve_rbsde(spec)
    bf = brute if brute is not None else value_bruteforce(spec, theta)
    rules = bf.strategies
    s_idx, t_idx = np.nonzero(bf.saddle_mask(tol))
    saddles = extract_saddles(spec, theta, solution=sol)
    hat_min = rule_min(*saddles.hat_pair)
    star_tau, star_sigma = saddles.star_pair
    y = sol.y.values
    cum = cumulative_since(lat, sol.r_plus.values + sol.r_minus.values, theta)
    inc = one_step_increments(spec, y)

    checks = {name: True for name in "abcde"}
    witnesses: dict = {}

    def fail(name, k, what):
        if checks[name]:
            checks[name] = False
            witnesses[name] = f"pair (tau #{t_idx[k]}, sigma #{s_idx[k]}): {what}"

    rt_all, rs_all = rules.reached, rules.reached
    ft_all = rules.flags
    for start in range(0, s_idx.size, 4096):
        sl = slice(start, start + 4096)
        rt, rs = rt_all[t_idx[sl]], rs_all[s_idx[sl]]
        d_reached = rt | rs
        d_flags = d_reached.copy()
        d_flags[:, 1:] &= ~d_reached[:, lat.parent[1:]]
        before = theta.reached[None, :] & ~d_reached
        # (a) hat_min reached implies delta reached
        bad = np.any(hat_min.reached[None, :] & ~d_reached, axis=1)
        if bad.any():
            fail("a", start + int(np.argmax(bad)), "stops after the hat pair")
        bad = np.any(before & (cum[None, :] > r_tol), axis=1)
        if bad.any():
            fail("b", start + int(np.argmax(bad)), "reflection before delta")
        bad = np.any(before & (np.abs(inc)[None, :] > CLASSIFY_TOL), axis=1)
        if bad.any():
            fail("c", start + int(np.argmax(bad)), "not a martingale before delta")
        pay = payoff_nodes(spec.barriers, ft_all[t_idx[sl]])
        bad = np.any(d_flags & (np.abs(pay - y[None, :]) > tol), axis=1)
        if bad.any():
            fail("d", start + int(np.argmax(bad)), "value differs from payoff at delta")
        bad = np.any(rt & ~star_tau.reached[None, :], axis=1) | np.any(rs & ~star_sigma.reached[None, :], axis=1)
        if bad.any():
            fail("e", start + int(np.argmax(bad)), "stops before the first-contact pair")
    return MaximalityReport(int(s_idx.size), checks, witnesses)


# ---------------------------------------------------------------------------
# bundled report
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GameReport:
    theta: StoppingRule
    value_rbsde: np.ndarray
    value_upper: np.ndarray
    value_lower: np.ndarray
    saddles: SaddleSet
    checks: dict
    witnesses: dict


def game_report(spec: ProblemSpec, theta: StoppingRule, eps_list=(0.5, 0.1, 0.02), *,
                tol: float = SADDLE_TOL) -> GameReport:
    _guard(spec.lattice)
    sol = solve_rbsde(spec)
    bf = value_bruteforce(spec, theta)
    saddles = extract_saddles(spec, theta, eps_list, solution=sol)
    v_r = sol.y.values[theta.frontier]
    checks, wit = {}, {}
    checks["value_identity"] = bool(np.all(np.abs(bf.upper - v_r) <= tol) and np.all(np.abs(bf.lower - v_r) <= tol))
    for name, pair in (("star_saddle", saddles.star_pair), ("hat_saddle", saddles.hat_pair)):
        res = verify_saddle(spec, theta, pair, strategies=bf.strategies, tol=tol)
        checks[name] = res.passed
        if res.witness:
            wit[name] = res.witness
    mx = maximality_check(spec, theta, solution=sol, brute=bf, tol=tol)
    checks["maximality"] = mx.passed()
    wit.update({f"maximality_{k}": v for k, v in mx.witnesses.items()})
    return GameReport(theta, v_r, bf.upper, bf.lower, saddles, checks, wit)
