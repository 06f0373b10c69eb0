"""Barrier-meeting threshold ``gamma``, its diagnostics, and barrier generators."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .drivers import ProblemSpec
from .game import cumulative_since, extract_saddles
from .lattice import AdaptedProcess, BarrierPair, Lattice, StoppingRule, first_hitting_rule
from .rbsde import CONTACT_TOL, SolutionTriple, solve_rbsde

GAP_TOL = 1e-9


class MeetKind(str, enum.Enum):
    LEFT_MEET = "LeftMeet"
    AT_MEET = "AtMeet"
    NO_MEET = "NoMeet"


@dataclass(frozen=True, eq=False)
class ThresholdReport:
    theta: StoppingRule
    gamma: StoppingRule
    meet_kind: np.ndarray
    gap_profile: np.ndarray

    @property
    def gamma_depth(self) -> np.ndarray:
        return self.gamma.stop_depths()

    @property
    def min_gap(self) -> np.ndarray:
        return self.gap_profile[:, -1]


def gamma_threshold(barriers: BarrierPair, theta: StoppingRule, tol: float = GAP_TOL) -> ThresholdReport:
    """First node at or after ``theta`` where the barriers meet, or whose parent does.

    The parent condition only applies strictly after ``theta``.  It can never
    fire first: a meeting parent at or after ``theta`` already stops the rule.
    """
    if tol <= 0:
        raise ValueError("gap tolerance must be positive")
    lat = barriers.lattice
    gap = barriers.U - barriers.L
    at = gap <= tol
    left = np.zeros(lat.n_nodes, dtype=bool)
    par = lat.parent[1:]
    left[1:] = theta.reached[par] & at[par]
    gamma = first_hitting_rule(lat, theta, at | left)

    paths = lat.all_paths()
    stop = gamma.stop_nodes()
    kinds = np.where(at[stop], MeetKind.AT_MEET.value,
                     np.where(left[stop], MeetKind.LEFT_MEET.value, MeetKind.NO_MEET.value))
    profile = np.minimum.accumulate(gap[paths], axis=1)
    return ThresholdReport(theta, gamma, kinds.astype(object), profile)


@dataclass(frozen=True, eq=False)
class ThresholdDiagnostics:
    """Per-path diagnostics; arrays are indexed by leaf position."""

    report: ThresholdReport
    tau_hat_depth: np.ndarray
    sigma_hat_depth: np.ndarray
    check_a: np.ndarray
    check_b: np.ndarray
    hat_within: np.ndarray
    pinched: np.ndarray
    quiescence: np.ndarray

    @property
    def checks_passed(self) -> np.ndarray:
        return self.check_a & self.check_b

    @property
    def passed(self) -> bool:
        return bool(self.checks_passed.all())


def threshold_diagnostics(spec: ProblemSpec, theta: StoppingRule, *, tol: float = GAP_TOL,
                          eps_list=(0.5, 0.1, 0.02), solution: SolutionTriple | None = None,
                          contact_tol: float | None = None) -> ThresholdDiagnostics:
    """Path-by-path checks of the meeting behaviour.

    (a) when ``gamma`` stops before the horizon, the gap at the stop node or its
    parent is within ``tol``;
    (b) the epsilon pairs and the first-contact pair stop no later than ``gamma``;
    ``hat_within`` records the same comparison for the first-reflection pair;
    ``pinched`` records ``L = Y = U`` at ``gamma`` before the horizon;
    ``quiescence`` (informational) records that at most one reflection side
    keeps growing over the last quarter on paths where the barriers stay apart.
    """
    lat = spec.lattice
    sol = solution if solution is not None else solve_rbsde(spec)
    rep = gamma_threshold(spec.barriers, theta, tol)
    gamma = rep.gamma
    paths = lat.all_paths()
    n = lat.steps
    gnode = gamma.stop_nodes()
    gdepth = lat.depth[gnode]
    gap = spec.barriers.U - spec.barriers.L

    parent_gap = np.where(gnode > 0, gap[np.maximum(lat.parent[gnode], 0)], np.inf)
    check_a = (gdepth == n) | (gap[gnode] <= tol) | (parent_gap <= tol)

    ctol = CONTACT_TOL if contact_tol is None else contact_tol
    saddles = extract_saddles(spec, theta, eps_list, solution=sol, contact_tol=ctol)
    check_b = np.ones(paths.shape[0], dtype=bool)
    rules = [r for pair in saddles.eps_pairs.values() for r in pair] + list(saddles.star_pair)
    for r in rules:
        check_b &= r.stop_depths() <= gdepth
    th, sh = saddles.hat_pair
    hat_within = (th.stop_depths() <= gdepth) & (sh.stop_depths() <= gdepth)

    y = sol.y.values
    pinched = (gdepth == n) | ((np.abs(y[gnode] - spec.barriers.L[gnode]) <= tol)
                               & (np.abs(spec.barriers.U[gnode] - y[gnode]) <= tol))

    cp = cumulative_since(lat, sol.r_plus.values, theta)[paths]
    cm = cumulative_since(lat, sol.r_minus.values, theta)[paths]
    start = int(math.ceil(0.75 * n))
    grow_p = cp[:, n] - cp[:, max(start - 1, 0)] > ctol
    grow_m = cm[:, n] - cm[:, max(start - 1, 0)] > ctol
    apart = gap[paths[:, n - 1]] > tol if n >= 1 else np.ones(paths.shape[0], dtype=bool)
    quiescence = ~apart | ~(grow_p & grow_m)

    return ThresholdDiagnostics(rep, th.stop_depths(), sh.stop_depths(), check_a, check_b,
                                hat_within, pinched, quiescence)


# ---------------------------------------------------------------------------
# barrier families
# ---------------------------------------------------------------------------

FAMILIES = ("separated", "closing_gap", "touching", "sampled_rough", "constant_band")
FAMILY_ARITY = {"separated": (1, 1), "closing_gap": (1, 2), "touching": (1, 2),
                "sampled_rough": (1, 2), "constant_band": (2, 2)}


def _default_terminal(lat: Lattice, L: np.ndarray, U: np.ndarray) -> np.ndarray:
    s = lat.leaves
    return np.clip(lat.brownian[s], L[s], U[s])


def generate_barrier_family(name: str, lattice: Lattice, params=(), *, terminal=None,
                            seed: int | None = None) -> BarrierPair:
    """Barrier pairs used by the experiments.

    ``separated(delta)``: ``B -+ delta / 2``.
    ``closing_gap(t0, reopen=0.05)``: ``L = -(t0 - t)^+ - reopen (t - t0)^+``, ``U = -L``.
    ``touching(period, width=0.5)``: ``B -+ width``, pinched to ``B`` at depths divisible by ``period``.
    ``sampled_rough(eps0, scale=1)``: gap ``max(eps0, |W|)`` around ``B / 2`` for an auxiliary
    seeded walk ``W`` with independent node increments.
    ``constant_band(lo, hi)``: constant barriers.

    ``seed`` randomizes ``touching`` (per-node widths) and drives ``sampled_rough``.
    The terminal value defaults to ``B_T`` clipped into the barriers.
    """
    params = [float(p) for p in params]
    if name not in FAMILY_ARITY:
        raise ValueError(f"unknown barrier family {name!r}; known: {list(FAMILIES)}")
    lo_n, hi_n = FAMILY_ARITY[name]
    if not lo_n <= len(params) <= hi_n:
        raise ValueError(f"family {name!r} takes {lo_n} to {hi_n} parameters, got {len(params)}")
    lat = lattice
    B = lat.brownian
    t = lat.times
    jump_free = True
    if name == "separated":
        (delta,) = params
        if delta <= 0:
            raise ValueError("separated needs delta > 0")
        L, U = B - 0.5 * delta, B + 0.5 * delta
    elif name == "closing_gap":
        t0 = params[0]
        reopen = params[1] if len(params) > 1 else 0.05
        L = -np.maximum(t0 - t, 0.0) - reopen * np.maximum(t - t0, 0.0)
        U = -L
    elif name == "touching":
        period = int(params[0])
        width = params[1] if len(params) > 1 else 0.5
        if period < 1:
            raise ValueError("touching needs period >= 1")
        w = np.full(lat.n_nodes, width)
        if seed is not None:
            w = w * np.random.default_rng(seed).uniform(0.5, 1.5, lat.n_nodes)
        w = np.where(lat.depth % period == 0, 0.0, w)
        L, U = B - w, B + w
        jump_free = False
    elif name == "sampled_rough":
        eps0 = params[0]
        scale = params[1] if len(params) > 1 else 1.0
        if eps0 <= 0:
            raise ValueError("sampled_rough needs eps0 > 0")
        lat.require_full("sampled_rough")
        rng = np.random.default_rng(0 if seed is None else seed)
        w = np.zeros(lat.n_nodes)
        inc = rng.choice([-1.0, 1.0], lat.n_nodes) * scale * lat.dt ** 0.25
        for k in range(1, lat.steps + 1):
            s = lat.level(k)
            w[s] = w[lat.parent[s]] + inc[s]
        gap = np.maximum(eps0, np.abs(w))
        L, U = 0.5 * B - 0.5 * gap, 0.5 * B + 0.5 * gap
        jump_free = False
    else:
        lo, hi = params
        if lo > hi:
            raise ValueError("constant_band needs lo <= hi")
        L, U = np.full(lat.n_nodes, lo), np.full(lat.n_nodes, hi)
    xi = _default_terminal(lat, L, U) if terminal is None else np.asarray(terminal, dtype=float)
    return BarrierPair(AdaptedProcess(lat, L), AdaptedProcess(lat, U), xi, jump_free=jump_free)
