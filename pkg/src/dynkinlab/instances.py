"""Named desk instances and seeded random instance generators."""

from __future__ import annotations

import numpy as np

from .drivers import Driver, ProblemSpec, make_preset_driver
from .lattice import AdaptedProcess, BarrierPair, Lattice, TimeGrid, TreeKind, build_lattice
from .mokobodzki import generate_barrier_family


def d1(kind: TreeKind | str = TreeKind.FULL_BINARY) -> ProblemSpec:
    """``N = 3``, ``f = -y + z / 2``, ``xi = B_T``, barriers ``B -+ 1``."""
    lat = build_lattice(TimeGrid(1.0, 3), kind)
    B = lat.brownian
    bp = BarrierPair(AdaptedProcess(lat, B - 1.0), AdaptedProcess(lat, B + 1.0), B[lat.leaves], jump_free=True)
    return ProblemSpec(lat, make_preset_driver("linear", [-1.0, 0.5, 0.0]), bp)


def d2() -> ProblemSpec:
    """Active-barrier companion of ``d1``: constant band ``[-0.3, 0.3]`` with a drift ``c = 0.4``.

    Both reflections are used, so saddle and penalty code paths are exercised.
    """
    lat = build_lattice(TimeGrid(1.0, 3))
    B = lat.brownian
    L = np.full(lat.n_nodes, -0.3)
    U = np.full(lat.n_nodes, 0.3)
    xi = np.clip(B[lat.leaves], -0.3, 0.3)
    bp = BarrierPair(AdaptedProcess(lat, L), AdaptedProcess(lat, U), xi, jump_free=True)
    return ProblemSpec(lat, make_preset_driver("linear", [-1.0, 0.5, 0.4]), bp)


def m1(steps: int = 8, t0: float = 0.5, reopen: float = 0.05) -> ProblemSpec:
    """Closing-gap instance: barriers meet at ``t0`` and reopen slowly."""
    lat = build_lattice(TimeGrid(1.0, steps))
    bp = generate_barrier_family("closing_gap", lat, [t0, reopen])
    return ProblemSpec(lat, make_preset_driver("linear", [-1.0, 0.5, 0.0]), bp)


def random_linear_driver(rng: np.random.Generator, mu_range=(-2.0, 0.0), lam_max: float = 1.0) -> Driver:
    a = rng.uniform(*mu_range)
    b = rng.uniform(-lam_max, lam_max)
    c = rng.normal(scale=0.5)
    return make_preset_driver("linear", [a, b, c])


def random_instance(rng: np.random.Generator, steps: int = 3, driver: Driver | None = None) -> ProblemSpec:
    """Independent per-node barriers: ``L ~ N(0, 1)``, ``U = L + |N(0, 1)|``, ``xi`` inside."""
    lat = build_lattice(TimeGrid(1.0, steps))
    L = rng.normal(size=lat.n_nodes)
    U = L + np.abs(rng.normal(size=lat.n_nodes))
    s = lat.leaves
    xi = L[s] + rng.uniform(size=lat.n_leaves) * (U[s] - L[s])
    bp = BarrierPair(AdaptedProcess(lat, L), AdaptedProcess(lat, U), xi)
    return ProblemSpec(lat, driver if driver is not None else random_linear_driver(rng), bp)


def _running_max(lat: Lattice) -> np.ndarray:
    out = lat.brownian.copy()
    for k in range(1, lat.steps + 1):
        s = lat.level(k)
        out[s] = np.maximum(out[s], out[lat.parent[s]])
    return out


def random_zero_jump_instance(rng: np.random.Generator, steps: int = 3,
                              driver: Driver | None = None) -> ProblemSpec:
    """Barriers that are continuous functionals of the path, with a narrow gap so both sides bind."""
    lat = build_lattice(TimeGrid(1.0, steps))
    B, t = lat.brownian, lat.times
    a1, b1, c1 = rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 0.5)
    L = a1 * B + b1 * t + c1 * _running_max(lat) - rng.uniform(0.0, 0.3)
    U = L + rng.uniform(0.05, 0.4) + rng.uniform(0.0, 0.3) * np.abs(B)
    s = lat.leaves
    xi = np.clip(rng.uniform(-1, 1) * B[s], L[s], U[s])
    bp = BarrierPair(AdaptedProcess(lat, L), AdaptedProcess(lat, U), xi, jump_free=True)
    return ProblemSpec(lat, driver if driver is not None else random_linear_driver(rng), bp)


def random_touching_instance(rng: np.random.Generator, steps: int = 4) -> ProblemSpec:
    lat = build_lattice(TimeGrid(1.0, steps))
    period = int(rng.integers(2, 4))
    bp = generate_barrier_family("touching", lat, [period, rng.uniform(0.2, 0.8)],
                                 seed=int(rng.integers(2**31)))
    return ProblemSpec(lat, random_linear_driver(rng), bp)


def cumulative_forcing(lat: Lattice, increments: np.ndarray) -> AdaptedProcess:
    """Forcing ``V`` whose one-step increment at each non-terminal node is ``increments``."""
    v = np.zeros(lat.n_nodes)
    for k in range(lat.steps):
        s = lat.level(k)
        up, dn = lat.children(k)
        v[up] = v[s] + increments[s]
        v[dn] = v[s] + increments[s]
    return AdaptedProcess(lat, v)


def random_ordered_pair(rng: np.random.Generator, steps: int) -> tuple[ProblemSpec, ProblemSpec]:
    """Two problems with ordered data: terminal, barriers, forcing and driver all ``1 <= 2``."""
    lat = build_lattice(TimeGrid(1.0, steps))
    L1 = rng.normal(size=lat.n_nodes)
    U1 = L1 + np.abs(rng.normal(size=lat.n_nodes))
    L2 = L1 + np.abs(rng.normal(scale=0.3, size=lat.n_nodes))
    U2 = np.maximum(U1 + np.abs(rng.normal(scale=0.3, size=lat.n_nodes)), L2)
    s = lat.leaves
    xi1 = L1[s] + rng.uniform(size=lat.n_leaves) * (U1[s] - L1[s])
    xi2 = np.clip(xi1 + np.abs(rng.normal(scale=0.3, size=lat.n_leaves)), L2[s], U2[s])
    xi2 = np.maximum(xi2, xi1)
    dv1 = rng.normal(scale=0.1, size=lat.n_nodes)
    dv2 = dv1 + np.abs(rng.normal(scale=0.1, size=lat.n_nodes))
    a = rng.uniform(-2, 0)
    b = rng.uniform(-1, 1)
    c1 = rng.normal(scale=0.5)
    c2 = c1 + abs(rng.normal(scale=0.5))
    f1 = make_preset_driver("linear", [a, b, c1])
    f2 = make_preset_driver("linear", [a, b, c2])
    p1 = ProblemSpec(lat, f1, BarrierPair(AdaptedProcess(lat, L1), AdaptedProcess(lat, U1), xi1),
                     cumulative_forcing(lat, dv1))
    p2 = ProblemSpec(lat, f2, BarrierPair(AdaptedProcess(lat, L2), AdaptedProcess(lat, U2), xi2),
                     cumulative_forcing(lat, dv2))
    return p1, p2
