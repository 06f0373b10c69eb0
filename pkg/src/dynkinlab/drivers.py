"""Generators ``f(t, y, z)`` with their structural constants, and problem data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lattice import AdaptedProcess, BarrierPair, Lattice, LatticeError

HYPOTHESIS_TOL = 1e-9

DriverFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class DriverError(ValueError):
    pass


@dataclass(frozen=True)
class Growth:
    """Sub-linear z-growth bound ``|f(t,y,z) - f(t,y,0)| <= gamma (g + |y| + |z|)^kappa``."""

    gamma: float
    kappa: float
    g: float = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise DriverError("gamma must be nonnegative")
        if not 0 <= self.kappa < 1:
            raise DriverError("kappa must lie in [0, 1)")
        if self.g < 0:
            raise DriverError("g must be nonnegative")


@dataclass(frozen=True, eq=False)
class Driver:
    """Vectorized generator with declared constants.

    ``fn`` must accept numpy arrays for ``t``, ``y`` and ``z`` and broadcast.
    ``lip_z`` is the z-Lipschitz constant, ``mono_y`` the one-sided y-monotonicity
    constant.  ``growth`` is ``None`` for drivers that are only Lipschitz in z.
    ``affine = (a, b, c)`` declares ``f = a y + b z + c`` so implicit steps can be
    solved in closed form.
    """

    fn: DriverFn
    lip_z: float
    mono_y: float
    growth: Growth | None = None
    label: str = "custom"
    affine: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not (self.lip_z >= 0 and math.isfinite(self.lip_z)):
            raise DriverError("lip_z must be a finite nonnegative number")
        if not math.isfinite(self.mono_y):
            raise DriverError("mono_y must be finite")

    def __call__(self, t, y, z):
        return self.fn(np.asarray(t, dtype=float), np.asarray(y, dtype=float),
                       np.asarray(z, dtype=float))

    def scalar(self, t: float, y: float, z: float) -> float:
        return float(self(t, y, z))

    @property
    def is_zero(self) -> bool:
        return self.affine is not None and not any(self.affine)


def _zero(t, y, z):
    return np.zeros(np.broadcast(t, y, z).shape)


PRESET_ARITY = {"zero": 0, "linear": 3, "monotone_cubic": 1, "bounded_z": 2}


def make_preset_driver(name: str, params=()) -> Driver:
    params = [float(p) for p in params]
    if name not in PRESET_ARITY:
        raise DriverError(f"unknown driver preset {name!r}; known: {sorted(PRESET_ARITY)}")
    if len(params) != PRESET_ARITY[name]:
        raise DriverError(f"preset {name!r} takes {PRESET_ARITY[name]} parameters, got {len(params)}")
    if name == "zero":
        return Driver(_zero, 0.0, 0.0, Growth(0.0, 0.0), "zero", affine=(0.0, 0.0, 0.0))
    if name == "linear":
        a, b, c = params
        return Driver(lambda t, y, z: a * y + b * z + c + 0.0 * t, abs(b), a, None,
                      f"linear({a:g},{b:g},{c:g})", affine=(a, b, c))
    if name == "monotone_cubic":
        (c,) = params
        return Driver(lambda t, y, z: -y**3 + c * np.tanh(z) + 0.0 * t, abs(c), 0.0,
                      Growth(abs(c), 0.0), f"monotone_cubic({c:g})")
    gamma, kappa = params
    if gamma < 0 or not 0 <= kappa < 1:
        raise DriverError("bounded_z needs gamma >= 0 and kappa in [0, 1)")
    return Driver(lambda t, y, z: gamma * (1.0 + np.abs(z)) ** kappa - y + 0.0 * t,
                  gamma * kappa, -1.0, Growth(gamma, kappa), f"bounded_z({gamma:g},{kappa:g})")


# ---------------------------------------------------------------------------
# sampled hypothesis checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleSpec:
    t_range: tuple[float, float] = (0.0, 1.0)
    y_range: tuple[float, float] = (-10.0, 10.0)
    z_range: tuple[float, float] = (-10.0, 10.0)
    count: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise DriverError("count must be >= 1")
        for r in (self.t_range, self.y_range, self.z_range):
            if not (math.isfinite(r[0]) and math.isfinite(r[1]) and r[0] <= r[1]):
                raise DriverError(f"invalid sample range {r}")


@dataclass(frozen=True)
class HypothesisResult:
    name: str
    passed: bool
    worst_excess: float
    witness: dict | None = None
    note: str = ""


@dataclass(frozen=True)
class HypothesisReport:
    results: dict[str, HypothesisResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def __getitem__(self, key: str) -> HypothesisResult:
        return self.results[key]


def _worst(name, excess, finite, columns, tol, note=""):
    bad = ~finite
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        return HypothesisResult(name, False, math.inf,
                                {k: float(v[i]) for k, v in columns.items()}, "non-finite evaluation")
    i = int(np.argmax(excess))
    worst = float(excess[i])
    witness = {k: float(v[i]) for k, v in columns.items()}
    return HypothesisResult(name, worst <= tol, worst, witness, note)


def check_hypotheses(driver: Driver, sample: SampleSpec = SampleSpec(), *,
                     tol: float = HYPOTHESIS_TOL) -> HypothesisReport:
    rng = np.random.default_rng(sample.seed)
    n = sample.count
    t = rng.uniform(*sample.t_range, n)
    y = rng.uniform(*sample.y_range, n)
    y2 = rng.uniform(*sample.y_range, n)
    z = rng.uniform(*sample.z_range, n)
    z2 = rng.uniform(*sample.z_range, n)
    with np.errstate(all="ignore"):
        f_yz = np.broadcast_to(driver(t, y, z), (n,)).astype(float)
        f_yz2 = np.broadcast_to(driver(t, y, z2), (n,)).astype(float)
        f_y2z = np.broadcast_to(driver(t, y2, z), (n,)).astype(float)
        f_y0 = np.broadcast_to(driver(t, y, np.zeros(n)), (n,)).astype(float)

        h1 = np.abs(f_yz - f_yz2) - driver.lip_z * np.abs(z - z2)
        h2 = (y - y2) * (f_yz - f_y2z) - driver.mono_y * (y - y2) ** 2
    cols = {"t": t, "y": y, "y2": y2, "z": z, "z2": z2}
    results = {
        "H1": _worst("H1", h1, np.isfinite(f_yz) & np.isfinite(f_yz2), cols, tol),
        "H2": _worst("H2", h2, np.isfinite(f_yz) & np.isfinite(f_y2z), cols, tol),
        "H3": _worst("H3", np.zeros(n), np.isfinite(f_yz) & np.isfinite(f_y2z), cols, tol,
                     "continuity in y taken from the closed form; finiteness sampled"),
    }
    if driver.growth is None:
        results["Z"] = HypothesisResult("Z", True, 0.0, None,
                                        "not declared; driver is Lipschitz in z")
    else:
        gr = driver.growth
        with np.errstate(all="ignore"):
            bound = gr.gamma * (gr.g + np.abs(y) + np.abs(z)) ** gr.kappa
            zc = np.abs(f_yz - f_y0) - bound
        results["Z"] = _worst("Z", zc, np.isfinite(f_yz) & np.isfinite(f_y0), cols, tol)
    for name in ("H4", "H5"):
        results[name] = HypothesisResult(name, True, 0.0, None,
                                         "integrability is automatic on a finite lattice")
    return HypothesisReport(results)


# ---------------------------------------------------------------------------
# problem data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Lattice, driver, barriers and optional cumulative forcing ``V``.

    ``driver_mask`` switches the driver off on nodes where it is false.
    """

    lattice: Lattice
    driver: Driver
    barriers: BarrierPair
    forcing: AdaptedProcess | None = None
    driver_mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.barriers.lattice is not self.lattice:
            raise LatticeError("barriers live on a different lattice")
        if self.forcing is not None:
            if self.forcing.lattice is not self.lattice:
                raise LatticeError("forcing lives on a different lattice")
            if abs(self.forcing.values[0]) > 0:
                raise LatticeError("forcing must vanish at the root")
        if self.driver_mask is not None:
            m = np.asarray(self.driver_mask, dtype=bool)
            if m.shape != (self.lattice.n_nodes,):
                raise LatticeError("driver mask must give one boolean per node")
            object.__setattr__(self, "driver_mask", m)

    @property
    def xi(self) -> np.ndarray:
        return self.barriers.terminal

    def forcing_increments(self) -> np.ndarray:
        """``dV(node) = mean(V(children)) - V(node)``; zero on leaves."""
        lat = self.lattice
        out = np.zeros(lat.n_nodes)
        if self.forcing is None:
            return out
        v = self.forcing.values
        for k in range(lat.steps):
            up, dn = lat.children(k)
            out[lat.level(k)] = 0.5 * (v[up] + v[dn]) - v[lat.level(k)]
        return out

    def replace(self, **changes) -> "ProblemSpec":
        kw = dict(lattice=self.lattice, driver=self.driver, barriers=self.barriers,
                  forcing=self.forcing, driver_mask=self.driver_mask)
        kw.update(changes)
        return ProblemSpec(**kw)


def condition_g_sum(spec: ProblemSpec) -> float:
    """Lattice version of the integrability quantity ``E sum |f(t, 0, 0)| dt``."""
    lat = spec.lattice
    t = lat.times[: lat.offsets[lat.steps]]
    f0 = np.abs(np.broadcast_to(spec.driver(t, 0.0, 0.0), t.shape))
    weights = 0.5 ** lat.depth[: t.size] if lat.is_full else _recombining_weights(lat)[: t.size]
    return float(np.sum(f0 * weights) * lat.dt)


def _recombining_weights(lat: Lattice) -> np.ndarray:
    w = np.empty(lat.n_nodes)
    for k in range(lat.steps + 1):
        j = np.arange(k + 1)
        w[lat.level(k)] = np.array([math.comb(k, int(i)) for i in j]) * 0.5**k
    return w


def node_probabilities(lat: Lattice) -> np.ndarray:
    """Probability of reaching each node."""
    return 0.5 ** lat.depth.astype(float) if lat.is_full else _recombining_weights(lat)
