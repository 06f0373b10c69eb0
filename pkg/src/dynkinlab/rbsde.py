"""Reflected backward sweeps, penalization schemes and the exponential change of variables."""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass

import numpy as np

from .bsde import BsdePair, _mask_level, _warn_if_not_monotone, check_step_size, child_stats, solve_implicit
from .drivers import Driver, ProblemSpec
from .lattice import AdaptedProcess, BarrierPair, Lattice, LatticeError

CONTACT_TOL = 1e-10
MONOTONE_SLACK = 1e-12


class Side(str, enum.Enum):
    LOWER = "lower"
    UPPER = "upper"


class PenaltyScheme(str, enum.Enum):
    TWO_SIDED = "two_sided"
    LOWER_ONLY = "lower_only"
    UPPER_ONLY = "upper_only"


@dataclass(frozen=True, eq=False)
class SolutionTriple(BsdePair):
    """``(Y, Z)`` plus the per-node reflection increments ``dR+`` and ``dR-``."""

    r_plus: AdaptedProcess
    r_minus: AdaptedProcess

    @property
    def reflection(self) -> np.ndarray:
        return self.r_plus.values - self.r_minus.values


def _driver_values(driver: Driver, t, y, z, mask):
    val = np.broadcast_to(driver(t, y, z), np.shape(y)).astype(float)
    if mask is not None:
        val = np.where(mask, val, 0.0)
    return val


def reflect_level(rhs, t, z, driver: Driver, dt: float, lower, upper, mask=None, **penalty):
    """Vectorized reflected step.

    Returns ``(y, dr_plus, dr_minus)`` with
    ``y = rhs + f(t, y, z) dt + dr_plus - dr_minus``, ``lower <= y <= upper`` and
    reflection active only at contact.  Infinite bounds are never active.
    """
    rhs = np.asarray(rhs, dtype=float)
    shape = rhs.shape
    t_b = np.broadcast_to(np.asarray(t, dtype=float), shape)
    z_b = np.broadcast_to(np.asarray(z, dtype=float), shape)
    lo = np.broadcast_to(np.asarray(lower, dtype=float), shape)
    hi = np.broadcast_to(np.asarray(upper, dtype=float), shape)
    m = None if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), shape)

    def h_at(bound):
        # h(b) - rhs on finite entries, zero elsewhere
        out = np.zeros(shape)
        fin = np.isfinite(bound)
        if fin.any():
            b = bound[fin]
            fv = _driver_values(driver, t_b[fin], b, z_b[fin], None if m is None else m[fin])
            n = penalty.get("penalty", 0.0)
            if n > 0:
                pl, pu = penalty.get("pen_lower"), penalty.get("pen_upper")
                if pl is not None:
                    fv = fv + n * np.maximum(np.broadcast_to(pl, shape)[fin] - b, 0.0)
                if pu is not None:
                    fv = fv - n * np.maximum(b - np.broadcast_to(pu, shape)[fin], 0.0)
            out[fin] = b - dt * fv - rhs[fin]
        return out, fin

    hl, fin_l = h_at(lo)
    hu, fin_u = h_at(hi)
    dr_plus = np.where(fin_l, np.maximum(hl, 0.0), 0.0)
    dr_minus = np.where(fin_u, np.maximum(-hu, 0.0), 0.0)
    free = (dr_plus == 0.0) & (dr_minus == 0.0)
    y = np.where(dr_plus > 0, lo, np.where(dr_minus > 0, hi, 0.0))
    if free.any():
        yf = solve_implicit(rhs[free], t_b[free], z_b[free], driver, dt,
                            None if m is None else m[free],
                            penalty=penalty.get("penalty", 0.0),
                            pen_lower=_sub(penalty.get("pen_lower"), shape, free),
                            pen_upper=_sub(penalty.get("pen_upper"), shape, free))
        y[free] = np.clip(yf, lo[free], hi[free])
    return y, dr_plus, dr_minus


def _sub(arr, shape, sel):
    return None if arr is None else np.broadcast_to(np.asarray(arr, dtype=float), shape)[sel]


def reflected_step(a: float, t: float, z: float, driver: Driver, dt: float,
                   forcing: float, l: float, u: float) -> tuple[float, float, float]:
    """Scalar reflected implicit step returning ``(y, dr_plus, dr_minus)``."""
    if l > u:
        raise ValueError(f"lower bound {l} exceeds upper bound {u}")
    check_step_size(driver, dt)
    y, p, m = reflect_level(np.array([a + forcing]), t, z, driver, dt, l, u)
    return float(y[0]), float(p[0]), float(m[0])


def reflected_sweep(spec: ProblemSpec, lower: np.ndarray, upper: np.ndarray, terminal=None, *,
                    reached: np.ndarray | None = None, payoff: np.ndarray | None = None,
                    **penalty) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Backward reflected sweep over the whole lattice.

    With ``reached`` (boolean per node) and ``payoff``, nodes at or after that
    frontier keep the payoff value instead, which yields a solve stopped at a rule.
    Leading batch dimensions are allowed on ``reached`` and ``payoff``.
    """
    lat = spec.lattice
    check_step_size(spec.driver, lat.dt)
    dv = spec.forcing_increments()
    xi = spec.xi if terminal is None else np.asarray(terminal, dtype=float)
    if reached is None:
        y = np.zeros(lat.n_nodes)
        y[lat.leaves] = xi
        reached_b = None
    else:
        reached_b = np.asarray(reached, dtype=bool)
        y = np.array(np.broadcast_to(np.asarray(payoff, dtype=float), reached_b.shape), copy=True)
    z = np.zeros_like(y)
    rp = np.zeros_like(y)
    rm = np.zeros_like(y)
    pl_full, pu_full = penalty.get("pen_lower"), penalty.get("pen_upper")
    for k in range(lat.steps - 1, -1, -1):
        s = lat.level(k)
        a, zk = child_stats(lat, k, y)
        rhs = a + dv[s]
        lv = np.broadcast_to(lower[s], rhs.shape)
        uv = np.broadcast_to(upper[s], rhs.shape)
        mask = _mask_level(spec, k)
        mask = None if mask is None else np.broadcast_to(mask, rhs.shape)
        pen = dict(penalty=penalty.get("penalty", 0.0),
                   pen_lower=None if pl_full is None else np.broadcast_to(pl_full[s], rhs.shape),
                   pen_upper=None if pu_full is None else np.broadcast_to(pu_full[s], rhs.shape))
        if reached_b is None:
            yk, pk, mk = reflect_level(rhs, lat.grid.time(k), zk, spec.driver, lat.dt, lv, uv, mask, **pen)
            y[..., s], z[..., s], rp[..., s], rm[..., s] = yk, zk, pk, mk
            continue
        free = ~reached_b[..., s]
        if not free.any():
            continue
        sub = {key: (None if v is None else v[free]) for key, v in pen.items() if key != "penalty"}
        yk, pk, mk = reflect_level(rhs[free], lat.grid.time(k), zk[free], spec.driver, lat.dt,
                                   lv[free], uv[free], None if mask is None else mask[free],
                                   penalty=pen["penalty"], **sub)
        for arr, vals in ((y, yk), (z, zk[free]), (rp, pk), (rm, mk)):
            block = arr[..., s]
            block[free] = vals
            arr[..., s] = block
    return y, z, rp, rm


def _triple(lat: Lattice, y, z, rp, rm) -> SolutionTriple:
    return SolutionTriple(AdaptedProcess(lat, y), AdaptedProcess(lat, z),
                          AdaptedProcess(lat, rp), AdaptedProcess(lat, rm))


def solve_rbsde(spec: ProblemSpec, terminal=None) -> SolutionTriple:
    """Doubly reflected solve between ``L`` and ``U``."""
    _warn_if_not_monotone(spec.driver, spec.lattice.dt)
    y, z, rp, rm = reflected_sweep(spec, spec.barriers.L, spec.barriers.U, terminal)
    return _triple(spec.lattice, y, z, rp, rm)


def solve_rbsde_stopped(spec: ProblemSpec, reached: np.ndarray, payoff: np.ndarray) -> np.ndarray:
    """Doubly reflected values with the data replaced by ``payoff`` from a frontier on.

    ``reached`` may carry leading batch dimensions.
    """
    y, *_ = reflected_sweep(spec, spec.barriers.L, spec.barriers.U, reached=reached, payoff=payoff)
    return y


def solve_one_barrier(spec: ProblemSpec, side: Side | str) -> SolutionTriple:
    """Reflected solve against one barrier; the other barrier is ignored."""
    side = Side(side)
    n = spec.lattice.n_nodes
    inf = np.full(n, np.inf)
    if side is Side.LOWER:
        if np.any(spec.xi < spec.barriers.lower.terminal - 1e-12):
            raise LatticeError("terminal value below the lower barrier")
        y, z, rp, rm = reflected_sweep(spec, spec.barriers.L, inf)
    else:
        if np.any(spec.xi > spec.barriers.upper.terminal + 1e-12):
            raise LatticeError("terminal value above the upper barrier")
        y, z, rp, rm = reflected_sweep(spec, -inf, spec.barriers.U)
    return _triple(spec.lattice, y, z, rp, rm)


def solve_penalized(spec: ProblemSpec, n: float, scheme: PenaltyScheme | str) -> SolutionTriple:
    """Penalized solve.

    ``two_sided`` penalizes both barriers with no reflection.  ``lower_only``
    penalizes excursions below ``L`` and reflects at ``U``; ``upper_only`` is
    the mirror image.
    """
    scheme = PenaltyScheme(scheme)
    if n < 0 or not math.isfinite(n):
        raise ValueError("penalty parameter must be a finite nonnegative number")
    lat = spec.lattice
    L, U = spec.barriers.L, spec.barriers.U
    inf = np.full(lat.n_nodes, np.inf)
    if scheme is PenaltyScheme.TWO_SIDED:
        out = reflected_sweep(spec, -inf, inf, penalty=n, pen_lower=L, pen_upper=U)
    elif scheme is PenaltyScheme.LOWER_ONLY:
        out = reflected_sweep(spec, -inf, U, penalty=n, pen_lower=L)
    else:
        out = reflected_sweep(spec, L, inf, penalty=n, pen_upper=U)
    return _triple(lat, *out)


@dataclass(frozen=True)
class PenaltyRow:
    n: float
    sup_error: float
    lower_monotone: bool
    upper_monotone: bool
    err_monotone: bool
    sandwich: bool
    runtime_ms: float | None = None


def penalty_study(spec: ProblemSpec, n_values, *, timing: bool = False,
                  slack: float = MONOTONE_SLACK) -> list[PenaltyRow]:
    """Sup-norm error of the two-sided penalization and monotonicity flags per ``n``.

    ``lower_monotone`` (resp. ``upper_monotone``) compares the one-sided iterate
    with the previous ``n``; the first row compares against nothing and is true.
    """
    n_values = [float(n) for n in n_values]
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("n_values must be strictly increasing")
    ref = solve_rbsde(spec).y.values
    rows = []
    prev_lo = prev_hi = None
    prev_err = math.inf
    for n in n_values:
        t0 = time.perf_counter()
        two = solve_penalized(spec, n, PenaltyScheme.TWO_SIDED).y.values
        elapsed = (time.perf_counter() - t0) * 1e3
        lo = solve_penalized(spec, n, PenaltyScheme.LOWER_ONLY).y.values
        hi = solve_penalized(spec, n, PenaltyScheme.UPPER_ONLY).y.values
        err = float(np.max(np.abs(two - ref)))
        rows.append(PenaltyRow(
            n=n,
            sup_error=err,
            lower_monotone=prev_lo is None or bool(np.all(lo >= prev_lo - slack)),
            upper_monotone=prev_hi is None or bool(np.all(hi <= prev_hi + slack)),
            err_monotone=err <= prev_err + slack,
            sandwich=bool(np.all(lo <= two + slack) and np.all(two <= hi + slack)),
            runtime_ms=elapsed if timing else None,
        ))
        prev_lo, prev_hi, prev_err = lo, hi, err
    return rows


# ---------------------------------------------------------------------------
# exponential change of variables
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExponentialChange:
    """Problem rescaled by ``e^{a t}`` together with the node weights used."""

    spec: ProblemSpec
    a: float
    weights: np.ndarray

    def unscale(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) / self.weights


def exponential_change(spec: ProblemSpec, a: float, *, discrete: bool = True) -> ExponentialChange:
    """Rescale data by ``e^{a t}`` and adjust the driver.

    With ``discrete=True`` the driver is

        e^{a t'} f(t, e^{-a t} y, e^{-a t'} z) - (e^{a dt} - 1) / dt * y,    t' = t + dt,

    which makes the rescaled lattice solution equal ``e^{a t} Y`` node by node.
    ``discrete=False`` uses the continuous-time driver
    ``e^{a t} f(t, e^{-a t} y, e^{-a t} z) - a y``, which agrees only up to O(dt).
    """
    lat = spec.lattice
    dt = lat.dt
    f = spec.driver
    w = np.exp(a * lat.times)
    if discrete:
        growth = (math.exp(a * dt) - 1.0) / dt

        def fn(t, y, z):
            tn = t + dt
            return np.exp(a * tn) * f(t, np.exp(-a * t) * y, np.exp(-a * tn) * z) - growth * y

        mono = math.exp(a * dt) * f.mono_y - growth
    else:

        def fn(t, y, z):
            return np.exp(a * t) * f(t, np.exp(-a * t) * y, np.exp(-a * t) * z) - a * y

        mono = f.mono_y - a
    driver = Driver(fn, f.lip_z, mono, None, f"exp({a:g})*{f.label}")
    b = spec.barriers
    barriers = BarrierPair(AdaptedProcess(lat, w * b.L), AdaptedProcess(lat, w * b.U),
                           w[lat.leaves] * b.terminal, jump_free=b.jump_free)
    forcing = None
    if spec.forcing is not None:
        lat.require_full("rescaling a forcing term")
        v = spec.forcing.values
        vb = np.zeros(lat.n_nodes)
        factor = math.exp(a * dt) if discrete else 1.0
        for k in range(lat.steps):
            up, dn = lat.children(k)
            s = lat.level(k)
            scale = w[s] * factor
            vb[up] = vb[s] + scale * (v[up] - v[s])
            vb[dn] = vb[s] + scale * (v[dn] - v[s])
        forcing = AdaptedProcess(lat, vb)
    return ExponentialChange(spec.replace(driver=driver, barriers=barriers, forcing=forcing), a, w)
