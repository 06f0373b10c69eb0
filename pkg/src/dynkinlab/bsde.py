"""Discrete nonlinear expectation: implicit steps and backward sweeps.

A backward step at a non-terminal node reads the two children values
``y_up, y_down`` and solves

    y = (y_up + y_down) / 2 + f(t, y, z) dt + dV,    z = (y_up - y_down) / (2 sqrt(dt))

for ``y``.  The map ``y -> y - f(t, y, z) dt`` is strictly increasing whenever
``mu dt < 1``, so the root is unique and found by bracketing plus bisection.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .drivers import Driver, ProblemSpec
from .lattice import AdaptedProcess, Lattice, LatticeError, StoppingRule

MAX_DOUBLINGS = 1000
MAX_BISECTIONS = 400
CLASSIFY_TOL = 1e-10
STRICT_TOL = 1e-10


class StepSizeError(ValueError):
    """The implicit step is not well posed because ``mu dt >= 1``."""


class DivergenceError(RuntimeError):
    """The root bracket kept growing without enclosing a sign change."""


class FrontierOrderError(ValueError):
    """An observation rule stops later than the rule it observes."""


def check_step_size(driver: Driver, dt: float):
    if driver.mono_y * dt >= 1.0:
        raise StepSizeError(f"mu*dt = {driver.mono_y * dt:g} >= 1; refine the grid")


def monotone_scheme_ok(driver: Driver, dt: float) -> bool:
    """Whether the one-step operator is order preserving (``lambda sqrt(dt) <= 1``)."""
    return driver.lip_z * math.sqrt(dt) <= 1.0


def _warn_if_not_monotone(driver: Driver, dt: float):
    if not monotone_scheme_ok(driver, dt):
        warnings.warn(f"lambda*sqrt(dt) = {driver.lip_z * math.sqrt(dt):g} > 1; "
                      "the explicit z treatment may break comparison", RuntimeWarning, stacklevel=3)


def solve_implicit(rhs, t, z, driver: Driver, dt: float, mask=None, *,
                   penalty: float = 0.0, pen_lower=None, pen_upper=None) -> np.ndarray:
    """Vectorized root of ``y - f(t, y, z) dt = rhs``.

    ``mask`` (boolean, broadcastable) switches the driver off where false.
    A positive ``penalty`` adds ``n (y - pen_lower)^- - n (y - pen_upper)^+``
    to the driver; the added term is non-increasing in ``y``.
    """
    check_step_size(driver, dt)
    rhs = np.array(rhs, dtype=float)
    penalized = penalty > 0 and (pen_lower is not None or pen_upper is not None)
    if driver.is_zero and not penalized:
        return rhs
    shape = rhs.shape
    t = np.broadcast_to(np.asarray(t, dtype=float), shape)
    z = np.broadcast_to(np.asarray(z, dtype=float), shape)
    m = None if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), shape)
    pl = None if not penalized or pen_lower is None else np.broadcast_to(np.asarray(pen_lower, float), shape)
    pu = None if not penalized or pen_upper is None else np.broadcast_to(np.asarray(pen_upper, float), shape)
    if driver.affine is not None:
        a, b, c = driver.affine
        on = 1.0 if m is None else m.astype(float)
        base = rhs + (b * z + c) * dt * on
        slope = 1.0 - a * dt * on
        closed = base / slope
        if not penalized:
            return closed
        # piecewise affine residual: try the quiet piece, then each penalized piece
        nd = penalty * dt
        out = closed
        if pu is not None:
            above = (base + nd * pu) / (slope + nd)
            out = np.where(closed > pu, above, out)
        if pl is not None:
            below = (base + nd * pl) / (slope + nd)
            out = np.where(closed < pl, below, out)
        return out

    def f(sel, y):
        with np.errstate(all="ignore"):
            val = np.broadcast_to(driver(t[sel], y, z[sel]), y.shape).astype(float)
        if m is not None:
            val = np.where(m[sel], val, 0.0)
        if pl is not None:
            val = val + penalty * np.maximum(pl[sel] - y, 0.0)
        if pu is not None:
            val = val - penalty * np.maximum(y - pu[sel], 0.0)
        return val

    f0 = f(Ellipsis, rhs)
    if not np.all(np.isfinite(f0)):
        raise DivergenceError("driver is not finite at the explicit guess")
    out = rhs.copy()
    todo = f0 != 0.0
    if not todo.any():
        return out

    t, z = t[todo], z[todo]
    m = None if m is None else m[todo]
    pl = None if pl is None else pl[todo]
    pu = None if pu is None else pu[todo]
    r = rhs[todo]
    sgn = np.sign(f0[todo])
    slope = 1.0 - max(driver.mono_y, 0.0) * dt
    # h is expanding with rate slope, so the root lies within dt |f(rhs)| / slope of rhs
    width = dt * np.abs(f0[todo]) / slope * (1.0 + 1e-9) + 1e-300

    def resid(y, sel=Ellipsis):
        return y - dt * f(sel, y) - r[sel]

    far = r + sgn * width
    rf = resid(far)
    need = ~(sgn * rf >= 0)
    doublings = 0
    while need.any():
        doublings += 1
        if doublings > MAX_DOUBLINGS:
            raise DivergenceError(f"no bracket after {MAX_DOUBLINGS} doublings")
        width = np.where(need, width * 2.0, width)
        if not np.all(np.isfinite(width)):
            raise DivergenceError("bracket width overflowed")
        far = r + sgn * width
        rf = resid(far)
        need = ~(sgn * rf >= 0)

    lo = np.where(sgn > 0, r, far)
    hi = np.where(sgn > 0, far, r)
    hlo = np.where(sgn > 0, -dt * f0[todo], rf)
    hhi = np.where(sgn > 0, rf, -dt * f0[todo])
    exact_lo = hlo == 0.0
    exact_hi = hhi == 0.0

    # Illinois false position with a bisection step every third pass; the
    # residual has slope >= 1 - mu^+ dt, so a rounding-level residual pins y
    active = ~(exact_lo | exact_hi)
    scale = 1.0 + np.abs(r)
    res_tol = 4.0 * np.finfo(float).eps * scale
    side = np.zeros(r.shape, dtype=np.int8)
    for it in range(MAX_BISECTIONS):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        a, b = lo[idx], hi[idx]
        ha, hb = hlo[idx], hhi[idx]
        mid = 0.5 * (a + b)
        if it % 3 != 2:
            with np.errstate(all="ignore"):
                fp = a - ha * (b - a) / (hb - ha)
            mid = np.where(np.isfinite(fp) & (fp > a) & (fp < b), fp, mid)
        done = (mid <= a) | (mid >= b) | (b - a <= 1e-17 * scale[idx])
        hm = resid(mid, idx)
        left = hm <= 0
        move_lo = ~done & left
        move_hi = ~done & ~left
        lo[idx] = np.where(move_lo, mid, a)
        hlo[idx] = np.where(move_lo, hm, np.where(move_hi & (side[idx] == 1), 0.5 * ha, ha))
        hi[idx] = np.where(move_hi, mid, b)
        hhi[idx] = np.where(move_hi, hm, np.where(move_lo & (side[idx] == -1), 0.5 * hb, hb))
        side[idx] = np.where(move_lo, 1, np.where(move_hi, -1, side[idx]))
        hit = ~done & (np.abs(hm) <= res_tol[idx])
        exact_lo[idx[hit & left]] = True
        exact_hi[idx[hit & ~left]] = True
        active[idx[done | hit]] = False

    # stored end residuals may be Illinois-scaled, so recompute before choosing
    hlo, hhi = resid(lo), resid(hi)
    denom = hhi - hlo
    with np.errstate(all="ignore"):
        cand = np.where(denom > 0, lo - hlo * (hi - lo) / denom, lo)
    cand = np.clip(np.where(np.isfinite(cand), cand, lo), lo, hi)
    hc = resid(cand)
    best = np.where(np.abs(hlo) <= np.abs(hhi), lo, hi)
    hbest = np.minimum(np.abs(hlo), np.abs(hhi))
    best = np.where(np.abs(hc) < hbest, cand, best)
    best = np.where(exact_lo, lo, np.where(exact_hi, hi, best))
    out[todo] = best
    return out


def implicit_step(a: float, t: float, z: float, driver: Driver, dt: float,
                  forcing_increment: float = 0.0) -> float:
    """Unique ``y`` with ``y = a + f(t, y, z) dt + forcing_increment``."""
    if not (math.isfinite(a) and math.isfinite(z)):
        raise ValueError("a and z must be finite")
    return float(solve_implicit(np.array([a + forcing_increment]), t, z, driver, dt)[0])


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BsdePair:
    """Backward solution ``(Y, Z)``.  ``Z`` is set to zero on leaves."""

    y: AdaptedProcess
    z: AdaptedProcess

    @property
    def root(self) -> float:
        return float(self.y.values[0])


def child_stats(lat: Lattice, k: int, y: np.ndarray):
    """Mean and centered-difference slope of children values at depth ``k``.

    ``y`` may carry leading batch dimensions; the node axis is last.
    """
    up, dn = lat.children(k)
    yu, yd = y[..., up], y[..., dn]
    return 0.5 * (yu + yd), (yu - yd) / (2.0 * math.sqrt(lat.dt))


def _mask_level(spec: ProblemSpec, k: int):
    if spec.driver_mask is None:
        return None
    return spec.driver_mask[spec.lattice.level(k)]


def solve_bsde(spec: ProblemSpec, terminal=None) -> BsdePair:
    """Backward sweep from ``terminal`` (defaults to the spec's ``xi``)."""
    lat = spec.lattice
    check_step_size(spec.driver, lat.dt)
    _warn_if_not_monotone(spec.driver, lat.dt)
    xi = spec.xi if terminal is None else np.asarray(terminal, dtype=float)
    if xi.shape != (lat.n_leaves,):
        raise LatticeError(f"terminal needs {lat.n_leaves} values")
    dv = spec.forcing_increments()
    y = np.zeros(lat.n_nodes)
    z = np.zeros(lat.n_nodes)
    y[lat.leaves] = xi
    for k in range(lat.steps - 1, -1, -1):
        s = lat.level(k)
        a, zk = child_stats(lat, k, y)
        y[s] = solve_implicit(a + dv[s], lat.grid.time(k), zk, spec.driver, lat.dt, _mask_level(spec, k))
        z[s] = zk
    return BsdePair(AdaptedProcess(lat, y), AdaptedProcess(lat, z))


def stopped_values(spec: ProblemSpec, reached: np.ndarray, payoff: np.ndarray) -> np.ndarray:
    """Batched frozen-after-stop sweep.

    ``reached`` has shape ``(P, n_nodes)`` (rows are ``StoppingRule.reached``)
    and ``payoff`` broadcasts against it.  Reached nodes keep the payoff value,
    the others take an implicit step from their children.  The result is exact
    on every node that is not strictly after the stopping frontier.
    """
    lat = spec.lattice
    check_step_size(spec.driver, lat.dt)
    reached = np.atleast_2d(reached)
    payoff = np.broadcast_to(np.asarray(payoff, dtype=float), reached.shape)
    dv = spec.forcing_increments()
    y = np.array(payoff, dtype=float, copy=True)
    for k in range(lat.steps - 1, -1, -1):
        s = lat.level(k)
        free = ~reached[:, s]
        if not free.any():
            continue
        a, zk = child_stats(lat, k, y)
        mask = _mask_level(spec, k)
        cont = solve_implicit(a[free] + np.broadcast_to(dv[s], a.shape)[free],
                              lat.grid.time(k), zk[free], spec.driver, lat.dt,
                              None if mask is None else np.broadcast_to(mask, a.shape)[free])
        block = y[:, s]
        block[free] = cont
        y[:, s] = block
    return y


def nonlinear_expectation(spec: ProblemSpec, stop: StoppingRule, payoff_at_stop,
                          observe_at: StoppingRule) -> np.ndarray:
    """``E^f`` between two rules: payoff frozen at ``stop``, read at ``observe_at``.

    Returns one value per node; entries off the ``observe_at`` frontier are NaN.
    """
    lat = spec.lattice
    if stop.lattice is not lat or observe_at.lattice is not lat:
        raise LatticeError("rules live on a different lattice")
    if not observe_at <= stop:
        raise FrontierOrderError("observe_at must stop no later than stop on every path")
    payoff = np.asarray(payoff_at_stop, dtype=float)
    if payoff.shape != (lat.n_nodes,):
        raise LatticeError("payoff must be given per node")
    if not np.all(np.isfinite(payoff[stop.flags])):
        raise ValueError("payoff is not finite on the stopping frontier")
    payoff = np.where(stop.reached, payoff, 0.0)
    y = stopped_values(spec, stop.reached[None, :], payoff)[0]
    return np.where(observe_at.flags, y, np.nan)


# ---------------------------------------------------------------------------
# martingale classification and strict comparison
# ---------------------------------------------------------------------------


class EfKind(str, enum.Enum):
    MARTINGALE = "Martingale"
    SUPERMARTINGALE = "Supermartingale"
    SUBMARTINGALE = "Submartingale"
    NEITHER = "Neither"


@dataclass(frozen=True)
class EfClassification:
    kind: EfKind
    witness_node: int | None
    witness_increment: float
    increments: np.ndarray


def one_step_increments(spec: ProblemSpec, x: np.ndarray) -> np.ndarray:
    """``x(node) - E^f_{node}(x(children))`` on every non-terminal node, zero on leaves."""
    lat = spec.lattice
    x = np.asarray(x, dtype=float)
    out = np.zeros(lat.n_nodes)
    dv = spec.forcing_increments()
    for k in range(lat.steps):
        s = lat.level(k)
        a, zk = child_stats(lat, k, x)
        step = solve_implicit(a + dv[s], lat.grid.time(k), zk, spec.driver, lat.dt, _mask_level(spec, k))
        out[s] = x[s] - step
    return out


def classify_ef(spec: ProblemSpec, x, from_rule: StoppingRule, to_rule: StoppingRule,
                tol: float = CLASSIFY_TOL) -> EfClassification:
    """Classify ``x`` on ``[from_rule, to_rule)`` by the sign of its one-step increments."""
    if not from_rule <= to_rule:
        raise FrontierOrderError("from_rule must stop no later than to_rule")
    values = x.values if isinstance(x, AdaptedProcess) else np.asarray(x, dtype=float)
    inc = one_step_increments(spec, values)
    inside = from_rule.reached & ~to_rule.reached
    inc_in = np.where(inside, inc, 0.0)
    neg = inc_in < -tol
    pos = inc_in > tol
    if not neg.any() and not pos.any():
        return EfClassification(EfKind.MARTINGALE, None, 0.0, inc_in)
    if not neg.any():
        i = int(np.argmax(inc_in))
        return EfClassification(EfKind.SUPERMARTINGALE, i, float(inc_in[i]), inc_in)
    if not pos.any():
        i = int(np.argmin(inc_in))
        return EfClassification(EfKind.SUBMARTINGALE, i, float(inc_in[i]), inc_in)
    i = int(np.argmax(np.abs(inc_in)))
    return EfClassification(EfKind.NEITHER, i, float(inc_in[i]), inc_in)


@dataclass(frozen=True)
class StrictComparisonResult:
    holds: bool
    witness_node: int | None
    gap: float


def strict_comparison_check(spec: ProblemSpec, xi1, xi2, sigma: StoppingRule,
                            tol: float = STRICT_TOL) -> StrictComparisonResult:
    """Equal values at a node at or before ``sigma`` must force equal data below it."""
    lat = spec.lattice
    xi1 = np.asarray(xi1, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    if np.any(xi1 < xi2):
        raise ValueError("strict comparison needs xi1 >= xi2 leafwise")
    y1 = solve_bsde(spec, xi1).y.values
    y2 = solve_bsde(spec, xi2).y.values
    scope = ~sigma.reached | sigma.flags
    equal_data = _leafwise_equal_below(lat, np.abs(xi1 - xi2) <= tol)
    gaps = y1 - y2
    bad = scope & (np.abs(gaps) <= tol) & ~equal_data
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        return StrictComparisonResult(False, i, float(gaps[i]))
    inside = np.flatnonzero(scope)
    i = int(inside[np.argmin(np.abs(gaps[inside]))])
    return StrictComparisonResult(True, None, float(gaps[i]))


def _leafwise_equal_below(lat: Lattice, leaf_equal: np.ndarray) -> np.ndarray:
    out = np.zeros(lat.n_nodes, dtype=bool)
    out[lat.leaves] = leaf_equal
    for k in range(lat.steps - 1, -1, -1):
        up, dn = lat.children(k)
        out[lat.level(k)] = out[up] & out[dn]
    return out
