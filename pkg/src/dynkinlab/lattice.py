"""Binary random-walk lattices, adapted processes and stopping rules.

Node indexing
-------------
FullBinary trees use heap order: the root is node 0, the children of node
``i`` are ``2i + 1`` (up move) and ``2i + 2`` (down move), and depth ``k``
occupies the contiguous block ``[2**k - 1, 2**(k + 1) - 1)``.  The position of
a node inside its depth block, written in ``k`` binary digits (most
significant first), is the path that leads to it with ``0 = up``.

Recombining trees index node ``(k, j)``, ``j`` = number of down moves, at
``k (k + 1) / 2 + j``; its children are ``(k + 1, j)`` and ``(k + 1, j + 1)``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

FULL_BINARY_DEPTH_CAP = 22
ENUMERATION_DEPTH_CAP = 5


class LatticeError(ValueError):
    pass


class NonMarkovianError(LatticeError):
    """A path functional was evaluated on a recombining lattice but depends on the path."""


class TreeKind(str, enum.Enum):
    FULL_BINARY = "full_binary"
    RECOMBINING = "recombining"


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise LatticeError(f"horizon must be a positive real, got {self.horizon!r}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise LatticeError(f"steps must be an integer >= 1, got {self.steps!r}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def time(self, k: int) -> float:
        return self.horizon * k / self.steps


@dataclass(frozen=True, eq=False)
class Lattice:
    """Random walk ``B`` with increments ``+-sqrt(dt)`` on a binary tree.

    Use :func:`build_lattice` to construct one.
    """

    grid: TimeGrid
    kind: TreeKind
    depth: np.ndarray
    brownian: np.ndarray
    offsets: np.ndarray
    up: np.ndarray
    down: np.ndarray
    parent: np.ndarray | None

    @property
    def steps(self) -> int:
        return self.grid.steps

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def n_nodes(self) -> int:
        return int(self.depth.size)

    @property
    def is_full(self) -> bool:
        return self.kind is TreeKind.FULL_BINARY

    @property
    def times(self) -> np.ndarray:
        return self.depth * self.dt

    def level(self, k: int) -> slice:
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def width(self, k: int) -> int:
        return int(self.offsets[k + 1] - self.offsets[k])

    def children(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Global indices of the up and down children of every node at depth ``k``."""
        s = self.level(k)
        return self.up[s], self.down[s]

    @property
    def leaves(self) -> slice:
        return self.level(self.steps)

    @property
    def n_leaves(self) -> int:
        return self.width(self.steps)

    def require_full(self, what: str = "this operation"):
        if not self.is_full:
            raise LatticeError(f"{what} requires a FullBinary lattice")

    # -- paths (FullBinary only) ------------------------------------------

    def path_nodes(self, path: int | str) -> np.ndarray:
        """Node indices visited by a root-to-leaf path.

        ``path`` is a leaf position or a string over ``{'u', 'd'}``.  A string
        shorter than ``steps`` is completed with up moves.
        """
        self.require_full("path lookup")
        moves = self._moves(path)
        nodes = np.empty(self.steps + 1, dtype=np.int64)
        nodes[0] = 0
        for k, m in enumerate(moves):
            nodes[k + 1] = 2 * nodes[k] + 1 + m
        return nodes

    def _moves(self, path: int | str) -> list[int]:
        n = self.steps
        if isinstance(path, str):
            if any(c not in "ud" for c in path) or len(path) > n:
                raise LatticeError(f"invalid path selector {path!r}")
            return [0 if c == "u" else 1 for c in path] + [0] * (n - len(path))
        path = int(path)
        if not 0 <= path < 2**n:
            raise LatticeError(f"path id {path} out of range for {n} steps")
        return [(path >> (n - 1 - k)) & 1 for k in range(n)]

    def path_label(self, path: int) -> str:
        return "".join("u" if m == 0 else "d" for m in self._moves(path))

    def all_paths(self) -> np.ndarray:
        """Matrix ``(2**N, N + 1)`` of node indices, one row per leaf position."""
        self.require_full("path enumeration")
        n = self.steps
        leaf_pos = np.arange(2**n, dtype=np.int64)
        out = np.empty((2**n, n + 1), dtype=np.int64)
        for k in range(n + 1):
            out[:, k] = (2**k - 1) + (leaf_pos >> (n - k))
        return out

    def leaf_range(self, node: int) -> tuple[int, int]:
        """Half-open range of leaf positions below ``node``."""
        self.require_full("leaf ranges")
        k = int(self.depth[node])
        pos = node - (2**k - 1)
        span = 2 ** (self.steps - k)
        return pos * span, (pos + 1) * span

    def subtree_mask(self, nodes) -> np.ndarray:
        """Boolean mask of all descendants-or-self of the given nodes."""
        self.require_full("subtree masks")
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[np.asarray(nodes, dtype=np.int64)] = True
        for k in range(1, self.steps + 1):
            s = self.level(k)
            mask[s] |= mask[self.parent[s]]
        return mask


def build_lattice(grid: TimeGrid, kind: TreeKind | str = TreeKind.FULL_BINARY, *,
                  depth_cap: int = FULL_BINARY_DEPTH_CAP) -> Lattice:
    kind = TreeKind(kind)
    n = grid.steps
    sq = math.sqrt(grid.dt)
    if kind is TreeKind.FULL_BINARY:
        if n > depth_cap:
            raise LatticeError(f"FullBinary depth {n} exceeds cap {depth_cap}")
        offsets = np.array([2**k - 1 for k in range(n + 2)], dtype=np.int64)
        size = int(offsets[-1])
        depth = np.repeat(np.arange(n + 1), [2**k for k in range(n + 1)])
        idx = np.arange(size, dtype=np.int64)
        up = np.where(depth < n, 2 * idx + 1, -1)
        down = np.where(depth < n, 2 * idx + 2, -1)
        parent = np.where(idx > 0, (idx - 1) // 2, -1)
        brownian = np.zeros(size)
        for k in range(1, n + 1):
            s = slice(int(offsets[k]), int(offsets[k + 1]))
            child = idx[s]
            step = np.where(child % 2 == 1, sq, -sq)
            brownian[s] = brownian[parent[s]] + step
    else:
        offsets = np.array([k * (k + 1) // 2 for k in range(n + 2)], dtype=np.int64)
        size = int(offsets[-1])
        depth = np.repeat(np.arange(n + 1), np.arange(1, n + 2))
        j = np.arange(size, dtype=np.int64) - offsets[depth]
        up = np.where(depth < n, offsets[np.minimum(depth + 1, n)] + j, -1)
        down = np.where(depth < n, up + 1, -1)
        parent = None
        brownian = (depth - 2 * j) * sq
    for arr in (depth, brownian, offsets, up, down):
        arr.setflags(write=False)
    if parent is not None:
        parent.setflags(write=False)
    return Lattice(grid, kind, depth, brownian, offsets, up, down, parent)


# ---------------------------------------------------------------------------
# adapted processes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    """One finite real per lattice node."""

    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.lattice.n_nodes,):
            raise LatticeError(f"expected {self.lattice.n_nodes} node values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise LatticeError(f"non-finite value at node {bad}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def at_depth(self, k: int) -> np.ndarray:
        return self.values[self.lattice.level(k)]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[self.lattice.leaves]

    @classmethod
    def constant(cls, lattice: Lattice, c: float) -> "AdaptedProcess":
        return cls(lattice, np.full(lattice.n_nodes, float(c)))


PathFunctional = Callable[[float, np.ndarray], float]


def adapted_from_functional(lattice: Lattice, functional: PathFunctional) -> AdaptedProcess:
    """Evaluate ``functional(t, B_path_prefix)`` at every node.

    The prefix includes the root value ``B_0 = 0`` and the node's own value.
    On a recombining lattice the functional must be Markovian: it is evaluated
    on the up-first and down-first routes to each node and the two results
    must agree.
    """
    values = np.empty(lattice.n_nodes)
    sq = math.sqrt(lattice.dt)
    if lattice.is_full:
        paths = lattice.all_paths()
        b = lattice.brownian
        for k in range(lattice.steps + 1):
            s = lattice.level(k)
            stride = 2 ** (lattice.steps - k)
            for pos in range(lattice.width(k)):
                prefix = b[paths[pos * stride, : k + 1]]
                values[s.start + pos] = functional(lattice.grid.time(k), prefix)
    else:
        for k in range(lattice.steps + 1):
            t = lattice.grid.time(k)
            for j in range(k + 1):
                ups = np.concatenate([[0.0], np.cumsum([sq] * (k - j) + [-sq] * j)])
                downs = np.concatenate([[0.0], np.cumsum([-sq] * j + [sq] * (k - j))])
                a = functional(t, ups)
                b_ = functional(t, downs)
                if not math.isclose(a, b_, rel_tol=1e-12, abs_tol=1e-12):
                    raise NonMarkovianError(
                        f"functional is path dependent at depth {k}, level {j}: {a} != {b_}")
                values[lattice.offsets[k] + j] = a
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise LatticeError(f"functional produced a non-finite value at node {bad}")
    return AdaptedProcess(lattice, values)


@dataclass(frozen=True, eq=False)
class BarrierPair:
    """Lower barrier ``L``, upper barrier ``U`` and terminal value ``xi``.

    ``jump_free`` records that the barriers are continuous functionals of the
    path, the lattice stand-in for barriers without jumps.
    """

    lower: AdaptedProcess
    upper: AdaptedProcess
    terminal: np.ndarray
    jump_free: bool = False
    atol: float = 1e-12

    def __post_init__(self):
        lat = self.lower.lattice
        if self.upper.lattice is not lat:
            raise LatticeError("barriers live on different lattices")
        xi = np.array(self.terminal, dtype=float)
        if xi.shape != (lat.n_leaves,):
            raise LatticeError(f"terminal needs {lat.n_leaves} leaf values, got {xi.shape}")
        if not np.all(np.isfinite(xi)):
            raise LatticeError("terminal value is not finite")
        gap = self.upper.values - self.lower.values
        if np.any(gap < -self.atol):
            node = int(np.argmin(gap))
            raise LatticeError(f"L > U at node {node} (gap {gap[node]:.3g})")
        lt, ut = self.lower.terminal, self.upper.terminal
        if np.any(xi < lt - self.atol) or np.any(xi > ut + self.atol):
            leaf = int(np.flatnonzero((xi < lt - self.atol) | (xi > ut + self.atol))[0])
            raise LatticeError(f"terminal value outside [L_T, U_T] at leaf {leaf}")
        xi.setflags(write=False)
        object.__setattr__(self, "terminal", xi)

    @property
    def lattice(self) -> Lattice:
        return self.lower.lattice

    @property
    def L(self) -> np.ndarray:
        return self.lower.values

    @property
    def U(self) -> np.ndarray:
        return self.upper.values


# ---------------------------------------------------------------------------
# stopping rules
# ---------------------------------------------------------------------------


def _reached_from_flags(lattice: Lattice, flags: np.ndarray) -> np.ndarray:
    reached = np.array(flags, dtype=bool, copy=True)
    reached[lattice.leaves] = True
    for k in range(1, lattice.steps + 1):
        s = lattice.level(k)
        reached[s] |= reached[lattice.parent[s]]
    return reached


def _first_from_reached(lattice: Lattice, reached: np.ndarray) -> np.ndarray:
    first = reached.copy()
    first[1:] &= ~reached[lattice.parent[1:]]
    return first


@dataclass(frozen=True, eq=False)
class StoppingRule:
    """Stop/continue marking on a FullBinary lattice, kept in canonical form.

    The constructor canonicalizes: leaves are forced to stop and any flag with
    a flagged strict ancestor is dropped.  ``reached[n]`` is true when the rule
    has stopped at or before node ``n``.
    """

    lattice: Lattice
    flags: np.ndarray
    reached: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.lattice.require_full("StoppingRule")
        flags = np.asarray(self.flags, dtype=bool)
        if flags.shape != (self.lattice.n_nodes,):
            raise LatticeError("flag vector does not match the lattice")
        reached = _reached_from_flags(self.lattice, flags)
        canon = _first_from_reached(self.lattice, reached)
        canon.setflags(write=False)
        reached.setflags(write=False)
        object.__setattr__(self, "flags", canon)
        object.__setattr__(self, "reached", reached)

    @classmethod
    def at_depth(cls, lattice: Lattice, k: int) -> "StoppingRule":
        flags = np.zeros(lattice.n_nodes, dtype=bool)
        flags[lattice.level(k)] = True
        return cls(lattice, flags)

    @classmethod
    def root(cls, lattice: Lattice) -> "StoppingRule":
        return cls.at_depth(lattice, 0)

    @classmethod
    def terminal(cls, lattice: Lattice) -> "StoppingRule":
        return cls.at_depth(lattice, lattice.steps)

    def __eq__(self, other):
        if not isinstance(other, StoppingRule):
            return NotImplemented
        return self.lattice is other.lattice and bool(np.array_equal(self.flags, other.flags))

    def __hash__(self):
        return hash(self.flags.tobytes())

    @property
    def before(self) -> np.ndarray:
        """Nodes strictly before the stopping frontier."""
        return ~self.reached

    @property
    def frontier(self) -> np.ndarray:
        return np.flatnonzero(self.flags)

    def stop_nodes(self) -> np.ndarray:
        """Realized stop node on every path (indexed by leaf position)."""
        paths = self.lattice.all_paths()
        hit = self.flags[paths]
        return paths[np.arange(paths.shape[0]), np.argmax(hit, axis=1)]

    def stop_depths(self) -> np.ndarray:
        return self.lattice.depth[self.stop_nodes()]

    def __le__(self, other: "StoppingRule") -> bool:
        """Pathwise ``self <= other``."""
        _same_lattice(self, other)
        return bool(np.all(self.reached | ~other.reached))

    def __ge__(self, other: "StoppingRule") -> bool:
        return other <= self


def _same_lattice(a: StoppingRule, b: StoppingRule):
    if a.lattice is not b.lattice:
        raise LatticeError("stopping rules live on different lattices")


def rule_min(a: StoppingRule, b: StoppingRule) -> StoppingRule:
    _same_lattice(a, b)
    return StoppingRule(a.lattice, _first_from_reached(a.lattice, a.reached | b.reached))


def rule_max(a: StoppingRule, b: StoppingRule) -> StoppingRule:
    _same_lattice(a, b)
    return StoppingRule(a.lattice, _first_from_reached(a.lattice, a.reached & b.reached))


def first_hitting_rule(lattice: Lattice, start: StoppingRule, predicate) -> StoppingRule:
    """First node at or after ``start`` where ``predicate`` holds, else the horizon."""
    if start.lattice is not lattice:
        raise LatticeError("start rule lives on a different lattice")
    pred = np.asarray(predicate, dtype=bool)
    if pred.shape != (lattice.n_nodes,):
        raise LatticeError("predicate must give one boolean per node")
    return StoppingRule(lattice, start.reached & pred)


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------


def count_stopping_rules(n: int) -> int:
    """Number of canonical rules on a depth-``n`` tree: S(0)=1, S(k)=1+S(k-1)^2."""
    s = 1
    for _ in range(n):
        s = 1 + s * s
    return s


def _local_rule_matrix(n: int) -> np.ndarray:
    """All canonical rules of a depth-``n`` subtree, as rows over its heap order."""
    if n == 0:
        return np.ones((1, 1), dtype=bool)
    sub = _local_rule_matrix(n - 1)
    m = sub.shape[0]
    size = 2 ** (n + 1) - 1
    out = np.zeros((1 + m * m, size), dtype=bool)
    out[0, 0] = True
    up = np.repeat(sub, m, axis=0)
    down = np.tile(sub, (m, 1))
    for d in range(1, n + 1):
        half = 2 ** (d - 1)
        src = slice(half - 1, 2 * half - 1)
        dst = 2**d - 1
        out[1:, dst:dst + half] = up[:, src]
        out[1:, dst + half:dst + 2 * half] = down[:, src]
    return out


class RuleFamily(Sequence):
    """Read-only sequence of stopping rules backed by a flag matrix."""

    def __init__(self, lattice: Lattice, flags: np.ndarray):
        self.lattice = lattice
        self.flags = flags
        self.flags.setflags(write=False)
        self._reached = None

    def __len__(self):
        return self.flags.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return RuleFamily(self.lattice, self.flags[i].copy())
        return StoppingRule(self.lattice, self.flags[i])

    def __iter__(self) -> Iterator[StoppingRule]:
        for i in range(len(self)):
            yield self[i]

    @property
    def reached(self) -> np.ndarray:
        if self._reached is None:
            r = self.flags.copy()
            for k in range(1, self.lattice.steps + 1):
                s = self.lattice.level(k)
                r[:, s] |= r[:, self.lattice.parent[s]]
            self._reached = r
        return self._reached

    def index(self, rule: StoppingRule) -> int:
        hits = np.flatnonzero(np.all(self.flags == rule.flags, axis=1))
        if hits.size == 0:
            raise ValueError("rule is not in this family")
        return int(hits[0])

    def _from_reached(self, reached: np.ndarray) -> "RuleFamily":
        first = reached.copy()
        first[:, 1:] &= ~reached[:, self.lattice.parent[1:]]
        uniq = np.unique(first, axis=0)
        return RuleFamily(self.lattice, uniq)

    def after(self, theta: StoppingRule) -> "RuleFamily":
        """Distinct rules ``max(r, theta)``, i.e. the rules that stop at or after ``theta``."""
        return self._from_reached(self.reached & theta.reached[None, :])

    def capped(self, cutoff: StoppingRule) -> "RuleFamily":
        """Distinct rules ``min(r, cutoff)``."""
        return self._from_reached(self.reached | cutoff.reached[None, :])


def enumerate_stopping_rules(lattice: Lattice, *, depth_cap: int = ENUMERATION_DEPTH_CAP) -> RuleFamily:
    """Every canonical stopping rule of a FullBinary lattice, each exactly once."""
    lattice.require_full("rule enumeration")
    n = lattice.steps
    if n > depth_cap:
        raise LatticeError(f"enumeration refused for depth {n} > {depth_cap}")
    if n == 5:
        warnings.warn("enumerating 458330 stopping rules; pairwise sweeps at this depth are slow",
                      RuntimeWarning, stacklevel=2)
    return RuleFamily(lattice, _local_rule_matrix(n))
