"""Static SVG plot of ``Y``, ``L`` and ``U`` along one path of a solve table."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SOLVE_COLUMNS = ("node_id", "depth", "B", "L", "U", "Y", "Z", "dRp", "dRm")
PLOT_CONTACT_TOL = 1e-10
SVG_SALT = "dynkinlab"


class PlotError(ValueError):
    pass


@dataclass(frozen=True)
class SolveTable:
    """Columns of ``solve.csv`` as arrays indexed by node id."""

    columns: dict

    @property
    def steps(self) -> int:
        return int(self.columns["depth"].max())

    @property
    def kind(self) -> str:
        n, rows = self.steps, self.columns["node_id"].size
        return "full_binary" if rows == 2 ** (n + 1) - 1 else "recombining"

    def __getitem__(self, name):
        return self.columns[name]


def load_solve_csv(path) -> SolveTable:
    path = Path(path)
    if not path.is_file():
        raise PlotError(f"missing solve output {path}; run the solve experiment first")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SOLVE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise PlotError(f"{path} lacks columns {sorted(missing)}")
        rows = list(reader)
    if not rows:
        raise PlotError(f"{path} has no rows")
    cols = {c: np.array([float(r[c]) for r in rows]) for c in SOLVE_COLUMNS}
    order = np.argsort(cols["node_id"])
    cols = {c: v[order] for c, v in cols.items()}
    cols["node_id"] = cols["node_id"].astype(np.int64)
    cols["depth"] = cols["depth"].astype(np.int64)
    return SolveTable(cols)


def path_nodes_for(kind: str, steps: int, selector: str) -> np.ndarray:
    """Node ids along a path given as a string of ``steps`` moves over ``{'u', 'd'}``."""
    if not isinstance(selector, str) or len(selector) != steps or set(selector) - {"u", "d"}:
        raise PlotError(f"invalid path selector {selector!r}: need {steps} moves over 'u'/'d'")
    moves = [0 if c == "u" else 1 for c in selector]
    nodes = [0]
    downs = 0
    for k, m in enumerate(moves, start=1):
        if kind == "full_binary":
            nodes.append(2 * nodes[-1] + 1 + m)
        else:
            downs += m
            nodes.append(k * (k + 1) // 2 + downs)
    return np.asarray(nodes, dtype=np.int64)


def marker_depths(table: SolveTable, nodes: np.ndarray, theta_depth: int = 0,
                  tol: float = PLOT_CONTACT_TOL) -> tuple[int, int]:
    """Depths of ``tau* ^ sigma*`` (first contact) and ``tau^ ^ sigma^`` (first reflection).

    Both are searched from ``theta_depth`` on; the horizon is used when nothing fires.
    """
    n = nodes.size - 1
    y, L, U = table["Y"][nodes], table["L"][nodes], table["U"][nodes]
    contact = (y <= L + tol) | (y >= U - tol)
    rp = np.cumsum(np.where(np.arange(n + 1) >= theta_depth, table["dRp"][nodes], 0.0))
    rm = np.cumsum(np.where(np.arange(n + 1) >= theta_depth, table["dRm"][nodes], 0.0))
    pushed = (rp > tol) | (rm > tol)
    after = np.arange(n + 1) >= theta_depth

    def first(mask):
        hit = np.flatnonzero(mask & after)
        return int(hit[0]) if hit.size else n

    return first(contact), first(pushed)


def emit_plot(table: SolveTable, selector: str, out_file, *, theta_depth: int = 0) -> Path:
    """Write an SVG with polylines ``Y``, ``L``, ``U`` and markers at the star and hat stop depths.

    Element ids are ``Y``, ``L``, ``U``, ``star`` and ``hat``.  Output is byte-stable
    for identical input.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    nodes = path_nodes_for(table.kind, table.steps, selector)
    if not 0 <= theta_depth <= table.steps:
        raise PlotError(f"theta depth {theta_depth} outside 0..{table.steps}")
    k = np.arange(nodes.size)
    star, hat = marker_depths(table, nodes, theta_depth)
    y = table["Y"][nodes]

    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for name, style in (("L", "--"), ("U", "--"), ("Y", "-")):
            (line,) = ax.plot(k, table[name][nodes], style, label=name)
            line.set_gid(name)
        (m1,) = ax.plot([star], [y[star]], "o", ms=8, mfc="none", label="first contact")
        m1.set_gid("star")
        (m2,) = ax.plot([hat], [y[hat]], "x", ms=8, label="first reflection")
        m2.set_gid("hat")
        ax.set_xlabel("step")
        ax.set_title(f"path {selector}")
        ax.legend(loc="best", fontsize=8)
        out = Path(out_file)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out
