"""Command line: validate a config, run its experiments, plot a solved path.

Exit codes: 0 success, 1 a check failed, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, dumps, validate_config, with_overrides
from .drivers import ProblemSpec, make_preset_driver
from .game import game_report, epsilon_saddle_study, maximality_check, restricted_horizon_value
from .lattice import BarrierPair, StoppingRule, TimeGrid, build_lattice
from .mokobodzki import generate_barrier_family, threshold_diagnostics
from .plotting import emit_plot, load_solve_csv
from .rbsde import penalty_study, solve_rbsde
from .suites import run_suites, skorokhod_violations

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

SOLVE_HEADER = ["node_id", "depth", "B", "L", "U", "Y", "Z", "dRp", "dRm"]
PENALTY_HEADER = ["n", "sup_error", "lower_monotone", "upper_monotone", "err_monotone", "runtime_ms"]
GAME_HEADER = ["theta_id", "value_rbsde", "value_upper", "value_lower", "saddle_pass", "maximality_pass",
               "witness_path"]
MAXIMALITY_HEADER = ["check", "asserted", "passed", "n_saddles", "witness"]
MOKOBODZKI_HEADER = ["path_id", "gamma_depth", "meet_kind", "min_gap", "tau_hat_depth", "sigma_hat_depth",
                     "checks_passed"]
SUITE_HEADER = ["suite", "passed", "cases", "worst", "detail"]


# ---------------------------------------------------------------------------
# config -> problem
# ---------------------------------------------------------------------------


def build_terminal(preset: str, params, lattice, L_T, U_T) -> np.ndarray:
    """Terminal presets, always clipped into ``[L_T, U_T]``.

    ``bt``: ``B_T``; ``constant(c)``; ``indicator(k=0)``: ``1{B_T > k}``; ``scaled_bt(s)``: ``s B_T``.
    """
    bt = lattice.brownian[lattice.leaves]
    if preset == "bt":
        xi = bt
    elif preset == "constant":
        xi = np.full_like(bt, params[0])
    elif preset == "indicator":
        k = params[0] if params else 0.0
        xi = (bt > k).astype(float)
    elif preset == "scaled_bt":
        xi = params[0] * bt
    else:
        raise ValueError(f"unknown terminal preset {preset!r}")
    return np.clip(xi, L_T, U_T)


def build_problem(cfg: ExperimentConfig) -> ProblemSpec:
    lat = build_lattice(TimeGrid(cfg.grid.horizon, cfg.grid.steps), cfg.tree.kind)
    driver = make_preset_driver(cfg.driver.preset, cfg.driver.params)
    seed = cfg.barriers.seed if cfg.barriers.seed is not None else cfg.seed
    bp = generate_barrier_family(cfg.barriers.family, lat, cfg.barriers.params, seed=seed)
    s = lat.leaves
    xi = build_terminal(cfg.terminal.preset, cfg.terminal.params, lat, bp.L[s], bp.U[s])
    bp = BarrierPair(bp.lower, bp.upper, xi, jump_free=bp.jump_free)
    return ProblemSpec(lat, driver, bp)


def theta_depth(cfg: ExperimentConfig) -> int:
    spec = cfg.theta.spec
    if spec == "root":
        return 0
    if spec == "terminal":
        return cfg.grid.steps
    return int(spec.split(":", 1)[1])


def build_theta(cfg: ExperimentConfig, lattice) -> StoppingRule:
    return StoppingRule.at_depth(lattice, theta_depth(cfg))


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    """Locale-independent cell text; floats carry 17 significant digits."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(c) for c in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class Outcome:
    kind: str
    passed: bool
    lines: list = field(default_factory=list)


def run_solve(cfg, spec, opts, out: Path) -> Outcome:
    lat = spec.lattice
    sol = solve_rbsde(spec)
    rows = zip(range(lat.n_nodes), lat.depth, lat.brownian, spec.barriers.L, spec.barriers.U,
               sol.y.values, sol.z.values, sol.r_plus.values, sol.r_minus.values)
    write_csv(out / "solve.csv", SOLVE_HEADER, rows)
    bad = skorokhod_violations(spec, sol, cfg.tolerances.contact)
    lines = [f"root value {fmt(sol.root)}", f"Skorokhod violations {bad}"]
    if opts["plot_path"]:
        svg = emit_plot(load_solve_csv(out / "solve.csv"), opts["plot_path"],
                        out / f"path_{opts['plot_path']}.svg", theta_depth=theta_depth(cfg))
        lines.append(f"plot {svg.name}")
    return Outcome("solve", bad == 0, lines)


def run_penalty(cfg, spec, opts, out: Path) -> Outcome:
    rows = penalty_study(spec, opts["n_values"], timing=opts["timing"])
    write_csv(out / "penalty.csv", PENALTY_HEADER,
              ([r.n, r.sup_error, r.lower_monotone, r.upper_monotone, r.err_monotone, r.runtime_ms] for r in rows))
    ok = all(r.lower_monotone and r.upper_monotone and r.err_monotone and r.sandwich for r in rows)
    lines = [f"n={fmt(r.n)} sup_error={r.sup_error:.3e}" for r in rows]
    return Outcome("penalty_study", ok, lines)


def run_game(cfg, spec, opts, out: Path) -> Outcome:
    lat = spec.lattice
    theta = build_theta(cfg, lat)
    rep = game_report(spec, theta, opts["eps"], tol=cfg.tolerances.gap)
    eps = epsilon_saddle_study(spec, theta, opts["eps"]) if opts["eps"] else None
    saddle_ok = rep.checks["star_saddle"] and rep.checks["hat_saddle"]
    witness = "; ".join(f"{k}: {v}" for k, v in sorted(rep.witnesses.items()))
    rows = []
    for i, node in enumerate(theta.frontier):
        rows.append([int(node), rep.value_rbsde[i], rep.value_upper[i], rep.value_lower[i], saddle_ok,
                     rep.checks["maximality"], witness])
    write_csv(out / "game.csv", GAME_HEADER, rows)
    ok = all(rep.checks.values()) and (eps is None or eps.within_bound)
    lines = [f"{k}: {'pass' if v else 'FAIL'}" for k, v in rep.checks.items()]
    if eps is not None:
        lines.append(f"epsilon pairs within bound {fmt(eps.bound_constant)}*eps: "
                     f"{'pass' if eps.within_bound else 'FAIL'} (fitted constant {fmt(eps.fitted_constant)})")
    return Outcome("game_verify", ok, lines)


def run_maximality(cfg, spec, opts, out: Path) -> Outcome:
    theta = build_theta(cfg, spec.lattice)
    rep = maximality_check(spec, theta, tol=cfg.tolerances.gap, r_tol=cfg.tolerances.contact)
    asserted = ("a", "b", "c", "d")
    rows = [[k, k in asserted, v, rep.n_saddles, rep.witnesses.get(k, "")] for k, v in rep.checks.items()]
    write_csv(out / "maximality.csv", MAXIMALITY_HEADER, rows)
    lines = [f"{rep.n_saddles} exact saddle pairs"]
    lines += [f"check {k}: {'pass' if v else 'FAIL'}{'' if k in asserted else ' (informational)'}"
              for k, v in rep.checks.items()]
    return Outcome("maximality", rep.passed(asserted), lines)


def run_mokobodzki(cfg, spec, opts, out: Path) -> Outcome:
    lat = spec.lattice
    theta = build_theta(cfg, lat)
    diag = threshold_diagnostics(spec, theta, tol=cfg.tolerances.gap, eps_list=opts["eps"],
                                 contact_tol=cfg.tolerances.contact)
    rep = diag.report
    rows = zip(range(2**lat.steps), rep.gamma_depth, rep.meet_kind, rep.min_gap, diag.tau_hat_depth,
               diag.sigma_hat_depth, diag.checks_passed)
    write_csv(out / "mokobodzki.csv", MOKOBODZKI_HEADER, rows)
    sol = solve_rbsde(spec)
    restricted, _ = restricted_horizon_value(spec, theta, rep.gamma, method="dp")
    gap = float(np.max(np.abs(restricted - sol.y.values[theta.frontier])))
    value_ok = gap <= cfg.tolerances.gap
    n_paths = diag.checks_passed.size
    lines = [
        f"paths passing (a) and (b): {int(diag.checks_passed.sum())}/{n_paths}",
        f"restricted value at gamma matches: {'pass' if value_ok else 'FAIL'} (gap {gap:.3e})",
        f"first-reflection pair within gamma (informational): {int(diag.hat_within.sum())}/{n_paths}",
        f"pinched at gamma (informational): {int(diag.pinched.sum())}/{n_paths}",
    ]
    return Outcome("mokobodzki_report", diag.passed and value_ok, lines)


def run_property_suite(cfg, spec, opts, out: Path) -> Outcome:
    res = run_suites(opts["suites"], seed=cfg.seed, instances=opts["instances"])
    write_csv(out / "property_suite.csv", SUITE_HEADER,
              ([r.name, r.passed, r.cases, r.worst, r.detail] for r in res))
    lines = [f"{r.name}: {'pass' if r.passed else 'FAIL'} ({r.cases} cases, worst {r.worst:.3e})" for r in res]
    return Outcome("property_suite", all(r.passed for r in res), lines)


RUNNERS = {
    "solve": run_solve,
    "penalty_study": run_penalty,
    "game_verify": run_game,
    "maximality": run_maximality,
    "mokobodzki_report": run_mokobodzki,
    "property_suite": run_property_suite,
}


def run_experiment(cfg: ExperimentConfig) -> tuple[int, list[Outcome]]:
    """Run every experiment in order, write CSVs and ``summary.txt``; return the exit status."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dumps(cfg) + "\n", encoding="utf-8")
    spec = build_problem(cfg)
    outcomes = []
    for exp in cfg.experiments:
        opts = {k: list(v) if isinstance(v, tuple) else v for k, v in exp.options}
        outcomes.append(RUNNERS[exp.kind](cfg, spec, opts, out))
    lines = [f"seed {cfg.seed}"]
    for o in outcomes:
        lines.append(f"[{'PASS' if o.passed else 'FAIL'}] {o.kind}")
        lines += [f"    {s}" for s in o.lines]
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return (EXIT_OK if all(o.passed for o in outcomes) else EXIT_CHECK), outcomes


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _load(args) -> ExperimentConfig:
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read config: {exc}"]) from None
    cfg = validate_config(text)
    return with_overrides(cfg, seed=args.seed, out_dir=args.out_dir)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynkinlab", description="Reflected BSDEs and Dynkin games on lattices.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run the configured experiments"),
                        ("validate", "check a config and print it with defaults filled"),
                        ("plot", "plot Y, L, U along one path of solve.csv")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out-dir", default=None, help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
        if name == "plot":
            sp.add_argument("--path", required=True, help="path selector over 'u'/'d', one move per step")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "validate":
            print(dumps(cfg))
            return EXIT_OK
        if args.command == "plot":
            out = Path(cfg.out_dir)
            svg = emit_plot(load_solve_csv(out / "solve.csv"), args.path, out / f"path_{args.path}.svg",
                            theta_depth=theta_depth(cfg))
            print(svg)
            return EXIT_OK
        status, outcomes = run_experiment(cfg)
    except Exception as exc:  # solver and I/O failures are reported, not raised
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for o in outcomes:
        print(f"[{'PASS' if o.passed else 'FAIL'}] {o.kind}")
    print(f"wrote {cfg.out_dir}/summary.txt")
    return status


if __name__ == "__main__":
    sys.exit(main())
