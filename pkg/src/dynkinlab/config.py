"""Experiment configuration: JSON document, validation with aggregated errors, round-trip."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

from .drivers import PRESET_ARITY
from .game import GAME_DEPTH_CAP
from .lattice import FULL_BINARY_DEPTH_CAP, TreeKind
from .mokobodzki import FAMILY_ARITY

EXPERIMENT_KINDS = ("solve", "penalty_study", "game_verify", "maximality", "mokobodzki_report", "property_suite")
TERMINAL_ARITY = {"bt": (0, 0), "constant": (1, 1), "indicator": (0, 1), "scaled_bt": (1, 1)}
THETA_FORMS = "'root', 'terminal' or 'depth:K'"
PATH_DEPTH_CAP = 16

EXPERIMENT_OPTIONS = {
    "solve": {"plot_path": None},
    "penalty_study": {"n_values": [1, 4, 16, 64, 256, 1024, 4096], "timing": False},
    "game_verify": {"eps": [0.5, 0.1, 0.02]},
    "maximality": {},
    "mokobodzki_report": {"eps": [0.5, 0.1, 0.02]},
    "property_suite": {"suites": None, "instances": 20},
}


class ConfigError(ValueError):
    """All problems found in a configuration document."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class GridConfig:
    horizon: float
    steps: int


@dataclass(frozen=True)
class TreeConfig:
    kind: str = TreeKind.FULL_BINARY.value


@dataclass(frozen=True)
class DriverConfig:
    preset: str
    params: tuple = ()


@dataclass(frozen=True)
class BarrierConfig:
    family: str
    params: tuple = ()
    seed: int | None = None


@dataclass(frozen=True)
class TerminalConfig:
    preset: str = "bt"
    params: tuple = ()


@dataclass(frozen=True)
class ThetaConfig:
    spec: str = "root"


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    options: tuple = ()

    def option(self, name):
        return dict(self.options)[name]


@dataclass(frozen=True)
class Tolerances:
    contact: float = 1e-10
    gap: float = 1e-9
    solver: float = 1e-12


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig
    driver: DriverConfig
    barriers: BarrierConfig
    tree: TreeConfig = TreeConfig()
    terminal: TerminalConfig = TerminalConfig()
    theta: ThetaConfig = ThetaConfig()
    experiments: tuple = (ExperimentSpec("solve", (("plot_path", None),)),)
    tolerances: Tolerances = Tolerances()
    seed: int = 0
    out_dir: str = "out"


_SECTIONS = {
    "grid": {"horizon", "steps"},
    "tree": {"kind"},
    "driver": {"preset", "params"},
    "barriers": {"family", "params", "seed"},
    "terminal": {"preset", "params"},
    "theta": {"spec"},
    "tolerances": {"contact", "gap", "solver"},
}
_TOP = set(_SECTIONS) | {"experiments", "seed", "out_dir"}
_REQUIRED = ("grid", "driver", "barriers")


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, dict):
        return tuple(sorted((k, _freeze(v)) for k, v in value.items()))
    return value


def _thaw_options(options: tuple) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in options}


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def parse_document(text: str) -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be an object"])
    return raw


def validate_config(raw) -> ExperimentConfig:
    """Check a document (text or parsed object), fill defaults, and report every problem at once."""
    if isinstance(raw, (str, bytes)):
        raw = parse_document(raw.decode() if isinstance(raw, bytes) else raw)
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be an object"])

    for key in sorted(set(raw) - _TOP):
        errors.append(f"unknown key '{key}'")
    for key in _REQUIRED:
        if key not in raw:
            errors.append(f"missing section '{key}'")

    def section(name):
        sec = raw.get(name, {})
        if not isinstance(sec, dict):
            errors.append(f"'{name}' must be an object")
            return {}
        for key in sorted(set(sec) - _SECTIONS[name]):
            errors.append(f"unknown key '{name}.{key}'")
        return sec

    def params_of(sec, name):
        p = sec.get("params", [])
        if not isinstance(p, list) or not all(_is_number(x) for x in p):
            errors.append(f"'{name}.params' must be a list of finite numbers")
            return ()
        return tuple(p)

    g = section("grid")
    horizon, steps = g.get("horizon"), g.get("steps")
    if "grid" in raw:
        if not (_is_number(horizon) and horizon > 0):
            errors.append("'grid.horizon' must be a positive number")
        if not (_is_int(steps) and steps >= 1):
            errors.append("'grid.steps' must be an integer >= 1")

    tr = section("tree")
    kind = tr.get("kind", TreeKind.FULL_BINARY.value)
    if kind not in {k.value for k in TreeKind}:
        errors.append(f"unknown tree kind '{kind}'")

    d = section("driver")
    preset = d.get("preset")
    dparams = params_of(d, "driver")
    if "driver" in raw:
        if preset not in PRESET_ARITY:
            errors.append(f"unknown driver preset '{preset}' (known: {', '.join(sorted(PRESET_ARITY))})")
        elif len(dparams) != PRESET_ARITY[preset]:
            errors.append(f"driver preset '{preset}' takes {PRESET_ARITY[preset]} params, got {len(dparams)}")

    b = section("barriers")
    family = b.get("family")
    bparams = params_of(b, "barriers")
    bseed = b.get("seed")
    if "barriers" in raw:
        if family not in FAMILY_ARITY:
            errors.append(f"unknown barrier family '{family}' (known: {', '.join(FAMILY_ARITY)})")
        else:
            lo, hi = FAMILY_ARITY[family]
            if not lo <= len(bparams) <= hi:
                errors.append(f"barrier family '{family}' takes {lo} to {hi} params, got {len(bparams)}")
    if bseed is not None and not _is_int(bseed):
        errors.append("'barriers.seed' must be an integer or null")

    te = section("terminal")
    tpreset = te.get("preset", "bt")
    tparams = params_of(te, "terminal")
    if tpreset not in TERMINAL_ARITY:
        errors.append(f"unknown terminal preset '{tpreset}' (known: {', '.join(TERMINAL_ARITY)})")
    else:
        lo, hi = TERMINAL_ARITY[tpreset]
        if not lo <= len(tparams) <= hi:
            errors.append(f"terminal preset '{tpreset}' takes {lo} to {hi} params, got {len(tparams)}")

    th = section("theta")
    tspec = th.get("spec", "root")
    if not _theta_ok(tspec, steps if _is_int(steps) else None):
        errors.append(f"invalid theta spec '{tspec}'; use {THETA_FORMS} with K <= steps")

    tol = section("tolerances")
    tolerances = {}
    for key, default in asdict(Tolerances()).items():
        v = tol.get(key, default)
        if not (_is_number(v) and v > 0):
            errors.append(f"'tolerances.{key}' must be a positive number")
        tolerances[key] = v

    seed = raw.get("seed", 0)
    if not _is_int(seed):
        errors.append("'seed' must be an integer")
    out_dir = raw.get("out_dir", "out")
    if not isinstance(out_dir, str) or not out_dir:
        errors.append("'out_dir' must be a non-empty string")

    exps = raw.get("experiments", [{"kind": "solve"}])
    experiments = []
    if not isinstance(exps, list) or not exps:
        errors.append("'experiments' must be a non-empty list")
        exps = []
    for i, e in enumerate(exps):
        if not isinstance(e, dict):
            errors.append(f"experiments[{i}] must be an object")
            continue
        for key in sorted(set(e) - {"kind", "options"}):
            errors.append(f"unknown key 'experiments[{i}].{key}'")
        ek = e.get("kind")
        if ek not in EXPERIMENT_KINDS:
            errors.append(f"experiments[{i}]: unknown kind '{ek}' (known: {', '.join(EXPERIMENT_KINDS)})")
            continue
        opts = e.get("options", {})
        if not isinstance(opts, dict):
            errors.append(f"experiments[{i}].options must be an object")
            continue
        allowed = EXPERIMENT_OPTIONS[ek]
        for key in sorted(set(opts) - set(allowed)):
            errors.append(f"unknown key 'experiments[{i}].options.{key}'")
        merged = {**allowed, **{k: v for k, v in opts.items() if k in allowed}}
        errors.extend(_check_options(i, ek, merged))
        errors.extend(_check_guards(i, ek, kind, steps))
        experiments.append(ExperimentSpec(ek, _freeze(merged)))

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        grid=GridConfig(float(horizon), int(steps)),
        driver=DriverConfig(preset, tuple(float(x) for x in dparams)),
        barriers=BarrierConfig(family, tuple(float(x) for x in bparams), bseed),
        tree=TreeConfig(kind),
        terminal=TerminalConfig(tpreset, tuple(float(x) for x in tparams)),
        theta=ThetaConfig(tspec),
        experiments=tuple(experiments),
        tolerances=Tolerances(**{k: float(v) for k, v in tolerances.items()}),
        seed=seed,
        out_dir=out_dir,
    )


def _theta_ok(spec, steps) -> bool:
    if spec in ("root", "terminal"):
        return True
    if isinstance(spec, str) and spec.startswith("depth:"):
        try:
            k = int(spec.split(":", 1)[1])
        except ValueError:
            return False
        return k >= 0 and (steps is None or k <= steps)
    return False


def _check_options(i, kind, opts) -> list[str]:
    errs = []
    where = f"experiments[{i}].options"
    if kind == "solve":
        p = opts["plot_path"]
        if p is not None and not (isinstance(p, str) and set(p) <= {"u", "d"}):
            errs.append(f"{where}.plot_path must be a string over 'u'/'d' or null")
    elif kind == "penalty_study":
        n = opts["n_values"]
        if not (isinstance(n, list) and n and all(_is_number(x) and x >= 0 for x in n)):
            errs.append(f"{where}.n_values must be a non-empty list of nonnegative numbers")
        elif any(b <= a for a, b in zip(n, n[1:])):
            errs.append(f"{where}.n_values must be strictly increasing")
        if not isinstance(opts["timing"], bool):
            errs.append(f"{where}.timing must be a boolean")
    elif kind in ("game_verify", "mokobodzki_report"):
        e = opts["eps"]
        if not (isinstance(e, list) and all(_is_number(x) and x > 0 for x in e)):
            errs.append(f"{where}.eps must be a list of positive numbers")
    elif kind == "property_suite":
        from .suites import SUITES

        s = opts["suites"]
        if s is not None:
            if not isinstance(s, list) or not all(isinstance(x, str) for x in s):
                errs.append(f"{where}.suites must be a list of names or null")
            else:
                for name in s:
                    if name not in SUITES:
                        errs.append(f"{where}.suites: unknown suite '{name}'")
        n = opts["instances"]
        if not (_is_int(n) and n >= 1):
            errs.append(f"{where}.instances must be an integer >= 1")
    return errs


def _check_guards(i, kind, tree_kind, steps) -> list[str]:
    if not _is_int(steps):
        return []
    errs = []
    full = tree_kind == TreeKind.FULL_BINARY.value
    if full and steps > FULL_BINARY_DEPTH_CAP:
        errs.append(f"experiments[{i}] ({kind}): FullBinary steps must be <= {FULL_BINARY_DEPTH_CAP}, got {steps}")
    if kind in ("game_verify", "maximality"):
        if not full:
            errs.append(f"experiments[{i}] ({kind}) requires a full_binary tree")
        if steps > GAME_DEPTH_CAP:
            errs.append(f"experiments[{i}] ({kind}) requires steps <= {GAME_DEPTH_CAP}, got {steps}")
    if kind == "mokobodzki_report":
        if not full:
            errs.append(f"experiments[{i}] ({kind}) requires a full_binary tree")
        if steps > PATH_DEPTH_CAP:
            errs.append(f"experiments[{i}] ({kind}) requires steps <= {PATH_DEPTH_CAP}, got {steps}")
    return errs


def serialize(config: ExperimentConfig) -> dict:
    """Plain JSON-compatible document that validates back to ``config``."""
    return {
        "grid": {"horizon": config.grid.horizon, "steps": config.grid.steps},
        "tree": {"kind": config.tree.kind},
        "driver": {"preset": config.driver.preset, "params": list(config.driver.params)},
        "barriers": {"family": config.barriers.family, "params": list(config.barriers.params),
                     "seed": config.barriers.seed},
        "terminal": {"preset": config.terminal.preset, "params": list(config.terminal.params)},
        "theta": {"spec": config.theta.spec},
        "experiments": [{"kind": e.kind, "options": _thaw_options(e.options)} for e in config.experiments],
        "tolerances": asdict(config.tolerances),
        "seed": config.seed,
        "out_dir": config.out_dir,
    }


def dumps(config: ExperimentConfig) -> str:
    return json.dumps(serialize(config), indent=2, sort_keys=True)


def with_overrides(config: ExperimentConfig, *, seed: int | None = None, out_dir: str | None = None):
    doc = serialize(config)
    if seed is not None:
        doc["seed"] = seed
    if out_dir is not None:
        doc["out_dir"] = out_dir
    return validate_config(doc)

