"""Command-line runner: ``bflow <subcommand> --config <path> [--out <dir>] [--seed <u64>]``.

Each subcommand reads a JSON config (validated against ``bflow/schemas``),
runs one experiment and writes ``<out>/<subcommand>.json``. Exit status is 0
when every check passes, 1 when a check fails, 2 for an invalid config and 3
when the experiment itself raised.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import jsonschema
import numpy as np

from bflow.acceptance import RECHECK_FLOW, run_criteria
from bflow.boundary import (
    BoundaryDiffeo,
    collar_depth,
    default_disk_grid,
    epsilon_error,
    section_report,
    theta_s_morphism,
)
from bflow.catalog import field_from_components, preset
from bflow.controllability.condition import PARALLEL_TOL, check_condition_II
from bflow.controllability.counterexample import (
    CROSS_CHECK_TOL,
    DEFAULT_GENERATOR,
    counterexample_run,
    random_recipes,
)
from bflow.controllability.factorize import (
    SolverSettings,
    factorize_boundary,
    factorize_boundary_fixing,
    factorize_interior,
    random_target,
    variant_grid,
)
from bflow.controllability.heisenberg import rank_map
from bflow.diffeo import DiscreteDiffeomorphism
from bflow.errors import BFlowError, ConfigError
from bflow.expr import Expr, coordinate_names
from bflow.flows import flow_points
from bflow.geometry import DiskD2, EuclideanBall, HalfSpacePatch, Interval01, euclidean_metric, scaled_metric
from bflow.integrate import DEFAULT_SETTINGS, FlowSettings
from bflow.report import Check, at_most, envelope, equals, to_jsonable

U64_MAX = 2**64 - 1
EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_MODULE = 0, 1, 2, 3


class Outcome:
    """What a subcommand hands back: checks, results and any sidecar files."""

    def __init__(self, checks: list, results: dict, files: Optional[dict] = None):
        self.checks = checks
        self.results = results
        self.files = files or {}


# --- helpers ----------------------------------------------------------------


def load_schema(name: str) -> dict:
    return json.loads(resources.files("bflow").joinpath("schemas", f"{name}.json").read_text())


def validate(subcommand: str, config: dict):
    validator = jsonschema.Draft202012Validator(load_schema(subcommand))
    error = jsonschema.exceptions.best_match(validator.iter_errors(config))
    if error is not None:
        where = "/".join(str(p) for p in error.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {error.message}")


def flow_settings(cfg: Optional[dict], base: FlowSettings = DEFAULT_SETTINGS) -> FlowSettings:
    cfg = cfg or {}
    return FlowSettings(
        abs_tol=cfg.get("abs_tol", base.abs_tol),
        rel_tol=cfg.get("rel_tol", base.rel_tol),
        max_step=cfg.get("max_step", base.max_step),
    )


def _model(kind: str, n: Optional[int]):
    if kind == "interval":
        return Interval01()
    if kind == "disk":
        return DiskD2()
    if kind == "halfspace":
        return HalfSpacePatch(n or 2)
    return EuclideanBall(n or 1)


def _boundary_map(text: str, grid_size: int) -> BoundaryDiffeo:
    lift = Expr(text, ("theta",))
    return BoundaryDiffeo.from_function(lambda th: np.broadcast_to(lift(th), th.shape), grid_size)


def _points(x, dim: int) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.ndim == 0 or (p.ndim == 1 and dim > 1):
        p = p.reshape(1, -1)
    else:
        p = p.reshape(-1, 1) if p.ndim == 1 else p
    if p.shape[1] != dim:
        raise ConfigError(f"points must have {dim} coordinates")
    return p


def _times(t) -> list:
    return [float(v) for v in np.atleast_1d(np.asarray(t, dtype=float))]


# --- subcommands ------------------------------------------------------------


def run_flow(cfg: dict, rng: np.random.Generator) -> Outcome:
    model = _model(cfg["model"], cfg.get("n"))
    field_cfg = cfg["field"]
    exact = None
    if isinstance(field_cfg, str):
        pr = preset(field_cfg)
        reference = pr.model()
        if type(reference) is not type(model) or reference.dim != model.dim:
            raise ConfigError(f"preset {field_cfg!r} lives on {reference!r}, not {model!r}")
        field, exact = pr.build(), pr.exact_flow
    else:
        if len(field_cfg["components"]) != model.dim:
            raise ConfigError(f"{model!r} needs {model.dim} field components")
        field = field_from_components(field_cfg["components"], field_cfg.get("tangent", True))
    settings = flow_settings(cfg.get("flow"))
    tol = cfg.get("tolerance", 1e-8)
    boundary_tol = cfg.get("boundary_tolerance", 1e-9)

    if "x" in cfg:
        points = _points(cfg["x"], model.dim)
        if not np.all(model.in_chart(points)):
            raise ConfigError("every start point must lie in the model")
    else:
        points = model.default_grid().nodes.reshape(-1, model.dim)
    if model.kind == "ball":
        boundary = model.boundary_samples(500, rng)
    else:
        nodes = model.default_grid().nodes.reshape(-1, model.dim)
        boundary = nodes[model.on_boundary(nodes)]

    checks, per_time = [], []
    for t in _times(cfg["t"]):
        y = flow_points(field, t, points, settings, model)
        entry = {"t": t}
        if "x" in cfg:
            entry["value"] = y[:, 0] if model.dim == 1 else y
        if exact is not None:
            entry["oracle_error"] = float(np.max(np.abs(y - exact(t, points))))
            checks.append(at_most(f"oracle_error[t={t}]", entry["oracle_error"], tol))
        if field.tangent:
            yb = flow_points(field, t, boundary, settings, model)
            entry["boundary_drift"] = float(np.max(np.linalg.norm(yb - model.project_to_boundary(yb), axis=-1)))
            checks.append(at_most(f"boundary_drift[t={t}]", entry["boundary_drift"], boundary_tol))
        per_time.append(entry)
    results = {
        "model": model.to_json(),
        "field": field.name,
        "points": len(points),
        "boundary_points": len(boundary),
        "flow_settings": settings.to_json(),
        "times": per_time,
    }
    return Outcome(checks, results)


def run_section(cfg: dict, rng) -> Outcome:
    psi = _boundary_map(cfg["psi"], cfg.get("grid_size", 256))
    rep = section_report(psi, flow_settings(cfg.get("flow")), source=cfg["psi"])
    checks = [
        at_most("sup_restriction_error", rep["sup_restriction_error"], cfg.get("tolerance", 1e-6)),
        at_most("sup_identity_outside_collar", rep["sup_identity_outside_collar"], cfg.get("outside_tolerance", 1e-9)),
    ]
    return Outcome(checks, rep)


def run_epsilon(cfg: dict, rng) -> Outcome:
    size = cfg.get("grid_size", 256)
    phi, psi = _boundary_map(cfg["phi"], size), _boundary_map(cfg["psi"], size)
    settings = flow_settings(cfg.get("flow"))
    tol = cfg.get("tolerance", 1e-6)
    model, grid = DiskD2(), default_disk_grid()
    eps = epsilon_error(phi, psi, settings, model, grid)
    nodes = grid.nodes.reshape(-1, 2)
    move = np.max(np.abs(eps.values.reshape(-1, 2) - nodes), axis=-1)
    in_ns = collar_depth(grid) <= model.collar.s + 1e-12
    a = theta_s_morphism(phi, settings, model)
    b = theta_s_morphism(psi, settings, model)
    morph = a.compose(b).sup_distance(theta_s_morphism(phi.compose(psi), settings, model))
    checks = [
        at_most("epsilon_on_N_s", float(move[in_ns].max()), tol),
        at_most("theta_s_multiplicativity", morph, tol),
    ]
    results = {
        "phi": cfg["phi"],
        "psi": cfg["psi"],
        "c1_norms": {"phi": phi.c1_norm(), "psi": psi.c1_norm(), "phi o psi": phi.compose(psi).c1_norm()},
        "epsilon_on_N_s": float(move[in_ns].max()),
        "epsilon_sup_anywhere": float(move.max()),
        "theta_s_multiplicativity": morph,
    }
    return Outcome(checks, results)


def run_condition2(cfg: dict, rng) -> Outcome:
    comps = cfg["field"]
    model = DiskD2() if cfg["model"] == "disk" else HalfSpacePatch(len(comps))
    if len(comps) != model.dim:
        raise ConfigError(f"{model!r} needs {model.dim} field components")
    scale = cfg.get("metric_scale")
    metric = euclidean_metric(model.dim) if scale is None else scaled_metric(scale, model.dim)
    rep = check_condition_II(
        model,
        metric,
        field_from_components(comps, tangent=True),
        cfg["x"],
        n_random_metrics=cfg.get("random_metrics", 10),
        n_random_connections=cfg.get("random_connections", 3),
        rng=rng,
    )
    checks = [equals("consistent", rep.consistent, True), at_most("max_angle", rep.max_angle, PARALLEL_TOL)]
    if "expect" in cfg:
        checks.insert(0, equals("satisfied", rep.satisfied, cfg["expect"]))
    return Outcome(checks, rep.to_json())


def run_heisenberg(cfg: dict, rng) -> Outcome:
    rm = rank_map(
        cfg["n"],
        cfg["samples"],
        rng,
        pole_samples=cfg.get("pole_samples", 0),
        bracket_samples=cfg.get("bracket_samples", 0),
        family=cfg.get("family", "projected"),
    )
    checks = [equals("rank_exceptions", rm.exceptions(), 0)]
    results = {**rm.to_json(), "csv": "heisenberg-rank.csv"}
    return Outcome(checks, results, {"heisenberg-rank.csv": rm.to_csv()})


_SOLVERS: dict = {
    "interior": (factorize_interior, None),
    "boundary": (factorize_boundary, "g_hat_boundary_max"),
    "boundary_fixing": (factorize_boundary_fixing, "f_hat_boundary_max"),
}


def run_factorize(cfg: dict, rng) -> Outcome:
    variant, dim = cfg["variant"], cfg["dim"]
    solve, vanish_key = _SOLVERS[variant]
    solver = SolverSettings(**cfg.get("solver", {}))
    target_cfg = cfg["target"]
    if "components" in target_cfg:
        comps = target_cfg["components"]
        if len(comps) != dim:
            raise ConfigError(f"target needs {dim} components")
        exprs = [Expr(c, coordinate_names(dim)) for c in comps]
        grid = variant_grid(variant, dim)
        targets = [DiscreteDiffeomorphism.from_function(grid, lambda p: np.stack([e.on_points(p) for e in exprs], -1))]
    else:
        random_cfg = target_cfg["random"]
        default_amp = 0.04 if variant == "interior" else 0.01
        targets = [
            random_target(variant, dim, rng, random_cfg.get("amplitude", default_amp), random_cfg.get("max_slope", 0.1))
            for _ in range(random_cfg.get("count", 1))
        ]
    runs, rechecks, vanishing = [], [], []
    for target in targets:
        res = solve(target, settings=solver)
        recheck = float(np.max(np.abs(res.recompose(RECHECK_FLOW) - target.values)))
        rechecks.append(recheck)
        run = {"solver_residual": res.residual, "recheck_residual": recheck, "iterations": res.iterations}
        if vanish_key:
            vanishing.append(res.extras[vanish_key])
            run[vanish_key] = res.extras[vanish_key]
        if len(targets) == 1:
            run["factorization"] = res.to_json()
        runs.append(run)
    checks = [at_most("recheck_residual", max(rechecks), cfg.get("tolerance", 1e-5))]
    if vanish_key:
        checks.append(at_most("boundary_vanishing", max(vanishing), cfg.get("vanishing_tolerance", 1e-8)))
    return Outcome(checks, {"variant": variant, "dim": dim, "targets": len(targets), "runs": runs})


def run_counterexample(cfg: dict, rng) -> Outcome:
    if "recipes" in cfg:
        recipes = cfg["recipes"]
    else:
        opts = cfg.get("random_recipes", {})
        recipes = random_recipes(rng, opts.get("count", 100), opts.get("max_factors", 4), opts.get("amplitude", 2.0))
    rep = counterexample_run(cfg.get("b", DEFAULT_GENERATOR), recipes, cfg.get("t_target", 0.1))
    checks = [at_most("cross_check", rep.max_cross_check_error, cfg.get("cross_check_tolerance", CROSS_CHECK_TOL))]
    if "expect_obstruction" in cfg:
        checks.append(equals("obstruction", rep.obstruction, cfg["expect_obstruction"]))
    return Outcome(checks, rep.to_json())


def run_suite(cfg: dict, rng, seed: int = 0, progress: Optional[Callable] = None) -> Outcome:
    outcomes = run_criteria(cfg.get("criteria", range(1, 11)), seed, progress)
    checks = []
    for out in outcomes:
        checks.append(equals(f"c{out.number}.completed", out.error is None, True))
        checks += [Check(f"c{out.number}.{c.name}", c.value, c.tolerance, c.comparison, c.passed) for c in out.checks]
    return Outcome(checks, {"criteria": [o.to_json() for o in outcomes]})


SUBCOMMANDS: dict = {
    "flow": run_flow,
    "section": run_section,
    "epsilon": run_epsilon,
    "condition2": run_condition2,
    "heisenberg-rank": run_heisenberg,
    "factorize": run_factorize,
    "counterexample": run_counterexample,
    "suite": run_suite,
}


# --- execution --------------------------------------------------------------


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def execute(subcommand: str, config: dict, seed: Optional[int] = None, progress: Optional[Callable] = None):
    """Validate, run and assemble the report; returns ``(report, files, exit_code)``.

    ``seed`` overrides the config's own seed; both default to 0.
    """
    t0 = time.perf_counter()
    checks, results, files, error = [], {}, {}, None
    seed = config.get("seed", 0) if seed is None else seed
    try:
        validate(subcommand, config)
        rng = np.random.default_rng(seed)
        if subcommand == "suite":
            out = run_suite(config, rng, seed, progress)
        else:
            out = SUBCOMMANDS[subcommand](config, rng)
        checks, results, files = out.checks, out.results, out.files
    except BFlowError as exc:
        error = {"code": exc.code, "message": str(exc)}
    except (ValueError, ArithmeticError) as exc:
        error = {"code": "numerical_error", "message": f"{type(exc).__name__}: {exc}"}
    report = envelope(subcommand, config, seed, checks, results, (time.perf_counter() - t0) * 1e3, error)
    if error is None:
        code = EXIT_PASS if report["passed"] else EXIT_FAIL
    else:
        code = EXIT_CONFIG if error["code"] == ConfigError.code else EXIT_MODULE
    return report, files, code


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bflow", description="Flow-generated diffeomorphism experiments.")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="subcommand")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=load_schema(name)["title"])
        p.add_argument("--config", required=True, type=Path, help="JSON config file")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: current)")
        p.add_argument("--seed", type=_u64, default=None, help="RNG seed; overrides the config")
    return parser


def _read_config(path: Path) -> dict:
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    progress = (lambda r: print(r.summary(), file=sys.stderr, flush=True)) if args.subcommand == "suite" else None
    try:
        config = _read_config(args.config)
    except ConfigError as exc:
        report = envelope(args.subcommand, {}, args.seed, [], {}, 0.0, {"code": exc.code, "message": str(exc)})
        files, code = {}, EXIT_CONFIG
    else:
        report, files, code = execute(args.subcommand, config, args.seed, progress)
    for name, text in files.items():
        write_atomic(args.out / name, text)
    target = args.out / f"{args.subcommand}.json"
    write_atomic(target, dump_report(to_jsonable(report)))
    for c in report["checks"]:
        print(f"{'ok  ' if c['passed'] else 'FAIL'} {c['name']} = {c['value']} ({c['comparison']} {c['tolerance']})")
    if report["error"]:
        print(f"error [{report['error']['code']}]: {report['error']['message']}", file=sys.stderr)
    print(f"{'PASS' if code == EXIT_PASS else 'FAIL'} {target}")
    return code


if __name__ == "__main__":
    sys.exit(main())
