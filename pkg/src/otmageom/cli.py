"""Command-line verification runs driven by a YAML configuration file.

Usage::

    otmageom CONFIG.yaml [--seed N] [--samples N] [--tol X] [--out DIR] [--csv]

The ``command`` field of the configuration selects one of
``verify-conformal``, ``check-structure``, ``solve-ot`` or ``sg-demo``.
Exit status: 0 if every check passes, 1 on a tolerance failure, 2 on a
configuration error.
"""

import argparse
import csv
import json
import logging
import sys
from copy import deepcopy
from pathlib import Path

import numpy as np
import yaml

from otmageom import __version__
from otmageom.errors import ConfigError
from otmageom.fields import SECOND_DERIVATIVE_STEP, CostFunction, Density
from otmageom.ma_structure import (
    MAStructure,
    effective_form_at,
    effectiveness_defect,
    symplectic_form_at,
)
from otmageom.ot_solver import (
    DiscreteOTProblem,
    duality_report,
    el_residual_grid,
    load_points,
    potential_from_monotone_map,
    sinkhorn,
    solve_assignment,
    solve_monotone_1d,
)
from otmageom.semigeostrophic import SWAP, SGConfig, sg_assignment_demo
from otmageom.transport_geometry import conformal_defect_at, metric_signature

log = logging.getLogger("otmageom")

SCHEMA_VERSION = 1
COMMANDS = ("verify-conformal", "check-structure", "solve-ot", "sg-demo")
CSV_HEADER = [
    "px1", "px2", "px3", "qx1", "qx2", "qx3", "conformal_defect",
    "sig_plus", "sig_minus", "sig_zero", "effectiveness_defect",
]
DEFAULT_TOLERANCES = {
    "verify-conformal": 1e-8,
    "check-structure": 1e-10,
    "solve-ot": 1e-8,
    "sg-demo": 1e-10,
}
EFFECTIVENESS_TOL = 1e-12
SIGNATURE_TOL = 1e-10
EXPECTED_SIGNATURE = (3, 3, 0)


# ---------------------------------------------------------------------------
# configuration


def _field(cfg, key, path, default=None, required=False):
    if key in cfg:
        return cfg[key]
    if required:
        raise ConfigError(f"field '{path}{key}': missing")
    return default


def _floats(value, path, shape=None):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{path}': expected numbers, got {value!r}") from None
    if shape is not None and arr.shape != shape:
        raise ConfigError(f"field '{path}': expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"field '{path}': non-finite value")
    return arr


def build_density(spec, path, dim=3):
    if not isinstance(spec, dict):
        raise ConfigError(f"field '{path}': expected a mapping")
    kind = _field(spec, "kind", path + ".", required=True)
    box = _floats(_field(spec, "box", path + ".", required=True), path + ".box", (dim, 2))
    if np.any(box[:, 1] <= box[:, 0]):
        raise ConfigError(f"field '{path}.box': bounds must be increasing")
    if kind == "uniform":
        return Density.uniform(box)
    if kind == "truncated_gaussian":
        mean = _floats(_field(spec, "mean", path + ".", required=True), path + ".mean", (dim,))
        cov = _floats(_field(spec, "cov", path + ".", required=True), path + ".cov")
        if cov.shape == (dim,):
            cov = np.diag(cov)
        try:
            return Density.truncated_gaussian(box, mean, cov)
        except ValueError as exc:
            raise ConfigError(f"field '{path}.cov': {exc}") from None
    raise ConfigError(f"field '{path}.kind': unknown density kind {kind!r}")


def build_cost(spec):
    if not isinstance(spec, dict):
        raise ConfigError("field 'cost': expected a mapping")
    kind = _field(spec, "kind", "cost.", required=True)
    if kind == "quadratic":
        cost = CostFunction.quadratic()
    elif kind == "semigeostrophic":
        f = float(_field(spec, "f", "cost.", 1.0))
        if f <= 0:
            raise ConfigError("field 'cost.f': the Coriolis parameter must be positive")
        cost = CostFunction.semigeostrophic(f)
    elif kind == "bilinear":
        a = _floats(_field(spec, "matrix", "cost.", required=True), "cost.matrix", (3, 3))
        cost = CostFunction.custom(lambda x, xb: -float(x @ a @ xb), mixed=lambda x, xb: -a)
    elif kind == "exponential":
        # c = -exp(x1) xbar1 - x2 xbar2 - x3 xbar3
        cost = CostFunction.custom(
            lambda x, xb: -np.exp(x[0]) * xb[0] - x[1] * xb[1] - x[2] * xb[2],
            mixed=lambda x, xb: -np.diag([np.exp(x[0]), 1.0, 1.0]),
        )
    else:
        raise ConfigError(f"field 'cost.kind': unknown cost kind {kind!r}")
    derivatives = _field(spec, "derivatives", "cost.", "analytic")
    if derivatives == "finite-difference":
        cost = cost.without_derivatives()
    elif derivatives != "analytic":
        raise ConfigError("field 'cost.derivatives': expected 'analytic' or 'finite-difference'")
    return cost


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: YAML syntax error at {where}: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return cfg


def apply_overrides(cfg, seed=None, samples=None, tol=None, out=None, csv_out=None):
    cfg = deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = seed
    if samples is not None:
        cfg["samples"] = samples
    if tol is not None:
        cfg["tolerance"] = tol
    if out is not None:
        cfg["out"] = out
    if csv_out:
        cfg["points_csv"] = True
    return cfg


def validate(cfg):
    command = _field(cfg, "command", "", required=True)
    if command not in COMMANDS:
        raise ConfigError(f"field 'command': expected one of {', '.join(COMMANDS)}, got {command!r}")
    samples = _field(cfg, "samples", "", 100)
    if not isinstance(samples, int) or isinstance(samples, bool) or samples < 1:
        raise ConfigError(f"field 'samples': expected an integer >= 1, got {samples!r}")
    seed = _field(cfg, "seed", "", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"field 'seed': expected a non-negative integer, got {seed!r}")
    tol = _field(cfg, "tolerance", "", DEFAULT_TOLERANCES[command])
    try:
        tol = float(tol)
    except (TypeError, ValueError):
        raise ConfigError(f"field 'tolerance': expected a number, got {tol!r}") from None
    if not tol > 0:
        raise ConfigError("field 'tolerance': must be positive")
    cfg = dict(cfg, samples=samples, seed=seed, tolerance=tol)
    cfg.setdefault("out", "out")
    cfg.setdefault("points_csv", False)
    return cfg


# ---------------------------------------------------------------------------
# sweeps


def _check(value, tol):
    return {"value": value, "tolerance": tol, "pass": bool(value <= tol)}


def _closed_form_defect(s, x, xb, g):
    """Entrywise deviation of g_alpha from rho rho_bar (0 I; I 0); built-in costs only."""
    if not s.cost.is_builtin or s.cost.coriolis_f != 1.0:
        return None
    expected = s.source_density(x) * s.target_density(xb) * SWAP
    return float(np.max(np.abs(g.matrix - expected)))


def sweep_points(s, count, rng):
    margin = SECOND_DERIVATIVE_STEP
    xs = s.source_density.sample_interior(rng, count, margin)
    xbs = s.target_density.sample_interior(rng, count, margin)
    records = []
    for k, (x, xb) in enumerate(zip(xs, xbs)):
        rec = {"index": k, "x": x.tolist(), "xbar": xb.tolist()}
        try:
            conf = conformal_defect_at(s, x, xb)
            g = conf.lr_matrix
            rec.update(
                conformal_defect=conf.relative_defect,
                conformal_factor=conf.conformal_factor,
                signature_lr=list(metric_signature(g, SIGNATURE_TOL)),
                signature_kmw=list(metric_signature(conf.kmw_matrix, SIGNATURE_TOL)),
                effectiveness_defect=effectiveness_defect(
                    symplectic_form_at(s, x, xb), effective_form_at(s, x, xb)),
                closed_form_defect=_closed_form_defect(s, x, xb, g),
                error=None,
            )
        except (ArithmeticError, ValueError) as exc:
            rec.update(conformal_defect=None, conformal_factor=None, signature_lr=None,
                       signature_kmw=None, effectiveness_defect=None,
                       closed_form_defect=None, error=str(exc))
        records.append(rec)
    return records


def _max(records, key):
    vals = [r[key] for r in records if r[key] is not None]
    return max(vals) if vals else None


def _mean(records, key):
    vals = [r[key] for r in records if r[key] is not None]
    return float(np.mean(vals)) if vals else None


def aggregate(records):
    sig_ok = all(
        r["error"] is None
        and tuple(r["signature_lr"]) == EXPECTED_SIGNATURE
        and tuple(r["signature_kmw"]) == EXPECTED_SIGNATURE
        for r in records
    )
    return {
        "count": len(records),
        "failed_points": sum(r["error"] is not None for r in records),
        "max_conformal_defect": _max(records, "conformal_defect"),
        "mean_conformal_defect": _mean(records, "conformal_defect"),
        "max_effectiveness_defect": _max(records, "effectiveness_defect"),
        "mean_effectiveness_defect": _mean(records, "effectiveness_defect"),
        "max_closed_form_defect": _max(records, "closed_form_defect"),
        "signatures_all_3_3_0": sig_ok,
    }


def _structure(cfg):
    cost = build_cost(_field(cfg, "cost", "", required=True))
    rho = build_density(_field(cfg, "source_density", "", required=True), "source_density")
    rho_bar = build_density(_field(cfg, "target_density", "", required=True), "target_density")
    return MAStructure(cost, rho, rho_bar)


def run_verify_conformal(cfg, rng):
    s = _structure(cfg)
    records = sweep_points(s, cfg["samples"], rng)
    agg = aggregate(records)
    tol = cfg["tolerance"]
    checks = {
        "conformal_defect": _check(agg["max_conformal_defect"] if agg["max_conformal_defect"] is not None
                                   else float("inf"), tol),
        "signature": {"value": agg["signatures_all_3_3_0"], "pass": agg["signatures_all_3_3_0"]},
        "failed_points": _check(agg["failed_points"], 0),
    }
    return {"points": records, "aggregates": agg, "checks": checks}


def run_check_structure(cfg, rng):
    s = _structure(cfg)
    records = sweep_points(s, cfg["samples"], rng)
    agg = aggregate(records)
    checks = {
        "effectiveness_defect": _check(agg["max_effectiveness_defect"] if agg["max_effectiveness_defect"]
                                       is not None else float("inf"), EFFECTIVENESS_TOL),
        "failed_points": _check(agg["failed_points"], 0),
    }
    if agg["max_closed_form_defect"] is not None:
        checks["lr_closed_form_defect"] = _check(agg["max_closed_form_defect"], cfg["tolerance"])
    return {"points": records, "aggregates": agg, "checks": checks}


def _point_set(cfg, key, cost, rng):
    spec = _field(cfg, key, "", required=True)
    if isinstance(spec, str):
        try:
            return load_points(spec)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"field '{key}': {exc}") from None
    if isinstance(spec, dict) and "file" in spec:
        return _point_set({key: spec["file"]}, key, cost, rng)
    if isinstance(spec, dict):
        n = _field(spec, "count", key + ".", required=True)
        if not isinstance(n, int) or n < 1:
            raise ConfigError(f"field '{key}.count': expected a positive integer")
        density = build_density(_field(spec, "density", key + ".", required=True), key + ".density")
        return density.sample_interior(rng, n), np.full(n, 1.0 / n)
    raise ConfigError(f"field '{key}': expected a file path or a mapping")


def run_solve_ot(cfg, rng):
    solver = _field(cfg, "solver", "", "assignment")
    tol = cfg["tolerance"]
    if solver == "monotone-1d":
        return _run_monotone(cfg, tol)
    cost = build_cost(_field(cfg, "cost", "", {"kind": "quadratic"}))
    xs, a = _point_set(cfg, "source_points", cost, rng)
    ys, b = _point_set(cfg, "target_points", cost, rng)
    if xs.shape[1] != 3 or ys.shape[1] != 3:
        raise ConfigError("point sets must have three coordinates per point")
    try:
        problem = DiscreteOTProblem.from_cost(cost, xs, ys, a, b)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    solver_info = {"name": solver, "n_source": len(xs), "n_target": len(ys)}
    if solver == "assignment":
        try:
            plan, potentials = solve_assignment(problem)
        except ValueError as exc:
            raise ConfigError(f"field 'solver': {exc}") from None
        gap_tol = 1e-9
    elif solver == "sinkhorn":
        rel = float(_field(cfg, "epsilon", "", 0.1))
        if rel <= 0:
            raise ConfigError("field 'epsilon': must be positive")
        eps = rel * float(np.mean(np.abs(problem.cost_matrix)))
        res = sinkhorn(problem, eps, max_iter=int(_field(cfg, "max_iter", "", 2000)), tol=1e-10)
        plan, potentials = res.plan, res.potentials
        solver_info.update(epsilon=eps, iterations=res.iterations, newton_steps=res.newton_steps,
                           converged=res.converged)
        gap_tol = None
    else:
        raise ConfigError(f"field 'solver': unknown solver {solver!r}")
    rep = duality_report(problem, plan, potentials)
    solver_info.update(rep.as_dict())
    checks = {"marginal_defect": _check(rep.marginal_defect, tol)}
    if gap_tol is not None:
        checks["duality_gap"] = _check(abs(rep.gap), gap_tol)
        checks["duality_relation_defect"] = _check(rep.duality_relation_defect, gap_tol)
        checks["feasibility_violation"] = _check(rep.feasibility_violation, gap_tol)
    return {"solver": solver_info, "checks": checks}


def _run_monotone(cfg, tol):
    rho1 = build_density(_field(cfg, "source_density", "", required=True), "source_density", dim=1)
    rho1_bar = build_density(_field(cfg, "target_density", "", required=True), "target_density", dim=1)
    grid_n = _field(cfg, "grid_n", "", 256)
    if not isinstance(grid_n, int) or grid_n < 2:
        raise ConfigError("field 'grid_n': expected an integer >= 2")
    residual_tol = float(_field(cfg, "residual_tolerance", "", 5e-3))
    t_map = solve_monotone_1d(rho1, rho1_bar, grid_n)
    # embed in R^3: unit-box uniform factors in the two trailing coordinates
    side = Density.uniform([[-1.0, 1.0]])
    s = MAStructure(CostFunction.quadratic(), Density.separable([rho1, side, side]),
                    Density.separable([rho1_bar, side, side]))
    lo, hi = rho1.domain_box[0]
    pad = 1e-3 * (hi - lo)
    grid = np.column_stack([np.linspace(lo + pad, hi - pad, cfg["samples"]),
                            np.zeros(cfg["samples"]), np.zeros(cfg["samples"])])
    summary = el_residual_grid(s, potential_from_monotone_map(t_map), grid)
    monotone = bool(np.all(np.diff(t_map.values) >= 0))
    info = {
        "name": "monotone-1d",
        "grid_n": grid_n,
        "map_grid": t_map.grid.tolist(),
        "map_values": t_map.values.tolist(),
        "residual_max_abs": summary.max_abs,
        "residual_mean_abs": summary.mean_abs,
        "residual_failures": len(summary.failures),
        "monotone": monotone,
    }
    checks = {
        "ma_residual": _check(summary.max_abs, residual_tol),
        "monotone": {"value": monotone, "pass": monotone},
    }
    return {"solver": info, "checks": checks}


def run_sg_demo(cfg, rng):
    cost_spec = _field(cfg, "cost", "", {"kind": "semigeostrophic", "f": 1.0})
    f = float(_field(cfg, "coriolis_f", "", cost_spec.get("f", 1.0) if isinstance(cost_spec, dict) else 1.0))
    rho = build_density(_field(cfg, "source_density", "", required=True), "source_density")
    rho_bar = build_density(_field(cfg, "target_density", "", required=True), "target_density")
    config = SGConfig(f, rho, rho_bar)
    n = _field(cfg, "particles", "", 24)
    if not isinstance(n, int) or n < 1:
        raise ConfigError("field 'particles': expected a positive integer")
    demo = sg_assignment_demo(config, n_particles=n, sample_count=cfg["samples"], seed=cfg["seed"])
    tol = cfg["tolerance"]
    prop = demo.prop31.as_dict()
    checks = {k: _check(v, tol) for k, v in prop.items() if k != "sample_count"}
    d = demo.duality
    checks["duality_gap"] = _check(abs(d.gap), 1e-9)
    checks["duality_relation_defect"] = _check(d.duality_relation_defect, 1e-9)
    checks["feasibility_violation"] = _check(d.feasibility_violation, 1e-9)
    return {
        "prop31": prop,
        "solver": dict(d.as_dict(), name="assignment", particles=n,
                       initial_energy=demo.initial_energy,
                       minimized_energy=demo.minimized_energy,
                       assignment=demo.assignment.tolist()),
        "checks": checks,
    }


RUNNERS = {
    "verify-conformal": run_verify_conformal,
    "check-structure": run_check_structure,
    "solve-ot": run_solve_ot,
    "sg-demo": run_sg_demo,
}


def run(cfg):
    """Execute a validated configuration; returns ``(exit_code, report)``."""
    cfg = validate(cfg)
    rng = np.random.default_rng(cfg["seed"])
    body = RUNNERS[cfg["command"]](cfg, rng)
    passed = all(c["pass"] for c in body["checks"].values())
    # output locations do not affect results and stay out of the echo
    echo = {k: v for k, v in cfg.items() if k not in ("out", "points_csv")}
    report = {
        "schema_version": SCHEMA_VERSION,
        "toolkit_version": __version__,
        "command": cfg["command"],
        "config": echo,
        "passed": passed,
    }
    report.update(body)
    return (0 if passed else 1), report


def write_outputs(report, cfg):
    out = Path(cfg.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    if cfg.get("points_csv") and "points" in report:
        with open(out / "points.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for rec in report["points"]:
                sig = rec["signature_lr"] or [None] * 3
                writer.writerow([*rec["x"], *rec["xbar"], rec["conformal_defect"], *sig,
                                 rec["effectiveness_defect"]])


def main(argv=None):
    parser = argparse.ArgumentParser(prog="otmageom", description=__doc__.split("\n\n")[0])
    parser.add_argument("config", help="YAML configuration file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--samples", type=int)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--out", help="output directory (default: out)")
    parser.add_argument("--csv", action="store_true", help="also write points.csv")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args.seed, args.samples, args.tol,
                              args.out, args.csv)
        status, report = run(cfg)
    except ConfigError as exc:
        print(f"otmageom: configuration error: {exc}", file=sys.stderr)
        return 2
    write_outputs(report, cfg)
    failed = [name for name, c in report["checks"].items() if not c["pass"]]
    if failed:
        print(f"otmageom: {report['command']} FAILED: {', '.join(failed)}", file=sys.stderr)
    else:
        log.info("%s passed", report["command"])
    return status


if __name__ == "__main__":
    sys.exit(main())
