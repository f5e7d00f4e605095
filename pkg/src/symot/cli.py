"""Command-line front end: scenario configs in, report.json and tables.csv out.

Exit codes: 0 when every assertion of the requested tasks holds, 2 when one
fails, 1 on usage, config or guard errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .core import (
    TABLE_CAP,
    CostSpec,
    DiscreteMeasure,
    GuardError,
    SupportSet,
    VectorFieldFamily,
    build_cost_table,
)
from .involution_search import ENUM_CAP, count_involutions, magic_test, solve_mk_cyc
from .mmot_solver import duality_report, solve_entropic, solve_mk_sym
from .monotonicity import check_jointly_n_monotone, monotone_flags, polar_decompose, polarity_value
from .regularization import as_grid_function, make_grid, prop31_audit

TASKS = ("duality", "cyc", "decompose", "regularize", "monotone", "sce")

_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["instance", "cost", "N", "tasks"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "instance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "points": _MATRIX,
                "weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "generator": {
                    "type": "object",
                    "required": ["kind", "n", "d"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["uniform-grid", "random-cloud"]},
                        "n": {"type": "integer", "minimum": 1},
                        "d": {"type": "integer", "minimum": 1},
                        "seed": {"type": "integer", "minimum": 0},
                        "radius": {"type": "number", "exclusiveMinimum": 0},
                    },
                    "if": {"properties": {"kind": {"const": "random-cloud"}}},
                    "then": {"required": ["seed"]},
                },
            },
            "oneOf": [{"required": ["points"]}, {"required": ["generator"]}],
        },
        "cost": {
            "type": "object",
            "required": ["family"],
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["quadratic", "plakhov", "coulomb", "vector-field", "table"]},
                "fields": {
                    "type": "array",
                    "items": {"oneOf": [{"enum": ["identity", "negative", "zero"]}, _MATRIX]},
                },
                "values": {"type": "array"},
            },
        },
        "N": {"type": "integer", "minimum": 2},
        "tasks": {"type": "array", "items": {"enum": list(TASKS)}, "uniqueItems": True, "minItems": 1},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                k: {"type": "number", "exclusiveMinimum": 0}
                for k in ("duality", "gap", "certificate", "polarity")
            },
        },
        "methods": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "cyc": {"enum": ["exact", "local", "auto"]},
                "seed": {"type": "integer", "minimum": 0},
                "restarts": {"type": "integer", "minimum": 1},
                "moves": {"type": "integer", "minimum": 1},
                "entropic_epsilon": {"type": "number", "exclusiveMinimum": 0},
                "grid_m": {"type": "integer", "minimum": 3},
            },
        },
        "sce": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 1}},
        },
        "output": {"type": "string"},
    },
}

DEFAULT_TOL = {"duality": 1e-7, "gap": 1e-7, "certificate": 1e-6, "polarity": 1e-9}


class ConfigError(ValueError):
    pass


# instances

def git_blob_sha1(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def generate_points(kind: str, n: int, d: int, seed: int | None = None, radius: float = 1.0) -> np.ndarray:
    """Deterministic point generators.

    ``uniform-grid`` places k = n^(1/d) equispaced values per axis on
    [-radius, radius] / sqrt(d). ``random-cloud`` draws n points uniformly in the
    ball from a Philox stream keyed by ``seed`` and rounds them to 1e-12.
    """
    if kind == "uniform-grid":
        k = round(n ** (1.0 / d))
        if k**d != n:
            raise ConfigError(f"uniform-grid needs n to be a perfect d-th power, got n={n}, d={d}")
        axis = np.linspace(-radius, radius, k) / math.sqrt(d) if k > 1 else np.zeros(1)
        mesh = np.meshgrid(*[axis] * d, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
    elif kind == "random-cloud":
        if seed is None:
            raise ConfigError("random-cloud needs a seed")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = rng.random(n) ** (1.0 / d)
        pts = radius * (1 - 1e-9) * g * r[:, None]
    else:
        raise ConfigError(f"unknown generator {kind!r}")
    return np.round(pts, 12) + 0.0


def build_instance(cfg: dict):
    inst = cfg["instance"]
    if "points" in inst:
        pts = np.asarray(inst["points"], dtype=float)
        if pts.ndim != 2:
            raise ConfigError("points must be a list of coordinate lists")
        radius = inst.get("radius")
    else:
        g = inst["generator"]
        radius = g.get("radius", 1.0)
        pts = generate_points(g["kind"], g["n"], g["d"], g.get("seed"), radius)
    support = SupportSet.from_points(pts, radius)
    if "weights" in inst:
        w = np.asarray(inst["weights"], dtype=float)
        mu = DiscreteMeasure(support, w / w.sum())
    else:
        mu = DiscreteMeasure.uniform(support)
    return support, mu


def build_family(cfg: dict, support: SupportSet) -> VectorFieldFamily | None:
    cost = cfg["cost"]
    if cost["family"] != "vector-field":
        return None
    fields = cost.get("fields")
    if fields is None or len(fields) != cfg["N"] - 1:
        raise ConfigError("vector-field cost needs N-1 fields")
    out = []
    for f in fields:
        if f == "identity":
            out.append(support.points)
        elif f == "negative":
            out.append(-support.points)
        elif f == "zero":
            out.append(np.zeros_like(support.points))
        else:
            arr = np.asarray(f, dtype=float)
            if arr.shape != support.points.shape:
                raise ConfigError("explicit field must have one vector per atom")
            out.append(arr)
    return VectorFieldFamily(np.stack(out))


def build_cost(cfg: dict, support: SupportSet, family):
    cost = cfg["cost"]
    values = np.asarray(cost["values"], dtype=float) if "values" in cost else None
    spec = CostSpec(cost["family"], cfg["N"], family, values)
    return build_cost_table(spec, support)


# serialization

def _clean(x):
    """Plain JSON types; -0.0 becomes 0.0 and non-finite floats become strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if not math.isfinite(v):
            return str(v)
        return v + 0.0
    return x


def dumps(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def flat_rows(scenario: str, results: dict) -> list[tuple]:
    rows = []

    def walk(task, prefix, v):
        if isinstance(v, dict):
            for k in sorted(v):
                walk(task, f"{prefix}.{k}" if prefix else k, v[k])
        elif isinstance(v, (bool, int, float, str, np.floating, np.integer, np.bool_)):
            rows.append((scenario, task, prefix, _clean(v)))

    for task in sorted(results):
        walk(task, "", results[task])
    return rows


def write_outputs(out_dir: Path, report: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(dumps(report), encoding="utf-8")
    with open(out_dir / "tables.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "task", "metric", "value"])
        w.writerows(flat_rows(report["scenario"], report["results"]))


# tasks

def _check(results: dict, failures: list, task: str, name: str, ok: bool) -> None:
    results.setdefault("assertions", {})[name] = bool(ok)
    if not ok:
        failures.append(f"{task}: {name}")


def preflight(cfg: dict, n: int) -> None:
    N = cfg["N"]
    tasks = set(cfg["tasks"])
    if n**N > TABLE_CAP:
        raise GuardError(f"table guard exceeded: {n}^{N} > {TABLE_CAP}")
    method = cfg.get("methods", {}).get("cyc", "exact")
    needs_enum = (tasks & {"cyc"} and method == "exact") or (tasks & {"monotone"})
    if needs_enum and count_involutions(n, N) > ENUM_CAP:
        raise GuardError(f"enumeration guard exceeded: {count_involutions(n, N)} involutions > {ENUM_CAP}")
    if "sce" in tasks:
        sn = cfg.get("sce", {}).get("n", n)
        if count_involutions(sn, N) > ENUM_CAP:
            raise GuardError("enumeration guard exceeded")


def task_duality(c, mu, tol, methods) -> tuple[dict, list]:
    failures: list = []
    rep = duality_report(c, mu)
    sym_value, _ = solve_mk_sym(c, mu, "symmetrized")
    res = {
        "mk_sym": rep.mk_sym,
        "dk1": rep.dk1,
        "dk2": rep.dk2,
        "mk_standard_symmetrized": rep.mk_standard,
        "mk_sym_symmetrized_lp": sym_value,
        "gaps": rep.gaps,
        "potential": rep.potential.values,
    }
    _check(res, failures, "duality", "mk_sym_eq_dk1", rep.gaps["mk_sym-dk1"] <= tol["duality"])
    _check(res, failures, "duality", "mk_sym_eq_dk2", rep.gaps["mk_sym-dk2"] <= tol["duality"])
    _check(res, failures, "duality", "orbit_eq_symmetrized", abs(rep.mk_sym - sym_value) <= tol["duality"])
    eps = methods.get("entropic_epsilon")
    if eps is not None:
        val, _, _ = solve_entropic(c, mu, eps)
        res["entropic"] = {"epsilon": eps, "value": val}
    return res, failures


def task_cyc(c, mu, tol, methods, mk_sym) -> tuple[dict, list]:
    failures: list = []
    method = methods.get("cyc", "exact")
    if method == "auto":
        method = "exact" if count_involutions(c.n, c.N) <= ENUM_CAP else "local"
    sol = solve_mk_cyc(
        c, mu, method, seed=methods.get("seed", 0), restarts=methods.get("restarts", 20),
        moves=methods.get("moves", 1000), mk_sym=mk_sym,
    )
    S = sol.involution
    verdict = magic_test([S.power(i) for i in range(1, c.N)], mu, seed=methods.get("seed", 0))
    res = {
        "mk_cyc": sol.value,
        "method": method,
        "involution": S.cycle_notation(),
        "perm": list(S.perm),
        "optima": [o.cycle_notation() for o in sol.optima],
        "magic_test_passed": verdict.passed,
    }
    if mk_sym is not None:
        res["gap"] = mk_sym - sol.value
        _check(res, failures, "cyc", "mk_cyc_le_mk_sym", sol.value <= mk_sym + tol["gap"])
    _check(res, failures, "cyc", "powers_pass_magic_test", verdict.passed)
    return res, failures


def task_decompose(family, mu, tol, methods) -> tuple[dict, list]:
    failures: list = []
    rep = polar_decompose(family, mu, method=methods.get("cyc", "auto"), seed=methods.get("seed", 0),
                          restarts=methods.get("restarts", 20))
    res = {
        "involution": rep.involution.cycle_notation(),
        "mk_sym": rep.mk_sym,
        "mk_cyc": rep.mk_cyc,
        "gap": rep.gap,
        "max_slot_residual": float(rep.slot_residuals.max()),
        "max_first_slot_residual": float(rep.first_slot_residuals.max()),
        "monotone_flags": rep.monotone_flags,
        "method": rep.method,
        "lower_bound_only": rep.lower_bound_only,
    }
    if rep.single_field is not None:
        sf = rep.single_field
        res["single_field"] = {
            "slot": sf.slot,
            "pairing": sf.pairing.cycle_notation(),
            "F": sf.F,
            "diagonal_max": sf.diagonal_max,
            "cyclic_max": sf.cyclic_max,
            "max_inclusion_residual": float(sf.inclusion_residuals.max()),
        }
    _check(res, failures, "decompose", "sandwich", rep.gap >= -tol["gap"])
    if rep.gap <= tol["gap"]:
        _check(res, failures, "decompose", "certificate", rep.max_residual <= tol["certificate"])
    return res, failures


def task_regularize(c, mu, methods, H) -> tuple[dict, list]:
    failures: list = []
    grid = make_grid(mu.support, methods.get("grid_m", 9))
    audit = prop31_audit(as_grid_function(H), grid)
    res = {
        "m": grid.m,
        "tau": audit.tau,
        "items": {it.name: {"passed": it.passed, "residual": it.residual, "tolerance": it.tolerance,
                            "witness": list(it.witness)} for it in audit.items},
    }
    _check(res, failures, "regularize", "audit", audit.passed)
    return res, failures


def task_monotone(family, mu, tol) -> tuple[dict, list]:
    failures: list = []
    flags = monotone_flags(family, mu.support)
    _, worst, worst_sum = check_jointly_n_monotone(family, mu.support)
    pol = polarity_value(family, mu)
    res = {
        "flags": flags,
        "worst_cycle": list(worst),
        "worst_cycle_sum": worst_sum,
        "polarity_value": pol.value,
        "argmin": pol.involution.cycle_notation(),
        "argmin_count": len(pol.optima),
    }
    if flags["jointly"]:
        ident = any(S.is_identity() for S in pol.optima)
        _check(res, failures, "monotone", "polarity_zero_at_identity", abs(pol.value) <= tol["polarity"] and ident)
    if flags["strict"]:
        _check(res, failures, "monotone", "identity_unique", pol.identity_unique)
    return res, failures


def sce_points(n: int) -> np.ndarray:
    return ((np.arange(n) + 0.5) / n)[:, None]


def sce_experiment(n: int, N: int, method: str = "exact", seed: int = 0, restarts: int = 20) -> dict:
    """Coulomb co-motion experiment on n equispaced atoms of the unit interval."""
    if n < N:
        raise ValueError("need at least N atoms for a finite-cost involution")
    support = SupportSet.from_points(sce_points(n), 1.0)
    mu = DiscreteMeasure.uniform(support)
    c = build_cost_table(CostSpec("coulomb", N), support)
    mk_sym, _ = solve_mk_sym(c, mu)
    sol = solve_mk_cyc(c, mu, method, seed=seed, restarts=restarts, mk_sym=mk_sym)
    S = sol.involution
    return {
        "n": n,
        "N": N,
        "method": method,
        "points": support.points[:, 0],
        "value": sol.value,
        "v_ee_sce": -sol.value,
        "mk_sym": mk_sym,
        "gap": mk_sym - sol.value,
        "involution": S.cycle_notation(),
        "co_motion": {f"f{i}": S.power(i) for i in range(N)},
        "optima": [o.cycle_notation() for o in sol.optima],
    }


def run_scenario(cfg: dict, config_bytes: bytes) -> tuple[dict, list]:
    """Execute the configured tasks. Returns (report, failed assertions)."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    N = cfg["N"]
    tol = {**DEFAULT_TOL, **cfg.get("tolerances", {})}
    methods = cfg.get("methods", {})
    tasks = [t for t in TASKS if t in cfg["tasks"]]
    support, mu = build_instance(cfg)
    preflight(cfg, support.n)
    family = build_family(cfg, support)
    if ({"decompose", "monotone"} & set(tasks)) and family is None:
        raise ConfigError("decompose and monotone tasks need a vector-field cost")
    c = build_cost(cfg, support, family) if set(tasks) - {"sce"} else None

    results: dict = {}
    timings: dict = {}
    failures: list = []
    rep = None
    for task in tasks:
        t0 = time.perf_counter()
        if task == "duality":
            res, fail = task_duality(c, mu, tol, methods)
        elif task == "cyc":
            mk_sym = results["duality"]["mk_sym"] if "duality" in results else solve_mk_sym(c, mu)[0]
            res, fail = task_cyc(c, mu, tol, methods, mk_sym)
        elif task == "decompose":
            res, fail = task_decompose(family, mu, tol, methods)
        elif task == "regularize":
            rep = rep or duality_report(c, mu)
            res, fail = task_regularize(c, mu, methods, rep.hamiltonian)
        elif task == "monotone":
            res, fail = task_monotone(family, mu, tol)
        else:
            sn = cfg.get("sce", {}).get("n", support.n)
            method = "local" if methods.get("cyc") == "local" else "exact"
            res = sce_experiment(sn, N, method, methods.get("seed", 0), methods.get("restarts", 20))
            fail = []
            _check(res, fail, "sce", "mk_cyc_le_mk_sym", res["gap"] >= -tol["gap"])
        timings[task] = time.perf_counter() - t0
        results[task] = res
        failures += fail

    report = {
        "scenario": cfg.get("name", "scenario"),
        "version": __version__,
        "config": cfg,
        "config_sha1": git_blob_sha1(config_bytes),
        "instance": {"points": support.points, "weights": mu.weights, "N": N},
        "results": results,
        "failures": failures,
        "passed": not failures,
        "timings": timings,
    }
    return report, failures


def load_config(path: str) -> tuple[dict, bytes]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = yaml.safe_load(data)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    return cfg, data


def _out_dir(cfg: dict, override: str | None) -> Path:
    return Path(override or cfg.get("output") or "symot-out")


def cmd_run(args) -> int:
    cfg, data = load_config(args.config)
    report, failures = run_scenario(cfg, data)
    out = _out_dir(cfg, args.out)
    write_outputs(out, report)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    print(f"{report['scenario']}: {'PASS' if not failures else 'FAIL'} -> {out / 'report.json'}")
    return 0 if not failures else 2


def cmd_check_monotone(args) -> int:
    cfg, data = load_config(args.config)
    cfg = {**cfg, "tasks": ["monotone"]}
    report, failures = run_scenario(cfg, data)
    res = report["results"]["monotone"]
    flags = res["flags"]
    out = _out_dir(cfg, args.out)
    write_outputs(out, report)
    print(
        f"jointly={flags['jointly']} strict={flags['strict']} cyclic={flags['cyclic']} "
        f"worst_cycle={tuple(res['worst_cycle'])} sum={res['worst_cycle_sum']:.3e} "
        f"polarity={res['polarity_value']:.3e} argmin={res['argmin']}"
    )
    return 0 if flags["jointly"] and not failures else 2


def cmd_sce(args) -> int:
    params = {"n": args.n, "N": args.N, "method": args.method, "seed": args.seed, "restarts": args.restarts}
    if count_involutions(args.n, args.N) > ENUM_CAP and args.method == "exact":
        raise GuardError("enumeration guard exceeded")
    t0 = time.perf_counter()
    res = sce_experiment(args.n, args.N, args.method, args.seed, args.restarts)
    failures = [] if res["gap"] >= -DEFAULT_TOL["gap"] else ["sce: mk_cyc_le_mk_sym"]
    report = {
        "scenario": f"sce-n{args.n}-N{args.N}",
        "version": __version__,
        "config": params,
        "config_sha1": git_blob_sha1(json.dumps(params, sort_keys=True).encode()),
        "results": {"sce": res},
        "failures": failures,
        "passed": not failures,
        "timings": {"sce": time.perf_counter() - t0},
    }
    out = Path(args.out or "symot-out")
    write_outputs(out, report)
    print(f"S = {res['involution']}  V_ee = {res['v_ee_sce']:.12g}  gap = {res['gap']:.3e}")
    return 0 if not failures else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="symot", description="Cyclically symmetric multi-marginal transport")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sce", help="Coulomb co-motion experiment on the unit interval")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--method", choices=["exact", "local"], default="exact")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--restarts", type=int, default=20)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sce)
    m = sub.add_parser("check-monotone", help="monotonicity checks for a vector-field config")
    m.add_argument("config")
    m.add_argument("--out")
    m.set_defaults(func=cmd_check_monotone)
    v = sub.add_parser("version", help="print the version")
    v.set_defaults(func=lambda args: print(__version__) or 0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        return args.func(args)
    except (ConfigError, GuardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
