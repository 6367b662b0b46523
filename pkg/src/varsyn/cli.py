"""Command-line front end: study files in, reports and grids out.

Verbs: ``analyze``, ``optimize``, ``contour``, ``mc-check``,
``pi-reduce``.  Every verb reads a JSON study file (``--study``) and
writes its machine-readable result to ``--out`` (JSON, or CSV for
``contour``); a human-readable summary goes to stdout.  Reports contain
no timestamps, so identical inputs give byte-identical outputs.

Exit codes:
    0  success
    2  input could not be read, or is not valid JSON
    3  validation error (schema, cross-references, infeasible study)
    4  non-convergence (optimiser stalled, or MC agreement check failed)
    5  runtime evaluation error (domain errors while computing)
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .design import (
    DesignSolution,
    InfeasibleStudyError,
    Study,
    evaluate_candidate,
    optimize,
)
from .expr import EvalError, ExprSyntaxError, evaluate, parse, to_text
from .mc import McSampleError, simulate
from .pi_groups import DimensionedVariable, DimensionError, infer_dimensions
from .pi_groups import reduce as reduce_to_groups
from .synthesis import (
    Correlation,
    CorrelationError,
    CorrelationSet,
    DesignVariable,
    LinkModel,
    VarianceDecomposition,
    rank_contributions,
    transmit_at,
)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NONCONVERGED = 4
EXIT_RUNTIME = 5

_STUDY_KEYS = {"transfer", "target", "variables", "correlations", "constraints", "cov_limit"}
_VARIABLE_KEYS = {"name", "nominal", "link", "lower", "upper"}
_LINK_KEYS = {"kind", "p", "c", "sigma"}
_CORRELATION_KEYS = {"a", "b", "rho"}


class StudyValidationError(ValueError):
    """Study file fails schema or cross-reference validation."""


# ---------------------------------------------------------------------------
# Study file loading
# ---------------------------------------------------------------------------

def _require(condition: bool, message: str) -> None:
    if not condition:
        raise StudyValidationError(message)


def _check_keys(mapping: dict, allowed: set, where: str) -> None:
    unknown = set(mapping) - allowed
    _require(not unknown, f"{where}: unknown key(s) {sorted(unknown)}")


def _number(value, where: str) -> float:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool),
             f"{where}: expected a number")
    return float(value)


def _load_link(raw, where: str) -> LinkModel:
    _require(isinstance(raw, dict), f"{where}: expected an object")
    _check_keys(raw, _LINK_KEYS, where)
    kind = raw.get("kind")
    _require(isinstance(kind, str), f"{where}.kind: expected a string")
    if kind == "fixed-sigma":
        _require("sigma" in raw, f"{where}: fixed-sigma link requires 'sigma'")
        _require("c" not in raw and "p" not in raw,
                 f"{where}: fixed-sigma link does not take 'c' or 'p'")
        return LinkModel.fixed(_number(raw["sigma"], f"{where}.sigma"))
    if kind == "power-link":
        _require("c" in raw and "p" in raw,
                 f"{where}: power-link requires both 'c' and 'p'")
        _require("sigma" not in raw, f"{where}: power-link does not take 'sigma'")
        return LinkModel.power(_number(raw["c"], f"{where}.c"),
                               _number(raw["p"], f"{where}.p"))
    raise StudyValidationError(
        f"{where}.kind: expected 'fixed-sigma' or 'power-link', got {kind!r}"
    )


def load_study(path) -> Study:
    """Load and validate a JSON study file (strict: unknown keys are errors)."""
    text = Path(path).read_text(encoding="utf-8")
    raw = json.loads(text)  # json.JSONDecodeError carries line/column
    _require(isinstance(raw, dict), "study file: top level must be an object")
    _check_keys(raw, _STUDY_KEYS, "study file")
    for key in ("transfer", "target", "variables"):
        _require(key in raw, f"study file: missing required key '{key}'")

    _require(isinstance(raw["transfer"], str), "transfer: expected a string")
    try:
        transfer = parse(raw["transfer"])
    except ExprSyntaxError as exc:
        raise StudyValidationError(f"transfer: {exc}") from None
    target = _number(raw["target"], "target")

    _require(isinstance(raw["variables"], list) and raw["variables"],
             "variables: expected a non-empty array")
    variables = []
    for i, item in enumerate(raw["variables"]):
        where = f"variables[{i}]"
        _require(isinstance(item, dict), f"{where}: expected an object")
        _check_keys(item, _VARIABLE_KEYS, where)
        for key in ("name", "nominal", "link"):
            _require(key in item, f"{where}: missing required key '{key}'")
        _require(isinstance(item["name"], str), f"{where}.name: expected a string")
        kwargs = {}
        if "lower" in item:
            kwargs["lower"] = _number(item["lower"], f"{where}.lower")
        if "upper" in item:
            kwargs["upper"] = _number(item["upper"], f"{where}.upper")
        try:
            variables.append(
                DesignVariable(
                    name=item["name"],
                    nominal=_number(item["nominal"], f"{where}.nominal"),
                    link=_load_link(item["link"], f"{where}.link"),
                    **kwargs,
                )
            )
        except ValueError as exc:
            raise StudyValidationError(f"{where}: {exc}") from None

    entries = []
    for i, item in enumerate(raw.get("correlations", [])):
        where = f"correlations[{i}]"
        _require(isinstance(item, dict), f"{where}: expected an object")
        _check_keys(item, _CORRELATION_KEYS, where)
        for key in _CORRELATION_KEYS:
            _require(key in item, f"{where}: missing required key '{key}'")
        try:
            entries.append(
                Correlation(item["a"], item["b"], _number(item["rho"], f"{where}.rho"))
            )
        except CorrelationError as exc:
            raise StudyValidationError(f"{where}: {exc}") from None

    constraints = []
    for i, text_item in enumerate(raw.get("constraints", [])):
        where = f"constraints[{i}]"
        _require(isinstance(text_item, str), f"{where}: expected a string")
        try:
            constraints.append(parse(text_item))
        except ExprSyntaxError as exc:
            raise StudyValidationError(f"{where}: {exc}") from None

    cov_limit = _number(raw.get("cov_limit", 0.2), "cov_limit")

    try:
        return Study(
            transfer=transfer,
            response_target=target,
            variables=tuple(variables),
            correlations=CorrelationSet(tuple(entries)),
            inequality_constraints=tuple(constraints),
            cov_limit=cov_limit,
        )
    except (ValueError, CorrelationError) as exc:
        raise StudyValidationError(str(exc)) from None


def bundled_study_path(name: str) -> Path:
    """Filesystem path of a study file shipped with the package."""
    return Path(resources.files("varsyn.studies") / f"{name}.json")


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _parse_assignments(items: Optional[Sequence[str]], flag: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise StudyValidationError(f"{flag}: expected NAME=VALUE, got {item!r}")
        try:
            out[name] = float(value)
        except ValueError:
            raise StudyValidationError(f"{flag}: {value!r} is not a number") from None
    return out


def _apply_rho_flags(study: Study, items: Optional[Sequence[str]]) -> Study:
    for item in items or []:
        pair, sep, value = item.partition("=")
        a, colon, b = pair.partition(":")
        if not sep or not colon or not a or not b:
            raise StudyValidationError(f"--rho: expected A:B=VALUE, got {item!r}")
        try:
            rho = float(value)
        except ValueError:
            raise StudyValidationError(f"--rho: {value!r} is not a number") from None
        try:
            study = study.with_correlation(a, b, rho)
        except (ValueError, CorrelationError) as exc:
            raise StudyValidationError(f"--rho: {exc}") from None
    return study


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _decomposition_json(d: VarianceDecomposition) -> dict:
    return {
        "per_variable": dict(d.per_variable),
        "per_pair": {f"{a}:{b}": value for (a, b), value in d.per_pair.items()},
        "total": d.total,
        "validity_warnings": list(d.validity_warnings),
    }


def _solution_json(sol: DesignSolution) -> dict:
    feas = sol.feasibility
    return {
        "nominals": dict(sol.nominals),
        "transmitted_variance": sol.transmitted_variance,
        "achieved_response": sol.achieved_response,
        "decomposition": _decomposition_json(sol.decomposition),
        "feasibility": {
            "equality_residual": feas.equality_residual,
            "bound_violations": dict(feas.bound_violations),
            "inequality_violations": dict(feas.inequality_violations),
            "active_constraints": list(feas.active_constraints),
            "ok": feas.ok,
        },
        "iterations": sol.iterations,
        "converged": sol.converged,
        "sign_convention": sol.sign_convention,
    }


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _print_decomposition(study: Study, d: VarianceDecomposition) -> None:
    print(f"  total transmitted variance: {_fmt(d.total)}")
    if d.total > 0.0:
        for entry in rank_contributions(d):
            print(
                f"    {entry.source}: {_fmt(entry.contribution)}"
                f" ({100.0 * entry.share:.1f}%)"
            )
    else:
        print("    (all contributions are zero; ranking is undefined)")
    for name in d.validity_warnings:
        print(
            f"  warning: variation of {name!r} exceeds {100.0 * study.cov_limit:.0f}%"
            " of its nominal; the first-order estimate may be inaccurate"
        )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_analyze(args) -> int:
    study = _apply_rho_flags(load_study(args.study), args.rho)
    point = study.nominal_assignment()
    overrides = _parse_assignments(args.point, "--point")
    unknown = set(overrides) - set(point)
    if unknown:
        raise StudyValidationError(f"--point: unknown variable(s) {sorted(unknown)}")
    point.update(overrides)

    sol = evaluate_candidate(study, point)
    ranking = None
    if sol.decomposition.total > 0.0:
        ranking = [
            {"source": r.source, "contribution": r.contribution, "share": r.share}
            for r in rank_contributions(sol.decomposition)
        ]
    payload = {
        "command": "analyze",
        "transfer": to_text(study.transfer),
        "point": dict(sol.nominals),
        "response": sol.achieved_response,
        "decomposition": _decomposition_json(sol.decomposition),
        "ranking": ranking,
        "cov_limit": study.cov_limit,
    }
    if ranking is None:
        payload["note"] = "total transmitted variance is zero; ranking is undefined"
    _write_json(args.out, payload)

    print(f"analyze: {to_text(study.transfer)}")
    print(f"  response at point: {_fmt(sol.achieved_response)}")
    _print_decomposition(study, sol.decomposition)
    print(f"  report written to {args.out}")
    return EXIT_OK


def _cmd_optimize(args) -> int:
    study = _apply_rho_flags(load_study(args.study), args.rho)
    init = study.nominal_assignment()
    overrides = _parse_assignments(args.init, "--init")
    unknown = set(overrides) - set(init)
    if unknown:
        raise StudyValidationError(f"--init: unknown variable(s) {sorted(unknown)}")
    init.update(overrides)

    sol = optimize(study, init=init, sign_convention=args.sign_convention)
    payload = {"command": "optimize", "target": study.response_target}
    payload.update(_solution_json(sol))
    _write_json(args.out, payload)

    print(f"optimize: target response {_fmt(study.response_target)}")
    for name, value in sol.nominals.items():
        print(f"  {name} = {_fmt(value)}")
    print(f"  achieved response: {_fmt(sol.achieved_response)}")
    _print_decomposition(study, sol.decomposition)
    if sol.feasibility.active_constraints:
        print("  active constraints: " + ", ".join(sol.feasibility.active_constraints))
    print(f"  converged: {sol.converged} ({sol.iterations} objective evaluations)")
    print(f"  report written to {args.out}")
    return EXIT_OK if sol.converged else EXIT_NONCONVERGED


def _parse_range(text: str, flag: str) -> tuple[float, float]:
    lo, sep, hi = text.partition(":")
    if not sep:
        raise StudyValidationError(f"{flag}: expected LO:HI, got {text!r}")
    try:
        return float(lo), float(hi)
    except ValueError:
        raise StudyValidationError(f"{flag}: {text!r} is not a numeric range") from None


def _cmd_contour(args) -> int:
    study = _apply_rho_flags(load_study(args.study), args.rho)
    names = study.names()
    x_name, y_name = args.x, args.y
    if x_name not in names or y_name not in names:
        raise StudyValidationError("--x/--y must name declared design variables")
    if x_name == y_name:
        raise StudyValidationError("--x and --y must differ")
    if args.nx < 2 or args.ny < 2:
        raise StudyValidationError("--nx and --ny must be at least 2")
    x_lo, x_hi = _parse_range(args.x_range, "--x-range")
    y_lo, y_hi = _parse_range(args.y_range, "--y-range")

    fixed = study.nominal_assignment()
    overrides = _parse_assignments(args.fix, "--fix")
    unknown = set(overrides) - set(fixed)
    if unknown:
        raise StudyValidationError(f"--fix: unknown variable(s) {sorted(unknown)}")
    if {x_name, y_name} & set(overrides):
        raise StudyValidationError("--fix cannot override the grid axes")
    fixed.update(overrides)

    links = {v.name: v.link for v in study.variables}
    xs = [float(v) for v in np.linspace(x_lo, x_hi, args.nx)]
    ys = [float(v) for v in np.linspace(y_lo, y_hi, args.ny)]
    lines = [f"{x_name},{y_name},variance,response"]
    for x_value in xs:
        for y_value in ys:
            point = dict(fixed)
            point[x_name] = x_value
            point[y_name] = y_value
            sigmas = {name: links[name].sigma_at(point[name]) for name in names}
            decomposition = transmit_at(
                study.transfer,
                point,
                sigmas,
                correlations=study.correlations,
                cov_limit=study.cov_limit,
            )
            variance = max(decomposition.total, 0.0)
            response = evaluate(study.transfer, point)
            lines.append(f"{x_value!r},{y_value!r},{variance!r},{response!r}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")

    print(f"contour: {args.nx} x {args.ny} grid over {x_name}, {y_name}")
    print(f"  rows ordered by {x_name} (outer) then {y_name} (inner)")
    print(f"  grid written to {args.out}")
    return EXIT_OK


def _cmd_mc_check(args) -> int:
    study = _apply_rho_flags(load_study(args.study), args.rho)
    point = study.nominal_assignment()
    sigmas = {v.name: v.link.sigma_at(v.nominal) for v in study.variables}
    decomposition = transmit_at(
        study.transfer,
        point,
        sigmas,
        correlations=study.correlations,
        cov_limit=study.cov_limit,
    )
    estimate = simulate(
        study.transfer, study.variables, study.correlations, n=args.n, seed=args.seed
    )
    total = decomposition.total
    gap = abs(estimate.variance - total) / total if total > 0.0 else abs(estimate.variance)
    passed = gap <= args.threshold
    payload = {
        "command": "mc-check",
        "delta_total": total,
        "mc": {
            "n": estimate.n,
            "mean": estimate.mean,
            "variance": estimate.variance,
            "se_mean": estimate.se_mean,
            "se_variance": estimate.se_variance,
            "seed": estimate.seed,
        },
        "relative_gap": gap,
        "threshold": args.threshold,
        "passed": passed,
    }
    _write_json(args.out, payload)

    print(f"mc-check: n={estimate.n}, seed={estimate.seed}")
    print(f"  first-order variance: {_fmt(total)}")
    print(
        f"  monte-carlo variance: {_fmt(estimate.variance)}"
        f" (se {_fmt(estimate.se_variance)})"
    )
    print(f"  relative gap: {_fmt(gap)} (threshold {_fmt(args.threshold)})")
    print(f"  {'PASS' if passed else 'FAIL'}; report written to {args.out}")
    return EXIT_OK if passed else EXIT_NONCONVERGED


def _parse_dimension_spec(text: str) -> dict[str, Fraction]:
    """Parse e.g. ``length^3`` or ``mass*length^-2`` into exponents."""
    out: dict[str, Fraction] = {}
    for factor in text.split("*"):
        factor = factor.strip()
        if not factor:
            raise StudyValidationError(f"--dim: empty factor in {text!r}")
        name, caret, power = factor.partition("^")
        name = name.strip()
        if not name.isidentifier():
            raise StudyValidationError(f"--dim: bad dimension name in {factor!r}")
        try:
            exponent = Fraction(power.strip()) if caret else Fraction(1)
        except (ValueError, ZeroDivisionError):
            raise StudyValidationError(f"--dim: bad exponent in {factor!r}") from None
        out[name] = out.get(name, Fraction(0)) + exponent
    return {name: e for name, e in out.items() if e != 0}


def _cmd_pi_reduce(args) -> int:
    study = load_study(args.study)
    names = study.names()

    dim_specs: dict[str, dict[str, Fraction]] = {
        name: {"length": Fraction(1)} for name in names
    }
    for item in args.dim or []:
        name, sep, spec = item.partition("=")
        if not sep or name not in names:
            raise StudyValidationError(
                f"--dim: expected NAME=SPEC with a declared variable, got {item!r}"
            )
        dim_specs[name] = _parse_dimension_spec(spec)

    response = args.response_name
    if response in names:
        raise StudyValidationError(
            f"--response-name: {response!r} collides with a design variable"
        )
    response_dims = infer_dimensions(study.transfer, dim_specs)

    variables = [DimensionedVariable(response, response_dims)]
    variables.extend(DimensionedVariable(name, dim_specs[name]) for name in names)

    repeating = None
    if args.repeating:
        repeating = []
        for item in args.repeating:
            repeating.extend(part.strip() for part in item.split(",") if part.strip())
    groups = reduce_to_groups(variables, repeating)

    payload = {
        "command": "pi-reduce",
        "response": response,
        "groups": [
            {
                "name": f"pi{i}",
                "text": group.as_text(),
                "powers": {name: str(power) for name, power in group.powers.items()},
            }
            for i, group in enumerate(groups)
        ],
    }
    _write_json(args.out, payload)

    print(f"pi-reduce: {len(groups)} dimensionless group(s)")
    for i, group in enumerate(groups):
        print(f"  pi{i} = {group.as_text()}")
    print(f"  report written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varsyn",
        description="Variance transmission analysis and robust parameter design.",
        epilog=(
            "exit codes: 0 ok, 2 unreadable/unparseable input, 3 validation error, "
            "4 non-convergence or failed MC check, 5 runtime evaluation error"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--study", required=True, help="path to a JSON study file")
        p.add_argument("--out", required=True, help="output file path")

    p = sub.add_parser("analyze", help="decompose transmitted variance at a point")
    common(p)
    p.add_argument("--point", action="append", metavar="NAME=VALUE",
                   help="override a nominal for this analysis (repeatable)")
    p.add_argument("--rho", action="append", metavar="A:B=VALUE",
                   help="override or add a pairwise correlation (repeatable)")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("optimize", help="choose nominals minimising transmitted variance")
    common(p)
    p.add_argument("--init", action="append", metavar="NAME=VALUE",
                   help="override the starting point (repeatable)")
    p.add_argument("--rho", action="append", metavar="A:B=VALUE")
    p.add_argument("--sign-convention", choices=("signed", "magnitude"),
                   default="signed",
                   help="how correlation cross terms enter the objective")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("contour", help="emit a CSV grid of variance and response")
    common(p)
    p.add_argument("--x", required=True, help="variable on the first axis")
    p.add_argument("--y", required=True, help="variable on the second axis")
    p.add_argument("--x-range", required=True, metavar="LO:HI")
    p.add_argument("--y-range", required=True, metavar="LO:HI")
    p.add_argument("--nx", type=int, required=True)
    p.add_argument("--ny", type=int, required=True)
    p.add_argument("--fix", action="append", metavar="NAME=VALUE",
                   help="fix a non-axis variable (default: study nominal)")
    p.add_argument("--rho", action="append", metavar="A:B=VALUE")
    p.set_defaults(func=_cmd_contour)

    p = sub.add_parser("mc-check", help="Monte-Carlo check of the first-order variance")
    common(p)
    p.add_argument("--n", type=int, default=1_000_000, help="sample count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.02,
                   help="maximum acceptable relative gap")
    p.add_argument("--rho", action="append", metavar="A:B=VALUE")
    p.set_defaults(func=_cmd_mc_check)

    p = sub.add_parser("pi-reduce", help="dimensionless groups of the study variables")
    common(p)
    p.add_argument("--response-name", default="y",
                   help="name for the response in the groups (default: y)")
    p.add_argument("--repeating", action="append", metavar="NAME[,NAME...]",
                   help="repeating variables (default: chosen automatically)")
    p.add_argument("--dim", action="append", metavar="NAME=SPEC",
                   help="dimensions of a variable, e.g. D=length "
                        "or F=mass*length*time^-2 (default: length)")
    p.set_defaults(func=_cmd_pi_reduce)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except json.JSONDecodeError as exc:
        print(f"error: study file is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: cannot read input: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (EvalError, McSampleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, InfeasibleStudyError) as exc:
        # StudyValidationError, CorrelationError, DimensionError,
        # ExprSyntaxError and the optimizer preconditions all land here
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
