"""Choosing design nominals: constrained minimisation of transmitted variance.

A :class:`Study` bundles a transfer function, a response target, design
variables with variability links, pairwise correlations, and inequality
constraints (each an expression required to be >= 0).  :func:`optimize`
moves the nominals to minimise transmitted variance while holding the
response on target, honouring box bounds and inequalities.  Link models
are re-evaluated at each candidate point, so power-linked sigmas move
with the nominals while fixed sigmas do not.

The solve runs sequential quadratic programming (scipy's SLSQP) with
exact constraint jacobians from the dual-number differentiator,
followed by a Newton restoration step along the free coordinates that
drives the equality residual to machine level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize

from .autodiff import partials
from .expr import EvalError, Expr, evaluate, to_text
from .expr import variables as expr_variables
from .synthesis import (
    CorrelationSet,
    DesignVariable,
    EMPTY_CORRELATIONS,
    VarianceDecomposition,
    transmit_at,
)


class InfeasibleStudyError(RuntimeError):
    """No point satisfies the response target within bounds and constraints."""


@dataclass(frozen=True)
class Tolerances:
    """Convergence tolerances for :func:`optimize`.

    ``eq_tol`` is relative to ``max(1, |target|)``; ``con_tol`` is the
    absolute slack allowed on bounds and inequalities; ``step_tol`` is
    the solver's stationarity tolerance.
    """

    eq_tol: float = 1e-8
    con_tol: float = 1e-10
    step_tol: float = 1e-10

    def __post_init__(self):
        if min(self.eq_tol, self.con_tol, self.step_tol) <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class Study:
    """A complete parameter-design problem statement."""

    transfer: Expr
    response_target: float
    variables: tuple[DesignVariable, ...]
    correlations: CorrelationSet = EMPTY_CORRELATIONS
    inequality_constraints: tuple[Expr, ...] = ()
    cov_limit: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(
            self, "inequality_constraints", tuple(self.inequality_constraints)
        )
        names = [v.name for v in self.variables]
        if not names:
            raise ValueError("a study needs at least one design variable")
        if len(set(names)) != len(names):
            raise ValueError("duplicate design variable names")
        missing = set(expr_variables(self.transfer)) - set(names)
        if missing:
            raise ValueError(
                f"transfer function references undeclared variable(s): {sorted(missing)}"
            )
        for constraint in self.inequality_constraints:
            dangling = set(expr_variables(constraint)) - set(names)
            if dangling:
                raise ValueError(
                    f"constraint {to_text(constraint)!r} references undeclared "
                    f"variable(s): {sorted(dangling)}"
                )
        self.correlations.validate_names(names)

    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def variable(self, name: str) -> DesignVariable:
        for v in self.variables:
            if v.name == name:
                return v
        raise ValueError(f"unknown design variable {name!r}")

    def nominal_assignment(self) -> dict[str, float]:
        return {v.name: v.nominal for v in self.variables}

    def with_correlation(self, a: str, b: str, rho: float) -> "Study":
        known = set(self.names())
        for name in (a, b):
            if name not in known:
                raise ValueError(f"unknown design variable {name!r}")
        return Study(
            transfer=self.transfer,
            response_target=self.response_target,
            variables=self.variables,
            correlations=self.correlations.with_rho(a, b, rho),
            inequality_constraints=self.inequality_constraints,
            cov_limit=self.cov_limit,
        )


@dataclass(frozen=True)
class FeasibilityReport:
    """Constraint status at a point.

    Violations hold positive magnitudes beyond tolerance; active
    constraints are labelled ``"name:lower"`` / ``"name:upper"`` for
    bounds and by expression text for inequalities.
    """

    equality_residual: float
    bound_violations: dict[str, float]
    inequality_violations: dict[str, float]
    active_constraints: tuple[str, ...]
    ok: bool


@dataclass(frozen=True)
class DesignSolution:
    nominals: dict[str, float]
    transmitted_variance: float
    achieved_response: float
    decomposition: VarianceDecomposition
    feasibility: FeasibilityReport
    iterations: int
    converged: bool
    sign_convention: str = "signed"


@dataclass(frozen=True)
class SweepRow:
    rho: float
    solution: DesignSolution
    pair_contribution: float


_ACTIVE_TOL = 1e-7


def _assignment(names: Sequence[str], x: np.ndarray) -> dict[str, float]:
    return {name: float(value) for name, value in zip(names, x)}


def _decompose(study: Study, x: np.ndarray, pair_sign: str) -> VarianceDecomposition:
    point = _assignment(study.names(), x)
    sigmas = {v.name: v.link.sigma_at(point[v.name]) for v in study.variables}
    return transmit_at(
        study.transfer,
        point,
        sigmas,
        correlations=study.correlations,
        cov_limit=study.cov_limit,
        pair_sign=pair_sign,
    )


def _feasibility(study: Study, x: np.ndarray, tols: Tolerances) -> FeasibilityReport:
    names = study.names()
    point = _assignment(names, x)
    residual = evaluate(study.transfer, point) - study.response_target
    scale = max(1.0, abs(study.response_target))

    bound_violations: dict[str, float] = {}
    active: list[str] = []
    for v, value in zip(study.variables, x):
        if v.lower is not None:
            if v.lower - value > tols.con_tol:
                bound_violations[f"{v.name}:lower"] = float(v.lower - value)
            if abs(value - v.lower) <= _ACTIVE_TOL:
                active.append(f"{v.name}:lower")
        if v.upper is not None:
            if value - v.upper > tols.con_tol:
                bound_violations[f"{v.name}:upper"] = float(value - v.upper)
            if abs(value - v.upper) <= _ACTIVE_TOL:
                active.append(f"{v.name}:upper")

    inequality_violations: dict[str, float] = {}
    for constraint in study.inequality_constraints:
        text = to_text(constraint)
        value = evaluate(constraint, point)
        if value < -tols.con_tol:
            inequality_violations[text] = float(-value)
        if abs(value) <= _ACTIVE_TOL:
            active.append(text)

    ok = (
        abs(residual) <= tols.eq_tol * scale
        and not bound_violations
        and not inequality_violations
    )
    return FeasibilityReport(
        equality_residual=float(residual),
        bound_violations=bound_violations,
        inequality_violations=inequality_violations,
        active_constraints=tuple(active),
        ok=ok,
    )


def _bounds_list(study: Study) -> list[tuple[Optional[float], Optional[float]]]:
    return [(v.lower, v.upper) for v in study.variables]


def _clip(x: np.ndarray, bounds) -> np.ndarray:
    out = np.array(x, dtype=float)
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None and out[i] < lo:
            out[i] = lo
        if hi is not None and out[i] > hi:
            out[i] = hi
    return out


def _gradient_vector(e: Expr, names: Sequence[str], point: Mapping[str, float]) -> np.ndarray:
    grad = partials(e, point).partials
    return np.array([grad.get(name, 0.0) for name in names])


def _restore_equality(study: Study, x: np.ndarray, bounds, tols: Tolerances) -> np.ndarray:
    """Newton steps along free coordinates to pin the response on target.

    Moves only coordinates away from their active bounds, re-clipping
    after each step, and keeps the best iterate seen.
    """
    names = study.names()
    target = study.response_target
    scale = max(1.0, abs(target))
    best = np.array(x, dtype=float)
    best_residual = abs(evaluate(study.transfer, _assignment(names, best)) - target)
    current = best.copy()
    for _ in range(60):
        point = _assignment(names, current)
        residual = evaluate(study.transfer, point) - target
        if abs(residual) < best_residual:
            best = current.copy()
            best_residual = abs(residual)
        if abs(residual) <= 1e-13 * scale:
            break
        g = _gradient_vector(study.transfer, names, point)
        free = np.ones(len(names), dtype=bool)
        for i, (lo, hi) in enumerate(bounds):
            at_lower = lo is not None and abs(current[i] - lo) <= _ACTIVE_TOL
            at_upper = hi is not None and abs(current[i] - hi) <= _ACTIVE_TOL
            # a pinned coordinate may still move off its bound if the
            # correction points inward
            step_sign = -residual * g[i]
            if at_lower and step_sign < 0.0:
                free[i] = False
            if at_upper and step_sign > 0.0:
                free[i] = False
        gf = np.where(free, g, 0.0)
        denom = float(gf @ gf)
        if denom <= 1e-30:
            break
        current = _clip(current - residual * gf / denom, bounds)
    return best


class _Budget:
    """Objective-evaluation counter with a hard cap."""

    def __init__(self, cap: int):
        self.cap = cap
        self.count = 0
        self.best_x: Optional[np.ndarray] = None
        self.best_score = math.inf

    def tick(self, x: np.ndarray, value: float, violation: float) -> None:
        self.count += 1
        score = value + 1e3 * violation
        if score < self.best_score:
            self.best_score = score
            self.best_x = np.array(x, dtype=float)
        if self.count >= self.cap:
            raise _BudgetExhausted


class _BudgetExhausted(Exception):
    pass


def _violation_measure(study: Study, x: np.ndarray, point: Mapping[str, float]) -> float:
    total = abs(evaluate(study.transfer, point) - study.response_target)
    for v, value in zip(study.variables, x):
        if v.lower is not None:
            total += max(0.0, v.lower - value)
        if v.upper is not None:
            total += max(0.0, value - v.upper)
    for constraint in study.inequality_constraints:
        total += max(0.0, -evaluate(constraint, point))
    return total


def _run_slsqp(study: Study, x0: np.ndarray, pair_sign: str, budget: _Budget,
               tols: Tolerances):
    names = study.names()
    target = study.response_target

    def objective(x: np.ndarray) -> float:
        point = _assignment(names, x)
        try:
            value = _decompose(study, np.asarray(x, dtype=float), pair_sign).total
            violation = _violation_measure(study, np.asarray(x, dtype=float), point)
        except (EvalError, ValueError):
            budget.count += 1
            if budget.count >= budget.cap:
                raise _BudgetExhausted from None
            return 1e30
        budget.tick(np.asarray(x, dtype=float), value, violation)
        return value

    def eq_fun(x: np.ndarray) -> float:
        return evaluate(study.transfer, _assignment(names, x)) - target

    def eq_jac(x: np.ndarray) -> np.ndarray:
        return _gradient_vector(study.transfer, names, _assignment(names, x))

    constraints = [{"type": "eq", "fun": eq_fun, "jac": eq_jac}]
    for constraint in study.inequality_constraints:
        def ineq_fun(x, _c=constraint):
            return evaluate(_c, _assignment(names, x))

        def ineq_jac(x, _c=constraint):
            return _gradient_vector(_c, names, _assignment(names, x))

        constraints.append({"type": "ineq", "fun": ineq_fun, "jac": ineq_jac})

    return minimize(
        objective,
        x0,
        method="SLSQP",
        bounds=_bounds_list(study),
        constraints=constraints,
        options={"maxiter": 500, "ftol": min(tols.step_tol, 1e-12)},
    )


def _search_feasible(study: Study, x0: np.ndarray, tols: Tolerances) -> np.ndarray:
    """Phase-1 solve: minimise the squared equality residual within bounds."""
    names = study.names()
    target = study.response_target
    scale = max(1.0, abs(target))
    bounds = _bounds_list(study)

    def residual_sq(x: np.ndarray) -> float:
        try:
            r = evaluate(study.transfer, _assignment(names, x)) - target
        except EvalError:
            return 1e30
        return r * r

    constraints = []
    for constraint in study.inequality_constraints:
        constraints.append(
            {"type": "ineq", "fun": lambda x, _c=constraint: evaluate(_c, _assignment(names, x))}
        )

    starts = [np.array(x0, dtype=float)]
    midpoint = np.array(x0, dtype=float)
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None and hi is not None:
            midpoint[i] = 0.5 * (lo + hi)
    starts.append(midpoint)

    best_x, best_r = None, math.inf
    for start in starts:
        result = minimize(
            residual_sq,
            _clip(start, bounds),
            method="SLSQP",
            bounds=bounds,
            constraints=constraints,
            options={"maxiter": 300, "ftol": 1e-16},
        )
        x = _restore_equality(study, _clip(result.x, bounds), bounds, tols)
        r = abs(evaluate(study.transfer, _assignment(names, x)) - target)
        if r < best_r:
            best_x, best_r = x, r
    if best_x is None or best_r > 1e-6 * scale:
        raise InfeasibleStudyError(
            f"response target {target} is unreachable within bounds and "
            f"constraints (best residual {best_r:.3e})"
        )
    return best_x


def optimize(
    study: Study,
    init: Optional[Mapping[str, float]] = None,
    tols: Optional[Tolerances] = None,
    sign_convention: str = "signed",
    max_evals: int = 10_000,
) -> DesignSolution:
    """Minimise transmitted variance subject to the response target.

    ``init`` may override any subset of the study nominals and must be
    near-feasible (relative equality residual within 10%).  Returns the
    best point found with ``converged=False`` if the solver stalls or
    the evaluation budget runs out; raises
    :class:`InfeasibleStudyError` when no feasible point exists at all.
    """
    if sign_convention not in ("signed", "magnitude"):
        raise ValueError(
            f"sign_convention must be 'signed' or 'magnitude', got {sign_convention!r}"
        )
    tols = tols or Tolerances()
    names = study.names()
    start = study.nominal_assignment()
    if init:
        unknown = set(init) - set(names)
        if unknown:
            raise ValueError(f"init binds unknown variable(s): {sorted(unknown)}")
        start.update({k: float(v) for k, v in init.items()})
    x0 = np.array([start[name] for name in names])

    target = study.response_target
    scale = max(1.0, abs(target))
    initial_residual = abs(evaluate(study.transfer, start) - target)
    if initial_residual > 0.10 * scale:
        raise ValueError(
            "initial point is not near-feasible: relative equality residual "
            f"{initial_residual / scale:.3g} exceeds 10%"
        )

    bounds = _bounds_list(study)
    budget = _Budget(max_evals)
    exhausted = False
    try:
        result = _run_slsqp(study, _clip(x0, bounds), sign_convention, budget, tols)
        x = np.asarray(result.x, dtype=float)
        solver_ok = bool(result.success)
    except _BudgetExhausted:
        exhausted = True
        x = budget.best_x if budget.best_x is not None else x0
        solver_ok = False

    x = _restore_equality(study, _clip(x, bounds), bounds, tols)
    feas = _feasibility(study, x, tols)

    if not feas.ok and not exhausted:
        # one retry from a deliberately constructed feasible point
        x_feasible = _search_feasible(study, x0, tols)  # may raise
        try:
            result = _run_slsqp(study, x_feasible, sign_convention, budget, tols)
            x_retry = np.asarray(result.x, dtype=float)
            solver_ok = bool(result.success)
        except _BudgetExhausted:
            exhausted = True
            x_retry = budget.best_x if budget.best_x is not None else x_feasible
            solver_ok = False
        x_retry = _restore_equality(study, _clip(x_retry, bounds), bounds, tols)
        retry_feas = _feasibility(study, x_retry, tols)
        if retry_feas.ok or not feas.ok:
            x, feas = x_retry, retry_feas

    # never return a point worse than a feasible starting point
    init_feas = _feasibility(study, x0, tols)
    if init_feas.ok:
        init_value = _decompose(study, x0, sign_convention).total
        final_value = _decompose(study, x, sign_convention).total
        if final_value > init_value + 1e-12:
            x, feas = x0, init_feas
            solver_ok = False

    decomposition = _decompose(study, x, sign_convention)
    point = _assignment(names, x)
    return DesignSolution(
        nominals=point,
        transmitted_variance=decomposition.total,
        achieved_response=evaluate(study.transfer, point),
        decomposition=decomposition,
        feasibility=feas,
        iterations=budget.count,
        converged=bool(solver_ok and feas.ok and not exhausted),
        sign_convention=sign_convention,
    )


def evaluate_candidate(
    study: Study,
    point: Mapping[str, float],
    sign_convention: str = "signed",
    tols: Optional[Tolerances] = None,
) -> DesignSolution:
    """Report variance, response, and feasibility at a point, no optimisation.

    Link models are evaluated at the candidate values, so power-linked
    sigmas follow the point.  ``converged`` reflects feasibility only.
    """
    tols = tols or Tolerances()
    names = study.names()
    missing = set(names) - set(point)
    if missing:
        raise ValueError(f"point does not bind variable(s): {sorted(missing)}")
    x = np.array([float(point[name]) for name in names])
    decomposition = _decompose(study, x, sign_convention)
    feas = _feasibility(study, x, tols)
    assignment = _assignment(names, x)
    return DesignSolution(
        nominals=assignment,
        transmitted_variance=decomposition.total,
        achieved_response=evaluate(study.transfer, assignment),
        decomposition=decomposition,
        feasibility=feas,
        iterations=0,
        converged=feas.ok,
        sign_convention=sign_convention,
    )


def sweep_correlation(
    study: Study,
    pair: tuple[str, str],
    rhos: Sequence[float],
    sign_convention: str = "signed",
    init: Optional[Mapping[str, float]] = None,
    tols: Optional[Tolerances] = None,
    max_evals: int = 10_000,
) -> list[SweepRow]:
    """Re-optimise the study across a range of correlations for one pair.

    Under the ``magnitude`` convention the pair's covariance term
    enters the objective with positive sign; ``signed`` keeps the
    mathematical sign.  Each row records the optimum and the pair's
    contribution at that optimum.
    """
    a, b = pair
    for rho in rhos:
        if not -1.0 <= float(rho) <= 1.0:
            raise ValueError(f"correlation {rho} outside [-1, 1]")
    rows = []
    for rho in rhos:
        adjusted = study.with_correlation(a, b, float(rho))
        solution = optimize(
            adjusted,
            init=init,
            tols=tols,
            sign_convention=sign_convention,
            max_evals=max_evals,
        )
        contribution = solution.decomposition.per_pair.get(
            (a, b), solution.decomposition.per_pair.get((b, a), 0.0)
        )
        rows.append(
            SweepRow(rho=float(rho), solution=solution, pair_contribution=contribution)
        )
    return rows
