"""Dimensionless-group construction from variable dimension exponents.

Given variables with known dimension exponents (length, mass, time,
...), the nullspace of the dimension matrix yields a basis of
dimensionless products.  Groups are normalised so that each
non-repeating variable appears in exactly one group with exponent +1,
with the repeating variables supplying the balancing powers.  All
linear algebra is exact over rationals, so "dimensionless" means the
exponents sum to zero exactly, not approximately.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence, Union

from .expr import (
    BinOp,
    Call,
    Const,
    Expr,
    Neg,
    Node,
    PiConst,
    Var,
    _root,
    evaluate,
)

RationalLike = Union[int, str, Fraction]


class DimensionError(ValueError):
    """Dimensionally inconsistent expression or invalid reduction input."""


@dataclass(frozen=True)
class DimensionedVariable:
    """A variable name with exact rational dimension exponents."""

    name: str
    exponents: Mapping[str, Fraction]

    def __post_init__(self):
        normalized = {}
        for dim, exponent in dict(self.exponents).items():
            f = Fraction(exponent)
            if f != 0:
                normalized[str(dim)] = f
        object.__setattr__(self, "exponents", normalized)

    def exponent(self, dim: str) -> Fraction:
        return self.exponents.get(dim, Fraction(0))


@dataclass(frozen=True)
class PiGroup:
    """A dimensionless product of variable powers."""

    powers: dict[str, Fraction]

    def value(self, bindings: Mapping[str, float]) -> float:
        """Numeric value of the group at an assignment (positive values)."""
        out = 1.0
        for name, power in self.powers.items():
            out *= float(bindings[name]) ** float(power)
        return out

    def as_text(self) -> str:
        parts = []
        for name, power in self.powers.items():
            if power == 1:
                parts.append(name)
            elif power.denominator == 1:
                parts.append(f"{name}^{power.numerator}")
            else:
                parts.append(f"{name}^({power})")
        return "*".join(parts)


def _rref(rows: list[list[Fraction]]) -> tuple[list[list[Fraction]], list[int]]:
    """Reduced row-echelon form in place; returns (rows, pivot columns)."""
    pivots: list[int] = []
    row = 0
    n_rows = len(rows)
    n_cols = len(rows[0]) if rows else 0
    for col in range(n_cols):
        pivot = next((r for r in range(row, n_rows) if rows[r][col] != 0), None)
        if pivot is None:
            continue
        rows[row], rows[pivot] = rows[pivot], rows[row]
        inv = rows[row][col]
        rows[row] = [value / inv for value in rows[row]]
        for r in range(n_rows):
            if r != row and rows[r][col] != 0:
                factor = rows[r][col]
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[row])]
        pivots.append(col)
        row += 1
        if row == n_rows:
            break
    return rows, pivots


def _column_rank(columns: list[list[Fraction]]) -> int:
    if not columns:
        return 0
    rows = [[col[i] for col in columns] for i in range(len(columns[0]))]
    if not rows:
        return 0
    _, pivots = _rref([list(r) for r in rows])
    return len(pivots)


def reduce(
    variables: Sequence[DimensionedVariable],
    repeating: Optional[Sequence[str]] = None,
) -> list[PiGroup]:
    """Basis of dimensionless groups for the given variables.

    Returns ``len(variables) - rank`` groups, one per non-repeating
    variable (exponent +1), balanced by powers of the repeating set.
    When ``repeating`` is omitted, the lexicographically first maximal
    independent set of variables is used, which makes the output
    deterministic.
    """
    if not variables:
        raise DimensionError("at least one variable is required")
    names = [v.name for v in variables]
    if len(set(names)) != len(names):
        raise DimensionError("duplicate variable names")
    by_name = {v.name: v for v in variables}

    dims = sorted({dim for v in variables for dim in v.exponents})
    columns = {v.name: [v.exponent(dim) for dim in dims] for v in variables}
    rank = _column_rank([columns[name] for name in names])

    if repeating is None:
        chosen: list[str] = []
        for name in sorted(names):
            if len(chosen) == rank:
                break
            if _column_rank([columns[c] for c in chosen] + [columns[name]]) > len(chosen):
                chosen.append(name)
        repeating = chosen
    else:
        repeating = list(repeating)
        unknown = set(repeating) - set(names)
        if unknown:
            raise DimensionError(f"unknown repeating variable(s): {sorted(unknown)}")
        if len(set(repeating)) != len(repeating):
            raise DimensionError("repeating variables must be distinct")
        if len(repeating) != rank:
            raise DimensionError(
                f"repeating set must have exactly {rank} variable(s) "
                f"(the rank of the dimension matrix), got {len(repeating)}"
            )
        if _column_rank([columns[name] for name in repeating]) != len(repeating):
            raise DimensionError("repeating variables are not dimensionally independent")

    repeating_set = set(repeating)
    groups: list[PiGroup] = []
    for v in variables:
        if v.name in repeating_set:
            continue
        exponents = _solve_balance(dims, columns, repeating, columns[v.name])
        powers: dict[str, Fraction] = {v.name: Fraction(1)}
        for rep_name, exponent in zip(repeating, exponents):
            if exponent != 0:
                powers[rep_name] = exponent
        group = PiGroup(powers)
        _assert_dimensionless(group, by_name, dims)
        groups.append(group)
    return groups


def _solve_balance(
    dims: Sequence[str],
    columns: Mapping[str, list[Fraction]],
    repeating: Sequence[str],
    target: list[Fraction],
) -> list[Fraction]:
    """Solve sum_j y_j * col(repeating_j) = -target exactly."""
    r = len(repeating)
    if r == 0:
        if any(value != 0 for value in target):
            raise DimensionError(
                "variable carries dimensions but the repeating set is empty"
            )
        return []
    augmented = [
        [columns[name][i] for name in repeating] + [-target[i]]
        for i in range(len(dims))
    ]
    rows, pivots = _rref(augmented)
    solution = [Fraction(0)] * r
    for row, col in zip(rows, pivots):
        if col == r:
            raise DimensionError(
                "variable's dimensions are not spanned by the repeating set"
            )
        solution[col] = row[r]
    return solution


def _assert_dimensionless(
    group: PiGroup,
    by_name: Mapping[str, DimensionedVariable],
    dims: Sequence[str],
) -> None:
    for dim in dims:
        total = sum(
            (power * by_name[name].exponent(dim) for name, power in group.powers.items()),
            Fraction(0),
        )
        if total != 0:
            raise RuntimeError(f"internal error: group {group.as_text()} is not dimensionless")


# ---------------------------------------------------------------------------
# Dimension inference over transfer expressions
# ---------------------------------------------------------------------------

def infer_dimensions(
    e: Union[Expr, Node],
    var_dims: Mapping[str, Mapping[str, RationalLike]],
) -> dict[str, Fraction]:
    """Dimension exponents of an expression given its variables' dimensions.

    Addition and subtraction require both sides to agree; ``ln`` and
    ``exp`` require dimensionless arguments; exponents must be rational
    constants.  Raises :class:`DimensionError` on inconsistency.
    """
    normalized = {
        name: {str(d): Fraction(x) for d, x in dict(dims).items() if Fraction(x) != 0}
        for name, dims in var_dims.items()
    }
    return _infer(_root(e), normalized)


def _infer(node: Node, env: Mapping[str, dict[str, Fraction]]) -> dict[str, Fraction]:
    if isinstance(node, (Const, PiConst)):
        return {}
    if isinstance(node, Var):
        if node.name not in env:
            raise DimensionError(f"no dimensions declared for variable {node.name!r}")
        return dict(env[node.name])
    if isinstance(node, Neg):
        return _infer(node.operand, env)
    if isinstance(node, BinOp):
        if node.op in "+-":
            left = _infer(node.left, env)
            right = _infer(node.right, env)
            if left != right:
                raise DimensionError(
                    f"cannot add quantities of different dimensions: {left} vs {right}"
                )
            return left
        if node.op in "*/":
            left = _infer(node.left, env)
            right = _infer(node.right, env)
            sign = 1 if node.op == "*" else -1
            out = dict(left)
            for dim, exponent in right.items():
                merged = out.get(dim, Fraction(0)) + sign * exponent
                if merged == 0:
                    out.pop(dim, None)
                else:
                    out[dim] = merged
            return out
        if node.op == "^":
            base = _infer(node.left, env)
            exponent = _as_rational(evaluate(node.right, {}))
            return {dim: x * exponent for dim, x in base.items() if x * exponent != 0}
        raise DimensionError(f"unknown operator {node.op!r}")
    if isinstance(node, Call):
        arg = _infer(node.arg, env)
        if node.func == "sqrt":
            return {dim: x / 2 for dim, x in arg.items()}
        if arg:
            raise DimensionError(f"{node.func} requires a dimensionless argument")
        return {}
    raise TypeError(f"unknown node type {type(node).__name__}")


def _as_rational(value: float) -> Fraction:
    candidate = Fraction(value).limit_denominator(1_000_000)
    if abs(float(candidate) - value) > 1e-9 * max(1.0, abs(value)):
        raise DimensionError(f"exponent {value} is not a usable rational")
    return candidate
