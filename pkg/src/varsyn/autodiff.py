"""Forward-mode differentiation of transfer expressions.

A :class:`Dual` carries a value and one directional derivative; one
pass per variable gives exact (machine-precision) first-order partials.
A central-difference checker provides an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union

from .expr import (
    BinOp,
    Call,
    Const,
    EvalError,
    Expr,
    Neg,
    Node,
    PiConst,
    Var,
    _root,
    evaluate,
    variables,
)


@dataclass(frozen=True)
class Dual:
    """First-order dual number: value plus one directional derivative."""

    val: float
    der: float

    def __add__(self, other: "Dual") -> "Dual":
        return Dual(self.val + other.val, self.der + other.der)

    def __sub__(self, other: "Dual") -> "Dual":
        return Dual(self.val - other.val, self.der - other.der)

    def __neg__(self) -> "Dual":
        return Dual(-self.val, -self.der)

    def __mul__(self, other: "Dual") -> "Dual":
        return Dual(
            self.val * other.val,
            self.der * other.val + self.val * other.der,
        )

    def __truediv__(self, other: "Dual") -> "Dual":
        if other.val == 0.0:
            raise ZeroDivisionError("division by zero")
        return Dual(
            self.val / other.val,
            (self.der * other.val - self.val * other.der) / (other.val * other.val),
        )

    def pow_const(self, c: float) -> "Dual":
        if c == 0.0:
            return Dual(1.0, 0.0)
        v = self.val
        if v < 0.0 and not float(c).is_integer():
            raise ValueError("negative base with non-integer exponent")
        if v == 0.0 and c < 0.0:
            raise ZeroDivisionError("zero base with negative exponent")
        value = v ** c
        if self.der == 0.0:
            return Dual(value, 0.0)
        if v == 0.0 and c < 1.0:
            raise ValueError("derivative of power undefined at zero base")
        return Dual(value, c * v ** (c - 1.0) * self.der)

    def sqrt(self) -> "Dual":
        if self.val < 0.0:
            raise ValueError("square root of negative value")
        value = math.sqrt(self.val)
        if self.der == 0.0:
            return Dual(value, 0.0)
        if value == 0.0:
            raise ValueError("derivative of sqrt undefined at zero")
        return Dual(value, self.der / (2.0 * value))

    def log(self) -> "Dual":
        if self.val <= 0.0:
            raise ValueError("logarithm of non-positive value")
        return Dual(math.log(self.val), self.der / self.val)

    def exp(self) -> "Dual":
        value = math.exp(self.val)
        return Dual(value, value * self.der)


@dataclass(frozen=True)
class Gradient:
    """Partial derivatives of an expression at a point."""

    point: dict[str, float]
    partials: dict[str, float]


def partials(e: Union[Expr, Node], bindings: Mapping[str, float]) -> Gradient:
    """Exact first-order partials at a point, one dual pass per variable."""
    root = _root(e)
    names = variables(root)
    point: dict[str, float] = {}
    for name in names:
        try:
            point[name] = float(bindings[name])
        except KeyError:
            raise EvalError(f"unbound variable {name!r}") from None
    parts: dict[str, float] = {}
    for target in names:
        env = {
            name: Dual(point[name], 1.0 if name == target else 0.0)
            for name in names
        }
        parts[target] = _eval_dual(root, env).der
    return Gradient(point=point, partials=parts)


def _eval_dual(node: Node, env: Mapping[str, Dual]) -> Dual:
    if isinstance(node, Const):
        return Dual(node.value, 0.0)
    if isinstance(node, PiConst):
        return Dual(math.pi, 0.0)
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise EvalError(f"unbound variable {node.name!r}", node) from None
    if isinstance(node, Neg):
        return -_eval_dual(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval_dual(node.left, env)
        if node.op == "^":
            exponent = evaluate(node.right, {})  # constant by construction
            try:
                return a.pow_const(exponent)
            except (ValueError, ZeroDivisionError, OverflowError) as exc:
                raise EvalError(str(exc), node) from None
        b = _eval_dual(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            try:
                return a / b
            except ZeroDivisionError:
                raise EvalError("division by zero", node) from None
        raise EvalError(f"unknown operator {node.op!r}", node)
    if isinstance(node, Call):
        u = _eval_dual(node.arg, env)
        try:
            if node.func == "sqrt":
                return u.sqrt()
            if node.func == "ln":
                return u.log()
            if node.func == "exp":
                return u.exp()
        except (ValueError, OverflowError) as exc:
            raise EvalError(str(exc), node) from None
        raise EvalError(f"unknown function {node.func!r}", node)
    raise TypeError(f"unknown node type {type(node).__name__}")


def check_gradient(
    e: Union[Expr, Node], bindings: Mapping[str, float], h: float = 1e-6
) -> float:
    """Max relative discrepancy between dual partials and central differences.

    Returns ``max_i |dual_i - cd_i| / max(1, |dual_i|)`` with central
    differences of step ``h``; 0.0 for constant expressions.
    """
    if h <= 0.0:
        raise ValueError("step size must be positive")
    grad = partials(e, bindings)
    worst = 0.0
    for name, exact in grad.partials.items():
        hi = dict(grad.point)
        lo = dict(grad.point)
        hi[name] += h
        lo[name] -= h
        cd = (evaluate(e, hi) - evaluate(e, lo)) / (2.0 * h)
        worst = max(worst, abs(exact - cd) / max(1.0, abs(exact)))
    return worst
