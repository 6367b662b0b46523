"""Transfer-function expressions: parsing, printing, evaluation.

Expressions are plain infix arithmetic over named variables.  Operator
precedence, tightest first:

    ^          power, right-associative, constant exponents only
    -x         unary negation
    * /        multiplication, division
    + -        addition, subtraction

Atoms are decimal numbers, variable names matching
``[A-Za-z][A-Za-z0-9_]*``, the reserved constant ``pi``, parenthesised
sub-expressions, and calls of the built-in functions ``sqrt``, ``ln``
and ``exp``.  There is no implicit multiplication: ``2D`` is a syntax
error.  Offsets reported in errors are byte offsets into the UTF-8
source text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Union

import numpy as np

FUNCTIONS = ("sqrt", "ln", "exp")
RESERVED_NAMES = ("pi",) + FUNCTIONS


class ExprSyntaxError(ValueError):
    """Malformed expression source; ``offset`` is a byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EvalError(ArithmeticError):
    """Domain error or unbound variable hit during evaluation."""

    def __init__(self, message: str, node: "Node | None" = None):
        if node is not None:
            where = f" at offset {node.offset}" if node.offset >= 0 else ""
            message = f"{message}{where}: {_print_node(node)}"
        super().__init__(message)
        self.node = node


class Node:
    """Base class for expression-tree nodes."""

    __slots__ = ()
    offset: int


@dataclass(frozen=True)
class Const(Node):
    value: float
    offset: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class PiConst(Node):
    offset: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Var(Node):
    name: str
    offset: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Neg(Node):
    operand: Node
    offset: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp(Node):
    op: str  # one of + - * / ^
    left: Node
    right: Node
    offset: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Call(Node):
    func: str  # one of sqrt, ln, exp
    arg: Node
    offset: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Expr:
    """A parsed, validated transfer function.  Immutable."""

    root: Node

    def __str__(self) -> str:
        return to_text(self)


def _root(e: Union[Expr, Node]) -> Node:
    if isinstance(e, Expr):
        return e.root
    if isinstance(e, Node):
        return e
    raise TypeError(f"expected Expr or Node, got {type(e).__name__}")


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    offset: int  # byte offset


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i = 0  # character index
    b = 0  # byte offset of text[i]
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            b += len(ch.encode("utf-8"))
            i += 1
            continue
        if ch in "+-*/^()":
            tokens.append(_Token("op", ch, b))
            i += 1
            b += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            start_i, start_b = i, b
            while i < n and text[i].isdigit():
                i += 1
            if i < n and text[i] == ".":
                i += 1
                while i < n and text[i].isdigit():
                    i += 1
            if i < n and text[i] in "eE":
                j = i + 1
                if j < n and text[j] in "+-":
                    j += 1
                if j >= n or not text[j].isdigit():
                    raise ExprSyntaxError("malformed number", start_b)
                i = j
                while i < n and text[i].isdigit():
                    i += 1
            lexeme = text[start_i:i]
            tokens.append(_Token("num", lexeme, start_b))
            b = start_b + len(lexeme)  # numbers are pure ASCII
            continue
        if ch.isascii() and (ch.isalpha()):
            start_i, start_b = i, b
            while i < n and text[i].isascii() and (text[i].isalnum() or text[i] == "_"):
                i += 1
            lexeme = text[start_i:i]
            tokens.append(_Token("name", lexeme, start_b))
            b = start_b + len(lexeme)
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", b)
    tokens.append(_Token("end", "", b))
    return tokens


# ---------------------------------------------------------------------------
# Parser (recursive descent)
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def take(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != op:
            shown = repr(tok.text) if tok.kind != "end" else "end of input"
            raise ExprSyntaxError(f"expected {op!r}, found {shown}", tok.offset)
        return self.take()

    def parse_sum(self) -> Node:
        node = self.parse_term()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "+-":
                self.take()
                rhs = self.parse_term()
                node = BinOp(tok.text, node, rhs, offset=tok.offset)
            else:
                return node

    def parse_term(self) -> Node:
        node = self.parse_factor()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "*/":
                self.take()
                rhs = self.parse_factor()
                node = BinOp(tok.text, node, rhs, offset=tok.offset)
            else:
                return node

    def parse_factor(self) -> Node:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.take()
            return Neg(self.parse_factor(), offset=tok.offset)
        return self.parse_power()

    def parse_power(self) -> Node:
        base = self.parse_atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.take()
            exponent = self.parse_factor()  # right-associative; allows -2 etc.
            return BinOp("^", base, exponent, offset=tok.offset)
        return base

    def parse_atom(self) -> Node:
        tok = self.peek()
        if tok.kind == "num":
            self.take()
            return Const(float(tok.text), offset=tok.offset)
        if tok.kind == "name":
            self.take()
            follows_paren = (
                self.peek().kind == "op" and self.peek().text == "("
            )
            if tok.text == "pi":
                if follows_paren:
                    raise ExprSyntaxError(
                        "'pi' is a reserved constant, not a function or variable",
                        tok.offset,
                    )
                return PiConst(offset=tok.offset)
            if tok.text in FUNCTIONS:
                if not follows_paren:
                    raise ExprSyntaxError(
                        f"function name {tok.text!r} cannot be used as a variable",
                        tok.offset,
                    )
                self.expect_op("(")
                arg = self.parse_sum()
                self.expect_op(")")
                return Call(tok.text, arg, offset=tok.offset)
            if follows_paren:
                raise ExprSyntaxError(f"unknown function {tok.text!r}", tok.offset)
            return Var(tok.text, offset=tok.offset)
        if tok.kind == "op" and tok.text == "(":
            self.take()
            node = self.parse_sum()
            self.expect_op(")")
            return node
        shown = repr(tok.text) if tok.kind != "end" else "end of input"
        raise ExprSyntaxError(f"expected a value, found {shown}", tok.offset)


def parse(text: str) -> Expr:
    """Parse expression source into a validated :class:`Expr`.

    Raises :class:`ExprSyntaxError` (with byte offset) on malformed
    input, unknown function names, reserved-word misuse, and exponents
    that do not fold to a finite constant.
    """
    if not isinstance(text, str):
        raise TypeError("expression source must be a string")
    if not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    parser = _Parser(_tokenize(text))
    root = parser.parse_sum()
    tok = parser.peek()
    if tok.kind != "end":
        raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.offset)
    _validate_exponents(root)
    return Expr(root)


def _has_var(node: Node) -> bool:
    return any(isinstance(sub, Var) for sub in _walk(node))


def _walk(node: Node) -> Iterator[Node]:
    yield node
    if isinstance(node, Neg):
        yield from _walk(node.operand)
    elif isinstance(node, BinOp):
        yield from _walk(node.left)
        yield from _walk(node.right)
    elif isinstance(node, Call):
        yield from _walk(node.arg)


def _validate_exponents(node: Node) -> None:
    for sub in _walk(node):
        if isinstance(sub, BinOp) and sub.op == "^":
            exponent = sub.right
            if _has_var(exponent):
                raise ExprSyntaxError(
                    "exponent must be a constant", max(exponent.offset, 0)
                )
            try:
                value = _eval_scalar(exponent, {})
            except EvalError:
                raise ExprSyntaxError(
                    "exponent does not fold to a finite number",
                    max(exponent.offset, 0),
                ) from None
            if not math.isfinite(value):
                raise ExprSyntaxError(
                    "exponent does not fold to a finite number",
                    max(exponent.offset, 0),
                )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(e: Union[Expr, Node], bindings: Mapping[str, float]) -> float:
    """Evaluate at a point.

    ``bindings`` must cover every variable of the expression; extra
    entries are ignored.  Domain errors (square root of a negative,
    logarithm of a non-positive, division by zero) raise
    :class:`EvalError` naming the offending node.
    """
    return _eval_scalar(_root(e), bindings)


def _eval_scalar(node: Node, env: Mapping[str, float]) -> float:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, PiConst):
        return math.pi
    if isinstance(node, Var):
        try:
            return float(env[node.name])
        except KeyError:
            raise EvalError(f"unbound variable {node.name!r}", node) from None
    if isinstance(node, Neg):
        return -_eval_scalar(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval_scalar(node.left, env)
        b = _eval_scalar(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if b == 0.0:
                raise EvalError("division by zero", node)
            return a / b
        if node.op == "^":
            return _power(a, b, node)
        raise EvalError(f"unknown operator {node.op!r}", node)
    if isinstance(node, Call):
        u = _eval_scalar(node.arg, env)
        if node.func == "sqrt":
            if u < 0.0:
                raise EvalError("square root of negative value", node)
            return math.sqrt(u)
        if node.func == "ln":
            if u <= 0.0:
                raise EvalError("logarithm of non-positive value", node)
            return math.log(u)
        if node.func == "exp":
            try:
                return math.exp(u)
            except OverflowError:
                raise EvalError("overflow in exp", node) from None
        raise EvalError(f"unknown function {node.func!r}", node)
    raise TypeError(f"unknown node type {type(node).__name__}")


def _power(base: float, exponent: float, node: Node) -> float:
    if base < 0.0 and not float(exponent).is_integer():
        raise EvalError("negative base with non-integer exponent", node)
    if base == 0.0 and exponent < 0.0:
        raise EvalError("zero base with negative exponent", node)
    try:
        return base ** exponent
    except OverflowError:
        raise EvalError("overflow in power", node) from None


def evaluate_array(e: Union[Expr, Node], arrays: Mapping[str, np.ndarray]) -> np.ndarray:
    """Vectorised evaluation over numpy arrays of equal length.

    Domain violations do not raise; offending samples come back as
    ``nan``/``inf`` for the caller to count.  Unbound variables still
    raise :class:`EvalError`.
    """
    with np.errstate(all="ignore"):
        out = _eval_array(_root(e), arrays)
    return np.asarray(out, dtype=float)


def _eval_array(node: Node, env: Mapping[str, np.ndarray]):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, PiConst):
        return math.pi
    if isinstance(node, Var):
        try:
            return np.asarray(env[node.name], dtype=float)
        except KeyError:
            raise EvalError(f"unbound variable {node.name!r}", node) from None
    if isinstance(node, Neg):
        return -_eval_array(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval_array(node.left, env)
        if node.op == "^":
            exponent = _eval_scalar(node.right, {})
            return np.power(a, exponent)
        b = _eval_array(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return np.divide(a, b)
        raise EvalError(f"unknown operator {node.op!r}", node)
    if isinstance(node, Call):
        u = _eval_array(node.arg, env)
        if node.func == "sqrt":
            return np.sqrt(u)
        if node.func == "ln":
            return np.log(u)
        if node.func == "exp":
            return np.exp(u)
        raise EvalError(f"unknown function {node.func!r}", node)
    raise TypeError(f"unknown node type {type(node).__name__}")


def variables(e: Union[Expr, Node]) -> list[str]:
    """Sorted, duplicate-free list of variable names in the expression."""
    return sorted({sub.name for sub in _walk(_root(e)) if isinstance(sub, Var)})


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_ATOM, _POW, _NEG, _MUL, _ADD = 5, 4, 3, 2, 1


def _prec(node: Node) -> int:
    if isinstance(node, (Const, PiConst, Var, Call)):
        return _ATOM
    if isinstance(node, Neg):
        return _NEG
    if isinstance(node, BinOp):
        return _POW if node.op == "^" else (_MUL if node.op in "*/" else _ADD)
    raise TypeError(f"unknown node type {type(node).__name__}")


def _fmt_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def to_text(e: Union[Expr, Node]) -> str:
    """Render to source text that reparses to a structurally equal tree."""
    return _print_node(_root(e))


def _print_node(node: Node) -> str:
    if isinstance(node, Const):
        return _fmt_number(node.value)
    if isinstance(node, PiConst):
        return "pi"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({_print_node(node.arg)})"
    if isinstance(node, Neg):
        inner = _print_node(node.operand)
        if _prec(node.operand) < _NEG:
            return f"-({inner})"
        return f"-{inner}"
    if isinstance(node, BinOp):
        left, right = _print_node(node.left), _print_node(node.right)
        if node.op in "+-":
            if _prec(node.left) < _ADD:
                left = f"({left})"
            if _prec(node.right) <= _ADD:
                right = f"({right})"
            return f"{left} {node.op} {right}"
        if node.op in "*/":
            if _prec(node.left) < _MUL:
                left = f"({left})"
            if _prec(node.right) <= _MUL:
                right = f"({right})"
            return f"{left}{node.op}{right}"
        # power: right-associative, base binds tighter than anything
        if _prec(node.left) < _ATOM:
            left = f"({left})"
        if _prec(node.right) < _NEG:
            right = f"({right})"
        return f"{left}^{right}"
    raise TypeError(f"unknown node type {type(node).__name__}")
