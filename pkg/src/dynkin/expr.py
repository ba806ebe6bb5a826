"""A small arithmetic expression language in one variable ``x``.

Grammar (``^`` binds tightest and is right-associative)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

``NAME`` is ``x``, a function from :data:`FUNCTIONS` or a parameter bound
at parse time. Expressions compile to numpy source, so the same callable
works on arrays and inside numba kernels.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import EvalError, ParseError, ValidationError

FUNCTIONS = {
    "exp": 1, "log": 1, "sqrt": 1, "sin": 1, "cos": 1, "tanh": 1,
    "cosh": 1, "sinh": 1, "pow": 2, "abs": 1,
}
_NONSMOOTH = {"abs"}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            col = pos + 1 + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[col - 1]!r}", column=col)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start + 1))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text, params):
        self.text = text
        self.params = params
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, col = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", column=col)

    def parse(self):
        if self.peek()[0] == "end":
            raise ParseError("empty expression", column=1)
        node = self.expr()
        kind, val, col = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", column=col)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        kind, val, col = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val == "x":
                return Var()
            if val in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[val]:
                    raise ParseError(
                        f"{val} takes {FUNCTIONS[val]} argument(s), got {len(args)}",
                        column=col)
                return Call(val, tuple(args))
            if val in self.params:
                return Num(float(self.params[val]))
            raise ParseError(f"unknown name {val!r}", column=col)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            prev = self.tokens[self.i - 2] if self.i >= 2 else None
            if prev is not None and prev[0] == "op":
                raise ParseError(f"dangling operator {prev[1]!r}", column=prev[2])
            raise ParseError("unexpected end of input", column=col)
        raise ParseError(f"unexpected token {val!r}", column=col)


# ---------------------------------------------------------------- printing

def _prec(node):
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Neg) or (isinstance(node, Num) and node.value < 0):
        return 3
    return 5


def to_text(node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return "x"
    if isinstance(node, Neg):
        inner = to_text(node.arg)
        return f"-({inner})" if _prec(node.arg) < 3 else f"-{inner}"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_text(a) for a in node.args)})"
    p = _PREC[node.op]
    left, right = to_text(node.left), to_text(node.right)
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < 3:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def to_source(node) -> str:
    """Python/numpy source for ``node`` in the variable ``x``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return "x"
    if isinstance(node, Neg):
        return f"(-{to_source(node.arg)})"
    if isinstance(node, Call):
        args = [to_source(a) for a in node.args]
        if node.name == "pow":
            return f"(({args[0]}) ** ({args[1]}))"
        return f"np.{node.name}({args[0]})"
    op = "**" if node.op == "^" else node.op
    return f"({to_source(node.left)} {op} {to_source(node.right)})"


# ---------------------------------------------------------- differentiation

def _is_num(node, value=None):
    return isinstance(node, Num) and (value is None or node.value == value)


def _add(a, b):
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    return Bin("+", a, b)


def _sub(a, b):
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return _neg(b)
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    return Bin("-", a, b)


def _neg(a):
    if _is_num(a):
        return Num(-a.value) if a.value == 0.0 else Neg(a)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a, b):
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    return Bin("*", a, b)


def _div(a, b):
    if _is_num(a, 0.0):
        return Num(0.0)
    if _is_num(b, 1.0):
        return a
    return Bin("/", a, b)


def _pow(a, b):
    if _is_num(b, 1.0):
        return a
    if _is_num(b, 0.0):
        return Num(1.0)
    return Bin("^", a, b)


def _depends(node):
    if isinstance(node, Var):
        return True
    if isinstance(node, Num):
        return False
    if isinstance(node, Neg):
        return _depends(node.arg)
    if isinstance(node, Call):
        return any(_depends(a) for a in node.args)
    return _depends(node.left) or _depends(node.right)


def differentiate(node):
    """Symbolic derivative with respect to ``x``."""
    if not _depends(node):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0)
    if isinstance(node, Neg):
        return _neg(differentiate(node.arg))
    if isinstance(node, Bin):
        a, b = node.left, node.right
        da, db = differentiate(a), differentiate(b)
        if node.op == "+":
            return _add(da, db)
        if node.op == "-":
            return _sub(da, db)
        if node.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        if node.op == "/":
            return _div(_sub(_mul(da, b), _mul(a, db)), _pow(b, Num(2.0)))
        return _diff_power(a, b, da, db)
    name, args = node.name, node.args
    if name in _NONSMOOTH:
        raise ValidationError(f"{name} is not differentiable", field=name)
    if name == "pow":
        a, b = args
        return _diff_power(a, b, differentiate(a), differentiate(b))
    u = args[0]
    du = differentiate(u)
    if name == "exp":
        outer = node
    elif name == "log":
        outer = _div(Num(1.0), u)
    elif name == "sqrt":
        outer = _div(Num(0.5), node)
    elif name == "sin":
        outer = Call("cos", (u,))
    elif name == "cos":
        outer = _neg(Call("sin", (u,)))
    elif name == "tanh":
        outer = _pow(Call("cosh", (u,)), Num(-2.0))
    elif name == "cosh":
        outer = Call("sinh", (u,))
    elif name == "sinh":
        outer = Call("cosh", (u,))
    else:  # pragma: no cover
        raise ValidationError(f"no derivative rule for {name}")
    return _mul(outer, du)


def _diff_power(a, b, da, db):
    if not _depends(b):
        return _mul(_mul(b, _pow(a, _sub(b, Num(1.0)))), da)
    # a^b * (b' log a + b a'/a)
    return _mul(Bin("^", a, b),
                _add(_mul(db, Call("log", (a,))), _div(_mul(b, da), a)))


def _contains(node, names):
    if isinstance(node, Call):
        return node.name in names or any(_contains(a, names) for a in node.args)
    if isinstance(node, Neg):
        return _contains(node.arg, names)
    if isinstance(node, Bin):
        return _contains(node.left, names) or _contains(node.right, names)
    return False


def _subexpressions(node):
    """Post-order traversal."""
    if isinstance(node, Neg):
        yield from _subexpressions(node.arg)
    elif isinstance(node, Bin):
        yield from _subexpressions(node.left)
        yield from _subexpressions(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from _subexpressions(a)
    yield node


def _compile(node):
    src = f"lambda x: {to_source(node)}"
    return eval(src, {"np": np, "__builtins__": {}})


class Expression:
    """Parsed expression with lazily built derivatives."""

    def __init__(self, node, text=None):
        self.node = node
        self.text = text if text is not None else to_text(node)
        self._fn = _compile(node)
        self._d1 = None
        self._d2 = None

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __str__(self):
        return to_text(self.node)

    def __eq__(self, other):
        return isinstance(other, Expression) and self.node == other.node

    def __hash__(self):
        return hash(self.node)

    @property
    def source(self) -> str:
        return to_source(self.node)

    @property
    def is_constant(self) -> bool:
        return not _depends(self.node)

    @property
    def differentiable(self) -> bool:
        return not _contains(self.node, _NONSMOOTH)

    def raw(self):
        """Unchecked numpy callable, also compilable by numba."""
        return self._fn

    def __call__(self, x):
        with np.errstate(all="ignore"):
            out = self._fn(np.asarray(x, dtype=float))
        if np.ndim(out) == 0 and np.ndim(x) > 0:
            out = np.full(np.shape(x), float(out))
        return out

    def derivative(self, order=1) -> "Expression":
        if order == 0:
            return self
        if self._d1 is None:
            self._d1 = Expression(differentiate(self.node))
        if order == 1:
            return self._d1
        return self._d1.derivative(order - 1)


def parse(text: str, params: Mapping[str, float] | None = None) -> Expression:
    """Parse ``text``; names in ``params`` are substituted as constants."""
    if not isinstance(text, str):
        text = repr(float(text))
    node = _Parser(text, dict(params or {})).parse()
    return Expression(node, text)


def eval_expression(e: Expression, x) -> float | np.ndarray:
    """Evaluate ``e`` at ``x`` and raise :class:`EvalError` on NaN/Inf."""
    with np.errstate(all="ignore"):
        out = e(x)
    if np.all(np.isfinite(out)):
        return out if np.ndim(out) else float(out)
    bad = None
    for sub in _subexpressions(e.node):
        with np.errstate(all="ignore"):
            val = _compile(sub)(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(val)):
            bad = to_text(sub)
            break
    raise EvalError(f"{e.text} is not finite at x={x!r} (offending part: {bad})",
                    subexpression=bad)


def check_total(e: Expression, xs) -> None:
    """Raise :class:`EvalError` unless ``e`` is finite on every point of ``xs``."""
    xs = np.asarray(xs, dtype=float)
    vals = e(xs)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        eval_expression(e, float(xs[np.argmax(bad)]))


__all__ = [
    "Expression", "parse", "eval_expression", "differentiate", "check_total",
    "to_text", "to_source", "FUNCTIONS",
]
