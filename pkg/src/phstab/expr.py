"""Small expression language for declarative models.

Grammar (whitespace ignored)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("+" | "-") unary | primary
    primary := NUMBER | "pi" | COORD | FUNC "(" expr ")" | "(" expr ")"
    COORD   := "q1" .. "qn"
    FUNC    := "sin" | "cos"

Expressions compile to a tiny tree that evaluates on a configuration vector
and differentiates symbolically, so models written this way get exact
gradients and Hessians instead of finite differences.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

_TOKEN = re.compile(r"(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(.))")
FUNCTIONS = ("sin", "cos")


class ExprError(ValueError):
    """Syntax or name error, with the 1-based column of the offending token."""

    def __init__(self, message: str, column: int):
        super().__init__(f"{message} at column {column}")
        self.column = column


# -- tree -------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Bin, Neg, Call]
ZERO, ONE = Num(0.0), Num(1.0)


def evaluate(node: Node, q) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return float(q[node.index])
    if isinstance(node, Neg):
        return -evaluate(node.arg, q)
    if isinstance(node, Call):
        x = evaluate(node.arg, q)
        return math.sin(x) if node.func == "sin" else math.cos(x)
    a, b = evaluate(node.left, q), evaluate(node.right, q)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if b == 0.0:
        raise ZeroDivisionError("division by zero in model expression")
    return a / b


# constructors that fold constants and drop zeros/ones, keeping derivative trees small
def _add(a, b):
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Bin("+", a, b)


def _sub(a, b):
    if b == ZERO:
        return a
    if a == ZERO:
        return _neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Bin("-", a, b)


def _mul(a, b):
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Bin("*", a, b)


def _div(a, b):
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return Bin("/", a, b)


def _neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def derivative(node: Node, i: int) -> Node:
    """Symbolic ``d node / d q_i``."""
    if isinstance(node, Num):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.index == i else ZERO
    if isinstance(node, Neg):
        return _neg(derivative(node.arg, i))
    if isinstance(node, Call):
        du = derivative(node.arg, i)
        if du == ZERO:
            return ZERO
        if node.func == "sin":
            return _mul(Call("cos", node.arg), du)
        return _neg(_mul(Call("sin", node.arg), du))
    a, b = node.left, node.right
    da, db = derivative(a, i), derivative(b, i)
    if node.op == "+":
        return _add(da, db)
    if node.op == "-":
        return _sub(da, db)
    if node.op == "*":
        return _add(_mul(da, b), _mul(a, db))
    # (a/b)' = a'/b - a b' / b^2
    return _sub(_div(da, b), _div(_mul(a, db), _mul(b, b)))


def uses(node: Node) -> set:
    """Coordinate indices appearing in the tree."""
    if isinstance(node, Var):
        return {node.index}
    if isinstance(node, Num):
        return set()
    if isinstance(node, (Neg, Call)):
        return uses(node.arg)
    return uses(node.left) | uses(node.right)


# -- parser -----------------------------------------------------------------

class _Parser:
    def __init__(self, text: str, n: int):
        self.text, self.n = text, n
        self.tokens = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKEN.match(text, pos)
            num, name, sym = m.groups()
            col = pos + 1
            if num is not None:
                self.tokens.append(("num", num, col))
            elif name is not None:
                self.tokens.append(("name", name, col))
            elif sym not in ("+", "-", "*", "/", "(", ")"):
                raise ExprError(f"unexpected character {sym!r}", col)
            else:
                self.tokens.append(("sym", sym, col))
            pos = m.end()
        self.tokens.append(("end", "", len(text) + 1))
        self.k = 0

    def peek(self):
        return self.tokens[self.k]

    def take(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def expect(self, sym: str):
        kind, val, col = self.take()
        if kind != "sym" or val != sym:
            raise ExprError(f"expected {sym!r}, found {val or 'end of input'!r}", col)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, col = self.peek()
        if kind != "end":
            raise ExprError(f"unexpected token {val!r}", col)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] == "sym" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[0] == "sym" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = Bin(op, node, self.unary())
        return node

    def unary(self) -> Node:
        kind, val, _ = self.peek()
        if kind == "sym" and val in "+-":
            self.take()
            arg = self.unary()
            return arg if val == "+" else Neg(arg)
        return self.primary()

    def primary(self) -> Node:
        kind, val, col = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "sym" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if val == "pi":
                return Num(math.pi)
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            m = re.fullmatch(r"q([1-9][0-9]*)", val)
            if m:
                i = int(m.group(1))
                if i > self.n:
                    raise ExprError(f"coordinate {val} out of range (n={self.n})", col)
                return Var(i - 1)
            raise ExprError(f"unknown name {val!r}", col)
        raise ExprError(f"unexpected {val or 'end of input'!r}", col)


def parse(text: str, n: int) -> Node:
    """Parse ``text`` over coordinates ``q1..qn``; raises :class:`ExprError`."""
    if not text.strip():
        raise ExprError("empty expression", 1)
    return _Parser(text, n).parse()


class Compiled:
    """Expression with cached first and second symbolic derivatives."""

    def __init__(self, text: str, n: int):
        self.text, self.n = text, n
        self.node = parse(text, n)
        self.d1 = [derivative(self.node, i) for i in range(n)]
        self._d2 = None

    @property
    def d2(self):
        if self._d2 is None:
            self._d2 = [[derivative(self.d1[i], j) for j in range(self.n)] for i in range(self.n)]
        return self._d2

    def __call__(self, q) -> float:
        return evaluate(self.node, q)

    def gradient(self, q) -> np.ndarray:
        return np.array([evaluate(d, q) for d in self.d1])

    def hessian(self, q) -> np.ndarray:
        H = np.array([[evaluate(d, q) for d in row] for row in self.d2])
        return 0.5 * (H + H.T)
