"""Tiny closed expression grammar for config-defined scalar functions.

Grammar (and nothing else, so configs can never execute code):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := ('-')* power
    power  := atom ('^' factor)?          # right associative
    atom   := NUMBER | 'x1' | 'x2' | 'sqrt' '(' expr ')' | '(' expr ')'

Expressions evaluate vectorized over numpy arrays and support exact
symbolic differentiation in x1/x2, which gives analytic gradients for
config-defined fields, surfaces, and imaging maps.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>x1|x2|sqrt)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    pos, out = 0, []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ConfigError(f"bad token at position {pos} in expression {text!r}")
        if m.lastgroup == "num":
            out.append(("num", float(m.group("num"))))
        elif m.lastgroup == "name":
            out.append(("name", m.group("name")))
        else:
            out.append(("op", m.group("op")))
        pos = m.end()
    out.append(("end", None))
    return out


@dataclass(frozen=True)
class Node:
    kind: str  # "const" | "var" | "+" | "-" | "*" | "/" | "^" | "sqrt" | "neg"
    value: float | str | None = None
    left: "Node | None" = None
    right: "Node | None" = None

    def __call__(self, x1, x2):
        k = self.kind
        if k == "const":
            return np.broadcast_to(np.float64(self.value), np.shape(x1)).copy() if np.ndim(x1) else float(self.value)
        if k == "var":
            return np.asarray(x1, dtype=float) if self.value == "x1" else np.asarray(x2, dtype=float)
        if k == "neg":
            return -self.left(x1, x2)
        if k == "sqrt":
            return np.sqrt(self.left(x1, x2))
        a, b = self.left(x1, x2), self.right(x1, x2)
        if k == "+":
            return a + b
        if k == "-":
            return a - b
        if k == "*":
            return a * b
        if k == "/":
            return a / b
        if k == "^":
            return a ** b
        raise AssertionError(k)

    def diff(self, var: str) -> "Node":
        k = self.kind
        if k == "const":
            return Node("const", 0.0)
        if k == "var":
            return Node("const", 1.0 if self.value == var else 0.0)
        if k == "neg":
            return Node("neg", left=self.left.diff(var))
        if k == "sqrt":
            # d sqrt(u) = u' / (2 sqrt(u))
            return Node(
                "/",
                left=self.left.diff(var),
                right=Node("*", left=Node("const", 2.0), right=Node("sqrt", left=self.left)),
            )
        if k == "+":
            return Node("+", left=self.left.diff(var), right=self.right.diff(var))
        if k == "-":
            return Node("-", left=self.left.diff(var), right=self.right.diff(var))
        if k == "*":
            return Node(
                "+",
                left=Node("*", left=self.left.diff(var), right=self.right),
                right=Node("*", left=self.left, right=self.right.diff(var)),
            )
        if k == "/":
            num = Node(
                "-",
                left=Node("*", left=self.left.diff(var), right=self.right),
                right=Node("*", left=self.left, right=self.right.diff(var)),
            )
            return Node("/", left=num, right=Node("*", left=self.right, right=self.right))
        if k == "^":
            if self.right.kind != "const":
                raise ConfigError("differentiation requires constant exponents")
            p = float(self.right.value)
            return Node(
                "*",
                left=Node("*", left=Node("const", p), right=Node("^", left=self.left, right=Node("const", p - 1.0))),
                right=self.left.diff(var),
            )
        raise AssertionError(k)


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind=None, value=None):
        tok = self.tokens[self.i]
        if kind is not None and tok[0] != kind or (value is not None and tok[1] != value):
            raise ConfigError(f"unexpected token {tok!r} in expression")
        self.i += 1
        return tok

    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            op = self.take()[1]
            node = Node(op, left=node, right=self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            op = self.take()[1]
            node = Node(op, left=node, right=self.factor())
        return node

    def factor(self):
        if self.peek() == ("op", "-"):
            self.take()
            return Node("neg", left=self.factor())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return Node("^", left=base, right=self.factor())
        return base

    def atom(self):
        kind, value = self.peek()
        if kind == "num":
            self.take()
            return Node("const", value)
        if kind == "name" and value in ("x1", "x2"):
            self.take()
            return Node("var", value)
        if kind == "name" and value == "sqrt":
            self.take()
            self.take("op", "(")
            inner = self.expr()
            self.take("op", ")")
            return Node("sqrt", left=inner)
        if (kind, value) == ("op", "("):
            self.take()
            inner = self.expr()
            self.take("op", ")")
            return inner
        raise ConfigError(f"unexpected token {(kind, value)!r} in expression")


def parse_expression(text: str) -> Node:
    """Parse ``text`` into an evaluatable/differentiable expression tree."""
    parser = _Parser(_tokenize(text))
    node = parser.expr()
    parser.take("end")
    return node
