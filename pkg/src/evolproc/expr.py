"""Small arithmetic expression language for coefficient fields.

Grammar (whitespace is ignored)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("+" | "-") unary | power
    power   := atom (("^" | "**") unary)?
    atom    := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Names are the variables ``t``, ``x``, ``s`` and any bound parameter
(``eps``, ``alpha`` by convention), plus the constants ``pi`` and ``e``.
Functions: ``sin cos exp tanh sqrt abs log`` (one argument) and ``pow``
(two).  ``^`` is right associative and binds tighter than unary minus, so
``-x^2`` is ``-(x^2)``.  Compiled expressions evaluate on numpy arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError

FUNCTIONS: dict[str, tuple[int, Callable]] = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "tanh": (1, np.tanh),
    "sqrt": (1, np.sqrt),
    "abs": (1, np.abs),
    "log": (1, np.log),
    "pow": (2, np.power),
}
CONSTANTS = {"pi": math.pi, "e": math.e}
VARIABLES = ("t", "x", "s")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>\*\*|[-+*/^(),]))"
)

Node = Callable[[Mapping[str, object]], object]


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(src: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            bad = pos + len(src[pos:]) - len(src[pos:].lstrip())
            raise ConfigError(f"unexpected character {src[bad]!r}", bad, src)
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(_Tok("end", "", len(src)))
    return toks


class _Parser:
    def __init__(self, src: str, names: frozenset[str]) -> None:
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0
        self.names = names
        self.used: set[str] = set()

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.peek()
        raise ConfigError(msg, tok.pos, self.src)

    def expect(self, text: str) -> None:
        tok = self.peek()
        if tok.text != text:
            self.error(f"expected {text!r} but found {tok.text or 'end of input'!r}")
        self.i += 1

    def parse(self) -> Node:
        if self.peek().kind == "end":
            self.error("empty expression")
        node = self.expr()
        if self.peek().kind != "end":
            self.error(f"unexpected {self.peek().text!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            rhs = self.term()
            node = _bin(node, rhs, np.add if op == "+" else np.subtract)
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.take().text
            rhs = self.unary()
            node = _bin(node, rhs, np.multiply if op == "*" else np.true_divide)
        return node

    def unary(self) -> Node:
        if self.peek().text in ("+", "-"):
            op = self.take().text
            inner = self.unary()
            return inner if op == "+" else (lambda env, f=inner: np.negative(f(env)))
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek().text in ("^", "**"):
            self.take()
            return _bin(base, self.unary(), np.power)
        return base

    def atom(self) -> Node:
        tok = self.take()
        if tok.kind == "num":
            v = float(tok.text)
            return lambda env: v
        if tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "name":
            if self.peek().text == "(":
                return self.call(tok)
            if tok.text in self.names:
                self.used.add(tok.text)
                return lambda env, k=tok.text: env[k]
            if tok.text in CONSTANTS:
                v = CONSTANTS[tok.text]
                return lambda env: v
            if tok.text in FUNCTIONS:
                self.error(f"function {tok.text!r} needs an argument list", tok)
            self.error(f"unknown name {tok.text!r}", tok)
        self.error(f"unexpected {tok.text or 'end of input'!r}", tok)

    def call(self, name: _Tok) -> Node:
        if name.text not in FUNCTIONS:
            self.error(f"unknown function {name.text!r}", name)
        arity, fn = FUNCTIONS[name.text]
        self.expect("(")
        args = [self.expr()]
        while self.peek().text == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if len(args) != arity:
            self.error(f"{name.text} takes {arity} argument(s), got {len(args)}", name)
        if arity == 1:
            (f,) = args
            return lambda env: fn(f(env))
        f, g = args
        return lambda env: fn(f(env), g(env))


def _bin(f: Node, g: Node, op) -> Node:
    return lambda env: op(f(env), g(env))


@dataclass(frozen=True)
class Expression:
    """A parsed expression; call with keyword values for its free names."""

    source: str
    names: frozenset[str]
    used: frozenset[str]
    _fn: Node

    def __call__(self, **values):
        missing = self.used - values.keys()
        if missing:
            raise ConfigError(f"expression {self.source!r} needs values for {sorted(missing)}")
        return self._fn(values)

    def depends_on(self, name: str) -> bool:
        return name in self.used


def parse(source: str, params: Mapping[str, float] | None = None, variables=VARIABLES) -> Expression:
    """Parse ``source``; ``params`` are bound now, ``variables`` at call time."""
    if not isinstance(source, str):
        raise ConfigError(f"expression must be a string, got {type(source).__name__}")
    params = dict(params or {})
    names = frozenset(variables) | frozenset(params)
    p = _Parser(source, names)
    fn = p.parse()
    if params:
        inner = fn
        fn = lambda env: inner({**params, **env})  # noqa: E731
    return Expression(source, names, frozenset(p.used - set(params)), fn)
