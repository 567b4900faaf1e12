"""Coefficient expressions.

Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | primary
    primary := NUMBER | 't' | 'feat' '[' INT ']' | 'ctrl' '[' NAME ']'
             | FUNC '(' expr (',' expr)* ')' | '(' expr ')'

``FUNC`` is one of ``min, max`` (two or more arguments) and ``exp, sin, abs``
(one argument).  Expressions evaluate elementwise on numpy arrays.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np


class ExpressionError(ValueError):
    def __init__(self, message: str, column: int | None = None, source: str | None = None):
        self.column = column
        self.source = source
        where = f" at column {column}" if column is not None else ""
        super().__init__(f"{message}{where}")


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/(),\[\]]))"
)

_UNARY = {"exp": np.exp, "sin": np.sin, "abs": np.abs}
_NARY = {"min": np.minimum, "max": np.maximum}


def _tokenize(src: str):
    pos = 0
    out = []
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            col = pos + len(src[pos:]) - len(src[pos:].lstrip()) + 1
            raise ExpressionError(f"unexpected character {src[col - 1]!r}", col, src)
        kind = m.lastgroup
        start = m.start(kind) + 1
        out.append((kind, m.group(kind), start))
        pos = m.end()
    out.append(("end", "", len(src) + 1))
    return out


# AST nodes.  ``to_str`` yields the canonical form; parse(to_str(e)) == e.


@dataclass(frozen=True)
class Num:
    value: float

    def to_str(self) -> str:
        return repr(float(self.value))


@dataclass(frozen=True)
class Time:
    def to_str(self) -> str:
        return "t"


@dataclass(frozen=True)
class Feat:
    index: int

    def to_str(self) -> str:
        return f"feat[{self.index}]"


@dataclass(frozen=True)
class Ctrl:
    table: str

    def to_str(self) -> str:
        return f"ctrl[{self.table}]"


@dataclass(frozen=True)
class Neg:
    arg: object

    def to_str(self) -> str:
        return f"(-{self.arg.to_str()})"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object

    def to_str(self) -> str:
        return f"({self.left.to_str()} {self.op} {self.right.to_str()})"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple

    def to_str(self) -> str:
        return f"{self.func}({', '.join(a.to_str() for a in self.args)})"


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None, value=None):
        tok = self.toks[self.i]
        if (kind and tok[0] != kind) or (value and tok[1] != value):
            want = value or kind
            got = tok[1] or "end of expression"
            raise ExpressionError(f"expected {want!r}, found {got!r}", tok[2], self.src)
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            tok = self.peek()
            raise ExpressionError(f"unexpected {tok[1]!r}", tok[2], self.src)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            arg = self.unary()
            if isinstance(arg, Num):
                return Num(-arg.value)
            return Neg(arg)
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.primary()

    def primary(self):
        kind, text, col = self.peek()
        if kind == "num":
            self.take()
            return Num(float(text))
        if kind == "op" and text == "(":
            self.take()
            node = self.expr()
            self.take("op", ")")
            return node
        if kind == "name":
            self.take()
            if text == "t":
                return Time()
            if text == "feat":
                self.take("op", "[")
                idx = self.take("num")
                if not re.fullmatch(r"\d+", idx[1]):
                    raise ExpressionError("feature index must be an integer", idx[2], self.src)
                self.take("op", "]")
                return Feat(int(idx[1]))
            if text == "ctrl":
                self.take("op", "[")
                name = self.take("name")
                self.take("op", "]")
                return Ctrl(name[1])
            if text in _UNARY or text in _NARY:
                self.take("op", "(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.take("op", ")")
                if text in _UNARY and len(args) != 1:
                    raise ExpressionError(f"{text} takes one argument", col, self.src)
                if text in _NARY and len(args) < 2:
                    raise ExpressionError(f"{text} takes at least two arguments", col, self.src)
                return Call(text, tuple(args))
            raise ExpressionError(f"unknown name {text!r}", col, self.src)
        raise ExpressionError(f"unexpected {text or 'end of expression'!r}", col, self.src)


def parse(src: str):
    if not isinstance(src, str):
        raise ExpressionError(f"expression must be a string, got {type(src).__name__}")
    return _Parser(src).parse()


def walk(node):
    yield node
    for child in _children(node):
        yield from walk(child)


def _children(node):
    if isinstance(node, Neg):
        return (node.arg,)
    if isinstance(node, BinOp):
        return (node.left, node.right)
    if isinstance(node, Call):
        return node.args
    return ()


def is_constant(node) -> bool:
    return all(isinstance(n, (Num, Neg, BinOp, Call)) for n in walk(node))


class Expr:
    """A parsed expression compiled for evaluation.

    ``tables`` maps a table name to an array of per-label values, so that
    ``ctrl[name]`` evaluates to ``tables[name][labels]``.
    """

    def __init__(self, src: str, n_features: int, tables: dict[str, np.ndarray]):
        self.ast = parse(src)
        for n in walk(self.ast):
            if isinstance(n, Feat) and n.index >= n_features:
                raise ExpressionError(f"feat[{n.index}] out of range (have {n_features} features)", None, src)
            if isinstance(n, Ctrl) and n.table not in tables:
                raise ExpressionError(f"unknown control table {n.table!r}", None, src)
        self.src = src
        self.tables = tables
        self._fn = self._compile(self.ast)

    def canonical(self) -> str:
        s = self.ast.to_str()
        return s[1:-1] if s.startswith("(") and s.endswith(")") and _balanced(s[1:-1]) else s

    def _compile(self, node):
        if isinstance(node, Num):
            v = float(node.value)
            return lambda t, z, a: v
        if isinstance(node, Time):
            return lambda t, z, a: t
        if isinstance(node, Feat):
            i = node.index
            return lambda t, z, a: z[..., i]
        if isinstance(node, Ctrl):
            table = self.tables[node.table]
            return lambda t, z, a: table[a]
        if isinstance(node, Neg):
            f = self._compile(node.arg)
            return lambda t, z, a: -f(t, z, a)
        if isinstance(node, BinOp):
            f, g = self._compile(node.left), self._compile(node.right)
            if node.op == "+":
                return lambda t, z, a: f(t, z, a) + g(t, z, a)
            if node.op == "-":
                return lambda t, z, a: f(t, z, a) - g(t, z, a)
            if node.op == "*":
                return lambda t, z, a: f(t, z, a) * g(t, z, a)
            src = self.src

            def div(t, z, a):
                den = g(t, z, a)
                if np.any(np.asarray(den) == 0.0):
                    raise ExpressionError("division by zero", None, src)
                return f(t, z, a) / den

            return div
        if isinstance(node, Call):
            fs = [self._compile(x) for x in node.args]
            if node.func in _UNARY:
                op, f = _UNARY[node.func], fs[0]
                return lambda t, z, a: op(f(t, z, a))
            op = _NARY[node.func]

            def nary(t, z, a):
                out = fs[0](t, z, a)
                for f in fs[1:]:
                    out = op(out, f(t, z, a))
                return out

            return nary
        raise TypeError(node)

    def __call__(self, t, z, labels):
        """Evaluate on lifted states ``z`` of shape ``(n, k)``; returns shape ``(n,)``."""
        z = np.asarray(z, dtype=float)
        out = self._fn(t, z, labels)
        return np.broadcast_to(np.asarray(out, dtype=float), z.shape[:-1]).copy()


def _balanced(s: str) -> bool:
    depth = 0
    for ch in s:
        depth += ch == "("
        depth -= ch == ")"
        if depth < 0:
            return False
    return depth == 0

