"""Tiny arithmetic expression language used by configuration files.

Grammar (loosest binding first):
    sum     := term (('+'|'-') term)*
    term    := unary (('*'|'/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right associative, binds tightest
    atom    := NUMBER | IDENT | IDENT '(' sum (',' sum)* ')' | '(' sum ')'

Variables are x1..xn plus optionally z.  Functions: exp, log, sin, cos,
sqrt, abs (unary), min, max (binary).  Exponents must be constant
(numeric sub-expressions only); non-integer exponents require a positive
base at evaluation time.  log and sqrt of negative arguments raise
ExprDomainError rather than returning NaN.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ExprDomainError, ExprSyntaxError

_FUNCTIONS = {"exp": 1, "log": 1, "sin": 1, "cos": 1, "sqrt": 1, "abs": 1,
              "min": 2, "max": 2}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: float


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


class _Token:
    __slots__ = ("kind", "text", "offset")

    def __init__(self, kind, text, offset):
        self.kind = kind
        self.text = text
        self.offset = offset


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = pos
            while stripped < len(text) and text[stripped].isspace():
                stripped += 1
            if stripped == len(text):
                break
            raise ExprSyntaxError(f"unexpected character {text[stripped]!r}", stripped)
        if m.group("num") is not None:
            tokens.append(_Token("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(_Token("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(_Token("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: set[str]):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        tok = self.peek()
        if tok.kind != "op" or tok.text != op:
            raise ExprSyntaxError(f"expected {op!r}", tok.offset)
        return self.advance()

    def parse(self):
        node = self.sum()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.offset)
        return node

    def sum(self):
        node = self.term()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "+-":
                self.advance()
                node = BinOp(tok.text, node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "*/":
                self.advance()
                node = BinOp(tok.text, node, self.unary())
            else:
                return node

    def unary(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.advance()
            exp_tok = self.peek()
            exponent = self.unary()
            value = _fold_constant(exponent)
            if value is None:
                raise ExprSyntaxError("exponent must be a constant", exp_tok.offset)
            return Pow(base, value)
        return base

    def atom(self):
        tok = self.advance()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "ident":
            name = tok.text
            nxt = self.peek()
            if nxt.kind == "op" and nxt.text == "(":
                if name not in _FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {name!r}", tok.offset)
                self.advance()
                args = [self.sum()]
                while True:
                    sep = self.peek()
                    if sep.kind == "op" and sep.text == ",":
                        self.advance()
                        args.append(self.sum())
                    else:
                        break
                self.expect_op(")")
                if len(args) != _FUNCTIONS[name]:
                    raise ExprSyntaxError(
                        f"{name} takes {_FUNCTIONS[name]} argument(s), got {len(args)}",
                        tok.offset)
                return Call(name, tuple(args))
            if name not in self.variables:
                raise ExprSyntaxError(f"unknown identifier {name!r}", tok.offset)
            return Var(name)
        if tok.kind == "op" and tok.text == "(":
            node = self.sum()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(f"unexpected token {tok.text or '<end>'!r}", tok.offset)


def _fold_constant(node):
    """Value of a variable-free subtree, or None if it contains a variable."""
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Neg):
        v = _fold_constant(node.arg)
        return None if v is None else -v
    if isinstance(node, BinOp):
        a = _fold_constant(node.left)
        b = _fold_constant(node.right)
        if a is None or b is None:
            return None
        return {"+": a + b, "-": a - b, "*": a * b, "/": a / b}[node.op]
    if isinstance(node, Pow):
        v = _fold_constant(node.base)
        return None if v is None else v ** node.exponent
    return None


def parse(text: str, dim: int, allow_z: bool = False):
    """Parse an expression over x1..x<dim> (and z when allow_z)."""
    variables = {f"x{i + 1}" for i in range(dim)}
    if allow_z:
        variables.add("z")
    return _Parser(text, variables).parse()


def uses_z(node) -> bool:
    if isinstance(node, Var):
        return node.name == "z"
    if isinstance(node, Neg):
        return uses_z(node.arg)
    if isinstance(node, BinOp):
        return uses_z(node.left) or uses_z(node.right)
    if isinstance(node, Pow):
        return uses_z(node.base)
    if isinstance(node, Call):
        return any(uses_z(a) for a in node.args)
    return False


def evaluate(node, point, z=None):
    """Evaluate at one point (sequence of coordinates) or at arrays.

    ``point`` may be a 1-d coordinate tuple or an array of shape (..., dim);
    ``z`` a scalar or an array broadcastable against the point batch.
    Returns a float for single points, an ndarray for batches.
    """
    pt = np.asarray(point, dtype=float)
    scalar_input = pt.ndim == 1
    coords = {f"x{i + 1}": pt[..., i] for i in range(pt.shape[-1])}
    if z is not None:
        coords["z"] = np.asarray(z, dtype=float)
    elif uses_z(node):
        raise ExprDomainError("expression uses z but no z value was supplied")
    out = _eval(node, coords)
    out = np.asarray(out, dtype=float)
    if scalar_input:
        return float(out)
    return np.broadcast_to(out, pt.shape[:-1]).copy() if out.shape != pt.shape[:-1] else out


def _eval(node, coords):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        if node.name not in coords:
            raise ExprDomainError(f"missing value for variable {node.name!r}")
        return coords[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, coords)
    if isinstance(node, BinOp):
        a = _eval(node.left, coords)
        b = _eval(node.right, coords)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.divide(a, b)
    if isinstance(node, Pow):
        base = _eval(node.base, coords)
        e = node.exponent
        if e != int(e) and np.any(np.asarray(base) <= 0):
            raise ExprDomainError(
                f"non-integer exponent {e} requires a positive base")
        with np.errstate(divide="ignore", invalid="ignore"):
            if e == int(e):
                return np.power(np.asarray(base, dtype=float), int(e))
            return np.power(base, e)
    if isinstance(node, Call):
        args = [_eval(a, coords) for a in node.args]
        if node.fn == "log":
            if np.any(np.asarray(args[0]) <= 0):
                raise ExprDomainError("log of a non-positive argument")
            return np.log(args[0])
        if node.fn == "sqrt":
            if np.any(np.asarray(args[0]) < 0):
                raise ExprDomainError("sqrt of a negative argument")
            return np.sqrt(args[0])
        if node.fn == "exp":
            return np.exp(args[0])
        if node.fn == "sin":
            return np.sin(args[0])
        if node.fn == "cos":
            return np.cos(args[0])
        if node.fn == "abs":
            return np.abs(args[0])
        if node.fn == "min":
            return np.minimum(args[0], args[1])
        if node.fn == "max":
            return np.maximum(args[0], args[1])
    raise TypeError(f"unknown AST node {node!r}")


def to_string(node) -> str:
    """Render an AST back to parseable text (round-trips to an equal AST)."""
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"-({to_string(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_string(node.left)} {node.op} {to_string(node.right)})"
    if isinstance(node, Pow):
        return f"({to_string(node.base)}) ^ ({repr(node.exponent)})"
    if isinstance(node, Call):
        return f"{node.fn}({', '.join(to_string(a) for a in node.args)})"
    raise TypeError(f"unknown AST node {node!r}")
