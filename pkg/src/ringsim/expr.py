"""Arithmetic expressions: tokenizer, recursive-descent parser, evaluator.

Expressions evaluate over scalars or, inside per-point programs, over
numpy arrays holding one value per grid point.  The same tree evaluated
twice in the same context gives bit-identical results.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np


class ExprError(ValueError):
    pass


_TOKEN = re.compile(
    r"""
    (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/(),;=])
  | (?P<ws>\s+)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprError(f"unexpected character {text[pos]!r} at offset {pos} in {text!r}")
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(Token("eof", "", len(text)))
    return tokens


# --- AST ------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class Name:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg:
    arg: object

    def __str__(self):
        return f"(-{self.arg})"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object

    def __str__(self):
        return f"({self.left}{self.op}{self.right})"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple

    def __str__(self):
        return f"{self.func}({','.join(str(a) for a in self.args)})"


@dataclass(frozen=True)
class Assign:
    target: str
    expr: object

    def __str__(self):
        return f"{self.target}={self.expr}"


# --- builtins -------------------------------------------------------------

def _flag(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def _div(a, b):
    if np.any(np.asarray(b) == 0):
        raise ExprError("division by zero")
    return a / b


def _mod(a, b):
    if np.any(np.asarray(b) == 0):
        raise ExprError("mod with zero divisor")
    return _out(np.fmod(a, b))


def _log(a):
    if np.any(np.asarray(a) <= 0):
        raise ExprError("log of a non-positive value")
    return _out(np.log(a))


def _sqrt(a):
    if np.any(np.asarray(a) < 0):
        raise ExprError("sqrt of a negative value")
    return _out(np.sqrt(a))


def _pow(a, b):
    return _out(np.power(np.asarray(a, dtype=float), b))


def _no_table(col, s):
    raise ExprError("tab() is only available in a k_func with a data file")


BUILTINS = {
    "eq": (2, lambda a, b: _flag(np.equal(a, b))),
    "ne": (2, lambda a, b: _flag(np.not_equal(a, b))),
    "lt": (2, lambda a, b: _flag(np.less(a, b))),
    "le": (2, lambda a, b: _flag(np.less_equal(a, b))),
    "gt": (2, lambda a, b: _flag(np.greater(a, b))),
    "ge": (2, lambda a, b: _flag(np.greater_equal(a, b))),
    "mod": (2, _mod),
    "ifle0": (3, lambda a, b, c: _out(np.where(np.less_equal(a, 0), b, c))),
    "ifge0": (3, lambda a, b, c: _out(np.where(np.greater_equal(a, 0), b, c))),
    "abs": (1, lambda a: _out(np.abs(a))),
    "min": (2, lambda a, b: _out(np.minimum(a, b))),
    "max": (2, lambda a, b: _out(np.maximum(a, b))),
    "exp": (1, lambda a: _out(np.exp(a))),
    "log": (1, _log),
    "sqrt": (1, _sqrt),
    "sin": (1, lambda a: _out(np.sin(a))),
    "cos": (1, lambda a: _out(np.cos(a))),
    "tanh": (1, lambda a: _out(np.tanh(a))),
    "atan2": (2, lambda a, b: _out(np.arctan2(a, b))),
    "pow": (2, _pow),
    "floor": (1, lambda a: _out(np.floor(a))),
    "tab": (2, _no_table),
}


# --- parser ---------------------------------------------------------------

class Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def _next(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def _expect(self, text):
        t = self._next()
        if t.text != text:
            raise ExprError(f"expected {text!r} at offset {t.pos} in {self.text!r}, found {t.text or 'end'!r}")
        return t

    def expression(self):
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self._next().text
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self._next().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.tok.text == "-":
            self._next()
            return Neg(self.unary())
        if self.tok.text == "+":
            self._next()
            return self.unary()
        return self.primary()

    def primary(self):
        t = self._next()
        if t.kind == "num":
            return Num(float(t.text))
        if t.kind == "name":
            if self.tok.text == "(":
                self._next()
                args = []
                if self.tok.text != ")":
                    args.append(self.expression())
                    while self.tok.text == ",":
                        self._next()
                        args.append(self.expression())
                self._expect(")")
                if t.text not in BUILTINS:
                    raise ExprError(f"unknown function {t.text!r} in {self.text!r}")
                arity = BUILTINS[t.text][0]
                if len(args) != arity:
                    raise ExprError(f"{t.text} takes {arity} argument(s), got {len(args)}")
                return Call(t.text, tuple(args))
            return Name(t.text)
        if t.text == "(":
            node = self.expression()
            self._expect(")")
            return node
        raise ExprError(f"unexpected {t.text or 'end of input'!r} at offset {t.pos} in {self.text!r}")

    def at_end(self):
        return self.tok.kind == "eof"


def parse_expression(text):
    p = Parser(text)
    if p.at_end():
        raise ExprError("empty expression")
    node = p.expression()
    if not p.at_end():
        raise ExprError(f"trailing input at offset {p.tok.pos} in {text!r}")
    return node


def parse_program(text):
    """Statements ``name=expr`` separated by ``;`` or simply juxtaposed."""
    p = Parser(text)
    stmts = []
    while not p.at_end():
        if p.tok.text == ";":
            p._next()
            continue
        t = p._next()
        if t.kind != "name":
            raise ExprError(f"expected assignment target at offset {t.pos} in {text!r}")
        p._expect("=")
        stmts.append(Assign(t.text, p.expression()))
    return stmts


def parse_list(text):
    """Expressions separated by ``;``."""
    items = [s.strip() for s in text.split(";")]
    return [parse_expression(s) for s in items if s]


def names_in(node):
    """Free variable names referenced by an expression tree."""
    if isinstance(node, Name):
        return {node.name}
    if isinstance(node, Neg):
        return names_in(node.arg)
    if isinstance(node, BinOp):
        return names_in(node.left) | names_in(node.right)
    if isinstance(node, Call):
        out = set()
        for a in node.args:
            out |= names_in(a)
        return out
    if isinstance(node, Assign):
        return names_in(node.expr)
    return set()


def evaluate(node, lookup, funcs=None):
    """Evaluate ``node``; ``lookup(name)`` returns a scalar or array.
    ``funcs`` overrides builtin implementations by name."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Name):
        return lookup(node.name)
    if isinstance(node, Neg):
        return -evaluate(node.arg, lookup, funcs)
    if isinstance(node, BinOp):
        a = evaluate(node.left, lookup, funcs)
        b = evaluate(node.right, lookup, funcs)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return _div(a, b)
    if isinstance(node, Call):
        args = [evaluate(a, lookup, funcs) for a in node.args]
        if funcs and node.func in funcs:
            return funcs[node.func](*args)
        return BUILTINS[node.func][1](*args)
    raise ExprError(f"cannot evaluate {node!r}")


# --- global environment ---------------------------------------------------

KINDS = ("real", "int", "str")


class GlobalEnv:
    """Named globals shared by every device (and replicated per worker).

    ``t`` (turn counter, int) and ``always`` (1.0) are predefined and
    read-only for scripts.
    """

    READONLY = frozenset({"t", "always"})

    def __init__(self, script_name="", args=()):
        self.kinds = {}
        self.values = {}
        self.macros = {}
        self.positional = {"0": script_name}
        for k, a in enumerate(args, start=1):
            if k > 9:
                raise ExprError("at most 9 positional script arguments")
            self.positional[str(k)] = str(a)
        self.kinds["t"] = "int"
        self.values["t"] = 0
        self.kinds["always"] = "real"
        self.values["always"] = 1.0

    def declared(self, name):
        return name in self.kinds or name in self.macros

    def declare(self, kind, name, init=None):
        if kind not in KINDS:
            raise ExprError(f"unknown variable kind {kind!r}")
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise ExprError(f"invalid variable name {name!r}")
        if self.declared(name):
            raise ExprError(f"variable {name!r} already declared")
        if kind == "str":
            self.macros[name] = "" if init is None else str(init).strip()
            return
        value = 0.0
        if init is not None and str(init).strip():
            value = self.eval(init)
        self.kinds[name] = kind
        self.values[name] = int(value) if kind == "int" else float(value)

    def __contains__(self, name):
        return name in self.kinds

    def __getitem__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise ExprError(f"undeclared variable {name!r}") from None

    def set(self, name, value):
        if name not in self.kinds:
            raise ExprError(f"undeclared variable {name!r}")
        value = float(value)
        self.values[name] = int(value) if self.kinds[name] == "int" else value

    def lookup(self, name):
        return self[name]

    def eval(self, expr):
        node = parse_expression(expr) if isinstance(expr, str) else expr
        return float(evaluate(node, self.lookup))

    def macro(self, name):
        if name in self.positional:
            return self.positional[name]
        if name in self.macros:
            return self.macros[name]
        if name.isdigit():
            raise ExprError(f"positional parameter [{name}] not supplied")
        raise ExprError(f"undefined macro [{name}]")

    def snapshot(self):
        """Deterministic serialization of all numeric globals."""
        return tuple(sorted((k, repr(v)) for k, v in self.values.items()))

    def restore(self, snap):
        for k, v in snap:
            self.values[k] = int(v) if self.kinds[k] == "int" else float(v)
