"""Coefficient expressions over time ``s`` and space ``x``.

Grammar (whitespace is insignificant)::

    expr     = term { ("+" | "-") term } ;
    term     = unary { ("*" | "/") unary } ;
    unary    = "-" unary | power ;
    power    = primary { "^" exponent } ;
    exponent = [ "-" ] integer | "(" [ "-" ] integer ")" ;
    primary  = number | "s" | "x" | "pi" | func "(" expr { "," expr } ")" | "(" expr ")" ;
    func     = "sin" | "cos" | "exp" | "tanh" | "abs" | "min" | "max" ;

``^`` binds tighter than unary minus, so ``-x^2`` is ``-(x^2)``.  All binary
operators, ``^`` included, associate to the left.  Exponents are integer
literals.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass

import numpy as np

VARIABLES = ("s", "x")
CONSTANTS = {"pi": math.pi}
FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "tanh": 1, "abs": 1, "min": 2, "max": 2}
_NONSMOOTH = {"abs", "min", "max"}


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, text: str):
        super().__init__(f"{message} at offset {offset} in {text!r}")
        self.offset = offset
        self.text = text


class EvaluationError(ArithmeticError):
    pass


class NonDifferentiableError(ValueError):
    pass


class Expr:
    """Base class of expression nodes.  Nodes are immutable and hashable."""

    precedence = 100

    def evaluate(self, s, x) -> np.ndarray:
        """Evaluate on (broadcast) arrays of times and positions."""
        s_arr = np.asarray(s, dtype=float)
        x_arr = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(s_arr.shape, x_arr.shape)
        with np.errstate(over="ignore", invalid="ignore"):
            out = self._function()(s_arr, x_arr)
        if np.shape(out) == shape:
            return np.asarray(out, dtype=float)
        return np.array(np.broadcast_to(out, shape), dtype=float)

    def __getstate__(self):
        state = dict(self.__dict__)
        state.pop("_fn", None)  # compiled lambdas do not pickle
        return state

    def _function(self):
        fn = self.__dict__.get("_fn")
        if fn is None:
            fn = _compiled(self)
            object.__setattr__(self, "_fn", fn)
        return fn

    def interpret(self, s, x) -> np.ndarray:
        """Reference tree-walking evaluation (slow; ``evaluate`` is compiled)."""
        s_arr = np.asarray(s, dtype=float)
        x_arr = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(s_arr.shape, x_arr.shape)
        with np.errstate(over="ignore", invalid="ignore"):
            out = self._ev(s_arr, x_arr)
        return np.array(np.broadcast_to(out, shape), dtype=float)

    def __call__(self, s, x) -> np.ndarray:
        return self.evaluate(s, x)

    def depends_on(self, var: str) -> bool:
        return any(child.depends_on(var) for child in self.children())

    def children(self) -> tuple[Expr, ...]:
        return ()

    def is_const(self) -> bool:
        return not (self.depends_on("s") or self.depends_on("x"))

    def _ev(self, s, x):
        raise NotImplementedError

    def _src(self) -> str:
        """numpy source for this node in terms of ``s`` and ``x``."""
        raise NotImplementedError

    def diff(self, var: str) -> Expr:
        raise NotImplementedError

    def _wrap(self, child: Expr, min_prec: int) -> str:
        text = str(child)
        return f"({text})" if child.precedence < min_prec else text

    # arithmetic sugar used when building derived coefficients
    def __add__(self, other: Expr | float) -> Expr:
        return add(self, _lift(other))

    def __radd__(self, other: float) -> Expr:
        return add(_lift(other), self)

    def __sub__(self, other: Expr | float) -> Expr:
        return sub(self, _lift(other))

    def __rsub__(self, other: float) -> Expr:
        return sub(_lift(other), self)

    def __mul__(self, other: Expr | float) -> Expr:
        return mul(self, _lift(other))

    def __rmul__(self, other: float) -> Expr:
        return mul(_lift(other), self)

    def __truediv__(self, other: Expr | float) -> Expr:
        return div(self, _lift(other))

    def __neg__(self) -> Expr:
        return neg(self)


def _lift(v: Expr | float) -> Expr:
    return v if isinstance(v, Expr) else Const(float(v))


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    @property
    def precedence(self) -> int:  # type: ignore[override]
        return 100 if self.value >= 0 else 3

    def _ev(self, s, x):
        return np.float64(self.value)

    def _src(self) -> str:
        return f"_f({self.value!r})"

    def diff(self, var: str) -> Expr:
        return ZERO

    def __str__(self) -> str:
        return _fmt_number(self.value)


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str

    def depends_on(self, var: str) -> bool:
        return self.name == var

    def _ev(self, s, x):
        return s if self.name == "s" else x

    def _src(self) -> str:
        return self.name

    def diff(self, var: str) -> Expr:
        return ONE if self.name == var else ZERO

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr
    precedence = 3

    def children(self):
        return (self.arg,)

    def _ev(self, s, x):
        return -self.arg._ev(s, x)

    def _src(self) -> str:
        return f"(-{self.arg._src()})"

    def diff(self, var: str) -> Expr:
        return neg(self.arg.diff(var))

    def __str__(self) -> str:
        return "-" + self._wrap(self.arg, 4)


_BIN_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def precedence(self) -> int:  # type: ignore[override]
        return _BIN_PREC[self.op]

    def children(self):
        return (self.left, self.right)

    def _ev(self, s, x):
        a = self.left._ev(s, x)
        b = self.right._ev(s, x)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0):
            raise EvaluationError(f"division by zero in {self}")
        return a / b

    def _src(self) -> str:
        a, b = self.left._src(), self.right._src()
        if self.op == "/" and isinstance(self.right, Const) and self.right.value != 0:
            return f"({a} / {b})"
        if self.op == "/":
            return f"_div({a}, {b}, {str(self)!r})"
        return f"({a} {self.op} {b})"

    def diff(self, var: str) -> Expr:
        u, v = self.left, self.right
        du, dv = u.diff(var), v.diff(var)
        if self.op == "+":
            return add(du, dv)
        if self.op == "-":
            return sub(du, dv)
        if self.op == "*":
            return add(mul(du, v), mul(u, dv))
        return div(sub(mul(du, v), mul(u, dv)), power(v, 2))

    def __str__(self) -> str:
        p = self.precedence
        left = self._wrap(self.left, p)
        # left-associative: an equal-precedence right operand needs parentheses
        right = self._wrap(self.right, p + 1)
        sep = f" {self.op} " if p == 1 else self.op
        return f"{left}{sep}{right}"


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exponent: int
    precedence = 4

    def children(self):
        return (self.base,)

    def _ev(self, s, x):
        b = self.base._ev(s, x)
        if self.exponent < 0:
            if np.any(np.asarray(b) == 0):
                raise EvaluationError(f"zero raised to a negative power in {self}")
            return 1.0 / np.power(b, -self.exponent)
        return np.power(b, self.exponent)

    def _src(self) -> str:
        if self.exponent < 0:
            return f"_negpow({self.base._src()}, {-self.exponent}, {str(self)!r})"
        return f"_np.power({self.base._src()}, {self.exponent})"

    def diff(self, var: str) -> Expr:
        n = self.exponent
        if n == 0:
            return ZERO
        return mul(mul(Const(float(n)), power(self.base, n - 1)), self.base.diff(var))

    def __str__(self) -> str:
        exp = str(self.exponent) if self.exponent >= 0 else f"({self.exponent})"
        return f"{self._wrap(self.base, 5)}^{exp}"


_UFUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh, "abs": np.abs}


@dataclass(frozen=True, eq=True)
class Call(Expr):
    name: str
    args: tuple[Expr, ...]

    def children(self):
        return self.args

    def _ev(self, s, x):
        vals = [a._ev(s, x) for a in self.args]
        if self.name == "min":
            return np.minimum(*vals)
        if self.name == "max":
            return np.maximum(*vals)
        return _UFUNCS[self.name](vals[0])

    def _src(self) -> str:
        name = {"min": "minimum", "max": "maximum", "abs": "abs"}.get(self.name, self.name)
        return f"_np.{name}({', '.join(a._src() for a in self.args)})"

    def diff(self, var: str) -> Expr:
        if not self.depends_on(var):
            return ZERO
        if self.name in _NONSMOOTH:
            raise NonDifferentiableError(f"cannot differentiate {self.name}() with respect to {var}")
        (u,) = self.args
        du = u.diff(var)
        if self.name == "sin":
            outer = call("cos", u)
        elif self.name == "cos":
            outer = neg(call("sin", u))
        elif self.name == "exp":
            outer = self
        else:  # tanh
            outer = sub(ONE, power(self, 2))
        return mul(outer, du)

    def __str__(self) -> str:
        return f"{self.name}({', '.join(str(a) for a in self.args)})"


ZERO = Const(0.0)
ONE = Const(1.0)


def _div(a, b, where: str):
    if np.any(np.asarray(b) == 0):
        raise EvaluationError(f"division by zero in {where}")
    return a / b


def _negpow(b, n: int, where: str):
    if np.any(np.asarray(b) == 0):
        raise EvaluationError(f"zero raised to a negative power in {where}")
    return 1.0 / np.power(b, n)


_NAMESPACE = {"_np": np, "_f": np.float64, "_div": _div, "_negpow": _negpow, "inf": math.inf, "nan": math.nan}


@functools.lru_cache(maxsize=1024)
def _compiled(e: Expr):
    """The tree flattened into one numpy lambda; built from trusted node output only."""
    return eval(f"lambda s, x: {e._src()}", dict(_NAMESPACE))  # noqa: S307


# --------------------------------------------------------------------------
# simplifying constructors
# --------------------------------------------------------------------------


def _cval(e: Expr) -> float | None:
    if isinstance(e, Const):
        return e.value
    return None


def add(a: Expr, b: Expr) -> Expr:
    va, vb = _cval(a), _cval(b)
    if va is not None and vb is not None:
        return Const(va + vb)
    if va == 0:
        return b
    if vb == 0:
        return a
    if isinstance(b, Neg):
        return sub(a, b.arg)
    if vb is not None and vb < 0:
        return BinOp("-", a, Const(-vb))
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    va, vb = _cval(a), _cval(b)
    if va is not None and vb is not None:
        return Const(va - vb)
    if vb == 0:
        return a
    if va == 0:
        return neg(b)
    if a == b:
        return ZERO
    if isinstance(b, Neg):
        return add(a, b.arg)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    va, vb = _cval(a), _cval(b)
    if va is not None and vb is not None:
        return Const(va * vb)
    if va == 0 or vb == 0:
        return ZERO
    if va == 1:
        return b
    if vb == 1:
        return a
    if va == -1:
        return neg(b)
    if vb == -1:
        return neg(a)
    if vb is not None:
        a, b = b, a
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    va, vb = _cval(a), _cval(b)
    if vb == 0:
        return BinOp("/", a, b)  # evaluation raises
    if va is not None and vb is not None:
        return Const(va / vb)
    if va == 0:
        return ZERO
    if vb == 1:
        return a
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    va = _cval(a)
    if va is not None:
        return Const(-va)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, n: int) -> Expr:
    va = _cval(a)
    if n == 0:
        return ONE
    if n == 1:
        return a
    if va is not None and not (va == 0 and n < 0):
        return Const(va**n)
    if isinstance(a, Pow):
        return Pow(a.base, a.exponent * n)
    return Pow(a, n)


def call(name: str, *args: Expr) -> Expr:
    if all(_cval(a) is not None for a in args):
        vals = [np.float64(_cval(a)) for a in args]
        return Const(float(Call(name, tuple(Const(float(v)) for v in vals))._ev(0.0, 0.0)))
    return Call(name, tuple(args))


def diff_expr(e: Expr, var: str) -> Expr:
    """Exact symbolic derivative of ``e`` with respect to ``"s"`` or ``"x"``."""
    if var not in VARIABLES:
        raise ValueError(f"can only differentiate with respect to s or x, not {var!r}")
    return e.diff(var)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[start]!r}", start, text)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def error(self, message: str, offset: int | None = None):
        raise ExprSyntaxError(message, self.tok[2] if offset is None else offset, self.text)

    def eat(self, value: str) -> bool:
        if self.tok[0] == "op" and self.tok[1] == value:
            self.i += 1
            return True
        return False

    def expect(self, value: str) -> None:
        if not self.eat(value):
            found = self.tok[1] or "end of input"
            self.error(f"expected {value!r}, found {found!r}")

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok[0] != "end":
            self.error(f"unexpected {self.tok[1]!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            if self.eat("+"):
                e = add(e, self.term())
            elif self.eat("-"):
                e = sub(e, self.term())
            else:
                return e

    def term(self) -> Expr:
        e = self.unary()
        while True:
            if self.eat("*"):
                e = mul(e, self.unary())
            elif self.eat("/"):
                e = div(e, self.unary())
            else:
                return e

    def unary(self) -> Expr:
        if self.eat("-"):
            return neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        e = self.primary()
        while self.eat("^"):
            e = power(e, self.exponent())
        return e

    def exponent(self) -> int:
        paren = self.eat("(")
        negative = self.eat("-")
        kind, value, offset = self.tok
        if kind != "num" or not re.fullmatch(r"\d+", value):
            self.error("exponent must be an integer literal")
        self.i += 1
        if paren:
            self.expect(")")
        return -int(value) if negative else int(value)

    def primary(self) -> Expr:
        kind, value, offset = self.tok
        if kind == "num":
            self.i += 1
            return Const(float(value))
        if kind == "name":
            self.i += 1
            if value in VARIABLES:
                return Var(value)
            if value in CONSTANTS:
                return Const(CONSTANTS[value])
            if value in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.eat(","):
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[value]:
                    self.error(f"{value}() takes {FUNCTIONS[value]} argument(s)", offset)
                return call(value, *args)
            self.error(f"unknown identifier {value!r}", offset)
        if self.eat("("):
            e = self.expr()
            self.expect(")")
            return e
        found = value or "end of input"
        self.error(f"unexpected {found!r}")
        raise AssertionError("unreachable")


def parse_expr(text: str | float | int) -> Expr:
    """Parse a coefficient expression; numbers are accepted as constants."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return Const(float(text))
    if not isinstance(text, str):
        raise TypeError(f"expected an expression string, got {type(text).__name__}")
    return _Parser(text).parse()
