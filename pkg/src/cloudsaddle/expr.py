"""Polynomial expression trees: parsing, printing, evaluation and symbolic
differentiation.

The grammar is deliberately small::

    expr   := term (('+' | '-') term)*
    term   := unary ('*' unary)*
    unary  := '-' unary | power
    power  := atom ('^' exponent)*        # right-associative
    atom   := NUMBER | NAME | '(' expr ')'
    exponent := ['-'] INTEGER

Only integer exponents are accepted, so every expression is a (Laurent)
polynomial in its variables.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

__all__ = [
    "Expression",
    "Constant",
    "Variable",
    "Sum",
    "Product",
    "Power",
    "Negate",
    "ExpressionSyntaxError",
    "UnboundVariableError",
    "parse_expr",
    "evaluate",
    "differentiate",
]


class ExpressionSyntaxError(ValueError):
    """Raised when expression text does not conform to the grammar."""

    def __init__(self, message: str, text: str = "", position: int = -1):
        if position >= 0:
            message = f"{message} at position {position}"
        super().__init__(message)
        self.text = text
        self.position = position


class UnboundVariableError(KeyError):
    """Raised when evaluation meets a variable with no assigned value."""


# Binding strength used by the printer.
_PREC_SUM, _PREC_PRODUCT, _PREC_UNARY, _PREC_POWER, _PREC_ATOM = range(5)


class Expression:
    """Base class for immutable expression nodes."""

    __slots__ = ()

    precedence = _PREC_ATOM

    def evaluate(self, assignment: Mapping[str, float]) -> float:
        raise NotImplementedError

    def diff(self, var: str) -> "Expression":
        raise NotImplementedError

    def free_vars(self) -> frozenset:
        raise NotImplementedError

    def rename(self, mapping: Mapping[str, str]) -> "Expression":
        """Return a copy with variables renamed according to ``mapping``."""
        raise NotImplementedError

    def to_python(self) -> str:
        """Python source for this expression, using variable names directly."""
        raise NotImplementedError

    def compile(self, args: Sequence[str]) -> Callable[..., float]:
        """Compile to a function of positional arguments named ``args``.

        The generated function works on floats and on numpy arrays alike.
        Variables not listed in ``args`` raise ``UnboundVariableError``.
        """
        missing = self.free_vars() - set(args)
        if missing:
            raise UnboundVariableError(f"unbound variables: {sorted(missing)}")
        return compile_lambda(args, self.to_python())

    def __str__(self) -> str:
        return self._format()

    def _format(self) -> str:
        raise NotImplementedError

    def _wrap(self, child: "Expression", min_prec: int) -> str:
        text = child._format()
        if child.precedence < min_prec:
            return f"({text})"
        return text


def compile_lambda(args: Sequence[str], body: str) -> Callable[..., float]:
    """Build a lambda from generated source; no builtins are exposed."""
    src = f"lambda {', '.join(args)}: {body}"
    return eval(src, {"__builtins__": {}})  # noqa: S307 - source is generated


@dataclass(frozen=True)
class Constant(Expression):
    value: float

    def __post_init__(self):
        value = float(self.value)
        if not math.isfinite(value):
            raise ValueError(f"non-finite constant {self.value!r}")
        object.__setattr__(self, "value", value)

    @property
    def precedence(self):
        return _PREC_UNARY if math.copysign(1.0, self.value) < 0 else _PREC_ATOM

    def evaluate(self, assignment):
        return self.value

    def diff(self, var):
        return ZERO

    def free_vars(self):
        return frozenset()

    def rename(self, mapping):
        return self

    def to_python(self):
        return f"({self.value!r})"

    def _format(self):
        return repr(self.value)


@dataclass(frozen=True)
class Variable(Expression):
    name: str

    def evaluate(self, assignment):
        try:
            return float(assignment[self.name])
        except KeyError:
            raise UnboundVariableError(self.name) from None

    def diff(self, var):
        return ONE if var == self.name else ZERO

    def free_vars(self):
        return frozenset((self.name,))

    def rename(self, mapping):
        return Variable(mapping.get(self.name, self.name))

    def to_python(self):
        return self.name

    def _format(self):
        return self.name


@dataclass(frozen=True)
class Sum(Expression):
    terms: tuple
    precedence = _PREC_SUM

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    def evaluate(self, assignment):
        terms = iter(self.terms)
        total = next(terms).evaluate(assignment)
        for t in terms:
            total = total + t.evaluate(assignment)
        return total

    def diff(self, var):
        return make_sum(t.diff(var) for t in self.terms)

    def free_vars(self):
        return frozenset().union(*(t.free_vars() for t in self.terms))

    def rename(self, mapping):
        return Sum(tuple(t.rename(mapping) for t in self.terms))

    def to_python(self):
        return "(" + " + ".join(t.to_python() for t in self.terms) + ")"

    def _format(self):
        parts = []
        for k, t in enumerate(self.terms):
            if k > 0 and isinstance(t, Negate):
                parts.append(" - " + self._wrap(t.operand, _PREC_PRODUCT))
            elif k > 0 and isinstance(t, Constant) and t.precedence == _PREC_UNARY:
                parts.append(" - " + repr(-t.value))
            elif k == 0:
                # a leading Sum must keep its parentheses to survive re-parsing
                parts.append(self._wrap(t, _PREC_PRODUCT))
            else:
                parts.append(" + " + self._wrap(t, _PREC_PRODUCT))
        return "".join(parts)


@dataclass(frozen=True)
class Product(Expression):
    factors: tuple
    precedence = _PREC_PRODUCT

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))

    def evaluate(self, assignment):
        factors = iter(self.factors)
        total = next(factors).evaluate(assignment)
        for f in factors:
            total = total * f.evaluate(assignment)
        return total

    def diff(self, var):
        terms = []
        for k, f in enumerate(self.factors):
            df = f.diff(var)
            if _is_zero(df):
                continue
            terms.append(make_product(self.factors[:k] + (df,) + self.factors[k + 1:]))
        return make_sum(terms)

    def free_vars(self):
        return frozenset().union(*(f.free_vars() for f in self.factors))

    def rename(self, mapping):
        return Product(tuple(f.rename(mapping) for f in self.factors))

    def to_python(self):
        return "(" + " * ".join(f.to_python() for f in self.factors) + ")"

    def _format(self):
        return " * ".join(self._wrap(f, _PREC_UNARY) for f in self.factors)


@dataclass(frozen=True)
class Power(Expression):
    base: Expression
    exponent: int
    precedence = _PREC_POWER

    def __post_init__(self):
        if isinstance(self.exponent, bool) or int(self.exponent) != self.exponent:
            raise ValueError(f"non-integer exponent {self.exponent!r}")
        object.__setattr__(self, "exponent", int(self.exponent))

    def evaluate(self, assignment):
        b = self.base.evaluate(assignment)
        try:
            return b ** self.exponent
        except ZeroDivisionError:
            raise ZeroDivisionError(f"0 raised to negative power in {self}") from None

    def diff(self, var):
        db = self.base.diff(var)
        if _is_zero(db) or self.exponent == 0:
            return ZERO
        n = self.exponent
        if n == 1:
            return db
        inner = self.base if n == 2 else Power(self.base, n - 1)
        return make_product((Constant(n), inner, db))

    def free_vars(self):
        return self.base.free_vars()

    def rename(self, mapping):
        return Power(self.base.rename(mapping), self.exponent)

    def to_python(self):
        return f"({self.base.to_python()} ** {self.exponent})"

    def _format(self):
        base = self._wrap(self.base, _PREC_ATOM)
        return f"{base}^{self.exponent}"


@dataclass(frozen=True)
class Negate(Expression):
    operand: Expression
    precedence = _PREC_UNARY

    def evaluate(self, assignment):
        return -self.operand.evaluate(assignment)

    def diff(self, var):
        return make_negate(self.operand.diff(var))

    def free_vars(self):
        return self.operand.free_vars()

    def rename(self, mapping):
        return Negate(self.operand.rename(mapping))

    def to_python(self):
        return f"(-{self.operand.to_python()})"

    def _format(self):
        inner = self.operand
        if isinstance(inner, Constant):
            # keep Negate(Constant) distinct from a negative literal
            return f"-({inner._format()})"
        return "-" + self._wrap(inner, _PREC_UNARY)


ZERO = Constant(0.0)
ONE = Constant(1.0)


def _is_zero(e: Expression) -> bool:
    return isinstance(e, Constant) and e.value == 0.0


def _is_one(e: Expression) -> bool:
    return isinstance(e, Constant) and e.value == 1.0


def make_negate(e: Expression) -> Expression:
    if isinstance(e, Constant):
        return Constant(-e.value) if e.value != 0.0 else ZERO
    return Negate(e)


def make_sum(terms: Iterable[Expression]) -> Expression:
    """Sum with zero terms dropped; folds an all-constant sum."""
    kept = [t for t in terms if not _is_zero(t)]
    if not kept:
        return ZERO
    if len(kept) == 1:
        return kept[0]
    if all(isinstance(t, Constant) for t in kept):
        return Constant(math.fsum(t.value for t in kept))
    return Sum(tuple(kept))


def make_product(factors: Iterable[Expression]) -> Expression:
    """Product with unit factors dropped; collapses to zero on a zero factor."""
    factors = list(factors)
    if any(_is_zero(f) for f in factors):
        return ZERO
    consts = [f for f in factors if isinstance(f, Constant)]
    rest = [f for f in factors if not isinstance(f, Constant)]
    coeff = math.prod(c.value for c in consts)
    kept = ([] if coeff == 1.0 else [Constant(coeff)]) + rest
    if not kept:
        return Constant(coeff)
    if len(kept) == 1:
        return kept[0]
    return Product(tuple(kept))


# -- parsing -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<op>[-+*^()])
    )""",
    re.VERBOSE,
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            # report the first non-space offending character
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExpressionSyntaxError(f"unexpected character {text[bad]!r}", text, bad)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, allowed):
        self.text = text
        self.allowed = allowed
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ExpressionSyntaxError(message, self.text, tok[2])

    def expect(self, value):
        tok = self.take()
        if tok[1] != value or tok[0] == "end":
            raise self.error(f"expected {value!r}", tok)
        return tok

    def parse(self):
        if self.peek()[0] == "end":
            raise self.error("empty expression")
        e = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return e

    def expr(self):
        terms = [self.term()]
        while self.at_op("+") or self.at_op("-"):
            op = self.take()[1]
            t = self.term()
            if op == "-":
                t = Constant(-t.value) if isinstance(t, Constant) else Negate(t)
            terms.append(t)
        return terms[0] if len(terms) == 1 else Sum(tuple(terms))

    def at_op(self, symbol):
        kind, value, _ = self.peek()
        return kind == "op" and value == symbol

    def term(self):
        factors = [self.unary()]
        while self.at_op("*"):
            self.take()
            factors.append(self.unary())
        return factors[0] if len(factors) == 1 else Product(tuple(factors))

    def unary(self):
        if self.at_op("-"):
            self.take()
            operand = self.unary()
            if isinstance(operand, Constant):
                return Constant(-operand.value)
            return Negate(operand)
        return self.power()

    def power(self):
        base = self.atom()
        if self.at_op("^"):
            self.take()
            return Power(base, self.exponent())
        return base

    def exponent(self):
        sign = 1
        if self.at_op("-"):
            self.take()
            sign = -1
        tok = self.take()
        if tok[0] != "number":
            raise self.error("non-integer exponent", tok)
        if not re.fullmatch(r"\d+", tok[1]):
            raise self.error(f"non-integer exponent {tok[1]!r}", tok)
        value = sign * int(tok[1])
        if self.at_op("^"):
            self.take()
            rest = self.exponent()
            if rest < 0:
                raise self.error("non-integer exponent")
            value = value ** rest
        return value

    def atom(self):
        tok = self.take()
        kind, value, _ = tok
        if kind == "number":
            return Constant(float(value))
        if kind == "name":
            if self.allowed is not None and value not in self.allowed:
                raise self.error(f"unknown variable {value!r}", tok)
            return Variable(value)
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "end":
            raise self.error("unexpected end of expression", tok)
        raise self.error(f"unexpected token {value!r}", tok)


def parse_expr(text: str, allowed_vars: Iterable[str] | None = None) -> Expression:
    """Parse ``text`` into an expression tree.

    Parameters
    ----------
    text : str
        Infix polynomial, e.g. ``"3*x1^2 + x4^4 - 50"``.
    allowed_vars : iterable of str, optional
        Variable names that may appear. ``None`` accepts any name.

    Raises
    ------
    ExpressionSyntaxError
        On malformed input, unknown variables or non-integer exponents; the
        exception carries the character ``position``.
    """
    allowed = None if allowed_vars is None else frozenset(allowed_vars)
    return _Parser(text, allowed).parse()


def evaluate(e: Expression, assignment: Mapping[str, float]) -> float:
    return e.evaluate(assignment)


def differentiate(e: Expression, var: str) -> Expression:
    """Symbolic partial derivative of ``e`` with respect to ``var``."""
    return e.diff(var)
