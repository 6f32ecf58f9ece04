"""Exact scalar expressions.

Expressions are sympy objects restricted to a small node set: rational
constants, variables, Add, Mul, integer Pow and sqrt.  They are built
through `parse_expr` (a hand-written recursive-descent parser with
byte-offset error reporting) or through sympy arithmetic on the results.
sympy's construction cache gives hash-consing for free: structurally
equal constructions are pointer-equal, so dictionary lookups and
equality checks on subterms are O(1).

Zero-testing is randomized evaluation (Schwartz-Zippel style), never
simplification: an expression is reported Zero when it vanishes at
`trials` random rational points of its domain, NonZero with a witness
point otherwise.  sqrt-free expressions are evaluated exactly over Q;
anything containing sqrt is evaluated with mpmath at a configurable
binary precision and compared against a tolerance.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional

import mpmath
import sympy as sp


class Verdict(Enum):
    ZERO = "zero"
    NONZERO = "nonzero"
    MIXED = "mixed"  # vanishes at some sampled points but not all
    NOT_APPLICABLE = "not_applicable"

    def __bool__(self):  # truthy == "something is there"
        return self is Verdict.NONZERO


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvalError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# parser
#
# expr   := term (('+'|'-') term)*
# term   := factor (('*'|'/') factor)*
# factor := ('-')* base ('^' integer)?
# base   := integer | ident | '(' expr ')' | 'sqrt' '(' expr ')'

_OPS = set("+-*/^()&")  # '&' is only meaningful in the form grammar


def _tokenize(src: str):
    toks = []  # (kind, text, offset)
    i, n = 0, len(src)
    while i < n:
        c = src[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPS:
            toks.append(("op", c, i))
            i += 1
            continue
        if c.isdigit():
            j = i
            while j < n and src[j].isdigit():
                j += 1
            if j < n and (src[j].isalpha() or src[j] == "_" or src[j] == "."):
                raise ParseError(f"malformed number {src[i:j + 1]!r}", i)
            toks.append(("int", src[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            toks.append(("ident", src[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    toks.append(("end", "", n))
    return toks


class _Parser:
    def __init__(self, src: str, variables: Optional[set] = None):
        self.src = src
        self.toks = _tokenize(src)
        self.pos = 0
        self.variables = variables

    def peek(self):
        return self.toks[self.pos]

    def next(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect_op(self, op: str):
        kind, text, off = self.peek()
        if kind != "op" or text != op:
            raise ParseError(f"expected {op!r}", off)
        self.next()

    def parse(self) -> sp.Expr:
        e = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected trailing input {text!r}", off)
        return e

    def expr(self) -> sp.Expr:
        e = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.next()
                rhs = self.term()
                e = e + rhs if text == "+" else e - rhs
            else:
                return e

    def term(self) -> sp.Expr:
        e = self.factor()
        while True:
            kind, text, off = self.peek()
            if kind == "op" and text in "*/":
                self.next()
                rhs = self.factor()
                if text == "*":
                    e = e * rhs
                else:
                    if rhs == 0:
                        raise ParseError("division by constant zero", off)
                    e = e / rhs
            else:
                return e

    def factor(self) -> sp.Expr:
        sign = 1
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text == "-":
                self.next()
                sign = -sign
            else:
                break
        b = self.base()
        kind, text, off = self.peek()
        if kind == "op" and text == "^":
            self.next()
            kind, text, off = self.peek()
            neg = False
            if kind == "op" and text == "-":
                self.next()
                neg = True
                kind, text, off = self.peek()
            if kind != "int":
                raise ParseError("exponent must be an integer", off)
            self.next()
            k = int(text)
            b = b ** (-k if neg else k)
        return sign * b

    def base(self) -> sp.Expr:
        kind, text, off = self.next()
        if kind == "int":
            return sp.Integer(int(text))
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        if kind == "ident":
            if text == "sqrt":
                kind2, text2, _ = self.peek()
                if kind2 == "op" and text2 == "(":
                    self.next()
                    e = self.expr()
                    self.expect_op(")")
                    return sp.sqrt(e)
                raise ParseError("sqrt must be followed by '('", off)
            if self.variables is not None and text not in self.variables:
                raise ParseError(f"unknown identifier {text!r}", off)
            return sp.Symbol(text)
        raise ParseError(f"expected a value, got {text!r}" if text else "unexpected end of input", off)


def parse_expr(src: str, variables: Optional[Iterable[str]] = None) -> sp.Expr:
    """Parse the scalar DSL into an expression.

    If `variables` is given, any identifier outside it raises ParseError
    with the byte offset of the offending token.
    """
    vs = set(variables) if variables is not None else None
    return _Parser(src, vs).parse()


def differentiate(e: sp.Expr, var) -> sp.Expr:
    if isinstance(var, str):
        var = sp.Symbol(var)
    return sp.diff(e, var)


# ---------------------------------------------------------------------------
# evaluation


def has_sqrt(e: sp.Expr) -> bool:
    for p in sp.preorder_traversal(e):
        if isinstance(p, sp.Pow) and not p.exp.is_Integer:
            return True
    return False


def _to_rational(v) -> sp.Rational:
    if isinstance(v, Fraction):
        return sp.Rational(v.numerator, v.denominator)
    if isinstance(v, int):
        return sp.Integer(v)
    if isinstance(v, sp.Expr):
        return v
    raise EvalError(f"unsupported assignment value {v!r}")


def evaluate(e: sp.Expr, assignment: Mapping[str, object], precision: Optional[int] = None):
    """Evaluate `e` at a point.

    sqrt-free expressions with rational assignments evaluate exactly and
    return a Fraction.  Otherwise mpmath is used at `precision` binary
    digits (default 256) and an mpf is returned.  Division by zero and
    negative radicands raise EvalError.
    """
    sub = {sp.Symbol(k): _to_rational(v) for k, v in assignment.items()}
    exact_ok = not has_sqrt(e) and all(v.is_Rational for v in sub.values())
    if exact_ok and precision is None:
        r = e.xreplace(sub)
        if r.free_symbols:
            missing = sorted(str(s) for s in r.free_symbols)
            raise EvalError(f"unassigned variables: {missing}")
        if not r.is_Rational:
            r = sp.cancel(r)
        if not r.is_Rational:
            raise EvalError(f"evaluation did not produce a rational: {r}")
        return Fraction(int(r.p), int(r.q))
    prec = precision or 256
    free = sorted(e.free_symbols, key=str)
    missing = [str(s) for s in free if s not in sub]
    if missing:
        raise EvalError(f"unassigned variables: {missing}")
    fn = _lambdified(e, tuple(free))
    with mpmath.workprec(prec):
        args = [_to_mp(sub[s], prec) for s in free]
        try:
            v = fn(*args)
        except (ZeroDivisionError, ValueError) as exc:
            raise EvalError(str(exc)) from exc
        v = mpmath.mpmathify(v)
        if isinstance(v, mpmath.mpc):
            if abs(v.imag) > mpmath.mpf(2) ** (-prec // 2):
                raise EvalError("evaluation left the real line (negative radicand?)")
            v = v.real
        return v


def _to_mp(v, prec: int):
    if isinstance(v, sp.Expr):
        if v.is_Rational:
            return mpmath.mpf(int(v.p)) / mpmath.mpf(int(v.q))
        return mpmath.mpmathify(sp.N(v, int(prec * 0.302) + 10))
    if isinstance(v, Fraction):
        return mpmath.mpf(v.numerator) / mpmath.mpf(v.denominator)
    return mpmath.mpf(v)


_LAMBDA_CACHE: dict = {}


def _lambdified(e: sp.Expr, free: tuple) -> Callable:
    key = (e, free)
    fn = _LAMBDA_CACHE.get(key)
    if fn is None:
        fn = sp.lambdify(free, e, modules="mpmath")
        _LAMBDA_CACHE[key] = fn
    return fn


# ---------------------------------------------------------------------------
# domains and randomized zero-testing


@dataclass(frozen=True)
class Domain:
    """Sampling domain for zero tests.

    `constraints` are expressions required to be > 0 at sampled points.
    `bounds` optionally boxes individual variables (default [-10, 10]).
    `resolver` may complete a sampled point with dependent coordinates
    (e.g. solving the equation for the solved jet coordinate) or reject
    it by returning None.
    """

    variables: tuple = ()
    constraints: tuple = ()
    bounds: Mapping[str, tuple] = field(default_factory=dict)
    resolver: Optional[Callable[[dict], Optional[dict]]] = None

    def sample(self, rng: random.Random, max_rejects: int = 2000) -> dict:
        for _ in range(max_rejects):
            pt = {}
            for v in self.variables:
                lo, hi = self.bounds.get(v, (-10, 10))
                pt[v] = random_rational(rng, lo, hi)
            if self.resolver is not None:
                pt = self.resolver(pt)
                if pt is None:
                    continue
            if all(self._holds(c, pt) for c in self.constraints):
                return pt
        raise SamplingError("could not sample a point satisfying the domain constraints")

    def _holds(self, c: sp.Expr, pt: dict) -> bool:
        try:
            v = evaluate(c, pt) if not has_sqrt(c) else evaluate(c, pt, precision=128)
        except EvalError:
            return False
        return v > 0


def random_rational(rng: random.Random, lo=-10, hi=10) -> Fraction:
    den = rng.randint(1, 100)
    num = rng.randint(math.ceil(Fraction(lo) * den), math.floor(Fraction(hi) * den))
    return Fraction(num, den)


@dataclass
class ZeroReport:
    verdict: Verdict
    witness: Optional[dict]
    trials: int
    seed: int


class ZeroContext:
    """Bundles a Domain with the numeric parameters of zero-testing.

    Sample points are drawn once (seeded) and reused for every test in
    the context, so all verdicts of one run refer to the same points and
    the whole pipeline is reproducible from the seed.
    """

    def __init__(self, domain: Domain, seed: int = 0, trials: int = 20,
                 precision: int = 256, tol: float = 1e-40):
        self.domain = domain
        self.seed = seed
        self.trials = trials
        self.precision = precision
        self.tol = tol
        self._points: Optional[list] = None

    @property
    def points(self) -> list:
        if self._points is None:
            rng = random.Random(self.seed)
            self._points = [self.domain.sample(rng) for _ in range(self.trials)]
        return self._points

    def _value_is_zero(self, e: sp.Expr, pt: dict) -> bool:
        if not has_sqrt(e) and all(not isinstance(v, sp.Expr) or v.is_Rational
                                   for v in pt.values()):
            return evaluate(e, pt) == 0
        return abs(evaluate(e, pt, precision=self.precision)) <= self.tol

    def is_zero(self, e: sp.Expr) -> ZeroReport:
        e = sp.sympify(e)
        if e.is_Number:
            verdict = Verdict.ZERO if e == 0 else Verdict.NONZERO
            return ZeroReport(verdict, None, 0, self.seed)
        for pt in self.points:
            if not self._value_is_zero(e, pt):
                return ZeroReport(Verdict.NONZERO, pt, self.trials, self.seed)
        return ZeroReport(Verdict.ZERO, None, self.trials, self.seed)

    def zero(self, e: sp.Expr) -> bool:
        return self.is_zero(e).verdict is Verdict.ZERO

    def all_zero(self, exprs: Iterable[sp.Expr]) -> Verdict:
        for e in exprs:
            if not self.zero(e):
                return Verdict.NONZERO
        return Verdict.ZERO

    def vanishing_profile(self, e: sp.Expr) -> Verdict:
        """ZERO if e vanishes at every sampled point, NONZERO if at none,
        MIXED otherwise (used for the nowhere-zero test on the Goursat
        invariant)."""
        e = sp.sympify(e)
        if e.is_Number:
            return Verdict.ZERO if e == 0 else Verdict.NONZERO
        zeros = sum(1 for pt in self.points if self._value_is_zero(e, pt))
        if zeros == len(self.points):
            return Verdict.ZERO
        if zeros == 0:
            return Verdict.NONZERO
        return Verdict.MIXED

    def with_domain(self, domain: Domain) -> "ZeroContext":
        return ZeroContext(domain, self.seed, self.trials, self.precision, self.tol)
