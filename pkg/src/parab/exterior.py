"""Differential forms over a declared coframe.

A Workspace fixes an ordered coframe (a list of 1-form symbols), a set
of named scalar functions with declared differentials, and a structure
table giving d of every coframe symbol.  Two modes:

* coordinate mode: the coframe is the coordinate differentials of a
  chart; every coordinate is a function whose differential is its own
  coframe symbol, structure is zero, and additional dependent functions
  (e.g. a jet coordinate solved from the equation) carry explicit
  differentials;
* abstract mode: coframe symbols are arbitrary (Maurer-Cartan frames,
  constructed fixtures) and the structure table carries the geometry.

Forms are sparse: degree + dict from strictly increasing index tuples
to coefficient expressions.  Coefficients are never simplified beyond
sympy's automatic flattening; zero coefficients are pruned structurally
and all semantic equality questions go through the randomized zero test.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import sympy as sp

from .expr import Domain, ParseError, Verdict, ZeroContext, _tokenize
from .linalg import solve_in_span, symbolic_inverse


def _merge_sorted(a: Tuple[int, ...], b: Tuple[int, ...]) -> Optional[Tuple[Tuple[int, ...], int]]:
    """Merge two strictly increasing tuples; returns (merged, sign) or None on repeat."""
    if set(a) & set(b):
        return None
    merged = tuple(sorted(a + b))
    # sign of the permutation sorting a+b
    seq = a + b
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return merged, sign


class Form:
    __slots__ = ("degree", "terms")

    def __init__(self, degree: int, terms: Optional[Dict[Tuple[int, ...], sp.Expr]] = None):
        self.degree = degree
        self.terms: Dict[Tuple[int, ...], sp.Expr] = {}
        if terms:
            for k, v in terms.items():
                v = sp.sympify(v)
                if v != 0:
                    self.terms[tuple(k)] = v

    @staticmethod
    def zero(degree: int) -> "Form":
        return Form(degree)

    @staticmethod
    def monomial(idx: Sequence[int], coeff=1) -> "Form":
        idx = tuple(idx)
        if len(set(idx)) != len(idx):
            return Form(len(idx))
        order = tuple(sorted(idx))
        sign = 1
        seq = list(idx)
        for i in range(len(seq)):
            for j in range(i + 1, len(seq)):
                if seq[i] > seq[j]:
                    sign = -sign
        return Form(len(idx), {order: sign * sp.sympify(coeff)})

    def copy(self) -> "Form":
        return Form(self.degree, dict(self.terms))

    def is_structurally_zero(self) -> bool:
        return not self.terms

    def coefficient(self, idx: Sequence[int]) -> sp.Expr:
        idx = tuple(idx)
        order = tuple(sorted(idx))
        if len(set(idx)) != len(idx):
            return sp.S.Zero
        sign = 1
        seq = list(idx)
        for i in range(len(seq)):
            for j in range(i + 1, len(seq)):
                if seq[i] > seq[j]:
                    sign = -sign
        return sign * self.terms.get(order, sp.S.Zero)

    def __add__(self, other: "Form") -> "Form":
        if self.degree != other.degree:
            raise ValueError("degree mismatch in form addition")
        out = dict(self.terms)
        for k, v in other.terms.items():
            w = out.get(k, sp.S.Zero) + v
            if w == 0:
                out.pop(k, None)
            else:
                out[k] = w
        return Form(self.degree, out)

    def __sub__(self, other: "Form") -> "Form":
        return self + (-other)

    def __neg__(self) -> "Form":
        return Form(self.degree, {k: -v for k, v in self.terms.items()})

    def scale(self, c) -> "Form":
        c = sp.sympify(c)
        if c == 0:
            return Form(self.degree)
        return Form(self.degree, {k: c * v for k, v in self.terms.items()})

    def wedge(self, other: "Form") -> "Form":
        out: Dict[Tuple[int, ...], sp.Expr] = {}
        for ka, va in self.terms.items():
            for kb, vb in other.terms.items():
                m = _merge_sorted(ka, kb)
                if m is None:
                    continue
                key, sign = m
                w = out.get(key, sp.S.Zero) + sign * va * vb
                if w == 0:
                    out.pop(key, None)
                else:
                    out[key] = w
        return Form(self.degree + other.degree, out)

    def map_coefficients(self, fn) -> "Form":
        return Form(self.degree, {k: fn(v) for k, v in self.terms.items()})

    def __repr__(self):
        if not self.terms:
            return f"Form<{self.degree}>(0)"
        parts = [f"({v})*e{list(k)}" for k, v in sorted(self.terms.items())]
        return f"Form<{self.degree}>(" + " + ".join(parts) + ")"


def wedge(*forms: Form) -> Form:
    it = iter(forms)
    out = next(it)
    for f in it:
        out = out.wedge(f)
    return out


@dataclass
class ValidationIssue:
    kind: str
    where: str
    detail: str


@dataclass
class ValidationReport:
    ok: bool
    issues: List[ValidationIssue] = field(default_factory=list)


class Workspace:
    def __init__(self, mode: str, symbols: Sequence[str],
                 functions: Optional[Mapping[str, Form]] = None,
                 structure: Optional[Mapping[str, Form]] = None,
                 domain: Optional[Domain] = None):
        self.mode = mode
        self.symbols = list(symbols)
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate coframe symbols")
        self.index = {s: i for i, s in enumerate(self.symbols)}
        self.functions: Dict[str, Form] = dict(functions or {})
        self.structure: Dict[str, Form] = {s: Form(2) for s in self.symbols}
        if structure:
            for k, v in structure.items():
                if k not in self.index:
                    raise ValueError(f"structure entry for unknown symbol {k!r}")
                self.structure[k] = v
        self.domain = domain or Domain(variables=tuple(sorted(self.functions)))
        self._fn_symbols = {sp.Symbol(name): name for name in self.functions}

    @property
    def dim(self) -> int:
        return len(self.symbols)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def coordinate(coords: Sequence[str],
                   dependent: Optional[Mapping[str, Form]] = None,
                   domain: Optional[Domain] = None) -> "Workspace":
        symbols = [f"d{c}" for c in coords]
        functions = {c: Form(1, {(i,): sp.S.One}) for i, c in enumerate(coords)}
        if dependent:
            functions.update(dependent)
        return Workspace("coordinate", symbols, functions, None, domain)

    # -- basic operations --------------------------------------------------

    def basis_form(self, name_or_index) -> Form:
        i = name_or_index if isinstance(name_or_index, int) else self.index[name_or_index]
        return Form(1, {(i,): sp.S.One})

    def one_form(self, coeffs: Mapping[str, sp.Expr]) -> Form:
        return Form(1, {(self.index[s],): sp.sympify(c) for s, c in coeffs.items()})

    def differential_of_function(self, name: str) -> Form:
        if name not in self.functions:
            raise ValueError(f"unknown function {name!r}")
        return self.functions[name]

    def d(self, form: Form) -> Form:
        """Exterior derivative using the declared function differentials
        and structure table."""
        out = Form(form.degree + 1)
        for idx, coeff in form.terms.items():
            # d(coeff) wedge e_idx
            dcoeff = Form(1)
            for s in coeff.free_symbols:
                name = self._fn_symbols.get(s)
                if name is None:
                    raise ValueError(f"coefficient references undeclared function {s}")
                deriv = sp.diff(coeff, s)
                if deriv != 0:
                    dcoeff = dcoeff + self.functions[name].scale(deriv)
            if not dcoeff.is_structurally_zero():
                out = out + dcoeff.wedge(Form(form.degree, {idx: sp.S.One}))
            # coeff * d(e_idx)
            for pos, k in enumerate(idx):
                dek = self.structure[self.symbols[k]]
                if dek.is_structurally_zero():
                    continue
                rest = idx[:pos] + idx[pos + 1:]
                sign = (-1) ** pos
                out = out + dek.wedge(Form(len(rest), {rest: sp.S.One})).scale(sign * coeff)
        return out

    # -- validation --------------------------------------------------------

    def validate(self, ctx: ZeroContext) -> ValidationReport:
        issues: List[ValidationIssue] = []
        for s in self.symbols:
            dd = self.d(self.structure[s])
            for idx, coeff in dd.terms.items():
                if ctx.is_zero(coeff).verdict is Verdict.NONZERO:
                    issues.append(ValidationIssue(
                        "d_squared", s,
                        f"d(d {s}) has nonzero coefficient on {self.monomial_name(idx)}"))
        for name, df in self.functions.items():
            ddf = self.d(df)
            for idx, coeff in ddf.terms.items():
                if ctx.is_zero(coeff).verdict is Verdict.NONZERO:
                    issues.append(ValidationIssue(
                        "d_squared", name,
                        f"d(d {name}) has nonzero coefficient on {self.monomial_name(idx)}"))
        return ValidationReport(not issues, issues)

    def monomial_name(self, idx: Sequence[int]) -> str:
        return "&".join(self.symbols[i] for i in idx) if idx else "1"


# ---------------------------------------------------------------------------
# Pfaffian ideals and reduction


class PfaffianIdeal:
    """An ideal generated algebraically by a list of 1-forms."""

    def __init__(self, generators: Sequence[Form], ws: Workspace, ctx: ZeroContext):
        self.ws = ws
        self.ctx = ctx
        self.generators = [g for g in generators if not g.is_structurally_zero()]
        self._pivot_map: Optional[Dict[int, Form]] = None

    def _echelonize(self) -> Dict[int, Form]:
        if self._pivot_map is not None:
            return self._pivot_map
        gens = [g.copy() for g in self.generators]
        pivots: Dict[int, int] = {}  # symbol index -> generator position
        for j, g in enumerate(gens):
            pivot = None
            for (k,), v in g.terms.items():
                if v.is_Rational and v != 0:
                    pivot = k
                    break
            if pivot is None:
                for (k,), v in g.terms.items():
                    if not self.ctx.zero(v):
                        pivot = k
                        break
            if pivot is None:
                continue  # dependent generator
            pv = g.terms[(pivot,)]
            gens[j] = g.map_coefficients(lambda c: sp.cancel(c / pv))
            for jj in range(len(gens)):
                if jj != j and (pivot,) in gens[jj].terms:
                    f = gens[jj].terms[(pivot,)]
                    gens[jj] = (gens[jj] - gens[j].scale(f)).map_coefficients(sp.cancel)
            pivots[pivot] = j
        # replacement: e_p == e_p - gen_j  (mod ideal), which is pivot-free
        self._pivot_map = {}
        for p, j in pivots.items():
            repl = Form(1, {(p,): sp.S.One}) - gens[j]
            repl.terms.pop((p,), None)
            self._pivot_map[p] = repl
        return self._pivot_map

    def reduce(self, form: Form) -> Form:
        """Canonical representative of `form` modulo the algebraic ideal."""
        pm = self._echelonize()
        out = Form(form.degree)
        for idx, coeff in form.terms.items():
            if not any(i in pm for i in idx):
                out = out + Form(form.degree, {idx: coeff})
                continue
            factors = []
            for i in idx:
                factors.append(pm[i] if i in pm else Form(1, {(i,): sp.S.One}))
            prod = factors[0]
            for f in factors[1:]:
                prod = prod.wedge(f)
            out = out + prod.scale(coeff)
        # anything still containing a pivot index came from the ideal; drop it
        cleaned = {k: v for k, v in out.terms.items() if not any(i in pm for i in k)}
        return Form(form.degree, cleaned)


def reduce_mod(form: Form, generators: Sequence[Form], ws: Workspace, ctx: ZeroContext) -> Form:
    return PfaffianIdeal(generators, ws, ctx).reduce(form)


# ---------------------------------------------------------------------------
# frame expansion


def complete_frame(frame: Sequence[Form], ws: Workspace, ctx: ZeroContext) -> List[Form]:
    """Extend a linearly independent list of 1-forms to a full frame by
    appending coframe basis elements for the non-pivot symbols."""
    vectors = [{k[0]: v for k, v in f.terms.items()} for f in frame]
    used = set()
    cols = [dict(v) for v in vectors]
    for j, col in enumerate(cols):
        pivot = None
        for k, v in col.items():
            if v.is_Rational and v != 0 and k not in used:
                pivot = k
                break
        if pivot is None:
            for k, v in col.items():
                if k not in used and not ctx.zero(v):
                    pivot = k
                    break
        if pivot is None:
            raise ValueError(f"frame element {j} is dependent on earlier ones")
        used.add(pivot)
        pv = col[pivot]
        for other in cols[j + 1:]:
            if pivot in other:
                f = sp.cancel(other[pivot] / pv)
                for k, v in col.items():
                    w = sp.cancel(other.get(k, sp.S.Zero) - f * v)
                    if w == 0:
                        other.pop(k, None)
                    else:
                        other[k] = w
    out = list(frame)
    for k in range(ws.dim):
        if k not in used:
            out.append(ws.basis_form(k))
    return out


class FrameExpansion:
    """Expansion of forms in an invertible frame of 1-forms.

    Precomputes the expression of every coframe symbol in terms of the
    frame; expanding a form is then substitution plus wedging, which
    stays fast for the sparse near-triangular frames that occur here.
    """

    def __init__(self, frame: Sequence[Form], ws: Workspace, ctx: ZeroContext,
                 inverse_rows: Optional[List[Form]] = None):
        if len(frame) != ws.dim:
            raise ValueError(f"frame has {len(frame)} elements, coframe has {ws.dim}")
        self.frame = list(frame)
        self.ws = ws
        if inverse_rows is not None:
            self.inverse_rows = inverse_rows
        else:
            A = [[frame[i].terms.get((k,), sp.S.Zero) for k in range(ws.dim)]
                 for i in range(ws.dim)]
            Ainv = symbolic_inverse(A, ctx)
            # coframe symbol e_k = sum_i Ainv[k][i] * frame_i
            self.inverse_rows = [Form(1, {(i,): Ainv[k][i] for i in range(ws.dim)})
                                 for k in range(ws.dim)]

    def expand(self, form: Form) -> Form:
        """Rewrite `form` in frame components (indices refer to frame positions)."""
        out = Form(form.degree)
        for idx, coeff in form.terms.items():
            prod = None
            for i in idx:
                prod = self.inverse_rows[i] if prod is None else prod.wedge(self.inverse_rows[i])
            if prod is None:
                prod = Form(0, {(): sp.S.One})
            out = out + prod.scale(coeff)
        return out

    def contract(self, form_in_frame: Form) -> Form:
        """Inverse of expand: substitute the frame forms back."""
        out = Form(form_in_frame.degree)
        for idx, coeff in form_in_frame.terms.items():
            prod = None
            for i in idx:
                prod = self.frame[i] if prod is None else prod.wedge(self.frame[i])
            if prod is None:
                prod = Form(0, {(): sp.S.One})
            out = out + prod.scale(coeff)
        return out


def expand_in_basis(form: Form, frame: Sequence[Form], ws: Workspace, ctx: ZeroContext) -> Form:
    return FrameExpansion(frame, ws, ctx).expand(form)


# ---------------------------------------------------------------------------
# form-string parsing (workspace/problem files)
#
# formexpr := fterm (('+'|'-') fterm)*
# fterm    := ffactor (('*'|'&') ffactor)*      '&' wedges forms
# ffactor  := ('-')* fbase ('^' integer)?       powers only for scalars
# fbase    := integer | ident | '(' formexpr ')' | 'sqrt' '(' formexpr ')'
#
# Identifiers resolve to coframe symbols (unit 1-forms) or declared
# function names (scalars).


class _FormParser:
    def __init__(self, src: str, ws: Workspace):
        self.src = src
        self.ws = ws
        self.toks = _tokenize(src)
        self.pos = 0

    def peek(self):
        return self.toks[self.pos]

    def next(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def parse(self):
        v = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected trailing input {text!r}", off)
        return v

    def expr(self):
        v = self.term()
        while True:
            kind, text, off = self.peek()
            if kind == "op" and text in "+-":
                self.next()
                rhs = self.term()
                v = self._add(v, rhs if text == "+" else self._neg(rhs), off)
            else:
                return v

    def term(self):
        v = self.factor()
        while True:
            kind, text, off = self.peek()
            if kind == "op" and text in "*&/":
                self.next()
                rhs = self.factor()
                v = self._combine(v, rhs, text, off)
            else:
                return v

    def factor(self):
        sign = 1
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text == "-":
                self.next()
                sign = -sign
            else:
                break
        v = self.base()
        kind, text, off = self.peek()
        if kind == "op" and text == "^":
            self.next()
            kind, text, off = self.peek()
            if kind != "int":
                raise ParseError("exponent must be an integer", off)
            self.next()
            if isinstance(v, Form):
                raise ParseError("cannot raise a form to a power", off)
            v = v ** int(text)
        return self._neg(v) if sign < 0 else v

    def base(self):
        kind, text, off = self.next()
        if kind == "int":
            return sp.Integer(int(text))
        if kind == "op" and text == "(":
            v = self.expr()
            k2, t2, o2 = self.next()
            if not (k2 == "op" and t2 == ")"):
                raise ParseError("expected ')'", o2)
            return v
        if kind == "ident":
            if text == "sqrt":
                k2, t2, o2 = self.next()
                if not (k2 == "op" and t2 == "("):
                    raise ParseError("sqrt must be followed by '('", o2)
                v = self.expr()
                k3, t3, o3 = self.next()
                if not (k3 == "op" and t3 == ")"):
                    raise ParseError("expected ')'", o3)
                if isinstance(v, Form):
                    raise ParseError("sqrt of a form", off)
                return sp.sqrt(v)
            if text in self.ws.index:
                return self.ws.basis_form(text)
            if text in self.ws.functions:
                return sp.Symbol(text)
            raise ParseError(f"unknown identifier {text!r}", off)
        raise ParseError(f"expected a value, got {text!r}" if text else "unexpected end of input", off)

    @staticmethod
    def _neg(v):
        return -v

    @staticmethod
    def _add(a, b, off):
        if isinstance(a, Form) != isinstance(b, Form):
            raise ParseError("cannot add a scalar and a form", off)
        if isinstance(a, Form) and a.degree != b.degree:
            raise ParseError("cannot add forms of different degree", off)
        return a + b

    @staticmethod
    def _combine(a, b, op, off):
        fa, fb = isinstance(a, Form), isinstance(b, Form)
        if op == "/":
            if fb:
                raise ParseError("cannot divide by a form", off)
            if fa:
                return a.scale(sp.S.One / b)
            return a / b
        if op == "&":
            if not (fa and fb):
                raise ParseError("'&' requires two forms", off)
            return a.wedge(b)
        # '*'
        if fa and fb:
            raise ParseError("use '&' to wedge forms", off)
        if fa:
            return a.scale(b)
        if fb:
            return b.scale(a)
        return a * b


def parse_form(src: str, ws: Workspace, degree: Optional[int] = None) -> Form:
    v = _FormParser(src, ws).parse()
    if not isinstance(v, Form):
        if degree == 0 or degree is None:
            return Form(0, {(): v}) if v != 0 else Form(0)
        raise ParseError("expected a form, got a scalar", 0)
    if degree is not None and v.degree != degree:
        raise ParseError(f"expected a {degree}-form, got degree {v.degree}", 0)
    return v
