"""Second-order scalar PDEs as exterior differential systems.

A PDE F(x^a, u, p_a, p_ab) = 0 in one dependent variable u and n+1
independent variables x^0..x^n (x^0 the time direction) is turned into a
Pfaffian system on the locus M = {F = 0} inside the second jet space:
one jet coordinate is solved for (its differential is eliminated via
dF = 0), the contact forms are pulled back, and the coframe is adapted
to the principal symbol so that the spatial pi's diagonalize it and the
theta_0 direction spans its kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import mpmath
import sympy as sp

from .coframing import (NotParabolicError, ParabolicCoframing,
                        normalize_coframing, spatial_delta, trace_correction)
from .expr import (Domain, EvalError, Verdict, ZeroContext, evaluate,
                   has_sqrt, parse_expr)
from .exterior import Form, Workspace
from .linalg import symbolic_inverse


def jet_variables(n: int) -> List[str]:
    """Coordinates on the second jet space: x^a, u, p_a, p_ab (a <= b)."""
    names = [f"x{a}" for a in range(n + 1)]
    names.append("u")
    names += [f"p{a}" for a in range(n + 1)]
    names += [f"p{a}{b}" for a in range(n + 1) for b in range(a, n + 1)]
    return names


def hessian_name(a: int, b: int) -> str:
    a, b = min(a, b), max(a, b)
    return f"p{a}{b}"


@dataclass
class PdeProblem:
    """A scalar second-order PDE together with its sampling domain."""

    n: int
    equation: sp.Expr
    solved: Optional[str] = None
    constraints: tuple = ()
    bounds: Dict[str, tuple] = field(default_factory=dict)
    name: str = ""

    @staticmethod
    def from_dict(data: dict) -> "PdeProblem":
        n = int(data["n"])
        if n < 2:
            raise ValueError("need at least two spatial dimensions")
        variables = jet_variables(n)
        eq = parse_expr(data["equation"], variables)
        constraints = tuple(parse_expr(c, variables)
                            for c in data.get("constraints", []))
        bounds = {}
        for v, pair in data.get("bounds", {}).items():
            if v not in variables:
                raise ValueError(f"bound on unknown jet variable {v!r}")
            lo, hi = pair
            bounds[v] = (Fraction(str(lo)), Fraction(str(hi)))
        solved = data.get("solved")
        if solved is not None and solved not in variables:
            raise ValueError(f"solved coordinate {solved!r} is not a jet variable")
        return PdeProblem(n=n, equation=eq, solved=solved,
                          constraints=constraints, bounds=bounds,
                          name=data.get("name", ""))

    @staticmethod
    def from_toml(path: str) -> "PdeProblem":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return PdeProblem.from_dict(data)

    def variables(self) -> List[str]:
        return jet_variables(self.n)


# ---------------------------------------------------------------------------
# solved coordinate


def _solved_candidates(n: int) -> List[str]:
    cands = [hessian_name(0, 0), "p0"]
    cands += [hessian_name(0, i) for i in range(1, n + 1)]
    cands += [hessian_name(i, i) for i in range(1, n + 1)]
    cands += [hessian_name(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    return cands


def detect_solved(prob: PdeProblem, ctx: ZeroContext) -> str:
    """Choose the jet coordinate to solve F = 0 for.

    Preference order: p00, p0, the mixed time derivatives p0i, the
    diagonal second derivatives, then the remaining Hessian entries.
    The first candidate whose F-derivative is certified nonzero on the
    (unresolved) domain wins."""
    if prob.solved is not None:
        return prob.solved
    free_domain = Domain(variables=tuple(prob.variables()),
                         constraints=prob.constraints, bounds=prob.bounds)
    free_ctx = ctx.with_domain(free_domain)
    for cand in _solved_candidates(prob.n):
        dv = sp.diff(prob.equation, sp.Symbol(cand))
        if free_ctx.is_zero(dv).verdict is Verdict.NONZERO:
            return cand
    raise NotParabolicError(
        "no jet coordinate with everywhere-nonzero F-derivative; "
        "cannot put the equation in solved form")


def _make_resolver(prob: PdeProblem, solved: str):
    """Return a function completing a sample of the free jet coordinates
    with a real solution of F = 0 for the solved coordinate."""
    F = prob.equation
    s = sp.Symbol(solved)
    Fs = sp.diff(F, s)
    lo, hi = prob.bounds.get(solved, (Fraction(-10), Fraction(10)))
    # fast path for equations linear in the solved coordinate
    linear = sp.diff(Fs, s) == 0 and not has_sqrt(F)

    def resolver(pt: dict) -> Optional[dict]:
        if linear:
            try:
                a = evaluate(Fs, pt)
                if a == 0:
                    return None
                b = evaluate(F.xreplace({s: sp.S.Zero}), pt)
            except EvalError:
                return None
            val = -Fraction(b) / Fraction(a)
            if not (Fraction(lo) <= val <= Fraction(hi)):
                return None
            out = dict(pt)
            out[solved] = val
            return out
        # general polynomial path: real roots in the bound interval
        sub = {sp.Symbol(k): sp.Rational(v.numerator, v.denominator)
               if isinstance(v, Fraction) else sp.sympify(v)
               for k, v in pt.items()}
        g = sp.together(F.xreplace(sub))
        num, _den = sp.fraction(g)
        try:
            poly = sp.Poly(num, s)
        except sp.PolynomialError:
            return None
        if poly.degree() < 1:
            return None
        try:
            roots = poly.real_roots()
        except Exception:
            return None
        for r in roots:
            if sp.Rational(lo) <= r <= sp.Rational(hi):
                try:
                    if evaluate(Fs, {**pt, solved: r}, precision=128) == 0:
                        continue
                except EvalError:
                    continue
                out = dict(pt)
                out[solved] = r
                return out
        return None

    return resolver


def build_contact_system(prob: PdeProblem, solved: str) -> Workspace:
    """Workspace on M = {F = 0}: coordinates are the free jet variables,
    the solved one is a dependent function with dF = 0 eliminating its
    differential."""
    F = prob.equation
    s = sp.Symbol(solved)
    Fs = sp.diff(F, s)
    coords = [v for v in prob.variables() if v != solved]
    dep = Form(1)
    for i, v in enumerate(coords):
        fv = sp.diff(F, sp.Symbol(v))
        if fv != 0:
            dep = dep + Form(1, {(i,): sp.cancel(-fv / Fs)})
    domain = Domain(variables=tuple(coords), constraints=prob.constraints,
                    bounds=prob.bounds, resolver=_make_resolver(prob, solved))
    return Workspace.coordinate(coords, dependent={solved: dep}, domain=domain)


# ---------------------------------------------------------------------------
# principal symbol


def symbol_matrix(prob: PdeProblem) -> List[List[sp.Expr]]:
    """The (n+1)x(n+1) principal symbol: dF/dp_aa on the diagonal, half
    of dF/dp_ab off it."""
    n = prob.n
    S = [[sp.S.Zero] * (n + 1) for _ in range(n + 1)]
    for a in range(n + 1):
        for b in range(a, n + 1):
            v = sp.diff(prob.equation, sp.Symbol(hessian_name(a, b)))
            if a == b:
                S[a][a] = v
            else:
                S[a][b] = S[b][a] = v / 2
    return S


def _inertia(values: List[List[object]], tol) -> Tuple[int, int, int]:
    """(positive, negative, zero) eigenvalue counts of a small symmetric
    matrix of Fractions and/or mpf values, by symmetric elimination."""
    dim = len(values)
    A = {(i, j): values[i][j] for i in range(dim) for j in range(dim)
         if values[i][j] != 0}
    live = list(range(dim))

    def near_zero(v) -> bool:
        if isinstance(v, Fraction):
            return v == 0
        return abs(v) <= tol

    pos = neg = zero = 0
    while live:
        diag = [(abs(A.get((i, i), 0)), i) for i in live]
        mag, p = max(diag)
        if near_zero(A.get((p, p), 0)):
            offs = [(abs(A.get((i, j), 0)), i, j) for qi, i in enumerate(live)
                    for j in live[qi + 1:]]
            if not offs or near_zero(max(offs)[0]):
                zero += len(live)
                break
            _, i, j = max(offs)
            # hyperbolic pair: eliminate the 2x2 block [[~0, b], [b, ~0]]
            b = A.get((i, j), 0)
            pos += 1
            neg += 1
            live = [k for k in live if k not in (i, j)]
            for k in live:
                rki = A.get((min(k, i), max(k, i)), 0)
                rkj = A.get((min(k, j), max(k, j)), 0)
                for m in live:
                    if m < k:
                        continue
                    rmi = A.get((min(m, i), max(m, i)), 0)
                    rmj = A.get((min(m, j), max(m, j)), 0)
                    A[(k, m)] = A.get((k, m), 0) - (rki * rmj + rkj * rmi) / b
            continue
        d = A[(p, p)]
        if (d > 0) if isinstance(d, Fraction) else (d > 0):
            pos += 1
        else:
            neg += 1
        live = [k for k in live if k != p]
        for qi, k in enumerate(live):
            rkp = A.get((min(k, p), max(k, p)), 0)
            if rkp == 0:
                continue
            for m in live[qi:]:
                rmp = A.get((min(m, p), max(m, p)), 0)
                if rmp != 0:
                    A[(k, m)] = A.get((k, m), 0) - rkp * rmp / d
    return pos, neg, zero


@dataclass
class ParabolicityReport:
    verdict: Verdict
    orientation: int
    solved: str
    inertia: Tuple[int, int, int]
    witness: Optional[dict] = None
    detail: str = ""


def check_parabolic(prob: PdeProblem, ctx: ZeroContext,
                    solved: Optional[str] = None) -> ParabolicityReport:
    """Sample-test weak parabolicity: the symbol must have inertia
    (n, 0, 1) at every sampled on-shell point (up to an overall sign,
    which fixes the orientation used by the coframe adaptation)."""
    solved = solved or detect_solved(prob, ctx)
    ws = build_contact_system(prob, solved)
    on_shell = ctx.with_domain(ws.domain)
    S = symbol_matrix(prob)
    n = prob.n
    tol = mpmath.mpf(ctx.tol)
    orientation = 0
    for pt in on_shell.points:
        try:
            vals = [[evaluate(S[a][b], pt) for b in range(n + 1)]
                    for a in range(n + 1)]
        except EvalError:
            vals = [[evaluate(S[a][b], pt, precision=ctx.precision)
                     for b in range(n + 1)] for a in range(n + 1)]
        pos, neg, zero = _inertia(vals, tol)
        if orientation == 0:
            if pos == n and neg == 0 and zero == 1:
                orientation = 1
            elif neg == n and pos == 0 and zero == 1:
                orientation = -1
            else:
                return ParabolicityReport(
                    Verdict.NONZERO, 0, solved, (pos, neg, zero), witness=pt,
                    detail=f"symbol inertia {(pos, neg, zero)} is not parabolic")
            continue
        want = (n, 0, 1) if orientation == 1 else (0, n, 1)
        if (pos, neg, zero) != want:
            return ParabolicityReport(
                Verdict.NONZERO, 0, solved, (pos, neg, zero), witness=pt,
                detail="symbol inertia varies over the domain")
    return ParabolicityReport(Verdict.ZERO, orientation, solved,
                              (n, 0, 1) if orientation >= 0 else (0, n, 1))


# ---------------------------------------------------------------------------
# coframe adaptation


def _pivoted_ldl(S: List[List[sp.Expr]], n: int, ctx: ZeroContext):
    """Symbolic symmetric LDL^T of the (rank n, PSD on shell) symbol.

    Returns (pivots, d, L, kernel_index): `pivots` are the n chosen
    indices, `d` the pivot values, `L[c][step]` the unit lower factor
    columns over ambient indices, and kernel_index the leftover index.
    Pivot choice prefers exact nonzero rationals, then anything the
    zero-test certifies nonzero.
    """
    A: Dict[Tuple[int, int], sp.Expr] = {}
    for a in range(n + 1):
        for b in range(a, n + 1):
            if S[a][b] != 0:
                A[(a, b)] = S[a][b]
    live = list(range(n + 1))
    pivots: List[int] = []
    d: List[sp.Expr] = []
    Lcols: List[Dict[int, sp.Expr]] = []
    for _step in range(n):
        pick = None
        for c in live:
            v = A.get((c, c), sp.S.Zero)
            if v.is_Rational and v != 0:
                pick = c
                break
        if pick is None:
            for c in live:
                v = A.get((c, c), sp.S.Zero)
                if not ctx.zero(v):
                    pick = c
                    break
        if pick is None:
            raise NotParabolicError(
                "symbol has rank below n on the sampled domain")
        dv = sp.cancel(A.get((pick, pick)))
        col = {pick: sp.S.One}
        for c in live:
            if c == pick:
                continue
            v = A.get((min(c, pick), max(c, pick)), sp.S.Zero)
            if v != 0:
                col[c] = sp.cancel(v / dv)
        live = [c for c in live if c != pick]
        for qi, c in enumerate(live):
            vc = col.get(c, sp.S.Zero)
            if vc == 0:
                continue
            for e in live[qi:]:
                ve = col.get(e, sp.S.Zero)
                if ve == 0:
                    continue
                key = (min(c, e), max(c, e))
                A[key] = sp.cancel(A.get(key, sp.S.Zero) - vc * ve * dv)
        pivots.append(pick)
        d.append(dv)
        Lcols.append(col)
    kernel_index = live[0]
    rem = A.get((kernel_index, kernel_index), sp.S.Zero)
    if not ctx.zero(rem):
        raise NotParabolicError(
            "symbol kernel is not one-dimensional on shell")
    return pivots, d, Lcols, kernel_index


def adapt_coframe(prob: PdeProblem, ctx: ZeroContext,
                  solved: Optional[str] = None) -> ParabolicCoframing:
    """Build the 0-adapted coframing of the contact system of `prob`.

    The spatial theta's diagonalize the principal symbol (columns of
    L*sqrt(D) from a pivoted LDL^T), theta_0 spans its kernel, omega is
    transformed contragradiently and the pi's by congruence; the pi
    trace is then absorbed.  The frame inverse is assembled in closed
    form from the contact structure, so no symbolic matrix inversion of
    the full 2n+2+... dimensional coframe is ever needed.
    """
    n = prob.n
    report = check_parabolic(prob, ctx, solved=solved)
    if report.verdict is not Verdict.ZERO:
        raise NotParabolicError(report.detail or "equation is not weakly parabolic")
    solved = report.solved
    ws = build_contact_system(prob, solved)
    on_shell = ctx.with_domain(ws.domain)
    sigma = report.orientation
    S = [[sp.cancel(sigma * v) for v in row] for row in symbol_matrix(prob)]
    pivots, dvals, Lcols, kernel_index = _pivoted_ldl(S, n, on_shell)

    # B^c_a: column 0 is the symbol kernel vector, spatial column i is
    # sqrt(d_i) * (i-th unit lower-triangular column)
    B = [[sp.S.Zero] * (n + 1) for _ in range(n + 1)]
    for i, (dv, col) in enumerate(zip(dvals, Lcols)):
        root = sp.sqrt(dv)
        for c, v in col.items():
            B[c][i + 1] = sp.cancel(v) * root
    # kernel: solve the pivot-row equations with k[kernel_index] = 1
    Spp = [[S[p][q] for q in pivots] for p in pivots]
    Sinv = symbolic_inverse(Spp, on_shell)
    k = [sp.S.Zero] * (n + 1)
    k[kernel_index] = sp.S.One
    for r, p in enumerate(pivots):
        acc = sp.S.Zero
        for c in range(len(pivots)):
            acc += Sinv[r][c] * S[pivots[c]][kernel_index]
        k[p] = sp.cancel(-acc)
    # normalize the first certified-nonzero component to 1
    scale = None
    for c in range(n + 1):
        if k[c].is_Rational:
            if k[c] != 0:
                scale = k[c]
                break
        elif not on_shell.zero(k[c]):
            scale = k[c]
            break
    if scale is None:
        raise NotParabolicError("symbol kernel vector vanished unexpectedly")
    k = [sp.cancel(v / scale) for v in k]
    for c in range(n + 1):
        B[c][0] = k[c]

    Bm = sp.Matrix(B)
    det = sp.cancel(Bm.det(method="berkowitz"))
    if on_shell.zero(det):
        raise NotParabolicError("adapted frame matrix is singular on the domain")
    adj = Bm.adjugate()
    Binv = [[sp.cancel(adj[a, c] / det) for c in range(n + 1)]
            for a in range(n + 1)]

    # raw contact forms on the jet workspace
    idx = ws.index
    du = ws.basis_form("du")
    dx = [ws.basis_form(f"dx{a}") for a in range(n + 1)]

    def d_of(name: str) -> Form:
        if name == solved:
            return ws.functions[solved]
        return ws.basis_form("d" + name)

    def dp_hess(a: int, b: int) -> Form:
        return d_of(hessian_name(a, b))

    theta_null = du
    for a in range(n + 1):
        theta_null = theta_null - dx[a].scale(sp.Symbol(f"p{a}"))
    theta_hat = []
    for a in range(n + 1):
        f = d_of(f"p{a}")
        for b in range(n + 1):
            f = f - dx[b].scale(sp.Symbol(hessian_name(a, b)))
        theta_hat.append(f)

    thetas = []
    for a in range(n + 1):
        f = Form(1)
        for c in range(n + 1):
            if B[c][a] != 0:
                f = f + theta_hat[c].scale(B[c][a])
        thetas.append(f)
    omegas = []
    for a in range(n + 1):
        f = Form(1)
        for c in range(n + 1):
            if Binv[a][c] != 0:
                f = f + dx[c].scale(Binv[a][c])
        omegas.append(f)
    pis_raw: Dict[Tuple[int, int], Form] = {}
    for a in range(n + 1):
        for b in range(a, n + 1):
            f = Form(1)
            for c in range(n + 1):
                for e in range(n + 1):
                    w = sp.cancel(B[c][a] * B[e][b])
                    if w != 0:
                        f = f + dp_hess(c, e).scale(w)
            pis_raw[(a, b)] = f

    cof = normalize_coframing(ws, n, theta_null, thetas, omegas, pis_raw,
                              on_shell, name=prob.name or "pde")
    cof.inverse_rows = _constructive_inverse(cof, ws, solved, B, Binv)
    cof._on_shell_ctx = on_shell
    cof._parabolicity = report
    return cof


def _constructive_inverse(cof: ParabolicCoframing, ws: Workspace, solved: str,
                          B, Binv) -> List[Form]:
    """Closed-form expansion of each coframe basis element (du, dx^a,
    dp_a, dp_ab) in the adapted frame, from the contact relations and
    the congruence transform, instead of inverting the full frame
    matrix."""
    n = cof.n
    f_null, f_theta, f_omega = cof.trace_data
    TN = cof.idx_theta_null()
    TH = cof.idx_theta
    OM = cof.idx_omega

    def omega_comb(coeffs) -> Form:
        return Form(1, {(OM(b),): c for b, c in coeffs.items() if c != 0})

    rows: Dict[int, Form] = {}
    # dx^a = B^a_b omega^b
    dx_frames = []
    for a in range(n + 1):
        f = omega_comb({b: B[a][b] for b in range(n + 1)})
        dx_frames.append(f)
        rows[ws.index[f"dx{a}"]] = f
    # du = theta_null + p_a dx^a
    f = Form(1, {(TN,): sp.S.One})
    for a in range(n + 1):
        f = f + dx_frames[a].scale(sp.Symbol(f"p{a}"))
    rows[ws.index["du"]] = f
    # theta_hat_c = Binv[a][c] theta_a;  dp_a = theta_hat_a + p_ab dx^b
    for a in range(n + 1):
        if f"p{a}" == solved:
            continue
        f = Form(1, {(TH(e),): Binv[e][a] for e in range(n + 1) if Binv[e][a] != 0})
        for b in range(n + 1):
            f = f + dx_frames[b].scale(sp.Symbol(hessian_name(a, b)))
        rows[ws.index[f"dp{a}"]] = f

    # pi_raw_ab re-expressed over the frame (undo the trace absorption)
    def pi_frame(a: int, b: int) -> Form:
        a, b = min(a, b), max(a, b)
        if (a, b) == (n, n):
            f = cof.pi_nn_in_frame()
        else:
            f = Form(1, {(cof.idx_pi(a, b),): sp.S.One})
        if spatial_delta(a, b):
            f = f + Form(1, {(TN,): f_null / n}) if f_null != 0 else f
            for e in range(n + 1):
                if f_theta[e] != 0:
                    f = f + Form(1, {(TH(e),): f_theta[e] / n})
        for c in range(n + 1):
            hc = trace_correction(n, f_omega, a, b, c)
            if hc != 0:
                f = f - Form(1, {(OM(c),): hc})
        return f

    pi_frames = {}
    for a in range(n + 1):
        for b in range(a, n + 1):
            pi_frames[(a, b)] = pi_frame(a, b)
    # dp_cd = pi_hat_cd = Binv[a][c] Binv[b][d] pi_raw_ab (frame expression)
    for c in range(n + 1):
        for e in range(c, n + 1):
            name = hessian_name(c, e)
            if name == solved:
                continue
            f = Form(1)
            for a in range(n + 1):
                for b in range(n + 1):
                    w = sp.cancel(Binv[a][c] * Binv[b][e])
                    if w != 0:
                        f = f + pi_frames[(min(a, b), max(a, b))].scale(w)
            rows[ws.index["d" + name]] = f
    return [rows[i].map_coefficients(sp.cancel) for i in range(ws.dim)]
