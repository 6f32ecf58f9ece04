"""Adapted coframings for weakly parabolic systems.

A ParabolicCoframing packages the 1-forms

    theta_null, theta_a (a = 0..n), omega^a (a = 0..n), pi_ab (a <= b)

on a workspace, normalized so that the spatial trace sum_i pi_ii
vanishes identically as a form (the theta- and omega-multiples that a
raw coframing carries in its trace are absorbed into the pi's; the pure
trace direction is removed).  The forms

    theta_null, theta_a, omega^a, pi_ab  (a <= b, (a,b) != (n,n))

are then a frame (possibly extended by complementary coframe symbols
when the workspace has extra Cauchy directions), and `adapted_workspace`
re-expresses the whole geometry in that frame: an abstract workspace
whose structure table holds d(theta_i), d(omega^i), ... in frame
components.  All invariant extraction downstream reads that table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import sympy as sp

from .expr import Domain, Verdict, ZeroContext
from .exterior import Form, FrameExpansion, Workspace, complete_frame
from .linalg import solve_in_span


class NotParabolicError(ValueError):
    pass


def spatial_delta(a: int, b: int) -> int:
    """Kronecker delta restricted to spatial indices (1..n)."""
    return 1 if (a == b and a >= 1) else 0


class ParabolicCoframing:
    def __init__(self, ws: Workspace, n: int,
                 theta_null: Form, thetas: Sequence[Form],
                 omegas: Sequence[Form], pis: Dict[Tuple[int, int], Form],
                 name: str = ""):
        if len(thetas) != n + 1 or len(omegas) != n + 1:
            raise ValueError("need n+1 theta's and omega's")
        self.ws = ws
        self.n = n
        self.theta_null = theta_null
        self.thetas = list(thetas)
        self.omegas = list(omegas)
        self.pis = {(min(a, b), max(a, b)): f for (a, b), f in pis.items()}
        for a in range(n + 1):
            for b in range(a, n + 1):
                if (a, b) not in self.pis:
                    raise ValueError(f"missing pi_{a}{b}")
        self.name = name
        # an optional precomputed expansion of the ambient coframe in the
        # frame (constructive inverses are supplied by the jet pipeline)
        self.inverse_rows: Optional[List[Form]] = None
        # trace-absorption coefficients (f_null, f_theta, f_omega) when the
        # coframing came out of normalize_coframing
        self.trace_data = None
        self._adapted: Optional[Tuple[Workspace, List[Form]]] = None

    # -- frame bookkeeping ---------------------------------------------------

    def pi_keys(self) -> List[Tuple[int, int]]:
        """pi index pairs in frame order, with (n,n) eliminated (its class
        is determined by the vanishing trace)."""
        n = self.n
        return [(a, b) for a in range(n + 1) for b in range(a, n + 1)
                if (a, b) != (n, n)]

    def frame_names(self) -> List[str]:
        names = ["theta_null"]
        names += [f"theta_{a}" for a in range(self.n + 1)]
        names += [f"omega_{a}" for a in range(self.n + 1)]
        names += [f"pi_{a}{b}" for (a, b) in self.pi_keys()]
        return names

    def frame_forms(self) -> List[Form]:
        forms = [self.theta_null] + self.thetas + self.omegas
        forms += [self.pis[k] for k in self.pi_keys()]
        return forms

    def idx_theta_null(self) -> int:
        return 0

    def idx_theta(self, a: int) -> int:
        return 1 + a

    def idx_omega(self, a: int) -> int:
        return 2 + self.n + a

    def idx_pi(self, a: int, b: int) -> Optional[int]:
        a, b = min(a, b), max(a, b)
        keys = self.pi_keys()
        base = 3 + 2 * self.n
        if (a, b) == (self.n, self.n):
            return None
        return base + keys.index((a, b))

    def pi_nn_in_frame(self) -> Form:
        """pi_nn as a frame-space 1-form: minus the other diagonal pi's."""
        f = Form(1)
        for i in range(1, self.n):
            f = f - Form(1, {(self.idx_pi(i, i),): sp.S.One})
        return f

    # -- the adapted workspace ------------------------------------------------

    def adapted_workspace(self, ctx: ZeroContext) -> Tuple[Workspace, List[str]]:
        """Abstract workspace over the frame (plus complements); its
        structure table carries d of every frame element in frame
        components.  Cached."""
        if self._adapted is not None:
            ws2, names = self._adapted
            return ws2, names
        frame = self.frame_forms()
        names = self.frame_names()
        full = complete_frame(frame, self.ws, ctx)
        extra = full[len(frame):]
        for f in extra:
            (k,) = next(iter(f.terms))
            names.append(f"aux_{self.ws.symbols[k]}")
        if self.inverse_rows is not None and not extra:
            expansion = FrameExpansion(frame, self.ws, ctx,
                                       inverse_rows=self.inverse_rows)
        else:
            expansion = FrameExpansion(full, self.ws, ctx)
        structure = {}
        for name, f in zip(names, full):
            structure[name] = expansion.expand(self.ws.d(f))
        functions = {fn: expansion.expand(df) for fn, df in self.ws.functions.items()}
        ws2 = Workspace("abstract", names, functions=functions,
                        structure=structure, domain=self.ws.domain)
        self._adapted = (ws2, names)
        return ws2, names

    # -- structural sanity -----------------------------------------------------

    def verify(self, ctx: ZeroContext) -> List[str]:
        """Check the defining congruences.  Returns a list of human-readable
        failure strings (empty when the coframing is 0-adapted)."""
        failures: List[str] = []
        ws2, _ = self.adapted_workspace(ctx)
        n = self.n
        # trace of pi vanishes identically as a form
        tr = Form(1)
        for i in range(1, n + 1):
            tr = tr + self.pis[(i, i)]
        for (k,), c in tr.terms.items():
            if not ctx.zero(c):
                failures.append(f"sum pi_ii has nonzero {self.ws.symbols[k]} component")
        # d theta_null == -theta_a ^ omega^a  mod theta_null
        d0 = ws2.structure["theta_null"]
        expected = Form(2)
        for a in range(n + 1):
            expected = expected + Form.monomial((self.idx_theta(a), self.idx_omega(a)), -1)
        diff = d0 - expected
        for idx, c in diff.terms.items():
            if 0 in idx:
                continue  # multiples of theta_null are allowed
            if not ctx.zero(c):
                failures.append(
                    f"d theta_null deviates on {ws2.monomial_name(idx)}")
        # d theta_a == -pi_ab ^ omega^b  mod {theta_null, theta_b}
        theta_idx = {self.idx_theta(a) for a in range(n + 1)} | {0}
        for a in range(n + 1):
            da = ws2.structure[f"theta_{a}"]
            exp_a = Form(2)
            for b in range(n + 1):
                pidx = self.idx_pi(a, b)
                if pidx is None:
                    pin = self.pi_nn_in_frame()
                    exp_a = exp_a - pin.wedge(Form(1, {(self.idx_omega(b),): sp.S.One}))
                else:
                    exp_a = exp_a + Form.monomial((pidx, self.idx_omega(b)), -1)
            diff = da - exp_a
            for idx, c in diff.terms.items():
                if any(i in theta_idx for i in idx):
                    continue
                if not ctx.zero(c):
                    failures.append(
                        f"d theta_{a} deviates on {ws2.monomial_name(idx)}")
        return failures


# ---------------------------------------------------------------------------
# normalization (trace absorption)


def normalize_coframing(ws: Workspace, n: int, theta_null: Form,
                        thetas: Sequence[Form], omegas: Sequence[Form],
                        pis: Dict[Tuple[int, int], Form],
                        ctx: ZeroContext, name: str = "") -> ParabolicCoframing:
    """Absorb the trace of pi into the coframing.

    A raw parabolic coframing satisfies sum_i pi_ii = f_null*theta_null
    + f^a*theta_a + f_a*omega^a.  The theta-multiples are subtracted off
    the diagonal pi's; the omega-multiples are absorbed by the unique
    totally symmetric correction h_abc*omega^c with spatial trace
    h_iic = -f_c (two scalar coefficients, one for the spatial part of f
    and one for its time part).  Afterwards sum_i pi_ii = 0 exactly.
    """
    pis = {(min(a, b), max(a, b)): f for (a, b), f in pis.items()}
    trace = Form(1)
    for i in range(1, n + 1):
        trace = trace + pis[(i, i)]
    span = [ {k[0]: v for k, v in theta_null.terms.items()} ]
    span += [ {k[0]: v for k, v in t.terms.items()} for t in thetas ]
    span += [ {k[0]: v for k, v in o.terms.items()} for o in omegas ]
    target = {k[0]: v for k, v in trace.terms.items()}
    coeffs, residual = solve_in_span(span, target, ctx)
    for k, v in residual.items():
        if not ctx.zero(v):
            raise NotParabolicError(
                f"trace of pi is not contained in the contact span "
                f"(residual on {ws.symbols[k]})")
    f_null = coeffs[0]
    f_theta = coeffs[1:n + 2]          # f^a, a = 0..n
    f_omega = coeffs[n + 2:2 * n + 3]  # f_a, a = 0..n

    subtract = Form(1)
    if f_null != 0:
        subtract = subtract + theta_null.scale(f_null)
    for a in range(n + 1):
        if f_theta[a] != 0:
            subtract = subtract + thetas[a].scale(f_theta[a])

    def h(a: int, b: int, c: int) -> sp.Expr:
        return trace_correction(n, f_omega, a, b, c)

    new_pis: Dict[Tuple[int, int], Form] = {}
    for a in range(n + 1):
        for b in range(a, n + 1):
            p = pis[(a, b)]
            if spatial_delta(a, b):
                p = p - subtract.scale(sp.Rational(1, n))
            corr = Form(1)
            for c in range(n + 1):
                hc = h(a, b, c)
                if hc != 0:
                    corr = corr + omegas[c].scale(hc)
            new_pis[(a, b)] = p + corr
    cof = ParabolicCoframing(ws, n, theta_null, thetas, omegas, new_pis, name=name)
    cof.trace_data = (f_null, list(f_theta), list(f_omega))
    return cof


def trace_correction(n: int, f_omega: Sequence[sp.Expr], a: int, b: int, c: int) -> sp.Expr:
    """The omega-correction coefficient h_abc added to pi_ab during trace
    absorption: the unique totally symmetric combination of f_omega with
    delta_hat whose spatial trace is h_iic = -f_omega[c].  The spatial
    part of f and its time component enter with separate weights
    -3/(n+2) and -3/n."""
    x = sp.Rational(-3, n + 2)
    y = sp.Rational(-3, n)
    fhat = lambda e: f_omega[e] if e >= 1 else sp.S.Zero
    f0 = lambda e: f_omega[0] if e == 0 else sp.S.Zero
    sym3 = lambda fc: (fc(a) * spatial_delta(b, c)
                       + fc(b) * spatial_delta(a, c)
                       + fc(c) * spatial_delta(a, b))
    return (x * sym3(fhat) + y * sym3(f0)) / 3


# ---------------------------------------------------------------------------
# the structure-group action


@dataclass
class GaugeParams:
    """Constant element of the structure group of 0-adapted coframings.

    theta_null' = k_null * theta_null
    theta_0'    = B00*theta_0 + Bi0[i-1]*theta_i + k_theta[0]*theta_null
    theta_i'    = b * sum_j rot[j-1][i-1]*theta_j + k_theta[i]*theta_null
    omega^a'    = k_omega[a]*theta_null + sum_b S[a][b]*theta_b
                  + k_null * (B^-1)^a_b omega^b
    pi_ab'      = k_pi[ab]*theta_null + sum_c D[ab][c]*theta_c
                  + sum_c T[abc]*omega^c + (1/k_null)*B^c_a B^d_b pi_cd

    with rot in SO(n) (rational, e.g. a Cayley transform), k_pi spatial
    trace free, D[iic] = 0, T totally symmetric with T[iic] = 0.
    """
    n: int
    k_null: Fraction = Fraction(1)
    B00: Fraction = Fraction(1)
    b: Fraction = Fraction(1)
    rot: Optional[List[List[Fraction]]] = None        # n x n, SO(n)
    Bi0: Optional[List[Fraction]] = None              # length n
    k_theta: Optional[List[Fraction]] = None          # length n+1
    k_omega: Optional[List[Fraction]] = None          # length n+1
    S: Optional[List[List[Fraction]]] = None          # (n+1)^2 symmetric
    k_pi: Optional[Dict[Tuple[int, int], Fraction]] = None
    D: Optional[Dict[Tuple[int, int], List[Fraction]]] = None
    T: Optional[Dict[Tuple[int, int, int], Fraction]] = None

    def B_matrix(self) -> List[List[sp.Rational]]:
        """B^c_a with rows c (old index), columns a (new index)."""
        n = self.n
        rot = self.rot or [[Fraction(1 if i == j else 0) for j in range(n)] for i in range(n)]
        Bi0 = self.Bi0 or [Fraction(0)] * n
        B = [[sp.Rational(0)] * (n + 1) for _ in range(n + 1)]
        B[0][0] = sp.Rational(Fraction(self.B00))
        for i in range(1, n + 1):
            B[i][0] = sp.Rational(Fraction(Bi0[i - 1]))
            for j in range(1, n + 1):
                B[j][i] = sp.Rational(Fraction(self.b) * Fraction(rot[j - 1][i - 1]))
        return B


def cayley_rotation(n: int, antisym: List[List[Fraction]]) -> List[List[Fraction]]:
    """Rational SO(n) element (I - A)^-1 (I + A) for antisymmetric A."""
    from .linalg import rational_rref
    I = [[Fraction(1 if i == j else 0) for j in range(n)] for i in range(n)]
    M = [[I[i][j] - antisym[i][j] for j in range(n)] for i in range(n)]
    R = [[I[i][j] + antisym[i][j] for j in range(n)] for i in range(n)]
    aug = [M[i] + R[i] for i in range(n)]
    rref, piv = rational_rref(aug)
    if piv != list(range(n)):
        raise ValueError("Cayley transform is singular")
    return [row[n:] for row in rref]


def apply_gauge(cof: ParabolicCoframing, g: GaugeParams) -> ParabolicCoframing:
    n = cof.n
    if g.n != n:
        raise ValueError("gauge dimension mismatch")
    B = g.B_matrix()
    Bm = sp.Matrix(B)
    Binv = Bm.inv()
    k_null = sp.Rational(Fraction(g.k_null))
    k_theta = [sp.Rational(Fraction(v)) for v in (g.k_theta or [Fraction(0)] * (n + 1))]
    k_omega = [sp.Rational(Fraction(v)) for v in (g.k_omega or [Fraction(0)] * (n + 1))]
    S = g.S or [[Fraction(0)] * (n + 1) for _ in range(n + 1)]
    theta_null2 = cof.theta_null.scale(k_null)
    thetas2 = []
    for a in range(n + 1):
        f = cof.theta_null.scale(k_theta[a])
        for bidx in range(n + 1):
            if B[bidx][a] != 0:
                f = f + cof.thetas[bidx].scale(B[bidx][a])
        thetas2.append(f)
    omegas2 = []
    for a in range(n + 1):
        f = cof.theta_null.scale(k_omega[a])
        for bidx in range(n + 1):
            sab = sp.Rational(Fraction(S[a][bidx]))
            if sab != 0:
                f = f + cof.thetas[bidx].scale(sab)
            w = Binv[a, bidx]
            if w != 0:
                f = f + cof.omegas[bidx].scale(k_null * w)
        omegas2.append(f)
    k_pi = g.k_pi or {}
    D = g.D or {}
    T = g.T or {}
    pis2: Dict[Tuple[int, int], Form] = {}
    for a in range(n + 1):
        for b in range(a, n + 1):
            f = cof.theta_null.scale(sp.Rational(Fraction(k_pi.get((a, b), Fraction(0)))))
            dd = D.get((a, b))
            if dd:
                for c in range(n + 1):
                    if dd[c]:
                        f = f + cof.thetas[c].scale(sp.Rational(Fraction(dd[c])))
            for c in range(n + 1):
                key = tuple(sorted((a, b))) + (c,)
                tv = T.get(key, Fraction(0))
                if tv:
                    f = f + cof.omegas[c].scale(sp.Rational(Fraction(tv)))
            for cc in range(n + 1):
                for ddx in range(n + 1):
                    w = B[cc][a] * B[ddx][b] / k_null
                    if w != 0:
                        pk = (min(cc, ddx), max(cc, ddx))
                        f = f + cof.pis[pk].scale(w)
            pis2[(a, b)] = f
    # sanity: the new spatial pi-trace must still vanish; the parameter
    # constraints (k_pi trace free, D/T spatial-trace free, rot in SO(n))
    # guarantee it, so enforce them here
    return ParabolicCoframing(cof.ws, n, theta_null2, thetas2, omegas2, pis2,
                              name=cof.name + "+gauge")
