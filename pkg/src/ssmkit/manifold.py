"""Order-by-order solution of the autonomous invariance equation.

For each multi-index m the linear system

    (A - Lambda_m B) W_m = sum_j B v_j R_m^j + C_m - [F o W]_m,
    Lambda_m = sum_i lambda_i m_i,

is assembled and solved.  Near-resonant combinations (Lambda_m close to a
master eigenvalue) make the operator nearly singular; the reduced dynamics
coefficient is then chosen by left-projection to lift the singularity,
which is the normal-form-style parameterization.  All other reduced
coefficients are zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import indexing
from .composition import CompositionEngine
from .errors import HomologicalSolveError
from .indexing import CoefficientTable

DENSE_SOLVE_CUTOFF = 800


@dataclass(frozen=True)
class ParameterizationStyle:
    """Normal-form style with its near-resonance tolerance.

    ``rho_rel`` bounds the relative distance |Lambda_m - lambda_i| / |lambda_i|
    below which mode i is treated as resonant.  The structural rule
    additionally flags odd-degree combinations whose rotation rate matches a
    mode frequency, so lightly damped pairs keep their inner-resonant terms
    even when the real parts drift.
    """

    kind: str = "normal-form"
    rho_rel: float = 0.05

    def __post_init__(self):
        if self.kind != "normal-form":
            raise ValueError(f"unsupported parameterization style {self.kind!r}")
        if self.rho_rel <= 0:
            raise ValueError("rho_rel must be positive")


def detect_resonances(m, lambdas, rho_rel=0.05):
    """Mode indices i with Lambda_m within tolerance of lambda_i.

    Base rule: |Lambda_m - lambda_i| <= rho_rel * |lambda_i|.  Structural
    rule (odd total degree only): |Im Lambda_m - Im lambda_i| <=
    rho_rel * |Im lambda_i| flags the unavoidable inner resonances of
    conjugate pairs regardless of accumulated damping offsets.
    """
    lambdas = np.asarray(lambdas)
    lam_m = complex(np.sum(lambdas * np.asarray(m)))
    flagged = []
    odd = indexing.degree(m) % 2 == 1
    for i, li in enumerate(lambdas):
        if abs(lam_m - li) <= rho_rel * abs(li):
            flagged.append(i)
        elif odd and li.imag != 0 and \
                abs(lam_m.imag - li.imag) <= rho_rel * abs(li.imag):
            flagged.append(i)
    return flagged


def compute_Cm(m, table, B):
    """Mixed lower-order term of the homological right-hand side.

    Sums B W_u u_j R_k^j over all u + k - e_j = m with 1 < |u| < |m| (the
    companion degree |k| = |m| - |u| + 1 then lies in [2, |m| - 1]).  The
    iteration runs over stored nonzero reduced coefficients, which under
    normal form are sparse.
    """
    deg_m = indexing.degree(m)
    M_dim = table.M_dim
    out = np.zeros(table.N, dtype=complex)
    if deg_m < 3:
        return out
    for deg_k in range(2, deg_m):
        for k in table.indices(deg_k):
            r_k = table.reduced(k)
            if not np.any(r_k):
                continue
            for j in range(M_dim):
                if r_k[j] == 0:
                    continue
                # u = m - k + e_j
                u = list(m)
                ok = True
                for a in range(M_dim):
                    u[a] -= k[a]
                u[j] += 1
                for a in range(M_dim):
                    if u[a] < 0:
                        ok = False
                        break
                if not ok:
                    continue
                u = tuple(u)
                deg_u = indexing.degree(u)
                if not (1 < deg_u < deg_m):
                    continue
                if u[j] == 0:
                    continue
                w_u = table.manifold(u)
                if not np.any(w_u):
                    continue
                out += (B @ w_u) * (u[j] * r_k[j])
    return out


class _ShiftedOperatorCache:
    """LU factorizations of A - Lambda B, shared across equal shifts.

    Keyed by Lambda rounded to 12 significant digits per component, so
    repeated eigenvalue combinations reuse one factorization per degree.
    """

    def __init__(self, A, B, dense_cutoff=DENSE_SOLVE_CUTOFF):
        self.A = sp.csc_matrix(A)
        self.B = sp.csc_matrix(B)
        self.N = A.shape[0]
        self.dense = self.N <= dense_cutoff
        if self.dense:
            self._Ad = self.A.toarray()
            self._Bd = self.B.toarray()
        self._cache = {}

    @staticmethod
    def _round_sig(x, sig=12):
        def one(v):
            if v == 0:
                return 0.0
            from math import floor, log10
            return round(v, -int(floor(log10(abs(v)))) + sig - 1)
        return (one(x.real), one(x.imag))

    def solver(self, lam):
        key = self._round_sig(complex(lam))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if self.dense:
            mat = self._Ad - lam * self._Bd
            lu = la.lu_factor(mat)
            fn = lambda rhs: la.lu_solve(lu, rhs)
        else:
            mat = sp.csc_matrix(self.A - lam * self.B, dtype=complex)
            slu = spla.splu(mat)
            fn = slu.solve
        self._cache[key] = fn
        return fn


def solve_homological(m, fw_m, c_m, sys, subspace, style, op_cache=None):
    """Solve one homological system; returns (W_m, R_m, resonant modes).

    Non-resonant: R_m = 0 and W_m from the shifted solve.  Resonant: the
    flagged components of R_m come from left-projection of the right-hand
    side, then W_m solves the bordered system

        [ L_m     B V_f ] [W_m]   [rhs]
        [ W_f^H B   0   ] [mu ] = [ 0 ]

    whose constraint rows make the solution unique and the matrix well
    conditioned without pseudo-inverses.
    """
    lambdas = subspace.values
    lam_m = complex(np.sum(lambdas * np.asarray(m)))
    resonant = detect_resonances(m, lambdas, style.rho_rel)
    rhs_base = c_m - fw_m
    M_dim = subspace.M_dim
    R_m = np.zeros(M_dim, dtype=complex)
    if op_cache is None:
        op_cache = _ShiftedOperatorCache(sys.A, sys.B)

    if not resonant:
        solve = op_cache.solver(lam_m)
        W_m = solve(rhs_base)
        denom = max(float(np.linalg.norm(rhs_base)), 1e-300)
        resid = np.linalg.norm((sys.A @ W_m) - lam_m * (sys.B @ W_m) - rhs_base)
        if not np.all(np.isfinite(W_m)) or resid > 1e-8 * max(denom, np.linalg.norm(W_m)):
            raise HomologicalSolveError(
                f"homological solve at {m} is unreliable (residual {resid:.3e}); "
                f"Lambda_m = {lam_m:.6g} sits on an unflagged eigenvalue -- increase "
                "the resonance tolerance rho_rel, or widen the master subspace if "
                "this is an outer resonance with a slaved mode")
        return W_m, R_m, resonant

    for i in resonant:
        R_m[i] = -np.vdot(subspace.left[:, i], rhs_base)
    Vf = subspace.right[:, resonant]
    rhs = (sys.B @ (Vf @ R_m[resonant])) + rhs_base

    n_f = len(resonant)
    N = sys.N
    B_Vf = sys.B @ Vf
    rows = (sys.B.T @ np.conj(subspace.left[:, resonant])).T  # w_i^H B as rows
    if op_cache.dense:
        aug = np.zeros((N + n_f, N + n_f), dtype=complex)
        aug[:N, :N] = op_cache._Ad - lam_m * op_cache._Bd
        aug[:N, N:] = B_Vf
        aug[N:, :N] = rows
        big_rhs = np.concatenate([rhs, np.zeros(n_f, dtype=complex)])
        try:
            sol = la.solve(aug, big_rhs)
        except la.LinAlgError as exc:
            raise HomologicalSolveError(
                f"bordered system at {m} is singular; the pencil appears defective") from exc
    else:
        aug = sp.bmat([[op_cache.A - lam_m * op_cache.B, sp.csc_matrix(B_Vf)],
                       [sp.csc_matrix(rows), None]], format="csc", dtype=complex)
        try:
            sol = spla.splu(aug).solve(np.concatenate([rhs, np.zeros(n_f, dtype=complex)]))
        except RuntimeError as exc:
            raise HomologicalSolveError(
                f"bordered system at {m} is singular; the pencil appears defective") from exc
    W_m = sol[:N]
    if not np.all(np.isfinite(W_m)):
        raise HomologicalSolveError(f"bordered solve at {m} produced non-finite values")
    return W_m, R_m, resonant


def compute_ssm(sys, subspace, max_order, style=None, engine=None, compose=None,
                conjugate_symmetry=None):
    """Populate manifold and reduced-dynamics coefficients up to max_order.

    Per degree: enumerate indices, compose the nonlinearity (through the
    evaluation engine unless an explicit ``compose(m, table)`` override is
    given, e.g. the tensor oracle), add the mixed term, detect resonances,
    and solve.  With ``conjugate_symmetry`` (default: on when the subspace
    is conjugate-closed) only canonical indices are solved and partners are
    filled by conjugation, halving black-box work.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    style = style or ParameterizationStyle()
    M_dim = subspace.M_dim
    table = CoefficientTable(M_dim, sys.N)
    for i in range(M_dim):
        r = np.zeros(M_dim, dtype=complex)
        r[i] = subspace.values[i]
        table.set(indexing.unit_index(M_dim, i), subspace.right[:, i], r)

    if engine is None and compose is None:
        engine = CompositionEngine.for_system(sys)
    compose_fn = compose if compose is not None else engine.compose_at
    if conjugate_symmetry is None:
        conjugate_symmetry = subspace.conjugate_closed and compose is None
    if conjugate_symmetry and not subspace.conjugate_closed:
        raise ValueError("conjugate symmetry requires a conjugate-closed subspace")

    op_cache = _ShiftedOperatorCache(sys.A, sys.B)
    for k in range(2, max_order + 1):
        ms = indexing.enumerate_degree(M_dim, k)
        if conjugate_symmetry:
            composed = [m for m in ms if m >= indexing.conjugate_index(m)]
        else:
            composed = ms
        before = engine.counters.snapshot() if engine is not None else None
        if engine is not None and compose is None:
            engine.prefetch_degree(composed, table)
        solved = {}
        failures = []
        for m in composed:
            try:
                fw = compose_fn(m, table)
                cm = compute_Cm(m, table, sys.B)
                W_m, R_m, res = solve_homological(m, fw, cm, sys, subspace, style,
                                                  op_cache)
            except HomologicalSolveError as exc:
                failures.append((m, exc))
                continue
            solved[m] = (W_m, R_m)
            if res:
                table.resonances.append((m, res))
        if failures:
            details = "; ".join(f"{m}: {exc}" for m, exc in failures)
            raise HomologicalSolveError(
                f"{len(failures)} multi-indices failed at degree {k}: {details}")
        for m in composed:
            table.set(m, *solved[m])
        if conjugate_symmetry:
            for m in composed:
                mc = indexing.conjugate_index(m)
                if mc == m or table.has(mc):
                    continue
                W_m, R_m = solved[m]
                rc = np.conj(R_m).reshape(-1, 2)[:, ::-1].reshape(-1)
                table.set(mc, np.conj(W_m), rc)
                res = [i for _m, rr in table.resonances if _m == m for i in rr]
                if res:
                    swapped = [i + 1 if i % 2 == 0 else i - 1 for i in res]
                    table.resonances.append((mc, swapped))
        if engine is not None:
            engine.degree_log.append((k, composed, engine.counters.delta(before)))
    return table


def invariance_residual(sys, table, p, engine=None):
    """Residual of the autonomous invariance equation at reduced point p.

    Computes ``B (DW(p) R(p)) - A W(p) - F(W(p))`` with the nonlinearity
    evaluated exactly (through the complex-reconstruction identities when
    the state is genuinely complex).
    """
    p = np.asarray(p, dtype=complex)
    Wp = table.manifold_at(p)
    lhs = sys.B @ table.tangent_times_reduced(p)
    lin = sys.A @ Wp
    if engine is None:
        engine = CompositionEngine.for_system(sys)
    scale = float(np.max(np.abs(Wp.real))) if Wp.size else 0.0
    if np.max(np.abs(Wp.imag)) <= 1e-12 * max(scale, 1e-300):
        Fz = np.asarray(sys.F(Wp.real), dtype=complex)
    else:
        Fz = engine.evaluate_full(Wp)
    return lhs - lin - Fz


def residual_decay_slope(sys, table, direction, h_values, engine=None):
    """Log-log slope of the invariance residual along a chart ray.

    ``direction`` is a reduced-space vector; points are p = h * direction.
    Returns (slope, residual norms).
    """
    direction = np.asarray(direction, dtype=complex)
    norms = []
    for h in h_values:
        r = invariance_residual(sys, table, h * direction, engine=engine)
        norms.append(float(np.linalg.norm(r)))
    logs = np.log(norms)
    loghs = np.log(np.asarray(h_values, dtype=float))
    slope = float(np.polyfit(loghs, logs, 1)[0])
    return slope, norms
