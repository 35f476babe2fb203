"""Leading-order time-periodic correction under harmonic forcing.

With forcing ``eps * (Fa e^{i phi} + conj(Fa) e^{-i phi})``, phi = Omega t,
the order-eps, p-independent part of the invariance equation reduces to two
shifted linear solves:

    (A - i Omega B) x0    = B W_I s0_plus  - Fa
    (A + i Omega B) x0bar = B W_I s0_minus - conj(Fa)

When an eigenvalue sits near +-i Omega the operator is nearly singular and
the reduced forcing s0 is chosen by left-projection so the right-hand side
stays in range; x0 then comes from a bordered solve with the orthogonality
constraint w_i^H B x0 = 0.

The e^{-i phi} right-hand side uses conj(Fa): the forcing convention stores
a complex amplitude whose conjugate multiplies e^{-i phi}, and only that
choice drives the leading-order residual to zero for complex Fa (for real
amplitude vectors the two conventions coincide).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import HomologicalSolveError


@dataclass
class ForcedCorrection:
    """Leading-order non-autonomous coefficients at one excitation frequency."""

    Omega: float
    x0: np.ndarray
    x0_bar: np.ndarray
    s0_plus: np.ndarray
    s0_minus: np.ndarray
    resonant_plus: tuple = ()
    resonant_minus: tuple = ()

    def state_correction(self, phi):
        """X0(phi) = x0 e^{i phi} + x0_bar e^{-i phi}."""
        return self.x0 * np.exp(1j * phi) + self.x0_bar * np.exp(-1j * phi)

    def reduced_forcing(self, phi):
        """S0(phi) = s0_plus e^{i phi} + s0_minus e^{-i phi}."""
        return self.s0_plus * np.exp(1j * phi) + self.s0_minus * np.exp(-1j * phi)


def _resonant_set(lambdas, target, tol_res):
    return [i for i, li in enumerate(lambdas)
            if abs(li - target) <= tol_res * abs(li)]


def _shifted_solve(sys, shift, rhs, resonant, subspace):
    """Solve (A - shift*B) x = rhs, bordered when modes are flagged resonant."""
    A = sp.csc_matrix(sys.A)
    B = sp.csc_matrix(sys.B)
    N = sys.N
    if not resonant:
        try:
            lu = spla.splu(sp.csc_matrix(A - shift * B, dtype=complex))
        except RuntimeError as exc:
            raise HomologicalSolveError(
                f"factorization of (A - {shift:.6g} B) failed with no resonance "
                "flagged; widen the resonance tolerance") from exc
        x = lu.solve(rhs)
        resid = np.linalg.norm(A @ x - shift * (B @ x) - rhs)
        if not np.all(np.isfinite(x)) or \
                resid > 1e-8 * max(np.linalg.norm(rhs), np.linalg.norm(x), 1e-300):
            raise HomologicalSolveError(
                f"forced solve at shift {shift:.6g} unreliable (residual {resid:.3e}); "
                "an eigenvalue close to i*Omega was not flagged -- widen the tolerance")
        return x
    Vf = subspace.right[:, resonant]
    B_Vf = B @ Vf
    rows = (B.T @ np.conj(subspace.left[:, resonant])).T
    n_f = len(resonant)
    aug = sp.bmat([[A - shift * B, sp.csc_matrix(B_Vf)],
                   [sp.csc_matrix(rows), None]], format="csc", dtype=complex)
    try:
        sol = spla.splu(aug).solve(np.concatenate([rhs, np.zeros(n_f, dtype=complex)]))
    except RuntimeError as exc:
        raise HomologicalSolveError(
            "bordered forced solve is singular; the flagged modes appear defective") from exc
    return sol[:N]


def solve_leading_nonautonomous(sys, subspace, Omega, Fa=None, tol_res=0.05,
                                resonant_plus=None, exploit_conjugacy=False):
    """Leading-order forced correction (x0, x0_bar, s0_plus, s0_minus) at Omega.

    ``Fa`` is the lifted complex forcing vector (defaults to the system's);
    ``resonant_plus`` overrides automatic detection of modes near i*Omega --
    forced-response continuation pins the designated resonant pair this way
    so the reduced forcing does not switch on and off across the sweep.
    With ``exploit_conjugacy`` the e^{-i phi} side is obtained by conjugating
    the e^{+i phi} side (valid because A, B are real), halving the work.
    """
    if Omega <= 0:
        raise ValueError("Omega must be positive")
    Fa = sys.Fext if Fa is None else np.asarray(Fa, dtype=complex).reshape(sys.N)
    lambdas = subspace.values
    M_dim = subspace.M_dim

    if resonant_plus is None:
        res_p = _resonant_set(lambdas, 1j * Omega, tol_res)
    else:
        res_p = list(resonant_plus)

    s_plus = np.zeros(M_dim, dtype=complex)
    if not np.any(Fa):
        zero = np.zeros(sys.N, dtype=complex)
        return ForcedCorrection(Omega, zero, zero.copy(), s_plus,
                                np.zeros(M_dim, dtype=complex),
                                tuple(res_p), ())
    for i in res_p:
        # orthogonality: w_i^H (B W_I s - Fa) = 0 with w_i^H B v_j = delta_ij
        s_plus[i] = np.vdot(subspace.left[:, i], Fa)
    rhs_p = (sys.B @ (subspace.right @ s_plus)) - Fa if np.any(s_plus) else -Fa
    x0 = _shifted_solve(sys, 1j * Omega, rhs_p, res_p, subspace)

    if exploit_conjugacy and not subspace.conjugate_closed:
        exploit_conjugacy = False  # pair swap undefined without full pairing
    if exploit_conjugacy:
        x0_bar = np.conj(x0)
        s_minus = np.zeros(M_dim, dtype=complex)
        # conjugating the +phi equation permutes modes within conjugate pairs
        for i in res_p:
            j = i + 1 if i % 2 == 0 else i - 1
            s_minus[j] = np.conj(s_plus[i])
        res_m = tuple(i + 1 if i % 2 == 0 else i - 1 for i in res_p)
        return ForcedCorrection(Omega, x0, x0_bar, s_plus, s_minus,
                                tuple(res_p), res_m)

    if resonant_plus is None:
        res_m = _resonant_set(lambdas, -1j * Omega, tol_res)
    else:
        res_m = [i + 1 if i % 2 == 0 else i - 1 for i in res_p]
    s_minus = np.zeros(M_dim, dtype=complex)
    Fa_c = np.conj(Fa)
    for i in res_m:
        s_minus[i] = np.vdot(subspace.left[:, i], Fa_c)
    rhs_m = (sys.B @ (subspace.right @ s_minus)) - Fa_c if np.any(s_minus) else -Fa_c
    x0_bar = _shifted_solve(sys, -1j * Omega, rhs_m, res_m, subspace)
    return ForcedCorrection(Omega, x0, x0_bar, s_plus, s_minus,
                            tuple(res_p), tuple(res_m))


def leading_order_residual(sys, subspace, corr, Fa=None, n_phi=8):
    """Max residual of the order-eps invariance equation over a phase grid."""
    Fa = sys.Fext if Fa is None else np.asarray(Fa, dtype=complex).reshape(sys.N)
    W_I = subspace.right
    worst = 0.0
    for phi in np.linspace(0.0, 2 * np.pi, n_phi, endpoint=False):
        X0 = corr.state_correction(phi)
        dX0 = 1j * corr.x0 * np.exp(1j * phi) - 1j * corr.x0_bar * np.exp(-1j * phi)
        S0 = corr.reduced_forcing(phi)
        fext = Fa * np.exp(1j * phi) + np.conj(Fa) * np.exp(-1j * phi)
        r = sys.B @ (W_I @ S0) + corr.Omega * (sys.B @ dX0) - sys.A @ X0 - fext
        worst = max(worst, float(np.linalg.norm(r)))
    return worst


def evaluate_tv_state(table, corr, p, phi, epsilon):
    """Physical state on the manifold, optionally with the periodic correction.

    Time-independent mode (corr is None or epsilon == 0) returns W(p);
    time-varying mode adds eps * X0(phi).
    """
    z = table.manifold_at(p)
    if corr is None or epsilon == 0:
        return z
    return z + epsilon * corr.state_correction(phi)
