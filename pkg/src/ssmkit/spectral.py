"""Master subspace: selected eigenpairs of the structural pencil (A, B).

Only a small, even number of modes is ever computed.  Right and left
eigenvectors are binormalized so that ``w_j^H B v_i = delta_ij``, which is
what every projection downstream relies on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DefectiveModeError, EigenSolveError

DENSE_CUTOFF = 2000


@dataclass
class MasterSubspace:
    """Selected eigenvalues with B-binormalized right/left eigenvectors.

    ``values[j]``, ``right[:, j]``, ``left[:, j]`` form one eigentriple;
    modes are sorted by |Re| ascending (ties: |Im| ascending, positive
    imaginary part first) and conjugate pairs are stored adjacently with
    the second member holding the exact conjugate of the first.
    """

    values: np.ndarray
    right: np.ndarray
    left: np.ndarray
    normalization_defect: float = 0.0
    pair_structure: tuple = field(default_factory=tuple)  # (i, j) conjugate pairs

    @property
    def M_dim(self):
        return len(self.values)

    @property
    def N(self):
        return self.right.shape[0]

    @property
    def linear_coeffs(self):
        """Order-1 manifold coefficients: one column per reduced coordinate."""
        return self.right

    @property
    def conjugate_closed(self):
        return 2 * len(self.pair_structure) == self.M_dim

    def save(self, path):
        base = str(path)
        if not base.endswith(".npz"):
            base += ".npz"
        np.savez(base, values=self.values, right=self.right, left=self.left)
        meta = {
            "M_dim": int(self.M_dim),
            "N": int(self.N),
            "normalization_defect": float(self.normalization_defect),
            "pair_structure": [list(p) for p in self.pair_structure],
            "values": [[v.real, v.imag] for v in self.values],
        }
        with open(base + ".json", "w") as fh:
            json.dump(meta, fh, indent=2)

    @classmethod
    def load(cls, path):
        base = str(path)
        if not base.endswith(".npz"):
            base += ".npz"
        data = np.load(base)
        with open(base + ".json") as fh:
            meta = json.load(fh)
        return cls(values=data["values"], right=data["right"], left=data["left"],
                   normalization_defect=meta["normalization_defect"],
                   pair_structure=tuple(tuple(p) for p in meta["pair_structure"]))


def _sort_key(lam):
    return (abs(lam.real), abs(lam.imag), 0 if lam.imag > 0 else 1)


def _phase_fix(v):
    """Rotate an eigenvector so its largest entry is real and positive."""
    k = int(np.argmax(np.abs(v)))
    ph = v[k] / abs(v[k]) if v[k] != 0 else 1.0
    return v / ph


def binormalize(V, W_left, B):
    """Scale left eigenvectors so that w_j^H B v_i = delta_ij.

    Only the left vectors are rescaled; the right vectors keep the solver
    scaling so that order-1 manifold coefficients are reproducible.
    """
    V = np.array(V, dtype=complex)
    W = np.array(W_left, dtype=complex)
    for j in range(V.shape[1]):
        d = np.vdot(W[:, j], B @ V[:, j])  # w_j^H B v_j
        scale = max(np.linalg.norm(W[:, j]) * np.linalg.norm(B @ V[:, j]), 1e-300)
        if abs(d) < 1e-12 * scale:
            raise DefectiveModeError(
                f"eigenpair {j} is defective or ill-conditioned: |w^H B v| = {abs(d):.3e} "
                f"(relative {abs(d) / scale:.3e}); the parameterization requires a "
                "diagonalizable pencil")
        W[:, j] = W[:, j] / np.conj(d)
    return V, W


def _dense_eig(A, B):
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    Bd = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=float)
    lam, WL, VR = la.eig(Ad, Bd, left=True, right=True)
    return lam, VR, WL


def _shift_invert_operator(A, B, shift):
    """LinearOperator for (A - shift B)^{-1} B; B may be indefinite.

    ARPACK's built-in generalized mode needs a definite B, which structural
    pencils do not have, so shift-invert is assembled manually and the
    problem is solved in standard form: eigenvalues nu of the operator map
    back through lambda = shift + 1/nu.
    """
    mat = sp.csc_matrix(A - shift * B, dtype=complex)
    try:
        lu = spla.splu(mat)
    except RuntimeError as exc:
        raise EigenSolveError(
            f"shift-invert factorization failed at shift {shift}; retry with a "
            f"perturbed shift (e.g. {shift + 1e-3 if shift else 1e-3})") from exc
    Bc = sp.csc_matrix(B, dtype=complex)
    return spla.LinearOperator(mat.shape, matvec=lambda x: lu.solve(Bc @ x),
                               dtype=complex)


def _sparse_eig(A, B, k, shift):
    N = A.shape[0]
    v0 = (np.cos(0.7 * np.arange(N)) + 1.1).astype(complex)  # deterministic start
    op = _shift_invert_operator(A, B, shift)
    try:
        nu, V = spla.eigs(op, k=k, which="LM", v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise EigenSolveError(
            f"eigensolver did not converge: {len(exc.eigenvalues)} of {k} modes "
            f"after default iterations; loosen the tolerance or adjust the shift") from exc
    lam = shift + 1.0 / nu
    op_t = _shift_invert_operator(A.T, B.T, shift)
    try:
        nu_l, Y = spla.eigs(op_t, k=k, which="LM", v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise EigenSolveError("left eigenvector iteration did not converge") from exc
    lam_l = shift + 1.0 / nu_l
    # y solves (A^T - mu B^T) y = 0 at mu = lambda; the left vector is conj(y)
    W = np.zeros_like(Y)
    used = set()
    for j, lj in enumerate(lam):
        best, bi = None, None
        for i, mu in enumerate(lam_l):
            if i in used:
                continue
            d = abs(mu - lj)
            if best is None or d < best:
                best, bi = d, i
        if best is None or best > 1e-6 * max(abs(lj), 1.0):
            raise EigenSolveError(
                f"could not match a left eigenvector to eigenvalue {lj}")
        used.add(bi)
        W[:, j] = np.conj(Y[:, bi])
    return lam, V, W


def _refine_pairs(A, B, lam, V, W, sweeps=2):
    """One or two inverse-iteration sweeps to polish each eigentriple.

    Residuals from the initial solve limit how far invariance residuals can
    drop downstream, so eigenpairs are pushed to near machine precision.
    """
    A = sp.csc_matrix(A)
    B = sp.csc_matrix(B)
    lam = np.array(lam, dtype=complex)
    for j in range(len(lam)):
        vj = V[:, j]
        wj = W[:, j]
        lj = lam[j]
        for _ in range(sweeps):
            try:
                lu = spla.splu(sp.csc_matrix(A - lj * B, dtype=complex))
            except RuntimeError:
                break
            vj = lu.solve(B @ vj)
            vj = vj / np.linalg.norm(vj)
            wj = np.conj(lu.solve(np.conj(B.T @ wj), trans="T"))
            wj = wj / np.linalg.norm(wj)
            num = np.vdot(wj, A @ vj)
            den = np.vdot(wj, B @ vj)
            if den != 0:
                lj = num / den
        lam[j] = lj
        V[:, j] = vj
        W[:, j] = wj
    return lam, V, W


def solve_master_subspace(sys, M_dim, shift=0.0, select=None, dense_cutoff=None,
                          hyperbolicity_tol=1e-12, refine=True):
    """Compute the M_dim modes of (A, B) nearest the shift and binormalize them.

    ``select`` optionally overrides nearest-shift selection: either
    ``{"indices": [...]}`` with positions into the |Re|-sorted candidate list,
    or ``{"freq_window": [lo, hi]}`` keeping modes with |Im| inside the window.
    Conjugate pairs are always completed and stored adjacently.
    """
    if M_dim % 2 or M_dim < 2:
        raise EigenSolveError("M_dim must be even and >= 2")
    if M_dim > sys.N:
        raise EigenSolveError(f"M_dim={M_dim} exceeds state dimension {sys.N}")
    cutoff = DENSE_CUTOFF if dense_cutoff is None else dense_cutoff
    if sys.N <= cutoff:
        lam, V, W = _dense_eig(sys.A, sys.B)
    else:
        k = min(max(2 * M_dim, M_dim + 4), sys.N - 2)
        lam, V, W = _sparse_eig(sys.A, sys.B, k, shift)

    finite = np.isfinite(lam)
    lam, V, W = lam[finite], V[:, finite], W[:, finite]

    # candidate order: distance from shift, then the canonical sort
    cand = sorted(range(len(lam)), key=lambda i: (abs(lam[i] - shift), _sort_key(lam[i])))
    if select is None:
        priority = cand
    elif "indices" in select:
        pool = sorted(range(len(lam)), key=lambda i: _sort_key(lam[i]))
        priority = [pool[i] for i in select["indices"]]
    elif "freq_window" in select:
        lo, hi = select["freq_window"]
        pool = sorted(range(len(lam)), key=lambda i: _sort_key(lam[i]))
        priority = [i for i in pool if lo <= abs(lam[i].imag) <= hi]
    else:
        raise EigenSolveError(f"unknown mode selection {select!r}")

    # fill the subspace in priority order, always completing conjugate pairs
    def _partner(i):
        others = [j for j in range(len(lam)) if j != i]
        j = min(others, key=lambda j: abs(lam[j] - np.conj(lam[i])))
        if abs(lam[j] - np.conj(lam[i])) <= 1e-6 * max(abs(lam[i]), 1.0):
            return j
        return None

    chosen = []
    for i in priority:
        if len(chosen) >= M_dim:
            break
        if i in chosen:
            continue
        if abs(lam[i].imag) > 1e-9 * max(abs(lam[i]), 1.0):
            j = _partner(i)
            if j is None:
                raise EigenSolveError(
                    f"eigenvalue {lam[i]} has no conjugate partner in the computed set")
            if j not in chosen and len(chosen) + 2 <= M_dim:
                chosen.extend([i, j])
        else:
            chosen.append(i)
    if len(chosen) < M_dim:
        raise EigenSolveError(f"only {len(chosen)} usable modes found, wanted {M_dim}")

    lam = lam[chosen]
    V = V[:, chosen]
    W = W[:, chosen]

    # group into conjugate pairs; keep the positive-imaginary representative
    groups = []  # (representative index, partner index or None)
    used = set()
    for i in range(M_dim):
        if i in used:
            continue
        if abs(lam[i].imag) > 1e-9 * max(abs(lam[i]), 1.0):
            j = min((j for j in range(M_dim) if j != i and j not in used),
                    key=lambda j: abs(lam[j] - np.conj(lam[i])), default=None)
            if j is None or abs(lam[j] - np.conj(lam[i])) > 1e-6 * max(abs(lam[i]), 1.0):
                raise EigenSolveError(
                    f"selected eigenvalue {lam[i]} lost its conjugate partner")
            used.update((i, j))
            groups.append((i, j) if lam[i].imag > 0 else (j, i))
        else:
            used.add(i)
            lam[i] = complex(lam[i].real, 0.0)
            groups.append((i, None))

    if refine:
        reps = [g[0] for g in groups]
        lam_r, V_r, W_r = _refine_pairs(sys.A, sys.B, lam[reps].copy(),
                                        V[:, reps].copy(), W[:, reps].copy())
        for g, lr in zip(groups, lam_r):
            lam[g[0]] = lr
        V[:, reps] = V_r
        W[:, reps] = W_r

    # deterministic phases, exact conjugate mirrors, canonical group order
    for g in groups:
        V[:, g[0]] = _phase_fix(V[:, g[0]])
        W[:, g[0]] = _phase_fix(W[:, g[0]])
        if g[1] is not None:
            lam[g[1]] = np.conj(lam[g[0]])
            V[:, g[1]] = np.conj(V[:, g[0]])
            W[:, g[1]] = np.conj(W[:, g[0]])
    groups.sort(key=lambda g: _sort_key(lam[g[0]]))
    order = []
    pairs = []
    for g in groups:
        if g[1] is None:
            order.append(g[0])
        else:
            pairs.append((len(order), len(order) + 1))
            order.extend(g)
    lam, V, W = lam[order], V[:, order], W[:, order]

    for lj in lam:
        if abs(lj.real) <= hyperbolicity_tol * max(abs(lj), 1.0):
            raise EigenSolveError(
                f"eigenvalue {lj} has (numerically) zero real part; the fixed point "
                "is not hyperbolic and no unique smoothest manifold exists")

    V, W = binormalize(V, W, sys.B)
    gram = W.conj().T @ (sys.B @ V)
    defect = float(np.max(np.abs(gram - np.eye(M_dim))))
    if defect > 1e-8:
        raise DefectiveModeError(
            f"binormalization defect {defect:.3e}; modes are not cleanly separated")
    return MasterSubspace(values=lam, right=V, left=W,
                          normalization_defect=defect, pair_structure=tuple(pairs))
