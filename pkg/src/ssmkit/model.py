"""Mechanical system definition, black-box nonlinearity contract, first-order lift.

The physical model is ``M x'' + C x' + K x + f(x, x') = eps * f_ext(Omega t)``
with ``f`` holding only the quadratic and cubic internal forces (no constant,
no linear part).  Everything downstream works on the equivalent first-order
form ``B z' = A z + F(z) + eps F_ext`` with ``z = (x, x')``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ModelError


@dataclass(frozen=True)
class ForcingSpec:
    """Harmonic forcing ``f_ext = fa * e^{i Omega t} + conj(fa) * e^{-i Omega t}``.

    ``amplitude`` is the complex coefficient vector fa, so that a real cosine
    load of magnitude g at one dof is ``fa = g/2`` there.  ``epsilon`` is the
    dimensionless scale; the excitation frequency is an analysis parameter
    and is not stored here.
    """

    amplitude: np.ndarray
    epsilon: float = 0.0

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=complex).reshape(-1)
        object.__setattr__(self, "amplitude", amp)
        if self.epsilon < 0:
            raise ModelError("forcing scale epsilon must be >= 0")


def _as_csc(mat, name):
    if sp.issparse(mat):
        out = sp.csc_array(mat)
    else:
        arr = np.asarray(mat, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ModelError(f"{name} must be a square matrix, got shape {arr.shape}")
        out = sp.csc_array(arr)
    return out


@dataclass
class ValidationReport:
    """Outcome of the black-box nonlinearity probes."""

    constant_norm: float
    linear_norm: float
    closure_residual: float
    tol: float
    constant_ok: bool = field(init=False)
    linear_ok: bool = field(init=False)
    closure_ok: bool = field(init=False)

    def __post_init__(self):
        self.constant_ok = self.constant_norm <= self.tol
        self.linear_ok = self.linear_norm <= self.tol
        self.closure_ok = self.closure_residual <= self.tol

    @property
    def passed(self):
        return self.constant_ok and self.linear_ok and self.closure_ok


class SecondOrderModel:
    """M, C, K matrices plus a black-box nonlinear force callable.

    The nonlinearity is called as ``f(x, xdot) -> ndarray(n)``.  It must
    vanish at the origin, carry no linear part, and contain no terms above
    cubic order.  ``real_only`` (default True) declares that the callable is
    only trusted for real inputs; the composition engine then reconstructs
    complex evaluations from real ones.  ``serial_only`` declares that the
    callable is not re-entrant, which forces a single evaluation queue.
    """

    def __init__(self, M, C, K, nonlinearity, forcing=None, *, real_only=True,
                 serial_only=False, validate=True, probe_scale=1e-4, probe_tol=1e-6,
                 seed=0):
        self.M = _as_csc(M, "M")
        self.C = _as_csc(C, "C")
        self.K = _as_csc(K, "K")
        self.n = self.M.shape[0]
        if self.C.shape != self.M.shape or self.K.shape != self.M.shape:
            raise ModelError("M, C, K must all have the same shape")
        self.nonlinearity = nonlinearity
        self.forcing = forcing
        self.real_only = bool(real_only)
        self.serial_only = bool(serial_only) or getattr(nonlinearity, "serial_only", False)
        try:
            self._M_lu = spla.splu(sp.csc_matrix(self.M))
        except RuntimeError as exc:
            raise ModelError(f"mass matrix factorization failed (splu): {exc}") from exc
        if validate:
            report = validate_nonlinearity(self, probe_scale=probe_scale,
                                           tol=probe_tol, seed=seed)
            if not report.constant_ok:
                raise ModelError(
                    f"nonlinearity has a constant term: |f(0,0)| = {report.constant_norm:.3e}")
            if not report.linear_ok:
                raise ModelError(
                    f"nonlinearity has a linear part: estimated norm {report.linear_norm:.3e}")

    def eval_force(self, x, xdot):
        return np.asarray(self.nonlinearity(np.asarray(x), np.asarray(xdot))).reshape(self.n)


def validate_nonlinearity(model, probe_scale=1e-4, tol=1e-6, seed=0, n_probes=4):
    """Probe the black box for a constant term, a linear part, and cubic closure.

    The linear part is estimated from odd finite differences
    ``g(h) = (f(h d) - f(-h d)) / 2h`` combined as ``(4 g(h) - g(2h)) / 3``,
    which cancels both the quadratic part (by parity) and the cubic part (by
    Richardson extrapolation), leaving exactly the linear map for any
    degree-<=3 force.  The closure check rebuilds ``f(z)`` from parity splits
    measured at ``z/2`` using degree-2/3 homogeneity; the reconstruction is
    exact only when f has no terms above cubic order.
    """
    rng = np.random.default_rng(seed)
    n = model.n
    f0 = model.eval_force(np.zeros(n), np.zeros(n))
    constant_norm = float(np.linalg.norm(f0))

    h = 1e-3
    linear_norm = 0.0
    closure_residual = 0.0
    for _ in range(n_probes):
        dx = rng.standard_normal(n)
        dv = rng.standard_normal(n)
        scale = np.sqrt(np.linalg.norm(dx) ** 2 + np.linalg.norm(dv) ** 2)
        dx /= scale
        dv /= scale

        def odd_diff(step):
            fp = model.eval_force(step * dx, step * dv)
            fm = model.eval_force(-step * dx, -step * dv)
            return (fp - fm) / (2 * step)

        est = (4.0 * odd_diff(h) - odd_diff(2 * h)) / 3.0
        linear_norm = max(linear_norm, float(np.linalg.norm(est)))

        x = probe_scale * dx
        v = probe_scale * dv
        f_full = model.eval_force(x, v)
        f_half_p = model.eval_force(x / 2, v / 2)
        f_half_m = model.eval_force(-x / 2, -v / 2)
        # 4*even(z/2) + 8*odd(z/2) = 6 f(z/2) - 2 f(-z/2) equals f(z) for cubic f
        recon = 6 * f_half_p - 2 * f_half_m
        denom = max(float(np.linalg.norm(f_full)), 1e-300)
        closure_residual = max(closure_residual,
                               float(np.linalg.norm(f_full - recon)) / denom)

    return ValidationReport(constant_norm=constant_norm, linear_norm=linear_norm,
                            closure_residual=closure_residual, tol=tol)


class FirstOrderSystem:
    """First-order lift ``B z' = A z + F(z) + eps F_ext`` of a second-order model.

    The blocks are placed exactly as
    ``A = [[-K, 0], [0, M]]`` and ``B = [[C, M], [M, 0]]``; no symmetrization
    is ever applied.  ``F(z) = (-f(x, xdot), 0)``.
    """

    def __init__(self, model):
        self.model = model
        n = model.n
        self.n = n
        self.N = 2 * n
        zero = sp.csc_array((n, n))
        self.A = sp.block_array([[-model.K, zero], [zero, model.M]], format="csc")
        self.B = sp.block_array([[model.C, model.M], [model.M, zero]], format="csc")
        if model.forcing is not None:
            fa = model.forcing.amplitude
            if fa.shape[0] != n:
                raise ModelError(f"forcing amplitude has length {fa.shape[0]}, expected {n}")
            self.Fext = np.concatenate([fa, np.zeros(n, dtype=complex)])
        else:
            self.Fext = np.zeros(self.N, dtype=complex)

    @property
    def real_only(self):
        return self.model.real_only

    @property
    def serial_only(self):
        return self.model.serial_only

    def F(self, z):
        """Lifted nonlinearity: first n entries -f(x, xdot), last n exactly zero."""
        z = np.asarray(z).reshape(self.N)
        f = self.model.nonlinearity(z[:self.n], z[self.n:])
        out = np.zeros(self.N, dtype=np.result_type(z.dtype, np.asarray(f).dtype))
        out[:self.n] = -np.asarray(f).reshape(self.n)
        return out

    def F_batch(self, points):
        """Evaluate F on a list of state vectors, honoring a batch-capable box."""
        batch = getattr(self.model.nonlinearity, "evaluate_batch", None)
        if batch is None:
            return [self.F(z) for z in points]
        pairs = [(np.asarray(z).reshape(self.N)[:self.n],
                  np.asarray(z).reshape(self.N)[self.n:]) for z in points]
        forces = batch(pairs)
        out = []
        for z, f in zip(points, forces):
            vec = np.zeros(self.N, dtype=np.result_type(np.asarray(z).dtype,
                                                        np.asarray(f).dtype))
            vec[:self.n] = -np.asarray(f).reshape(self.n)
            out.append(vec)
        return out


def lift_to_first_order(model):
    """Build the first-order system for a validated second-order model."""
    return FirstOrderSystem(model)
