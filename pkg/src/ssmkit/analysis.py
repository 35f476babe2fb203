"""Reduced-dynamics consumers: backbone curves, forced response, trajectories.

Steady harmonic response is found as fixed points of the reduced dynamics in
a frame rotating with the excitation: substituting ``p_j = q_j e^{i r_j phi}``
(integer ratios r per conjugate pair, conjugate rows with opposite sign)
turns the normal-form reduced dynamics into an autonomous vector field in q.
Fixed points are continued in Omega by pseudo-arclength; Jacobian
eigenvalues classify stability and flag saddle-node and Hopf points.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.integrate import solve_ivp

from . import indexing
from .errors import ContinuationError
from .forced import solve_leading_nonautonomous

_PHASE_SAMPLES = 128


class Observable:
    """A linear functional of the physical state, e.g. one displacement dof."""

    def __init__(self, vector, name="obs"):
        self.vector = np.asarray(vector, dtype=float).reshape(-1)
        self.name = name

    @classmethod
    def dof(cls, index, N):
        vec = np.zeros(N)
        vec[index] = 1.0
        return cls(vec, name=f"dof{index}")

    def __call__(self, z):
        return complex(np.dot(self.vector, np.asarray(z).reshape(-1)))


def lift_to_physical(table, corr, p, phi, epsilon, observable, leak_tol=1e-8):
    """Observable sample of the physical state at reduced point p.

    Adds the periodic correction when ``corr`` is given and epsilon > 0; the
    imaginary leakage of the result must stay below ``leak_tol`` relative.
    """
    z = table.manifold_at(p)
    if corr is not None and epsilon != 0:
        z = z + epsilon * corr.state_correction(phi)
    val = observable(z)
    scale = max(abs(val), float(np.max(np.abs(z))) * 1e-6, 1e-300)
    if abs(val.imag) > leak_tol * scale:
        raise ValueError(
            f"imaginary leakage {abs(val.imag):.3e} exceeds {leak_tol:.1e} * {scale:.3e}; "
            "the reduced point is not conjugate-symmetric")
    return val.real


@dataclass
class StepControl:
    """Pseudo-arclength step-size policy."""

    ds0: float = 0.02
    ds_min: float = 1e-7
    ds_max: float = 0.1
    newton_tol: float = 1e-10
    newton_max: int = 12
    grow: float = 1.3
    max_points: int = 4000


@dataclass
class FrcPoint:
    """One continuation point of the forced response curve."""

    Omega: float
    rho: np.ndarray
    theta: np.ndarray
    out_amp: float
    stability: str
    flag: str = "regular"
    chart_ok: bool = True
    u: np.ndarray = field(default=None, repr=False)
    jac_eigs: np.ndarray = field(default=None, repr=False)


class ReducedOde:
    """Reduced dynamics with its rotating-frame restriction.

    ``ratios`` holds one positive integer per conjugate pair relating the
    pair's rotation rate to the excitation (1 for primary resonance, 2 for
    a 1:2 internally resonant companion, ...).  Monomials kept in the
    rotating frame satisfy the exact integer relation <r, m> = r_j; flagged
    resonant terms that do not are reported in ``dropped_norm``.
    """

    def __init__(self, table, subspace, ratios=None, Fa=None, observable=None,
                 epsilon=0.0):
        if table.M_dim % 2:
            raise ValueError("rotating-frame reduction needs conjugate-pair coordinates")
        self.table = table
        self.subspace = subspace
        self.M_dim = table.M_dim
        self.pairs = table.M_dim // 2
        self.lambdas = np.asarray(subspace.values)
        self.ratios = tuple(int(r) for r in ratios) if ratios is not None \
            else (1,) * self.pairs
        if any(r < 1 for r in self.ratios):
            raise ValueError(f"resonance ratios must be positive integers: {self.ratios}")
        self.observable = observable
        self.epsilon = float(epsilon)
        # signed rates per reduced coordinate: (r1, -r1, r2, -r2, ...)
        self._signed = np.zeros(self.M_dim, dtype=int)
        for a, r in enumerate(self.ratios):
            self._signed[2 * a] = r
            self._signed[2 * a + 1] = -r
        # rotating-frame terms per pair row, and the full term list
        self._rows = [[] for _ in range(self.pairs)]
        self.dropped_norm = 0.0
        self._all_terms = []
        for m, _, r in table.items():
            if np.any(r):
                self._all_terms.append((m, np.array(r)))
            rate = int(np.dot(self._signed, m))
            for a in range(self.pairs):
                c = r[2 * a]
                if c != 0:
                    if rate == self.ratios[a]:
                        self._rows[a].append((m, complex(c)))
                    else:
                        self.dropped_norm += abs(c)
        # reduced forcing: projection of the lifted forcing on r=1 pairs
        self._forcing = np.zeros(self.pairs, dtype=complex)
        if Fa is not None:
            Fa = np.asarray(Fa, dtype=complex).reshape(-1)
            for a in range(self.pairs):
                if self.ratios[a] == 1:
                    self._forcing[a] = np.vdot(subspace.left[:, 2 * a], Fa)

    # -- rotating frame -------------------------------------------------------

    def _assemble_p(self, q):
        p = np.empty(self.M_dim, dtype=complex)
        p[0::2] = q
        p[1::2] = np.conj(q)
        return p

    def rotating_field(self, u, Omega, epsilon=None):
        """Real vector field for u = (Re q_1, Im q_1, ...) at excitation Omega."""
        eps = self.epsilon if epsilon is None else epsilon
        q = u[0::2] + 1j * u[1::2]
        p = self._assemble_p(q)
        out = np.empty(2 * self.pairs)
        for a in range(self.pairs):
            g = -1j * self.ratios[a] * Omega * q[a] + eps * self._forcing[a]
            for m, c in self._rows[a]:
                g += c * indexing.monomial(p, m)
            out[2 * a] = g.real
            out[2 * a + 1] = g.imag
        return out

    def rotating_jacobian(self, u, Omega, epsilon=None, h=None):
        n = len(u)
        J = np.empty((n, n))
        for j in range(n):
            step = (1e-7 * max(1.0, abs(u[j]))) if h is None else h
            up = u.copy(); up[j] += step
            um = u.copy(); um[j] -= step
            J[:, j] = (self.rotating_field(up, Omega, epsilon)
                       - self.rotating_field(um, Omega, epsilon)) / (2 * step)
        return J

    def rotating_domega(self, u, Omega, epsilon=None, h=None):
        step = (1e-7 * max(1.0, abs(Omega))) if h is None else h
        return (self.rotating_field(u, Omega + step, epsilon)
                - self.rotating_field(u, Omega - step, epsilon)) / (2 * step)

    # -- direct (non-rotating) evaluation ---------------------------------------

    def field(self, p, t=0.0, Omega=None, corr=None, epsilon=None):
        """Full reduced vector field R(p) + eps * S0(Omega t)."""
        eps = self.epsilon if epsilon is None else epsilon
        out = np.zeros(self.M_dim, dtype=complex)
        for m, r in self._all_terms:
            out += r * indexing.monomial(p, m)
        if corr is not None and eps != 0 and Omega is not None:
            out = out + eps * corr.reduced_forcing(Omega * t)
        return out


def backbone_curve(table, subspace, rho_grid, observable):
    """Amplitude-frequency pairs of the conservative-like decaying response.

    Only defined for a single conjugate pair (M_dim = 2): the instantaneous
    frequency is Im[R(p) / p1] on p = (rho, rho), and the amplitude is the
    infinity norm of the observable over one cycle of the phase.
    """
    if table.M_dim != 2:
        raise ValueError(f"backbone extraction needs M_dim = 2, got {table.M_dim}")
    phases = np.exp(1j * np.linspace(0.0, 2 * np.pi, _PHASE_SAMPLES, endpoint=False))
    out = []
    for rho in rho_grid:
        p = np.array([rho, rho], dtype=complex)
        r1 = table.reduced_at(p)[0]
        freq = (r1 / rho).imag if rho != 0 else float(subspace.values[0].imag)
        amp = 0.0
        for ph in phases:
            z = table.manifold_at(np.array([rho * ph, rho * np.conj(ph)]))
            amp = max(amp, abs(observable(z).real))
        out.append((amp, float(freq)))
    return out


def _physical_amplitude(rom, q, Omega, corr, epsilon, n_phase=_PHASE_SAMPLES):
    """Infinity norm of the observable over one excitation period."""
    if rom.observable is None:
        return float(np.max(np.abs(q)))
    amp = 0.0
    for phi in np.linspace(0.0, 2 * np.pi, n_phase, endpoint=False):
        p = np.empty(rom.M_dim, dtype=complex)
        for a in range(rom.pairs):
            rot = np.exp(1j * rom.ratios[a] * phi)
            p[2 * a] = q[a] * rot
            p[2 * a + 1] = np.conj(q[a] * rot)
        z = rom.table.manifold_at(p)
        if corr is not None and epsilon != 0:
            z = z + epsilon * corr.state_correction(phi)
        amp = max(amp, abs(rom.observable(z).real))
    return float(amp)


def _newton_fixed_omega(rom, u0, Omega, epsilon, tol, max_iter):
    u = u0.copy()
    for _ in range(max_iter):
        g = rom.rotating_field(u, Omega, epsilon)
        if np.linalg.norm(g) <= tol:
            return u, True
        J = rom.rotating_jacobian(u, Omega, epsilon)
        try:
            du = la.solve(J, -g)
        except la.LinAlgError:
            return u, False
        u = u + du
        if np.linalg.norm(du) <= 1e-14 * max(1.0, np.linalg.norm(u)):
            g = rom.rotating_field(u, Omega, epsilon)
            return u, np.linalg.norm(g) <= tol
    g = rom.rotating_field(u, Omega, epsilon)
    return u, np.linalg.norm(g) <= tol


def _newton_arclength(rom, y_pred, tangent, y_prev, ds, epsilon, scale, tol, max_iter):
    """Corrector for [G(u, Omega); tangent . (y - y_prev)/scale - ds] = 0."""
    y = y_pred.copy()
    n = len(y) - 1
    for it in range(max_iter):
        g = rom.rotating_field(y[:n], y[n], epsilon)
        c = float(np.dot(tangent, (y - y_prev) / scale)) - ds
        res = np.concatenate([g, [c]])
        if np.linalg.norm(g) <= tol and abs(c) <= 1e-12 + 1e-10 * abs(ds):
            return y, True, it
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = rom.rotating_jacobian(y[:n], y[n], epsilon)
        J[:n, n] = rom.rotating_domega(y[:n], y[n], epsilon)
        J[n, :] = tangent / scale
        try:
            dy = la.solve(J, -res)
        except la.LinAlgError:
            return y, False, it
        y = y + dy
    g = rom.rotating_field(y[:n], y[n], epsilon)
    return y, np.linalg.norm(g) <= tol, max_iter


def _branch_tangent(rom, y, epsilon, scale, previous=None):
    n = len(y) - 1
    A = np.zeros((n, n + 1))
    A[:, :n] = rom.rotating_jacobian(y[:n], y[n], epsilon)
    A[:, n] = rom.rotating_domega(y[:n], y[n], epsilon)
    A = A * scale[None, :]  # differentiate w.r.t. scaled coordinates
    _, _, vh = la.svd(A)
    t = vh[-1].real
    t = t / np.linalg.norm(t)
    if previous is not None and np.dot(t, previous) < 0:
        t = -t
    elif previous is None and t[n] < 0:
        t = -t
    return t


def _classify(eigs, im_tol=1e-9):
    n_unstable = int(np.sum(eigs.real > 0))
    scale = max(1.0, float(np.max(np.abs(eigs))))
    complex_mask = np.abs(eigs.imag) > im_tol * scale
    sn_ind = float(np.prod(np.sign(eigs.real))) if len(eigs) else 1.0
    hb_ind = float(np.max(eigs.real[complex_mask])) if np.any(complex_mask) else -np.inf
    return n_unstable, sn_ind, hb_ind


def frc_continuation(rom, omega_range, epsilon, step_ctrl=None, mode="TI",
                     corr_provider=None, chart_radius=None, bisect_rel=1e-6):
    """Pseudo-arclength continuation of rotating-frame fixed points.

    Returns FrcPoint records sweeping Omega across ``omega_range``.  At each
    point the reduced Jacobian decides stability; a sign change of the real
    eigenvalue product flags a saddle-node, a real-part crossing of a complex
    pair flags a Hopf point, and flagged intervals are bisected to
    ``bisect_rel`` relative accuracy in Omega.  In TV mode ``corr_provider``
    (Omega -> ForcedCorrection) supplies the periodic state correction used
    for physical amplitudes; the reduced fixed-point problem is identical in
    the two modes.
    """
    ctrl = step_ctrl or StepControl()
    if mode not in ("TI", "TV"):
        raise ValueError(f"mode must be 'TI' or 'TV', got {mode!r}")
    if mode == "TV" and corr_provider is None:
        raise ValueError("TV mode needs a corr_provider for the periodic correction")
    om_start, om_end = float(omega_range[0]), float(omega_range[1])
    direction = 1.0 if om_end >= om_start else -1.0
    n = 2 * rom.pairs

    # scaling of the extended coordinates for the arclength metric
    res_rates = [abs(rom.lambdas[2 * a].real) for a in range(rom.pairs)]
    f_norm = float(np.max(np.abs(rom._forcing))) if np.any(rom._forcing) else 0.0
    u_scale = max(epsilon * f_norm / max(min(res_rates), 1e-12), 1e-12)
    om_scale = max(abs(om_end - om_start), 1e-12)
    scale = np.array([u_scale] * n + [om_scale])

    # first point by natural continuation from the linear predictor
    q0 = np.zeros(rom.pairs, dtype=complex)
    for a in range(rom.pairs):
        if rom.ratios[a] == 1 and rom._forcing[a] != 0:
            q0[a] = -epsilon * rom._forcing[a] / (
                rom.lambdas[2 * a] - 1j * rom.ratios[a] * om_start)
    u0 = np.empty(n)
    u0[0::2] = q0.real
    u0[1::2] = q0.imag
    g_tol = ctrl.newton_tol * max(float(np.max(np.abs(rom.lambdas))) * u_scale, 1e-300)
    u0, ok = _newton_fixed_omega(rom, u0, om_start, epsilon, g_tol, 50)
    if not ok:
        raise ContinuationError(f"no fixed point found at Omega = {om_start}")

    def corr_at(Omega):
        return corr_provider(Omega) if (mode == "TV") else None

    def make_point(y, flag="regular"):
        u, Om = y[:n], y[n]
        q = u[0::2] + 1j * u[1::2]
        J = rom.rotating_jacobian(u, Om, epsilon)
        eigs = la.eigvals(J)
        stable = bool(np.all(eigs.real < 0))
        amp = _physical_amplitude(rom, q, Om, corr_at(Om), epsilon)
        chart_ok = True
        if chart_radius is not None and float(np.max(np.abs(q))) > chart_radius:
            chart_ok = False
        return FrcPoint(Omega=float(Om), rho=np.abs(q), theta=np.angle(q),
                        out_amp=amp, stability="stable" if stable else "unstable",
                        flag=flag, chart_ok=chart_ok, u=u.copy(), jac_eigs=eigs)

    y = np.concatenate([u0, [om_start]])
    tangent = _branch_tangent(rom, y, epsilon, scale)
    if tangent[n] * direction < 0:
        tangent = -tangent
    points = [make_point(y)]
    ds = ctrl.ds0

    def locate(y0, y1, t0, which):
        """Bisect a stability transition between two branch points."""
        def point_at(frac):
            yp = y0 + frac * (y1 - y0)
            sec = (y1 - y0) / scale
            sec = sec / max(np.linalg.norm(sec), 1e-300)
            yy, okf, _ = _newton_arclength(rom, yp, sec, y0,
                                           float(np.dot(sec, (yp - y0) / scale)),
                                           epsilon, scale, g_tol, ctrl.newton_max + 8)
            return yy if okf else None

        e0 = la.eigvals(rom.rotating_jacobian(y0[:n], y0[n], epsilon))
        lo, hi = 0.0, 1.0
        ind_lo = _classify(e0)[1 if which == "SN" else 2]
        y_best = None
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            ym = point_at(mid)
            if ym is None:
                break
            em = la.eigvals(rom.rotating_jacobian(ym[:n], ym[n], epsilon))
            ind_m = _classify(em)[1 if which == "SN" else 2]
            same = (np.sign(ind_m) == np.sign(ind_lo)) if which == "SN" \
                else ((ind_m > 0) == (ind_lo > 0))
            if same:
                lo = mid
                ind_lo = ind_m
            else:
                hi = mid
            y_best = ym
            y_lo = point_at(lo)
            y_hi = point_at(hi)
            if y_lo is not None and y_hi is not None and \
                    abs(y_hi[n] - y_lo[n]) <= bisect_rel * max(abs(y_lo[n]), 1e-300) \
                    and (hi - lo) < 0.2:
                y_best = y_hi
                break
        return y_best

    while len(points) < ctrl.max_points:
        Om = y[n]
        if (direction > 0 and Om > om_end) or (direction < 0 and Om < om_end):
            break
        y_pred = y + ds * (tangent * scale)
        y_new, ok, iters = _newton_arclength(rom, y_pred, tangent, y, ds, epsilon,
                                             scale, g_tol, ctrl.newton_max)
        if not ok:
            ds *= 0.5
            if ds < ctrl.ds_min:
                raise ContinuationError(
                    f"continuation stalled near Omega = {y[n]:.8g} (step below "
                    f"{ctrl.ds_min})", last_point=points[-1])
            continue
        pt_new = make_point(y_new)
        prev = points[-1]
        n0, sn0, hb0 = _classify(prev.jac_eigs)
        n1, sn1, hb1 = _classify(pt_new.jac_eigs)
        if np.sign(sn0) != np.sign(sn1):
            y_loc = locate(y, y_new, tangent, "SN")
            if y_loc is not None:
                points.append(make_point(y_loc, flag="SN"))
        if np.isfinite(hb0) and np.isfinite(hb1) and (hb0 > 0) != (hb1 > 0) \
                and abs(n1 - n0) >= 2:
            y_loc = locate(y, y_new, tangent, "HB")
            if y_loc is not None:
                points.append(make_point(y_loc, flag="HB"))
        points.append(pt_new)
        tangent = _branch_tangent(rom, y_new, epsilon, scale, previous=tangent)
        y = y_new
        if iters <= 3:
            ds = min(ds * ctrl.grow, ctrl.ds_max)
    else:
        warnings.warn("continuation hit the point budget before the range end")
    return points


@dataclass
class Trajectory:
    t: np.ndarray
    p: np.ndarray  # (len(t), M_dim) complex
    truncated: bool = False


def integrate_rom(rom, p0, t_span, Omega=None, corr=None, epsilon=None,
                  rtol=1e-9, atol=1e-12, chart_radius=None, max_step=np.inf):
    """Adaptive integration of the reduced dynamics p' = R(p) + eps S0(Omega t).

    The complex reduced state is stacked into reals for the integrator.  A
    blow-up guard terminates the trajectory when ||p|| exceeds the chart
    radius times a safety factor and marks it truncated.
    """
    p0 = np.asarray(p0, dtype=complex).reshape(rom.M_dim)
    M = rom.M_dim

    def rhs(t, yr):
        p = yr[:M] + 1j * yr[M:]
        dp = rom.field(p, t, Omega=Omega, corr=corr, epsilon=epsilon)
        return np.concatenate([dp.real, dp.imag])

    events = None
    if chart_radius is not None:
        guard = 5.0 * chart_radius

        def blow_up(t, yr):
            p = yr[:M] + 1j * yr[M:]
            return float(np.max(np.abs(p))) - guard
        blow_up.terminal = True
        blow_up.direction = 1.0
        events = [blow_up]

    sol = solve_ivp(rhs, t_span, np.concatenate([p0.real, p0.imag]),
                    method="DOP853", rtol=rtol, atol=atol, events=events,
                    max_step=max_step, dense_output=False)
    p = (sol.y[:M] + 1j * sol.y[M:]).T
    truncated = bool(events and sol.t_events[0].size)
    return Trajectory(t=sol.t, p=p, truncated=truncated)


def chart_validity_radius(table, pair=0, rel_tol=0.05, rho_cap=None):
    """Radius where the top-order and two-orders-lower truncations split.

    Scans a log grid along the conjugate-symmetric ray of one pair and
    bisects the first crossing of the relative difference through rel_tol.
    This is an operational trust region for the expansion, not a theorem.
    """
    k = table.max_order
    if k < 3:
        return np.inf if rho_cap is None else rho_cap
    low = table.truncated(k - 2)

    def rel_diff(rho):
        p = np.zeros(table.M_dim, dtype=complex)
        p[2 * pair] = rho
        p[2 * pair + 1] = rho
        w_hi = table.manifold_at(p)
        w_lo = low.manifold_at(p)
        return float(np.linalg.norm(w_hi - w_lo) / max(np.linalg.norm(w_hi), 1e-300))

    cap = rho_cap if rho_cap is not None else 1e3
    grid = np.logspace(-6, np.log10(cap), 80)
    prev = grid[0]
    for rho in grid:
        if rel_diff(rho) >= rel_tol:
            lo, hi = prev, rho
            for _ in range(60):
                mid = np.sqrt(lo * hi)
                if rel_diff(mid) >= rel_tol:
                    hi = mid
                else:
                    lo = mid
            return float(hi)
        prev = rho
    return float(cap)


def make_corr_provider(sys, subspace, Fa=None, tol_res=0.05, resonant_plus=None,
                       round_digits=12):
    """Cache leading-order forced corrections keyed by rounded Omega."""
    cache = {}

    def provider(Omega):
        key = float(np.format_float_scientific(Omega, precision=round_digits))
        hit = cache.get(key)
        if hit is None:
            hit = solve_leading_nonautonomous(sys, subspace, Omega, Fa=Fa,
                                              tol_res=tol_res,
                                              resonant_plus=resonant_plus)
            cache[key] = hit
        return hit

    provider.cache = cache
    return provider


def curve_gap(points_a, points_b):
    """Max |amplitude difference| between two point-paired response curves."""
    if len(points_a) != len(points_b):
        raise ValueError("curves have different point counts; cannot pair by index")
    gap = 0.0
    for pa, pb in zip(points_a, points_b):
        if abs(pa.Omega - pb.Omega) > 1e-9 * max(abs(pa.Omega), 1.0):
            raise ValueError("curves are not aligned in Omega")
        gap = max(gap, abs(pa.out_amp - pb.out_amp))
    return gap


def convergence_metric(points_a, points_b):
    """Max relative distance from curve A to curve B in the (Omega, amp) plane."""
    oa = np.array([p.Omega for p in points_a])
    aa = np.array([p.out_amp for p in points_a])
    ob = np.array([p.Omega for p in points_b])
    ab = np.array([p.out_amp for p in points_b])
    o_scale = max(np.ptp(ob), 1e-300)
    a_scale = max(ab.max(), 1e-300)
    worst = 0.0
    for o, a in zip(oa, aa):
        d = np.sqrt(((ob - o) / o_scale) ** 2 + ((ab - a) / a_scale) ** 2)
        worst = max(worst, float(d.min()))
    return worst
