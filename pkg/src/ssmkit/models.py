"""Built-in desk-scale models with black-box nonlinearities.

Tensor-backed models (Duffing, spring chain, pipe) carry their explicit
quadratic/cubic coefficient arrays so the evaluation-only pipeline can be
checked against the intrusive reference path.  The von Karman beam ships
without tensors on purpose: it exercises the genuinely black-box route end
to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SecondOrderModel
from .tensors import ExplicitTensors


@dataclass
class BuiltinModel:
    """A named model plus everything the pipeline needs to drive it."""

    identifier: str
    params: dict
    model: SecondOrderModel
    tensors: ExplicitTensors = None
    forcing_amplitude: np.ndarray = None   # suggested complex fa
    observable_vector: np.ndarray = None   # over the physical state z
    notes: str = ""

    @property
    def n(self):
        return self.model.n

    def lifted_tensors(self):
        """Tensors of the first-order nonlinearity F = (-f, 0), or None."""
        if self.tensors is None:
            return None
        return self.tensors.lifted(self.model.n)


def _observable_dof(n_state, index):
    vec = np.zeros(n_state)
    vec[index] = 1.0
    return vec


def make_duffing(omega0=2.0, zeta=0.005, gamma=1.0):
    """Single-dof oscillator with a cubic spring; the canonical benchmark."""
    M = np.array([[1.0]])
    C = np.array([[2.0 * zeta * omega0]])
    K = np.array([[omega0 ** 2]])

    def force(x, xdot):
        return np.array([gamma * x[0] ** 3])

    tensors = ExplicitTensors(dim=1, state_dim=2)
    if gamma:
        tensors.add_cubic((0, 0, 0), [gamma])
    model = SecondOrderModel(M, C, K, force)
    return BuiltinModel(
        identifier="duffing",
        params={"omega0": omega0, "zeta": zeta, "gamma": gamma},
        model=model,
        tensors=tensors,
        forcing_amplitude=np.array([0.5 + 0.0j]),
        observable_vector=_observable_dof(2, 0),
    )


def _per_element(value, count):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(count, float(arr))
    if arr.shape != (count,):
        raise ValueError(f"expected scalar or length-{count} array, got shape {arr.shape}")
    return arr


def make_spring_chain(n, k_lin=1.0, k2=0.0, k3=0.0, damping=(0.0, 0.01),
                      masses=1.0, c2=0.0, c3=0.0):
    """Fixed-fixed chain of n masses with nonlinear springs between neighbors.

    Each of the n+1 elements carries a force ``k2 d^2 + k3 d^3 + c2 d d' +
    c3 d^2 d'`` in its relative extension d on top of the linear spring,
    so quadratic, cubic, and velocity-dependent tensors all appear.
    ``damping`` is the Rayleigh pair (a, b) with C = a M + b K.
    """
    n = int(n)
    n_el = n + 1
    k_lin = _per_element(k_lin, n_el)
    k2 = _per_element(k2, n_el)
    k3 = _per_element(k3, n_el)
    c2 = _per_element(c2, n_el)
    c3 = _per_element(c3, n_el)
    masses = _per_element(masses, n)

    K = np.zeros((n, n))
    for e in range(n_el):
        left, right = e - 1, e
        if left >= 0:
            K[left, left] += k_lin[e]
        if right < n:
            K[right, right] += k_lin[e]
        if left >= 0 and right < n:
            K[left, right] -= k_lin[e]
            K[right, left] -= k_lin[e]
    M = np.diag(masses)
    C = damping[0] * M + damping[1] * K

    elements = []
    for e in range(n_el):
        nodes = []
        if e - 1 >= 0:
            nodes.append((e - 1, -1.0))
        if e < n:
            nodes.append((e, 1.0))
        elements.append(nodes)

    def force(x, xdot):
        f = np.zeros(n, dtype=np.result_type(np.asarray(x).dtype, float))
        for e, nodes in enumerate(elements):
            d = sum(s * x[i] for i, s in nodes)
            dd = sum(s * xdot[i] for i, s in nodes)
            g = k2[e] * d * d + k3[e] * d ** 3 + c2[e] * d * dd + c3[e] * d * d * dd
            for i, s in nodes:
                f[i] += s * g
        return f

    tensors = ExplicitTensors(dim=n, state_dim=2 * n)
    for e, nodes in enumerate(elements):
        svec = np.zeros(n)
        for i, s in nodes:
            svec[i] = s
        for a, sa in nodes:
            for b, sb in nodes:
                if k2[e]:
                    tensors.add_quadratic((a, b), k2[e] * sa * sb * svec)
                if c2[e]:
                    tensors.add_quadratic((a, n + b), c2[e] * sa * sb * svec)
                for c, sc in nodes:
                    if k3[e]:
                        tensors.add_cubic((a, b, c), k3[e] * sa * sb * sc * svec)
                    if c3[e]:
                        tensors.add_cubic((a, b, n + c), c3[e] * sa * sb * sc * svec)

    model = SecondOrderModel(M, C, K, force)
    fa = np.zeros(n, dtype=complex)
    fa[0] = 0.5
    return BuiltinModel(
        identifier="spring_chain",
        params={"n": n, "k_lin": k_lin.tolist(), "k2": k2.tolist(), "k3": k3.tolist(),
                "c2": c2.tolist(), "c3": c3.tolist(), "damping": list(damping),
                "masses": masses.tolist()},
        model=model,
        tensors=tensors,
        forcing_amplitude=fa,
        observable_vector=_observable_dof(2 * n, 0),
    )


def make_internally_resonant_chain(k2=0.3, beta_damp=0.004, scale=1.0):
    """Two-mass chain whose modal frequencies sit exactly in a 1:2 ratio.

    Stiffnesses (0.4, 0.6, 0.4) * scale give omega2 = 2 * omega1 for unit
    masses; quadratic springs couple the modes, and stiffness-proportional
    damping keeps both pairs lightly damped.  The quadratic interaction
    around the lower pair reproduces the classic energy-transfer response
    with saddle-node and Hopf points on the forced response curve.
    """
    k = scale * np.array([0.4, 0.6, 0.4])
    built = make_spring_chain(2, k_lin=k, k2=k2 * scale, k3=0.0,
                              damping=(0.0, beta_damp))
    built.identifier = "resonant_chain"
    built.params = {"k2": k2, "beta_damp": beta_damp, "scale": scale}
    return built


# -- geometrically nonlinear beam ---------------------------------------------

_GAUSS5 = np.polynomial.legendre.leggauss(5)


def _hermite(xi, le):
    h = np.array([1 - 3 * xi ** 2 + 2 * xi ** 3,
                  le * (xi - 2 * xi ** 2 + xi ** 3),
                  3 * xi ** 2 - 2 * xi ** 3,
                  le * (-xi ** 2 + xi ** 3)])
    dh = np.array([-6 * xi + 6 * xi ** 2,
                   le * (1 - 4 * xi + 3 * xi ** 2),
                   6 * xi - 6 * xi ** 2,
                   le * (-2 * xi + 3 * xi ** 2)]) / le
    return h, dh


def make_vonkarman_beam(n_elem=8, length=1.0, width=0.02, thickness=0.01,
                        youngs=70e9, density=2700.0, rayleigh=(0.0, 1e-6),
                        arch_rise=0.0):
    """Clamped-clamped beam with axial-bending (von Karman) coupling.

    Three dofs per node (u, w, theta); the nonlinear internal force comes
    from an element loop over Gauss points, and no coefficient tensors are
    assembled: this model exercises the black-box-only pipeline.  A nonzero
    ``arch_rise`` prescribes a shallow initial shape
    ``w0 = rise * (1 - cos(2 pi x / L)) / 2`` whose slope couples membrane
    and bending, turning on quadratic internal forces (flat beams are
    transverse-symmetric and nearly odd).
    """
    n_elem = int(n_elem)
    EA = youngs * width * thickness
    EI = youngs * width * thickness ** 3 / 12.0
    rhoA = density * width * thickness
    le = length / n_elem
    n_nodes = n_elem + 1
    ndof_full = 3 * n_nodes

    gauss_xi = 0.5 * (_GAUSS5[0] + 1.0)
    gauss_w = 0.5 * _GAUSS5[1]
    shapes = []
    for xi in gauss_xi:
        _, dh = _hermite(xi, le)
        shapes.append(dh)
    bu = np.array([-1.0 / le, 1.0 / le])

    def arch_slope(x_global):
        if arch_rise == 0.0:
            return 0.0
        return arch_rise * np.pi / length * np.sin(2 * np.pi * x_global / length)

    K = np.zeros((ndof_full, ndof_full))
    M = np.zeros((ndof_full, ndof_full))
    m_ax = rhoA * le / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    k_b = EI / le ** 3 * np.array([
        [12, 6 * le, -12, 6 * le],
        [6 * le, 4 * le ** 2, -6 * le, 2 * le ** 2],
        [-12, -6 * le, 12, -6 * le],
        [6 * le, 2 * le ** 2, -6 * le, 4 * le ** 2]])
    m_b = rhoA * le / 420.0 * np.array([
        [156, 22 * le, 54, -13 * le],
        [22 * le, 4 * le ** 2, 13 * le, -3 * le ** 2],
        [54, 13 * le, 156, -22 * le],
        [-13 * le, -3 * le ** 2, -22 * le, 4 * le ** 2]])
    for e in range(n_elem):
        ax = [3 * e, 3 * (e + 1)]
        bd = [3 * e + 1, 3 * e + 2, 3 * (e + 1) + 1, 3 * (e + 1) + 2]
        M[np.ix_(ax, ax)] += m_ax
        M[np.ix_(bd, bd)] += m_b
        K[np.ix_(bd, bd)] += k_b
        # membrane stiffness with the arch slope folded in: EA (Bu + s0 Bw)^2
        dofs = ax + bd
        for dh, wq, xi in zip(shapes, gauss_w, gauss_xi):
            s0 = arch_slope((e + xi) * le)
            row = np.concatenate([bu, s0 * dh])
            K[np.ix_(dofs, dofs)] += (wq * le * EA) * np.outer(row, row)

    # clamp both end nodes
    fixed = [0, 1, 2, ndof_full - 3, ndof_full - 2, ndof_full - 1]
    free = [i for i in range(ndof_full) if i not in fixed]
    n = len(free)
    Kf = K[np.ix_(free, free)]
    Mf = M[np.ix_(free, free)]
    Cf = rayleigh[0] * Mf + rayleigh[1] * Kf
    loc = {g: i for i, g in enumerate(free)}

    def force(x, xdot):
        x = np.asarray(x)
        full = np.zeros(ndof_full, dtype=x.dtype)
        for g, i in loc.items():
            full[g] = x[i]
        f_full = np.zeros(ndof_full, dtype=np.result_type(x.dtype, float))
        for e in range(n_elem):
            ax = [3 * e, 3 * (e + 1)]
            bd = [3 * e + 1, 3 * e + 2, 3 * (e + 1) + 1, 3 * (e + 1) + 2]
            ue = full[ax]
            we = full[bd]
            du = bu @ ue
            for dh, wq, xi in zip(shapes, gauss_w, gauss_xi):
                s = dh @ we
                s0 = arch_slope((e + xi) * le)
                # nonlinear membrane strain parts: quadratic and cubic only
                f_full[ax] += (wq * le * EA) * (0.5 * s * s) * bu
                f_full[bd] += (wq * le * EA) * (du * s + 1.5 * s0 * s * s
                                                + 0.5 * s ** 3) * dh
        return f_full[free]

    model = SecondOrderModel(Mf, Cf, Kf, force)
    # transverse load + observable at the middle node's deflection dof
    mid = 3 * (n_nodes // 2) + 1
    fa = np.zeros(n, dtype=complex)
    fa[loc[mid]] = 0.5
    return BuiltinModel(
        identifier="vonkarman_beam",
        params={"n_elem": n_elem, "length": length, "width": width,
                "thickness": thickness, "youngs": youngs, "density": density,
                "rayleigh": list(rayleigh), "arch_rise": arch_rise},
        model=model,
        tensors=None,
        forcing_amplitude=fa,
        observable_vector=_observable_dof(2 * n, loc[mid]),
        notes="black-box only: no explicit tensors by design",
    )


# -- cantilevered pipe conveying fluid ------------------------------------------

_PIPE_ROOTS = np.array([1.8751040687119611, 4.6940911329741746,
                        7.8547574382376126, 10.995540734875467,
                        14.137168391046471])


def _pipe_root(r):
    if r < len(_PIPE_ROOTS):
        return _PIPE_ROOTS[r]
    return (2 * r + 1) * np.pi / 2.0


def _cantilever_mode(lam, xi):
    """Clamped-free beam eigenfunction and derivatives, mass-normalized."""
    sig = (np.sinh(lam) - np.sin(lam)) / (np.cosh(lam) + np.cos(lam))
    ch, co = np.cosh(lam * xi), np.cos(lam * xi)
    sh, si = np.sinh(lam * xi), np.sin(lam * xi)
    phi = ch - co - sig * (sh - si)
    d1 = lam * (sh + si - sig * (ch - co))
    d2 = lam ** 2 * (ch + co - sig * (sh + si))
    return phi, d1, d2


def make_pipe_conveying_fluid(n_modes=4, flow_velocity=6.0, viscoelastic=0.004,
                              mass_ratio=0.2, nonlinear_gain=1.0, n_quad=80):
    """Galerkin model of a cantilevered pipe conveying fluid (dimensionless).

    Flow-induced Coriolis and centrifugal/follower terms make both damping
    and stiffness matrices asymmetric; the Kelvin-Voigt law applied to the
    nonlinear curvature produces cubic internal forces in displacement and
    velocity.  Galerkin coefficients are computed by fixed-order
    Gauss-Legendre quadrature over cantilever eigenfunctions.
    """
    n = int(n_modes)
    if n > len(_PIPE_ROOTS) + 3:
        raise ValueError("pipe model supports at most 8 modes")
    u = float(flow_velocity)
    alpha = float(viscoelastic)
    beta = float(mass_ratio)
    kappa = float(nonlinear_gain)

    nodes, weights = np.polynomial.legendre.leggauss(int(n_quad))
    xi = 0.5 * (nodes + 1.0)
    w_q = 0.5 * weights

    lam = np.array([_pipe_root(r) for r in range(n)])
    phi = np.zeros((n, len(xi)))
    d1 = np.zeros((n, len(xi)))
    d2 = np.zeros((n, len(xi)))
    for r in range(n):
        phi[r], d1[r], d2[r] = _cantilever_mode(lam[r], xi)

    def quad(fa, fb):
        return np.einsum("iq,jq,q->ij", fa, fb, w_q)

    mass = quad(phi, phi)                  # identity up to quadrature error
    stiff_el = quad(d2, d2)                # integral of phi_i'' phi_j''
    b1 = quad(phi, d1)                     # Coriolis coupling, asymmetric
    b2 = quad(phi, d2)                     # centrifugal/follower, asymmetric

    M = mass
    C = alpha * stiff_el + 2.0 * np.sqrt(beta) * u * b1
    K = stiff_el + u * u * b2

    # cubic Galerkin tensor: integral of phi_i'' phi_j'' phi_k' phi_l'
    A4 = np.einsum("iq,jq,kq,lq,q->ijkl", d2, d2, d1, d1, w_q)

    def force(q, qdot):
        q = np.asarray(q)
        qdot = np.asarray(qdot)
        eta_p = d1.T @ q
        eta_pp = d2.T @ q
        etad_p = d1.T @ qdot
        etad_pp = d2.T @ qdot
        g = kappa * eta_pp * eta_p ** 2 \
            + alpha * (etad_pp * eta_p ** 2 + 2.0 * eta_pp * eta_p * etad_p)
        return d2 @ (w_q * g)

    tensors = ExplicitTensors(dim=n, state_dim=2 * n)
    for j in range(n):
        for k in range(n):
            for l in range(n):
                vec = A4[:, j, k, l]
                if kappa:
                    tensors.add_cubic((j, k, l), kappa * vec)
                if alpha:
                    tensors.add_cubic((n + j, k, l), alpha * vec)
                    tensors.add_cubic((j, k, n + l), 2.0 * alpha * vec)

    model = SecondOrderModel(M, C, K, force)
    fa = 0.5 * np.einsum("iq,q->i", phi, w_q).astype(complex)  # base-excitation-like
    tip = np.zeros(2 * n)
    for r in range(n):
        tip[r] = _cantilever_mode(lam[r], np.array([1.0]))[0][0]
    return BuiltinModel(
        identifier="pipe",
        params={"n_modes": n, "flow_velocity": u, "viscoelastic": alpha,
                "mass_ratio": beta, "nonlinear_gain": kappa, "n_quad": n_quad},
        model=model,
        tensors=tensors,
        forcing_amplitude=fa,
        observable_vector=tip,
        notes="asymmetric C, K for flow_velocity > 0; post-flutter near u = 6",
    )


REGISTRY = {
    "duffing": make_duffing,
    "spring_chain": make_spring_chain,
    "resonant_chain": make_internally_resonant_chain,
    "vonkarman_beam": make_vonkarman_beam,
    "pipe": make_pipe_conveying_fluid,
}


def make(identifier, **params):
    try:
        factory = REGISTRY[identifier]
    except KeyError:
        raise KeyError(f"unknown builtin model {identifier!r}; "
                       f"available: {sorted(REGISTRY)}") from None
    return factory(**params)
