import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ssmkit import compute_ssm, lift_to_first_order, models, solve_master_subspace
from ssmkit.analysis import (Observable, ReducedOde, StepControl, backbone_curve,
                             chart_validity_radius, convergence_metric, curve_gap,
                             frc_continuation, integrate_rom, lift_to_physical,
                             make_corr_provider)
from ssmkit.model import ForcingSpec, SecondOrderModel


def test_backbone_linear_is_flat():
    model = SecondOrderModel([[1.0]], [[0.04]], [[4.0]], lambda x, v: np.zeros(1))
    sys_ = lift_to_first_order(model)
    sub = solve_master_subspace(sys_, 2)
    table = compute_ssm(sys_, sub, 3)
    pts = backbone_curve(table, sub, [1e-3, 0.05, 0.2], Observable.dof(0, 2))
    freqs = [f for _, f in pts]
    assert np.allclose(freqs, sub.values[0].imag, rtol=1e-12)


def test_backbone_duffing_hardening_and_slope(duffing, duffing_table3):
    _, _, sub = duffing
    obs = Observable.dof(0, 2)
    rhos = np.array([1e-3, 0.05, 0.1, 0.2])
    pts = backbone_curve(duffing_table3, sub, rhos, obs)
    amps = np.array([a for a, _ in pts])
    freqs = np.array([f for _, f in pts])
    assert np.all(np.diff(freqs) > 0)  # hardening for gamma > 0
    # small-amplitude slope against first-order averaging
    slope = (freqs[1] - freqs[0]) / (amps[1] ** 2 - amps[0] ** 2)
    assert slope == pytest.approx(3 * 1.0 / (8 * 2.0), rel=0.01)


def test_backbone_needs_single_pair(oracle_chain):
    built = models.make_internally_resonant_chain()
    sys_ = lift_to_first_order(built.model)
    sub = solve_master_subspace(sys_, 4)
    table = compute_ssm(sys_, sub, 2)
    with pytest.raises(ValueError, match="M_dim"):
        backbone_curve(table, sub, [0.1], Observable.dof(0, 4))


@pytest.fixture(scope="module")
def duffing_frc_setup():
    built = models.make_duffing(omega0=2.0, zeta=0.005, gamma=1.0)
    built.model.forcing = ForcingSpec(built.forcing_amplitude, epsilon=1.0)
    sys_ = lift_to_first_order(built.model)
    sub = solve_master_subspace(sys_, 2)
    table = compute_ssm(sys_, sub, 7)
    obs = Observable(built.observable_vector)
    rom = ReducedOde(table, sub, ratios=(1,), Fa=sys_.Fext, observable=obs)
    return built, sys_, sub, table, rom


def test_frc_zero_forcing_has_only_trivial_branch(duffing_frc_setup):
    _, _, _, _, rom = duffing_frc_setup
    pts = frc_continuation(rom, (1.8, 2.2), 0.0, StepControl(ds0=0.05))
    assert all(p.out_amp <= 1e-12 for p in pts)
    assert all(np.max(p.rho) <= 1e-12 for p in pts)


def test_frc_folds_carry_sn_flags(duffing_frc_setup):
    _, _, _, _, rom = duffing_frc_setup
    pts = frc_continuation(rom, (1.9, 2.3), 0.02, StepControl(ds0=0.01))
    sn = [i for i, p in enumerate(pts) if p.flag == "SN"]
    assert len(sn) == 2
    # SN flags coincide with folds of the branch within one step
    omegas = np.array([p.Omega for p in pts])
    for i in sn:
        lo = max(1, i - 2)
        hi = min(len(pts) - 1, i + 2)
        assert np.sign(omegas[lo] - omegas[lo - 1]) != np.sign(omegas[hi] - omegas[hi - 1])
    # stability changes at the fold
    stable = [p.stability == "stable" for p in pts]
    assert any(stable) and not all(stable)


def test_frc_stability_gauge_invariance(duffing_frc_setup):
    built, sys_, sub, table, rom = duffing_frc_setup
    obs = Observable(built.observable_vector)
    eigs_a = frc_continuation(rom, (2.02, 2.03), 0.012,
                              StepControl(ds0=0.02))[0].jac_eigs
    rot = np.exp(0.7j)
    rom_rot = ReducedOde(table, sub, ratios=(1,), Fa=sys_.Fext * rot, observable=obs)
    eigs_b = frc_continuation(rom_rot, (2.02, 2.03), 0.012,
                              StepControl(ds0=0.02))[0].jac_eigs
    np.testing.assert_allclose(np.sort_complex(eigs_a), np.sort_complex(eigs_b),
                               rtol=1e-6)


def test_ti_tv_gap_vanishes_linearly(duffing_frc_setup):
    built, sys_, sub, table, rom = duffing_frc_setup
    prov = make_corr_provider(sys_, sub, resonant_plus=[0])
    gaps = []
    for eps in (0.02, 0.01, 0.005):
        ti = frc_continuation(rom, (1.9, 2.1), eps, StepControl(ds0=0.02), mode="TI")
        tv = frc_continuation(rom, (1.9, 2.1), eps, StepControl(ds0=0.02),
                              mode="TV", corr_provider=prov)
        gaps.append(curve_gap(ti, tv))
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.3)
    assert gaps[1] / gaps[2] == pytest.approx(2.0, rel=0.3)


def test_rom_integration_linear_decay(duffing_frc_setup):
    _, _, sub, table, rom = duffing_frc_setup
    lam = sub.values[0]
    p0 = np.array([1e-5, 1e-5], dtype=complex)  # small: nonlinearity negligible
    traj = integrate_rom(rom, p0, (0.0, 10.0), rtol=1e-11, atol=1e-16)
    expected = p0[0] * np.exp(lam * traj.t[-1])
    assert abs(traj.p[-1, 0] - expected) <= 1e-7 * abs(p0[0])


def test_rom_integration_stationary_at_fixed_point(duffing_frc_setup):
    built, sys_, sub, table, rom = duffing_frc_setup
    eps = 0.012
    pts = frc_continuation(rom, (2.0, 2.05), eps, StepControl(ds0=0.02))
    pt = next(p for p in pts if p.stability == "stable")
    q = pt.u[0] + 1j * pt.u[1]
    p0 = np.array([q, np.conj(q)])
    prov = make_corr_provider(sys_, sub, resonant_plus=[0])
    corr = prov(pt.Omega)
    T = 2 * np.pi / pt.Omega
    traj = integrate_rom(rom, p0, (0.0, 5 * T), Omega=pt.Omega, corr=corr,
                         epsilon=eps, rtol=1e-11, atol=1e-14)
    drift = abs(traj.p[-1, 0] - q * np.exp(1j * pt.Omega * 5 * T))
    assert drift <= 1e-6 * abs(q)


def test_decay_frequency_sweep_reproduces_backbone(duffing_frc_setup):
    # integrate the unforced rom from a moderate amplitude and count zero
    # crossings of Re p1: the instantaneous frequency vs envelope must match
    # the backbone within a fraction of the total shift
    _, _, sub, table, rom = duffing_frc_setup
    rho0 = 0.4
    p0 = np.array([rho0, rho0], dtype=complex)
    traj = integrate_rom(rom, p0, (0.0, 120.0), rtol=1e-11, atol=1e-14)
    x = traj.p[:, 0].real
    t = traj.t
    crossings = []
    for i in range(1, len(t)):
        if x[i - 1] < 0 <= x[i]:
            crossings.append(t[i - 1] + (t[i] - t[i - 1]) * (-x[i - 1]) / (x[i] - x[i - 1]))
    crossings = np.array(crossings)
    periods = np.diff(crossings)
    mids = 0.5 * (crossings[1:] + crossings[:-1])
    envelope = np.interp(mids, t, np.abs(traj.p[:, 0]))
    omega_meas = 2 * np.pi / periods
    bb = backbone_curve(table, sub, envelope[:4], Observable.dof(0, 2))
    omega_bb = np.array([f for _, f in bb])
    np.testing.assert_allclose(omega_meas[:4], omega_bb, rtol=2e-3)


def test_lift_to_physical_contracts(duffing_frc_setup, duffing_table3):
    _, sys_, sub, table, rom = duffing_frc_setup
    obs = Observable.dof(0, 2)
    assert lift_to_physical(table, None, np.zeros(2, dtype=complex), 0.0, 0.0, obs) == 0.0
    val = lift_to_physical(table, None, np.array([0.1, 0.1]), 0.0, 0.0, obs)
    assert isinstance(val, float)
    with pytest.raises(ValueError, match="leakage"):
        lift_to_physical(table, None, np.array([0.1 + 0.05j, 0.1]), 0.0, 0.0, obs)


def test_chain_steady_state_matches_full_model():
    # forced 2-dof chain: lift a stable FRC point and compare its amplitude
    # against direct integration of the full equations of motion
    built = models.make_spring_chain(2, k_lin=1.0, k2=0.3, k3=0.5,
                                     damping=(0.0, 0.02))
    eps = 0.005
    built.model.forcing = ForcingSpec(built.forcing_amplitude, epsilon=eps)
    sys_ = lift_to_first_order(built.model)
    sub = solve_master_subspace(sys_, 2)
    table = compute_ssm(sys_, sub, 7)
    obs = Observable(built.observable_vector)
    rom = ReducedOde(table, sub, ratios=(1,), Fa=sys_.Fext, observable=obs)
    prov = make_corr_provider(sys_, sub, resonant_plus=[0])
    om1 = sub.values[0].imag
    pts = frc_continuation(rom, (0.98 * om1, 1.03 * om1), eps,
                           StepControl(ds0=0.02), mode="TV", corr_provider=prov)
    pt = max((p for p in pts if p.stability == "stable"), key=lambda p: p.out_amp)

    corr = prov(pt.Omega)
    q = pt.u[0] + 1j * pt.u[1]
    p_vec = np.array([q, np.conj(q)])
    z0 = (table.manifold_at(p_vec) + eps * corr.state_correction(0.0)).real
    M = built.model.M.toarray()
    C = built.model.C.toarray()
    K = built.model.K.toarray()
    fa = built.forcing_amplitude

    def rhs(t, y):
        x, v = y[:2], y[2:]
        fext = 2 * (fa * np.exp(1j * pt.Omega * t)).real * eps
        acc = np.linalg.solve(M, fext - C @ v - K @ x
                              - built.model.nonlinearity(x, v))
        return np.concatenate([v, acc])

    T = 2 * np.pi / pt.Omega
    n_cycles = 120
    sol = solve_ivp(rhs, (0.0, n_cycles * T), z0, rtol=1e-10, atol=1e-12,
                    dense_output=True)
    tt = np.linspace((n_cycles - 2) * T, n_cycles * T, 600)
    amp_full = float(np.max(np.abs(sol.sol(tt)[0])))
    assert pt.out_amp == pytest.approx(amp_full, rel=0.01)


def test_subcritical_pipe_matches_full_model():
    # asymmetric C/K with velocity-dependent cubic forces, validated against
    # direct integration of the full equations (stable subcritical flow)
    built = models.make_pipe_conveying_fluid(n_modes=4, flow_velocity=4.0,
                                             nonlinear_gain=40.0)
    eps = 0.4
    built.model.forcing = ForcingSpec(built.forcing_amplitude, epsilon=eps)
    sys_ = lift_to_first_order(built.model)
    pool = solve_master_subspace(sys_, sys_.N)
    best = min(range(0, sys_.N, 2), key=lambda i: abs(pool.values[i].real))
    sub = solve_master_subspace(sys_, 2, select={"indices": [best, best + 1]})
    table = compute_ssm(sys_, sub, 5)
    obs = Observable(built.observable_vector)
    rom = ReducedOde(table, sub, ratios=(1,), Fa=sys_.Fext, observable=obs)
    prov = make_corr_provider(sys_, sub, resonant_plus=[0])
    om = sub.values[0].imag
    pts = frc_continuation(rom, (0.97 * om, 1.03 * om), eps, StepControl(ds0=0.03),
                           mode="TV", corr_provider=prov)
    pt = max((p for p in pts if p.stability == "stable"), key=lambda p: p.out_amp)

    corr = prov(pt.Omega)
    q = pt.u[0] + 1j * pt.u[1]
    z0 = (table.manifold_at(np.array([q, np.conj(q)]))
          + eps * corr.state_correction(0.0)).real
    M = built.model.M.toarray()
    C = built.model.C.toarray()
    K = built.model.K.toarray()
    fa = built.forcing_amplitude.real
    Minv = np.linalg.inv(M)
    ov = built.observable_vector[:4]

    def rhs(t, y):
        x, v = y[:4], y[4:]
        fext = 2 * fa * np.cos(pt.Omega * t) * eps
        return np.concatenate([v, Minv @ (fext - C @ v - K @ x
                                          - built.model.nonlinearity(x, v))])

    T = 2 * np.pi / pt.Omega
    sol = solve_ivp(rhs, (0.0, 60 * T), z0, rtol=1e-10, atol=1e-13,
                    dense_output=True)
    tt = np.linspace(58 * T, 60 * T, 800)
    amp_full = float(np.max(np.abs(ov @ sol.sol(tt)[:4])))
    assert pt.out_amp == pytest.approx(amp_full, rel=0.005)


def test_chart_radius_and_convergence_metric(duffing_frc_setup):
    _, sys_, sub, table, rom = duffing_frc_setup
    radius = chart_validity_radius(table)
    assert 0.1 < radius < 100.0
    t5 = table.truncated(5)
    obs = Observable.dof(0, 2)
    rom5 = ReducedOde(t5, sub, ratios=(1,), Fa=sys_.Fext, observable=obs)
    a = frc_continuation(rom, (1.95, 2.1), 0.012, StepControl(ds0=0.02))
    b = frc_continuation(rom5, (1.95, 2.1), 0.012, StepControl(ds0=0.02))
    assert convergence_metric(a, b) < 0.05


def test_continuation_stall_reports_last_point(duffing_frc_setup):
    from ssmkit.errors import ContinuationError
    _, _, _, _, rom = duffing_frc_setup
    # a corrector that may not iterate cannot converge off the trivial
    # start, so step halving must bottom out and report the last good point
    ctrl = StepControl(ds0=0.02, ds_min=1e-3, newton_max=0)
    with pytest.raises(ContinuationError) as err:
        frc_continuation(rom, (1.9, 2.1), 0.01, ctrl)
    assert err.value.last_point is not None
    assert err.value.last_point.Omega == pytest.approx(1.9, abs=1e-6)


def test_continuation_point_budget_warns(duffing_frc_setup):
    _, _, _, _, rom = duffing_frc_setup
    with pytest.warns(UserWarning, match="point budget"):
        frc_continuation(rom, (1.9, 2.3), 0.01,
                         StepControl(ds0=0.001, ds_max=0.001, max_points=5))


def test_curve_gap_requires_alignment(duffing_frc_setup):
    _, _, _, _, rom = duffing_frc_setup
    a = frc_continuation(rom, (1.9, 1.95), 0.005, StepControl(ds0=0.02))
    with pytest.raises(ValueError):
        curve_gap(a, a[:-1])


def test_downward_sweep_matches_upward(duffing_frc_setup):
    from ssmkit.analysis import _newton_fixed_omega
    _, _, _, _, rom = duffing_frc_setup
    up = frc_continuation(rom, (1.95, 2.05), 0.008, StepControl(ds0=0.02))
    down = frc_continuation(rom, (2.05, 1.95), 0.008, StepControl(ds0=0.02))
    # same branch traversed in either direction: polish the nearest point of
    # each run onto a common frequency and compare the fixed points
    om_probe = 1.97
    states = []
    for pts in (up, down):
        seed = min(pts, key=lambda p: abs(p.Omega - om_probe))
        u, ok = _newton_fixed_omega(rom, seed.u.copy(), om_probe, 0.008, 1e-13, 50)
        assert ok
        states.append(u)
    np.testing.assert_allclose(states[0], states[1], rtol=1e-9, atol=1e-14)


def test_rom_rotating_frame_drops_incommensurate_terms(duffing_frc_setup):
    built, sys_, sub, table, rom = duffing_frc_setup
    assert rom.dropped_norm == 0.0  # duffing: all retained terms commensurate
    assert rom.ratios == (1,)


def test_multi_pair_fixed_point_is_periodic_orbit():
    # 1:2 chain: a rotating-frame fixed point lifts to a reduced orbit with
    # p1 at the excitation frequency and p2 at twice it; integrating the
    # full reduced dynamics over one period must return to the start
    eps = 1e-3
    built = models.make_internally_resonant_chain(k2=0.3, beta_damp=0.004)
    built.model.forcing = ForcingSpec(built.forcing_amplitude, epsilon=eps)
    sys_ = lift_to_first_order(built.model)
    sub = solve_master_subspace(sys_, 4)
    table = compute_ssm(sys_, sub, 3)
    rom = ReducedOde(table, sub, ratios=(1, 2), Fa=sys_.Fext,
                     observable=Observable(built.observable_vector))
    om1 = sub.values[0].imag
    pts = frc_continuation(rom, (0.97 * om1, 1.0 * om1), eps, StepControl(ds0=0.02))
    pt = next(p for p in pts if p.stability == "stable" and np.max(p.rho) > 1e-4)
    q = pt.u[0::2] + 1j * pt.u[1::2]
    p0 = np.empty(4, dtype=complex)
    p0[0::2] = q
    p0[1::2] = np.conj(q)
    prov = make_corr_provider(sys_, sub, resonant_plus=[0])
    corr = prov(pt.Omega)
    T = 2 * np.pi / pt.Omega
    traj = integrate_rom(rom, p0, (0.0, 3 * T), Omega=pt.Omega, corr=corr,
                         epsilon=eps, rtol=1e-11, atol=1e-15)
    expect = p0 * np.exp(1j * np.array([1, -1, 2, -2]) * pt.Omega * traj.t[-1])
    np.testing.assert_allclose(traj.p[-1], expect, rtol=0,
                               atol=1e-7 * float(np.max(np.abs(p0))))


def test_blowup_guard_truncates():
    # unstable flutter-type rom: integration must stop at the chart guard
    built = models.make_pipe_conveying_fluid(n_modes=3, flow_velocity=6.0,
                                             nonlinear_gain=0.0)
    sys_ = lift_to_first_order(built.model)
    pool = solve_master_subspace(sys_, sys_.N)
    idx = [i for i, l in enumerate(pool.values) if l.real > 0]
    sub = solve_master_subspace(sys_, 2, select={"indices": idx})
    table = compute_ssm(sys_, sub, 1)
    rom = ReducedOde(table, sub, ratios=(1,))
    p0 = np.array([0.1, 0.1], dtype=complex)
    traj = integrate_rom(rom, p0, (0.0, 200.0), chart_radius=0.5)
    assert traj.truncated
    assert np.max(np.abs(traj.p[-1])) <= 5.0 * 0.5 * 1.05
