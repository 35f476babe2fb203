import numpy as np
import pytest

from ssmkit import lift_to_first_order, models, solve_master_subspace
from ssmkit.forced import (evaluate_tv_state, leading_order_residual,
                           solve_leading_nonautonomous)
from ssmkit.model import ForcingSpec


def forced_duffing(fa=0.5 + 0.0j):
    built = models.make_duffing(omega0=2.0, zeta=0.005, gamma=1.0)
    built.model.forcing = ForcingSpec(np.array([fa]), epsilon=0.01)
    sys_ = lift_to_first_order(built.model)
    sub = solve_master_subspace(sys_, 2)
    return sys_, sub


def test_zero_forcing_gives_zero_correction():
    sys_, sub = forced_duffing(fa=0.0)
    corr = solve_leading_nonautonomous(sys_, sub, 1.7)
    assert not np.any(corr.x0) and not np.any(corr.x0_bar)
    assert not np.any(corr.s0_plus) and not np.any(corr.s0_minus)


def test_off_resonance_matches_hand_solve():
    sys_, sub = forced_duffing()
    Omega = 1.2  # far from omega_d ~ 2
    corr = solve_leading_nonautonomous(sys_, sub, Omega)
    assert not np.any(corr.s0_plus)
    L = sys_.A.toarray() - 1j * Omega * sys_.B.toarray()
    x0_ref = np.linalg.solve(L, -sys_.Fext)
    np.testing.assert_allclose(corr.x0, x0_ref, rtol=1e-12)
    # and the physical content is the linear FRF of the oscillator
    X = 0.5 / (4.0 - Omega ** 2 + 2j * 0.005 * 2.0 * Omega)
    assert abs(corr.x0[0] - X) <= 1e-12 * abs(X)


def test_on_resonance_projects_forcing():
    sys_, sub = forced_duffing()
    Omega = float(sub.values[0].imag)
    corr = solve_leading_nonautonomous(sys_, sub, Omega)
    assert corr.resonant_plus == (0,)
    assert corr.s0_plus[0] != 0
    # orthogonality constraint on the bordered solve
    assert abs(np.vdot(sub.left[:, 0], sys_.B @ corr.x0)) <= 1e-10
    assert leading_order_residual(sys_, sub, corr) <= 1e-10


def test_residual_over_random_frequencies(oracle_chain):
    built, sys_, sub = oracle_chain
    built.model.forcing = ForcingSpec(built.forcing_amplitude, epsilon=0.01)
    sys_ = lift_to_first_order(built.model)
    rng = np.random.default_rng(12)
    fnorm = np.linalg.norm(sys_.Fext)
    for Omega in rng.uniform(0.1, 3.0, size=50):
        corr = solve_leading_nonautonomous(sys_, sub, float(Omega))
        assert leading_order_residual(sys_, sub, corr) <= 1e-9 * fnorm


def test_complex_forcing_residual():
    # the e^{-i phi} balance must use conj(Fa); a complex amplitude vector
    # makes the difference visible
    sys_, sub = forced_duffing(fa=0.3 + 0.4j)
    for Omega in (0.9, 2.0, 3.1):
        corr = solve_leading_nonautonomous(sys_, sub, Omega)
        assert leading_order_residual(sys_, sub, corr) <= 1e-10


def test_conjugacy_exploit_matches_direct():
    for fa in (0.5 + 0.0j, 0.3 + 0.4j):
        sys_, sub = forced_duffing(fa=fa)
        for Omega in (1.4, float(sub.values[0].imag)):
            direct = solve_leading_nonautonomous(sys_, sub, Omega)
            fast = solve_leading_nonautonomous(sys_, sub, Omega,
                                               exploit_conjugacy=True)
            np.testing.assert_allclose(fast.x0_bar, direct.x0_bar, rtol=0, atol=1e-12)
            np.testing.assert_allclose(fast.s0_minus, direct.s0_minus, rtol=0,
                                       atol=1e-12)


def test_conjugate_symmetry_of_minus_side():
    # real physical forcing: x0_bar = conj(x0), s0_minus = pair-swapped conj
    sys_, sub = forced_duffing(fa=0.5 + 0.0j)
    Omega = float(sub.values[0].imag)
    corr = solve_leading_nonautonomous(sys_, sub, Omega)
    np.testing.assert_allclose(corr.x0_bar, np.conj(corr.x0), atol=1e-12)
    swapped = np.conj(corr.s0_plus).reshape(-1, 2)[:, ::-1].reshape(-1)
    np.testing.assert_allclose(corr.s0_minus, swapped, atol=1e-12)


def test_designated_resonance_override():
    sys_, sub = forced_duffing()
    corr = solve_leading_nonautonomous(sys_, sub, 1.2, resonant_plus=[0])
    # forced projection even though 1.2 is far from the pair frequency
    assert corr.s0_plus[0] != 0
    assert leading_order_residual(sys_, sub, corr) <= 1e-10


def test_evaluate_tv_state(duffing, duffing_table3):
    _, sys_, sub = duffing
    fa = np.zeros(1, dtype=complex)
    fa[0] = 0.5
    Fext = np.concatenate([fa, np.zeros(1)])
    corr = solve_leading_nonautonomous(sys_, sub, 1.5, Fa=Fext)
    p = np.array([0.01, 0.01], dtype=complex)
    ti = evaluate_tv_state(duffing_table3, corr, p, 0.3, 0.0)
    np.testing.assert_array_equal(ti, duffing_table3.manifold_at(p))
    tv = evaluate_tv_state(duffing_table3, corr, np.zeros(2, dtype=complex), 0.3, 0.02)
    np.testing.assert_allclose(tv, 0.02 * corr.state_correction(0.3), atol=1e-16)


def test_invalid_frequency():
    sys_, sub = forced_duffing()
    with pytest.raises(ValueError):
        solve_leading_nonautonomous(sys_, sub, -1.0)
