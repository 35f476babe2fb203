import numpy as np
import pytest

from ssmkit import compute_ssm, lift_to_first_order, models, solve_master_subspace


@pytest.fixture(scope="session")
def duffing():
    built = models.make_duffing(omega0=2.0, zeta=0.005, gamma=1.0)
    sys_ = lift_to_first_order(built.model)
    sub = solve_master_subspace(sys_, 2)
    return built, sys_, sub


@pytest.fixture(scope="session")
def duffing_table3(duffing):
    _, sys_, sub = duffing
    return compute_ssm(sys_, sub, 3)


@pytest.fixture(scope="session")
def oracle_chain():
    built = models.make_spring_chain(
        3, k_lin=[1.0, 1.3, 0.8, 1.1], k2=[0.4, 0.2, 0.3, 0.1],
        k3=[0.5, 0.3, 0.2, 0.4], damping=(0.002, 0.004),
        c2=[0.05, 0.02, 0.04, 0.01], c3=[0.03, 0.06, 0.02, 0.05])
    sys_ = lift_to_first_order(built.model)
    sub = solve_master_subspace(sys_, 2)
    return built, sys_, sub


@pytest.fixture(scope="session")
def pipe_flutter():
    built = models.make_pipe_conveying_fluid(n_modes=4, flow_velocity=6.0,
                                             nonlinear_gain=40.0)
    sys_ = lift_to_first_order(built.model)
    pool = solve_master_subspace(sys_, sys_.N)
    idx = [i for i, lam in enumerate(pool.values) if lam.real > 0]
    sub = solve_master_subspace(sys_, 2, select={"indices": idx})
    return built, sys_, sub


def rel_table_gap(table_a, table_b):
    """Worst per-coefficient relative difference between two tables."""
    worst = 0.0
    scale_floor = 1e-30
    for m, w, r in table_b.items():
        scale = max(np.linalg.norm(w), np.linalg.norm(r), scale_floor)
        dw = np.linalg.norm(table_a.manifold(m) - w)
        dr = np.linalg.norm(table_a.reduced(m) - r)
        worst = max(worst, (dw + dr) / scale)
    return worst
