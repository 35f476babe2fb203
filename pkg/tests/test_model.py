import numpy as np
import pytest

from ssmkit import lift_to_first_order, models, storage, validate_nonlinearity
from ssmkit.errors import ModelError
from ssmkit.model import ForcingSpec, SecondOrderModel


def cubic_scalar():
    return SecondOrderModel([[1.0]], [[0.02]], [[1.0]],
                            lambda x, v: np.array([x[0] ** 3]))


def test_lift_blocks_exact():
    sys_ = lift_to_first_order(cubic_scalar())
    np.testing.assert_array_equal(sys_.A.toarray(), [[-1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(sys_.B.toarray(), [[0.02, 1.0], [1.0, 0.0]])


def test_lift_force_sign_and_padding():
    sys_ = lift_to_first_order(cubic_scalar())
    np.testing.assert_array_equal(sys_.F(np.array([2.0, 0.0])), [-8.0, 0.0])


def test_lift_preserves_asymmetry():
    K = np.array([[1.0, 0.3], [-0.1, 2.0]])
    C = np.array([[0.1, 0.05], [-0.02, 0.1]])
    model = SecondOrderModel(np.eye(2), C, K, lambda x, v: x ** 3)
    sys_ = lift_to_first_order(model)
    np.testing.assert_array_equal(sys_.A.toarray()[:2, :2], -K)
    np.testing.assert_array_equal(sys_.B.toarray()[:2, :2], C)


def test_lifted_force_structure_random(oracle_chain):
    built, sys_, _ = oracle_chain
    rng = np.random.default_rng(5)
    for _ in range(5):
        z = rng.standard_normal(sys_.N)
        F = sys_.F(z)
        np.testing.assert_array_equal(F[sys_.n:], np.zeros(sys_.n))
        np.testing.assert_array_equal(
            F[:sys_.n], -built.model.nonlinearity(z[:sys_.n], z[sys_.n:]))


def test_validation_passes_for_cubic_quadratic():
    model = SecondOrderModel([[1.0]], [[0.01]], [[1.0]],
                             lambda x, v: np.array([x[0] ** 2 + x[0] ** 3]))
    report = validate_nonlinearity(model, probe_scale=0.5, tol=1e-8)
    assert report.passed
    assert report.linear_norm < 1e-8
    assert report.closure_residual < 1e-10


def test_validation_flags_higher_order_terms():
    model = SecondOrderModel([[1.0]], [[0.01]], [[1.0]],
                             lambda x, v: np.sin(x) - x, validate=False)
    report = validate_nonlinearity(model, probe_scale=1.0, tol=1e-4)
    assert not report.closure_ok
    assert report.closure_residual > 1e-3


def test_validation_rejects_linear_part():
    with pytest.raises(ModelError, match="linear"):
        SecondOrderModel([[1.0]], [[0.01]], [[1.0]], lambda x, v: x)


def test_validation_rejects_constant_force():
    with pytest.raises(ModelError, match="constant"):
        SecondOrderModel([[1.0]], [[0.01]], [[1.0]],
                         lambda x, v: np.array([1.0 + x[0] ** 2]))


def test_singular_mass_matrix_names_factorization():
    with pytest.raises(ModelError, match="factorization"):
        SecondOrderModel(np.zeros((2, 2)), np.eye(2), np.eye(2),
                         lambda x, v: x ** 3)


def test_forcing_spec():
    f = ForcingSpec(np.array([1.0 + 2.0j]), epsilon=0.5)
    assert f.amplitude.dtype == complex
    with pytest.raises(ModelError):
        ForcingSpec(np.array([1.0]), epsilon=-1.0)


def test_no_symmetrization_of_inputs():
    K = np.array([[2.0, 1.0], [0.0, 2.0]])
    model = SecondOrderModel(np.eye(2), 0.01 * np.eye(2), K,
                             lambda x, v: x ** 3)
    np.testing.assert_array_equal(model.K.toarray(), K)


def test_matrix_market_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    mat = rng.standard_normal((4, 4))
    mat[np.abs(mat) < 0.8] = 0.0
    storage.save_matrix(tmp_path / "m.mtx", mat)
    loaded = storage.load_matrix(tmp_path / "m.mtx")
    np.testing.assert_allclose(loaded.toarray(), mat, rtol=1e-15)


def test_vector_file_roundtrip(tmp_path):
    real = np.array([1.0, -2.5, 3.25])
    storage.save_vector(tmp_path / "r.txt", real)
    np.testing.assert_array_equal(storage.load_vector(tmp_path / "r.txt").real, real)
    cplx = np.array([1.0 + 2.0j, -0.5 - 0.25j])
    storage.save_vector(tmp_path / "c.txt", cplx)
    np.testing.assert_array_equal(storage.load_vector(tmp_path / "c.txt"), cplx)


def test_batch_evaluation_falls_back(oracle_chain):
    _, sys_, _ = oracle_chain
    rng = np.random.default_rng(7)
    pts = [rng.standard_normal(sys_.N) for _ in range(4)]
    serial = [sys_.F(z) for z in pts]
    batched = sys_.F_batch(pts)
    for a, b in zip(serial, batched):
        np.testing.assert_array_equal(a, b)
