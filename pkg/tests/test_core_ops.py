import numpy as np
import pytest

from conftest import random_hermitian, random_state
from core_ops import (
    IDENTITY, SIGMA_MINUS, SIGMA_X, SIGMA_Z, TRACE_FUNCTIONAL, Superoperator2, bloch_vector, choi_positivity,
    from_bloch, identity_superop, liouvillian_apply, min_eigenvalue, superop_exp, superop_from_map,
    superop_matrix, transpose_superop, unvectorize, validate_density, vectorize
)
from errors import InvalidArgumentError


def _channels(rng):
    return [0.7 * SIGMA_MINUS, random_hermitian(rng, 0.3), 0.2 * SIGMA_Z]


def test_vectorize_stacks_columns():
    x = np.array([[1, 2], [3, 4]], dtype=complex)
    assert np.array_equal(vectorize(x), [1, 3, 2, 4])
    assert np.array_equal(unvectorize(vectorize(x)), x)


def test_vectorized_product_rule(rng):
    a, x, b = (random_hermitian(rng) + 1j * random_hermitian(rng) for _ in range(3))
    assert np.allclose(vectorize(a @ x @ b), np.kron(b.T, a) @ vectorize(x), atol=1e-12)


def test_superop_matrix_matches_action(rng):
    h = random_hermitian(rng)
    channels = _channels(rng)
    tau = random_hermitian(rng) + 1j * random_hermitian(rng)
    matrix = superop_matrix(h, channels)
    assert np.allclose(matrix.apply(tau), liouvillian_apply(h, channels, tau), atol=1e-12)
    assert np.allclose(superop_from_map(lambda t: liouvillian_apply(h, channels, t)).matrix, matrix.matrix, atol=1e-12)


def test_generator_is_trace_preserving(rng):
    matrix = superop_matrix(random_hermitian(rng), _channels(rng)).matrix
    assert np.allclose(TRACE_FUNCTIONAL @ matrix, 0.0, atol=1e-12)


def test_non_hermitian_hamiltonian_is_rejected():
    with pytest.raises(InvalidArgumentError):
        liouvillian_apply(SIGMA_MINUS, [], IDENTITY)


def test_exp_at_zero_is_identity(rng):
    generator = superop_matrix(random_hermitian(rng), _channels(rng))
    assert np.allclose(superop_exp(generator, 0.0).matrix, identity_superop().matrix)


def test_exp_semigroup_and_negative_time(rng):
    generator = superop_matrix(random_hermitian(rng), _channels(rng))
    composed = superop_exp(generator, 0.4) @ superop_exp(generator, 0.9)
    assert np.allclose(composed.matrix, superop_exp(generator, 1.3).matrix, atol=1e-10)
    with pytest.raises(InvalidArgumentError):
        superop_exp(generator, -0.1)


def test_exp_of_defective_generator_uses_fallback():
    nilpotent = np.zeros((4, 4), dtype=complex)
    nilpotent[0, 1] = 1.0
    assert np.allclose(superop_exp(nilpotent, 2.0).matrix, np.eye(4) + 2.0 * nilpotent, atol=1e-12)


def test_lindblad_semigroup_is_completely_positive(rng):
    generator = superop_matrix(random_hermitian(rng), _channels(rng))
    for t in (0.1, 1.0, 10.0):
        assert choi_positivity(superop_exp(generator, t)) >= -1e-9


def test_transpose_is_not_completely_positive():
    assert choi_positivity(transpose_superop()) == pytest.approx(-1.0)


def test_min_eigenvalue_closed_form(rng):
    ops = np.stack([random_hermitian(rng) for _ in range(20)])
    assert np.allclose(min_eigenvalue(ops), np.linalg.eigvalsh(ops)[:, 0], atol=1e-12)


def test_bloch_round_trip(rng):
    rho = random_state(rng)
    assert np.allclose(from_bloch(bloch_vector(rho)), rho, atol=1e-12)
    assert np.allclose(bloch_vector(0.5 * (IDENTITY + SIGMA_X)), [1.0, 0.0, 0.0])


@pytest.mark.parametrize('rho', [
    np.diag([1.2, -0.2]),
    np.array([[0.5, 0.5j], [0.5j, 0.5]]),
    np.diag([0.3, 0.3]),
    np.eye(3) / 3,
])
def test_validate_density_rejects(rho):
    with pytest.raises(InvalidArgumentError):
        validate_density(rho)


def test_superoperator_shape_is_checked():
    with pytest.raises(InvalidArgumentError):
        Superoperator2(np.eye(3))
