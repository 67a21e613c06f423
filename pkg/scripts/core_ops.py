"""
Complex linear algebra on C^2: Pauli basis, Lindblad generators, superoperators
acting on vectorized 2x2 operators, matrix exponentials and Choi positivity.

Vectorization is column stacking everywhere: vec(X)[i + 2*j] = X[i, j], hence
vec(A X B) = (B^T kron A) vec(X).

Basis ordering is (|e>, |g>): sigma_z|e> = |e>, sigma_-|e> = |g>.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from errors import InvalidArgumentError

CONSTRUCTION_TOL = 1e-10
EVOLUTION_TOL = 1e-9
EIG_CONDITION_LIMIT = 1e8

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
P_PLUS = SIGMA_PLUS @ SIGMA_MINUS
PAULI_BASIS = (IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z)

EXCITED = np.array([1, 0], dtype=complex)
GROUND = np.array([0, 1], dtype=complex)

# tr X = <TRACE_FUNCTIONAL, vec X>
TRACE_FUNCTIONAL = np.array([1, 0, 0, 1], dtype=complex)


def dagger(a):
    """Adjoint over the last two axes; leading axes are batch axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def commutator(a, b):
    return a @ b - b @ a


def anticommutator(a, b):
    return a @ b + b @ a


def hermitian_part(a):
    return 0.5 * (a + dagger(a))


def is_hermitian(op, tol=CONSTRUCTION_TOL):
    op = np.asarray(op)
    return bool(np.all(np.abs(op - dagger(op)) <= tol))


def min_eigenvalue(a):
    """
    Smallest eigenvalue of (batches of) 2x2 Hermitian matrices, closed form.

    Args:
        a (np.ndarray): Array of shape (..., 2, 2), Hermitian.

    Returns:
        np.ndarray: Array of shape (...,).
    """
    half_trace = 0.5 * (a[..., 0, 0].real + a[..., 1, 1].real)
    half_gap = 0.5 * (a[..., 0, 0].real - a[..., 1, 1].real)
    return half_trace - np.sqrt(half_gap ** 2 + np.abs(a[..., 0, 1]) ** 2)


def validate_density(rho, normalized=True, tol=CONSTRUCTION_TOL):
    """
    Checks that rho is a state on C^2 (DensityOperator2).

    Args:
        rho (array-like): 2x2 complex matrix.
        normalized (bool): Require unit trace; the unnormalized variant only needs positivity.
        tol (float): Tolerance for Hermiticity, positivity and trace.

    Returns:
        np.ndarray: rho as a complex array.

    Raises:
        InvalidArgumentError: If any invariant fails.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise InvalidArgumentError(f"expected a 2x2 operator, got shape {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise InvalidArgumentError("operator has non-finite entries")
    if not is_hermitian(rho, tol):
        raise InvalidArgumentError("state is not Hermitian")
    if min_eigenvalue(rho) < -tol:
        raise InvalidArgumentError(f"state has a negative eigenvalue {min_eigenvalue(rho):.3e}")
    if normalized and abs(np.trace(rho) - 1.0) > tol:
        raise InvalidArgumentError(f"state trace is {np.trace(rho).real:.12f}, expected 1")
    return rho


def validate_state_vector(phi, normalized=True, tol=CONSTRUCTION_TOL):
    phi = np.asarray(phi, dtype=complex)
    if phi.shape != (2,):
        raise InvalidArgumentError(f"expected a 2-vector, got shape {phi.shape}")
    norm = np.linalg.norm(phi)
    if not np.isfinite(norm):
        raise InvalidArgumentError("state vector has non-finite norm")
    if normalized and abs(norm - 1.0) > tol:
        raise InvalidArgumentError(f"state vector norm is {norm:.12f}, expected 1")
    return phi


def projector(phi):
    """|phi><phi| for (batches of) vectors of shape (..., 2)."""
    phi = np.asarray(phi, dtype=complex)
    return phi[..., :, None] * np.conj(phi[..., None, :])


def maximally_mixed():
    return 0.5 * IDENTITY


def bloch_vector(rho):
    """(<sigma_x>, <sigma_y>, <sigma_z>) for (batches of) operators."""
    rho = np.asarray(rho, dtype=complex)
    return np.stack([np.einsum('ij,...ji->...', s, rho).real for s in (SIGMA_X, SIGMA_Y, SIGMA_Z)], axis=-1)


def from_bloch(r):
    r = np.asarray(r, dtype=float)
    return 0.5 * (IDENTITY + r[0] * SIGMA_X + r[1] * SIGMA_Y + r[2] * SIGMA_Z)


def vectorize(op):
    """Column stacking over the last two axes: (..., 2, 2) -> (..., 4)."""
    op = np.asarray(op)
    return np.swapaxes(op, -1, -2).reshape(op.shape[:-2] + (4,))


def unvectorize(vec):
    vec = np.asarray(vec)
    return np.swapaxes(vec.reshape(vec.shape[:-1] + (2, 2)), -1, -2)


@dataclass(frozen=True)
class Superoperator2:
    """Linear map on 2x2 operators, stored as a 4x4 matrix on column-stacked operators."""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=complex)
        if matrix.shape != (4, 4):
            raise InvalidArgumentError(f"superoperator matrix must be 4x4, got {matrix.shape}")
        object.__setattr__(self, 'matrix', matrix)

    def apply(self, tau):
        return unvectorize(vectorize(tau) @ self.matrix.T)

    def compose(self, other):
        """self after other."""
        return Superoperator2(self.matrix @ _matrix_of(other))

    def __matmul__(self, other):
        return self.compose(other)

    def __add__(self, other):
        return Superoperator2(self.matrix + _matrix_of(other))


@dataclass(frozen=True)
class ChannelSet:
    """
    Hamiltonian and channel operators at one grid time, batched over trajectories:
    hamiltonian (b, 2, 2), diffusive (b, d, 2, 2), counting (b, d', 2, 2).
    """

    hamiltonian: np.ndarray
    diffusive: np.ndarray
    counting: np.ndarray

    @property
    def channels(self):
        return np.concatenate([self.diffusive, self.counting], axis=-3)

    def repeat(self, times):
        """Each trajectory repeated `times` times along the batch axis."""
        return ChannelSet(
            hamiltonian=np.repeat(self.hamiltonian, times, axis=0),
            diffusive=np.repeat(self.diffusive, times, axis=0),
            counting=np.repeat(self.counting, times, axis=0)
        )


def _matrix_of(g):
    if isinstance(g, Superoperator2):
        return g.matrix
    return np.asarray(g, dtype=complex)


def superop_from_map(action):
    """
    Builds the matrix of a linear map from its action on the 4 matrix units.

    Args:
        action (callable): Maps a 2x2 operator to a 2x2 operator.

    Returns:
        Superoperator2: The represented map.
    """
    columns = []
    for k in range(4):
        unit = np.zeros(4, dtype=complex)
        unit[k] = 1.0
        columns.append(vectorize(action(unvectorize(unit))))
    return Superoperator2(np.stack(columns, axis=1))


def identity_superop():
    return Superoperator2(np.eye(4, dtype=complex))


def transpose_superop():
    return superop_from_map(lambda tau: tau.T)


def _as_channel_array(channels):
    if isinstance(channels, np.ndarray) and channels.ndim >= 3:
        return channels.astype(complex, copy=False)
    if len(channels) == 0:
        return np.zeros((0, 2, 2), dtype=complex)
    return np.stack([np.asarray(c, dtype=complex) for c in channels])


def _check_hamiltonian(hamiltonian):
    hamiltonian = np.asarray(hamiltonian, dtype=complex)
    if not is_hermitian(hamiltonian):
        raise InvalidArgumentError("Hamiltonian is not Hermitian within 1e-10")
    return hamiltonian


def liouvillian_apply(hamiltonian, channels, tau):
    """
    Applies -i[H, tau] - 1/2 sum {L_i^* L_i, tau} + sum L_i tau L_i^*.

    Args:
        hamiltonian (array-like): Hermitian 2x2 operator.
        channels (sequence): Channel operators L_i (may be empty).
        tau (array-like): 2x2 operator.

    Returns:
        np.ndarray: The generator applied to tau.

    Raises:
        InvalidArgumentError: If the Hamiltonian is not Hermitian.
    """
    hamiltonian = _check_hamiltonian(hamiltonian)
    tau = np.asarray(tau, dtype=complex)
    out = -1j * (hamiltonian @ tau - tau @ hamiltonian)
    for channel in _as_channel_array(channels):
        l_dag_l = dagger(channel) @ channel
        out = out + channel @ tau @ dagger(channel) - 0.5 * (l_dag_l @ tau + tau @ l_dag_l)
    return out


def superop_matrix(hamiltonian, channels):
    """Matrix of liouvillian_apply(hamiltonian, channels, .) in the column-stacking convention."""
    hamiltonian = _check_hamiltonian(hamiltonian)
    matrix = -1j * (np.kron(IDENTITY, hamiltonian) - np.kron(hamiltonian.T, IDENTITY))
    for channel in _as_channel_array(channels):
        l_dag_l = dagger(channel) @ channel
        matrix = matrix + np.kron(channel.conj(), channel)
        matrix = matrix - 0.5 * (np.kron(IDENTITY, l_dag_l) + np.kron(l_dag_l.T, IDENTITY))
    return Superoperator2(matrix)


def superop_exp(generator, t):
    """
    e^{G t} by eigendecomposition, falling back to scaling-and-squaring (scipy.linalg.expm)
    when the eigenvector matrix is ill conditioned.

    Args:
        generator (Superoperator2 | np.ndarray): 4x4 generator G.
        t (float): Time, t >= 0.

    Returns:
        Superoperator2: e^{G t}.

    Raises:
        InvalidArgumentError: If t < 0.
    """
    if t < 0:
        raise InvalidArgumentError(f"superop_exp needs t >= 0, got {t}")
    scaled = _matrix_of(generator) * t
    if t == 0:
        return identity_superop()
    eigenvalues, eigenvectors = np.linalg.eig(scaled)
    condition = np.linalg.cond(eigenvectors)
    if not np.isfinite(condition) or condition > EIG_CONDITION_LIMIT:
        return Superoperator2(scipy.linalg.expm(scaled))
    return Superoperator2((eigenvectors * np.exp(eigenvalues)) @ np.linalg.inv(eigenvectors))


def choi_matrix(g_map):
    """Choi matrix sum_ij E_ij kron Phi(E_ij); block (i, j) holds Phi(E_ij)."""
    matrix = _matrix_of(g_map)
    choi = np.zeros((4, 4), dtype=complex)
    for i in range(2):
        for j in range(2):
            choi[2 * i:2 * i + 2, 2 * j:2 * j + 2] = unvectorize(matrix[:, i + 2 * j])
    return choi


def choi_positivity(g_map):
    """
    Smallest eigenvalue of the Choi matrix; the map is completely positive iff it is >= -tolerance.

    Args:
        g_map (Superoperator2 | np.ndarray): The map.

    Returns:
        float: Minimum Choi eigenvalue.
    """
    return float(np.linalg.eigvalsh(hermitian_part(choi_matrix(g_map)))[0])
