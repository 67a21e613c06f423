"""
Closed-form homodyne spectrum, elastic weight and Mandel Q of the atom under phase feedback.

The mean rotating-frame state is a Bloch vector x = (<sigma_x>, <sigma_y>, <sigma_z>) with
dx/dt = -A x - u, so every stationary quantity reduces to 3x3 linear algebra on A.
Frequencies and rates are in the units of gamma.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from core_ops import (
    EIG_CONDITION_LIMIT, IDENTITY, PAULI_BASIS, SIGMA_MINUS, SIGMA_PLUS, Superoperator2, from_bloch,
    superop_exp, validate_density
)
from atom_model import rotating_frame_generator
from errors import DegenerateSpectrumError, InvalidArgumentError, SingularSystemError, UnsupportedConfigurationError

SINGULAR_CONDITION = 1e12
SERIES_CUTOFF = 1e-4


@dataclass(frozen=True)
class BlochSystem:
    a: np.ndarray
    u: np.ndarray
    d: np.ndarray
    gamma_total: float
    v: float
    condition: float

    @property
    def stationary_current(self):
        """n_inf / |alpha_2|: the stationary homodyne mean of channel 2 per unit amplitude."""
        return self.v


def _solve(matrix, rhs):
    try:
        return np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularSystemError(f"singular Bloch system: {e}") from None


def build_bloch(params, fb):
    """
    Assembles the drift matrix A and offset u of the mean Bloch vector, and solves A d + u = 0.

    Args:
        params (AtomParams): Atom parameters; channel 1 homodyne with phase theta_1.
        fb (FeedbackSpec): Feedback law, mode phase_simplified or none.

    Returns:
        BlochSystem: A, u, stationary vector d, Gamma, v and the condition number of A.

    Raises:
        UnsupportedConfigurationError: For amplitude or full phase feedback.
        SingularSystemError: If A is singular.
    """
    if fb.mode not in ('none', 'phase_simplified'):
        raise UnsupportedConfigurationError(f"no closed form for feedback mode '{fb.mode}'")
    k1 = fb.frame_gain
    a1 = abs(params.alpha1)
    theta1 = params.homodyne_phase(1)
    theta2 = params.homodyne_phase(2)
    thermal = (2.0 * params.n_bar + 1.0) * params.gamma
    gamma_total = thermal + params.k0 ** 2 + k1 ** 2
    fb_sin = k1 * a1 * np.sin(theta1)
    fb_cos = k1 * a1 * np.cos(theta1)

    a = np.array([
        [gamma_total / 2.0, params.delta_nu, -fb_sin],
        [-params.delta_nu, gamma_total / 2.0, params.omega_r + fb_cos],
        [0.0, -params.omega_r, thermal],
    ])
    u = np.array([-fb_sin, fb_cos, params.gamma])
    condition = float(np.linalg.cond(a))
    if not np.isfinite(condition) or condition > SINGULAR_CONDITION:
        raise SingularSystemError(f"Bloch matrix is singular (condition number {condition:.3e})")
    d = _solve(a, -u)
    if params.n_bar > 0:
        logging.warning(f"n_bar = {params.n_bar}: closed forms are extrapolated to a thermal bath")
    v = float(np.cos(theta2) * d[0] + np.sin(theta2) * d[1])
    logging.debug(f"Bloch system: d={d.tolist()}, Gamma={gamma_total:.6g}, cond(A)={condition:.3e}")
    return BlochSystem(a=a, u=u, d=d, gamma_total=float(gamma_total), v=v, condition=condition)


def spectrum_inelastic(bs, params, mu, theta2=None):
    """
    Inelastic part of the homodyne spectrum of channel 2; 1 is the shot-noise level.

    Args:
        bs (BlochSystem): From build_bloch.
        params (AtomParams): Supplies |alpha_2| and, unless overridden, theta_2.
        mu (float | array-like): Frequencies.
        theta2 (float): Homodyne phase of channel 2 to use instead of the configured one.

    Returns:
        float | np.ndarray: S_inel(mu), same shape as mu.

    Raises:
        SingularSystemError: If A^2 + mu^2 is singular.
    """
    theta2 = params.homodyne_phase(2) if theta2 is None else theta2
    c, s = np.cos(theta2), np.sin(theta2)
    d = bs.d
    v = c * d[0] + s * d[1]
    w = bs.a @ np.array([c * (1.0 + d[2]), s * (1.0 + d[2]), -v]) + v * bs.u

    mu_arr = np.asarray(mu, dtype=float)
    squares = np.atleast_1d(mu_arr) ** 2
    resolvent = (bs.a @ bs.a)[None] + squares[:, None, None] * np.eye(3)[None]
    y = _solve(resolvent, np.broadcast_to(w, (squares.size, 3))[..., None])[..., 0]
    values = 1.0 + 2.0 * abs(params.alpha2) ** 2 * (y @ np.array([c, s, 0.0]))
    return float(values[0]) if mu_arr.ndim == 0 else values.reshape(mu_arr.shape)


def spectrum_elastic_weight(bs, params):
    """s_el = 2 pi |alpha_2|^2 v^2, the weight of the delta line at mu = 0."""
    return float(2.0 * np.pi * abs(params.alpha2) ** 2 * bs.v ** 2)


def heisenberg_product(bs, params, mu):
    theta2 = params.homodyne_phase(2)
    return (spectrum_inelastic(bs, params, mu, theta2)
            * spectrum_inelastic(bs, params, mu, theta2 + 0.5 * np.pi))


def _relaxation_shape(z):
    """(1 - e^{-z}) / z - 1, with its Taylor series near z = 0."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < SERIES_CUTOFF
    safe = np.where(small, 1.0, z)
    series = -z / 2.0 + z ** 2 / 6.0 - z ** 3 / 24.0
    return np.where(small, series, -np.expm1(-safe) / safe - 1.0)


def relaxation_matrix(a, t):
    """(1 - e^{-A t}) (A t)^{-1} - 1 by eigendecomposition; scipy expm when A is nearly defective."""
    eigenvalues, eigenvectors = np.linalg.eig(a)
    condition = np.linalg.cond(eigenvectors)
    if not np.isfinite(condition) or condition > EIG_CONDITION_LIMIT:
        at = a * t
        return (np.eye(3) - scipy.linalg.expm(-at)) @ np.linalg.inv(at) - np.eye(3)
    shaped = (eigenvectors * _relaxation_shape(eigenvalues * t)) @ np.linalg.inv(eigenvectors)
    return shaped.real


def counting_rate(bs, beta3_sq):
    """Stationary photon-counting rate of channel 3, M_3(t) / t."""
    return 0.5 * beta3_sq * (1.0 + bs.d[2])


def mandel_q3(bs, beta3_sq, t=np.inf):
    """
    Mandel Q of the photon counter over a window of length t in the stationary regime.

    Args:
        bs (BlochSystem): From build_bloch.
        beta3_sq (float): |beta_3|^2.
        t (float): Window length, > 0 or np.inf.

    Returns:
        tuple: (Q_3, counting rate).

    Raises:
        InvalidArgumentError: If t <= 0.
    """
    if not t > 0:
        raise InvalidArgumentError(f"mandel_q3 needs t > 0 or infinity, got {t}")
    x = _solve(bs.a, np.array([bs.d[0], bs.d[1], 1.0 + bs.d[2]]))
    if np.isinf(t):
        q = -beta3_sq * x[2]
    else:
        q = beta3_sq * (relaxation_matrix(bs.a, t) @ x)[2]
    return float(q), float(counting_rate(bs, beta3_sq))


def mandel_q3_series(bs, beta3_sq, t_grid):
    return np.array([mandel_q3(bs, beta3_sq, t)[0] for t in np.asarray(t_grid, dtype=float)])


def laser_spectrum(params):
    """
    Spectrum of the phase-diffusing laser wave, a Lorentzian of width k0^2 centred at nu.

    Raises:
        DegenerateSpectrumError: If k0 = 0 (a delta line).
    """
    if params.k0 == 0:
        raise DegenerateSpectrumError("laser spectrum with k0 = 0 is a delta line at nu")
    omega_sq, k0_sq, nu = params.omega_r ** 2, params.k0 ** 2, params.nu

    def spectrum(mu):
        mu = np.asarray(mu, dtype=float)
        return omega_sq * k0_sq / (k0_sq ** 2 + 4.0 * (mu - nu) ** 2)

    return spectrum


def stationary_state(bs):
    return from_bloch(bs.d)


def _homodyne_trace(params, eta):
    """2 |alpha_2| Re(e^{-i theta_2} tr(sigma_+ eta))."""
    return 2.0 * abs(params.alpha2) * np.real(np.exp(-1j * params.homodyne_phase(2)) * np.trace(SIGMA_PLUS @ eta))


def mean_current(params, fb, rho0, t):
    """
    n_2(t): mean homodyne current of channel 2 starting from the rotating-frame state rho0.

    Args:
        params (AtomParams): Atom parameters.
        fb (FeedbackSpec): Feedback law (phase_simplified or none).
        rho0 (array-like): Initial state in the rotating frame.
        t (float | array-like): Times >= 0.

    Returns:
        float | np.ndarray: n_2 at each time.
    """
    generator = rotating_frame_generator(params, fb).lhat
    rho0 = validate_density(rho0)
    times = np.asarray(t, dtype=float)
    values = np.array([_homodyne_trace(params, superop_exp(generator, s).apply(rho0))
                       for s in np.atleast_1d(times)])
    return float(values[0]) if times.ndim == 0 else values.reshape(times.shape)


def correlation_d2(params, fb, rho0, s, t, n_inf=0.0):
    """
    Two-time function d_2(t, s) of channel 2 for s < t, zero for t <= s:
    2 |alpha_2|^2 Re tr{e^{-i theta_2} sigma_+ e^{L(t-s)}[e^{i theta_2} sigma_- eta(s) + h.c.]} - n_inf n_2(t).
    """
    if t <= s:
        return 0.0
    generator = rotating_frame_generator(params, fb).lhat
    rho0 = validate_density(rho0)
    eta_s = superop_exp(generator, s).apply(rho0)
    kicked = np.exp(1j * params.homodyne_phase(2)) * SIGMA_MINUS @ eta_s
    kicked = kicked + kicked.conj().T
    evolved = superop_exp(generator, t - s).apply(kicked)
    value = abs(params.alpha2) * _homodyne_trace(params, evolved)
    if n_inf:
        value -= n_inf * _homodyne_trace(params, superop_exp(generator, t).apply(rho0))
    return float(value)


def bloch_from_generator(generator):
    """
    Reads A and u off a trace-preserving generator G on 2x2 operators:
    -A_ab = tr(sigma_a G[sigma_b]) / 2 and -u_a = tr(sigma_a G[1]) / 2.
    """
    if not isinstance(generator, Superoperator2):
        generator = Superoperator2(generator)
    paulis = PAULI_BASIS[1:]
    a = np.empty((3, 3))
    u = np.empty(3)
    for row, sigma_a in enumerate(paulis):
        for col, sigma_b in enumerate(paulis):
            a[row, col] = -0.5 * np.trace(sigma_a @ generator.apply(sigma_b)).real
        u[row] = -0.5 * np.trace(sigma_a @ generator.apply(IDENTITY)).real
    return a, u
