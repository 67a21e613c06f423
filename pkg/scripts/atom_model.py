"""
Two-level atom stimulated by a laser wave with phase diffusion and optional feedback
from the homodyne current of channel 1.

Channels: 1, 2 diffusive (homodyne or heterodyne detection), 3 counting and observed
(photo-counter), 4 counting lost light, 5 and 6 thermal bath. Channel operators are
L_j = conj(h_j) alpha_j sigma_- (j = 1, 2), L_k = beta_k sigma_- (k = 3, 4, 5),
L_6 = beta_6 sigma_+, with |beta_5|^2 = |beta_6|^2 = gamma * n_bar.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from core_ops import (
    P_PLUS, SIGMA_MINUS, SIGMA_PLUS, SIGMA_X, SIGMA_Z, ChannelSet, commutator, dagger,
    superop_from_map
)
from errors import ConfigError, InvalidArgumentError, SingularPhaseError, UnsupportedConfigurationError
from noise_paths import ATOM_LAYOUT

FEEDBACK_MODES = ('none', 'amplitude', 'phase', 'phase_simplified')
OSCILLATOR_MODES = ('homodyne', 'heterodyne')
RATE_SUM_TOL = 1e-10
SINGULAR_WAVE_TOL = 1e-12
DIFFUSIVE_LABELS = (1, 2)
COUNTING_LABELS = (3, 4, 5, 6)


def wrap_phase(phase):
    """Reduces a phase to (-pi, pi]; -pi maps to pi."""
    return np.pi - np.mod(np.pi - phase, 2.0 * np.pi)


@dataclass(frozen=True)
class AtomParams:
    nu0: float
    nu: float
    omega_r: float
    theta: float = 0.0
    k0: float = 0.0
    gamma: float = 1.0
    n_bar: float = 0.0
    alpha1: complex = 0j
    alpha2: complex = 0j
    beta3: complex = 0j
    beta4: complex = 0j
    epsilon1: float = 0.0
    epsilon2: float = 0.0

    def __post_init__(self):
        for name in ('alpha1', 'alpha2', 'beta3', 'beta4'):
            object.__setattr__(self, name, complex(getattr(self, name)))
        for name in ('nu0', 'nu', 'omega_r', 'theta', 'k0', 'gamma', 'n_bar', 'epsilon1', 'epsilon2'):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ConfigError(f'atom.{name}', f"must be finite, got {value}")
            object.__setattr__(self, name, value)
        for name in ('theta', 'epsilon1', 'epsilon2'):
            object.__setattr__(self, name, float(wrap_phase(getattr(self, name))))

        if self.nu <= 0:
            raise ConfigError('atom.nu', f"laser frequency must be > 0, got {self.nu}")
        if self.omega_r < 0:
            raise ConfigError('atom.omega_r', f"Rabi frequency must be >= 0, got {self.omega_r}")
        if self.gamma <= 0:
            raise ConfigError('atom.gamma', f"decay rate must be > 0, got {self.gamma}")
        if self.n_bar < 0:
            raise ConfigError('atom.n_bar', f"thermal occupation must be >= 0, got {self.n_bar}")
        rate_sum = self.channel_rate_sum
        if abs(rate_sum - self.gamma) > RATE_SUM_TOL:
            raise ConfigError(
                'atom.alpha1+alpha2+beta3+beta4',
                f"channel rate sum |alpha1|^2+|alpha2|^2+|beta3|^2+|beta4|^2 = {rate_sum:.12g} "
                f"must equal gamma = {self.gamma:.12g}")

    @classmethod
    def from_detuning(cls, delta_nu, omega_r, nu=1.0, **kwargs):
        return cls(nu0=nu + delta_nu, nu=nu, omega_r=omega_r, **kwargs)

    @property
    def delta_nu(self):
        return self.nu0 - self.nu

    @property
    def channel_rate_sum(self):
        return abs(self.alpha1) ** 2 + abs(self.alpha2) ** 2 + abs(self.beta3) ** 2 + abs(self.beta4) ** 2

    @property
    def thermal_rate(self):
        return self.gamma * self.n_bar

    def alpha(self, j):
        return {1: self.alpha1, 2: self.alpha2}[j]

    def epsilon(self, j):
        return {1: self.epsilon1, 2: self.epsilon2}[j]

    def homodyne_phase(self, j):
        """Effective homodyne phase theta_j = epsilon_j + arg alpha_j, so that g_j = |alpha_j| e^{-i theta_j}."""
        return float(wrap_phase(self.epsilon(j) + np.angle(self.alpha(j))))


@dataclass(frozen=True)
class FeedbackSpec:
    mode: str = 'none'
    k1: float = 0.0
    c: float = 0.0
    theta_fb: float = 0.0
    delay: float = 0.0
    detector_gain: float = 1.0
    detector_bandwidth: float = 0.0

    def __post_init__(self):
        if self.mode not in FEEDBACK_MODES:
            raise ConfigError('feedback.mode', f"must be one of {FEEDBACK_MODES}, got '{self.mode}'")
        for name in ('k1', 'c', 'theta_fb', 'delay', 'detector_gain', 'detector_bandwidth'):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ConfigError(f'feedback.{name}', f"must be finite, got {value}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, 'theta_fb', float(wrap_phase(self.theta_fb)))
        if self.delay < 0:
            raise ConfigError('feedback.delay', f"must be >= 0, got {self.delay}")
        if self.detector_bandwidth < 0:
            raise ConfigError('feedback.detector_bandwidth', f"must be >= 0, got {self.detector_bandwidth}")
        if self.mode == 'phase_simplified':
            if self.delay != 0:
                raise ConfigError('feedback.delay', "phase_simplified feedback requires delay = 0")
            if self.detector_bandwidth != 0:
                raise ConfigError('feedback.detector_bandwidth', "phase_simplified feedback requires bandwidth = 0")
            if self.detector_gain != 1:
                raise ConfigError('feedback.detector_gain', "phase_simplified feedback requires detector_gain = 1")

    @property
    def is_active(self):
        """True when the laser wave actually depends on the channel-1 current."""
        if self.mode == 'none' or self.detector_gain == 0:
            return False
        if self.mode == 'amplitude':
            return self.c != 0
        return self.k1 != 0

    @property
    def frame_gain(self):
        """Phase-feedback gain entering the rotating frame; zero without feedback."""
        return self.k1 if self.mode == 'phase_simplified' else 0.0


@dataclass(frozen=True)
class OscillatorSpec:
    mode1: str = 'homodyne'
    mode2: str = 'homodyne'
    nu1: float = 0.0
    nu2: float = 0.0
    k_neg1: float = 0.0
    k_neg2: float = 0.0

    def __post_init__(self):
        for name in ('mode1', 'mode2'):
            if getattr(self, name) not in OSCILLATOR_MODES:
                raise ConfigError(f'oscillator.{name}', f"must be one of {OSCILLATOR_MODES}, got '{getattr(self, name)}'")

    def mode(self, j):
        return {1: self.mode1, 2: self.mode2}[j]

    def frequency(self, j):
        return {1: self.nu1, 2: self.nu2}[j]

    def phase_noise(self, j):
        return {1: self.k_neg1, 2: self.k_neg2}[j]

    @property
    def all_homodyne(self):
        return self.mode1 == 'homodyne' and self.mode2 == 'homodyne'


def laser_wave(params, fb, t, b0, j1_delayed=None):
    """
    Laser wave f(t), vectorized over trajectories.

    Args:
        params (AtomParams): Atom and laser parameters.
        fb (FeedbackSpec): Feedback law.
        t (float): Time.
        b0 (float | np.ndarray): Laser phase noise B_0(t).
        j1_delayed (float | np.ndarray | None): Feedback current J_1(t - delay); None before the delay
            has elapsed, in which case the wave is the free wave f_0.

    Returns:
        np.ndarray: Complex f(t) with the shape of b0.
    """
    phase = params.theta + params.nu * t + params.k0 * np.asarray(b0, dtype=float)
    if fb.mode == 'none' or j1_delayed is None:
        return 0.5 * params.omega_r * np.exp(-1j * phase)
    j1 = np.asarray(j1_delayed, dtype=float)
    if fb.mode == 'amplitude':
        return 0.5 * np.exp(-1j * phase) * (params.omega_r + fb.c * np.exp(1j * fb.theta_fb) * j1)
    return 0.5 * params.omega_r * np.exp(-1j * (phase + fb.k1 * j1))


def feedback_current_update(prev_j1, db1, step, fb):
    """
    One step of J_1(t) = k int_0^t exp(-kappa (t - s) / 2) dB_1(s), exact for B_1 linear within the step.

    Args:
        prev_j1 (float | np.ndarray): J_1(t).
        db1 (float | np.ndarray): B_1(t + step) - B_1(t).
        step (float): Step size, > 0.
        fb (FeedbackSpec): Supplies detector gain k and bandwidth kappa.

    Returns:
        float | np.ndarray: J_1(t + step).
    """
    if step <= 0:
        raise InvalidArgumentError(f"step must be > 0, got {step}")
    x = 0.5 * fb.detector_bandwidth * step
    decay = np.exp(-x)
    # (1 - e^{-x}) / x, with its limit 1 at x = 0
    weight = -np.expm1(-x) / x if x > 0 else 1.0
    return decay * prev_j1 + fb.detector_gain * weight * db1


def feedback_current_path(path, fb):
    """J_1 on every grid time of a NoisePath, driven by the path's B_1."""
    db1 = path.wiener(1)
    j1 = np.zeros(path.grid.n_steps + 1)
    for n in range(path.grid.n_steps):
        j1[n + 1] = feedback_current_update(j1[n], db1[n], path.grid.step, fb)
    return j1


def delay_steps(fb, grid):
    steps = int(round(fb.delay / grid.step))
    if abs(steps * grid.step - fb.delay) > 1e-9 * max(1.0, fb.delay):
        raise InvalidArgumentError(f"feedback delay {fb.delay} is not a whole number of steps of {grid.step}")
    return steps


def hamiltonian(params, f):
    """H = (nu0/2) sigma_z + conj(f) sigma_- + f sigma_+ for (batches of) wave values f."""
    f = np.asarray(f, dtype=complex)
    h = np.zeros(f.shape + (2, 2), dtype=complex)
    h[..., 0, 0] = 0.5 * params.nu0
    h[..., 1, 1] = -0.5 * params.nu0
    h[..., 0, 1] = f
    h[..., 1, 0] = np.conj(f)
    return h


def oscillator_wave(params, osc, j, f, t, b_neg):
    """
    Local oscillator h_j(t), |h_j| = 1.

    Raises:
        SingularPhaseError: Homodyne detection with a vanishing laser wave.
    """
    epsilon = params.epsilon(j)
    if osc.mode(j) == 'homodyne':
        f = np.asarray(f, dtype=complex)
        modulus = np.abs(f)
        if np.any(modulus <= SINGULAR_WAVE_TOL * max(1.0, 0.5 * params.omega_r)):
            raise SingularPhaseError(f"homodyne oscillator {j} needs a nonzero laser wave, got |f| = {modulus.min():.3e}")
        return np.exp(-1j * epsilon) * f / modulus
    wave = np.exp(-1j * (epsilon + osc.frequency(j) * t + osc.phase_noise(j) * np.asarray(b_neg, dtype=float)))
    return np.broadcast_to(wave, np.broadcast_shapes(np.shape(f), np.shape(wave))).copy()


def counting_operators(params):
    """Constant counting operators keyed by channel label; zero operators are left out."""
    thermal = np.sqrt(params.thermal_rate)
    ops = {
        3: params.beta3 * SIGMA_MINUS,
        4: params.beta4 * SIGMA_MINUS,
        5: thermal * SIGMA_MINUS,
        6: thermal * SIGMA_PLUS,
    }
    return {label: op for label, op in ops.items() if np.any(op != 0)}


def default_intensities(params):
    """lambda_k = max(1, ||L_k||^2) per counting label 3..6."""
    norms = {3: abs(params.beta3) ** 2, 4: abs(params.beta4) ** 2, 5: params.thermal_rate, 6: params.thermal_rate}
    return np.array([max(1.0, norms[label]) for label in COUNTING_LABELS])


def channel_operators(params, osc, fb, path, t, j1_history=None):
    """
    H(t) and L_1..L_6 at grid time t of a NoisePath (reference-measure drivers).

    Args:
        params (AtomParams): Atom and laser parameters.
        osc (OscillatorSpec): Local oscillators of channels 1, 2.
        fb (FeedbackSpec): Feedback law.
        path (NoisePath): Driving noises.
        t (float): Grid time.
        j1_history (np.ndarray | None): J_1 on the grid; computed from the path when omitted.

    Returns:
        tuple: (H, [L_1, ..., L_6]); L_5, L_6 are zero when n_bar = 0.
    """
    n = path.grid.index_of(t)
    cumulative = np.vstack([np.zeros((1, len(path.layout.wiener_labels))), np.cumsum(path.wiener_increments, axis=0)])
    b = {label: cumulative[n, path.layout.wiener_index(label)] for label in path.layout.wiener_labels}

    j1_delayed = None
    if fb.mode != 'none':
        lag = delay_steps(fb, path.grid)
        if n >= lag:
            if j1_history is None:
                j1_history = feedback_current_path(path, fb)
            j1_delayed = j1_history[n - lag]

    f = laser_wave(params, fb, t, b[0], j1_delayed)
    h = hamiltonian(params, f)
    channels = []
    for j in DIFFUSIVE_LABELS:
        wave = oscillator_wave(params, osc, j, f, t, b[-j])
        channels.append(np.conj(wave) * params.alpha(j) * SIGMA_MINUS)
    ops = counting_operators(params)
    for label in COUNTING_LABELS:
        channels.append(ops.get(label, np.zeros((2, 2), dtype=complex)))
    return h, channels


def rotating_frame(u):
    """Unitary e^{(i/2) u sigma_z} for (batches of) phases u."""
    u = np.asarray(u, dtype=float)
    frame = np.zeros(u.shape + (2, 2), dtype=complex)
    frame[..., 0, 0] = np.exp(0.5j * u)
    frame[..., 1, 1] = np.exp(-0.5j * u)
    return frame


def to_rotating_frame(sigma, u):
    frame = rotating_frame(u)
    return frame @ sigma @ dagger(frame)


def from_rotating_frame(xi, u):
    frame = rotating_frame(u)
    return dagger(frame) @ xi @ frame


def frame_phase(params, fb, t, b0, b1):
    """u(t) = theta + nu t + k0 B_0(t) + k1 B_1(t)."""
    return params.theta + params.nu * t + params.k0 * np.asarray(b0) + fb.frame_gain * np.asarray(b1)


@dataclass(frozen=True)
class FrameGenerator:
    """Deterministic generator and frame diffusion maps of the homodyne rotating frame."""

    lhat: object
    d0: object
    d1: object
    d2: object


def _check_frame_configuration(fb, homodyne):
    if not homodyne:
        raise UnsupportedConfigurationError("rotating-frame generator is random for heterodyne detection")
    if fb.mode not in ('none', 'phase_simplified'):
        raise UnsupportedConfigurationError(
            f"rotating-frame generator needs phase_simplified feedback or none, got '{fb.mode}'")


def rotating_frame_generator(params, fb, homodyne=True):
    """
    Generator of the mean rotating-frame state and the diffusion maps D_0, D_1, D_2.

    Args:
        params (AtomParams): Atom and laser parameters.
        fb (FeedbackSpec): Feedback law, mode phase_simplified or none.
        homodyne (bool): Both diffusive channels homodyne.

    Returns:
        FrameGenerator: Superoperator2 fields lhat, d0, d1, d2.

    Raises:
        UnsupportedConfigurationError: Heterodyne detection or a feedback law without a deterministic frame.
    """
    _check_frame_configuration(fb, homodyne)
    k0 = params.k0
    k1 = fb.frame_gain
    g1 = abs(params.alpha1) * np.exp(-1j * params.homodyne_phase(1))
    g2 = abs(params.alpha2) * np.exp(-1j * params.homodyne_phase(2))
    h_frame = 0.5 * (params.delta_nu * SIGMA_Z + params.omega_r * SIGMA_X)
    gamma = params.gamma
    thermal = params.thermal_rate

    def lhat_action(tau):
        out = -1j * commutator(h_frame, tau)
        out = out + gamma * (SIGMA_MINUS @ tau @ SIGMA_PLUS - 0.5 * (P_PLUS @ tau + tau @ P_PLUS))
        out = out + 0.25 * (k0 ** 2 + k1 ** 2) * (SIGMA_Z @ tau @ SIGMA_Z - tau)
        out = out + 1j * k1 * (g1 * P_PLUS @ tau @ SIGMA_PLUS - np.conj(g1) * SIGMA_MINUS @ tau @ P_PLUS)
        out = out + thermal * (SIGMA_MINUS @ tau @ SIGMA_PLUS + SIGMA_PLUS @ tau @ SIGMA_MINUS - tau)
        return out

    return FrameGenerator(
        lhat=superop_from_map(lhat_action),
        d0=superop_from_map(lambda tau: 0.5j * k0 * commutator(SIGMA_Z, tau)),
        d1=superop_from_map(
            lambda tau: np.conj(g1) * SIGMA_MINUS @ tau + g1 * tau @ SIGMA_PLUS + 0.5j * k1 * commutator(SIGMA_Z, tau)),
        d2=superop_from_map(lambda tau: np.conj(g2) * SIGMA_MINUS @ tau + g2 * tau @ SIGMA_PLUS)
    )


def frame_lindblad_terms(params, fb):
    """
    Lindblad data (H_hat, channels) of the rotating-frame generator:
    sqrt(gamma - |alpha1|^2) sigma_-, K, (k0/2) sigma_z and the thermal pair.
    """
    _check_frame_configuration(fb, True)
    k1 = fb.frame_gain
    a1 = abs(params.alpha1)
    theta1 = params.homodyne_phase(1)
    h_hat = 0.5 * (params.delta_nu * SIGMA_Z + params.omega_r * SIGMA_X) + 0.25 * k1 * a1 * (
        np.exp(-1j * theta1) * SIGMA_PLUS + np.exp(1j * theta1) * SIGMA_MINUS)
    k_op = 0.5j * k1 * SIGMA_Z + a1 * np.exp(1j * theta1) * SIGMA_MINUS
    thermal = np.sqrt(params.thermal_rate)
    channels = [
        np.sqrt(max(params.gamma - a1 ** 2, 0.0)) * SIGMA_MINUS,
        k_op,
        0.5 * params.k0 * SIGMA_Z,
        thermal * SIGMA_MINUS,
        thermal * SIGMA_PLUS,
    ]
    return h_hat, channels


@dataclass
class AtomState:
    """Trajectory-local feedback memory: cumulative Wiener values and J_1 on the grid."""

    cumulative: np.ndarray
    j1: np.ndarray
    lag: int
    step: float


@dataclass
class AtomModel:
    """
    The atom as seen by the trajectory engine: coefficient processes driven by the
    channel layout (-2..2 Wiener, 3..6 counting).
    """

    params: AtomParams
    feedback: FeedbackSpec = field(default_factory=FeedbackSpec)
    oscillators: OscillatorSpec = field(default_factory=OscillatorSpec)
    intensities: np.ndarray = None

    def __post_init__(self):
        self.layout = ATOM_LAYOUT
        self.diffusive_labels = DIFFUSIVE_LABELS
        ops = counting_operators(self.params)
        self.counting_labels = tuple(label for label in COUNTING_LABELS if label in ops)
        if self.counting_labels:
            self._counting = np.stack([ops[label] for label in self.counting_labels])
        else:
            self._counting = np.zeros((0, 2, 2), dtype=complex)
        if self.intensities is None:
            self.intensities = default_intensities(self.params)
        self.intensities = np.asarray(self.intensities, dtype=float)
        if self.intensities.shape != (len(COUNTING_LABELS),) or np.any(self.intensities <= 0):
            raise InvalidArgumentError(f"need 4 positive reference intensities, got {self.intensities}")
        self.feedback_labels = (1,) if self.feedback.is_active else ()
        self._index = {label: self.layout.wiener_index(label) for label in self.layout.wiener_labels}
        dropped = sorted(set(COUNTING_LABELS) - set(self.counting_labels))
        if dropped:
            logging.debug(f"Counting channels {dropped} have zero operators and are left out")

    def reference_intensities(self):
        return self.intensities

    def counting_bounds(self):
        """sup_t ||L_k(t)||^2 per active counting channel."""
        return np.array([np.linalg.norm(op, 2) ** 2 for op in self._counting])

    def begin(self, batch_size, grid):
        return AtomState(
            cumulative=np.zeros((batch_size, len(self.layout.wiener_labels))),
            j1=np.zeros((batch_size, grid.n_steps + 1)),
            lag=delay_steps(self.feedback, grid),
            step=grid.step
        )

    def coefficients(self, state, n):
        t = n * state.step
        b = state.cumulative
        j1_delayed = state.j1[:, n - state.lag] if self.feedback.mode != 'none' and n >= state.lag else None
        f = laser_wave(self.params, self.feedback, t, b[:, self._index[0]], j1_delayed)
        diffusive = np.empty((b.shape[0], len(self.diffusive_labels), 2, 2), dtype=complex)
        for column, j in enumerate(self.diffusive_labels):
            wave = oscillator_wave(self.params, self.oscillators, j, f, t, b[:, self._index[-j]])
            diffusive[:, column] = (np.conj(wave) * self.params.alpha(j))[:, None, None] * SIGMA_MINUS
        return ChannelSet(
            hamiltonian=hamiltonian(self.params, f),
            diffusive=diffusive,
            counting=np.broadcast_to(self._counting, (b.shape[0],) + self._counting.shape)
        )

    def advance(self, state, n, db):
        """Feeds the realized increments of step n (all Wiener labels) into the feedback memory."""
        state.cumulative += db
        state.j1[:, n + 1] = feedback_current_update(state.j1[:, n], db[:, self._index[1]], state.step, self.feedback)
