"""
Output processes and physical statistics.

Every estimator here reduces an ensemble (ensemble.SimulatedEnsemble, a list of
TrajectoryRecords, ...) to weighted moments: under the reference measure each trajectory
counts with its weight p(T), under the physical measure with weight 1. Standard errors
come from the sample covariance of the per-trajectory features, by the delta method
for nonlinear statistics.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from atom_model import feedback_current_update
from core_ops import dagger, validate_density
from ensemble import SimulatedEnsemble, as_ensemble
from errors import ConfigError, InvalidArgumentError, PreconditionViolatedError, UndefinedQError
from noise_paths import MASK64
from trajectory_engine import linear_sme_step, reference_steps

RESPONSES = ('dirac', 'exp_filter', 'kernel')
NOISES = ('none', 'white')
TIME_TOL = 1e-9


@dataclass(frozen=True)
class DiffusiveOutput:
    """
    Current J(t) read from diffusive channel `channel`. 'dirac' reports the raw increments
    dB(t_n); 'exp_filter' the detector current k int exp(-kappa (t-s)/2) dB(s); 'kernel' the
    convolution with kernel[i] = a(i * step), one sample per grid step.
    """

    channel: int
    response: str = 'dirac'
    detector_gain: float = 1.0
    detector_bandwidth: float = 0.0
    kernel: np.ndarray = field(default=None, compare=False)
    noise: str = 'none'
    noise_amplitude: float = 0.0

    def __post_init__(self):
        if self.response not in RESPONSES:
            raise ConfigError('outputs.response', f"must be one of {RESPONSES}, got '{self.response}'")
        if self.noise not in NOISES:
            raise ConfigError('outputs.noise', f"must be one of {NOISES}, got '{self.noise}'")
        if self.detector_bandwidth < 0:
            raise ConfigError('outputs.detector_bandwidth', f"must be >= 0, got {self.detector_bandwidth}")
        if self.noise_amplitude < 0:
            raise ConfigError('outputs.noise_amplitude', f"must be >= 0, got {self.noise_amplitude}")
        if self.response == 'kernel':
            if self.kernel is None:
                raise ConfigError('outputs.kernel', "kernel response needs kernel samples")
            object.__setattr__(self, 'kernel', np.asarray(self.kernel, dtype=float))


@dataclass(frozen=True)
class CountingOutput:
    """I(t) from counting channel `channel`: the count N(t), or its convolution with kernel samples."""

    channel: int
    kernel: np.ndarray = field(default=None, compare=False)
    noise: str = 'none'

    def __post_init__(self):
        if self.noise != 'none':
            raise ConfigError('outputs.counting_noise', f"counting outputs support noise 'none' only, got '{self.noise}'")
        if self.kernel is not None:
            object.__setattr__(self, 'kernel', np.asarray(self.kernel, dtype=float))


@dataclass(frozen=True)
class OutputSpec:
    diffusive: tuple = (DiffusiveOutput(1), DiffusiveOutput(2))
    counting: tuple = (CountingOutput(3),)
    noise_seed: int = 0

    def __post_init__(self):
        if self.noise_seed < 0:
            raise ConfigError('outputs.noise_seed', f"must be >= 0, got {self.noise_seed}")


@dataclass
class OutputRecord:
    """
    Outputs keyed by channel label. Currents of 'dirac' outputs are per-step increments
    (b, n_steps); every other output is sampled on the grid times (b, n_steps + 1).
    """

    times: np.ndarray
    currents: dict
    counts: dict
    increment_form: dict


@dataclass(frozen=True)
class SpectrumEstimate:
    mu_grid: np.ndarray
    s_inel: np.ndarray
    stderr: np.ndarray
    s_total: np.ndarray
    s_el_coefficient: float
    s_el_stderr: float
    T: float
    n_traj: int
    mean_weight: float


@dataclass(frozen=True)
class QEstimate:
    t_grid: np.ndarray
    q_values: np.ndarray
    m_rate: np.ndarray
    stderr: np.ndarray
    mean_counts: np.ndarray
    n_traj: int


@dataclass(frozen=True)
class CountingMoments:
    """M = E[N(t0+t) - N(t0)] and V = E[(N(t0+t) - N(t0))^2] - M, so that Q = V / M - M."""

    m: float
    v: float
    m_stderr: float
    v_stderr: float


def _convolve(increments, kernel):
    """J(t_n) = sum_{m<n} kernel[n-1-m] dX_m on every grid time, batched over rows."""
    n_steps = increments.shape[1]
    if kernel.shape != (n_steps,):
        raise InvalidArgumentError(f"kernel has {kernel.size} samples, the grid has {n_steps} steps")
    out = np.zeros((increments.shape[0], n_steps + 1))
    if n_steps:
        out[:, 1:] = scipy.signal.fftconvolve(increments, kernel[None, :], axes=1)[:, :n_steps]
    return out


def exp_filter_kernel(detector_gain, detector_bandwidth, grid):
    """Kernel samples reproducing the exp_filter recursion exactly."""
    x = 0.5 * detector_bandwidth * grid.step
    weight = -np.expm1(-x) / x if x > 0 else 1.0
    return detector_gain * weight * np.exp(-x * np.arange(grid.n_steps))


def _white_noise(spec, output, seeds, shape, step, increments):
    amplitude = output.noise_amplitude
    noise = np.empty(shape)
    for b, seed in enumerate(seeds):
        rng = np.random.default_rng([spec.noise_seed, output.channel, int(seed) & MASK64])
        noise[b] = rng.standard_normal(shape[1:])
    return amplitude * (np.sqrt(step) if increments else 1.0) * noise


def build_outputs(record, spec=None):
    """
    Builds the output currents and counts of a record and attaches them as record.outputs.

    Args:
        record (TrajectoryRecord): Integrated batch.
        spec (OutputSpec): Output definitions; defaults to raw increments of channels 1, 2 and N_3.

    Returns:
        OutputRecord: The outputs.

    Raises:
        InvalidArgumentError: If a kernel does not have one sample per grid step or a channel is unknown.
    """
    spec = spec or OutputSpec()
    grid = record.grid
    currents, counts, increment_form = {}, {}, {}
    for output in spec.diffusive:
        db = record.channel_increments(output.channel)
        if output.response == 'dirac':
            current = db.copy()
        elif output.response == 'exp_filter':
            current = np.zeros((record.size, grid.n_steps + 1))
            for n in range(grid.n_steps):
                current[:, n + 1] = feedback_current_update(current[:, n], db[:, n], grid.step, output)
        else:
            current = _convolve(db, output.kernel)
        if output.noise == 'white':
            current = current + _white_noise(spec, output, record.seeds, current.shape, grid.step,
                                             output.response == 'dirac')
        currents[output.channel] = current
        increment_form[output.channel] = output.response == 'dirac'

    for output in spec.counting:
        dn = record.channel_counts(output.channel).astype(float)
        if output.kernel is None:
            counts[output.channel] = np.concatenate([np.zeros((record.size, 1)), np.cumsum(dn, axis=1)], axis=1)
        else:
            counts[output.channel] = _convolve(dn, output.kernel)

    outputs = OutputRecord(times=grid.times, currents=currents, counts=counts, increment_form=increment_form)
    record.outputs = outputs
    return outputs


def weight_at(record, horizon=None):
    """p(horizon) per trajectory; horizon must be a stored time of the record."""
    if horizon is None:
        return record.final_weight
    hits = np.flatnonzero(np.abs(record.times - horizon) <= TIME_TOL * max(1.0, abs(horizon)))
    if hits.size == 0:
        raise InvalidArgumentError(f"horizon {horizon} is not a stored time of the record")
    return record.weight[:, hits[0]]


def _steps_until(record, horizon):
    return record.grid.n_steps if horizon is None else record.grid.index_of(horizon)


@dataclass(frozen=True)
class Constant:
    """X = value."""

    value: float = 1.0

    def __call__(self, record, horizon=None):
        return np.full(record.size, float(self.value))


@dataclass(frozen=True)
class OutputTotal:
    """X = B_label(horizon)."""

    channel: int

    def __call__(self, record, horizon=None):
        return record.channel_increments(self.channel)[:, :_steps_until(record, horizon)].sum(axis=1)


@dataclass(frozen=True)
class CountTotal:
    """X = N_label(horizon)."""

    channel: int

    def __call__(self, record, horizon=None):
        return record.channel_counts(self.channel)[:, :_steps_until(record, horizon)].sum(axis=1).astype(float)


@dataclass(frozen=True)
class IntegratedRate:
    """X = int_0^horizon m_label(t) dt (left-endpoint sum)."""

    channel: int

    def __call__(self, record, horizon=None):
        n = _steps_until(record, horizon)
        return record.channel_m(self.channel)[:, :n].sum(axis=1) * record.grid.step


@dataclass(frozen=True)
class _WeightedFunctional:
    functional: object
    horizon: float

    def __call__(self, record):
        return (weight_at(record, self.horizon) * self.functional(record, self.horizon))[:, None]


def weighted_expectation(functional, ensemble, horizon=None):
    """
    Physical expectation E_P[X] = E_Q[p(T) X] of a functional of the outputs on [0, T].

    Args:
        functional (callable): (record, horizon) -> values per trajectory; picklable for parallel ensembles.
        ensemble: SimulatedEnsemble, TrajectoryRecord or a sequence of records.
        horizon (float): T; defaults to the end of the grid.

    Returns:
        tuple: (estimate, stderr).
    """
    accumulator = as_ensemble(ensemble).reduce(_WeightedFunctional(functional, horizon))
    return float(accumulator.mean[0]), float(accumulator.stderr()[0])


def _ensemble_grid(ensemble):
    if hasattr(ensemble, 'grid'):
        return ensemble.grid
    return ensemble.records[0].grid


def _delta_stderr(gradient, covariance):
    return float(np.sqrt(max(gradient @ covariance @ gradient, 0.0)))


@dataclass(frozen=True)
class _SpectrumFeatures:
    channel: int
    mu_grid: np.ndarray
    horizon: float

    def __call__(self, record):
        n = _steps_until(record, self.horizon)
        db = record.channel_increments(self.channel)[:, :n]
        # left-endpoint times, Ito convention
        phases = np.exp(1j * np.outer(np.arange(n) * record.grid.step, self.mu_grid))
        fourier = db @ phases
        p = weight_at(record, self.horizon)[:, None]
        return np.column_stack([
            p[:, 0],
            p[:, 0] * db.sum(axis=1),
            p * np.abs(fourier) ** 2,
            p * fourier.real,
            p * fourier.imag,
        ])


def estimate_spectrum(ensemble, channel, mu_grid, horizon=None):
    """
    Finite-window homodyne spectrum of a diffusive channel.

    S(mu) = E|int_0^T e^{i mu t} dB(t)|^2 / T splits into the inelastic part (the variance of the
    Fourier integral over T) and the elastic line, reported as the coefficient s_el of delta(mu)
    estimated from the mean output slope: s_el = 2 pi (E[B(T)] / T)^2.

    Args:
        ensemble: SimulatedEnsemble, TrajectoryRecord or a sequence of records.
        channel (int): Diffusive channel label.
        mu_grid (array-like): Frequencies.
        horizon (float): T; defaults to the end of the grid.

    Returns:
        SpectrumEstimate: S_inel with delta-method standard errors, S and s_el.

    Raises:
        InvalidArgumentError: If mu_grid is empty.
    """
    mu_grid = np.atleast_1d(np.asarray(mu_grid, dtype=float))
    if mu_grid.size == 0:
        raise InvalidArgumentError("spectrum needs at least one frequency")
    ensemble = as_ensemble(ensemble)
    grid = _ensemble_grid(ensemble)
    T = (grid.n_steps if horizon is None else grid.index_of(horizon)) * grid.step
    if T <= 0:
        raise InvalidArgumentError("spectrum needs a window T > 0")

    accumulator = ensemble.reduce(_SpectrumFeatures(channel, mu_grid, horizon))
    mean = accumulator.mean
    covariance = accumulator.mean_covariance()
    size = mu_grid.size
    power = slice(2, 2 + size)
    real = slice(2 + size, 2 + 2 * size)
    imag = slice(2 + 2 * size, 2 + 3 * size)

    s_total = mean[power] / T
    s_inel = (mean[power] - mean[real] ** 2 - mean[imag] ** 2) / T
    stderr = np.empty(size)
    for j in range(size):
        columns = [2 + j, 2 + size + j, 2 + 2 * size + j]
        gradient = np.array([1.0, -2.0 * mean[columns[1]], -2.0 * mean[columns[2]]]) / T
        stderr[j] = _delta_stderr(gradient, covariance[np.ix_(columns, columns)])

    slope = mean[1] / T
    s_el = 2.0 * np.pi * slope ** 2
    s_el_stderr = abs(4.0 * np.pi * slope / T) * np.sqrt(max(covariance[1, 1], 0.0))
    logging.info(f"Spectrum of channel {channel}: {accumulator.count} trajectories, T={T:g}, "
                 f"mean weight {mean[0]:.4f}, s_el={s_el:.4f} +- {s_el_stderr:.4f}")
    return SpectrumEstimate(
        mu_grid=mu_grid,
        s_inel=s_inel,
        stderr=stderr,
        s_total=s_total,
        s_el_coefficient=float(s_el),
        s_el_stderr=float(s_el_stderr),
        T=float(T),
        n_traj=accumulator.count,
        mean_weight=float(mean[0])
    )


@dataclass(frozen=True)
class _CountFeatures:
    channel: int
    t0: float
    t_grid: np.ndarray

    def __call__(self, record):
        grid = record.grid
        start = grid.index_of(self.t0)
        ends = [grid.index_of(self.t0 + t) for t in self.t_grid]
        dn = record.channel_counts(self.channel)
        cumulative = np.concatenate([np.zeros((record.size, 1)), np.cumsum(dn, axis=1)], axis=1)
        window = cumulative[:, ends] - cumulative[:, [start]]
        p = record.final_weight[:, None]
        return np.column_stack([p * window, p * window ** 2])


def _count_moments(ensemble, channel, t_grid, t0):
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t_grid.size == 0 or np.any(t_grid <= 0):
        raise InvalidArgumentError(f"count windows must be > 0, got {t_grid.tolist()}")
    if t0 < 0:
        raise InvalidArgumentError(f"t0 must be >= 0, got {t0}")
    accumulator = as_ensemble(ensemble).reduce(_CountFeatures(channel, float(t0), t_grid))
    return t_grid, accumulator


def estimate_mandel_q(ensemble, channel, t_grid, t0=0.0):
    """
    Mandel Q of counting channel `channel` over windows (t0, t0 + t] for each t in t_grid.

    Returns:
        QEstimate: Q(t) = Var / Mean - 1 with delta-method standard errors and the rates M(t) / t.

    Raises:
        UndefinedQError: If the mean count of a window is zero.
    """
    t_grid, accumulator = _count_moments(ensemble, channel, t_grid, t0)
    mean = accumulator.mean
    covariance = accumulator.mean_covariance()
    size = t_grid.size
    q = np.empty(size)
    stderr = np.empty(size)
    for j in range(size):
        first, second = mean[j], mean[size + j]
        if first == 0:
            raise UndefinedQError(f"mean count of channel {channel} over a window of {t_grid[j]:g} is zero")
        q[j] = second / first - first - 1.0
        gradient = np.array([-second / first ** 2 - 1.0, 1.0 / first])
        stderr[j] = _delta_stderr(gradient, covariance[np.ix_([j, size + j], [j, size + j])])
    logging.info(f"Mandel Q of channel {channel}: {accumulator.count} trajectories, "
                 f"Q({t_grid[-1]:g}) = {q[-1]:.4f} +- {stderr[-1]:.4f}")
    return QEstimate(
        t_grid=t_grid,
        q_values=q,
        m_rate=mean[:size] / t_grid,
        stderr=stderr,
        mean_counts=mean[:size],
        n_traj=accumulator.count
    )


def counting_moments(ensemble, channel, t0, t):
    _, accumulator = _count_moments(ensemble, channel, [t], t0)
    mean = accumulator.mean
    covariance = accumulator.mean_covariance()
    return CountingMoments(
        m=float(mean[0]),
        v=float(mean[1] - mean[0]),
        m_stderr=float(np.sqrt(max(covariance[0, 0], 0.0))),
        v_stderr=_delta_stderr(np.array([-1.0, 1.0]), covariance)
    )


@dataclass(frozen=True)
class _TwoTimeReducer:
    channel: int
    start: int
    end: int
    n_inf: float

    def __call__(self, ensemble, batch):
        model = ensemble.model
        column = model.diffusive_labels.index(self.channel)
        intensities = np.asarray(batch.reference_intensities, dtype=float)[
            [batch.layout.counting_index(label) for label in model.counting_labels]]
        sigma = np.broadcast_to(validate_density(ensemble.initial_state), (batch.size, 2, 2)).copy()
        kicked = None
        for n, coefficients, db, dn in reference_steps(model, batch):
            channel_op = coefficients.diffusive[:, column]
            if n == self.end:
                value = np.einsum('bij,bji->b', channel_op + dagger(channel_op), kicked).real
                return value[:, None]
            if n == self.start:
                l_sigma = channel_op @ sigma
                kicked = l_sigma + dagger(l_sigma) - self.n_inf * sigma
            if kicked is None:
                sigma = linear_sme_step(sigma, coefficients, db, dn, intensities, batch.grid.step)
            else:
                kicked = linear_sme_step(kicked, coefficients, db, dn, intensities, batch.grid.step)
        raise InvalidArgumentError("time t is past the last step of the grid")


def autocorrelation_d(ensemble, channel, s, t, n_inf=0.0):
    """
    Two-time function of a diffusive output:
    E_Q[tr{(L + L^*) A(t-, s)[L sigma(s-) + sigma(s-) L^* - n_inf sigma(s-)]}], with A the
    random propagator of the linear SME along the same noise. With n_inf = 0 this is b(t, s),
    with the stationary mean current it is d(t, s).

    Args:
        ensemble (SimulatedEnsemble): Reference-measure ensemble; paths are re-integrated.
        channel (int): Diffusive channel not used by the feedback loop.
        s (float): Earlier time, grid point, 0 < s < t.
        t (float): Later time, grid point before t_end.
        n_inf (float): Mean current subtracted at time s.

    Returns:
        tuple: (estimate, stderr).

    Raises:
        PreconditionViolatedError: If the channel drives the feedback.
        InvalidArgumentError: Off-grid or misordered times, or an ensemble that cannot re-integrate.
    """
    ensemble = as_ensemble(ensemble)
    if ensemble.measure != 'reference':
        raise InvalidArgumentError("two-time estimates need a reference-measure ensemble")
    if not isinstance(ensemble, SimulatedEnsemble):
        raise InvalidArgumentError("two-time estimates re-integrate paths and need a SimulatedEnsemble")
    model = ensemble.model
    if channel not in model.diffusive_labels:
        raise InvalidArgumentError(f"channel {channel} is not a diffusive channel of the model")
    if channel in model.feedback_labels:
        raise PreconditionViolatedError(f"channel {channel} drives the feedback; its two-time function has no such form")
    if not 0 < s < t:
        raise InvalidArgumentError(f"need 0 < s < t, got s={s}, t={t}")
    grid = ensemble.grid
    start, end = grid.index_of(s), grid.index_of(t)
    if end >= grid.n_steps:
        raise InvalidArgumentError(f"t={t} must lie before the end of the grid ({grid.t_end})")

    accumulator = ensemble.reduce_paths(_TwoTimeReducer(channel, start, end, float(n_inf)))
    return float(accumulator.mean[0]), float(accumulator.stderr()[0])
