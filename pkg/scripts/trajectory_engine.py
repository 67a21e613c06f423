"""
Jump-diffusion integration of the four stochastic equations of quantum trajectory theory.

Linear SSE/SME run under the reference probability, where B_j are standard Wiener processes
and N_k Poisson processes of intensity lambda_k; the weight p(t) = tr sigma(t) is the density
of the physical probability. Nonlinear SSE/SME run directly under the physical probability,
with W_j Wiener processes and counting channels firing at the state-dependent intensity i_k(t).

Every entry point takes one NoisePath or several and integrates them side by side along a
leading batch axis. Every scheme is a first-order step in Kraus form: the drift and diffusion
act as sigma -> K sigma K^*, then the jumps recorded in the step act on the result.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from core_ops import (
    ChannelSet, Superoperator2, dagger, hermitian_part, maximally_mixed,
    min_eigenvalue, projector, unvectorize, validate_density, validate_state_vector, vectorize
)
from errors import ConfigError, IntegrationDivergedError, InvalidArgumentError, NumericalPositivityError
from noise_paths import ChannelLayout, NoisePath, stack_paths

SCHEMES = ('euler_maruyama',)
POSITIVITY_TOL = 1e-10
# relative negativity logged as a departure from the positive cone
POSITIVITY_REPORT_TOL = 1e-6


@dataclass(frozen=True)
class EngineConfig:
    scheme: str = 'euler_maruyama'
    norm_floor: float = 1e-12
    store_every: int = 1
    divergence_tol: float = 1e-6
    fallback_state: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError('engine.scheme', f"must be one of {SCHEMES}, got '{self.scheme}'")
        if int(self.store_every) != self.store_every or self.store_every < 1:
            raise ConfigError('engine.store_every', f"must be an integer >= 1, got {self.store_every}")
        if not self.norm_floor > 0:
            raise ConfigError('engine.norm_floor', f"must be > 0, got {self.norm_floor}")
        if not self.divergence_tol > 0:
            raise ConfigError('engine.divergence_tol', f"must be > 0, got {self.divergence_tol}")
        if self.fallback_state is not None:
            object.__setattr__(self, 'fallback_state', validate_density(self.fallback_state))

    @property
    def fallback(self):
        """The state z used when p(t) falls below norm_floor."""
        return maximally_mixed() if self.fallback_state is None else self.fallback_state


@dataclass
class ConstantModel:
    """
    Deterministic coefficients: a constant Hamiltonian with constant diffusive channels
    labelled 1..d and counting channels labelled d+1..d+d'.
    """

    hamiltonian: np.ndarray
    diffusive: tuple = ()
    counting: tuple = ()
    intensities: tuple = None

    def __post_init__(self):
        self.hamiltonian = np.asarray(self.hamiltonian, dtype=complex)
        self._diffusive = np.array([np.asarray(op, dtype=complex) for op in self.diffusive]).reshape(-1, 2, 2)
        self._counting = np.array([np.asarray(op, dtype=complex) for op in self.counting]).reshape(-1, 2, 2)
        d, d_prime = len(self._diffusive), len(self._counting)
        self.layout = ChannelLayout(
            wiener_labels=tuple(range(1, d + 1)),
            counting_labels=tuple(range(d + 1, d + d_prime + 1))
        )
        self.diffusive_labels = self.layout.wiener_labels
        self.counting_labels = self.layout.counting_labels
        self.feedback_labels = ()
        if self.intensities is None:
            self.intensities = [max(1.0, np.linalg.norm(op, 2) ** 2) for op in self._counting]
        self.intensities = np.asarray(self.intensities, dtype=float)

    def reference_intensities(self):
        return self.intensities

    def counting_bounds(self):
        return np.array([np.linalg.norm(op, 2) ** 2 for op in self._counting])

    def begin(self, batch_size, grid):
        return batch_size

    def coefficients(self, state, n):
        return ChannelSet(
            hamiltonian=np.broadcast_to(self.hamiltonian, (state, 2, 2)),
            diffusive=np.broadcast_to(self._diffusive, (state,) + self._diffusive.shape),
            counting=np.broadcast_to(self._counting, (state,) + self._counting.shape)
        )

    def advance(self, state, n, db):
        pass


@dataclass
class TrajectoryRecord:
    """
    A batch of integrated trajectories. State arrays are stored at `times` (every
    store_every-th grid time plus t_end); per-step arrays cover every step and hold
    left-endpoint values: m[:, n] and intensity[:, n] are evaluated at rho(t_n).
    """

    grid: object
    times: np.ndarray
    sigma: np.ndarray
    weight: np.ndarray
    rho: np.ndarray
    fallback: np.ndarray
    m: np.ndarray
    intensity: np.ndarray
    increments: np.ndarray
    counts: np.ndarray
    diffusive_labels: tuple
    counting_labels: tuple
    fallback_state: np.ndarray
    measure: str
    seeds: tuple
    min_eigen_ratio: np.ndarray
    outputs: object = None

    @property
    def size(self):
        return self.weight.shape[0]

    @property
    def final_weight(self):
        return self.weight[:, -1]

    def channel_increments(self, label):
        return self.increments[:, :, self._diffusive_column(label)]

    def channel_counts(self, label):
        return self.counts[:, :, self._counting_column(label)]

    def channel_m(self, label):
        return self.m[:, :, self._diffusive_column(label)]

    def channel_intensity(self, label):
        return self.intensity[:, :, self._counting_column(label)]

    def _diffusive_column(self, label):
        if label not in self.diffusive_labels:
            raise InvalidArgumentError(f"channel {label} is not a diffusive channel of this record")
        return self.diffusive_labels.index(label)

    def _counting_column(self, label):
        if label not in self.counting_labels:
            raise InvalidArgumentError(f"channel {label} is not a counting channel of this record")
        return self.counting_labels.index(label)


@dataclass
class VectorTrajectory:
    grid: object
    times: np.ndarray
    phi: np.ndarray
    weight: np.ndarray
    seeds: tuple


@dataclass(frozen=True)
class GirsanovQuantities:
    m: np.ndarray
    intensity: np.ndarray
    dw: np.ndarray


def stored_indices(n_steps, store_every):
    return np.unique(np.r_[np.arange(0, n_steps + 1, store_every), n_steps])


def _columns(model, batch):
    if model.layout != batch.layout:
        raise InvalidArgumentError(f"path layout {batch.layout} does not match model layout {model.layout}")
    d_cols = [batch.layout.wiener_index(label) for label in model.diffusive_labels]
    c_cols = [batch.layout.counting_index(label) for label in model.counting_labels]
    return d_cols, c_cols


def reference_steps(model, batch):
    """
    Iterates a PathBatch under the reference probability.

    Yields:
        tuple: (n, ChannelSet at t_n, dB of the model's diffusive channels (b, d),
            dN of its counting channels (b, d')) for every step n.
    """
    d_cols, c_cols = _columns(model, batch)
    state = model.begin(batch.size, batch.grid)
    for n in range(batch.grid.n_steps):
        coefficients = model.coefficients(state, n)
        increments = batch.wiener[:, n]
        yield n, coefficients, increments[:, d_cols], batch.counts[:, n][:, c_cols]
        model.advance(state, n, increments)


def measurement_rates(rho, diffusive, counting):
    """
    m_i = 2 Re tr(L_i rho) and i_k = tr(L_k^* L_k rho), batched.

    Args:
        rho (np.ndarray): States (b, 2, 2).
        diffusive (np.ndarray): Diffusive operators (b, d, 2, 2).
        counting (np.ndarray): Counting operators (b, d', 2, 2).

    Returns:
        tuple: m (b, d), i (b, d').
    """
    m = 2.0 * np.einsum('bdij,bji->bd', diffusive, rho).real
    intensity = np.einsum('bkij,bji->bk', dagger(counting) @ counting, rho).real
    return m, intensity


def no_jump_operator(coefficients, db, step, shift=None):
    """
    K = I + step (-i H - 1/2 sum_i L_i^* L_i + shift I) + sum_j L_j dB_j, batched.

    sigma -> K sigma K^* is the Euler step of the diffusive and drift part of the linear SME:
    its mean over dB adds step * sum_j L_j sigma L_j^*, the Ito correction.
    """
    channels = coefficients.channels
    generator = -1j * coefficients.hamiltonian - 0.5 * (dagger(channels) @ channels).sum(axis=-3)
    if shift is not None:
        generator = generator + np.asarray(shift)[..., None, None] * np.eye(2)
    k = np.eye(2) + step * generator
    if coefficients.diffusive.shape[-3]:
        k = k + np.einsum('bd,bdij->bij', db, coefficients.diffusive)
    return k


def _jump_scale(scale, k):
    return np.asarray(scale, dtype=float)[..., k].reshape(-1, 1, 1)


def apply_jumps(sigma, counting, dn, scale):
    """sigma -> L_k sigma L_k^* / scale_k once per recorded jump, channel by channel."""
    for k in range(counting.shape[-3]):
        jump = counting[:, k]
        for j in range(int(dn[:, k].max(initial=0))):
            fired = (dn[:, k] > j)[:, None, None]
            sigma = np.where(fired, jump @ sigma @ dagger(jump) / _jump_scale(scale, k), sigma)
    return sigma


def _apply_vector_jumps(phi, counting, dn, scale):
    for k in range(counting.shape[-3]):
        jump = counting[:, k]
        for j in range(int(dn[:, k].max(initial=0))):
            fired = (dn[:, k] > j)[:, None]
            jumped = (jump @ phi[..., None])[..., 0] / np.sqrt(_jump_scale(scale, k)[..., 0])
            phi = np.where(fired, jumped, phi)
    return phi


def linear_sme_step(sigma, coefficients, db, dn, intensities, step):
    """
    One step of the linear SME under the reference probability: sigma' = K sigma K^* with
    K = no_jump_operator(shift = 1/2 sum lambda_k), then every jump of the step acts on sigma'.
    """
    k = no_jump_operator(coefficients, db, step, 0.5 * np.sum(intensities))
    return apply_jumps(k @ sigma @ dagger(k), coefficients.counting, dn, intensities)


def linear_sse_step(phi, coefficients, db, dn, intensities, step):
    """One step of the linear SSE, phi' = K phi, then the jumps; the vector form of linear_sme_step."""
    k = no_jump_operator(coefficients, db, step, 0.5 * np.sum(intensities))
    return _apply_vector_jumps((k @ phi[..., None])[..., 0], coefficients.counting, dn, intensities)


def _normalize(sigma, floor, fallback):
    weight = np.trace(sigma, axis1=-2, axis2=-1).real
    below = weight <= floor
    safe = np.where(below, 1.0, weight)
    rho = np.where(below[:, None, None], fallback, sigma / safe[:, None, None])
    return weight, rho, below


def _check_positive(sigma, weight, n, cfg, worst):
    """Tracks min eigenvalue / trace per trajectory; raises past divergence_tol."""
    if not np.all(np.isfinite(sigma)):
        raise IntegrationDivergedError(f"non-finite state at step {n}; the step size is too large")
    scale = np.maximum(np.abs(weight), cfg.norm_floor)
    ratio = min_eigenvalue(sigma) / scale
    np.minimum(worst, ratio, out=worst)
    if np.any(ratio < -cfg.divergence_tol):
        raise IntegrationDivergedError(
            f"state left the positive cone at step {n} (min eigenvalue / trace = {ratio.min():.3e}); "
            f"the step size is too large")


def _report_positivity(worst, label):
    outside = int(np.sum(worst < -POSITIVITY_REPORT_TOL))
    if outside:
        logging.debug(f"{label}: {outside}/{worst.size} trajectories left the positive cone, "
                      f"worst relative eigenvalue {worst.min():.3e}")


def _model_intensities(model, batch, c_cols):
    intensities = np.asarray(batch.reference_intensities, dtype=float)[c_cols]
    if np.any(intensities <= 0):
        raise InvalidArgumentError("reference intensities must be > 0")
    return intensities


def integrate_linear_sme(model, paths, rho0, cfg=None):
    """
    Integrates the linear SME under the reference probability.

    Args:
        model: Coefficient processes (AtomModel, ConstantModel).
        paths (NoisePath | sequence | PathBatch): Driving noises sampled with the model's layout.
        rho0 (array-like): Initial state.
        cfg (EngineConfig): Scheme settings.

    Returns:
        TrajectoryRecord: sigma, weight p = tr sigma, rho, m, i and the driving increments.

    Raises:
        IntegrationDivergedError: If sigma leaves the positive cone by more than cfg.divergence_tol.
    """
    cfg = cfg or EngineConfig()
    batch = stack_paths(paths)
    d_cols, c_cols = _columns(model, batch)
    intensities = _model_intensities(model, batch, c_cols)
    rho0 = validate_density(rho0)
    grid = batch.grid
    b, n_steps = batch.size, grid.n_steps
    keep = stored_indices(n_steps, cfg.store_every)

    sigma = np.broadcast_to(rho0, (b, 2, 2)).copy()
    sigma_out = np.empty((b, keep.size, 2, 2), dtype=complex)
    m = np.empty((b, n_steps, len(d_cols)))
    rates = np.empty((b, n_steps, len(c_cols)))
    worst = np.zeros(b)
    slot = 0
    if keep[0] == 0:
        sigma_out[:, 0] = sigma
        slot = 1

    for n, coefficients, db, dn in reference_steps(model, batch):
        _, rho, _ = _normalize(sigma, cfg.norm_floor, cfg.fallback)
        m[:, n], rates[:, n] = measurement_rates(rho, coefficients.diffusive, coefficients.counting)
        sigma = hermitian_part(linear_sme_step(sigma, coefficients, db, dn, intensities, grid.step))
        weight = np.trace(sigma, axis1=-2, axis2=-1).real
        _check_positive(sigma, weight, n, cfg, worst)
        if slot < keep.size and keep[slot] == n + 1:
            sigma_out[:, slot] = sigma
            slot += 1

    _report_positivity(worst, "linear SME")
    weight, rho, below = _normalize(sigma_out.reshape(-1, 2, 2), cfg.norm_floor, cfg.fallback)
    if np.any(below):
        logging.debug(f"linear SME: {int(below.sum())} stored states fell below the norm floor")
    return TrajectoryRecord(
        grid=grid,
        times=keep * grid.step,
        sigma=sigma_out,
        weight=weight.reshape(b, keep.size),
        rho=rho.reshape(b, keep.size, 2, 2),
        fallback=below.reshape(b, keep.size),
        m=m,
        intensity=rates,
        increments=batch.wiener[:, :, d_cols],
        counts=batch.counts[:, :, c_cols],
        diffusive_labels=tuple(model.diffusive_labels),
        counting_labels=tuple(model.counting_labels),
        fallback_state=cfg.fallback,
        measure='reference',
        seeds=batch.seeds,
        min_eigen_ratio=worst
    )


def integrate_linear_sse(model, paths, phi0, cfg=None):
    """
    Integrates the linear SSE under the reference probability.

    Args:
        model: Coefficient processes.
        paths (NoisePath | sequence | PathBatch): Driving noises.
        phi0 (array-like): Initial unit vector.
        cfg (EngineConfig): Scheme settings (only store_every is used).

    Returns:
        VectorTrajectory: phi(t) and weights ||phi(t)||^2.
    """
    cfg = cfg or EngineConfig()
    batch = stack_paths(paths)
    d_cols, c_cols = _columns(model, batch)
    intensities = _model_intensities(model, batch, c_cols)
    phi0 = validate_state_vector(phi0)
    grid = batch.grid
    b = batch.size
    keep = stored_indices(grid.n_steps, cfg.store_every)

    phi = np.broadcast_to(phi0, (b, 2)).copy()
    phi_out = np.empty((b, keep.size, 2), dtype=complex)
    phi_out[:, 0] = phi
    slot = 1
    for n, coefficients, db, dn in reference_steps(model, batch):
        phi = linear_sse_step(phi, coefficients, db, dn, intensities, grid.step)
        if not np.all(np.isfinite(phi)):
            raise IntegrationDivergedError(f"non-finite state vector at step {n}; the step size is too large")
        if slot < keep.size and keep[slot] == n + 1:
            phi_out[:, slot] = phi
            slot += 1

    return VectorTrajectory(
        grid=grid,
        times=keep * grid.step,
        phi=phi_out,
        weight=np.sum(np.abs(phi_out) ** 2, axis=-1),
        seeds=batch.seeds
    )


def thinning_envelope(model):
    """Candidate intensities for the physical-measure integrator: 2 sup ||L_k||^2, at least 1."""
    bounds = np.zeros(len(model.layout.counting_labels))
    for label, bound in zip(model.counting_labels, model.counting_bounds()):
        bounds[model.layout.counting_index(label)] = bound
    return np.maximum(2.0 * bounds, 1.0)


def _nonlinear_sme_step(rho, coefficients, db, dn, rates, step):
    """Unnormalized: K rho K^* driven by the realized outputs dB, then the accepted jumps."""
    k = no_jump_operator(coefficients, db, step)
    scale = np.where(rates > 0, rates, 1.0)
    return apply_jumps(k @ rho @ dagger(k), coefficients.counting, dn, scale)


def _nonlinear_sse_step(psi, coefficients, db, dn, rates, step):
    k = no_jump_operator(coefficients, db, step)
    scale = np.where(rates > 0, rates, 1.0)
    return _apply_vector_jumps((k @ psi[..., None])[..., 0], coefficients.counting, dn, scale)


def integrate_nonlinear(model, paths, state0, cfg=None, variant='sme'):
    """
    Integrates the nonlinear SSE or SME under the physical probability. Wiener increments are
    the innovations, outputs are dB_j = dW_j + m_j dt, and a Poisson candidate of channel k
    fires when its mark is below i_k(t) / lambda_bar_k.

    Args:
        model: Coefficient processes.
        paths (NoisePath | sequence | PathBatch): Noises sampled with thinning_envelope(model).
        state0 (array-like): Unit vector (sse) or state (sme); a vector is also accepted for sme.
        cfg (EngineConfig): Scheme settings.
        variant (str): 'sse' or 'sme'.

    Returns:
        TrajectoryRecord: measure 'physical', weight identically 1.

    Raises:
        NumericalPositivityError: If an intensity i_k(t) drops below -1e-10.
        InvalidArgumentError: If the candidate intensities do not dominate sup_t i_k(t).
    """
    if variant not in ('sse', 'sme'):
        raise InvalidArgumentError(f"variant must be 'sse' or 'sme', got '{variant}'")
    cfg = cfg or EngineConfig()
    batch = stack_paths(paths)
    d_cols, c_cols = _columns(model, batch)
    envelope = _model_intensities(model, batch, c_cols)
    if np.any(envelope < model.counting_bounds()):
        raise InvalidArgumentError(
            f"thinning envelope {envelope.tolist()} is below sup i_k = {model.counting_bounds().tolist()}")

    state0 = np.asarray(state0, dtype=complex)
    if variant == 'sse':
        psi = np.broadcast_to(validate_state_vector(state0), (batch.size, 2)).copy()
        rho = projector(psi)
    else:
        rho0 = projector(validate_state_vector(state0)) if state0.shape == (2,) else validate_density(state0)
        rho = np.broadcast_to(rho0, (batch.size, 2, 2)).copy()

    grid = batch.grid
    b, n_steps, step = batch.size, grid.n_steps, grid.step
    keep = stored_indices(n_steps, cfg.store_every)
    rho_out = np.empty((b, keep.size, 2, 2), dtype=complex)
    rho_out[:, 0] = rho
    slot = 1
    m = np.empty((b, n_steps, len(d_cols)))
    rates = np.empty((b, n_steps, len(c_cols)))
    outputs = np.empty((b, n_steps, len(d_cols)))
    counts = np.zeros((b, n_steps, len(c_cols)), dtype=int)
    worst = np.zeros(b)

    model_state = model.begin(b, grid)
    for n in range(n_steps):
        coefficients = model.coefficients(model_state, n)
        m_n, i_n = measurement_rates(rho, coefficients.diffusive, coefficients.counting)
        if np.any(i_n < -POSITIVITY_TOL):
            raise NumericalPositivityError(f"negative counting intensity {i_n.min():.3e} at step {n}")
        i_n = np.maximum(i_n, 0.0)
        m[:, n], rates[:, n] = m_n, i_n

        dw = batch.wiener[:, n][:, d_cols]
        accept = batch.marks[:, n][:, c_cols] < (i_n / envelope)[:, :, None]
        dn = accept.sum(axis=-1)
        counts[:, n] = dn
        outputs[:, n] = dw + m_n * step

        if variant == 'sse':
            psi = _nonlinear_sse_step(psi, coefficients, outputs[:, n], dn, i_n, step)
            norm = np.linalg.norm(psi, axis=-1)
            if not np.all(np.isfinite(norm)) or np.any(norm <= 0):
                raise IntegrationDivergedError(f"state vector degenerated at step {n}; the step size is too large")
            psi = psi / norm[:, None]
            rho = projector(psi)
        else:
            rho = hermitian_part(_nonlinear_sme_step(rho, coefficients, outputs[:, n], dn, i_n, step))
            trace = np.trace(rho, axis1=-2, axis2=-1).real
            _check_positive(rho, trace, n, cfg, worst)
            rho = rho / trace[:, None, None]

        realized = batch.wiener[:, n].copy()
        realized[:, d_cols] = outputs[:, n]
        model.advance(model_state, n, realized)
        if slot < keep.size and keep[slot] == n + 1:
            rho_out[:, slot] = rho
            slot += 1

    _report_positivity(worst, f"nonlinear {variant.upper()}")
    return TrajectoryRecord(
        grid=grid,
        times=keep * step,
        sigma=rho_out,
        weight=np.ones((b, keep.size)),
        rho=rho_out,
        fallback=np.zeros((b, keep.size), dtype=bool),
        m=m,
        intensity=rates,
        increments=outputs,
        counts=counts,
        diffusive_labels=tuple(model.diffusive_labels),
        counting_labels=tuple(model.counting_labels),
        fallback_state=cfg.fallback,
        measure='physical',
        seeds=batch.seeds,
        min_eigen_ratio=worst
    )


def girsanov_quantities(record):
    """
    m_i(t), i_k(t) and the innovations dW_j = dB_j - m_j dt of a record, per step.

    Returns:
        GirsanovQuantities: m (b, n, d), intensity (b, n, d'), dw (b, n, d).
    """
    return GirsanovQuantities(
        m=record.m,
        intensity=record.intensity,
        dw=record.increments - record.m * record.grid.step
    )


def propagator(model, paths, s, t):
    """
    The random propagator A(t, s): sigma(s) -> sigma(t) of the linear SME along each path.

    Args:
        model: Coefficient processes.
        paths (NoisePath | sequence | PathBatch): Driving noises.
        s (float): Start time on the grid.
        t (float): End time on the grid, t >= s.

    Returns:
        Superoperator2 | np.ndarray: The map for a single NoisePath, else matrices (b, 4, 4).

    Raises:
        InvalidArgumentError: If s > t or either time is off the grid.
    """
    if s > t:
        raise InvalidArgumentError(f"propagator needs s <= t, got s={s}, t={t}")
    single = isinstance(paths, NoisePath)
    batch = stack_paths(paths)
    _, c_cols = _columns(model, batch)
    intensities = _model_intensities(model, batch, c_cols)
    n_s, n_t = batch.grid.index_of(s), batch.grid.index_of(t)

    units = unvectorize(np.eye(4, dtype=complex))
    tau = np.tile(units, (batch.size, 1, 1))
    for n, coefficients, db, dn in reference_steps(model, batch):
        if n >= n_t:
            break
        if n < n_s:
            continue
        tau = linear_sme_step(tau, coefficients.repeat(4), np.repeat(db, 4, axis=0), np.repeat(dn, 4, axis=0),
                              intensities, batch.grid.step)

    matrices = np.swapaxes(vectorize(tau).reshape(batch.size, 4, 4), -1, -2)
    return Superoperator2(matrices[0]) if single else matrices
