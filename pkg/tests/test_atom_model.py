import numpy as np
import pytest

from atom_model import (
    AtomModel, AtomParams, FeedbackSpec, OscillatorSpec, channel_operators, delay_steps, feedback_current_path,
    feedback_current_update, frame_lindblad_terms, from_rotating_frame, laser_wave, oscillator_wave,
    rotating_frame_generator, to_rotating_frame, wrap_phase
)
from conftest import SPECTRUM_SETS, atom_params, random_state, spectrum_params
from core_ops import SIGMA_MINUS, TRACE_FUNCTIONAL, choi_positivity, superop_exp, superop_matrix
from errors import ConfigError, InvalidArgumentError, SingularPhaseError, UnsupportedConfigurationError
from noise_paths import ATOM_LAYOUT, GridSpec, sample_path, sample_paths, stack_paths
from trajectory_engine import reference_steps


def test_rate_sum_must_match_gamma():
    with pytest.raises(ConfigError) as info:
        AtomParams(nu0=1.0, nu=1.0, omega_r=1.0, alpha1=0.5, alpha2=0.5)
    assert info.value.field_path == 'atom.alpha1+alpha2+beta3+beta4'


@pytest.mark.parametrize('field, value', [('nu', 0.0), ('omega_r', -1.0), ('gamma', 0.0), ('n_bar', -0.1)])
def test_params_reject_out_of_range(field, value):
    kwargs = dict(nu0=1.0, nu=1.0, omega_r=1.0, gamma=1.0, beta3=1.0)
    kwargs[field] = value
    with pytest.raises(ConfigError):
        AtomParams(**kwargs)


def test_phases_are_wrapped():
    assert wrap_phase(-np.pi) == pytest.approx(np.pi)
    assert wrap_phase(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
    params = atom_params(0.0, 1.0, theta1=-np.pi, theta2=7.0)
    assert params.epsilon1 == pytest.approx(np.pi)
    assert params.homodyne_phase(2) == pytest.approx(7.0 - 2 * np.pi)


def test_homodyne_phase_includes_amplitude_phase():
    params = AtomParams(nu0=1.0, nu=1.0, omega_r=1.0, alpha1=0.5j, beta3=np.sqrt(0.75), epsilon1=0.25)
    assert params.homodyne_phase(1) == pytest.approx(0.25 + np.pi / 2)
    assert params.delta_nu == 0.0


def test_feedback_validation():
    with pytest.raises(ConfigError):
        FeedbackSpec(mode='phase_simplified', k1=1.0, delay=0.1)
    with pytest.raises(ConfigError):
        FeedbackSpec(mode='bang_bang')
    assert not FeedbackSpec(mode='phase', k1=0.0).is_active
    assert FeedbackSpec(mode='amplitude', c=0.5).is_active
    assert FeedbackSpec(mode='phase', k1=1.0).frame_gain == 0.0
    assert FeedbackSpec(mode='phase_simplified', k1=1.0).frame_gain == 1.0


def test_feedback_current_without_bandwidth_is_output_integral():
    fb = FeedbackSpec(mode='phase', k1=1.0, detector_gain=2.0)
    path = sample_path(GridSpec(1.0, 0.01), ATOM_LAYOUT, [1.0] * 4, seed=4)
    j1 = feedback_current_path(path, fb)
    assert np.allclose(j1[1:], 2.0 * np.cumsum(path.wiener(1)), atol=1e-12)


def test_feedback_current_decays():
    fb = FeedbackSpec(mode='phase', k1=1.0, detector_bandwidth=4.0)
    assert feedback_current_update(1.0, 0.0, 0.5, fb) == pytest.approx(np.exp(-1.0))
    with pytest.raises(InvalidArgumentError):
        feedback_current_update(1.0, 0.0, 0.0, fb)


def test_delay_must_be_whole_steps():
    assert delay_steps(FeedbackSpec(mode='phase', k1=1.0, delay=0.3), GridSpec(1.0, 0.1)) == 3
    with pytest.raises(InvalidArgumentError):
        delay_steps(FeedbackSpec(mode='phase', k1=1.0, delay=0.25), GridSpec(1.0, 0.1))


def test_laser_wave_modes():
    params = atom_params(0.0, 2.0)
    assert laser_wave(params, FeedbackSpec(), 0.0, 0.0) == pytest.approx(1.0)
    fb = FeedbackSpec(mode='phase', k1=0.5)
    assert laser_wave(params, fb, 0.0, 0.0, j1_delayed=np.pi) == pytest.approx(np.exp(-0.5j * np.pi))
    assert laser_wave(params, fb, 0.0, 0.0, j1_delayed=None) == pytest.approx(1.0)
    amplitude = FeedbackSpec(mode='amplitude', c=1.0)
    assert laser_wave(params, amplitude, 0.0, 0.0, j1_delayed=2.0) == pytest.approx(2.0)


def test_homodyne_needs_nonzero_wave():
    params = atom_params(0.0, 0.0)
    with pytest.raises(SingularPhaseError):
        oscillator_wave(params, OscillatorSpec(), 1, np.array([0.0]), 0.0, 0.0)
    heterodyne = OscillatorSpec(mode1='heterodyne', nu1=2.0)
    assert abs(oscillator_wave(params, heterodyne, 1, np.array([0.0]), 1.0, 0.0)[0]) == pytest.approx(1.0)


def test_heterodyne_wave_keeps_laser_wave_shape():
    params = atom_params(0.0, 2.0)
    f = np.array([1.0, 1j, -1.0])
    wave = oscillator_wave(params, OscillatorSpec(mode1='heterodyne', nu1=2.0), 1, f, 0.5, 0.0)
    assert wave.shape == f.shape
    assert np.allclose(np.abs(wave), 1.0)


@pytest.mark.parametrize('mode', ['none', 'phase', 'phase_simplified'])
def test_laser_wave_modulus_is_half_rabi_frequency_on_random_paths(mode):
    params = atom_params(1.2, 1.7, 0.4, -0.3, k0=0.6)
    fb = FeedbackSpec() if mode == 'none' else FeedbackSpec(mode=mode, k1=0.8, delay=0.05)
    model = AtomModel(params, fb)
    grid = GridSpec(1.0, 0.01)
    batch = stack_paths(sample_paths(grid, ATOM_LAYOUT, model.reference_intensities(), 3, range(20)))
    for _, coefficients, _, _ in reference_steps(model, batch):
        assert np.allclose(np.abs(coefficients.hamiltonian[:, 0, 1]), 0.5 * params.omega_r, atol=1e-12)


@pytest.mark.parametrize('osc', [OscillatorSpec(), OscillatorSpec(mode1='heterodyne', mode2='heterodyne', nu1=1.5, nu2=-2.0, k_neg1=0.3, k_neg2=0.7)])
def test_oscillator_waves_have_unit_modulus_and_split_the_decay(osc, rng):
    params = atom_params(0.8, 1.3, 0.2, 1.1, alpha1_sq=0.3, alpha2_sq=0.3, beta3_sq=0.2, k0=0.4)
    model = AtomModel(params, FeedbackSpec(mode='phase_simplified', k1=0.5), osc)
    grid = GridSpec(0.5, 0.01)
    batch = stack_paths(sample_paths(grid, ATOM_LAYOUT, model.reference_intensities(), 5, range(10)))
    psi = rng.normal(size=2) + 1j * rng.normal(size=2)
    decay = params.gamma * np.sum(np.abs(SIGMA_MINUS @ psi) ** 2)
    for _, coefficients, _, _ in reference_steps(model, batch):
        for column, j in enumerate(model.diffusive_labels):
            assert np.allclose(np.abs(coefficients.diffusive[:, column, 1, 0]), abs(params.alpha(j)), atol=1e-12)
        channels = np.concatenate([coefficients.diffusive, coefficients.counting], axis=1)
        assert np.allclose(np.sum(np.abs(channels @ psi) ** 2, axis=(-2, -1)), decay, atol=1e-12)


def test_rotating_frame_round_trip(rng):
    rho = random_state(rng)
    assert np.allclose(from_rotating_frame(to_rotating_frame(rho, 0.8), 0.8), rho, atol=1e-12)


@pytest.mark.parametrize('n_bar', [0.0, 0.3])
def test_frame_generator_is_trace_preserving_and_lindblad(n_bar):
    params = atom_params(1.3833, 1.615, -1.9307, -0.154, k0=0.4, n_bar=n_bar)
    fb = FeedbackSpec(mode='phase_simplified', k1=0.3213)
    generator = rotating_frame_generator(params, fb)
    assert np.allclose(TRACE_FUNCTIONAL @ generator.lhat.matrix, 0.0, atol=1e-12)
    h_hat, channels = frame_lindblad_terms(params, fb)
    assert np.allclose(superop_matrix(h_hat, channels).matrix, generator.lhat.matrix, atol=1e-12)


@pytest.mark.parametrize('name', ['mu0', 'mu2', 'mu4'])
def test_frame_semigroup_is_completely_positive(name):
    fb = FeedbackSpec(mode='phase_simplified', k1=SPECTRUM_SETS[name]['k1'])
    lhat = rotating_frame_generator(spectrum_params(name), fb).lhat
    for t in (0.1, 1.0, 10.0):
        assert choi_positivity(superop_exp(lhat, t)) >= -1e-9


def test_frame_generator_rejects_random_frames():
    params = atom_params(0.0, 1.0)
    with pytest.raises(UnsupportedConfigurationError):
        rotating_frame_generator(params, FeedbackSpec(mode='phase', k1=1.0))
    with pytest.raises(UnsupportedConfigurationError):
        rotating_frame_generator(params, FeedbackSpec(), homodyne=False)


def test_model_channels():
    params = atom_params(0.5, 1.0, n_bar=0.0)
    model = AtomModel(params)
    assert model.counting_labels == (3,)
    assert model.feedback_labels == ()
    thermal = AtomModel(atom_params(0.5, 1.0, n_bar=0.2), FeedbackSpec(mode='phase_simplified', k1=0.5))
    assert thermal.counting_labels == (3, 5, 6)
    assert thermal.feedback_labels == (1,)
    assert np.allclose(thermal.counting_bounds(), [0.1, 0.2, 0.2])


def test_model_matches_channel_operators():
    params = atom_params(1.0, 1.5, 0.3, -0.2, k0=0.5)
    fb = FeedbackSpec(mode='phase_simplified', k1=0.4)
    osc = OscillatorSpec(mode2='heterodyne', nu2=3.0, k_neg2=0.2)
    model = AtomModel(params, fb, osc)
    grid = GridSpec(0.5, 0.01)
    path = sample_path(grid, ATOM_LAYOUT, model.reference_intensities(), seed=17)
    state = model.begin(1, grid)
    for n in range(grid.n_steps):
        coefficients = model.coefficients(state, n)
        if n % 10 == 0:
            h, channels = channel_operators(params, osc, fb, path, n * grid.step)
            assert np.allclose(coefficients.hamiltonian[0], h, atol=1e-12)
            assert np.allclose(coefficients.diffusive[0], np.stack(channels[:2]), atol=1e-12)
            assert np.allclose(coefficients.counting[0], channels[2][None], atol=1e-12)
        model.advance(state, n, path.wiener_increments[n][None])


def test_model_rejects_bad_intensities():
    with pytest.raises(InvalidArgumentError):
        AtomModel(atom_params(0.0, 1.0), intensities=[1.0, 1.0, 0.0, 1.0])
