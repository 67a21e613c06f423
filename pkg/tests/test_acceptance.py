"""
Monte Carlo checks of the atom under feedback against exact identities and the closed forms.
The default versions are small with wide but honest bands; the `slow` ones run at full size.
"""

import numpy as np
import pytest

from analytic_spectra import build_bloch, correlation_d2, mandel_q3_series, spectrum_inelastic, stationary_state
from atom_model import AtomModel, FeedbackSpec, frame_phase, from_rotating_frame, rotating_frame_generator
from conftest import Q_SETS, SPECTRUM_SETS, q_params, spectrum_params
from core_ops import GROUND, SIGMA_PLUS, projector, superop_exp
from ensemble import EnsembleSpec, SimulatedEnsemble
from noise_paths import GridSpec
from outputs_stats import (
    Constant, CountTotal, OutputTotal, autocorrelation_d, estimate_mandel_q, estimate_spectrum, weighted_expectation
)


def feedback_for(case):
    return FeedbackSpec(mode='phase_simplified', k1=case['k1'])


def stationary_lab_state(params, fb):
    return from_rotating_frame(stationary_state(build_bloch(params, fb)), frame_phase(params, fb, 0.0, 0.0, 0.0))


def atom_ensemble(params, fb, grid, n_traj, seed, measure='reference', intensities=None, variant='sme'):
    model = AtomModel(params, fb, intensities=intensities)
    spec = EnsembleSpec(n_traj=n_traj, master_seed=seed, batch_size=250, workers=1, measure=measure,
                        variant=variant)
    return SimulatedEnsemble(model=model, grid=grid, initial_state=stationary_lab_state(params, fb), spec=spec)


def agree(a, b, sigmas):
    (x, sx), (y, sy) = a, b
    return abs(x - y) <= sigmas * np.hypot(sx, sy)


def mu2_setup():
    return spectrum_params('mu2'), feedback_for(SPECTRUM_SETS['mu2'])


def test_weight_is_a_martingale_under_feedback():
    params, fb = mu2_setup()
    ensemble = atom_ensemble(params, fb, GridSpec(5.0, 0.01), 500, seed=31)
    estimate, stderr = weighted_expectation(Constant(1.0), ensemble)
    assert abs(estimate - 1.0) <= 4 * stderr


@pytest.mark.parametrize('functional', [OutputTotal(1), OutputTotal(2), CountTotal(3)], ids=repr)
def test_linear_and_nonlinear_unravellings_agree(functional):
    params, fb = mu2_setup()
    grid = GridSpec(2.0, 0.005)
    weighted = weighted_expectation(functional, atom_ensemble(params, fb, grid, 1000, seed=11))
    physical = weighted_expectation(functional, atom_ensemble(params, fb, grid, 1000, seed=12, measure='physical'))
    assert agree(weighted, physical, 4)


def test_reference_intensities_are_a_gauge():
    params, fb = mu2_setup()
    grid = GridSpec(2.0, 0.005)
    base = atom_ensemble(params, fb, grid, 1000, seed=13)
    doubled = atom_ensemble(params, fb, grid, 1000, seed=14, intensities=2.0 * base.model.reference_intensities())
    for functional in (CountTotal(3), OutputTotal(2)):
        assert agree(weighted_expectation(functional, base), weighted_expectation(functional, doubled), 4)


def open_loop_mean_state(params, t_end):
    """Lab-frame solution of the master equation from the ground state, k0 = k1 = 0."""
    rotating = superop_exp(rotating_frame_generator(params, FeedbackSpec()).lhat, t_end).apply(projector(GROUND))
    return from_rotating_frame(rotating, frame_phase(params, FeedbackSpec(), t_end, 0.0, 0.0))


def final_states(params, grid, n_traj, seed):
    spec = EnsembleSpec(n_traj=n_traj, master_seed=seed, batch_size=250, workers=1, measure='reference')
    ensemble = SimulatedEnsemble(model=AtomModel(params), grid=grid, initial_state=projector(GROUND), spec=spec)
    return np.concatenate([record.sigma[:, -1] for record in ensemble.records()])


def assert_mean_state(params, grid, n_traj, seed, sigmas):
    final = final_states(params, grid, n_traj, seed)
    expected = open_loop_mean_state(params, grid.t_end)
    for part in (np.real, np.imag):
        stderr = part(final).std(axis=0) / np.sqrt(n_traj)
        assert np.all(np.abs(part(final).mean(axis=0) - part(expected)) <= sigmas * stderr + 1e-3)


def stationary_homodyne_mean(params, fb, j):
    rho_ss = stationary_state(build_bloch(params, fb))
    return 2.0 * abs(params.alpha(j)) * np.real(np.exp(-1j * params.homodyne_phase(j)) * np.trace(SIGMA_PLUS @ rho_ss))


def test_weighted_mean_state_solves_master_equation():
    assert_mean_state(spectrum_params('mu2'), GridSpec(2.0, 0.005), 500, seed=32, sigmas=4)


@pytest.mark.parametrize('j', [1, 2])
def test_homodyne_output_matches_stationary_current(j):
    params, fb = mu2_setup()
    ensemble = atom_ensemble(params, fb, GridSpec(2.0, 0.005), 1000, seed=33)
    estimate, stderr = weighted_expectation(OutputTotal(j), ensemble)
    assert abs(estimate - 2.0 * stationary_homodyne_mean(params, fb, j)) <= 4 * stderr + 1e-3


def test_count_matches_stationary_rate():
    params, fb = mu2_setup()
    ensemble = atom_ensemble(params, fb, GridSpec(2.0, 0.005), 1000, seed=34)
    excited = stationary_state(build_bloch(params, fb))[0, 0].real
    estimate, stderr = weighted_expectation(CountTotal(3), ensemble)
    assert abs(estimate - 2.0 * abs(params.beta3) ** 2 * excited) <= 4 * stderr + 1e-3


def test_channel_two_correlation_matches_closed_form():
    params, fb = mu2_setup()
    ensemble = atom_ensemble(params, fb, GridSpec(1.5, 0.01), 600, seed=35)
    rho_ss = stationary_state(build_bloch(params, fb))
    estimate, stderr = autocorrelation_d(ensemble, 2, 0.5, 1.0)
    assert abs(estimate - correlation_d2(params, fb, rho_ss, 0.5, 1.0)) <= 4 * stderr + 1e-3


def test_channel_two_correlation_is_stationary():
    params, fb = mu2_setup()
    rho_ss = stationary_state(build_bloch(params, fb))
    assert correlation_d2(params, fb, rho_ss, 0.2, 0.7) == pytest.approx(correlation_d2(params, fb, rho_ss, 1.1, 1.6))
    ensemble = atom_ensemble(params, fb, GridSpec(1.7, 0.01), 600, seed=36)
    assert agree(autocorrelation_d(ensemble, 2, 0.2, 0.7), autocorrelation_d(ensemble, 2, 1.1, 1.6), 4)


def test_estimated_q_is_an_intensity_gauge():
    params, fb = mu2_setup()
    grid = GridSpec(3.0, 0.005)
    base = atom_ensemble(params, fb, grid, 1000, seed=37)
    doubled = atom_ensemble(params, fb, grid, 1000, seed=38, intensities=2.0 * base.model.reference_intensities())
    a, b = estimate_mandel_q(base, 3, [2.0], t0=1.0), estimate_mandel_q(doubled, 3, [2.0], t0=1.0)
    assert agree((a.q_values[0], a.stderr[0]), (b.q_values[0], b.stderr[0]), 4)


@pytest.mark.slow
def test_weighted_mean_state_full_size():
    assert_mean_state(spectrum_params('mu2'), GridSpec(10.0, 0.005), 5000, seed=6, sigmas=3)


@pytest.mark.slow
def test_martingale_full_size():
    params, fb = mu2_setup()
    ensemble = atom_ensemble(params, fb, GridSpec(20.0, 0.005), 5000, seed=1)
    estimate, stderr = weighted_expectation(Constant(1.0), ensemble)
    assert abs(estimate - 1.0) <= 3 * stderr


@pytest.mark.slow
def test_unravellings_agree_full_size():
    params, fb = mu2_setup()
    grid = GridSpec(10.0, 0.005)
    weighted = atom_ensemble(params, fb, grid, 2000, seed=2)
    physical = atom_ensemble(params, fb, grid, 2000, seed=3, measure='physical')
    for functional in (OutputTotal(1), CountTotal(3)):
        assert agree(weighted_expectation(functional, weighted), weighted_expectation(functional, physical), 3)
    a = estimate_spectrum(weighted, 2, [2.0])
    b = estimate_spectrum(physical, 2, [2.0])
    assert agree((a.s_inel[0], a.stderr[0]), (b.s_inel[0], b.stderr[0]), 3)


@pytest.mark.slow
def test_spectrum_matches_closed_form():
    params, fb = mu2_setup()
    mu = np.arange(5.0)
    ensemble = atom_ensemble(params, fb, GridSpec(40.0, 0.005), 10000, seed=4, measure='physical')
    estimate = estimate_spectrum(ensemble, 2, mu)
    expected = spectrum_inelastic(build_bloch(params, fb), params, mu)
    assert np.all(np.abs(estimate.s_inel - expected) <= np.maximum(3 * estimate.stderr, 0.02))


@pytest.mark.slow
def test_mandel_q_matches_closed_form():
    case = Q_SETS['resonant']
    params, fb = q_params('resonant'), feedback_for(case)
    ensemble = atom_ensemble(params, fb, GridSpec(50.0, 0.005), 10000, seed=5, measure='physical')
    estimate = estimate_mandel_q(ensemble, 3, [30.0], t0=20.0)
    expected = mandel_q3_series(build_bloch(params, fb), 0.45, [30.0])[0]
    assert abs(estimate.q_values[0] - expected) <= 3 * estimate.stderr[0]
