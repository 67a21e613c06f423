import numpy as np
import pytest

from atom_model import AtomModel, FeedbackSpec
from conftest import spectrum_params
from core_ops import GROUND, IDENTITY, SIGMA_MINUS, SIGMA_X, projector
from ensemble import EnsembleSpec, SimulatedEnsemble
from errors import ConfigError, InvalidArgumentError, PreconditionViolatedError, UndefinedQError
from noise_paths import GridSpec
from outputs_stats import (
    Constant, CountingOutput, CountTotal, DiffusiveOutput, IntegratedRate, OutputSpec, OutputTotal, build_outputs,
    counting_moments, estimate_mandel_q, estimate_spectrum, exp_filter_kernel, weight_at, weighted_expectation,
    autocorrelation_d
)
from trajectory_engine import ConstantModel


def simulate(model, grid, n_traj, seed=0, measure='reference', initial_state=None, batch_size=None):
    spec = EnsembleSpec(n_traj=n_traj, master_seed=seed, batch_size=batch_size or n_traj, workers=1, measure=measure)
    state = projector(GROUND) if initial_state is None else initial_state
    return SimulatedEnsemble(model=model, grid=grid, initial_state=state, spec=spec)


def driven_records(n_traj=16, grid=GridSpec(2.0, 0.01)):
    model = ConstantModel(hamiltonian=0.5 * SIGMA_X, diffusive=(0.6 * SIGMA_MINUS,), counting=(0.7 * SIGMA_MINUS,))
    return list(simulate(model, grid, n_traj, seed=8).records())


def test_dirac_outputs_are_raw_increments():
    record = driven_records()[0]
    outputs = build_outputs(record, OutputSpec(diffusive=(DiffusiveOutput(1),), counting=(CountingOutput(2),)))
    assert record.outputs is outputs
    assert np.array_equal(outputs.currents[1], record.channel_increments(1))
    assert outputs.increment_form[1]
    assert np.array_equal(outputs.counts[2][:, -1], record.channel_counts(2).sum(axis=1))
    assert outputs.counts[2].shape == (record.size, record.grid.n_steps + 1)


def test_exp_filter_matches_its_kernel():
    record = driven_records()[0]
    filtered = DiffusiveOutput(1, response='exp_filter', detector_gain=1.5, detector_bandwidth=2.0)
    kernel = exp_filter_kernel(1.5, 2.0, record.grid)
    convolved = DiffusiveOutput(1, response='kernel', kernel=kernel)
    a = build_outputs(record, OutputSpec(diffusive=(filtered,), counting=())).currents[1]
    b = build_outputs(record, OutputSpec(diffusive=(convolved,), counting=())).currents[1]
    assert a.shape == (record.size, record.grid.n_steps + 1)
    assert np.allclose(a, b, atol=1e-10)


def test_kernel_length_is_checked():
    record = driven_records()[0]
    bad = DiffusiveOutput(1, response='kernel', kernel=np.ones(3))
    with pytest.raises(InvalidArgumentError):
        build_outputs(record, OutputSpec(diffusive=(bad,), counting=()))


def test_white_noise_is_reproducible():
    record = driven_records()[0]
    noisy = DiffusiveOutput(1, noise='white', noise_amplitude=0.5)
    first = build_outputs(record, OutputSpec(diffusive=(noisy,), counting=(), noise_seed=1)).currents[1]
    again = build_outputs(record, OutputSpec(diffusive=(noisy,), counting=(), noise_seed=1)).currents[1]
    other = build_outputs(record, OutputSpec(diffusive=(noisy,), counting=(), noise_seed=2)).currents[1]
    assert np.array_equal(first, again)
    assert not np.array_equal(first, other)
    assert not np.array_equal(first, record.channel_increments(1))


def test_output_definitions_are_validated():
    with pytest.raises(ConfigError):
        DiffusiveOutput(1, response='boxcar')
    with pytest.raises(ConfigError):
        DiffusiveOutput(1, response='kernel')
    with pytest.raises(ConfigError):
        CountingOutput(3, noise='white')


def test_functionals_and_horizon():
    records = driven_records()
    record = records[0]
    assert np.allclose(OutputTotal(1)(record, 1.0), record.channel_increments(1)[:, :100].sum(axis=1))
    assert np.allclose(CountTotal(2)(record), record.channel_counts(2).sum(axis=1))
    assert np.allclose(IntegratedRate(1)(record, 0.5), record.channel_m(1)[:, :50].sum(axis=1) * 0.01)
    assert np.array_equal(weight_at(record, 1.0), record.weight[:, 100])
    with pytest.raises(InvalidArgumentError):
        weight_at(record, 1.005)


def test_weight_is_a_mean_one_martingale():
    model = ConstantModel(hamiltonian=0.5 * SIGMA_X, diffusive=(0.6 * SIGMA_MINUS,), counting=(0.7 * SIGMA_MINUS,))
    estimate, stderr = weighted_expectation(Constant(1.0), simulate(model, GridSpec(2.0, 0.01), 400, seed=2))
    assert abs(estimate - 1.0) <= 5 * stderr


def test_vacuum_spectrum_is_shot_noise():
    model = ConstantModel(hamiltonian=np.zeros((2, 2)), diffusive=(SIGMA_MINUS,))
    estimate = estimate_spectrum(simulate(model, GridSpec(10.0, 0.01), 400, seed=4), 1, [0.0, 1.0, 3.0])
    assert estimate.T == pytest.approx(10.0)
    assert estimate.mean_weight == pytest.approx(1.0)
    assert np.all(np.abs(estimate.s_inel - 1.0) <= 5 * estimate.stderr)
    assert estimate.s_el_coefficient <= 5 * estimate.s_el_stderr + 1e-3


def test_spectrum_needs_frequencies():
    with pytest.raises(InvalidArgumentError):
        estimate_spectrum(driven_records(), 1, [])


def test_poisson_counts_have_zero_q():
    model = ConstantModel(hamiltonian=np.zeros((2, 2)), counting=(IDENTITY,))
    ensemble = simulate(model, GridSpec(4.0, 0.01), 1000, seed=6)
    estimate = estimate_mandel_q(ensemble, 1, [1.0, 4.0])
    assert np.all(np.abs(estimate.q_values) <= 5 * estimate.stderr)
    assert np.allclose(estimate.m_rate, 1.0, atol=0.2)
    moments = counting_moments(ensemble, 1, 1.0, 2.0)
    assert abs(moments.m - 2.0) <= 5 * moments.m_stderr
    assert abs(moments.v - 4.0) <= 5 * moments.v_stderr


def test_physical_poisson_counts_have_zero_q():
    model = ConstantModel(hamiltonian=np.zeros((2, 2)), counting=(IDENTITY,))
    estimate = estimate_mandel_q(simulate(model, GridSpec(4.0, 0.01), 1000, seed=6, measure='physical'), 1, [4.0])
    assert abs(estimate.q_values[0]) <= 5 * estimate.stderr[0]


def test_q_is_undefined_without_counts():
    model = ConstantModel(hamiltonian=np.zeros((2, 2)), counting=(0.0 * IDENTITY,))
    ensemble = simulate(model, GridSpec(1.0, 0.1), 10, measure='physical')
    with pytest.raises(UndefinedQError):
        estimate_mandel_q(ensemble, 1, [1.0])
    with pytest.raises(InvalidArgumentError):
        estimate_mandel_q(ensemble, 1, [0.0])


def test_two_time_function_of_a_multiplicative_channel():
    model = ConstantModel(hamiltonian=np.zeros((2, 2)), diffusive=(0.5 * IDENTITY,))
    ensemble = simulate(model, GridSpec(2.0, 0.01), 400, seed=9, batch_size=100)
    estimate, stderr = autocorrelation_d(ensemble, 1, 0.5, 1.0)
    assert abs(estimate - 1.0) <= 5 * stderr
    shifted, shifted_stderr = autocorrelation_d(ensemble, 1, 0.5, 1.0, n_inf=0.4)
    assert abs(shifted - 0.6) <= 5 * shifted_stderr


def test_two_time_function_preconditions():
    params = spectrum_params('mu2')
    model = AtomModel(params, FeedbackSpec(mode='phase_simplified', k1=0.3213))
    ensemble = simulate(model, GridSpec(1.0, 0.01), 4)
    with pytest.raises(PreconditionViolatedError):
        autocorrelation_d(ensemble, 1, 0.2, 0.5)
    with pytest.raises(InvalidArgumentError):
        autocorrelation_d(ensemble, 2, 0.5, 0.2)
    with pytest.raises(InvalidArgumentError):
        autocorrelation_d(ensemble, 2, 0.5, 1.0)
    with pytest.raises(InvalidArgumentError):
        autocorrelation_d(list(ensemble.records()), 2, 0.2, 0.5)
    physical = simulate(model, GridSpec(1.0, 0.01), 4, measure='physical')
    with pytest.raises(InvalidArgumentError):
        autocorrelation_d(physical, 2, 0.2, 0.5)
