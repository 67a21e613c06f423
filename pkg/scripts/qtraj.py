#!/usr/bin/env python3

import argparse
import logging
import os
import sys

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from analytic_spectra import (
    build_bloch, heisenberg_product, mandel_q3, mandel_q3_series, spectrum_elastic_weight, spectrum_inelastic,
    stationary_state
)
from artifacts import dump_trajectories, parameter_header, write_csv, write_manifest
from atom_model import AtomModel, frame_phase, from_rotating_frame
from control_search import PARAMETERS, SearchProblem, latin_hypercube_starts, minimize
from core_ops import EXCITED, GROUND, bloch_vector, maximally_mixed, projector
from ensemble import SimulatedEnsemble, env_workers
from errors import (
    ConfigError, DegenerateSpectrumError, InvalidArgumentError, PreconditionViolatedError,
    UnsupportedConfigurationError
)
from logging_config import setup_logging
from outputs_stats import CountingOutput, OutputSpec, build_outputs, estimate_mandel_q, estimate_spectrum
from run_config import load_config, with_seed

# Load QTRAJ_* overrides from .env file
load_dotenv()

script_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.abspath(os.path.join(script_dir, '..'))

GENERATED_DIR = os.path.join(project_root, 'generated')
COMMANDS = ('spectrum-analytic', 'spectrum-mc', 'qparam-analytic', 'qparam-mc', 'trajectory', 'optimize', 'validate')
LOG_LEVELS = ('debug', 'info', 'warning', 'error')
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
CONFIG_ERRORS = (ConfigError, InvalidArgumentError, UnsupportedConfigurationError, PreconditionViolatedError,
                 DegenerateSpectrumError)


def parse_arguments(argv=None):
    """
    Parses command-line arguments.

    Returns:
        argparse.Namespace: Parsed arguments with default values.
    """
    parser = argparse.ArgumentParser(
        description="Quantum trajectories of a two-level atom under homodyne detection and feedback.")
    parser.add_argument('command', choices=COMMANDS, help='What to compute')
    parser.add_argument('config', type=str, help='INI run configuration or a run manifest (JSON)')
    parser.add_argument('--seed', type=int, default=None, help='Master seed, overrides the config')
    parser.add_argument('--output_dir', type=str, default=GENERATED_DIR, help='Directory for CSV artifacts and the manifest')
    parser.add_argument('--log_level', type=str, default='info', choices=LOG_LEVELS, help='Logging verbosity')
    parser.add_argument('--log_dir', type=str, default=None, help='Directory for log files (default: <project_root>/logs)')
    parser.add_argument('--csv_dump', action='store_true', help='trajectory: also write one CSV per trajectory')
    return parser.parse_args(argv)


def initial_state(config):
    """Lab-frame initial state; 'stationary' is the equilibrium of the rotating-frame generator."""
    if config.initial_state == 'stationary':
        bs = build_bloch(config.atom, config.feedback)
        return from_rotating_frame(stationary_state(bs), frame_phase(config.atom, config.feedback, 0.0, 0.0, 0.0))
    return {'ground': projector(GROUND), 'excited': projector(EXCITED), 'mixed': maximally_mixed()}[config.initial_state]


def build_ensemble(config):
    model = AtomModel(config.atom, config.feedback, config.oscillator)
    return SimulatedEnsemble(
        model=model,
        grid=config.require('grid'),
        initial_state=initial_state(config),
        spec=config.require('ensemble'),
        engine=config.engine
    )


def _csv_path(args, name):
    return os.path.join(args.output_dir, f"{name}.csv")


def run_spectrum_analytic(config, args):
    bs = build_bloch(config.atom, config.feedback)
    mu = config.spectrum.mu_grid
    s_inel = spectrum_inelastic(bs, config.atom, mu)
    frame = pd.DataFrame({'mu': mu, 's_inel': s_inel, 'heisenberg_product': heisenberg_product(bs, config.atom, mu)})
    s_el = spectrum_elastic_weight(bs, config.atom)
    lowest = int(np.argmin(s_inel))
    logging.info(f"S_inel minimum {s_inel[lowest]:.4f} at mu = {mu[lowest]:.4f}; s_el = {s_el:.4f}")
    header = parameter_header(config, args.command)
    header.update({'s_el': s_el, 'v': bs.v, 'n_inf': abs(config.atom.alpha2) * bs.v,
                   'bloch_d': bs.d, 'condition_A': bs.condition})
    return [write_csv(_csv_path(args, 'spectrum_analytic'), frame, header)]


def run_spectrum_mc(config, args):
    ensemble = build_ensemble(config)
    request = config.spectrum
    estimate = estimate_spectrum(ensemble, request.channel, request.mu_grid, request.horizon)
    frame = pd.DataFrame({'mu': estimate.mu_grid, 's_inel': estimate.s_inel, 'stderr': estimate.stderr,
                          's_total': estimate.s_total})
    header = parameter_header(config, args.command)
    header.update({'channel': request.channel, 's_el': estimate.s_el_coefficient,
                   's_el_stderr': estimate.s_el_stderr, 'T': estimate.T, 'n_traj': estimate.n_traj,
                   'mean_weight': estimate.mean_weight})
    return [write_csv(_csv_path(args, 'spectrum_mc'), frame, header)]


def run_qparam_analytic(config, args):
    bs = build_bloch(config.atom, config.feedback)
    beta3_sq = abs(config.atom.beta3) ** 2
    q_inf, rate = mandel_q3(bs, beta3_sq)
    t_grid = config.qparam.t_grid
    frame = pd.DataFrame({'t': t_grid, 'q': mandel_q3_series(bs, beta3_sq, t_grid)})
    logging.info(f"Long-time Q_3 = {q_inf:.4f}, counting rate = {rate:.4f}")
    header = parameter_header(config, args.command)
    header.update({'q_inf': q_inf, 'rate': rate})
    return [write_csv(_csv_path(args, 'qparam_analytic'), frame, header)]


def run_qparam_mc(config, args):
    ensemble = build_ensemble(config)
    request = config.qparam
    estimate = estimate_mandel_q(ensemble, request.channel, request.t_grid, request.t0)
    frame = pd.DataFrame({'t': estimate.t_grid, 'q': estimate.q_values, 'stderr': estimate.stderr,
                          'm_rate': estimate.m_rate})
    header = parameter_header(config, args.command)
    header.update({'channel': request.channel, 't0': request.t0, 'n_traj': estimate.n_traj})
    return [write_csv(_csv_path(args, 'qparam_mc'), frame, header)]


def run_trajectory(config, args):
    ensemble = build_ensemble(config)
    labels = ensemble.model.counting_labels
    spec = OutputSpec(
        diffusive=config.outputs.diffusive,
        counting=tuple(output for output in config.outputs.counting if output.channel in labels)
        or tuple(CountingOutput(label) for label in labels[:1]),
        noise_seed=config.outputs.noise_seed
    )
    weighted_sigma, weight_sum, fallback_sum, worst = None, None, None, 0.0
    paths = []
    first_index = 0
    for record in ensemble.records():
        outputs = build_outputs(record, spec)
        batch_sigma = record.sigma.sum(axis=0)
        weighted_sigma = batch_sigma if weighted_sigma is None else weighted_sigma + batch_sigma
        batch_weight = record.weight.sum(axis=0)
        weight_sum = batch_weight if weight_sum is None else weight_sum + batch_weight
        batch_fallback = record.fallback.sum(axis=0)
        fallback_sum = batch_fallback if fallback_sum is None else fallback_sum + batch_fallback
        worst = min(worst, float(record.min_eigen_ratio.min()))
        if args.csv_dump:
            paths.extend(dump_trajectories(os.path.join(args.output_dir, 'trajectories'), record, outputs, first_index))
        first_index += record.size
        times = record.times

    n_traj = ensemble.spec.n_traj
    mean_state = weighted_sigma / n_traj
    bloch = bloch_vector(mean_state)
    frame = pd.DataFrame({
        'time': times,
        'mean_weight': weight_sum / n_traj,
        'bloch_x': bloch[:, 0],
        'bloch_y': bloch[:, 1],
        'bloch_z': bloch[:, 2],
        'fallback_fraction': fallback_sum / n_traj,
    })
    logging.info(f"Integrated {n_traj} trajectories; worst min eigenvalue / trace = {worst:.3e}")
    header = parameter_header(config, args.command)
    header.update({'measure': ensemble.spec.measure, 'n_traj': n_traj, 'min_eigen_ratio': worst})
    return [write_csv(_csv_path(args, 'trajectory'), frame, header)] + paths


def run_optimize(config, args):
    request = config.require('search')
    problem = SearchProblem(
        objective=request.objective,
        free_params=request.free_params,
        base=config.atom,
        feedback=config.feedback,
        bounds=request.bounds,
        mu_star=request.mu_star
    )
    starts = latin_hypercube_starts(problem, request.restarts, request.seed)
    result = minimize(problem, starts, request.budget, workers=env_workers())
    logging.info(f"Optimization report: {problem.objective} over {list(problem.free_params)}")
    logging.info(f"  best value: {result.best_value:.6f}")
    for name in PARAMETERS:
        flag = 'free' if name in problem.free_params else 'fixed'
        logging.info(f"  {name} = {result.best_params[name]:.6f} ({flag})")
    logging.info(f"  evaluations: {result.evaluations}, restarts converged: {result.converged}/{result.restarts}")

    summary = {'objective': problem.objective, 'mu_star': problem.mu_star, 'best_value': result.best_value}
    summary.update(result.best_params)
    summary.update({'evaluations': result.evaluations, 'restarts': result.restarts, 'converged': result.converged})
    header = parameter_header(config, args.command)
    trace = pd.DataFrame({'evaluation': np.arange(1, result.evaluations + 1), 'value': result.values,
                          'incumbent': result.trace})
    return [
        write_csv(_csv_path(args, 'optimize'), pd.DataFrame([summary]), header),
        write_csv(_csv_path(args, 'optimize_trace'), trace, header),
    ]


def run_validate(config, args):
    AtomModel(config.atom, config.feedback, config.oscillator)
    if config.grid is not None and config.ensemble is not None:
        build_ensemble(config)
    logging.info(f"Config {config.source} is valid")
    return []


COMMAND_HANDLERS = {
    'spectrum-analytic': run_spectrum_analytic,
    'spectrum-mc': run_spectrum_mc,
    'qparam-analytic': run_qparam_analytic,
    'qparam-mc': run_qparam_mc,
    'trajectory': run_trajectory,
    'optimize': run_optimize,
    'validate': run_validate,
}


def run(argv=None):
    """
    Runs one subcommand.

    Returns:
        int: 0 on success, 2 for configuration and argument errors, 3 for numerical failures.
    """
    try:
        args = parse_arguments(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_CONFIG

    setup_logging('qtraj', level=getattr(logging, args.log_level.upper()), log_dir=args.log_dir)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = with_seed(config, args.seed)
        artifacts = COMMAND_HANDLERS[args.command](config, args)
        if args.command != 'validate':
            write_manifest(args.output_dir, args.command, config, artifacts)
    except CONFIG_ERRORS as e:
        logging.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG
    except ArithmeticError as e:
        logging.error(f"Numerical failure, {type(e).__name__}: {e}")
        return EXIT_NUMERICAL
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
