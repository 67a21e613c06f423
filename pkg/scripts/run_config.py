"""
Run configuration. An INI file (or the 'config' block of a run manifest) is read strictly:
unknown sections and keys are rejected, and every value is coerced against the dataclasses
of the library modules, so that a bad value is reported with its 'section.key' path.
"""

import configparser
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from atom_model import AtomParams, FeedbackSpec, OscillatorSpec
from core_ops import EXCITED, GROUND, maximally_mixed, projector
from ensemble import EnsembleSpec
from errors import ConfigError, InvalidArgumentError
from noise_paths import GridSpec
from outputs_stats import CountingOutput, DiffusiveOutput, OutputSpec
from trajectory_engine import EngineConfig

INITIAL_STATES = ('stationary', 'ground', 'excited', 'mixed')
FALLBACK_STATES = ('mixed', 'ground', 'excited')
DEFAULT_MU_GRID = (0.0, 6.0, 121)
DEFAULT_Q_GRID = (30.0, 60)
DEFAULT_Q_BURN_IN = 20.0
DEFAULT_SEARCH_BUDGET = 4000
DEFAULT_SEARCH_RESTARTS = 16


def _text(value):
    return value.strip()


def _floats(value):
    return tuple(float(x) for x in value.split(',') if x.strip())


def _names(value):
    return tuple(x.strip() for x in value.split(',') if x.strip())


def _pair(value):
    pair = _floats(value)
    if len(pair) != 2:
        raise ValueError(f"expected 'low, high', got '{value}'")
    return pair


def _complex(value):
    return complex(value.replace(' ', ''))


SCHEMA = {
    'atom': {
        'nu0': float, 'delta_nu': float, 'nu': float, 'omega_r': float, 'theta': float, 'k0': float,
        'gamma': float, 'n_bar': float, 'alpha1': _complex, 'alpha2': _complex, 'beta3': _complex,
        'beta4': _complex, 'epsilon1': float, 'epsilon2': float,
    },
    'feedback': {
        'mode': _text, 'k1': float, 'c': float, 'theta_fb': float, 'delay': float,
        'detector_gain': float, 'detector_bandwidth': float,
    },
    'oscillator': {'mode1': _text, 'mode2': _text, 'nu1': float, 'nu2': float, 'k_neg1': float, 'k_neg2': float},
    'grid': {'t_end': float, 'step': float},
    'engine': {'scheme': _text, 'norm_floor': float, 'store_every': int, 'divergence_tol': float,
               'fallback_state': _text},
    'ensemble': {'n_traj': int, 'master_seed': int, 'batch_size': int, 'measure': _text, 'variant': _text,
                 'initial_state': _text},
    'outputs': {'channel': int, 'response': _text, 'detector_gain': float, 'detector_bandwidth': float,
                'noise': _text, 'noise_amplitude': float, 'counting_channel': int, 'noise_seed': int},
    'spectrum': {'mu_min': float, 'mu_max': float, 'mu_points': int, 'mu_values': _floats, 'horizon': float},
    'qparam': {'channel': int, 't0': float, 't_max': float, 't_points': int, 't_values': _floats},
    'search': {'objective': _text, 'mu_star': float, 'free_params': _names, 'budget': int, 'restarts': int,
               'seed': int, 'omega_r_bounds': _pair, 'delta_nu_bounds': _pair, 'k1_bounds': _pair,
               'theta1_bounds': _pair, 'theta2_bounds': _pair},
}


@dataclass(frozen=True)
class SpectrumRequest:
    mu_grid: np.ndarray
    horizon: float = None
    channel: int = 2


@dataclass(frozen=True)
class QRequest:
    t_grid: np.ndarray
    t0: float = DEFAULT_Q_BURN_IN
    channel: int = 3


@dataclass(frozen=True)
class SearchRequest:
    objective: str
    free_params: tuple
    bounds: dict
    mu_star: float = 0.0
    budget: int = DEFAULT_SEARCH_BUDGET
    restarts: int = DEFAULT_SEARCH_RESTARTS
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    atom: AtomParams
    feedback: FeedbackSpec
    oscillator: OscillatorSpec
    grid: GridSpec
    engine: EngineConfig
    ensemble: EnsembleSpec
    outputs: OutputSpec
    spectrum: SpectrumRequest
    qparam: QRequest
    search: SearchRequest
    initial_state: str
    sections: dict
    source: str = None

    def require(self, section):
        if getattr(self, section) is None:
            raise ConfigError(section, f"section [{section}] is required by this command")
        return getattr(self, section)

    @property
    def seed(self):
        if self.ensemble is not None:
            return self.ensemble.master_seed
        if self.search is not None:
            return self.search.seed
        return None


def _coerce(sections):
    unknown_sections = sorted(set(sections) - set(SCHEMA))
    if unknown_sections:
        raise ConfigError(unknown_sections[0], f"unknown section; expected one of {sorted(SCHEMA)}")
    values = {}
    for section, entries in sections.items():
        schema = SCHEMA[section]
        values[section] = {}
        for key, raw in entries.items():
            if key not in schema:
                raise ConfigError(f'{section}.{key}', "unknown key")
            try:
                values[section][key] = schema[key](str(raw))
            except ValueError as e:
                raise ConfigError(f'{section}.{key}', f"cannot parse '{raw}': {e}") from None
    return values


def _atom(values):
    atom = dict(values.get('atom', {}))
    if not atom:
        raise ConfigError('atom', "section [atom] is required")
    if 'delta_nu' in atom:
        if 'nu0' in atom:
            raise ConfigError('atom.delta_nu', "give nu0 or delta_nu, not both")
        atom['nu0'] = atom.get('nu', 1.0) + atom.pop('delta_nu')
    atom.setdefault('nu', 1.0)
    for required in ('nu0', 'omega_r'):
        if required not in atom:
            raise ConfigError(f'atom.{required}', "is required")
    return AtomParams(**atom)


def _fallback(name):
    if name not in FALLBACK_STATES:
        raise ConfigError('engine.fallback_state', f"must be one of {FALLBACK_STATES}, got '{name}'")
    return {'mixed': maximally_mixed(), 'ground': projector(GROUND), 'excited': projector(EXCITED)}[name]


def _grid(values):
    if 'grid' not in values:
        return None
    grid = values['grid']
    for required in ('t_end', 'step'):
        if required not in grid:
            raise ConfigError(f'grid.{required}', "is required")
    try:
        return GridSpec(**grid)
    except InvalidArgumentError as e:
        raise ConfigError('grid', str(e)) from None


def _outputs(values):
    outputs = dict(values.get('outputs', {}))
    channel = outputs.pop('channel', 2)
    counting_channel = outputs.pop('counting_channel', 3)
    noise_seed = outputs.pop('noise_seed', 0)
    if channel not in (1, 2):
        raise ConfigError('outputs.channel', f"must be a diffusive channel (1 or 2), got {channel}")
    if counting_channel not in (3, 4, 5, 6):
        raise ConfigError('outputs.counting_channel', f"must be a counting channel (3..6), got {counting_channel}")
    diffusive = tuple(DiffusiveOutput(j, **outputs) if j == channel else DiffusiveOutput(j) for j in (1, 2))
    return OutputSpec(diffusive=diffusive, counting=(CountingOutput(counting_channel),), noise_seed=noise_seed), channel


def _spectrum(values, channel):
    spectrum = values.get('spectrum', {})
    if 'mu_values' in spectrum:
        mu_grid = np.array(spectrum['mu_values'])
    else:
        low, high, points = DEFAULT_MU_GRID
        points = spectrum.get('mu_points', points)
        if points < 1:
            raise ConfigError('spectrum.mu_points', f"must be >= 1, got {points}")
        mu_grid = np.linspace(spectrum.get('mu_min', low), spectrum.get('mu_max', high), points)
    if mu_grid.size == 0:
        raise ConfigError('spectrum.mu_values', "needs at least one frequency")
    return SpectrumRequest(mu_grid=mu_grid, horizon=spectrum.get('horizon'), channel=channel)


def _qparam(values):
    qparam = values.get('qparam', {})
    if 't_values' in qparam:
        t_grid = np.array(qparam['t_values'])
    else:
        t_max, points = qparam.get('t_max', DEFAULT_Q_GRID[0]), qparam.get('t_points', DEFAULT_Q_GRID[1])
        if points < 1 or not t_max > 0:
            raise ConfigError('qparam.t_points', f"need t_max > 0 and t_points >= 1, got {t_max}, {points}")
        t_grid = np.linspace(t_max / points, t_max, points)
    if t_grid.size == 0 or np.any(t_grid <= 0):
        raise ConfigError('qparam.t_values', f"windows must be > 0, got {t_grid.tolist()}")
    t0 = qparam.get('t0', DEFAULT_Q_BURN_IN)
    if t0 < 0:
        raise ConfigError('qparam.t0', f"must be >= 0, got {t0}")
    return QRequest(t_grid=t_grid, t0=t0, channel=qparam.get('channel', 3))


def _search(values):
    if 'search' not in values:
        return None
    search = dict(values['search'])
    if 'objective' not in search or 'free_params' not in search:
        raise ConfigError('search', "objective and free_params are required")
    bounds = {key[:-len('_bounds')]: search.pop(key) for key in list(search) if key.endswith('_bounds')}
    for key in ('budget', 'restarts'):
        if key in search and search[key] < 1:
            raise ConfigError(f'search.{key}', f"must be >= 1, got {search[key]}")
    return SearchRequest(bounds=bounds, **search)


def from_sections(sections, source=None):
    """
    Builds a RunConfig from raw string sections.

    Args:
        sections (dict): {section: {key: text}}.
        source (str): Where the sections came from, for messages.

    Returns:
        RunConfig: Validated configuration.

    Raises:
        ConfigError: Unknown section or key, unparsable value or failed validation, with its field path.
    """
    normalized = {section: {key: str(value).strip() for key, value in sorted(entries.items())}
                  for section, entries in sorted(sections.items())}
    values = _coerce(normalized)

    engine = dict(values.get('engine', {}))
    if 'fallback_state' in engine:
        engine['fallback_state'] = _fallback(engine['fallback_state'])
    ensemble = dict(values.get('ensemble', {}))
    initial_state = ensemble.pop('initial_state', 'stationary')
    if initial_state not in INITIAL_STATES:
        raise ConfigError('ensemble.initial_state', f"must be one of {INITIAL_STATES}, got '{initial_state}'")
    if ensemble and 'n_traj' not in ensemble:
        raise ConfigError('ensemble.n_traj', "is required")
    outputs, channel = _outputs(values)

    config = RunConfig(
        atom=_atom(values),
        feedback=FeedbackSpec(**values.get('feedback', {})),
        oscillator=OscillatorSpec(**values.get('oscillator', {})),
        grid=_grid(values),
        engine=EngineConfig(**engine),
        ensemble=EnsembleSpec(**ensemble) if ensemble else None,
        outputs=outputs,
        spectrum=_spectrum(values, channel),
        qparam=_qparam(values),
        search=_search(values),
        initial_state=initial_state,
        sections=normalized,
        source=source
    )
    logging.debug(f"Config {source or '<sections>'} parsed: {sorted(normalized)}")
    return config


def read_sections(path):
    """Raw sections of an INI file, or the 'config' block of a JSON run manifest."""
    if not os.path.exists(path):
        raise ConfigError('config', f"file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    if path.endswith('.json'):
        try:
            manifest = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError('config', f"invalid manifest {path}: {e}") from None
        if 'config' not in manifest:
            raise ConfigError('config', f"manifest {path} has no 'config' block")
        return manifest['config']

    parser = configparser.ConfigParser(strict=True, interpolation=None)
    # keys are case-sensitive
    parser.optionxform = str
    try:
        parser.read_string(text, source=path)
    except configparser.Error as e:
        raise ConfigError('config', f"{path}: {e}") from None
    return {section: dict(parser[section]) for section in parser.sections()}


def load_config(path):
    config = from_sections(read_sections(path), source=path)
    logging.info(f"Loaded config {path}")
    return config


def with_seed(config, seed):
    """The same configuration with ensemble.master_seed (or search.seed) replaced."""
    sections = {section: dict(entries) for section, entries in config.sections.items()}
    if config.ensemble is not None:
        sections['ensemble']['master_seed'] = str(int(seed))
    elif config.search is not None:
        sections['search']['seed'] = str(int(seed))
    else:
        return config
    return from_sections(sections, source=config.source)
