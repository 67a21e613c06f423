"""
Run artifacts: CSV tables with '# key = value' header lines, and the JSON run manifest from
which a run can be reproduced.
"""

import hashlib
import json
import logging
import os

import numpy as np
import pandas as pd

from core_ops import bloch_vector
from ensemble import env_batch_size, env_workers

VERSION = '1.0.0'
UNITS_NOTE = 'frequencies and rates in units of gamma, times in units of 1/gamma'
CSV_FLOAT_FORMAT = '%.17g'
MANIFEST_FILE = 'manifest.json'


def version_string(sections):
    """qtraj-<version>+<first 10 hex digits of the sha1 of the normalized config>."""
    digest = hashlib.sha1(json.dumps(sections, sort_keys=True).encode('utf-8')).hexdigest()
    return f"qtraj-{VERSION}+{digest[:10]}"


def _format(value):
    if isinstance(value, (float, np.floating)):
        return CSV_FLOAT_FORMAT % value
    if isinstance(value, (complex, np.complexfloating)):
        return repr(complex(value))
    if isinstance(value, np.ndarray):
        return ' '.join(_format(x) for x in value.ravel().tolist())
    return str(value)


def parameter_header(config, command):
    header = {'command': command, 'version': version_string(config.sections), 'seed': config.seed}
    for section in ('atom', 'feedback', 'oscillator', 'grid', 'ensemble'):
        for key, value in config.sections.get(section, {}).items():
            header[f'{section}.{key}'] = value
    return header


def write_csv(file_path, frame, header=None):
    """
    Writes a table with a units note and '# key = value' lines on top.

    Args:
        file_path (str): Output CSV path.
        frame (pd.DataFrame): The table; floats are written with 17 significant digits.
        header (dict): Parameters and scalar results to record above the table.
    """
    os.makedirs(os.path.dirname(os.path.abspath(file_path)), exist_ok=True)
    with open(file_path, 'w', encoding='utf-8', newline='') as f:
        f.write(f"# units = {UNITS_NOTE}\n")
        for key, value in (header or {}).items():
            f.write(f"# {key} = {_format(value)}\n")
        frame.to_csv(f, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
    logging.info(f"Saved {len(frame)} rows to {file_path}")
    return file_path


def read_csv(file_path):
    """The table of an artifact written by write_csv, and its header as a dict of strings."""
    header = {}
    with open(file_path, 'r', encoding='utf-8') as f:
        for line in f:
            if not line.startswith('# '):
                break
            key, _, value = line[2:].rstrip('\n').partition(' = ')
            header[key] = value
    return pd.read_csv(file_path, comment='#'), header


def execution_settings(config):
    """Batch size and worker count the run used; the environment fills what the config leaves open."""
    if config.ensemble is not None:
        return {'batch_size': config.ensemble.batch_size, 'workers': config.ensemble.workers}
    return {'batch_size': env_batch_size(), 'workers': env_workers()}


def write_manifest(output_dir, command, config, artifacts):
    manifest = {
        'command': command,
        'version': version_string(config.sections),
        'seed': config.seed,
        'execution': execution_settings(config),
        'config': config.sections,
        'artifacts': sorted(os.path.basename(path) for path in artifacts),
    }
    file_path = os.path.join(output_dir, MANIFEST_FILE)
    with open(file_path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')
    logging.info(f"Saved run manifest to {file_path}")
    return file_path


def _stored_columns(values, indices, increment_form):
    if increment_form:
        values = np.concatenate([np.zeros((values.shape[0], 1)), np.cumsum(values, axis=1)], axis=1)
    return values[:, indices]


def dump_trajectories(output_dir, record, outputs, first_index=0):
    """
    One CSV per trajectory: time, real and imaginary parts of the sigma entries, p, the
    Bloch vector of rho and the outputs at the stored times. Diffusive outputs in increment
    form are written as the integrated current B(t).
    """
    os.makedirs(output_dir, exist_ok=True)
    indices = np.rint(record.times / record.grid.step).astype(int)
    bloch = bloch_vector(record.rho)
    columns = {}
    for label, values in outputs.currents.items():
        columns[f'output_{label}'] = _stored_columns(values, indices, outputs.increment_form[label])
    for label, values in outputs.counts.items():
        columns[f'count_{label}'] = values[:, indices]

    paths = []
    for b in range(record.size):
        table = {'time': record.times}
        for i in range(2):
            for j in range(2):
                table[f'sigma_{i}{j}_re'] = record.sigma[b, :, i, j].real
                table[f'sigma_{i}{j}_im'] = record.sigma[b, :, i, j].imag
        table['p'] = record.weight[b]
        table['bloch_x'], table['bloch_y'], table['bloch_z'] = bloch[b].T
        for name, values in columns.items():
            table[name] = values[b]
        file_path = os.path.join(output_dir, f"trajectory_{first_index + b:05d}.csv")
        header = {'seed': record.seeds[b], 'measure': record.measure,
                  'min_eigen_ratio': float(record.min_eigen_ratio[b])}
        paths.append(write_csv(file_path, pd.DataFrame(table), header))
    return paths
