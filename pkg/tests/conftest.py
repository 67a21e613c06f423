import os
import sys

import numpy as np
import pytest

script_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'scripts'))
sys.path.insert(0, script_dir)

from atom_model import AtomParams  # noqa: E402
from noise_paths import GridSpec  # noqa: E402

CONFIG_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'configs'))

# |alpha1|^2 = |alpha2|^2 = 0.45, |beta3|^2 = 0.1
SPECTRUM_SETS = {
    'mu0': dict(delta_nu=0.0, omega_r=0.366, k1=0.3371, theta1=-np.pi, theta2=-1.5708, mu=0.0,
                s_inel=0.8172, s_el=1.0245),
    'mu2': dict(delta_nu=1.3833, omega_r=1.6150, k1=0.3213, theta1=-1.9307, theta2=-0.1540, mu=2.0,
                s_inel=0.8621, s_el=1.4214),
    'mu4': dict(delta_nu=2.5576, omega_r=3.1708, k1=0.3249, theta1=-1.7863, theta2=-0.0760, mu=4.0,
                s_inel=0.8572, s_el=1.5356),
}

# |alpha1|^2 = |beta3|^2 = 0.45, |alpha2|^2 = 0.1
Q_SETS = {
    'resonant': dict(delta_nu=0.0, omega_r=1.0063, k1=1.0126, theta1=np.pi, q3=-0.5094),
    'resonant_no_feedback': dict(delta_nu=0.0, omega_r=0.7071, k1=0.0, theta1=0.0, q3=-0.3375),
    'detuned': dict(delta_nu=2.0, omega_r=2.3516, k1=2.8515, theta1=2.6914, q3=-0.4356),
    'detuned_no_feedback': dict(delta_nu=2.0, omega_r=2.9155, k1=0.0, theta1=0.0, q3=0.0860),
    # the squeezing settings give super-Poissonian counts
    'squeezing_mu2': dict(delta_nu=1.3833, omega_r=1.6150, k1=0.3213, theta1=-1.9307, q3=0.0602),
    'squeezing_mu4': dict(delta_nu=2.5576, omega_r=3.1708, k1=0.3249, theta1=-1.7863, q3=0.09508),
}


def atom_params(delta_nu, omega_r, theta1=0.0, theta2=0.0, alpha1_sq=0.45, alpha2_sq=0.45, beta3_sq=0.1, **kwargs):
    """Real channel amplitudes, so theta_j = epsilon_j; beta4 takes up what is left of gamma = 1."""
    beta4_sq = 1.0 - alpha1_sq - alpha2_sq - beta3_sq
    beta4_sq = beta4_sq if beta4_sq > 1e-12 else 0.0
    return AtomParams.from_detuning(
        delta_nu, omega_r,
        alpha1=np.sqrt(alpha1_sq), alpha2=np.sqrt(alpha2_sq), beta3=np.sqrt(beta3_sq), beta4=np.sqrt(beta4_sq),
        epsilon1=theta1, epsilon2=theta2, **kwargs
    )


def spectrum_params(name):
    case = SPECTRUM_SETS[name]
    return atom_params(case['delta_nu'], case['omega_r'], case['theta1'], case['theta2'])


def q_params(name):
    case = Q_SETS[name]
    return atom_params(case['delta_nu'], case['omega_r'], case['theta1'], 0.0, alpha2_sq=0.1, beta3_sq=0.45)


def random_hermitian(rng, scale=1.0):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    return scale * 0.5 * (a + a.conj().T)


def random_state(rng):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_grid():
    return GridSpec(t_end=1.0, step=0.01)


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv('QTRAJ_WORKERS', '1')
