"""
Driving noises under the reference probability: independent Wiener increments and
Poisson jump times on a fixed time grid, reproducible from a 64-bit seed.

Jump times are sampled exactly (exponential inter-arrival times) and then aligned to
the grid by the step that contains them: a jump at tau belongs to the step
(t_n, t_{n+1}] with n = ceil(tau / step) - 1.
"""

from dataclasses import dataclass

import numpy as np

from errors import InvalidArgumentError

GRID_TOL = 1e-12
MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
# marks >= 1 are never accepted by thinning
MARK_PADDING = 2.0


@dataclass(frozen=True)
class GridSpec:
    t_end: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidArgumentError(f"grid step must be > 0, got {self.step}")
        if self.t_end < 0:
            raise InvalidArgumentError(f"grid t_end must be >= 0, got {self.t_end}")
        n_steps = round(self.t_end / self.step)
        if abs(n_steps * self.step - self.t_end) > GRID_TOL * max(1.0, self.t_end):
            raise InvalidArgumentError(f"t_end={self.t_end} is not a whole number of steps of {self.step}")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.step))

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.step

    def index_of(self, t):
        """Grid index of time t; t must lie on the grid."""
        n = int(round(t / self.step))
        if n < 0 or n > self.n_steps or abs(n * self.step - t) > 1e-9 * max(1.0, abs(t)):
            raise InvalidArgumentError(f"time {t} is not on the grid (step={self.step}, t_end={self.t_end})")
        return n


@dataclass(frozen=True)
class ChannelLayout:
    """Labels of the Wiener processes B_j and of the Poisson processes N_k, in column order."""

    wiener_labels: tuple = (-2, -1, 0, 1, 2)
    counting_labels: tuple = (3, 4, 5, 6)

    def wiener_index(self, label):
        try:
            return self.wiener_labels.index(label)
        except ValueError:
            raise InvalidArgumentError(f"no Wiener channel labelled {label}") from None

    def counting_index(self, label):
        try:
            return self.counting_labels.index(label)
        except ValueError:
            raise InvalidArgumentError(f"no counting channel labelled {label}") from None


ATOM_LAYOUT = ChannelLayout()


def _jump_steps(times, grid):
    if grid.n_steps == 0:
        return np.zeros(0, dtype=int)
    steps = np.ceil(np.asarray(times) / grid.step).astype(int) - 1
    return np.clip(steps, 0, grid.n_steps - 1)


@dataclass(frozen=True)
class NoisePath:
    grid: GridSpec
    layout: ChannelLayout
    wiener_increments: np.ndarray
    jump_times: tuple
    jump_marks: tuple
    reference_intensities: np.ndarray
    seed: int

    def wiener(self, label):
        return self.wiener_increments[:, self.layout.wiener_index(label)]

    def jump_steps(self, label):
        return _jump_steps(self.jump_times[self.layout.counting_index(label)], self.grid)

    def jump_counts(self):
        """Jumps per step and counting channel, shape (n_steps, n_counting)."""
        counts = np.zeros((self.grid.n_steps, len(self.layout.counting_labels)), dtype=int)
        for column, times in enumerate(self.jump_times):
            counts[:, column] = np.bincount(_jump_steps(times, self.grid), minlength=self.grid.n_steps)
        return counts

    def count(self, label, t=None):
        """N_k(t), defaults to t = t_end."""
        times = self.jump_times[self.layout.counting_index(label)]
        t = self.grid.t_end if t is None else t
        return int(np.searchsorted(times, t, side='right'))


def _poisson_arrival_times(rng, intensity, t_end):
    if t_end <= 0:
        return np.zeros(0)
    expected = intensity * t_end
    chunk = int(expected + 5.0 * np.sqrt(expected) + 10)
    times = np.cumsum(rng.standard_exponential(chunk)) / intensity
    while times[-1] <= t_end:
        more = times[-1] + np.cumsum(rng.standard_exponential(chunk)) / intensity
        times = np.concatenate([times, more])
    return times[times <= t_end]


def sample_path(spec, channel_layout, intensities, seed):
    """
    Samples one realization of all driving noises under the reference probability.

    Args:
        spec (GridSpec): Time grid.
        channel_layout (ChannelLayout): Wiener and counting channel labels.
        intensities (sequence): Reference intensity lambda_k > 0 per counting channel.
        seed (int): 64-bit seed; identical seed and spec give a bit-identical path.

    Returns:
        NoisePath: Wiener increments ~ N(0, step) and Poisson jump times with their thinning marks.

    Raises:
        InvalidArgumentError: If an intensity is not positive or the count does not match the layout.
    """
    intensities = np.asarray(intensities, dtype=float)
    if intensities.shape != (len(channel_layout.counting_labels),):
        raise InvalidArgumentError(
            f"expected {len(channel_layout.counting_labels)} intensities, got {intensities.shape}")
    if np.any(intensities <= 0):
        raise InvalidArgumentError(f"reference intensities must be > 0, got {intensities.tolist()}")

    rng = np.random.default_rng(int(seed) & MASK64)
    wiener = rng.normal(0.0, np.sqrt(spec.step), size=(spec.n_steps, len(channel_layout.wiener_labels)))
    jump_times = []
    jump_marks = []
    for intensity in intensities:
        times = _poisson_arrival_times(rng, intensity, spec.t_end)
        jump_times.append(times)
        jump_marks.append(rng.random(times.size))

    return NoisePath(
        grid=spec,
        layout=channel_layout,
        wiener_increments=wiener,
        jump_times=tuple(jump_times),
        jump_marks=tuple(jump_marks),
        reference_intensities=intensities,
        seed=int(seed)
    )


def split_seed(master_seed, trajectory_index):
    """
    Per-trajectory seed: splitmix64 finalizer applied to master + (index + 1) * golden gamma.
    The finalizer is a bijection on 64-bit words, so distinct indices never collide.
    """
    z = (int(master_seed) + (int(trajectory_index) + 1) * GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def sample_paths(spec, channel_layout, intensities, master_seed, indices):
    return [sample_path(spec, channel_layout, intensities, split_seed(master_seed, i)) for i in indices]


@dataclass(frozen=True)
class PathBatch:
    """Several NoisePaths on one grid, stacked along a leading batch axis."""

    grid: GridSpec
    layout: ChannelLayout
    wiener: np.ndarray
    counts: np.ndarray
    marks: np.ndarray
    reference_intensities: np.ndarray
    seeds: tuple

    @property
    def size(self):
        return self.wiener.shape[0]


def stack_paths(paths):
    """
    Stacks paths for side-by-side integration.

    Args:
        paths (NoisePath | sequence | PathBatch): Paths sharing grid, layout and intensities.

    Returns:
        PathBatch: wiener (b, n, n_w), counts (b, n, n_c), marks (b, n, n_c, max jumps per step).
    """
    if isinstance(paths, PathBatch):
        return paths
    if isinstance(paths, NoisePath):
        paths = [paths]
    if not paths:
        raise InvalidArgumentError("at least one path is required")
    first = paths[0]
    for path in paths[1:]:
        if path.grid != first.grid or path.layout != first.layout:
            raise InvalidArgumentError("paths in a batch must share grid and channel layout")
        if not np.array_equal(path.reference_intensities, first.reference_intensities):
            raise InvalidArgumentError("paths in a batch must share reference intensities")

    n_steps = first.grid.n_steps
    n_counting = len(first.layout.counting_labels)
    counts = np.stack([path.jump_counts() for path in paths])
    depth = max(1, int(counts.max())) if counts.size else 1
    marks = np.full((len(paths), n_steps, n_counting, depth), MARK_PADDING)
    for b, path in enumerate(paths):
        for column, times in enumerate(path.jump_times):
            if times.size == 0:
                continue
            steps = _jump_steps(times, first.grid)
            slot = np.arange(steps.size) - np.searchsorted(steps, steps, side='left')
            marks[b, steps, column, slot] = path.jump_marks[column]

    return PathBatch(
        grid=first.grid,
        layout=first.layout,
        wiener=np.stack([path.wiener_increments for path in paths]),
        counts=counts,
        marks=marks,
        reference_intensities=first.reference_intensities,
        seeds=tuple(path.seed for path in paths)
    )


def save_path(path, file_path):
    """
    Dumps a NoisePath to .npz. Layout: header arrays (t_end, step, seed, wiener_labels,
    counting_labels, reference_intensities), then 'wiener' (n_steps, n_wiener) and one
    'jump_times_<label>' / 'jump_marks_<label>' pair per counting channel.
    """
    arrays = {
        't_end': np.array(path.grid.t_end),
        'step': np.array(path.grid.step),
        'seed': np.array(str(path.seed)),
        'wiener_labels': np.array(path.layout.wiener_labels),
        'counting_labels': np.array(path.layout.counting_labels),
        'reference_intensities': path.reference_intensities,
        'wiener': path.wiener_increments,
    }
    for label, times, marks in zip(path.layout.counting_labels, path.jump_times, path.jump_marks):
        arrays[f'jump_times_{label}'] = times
        arrays[f'jump_marks_{label}'] = marks
    np.savez(file_path, **arrays)


def load_path(file_path):
    with np.load(file_path) as data:
        layout = ChannelLayout(
            wiener_labels=tuple(int(x) for x in data['wiener_labels']),
            counting_labels=tuple(int(x) for x in data['counting_labels'])
        )
        return NoisePath(
            grid=GridSpec(t_end=float(data['t_end']), step=float(data['step'])),
            layout=layout,
            wiener_increments=data['wiener'],
            jump_times=tuple(data[f'jump_times_{label}'] for label in layout.counting_labels),
            jump_marks=tuple(data[f'jump_marks_{label}'] for label in layout.counting_labels),
            reference_intensities=data['reference_intensities'],
            seed=int(str(data['seed']))
        )
