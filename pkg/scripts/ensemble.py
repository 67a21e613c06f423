"""
Monte Carlo ensembles. Trajectory i always runs on the seed split_seed(master_seed, i), trajectories
are cut into fixed batches, every batch is reduced to a MomentAccumulator inside a worker, and the
accumulators are merged in batch order. Results depend on (master_seed, n_traj, batch_size) only,
never on the number of worker processes.
"""

import logging
import os
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np
from dotenv import load_dotenv

from errors import ConfigError, InvalidArgumentError
from noise_paths import sample_paths, stack_paths
from trajectory_engine import EngineConfig, TrajectoryRecord, integrate_linear_sme, integrate_nonlinear, thinning_envelope

# Load QTRAJ_* overrides from .env file
load_dotenv()

DEFAULT_BATCH_SIZE = 64
MEASURES = ('reference', 'physical')
VARIANTS = ('sse', 'sme')


def _env_int(name, default):
    raw = os.getenv(name)
    if raw is None or raw.strip() == '':
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f'env.{name}', f"must be an integer, got '{raw}'") from None
    if value < 1:
        raise ConfigError(f'env.{name}', f"must be >= 1, got {value}")
    return value


def env_workers():
    return _env_int('QTRAJ_WORKERS', os.cpu_count() or 1)


def env_batch_size():
    return _env_int('QTRAJ_BATCH_SIZE', DEFAULT_BATCH_SIZE)


@dataclass(frozen=True)
class EnsembleSpec:
    n_traj: int
    master_seed: int = 0
    batch_size: int = None
    workers: int = None
    measure: str = 'reference'
    variant: str = 'sme'

    def __post_init__(self):
        if int(self.n_traj) != self.n_traj or self.n_traj < 1:
            raise ConfigError('ensemble.n_traj', f"must be an integer >= 1, got {self.n_traj}")
        if self.measure not in MEASURES:
            raise ConfigError('ensemble.measure', f"must be one of {MEASURES}, got '{self.measure}'")
        if self.variant not in VARIANTS:
            raise ConfigError('ensemble.variant', f"must be one of {VARIANTS}, got '{self.variant}'")
        if self.batch_size is None:
            object.__setattr__(self, 'batch_size', env_batch_size())
        if self.workers is None:
            object.__setattr__(self, 'workers', env_workers())
        if self.batch_size < 1:
            raise ConfigError('ensemble.batch_size', f"must be >= 1, got {self.batch_size}")
        if self.workers < 1:
            raise ConfigError('ensemble.workers', f"must be >= 1, got {self.workers}")

    def batches(self):
        """Trajectory index ranges, one per task."""
        return [range(start, min(start + self.batch_size, self.n_traj))
                for start in range(0, self.n_traj, self.batch_size)]


@dataclass
class MomentAccumulator:
    """
    First and second moments of real feature rows, one row per trajectory.
    Merging is associative; merging in a fixed order is bit-reproducible.
    """

    count: int = 0
    total: np.ndarray = None
    cross: np.ndarray = None

    def add(self, rows):
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if self.total is None:
            self.total = np.zeros(rows.shape[1])
            self.cross = np.zeros((rows.shape[1], rows.shape[1]))
        if rows.shape[1] != self.total.size:
            raise InvalidArgumentError(f"expected {self.total.size} features, got {rows.shape[1]}")
        self.count += rows.shape[0]
        self.total = self.total + rows.sum(axis=0)
        self.cross = self.cross + rows.T @ rows
        return self

    def merge(self, other):
        if other.count == 0:
            return MomentAccumulator(self.count, self.total, self.cross)
        if self.count == 0:
            return MomentAccumulator(other.count, other.total, other.cross)
        return MomentAccumulator(self.count + other.count, self.total + other.total, self.cross + other.cross)

    @property
    def mean(self):
        if self.count == 0:
            raise InvalidArgumentError("empty accumulator")
        return self.total / self.count

    def covariance(self):
        """Sample covariance of the rows (ddof = 1)."""
        if self.count < 2:
            raise InvalidArgumentError("need at least two trajectories for a covariance")
        mean = self.mean
        return (self.cross - self.count * np.outer(mean, mean)) / (self.count - 1)

    def mean_covariance(self):
        return self.covariance() / self.count

    def stderr(self):
        return np.sqrt(np.maximum(np.diag(self.mean_covariance()), 0.0))


@dataclass(frozen=True)
class RecordReducer:
    """Adapts a record reducer (TrajectoryRecord -> rows) to the path-reducer interface."""

    reducer: object

    def __call__(self, ensemble, batch):
        return self.reducer(ensemble.integrate(batch))


def _reduce_job(job):
    ensemble, path_reducer, indices = job
    batch = ensemble.sample_batch(indices)
    return MomentAccumulator().add(path_reducer(ensemble, batch))


@dataclass
class SimulatedEnsemble:
    """
    Trajectories of one model integrated on demand. Under the reference measure the linear SME
    is integrated and estimators weight by p(T); under the physical measure the nonlinear
    equation ('sse' or 'sme' variant) is integrated and every trajectory has weight 1.
    """

    model: object
    grid: object
    initial_state: np.ndarray
    spec: EnsembleSpec
    engine: EngineConfig = field(default_factory=EngineConfig)

    @property
    def measure(self):
        return self.spec.measure

    def intensities(self):
        if self.spec.measure == 'reference':
            return self.model.reference_intensities()
        return thinning_envelope(self.model)

    def sample_batch(self, indices):
        paths = sample_paths(self.grid, self.model.layout, self.intensities(), self.spec.master_seed, indices)
        return stack_paths(paths)

    def integrate(self, batch):
        if self.spec.measure == 'reference':
            return integrate_linear_sme(self.model, batch, self.initial_state, self.engine)
        return integrate_nonlinear(self.model, batch, self.initial_state, self.engine, self.spec.variant)

    def records(self):
        """Integrated batches in order, in this process."""
        for indices in self.spec.batches():
            yield self.integrate(self.sample_batch(indices))

    def reduce(self, reducer):
        return self.reduce_paths(RecordReducer(reducer))

    def reduce_paths(self, path_reducer):
        """
        Runs path_reducer(ensemble, batch) -> rows on every batch and merges the results in order.

        Args:
            path_reducer (callable): Must be picklable when more than one worker is used.

        Returns:
            MomentAccumulator: Moments over all n_traj trajectories.
        """
        jobs = [(self, path_reducer, indices) for indices in self.spec.batches()]
        workers = min(self.spec.workers, len(jobs))
        logging.info(f"Running {self.spec.n_traj} trajectories ({self.spec.measure} measure) "
                     f"in {len(jobs)} batches on {workers} worker(s)")
        step = max(1, len(jobs) // 10)
        accumulator = MomentAccumulator()

        def collect(results):
            nonlocal accumulator
            for done, part in enumerate(results, start=1):
                accumulator = accumulator.merge(part)
                if done % step == 0 or done == len(jobs):
                    logging.info(f"Batches done: {done}/{len(jobs)}")

        if workers <= 1:
            collect(map(_reduce_job, jobs))
        else:
            with Pool(processes=workers) as pool:
                collect(pool.imap(_reduce_job, jobs))
        return accumulator


@dataclass
class RecordEnsemble:
    """Already integrated trajectories held in memory."""

    records: list

    @property
    def measure(self):
        measures = {record.measure for record in self.records}
        if len(measures) != 1:
            raise InvalidArgumentError(f"records mix measures {sorted(measures)}")
        return measures.pop()

    def reduce(self, reducer):
        accumulator = MomentAccumulator()
        for record in self.records:
            accumulator = accumulator.merge(MomentAccumulator().add(reducer(record)))
        return accumulator

    def reduce_paths(self, path_reducer):
        raise InvalidArgumentError("this estimator re-integrates paths and needs a SimulatedEnsemble")


def as_ensemble(ensemble):
    """Accepts a SimulatedEnsemble, a RecordEnsemble, one TrajectoryRecord or a sequence of them."""
    if isinstance(ensemble, (SimulatedEnsemble, RecordEnsemble)):
        return ensemble
    if isinstance(ensemble, TrajectoryRecord):
        return RecordEnsemble([ensemble])
    return RecordEnsemble(list(ensemble))
