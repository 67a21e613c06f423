"""
Derivative-free search for feedback and drive settings that minimize an analytic
objective: the inelastic spectrum at one frequency, or the long-time Mandel Q of the counter.

Nelder-Mead (scipy) is restarted from Latin-hypercube points of the search box; the
restarts are independent and run in a process pool.
"""

import logging
from dataclasses import dataclass, field, replace
from multiprocessing import Pool

import numpy as np
from scipy.optimize import minimize as minimize_scipy
from scipy.stats import qmc

from analytic_spectra import build_bloch, mandel_q3, spectrum_inelastic
from atom_model import FeedbackSpec, wrap_phase
from errors import ConfigError, InvalidArgumentError

PARAMETERS = ('omega_r', 'delta_nu', 'k1', 'theta1', 'theta2')
PHASES = ('theta1', 'theta2')
OBJECTIVES = ('s_inel', 'q3')
DEFAULT_RESTARTS = 16
SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class SearchProblem:
    """
    Minimize `objective` over `free_params`. Every parameter not searched keeps its value
    from `base` (omega_r, delta_nu, theta1, theta2) or `feedback` (k1). Phases live on the
    circle and are never clipped; their bounds only shape the restart points.
    """

    objective: str
    free_params: tuple
    base: object
    feedback: FeedbackSpec = field(default_factory=FeedbackSpec)
    bounds: dict = field(default_factory=dict, compare=False)
    mu_star: float = 0.0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError('search.objective', f"must be one of {OBJECTIVES}, got '{self.objective}'")
        free = tuple(self.free_params)
        unknown = [name for name in free if name not in PARAMETERS]
        if unknown:
            raise ConfigError('search.free_params', f"unknown parameters {unknown}; choose from {PARAMETERS}")
        if len(set(free)) != len(free):
            raise ConfigError('search.free_params', f"parameters listed twice in {list(free)}")
        if self.feedback.mode not in ('none', 'phase_simplified'):
            raise ConfigError('feedback.mode', "searches run on the closed forms: feedback must be none or phase_simplified")
        object.__setattr__(self, 'free_params', free)

        bounds = {}
        for name in free:
            if name in self.bounds:
                low, high = (float(x) for x in self.bounds[name])
            elif name in PHASES:
                low, high = -np.pi, np.pi
            else:
                raise ConfigError(f'search.{name}_bounds', "a bounded box is required for non-phase parameters")
            if not (np.isfinite(low) and np.isfinite(high)) or low > high:
                raise ConfigError(f'search.{name}_bounds', f"need finite low <= high, got ({low}, {high})")
            if name == 'omega_r' and low < 0:
                raise ConfigError('search.omega_r_bounds', f"Rabi frequency bounds must be >= 0, got ({low}, {high})")
            bounds[name] = (low, high)
        object.__setattr__(self, 'bounds', bounds)

    @property
    def dimension(self):
        return len(self.free_params)

    def point(self, values=None):
        """All five search parameters, with `values` overriding the base ones."""
        point = {
            'omega_r': self.base.omega_r,
            'delta_nu': self.base.delta_nu,
            'k1': self.feedback.frame_gain,
            'theta1': self.base.homodyne_phase(1),
            'theta2': self.base.homodyne_phase(2),
        }
        point.update(values or {})
        for name in PHASES:
            point[name] = float(wrap_phase(point[name]))
        return point

    def realize(self, values=None):
        point = self.point(values)
        params = replace(
            self.base,
            nu0=self.base.nu + point['delta_nu'],
            omega_r=point['omega_r'],
            epsilon1=point['theta1'] - np.angle(self.base.alpha1),
            epsilon2=point['theta2'] - np.angle(self.base.alpha2),
        )
        return params, FeedbackSpec(mode='phase_simplified', k1=point['k1'])

    def evaluate(self, values=None):
        """Objective value; settings where the Bloch system is singular count as +inf."""
        params, fb = self.realize(values)
        try:
            bs = build_bloch(params, fb)
            if self.objective == 's_inel':
                value = spectrum_inelastic(bs, params, self.mu_star)
            else:
                value = mandel_q3(bs, abs(params.beta3) ** 2)[0]
        except ArithmeticError as e:
            logging.debug(f"Objective undefined at {values}: {e}")
            return np.inf
        return float(value) if np.isfinite(value) else np.inf


@dataclass(frozen=True)
class SearchResult:
    best_params: dict
    best_value: float
    trace: np.ndarray
    values: np.ndarray
    points: np.ndarray
    evaluations: int
    restarts: int
    converged: int


class _BudgetExhausted(Exception):
    pass


@dataclass
class _Objective:
    problem: SearchProblem
    names: tuple
    pinned: dict
    budget: int
    values: list = field(default_factory=list)
    points: list = field(default_factory=list)

    def __call__(self, x):
        if len(self.values) >= self.budget:
            raise _BudgetExhausted()
        assignment = dict(self.pinned)
        assignment.update(zip(self.names, (float(v) for v in x)))
        value = self.problem.evaluate(assignment)
        self.values.append(value)
        self.points.append([assignment[name] for name in self.problem.free_params])
        return value


def _restart(job):
    problem, names, pinned, start, budget = job
    objective = _Objective(problem, names, pinned, budget)
    bounds = [(None, None) if name in PHASES else problem.bounds[name] for name in names]
    try:
        result = minimize_scipy(objective, np.asarray(start, dtype=float), method='Nelder-Mead', bounds=bounds,
                                options={'maxfev': budget, 'xatol': SIMPLEX_TOL, 'fatol': np.inf})
        converged = bool(result.success)
    except _BudgetExhausted:
        converged = False
    return objective.values, objective.points, converged


def latin_hypercube_starts(problem, n=DEFAULT_RESTARTS, seed=0):
    """n restart points spread over the box of the free parameters."""
    sampler = qmc.LatinHypercube(d=problem.dimension, seed=np.random.default_rng(seed))
    sample = sampler.random(n)
    low = np.array([problem.bounds[name][0] for name in problem.free_params])
    high = np.array([problem.bounds[name][1] for name in problem.free_params])
    points = low + sample * (high - low)
    return [dict(zip(problem.free_params, row)) for row in points]


def _as_assignment(problem, start):
    if isinstance(start, dict):
        missing = [name for name in problem.free_params if name not in start]
        if missing:
            raise InvalidArgumentError(f"start point lacks {missing}")
        return {name: float(start[name]) for name in problem.free_params}
    start = np.asarray(start, dtype=float)
    if start.shape != (problem.dimension,):
        raise InvalidArgumentError(f"start point needs {problem.dimension} values, got {start.shape}")
    return dict(zip(problem.free_params, start))


def minimize(problem, starts=None, budget=4000, workers=1):
    """
    Nelder-Mead with restarts inside the search box.

    Args:
        problem (SearchProblem): Objective, free parameters and box.
        starts (list): Restart points as dicts or arrays in free_params order;
            DEFAULT_RESTARTS Latin-hypercube points when omitted.
        budget (int): Total objective evaluations, shared evenly by the restarts.
        workers (int): Processes running restarts side by side.

    Returns:
        SearchResult: Best point (all five parameters), best value, the incumbent trace
            (non-increasing), every evaluated value and point.

    Raises:
        InvalidArgumentError: If budget < dimension + 1.
    """
    if budget < problem.dimension + 1:
        raise InvalidArgumentError(f"budget {budget} is below dimension + 1 = {problem.dimension + 1}")
    pinned = {name: low for name, (low, high) in problem.bounds.items() if low == high}
    names = tuple(name for name in problem.free_params if name not in pinned)

    if not names:
        value = problem.evaluate(pinned)
        trace = np.array([value])
        return SearchResult(
            best_params=problem.point(pinned),
            best_value=value,
            trace=trace,
            values=trace,
            points=np.array([[pinned[name] for name in problem.free_params]]),
            evaluations=1,
            restarts=0,
            converged=0
        )

    starts = latin_hypercube_starts(problem) if starts is None else starts
    if not starts:
        raise InvalidArgumentError("at least one start point is required")
    per_restart = max(len(names) + 1, budget // len(starts))
    jobs = []
    for start in starts:
        assignment = _as_assignment(problem, start)
        jobs.append((problem, names, pinned, [assignment[name] for name in names], per_restart))

    logging.info(f"Minimizing {problem.objective} over {list(names)}: {len(jobs)} restarts, "
                 f"{per_restart} evaluations each")
    if workers <= 1 or len(jobs) == 1:
        outcomes = list(map(_restart, jobs))
    else:
        with Pool(processes=min(workers, len(jobs))) as pool:
            outcomes = pool.map(_restart, jobs)

    values, points, converged = [], [], 0
    for index, (restart_values, restart_points, restart_converged) in enumerate(outcomes):
        values.extend(restart_values)
        points.extend(restart_points)
        converged += restart_converged
        best = min(restart_values) if restart_values else np.inf
        logging.debug(f"Restart {index}: {len(restart_values)} evaluations, best {best:.6g}")
        if not restart_converged:
            logging.warning(f"Restart {index} stopped on its evaluation budget before the simplex converged")

    values = np.array(values)
    points = np.array(points)
    best_index = int(np.argmin(values))
    best_params = problem.point(dict(zip(problem.free_params, points[best_index])))
    logging.info(f"Best {problem.objective} = {values[best_index]:.6f} at "
                 + ", ".join(f"{name}={best_params[name]:.4f}" for name in PARAMETERS))
    return SearchResult(
        best_params=best_params,
        best_value=float(values[best_index]),
        trace=np.minimum.accumulate(values),
        values=values,
        points=points,
        evaluations=int(values.size),
        restarts=len(jobs),
        converged=converged
    )
