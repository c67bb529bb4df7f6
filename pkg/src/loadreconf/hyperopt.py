"""Two-step hyperparameter search for the SVR: grid traverse, then particle swarm.

Search happens in *search coordinates*: log10 of the value on log-scaled
axes, the value itself on linear ones.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .forecast import mape
from .parallel import parallel_map
from .svr import EpsilonSVR, Hyperparams, SVRConvergenceError
from .validation import check_is_fitted, check_regression_data

log = logging.getLogger(__name__)

PARAM_NAMES = ("gamma", "c", "epsilon")


@dataclass(frozen=True)
class ParamRange:
    lower: float
    upper: float
    steps: int
    scale: str = "log"

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("lower bound must be below upper bound")
        if self.steps < 1:
            raise ValueError("step count must be >= 1")
        if self.scale not in ("log", "linear"):
            raise ValueError("scale must be 'log' or 'linear'")
        if self.scale == "log" and self.lower <= 0:
            raise ValueError("log scale needs positive bounds")

    def to_search(self, value):
        return np.log10(value) if self.scale == "log" else np.asarray(value, dtype=float)

    def from_search(self, coord):
        return 10.0 ** coord if self.scale == "log" else coord

    def coords(self) -> np.ndarray:
        lo, hi = self.to_search(self.lower), self.to_search(self.upper)
        if self.steps == 1:
            return np.array([lo])
        return np.linspace(lo, hi, self.steps)

    @property
    def step(self) -> float:
        if self.steps == 1:
            return 0.0
        return float((self.to_search(self.upper) - self.to_search(self.lower)) / (self.steps - 1))


@dataclass(frozen=True)
class GridSpec:
    gamma: ParamRange = ParamRange(1e-3, 1e2, 6)
    c: ParamRange = ParamRange(1e-1, 1e3, 5)
    epsilon: ParamRange = ParamRange(1e-3, 1e-1, 4)

    @property
    def ranges(self) -> tuple[ParamRange, ParamRange, ParamRange]:
        return (self.gamma, self.c, self.epsilon)

    @property
    def cardinality(self) -> int:
        return math.prod(r.steps for r in self.ranges)

    def points(self) -> list[np.ndarray]:
        """Cartesian product in search coordinates, gamma varying slowest."""
        axes = [r.coords() for r in self.ranges]
        mesh = np.meshgrid(*axes, indexing="ij")
        return [np.array(p) for p in zip(*(m.ravel() for m in mesh))]

    def to_hyperparams(self, coord) -> Hyperparams:
        vals = [float(r.from_search(c)) for r, c in zip(self.ranges, coord)]
        return Hyperparams(*vals)

    def to_dict(self) -> dict:
        return {n: vars(r) for n, r in zip(PARAM_NAMES, self.ranges)}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(**{n: ParamRange(**data[n]) for n in PARAM_NAMES if n in data})


@dataclass
class GridPoint:
    coord: np.ndarray
    omega: Hyperparams
    score: float = math.inf


@dataclass(frozen=True)
class Region:
    lower: np.ndarray
    upper: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass
class GTAResult:
    points: list[GridPoint]
    selected: list[tuple[GridPoint, Region]]

    @property
    def n_evaluations(self) -> int:
        return len(self.points)

    @property
    def best(self) -> GridPoint:
        return self.selected[0][0]


def _safe_score(evaluator, arg) -> float:
    try:
        score = float(evaluator(arg))
    except (ArithmeticError, ValueError, SVRConvergenceError) as exc:
        log.info("evaluation failed at %s: %s", arg, exc)
        return math.inf
    return score if math.isfinite(score) else math.inf


class _GridTask:
    def __init__(self, evaluator):
        self.evaluator = evaluator

    def __call__(self, omega):
        return _safe_score(self.evaluator, omega)


def grid_traverse(
    grid: GridSpec,
    evaluator: Callable[[Hyperparams], float],
    k: int = 2,
    n_jobs: int = 1,
) -> GTAResult:
    """Score every grid point and keep the ``k`` best with a one-step box around each."""
    if k < 1:
        raise ValueError("k must be >= 1")
    coords = grid.points()
    points = [GridPoint(c, grid.to_hyperparams(c)) for c in coords]
    scores = parallel_map(_GridTask(evaluator), [p.omega for p in points], n_jobs=n_jobs)
    for p, s in zip(points, scores):
        p.score = s
    order = sorted(range(len(points)), key=lambda i: (points[i].score, i))
    lo_all = np.array([r.coords()[0] for r in grid.ranges])
    hi_all = np.array([r.coords()[-1] for r in grid.ranges])
    steps = np.array([r.step for r in grid.ranges])
    selected = []
    for i in order[:k]:
        c = points[i].coord
        region = Region(np.maximum(c - steps, lo_all), np.minimum(c + steps, hi_all))
        selected.append((points[i], region))
    return GTAResult(points, selected)


# ---------------------------------------------------------------- particle swarm

@dataclass(frozen=True)
class PSOSettings:
    n_particles: int = 10
    phi1: float = 2.0
    phi2: float = 2.0
    max_iter: int = 15
    velocity_fraction: float = 0.2  # per-dimension speed cap as a share of region width
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("need at least two particles")
        if not (self.phi1 > 0 and self.phi2 > 0):
            raise ValueError("acceleration coefficients must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")


@dataclass
class Particle:
    alpha: np.ndarray  # position
    nu: np.ndarray  # velocity
    eta: np.ndarray  # personal best position
    eta_score: float = math.inf


def pso_step(particle: Particle, eta_g: np.ndarray, phi1: float, phi2: float,
             theta1: float, theta2: float, vmax: np.ndarray, region: Region) -> None:
    """Velocity then position update for one particle, capped and clamped in place."""
    nu = (particle.nu
          + phi1 * theta1 * (particle.eta - particle.alpha)
          + phi2 * theta2 * (eta_g - particle.alpha))
    particle.nu = np.clip(nu, -vmax, vmax)
    particle.alpha = region.clip(particle.alpha + particle.nu)


@dataclass
class PSOResult:
    best_position: np.ndarray
    best_score: float
    trace: list[float]
    positions: list[np.ndarray] = field(default_factory=list, repr=False)


class _PointTask:
    def __init__(self, objective):
        self.objective = objective

    def __call__(self, x):
        return _safe_score(self.objective, x)


def pso_refine(
    region: Region,
    objective: Callable[[np.ndarray], float],
    settings: PSOSettings = PSOSettings(),
    n_jobs: int = 1,
    stream: int = 0,
    initial_best: tuple[np.ndarray, float] | None = None,
    keep_positions: bool = False,
) -> PSOResult:
    """Refine inside ``region``; ``objective`` takes a search-coordinate vector.

    Particle ``i`` draws from its own generator seeded by ``(seed, stream, i)``,
    so results do not depend on how evaluations are spread over workers.
    ``trace[t]`` is the global best score after iteration ``t`` (``t = 0`` is
    the initial swarm).
    """
    rngs = [np.random.default_rng([settings.seed, stream, i]) for i in range(settings.n_particles)]
    swarm = []
    for rng in rngs:
        x = region.lower + rng.random(len(region.lower)) * region.width
        swarm.append(Particle(alpha=x, nu=np.zeros_like(x), eta=x.copy()))
    vmax = settings.velocity_fraction * region.width
    task = _PointTask(objective)

    if initial_best is not None:
        eta_g, g_score = np.asarray(initial_best[0], dtype=float).copy(), float(initial_best[1])
    else:
        eta_g, g_score = swarm[0].alpha.copy(), math.inf
    trace = []
    positions = []
    for t in range(settings.max_iter + 1):
        if t > 0:
            for p, rng in zip(swarm, rngs):
                th1, th2 = rng.random(2)
                pso_step(p, eta_g, settings.phi1, settings.phi2, th1, th2, vmax, region)
        if keep_positions:
            positions.append(np.array([p.alpha for p in swarm]))
        scores = parallel_map(task, [p.alpha for p in swarm], n_jobs=n_jobs)
        # barrier: personal and global bests only move after all evaluations
        for p, s in zip(swarm, scores):
            if s < p.eta_score:
                p.eta_score = s
                p.eta = p.alpha.copy()
        for p in swarm:
            if p.eta_score < g_score:
                g_score = p.eta_score
                eta_g = p.eta.copy()
        trace.append(g_score)
    return PSOResult(eta_g, g_score, trace, positions)


# ---------------------------------------------------------------- SVR tuning

# SMO update cap per candidate; a fit that hits it scores +inf
TUNING_MAX_ITER = 50_000


class ValidationMAPE:
    """Score hyperparameters by validation MAPE of an SVR fit on the training part."""

    def __init__(self, X_train, y_train, X_val, y_val, **svr_options):
        self.X_train, self.y_train = X_train, y_train
        self.X_val, self.y_val = X_val, y_val
        self.svr_options = {"max_iter": TUNING_MAX_ITER, **svr_options}

    def __call__(self, omega: Hyperparams) -> float:
        model = EpsilonSVR(**omega.as_params(), **self.svr_options).fit(self.X_train, self.y_train)
        return mape(self.y_val, model.predict(self.X_val))


class _CoordObjective:
    def __init__(self, grid: GridSpec, evaluator):
        self.grid = grid
        self.evaluator = evaluator

    def __call__(self, coord):
        return self.evaluator(self.grid.to_hyperparams(coord))


@dataclass
class TuningReport:
    best: Hyperparams
    best_score: float
    gta_best: Hyperparams
    gta_best_score: float
    grid: GridSpec
    grid_scores: list[tuple[Hyperparams, float]]
    regions: list[Region]
    pso_traces: list[list[float]]
    pso_best: list[tuple[Hyperparams, float]]

    @property
    def n_grid_evaluations(self) -> int:
        return len(self.grid_scores)

    def to_dict(self) -> dict:
        def num(x):
            return None if not math.isfinite(x) else float(x)

        return {
            "final": {"omega": vars(self.best), "score": num(self.best_score)},
            "gta_best": {"omega": vars(self.gta_best), "score": num(self.gta_best_score)},
            "grid": self.grid.to_dict(),
            "grid_evaluations": self.n_grid_evaluations,
            "grid_scores": [{"omega": vars(o), "score": num(s)} for o, s in self.grid_scores],
            "regions": [
                {"lower": r.lower.tolist(), "upper": r.upper.tolist()} for r in self.regions
            ],
            "pso": [
                {"trace": [num(s) for s in tr], "best": {"omega": vars(o), "score": num(s)}}
                for tr, (o, s) in zip(self.pso_traces, self.pso_best)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def validation_split(X, y, validation_fraction: float = 0.2):
    """Chronological split: the last ``validation_fraction`` of rows validate."""
    n = len(y)
    n_val = int(round(n * validation_fraction))
    if n_val < 1 or n - n_val < 2:
        raise ValueError(f"dataset of {n} samples too small to split for validation")
    return X[: n - n_val], y[: n - n_val], X[n - n_val:], y[n - n_val:]


def optimize_hyperparams(
    X,
    y,
    grid: GridSpec = GridSpec(),
    pso: PSOSettings = PSOSettings(),
    k: int = 2,
    n_jobs: int = 1,
    validation_fraction: float = 0.2,
    evaluator: Callable[[Hyperparams], float] | None = None,
    svr_options: dict | None = None,
) -> TuningReport:
    """Grid traverse then particle-swarm refinement of each kept region.

    Rows of ``X``/``y`` must be in time order. With ``pso.max_iter == 0`` the
    grid winner is returned unchanged.
    """
    X, y = check_regression_data(X, y)
    if evaluator is None:
        evaluator = ValidationMAPE(*validation_split(X, y, validation_fraction), **(svr_options or {}))
    gta = grid_traverse(grid, evaluator, k=k, n_jobs=n_jobs)
    best_pt = gta.best
    best_coord, best_score = best_pt.coord, best_pt.score
    traces, pso_best = [], []
    if pso.max_iter > 0:
        objective = _CoordObjective(grid, evaluator)
        for stream, (pt, region) in enumerate(gta.selected):
            res = pso_refine(region, objective, pso, n_jobs=n_jobs, stream=stream,
                             initial_best=(pt.coord, pt.score))
            traces.append(res.trace)
            pso_best.append((grid.to_hyperparams(res.best_position), res.best_score))
            if res.best_score < best_score:
                best_coord, best_score = res.best_position, res.best_score
    return TuningReport(
        best=grid.to_hyperparams(best_coord),
        best_score=best_score,
        gta_best=best_pt.omega,
        gta_best_score=best_pt.score,
        grid=grid,
        grid_scores=[(p.omega, p.score) for p in gta.points],
        regions=[r for _, r in gta.selected],
        pso_traces=traces,
        pso_best=pso_best,
    )


class TwoStepSVRSearch(RegressorMixin, BaseEstimator):
    """Tune an :class:`EpsilonSVR` by grid traverse + PSO, then refit on all rows.

    Mirrors :class:`sklearn.model_selection.GridSearchCV`: after ``fit`` the
    tuned model is ``best_estimator_`` and ``predict`` delegates to it.
    """

    def __init__(self, grid=None, pso=None, k=2, n_jobs=1, validation_fraction=0.2,
                 svr_options=None):
        self.grid = grid
        self.pso = pso
        self.k = k
        self.n_jobs = n_jobs
        self.validation_fraction = validation_fraction
        self.svr_options = svr_options

    def fit(self, X, y):
        X, y = check_regression_data(X, y)
        report = optimize_hyperparams(
            X, y,
            grid=self.grid or GridSpec(),
            pso=self.pso or PSOSettings(),
            k=self.k,
            n_jobs=self.n_jobs,
            validation_fraction=self.validation_fraction,
            svr_options=self.svr_options,
        )
        self.report_ = report
        self.best_params_ = report.best
        self.best_score_ = report.best_score
        self.best_estimator_ = EpsilonSVR(**report.best.as_params(), **(self.svr_options or {})).fit(X, y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "best_estimator_")
        return self.best_estimator_.predict(X)


__all__: Sequence[str] = [
    "ParamRange", "GridSpec", "GridPoint", "Region", "GTAResult", "grid_traverse",
    "PSOSettings", "Particle", "PSOResult", "pso_step", "pso_refine", "ValidationMAPE",
    "TuningReport", "optimize_hyperparams", "validation_split", "TwoStepSVRSearch",
]
