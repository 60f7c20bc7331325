"""Decomposition of a target spectral density into Lorentzian peaks.

The target is sampled on a Gauss-Legendre grid restricted to a band around the
spin resonance.  A trial set of peaks ``(kappa_m, Gamma_m, nu_m)`` is scored by
the summed relative deviation of the discretized couplings ``V_n^2``; the
correlation-based score additionally carries one inverse temperature ``beta_m``
per peak and checks the real- and imaginary-part conditions separately.

The optimizer is :func:`scipy.optimize.differential_evolution` run with a fixed
seed and a few restarts, followed by a bounded Nelder-Mead polish.  The
constraint ``Gamma_m <= nu_m / 2`` is enforced by projection, so every
evaluated candidate is a physically valid set of Lindblad oscillators.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .models import Leggett, LorentzianSum, lorentzian_density

DEFAULT_GRID_POINTS = 64


class FitBudgetError(RuntimeError):
    """The evaluation budget ran out before any feasible candidate was scored."""


class _BudgetExhausted(Exception):
    pass


@dataclass(frozen=True)
class QuadGrid:
    """Gauss-Legendre nodes and weights on ``[omega_l, omega_r]``."""

    omega_l: float
    omega_r: float
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if not (self.omega_l >= 0 and self.omega_r > self.omega_l):
            raise ValueError(f"invalid band [{self.omega_l}, {self.omega_r}]")
        if self.nodes.shape != self.weights.shape:
            raise ValueError("nodes and weights must have equal length")

    @property
    def n_points(self) -> int:
        return len(self.nodes)


def legendre_grid(n: int, omega_l: float, omega_r: float) -> QuadGrid:
    """Gauss-Legendre rule with ``n`` nodes affinely mapped onto ``[omega_l, omega_r]``."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    if not (math.isfinite(omega_l) and math.isfinite(omega_r)) or not omega_r > omega_l:
        raise ValueError(f"invalid interval [{omega_l}, {omega_r}]")
    if omega_l < 0:
        raise ValueError("omega_l must be non-negative")
    x, w = np.polynomial.legendre.leggauss(int(n))
    half = 0.5 * (omega_r - omega_l)
    return QuadGrid(float(omega_l), float(omega_r), 0.5 * (omega_r + omega_l) + half * x,
                    half * w)


def discretize_density(J: Callable, grid: QuadGrid) -> np.ndarray:
    """Discrete couplings ``V_n^2 = J(omega_n) w_n / pi``."""
    return np.asarray(J(grid.nodes), dtype=float) * grid.weights / np.pi


def _relative_residual(target: np.ndarray, trial: np.ndarray) -> float:
    mask = target != 0
    if not np.all(mask):
        warnings.warn(f"{int(np.sum(~mask))} grid point(s) with zero target excluded",
                      RuntimeWarning, stacklevel=3)
    return float(np.sum(np.abs(target[mask] - trial[mask]) / np.abs(target[mask])))


def sd_objective(target_v2: np.ndarray, trial_peaks, grid: QuadGrid) -> float:
    """``sum_n |V_n^2 - V~_n^2| / |V_n^2|`` for the Lorentzian sum ``trial_peaks``.

    ``trial_peaks`` is a sequence of ``(kappa, gamma, nu)`` triples.  Grid points
    with a zero target are dropped with a ``RuntimeWarning``.
    """
    trial = lorentzian_density(trial_peaks, grid.nodes) * grid.weights / np.pi
    return _relative_residual(np.asarray(target_v2, dtype=float), trial)


def _tanh_half(beta: float, omega):
    if math.isinf(beta):
        return np.ones_like(np.asarray(omega, dtype=float))
    return np.tanh(0.5 * beta * np.asarray(omega, dtype=float))


@dataclass(frozen=True)
class CorrResiduals:
    """Real- and imaginary-part residuals of the correlation-based fit."""

    real: float
    imag: float

    @property
    def total(self) -> float:
        return self.real + self.imag


def corr_residuals(target: Callable, beta: float, trial_peaks, grid: QuadGrid) -> CorrResiduals:
    """Both conditions of the correlation-based fit, each a summed relative residual.

    ``trial_peaks`` holds ``(kappa, gamma, nu, beta_m)`` rows.  The real-part
    condition is ``J(w) ~ sum_m tanh(beta w/2) / tanh(beta_m nu_m/2) J_m(w)``;
    the imaginary-part condition is ``J(w) ~ sum_m J_m(w)``.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    rows = [tuple(float(v) for v in row) for row in trial_peaks]
    for row in rows:
        if len(row) != 4:
            raise ValueError("trial peaks need (kappa, gamma, nu, beta_m)")
        if not row[3] > 0:
            raise ValueError("beta_m must be positive")
    w = grid.nodes
    scale = grid.weights / np.pi
    target_v2 = np.asarray(target(w), dtype=float) * scale
    real = np.zeros_like(w)
    imag = np.zeros_like(w)
    tb = _tanh_half(beta, w)
    for kappa, gamma, nu, beta_m in rows:
        jm = lorentzian_density([(kappa, gamma, nu)], w)
        imag += jm
        real += tb / float(_tanh_half(beta_m, nu)) * jm
    return CorrResiduals(_relative_residual(target_v2, real * scale),
                         _relative_residual(target_v2, imag * scale))


def corr_objective(target: Callable, beta: float, trial_peaks, grid: QuadGrid) -> float:
    """Equally weighted sum of the two :func:`corr_residuals` terms."""
    return corr_residuals(target, beta, trial_peaks, grid).total


@dataclass
class FitProblem:
    """Bounded Lorentzian-decomposition problem.

    ``kappa_bounds``, ``gamma_bounds`` and ``nu_bounds`` apply to every peak.
    ``beta`` is the target inverse temperature for the correlation objective;
    ``beta_bounds`` bounds the per-peak ``beta_m`` there.
    """

    target: Callable
    band: tuple[float, float]
    n_peaks: int
    kappa_bounds: tuple[float, float]
    gamma_bounds: tuple[float, float]
    nu_bounds: tuple[float, float]
    beta: float = math.inf
    beta_bounds: tuple[float, float] = (0.1, 100.0)
    n_grid: int = DEFAULT_GRID_POINTS
    budget: int = 60000
    seed: int = 0
    restarts: int = 3

    def __post_init__(self):
        if self.n_peaks < 1:
            raise ValueError("n_peaks must be at least 1")
        for name in ("kappa_bounds", "gamma_bounds", "nu_bounds", "beta_bounds"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValueError(f"{name} must be a finite increasing pair")
        if self.kappa_bounds[0] < 0 or self.nu_bounds[0] <= 0 or self.beta_bounds[0] <= 0:
            raise ValueError("kappa, nu and beta bounds must be positive")
        if self.gamma_bounds[0] <= 0:
            raise ValueError("gamma lower bound must be positive")
        if self.gamma_bounds[0] > self.nu_bounds[1] / 2:
            raise ValueError("no gamma satisfies gamma <= nu/2 within the bounds")
        if self.budget < 1:
            raise ValueError("budget must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        self.grid = legendre_grid(self.n_grid, *self.band)


@dataclass
class FitResult:
    """Fitted peaks sorted by ``nu``; ``betas`` is set for the correlation objective."""

    peaks: list[tuple[float, float, float]]
    objective: float
    n_evals: int
    constraints_ok: bool
    betas: list[float] | None = None
    history: list[float] = field(default_factory=list)
    residuals: CorrResiduals | None = None

    def as_rows(self) -> list[dict]:
        rows = []
        for i, (k, g, n) in enumerate(self.peaks):
            row = {"kappa": k, "gamma": g, "nu": n}
            if self.betas is not None:
                row["beta"] = self.betas[i]
            rows.append(row)
        return rows

    def density(self) -> LorentzianSum:
        return LorentzianSum(tuple(self.peaks))


def _bounds(problem: FitProblem, with_beta: bool):
    per_peak = [problem.kappa_bounds, problem.gamma_bounds, problem.nu_bounds]
    if with_beta:
        per_peak.append(problem.beta_bounds)
    return [b for _ in range(problem.n_peaks) for b in per_peak]


def _project(x: np.ndarray, lower: np.ndarray, upper: np.ndarray, width: int) -> np.ndarray:
    x = np.clip(x, lower, upper).reshape(-1, width).copy()
    x[:, 1] = np.minimum(x[:, 1], 0.5 * x[:, 2])
    return x.ravel()


def _sorted_rows(x: np.ndarray, width: int) -> np.ndarray:
    rows = x.reshape(-1, width)
    return rows[np.argsort(rows[:, 2], kind="stable")]


def fit_lorentzians(problem: FitProblem, objective: str = "sd") -> FitResult:
    """Fit ``problem.n_peaks`` Lorentzians to ``problem.target`` on ``problem.band``.

    Parameters
    ----------
    problem : FitProblem
    objective : {"sd", "corr"}
        ``"sd"`` scores :func:`sd_objective`; ``"corr"`` scores
        :func:`corr_objective` with a free ``beta_m`` per peak.

    Returns
    -------
    FitResult
        Best candidate found within ``problem.budget`` evaluations.  ``history``
        is the best-so-far objective after every evaluation and is
        nonincreasing.  The same seed and budget give an identical result.
    """
    if objective not in ("sd", "corr"):
        raise ValueError(f"unknown objective {objective!r}")
    with_beta = objective == "corr"
    width = 4 if with_beta else 3
    bounds = _bounds(problem, with_beta)
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])
    grid = problem.grid
    target_v2 = discretize_density(problem.target, grid)

    best = {"f": math.inf, "x": None}
    history: list[float] = []

    def score(x):
        if len(history) >= problem.budget:
            raise _BudgetExhausted
        xp = _project(np.asarray(x, dtype=float), lower, upper, width)
        rows = xp.reshape(-1, width)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if with_beta:
                f = corr_objective(problem.target, problem.beta, rows, grid)
            else:
                f = sd_objective(target_v2, rows, grid)
        if not math.isfinite(f):
            f = math.inf
        if f < best["f"]:
            best["f"], best["x"] = f, xp
        history.append(best["f"])
        return f

    master = np.random.SeedSequence(problem.seed)
    dim = len(bounds)
    popsize = 15
    per_restart = problem.budget // (2 * max(1, problem.restarts))
    maxiter = max(1, per_restart // (popsize * dim) - 1)
    try:
        for child in master.spawn(problem.restarts):
            seed = int(child.generate_state(1)[0])
            optimize.differential_evolution(
                score, bounds, seed=seed, popsize=popsize, maxiter=maxiter, tol=0.0,
                atol=0.0, polish=False, init="sobol", updating="immediate")
        while best["x"] is not None:
            before = best["f"]
            optimize.minimize(score, best["x"], method="Nelder-Mead",
                              bounds=list(zip(lower, upper)),
                              options={"xatol": 1e-12, "fatol": 1e-14,
                                       "maxfev": problem.budget, "adaptive": True})
            if not best["f"] < before * (1 - 1e-6):
                break
    except _BudgetExhausted:
        pass

    if best["x"] is None or not math.isfinite(best["f"]):
        raise FitBudgetError(f"no feasible evaluation within budget {problem.budget}")
    rows = _sorted_rows(best["x"], width)
    peaks = [tuple(float(v) for v in r[:3]) for r in rows]
    ok = bool(np.all(rows[:, 1] <= 0.5 * rows[:, 2])
              and np.all(best["x"] >= lower) and np.all(best["x"] <= upper))
    residuals = None
    betas = None
    if with_beta:
        betas = [float(r[3]) for r in rows]
        residuals = corr_residuals(problem.target, problem.beta, rows, grid)
    return FitResult(peaks, float(best["f"]), len(history), ok, betas, history, residuals)


def mean_relative_deviation(target: Callable, peaks: Sequence, band: tuple[float, float],
                            n_grid: int = DEFAULT_GRID_POINTS) -> float:
    """Average of ``|J - J_fit| / |J|`` over the Gauss-Legendre nodes of ``band``."""
    grid = legendre_grid(n_grid, *band)
    return sd_objective(discretize_density(target, grid), peaks, grid) / grid.n_points


def leggett_problem(s: float, A: float = 0.1, omega_c: float = 10.0,
                    band: tuple[float, float] = (0.9, 1.1), n_peaks: int = 2,
                    kappa_cap: float | None = None, **kwargs) -> FitProblem:
    """Fit setup for a Leggett target: peaks inside a widened band, ``kappa`` capped.

    The band is widened by its own width on each side for the ``nu`` bounds.
    The default coupling cap is ``2 sqrt(max J)`` over that widened band: a
    single peak with this coupling has resonant height ``2 kappa^2 / Gamma``
    equal to the target's largest value only at ``Gamma = 8``.
    """
    target = Leggett(A, s, omega_c)
    lo, hi = band
    width = hi - lo
    if kappa_cap is None:
        probe = np.linspace(max(lo - width, 1e-6), hi + width, 64)
        kappa_cap = float(np.sqrt(np.max(target(probe))) * 2.0)
    nu_bounds = (max(lo - width, 1e-3), hi + width)
    return FitProblem(target, band, n_peaks, (1e-4, kappa_cap), (1e-4, nu_bounds[1] / 2),
                      nu_bounds, **kwargs)
