import math

import numpy as np
import pytest

from spinboson.models import Leggett, LorentzianSum
from spinboson.specfit import (FitBudgetError, FitProblem, corr_objective, corr_residuals,
                               discretize_density, fit_lorentzians, leggett_problem,
                               legendre_grid, mean_relative_deviation, sd_objective)

PLANTED = [(0.05, 0.1, 0.95), (0.03, 0.2, 1.05)]


def test_legendre_grid_integrates_polynomials():
    g = legendre_grid(8, 0.5, 2.0)
    assert g.n_points == 8
    assert np.all((g.nodes > 0.5) & (g.nodes < 2.0))
    assert np.sum(g.weights) == pytest.approx(1.5)
    assert np.sum(g.weights * g.nodes ** 5) == pytest.approx((2 ** 6 - 0.5 ** 6) / 6)


@pytest.mark.parametrize("args", [(0, 0.0, 1.0), (4, 1.0, 1.0), (4, 2.0, 1.0),
                                  (4, -1.0, 1.0), (4, 0.0, math.inf), (2.5, 0.0, 1.0)])
def test_legendre_grid_rejects(args):
    with pytest.raises(ValueError):
        legendre_grid(*args)


def test_discretization_sums_to_reorganization_integral():
    J = LorentzianSum(tuple(PLANTED))
    g = legendre_grid(200, 0.5, 1.5)
    from scipy.integrate import quad
    ref = quad(lambda w: J(w) / np.pi, 0.5, 1.5, points=[0.95, 1.05], limit=200)[0]
    assert np.sum(discretize_density(J, g)) == pytest.approx(ref, rel=1e-8)


def test_sd_objective_zero_at_target_and_warns_on_zero():
    g = legendre_grid(16, 0.9, 1.1)
    target = discretize_density(LorentzianSum(tuple(PLANTED)), g)
    assert sd_objective(target, PLANTED, g) == pytest.approx(0.0, abs=1e-12)
    assert sd_objective(target, [(0.05, 0.1, 0.95)], g) > 0
    target[3] = 0.0
    with pytest.warns(RuntimeWarning):
        sd_objective(target, PLANTED, g)


def test_corr_residuals_limits():
    g = legendre_grid(16, 0.9, 1.1)
    J = LorentzianSum(tuple(PLANTED))
    rows = [p + (math.inf,) for p in PLANTED]
    res = corr_residuals(J, math.inf, rows, g)
    assert res.real == pytest.approx(0.0, abs=1e-12)
    assert res.imag == pytest.approx(0.0, abs=1e-12)
    # a finite common beta only rescales the real part by tanh ratios
    rows = [p + (3.0,) for p in PLANTED]
    res = corr_residuals(J, 3.0, rows, g)
    assert res.imag == pytest.approx(0.0, abs=1e-12)
    assert res.real > 0
    assert corr_objective(J, 3.0, rows, g) == pytest.approx(res.total)
    with pytest.raises(ValueError):
        corr_residuals(J, 3.0, PLANTED, g)
    with pytest.raises(ValueError):
        corr_residuals(J, 0.0, rows, g)


def test_problem_validation():
    J = LorentzianSum(tuple(PLANTED))
    base = dict(target=J, band=(0.9, 1.1), n_peaks=2, kappa_bounds=(1e-3, 0.2),
                gamma_bounds=(1e-3, 0.6), nu_bounds=(0.7, 1.3))
    FitProblem(**base)
    for key, bad in [("n_peaks", 0), ("gamma_bounds", (0.0, 0.6)), ("kappa_bounds", (0.2, 0.1)),
                     ("gamma_bounds", (0.9, 1.0)), ("band", (1.1, 0.9)), ("budget", 0)]:
        with pytest.raises(ValueError):
            FitProblem(**{**base, key: bad})


def _planted_problem(**kw):
    J = LorentzianSum(tuple(PLANTED))
    return FitProblem(J, (0.9, 1.1), 2, (1e-3, 0.2), (1e-3, 0.6), (0.7, 1.3), **kw)


def test_small_budget_is_deterministic_and_monotone():
    a = fit_lorentzians(_planted_problem(budget=600, seed=4))
    b = fit_lorentzians(_planted_problem(budget=600, seed=4))
    assert a.peaks == b.peaks and a.objective == b.objective
    assert a.n_evals == 600
    assert np.all(np.diff(a.history) <= 0)
    assert a.history[-1] == a.objective
    assert [p[2] for p in a.peaks] == sorted(p[2] for p in a.peaks)
    for k, g, n in a.peaks:
        assert 1e-3 <= g <= n / 2 + 1e-15
    with pytest.raises(ValueError):
        fit_lorentzians(_planted_problem(budget=10), objective="bogus")


def test_budget_error():
    def nan_target(w):
        return np.full_like(w, np.nan)
    problem = FitProblem(nan_target, (0.9, 1.1), 1, (1e-3, 0.2), (1e-3, 0.6), (0.7, 1.3),
                         budget=20)
    with pytest.raises(FitBudgetError):
        fit_lorentzians(problem)


def test_corr_fit_returns_betas():
    res = fit_lorentzians(_planted_problem(budget=800, beta=3.0), objective="corr")
    assert len(res.betas) == 2
    assert all(0.1 <= b <= 100 for b in res.betas)
    assert res.residuals.total == pytest.approx(res.objective)
    assert set(res.as_rows()[0]) == {"kappa", "gamma", "nu", "beta"}


def test_mean_relative_deviation():
    J = LorentzianSum(tuple(PLANTED))
    assert mean_relative_deviation(J, PLANTED, (0.9, 1.1)) == pytest.approx(0.0, abs=1e-14)
    doubled = [(k * math.sqrt(2), g, n) for k, g, n in PLANTED]
    assert mean_relative_deviation(J, doubled, (0.9, 1.1)) == pytest.approx(1.0)


def test_leggett_problem_bounds():
    p = leggett_problem(1.0)
    assert isinstance(p.target, Leggett)
    assert p.nu_bounds == pytest.approx((0.7, 1.3))
    assert p.gamma_bounds[1] == pytest.approx(0.65)
    probe = np.linspace(0.7, 1.3, 64)
    assert p.kappa_bounds[1] == pytest.approx(2 * math.sqrt(p.target(probe).max()))
    # the resonant height 2 kappa^2 / Gamma of a peak at the cap equals max J at Gamma = 8
    assert 2 * p.kappa_bounds[1] ** 2 / 8.0 == pytest.approx(p.target(probe).max())
