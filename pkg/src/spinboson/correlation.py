"""Bath correlation functions.

The bath couples to the spin through ``F = kappa (b + b^dag)``.  Two-point
functions are ``C(t) = <F(t) F(0)>`` in the stationary state of the oscillator;
four-point functions nest three propagations between the four insertions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .hilbert import fock_operators, thermal_state
from .models import DissipationKind, OscillatorMode, build_oscillator_model
from .propagate import adjoint_evolve, evolve_operator

QUAD_PANEL = 64
QUAD_TOLERANCE = 1e-6


class QuadratureError(RuntimeError):
    """Frequency quadrature did not converge."""


@dataclass(frozen=True)
class Corr2Params:
    """Single-mode parameters; ``beta = inf`` means zero temperature."""

    kappa: float
    gamma: float
    nu: float
    beta: float = math.inf

    def __post_init__(self):
        if self.kappa < 0 or self.nu <= 0 or self.gamma < 0:
            raise ValueError(f"invalid correlation parameters {self}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")


@dataclass
class CorrSeries:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")


def _coth_half(beta, omega):
    if math.isinf(beta):
        return np.ones_like(np.asarray(omega, dtype=float))
    return 1.0 / np.tanh(0.5 * beta * np.asarray(omega, dtype=float))


def corr2_analytic(p: Corr2Params, t):
    """``kappa^2 exp(-Gamma t/2) (coth(beta nu/2) cos(nu t) - i sin(nu t))``."""
    t = np.asarray(t, dtype=float)
    return (p.kappa ** 2 * np.exp(-0.5 * p.gamma * t)
            * (_coth_half(p.beta, p.nu) * np.cos(p.nu * t) - 1j * np.sin(p.nu * t)))


def _bath_operators(mode: OscillatorMode):
    a, ad, _ = fock_operators(mode.fock_dim)
    return mode.kappa * (a + ad), thermal_state(mode.nbar, mode.fock_dim)


def corr2_numeric(mode: OscillatorMode, kind: DissipationKind | str, t_grid) -> CorrSeries:
    """``C(t) = tr{F(t) F rho_O}`` with ``F(t)`` from the adjoint Lindblad generator."""
    kind = DissipationKind(kind)
    if kind is DissipationKind.NONE:
        raise ValueError("kind must be damped or dephased")
    t_grid = np.asarray(t_grid, dtype=float)
    model = build_oscillator_model(mode, kind)
    F, rho = _bath_operators(mode)
    Frho = F @ rho
    heis = adjoint_evolve(model, F, t_grid, tol=1e-10)
    return CorrSeries(t_grid, np.array([np.trace(X @ Frho) for X in heis]))


def corr4_numeric(mode: OscillatorMode, kind: DissipationKind | str,
                  t0: float, t1: float, t2: float, t3: float) -> complex:
    """``tr{F e^{L(t0-t1)}[F e^{L(t1-t2)}[F e^{L(t2-t3)}[F rho_O]]]}``."""
    if not t0 >= t1 >= t2 >= t3 >= 0:
        raise ValueError("times must satisfy t0 >= t1 >= t2 >= t3 >= 0")
    kind = DissipationKind(kind)
    model = build_oscillator_model(mode, kind)
    F, rho = _bath_operators(mode)
    X = F @ rho
    for span in (t2 - t3, t1 - t2, t0 - t1):
        if span > 0:
            X = evolve_operator(model, X, [span], tol=1e-10)[0]
        X = F @ X
    return complex(np.trace(X))


def corr4_closed(kind: DissipationKind | str, p: Corr2Params, t0, t1, t2, t3):
    """Zero-temperature four-point functions of the damped and dephased models.

    ``kappa^4 (e^{z(t0-t1+t2-t3)} + 2 e^{z(t0+t1-t2-t3)})`` with
    ``z = -Gamma/2 - i nu``; dephasing multiplies the second term by
    ``e^{-Gamma (t1-t2)}``.  Broadcasts over array arguments.
    """
    kind = DissipationKind(kind)
    z = -0.5 * p.gamma - 1j * p.nu
    t0, t1, t2, t3 = (np.asarray(x, dtype=float) for x in (t0, t1, t2, t3))
    second = 2 * np.exp(z * (t0 + t1 - t2 - t3))
    if kind is DissipationKind.DEPHASED:
        second = second * np.exp(-p.gamma * (t1 - t2))
    elif kind is not DissipationKind.DAMPED:
        raise ValueError("kind must be damped or dephased")
    return p.kappa ** 4 * (np.exp(z * (t0 - t1 + t2 - t3)) + second)


def gaussian_factorization_check(C2: Callable, t0, t1, t2, t3):
    """Wick sum ``C(t0-t1)C(t2-t3) + C(t0-t2)C(t1-t3) + C(t0-t3)C(t1-t2)``."""
    return (C2(t0 - t1) * C2(t2 - t3) + C2(t0 - t2) * C2(t1 - t3)
            + C2(t0 - t3) * C2(t1 - t2))


def delta_c4_closed(p: Corr2Params) -> Callable:
    """Damped-minus-dephased four-point difference at zero temperature."""
    def delta(t0, t1, t2, t3):
        return (corr4_closed(DissipationKind.DAMPED, p, t0, t1, t2, t3)
                - corr4_closed(DissipationKind.DEPHASED, p, t0, t1, t2, t3))
    return delta


def _simplex_midpoints(n: int):
    """Index tuples ``i0 >= i1 >= i2 >= i3`` and weights for the ordered simplex.

    A grid cube whose index tuple has repeated entries is only partly inside
    the simplex; the inside fraction is ``1 / prod(m!)`` over the multiplicities,
    which makes the weights sum exactly to the simplex volume.
    """
    idx = np.array(list(itertools.combinations_with_replacement(range(n), 4)))[:, ::-1]
    weights = np.ones(len(idx))
    for row, tup in enumerate(idx):
        for count in np.unique(tup, return_counts=True)[1]:
            weights[row] /= math.factorial(int(count))
    return idx, weights


def corr4_bound(delta_c4: Callable, o_norm: float, t: float, n_grid: int = 16) -> float:
    """Upper bound on the observable difference from a four-point difference.

    ``(o_norm/4) int_{t > t0 > t1 > t2 > t3 > 0} sum_perm |dC4|`` over the four
    argument orders ``(t0,t1,t2,t3)``, ``(t2,t0,t1,t3)``, ``(t1,t0,t2,t3)`` and
    ``(t2,t1,t0,t3)``, evaluated by a midpoint rule on the simplex.
    ``delta_c4`` must broadcast over arrays.
    """
    if n_grid < 8:
        raise ValueError("n_grid must be at least 8")
    if t <= 0:
        return 0.0
    h = t / n_grid
    idx, weights = _simplex_midpoints(n_grid)
    s0, s1, s2, s3 = ((idx[:, k] + 0.5) * h for k in range(4))
    total = (np.abs(delta_c4(s0, s1, s2, s3)) + np.abs(delta_c4(s2, s0, s1, s3))
             + np.abs(delta_c4(s1, s0, s2, s3)) + np.abs(delta_c4(s2, s1, s0, s3)))
    return float(0.25 * o_norm * np.sum(weights * total) * h ** 4)


def _gl_nodes(omega_max: float, n_quad: int):
    n_panels = max(1, math.ceil(n_quad / QUAD_PANEL))
    x, w = np.polynomial.legendre.leggauss(QUAD_PANEL)
    edges = np.linspace(0.0, omega_max, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def _transform(J, beta, t, omega_max, n_quad):
    nodes, weights = _gl_nodes(omega_max, n_quad)
    jw = np.asarray(J(nodes), dtype=float) * weights / np.pi
    phase = np.outer(t, nodes)
    return (np.cos(phase) @ (jw * _coth_half(beta, nodes))) - 1j * (np.sin(phase) @ jw)


def corr_from_density(J: Callable, beta: float, t_grid, omega_max: float = 50.0,
                      n_quad: int = 4096, check: bool = True) -> CorrSeries:
    """``C(t) = int_0^omega_max (J/pi) (coth(beta w/2) cos(w t) - i sin(w t)) dw``.

    Composite Gauss-Legendre with ``QUAD_PANEL`` nodes per panel; ``n_quad`` is
    rounded up to a whole number of panels.  With ``check`` the result is
    recomputed with twice as many nodes and must agree within 1e-6.
    """
    if n_quad < 64:
        raise ValueError("n_quad must be at least 64")
    if omega_max <= 0:
        raise ValueError("omega_max must be positive")
    if not beta > 0:
        raise ValueError("beta must be positive")
    t = np.asarray(t_grid, dtype=float)
    values = _transform(J, beta, t, omega_max, n_quad)
    if check:
        finer = _transform(J, beta, t, omega_max, 2 * n_quad)
        err = float(np.max(np.abs(finer - values), initial=0.0))
        if err > QUAD_TOLERANCE:
            raise QuadratureError(f"doubling n_quad changed C(t) by {err:.2e}")
        values = finer
    return CorrSeries(t, values)
