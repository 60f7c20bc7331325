"""Time-evolution engines.

* :func:`lindblad_evolve` -- RK4 integration of the Lindblad master equation with
  per-interval step halving.
* :func:`unitary_evolve_piecewise` -- exact exponentials of piecewise-constant
  Hamiltonians.
* :func:`adjoint_evolve` -- Heisenberg-picture (adjoint generator) propagation.
* :func:`tcl2_evolve` -- second-order time-convolutionless reduced spin dynamics.

The density-matrix integrator works on plain matrices rather than on a
vectorized Liouvillian; with ``d^3`` sized three-mode spaces a superoperator
would not fit in memory.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .hilbert import TAIL_TOLERANCE, TruncationWarning, check_density_matrix, pauli, tail_population
from .models import LindbladModel, SpinParams

STEP_TOLERANCE = 1e-8
MAX_REFINEMENTS = 14


class IntegrationError(RuntimeError):
    """The integrator could not reach the requested tolerance."""


@dataclass(frozen=True)
class TimeGrid:
    """``n_samples`` uniform sample times from 0 to ``t_max`` inclusive."""

    t_max: float
    n_samples: int

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_samples)


@dataclass
class EvolutionResult:
    times: np.ndarray
    observables: dict[str, np.ndarray]
    final_state: np.ndarray
    truncation_ok: bool = True
    info: dict = field(default_factory=dict)

    @property
    def p0(self) -> np.ndarray:
        return self.observables["P0"]


def donor_population(state: np.ndarray) -> float:
    """Population of the spin ``|0>`` with every oscillator traced out.

    Works for state vectors and density matrices because the spin is always
    the leading tensor slot.
    """
    state = np.asarray(state)
    half = state.shape[0] // 2
    if state.ndim == 1:
        return float(np.sum(np.abs(state[:half]) ** 2))
    return float(np.real(np.trace(state[:half, :half])))


# --------------------------------------------------------------------------
# generic RK4 engine for linear matrix ODEs
# --------------------------------------------------------------------------

class _Generator:
    """``dX/dt = -i (A X - X A^dag) + sum_j L_j X L_j^dag`` (Schrodinger) or the adjoint.

    Diagonal jump operators (number dephasing) are applied elementwise.
    """

    def __init__(self, model: LindbladModel, adjoint: bool = False):
        H = model.hamiltonian
        ops = [np.asarray(L, dtype=complex) for L in model.lindblad_ops]
        LdL = sum((L.conj().T @ L for L in ops), np.zeros_like(H))
        heff = H - 0.5j * LdL
        self.adjoint = adjoint
        # Schrodinger: -i(Heff X - X Heff^dag); adjoint: i(Heff^dag X - X Heff)
        self.left = -1j * heff if not adjoint else 1j * heff.conj().T
        self.right = 1j * heff.conj().T if not adjoint else -1j * heff
        self.diag = []
        self.dense = []
        for L in ops:
            if np.count_nonzero(L - np.diag(np.diag(L))) == 0:
                d = np.diag(L)
                w = np.outer(d, d.conj()) if not adjoint else np.outer(d.conj(), d)
                self.diag.append(w)
            else:
                self.dense.append(L if not adjoint else L.conj().T)
        self.diag_weight = sum(self.diag) if self.diag else None
        self.scale = (np.abs(heff).sum(axis=1).max()
                      + sum(np.abs(L).sum(axis=1).max() ** 2 for L in ops))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        out = self.left @ X + X @ self.right
        if self.diag_weight is not None:
            out += self.diag_weight * X
        for L in self.dense:
            out += L @ X @ L.conj().T
        return out

    def rk4(self, X: np.ndarray, h: float, n: int) -> np.ndarray:
        for _ in range(n):
            k1 = self(X)
            k2 = self(X + 0.5 * h * k1)
            k3 = self(X + 0.5 * h * k2)
            k4 = self(X + h * k3)
            X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return X


def _trace_norm_diff(a: np.ndarray, b: np.ndarray) -> float:
    diff = a - b
    if np.max(np.abs(diff - diff.conj().T), initial=0.0) < 1e-14 * max(1.0, np.abs(diff).max()):
        return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))
    return 0.5 * float(np.sum(np.linalg.svd(diff, compute_uv=False)))


def _propagate_samples(gen: _Generator, X0: np.ndarray, times: Sequence[float],
                       tol: float = STEP_TOLERANCE,
                       max_refinements: int = MAX_REFINEMENTS) -> list[np.ndarray]:
    """States at every entry of ``times`` (nondecreasing, starting at or after 0).

    Each interval is integrated with ``n`` and ``2n`` RK4 steps; ``n`` doubles
    until the two results differ by less than ``tol`` in trace distance and the
    finer one is kept.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or (times.size and times[0] < 0):
        raise ValueError("sample times must be nondecreasing and nonnegative")
    X = np.array(X0, dtype=complex)
    out = []
    t_prev = 0.0
    n_hint = None
    for t in times:
        span = t - t_prev
        if span > 0:
            # stable RK4 needs h * |generator| well below ~2.8
            n = max(1, math.ceil(span * gen.scale / 1.5))
            if n_hint is not None:
                n = max(n, math.ceil(n_hint * span))
            coarse = gen.rk4(X, span / n, n)
            for _ in range(max_refinements):
                fine = gen.rk4(X, span / (2 * n), 2 * n)
                if np.all(np.isfinite(fine)) and _trace_norm_diff(fine, coarse) < tol:
                    break
                coarse, n = fine, 2 * n
            else:
                raise IntegrationError(
                    f"RK4 failed to converge on [{t_prev:.6g}, {t:.6g}] after "
                    f"{max_refinements} step halvings")
            X = fine
            n_hint = n / span
        out.append(X.copy())
        t_prev = t
    return out


def _observables_for(model: LindbladModel, observables):
    obs = {}
    if model.layout is not None:
        obs["P0"] = None
    if observables:
        for name, op in dict(observables).items():
            op = np.asarray(op, dtype=complex)
            if op.shape != model.hamiltonian.shape:
                raise ValueError(f"observable {name!r} has wrong dimension")
            obs[name] = op
    return obs


def lindblad_evolve(model: LindbladModel, rho0: np.ndarray, grid: TimeGrid | Sequence[float],
                    observables: Mapping[str, np.ndarray] | None = None,
                    tol: float = STEP_TOLERANCE, keep_states: bool = False) -> EvolutionResult:
    """Integrate the Lindblad master equation and record observables.

    Parameters
    ----------
    model : LindbladModel
    rho0 : ndarray
        Initial density matrix (validated).
    grid : TimeGrid or sequence of float
        Sample times.
    observables : mapping, optional
        Extra ``name -> operator`` pairs; ``P0`` is always recorded when the
        model has a spin slot.
    tol : float
        Per-interval trace-distance tolerance for step halving.
    keep_states : bool
        Store every sampled density matrix in ``info["states"]``.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != model.hamiltonian.shape:
        raise ValueError(f"initial state shape {rho0.shape} does not match model "
                         f"dimension {model.dim}")
    check_density_matrix(rho0, atol=1e-8)
    times = grid.times if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    states = _propagate_samples(_Generator(model), rho0, times, tol)
    obs_ops = _observables_for(model, observables)
    series = {}
    for name, op in obs_ops.items():
        if op is None:
            series[name] = np.array([donor_population(r) for r in states])
        else:
            series[name] = np.array([np.real(np.trace(op @ r)) for r in states])
    ok = True
    if model.layout is not None:
        tail = tail_population(states[-1], model.layout)
        if tail > TAIL_TOLERANCE:
            ok = False
            warnings.warn(f"top-two Fock levels hold population {tail:.2e}; increase fock_dim",
                          TruncationWarning, stacklevel=2)
    info = {"states": states} if keep_states else {}
    return EvolutionResult(times, series, states[-1], ok, info)


def evolve_operator(model: LindbladModel, X0: np.ndarray, times, adjoint: bool = False,
                    tol: float = STEP_TOLERANCE) -> list[np.ndarray]:
    """Propagate an arbitrary (possibly non-Hermitian) matrix.

    With ``adjoint=False`` this applies ``exp(L t)`` (Schrodinger picture); with
    ``adjoint=True`` the adjoint map ``exp(L^dag t)``.
    """
    X0 = np.asarray(X0, dtype=complex)
    if X0.shape != model.hamiltonian.shape:
        raise ValueError("operator dimension does not match model")
    return _propagate_samples(_Generator(model, adjoint=adjoint), X0, np.atleast_1d(times), tol)


def adjoint_evolve(model: LindbladModel, op: np.ndarray, t, tol: float = STEP_TOLERANCE):
    """Heisenberg-picture operator ``exp(L^dag t)[op]``.

    ``dX/dt = i[H, X] + sum_j (L_j^dag X L_j - 1/2 {L_j^dag L_j, X})``.  Returns a
    single matrix for scalar ``t`` and a list for a sequence of times.
    """
    out = evolve_operator(model, op, t, adjoint=True, tol=tol)
    return out[0] if np.ndim(t) == 0 else out


# --------------------------------------------------------------------------
# unitary segments
# --------------------------------------------------------------------------

def segment_unitary(H: np.ndarray, duration: float) -> np.ndarray:
    """``exp(-i H duration)`` for Hermitian ``H`` via eigendecomposition."""
    H = np.asarray(H, dtype=complex)
    if np.max(np.abs(H - H.conj().T), initial=0.0) > 1e-10:
        raise ValueError("segment Hamiltonian is not Hermitian")
    if duration == 0:
        return np.eye(H.shape[0], dtype=complex)
    w, v = np.linalg.eigh(H)
    return (v * np.exp(-1j * w * duration)) @ v.conj().T


def unitary_evolve_piecewise(segments: Sequence[tuple[np.ndarray, float]], psi0: np.ndarray,
                             sample_after: Sequence[int] | None = None) -> EvolutionResult:
    """Apply ``exp(-i H_k tau_k)`` segment by segment.

    Observables (``P0`` and the norm) are recorded at time 0 and after every
    segment index in ``sample_after`` (default: every segment).
    """
    psi = np.array(psi0, dtype=complex)
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise ValueError("initial state is not normalized")
    wanted = set(range(len(segments))) if sample_after is None else set(sample_after)
    t = 0.0
    times, p0 = [0.0], [donor_population(psi)]
    for k, (H, tau) in enumerate(segments):
        if tau < 0:
            raise ValueError(f"segment {k} has negative duration")
        psi = segment_unitary(H, tau) @ psi
        t += tau
        if k in wanted:
            times.append(t)
            p0.append(donor_population(psi))
    return EvolutionResult(np.array(times), {"P0": np.array(p0)}, psi,
                           info={"norm": float(np.linalg.norm(psi))})


# --------------------------------------------------------------------------
# second-order TCL
# --------------------------------------------------------------------------

def spin_propagator(spin: SpinParams, t):
    """Closed-form ``exp(-i H_S t)`` for ``H_S = (eps/2) Z + (Delta/2) X``; broadcasts over ``t``."""
    t = np.asarray(t, dtype=float)
    omega = math.hypot(spin.epsilon, spin.delta)
    p = pauli()
    if omega == 0:
        return np.broadcast_to(p["I"], t.shape + (2, 2)).copy()
    nsig = (spin.delta * p["X"] + spin.epsilon * p["Z"]) / omega
    c = np.cos(0.5 * omega * t)[..., None, None]
    s = np.sin(0.5 * omega * t)[..., None, None]
    return c * p["I"] - 1j * s * nsig


def _gl_panels(a: float, b: float, panel: float, order: int):
    if b <= a:
        return np.zeros(0), np.zeros(0)
    n_panels = max(1, math.ceil((b - a) / panel))
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x).ravel()
    weights = (half[:, None] * w).ravel()
    return nodes, weights


def tcl2_evolve(spin: SpinParams, corr: Callable[[np.ndarray], np.ndarray], rho_s0: np.ndarray,
                grid: TimeGrid | Sequence[float], dt: float = 0.02,
                panel: float = 0.5, order: int = 12) -> EvolutionResult:
    """Second-order TCL dynamics of the reduced spin.

    In the interaction picture of ``H_S`` the generator is
    ``K(t) rho = -[A(t), Lambda(t) rho - rho Lambda(t)^dag]`` with
    ``A(t) = exp(i H_S t) (Z/2) exp(-i H_S t)`` and the memory kernel
    ``Lambda(t) = int_0^t C(t - t1) A(t1) dt1``, which expands to the usual
    double-commutator form with ``C`` and ``C*``.  The history integral uses
    composite Gauss-Legendre panels (results memoized per time); the outer ODE
    uses RK4 with step ``<= dt``.

    Parameters
    ----------
    corr : callable
        Bath correlation function ``C(t)``, vectorized over ``t``.
    """
    rho = np.array(rho_s0, dtype=complex)
    check_density_matrix(rho, atol=1e-8)
    if rho.shape != (2, 2):
        raise ValueError("rho_s0 must be a 2x2 density matrix")
    times = grid.times if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    half_z = 0.5 * pauli()["Z"]

    def a_int(t):
        U = spin_propagator(spin, t)
        return np.swapaxes(U.conj(), -1, -2) @ half_z @ U

    cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def kernel(t):
        hit = cache.get(t)
        if hit is None:
            nodes, weights = _gl_panels(0.0, t, panel, order)
            if nodes.size == 0:
                lam = np.zeros((2, 2), complex)
            else:
                c = np.asarray(corr(t - nodes), dtype=complex)
                if not np.all(np.isfinite(c)):
                    raise IntegrationError("correlation function returned non-finite values")
                lam = np.einsum("n,nij->ij", weights * c, a_int(nodes))
            hit = (a_int(t), lam)
            cache[t] = hit
        return hit

    def rhs(t, r):
        A, lam = kernel(t)
        X = lam @ r - r @ lam.conj().T
        return -(A @ X - X @ A)

    out_rho = [rho.copy()]
    t_prev = times[0] if len(times) else 0.0
    if t_prev != 0.0:
        raise ValueError("TCL2 sample grid must start at 0")
    for t in times[1:]:
        span = t - t_prev
        n = max(1, math.ceil(span / dt))
        h = span / n
        s = t_prev
        for _ in range(n):
            k1 = rhs(s, rho)
            k2 = rhs(s + 0.5 * h, rho + 0.5 * h * k1)
            k3 = rhs(s + 0.5 * h, rho + 0.5 * h * k2)
            k4 = rhs(s + h, rho + h * k3)
            rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            s += h
        out_rho.append(rho.copy())
        t_prev = t
    U = spin_propagator(spin, times)
    schrod = U @ np.array(out_rho) @ np.swapaxes(U.conj(), -1, -2)
    p0 = np.real(schrod[:, 0, 0])
    return EvolutionResult(times, {"P0": p0}, schrod[-1])
