"""Stochastic unraveling: random-phase kicks, random detunings, seeded ensembles
and parameter-recovery fits.

Every trial draws from its own generator,
``default_rng(SeedSequence([master_seed, trial_index]))``.  ``SeedSequence``
hashes the (seed, index) pair into an independent stream, so trial ``i``
sees the same numbers regardless of batch size or execution order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .hilbert import basis_state, coherent_amplitudes, coherent_state, fidelity, ket_to_dm, thermal_state
from .models import DissipationKind, OscillatorMode, SpinParams, build_model
from .propagate import lindblad_evolve
from .pulses import PulseSchedule, simulate_batch, trotterize

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class FitError(RuntimeError):
    """The least-squares search could not bracket a minimum."""


def trial_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent generator for trial ``index`` of a run seeded with ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


# --------------------------------------------------------------------------
# configurations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ThermalPrepConfig:
    """``n_kicks`` resonant kicks of duration ``kick_duration`` at sideband Rabi ``rabi``.

    Each kick is a displacement of magnitude ``rabi * kick_duration / 2`` with a
    uniformly random phase; the ensemble approximates a thermal state with
    ``nbar = n_kicks rabi^2 kick_duration^2 / 4``.
    """

    n_kicks: int
    kick_duration: float
    rabi: float = 1.0

    def __post_init__(self):
        if self.n_kicks < 1 or self.kick_duration <= 0 or self.rabi <= 0:
            raise ValueError(f"invalid thermal-prep configuration {self}")

    @property
    def nbar(self) -> float:
        return self.n_kicks * self.rabi ** 2 * self.kick_duration ** 2 / 4.0

    @classmethod
    def for_nbar(cls, n_kicks: int, nbar: float, rabi: float = 1.0) -> "ThermalPrepConfig":
        if nbar <= 0:
            raise ValueError("target nbar must be positive")
        return cls(n_kicks, 2.0 * math.sqrt(nbar / n_kicks) / rabi, rabi)


@dataclass(frozen=True)
class DephasingConfig:
    """Random detunings realising number dephasing at rate ``gamma_target``.

    Over one step of model time ``T/N`` the detuning acts for ``step_duration``;
    matching phase variances gives ``delta_std = sqrt(Gamma T/N) / tau``.
    """

    gamma_target: float
    sim_time: float
    n_steps: int
    step_duration: float

    def __post_init__(self):
        if self.gamma_target < 0 or self.sim_time <= 0 or self.n_steps < 1 or self.step_duration <= 0:
            raise ValueError(f"invalid dephasing configuration {self}")

    @property
    def delta_std(self) -> float:
        return math.sqrt(self.gamma_target * self.sim_time / self.n_steps) / self.step_duration


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    n_trials: int
    master_seed: int
    trials: dict[str, np.ndarray] | None = None

    def stderr(self, name: str = "P0") -> np.ndarray:
        return self.std[name] / math.sqrt(self.n_trials)


# --------------------------------------------------------------------------
# sampling primitives
# --------------------------------------------------------------------------

def sample_kick_phases(cfg: ThermalPrepConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, 2.0 * math.pi, cfg.n_kicks)


def kick_displacements(cfg: ThermalPrepConfig, phases) -> np.ndarray:
    """Displacement of each kick: ``exp(-i tau (Om/2)(b e^{-i phi} + h.c.)) = D(-i (Om tau/2) e^{i phi})``."""
    return -1j * (0.5 * cfg.rabi * cfg.kick_duration) * np.exp(1j * np.asarray(phases))


def thermal_prep_trajectory(cfg: ThermalPrepConfig, phases, fock_dim: int) -> np.ndarray:
    """Oscillator state after the kicks, starting from ``|0>``.

    Displacements compose into a single displacement up to a global phase, so
    the result is the coherent state of the summed amplitude.
    """
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (cfg.n_kicks,):
        raise ValueError(f"expected {cfg.n_kicks} phases")
    return coherent_state(complex(np.sum(kick_displacements(cfg, phases))), fock_dim)


def sample_detuning_offsets(cfg: DephasingConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.gamma_target == 0:
        return np.zeros(cfg.n_steps)
    return rng.normal(0.0, cfg.delta_std, cfg.n_steps)


def shot_noise(populations, rng: np.random.Generator) -> np.ndarray:
    """One Bernoulli(p) outcome per entry of ``populations``."""
    p = np.asarray(populations, dtype=float)
    if np.any(p < -1e-9) or np.any(p > 1 + 1e-9):
        raise ValueError("probabilities must lie in [0, 1]")
    return (rng.random(p.shape) < np.clip(p, 0.0, 1.0)).astype(np.int8)


# --------------------------------------------------------------------------
# ensembles
# --------------------------------------------------------------------------

class Scenario(Protocol):
    times: np.ndarray

    def simulate(self, rngs: Sequence[np.random.Generator]) -> dict[str, np.ndarray]:
        """Observables ``name -> (len(rngs), len(times))`` for one batch of trials."""


@dataclass
class TrotterScenario:
    """Trotterized pulse simulation of the dephased model with random ingredients.

    Each trial (i) prepares every mode with ``nbar > 0`` by ``n_kicks`` random
    phase kicks and (ii) adds a Normal random detuning to every SDK record,
    with spread set by the mode's ``gamma``.  Draw order per trial: kick phases
    mode by mode, then SDK detunings in schedule order.
    """

    spin: SpinParams
    modes: Sequence[OscillatorMode]
    T: float
    N: int
    n_kicks: int = 9
    schedule: PulseSchedule = field(init=False)

    def __post_init__(self):
        self.modes = list(self.modes)
        self.schedule = trotterize(self.spin, self.modes, self.T, self.N)
        sdk = self.schedule.sdk_indices()
        self._mode_of = np.array([self.schedule.records[i].mode_index for i in sdk])
        self._stds = np.array([
            DephasingConfig(self.modes[l].gamma, self.T, self.N,
                            self.schedule.records[i].duration).delta_std
            for l, i in zip(self._mode_of, sdk)])
        self._preps = [ThermalPrepConfig.for_nbar(self.n_kicks, m.nbar) if m.nbar > 0 else None
                       for m in self.modes]
        self.times = self.T * np.arange(self.N + 1) / self.N

    def initial_states(self, rngs) -> np.ndarray:
        rows = []
        for rng in rngs:
            psi = basis_state(0, 2)
            for m, prep in zip(self.modes, self._preps):
                if prep is None:
                    psi = np.kron(psi, basis_state(0, m.fock_dim))
                else:
                    alpha = np.sum(kick_displacements(prep, sample_kick_phases(prep, rng)))
                    amps = coherent_amplitudes(alpha, m.fock_dim)
                    psi = np.kron(psi, amps / np.linalg.norm(amps))
            rows.append(psi)
        return np.array(rows)

    def simulate(self, rngs):
        psi0 = self.initial_states(rngs)
        if np.any(self._stds > 0):
            extra = np.array([rng.standard_normal(len(self._stds)) for rng in rngs]) * self._stds
        else:
            extra = None
        _, p0, _ = simulate_batch(self.schedule, psi0, extra)
        return {"P0": p0}


def run_ensemble(scenario: Scenario, n_trials: int, master_seed: int,
                 batch_size: int = 200, keep_trials: bool = False) -> EnsembleResult:
    """Average a scenario over ``n_trials`` independently seeded trials.

    Trials are processed in index order in fixed-size batches; each trial's
    randomness depends only on ``(master_seed, index)``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    chunks: dict[str, list[np.ndarray]] = {}
    for start in range(0, n_trials, batch_size):
        idx = range(start, min(start + batch_size, n_trials))
        try:
            out = scenario.simulate([trial_rng(master_seed, i) for i in idx])
        except Exception as exc:  # pragma: no cover - context for the caller
            raise RuntimeError(f"trial batch starting at index {start} failed: {exc}") from exc
        for name, arr in out.items():
            chunks.setdefault(name, []).append(np.asarray(arr, dtype=float))
    data = {name: np.concatenate(parts, axis=0) for name, parts in chunks.items()}
    mean = {k: v.mean(axis=0) for k, v in data.items()}
    std = {k: (v.std(axis=0, ddof=1) if n_trials > 1 else np.zeros(v.shape[1]))
           for k, v in data.items()}
    return EnsembleResult(np.asarray(scenario.times, dtype=float), mean, std, n_trials,
                          int(master_seed), data if keep_trials else None)


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------

@dataclass
class FitOutcome:
    value: float
    uncertainty: float
    objective: float
    n_evals: int
    extras: dict = field(default_factory=dict)


def _fock_dim_for(nbar: float, floor: int) -> int:
    if nbar <= 0:
        return floor
    q = nbar / (1.0 + nbar)
    return max(floor, int(math.ceil(math.log(1e-7) / math.log(q))) + 2)


@dataclass
class LindbladFamily:
    """Donor-population curves of a one-parameter family of Lindblad models.

    ``free`` names the parameter varied on every mode (``"gamma"`` or
    ``"nbar"``).  For ``"nbar"`` the Fock dimension grows with the value so
    that the thermal tail stays below 1e-7.
    """

    spin: SpinParams
    modes: Sequence[OscillatorMode]
    times: np.ndarray
    free: str = "gamma"
    kind: DissipationKind | str = DissipationKind.DEPHASED
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.free not in ("gamma", "nbar"):
            raise ValueError("free must be 'gamma' or 'nbar'")
        self.modes = list(self.modes)
        self.times = np.asarray(self.times, dtype=float)

    def modes_at(self, value: float) -> list[OscillatorMode]:
        if self.free == "gamma":
            return [replace(m, gamma=value) for m in self.modes]
        return [replace(m, nbar=value, fock_dim=_fock_dim_for(value, m.fock_dim)) for m in self.modes]

    def curve(self, value: float) -> np.ndarray:
        key = round(float(value), 12)
        hit = self._cache.get(key)
        if hit is None:
            if value < 0:
                raise ValueError(f"{self.free} must be non-negative")
            # scanning past gamma = nu/2 is legitimate here; silence the validity
            # and truncation diagnostics for the trial curves
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                modes = self.modes_at(value)
                model = build_model(self.spin, modes, self.kind)
                rho = ket_to_dm(basis_state(0, 2))
                for m in modes:
                    rho = np.kron(rho, thermal_state(m.nbar, m.fock_dim))
                hit = lindblad_evolve(model, rho, self.times).p0
            self._cache[key] = hit
        return hit


def _golden(f: Callable[[float], float], a: float, b: float, rtol: float, floor: float = 1e-6):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rtol * max(abs(0.5 * (a + b)), floor):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def _least_squares_fit(series, family: LindbladFamily, bracket: tuple[float, float],
                       trials: np.ndarray | None, n_boot: int, seed: int,
                       n_scan: int = 9, rtol: float = 1e-4) -> FitOutcome:
    series = np.asarray(series, dtype=float)
    if series.shape != family.times.shape:
        raise ValueError("series and family times differ in length")
    lo, hi = bracket
    if not 0 <= lo < hi:
        raise ValueError("invalid bracket")
    evals = [0]

    def sse(v):
        evals[0] += 1
        return float(np.sum((family.curve(v) - series) ** 2))

    grid = np.linspace(lo, hi, n_scan)
    vals = np.array([sse(v) for v in grid])
    i = int(np.argmin(vals))
    if i == n_scan - 1:
        raise FitError(f"objective still decreasing at the upper bracket end {hi}")
    a, b = grid[max(i - 1, 0)], grid[i + 1]
    best, fbest = _golden(sse, a, b, rtol)
    if i == 0 and vals[0] <= fbest:
        best, fbest = grid[0], vals[0]

    unc = float("nan")
    boot = None
    if trials is not None and n_boot > 0:
        trials = np.asarray(trials, dtype=float)
        half = max(0.25 * abs(best), 0.25 * (hi - lo) / (n_scan - 1))
        nodes = np.linspace(max(lo, best - half), best + half, 9)
        spline = CubicSpline(nodes, np.array([family.curve(v) for v in nodes]), axis=0)
        rng = np.random.default_rng(seed)
        n = trials.shape[0]
        boot = np.empty(n_boot)
        for k in range(n_boot):
            sample = trials[rng.integers(0, n, n)].mean(axis=0)
            boot[k] = _golden(lambda v: float(np.sum((spline(v) - sample) ** 2)),
                              nodes[0], nodes[-1], 1e-5)[0]
        unc = float(np.std(boot, ddof=1))
    return FitOutcome(float(best), unc, fbest, evals[0], {"bootstrap": boot})


def fit_gamma(series, family: LindbladFamily, bracket=(0.0, 1.0), trials=None,
              n_boot: int = 100, seed: int = 0) -> FitOutcome:
    """Least-squares estimate of the dephasing rate.

    Parameters
    ----------
    series : array
        Measured (ensemble-mean) donor population on ``family.times``.
    family : LindbladFamily
        Model family with ``free="gamma"``.
    trials : array, optional
        Per-trial series; when given, the uncertainty is the standard deviation
        of the fits to ``n_boot`` bootstrap resamples of the trials.
    """
    if family.free != "gamma":
        raise ValueError("family must have gamma free")
    return _least_squares_fit(series, family, bracket, trials, n_boot, seed)


def revival_amplitude(times, p0, delta: float = 1.0, window=(9.0, 12.0)) -> float:
    """Peak-to-trough of ``P0`` for ``t`` in ``(2 pi / delta) * window``."""
    times = np.asarray(times, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    period = 2.0 * math.pi / delta
    sel = (times >= window[0] * period - 1e-9) & (times <= window[1] * period + 1e-9)
    if not np.any(sel):
        raise ValueError("no samples inside the revival window")
    return float(p0[sel].max() - p0[sel].min())


def fit_nbar(series, family: LindbladFamily, bracket=(0.0, 3.0), trials=None,
             n_boot: int = 100, seed: int = 0) -> FitOutcome:
    """Least-squares estimate of the initial occupation; also reports the revival amplitude.

    The revival amplitude is NaN when ``family.times`` do not reach the revival window.
    """
    if family.free != "nbar":
        raise ValueError("family must have nbar free")
    out = _least_squares_fit(series, family, bracket, trials, n_boot, seed)
    try:
        out.extras["revival_amplitude"] = revival_amplitude(family.times, series, family.spin.delta)
    except ValueError:
        out.extras["revival_amplitude"] = float("nan")
    return out


# --------------------------------------------------------------------------
# thermal-state preparation quality
# --------------------------------------------------------------------------

def ensemble_thermal_fidelity(n_kicks_list, nbar_targets, n_trials_list, master_seed: int,
                              fock_dim: int | None = None, rabi: float = 1.0) -> list[dict]:
    """``1 - F`` between kick-prepared ensembles and thermal states.

    Trial ``i`` always uses ``trial_rng(master_seed, i)``, so ensembles with
    more trials extend those with fewer.
    """
    rows = []
    for nbar in nbar_targets:
        if nbar <= 0:
            raise ValueError("thermal-prep targets must have nbar > 0")
        for n_kicks in n_kicks_list:
            cfg = ThermalPrepConfig.for_nbar(int(n_kicks), float(nbar), rabi)
            alpha_max = math.sqrt(cfg.n_kicks * cfg.nbar)
            d = fock_dim or max(int(math.ceil(alpha_max ** 2 + 8 * alpha_max + 20)),
                                _fock_dim_for(nbar, 2))
            target = thermal_state(nbar, d)
            n_max = max(n_trials_list)
            alphas = np.array([np.sum(kick_displacements(cfg, sample_kick_phases(cfg, trial_rng(master_seed, i))))
                               for i in range(n_max)])
            amps = coherent_amplitudes(alphas, d)
            amps = amps / np.linalg.norm(amps, axis=1, keepdims=True)
            for n_trials in n_trials_list:
                a = amps[:n_trials]
                rho = a.T @ a.conj() / n_trials
                rows.append({"n_kicks": int(n_kicks), "nbar": float(nbar), "n_trials": int(n_trials),
                             "infidelity": 1.0 - fidelity(rho, target)})
    return rows
