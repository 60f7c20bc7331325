"""Spin and oscillator parameters, bath spectral densities and Lindblad models.

All numerics are dimensionless with the spin coupling ``Delta = 1`` as the
default unit.  Physical units only appear in :func:`map_parameters` and
:func:`map_to_ion`.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .hilbert import HilbertLayout, embed, fock_operators, pauli

SPEED_OF_LIGHT_CM = 2.99792458e10  # cm / s
BOLTZMANN_CM = 0.695034800  # k_B / (h c) in cm^-1 / K


class ValidityWarning(UserWarning):
    """A parameter lies outside the regime where the Lorentzian picture holds."""


class DissipationKind(str, enum.Enum):
    NONE = "none"
    DEPHASED = "dephased"
    DAMPED = "damped"


@dataclass(frozen=True)
class SpinParams:
    """``H_S = (epsilon/2) sigma_z + (delta/2) sigma_x``."""

    epsilon: float = 0.0
    delta: float = 1.0


@dataclass(frozen=True)
class OscillatorMode:
    """One bath oscillator.

    Parameters
    ----------
    nu : float
        Mode frequency.
    kappa : float
        Spin-mode coupling; enters as ``(kappa/2) sigma_z (b + b^dag)``.
    gamma : float
        Dephasing or damping rate (FWHM of the associated Lorentzian).
    nbar : float
        Initial thermal occupation.
    fock_dim : int
        Truncation dimension.
    """

    nu: float
    kappa: float
    gamma: float = 0.0
    nbar: float = 0.0
    fock_dim: int = 15

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError(f"mode frequency must be positive, got {self.nu}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.nbar < 0:
            raise ValueError(f"nbar must be non-negative, got {self.nbar}")
        if self.fock_dim < 2:
            raise ValueError(f"invalid Fock dimension {self.fock_dim}")
        if self.gamma >= self.nu / 2:
            warnings.warn(f"gamma={self.gamma} >= nu/2={self.nu / 2}: Lorentzian "
                          "assignment is outside its validity regime", ValidityWarning,
                          stacklevel=3)


# --------------------------------------------------------------------------
# spectral densities
# --------------------------------------------------------------------------

def lorentzian_density(peaks, omega):
    """Sum of antisymmetrized Lorentzian peaks.

    ``peaks`` is an iterable of ``(kappa, gamma, nu)`` triples; ``omega`` may be
    an array.
    """
    omega = np.asarray(omega, dtype=float)
    out = np.zeros_like(omega)
    for kappa, gamma, nu in peaks:
        hw = gamma / 2.0
        out = out + kappa ** 2 * (hw / (hw ** 2 + (omega - nu) ** 2)
                                  - hw / (hw ** 2 + (omega + nu) ** 2))
    return out


def leggett_density(A, s, omega_c, omega):
    """``A omega^s omega_c^(1-s) exp(-omega/omega_c)``."""
    omega = np.asarray(omega, dtype=float)
    return A * omega ** s * omega_c ** (1.0 - s) * np.exp(-omega / omega_c)


@dataclass(frozen=True)
class LorentzianSum:
    peaks: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "peaks", tuple(tuple(float(x) for x in p) for p in self.peaks))
        for kappa, gamma, nu in self.peaks:
            if kappa < 0 or gamma <= 0 or nu <= 0:
                raise ValueError(f"invalid Lorentzian peak {(kappa, gamma, nu)}")

    def __call__(self, omega):
        return lorentzian_density(self.peaks, omega)

    @classmethod
    def from_modes(cls, modes: Sequence[OscillatorMode]) -> "LorentzianSum":
        return cls(tuple((m.kappa, m.gamma, m.nu) for m in modes))


@dataclass(frozen=True)
class Leggett:
    A: float
    s: float
    omega_c: float

    def __post_init__(self):
        if self.A <= 0 or self.s <= 0 or self.omega_c <= 0:
            raise ValueError(f"invalid Leggett parameters {self}")

    def __call__(self, omega):
        return leggett_density(self.A, self.s, self.omega_c, omega)

    @classmethod
    def with_resonant_value(cls, value: float, s: float, omega_c: float,
                            omega0: float = 1.0) -> "Leggett":
        """Leggett density whose amplitude is chosen so that ``J(omega0) = value``."""
        return cls(value / leggett_density(1.0, s, omega_c, omega0), s, omega_c)


SpectralDensity = LorentzianSum | Leggett


# --------------------------------------------------------------------------
# thermodynamics
# --------------------------------------------------------------------------

def nbar_of(beta: float, omega: float) -> float:
    """Bose-Einstein occupation ``1 / (exp(beta omega) - 1)``."""
    if beta <= 0 or omega <= 0:
        raise ValueError("beta and omega must be positive")
    return float(1.0 / np.expm1(beta * omega))


def beta_of(nbar: float, nu: float) -> float:
    """Inverse temperature giving occupation ``nbar`` at frequency ``nu``."""
    if nbar <= 0 or nu <= 0:
        raise ValueError("nbar and nu must be positive")
    return float(np.log1p(1.0 / nbar) / nu)


def nbar_from_temperature(kelvin: float, wavenumber: float) -> float:
    """Occupation of a mode given in cm^-1 at a temperature in kelvin."""
    if kelvin <= 0 or wavenumber <= 0:
        raise ValueError("temperature and wavenumber must be positive")
    return float(1.0 / np.expm1(wavenumber / (BOLTZMANN_CM * kelvin)))


# --------------------------------------------------------------------------
# Lindblad models
# --------------------------------------------------------------------------

@dataclass
class LindbladModel:
    """Time-independent Hamiltonian plus Lindblad operators on a common space.

    ``layout`` is ``None`` for a bare oscillator (no spin slot).
    """

    layout: HilbertLayout | None
    hamiltonian: np.ndarray
    lindblad_ops: list[np.ndarray] = field(default_factory=list)
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        h = np.asarray(self.hamiltonian, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("hamiltonian must be square")
        if np.max(np.abs(h - h.conj().T), initial=0.0) > 1e-10:
            raise ValueError("hamiltonian is not Hermitian")
        for L in self.lindblad_ops:
            if np.shape(L) != h.shape:
                raise ValueError("Lindblad operator dimension mismatch")
        self.hamiltonian = h

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]


def _dissipators(b: np.ndarray, n: np.ndarray, mode: OscillatorMode,
                 kind: DissipationKind) -> list[np.ndarray]:
    kind = DissipationKind(kind)
    if kind is DissipationKind.NONE or mode.gamma == 0:
        return []
    if kind is DissipationKind.DEPHASED:
        return [np.sqrt(mode.gamma) * n]
    ops = [np.sqrt(mode.gamma * (mode.nbar + 1.0)) * b]
    if mode.nbar > 0:
        ops.append(np.sqrt(mode.gamma * mode.nbar) * b.conj().T)
    return ops


def build_model(spin: SpinParams, modes: Sequence[OscillatorMode],
                kind: DissipationKind | str = DissipationKind.DEPHASED) -> LindbladModel:
    """Assemble the discrete spin-oscillator model.

    ``H = (eps/2) Z + (Delta/2) X + sum_l (kappa_l/2) Z (b_l + b_l^dag) + sum_l nu_l n_l``
    with per-mode number dephasing ``sqrt(G) n`` or thermal damping
    ``sqrt(G (nbar+1)) b``, ``sqrt(G nbar) b^dag``.
    """
    if not modes:
        raise ValueError("at least one oscillator mode is required")
    kind = DissipationKind(kind)
    layout = HilbertLayout(tuple(m.fock_dim for m in modes))
    p = pauli()
    sz = embed(p["Z"], 0, layout)
    H = 0.5 * spin.epsilon * sz + 0.5 * spin.delta * embed(p["X"], 0, layout)
    ops = []
    for l, mode in enumerate(modes):
        a, ad, n = fock_operators(mode.fock_dim)
        B = embed(a, l + 1, layout)
        N = embed(n, l + 1, layout)
        H = H + 0.5 * mode.kappa * sz @ (B + B.conj().T) + mode.nu * N
        ops.extend(_dissipators(B, N, mode, kind))
    return LindbladModel(layout, H, ops,
                         {"kind": kind.value, "spin": spin, "modes": tuple(modes)})


def build_oscillator_model(mode: OscillatorMode,
                           kind: DissipationKind | str) -> LindbladModel:
    """Bath-only model: ``H_O = nu n`` with the mode's dissipators."""
    a, _, n = fock_operators(mode.fock_dim)
    return LindbladModel(None, mode.nu * n, _dissipators(a, n, mode, kind),
                         {"kind": DissipationKind(kind).value, "modes": (mode,)})


def noise_aware(modes: Sequence[OscillatorMode], nbar_offset: float = 0.0,
                gamma_floor: float = 0.0) -> list[OscillatorMode]:
    """Shift every mode's occupation by ``nbar_offset`` and floor its rate."""
    if nbar_offset < 0 or gamma_floor < 0:
        raise ValueError("offsets must be non-negative")
    return [replace(m, nbar=m.nbar + nbar_offset, gamma=max(m.gamma, gamma_floor))
            for m in modes]


# --------------------------------------------------------------------------
# parameter mapping
# --------------------------------------------------------------------------

def wavenumber_to_angular(wavenumber: float) -> float:
    """cm^-1 to rad/s."""
    return 2.0 * np.pi * SPEED_OF_LIGHT_CM * wavenumber


@dataclass(frozen=True)
class UnitlessParams:
    epsilon: float
    delta: float
    kappas: tuple[float, ...]
    nus: tuple[float, ...]
    T: float


@dataclass(frozen=True)
class MolecularParams:
    """Frequencies in cm^-1, total time in seconds."""

    epsilon: float
    delta: float
    kappas: tuple[float, ...]
    nus: tuple[float, ...]
    T: float


def map_parameters(unitless: UnitlessParams, delta_reference: float,
                   reference: str = "delta") -> MolecularParams:
    """Scale a unitless model to molecular units.

    The unitless quantity named by ``reference`` (``"delta"`` or ``"epsilon"``)
    is pinned to ``delta_reference``; every frequency scales by the same factor and
    the time follows from ``omega_mol T_mol = omega_ul T_ul``.
    """
    if delta_reference <= 0:
        raise ValueError("reference wavenumber must be positive")
    ref_ul = getattr(unitless, reference)
    if ref_ul <= 0:
        raise ValueError(f"unitless {reference} must be positive")
    scale = delta_reference / ref_ul
    T = ref_ul * unitless.T / wavenumber_to_angular(delta_reference)
    return MolecularParams(unitless.epsilon * scale, unitless.delta * scale,
                           tuple(k * scale for k in unitless.kappas),
                           tuple(v * scale for v in unitless.nus), T)


@dataclass(frozen=True)
class IonModeParams:
    """Per-mode trapped-ion settings; frequencies in rad/s, time in seconds."""

    kappa: float
    nu: float
    delta: float
    T: float


@dataclass(frozen=True)
class IonParams:
    modes: tuple[IonModeParams, ...]
    epsilon: float | None = None
    T_sq: float | None = None


def map_to_ion(unitless: UnitlessParams, kappa_ion: Sequence[float],
               epsilon_ion: float | None = None) -> IonParams:
    """Map a unitless model onto per-mode ion drive settings.

    Each mode's sideband Rabi frequency fixes its total drive time through
    ``kappa_ul T_ul = kappa_ion T_ion``; the motion detuning follows from
    ``nu_ul T_ul = nu_ion T_ion``.  The spin detuning must satisfy
    ``Delta_ul T_ul = sum_l Delta_ion,l T_ion,l``; each mode receives an equal
    share of that phase, i.e. ``Delta_ion,l`` is proportional to ``1/T_ion,l``.
    If a carrier Rabi frequency ``epsilon_ion`` is given, the single-qubit
    rotation time follows from ``epsilon_ul T_ul = epsilon_ion T_sq``.
    """
    kappa_ion = [float(k) for k in kappa_ion]
    if len(kappa_ion) != len(unitless.kappas):
        raise ValueError("one sideband Rabi frequency per mode is required")
    if any(k <= 0 for k in kappa_ion):
        raise ValueError("sideband Rabi frequencies must be positive")
    n = len(kappa_ion)
    modes = []
    for k_ul, nu_ul, k_ion in zip(unitless.kappas, unitless.nus, kappa_ion):
        T_ion = k_ul * unitless.T / k_ion
        modes.append(IonModeParams(kappa=k_ion, nu=nu_ul * unitless.T / T_ion,
                                   delta=unitless.delta * unitless.T / (n * T_ion),
                                   T=T_ion))
    T_sq = None
    if epsilon_ion is not None:
        if epsilon_ion <= 0:
            raise ValueError("carrier Rabi frequency must be positive")
        T_sq = unitless.epsilon * unitless.T / epsilon_ion
    return IonParams(tuple(modes), epsilon_ion, T_sq)
