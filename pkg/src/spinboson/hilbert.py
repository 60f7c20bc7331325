"""Truncated-Fock operator algebra and state primitives.

The composite space is always ordered spin first, then the oscillator modes in
declaration order.  Every multi-slot operator in the package is built through
:func:`embed`, so that ordering lives in exactly one place.

Spin convention: ``|0> = [1, 0]`` is the donor state and ``sigma_z |0> = +|0>``,
so ``sigma_plus = |0><1|``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import reduce
from math import factorial, prod
from typing import Iterable

import numpy as np
from scipy import linalg

PSD_FLOOR = -1e-10
TAIL_TOLERANCE = 1e-6


class TruncationWarning(UserWarning):
    """Emitted when a state carries non-negligible weight near the Fock cutoff."""


@dataclass(frozen=True)
class HilbertLayout:
    """Slot dimensions of a spin coupled to oscillator modes.

    Slot 0 is the spin; slot ``l`` (``l >= 1``) is mode ``l - 1``.
    """

    fock_dims: tuple[int, ...]
    spin_dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "fock_dims", tuple(int(d) for d in self.fock_dims))
        if self.spin_dim != 2:
            raise ValueError("spin_dim must be 2")
        for d in self.fock_dims:
            if d < 2:
                raise ValueError(f"invalid Fock dimension {d}; need d >= 2")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.spin_dim, *self.fock_dims)

    @property
    def dim(self) -> int:
        return prod(self.dims)

    @property
    def n_modes(self) -> int:
        return len(self.fock_dims)


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------

def fock_operators(d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Annihilation, creation and number operators truncated to ``d`` levels.

    Returns
    -------
    annihilate, create, number : ndarray
        ``annihilate[n-1, n] = sqrt(n)``; ``create`` is its adjoint and
        ``number = diag(0, ..., d-1)``.
    """
    if int(d) != d or d < 2:
        raise ValueError(f"invalid Fock dimension {d}; need d >= 2")
    d = int(d)
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1).astype(complex)
    return a, a.conj().T.copy(), np.diag(np.arange(d, dtype=float)).astype(complex)


def pauli() -> dict[str, np.ndarray]:
    """Spin-1/2 operators in the donor-first basis."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    sp = np.array([[0, 1], [0, 0]], dtype=complex)
    return {"I": np.eye(2, dtype=complex), "X": sx, "Y": sy, "Z": sz,
            "plus": sp, "minus": sp.conj().T.copy()}


def sigma_phi(phi: float) -> np.ndarray:
    """``sigma_+ e^{i phi} + sigma_- e^{-i phi}``."""
    return np.array([[0, np.exp(1j * phi)], [np.exp(-1j * phi), 0]], dtype=complex)


HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


def embed(op: np.ndarray, slot: int, layout: HilbertLayout) -> np.ndarray:
    """Lift a single-slot operator to the full space: ``I x ... x op x ... x I``."""
    dims = layout.dims
    if not 0 <= slot < len(dims):
        raise IndexError(f"slot {slot} out of range for layout with {len(dims)} slots")
    op = np.asarray(op, dtype=complex)
    if op.shape != (dims[slot], dims[slot]):
        raise ValueError(
            f"operator shape {op.shape} does not match slot {slot} dimension {dims[slot]}")
    factors = [np.eye(d, dtype=complex) for d in dims]
    factors[slot] = op
    return reduce(np.kron, factors)


def embed_many(ops: dict[int, np.ndarray], layout: HilbertLayout) -> np.ndarray:
    """Tensor product with several slots replaced at once (identity elsewhere)."""
    factors = [np.eye(d, dtype=complex) for d in layout.dims]
    for slot, op in ops.items():
        if op.shape != factors[slot].shape:
            raise ValueError(f"operator for slot {slot} has shape {op.shape}")
        factors[slot] = np.asarray(op, dtype=complex)
    return reduce(np.kron, factors)


# --------------------------------------------------------------------------
# states
# --------------------------------------------------------------------------

def thermal_populations(nbar: float, d: int) -> tuple[np.ndarray, float]:
    """Renormalized Bose-Einstein populations and the discarded tail mass."""
    if nbar < 0:
        raise ValueError(f"nbar must be non-negative, got {nbar}")
    if d < 2:
        raise ValueError(f"invalid Fock dimension {d}; need d >= 2")
    if nbar == 0:
        p = np.zeros(d)
        p[0] = 1.0
        return p, 0.0
    q = nbar / (1.0 + nbar)
    p = (1.0 - q) * q ** np.arange(d)
    tail = q ** d
    return p / p.sum(), float(tail)


def thermal_state(nbar: float, d: int) -> np.ndarray:
    """Thermal oscillator density matrix with mean occupation ``nbar``.

    A :class:`TruncationWarning` is raised when the truncated tail exceeds 1e-6.
    """
    p, tail = thermal_populations(nbar, d)
    if tail > TAIL_TOLERANCE:
        warnings.warn(f"thermal state nbar={nbar} truncated at d={d} loses {tail:.2e}",
                      TruncationWarning, stacklevel=2)
    return np.diag(p).astype(complex)


def coherent_amplitudes(alpha: complex | np.ndarray, d: int) -> np.ndarray:
    """Unnormalized Fock amplitudes ``alpha^n / sqrt(n!)``; broadcasts over ``alpha``."""
    alpha = np.asarray(alpha, dtype=complex)
    n = np.arange(d)
    inv_sqrt_fact = np.array([1.0 / np.sqrt(float(factorial(k))) for k in n])
    with np.errstate(invalid="ignore"):
        powers = alpha[..., None] ** n
    powers[..., 0] = 1.0
    return powers * inv_sqrt_fact


def coherent_state(alpha: complex, d: int) -> np.ndarray:
    """Normalized truncated coherent state ``|alpha>``."""
    amps = coherent_amplitudes(alpha, d)
    full_norm = np.exp(abs(alpha) ** 2)
    tail = 1.0 - float(np.sum(np.abs(amps) ** 2)) / full_norm
    if tail > TAIL_TOLERANCE:
        warnings.warn(f"coherent state |alpha|^2={abs(alpha)**2:.3g} truncated at d={d} "
                      f"loses {tail:.2e}", TruncationWarning, stacklevel=2)
    return amps / np.linalg.norm(amps)


def basis_state(index: int, d: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[index] = 1.0
    return v


def product_state(*factors: np.ndarray) -> np.ndarray:
    """Kronecker product of state vectors or density matrices, spin first."""
    return reduce(np.kron, factors)


def ket_to_dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def check_density_matrix(rho: np.ndarray, atol: float = 1e-10) -> None:
    """Raise ``ValueError`` unless ``rho`` is Hermitian, unit-trace and PSD."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if not np.all(np.isfinite(rho)):
        raise ValueError("density matrix has non-finite entries")
    if np.max(np.abs(rho - rho.conj().T)) > atol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > atol:
        raise ValueError(f"density matrix trace is {np.trace(rho).real:.12g}")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -abs(PSD_FLOOR) - atol:
        raise ValueError("density matrix has negative eigenvalues")


def _psd_sqrt(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``."""
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    if rho.shape != sigma.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    s = _psd_sqrt(rho)
    inner = s @ sigma @ s
    w = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    f = float(np.sum(np.sqrt(np.clip(w, 0.0, None))) ** 2)
    return min(max(f, 0.0), 1.0)


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Half the trace norm of ``rho - sigma`` (works for non-Hermitian input)."""
    diff = np.asarray(rho) - np.asarray(sigma)
    if np.allclose(diff, diff.conj().T, atol=1e-14):
        return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))
    return 0.5 * float(np.sum(linalg.svdvals(diff)))


def partial_trace(rho: np.ndarray, layout: HilbertLayout, keep: Iterable[int]) -> np.ndarray:
    """Reduced density matrix on the slots in ``keep`` (kept in layout order)."""
    keep = sorted(set(int(k) for k in keep))
    dims = layout.dims
    if not keep:
        raise ValueError("keep must name at least one slot")
    if keep[0] < 0 or keep[-1] >= len(dims):
        raise IndexError(f"slot set {keep} out of range")
    n = len(dims)
    t = np.asarray(rho).reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    # einsum label bookkeeping: row index i, column index n+i; traced slots share labels
    letters = [chr(ord("a") + i) for i in range(2 * n)]
    for i in traced:
        letters[n + i] = letters[i]
    out = [letters[i] for i in keep] + [letters[n + i] for i in keep]
    sub = "".join(letters) + "->" + "".join(out)
    dk = prod(dims[i] for i in keep)
    return np.einsum(sub, t).reshape(dk, dk)


def spin_reduced_from_ket(psi: np.ndarray) -> np.ndarray:
    """Spin density matrix from a (possibly batched) state vector, spin first."""
    psi = np.asarray(psi)
    m = psi.reshape(psi.shape[:-1] + (2, -1))
    return np.einsum("...ik,...jk->...ij", m, m.conj())


def expect(op: np.ndarray, state: np.ndarray) -> complex:
    """Expectation value for either a state vector or a density matrix."""
    state = np.asarray(state)
    if state.ndim == 1:
        return complex(np.vdot(state, op @ state))
    return complex(np.trace(op @ state))


def tail_population(state: np.ndarray, layout: HilbertLayout, levels: int = 2) -> float:
    """Largest population in the top ``levels`` Fock levels over all modes."""
    rho = np.asarray(state)
    if rho.ndim == 1:
        rho = ket_to_dm(rho)
    worst = 0.0
    for m, d in enumerate(layout.fock_dims):
        red = partial_trace(rho, layout, [m + 1])
        worst = max(worst, float(np.real(np.trace(red[d - levels:, d - levels:]))))
    return worst
