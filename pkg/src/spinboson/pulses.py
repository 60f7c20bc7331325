"""Pulse-level layer: SDK/SQ Hamiltonians, Trotterized schedules, phase tracking
and simulated calibration scans.

Frame conventions
-----------------
A schedule simulates ``H_D`` in the Hadamard-rotated interaction picture.  With
``Hd`` the Hadamard gate, ``Hd H_D Hd`` swaps ``Z`` and ``X``; moving to the
interaction picture of ``(Delta/2) Z + sum nu_l n_l`` turns the coupling into

    ``(kappa_l/2) sigma_{Delta t} (b_l e^{-i nu_l t} + b_l^dag e^{i nu_l t})``

and the bias into ``(eps/2) sigma_{Delta t}``.  Trotter step ``j`` freezes
these phases at its midpoint ``t_j = (j - 1/2) T/N``.  (Read literally, the
midpoint formula is sometimes quoted as ``(j - 1/2) T/(N tau)``; that form mixes
the lab duration ``tau`` into a model time and is not used.  Both readings agree
when ``tau = T/N``, the simulation-frame default.)  The closing Hadamard record
carries the frame angle ``Delta T`` and is realised as ``Hd Rz(Delta T)``, so
the final state is the lab-frame state up to free oscillator rotations, which
do not affect spin observables.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .hilbert import HADAMARD, HilbertLayout, basis_state, embed, embed_many, fock_operators, pauli, sigma_phi
from .models import OscillatorMode, SpinParams
from .propagate import EvolutionResult


class PulseKind(str, enum.Enum):
    SQ = "SQ"
    SDK = "SDK"
    H = "H"


@dataclass(frozen=True)
class PulseRecord:
    """One pulse.

    ``H`` records apply ``Hd Rz(frame_phase)`` to the spin with
    ``Rz(phi) = exp(-i phi Z/2)``.  ``spin_shift`` adds ``(spin_shift/2) Z``
    for the duration of an SQ/SDK pulse (light shift).  ``step`` is the Trotter
    step the record belongs to (0 for framing records).
    """

    kind: PulseKind
    duration: float = 0.0
    rabi: float = 0.0
    spin_phase: float = 0.0
    motion_phase: float = 0.0
    motion_detuning: float = 0.0
    mode_index: int | None = None
    spin_offset: float = 0.0
    motion_offset: float = 0.0
    step: int = 0
    frame_phase: float = 0.0
    spin_shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PulseKind(self.kind))
        if self.duration < 0:
            raise ValueError(f"negative pulse duration {self.duration}")
        if self.kind is PulseKind.SDK and self.mode_index is None:
            raise ValueError("SDK records need a mode index")

    @property
    def blue_offset(self) -> float:
        return self.spin_offset + self.motion_offset

    @property
    def red_offset(self) -> float:
        return self.spin_offset - self.motion_offset


@dataclass(frozen=True)
class PulseSchedule:
    records: tuple[PulseRecord, ...]
    fock_dims: tuple[int, ...]
    frame_rate: float | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "fock_dims", tuple(int(d) for d in self.fock_dims))
        if not self.records:
            raise ValueError("schedule is empty")
        for rec in self.records:
            if rec.kind is PulseKind.SDK and not 0 <= rec.mode_index < len(self.fock_dims):
                raise ValueError(f"record references undeclared mode {rec.mode_index}")

    @property
    def layout(self) -> HilbertLayout:
        return HilbertLayout(self.fock_dims)

    @property
    def n_steps(self) -> int:
        return max((r.step for r in self.records), default=0)

    def sdk_indices(self) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.kind is PulseKind.SDK]


@dataclass(frozen=True)
class LightShiftModel:
    sq_sdk_phase_diff: float = 0.0
    sq_sdk_shift_diff: float = 0.0
    mode_detuning_errors: tuple[float, ...] = ()


# --------------------------------------------------------------------------
# Hamiltonians
# --------------------------------------------------------------------------

def _motion_quadrature(phi: float, d: int) -> np.ndarray:
    a, ad, _ = fock_operators(d)
    return a * np.exp(-1j * phi) + ad * np.exp(1j * phi)


def local_sdk_hamiltonian(rec: PulseRecord, d: int, extra_detuning: float = 0.0) -> np.ndarray:
    """SDK Hamiltonian on ``spin x mode`` (dimension ``2 d``)."""
    if rec.kind is not PulseKind.SDK:
        raise ValueError(f"expected an SDK record, got {rec.kind.value}")
    _, _, n = fock_operators(d)
    H = 0.5 * rec.rabi * np.kron(sigma_phi(rec.spin_phase), _motion_quadrature(rec.motion_phase, d))
    H = H + (rec.motion_detuning + extra_detuning) * np.kron(np.eye(2), n)
    if rec.spin_shift:
        H = H + 0.5 * rec.spin_shift * np.kron(pauli()["Z"], np.eye(d))
    return H


def sdk_hamiltonian(rec: PulseRecord, layout: HilbertLayout) -> np.ndarray:
    """``(Om/2) sigma_phis (b e^{-i phim} + h.c.) + delta_m n`` on the full space."""
    if rec.kind is not PulseKind.SDK:
        raise ValueError(f"expected an SDK record, got {rec.kind.value}")
    slot = rec.mode_index + 1
    d = layout.fock_dims[rec.mode_index]
    _, _, n = fock_operators(d)
    H = 0.5 * rec.rabi * embed_many({0: sigma_phi(rec.spin_phase),
                                     slot: _motion_quadrature(rec.motion_phase, d)}, layout)
    H = H + rec.motion_detuning * embed(n, slot, layout)
    if rec.spin_shift:
        H = H + 0.5 * rec.spin_shift * embed(pauli()["Z"], 0, layout)
    return H


def sq_hamiltonian(rec: PulseRecord) -> np.ndarray:
    """``(Om/2) sigma_phi`` (plus any light-shift term) on the spin."""
    if rec.kind is not PulseKind.SQ:
        raise ValueError(f"expected an SQ record, got {rec.kind.value}")
    return 0.5 * rec.rabi * sigma_phi(rec.spin_phase) + 0.5 * rec.spin_shift * pauli()["Z"]


def rz(phi: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * phi), np.exp(0.5j * phi)])


def _expm_herm(H: np.ndarray, t: float) -> np.ndarray:
    w, v = np.linalg.eigh(H)
    return (v * np.exp(-1j * w * t)[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


def record_unitary(rec: PulseRecord, d: int | None = None, extra_detuning=None) -> np.ndarray:
    """Local unitary of one record: 2x2 for SQ/H, ``2d x 2d`` for SDK.

    ``extra_detuning`` may be an array, in which case a batch of unitaries is
    returned (one per value).
    """
    if rec.kind is PulseKind.H:
        return HADAMARD @ rz(rec.frame_phase)
    if rec.kind is PulseKind.SQ:
        return _expm_herm(sq_hamiltonian(rec), rec.duration)
    H = local_sdk_hamiltonian(rec, d)
    if extra_detuning is None:
        return _expm_herm(H, rec.duration)
    extra = np.asarray(extra_detuning, dtype=float)
    _, _, n = fock_operators(d)
    Hb = H + extra[:, None, None] * np.kron(np.eye(2), n)
    return _expm_herm(Hb, rec.duration)


# --------------------------------------------------------------------------
# compilation
# --------------------------------------------------------------------------

def trotterize(spin: SpinParams, modes: Sequence[OscillatorMode], T: float, N: int,
               tau_sdk: float | Sequence[float] | None = None, tau_sq: float | None = None,
               rabi_map: dict | None = None) -> PulseSchedule:
    """Compile ``H_D`` (without dissipation) into ``H, [SQ, SDK_1..SDK_M] x N, H``.

    Per step the pulse areas are ``Om_sq tau_sq = eps T/N`` and
    ``Om_l tau_l = kappa_l T/N``.  Durations default to ``T/N`` (simulation
    frame).  ``rabi_map = {"sdk": [Om_1, ...], "sq": Om}`` fixes Rabi
    frequencies instead and derives durations; explicit ``tau_sdk``/``tau_sq``
    fix durations and derive Rabi frequencies.  SQ records are omitted when
    ``eps = 0``; SDK records within a step are interleaved mode by mode.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if T <= 0:
        raise ValueError("T must be positive")
    modes = list(modes)
    if not modes:
        raise ValueError("at least one mode is required")
    dt = T / N
    rabi_map = rabi_map or {}

    sdk = []
    for l, m in enumerate(modes):
        area = m.kappa * dt
        if "sdk" in rabi_map:
            om = float(rabi_map["sdk"][l])
            if om <= 0:
                raise ValueError(f"unrealizable SDK amplitude for mode {l}")
            tau = area / om
        elif tau_sdk is not None:
            tau = float(np.broadcast_to(tau_sdk, (len(modes),))[l])
            if tau <= 0:
                raise ValueError("SDK durations must be positive")
            om = area / tau
        else:
            tau, om = dt, m.kappa
        sdk.append((tau, om))

    sq = None
    if spin.epsilon != 0:
        area = abs(spin.epsilon) * dt
        if "sq" in rabi_map:
            om = float(rabi_map["sq"])
            if om <= 0:
                raise ValueError("unrealizable SQ amplitude")
            tau = area / om
        elif tau_sq is not None:
            if tau_sq <= 0:
                raise ValueError("SQ duration must be positive")
            tau, om = float(tau_sq), area / tau_sq
        else:
            tau, om = dt, abs(spin.epsilon)
        # a negative bias is a pi shift of the spin phase
        sq = (tau, om, 0.0 if spin.epsilon > 0 else math.pi)

    records = [PulseRecord(PulseKind.H)]
    for j in range(1, N + 1):
        t_j = (j - 0.5) * dt
        if sq is not None:
            records.append(PulseRecord(PulseKind.SQ, sq[0], sq[1], spin.delta * t_j + sq[2], step=j))
        for l, m in enumerate(modes):
            records.append(PulseRecord(PulseKind.SDK, sdk[l][0], sdk[l][1], spin.delta * t_j,
                                       m.nu * t_j, 0.0, l, step=j))
    records.append(PulseRecord(PulseKind.H, frame_phase=spin.delta * T))
    meta = {"T": T, "N": N, "dt": dt, "nus": tuple(m.nu for m in modes),
            "kappas": tuple(m.kappa for m in modes), "epsilon": spin.epsilon,
            "delta": spin.delta,
            # equivalent constant-detuning (hardware-frame) view of the phase ramps
            "equivalent_spin_detuning": tuple(spin.delta * dt / s[0] for s in sdk),
            "equivalent_motion_detuning": tuple(m.nu * dt / s[0] for m, s in zip(modes, sdk))}
    return PulseSchedule(tuple(records), tuple(m.fock_dim for m in modes), spin.delta, meta)


def check_areas(sched: PulseSchedule) -> bool:
    """Verify ``rabi * duration`` equals the per-step target area for every pulse."""
    dt = sched.metadata["dt"]
    for rec in sched.records:
        if rec.kind is PulseKind.SDK:
            target = sched.metadata["kappas"][rec.mode_index] * dt
        elif rec.kind is PulseKind.SQ:
            target = abs(sched.metadata["epsilon"]) * dt
        else:
            continue
        if abs(rec.rabi * rec.duration - target) > 1e-12 * max(1.0, target):
            return False
    return True


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

def _apply_spin(U: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``psi`` shaped ``(B, 2, R)``."""
    return np.einsum("ij,bjr->bir", U, psi)


def _apply_sdk(U: np.ndarray, psi: np.ndarray, mode: int, dims: tuple[int, ...]) -> np.ndarray:
    """Apply a ``2d x 2d`` (or batched ``(B, 2d, 2d)``) unitary on spin x mode."""
    B = psi.shape[0]
    t = psi.reshape((B, 2) + dims)
    t = np.moveaxis(t, 2 + mode, 2)
    shape = t.shape
    flat = t.reshape(B, 2 * dims[mode], -1)
    flat = U @ flat
    t = np.moveaxis(flat.reshape(shape), 2, 2 + mode)
    return t.reshape(B, 2, -1)


def _frame_row(sched: PulseSchedule, t: float) -> np.ndarray:
    """Row vector ``<0| Hd Rz(Delta t)`` mapping the simulation frame to the lab."""
    rate = sched.frame_rate or 0.0
    return (HADAMARD @ rz(rate * t))[0]


def _sample_points(sched: PulseSchedule) -> dict[int, int]:
    """Record index after which each Trotter step is complete."""
    last = {}
    for i, rec in enumerate(sched.records):
        if rec.step > 0:
            last[rec.step] = i
    return {i: s for s, i in last.items()}


def simulate_batch(sched: PulseSchedule, psi0: np.ndarray,
                   extra_detunings: np.ndarray | None = None):
    """Run many trajectories of one schedule at once.

    Parameters
    ----------
    psi0 : ndarray
        ``(B, dim)`` initial states (or a single ``(dim,)`` state).
    extra_detunings : ndarray, optional
        ``(B, n_sdk)`` motion-detuning offsets added to the SDK records in
        schedule order.

    Returns
    -------
    times : ndarray
        Model times ``0, T/N, ..., T`` (or ``[0, 1]`` for schedules without steps).
    p0 : ndarray
        ``(B, n_times)`` donor populations in the lab frame.
    final : ndarray
        ``(B, dim)`` states after the last record.
    """
    dims = sched.fock_dims
    psi = np.array(psi0, dtype=complex)
    if psi.ndim == 1:
        psi = psi[None]
    B = psi.shape[0]
    dim = 2 * math.prod(dims)
    if psi.shape[1] != dim:
        raise ValueError(f"state dimension {psi.shape[1]} does not match schedule ({dim})")
    psi = psi.reshape(B, 2, -1)
    sdk_idx = sched.sdk_indices()
    if extra_detunings is not None:
        extra_detunings = np.asarray(extra_detunings, dtype=float)
        if extra_detunings.shape != (B, len(sdk_idx)):
            raise ValueError(f"extra_detunings must have shape {(B, len(sdk_idx))}")
    samples = _sample_points(sched)
    dt = sched.metadata.get("dt")
    stepped = bool(samples) and dt is not None

    def p0_frame(t):
        w = _frame_row(sched, t)
        amp = np.einsum("s,bsr->br", w, psi)
        return np.sum(np.abs(amp) ** 2, axis=1)

    p0 = [np.sum(np.abs(psi[:, 0]) ** 2, axis=1)]
    times = [0.0]
    cache: dict[int, np.ndarray] = {}
    k = 0
    for i, rec in enumerate(sched.records):
        if rec.kind is PulseKind.SDK:
            d = dims[rec.mode_index]
            if extra_detunings is not None and np.any(extra_detunings[:, k]):
                U = record_unitary(rec, d, extra_detunings[:, k])
            else:
                U = cache.get(i)
                if U is None:
                    U = cache[i] = record_unitary(rec, d)
            psi = _apply_sdk(U, psi, rec.mode_index, dims)
            k += 1
        else:
            psi = _apply_spin(record_unitary(rec), psi)
        if stepped and i in samples:
            t = samples[i] * dt
            times.append(t)
            p0.append(p0_frame(t))
    if not stepped:
        times.append(1.0)
        p0.append(np.sum(np.abs(psi[:, 0]) ** 2, axis=1))
    return np.array(times), np.stack(p0, axis=1), psi.reshape(B, -1)


def simulate_schedule(sched: PulseSchedule, psi0: np.ndarray,
                      detunings: np.ndarray | None = None) -> EvolutionResult:
    """Exact pulse-by-pulse evolution of one state vector.

    ``P0`` is sampled (in the lab frame) after every Trotter step.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1) > 1e-10:
        raise ValueError("initial state is not normalized")
    extra = None if detunings is None else np.asarray(detunings, dtype=float)[None]
    times, p0, final = simulate_batch(sched, psi0, extra)
    return EvolutionResult(times, {"P0": p0[0]}, final[0],
                           info={"norm": float(np.linalg.norm(final[0]))})


def simulate_schedule_averaged(sched: PulseSchedule, rho0: np.ndarray,
                               detuning_std: float | Sequence[float] = 0.0,
                               n_nodes: int = 24) -> EvolutionResult:
    """Density-matrix simulation averaged exactly over Gaussian SDK detunings.

    Each SDK record with detuning spread ``sigma`` is replaced by the channel
    ``rho -> E_delta[U(delta) rho U(delta)^dag]``, ``delta ~ Normal(0, sigma)``,
    evaluated with ``n_nodes``-point Gauss-Hermite quadrature.  This is the
    infinite-trial limit of the random-detuning ensemble.
    ``detuning_std`` is a scalar or one value per SDK record.
    """
    dims = sched.fock_dims
    dim = 2 * math.prod(dims)
    rho = np.array(rho0, dtype=complex)
    if rho.shape != (dim, dim):
        raise ValueError("density matrix does not match schedule dimension")
    sdk_idx = sched.sdk_indices()
    stds = np.broadcast_to(np.asarray(detuning_std, dtype=float), (len(sdk_idx),))
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    samples = _sample_points(sched)
    dt = sched.metadata.get("dt")
    stepped = bool(samples) and dt is not None

    def left(U, M, spin_only, mode=None):
        # U applied to the rows index of M (i.e. U @ M) via batch-over-columns
        cols = M.T.reshape(dim, 2, -1)
        out = _apply_spin(U, cols) if spin_only else _apply_sdk(U, cols, mode, dims)
        return out.reshape(dim, dim).T

    def conj_by(U, M, spin_only, mode=None):
        A = left(U, M, spin_only, mode)
        return left(U, A.conj().T, spin_only, mode).conj().T

    def p0_frame(t):
        row = _frame_row(sched, t)
        r4 = rho.reshape(2, dim // 2, 2, dim // 2)
        return float(np.real(np.einsum("s,srtr,t->", row, r4, row.conj())))

    times, p0 = [0.0], [float(np.real(np.trace(rho[: dim // 2, : dim // 2])))]
    k = 0
    for i, rec in enumerate(sched.records):
        if rec.kind is PulseKind.SDK:
            d = dims[rec.mode_index]
            sigma = stds[k]
            if sigma > 0:
                Us = record_unitary(rec, d, sigma * x)
                rho = sum(wk * conj_by(Uk, rho, False, rec.mode_index) for wk, Uk in zip(w, Us))
            else:
                rho = conj_by(record_unitary(rec, d), rho, False, rec.mode_index)
            k += 1
        else:
            rho = conj_by(record_unitary(rec), rho, True)
        if stepped and i in samples:
            t = samples[i] * dt
            times.append(t)
            p0.append(p0_frame(t))
    if not stepped:
        times.append(1.0)
        p0.append(float(np.real(np.trace(rho[: dim // 2, : dim // 2]))))
    return EvolutionResult(np.array(times), {"P0": np.array(p0)}, rho)


def dephasing_detuning_std(gamma: float, dt: float, tau: float) -> float:
    """Detuning spread that realises rate ``gamma`` per step: ``sqrt(gamma dt) / tau``."""
    if gamma < 0 or dt <= 0 or tau <= 0:
        raise ValueError("invalid dephasing parameters")
    return math.sqrt(gamma * dt) / tau


def sdk_detuning_stds(sched: PulseSchedule, gammas: Sequence[float]) -> np.ndarray:
    """Per-SDK-record detuning spread for per-mode rates ``gammas``."""
    dt = sched.metadata["dt"]
    return np.array([dephasing_detuning_std(gammas[sched.records[i].mode_index], dt,
                                            sched.records[i].duration)
                     for i in sched.sdk_indices()])


# --------------------------------------------------------------------------
# phase tracking
# --------------------------------------------------------------------------

def phase_track(sched: PulseSchedule, ls: LightShiftModel,
                nus: Sequence[float] | None = None) -> PulseSchedule:
    """Fill per-record phase offsets relative to free-running RF references.

    The motional reference of mode ``l`` runs at the programmed tone frequency
    while the ion's motion advances at ``nu_l + e_l`` (``e_l`` a detuning error),
    so an SDK starting at hardware time ``t`` needs a motion offset
    ``(nu_l + e_l) t``.  The ion spin phase picks up ``sq_sdk_shift_diff`` per
    unit of accumulated SDK time, plus the constant ``sq_sdk_phase_diff`` during
    SDKs.  Blue/red tone offsets are ``spin +/- motion``.
    """
    nus = tuple(nus) if nus is not None else tuple(sched.metadata.get("nus", ()))
    errors = tuple(ls.mode_detuning_errors) or (0.0,) * len(sched.fock_dims)
    if len(errors) != len(sched.fock_dims):
        raise ValueError("one detuning error per mode is required")
    t = 0.0
    sdk_time = 0.0
    out = []
    for rec in sched.records:
        if rec.kind is PulseKind.SDK:
            l = rec.mode_index
            if l >= len(nus):
                raise ValueError("mode frequencies are needed for phase tracking")
            rec = replace(rec, motion_offset=(nus[l] + errors[l]) * t,
                          spin_offset=ls.sq_sdk_phase_diff + ls.sq_sdk_shift_diff * sdk_time)
            sdk_time += rec.duration
        elif rec.kind is PulseKind.SQ:
            rec = replace(rec, spin_offset=ls.sq_sdk_shift_diff * sdk_time, motion_offset=0.0)
        t += rec.duration
        out.append(rec)
    return replace(sched, records=tuple(out))


def split_record(sched: PulseSchedule, index: int) -> PulseSchedule:
    """Replace record ``index`` by two back-to-back halves of the same pulse."""
    rec = sched.records[index]
    half = replace(rec, duration=0.5 * rec.duration)
    recs = sched.records[:index] + (half, half) + sched.records[index + 1:]
    return replace(sched, records=recs)


# --------------------------------------------------------------------------
# text export
# --------------------------------------------------------------------------

SCHEDULE_FIELDS = ("kind", "duration", "rabi", "spin_phase", "motion_phase", "motion_detuning",
                   "mode_index", "spin_offset", "motion_offset", "step", "frame_phase",
                   "spin_shift")


def schedule_to_text(sched: PulseSchedule) -> str:
    """One whitespace-separated line per record in ``SCHEDULE_FIELDS`` order.

    The header comment lists the Fock dimensions and frame rate.
    """
    lines = [f"# fock_dims {' '.join(str(d) for d in sched.fock_dims)}",
             f"# frame_rate {'none' if sched.frame_rate is None else repr(sched.frame_rate)}",
             "# " + " ".join(SCHEDULE_FIELDS)]
    for r in sched.records:
        vals = []
        for name in SCHEDULE_FIELDS:
            v = getattr(r, name)
            if name == "kind":
                vals.append(v.value)
            elif name == "mode_index":
                vals.append("-" if v is None else str(v))
            elif name == "step":
                vals.append(str(v))
            else:
                vals.append("%.17g" % v)
        lines.append(" ".join(vals))
    return "\n".join(lines) + "\n"


def schedule_from_text(text: str, metadata: dict | None = None) -> PulseSchedule:
    dims, rate, recs = None, None, []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("# fock_dims"):
            dims = tuple(int(x) for x in line.split()[2:])
            continue
        if line.startswith("# frame_rate"):
            v = line.split()[2]
            rate = None if v == "none" else float(v)
            continue
        if line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != len(SCHEDULE_FIELDS):
            raise ValueError(f"malformed schedule line: {raw!r}")
        kw = {}
        for name, v in zip(SCHEDULE_FIELDS, parts):
            if name == "kind":
                kw[name] = PulseKind(v)
            elif name == "mode_index":
                kw[name] = None if v == "-" else int(v)
            elif name == "step":
                kw[name] = int(v)
            else:
                kw[name] = float(v)
        recs.append(PulseRecord(**kw))
    if dims is None:
        raise ValueError("schedule text lacks the fock_dims header")
    return PulseSchedule(tuple(recs), dims, rate, metadata or {})


# --------------------------------------------------------------------------
# calibration scans
# --------------------------------------------------------------------------

def _scan_fock_dim(alpha_max: float) -> int:
    return int(math.ceil(alpha_max ** 2 + 8 * alpha_max + 20))


def _scan(records_for, grid, d: int) -> np.ndarray:
    psi0 = np.kron(basis_state(0, 2), basis_state(0, d))
    out = []
    for x in np.asarray(grid, dtype=float):
        sched = PulseSchedule(tuple(records_for(x)), (d,))
        _, p0, _ = simulate_batch(sched, psi0)
        out.append(p0[0, -1])
    return np.array(out)


def calibrate_spin_phase_scan(phi0_grid, tau_per_kick: float, n_kicks: int = 5,
                              rabi: float = 1.0) -> np.ndarray:
    """``H, n_kicks SDKs (motion phases 0, pi, 0, ...; spin phase phi0), H`` on ``|0, 0>``.

    Returns ``P0`` for each ``phi0``.  Durations are in units of ``1/rabi``;
    the sideband pi-time is ``pi / rabi``.
    """
    if tau_per_kick <= 0 or n_kicks < 1:
        raise ValueError("invalid scan settings")
    d = _scan_fock_dim(rabi * tau_per_kick / 2)

    def recs(phi0):
        kicks = [PulseRecord(PulseKind.SDK, tau_per_kick, rabi, phi0, math.pi * (k % 2), 0.0, 0)
                 for k in range(n_kicks)]
        return [PulseRecord(PulseKind.H), *kicks, PulseRecord(PulseKind.H)]
    return _scan(recs, phi0_grid, d)


def calibrate_light_shift_scan(shift_grid, tau_per_kick: float, n_kicks: int = 5,
                               rabi: float = 1.0) -> np.ndarray:
    """Spin-phase sequence at ``phi0 = 0`` with ``(shift/2) Z`` added during every SDK."""
    if tau_per_kick <= 0 or n_kicks < 1:
        raise ValueError("invalid scan settings")
    d = _scan_fock_dim(rabi * tau_per_kick / 2)

    def recs(shift):
        kicks = [PulseRecord(PulseKind.SDK, tau_per_kick, rabi, 0.0, math.pi * (k % 2), 0.0, 0,
                             spin_shift=shift) for k in range(n_kicks)]
        return [PulseRecord(PulseKind.H), *kicks, PulseRecord(PulseKind.H)]
    return _scan(recs, shift_grid, d)


def calibrate_motion_freq_scan(detuning_grid, tau_per_kick: float, rabi: float = 1.0,
                               spin_phase: float = math.pi / 2) -> np.ndarray:
    """``H``, four SDKs at motion phases ``0, pi/2, pi, 3pi/2`` with detuning ``delta``, ``H``.

    The spin phase defaults to ``pi/2``: after the Hadamard the spin is in
    ``|+>``, an eigenstate of ``sigma_0``, for which the kicks would not
    entangle spin and motion and the scan would be flat.
    """
    if tau_per_kick <= 0:
        raise ValueError("invalid scan settings")
    d = _scan_fock_dim(rabi * tau_per_kick)

    def recs(delta):
        kicks = [PulseRecord(PulseKind.SDK, tau_per_kick, rabi, spin_phase, k * math.pi / 2,
                             delta, 0) for k in range(4)]
        return [PulseRecord(PulseKind.H), *kicks, PulseRecord(PulseKind.H)]
    return _scan(recs, detuning_grid, d)


def scan_width(grid, curve) -> float:
    """Curvature linewidth of the central peak: ``2 / sqrt(|P''(x_peak)|)``.

    This is the full width at which the osculating parabola at the maximum has
    dropped by 1/2.  ``P''`` comes from a central second difference, so the
    grid must be uniform and fine near the peak.  A level-free definition is
    used because the scans differ in depth (the spin-phase scan has the shape
    ``1 - c sin^2(phi0)``: longer kicks deepen it without moving its half-depth
    points) and some have side peaks that return to 1.
    """
    grid = np.asarray(grid, dtype=float)
    curve = np.asarray(curve, dtype=float)
    tops = np.flatnonzero(curve >= curve.max() - 1e-12)
    c = int(tops[np.argmin(np.abs(tops - (len(curve) - 1) / 2))])
    if c == 0 or c == len(curve) - 1:
        raise ValueError("peak lies on the grid boundary")
    h = grid[c + 1] - grid[c]
    if not np.isclose(h, grid[c] - grid[c - 1], rtol=1e-9):
        raise ValueError("grid must be uniform around the peak")
    second = (curve[c + 1] - 2 * curve[c] + curve[c - 1]) / h ** 2
    if second >= 0:
        raise ValueError("curve is not peaked at its maximum")
    return float(2.0 / np.sqrt(-second))
