"""Command-line scenario runner.

Exit codes: 0 success, 1 usage or configuration error, 2 engine error.

Scenario configs are INI-style text::

    [spin]
    epsilon = 0
    delta = 1

    [mode.1]
    nu = 1
    kappa = 0.1
    gamma = 0.2

    [run]
    t_max = 75.398
    method = lindblad

Frequencies are in units of the spin coupling ``delta`` unless a ``[units]``
section gives ``reference_delta_cm``; then frequencies are wavenumbers (cm^-1),
``t_max`` is in picoseconds, and every frequency is divided by the reference.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .correlation import (Corr2Params, corr2_analytic, corr2_numeric, corr4_closed,
                          corr4_numeric)
from .hilbert import basis_state, ket_to_dm, thermal_state
from .models import (DissipationKind, Leggett, LorentzianSum, OscillatorMode, SpinParams,
                     UnitlessParams, beta_of, build_model, map_parameters, map_to_ion,
                     wavenumber_to_angular)
from .propagate import TimeGrid, lindblad_evolve, tcl2_evolve
from .pulses import (calibrate_light_shift_scan, calibrate_motion_freq_scan,
                     calibrate_spin_phase_scan, scan_width, schedule_to_text,
                     sdk_detuning_stds, simulate_schedule_averaged, trotterize)
from .specfit import FitProblem, fit_lorentzians, leggett_problem, mean_relative_deviation
from .stochastic import TrotterScenario, run_ensemble

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ENGINE = 2

METHODS = ("lindblad", "trajectories", "tcl2", "pulse")
PULSE_METHODS = ("trajectories", "pulse")
THREADS_ENV = "SPINBOSON_THREADS"


class UsageError(Exception):
    """Bad command line or configuration; maps to exit code 1."""


class ConfigError(UsageError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

_REQUIRED = object()

_SCHEMA = {
    "spin": {"epsilon": (float, 0.0), "delta": (float, _REQUIRED)},
    "mode": {"nu": (float, _REQUIRED), "kappa": (float, _REQUIRED), "gamma": (float, 0.0),
             "nbar": (float, 0.0), "fock_dim": (int, 15)},
    "run": {"t_max": (float, _REQUIRED), "samples": (int, None), "method": (str, _REQUIRED),
            "dissipation": (str, "dephased"), "trajectories": (int, None),
            "trotter_steps": (int, None), "seed": (int, None)},
    "prep": {"n_kicks": (int, _REQUIRED), "kick_duration": (float, _REQUIRED),
             "rabi": (float, 1.0)},
    "units": {"reference_delta_cm": (float, _REQUIRED)},
}


@dataclass(frozen=True)
class SpinSection:
    epsilon: float
    delta: float


@dataclass(frozen=True)
class ModeSection:
    nu: float
    kappa: float
    gamma: float
    nbar: float
    fock_dim: int


@dataclass(frozen=True)
class RunSection:
    t_max: float
    samples: int
    method: str
    dissipation: str
    trajectories: int | None
    trotter_steps: int | None
    seed: int | None


@dataclass(frozen=True)
class PrepSection:
    n_kicks: int
    kick_duration: float
    rabi: float


@dataclass(frozen=True)
class UnitsSection:
    reference_delta_cm: float


@dataclass(frozen=True)
class ScenarioConfig:
    spin: SpinSection
    modes: tuple[ModeSection, ...]
    run: RunSection
    prep: PrepSection | None = None
    units: UnitsSection | None = None

    def as_dict(self) -> dict:
        out = {"spin": _section_dict(self.spin)}
        for i, m in enumerate(self.modes, start=1):
            out[f"mode.{i}"] = _section_dict(m)
        out["run"] = _section_dict(self.run)
        if self.prep is not None:
            out["prep"] = _section_dict(self.prep)
        if self.units is not None:
            out["units"] = _section_dict(self.units)
        return out


def _section_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _convert(kind, raw: str, key: str, line: int):
    try:
        if kind is int:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if kind is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
            return value
        return raw
    except ValueError:
        raise ConfigError(f"invalid {kind.__name__} value {raw!r} for key {key!r}", line) from None


def _tokenize(text: str):
    """Yield ``(section, line, {key: (value, line)})`` in file order."""
    sections: list[tuple[str, int, dict]] = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            name = line[1:-1].strip()
            if any(name == s[0] for s in sections):
                raise ConfigError(f"duplicate section [{name}]", lineno)
            current = (name, lineno, {})
            sections.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if current is None:
            raise ConfigError("key outside of any section", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if key in current[2]:
            raise ConfigError(f"duplicate key {key!r} in [{current[0]}]", lineno)
        current[2][key] = (value, lineno)
    return sections


def _typed_section(schema_name: str, name: str, header_line: int, entries: dict) -> dict:
    schema = _SCHEMA[schema_name]
    out = {}
    for key, (value, line) in entries.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{name}]", line)
        out[key] = _convert(schema[key][0], value, key, line)
    for key, (_, default) in schema.items():
        if key not in out:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r} in [{name}]", header_line)
            out[key] = default
    return out


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario config, applying defaults.

    Raises
    ------
    ConfigError
        With the offending line number for syntax errors, unknown keys,
        missing required keys and invalid values.
    """
    found: dict[str, dict] = {}
    modes: list[tuple[int, dict, int]] = []
    header_lines: dict[str, int] = {}
    for name, line, entries in _tokenize(text):
        if name.startswith("mode."):
            index = name[5:]
            if not index.isdigit() or int(index) < 1:
                raise ConfigError(f"mode sections are named [mode.1], [mode.2], ...; got [{name}]",
                                  line)
            modes.append((int(index), _typed_section("mode", name, line, entries), line))
        elif name in _SCHEMA and name != "mode":
            found[name] = _typed_section(name, name, line, entries)
            header_lines[name] = line
        else:
            raise ConfigError(f"unknown section [{name}]", line)
    for required in ("spin", "run"):
        if required not in found:
            raise ConfigError(f"missing required section [{required}]")
    if not modes:
        raise ConfigError("at least one [mode.K] section is required")
    modes.sort()
    if [m[0] for m in modes] != list(range(1, len(modes) + 1)):
        raise ConfigError("mode sections must be numbered 1..M without gaps", modes[-1][2])

    run = dict(found["run"])
    rl = header_lines["run"]
    if run["method"] not in METHODS:
        raise ConfigError(f"method must be one of {', '.join(METHODS)}", rl)
    if run["dissipation"] not in {k.value for k in DissipationKind}:
        raise ConfigError("dissipation must be none, dephased or damped", rl)
    if run["method"] in PULSE_METHODS:
        if run["trotter_steps"] is None:
            raise ConfigError(f"method {run['method']} requires trotter_steps", rl)
        if run["dissipation"] == "damped":
            raise ConfigError("pulse-level methods implement number dephasing only", rl)
        if run["samples"] is None:
            run["samples"] = run["trotter_steps"] + 1
        if run["trotter_steps"] % max(run["samples"] - 1, 1):
            raise ConfigError("samples - 1 must divide trotter_steps", rl)
    elif run["samples"] is None:
        run["samples"] = 200
    if run["method"] == "trajectories":
        for key in ("trajectories", "seed"):
            if run[key] is None:
                raise ConfigError(f"method trajectories requires {key}", rl)
        if run["trajectories"] < 1:
            raise ConfigError("trajectories must be positive", rl)
    if run["samples"] < 2:
        raise ConfigError("samples must be at least 2", rl)
    if not run["t_max"] > 0:
        raise ConfigError("t_max must be positive", rl)

    cfg = ScenarioConfig(SpinSection(**found["spin"]),
                         tuple(ModeSection(**m[1]) for m in modes),
                         RunSection(**run),
                         PrepSection(**found["prep"]) if "prep" in found else None,
                         UnitsSection(**found["units"]) if "units" in found else None)
    if cfg.prep is not None:
        if cfg.prep.n_kicks < 1 or cfg.prep.kick_duration <= 0 or cfg.prep.rabi <= 0:
            raise ConfigError("prep needs positive n_kicks, kick_duration and rabi",
                              header_lines["prep"])
        if any(m.nbar != 0 for m in cfg.modes):
            raise ConfigError("nbar must be left at 0 when a [prep] section sets it",
                              header_lines["prep"])
    if cfg.units is not None and not cfg.units.reference_delta_cm > 0:
        raise ConfigError("reference_delta_cm must be positive", header_lines["units"])
    try:
        unitless_model(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def emit_config(cfg: ScenarioConfig) -> str:
    """Config text that :func:`parse_config` maps back to ``cfg``."""
    lines = []
    for name, section in cfg.as_dict().items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in section.items() if v is not None)
        lines.append("")
    return "\n".join(lines)


def unitless_model(cfg: ScenarioConfig) -> tuple[SpinParams, list[OscillatorMode], float]:
    """Spin, modes and total time in units of the reference coupling."""
    scale, tscale = 1.0, 1.0
    if cfg.units is not None:
        ref = cfg.units.reference_delta_cm
        scale = 1.0 / ref
        tscale = 1e-12 * wavenumber_to_angular(ref)
    nbar = cfg.prep.n_kicks * cfg.prep.rabi ** 2 * cfg.prep.kick_duration ** 2 / 4.0 \
        if cfg.prep is not None else None
    spin = SpinParams(cfg.spin.epsilon * scale, cfg.spin.delta * scale)
    modes = [OscillatorMode(m.nu * scale, m.kappa * scale, m.gamma * scale,
                            m.nbar if nbar is None else nbar, m.fock_dim) for m in cfg.modes]
    return spin, modes, cfg.run.t_max * tscale


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    """Comma-separated table with a header row and ``%.17g`` numbers, written atomically."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in zip(*cols):
        writer.writerow(["%.17g" % v for v in row])
    _atomic_write(Path(path), buf.getvalue())


def write_json(path: Path, payload: dict) -> None:
    _atomic_write(Path(path), json.dumps(payload, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def worker_threads() -> int:
    """Value of ``SPINBOSON_THREADS`` (0 = automatic)."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a non-negative integer, got {raw!r}") from None
    if value < 0:
        raise UsageError(f"{THREADS_ENV} must be a non-negative integer, got {raw!r}")
    return value


# --------------------------------------------------------------------------
# scenarios
# --------------------------------------------------------------------------

@dataclass
class RunOutput:
    csv_path: Path
    json_path: Path
    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    summary: dict = field(default_factory=dict)


def _initial_dm(modes: Sequence[OscillatorMode]) -> np.ndarray:
    rho = ket_to_dm(basis_state(0, 2))
    for m in modes:
        rho = np.kron(rho, thermal_state(m.nbar, m.fock_dim))
    return rho


def _tcl2_correlation(modes: Sequence[OscillatorMode]):
    params = [Corr2Params(m.kappa, m.gamma, m.nu, beta_of(m.nbar, m.nu) if m.nbar > 0
                          else math.inf) for m in modes]
    return lambda t: sum(corr2_analytic(p, t) for p in params)


def _simulate(cfg: ScenarioConfig, seed: int | None):
    spin, modes, T = unitless_model(cfg)
    run = cfg.run
    kind = DissipationKind(run.dissipation)
    if kind is DissipationKind.NONE:
        modes = [replace(m, gamma=0.0) for m in modes]
    info: dict = {}
    if run.method == "lindblad":
        res = lindblad_evolve(build_model(spin, modes, kind), _initial_dm(modes),
                              TimeGrid(T, run.samples))
        times, mean = res.times, res.p0
        std = np.zeros_like(mean)
        info["truncation_ok"] = res.truncation_ok
    elif run.method == "tcl2":
        grid = TimeGrid(T, run.samples)
        res = tcl2_evolve(spin, _tcl2_correlation(modes), ket_to_dm(basis_state(0, 2)), grid)
        times, mean = res.times, res.p0
        std = np.zeros_like(mean)
    else:
        stride = run.trotter_steps // (run.samples - 1)
        if run.method == "pulse":
            sched = trotterize(spin, modes, T, run.trotter_steps)
            res = simulate_schedule_averaged(sched, _initial_dm(modes),
                                             sdk_detuning_stds(sched, [m.gamma for m in modes]))
            times, mean = res.times, res.p0
            std = np.zeros_like(mean)
        else:
            n_kicks = cfg.prep.n_kicks if cfg.prep is not None else 9
            scenario = TrotterScenario(spin, modes, T, run.trotter_steps, n_kicks=n_kicks)
            ens = run_ensemble(scenario, run.trajectories, seed)
            times, mean, std = ens.times, ens.mean["P0"], ens.std["P0"]
            info["trajectories"] = run.trajectories
        times, mean, std = times[::stride], mean[::stride], std[::stride]
    if cfg.units is not None:
        times = times / (1e-12 * wavenumber_to_angular(cfg.units.reference_delta_cm))
    return np.asarray(times), np.asarray(mean), np.asarray(std), info


def run_scenario(cfg: ScenarioConfig, out_dir: Path, stem: str = "result",
                 seed: int | None = None) -> RunOutput:
    """Run one scenario and write ``<stem>.csv`` and ``<stem>.json`` into ``out_dir``.

    ``seed`` overrides ``run.seed``; the seed actually used is recorded in the
    JSON summary.
    """
    if seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=seed))
    used_seed = cfg.run.seed
    if cfg.run.method == "trajectories" and used_seed is None:
        raise UsageError("method trajectories requires a seed")
    start = time.perf_counter()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            times, mean, std, info = _simulate(cfg, used_seed)
    except (UsageError, KeyboardInterrupt):
        raise
    except Exception as exc:
        raise RuntimeError(f"scenario {stem!r} ({cfg.run.method}) failed: {exc}") from exc
    runtime = time.perf_counter() - start
    out_dir = Path(out_dir)
    csv_path = out_dir / f"{stem}.csv"
    json_path = out_dir / f"{stem}.json"
    write_csv(csv_path, ["time", "P0_mean", "P0_std"], [times, mean, std])
    summary = {
        "config": cfg.as_dict(),
        "seed": used_seed,
        "method": cfg.run.method,
        "fitted_parameters": None,
        "runtime_s": runtime,
        "threads": worker_threads(),
        "version": __version__,
        "rows": int(len(times)),
        "warnings": sorted({str(w.message) for w in caught}),
        "info": info,
    }
    write_json(json_path, summary)
    return RunOutput(csv_path, json_path, times, mean, std, summary)


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

_TWELVE_PERIODS = repr(2 * math.pi * 12)
_TEN_PERIODS = repr(2 * math.pi * 10)


def _single_mode(nu, kappa, gamma, nbar, fock_dim, t_max, method="lindblad",
                 dissipation="dephased", extra="", spin=(0.0, 1.0), units=None, samples=None):
    text = (f"[spin]\nepsilon = {spin[0]}\ndelta = {spin[1]}\n\n"
            f"[mode.1]\nnu = {nu}\nkappa = {kappa}\ngamma = {gamma}\nnbar = {nbar}\n"
            f"fock_dim = {fock_dim}\n\n"
            f"[run]\nt_max = {t_max}\nmethod = {method}\ndissipation = {dissipation}\n")
    if samples is not None:
        text += f"samples = {samples}\n"
    text += extra
    if units is not None:
        text += f"\n[units]\nreference_delta_cm = {units}\n"
    return text


def _multi_mode(peaks, fock_dim, t_max, nbar=0.0, spin=(0.0, 1.0), units=None):
    text = f"[spin]\nepsilon = {spin[0]}\ndelta = {spin[1]}\n\n"
    for i, (kappa, gamma, nu) in enumerate(peaks, start=1):
        text += (f"[mode.{i}]\nnu = {nu}\nkappa = {kappa}\ngamma = {gamma}\nnbar = {nbar}\n"
                 f"fock_dim = {fock_dim}\n\n")
    text += f"[run]\nt_max = {t_max}\nmethod = lindblad\ndissipation = dephased\n"
    if units is not None:
        text += f"\n[units]\nreference_delta_cm = {units}\n"
    return text


# Two-peak decompositions of Leggett densities (A=0.1, omega_c=10) on [0.9, 1.1],
# produced by fit_lorentzians(leggett_problem(s, seed=0)).
_FIG4_PEAKS = {
    "0.5": [(0.17892, 0.426326, 0.852653), (0.268774, 0.58043, 1.16086)],
    "1.0": [(0.09122, 0.430996, 0.861993), (0.161439, 0.588436, 1.176871)],
    "2.0": [(0.022142, 0.442376, 0.884753), (0.058866, 0.608729, 1.217459)],
}

# Three-peak decompositions of Leggett densities with J(1) = 1.57 (omega_c=10) on
# [0.5, 1.5], peaks confined to the band, kappa <= 0.8, seed 0.
_S8_PEAKS = {
    "0.3": [(0.375849, 0.277122, 0.554244), (0.500605, 0.455409, 0.910818),
            (0.747994, 0.713199, 1.426398)],
    "1.0": [(0.296531, 0.293945, 0.587891), (0.50083, 0.48723, 0.974461),
            (0.799956, 0.63614, 1.462025)],
    "3.0": [(0.331916, 0.364223, 0.948273), (0.586665, 0.380723, 1.246253),
            (0.794338, 0.300326, 1.498166)],
}

_VAET_T_PS = "4.003"


def _build_presets() -> dict[str, tuple[str, list[tuple[str, str]]]]:
    presets = {}
    presets["fig2a"] = ("coherent single mode, initial occupation sweep", [
        (f"nbar{n}", _single_mode(1, 0.1, 0, n, d, _TWELVE_PERIODS, dissipation="none"))
        for n, d in (("0", 10), ("0.5", 30), ("1.0", 36), ("2.0", 44))])
    presets["fig2b"] = ("single dephased mode, linewidth sweep", [
        (f"gamma{g}", _single_mode(1, 0.1, g, 0, 10, _TWELVE_PERIODS))
        for g in ("0", "0.1", "0.2", "0.3", "0.4")])
    three = [(50, 25, 505), (50, 25, 495), (50, 25, 485)]
    presets["fig3-2mode"] = ("two-peak structured bath at 77 K (cm^-1 inputs)", [
        ("2mode", _multi_mode(three[:2], 6, "0.8539", nbar=0.1, spin=(0, 500), units=500))])
    presets["fig3-3mode"] = ("three-peak structured bath at 77 K (cm^-1 inputs)", [
        ("3mode", _multi_mode(three, 6, "0.8539", nbar=0.1, spin=(0, 500), units=500))])
    for s, peaks in _FIG4_PEAKS.items():
        presets[f"fig4-s{s}"] = (f"two-peak fit of Leggett s={s}", [
            (f"s{s}", _multi_mode(peaks, 6, _TEN_PERIODS))])
    presets["fig5a"] = ("coherent VAET, resonant vs off-resonant mode (cm^-1 inputs)", [
        (f"nu{nu}", _single_mode(nu, 30, 0, 0, 14, _VAET_T_PS, dissipation="none",
                                 spin=(100, 30), units=30))
        for nu in (104, 90)])
    presets["fig5b"] = ("coherent VAET at 0 K and 300 K (cm^-1 inputs)", [
        (f"nbar{n}", _single_mode(104, 30, 0, n, d, _VAET_T_PS, dissipation="none",
                                  spin=(100, 30), units=30))
        for n, d in (("0", 14), ("2.0", 44))])
    presets["fig5c"] = ("dissipative VAET, dephased vs damped (cm^-1 inputs)", [
        (f"{kind}_kappa{k}", _single_mode(104, k, 10, 0, 14, _VAET_T_PS, dissipation=kind,
                                          spin=(100, 30), units=30))
        for k in (0, 10, 20) for kind in ("dephased", "damped")])
    presets["suppS6"] = ("damped and dephased models with equal two-point correlations", [
        (kind, _single_mode(1, 0.1, 0.4, 0.036, 20, "25", dissipation=kind))
        for kind in ("damped", "dephased")])
    presets["suppS7a"] = ("kick-prepared thermal state, coherent evolution", [
        (f"kicks{k}", _single_mode(1, 0.1, 0, 0, 44, _TWELVE_PERIODS, method="trajectories",
                                   dissipation="none", extra=(
                                       "trotter_steps = 160\ntrajectories = 2000\nseed = 1\n"
                                       f"\n[prep]\nn_kicks = {k}\n"
                                       f"kick_duration = {2 * math.sqrt(2.0 / k)!r}\n")))
        for k in (5, 9)])
    presets["suppS7b"] = ("random-detuning dephasing, 2000 trajectories", [
        (f"gamma{g}_N{n}", _single_mode(1, 0.1, g, 0, 10, _TWELVE_PERIODS,
                                        method="trajectories", extra=(
                                            f"trotter_steps = {n}\ntrajectories = 2000\n"
                                            "seed = 1\n")))
        for g in ("0.25", "0.4") for n in (40, 160, 480)])
    presets["suppS8"] = ("three-peak fits of Leggett densities with J(1)=1.57", [
        (f"s{s}", _multi_mode(peaks, 8, _TEN_PERIODS)) for s, peaks in _S8_PEAKS.items()])
    presets["vaet-resonance"] = presets["fig5a"]
    return presets


PRESETS = _build_presets()


def preset_configs(name: str) -> list[tuple[str, ScenarioConfig]]:
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; see 'presets --list'")
    return [(member, parse_config(text)) for member, text in PRESETS[name][1]]


# --------------------------------------------------------------------------
# parameter-mapping tables
# --------------------------------------------------------------------------

KHZ = 2 * math.pi * 1e3

MAPPING_TABLES = {
    # Sideband Rabi frequencies (2 pi kHz) are the unrounded values consistent
    # with every printed cell of the 3-mode table.
    "s1": {"unitless": UnitlessParams(0.0, 1.0, (0.1, 0.1, 0.1), (1.01, 0.99, 0.97),
                                      12.8 * 2 * math.pi),
           "reference_cm": 500.0, "reference": "delta",
           "kappa_ion_khz": (2.1327, 1.4343, 1.1948), "epsilon_ion_khz": None},
    # The single-mode table fixes the kick time; kappa_ion follows from it.
    "s2": {"unitless": UnitlessParams(1.0, 0.3, (0.3,), (1.04,), 12 * 2 * math.pi),
           "reference_cm": 100.0, "reference": "epsilon",
           "kappa_ion_khz": (8.0,), "epsilon_ion_khz": 49.82},
}


def mapping_table(name: str) -> dict:
    """Molecular and ion settings for a stored mapping example.

    Molecular frequencies are in cm^-1 and time in fs; ion frequencies in
    2 pi kHz and times in ms.
    """
    if name not in MAPPING_TABLES:
        raise UsageError(f"unknown table {name!r}")
    spec = MAPPING_TABLES[name]
    ul = spec["unitless"]
    mol = map_parameters(ul, spec["reference_cm"], spec["reference"])
    eps_ion = spec["epsilon_ion_khz"]
    ion = map_to_ion(ul, [k * KHZ for k in spec["kappa_ion_khz"]],
                     None if eps_ion is None else eps_ion * KHZ)
    return {
        "unitless": {"epsilon": ul.epsilon, "delta": ul.delta, "kappa": list(ul.kappas),
                     "nu": list(ul.nus), "T_over_2pi": ul.T / (2 * math.pi)},
        "molecular": {"epsilon": mol.epsilon, "delta": mol.delta, "kappa": list(mol.kappas),
                      "nu": list(mol.nus), "T_fs": mol.T * 1e15},
        "ion": {"delta": [m.delta / KHZ for m in ion.modes],
                "kappa": [m.kappa / KHZ for m in ion.modes],
                "nu": [m.nu / KHZ for m in ion.modes],
                "T_ms": [m.T * 1e3 for m in ion.modes],
                "epsilon": None if ion.epsilon is None else ion.epsilon / KHZ,
                "T_sq_ms": None if ion.T_sq is None else ion.T_sq * 1e3},
    }


def _format_table(table: dict) -> str:
    lines = []
    for row, values in table.items():
        lines.append(f"{row}:")
        for key, value in values.items():
            if value is None:
                continue
            if isinstance(value, list):
                text = ", ".join(f"{v:.4g}" for v in value)
            else:
                text = f"{value:.4g}"
            lines.append(f"  {key:<12} {text}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _range(text: str, n_parts: int):
    parts = text.split(":")
    if len(parts) != n_parts:
        raise argparse.ArgumentTypeError(f"expected {n_parts} ':'-separated numbers, got {text!r}")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric range {text!r}") from None
    if not values[1] > values[0]:
        raise argparse.ArgumentTypeError(f"range {text!r} must be increasing")
    return values


def _band(text):
    return tuple(_range(text, 2))


def _grid(text):
    lo, hi, n = _range(text, 3)
    if n != int(n) or n < 2:
        raise argparse.ArgumentTypeError("grid point count must be an integer >= 2")
    return np.linspace(lo, hi, int(n))


def _mode_params(text: str) -> dict:
    out = {}
    allowed = {"nu": float, "kappa": float, "gamma": float, "nbar": float, "fock_dim": int}
    for item in text.split(","):
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in allowed:
            raise argparse.ArgumentTypeError(f"unknown mode parameter {key!r}")
        try:
            out[key] = allowed[key](value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value for {key}: {value!r}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spinboson", description="Spin-boson simulation toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run a scenario config or a preset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="scenario config file")
    src.add_argument("--preset", help="named preset (see 'presets --list')")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--export-schedule", action="store_true",
                   help="also write the compiled pulse schedule (pulse methods)")

    p = sub.add_parser("fit-spectral", help="decompose a spectral density into Lorentzians")
    p.add_argument("--target", choices=["leggett", "lorentzian-file"], required=True)
    p.add_argument("--target-file", type=Path, help="CSV with kappa,gamma,nu columns")
    p.add_argument("--s", type=float, help="Leggett exponent")
    p.add_argument("--A", type=float, default=0.1, help="Leggett amplitude")
    p.add_argument("--omega-c", type=float, default=10.0, help="Leggett cutoff")
    p.add_argument("--peaks", type=int, required=True, help="number of Lorentzian peaks")
    p.add_argument("--band", type=_band, required=True, help="fit band LO:HI")
    p.add_argument("--objective", choices=["sd", "corr"], default="sd")
    p.add_argument("--beta", type=float, default=math.inf,
                   help="target inverse temperature (corr objective)")
    p.add_argument("--budget", type=int, default=60000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("correlate", help="bath correlation functions of one mode")
    p.add_argument("--kind", choices=["damped", "dephased"], required=True)
    p.add_argument("--mode-params", type=_mode_params, required=True,
                   help="e.g. nu=1,kappa=0.1,gamma=0.4,nbar=0.036,fock_dim=20")
    p.add_argument("--t-max", type=float, default=25.0)
    p.add_argument("--samples", type=int, default=251)
    p.add_argument("--four-point", action="store_true",
                   help="also evaluate C4 along (3s, 2s, s, 0)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("calibrate", help="simulated calibration scans")
    p.add_argument("--scan", choices=["spin-phase", "light-shift", "motion-freq"],
                   required=True)
    p.add_argument("--grid", type=_grid, required=True, help="LO:HI:N")
    p.add_argument("--tau", type=float, required=True, help="duration of each kick")
    p.add_argument("--n-kicks", type=int, default=5)
    p.add_argument("--rabi", type=float, default=1.0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("map-params", help="unitless <-> molecular <-> ion parameter mapping")
    p.add_argument("--table", choices=sorted(MAPPING_TABLES))
    p.add_argument("--delta-cm", type=float, help="reference coupling in cm^-1")
    p.add_argument("--config", type=Path, help="unitless scenario config to map")

    p = sub.add_parser("presets", help="list or show preset scenarios")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--list", action="store_true")
    g.add_argument("--show", metavar="NAME")
    return parser


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _read_config(path: Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_simulate(args) -> int:
    if args.config is not None:
        jobs = [("result", _read_config(args.config))]
    else:
        jobs = preset_configs(args.preset)
    for stem, cfg in jobs:
        out = run_scenario(cfg, args.out, stem, args.seed)
        print(f"{stem}: {out.summary['rows']} rows -> {out.csv_path}")
        if args.export_schedule and cfg.run.method in PULSE_METHODS:
            spin, modes, T = unitless_model(cfg)
            sched = trotterize(spin, modes, T, cfg.run.trotter_steps)
            _atomic_write(Path(args.out) / f"{stem}.schedule.txt", schedule_to_text(sched))
    return EXIT_OK


def _read_peaks(path: Path) -> list[tuple[float, float, float]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return [(float(r["kappa"]), float(r["gamma"]), float(r["nu"])) for r in rows]
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read peaks from {path}: {exc}") from None


def cmd_fit_spectral(args) -> int:
    if args.target == "leggett":
        if args.s is None:
            raise UsageError("--target leggett requires --s")
        if args.target_file is not None:
            raise UsageError("--target-file conflicts with --target leggett")
        problem = leggett_problem(args.s, A=args.A, omega_c=args.omega_c, band=args.band,
                                  n_peaks=args.peaks, budget=args.budget, seed=args.seed,
                                  beta=args.beta)
        target_desc = {"kind": "leggett", "A": args.A, "s": args.s, "omega_c": args.omega_c}
    else:
        if args.target_file is None:
            raise UsageError("--target lorentzian-file requires --target-file")
        peaks = _read_peaks(args.target_file)
        target = LorentzianSum(tuple(peaks))
        lo, hi = args.band
        width = hi - lo
        kmax = max(p[0] for p in peaks)
        nu_hi = hi + width
        problem = FitProblem(target, args.band, args.peaks, (1e-4, 2 * kmax),
                             (1e-4, nu_hi / 2), (max(lo - width, 1e-3), nu_hi),
                             beta=args.beta, budget=args.budget, seed=args.seed)
        target_desc = {"kind": "lorentzian", "peaks": peaks}
    start = time.perf_counter()
    result = fit_lorentzians(problem, args.objective)
    runtime = time.perf_counter() - start
    rows = result.as_rows()
    header = list(rows[0].keys())
    write_csv(args.out / "peaks.csv", header, [[r[k] for r in rows] for k in header])
    summary = {
        "target": target_desc,
        "band": list(args.band),
        "objective_kind": args.objective,
        "seed": args.seed,
        "budget": args.budget,
        "fitted_parameters": rows,
        "objective": result.objective,
        "mean_relative_deviation": mean_relative_deviation(problem.target, result.peaks,
                                                           args.band),
        "n_evals": result.n_evals,
        "constraints_ok": result.constraints_ok,
        "residuals": None if result.residuals is None else
        {"real": result.residuals.real, "imag": result.residuals.imag},
        "runtime_s": runtime,
        "threads": worker_threads(),
        "version": __version__,
    }
    write_json(args.out / "fit.json", summary)
    print(json.dumps({"peaks": rows, "objective": result.objective}, indent=2))
    return EXIT_OK


def cmd_correlate(args) -> int:
    params = dict(args.mode_params)
    if "nu" not in params or "kappa" not in params:
        raise UsageError("--mode-params needs at least nu and kappa")
    params.setdefault("fock_dim", 20)
    try:
        mode = OscillatorMode(**params)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.samples < 2 or not args.t_max > 0:
        raise UsageError("need --samples >= 2 and --t-max > 0")
    t = np.linspace(0.0, args.t_max, args.samples)
    beta = beta_of(mode.nbar, mode.nu) if mode.nbar > 0 else math.inf
    p = Corr2Params(mode.kappa, mode.gamma, mode.nu, beta)
    start = time.perf_counter()
    numeric = corr2_numeric(mode, args.kind, t).values
    analytic = corr2_analytic(p, t)
    write_csv(args.out / "corr2.csv", ["time", "re", "im", "re_analytic", "im_analytic"],
              [t, numeric.real, numeric.imag, analytic.real, analytic.imag])
    summary = {"kind": args.kind, "mode": params, "beta": beta,
               "max_abs_deviation": float(np.max(np.abs(numeric - analytic)))}
    if args.four_point:
        s = np.linspace(0.0, args.t_max / 3, 11)
        c4 = np.array([corr4_numeric(mode, args.kind, 3 * x, 2 * x, x, 0.0) for x in s])
        cols = [s, c4.real, c4.imag]
        header = ["s", "re", "im"]
        if mode.nbar == 0:
            closed = corr4_closed(args.kind, p, 3 * s, 2 * s, s, 0 * s)
            cols += [closed.real, closed.imag]
            header += ["re_closed", "im_closed"]
        write_csv(args.out / "corr4.csv", header, cols)
    summary.update({"runtime_s": time.perf_counter() - start, "threads": worker_threads(),
                    "version": __version__})
    write_json(args.out / "correlate.json", summary)
    print(f"corr2 -> {args.out / 'corr2.csv'}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    if args.tau <= 0 or args.rabi <= 0 or args.n_kicks < 1:
        raise UsageError("--tau, --rabi and --n-kicks must be positive")
    start = time.perf_counter()
    if args.scan == "spin-phase":
        curve = calibrate_spin_phase_scan(args.grid, args.tau, args.n_kicks, args.rabi)
    elif args.scan == "light-shift":
        curve = calibrate_light_shift_scan(args.grid, args.tau, args.n_kicks, args.rabi)
    else:
        curve = calibrate_motion_freq_scan(args.grid, args.tau, args.rabi)
    write_csv(args.out / "scan.csv", ["offset", "P0"], [args.grid, curve])
    summary = {"scan": args.scan, "tau": args.tau, "n_kicks": args.n_kicks, "rabi": args.rabi,
               "width": scan_width(args.grid, curve),
               "peak_offset": float(args.grid[int(np.argmax(curve))]),
               "runtime_s": time.perf_counter() - start, "threads": worker_threads(),
               "version": __version__}
    write_json(args.out / "calibrate.json", summary)
    print(f"width {summary['width']:.6g} -> {args.out / 'scan.csv'}")
    return EXIT_OK


def cmd_map_params(args) -> int:
    if args.table is not None:
        if args.delta_cm is not None or args.config is not None:
            raise UsageError("--table conflicts with --delta-cm/--config")
        print(_format_table(mapping_table(args.table)))
        return EXIT_OK
    if args.delta_cm is None or args.config is None:
        raise UsageError("map-params needs --table, or both --delta-cm and --config")
    cfg = _read_config(args.config)
    if cfg.units is not None:
        raise UsageError("config for map-params must be in unitless form (no [units])")
    spin, modes, T = unitless_model(cfg)
    ul = UnitlessParams(spin.epsilon, spin.delta, tuple(m.kappa for m in modes),
                        tuple(m.nu for m in modes), T)
    mol = map_parameters(ul, args.delta_cm)
    print(_format_table({"molecular": {
        "epsilon": mol.epsilon, "delta": mol.delta, "kappa": list(mol.kappas),
        "nu": list(mol.nus), "gamma": [m.gamma * args.delta_cm / spin.delta for m in modes],
        "T_fs": mol.T * 1e15}}))
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.list:
        for name, (desc, members) in PRESETS.items():
            print(f"{name:<15} {desc} [{', '.join(m for m, _ in members)}]")
        return EXIT_OK
    for member, cfg in preset_configs(args.show):
        print(f"# --- {member} ---")
        print(emit_config(cfg))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit-spectral": cmd_fit_spectral,
            "correlate": cmd_correlate, "calibrate": cmd_calibrate,
            "map-params": cmd_map_params, "presets": cmd_presets}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        worker_threads()
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"spinboson: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"spinboson: engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
