"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Tolerances are fixed by the acceptance criteria and are not tuned here.  Each
test prints its verdict and the measured quantities before asserting, so a
failing criterion still reports how far it is from its target.
"""

import math
import time
import warnings

import numpy as np
import pytest

from spinboson.cli import mapping_table
from spinboson.correlation import (Corr2Params, corr2_analytic, corr2_numeric, corr4_closed,
                                   corr4_numeric, corr_from_density,
                                   gaussian_factorization_check)
from spinboson.hilbert import basis_state, ket_to_dm, thermal_state
from spinboson.models import (LorentzianSum, OscillatorMode, SpinParams, build_model, nbar_of,
                              wavenumber_to_angular)
from spinboson.propagate import TimeGrid, lindblad_evolve, tcl2_evolve
from spinboson.pulses import (calibrate_light_shift_scan, calibrate_motion_freq_scan,
                              calibrate_spin_phase_scan, scan_width, sdk_detuning_stds,
                              simulate_schedule_averaged, trotterize)
from spinboson.specfit import (FitProblem, fit_lorentzians, leggett_problem,
                               mean_relative_deviation)
from spinboson.stochastic import (LindbladFamily, TrotterScenario, ensemble_thermal_fidelity,
                                  fit_gamma, run_ensemble)

UNBIASED = SpinParams(0.0, 1.0)
TWELVE_PERIODS = 2 * math.pi * 12


@pytest.fixture
def report(capsys):
    def _report(number, title, ok, detail, started):
        verdict = "PASS" if ok else "FAIL"
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {verdict} {title}: {detail} "
                  f"({time.perf_counter() - started:.1f} s)")
        assert ok, f"criterion {number} ({title}) failed: {detail}"
    return _report


def _spin_down_dm(*dims):
    rho = ket_to_dm(basis_state(0, 2))
    for d in dims:
        rho = np.kron(rho, thermal_state(0.0, d))
    return rho


_LEGGETT_FITS = {}


def _leggett_fit(s):
    if s not in _LEGGETT_FITS:
        _LEGGETT_FITS[s] = fit_lorentzians(leggett_problem(s, seed=0))
    return _LEGGETT_FITS[s]


# --------------------------------------------------------------------------

def test_criterion_01_correlation_equivalence(report):
    start = time.perf_counter()
    beta = 3.36
    mode = OscillatorMode(1.0, 0.1, 0.4, nbar_of(beta, 1.0), 20)
    t = np.linspace(0.0, 25.0, 101)
    damped = corr2_numeric(mode, "damped", t).values
    dephased = corr2_numeric(mode, "dephased", t).values
    closed = corr2_analytic(Corr2Params(0.1, 0.4, 1.0, beta), t)
    d_kinds = float(np.max(np.abs(damped - dephased)))
    d_closed = float(max(np.max(np.abs(damped - closed)), np.max(np.abs(dephased - closed))))
    ok = d_kinds < 1e-8 and d_closed < 1e-6
    report(1, "2-point correlation equivalence", ok,
           f"max|damped-dephased|={d_kinds:.2e} (<1e-8), max|numeric-closed|={d_closed:.2e} (<1e-6)",
           start)


def test_criterion_02_lorentzian_correlation_transform(report):
    start = time.perf_counter()
    p = Corr2Params(0.1, 0.4, 1.0, 3.36)
    t = np.linspace(0.0, 25.0, 251)
    numeric = corr_from_density(LorentzianSum(((p.kappa, p.gamma, p.nu),)), p.beta, t).values
    closed = corr2_analytic(p, t)
    rel = float(np.max(np.abs(numeric - closed)) / np.max(np.abs(closed)))
    report(2, "Lorentzian -> C(t) transform", rel < 0.05,
           f"relative Linf deviation {rel:.4f} (<0.05)", start)


def test_criterion_03_four_point_structure(report):
    start = time.perf_counter()
    kappa, gamma = 0.1, 0.4
    p = Corr2Params(kappa, gamma, 1.0)
    mode = OscillatorMode(1.0, kappa, gamma, 0.0, 12)
    tuples = [(3.0, 2.2, 0.7, 0.1), (5.0, 1.0, 0.7, 0.0), (2.0, 2.0, 1.0, 0.5),
              (6.0, 1.0, 0.5, 0.0)]
    closed_dev = 0.0
    numeric = {}
    for kind in ("damped", "dephased"):
        for ts in tuples:
            val = corr4_numeric(mode, kind, *ts)
            numeric[kind, ts] = val
            closed_dev = max(closed_dev, abs(val - complex(corr4_closed(kind, p, *ts))))
    C2 = lambda x: corr2_analytic(p, x)
    wick_damped = max(abs(numeric["damped", ts] - gaussian_factorization_check(C2, *ts))
                      for ts in tuples)
    probe = (6.0, 1.0, 0.5, 0.0)  # t1 - t2 = 2 / Gamma
    wick_dephased = abs(numeric["dephased", probe] - gaussian_factorization_check(C2, *probe))
    ok = closed_dev < 1e-6 and wick_damped < 1e-8 and wick_dephased > 1e-3 * kappa ** 4
    report(3, "4-point structure", ok,
           f"max|numeric-closed|={closed_dev:.2e} (<1e-6), damped Wick residual "
           f"{wick_damped:.2e} (<1e-8), dephased Wick residual {wick_dephased:.2e} "
           f"(>{1e-3 * kappa ** 4:.0e})", start)


@pytest.mark.slow
def test_criterion_04_tcl2_order(report):
    start = time.perf_counter()
    grid = TimeGrid(TWELVE_PERIODS, 241)
    ratios = {}
    for gamma in (0.0, 0.1, 0.2, 0.3, 0.4):
        devs = []
        for kappa in (0.1, 0.05):
            model = build_model(UNBIASED, [OscillatorMode(1.0, kappa, gamma, 0.0, 10)],
                                "dephased")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                exact = lindblad_evolve(model, _spin_down_dm(10), grid).p0
            corr = lambda t, k=kappa, g=gamma: corr2_analytic(Corr2Params(k, g, 1.0), t)
            approx = tcl2_evolve(UNBIASED, corr, ket_to_dm(basis_state(0, 2)), grid).p0
            devs.append(np.max(np.abs(exact - approx)))
        ratios[gamma] = devs[0] / devs[1]
    ok = all(8 <= r <= 32 for r in ratios.values())
    detail = ", ".join(f"Gamma={g}: {r:.2f}" for g, r in ratios.items())
    report(4, "TCL2 residual shrink factor in [8, 32] over the linewidth sweep", ok, detail,
           start)


def test_criterion_05_thermal_prep_fidelity(report):
    start = time.perf_counter()
    kicks = list(range(1, 21))
    rows = ensemble_thermal_fidelity(kicks, [2.0], [20, 2000], master_seed=7)
    curve = {n: np.array([r["infidelity"] for r in rows if r["n_trials"] == n]) for n in (20, 2000)}
    at9 = float(curve[2000][kicks.index(9)])
    plateau = {n: float(np.median(c[9:])) for n, c in curve.items()}  # N' = 10..20
    big = curve[2000]
    decreases = big[0] > 10 * plateau[2000]
    flattens = big[9:].max() < 2 * big[9:].min()
    ordered = plateau[20] > plateau[2000]
    ok = at9 < 1e-3 and decreases and flattens and ordered
    report(5, "thermal-state preparation", ok,
           f"1-F(N'=9, 2000 trials)={at9:.2e} (<1e-3); decrease {big[0]:.2e}->{plateau[2000]:.2e} "
           f"{decreases}; plateau spread {big[9:].min():.2e}..{big[9:].max():.2e} {flattens}; "
           f"plateau 20 trials {plateau[20]:.2e} > 2000 trials {plateau[2000]:.2e} {ordered}",
           start)


def _fitted_gamma(gamma, N):
    mode = OscillatorMode(1.0, 0.1, gamma, 0.0, 10)
    ens = run_ensemble(TrotterScenario(UNBIASED, [mode], TWELVE_PERIODS, N), 2000, 11)
    family = LindbladFamily(UNBIASED, [mode], ens.times)
    return fit_gamma(ens.mean["P0"], family, bracket=(0.0, 1.0)).value


@pytest.mark.slow
def test_criterion_06_dephasing_unraveling(report):
    start = time.perf_counter()
    errors = {}
    fits = {}
    for gamma, N in ((0.25, 160), (0.4, 160), (0.25, 40), (0.25, 480)):
        fits[gamma, N] = _fitted_gamma(gamma, N)
        errors[gamma, N] = abs(fits[gamma, N] - gamma) / gamma
    within = errors[0.25, 160] < 0.1 and errors[0.4, 160] < 0.1
    trend = errors[0.25, 480] < errors[0.25, 40]
    detail = ", ".join(f"Gamma={g} N={n}: fit {fits[g, n]:.4f} err {errors[g, n]:.1%}"
                       for g, n in fits)
    report(6, "random-detuning dephasing", within and trend, detail, start)


def test_criterion_07_damping_crossover(report):
    start = time.perf_counter()
    per_cycle = 40
    grid = TimeGrid(TWELVE_PERIODS, 12 * per_cycle + 1)
    p0 = {}
    for gamma in (0.15, 0.25):
        model = build_model(UNBIASED, [OscillatorMode(1.0, 0.1, gamma, 0.0, 10)], "dephased")
        p0[gamma] = lindblad_evolve(model, _spin_down_dm(10), grid).p0
    p = p0[0.15][1:]
    maxima = int(np.sum((p[1:-1] > p[:-2]) & (p[1:-1] > p[2:])))
    cycles = p0[0.25][:-1].reshape(12, per_cycle)
    envelope = cycles.max(axis=1) - cycles.min(axis=1)
    window = envelope[8:12]
    non_reviving = bool(np.all(np.diff(window) <= 1e-12))
    ok = maxima >= 2 and non_reviving
    report(7, "damping crossover", ok,
           f"Gamma=0.15 local maxima {maxima} (>=2); Gamma=0.25 per-cycle swing in periods 8-12 "
           f"{np.round(window, 4).tolist()} non-increasing {non_reviving}", start)


def test_criterion_08_vaet_resonance(report):
    start = time.perf_counter()
    reference = 100.0  # epsilon in cm^-1
    eps, delta, kappa = 100.0 / reference, 30.0 / reference, 30.0 / reference
    T = 4.003e-12 * wavenumber_to_angular(reference)
    d = 12
    minima = {}
    for nu_cm in (104.0, 90.0):
        model = build_model(SpinParams(eps, delta),
                            [OscillatorMode(nu_cm / reference, kappa, 0.0, 0.0, d)], "none")
        minima[nu_cm] = float(lindblad_evolve(model, _spin_down_dm(d), TimeGrid(T, 601)).p0.min())
    gap = minima[90.0] - minima[104.0]
    report(8, "VAET resonance", gap >= 0.25,
           f"min P0 at 104 cm^-1 {minima[104.0]:.4f}, at 90 cm^-1 {minima[90.0]:.4f}, "
           f"gap {gap:.4f} (>=0.25)", start)


def test_criterion_09_spectral_fitting(report):
    start = time.perf_counter()
    planted = LorentzianSum(((0.05, 0.1, 0.95), (0.03, 0.2, 1.05)))
    res = fit_lorentzians(FitProblem(planted, (0.9, 1.1), 2, (1e-3, 0.2), (1e-3, 0.6),
                                     (0.7, 1.3), seed=1))
    ok = res.objective < 1e-6
    parts = [f"planted objective {res.objective:.1e} (<1e-6)"]
    for s in (0.5, 1.0, 2.0):
        fit = _leggett_fit(s)
        mrd = mean_relative_deviation(leggett_problem(s).target, fit.peaks, (0.9, 1.1))
        constraints = fit.constraints_ok and all(g <= n / 2 for _, g, n in fit.peaks)
        ok = ok and mrd < 0.1 and constraints
        parts.append(f"s={s}: mean rel dev {mrd:.1e} (<0.1) constraints {constraints}")
    report(9, "spectral fitting", ok, "; ".join(parts), start)


@pytest.mark.slow
def test_criterion_10_trotter_convergence(report):
    start = time.perf_counter()
    fit = _leggett_fit(2.0)
    d = 6
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        modes = [OscillatorMode(nu, kappa, gamma, 0.0, d) for kappa, gamma, nu in fit.peaks]
    rho0 = _spin_down_dm(*(d,) * len(modes))
    T = 2 * math.pi * 10
    devs = {}
    for N in (128, 256):
        sched = trotterize(UNBIASED, modes, T, N)
        stds = sdk_detuning_stds(sched, [m.gamma for m in modes])
        pulse = simulate_schedule_averaged(sched, rho0, stds)
        exact = lindblad_evolve(build_model(UNBIASED, modes, "dephased"), rho0, pulse.times)
        devs[N] = float(np.max(np.abs(pulse.p0 - exact.p0)))
    report(10, "Trotter convergence (Leggett s=2)", devs[256] < devs[128],
           f"max deviation N=128 {devs[128]:.2e}, N=256 {devs[256]:.2e}", start)


def _printed_match(value, printed: str) -> bool:
    decimals = len(printed.split(".")[1]) if "." in printed else 0
    return abs(value - float(printed)) <= 0.5 * 10 ** -decimals + 1e-12


def test_criterion_11_mapping_tables(report):
    start = time.perf_counter()
    s1, s2 = mapping_table("s1"), mapping_table("s2")
    cells = [
        ("S1 molecular delta", s1["molecular"]["delta"], "500"),
        *[(f"S1 molecular kappa{i}", v, "50") for i, v in enumerate(s1["molecular"]["kappa"])],
        *[(f"S1 molecular nu{i}", v, p) for i, (v, p)
          in enumerate(zip(s1["molecular"]["nu"], ("505", "495", "485")))],
        ("S1 molecular T", s1["molecular"]["T_fs"], "853.9"),
        *[(f"S1 ion delta{i}", v, p) for i, (v, p)
          in enumerate(zip(s1["ion"]["delta"], ("7.11", "4.78", "3.98")))],
        *[(f"S1 ion kappa{i}", v, p) for i, (v, p)
          in enumerate(zip(s1["ion"]["kappa"], ("2.13", "1.43", "1.19")))],
        *[(f"S1 ion nu{i}", v, p) for i, (v, p)
          in enumerate(zip(s1["ion"]["nu"], ("21.54", "14.20", "11.59")))],
        *[(f"S1 ion T{i}", v, p) for i, (v, p)
          in enumerate(zip(s1["ion"]["T_ms"], ("0.60", "0.89", "1.07")))],
        ("S2 molecular epsilon", s2["molecular"]["epsilon"], "100"),
        ("S2 molecular delta", s2["molecular"]["delta"], "30"),
        ("S2 molecular kappa", s2["molecular"]["kappa"][0], "30"),
        ("S2 molecular nu", s2["molecular"]["nu"][0], "104"),
        ("S2 molecular T", s2["molecular"]["T_fs"] / 1e3, "4.003"),
        ("S2 ion epsilon", s2["ion"]["epsilon"], "49.82"),
        ("S2 ion delta", s2["ion"]["delta"][0], "8"),
        ("S2 ion kappa", s2["ion"]["kappa"][0], "2.67"),
        ("S2 ion nu", s2["ion"]["nu"][0], "27.73"),
        ("S2 ion T_SQ", s2["ion"]["T_sq_ms"], "0.24"),
        ("S2 ion T_kick", s2["ion"]["T_ms"][0], "0.45"),
    ]
    bad = [f"{name}: {value:.4g} vs printed {printed}" for name, value, printed in cells
           if not _printed_match(value, printed)]
    report(11, "parameter-mapping tables", not bad,
           f"{len(cells) - len(bad)}/{len(cells)} cells match"
           + (f"; mismatches: {'; '.join(bad)}" if bad else ""), start)


def test_criterion_12_calibration_scans(report):
    start = time.perf_counter()
    taus = (0.25 * math.pi, 0.5 * math.pi, math.pi)  # sideband pi-time / 4, / 2, x 1
    scans = {
        "spin-phase": (calibrate_spin_phase_scan, np.linspace(-math.pi / 2, math.pi / 2, 201)),
        "light-shift": (calibrate_light_shift_scan, np.linspace(-2.0, 2.0, 201)),
        "motion-freq": (calibrate_motion_freq_scan, np.linspace(-1.0, 1.0, 201)),
    }
    ok = True
    parts = []
    for name, (scan, grid) in scans.items():
        centre = len(grid) // 2
        assert abs(grid[centre]) < 1e-15
        widths, peak_err, odd = [], 0.0, 0.0
        peaked = True
        for tau in taus:
            curve = scan(grid, tau)
            peaked = peaked and int(np.argmax(curve)) == centre
            peak_err = max(peak_err, abs(curve[centre] - 1.0))
            odd = max(odd, float(np.max(np.abs(curve - curve[::-1]))))
            widths.append(scan_width(grid, curve))
        shrinking = all(b < a for a, b in zip(widths, widths[1:]))
        this = peaked and peak_err < 1e-8 and odd < 1e-8 and shrinking
        ok = ok and this
        parts.append(f"{name}: {'ok' if this else 'FAIL'} peak-at-0 {peaked}, |P0(0)-1| "
                     f"{peak_err:.1e}, asymmetry {odd:.1e}, widths "
                     f"{', '.join(f'{w:.3g}' for w in widths)}")
    report(12, "calibration scans", ok, "; ".join(parts), start)
