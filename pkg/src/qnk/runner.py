"""Scenario execution for the qnk command line.

Each scenario runs in its own output directory and leaves a deterministic
set of artifacts: ``report.txt`` (scalar results and the pass/fail of
every declared assertion), ``diag.csv`` (one diagnostics row per output
time; header-only when the scenario has no time axis), scenario-specific
CSVs (``roots.csv``, ``ftrapped.csv``, ``wave.csv``, ``neutrality.csv``),
and phase-space snapshots for time-stepping scenarios.  Repeated runs of
one config produce byte-identical outputs on one platform: all floats are
written with 17 significant digits and nothing time- or host-dependent is
recorded.

A scenario fails (nonzero exit from the CLI) when a declared assertion
fails or a numerical error surfaces at runtime; the error text is
recorded in the report rather than crashing the whole config run.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from qnk.bgk import (
    BoundaryData,
    abel_invert_oracle,
    assemble_wave,
    quad_identity_selftest,
    trapped_density,
    verify_neutrality,
)
from qnk.config import Scenario
from qnk.diagnostics import (
    DIAG_COLUMNS,
    append_diag_row,
    diagnostics_record,
    growth_fit,
    spectral_derivative,
)
from qnk.dispersion import build_eigenmode, find_unstable_roots
from qnk.errors import (
    AdmissibilityError,
    ConfigError,
    FitError,
    ParameterError,
    PositivityError,
    QnkError,
)
from qnk.profiles import (
    ProfileSpec,
    build_casimir,
    build_s_stable,
    check_alpha_penrose,
    check_penrose,
)
from qnk.solver import (
    DistributionField,
    FieldState,
    ModelKind,
    make_perturbed_initial,
    rescaling_maps,
    solve_poisson,
    step,
    write_snapshot,
)

__all__ = ["AssertionOutcome", "ScenarioResult", "run_scenario", "run_all",
           "run_selftest"]


@dataclass(frozen=True)
class AssertionOutcome:
    name: str
    threshold: object
    value: object
    passed: bool


@dataclass(frozen=True)
class ScenarioResult:
    name: str
    kind: str
    outdir: str
    passed: bool
    assertions: tuple
    scalars: Mapping
    error: str = None


# declared assertion -> (scalar it checks, comparison)
_ASSERT_RULES = {
    "stable": ("stable", "eq"),
    "rate_rel_tol": ("rate_rel_err", "le"),
    "r2_min": ("fit_r2", "ge"),
    "lyapunov_max": ("lyapunov_drift", "le"),
    "lo_eps_max": ("lo_eps_sup", "le"),
    "osc_residual_max": ("osc_residual_sup", "le"),
    "neutrality_max": ("neutrality_max", "le"),
}


def _g(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_g(cell) for cell in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _write_roots_csv(path, roots) -> None:
    _write_csv(path, ("n", "re_lambda", "im_lambda", "residual",
                      "zeta_re", "zeta_im"),
               [(r.n, r.lam.real, r.lam.imag, r.residual,
                 r.zeta.real, r.zeta.imag) for r in roots])


def _moments(values, grid):
    rho = values.sum(axis=1) * grid.dv
    j = (values @ grid.v) * grid.dv
    return rho, j


def _n_range(s: Scenario):
    return range(1, s.n_max + 1) if s.n_max is not None else None


def _n_steps(s: Scenario) -> int:
    n = round(s.t_final / s.dt)
    if n < 1 or s.dt <= 0:
        raise ParameterError(
            f"t_final={s.t_final} with dt={s.dt} yields no steps")
    return n


# ---------------------------------------------------------------------------
# per-kind runners; each returns the scalars block of the report


def _run_penrose(s: Scenario, outdir: Path) -> dict:
    rep = check_alpha_penrose(s.profile, s.alpha)
    scalars = {
        "stable": not rep.unstable,
        "alpha": s.alpha,
        "minima_count": len(rep.minima),
        "delta_condition_sup": rep.delta_condition.sup,
        "delta_condition_holds": rep.delta_condition.holds,
    }
    for i, m in enumerate(rep.minima):
        scalars[f"minimum_{i}_vbar"] = m.vbar
        scalars[f"minimum_{i}_integral"] = m.integral
        scalars[f"minimum_{i}_satisfies"] = m.satisfies

    roots = []
    if rep.unstable and s.M is not None:
        roots = find_unstable_roots(s.profile, s.M, n_range=_n_range(s))
        dom = next((r for r in roots if r.dominant), None)
        if dom is not None:
            scalars["lambda1_re"] = dom.lam.real
            scalars["lambda1_im"] = dom.lam.imag
            scalars["lambda1_n"] = dom.n
    scalars["root_count"] = len(roots)
    _write_roots_csv(outdir / "roots.csv", roots)
    _write_csv(outdir / "diag.csv", DIAG_COLUMNS, [])  # no time axis
    return scalars


def _run_instability(s: Scenario, outdir: Path) -> dict:
    p, grid = s.profile, s.grid
    roots = find_unstable_roots(p, s.M, n_range=_n_range(s))
    if not roots:
        raise AdmissibilityError(
            f"profile has no unstable modes on the period-{s.M:g} torus; "
            "an instability scenario needs at least one")
    _write_roots_csv(outdir / "roots.csv", roots)
    dom = next(r for r in roots if r.dominant)
    mode = build_eigenmode(p, dom, grid)
    f = make_perturbed_initial(p, mode, s.delta, truncate=s.truncate,
                               grid=grid)
    write_snapshot(outdir / "snap_initial.bin", f)

    model = ModelKind.rescaled()
    mu = np.asarray(p.mu(grid.v), dtype=float)
    mu = mu / (mu.sum() * grid.dv)
    diag_path = outdir / "diag.csv"
    series_rho, series_prox = [], []

    def emit(fld):
        rho, j = _moments(fld.values, grid)
        fields = solve_poisson(rho, model, grid, j=j)
        rec = diagnostics_record(fld, fields, model, ell=mode.ell,
                                 mu_samples=mu)
        append_diag_row(diag_path, rec)
        series_rho.append((fld.time, rec.rho_L1))
        series_prox.append((fld.time,
                            abs(rec.weak_norm_proxies.get(1, math.nan))))

    emit(f)
    nsteps = _n_steps(s)
    for k in range(1, nsteps + 1):
        f = step(f, model, s.dt)
        if k % s.stride == 0 or k == nsteps:
            emit(f)
    write_snapshot(outdir / "snap_final.bin", f)

    lam1 = dom.lam.real
    rate, r2 = growth_fit(series_rho)
    scalars = {
        "lambda1_re": lam1,
        "lambda1_im": dom.lam.imag,
        "lambda1_n": dom.n,
        "root_count": len(roots),
        "fitted_rate": rate,
        "fit_r2": r2,
        "rate_rel_err": abs(rate - lam1) / lam1,
        "copies": rescaling_maps(s.eps, s.M).copies,
        "steps": nsteps,
        "clipped_mass": f.clipped_mass,
        "renormalizations": f.renormalizations,
    }
    try:
        prate, _ = growth_fit(series_prox)
        scalars["proxy_rate"] = prate
        scalars["proxy_rel_err"] = abs(prate - 2.0 * lam1) / (2.0 * lam1)
    except (FitError, QnkError):
        scalars["proxy_rate"] = math.nan
        scalars["proxy_rel_err"] = math.nan
    return scalars


def _run_stable(s: Scenario, outdir: Path) -> dict:
    p, grid, eps = s.profile, s.grid, s.eps
    sprof = build_s_stable(p)
    a = float(np.max(sprof.phi))
    smax = s.q_smax if s.q_smax is not None else 1.5 * a
    Q = build_casimir(sprof, s_max=smax)

    mu = np.asarray(p.mu(grid.v), dtype=float)
    mu = mu / (mu.sum() * grid.dv)
    x = grid.x
    if s.kind == "stable_well_prepared":
        rho0 = 1.0 + s.delta * np.cos(2.0 * math.pi * s.pert_mode * x / grid.Lx)
        V0 = None
        vbar = 0.0
    else:
        V0 = s.v0_amp * np.cos(2.0 * math.pi * s.v0_mode * x / grid.Lx)
        # ill-prepared data: the initial potential is V0/eps, so the
        # density carries the full O(eps) field source 1 - eps * V0''
        rho0 = 1.0 - eps * spectral_derivative(V0, grid.Lx, order=2)
        vbar = s.vbar
    if rho0.min() <= 0.0:
        raise PositivityError(
            f"initial density dips to {rho0.min():.3e}; lower the "
            "perturbation amplitude")
    f = DistributionField(grid=grid, values=np.outer(rho0, mu))
    write_snapshot(outdir / "snap_initial.bin", f)

    model = ModelKind.electron(eps)
    diag_path = outdir / "diag.csv"
    L_series, LO_series, osc_series = [], [], []

    def emit(fld):
        rho, j = _moments(fld.values, grid)
        fields = solve_poisson(rho, model, grid, j=j)
        rec = diagnostics_record(fld, fields, model, Q=Q, V0=V0, vbar=vbar)
        append_diag_row(diag_path, rec)
        L_series.append(rec.L_eps)
        LO_series.append(rec.LO_eps)
        osc_series.append(rec.osc_residual)

    emit(f)
    nsteps = _n_steps(s)
    for k in range(1, nsteps + 1):
        f = step(f, model, s.dt)
        if k % s.stride == 0 or k == nsteps:
            emit(f)
    write_snapshot(outdir / "snap_final.bin", f)

    L = np.asarray(L_series)
    scalars = {
        "q_smax": smax,
        "L_eps_initial": L[0],
        "L_eps_final": L[-1],
        "L_eps_sup": float(L.max()),
        "lyapunov_drift": float(np.abs(L - L[0]).max()),
        "steps": nsteps,
        "clipped_mass": f.clipped_mass,
        "renormalizations": f.renormalizations,
    }
    if s.kind == "stable_ill_prepared":
        LO = np.asarray(LO_series)
        osc = np.asarray(osc_series)
        scalars["lo_eps_initial"] = LO[0]
        scalars["lo_eps_sup"] = float(LO.max())
        scalars["osc_residual_sup"] = float(osc.max())
    return scalars


def _zero_mean_antiderivative(j, grid):
    k = 2.0 * math.pi * np.fft.rfftfreq(grid.Nx, d=grid.dx)
    jhat = np.fft.rfft(j - j.mean())
    Jhat = np.zeros_like(jhat)
    Jhat[1:] = jhat[1:] / (1j * k[1:])
    return np.fft.irfft(Jhat, n=grid.Nx)


def _run_bgk(s: Scenario, outdir: Path) -> dict:
    ion = s.kind == "ion_variant"
    wave = assemble_wave(s.boundary, s.well, s.grid,
                         model="ion" if ion else "quasineutral",
                         alpha=s.alpha if ion else 0.0)
    maxdev, dev = verify_neutrality(wave, profile=True)
    grid = s.grid

    F0 = wave.bd.F0
    _write_csv(outdir / "ftrapped.csv", ("u", "f_T"),
               [(0.0, 0.5 * F0)] + list(zip(wave.fT_u, wave.fT_values)))
    xs = np.repeat(grid.x, grid.Nv)
    vs = np.tile(grid.v, grid.Nx)
    _write_csv(outdir / "wave.csv", ("x", "v", "f"),
               zip(xs, vs, wave.f.ravel()))
    rho_minus_1 = dev + (wave.alpha * wave.V_x if ion else 0.0)
    _write_csv(outdir / "neutrality.csv", ("x", "rho_minus_1", "residual"),
               zip(grid.x, rho_minus_1, dev))

    fld = DistributionField(grid=grid, values=wave.f.copy())
    rho, j = _moments(wave.f, grid)
    V = np.asarray(wave.well(grid.x), dtype=float)
    E = -np.asarray(wave.well.derivative(grid.x), dtype=float)
    fields = FieldState(rho=rho, j=j, V=V, E=E, jbar=float(j.mean()),
                        J=_zero_mean_antiderivative(j, grid))
    dmodel = ModelKind.ion(1.0, s.alpha) if ion else ModelKind.rescaled()
    append_diag_row(outdir / "diag.csv",
                    diagnostics_record(fld, fields, dmodel))

    scalars = {
        "neutrality_max": maxdev,
        "well_depth": wave.well.depth,
        "mass": fld.mass,
        "fT_anchor": 0.5 * F0,
        "table_points": len(wave.fT_u),
    }
    if len(wave.fT_u):
        scalars["u_ref"] = float(wave.fT_u[-1])
    if ion:
        scalars["alpha"] = wave.alpha
        scalars["ubar"] = wave.ubar
    return scalars


_RUNNERS = {
    "penrose_check": _run_penrose,
    "instability": _run_instability,
    "stable_well_prepared": _run_stable,
    "stable_ill_prepared": _run_stable,
    "bgk_build": _run_bgk,
    "ion_variant": _run_bgk,
}


def _evaluate_assertions(s: Scenario, scalars: Mapping) -> tuple:
    outcomes = []
    for name in sorted(s.assertions):
        threshold = s.assertions[name]
        key, op = _ASSERT_RULES[name]
        value = scalars.get(key)
        if op == "eq":
            ok = value is not None and bool(value) == bool(threshold)
        elif value is None or (isinstance(value, float)
                               and math.isnan(value)):
            ok = False
        elif op == "le":
            ok = value <= threshold
        else:
            ok = value >= threshold
        outcomes.append(AssertionOutcome(name=name, threshold=threshold,
                                         value=value, passed=ok))
    return tuple(outcomes)


def _write_report(outdir: Path, s: Scenario, scalars: Mapping,
                  outcomes: tuple, error: str, passed: bool) -> None:
    lines = [f"scenario = {s.name}", f"kind = {s.kind}",
             f"seed = {s.seed}",
             f"status = {'error' if error else 'pass' if passed else 'fail'}"]
    for key in sorted(scalars):
        lines.append(f"{key} = {_g(scalars[key])}")
    for o in outcomes:
        verdict = "pass" if o.passed else "fail"
        value = "missing" if o.value is None else _g(o.value)
        lines.append(f"assert {o.name} : {verdict} (value = {value}, "
                     f"threshold = {_g(o.threshold)})")
    if error:
        lines.append(f"error = {error}")
    (outdir / "report.txt").write_text("\n".join(lines) + "\n")


def run_scenario(s: Scenario, outdir) -> ScenarioResult:
    """Execute one scenario into ``outdir`` and write its report.

    Declared assertions decide the pass/fail status; numerical errors
    raised by the modules are caught and recorded in the report instead
    of propagating.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "diag.csv").unlink(missing_ok=True)

    scalars, error = {}, None
    try:
        scalars = _RUNNERS[s.kind](s, outdir)
    except (QnkError, FloatingPointError) as exc:
        error = f"{type(exc).__name__}: {exc}"
    outcomes = _evaluate_assertions(s, scalars) if error is None else ()
    passed = error is None and all(o.passed for o in outcomes)
    _write_report(outdir, s, scalars, outcomes, error, passed)
    return ScenarioResult(name=s.name, kind=s.kind, outdir=str(outdir),
                          passed=passed, assertions=outcomes,
                          scalars=scalars, error=error)


def run_all(scenarios, outroot, parallel: bool = False) -> list:
    """Run scenarios into ``outroot/<name>`` directories.

    Scenarios share nothing, so ``parallel=True`` simply fans them out to
    a thread pool; ``QNK_THREADS`` caps the worker count.
    """
    outroot = Path(outroot)
    outroot.mkdir(parents=True, exist_ok=True)

    def one(s: Scenario) -> ScenarioResult:
        return run_scenario(s, outroot / s.name)

    if parallel and len(scenarios) > 1:
        workers = min(len(scenarios), os.cpu_count() or 1)
        cap = os.environ.get("QNK_THREADS")
        if cap is not None:
            try:
                workers = max(1, min(workers, int(cap)))
            except ValueError:
                raise ConfigError(
                    f"QNK_THREADS must be an integer, got {cap!r}") from None
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, scenarios))
    return [one(s) for s in scenarios]


def run_selftest() -> list:
    """Quick oracle battery: (name, ok, detail) triples.

    Covers the quadrature identity behind the trapped-density kernel, the
    closed-form trapped density of the worked boundary data, consistency
    of the Abel-inversion oracle with direct quadrature, and the
    stability verdicts of the two canonical profiles.
    """
    from scipy.special import erfcx

    results = []

    ok = quad_identity_selftest()
    results.append(("quad_identity", ok,
                    "int_a^b dv/sqrt((b^2-v^2)(v^2-a^2)) * sqrt(...) = pi/2 "
                    "on three (a, b) windows, tol 1e-8"))

    bd = BoundaryData(plus={"kind": "half_maxwellian", "weight": 2.0})
    val = trapped_density(bd, 1.0)
    ref = float(erfcx(1.0 / math.sqrt(2.0))) / math.sqrt(2.0 * math.pi)
    diff = abs(val - ref)
    results.append(("trapped_density_closed_form", diff <= 1e-10,
                    f"|f_T(1) - erfcx closed form| = {diff:.3e}"))

    u = np.linspace(0.1, 1.5, 25)
    gap = float(np.abs(abel_invert_oracle(bd, u)
                       - np.array([trapped_density(bd, float(t))
                                   for t in u])).max())
    results.append(("abel_inversion_oracle", gap <= 1e-6,
                    f"sup gap vs direct quadrature = {gap:.3e}"))

    stable = not check_penrose(ProfileSpec("maxwellian", T=1.0)).unstable
    unstable = check_penrose(
        ProfileSpec("two_stream", T=0.25, u=2.0)).unstable
    results.append(("penrose_verdicts", stable and unstable,
                    f"maxwellian stable = {stable}, "
                    f"two-stream unstable = {unstable}"))
    return results
