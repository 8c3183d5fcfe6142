"""Diagnostics over phase-space snapshots: conserved quantities, the Casimir
functional H_Q, modulated energies, Langmuir-oscillation filtering, weak-norm
proxies, and growth-rate fits.

Conventions used throughout:
  - H_Q(f) = sum dx dv [Q(f) - Q(mu) - Q'(mu)(f - mu)] with Q'(mu(v))
    evaluated through its exact closed form -|v - vbar|^2 / 2, never through
    the s -> u table.
  - Closed-form cross-check: integral of Q(mu(v)) over one spatial period of
    unit length equals -3*sqrt(2) * integral of sqrt(-u) phi(u) du (the
    substitution u = -(v - vbar)^2/2 contributes du/sqrt(-2u) per branch).
  - Maxwellian case: H_Q = T * KL(f | mu), so the Csiszar-Kullback-Pinsker
    inequality reads ||f - mu||_1^2 <= (2/T) H_Q(f).
  - The current potential J is the zero-mean antiderivative of j - jbar,
    which pins the free constant and makes O = J + i*eps*V well defined.
  - Q(f)^2 / f := 0 wherever f = 0 (consistent with Q(0) = 0 and Q in C^1).
  - The ion-model modulated energy adds (alpha/2) * integral of V^2, the
    screen term of the scaled physical energy; at alpha = 1 this is the
    familiar H_Q + (eps^2/2)||dxV||^2 + (1/2)||V||^2 form.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate

from qnk.errors import FitError, ParameterError, ResolutionError
from qnk.profiles import CasimirQ, SStableProfile
from qnk.solver import FieldState, ModelKind, PhaseGrid, _advect_v_values

__all__ = [
    "DIAG_COLUMNS",
    "DiagnosticsRecord",
    "OscillationState",
    "casimir_H",
    "casimir_closed_form",
    "ckp_check",
    "modulated_energy",
    "filtered_energy",
    "q_moment",
    "oscillation_filter",
    "weak_norm_proxy",
    "growth_fit",
    "spectral_derivative",
    "spectral_shift",
    "diagnostics_record",
    "append_diag_row",
]

#: Column order of the per-run ``diag.csv`` time series.
DIAG_COLUMNS = (
    "t", "mass", "momentum", "kinetic", "pot_field", "pot_screen",
    "HQ", "L_eps", "LO_eps", "rho_L1", "epsE_L1",
    "wproxy_r0", "wproxy_r1", "wproxy_r2", "clipped_mass", "osc_residual",
)


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One row of scalar diagnostics at a fixed output time.

    Functionals that need data the caller did not supply (a Casimir table,
    an oscillation target, a weak-norm test function) are reported as NaN.
    """

    t: float
    mass: float
    momentum: float
    kinetic: float
    potential_field: float          # (eps^2/2) int (dxV)^2
    potential_screen: float         # (alpha/2) int V^2, ion model only
    HQ: float
    L_eps: float
    LO_eps: float
    rho_L1: float                   # ||rho - 1||_L1
    epsE_L1: float                  # eps ||E||_L1
    weak_norm_proxies: Mapping[int, float] = field(default_factory=dict)
    clipped_mass: float = 0.0
    osc_residual: float = math.nan

    def row(self) -> list:
        prox = self.weak_norm_proxies
        return [self.t, self.mass, self.momentum, self.kinetic,
                self.potential_field, self.potential_screen, self.HQ,
                self.L_eps, self.LO_eps, self.rho_L1, self.epsE_L1,
                prox.get(0, math.nan), prox.get(1, math.nan),
                prox.get(2, math.nan), self.clipped_mass, self.osc_residual]


@dataclass(frozen=True)
class OscillationState:
    """The oscillation-filtered field pair at one time.

    O = J + i*eps*V oscillates with period 2*pi*eps; U = e^{-it/eps} O is the
    filtered (slow) variable, to be compared with the target i*V0(x - vbar t).
    """

    t: float
    J: np.ndarray
    epsV: np.ndarray
    O: np.ndarray
    U: np.ndarray
    target: np.ndarray
    residual: float                 # ||U - target||_L2


def _values_and_grid(f, grid):
    if hasattr(f, "values"):
        return np.asarray(f.values, dtype=float), (grid or f.grid)
    if grid is None:
        raise ParameterError("grid is required when f is a bare array")
    return np.asarray(f, dtype=float), grid


def casimir_H(f, sprof: SStableProfile, Q: CasimirQ, grid: PhaseGrid = None) -> float:
    """H_Q(f) = sum dx dv [Q(f) - Q(mu) - Q'(mu)(f - mu)] >= 0.

    Q'(mu(v)) enters through its exact value -|v - vbar|^2/2, and Q(f) and
    Q(mu) share one evaluation path, so the result vanishes identically for
    f = mu and stays nonnegative up to table interpolation error.
    """
    vals, grid = _values_and_grid(f, grid)
    if np.any(vals < 0):
        raise ParameterError("casimir_H requires f >= 0")
    v = grid.v
    mu = np.asarray(sprof.base.mu(v), dtype=float)
    Qf = Q.Q(vals)
    # evaluate Q(mu) through the same table path as Q(f): the two cancel
    # pointwise at f = mu, so H_Q(mu) = 0 exactly rather than to the
    # s -> u interpolation error
    Qmu = Q.Q(mu)
    Qpmu = Q.Qprime_of_mu(v)
    integrand = Qf - Qmu[None, :] - Qpmu[None, :] * (vals - mu[None, :])
    return float(integrand.sum() * grid.cell)


def casimir_closed_form(sprof: SStableProfile, Q: CasimirQ) -> tuple:
    """Both sides of the identity int Q(mu(v)) dv = -3*sqrt(2) *
    int_{-inf}^0 sqrt(-u) phi(u) du, each by an independent quadrature.

    Returns (lhs, rhs); their agreement validates the Q table against the
    phi table end to end.
    """
    lo, hi = sprof.base.support_window(1e-15)
    with warnings.catch_warnings():
        # roundoff warnings near the sqrt edge are benign at these tolerances
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        lhs, _ = integrate.quad(lambda x: float(Q.Q_of_mu(x)), lo, hi,
                                limit=300, epsabs=1e-13, epsrel=1e-12,
                                points=[sprof.vbar])
        umin = float(sprof.ugrid[0])
        rhs_int, _ = integrate.quad(
            lambda u: math.sqrt(-u) * float(sprof.phi_at(u)),
            umin, 0.0, limit=300, epsabs=1e-13, epsrel=1e-12)
    return float(lhs), -3.0 * math.sqrt(2.0) * rhs_int


def ckp_check(f, mu_profile, H: float, grid: PhaseGrid = None,
              slack: float = 1e-10) -> bool:
    """Whether ||f - mu||_{L1}^2 <= (2/T) H + slack holds for a maxwellian
    base profile of temperature T (for which H_Q = T * KL(f | mu))."""
    if mu_profile.kind != "maxwellian":
        raise ParameterError("the CKP comparison needs a maxwellian profile")
    vals, grid = _values_and_grid(f, grid)
    T = float(mu_profile.params.get("T", 1.0))
    mu = np.asarray(mu_profile.mu(grid.v), dtype=float)
    l1 = float(np.abs(vals - mu[None, :]).sum() * grid.cell)
    return l1 * l1 <= (2.0 / T) * H + slack


def modulated_energy(f, fields: FieldState, model: ModelKind, Q: CasimirQ,
                     grid: PhaseGrid = None) -> float:
    """L_eps = H_Q(f) + (eps^2/2) int (dxV)^2 dx, plus (alpha/2) int V^2 dx
    for the screened ion model.  Conserved along stable strong solutions."""
    vals, grid = _values_and_grid(f, grid)
    H = casimir_H(vals, Q.sprofile, Q, grid)
    eps = 1.0 if model.kind == "rescaled" else model.eps
    out = H + 0.5 * eps ** 2 * float((fields.E ** 2).sum()) * grid.dx
    if model.kind == "ion":
        out += 0.5 * model.alpha * float((fields.V ** 2).sum()) * grid.dx
    return out


def spectral_derivative(samples: np.ndarray, Lx: float, order: int = 1) -> np.ndarray:
    """order-th derivative of periodic samples by Fourier differentiation."""
    samples = np.asarray(samples, dtype=float)
    k = 2.0 * math.pi * np.fft.rfftfreq(len(samples), d=Lx / len(samples))
    return np.fft.irfft((1j * k) ** order * np.fft.rfft(samples), n=len(samples))


def spectral_shift(samples: np.ndarray, Lx: float, shift: float) -> np.ndarray:
    """samples(x - shift) for periodic samples, evaluated spectrally."""
    samples = np.asarray(samples, dtype=float)
    k = 2.0 * math.pi * np.fft.rfftfreq(len(samples), d=Lx / len(samples))
    return np.fft.irfft(np.exp(-1j * k * shift) * np.fft.rfft(samples),
                        n=len(samples))


def filtered_energy(f, fields: FieldState, eps: float, V0: np.ndarray,
                    t: float, vbar: float, Q: CasimirQ,
                    grid: PhaseGrid = None) -> float:
    """The oscillation-corrected modulated free energy

        LO_eps(t) = H_Q[ f(t, x, v - dxV0(x - vbar t) sin(t/eps)) ]
                    + (1/2) int [ eps dxV(t,x) - dxV0(x - vbar t) cos(t/eps) ]^2 dx.

    The velocity shift is applied by cubic-spline interpolation of f at the
    shifted nodes.  If the shift would push visible mass past the velocity
    cutoff, a ResolutionError is raised.
    """
    vals, grid = _values_and_grid(f, grid)
    V0 = np.asarray(V0, dtype=float)
    if V0.shape != (grid.Nx,):
        raise ParameterError("V0 must be sampled on the spatial grid")
    dxV0 = spectral_derivative(V0, grid.Lx, 1)
    shift = spectral_shift(dxV0, grid.Lx, vbar * t) * math.sin(t / eps)

    smax = float(np.abs(shift).max())
    strip = int(math.ceil(smax / grid.dv)) + 1
    if strip > 0:
        edge = vals[:, :strip].sum() + vals[:, -strip:].sum()
        if edge * grid.cell > 1e-10 * max(vals.sum() * grid.cell, 1.0):
            raise ResolutionError(
                "velocity shift would move visible mass past the cutoff; "
                "enlarge vmax")
    shifted = _advect_v_values(vals, grid, shift)
    shifted = np.maximum(shifted, 0.0)
    H = casimir_H(shifted, Q.sprofile, Q, grid)

    dxV = -np.asarray(fields.E, dtype=float)
    dxV0_t = spectral_shift(dxV0, grid.Lx, vbar * t)
    mismatch = eps * dxV - dxV0_t * math.cos(t / eps)
    return H + 0.5 * float((mismatch ** 2).sum()) * grid.dx


def q_moment(f, Q: CasimirQ, grid: PhaseGrid = None) -> float:
    """The moment sum dx dv [ |Q(f)| + Q(f)^2 / f ], with 0/0 read as 0."""
    vals, grid = _values_and_grid(f, grid)
    Qf = Q.Q(vals)
    out = np.abs(Qf)
    pos = vals > 0.0
    ratio = np.zeros_like(Qf)
    ratio[pos] = Qf[pos] ** 2 / vals[pos]
    return float((out + ratio).sum() * grid.cell)


def oscillation_filter(fields: FieldState, eps: float, t: float,
                       V0: np.ndarray, vbar: float,
                       grid: PhaseGrid) -> OscillationState:
    """Split the fast Langmuir rotation off the field pair.

    O = J + i*eps*V rotates with frequency 1/eps; U = e^{-it/eps} O is slow
    and converges to the target i*V0(x - vbar t) when the filtered dynamics
    is captured.  |O| = |U| pointwise by construction.
    """
    J = np.asarray(fields.J, dtype=float)
    epsV = eps * np.asarray(fields.V, dtype=float)
    O = J + 1j * epsV
    U = np.exp(-1j * t / eps) * O
    if V0 is None:
        target = np.zeros_like(O)
    else:
        target = 1j * spectral_shift(np.asarray(V0, dtype=float),
                                     grid.Lx, vbar * t)
    residual = float(math.sqrt((np.abs(U - target) ** 2).sum() * grid.dx))
    return OscillationState(t=t, J=J, epsV=epsV, O=O, U=U, target=target,
                            residual=residual)


def weak_norm_proxy(g: np.ndarray, r: int, ell: np.ndarray, dv: float) -> float:
    """Pairing lower bound for the W^{-r,1} size of a velocity profile:

        <g, ell'> / ||ell||_{W^{r+1,inf}},

    with the test-function derivatives taken by centered finite differences.
    This is a lower-bound functional, not the norm itself.
    """
    g = np.asarray(g, dtype=float)
    ell = np.asarray(ell, dtype=float)
    if g.shape != ell.shape:
        raise ParameterError("g and ell must share one velocity grid")
    if r < 0:
        raise ParameterError("r must be nonnegative")
    d = ell
    norm = float(np.abs(ell).max())
    for _ in range(r + 1):
        d = np.gradient(d, dv, edge_order=2)
        norm = max(norm, float(np.abs(d).max()))
    ell_prime = np.gradient(ell, dv, edge_order=2)
    pairing = float((g * ell_prime).sum() * dv)
    return pairing / norm


def growth_fit(series, window=None) -> tuple:
    """Least-squares exponential rate of a positive time series.

    ``series`` is an iterable of (t, value) pairs.  When ``window`` (a
    (t_lo, t_hi) pair) is omitted, the fit window is auto-selected where the
    values lie in [10 * floor, 0.1 * saturation], the clean exponential
    stretch between the noise floor and saturation.  Returns
    (rate, r_squared); fewer than 8 usable points raise FitError.
    """
    arr = np.asarray(list(series), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ParameterError("series must be (t, value) pairs")
    t, val = arr[:, 0], arr[:, 1]
    if window is not None:
        mask = (t >= window[0]) & (t <= window[1])
    else:
        floor, sat = float(val.min()), float(val.max())
        mask = (val > 10.0 * floor) & (val < 0.1 * sat)
    if int(mask.sum()) < 8:
        raise FitError(f"growth window holds {int(mask.sum())} points; "
                       "need at least 8")
    tw, vw = t[mask], val[mask]
    if np.any(vw <= 0):
        raise FitError("growth fit requires positive values on the window")
    y = np.log(vw)
    rate, intercept = np.polyfit(tw, y, 1)
    resid = y - (rate * tw + intercept)
    ss_res = float((resid ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(rate), float(r2)


def diagnostics_record(f, fields: FieldState, model: ModelKind,
                       Q: CasimirQ = None, ell: np.ndarray = None,
                       V0: np.ndarray = None, vbar: float = 0.0,
                       mu_samples: np.ndarray = None) -> DiagnosticsRecord:
    """Assemble the full scalar record for one snapshot.

    ``ell`` (velocity test function) enables the weak-norm proxies of the
    x-averaged deviation f - mu; ``Q`` enables H_Q / L_eps; ``V0`` enables
    the filtered energy and oscillation residual.  Missing ingredients leave
    NaN in the corresponding columns.
    """
    grid = f.grid
    vals = f.values
    eps = 1.0 if model.kind == "rescaled" else model.eps

    kinetic = 0.5 * float((vals @ (grid.v ** 2)).sum()) * grid.cell
    pot_field = 0.5 * eps ** 2 * float((fields.E ** 2).sum()) * grid.dx
    pot_screen = (0.5 * model.alpha * float((fields.V ** 2).sum()) * grid.dx
                  if model.kind == "ion" else 0.0)
    rho_L1 = float(np.abs(fields.rho - 1.0).sum() * grid.dx)
    epsE_L1 = eps * float(np.abs(fields.E).sum() * grid.dx)

    HQ = L_eps = LO_eps = math.nan
    if Q is not None:
        HQ = casimir_H(vals, Q.sprofile, Q, grid)
        L_eps = HQ + pot_field + pot_screen
        if V0 is not None:
            LO_eps = filtered_energy(vals, fields, eps, V0, f.time, vbar, Q,
                                     grid)

    proxies = {}
    if ell is not None:
        if mu_samples is None:
            raise ParameterError("weak-norm proxies need mu_samples")
        g = vals.mean(axis=0) - np.asarray(mu_samples, dtype=float)
        for r in (0, 1, 2):
            proxies[r] = weak_norm_proxy(g, r, ell, grid.dv)

    osc = math.nan
    if V0 is not None:
        osc = oscillation_filter(fields, eps, f.time, V0, vbar, grid).residual

    return DiagnosticsRecord(
        t=f.time, mass=f.mass, momentum=f.momentum, kinetic=kinetic,
        potential_field=pot_field, potential_screen=pot_screen, HQ=HQ,
        L_eps=L_eps, LO_eps=LO_eps, rho_L1=rho_L1, epsE_L1=epsE_L1,
        weak_norm_proxies=proxies, clipped_mass=f.clipped_mass,
        osc_residual=osc)


def append_diag_row(path, record: DiagnosticsRecord) -> None:
    """Append one record to ``diag.csv``, writing the header on first use."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(DIAG_COLUMNS)
        writer.writerow(f"{x:.17g}" for x in record.row())
