"""Semi-Lagrangian solver for the 1D Vlasov--Poisson systems.

Three closed models on a periodic-x, truncated-v phase grid:

  electron(eps):  d_t f + v d_x f + E d_v f = 0,  E = -d_x V,
                  -eps^2 d_x^2 V = rho - 1        on x in [0, 1)
  ion(eps, alpha): same transport, field equation
                  alpha V - eps^2 d_x^2 V = rho - 1
  rescaled:       the parameter-free long-torus form (period M),
                  -d_x^2 V = rho - 1

Time stepping is Strang splitting: half x-advection, field solve, full
v-advection, half x-advection.  Advections are semi-Lagrangian with cubic
B-spline interpolation -- periodic (FFT-diagonalized) in x, zero-inflow
collocation in v.  The x sweep is a per-row constant shift and therefore a
single multiplication in Fourier space; the v sweep is a per-column
constant shift against a banded Cholesky factorization shared by all
columns.  Mass is conserved exactly by the x sweep and to interpolation
error by the v sweep; negative interpolation undershoots are clipped and
the clipped mass is accumulated on the field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from qnk.errors import ParameterError, PositivityError, SolvabilityError

__all__ = [
    "PhaseGrid",
    "DistributionField",
    "FieldState",
    "ModelKind",
    "solve_poisson",
    "advect_x",
    "advect_v",
    "step",
    "make_perturbed_initial",
    "rescaling_maps",
    "ScalingReport",
    "write_snapshot",
    "read_snapshot",
]


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform grid on [0, Lx) x [-vmax, vmax]; x periodic, v truncated."""

    Lx: float
    Nx: int
    vmax: float
    Nv: int

    def __post_init__(self):
        if not (self.Lx > 0 and self.vmax > 0):
            raise ParameterError("PhaseGrid needs Lx > 0 and vmax > 0")
        if not (_is_pow2(self.Nx) and _is_pow2(self.Nv)):
            raise ParameterError("Nx and Nv must be powers of two")

    @property
    def dx(self) -> float:
        return self.Lx / self.Nx

    @property
    def dv(self) -> float:
        return 2.0 * self.vmax / (self.Nv - 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.Nx) * self.dx

    @property
    def v(self) -> np.ndarray:
        return np.linspace(-self.vmax, self.vmax, self.Nv)

    @property
    def cell(self) -> float:
        return self.dx * self.dv


@dataclass
class DistributionField:
    """Samples of f on a PhaseGrid with bookkeeping for the invariants."""

    grid: PhaseGrid
    values: np.ndarray          # (Nx, Nv), nonnegative
    time: float = 0.0
    mass_ref: float = None     # set from the initial samples when omitted
    clipped_mass: float = 0.0   # cumulative mass removed by positivity clips
    renormalizations: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.Nx, self.grid.Nv):
            raise ParameterError("values must have shape (Nx, Nv)")
        if self.mass_ref is None:
            self.mass_ref = self.mass

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell)

    @property
    def momentum(self) -> float:
        return float((self.values @ self.grid.v).sum() * self.grid.cell)

    @property
    def boundary_density(self) -> float:
        return float(max(np.abs(self.values[:, 0]).max(),
                         np.abs(self.values[:, -1]).max()))


@dataclass(frozen=True)
class FieldState:
    """Moments and fields at one time: density, current, potential."""

    rho: np.ndarray
    j: np.ndarray
    V: np.ndarray
    E: np.ndarray              # -d_x V
    jbar: float
    J: np.ndarray              # zero-mean antiderivative of j - jbar


@dataclass(frozen=True)
class ModelKind:
    kind: str                  # "electron" | "ion" | "rescaled"
    eps: float = None
    alpha: float = None

    @classmethod
    def electron(cls, eps: float) -> "ModelKind":
        if not eps > 0:
            raise ParameterError("electron model requires eps > 0")
        return cls("electron", eps=float(eps))

    @classmethod
    def ion(cls, eps: float, alpha: float) -> "ModelKind":
        if not eps > 0:
            raise ParameterError("ion model requires eps > 0")
        if not alpha > 0:
            raise ParameterError("ion model requires alpha > 0")
        return cls("ion", eps=float(eps), alpha=float(alpha))

    @classmethod
    def rescaled(cls) -> "ModelKind":
        return cls("rescaled")


def _wavenumbers(grid: PhaseGrid) -> np.ndarray:
    return 2.0 * math.pi * np.fft.rfftfreq(grid.Nx, d=grid.dx)


def solve_poisson(rho: np.ndarray, model: ModelKind, grid: PhaseGrid,
                  j: np.ndarray = None) -> FieldState:
    """Spectral field solve for one model; optionally also the current
    potential J with d_x J = j - jbar."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (grid.Nx,):
        raise ParameterError("rho must have shape (Nx,)")
    k = _wavenumbers(grid)
    src = np.fft.rfft(rho - 1.0)
    if model.kind in ("electron", "rescaled"):
        mean_dev = abs(src[0]) / grid.Nx
        if mean_dev > 1e-10:
            raise SolvabilityError(
                f"mean density deviates from 1 by {mean_dev:.3e}; the field "
                "equation without a screening term is only solvable for "
                "zero-mean source")
        src[0] = 0.0   # the screened (ion) model keeps its constant mode

    if model.kind == "electron":
        denom = model.eps ** 2 * k ** 2
    elif model.kind == "ion":
        denom = model.alpha + model.eps ** 2 * k ** 2
    elif model.kind == "rescaled":
        denom = k ** 2
    else:
        raise ParameterError(f"unknown model kind {model.kind!r}")
    Vhat = np.zeros_like(src)
    nz = denom > 0
    Vhat[nz] = src[nz] / denom[nz]
    V = np.fft.irfft(Vhat, n=grid.Nx)
    E = np.fft.irfft(-1j * k * Vhat, n=grid.Nx)

    if j is None:
        j = np.zeros(grid.Nx)
        jbar = 0.0
        J = np.zeros(grid.Nx)
    else:
        j = np.asarray(j, dtype=float)
        jbar = float(j.mean())
        jhat = np.fft.rfft(j - jbar)
        Jhat = np.zeros_like(jhat)
        Jhat[1:] = jhat[1:] / (1j * k[1:])
        J = np.fft.irfft(Jhat, n=grid.Nx)
    return FieldState(rho=rho, j=j, V=V, E=E, jbar=jbar, J=J)


# cubic B-spline interpolation weights at fractional offset th in [0, 1):
# taps c[q-1], c[q], c[q+1], c[q+2] for a point between nodes q and q+1
def _bspline_weights(th):
    w0 = (1.0 - th) ** 3 / 6.0
    w1 = 2.0 / 3.0 - th ** 2 + th ** 3 / 2.0
    w2 = 1.0 / 6.0 + th / 2.0 + th ** 2 / 2.0 - th ** 3 / 2.0
    w3 = th ** 3 / 6.0
    return w0, w1, w2, w3


@lru_cache(maxsize=32)
def _xshift_multiplier(grid: PhaseGrid, dt: float) -> np.ndarray:
    """Fourier multiplier of a per-row semi-Lagrangian shift by v*dt."""
    Nx = grid.Nx
    kidx = np.arange(Nx // 2 + 1)
    phase = np.exp(-2j * math.pi * kidx / Nx)          # one-cell shift
    bhat = (2.0 / 3.0 + (1.0 / 3.0) * np.cos(2.0 * math.pi * kidx / Nx))
    s = grid.v * dt / grid.dx
    m = np.floor(s)
    th = 1.0 - (s - m)          # fractional part seen from the departure node
    w0, w1, w2, w3 = _bspline_weights(th)
    # taps at integer shifts m+2, m+1, m, m-1
    H = (np.power.outer(phase, m + 2.0) * w0[None, :]
         + np.power.outer(phase, m + 1.0) * w1[None, :]
         + np.power.outer(phase, m) * w2[None, :]
         + np.power.outer(phase, m - 1.0) * w3[None, :]) / bhat[:, None]
    return H


@lru_cache(maxsize=8)
def _vspline_cholesky(Nv: int):
    ab = np.empty((2, Nv))
    ab[0, :] = 1.0 / 6.0
    ab[0, 0] = 0.0
    ab[1, :] = 2.0 / 3.0
    return cholesky_banded(ab, lower=False)


def _advect_x_values(values: np.ndarray, grid: PhaseGrid, dt: float) -> np.ndarray:
    H = _xshift_multiplier(grid, dt)
    return np.fft.irfft(np.fft.rfft(values, axis=0) * H, n=grid.Nx, axis=0)


def _advect_v_values(values: np.ndarray, grid: PhaseGrid,
                     shift: np.ndarray) -> np.ndarray:
    """Per-column constant shift: new f(x_i, v_j) = old spline at v_j - shift_i."""
    Nx, Nv = values.shape
    factor = _vspline_cholesky(Nv)
    c = cho_solve_banded((factor, False), values.T).T
    # pad wide enough that any clipped out-of-range departure reads only zeros
    cpad = np.zeros((Nx, Nv + 12))
    cpad[:, 5:5 + Nv] = c
    s = np.asarray(shift) / grid.dv
    u = np.arange(Nv)[None, :] - s[:, None]
    q = np.floor(u)
    th = u - q
    base = np.clip(q.astype(np.int64) + 4, 0, Nv + 8)
    w0, w1, w2, w3 = _bspline_weights(th)
    rows = np.arange(Nx)[:, None]
    return (w0 * cpad[rows, base] + w1 * cpad[rows, base + 1]
            + w2 * cpad[rows, base + 2] + w3 * cpad[rows, base + 3])


def advect_x(f: DistributionField, dt: float) -> DistributionField:
    """Free streaming d_t f + v d_x f = 0 for time dt (exact per-row shift
    up to cubic-spline interpolation; exact when v*dt aligns with the grid)."""
    out = replace(f, values=_advect_x_values(f.values, f.grid, dt),
                  time=f.time + dt)
    return out


def advect_v(f: DistributionField, accel: np.ndarray, dt: float) -> DistributionField:
    """Acceleration sweep d_t f + a(x) d_v f = 0 for time dt."""
    shift = np.asarray(accel, dtype=float) * dt
    return replace(f, values=_advect_v_values(f.values, f.grid, shift))


def _moments(values: np.ndarray, grid: PhaseGrid):
    rho = values.sum(axis=1) * grid.dv
    j = (values @ grid.v) * grid.dv
    return rho, j


def step(f: DistributionField, model: ModelKind, dt: float) -> DistributionField:
    """One Strang-split step; returns a new field at time t + dt."""
    grid = f.grid
    g = _advect_x_values(f.values, grid, 0.5 * dt)
    rho, j = _moments(g, grid)
    fields = solve_poisson(rho, model, grid, j=j)
    g = _advect_v_values(g, grid, fields.E * dt)
    g = _advect_x_values(g, grid, 0.5 * dt)

    neg = g < 0.0
    clipped = 0.0
    if neg.any():
        clipped = float(-g[neg].sum() * grid.cell)
        g[neg] = 0.0

    mass = g.sum() * grid.cell
    renorm = f.renormalizations
    if abs(mass - f.mass_ref) > 1e-12 * max(f.mass_ref, 1.0) and mass > 0:
        g *= f.mass_ref / mass
        renorm += 1

    return DistributionField(grid=grid, values=g, time=f.time + dt,
                             mass_ref=f.mass_ref,
                             clipped_mass=f.clipped_mass + clipped,
                             renormalizations=renorm, meta=dict(f.meta))


def _mollifier_kernel(half_width: int) -> np.ndarray:
    t = np.linspace(-1.0, 1.0, 2 * half_width + 1)
    with np.errstate(divide="ignore", over="ignore"):
        w = np.where(np.abs(t) < 1.0, np.exp(-1.0 / np.maximum(1.0 - t * t, 1e-300)), 0.0)
    return w / w.sum()


def make_perturbed_initial(p, mode, delta: float, truncate: bool = False,
                           grid: PhaseGrid = None) -> DistributionField:
    """f0 = mu + delta * Re h1 on the eigenmode's grid, optionally with the
    smoothed velocity cutoff that zeroes the perturbation where
    delta |h1| approaches mu, guaranteeing nonnegativity.

    The cutoff multiplies the perturbation by a mollified indicator w(v):
    w vanishes on a sqrt(delta)/2 neighborhood of the bad set
    {delta |h1| > mu} and the transition is smoothed over the same scale,
    so delta |h1| w <= mu pointwise and the removed term has L1 size
    bounded by the local mass of the perturbation (logged in meta).
    """
    if delta < 0:
        raise ParameterError("delta must be nonnegative")
    x, v = mode.x, mode.v
    if grid is None:
        grid = PhaseGrid(Lx=float(mode.root.M), Nx=len(x),
                         vmax=float(v[-1]), Nv=len(v))
    if (len(x) != grid.Nx or len(v) != grid.Nv
            or abs(x[1] - x[0] - grid.dx) > 1e-12
            or abs(v[1] - v[0] - grid.dv) > 1e-12):
        raise ParameterError("eigenmode grid does not match the phase grid")

    mu = np.asarray(p.mu(v), dtype=float)
    # renormalize the samples so the discrete density is exactly neutral;
    # the unscreened field solves require a zero-mean source
    mu = mu / (mu.sum() * grid.dv)
    base = np.broadcast_to(mu, (grid.Nx, grid.Nv)).copy()
    if delta == 0.0:
        return DistributionField(grid=grid, values=base, time=0.0)

    pert = delta * mode.h1.real
    drop_l1 = 0.0
    if truncate:
        env = delta * np.abs(mode.h1).max(axis=0)      # x-independent bound
        bad = env > mu
        half = max(1, int(math.ceil(0.5 * math.sqrt(delta) / grid.dv)))
        # erode the good set by the mollifier radius, then smooth
        widened = np.convolve(bad.astype(float), np.ones(2 * half + 1),
                              mode="same") > 0.0
        w = np.convolve((~widened).astype(float), _mollifier_kernel(half),
                        mode="same")
        w = np.clip(w, 0.0, 1.0)
        cut = pert * w[None, :]
        drop_l1 = float(np.abs(pert - cut).sum() * grid.cell)
        pert = cut

    values = base + pert
    vmin = values.min()
    if vmin < 0.0:
        floor = -1e-10 * values.max()
        if vmin < floor and not truncate:
            raise PositivityError(
                "perturbed initial condition is negative (min "
                f"{vmin:.3e}); the profile decays faster than the "
                "perturbation envelope, so rerun with truncate=True")
        values = np.maximum(values, 0.0)

    out = DistributionField(grid=grid, values=values, time=0.0)
    out.meta.update(delta=float(delta), truncated=bool(truncate),
                    truncation_l1=drop_l1)
    return out


@dataclass(frozen=True)
class ScalingReport:
    """Bookkeeping between the rescaled long-torus run and the original
    eps-scaled variables (periodic gluing of k copies)."""

    eps: float
    M: float
    copies: int                # eps = 1 / (copies * M)

    def l1_factor(self) -> float:
        return 1.0 / self.M

    def ws1_factor(self, s: float) -> float:
        return self.eps ** (-s) / self.M

    def original_norm(self, value: float, s: float = 0.0) -> float:
        return value * self.ws1_factor(s)

    def original_time(self, t: float) -> float:
        return self.eps * t


def rescaling_maps(eps: float, M: float) -> ScalingReport:
    """Validate eps = 1/(k M) and return the norm/time scaling maps."""
    if not (eps > 0 and M > 0):
        raise ParameterError("eps and M must be positive")
    k = 1.0 / (eps * M)
    k_round = round(k)
    if k_round < 1 or abs(k - k_round) > 1e-9 * max(1.0, k):
        raise ParameterError(
            f"eps={eps} is not of the admissible form 1/(k*M) for integer k "
            f"(got k={k:.6g})")
    return ScalingReport(eps=float(eps), M=float(M), copies=int(k_round))


def write_snapshot(path, f: DistributionField) -> None:
    """Dump one phase-space snapshot as flat little-endian binary.

    Layout: five float64 header words (Nx, Nv, Lx, vmax, t) followed by
    the Nx*Nv values in row-major order.  A text sidecar ``<path>.meta``
    repeats the header fields for humans and tooling.
    """
    grid = f.grid
    header = np.array([grid.Nx, grid.Nv, grid.Lx, grid.vmax, f.time],
                      dtype="<f8")
    body = np.ascontiguousarray(f.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(body.tobytes())
    with open(f"{path}.meta", "w") as fh:
        fh.write(f"Nx = {grid.Nx}\nNv = {grid.Nv}\n"
                 f"Lx = {grid.Lx:.17g}\nvmax = {grid.vmax:.17g}\n"
                 f"t = {f.time:.17g}\n"
                 f"layout = header(5 float64 LE) + values(Nx*Nv float64 LE, "
                 f"row-major)\n")


def read_snapshot(path) -> DistributionField:
    """Rebuild a :class:`DistributionField` from :func:`write_snapshot` output."""
    raw = np.fromfile(path, dtype="<f8")
    if raw.size < 5:
        raise ParameterError(f"{path}: truncated snapshot header")
    nx, nv = int(raw[0]), int(raw[1])
    if nx != raw[0] or nv != raw[1] or nx <= 0 or nv <= 0:
        raise ParameterError(f"{path}: invalid snapshot dimensions")
    if raw.size != 5 + nx * nv:
        raise ParameterError(
            f"{path}: snapshot holds {raw.size - 5} values, header promises "
            f"{nx * nv}")
    grid = PhaseGrid(Lx=float(raw[2]), Nx=nx, vmax=float(raw[3]), Nv=nv)
    values = raw[5:].reshape(nx, nv).copy()
    return DistributionField(grid=grid, values=values, time=float(raw[4]))
