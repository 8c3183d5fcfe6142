"""Stationary BGK waves of the quasineutral Vlasov equation on [0, 1].

Given nonnegative incoming boundary data f0+ (entering at x = 0 with
v >= 0) and f0- (entering at x = 1 with v <= 0) of unit combined mass,
and a continuous potential well V <= 0 with V(0) = V(1) = 0, the
stationary distribution is a function of the particle energy
v^2/2 + V(x) alone: free particles (v^2 + 2V >= 0) carry the boundary
data along the characteristics, and the trapped region
|v| < sqrt(-2V(x)) is filled with a density f_T of the trapped speed
u = sqrt(-v^2 - 2V) chosen so that the charge density comes out exactly
neutral, rho(x) = 1 (quasineutral model) or rho(x) = 1 + alpha*V(x)
(screened ion model with alpha > 0).

Writing F = f0+ + f0-(-.) for the combined incoming datum and
r = sqrt(-2V), neutrality is the Abel-type constraint

    2 int_0^r f_T(u) u / sqrt(r^2 - u^2) du = g(r),
    g(r) = 1 - int_0^oo F(v) v / sqrt(r^2 + v^2) dv,

whose unique solution is the inversion
f_T(u) = (1/pi) int_0^u g'(s) / sqrt(u^2 - s^2) ds.  The inversion
evaluates in closed form to the Poisson-kernel average

    f_T(u) = (1/pi) int_0^oo F(v) u / (u^2 + v^2) dv,

with one-sided limit f_T(0+) = F(0)/2.  The screened model subtracts
alpha*u/pi (the inversion of the extra alpha*r^2/2 in g), so its
trapped density crosses zero at a finite speed ubar <= sqrt(1/alpha)
and only wells with -2 min V < ubar^2 admit a wave.  In either model
f_T depends only on the boundary data, never on the well.

Every inverse-square-root endpoint is removed by a trigonometric
substitution before quadrature (u = r sin(theta) for the Abel-type
kernels, v = u tan(theta) for the Poisson kernel); the pi/2 identity in
``quad_identity_selftest`` exercises that machinery against an exact
value and gates the rest of the module's checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from qnk.errors import (
    AdmissibilityError,
    ExtrapolationError,
    ParameterError,
    TableRangeError,
)

__all__ = [
    "BoundaryData",
    "PotentialWell",
    "BGKWave",
    "trapped_density",
    "trapped_density_ion",
    "ubar",
    "assemble_wave",
    "verify_neutrality",
    "g_function",
    "abel_invert_oracle",
    "quad_identity_selftest",
]

_SQ2PI = math.sqrt(2.0 * math.pi)

# Adaptive-quadrature defaults shared by every kernel integral below.
QUAD_OPTS = {"epsabs": 1e-13, "epsrel": 1e-12, "limit": 200}

# Trapped-density table: log-spaced nodes over four decades up to u_ref,
# interpolated monotone-cubically with an exact anchor value at u = 0.
TABLE_POINTS = 512
TABLE_SPAN = 1e-4

_GL8_NODES, _GL8_WEIGHTS = leggauss(8)


class _Side:
    """One-sided boundary datum stored as a function of the speed s >= 0.

    The minus side of a :class:`BoundaryData` is represented through its
    mirror s -> f0-(-s), so both sides share this evaluator.
    """

    def __init__(self, kind: str, params: Mapping[str, object]):
        self.kind = str(kind)
        p = dict(params)
        if kind == "vacuum":
            self.mass, self.value0, self.support = 0.0, 0.0, 0.0
        elif kind == "half_maxwellian":
            T = float(p.get("T", 1.0))
            w = float(p.get("weight", 1.0))
            c = float(p.get("center", 0.0))
            if T <= 0 or w <= 0 or c < 0:
                raise ParameterError(
                    "half_maxwellian requires T > 0, weight > 0, center >= 0")
            self.mass = w * 0.5 * (1.0 + math.erf(c / math.sqrt(2.0 * T)))
            self.value0 = w * math.exp(-c * c / (2.0 * T)) / math.sqrt(2.0 * math.pi * T)
            self.support = c + 10.0 * math.sqrt(T)
            p.update(T=T, weight=w, center=c)
        elif kind == "poly_maxwellian":
            T = float(p.get("T", 1.0))
            w = float(p.get("weight", 1.0))
            coeffs = tuple(float(a) for a in p.get("coeffs", (1.0,)))
            if T <= 0 or w <= 0 or not coeffs:
                raise ParameterError("poly_maxwellian requires T > 0, weight > 0, coeffs")
            if any(a < 0 for a in coeffs) or not any(a > 0 for a in coeffs):
                raise ParameterError("poly_maxwellian coeffs must be >= 0, not all zero")
            # Half-line Gaussian moments M_k = int_0^oo s^k e^{-s^2/2T}/sqrt(2 pi T) ds:
            # M_0 = 1/2, M_1 = sqrt(T/(2 pi)), M_k = (k-1) T M_{k-2}.
            M = [0.5, math.sqrt(T / (2.0 * math.pi))]
            for k in range(2, len(coeffs)):
                M.append((k - 1) * T * M[k - 2])
            self.mass = w * sum(a * m for a, m in zip(coeffs, M))
            self.value0 = w * coeffs[0] / math.sqrt(2.0 * math.pi * T)
            self.support = (10.0 + 2.0 * len(coeffs)) * math.sqrt(T)
            p.update(T=T, weight=w, coeffs=coeffs)
        elif kind == "power_law":
            expo = float(p.get("expo", 2.0))
            s0 = float(p.get("scale", 1.0))
            cut = float(p.get("cut", 12.0 * float(p.get("scale", 1.0))))
            w = float(p.get("weight", 1.0))
            if expo <= 1 or s0 <= 0 or cut <= 0 or w <= 0:
                raise ParameterError(
                    "power_law requires expo > 1, scale > 0, cut > 0, weight > 0")
            self.mass = w * s0 / (expo - 1.0) * (1.0 - (1.0 + cut / s0) ** (1.0 - expo))
            self.value0 = w
            self.support = cut
            p.update(expo=expo, scale=s0, cut=cut, weight=w)
        elif kind == "tabulated":
            s = np.asarray(p.get("s"), dtype=float)
            f = np.asarray(p.get("f"), dtype=float)
            if s.ndim != 1 or s.shape != f.shape or len(s) < 4:
                raise ParameterError("tabulated side needs matching 1-D s, f with >= 4 points")
            if s[0] < 0 or np.any(np.diff(s) <= 0):
                raise ParameterError("tabulated s must be increasing and start at s >= 0")
            if np.any(f < 0):
                raise ParameterError("tabulated side values must be nonnegative")
            self._interp = PchipInterpolator(s, f)
            self._s0, self._s1 = float(s[0]), float(s[-1])
            self.mass = float(self._interp.integrate(self._s0, self._s1))
            self.value0 = float(f[0]) if s[0] == 0.0 else 0.0
            self.support = self._s1
            p.update(s=s, f=f)
        else:
            raise ParameterError(f"unknown boundary-data kind {kind!r}")
        self.params = p

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        p = self.params
        if self.kind == "vacuum":
            return np.zeros_like(s)
        if self.kind == "half_maxwellian":
            T, w, c = p["T"], p["weight"], p["center"]
            return w * np.exp(-((s - c) ** 2) / (2.0 * T)) / math.sqrt(2.0 * math.pi * T)
        if self.kind == "poly_maxwellian":
            T, w = p["T"], p["weight"]
            poly = np.polynomial.polynomial.polyval(s, p["coeffs"])
            return w * poly * np.exp(-(s * s) / (2.0 * T)) / math.sqrt(2.0 * math.pi * T)
        if self.kind == "power_law":
            val = p["weight"] * (1.0 + s / p["scale"]) ** (-p["expo"])
            return np.where(s <= p["cut"], val, 0.0)
        # tabulated
        out = np.zeros_like(s)
        inside = (s >= self._s0) & (s <= self._s1)
        if inside.any():
            out[inside] = np.maximum(self._interp(s[inside]), 0.0)
        return out

    def rescaled(self, factor: float) -> "_Side":
        if self.kind == "vacuum":
            return self
        p = dict(self.params)
        if self.kind == "tabulated":
            p["f"] = np.asarray(p["f"]) * factor
        else:
            p["weight"] = p["weight"] * factor
        return _Side(self.kind, p)


def _make_side(spec) -> _Side:
    if spec is None:
        return _Side("vacuum", {})
    if isinstance(spec, _Side):
        return spec
    if isinstance(spec, Mapping):
        d = dict(spec)
        kind = d.pop("kind", None)
        if kind is None:
            raise ParameterError("boundary side spec needs a 'kind' entry")
        return _Side(str(kind), d)
    raise ParameterError("boundary side spec must be None or a mapping with a 'kind'")


class BoundaryData:
    """Incoming data: f0+ on v >= 0 (left edge) and f0- on v <= 0 (right edge).

    Each side is None (vacuum) or a mapping ``{"kind": ..., **params}``;
    the minus side is given through its mirror s -> f0-(-s) on s >= 0.
    Kinds: ``half_maxwellian`` (T, weight, center), ``poly_maxwellian``
    (T, weight, coeffs with all coefficients >= 0), ``power_law`` (expo,
    scale, cut, weight), ``tabulated`` (s, f).

    The combined datum F = f0+ + f0-(-.) must carry unit incoming mass,
    ``int_0^oo F = 1`` within 1e-10; pass ``normalize=True`` to rescale
    both sides by the common factor that enforces it.
    """

    def __init__(self, plus=None, minus=None, *, normalize: bool = False):
        self.plus = _make_side(plus)
        self.minus = _make_side(minus)
        total = self.plus.mass + self.minus.mass
        if total <= 0.0:
            raise AdmissibilityError("boundary data must carry positive incoming mass")
        if normalize and total != 1.0:
            self.plus = self.plus.rescaled(1.0 / total)
            self.minus = self.minus.rescaled(1.0 / total)
            total = self.plus.mass + self.minus.mass
        if abs(total - 1.0) > 1e-10:
            raise AdmissibilityError(
                f"combined incoming mass must be 1 within 1e-10, got {total:.12g}")
        self.mass = total

    def F(self, s):
        """Combined incoming datum F(s) = f0+(s) + f0-(-s) for s >= 0."""
        return self.plus(s) + self.minus(s)

    def f_plus(self, v):
        v = np.asarray(v, dtype=float)
        if np.any(v < -1e-12):
            raise ParameterError("f0+ is defined on v >= 0")
        return self.plus(np.maximum(v, 0.0))

    def f_minus(self, v):
        v = np.asarray(v, dtype=float)
        if np.any(v > 1e-12):
            raise ParameterError("f0- is defined on v <= 0")
        return self.minus(np.maximum(-v, 0.0))

    @property
    def F0(self) -> float:
        """One-sided limit F(0+) = f0+(0) + f0-(0)."""
        return self.plus.value0 + self.minus.value0

    @property
    def support(self) -> float:
        """Speed beyond which F is zero or negligible (< 1e-20 relative)."""
        return max(self.plus.support, self.minus.support)

    def inverse_square_moment(self) -> float:
        """int_0^oo F(v)/v^2 dv; +inf whenever F(0) > 0."""
        if self.F0 > 0.0:
            return math.inf
        val, _ = integrate.quad(lambda v: float(self.F(v)) / (v * v),
                                0.0, self.support, **QUAD_OPTS)
        return val


class PotentialWell:
    """Continuous potential well on [0, 1]: V <= 0 with V(0) = V(1) = 0.

    Stores dense samples plus a monotone-cubic interpolant (which cannot
    overshoot the sampled values, so the sign constraint survives
    interpolation).  ``derivative`` exposes dV/dx for frozen-field runs.
    """

    def __init__(self, x, V):
        x = np.asarray(x, dtype=float)
        V = np.array(V, dtype=float)
        if x.ndim != 1 or x.shape != V.shape or len(x) < 8:
            raise ParameterError("well needs matching 1-D x, V with >= 8 samples")
        if abs(x[0]) > 1e-12 or abs(x[-1] - 1.0) > 1e-12 or np.any(np.diff(x) <= 0):
            raise ParameterError("well samples must increase from x = 0 to x = 1")
        if abs(V[0]) > 1e-12 or abs(V[-1]) > 1e-12:
            raise AdmissibilityError("well must satisfy V(0) = V(1) = 0")
        if np.any(V > 1e-12):
            raise AdmissibilityError("well must satisfy V <= 0 on [0, 1]")
        x[0], x[-1] = 0.0, 1.0
        V[0] = V[-1] = 0.0
        np.minimum(V, 0.0, out=V)
        self.x, self.V = x, V
        self._interp = PchipInterpolator(x, V)
        self._deriv = self._interp.derivative()

    @classmethod
    def from_function(cls, fn, n: int = 4097) -> "PotentialWell":
        x = np.linspace(0.0, 1.0, n)
        return cls(x, fn(x))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-12) or np.any(x > 1.0 + 1e-12):
            raise ExtrapolationError("well is defined on [0, 1] only")
        return np.minimum(self._interp(np.clip(x, 0.0, 1.0)), 0.0)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-12) or np.any(x > 1.0 + 1e-12):
            raise ExtrapolationError("well is defined on [0, 1] only")
        return self._deriv(np.clip(x, 0.0, 1.0))

    @property
    def vmin(self) -> float:
        return float(self.V.min())

    @property
    def depth(self) -> float:
        return -self.vmin


def _kernel_breakpoints(scale: float, upper: float) -> list | None:
    """Geometric ladder of quadrature break points from ``scale`` to ``upper``.

    When the kernel scale is many decades below the support of the data,
    a single break point leaves subintervals too wide for the adaptive
    rule to notice the kernel's tail; decade spacing keeps every
    subinterval within reach of the local Gauss-Kronrod panel.
    """
    if scale >= upper:
        return None
    pts = []
    b = scale
    while b < upper:
        pts.append(b)
        b *= 10.0
    return pts


def trapped_density(bd: BoundaryData, u: float) -> float:
    """Trapped density f_T(u) = (1/pi) int_0^oo F(v) u/(u^2+v^2) dv, u > 0.

    Adaptive quadrature of the Poisson-kernel average, with a decade
    ladder of break points from the kernel's own scale v = u up to the
    support so the rule stays sharp whether the data's mass sits below u
    or far above it.  (Substituting v = u tan(theta) collapses the kernel
    and shows the one-sided limit at u = 0+ is F(0)/2.)
    """
    u = float(u)
    if u <= 0.0:
        raise ParameterError("trapped_density requires a speed u > 0")
    S = bd.support

    def integrand(v: float) -> float:
        return float(bd.F(v)) * u / (u * u + v * v)

    val, _ = integrate.quad(integrand, 0.0, S,
                            points=_kernel_breakpoints(u, S), **QUAD_OPTS)
    return val / math.pi


def trapped_density_ion(bd: BoundaryData, alpha: float, u: float) -> float:
    """Screened-model trapped density f_T(u) - alpha*u/pi (alpha > 0)."""
    if alpha <= 0.0:
        raise ParameterError("the screened model requires alpha > 0")
    return trapped_density(bd, u) - alpha * float(u) / math.pi


def ubar(bd: BoundaryData, alpha: float) -> float:
    """First speed where the screened trapped density turns negative.

    f_T^ion(u) = (u/pi) (int F(v)/(u^2+v^2) dv - alpha) and the bracket is
    strictly decreasing in u, so there is exactly one sign change; it is
    located by bracketed bisection.  Since int F = 1, the bracket is
    already negative at u = sqrt(1/alpha), whence ubar <= sqrt(1/alpha)
    <= sqrt(2/alpha).  When the bracket is negative for all tested u near
    0 (int F/v^2 <= alpha), the degenerate ubar = 0 is returned and only
    the trivial well V = 0 is admissible.
    """
    if alpha <= 0.0:
        raise ParameterError("the screened model requires alpha > 0")

    def bracket(u: float) -> float:
        return math.pi * trapped_density(bd, u) / u - alpha

    hi = math.sqrt(1.0 / alpha)
    lo = 1e-8 * hi
    if bracket(lo) <= 0.0:
        return 0.0
    ub = float(brentq(bracket, lo, hi, xtol=1e-15, rtol=1e-14, maxiter=200))
    assert ub <= math.sqrt(2.0 / alpha) * (1.0 + 1e-12)
    return ub


def g_function(bd: BoundaryData, r: float) -> float:
    """g(r) = 1 - int_0^oo F(v) v / sqrt(r^2 + v^2) dv; g(0) = 0."""
    r = float(r)
    if r < 0.0:
        raise ParameterError("g_function requires r >= 0")

    def integrand(v: float) -> float:
        den = math.hypot(r, v)
        return 0.0 if den == 0.0 else float(bd.F(v)) * v / den

    val, _ = integrate.quad(integrand, 0.0, bd.support,
                            points=_kernel_breakpoints(r, bd.support) if r > 0.0
                            else None, **QUAD_OPTS)
    return 1.0 - val


def _g_prime(bd: BoundaryData, s: float) -> float:
    """g'(s) = int_0^oo F(v) v s/(s^2+v^2)^{3/2} dv, with g'(0+) = F(0).

    Same break-point treatment as :func:`trapped_density`; the s = 0
    limit is exact (substituting v = s tan(psi) turns the integral into
    int_0^{pi/2} F(s tan psi) sin psi d psi -> F(0)).
    """
    s = float(s)
    if s == 0.0:
        return bd.F0
    S = bd.support

    def integrand(v: float) -> float:
        return float(bd.F(v)) * v * s / (s * s + v * v) ** 1.5

    val, _ = integrate.quad(integrand, 0.0, S,
                            points=_kernel_breakpoints(s, S), **QUAD_OPTS)
    return val


def abel_invert_oracle(bd: BoundaryData, u_grid, *, n_s: int = 1025,
                       n_theta: int = 256) -> np.ndarray:
    """Trapped density recovered by discretized Abel inversion of g.

    Independent of :func:`trapped_density`: it tabulates g'(s) on a dense
    uniform grid (its own quadrature), interpolates monotone-cubically,
    and evaluates f_T(u) = (1/pi) int_0^{pi/2} g'(u sin theta) d theta by
    fixed-order Gauss-Legendre.  Agreement with the closed form certifies
    that the closed form solves the neutrality constraint (whose solution
    is unique).
    """
    u = np.asarray(u_grid, dtype=float)
    if u.ndim != 1 or len(u) == 0 or np.any(u <= 0):
        raise ParameterError("abel_invert_oracle needs a 1-D grid of speeds u > 0")
    s_nodes = np.linspace(0.0, float(u.max()), int(n_s))
    gp = np.array([_g_prime(bd, s) for s in s_nodes])
    gp_interp = PchipInterpolator(s_nodes, gp)
    nodes, weights = leggauss(int(n_theta))
    theta = 0.25 * math.pi * (nodes + 1.0)
    w = 0.25 * math.pi * weights
    return gp_interp(np.outer(u, np.sin(theta))) @ w / math.pi


def quad_identity_selftest(pairs: Sequence = ((1.0, 2.0), (0.5, 3.0), (0.1, 10.0)),
                           tol: float = 1e-8) -> bool:
    """Check int_a^b u du / sqrt((b^2-u^2)(u^2-a^2)) = pi/2 for 0 < a < b.

    Evaluated exactly like the trapped-branch integrals: u = b sin(theta)
    removes the upper endpoint singularity and the remaining interior
    1/sqrt(u^2-a^2) point is declared to the adaptive rule.  Failure means
    the singular quadrature underlying this module is broken.
    """
    for a, b in pairs:
        a, b = float(a), float(b)
        if not 0.0 < a < b:
            raise ParameterError("the identity requires 0 < a < b")
        theta_a = math.asin(a / b)

        def integrand(th: float) -> float:
            u = b * math.sin(th)
            d = u * u - a * a
            return 0.0 if d <= 0.0 else u / math.sqrt(d)

        val, _ = integrate.quad(integrand, 0.0, 0.5 * math.pi, points=[theta_a],
                                limit=400, epsabs=1e-12, epsrel=1e-12)
        if abs(val - 0.5 * math.pi) > tol:
            return False
    return True


@dataclass(frozen=True)
class BGKWave:
    """An assembled stationary wave.

    ``fT_u``/``fT_values`` hold the trapped-density table (screened
    values already include the -alpha*u/pi term); ``f`` holds the
    three-branch samples on the phase-space grid; ``V_x`` the well on the
    spatial grid.  ``ubar`` is None for the quasineutral model.  The
    defining neutrality property is checked by :func:`verify_neutrality`.
    """

    bd: BoundaryData
    well: PotentialWell
    grid: object
    model: str
    alpha: float
    ubar: Optional[float]
    fT_u: np.ndarray
    fT_values: np.ndarray
    f: np.ndarray
    V_x: np.ndarray

    def __post_init__(self):
        if len(self.fT_u):
            anchor_u = np.concatenate([[0.0], self.fT_u])
            anchor_f = np.concatenate([[self.bd.F0 / 2.0], self.fT_values])
            interp = PchipInterpolator(anchor_u, anchor_f)
        else:
            interp = None
        object.__setattr__(self, "_fT_interp", interp)

    def fT(self, u):
        """Evaluate the tabulated trapped density on [0, u_ref]."""
        u = np.asarray(u, dtype=float)
        if self._fT_interp is None:
            if np.any(u != 0.0):
                raise TableRangeError("this wave has no trapped region (V = 0)")
            return np.full_like(u, self.bd.F0 / 2.0)
        u_ref = self.fT_u[-1]
        if np.any(u < 0.0) or np.any(u > u_ref * (1.0 + 1e-9)):
            raise TableRangeError(f"trapped table covers [0, {u_ref:.6g}] only")
        return self._fT_interp(np.clip(u, 0.0, u_ref))


def assemble_wave(bd: BoundaryData, well: PotentialWell, grid,
                  model: str = "quasineutral", alpha: float = 0.0) -> BGKWave:
    """Build the three-branch stationary wave on a phase-space grid.

    The trapped-density table (TABLE_POINTS log-spaced speeds up to
    u_ref = sqrt(-2 min V), or up to ubar for the screened model) is
    computed once from the boundary data alone, so equally deep wells
    share it bit for bit.  Branches: f0+(sqrt(v^2+2V)) for
    v >= sqrt(-2V), f0-(-sqrt(v^2+2V)) for v <= -sqrt(-2V), and
    f_T(sqrt(-v^2-2V)) in between.
    """
    if model not in ("quasineutral", "ion"):
        raise ParameterError("model must be 'quasineutral' or 'ion'")
    if abs(getattr(grid, "Lx", 1.0) - 1.0) > 1e-12:
        raise ParameterError("BGK waves live on the unit interval; grid.Lx must be 1")

    ub: Optional[float] = None
    if model == "ion":
        ub = ubar(bd, alpha)
        if 2.0 * well.depth > ub * ub - 1e-12:
            raise AdmissibilityError(
                f"well too deep for the screened model: -2 min V = {2.0 * well.depth:.6g} "
                f"must stay strictly below ubar^2 = {ub * ub:.6g}")
        u_ref = ub
    else:
        if alpha != 0.0:
            raise ParameterError("alpha is only meaningful for the ion model")
        u_ref = math.sqrt(2.0 * well.depth)

    if u_ref > 0.0:
        fT_u = np.geomspace(TABLE_SPAN * u_ref, u_ref, TABLE_POINTS)
        fT_values = np.array([trapped_density(bd, float(u)) for u in fT_u])
        if model == "ion":
            fT_values = np.maximum(fT_values - alpha * fT_u / math.pi, 0.0)
    else:
        fT_u = np.empty(0)
        fT_values = np.empty(0)

    wave = BGKWave(bd=bd, well=well, grid=grid, model=model, alpha=alpha,
                   ubar=ub, fT_u=fT_u, fT_values=fT_values,
                   f=np.empty((grid.Nx, grid.Nv)), V_x=np.asarray(well(grid.x)))

    v = grid.v
    f = wave.f
    for i, Vi in enumerate(wave.V_x):
        rsq = max(-2.0 * float(Vi), 0.0)
        r = math.sqrt(rsq)
        free_p = v >= r
        free_m = v <= -r
        trapped = ~(free_p | free_m)
        f[i, free_p] = bd.plus(np.sqrt(np.maximum(v[free_p] ** 2 - rsq, 0.0)))
        f[i, free_m] = bd.minus(np.sqrt(np.maximum(v[free_m] ** 2 - rsq, 0.0)))
        if trapped.any():
            f[i, trapped] = wave.fT(np.sqrt(np.maximum(rsq - v[trapped] ** 2, 0.0)))
    return wave


def _trapped_branch_integral(wave: BGKWave, r: float) -> float:
    """2 int_0^r f_T(u) u / sqrt(r^2-u^2) du via u = r sin(theta).

    Composite 8-point Gauss between the table knots (where the
    interpolant changes cubic), so the quadrature is exact to roundoff
    and the only error left is the table's own interpolation error.
    """
    if r <= 0.0 or wave._fT_interp is None:
        return 0.0
    inside = wave.fT_u[wave.fT_u < r]
    theta = np.concatenate([[0.0], np.arcsin(np.minimum(inside / r, 1.0)),
                            [0.5 * math.pi]])
    a, b = theta[:-1, None], theta[1:, None]
    tt = 0.5 * (a + b) + 0.5 * (b - a) * _GL8_NODES[None, :]
    ww = 0.5 * (b - a) * _GL8_WEIGHTS[None, :]
    st = np.sin(tt)
    vals = wave._fT_interp(np.minimum(r * st, wave.fT_u[-1]))
    return 2.0 * r * float(np.sum(ww * vals * st))


def verify_neutrality(wave: BGKWave, *, profile: bool = False):
    """Quadrature check of the defining density constraint, per grid x.

    Evaluates rho(x) as free-branch integrals int_0^oo F(w) w /
    sqrt(w^2 - 2V) dw plus the trapped-branch integral over the wave's
    own trapped table, and returns max_x |rho - target| with target 1
    (quasineutral) or 1 + alpha V (screened).  With ``profile=True``
    also returns the per-x deviation array.
    """
    bd = wave.bd
    S = bd.support
    dev = np.empty(len(wave.V_x))
    for i, Vi in enumerate(wave.V_x):
        r = math.sqrt(max(-2.0 * float(Vi), 0.0))

        def integrand(w: float) -> float:
            den = math.hypot(r, w)
            return 0.0 if den == 0.0 else float(bd.F(w)) * w / den

        free, _ = integrate.quad(integrand, 0.0, S, **QUAD_OPTS)
        rho = free + _trapped_branch_integral(wave, r)
        target = 1.0 + (wave.alpha * float(Vi) if wave.model == "ion" else 0.0)
        dev[i] = rho - target
    maxdev = float(np.abs(dev).max())
    return (maxdev, dev) if profile else maxdev
