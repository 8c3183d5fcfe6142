"""Linearized dispersion relation, unstable roots, and eigenmode sampling.

Around a homogeneous profile mu on the torus of length M, a perturbation
proportional to e^{lambda t + i 2 pi n x / M} solves the linearized system
iff D(n, lambda) = 1 - (M/(2 pi n))^2 G(zeta) = 0, where
zeta = i M lambda / (2 pi n) and G(zeta) = int mu'(v)/(v - zeta) dv.

G is evaluated by adaptive quadrature off the real axis and by a
principal-value rule with an explicit jump term on it; roots are located
per mode by a coarse rectangle scan of log|D| (vectorized fixed-panel
quadrature) refined with a Newton iteration on the adaptive evaluation.
An argument-principle winding count over the same rectangle serves as an
independent check on the number of roots.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from qnk.errors import ParameterError, ResolutionError
from qnk.profiles import ProfileSpec
from qnk.quadrature import gauss_panel_nodes

__all__ = [
    "PLEMELJ_C",
    "DispersionRoot",
    "Eigenmode",
    "eval_G",
    "eval_G_real",
    "eval_dispersion",
    "find_unstable_roots",
    "count_roots_winding",
    "build_eigenmode",
    "h2_xaverage_coefficient",
]

# Constant multiplying the jump term i * mu'(xi) in the boundary values of G.
# The classical Plemelj jump for this orientation is pi; statements that
# depend on the boundary extension are validated in constant-invariant form
# (sign of Im G, crossing locations), so the constant is exposed rather than
# hard-wired into any conclusion.
PLEMELJ_C = math.pi


@dataclass(frozen=True)
class DispersionRoot:
    n: int
    lam: complex
    zeta: complex
    residual: float
    M: float
    dominant: bool = False   # root with maximal Re(lam) among those returned

    @property
    def xi(self) -> complex:
        """xi with h1 written against 1/(v + xi); xi = -zeta."""
        return -self.zeta


@dataclass(frozen=True)
class Eigenmode:
    root: DispersionRoot
    x: np.ndarray
    v: np.ndarray
    h1: np.ndarray        # (Nx, Nv) complex samples, L1-normalized on the grid
    rho1: np.ndarray      # (Nx,) complex density samples
    ell: np.ndarray       # (Nv,) real samples
    kappa: float          # positive real density amplitude
    scale: float          # L1 normalization factor applied to mu'/(v - zeta)


def _window(p: ProfileSpec, tol=1e-14):
    lo, hi = p.support_window(tol)
    return lo, hi


def _quad(f, a, b, **kw):
    # quad's convergence heuristics misfire on near-pole integrands even when
    # the returned value is accurate (validated against closed forms); keep
    # the noise out of callers
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(f, a, b, **kw)
    return val


def _tabulated_G_exact(p: ProfileSpec, zetas) -> np.ndarray:
    """G for tabulated profiles by exact segment integrals of the cubic
    interpolant of mu' against the pole kernel.

    On each segment, with s = v - a and w = zeta - a,
    int P(s)/(s - w) ds = int Q(s) ds + P(w) log((h - w)/(-w)) where
    P = (s - w) Q + P(w); the principal log is safe off the real axis.
    Adaptive quadrature cannot do better than ~1e-8 here because the
    interpolant has curvature kinks at every table node.
    """
    pp = p._tab_dinterp
    x = pp.x
    c0, c1, c2, c3 = (np.asarray(ck) for ck in pp.c)
    a = x[:-1]
    h = np.diff(x)
    z = np.atleast_1d(np.asarray(zetas, dtype=complex))
    out = np.empty(z.shape, dtype=complex)
    block = max(1, int(4e6 // max(len(a), 1)))
    for i0 in range(0, len(z), block):
        w = z[i0:i0 + block, None] - a[None, :]
        Pw = ((c0 * w + c1) * w + c2) * w + c3
        intQ = (c0 * h ** 3 / 3.0 + (c1 + c0 * w) * h ** 2 / 2.0
                + (c2 + (c1 + c0 * w) * w) * h)
        out[i0:i0 + block] = (intQ + Pw * np.log((h - w) / (-w))).sum(axis=1)
    return out


def _tabulated_G_point(p: ProfileSpec, zeta: complex) -> complex:
    """Cancellation-free single-point variant of the exact tabulated G.

    The closed form extrapolates the segment cubic to the pole location,
    which for distant segments produces huge nearly-cancelling terms and a
    relative noise floor around nseg * eps.  Distant segments are summed
    instead through the Laurent expansion about the segment midpoint,
    -sum_k M_k / y^{k+1} with polynomial moments M_k, which only involves
    terms of the size of the true contribution.
    """
    cache = getattr(p, "_tab_G_moments", None)
    pp = p._tab_dinterp
    if cache is None:
        x = pp.x
        c0, c1, c2, c3 = (np.asarray(ck) for ck in pp.c)
        a = x[:-1]
        h = np.diff(x)
        s0 = 0.5 * h
        b = [c0,
             3 * c0 * s0 + c1,
             (3 * c0 * s0 + 2 * c1) * s0 + c2,
             ((c0 * s0 + c1) * s0 + c2) * s0 + c3]  # t^3, t^2, t^1, t^0
        K = 17
        M = np.zeros((K, len(a)))
        for k in range(K):
            for j, bj in enumerate((b[3], b[2], b[1], b[0])):  # power j in t
                m = k + j
                if m % 2 == 0:
                    M[k] += bj * 2.0 * s0 ** (m + 1) / (m + 1)
        cache = (a, h, s0, (c0, c1, c2, c3), M)
        p._tab_G_moments = cache
    a, h, s0, (c0, c1, c2, c3), M = cache

    w = complex(zeta) - a
    y = w - s0
    far = np.abs(y) > 4.0 * h
    total = 0.0 + 0.0j
    if np.any(~far):
        near = ~far
        wN, hN = w[near], h[near]
        Pw = ((c0[near] * wN + c1[near]) * wN + c2[near]) * wN + c3[near]
        intQ = (c0[near] * hN ** 3 / 3.0 + (c1[near] + c0[near] * wN) * hN ** 2 / 2.0
                + (c2[near] + (c1[near] + c0[near] * wN) * wN) * hN)
        total += complex((intQ + Pw * np.log((hN - wN) / (-wN))).sum())
    if np.any(far):
        yF = y[far]
        inv = 1.0 / yF
        acc = np.zeros(yF.shape, dtype=complex)
        for k in range(M.shape[0] - 1, -1, -1):
            acc = (acc + M[k][far]) * inv
        total += complex(-acc.sum())
    return total


def eval_G(p: ProfileSpec, zeta: complex, *, epsabs=1e-13, epsrel=1e-12) -> complex:
    """G(zeta) = int mu'(v) / (v - zeta) dv for Im(zeta) > 0."""
    zeta = complex(zeta)
    if not zeta.imag > 0.0:
        raise ParameterError("eval_G requires Im(zeta) > 0; "
                             "use eval_G_real on the boundary")
    if p.kind == "tabulated":
        return _tabulated_G_point(p, zeta)
    lo, hi = _window(p)
    x0, y0 = zeta.real, zeta.imag

    def re_part(v):
        return float(p.dmu(v)) * (v - x0) / ((v - x0) ** 2 + y0 ** 2)

    def im_part(v):
        return float(p.dmu(v)) * y0 / ((v - x0) ** 2 + y0 ** 2)

    kw = dict(epsabs=epsabs, epsrel=epsrel, limit=400)
    pts = [x0 - y0, x0, x0 + y0] if lo < x0 < hi else None
    if pts:
        kw["points"] = [t for t in pts if lo < t < hi]
    return complex(_quad(re_part, lo, hi, **kw), _quad(im_part, lo, hi, **kw))


def eval_G_real(p: ProfileSpec, xi: float, *, plemelj_c: float = PLEMELJ_C,
                epsabs=1e-12, epsrel=1e-11) -> complex:
    """Boundary value of G on the real axis.

    Real part: principal value by symmetric-window subtraction, i.e.
    int (mu'(v) - mu'(xi))/(v - xi) dv over a window symmetric about xi
    (the subtracted term integrates to zero there), plus the tail of
    mu'(v)/(v - xi) outside.  Imaginary part: plemelj_c * mu'(xi).
    """
    xi = float(xi)
    lo, hi = _window(p)
    R = max(hi - xi, xi - lo, 1.0)
    dxi = float(p.dmu(xi))
    h = 1e-6 * R
    d2 = (float(p.dmu(xi + h)) - float(p.dmu(xi - h))) / (2 * h)

    def integrand(v):
        w = v - xi
        if abs(w) < 1e-9 * R:
            return d2
        return (float(p.dmu(v)) - dxi) / w

    kw = dict(epsabs=epsabs, epsrel=epsrel, limit=400)
    left = _quad(integrand, xi - R, xi, **kw)
    right = _quad(integrand, xi, xi + R, **kw)
    return complex(left + right, plemelj_c * dxi)


def _zeta_of(n: int, lam: complex, M: float) -> complex:
    return 1j * M * lam / (2.0 * math.pi * n)


def eval_dispersion(p: ProfileSpec, n: int, lam: complex, M: float) -> complex:
    """D(n, lambda) = 1 - (M/(2 pi n))^2 G(i M lambda / (2 pi n))."""
    if n == 0:
        raise ParameterError("mode number n must be nonzero")
    lam = complex(lam)
    zeta = _zeta_of(n, lam, M)
    pref = (M / (2.0 * math.pi * n)) ** 2
    if zeta.imag > 0.0:
        G = eval_G(p, zeta)
    elif zeta.imag < 0.0:
        # reflection: G below the axis is the conjugate of G at the
        # conjugated point (mu' is real)
        G = eval_G(p, zeta.conjugate()).conjugate()
    else:
        G = eval_G_real(p, zeta.real)
    return 1.0 - pref * G


class _PanelG:
    """Vectorized fixed-panel evaluation of G at many zeta (coarse scans).

    Tabulated profiles use the exact segment integrals instead of panels."""

    def __init__(self, p: ProfileSpec, n_panels=96, order=12, tol=1e-13):
        self.p = p
        if p.kind != "tabulated":
            lo, hi = _window(p, tol)
            nodes, weights = gauss_panel_nodes(lo, hi, n_panels, order)
            self.nodes = nodes
            self.wdmu = weights * p.dmu(nodes)

    def __call__(self, zetas):
        z = np.atleast_1d(np.asarray(zetas, dtype=complex))
        if self.p.kind == "tabulated":
            return _tabulated_G_exact(self.p, z)
        out = (self.wdmu[None, :] / (self.nodes[None, :] - z[:, None])).sum(axis=1)
        return out

    def dispersion(self, n, lams, M):
        z = _zeta_of(n, np.asarray(lams, dtype=complex), M)
        pref = (M / (2.0 * math.pi * n)) ** 2
        return 1.0 - pref * self(z)


def _norm_dmu_l1(p: ProfileSpec) -> float:
    lo, hi = _window(p)
    return _quad(lambda v: abs(float(p.dmu(v))), lo, hi,
                 epsabs=1e-11, epsrel=1e-10, limit=400)


def _panel_newton(panel, n, lam0, M, tol=1e-5, maxit=50):
    """Cheap Newton on the fixed-panel D; screens seeds before the accurate
    polish so ghost minima of the scan cost almost nothing."""
    lam = complex(lam0)
    for _ in range(maxit):
        D = complex(panel.dispersion(n, lam, M)[0])
        if abs(D) < tol:
            return lam, True
        h = 1e-6 * (1.0 + abs(lam))
        vals = panel.dispersion(n, np.array([lam + h, lam - h,
                                             lam + 1j * h, lam - 1j * h]), M)
        deriv = 0.5 * ((vals[0] - vals[1]) / (2 * h)
                       + (vals[2] - vals[3]) / (2j * h))
        if deriv == 0 or not cmath.isfinite(deriv):
            return lam, False
        step = D / deriv
        if abs(step) > 0.5 * (1.0 + abs(lam)):
            step *= 0.5 * (1.0 + abs(lam)) / abs(step)
        lam = lam - step
        if lam.real <= 0:
            lam = complex(1e-14, lam.imag)
    return lam, abs(complex(panel.dispersion(n, lam, M)[0])) < tol


def _newton_polish(p, n, lam0, M, tol=1e-12, maxit=60):
    lam = complex(lam0)
    best = (float("inf"), lam)
    for _ in range(maxit):
        D = eval_dispersion(p, n, lam, M)
        if abs(D) < best[0]:
            best = (abs(D), lam)
        if abs(D) < tol:
            return lam, abs(D)
        h = 1e-6 * (1.0 + abs(lam))
        Dp = (eval_dispersion(p, n, lam + h, M)
              - eval_dispersion(p, n, lam - h, M)) / (2 * h)
        Dq = (eval_dispersion(p, n, lam + 1j * h, M)
              - eval_dispersion(p, n, lam - 1j * h, M)) / (2j * h)
        # D is holomorphic; average the two difference directions
        deriv = 0.5 * (Dp + Dq)
        if deriv == 0:
            break
        step = D / deriv
        if not (cmath.isfinite(step.real) and cmath.isfinite(step.imag)):
            break
        # dampen huge steps
        if abs(step) > 0.5 * (1.0 + abs(lam)):
            step *= 0.5 * (1.0 + abs(lam)) / abs(step)
        lam = lam - step
        if lam.real <= 0:
            lam = complex(max(lam.real, 1e-14), lam.imag)
    D = eval_dispersion(p, n, lam, M)
    if abs(D) < best[0]:
        best = (abs(D), lam)
    return best[1], best[0]


def find_unstable_roots(p: ProfileSpec, M: float, n_range=None, search_box=None,
                        *, root_tol=1e-10, scan=(64, 64)) -> list:
    """All distinct roots of D(n, .) with Re(lambda) > 0, per mode.

    For each mode a coarse rectangle scan of log|D| seeds a Newton iteration;
    converged, deduplicated roots with adaptive-quadrature residual at or
    below root_tol are returned sorted by (n, -Re lambda), with the root of
    maximal Re(lambda) flagged as dominant.  Growth rates below 1e-8 are
    treated as neutral and dropped: profiles vanishing at infinity always
    admit numerically perfect neutral points with real phase velocity
    outside the bulk, which are not instabilities.
    """
    from qnk.profiles import DEFAULT_QUAD, _critical_minima, _penrose_integral

    if n_range is None:
        cfg = dict(DEFAULT_QUAD)
        minima = _critical_minima(p, cfg)
        vals = []
        for vbar, flat, interval in minima:
            pts = (interval[0], vbar, interval[1]) if flat else (vbar,)
            vals.extend(_penrose_integral(p, t, cfg) for t in pts)
        imax = max(vals, default=0.0)
        if imax <= 0:
            return []
        n_ub = int(math.floor(M * math.sqrt(imax) / (2 * math.pi))) + 1
        n_range = range(1, min(n_ub, 16) + 1)

    panel = _PanelG(p)
    dmu_l1 = _norm_dmu_l1(p)
    lo, hi = _window(p)
    vspan = max(abs(lo), abs(hi)) + 1.0

    found = []
    for n in n_range:
        if n == 0:
            continue
        omega_max = M * dmu_l1 / (2 * math.pi * abs(n))
        eta_max = (2 * math.pi * abs(n) / M) * vspan
        if search_box is not None:
            re_lo, re_hi, im_lo, im_hi = search_box
            res = np.linspace(re_lo, re_hi, scan[0])
        else:
            re_lo, re_hi = 1e-3 * omega_max, 1.05 * omega_max
            im_lo, im_hi = -eta_max, eta_max
            # growth rates of near-marginal modes can be orders of magnitude
            # below the a-priori bound; sample Re(lambda) logarithmically
            res = np.geomspace(re_lo, re_hi, scan[0])
        ni = scan[1] | 1  # odd count puts a sample exactly on Im(lambda) = 0
        ims = np.linspace(im_lo, im_hi, ni)
        LR, LI = np.meshgrid(res, ims, indexing="ij")
        lams = (LR + 1j * LI).ravel()
        with np.errstate(divide="ignore"):
            logD = np.log(np.abs(panel.dispersion(n, lams, M))).reshape(LR.shape)
        # local minima of log|D| as Newton seeds (smallest first, capped)
        interior = logD[1:-1, 1:-1]
        neighbors = np.stack([logD[:-2, 1:-1], logD[2:, 1:-1],
                              logD[1:-1, :-2], logD[1:-1, 2:]])
        is_min = np.all(interior <= neighbors, axis=0)
        mins = sorted(((interior[i, j],
                        complex(LR[1:-1, 1:-1][i, j], LI[1:-1, 1:-1][i, j]))
                       for i, j in zip(*np.nonzero(is_min))),
                      key=lambda t: t[0])
        seeds = [lam for _, lam in mins[:24]]
        gi, gj = np.unravel_index(np.argmin(logD), logD.shape)
        seeds.append(complex(LR[gi, gj], LI[gi, gj]))

        # fast screening pass on the panel evaluation, then accurate polish
        candidates = []
        for seed in seeds:
            lam, ok = _panel_newton(panel, n, seed, M)
            if not ok or lam.real <= 1e-8:
                continue
            if any(abs(lam - c) <= 1e-6 * (1 + abs(lam)) for c in candidates):
                continue
            candidates.append(lam)

        roots_n = []
        for lam0 in candidates:
            lam, resid = _newton_polish(p, n, lam0, M)
            if resid > root_tol or lam.real <= 1e-8:
                continue
            if not (lam.real <= re_hi * 1.2
                    and im_lo - 0.1 <= lam.imag <= im_hi + 0.1):
                continue
            if any(abs(lam - r[0]) <= 1e-7 * (1 + abs(lam)) for r in roots_n):
                continue
            roots_n.append((lam, resid))
        for lam, resid in roots_n:
            found.append(DispersionRoot(n=n, lam=lam, zeta=_zeta_of(n, lam, M),
                                        residual=resid, M=float(M)))

    if not found:
        return []
    found.sort(key=lambda r: (r.n, -r.lam.real, r.lam.imag))
    i_dom = max(range(len(found)),
                key=lambda i: (found[i].lam.real, found[i].lam.imag, -found[i].n))
    out = []
    for i, r in enumerate(found):
        out.append(DispersionRoot(n=r.n, lam=r.lam, zeta=r.zeta,
                                  residual=r.residual, M=r.M,
                                  dominant=(i == i_dom)))
    return out


def count_roots_winding(p: ProfileSpec, n: int, M: float, box,
                        *, max_depth=24, coarse=24) -> int:
    """Argument-principle count of roots of D(n, .) inside a rectangle.

    box = (re_lo, re_hi, im_lo, im_hi) in the lambda plane, assumed free of
    roots on its boundary.  Edge sampling is refined until consecutive phase
    increments are below pi/2, then the total winding is summed.
    """
    re_lo, re_hi, im_lo, im_hi = box
    corners = [complex(re_lo, im_lo), complex(re_hi, im_lo),
               complex(re_hi, im_hi), complex(re_lo, im_hi),
               complex(re_lo, im_lo)]

    cache = {}

    def Dval(lam):
        key = (round(lam.real, 14), round(lam.imag, 14))
        if key not in cache:
            cache[key] = eval_dispersion(p, n, lam, M)
        return cache[key]

    total = 0.0
    for a, b in zip(corners[:-1], corners[1:]):
        ts = list(np.linspace(0.0, 1.0, coarse))
        vals = {t: Dval(a + (b - a) * t) for t in ts}
        stack = [(ts[i], ts[i + 1]) for i in range(len(ts) - 1)]
        depth = 0
        while stack and depth < 10 ** 6:
            t0, t1 = stack.pop()
            d0, d1 = vals[t0], vals[t1]
            dphi = cmath.phase(d1 / d0)
            if abs(dphi) > 0.5 * math.pi and (t1 - t0) > 2.0 ** -max_depth:
                tm = 0.5 * (t0 + t1)
                vals[tm] = Dval(a + (b - a) * tm)
                stack.append((t0, tm))
                stack.append((tm, t1))
            else:
                total += dphi
            depth += 1
    k = total / (2 * math.pi)
    ki = int(round(k))
    if abs(k - ki) > 0.05:
        warnings.warn(f"winding count {k:.3f} far from an integer; "
                      "box boundary may pass near a root")
    return ki


def build_eigenmode(p: ProfileSpec, root: DispersionRoot, grid) -> Eigenmode:
    """Sample the unstable eigenfunction on an (x, v) grid.

    h1(x, v) = scale * e^{i 2 pi n x / M} mu'(v)/(v - zeta), with scale > 0
    fixing the grid L1 norm to 1.  rho1 are the matching density samples and
    ell(v) = Im(xi) mu'(v) / ((v + Re xi)^2 + (Im xi)^2) with xi = -zeta.
    """
    x, v = (grid if isinstance(grid, tuple) else (grid.x, grid.v))
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    n, M, zeta = root.n, root.M, root.zeta

    # check the v-range captures the L1 mass of mu'/(v - zeta) to 1e-8
    lo, hi = _window(p)
    def absm(t):
        return abs(float(p.dmu(t)) / complex(t - zeta))
    total = _quad(absm, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=400)
    if v[0] > lo or v[-1] < hi:
        inside = _quad(absm, max(lo, v[0]), min(hi, v[-1]),
                       epsabs=1e-12, epsrel=1e-10, limit=400)
        if total - inside > 1e-8 * total:
            raise ResolutionError(
                "v-grid range too small to capture the eigenfunction L1 mass "
                "to 1e-8; enlarge vmax")

    phase = np.exp(2j * math.pi * n * x / M)
    mprof = p.dmu(v) / (v - zeta)
    dx = x[1] - x[0]
    dv = v[1] - v[0]
    raw_norm = float(np.sum(np.abs(phase)[:, None] * np.abs(mprof)[None, :]) * dx * dv)
    scale = 1.0 / raw_norm
    h1 = scale * phase[:, None] * mprof[None, :]
    kpref = (2 * math.pi * n / M) ** 2
    rho1 = scale * kpref * phase
    kappa = scale * kpref
    xi = -zeta
    ell = xi.imag * p.dmu(v) / ((v + xi.real) ** 2 + xi.imag ** 2)
    return Eigenmode(root=root, x=x, v=v, h1=h1, rho1=rho1, ell=ell,
                     kappa=kappa, scale=scale)


def h2_xaverage_coefficient(mode: Eigenmode):
    """Coefficient of the predicted x-averaged second corrector.

    Returns (coef, ell_prime) with coef = -kappa M / (4 pi n Re lambda1):
    the predicted x-average is coef * (e^{2 Re lambda1 t} - 1) * ell'(v),
    growing at rate 2 Re lambda1 with the fixed profile ell'.
    """
    r = mode.root
    coef = -mode.kappa * r.M / (4 * math.pi * r.n * r.lam.real)
    v = mode.v
    h = v[1] - v[0]
    ell = mode.ell
    dell = np.empty_like(ell)
    dell[2:-2] = (ell[:-4] - 8 * ell[1:-3] + 8 * ell[3:-1] - ell[4:]) / (12 * h)
    c0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12 * h)
    c1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / (12 * h)
    dell[0] = c0 @ ell[:5]
    dell[1] = c1 @ ell[:5]
    dell[-1] = -(c0 @ ell[-5:][::-1])
    dell[-2] = -(c1 @ ell[-5:][::-1])
    return coef, dell
