"""Shared quadrature helpers.

Thin wrappers around scipy.integrate plus the substitution rules used by
the Abel-type integrals of the BGK construction, kept in one place so the
main code paths and the test oracles can pick independent routes.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

__all__ = [
    "quad_re_im",
    "adaptive_quad",
    "gauss_panel_nodes",
    "integrate_theta_pair",
    "integrate_abel_theta",
]


def adaptive_quad(func, a, b, *, points=None, epsabs=1e-12, epsrel=1e-11,
                  limit=200):
    """Adaptive quadrature of a real scalar function; returns the value."""
    kw = dict(epsabs=epsabs, epsrel=epsrel, limit=limit)
    if points is not None:
        pts = [p for p in points if a < p < b]
        if pts:
            kw["points"] = pts
    val, _ = integrate.quad(func, a, b, **kw)
    return val


def quad_re_im(func, a, b, **kw):
    """Adaptive quadrature of a complex-valued integrand (Re and Im parts)."""
    re = adaptive_quad(lambda v: func(v).real, a, b, **kw)
    im = adaptive_quad(lambda v: func(v).imag, a, b, **kw)
    return re + 1j * im


def gauss_panel_nodes(a, b, n_panels, order):
    """Composite Gauss-Legendre nodes/weights on [a, b].

    Returns flat arrays (nodes, weights) of length n_panels*order; intended
    for vectorized evaluation of smooth integrands at many parameters.
    """
    x, w = leggauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * np.diff(edges)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def integrate_theta_pair(h, a, b, order=200):
    """∫_a^b h(u) u du / sqrt((b²−u²)(u²−a²)) for 0 ≤ a < b.

    Substituting u² = a²cos²θ + b²sin²θ turns the weight into dθ exactly:
    the integral equals ∫_0^{π/2} h(u(θ)) dθ, which is smooth whenever h is.
    With h ≡ 1 the value is π/2 independently of (a, b).
    """
    if not (0 <= a < b):
        raise ValueError("integrate_theta_pair requires 0 <= a < b")
    th, w = gauss_panel_nodes(0.0, np.pi / 2, 8, max(4, order // 8))
    u = np.sqrt(a * a * np.cos(th) ** 2 + b * b * np.sin(th) ** 2)
    return float(np.sum(w * h(u)))


def integrate_abel_theta(h, r, order=200):
    """∫_0^r h(u) u du / sqrt(r²−u²) via u = r sinθ (→ r∫_0^{π/2} h sinθ dθ)."""
    if r < 0:
        raise ValueError("integrate_abel_theta requires r >= 0")
    if r == 0.0:
        return 0.0
    th, w = gauss_panel_nodes(0.0, np.pi / 2, 8, max(4, order // 8))
    u = r * np.sin(th)
    return float(r * np.sum(w * h(u) * np.sin(th)))
