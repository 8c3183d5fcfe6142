"""Tests for the dispersion-relation evaluators, root finder, and eigenmodes.

Oracles:
  - Maxwellian mixtures: G(zeta) = sum_i w_i * (-(1/T_i) (1 + xi_i Z(xi_i))),
    xi_i = (zeta - c_i)/sqrt(2 T_i), with Z the plasma dispersion function
    evaluated through the scaled complementary error function (wofz).
  - Frozen two-stream fixture (T=0.25, centers +-2, equal weights, M=16):
    exactly one unstable mode n=1 with real growth rate
    lambda_1 = 0.3033679410133714, confirmed by bracketing the real zero of
    the closed-form dispersion function (agreement 1.3e-15) and by an
    argument-principle winding count of 1.
"""

import math

import numpy as np
import pytest
from scipy.special import wofz

from qnk.dispersion import (
    PLEMELJ_C,
    build_eigenmode,
    count_roots_winding,
    eval_dispersion,
    eval_G,
    eval_G_real,
    find_unstable_roots,
    h2_xaverage_coefficient,
    _PanelG,
)
from qnk.errors import ParameterError, ResolutionError
from qnk.profiles import ProfileSpec

LAMBDA1_TWO_STREAM = 0.3033679410133714  # M=16, n=1; see module docstring
I0_TWO_STREAM = 0.3263407330144         # neutral-point integral at v=0


def two_stream():
    return ProfileSpec("two_stream", T=0.25, u=2.0, weights=(0.5, 0.5))


def G_mixture_oracle(zeta, comps):
    total = 0.0 + 0.0j
    for w, c, T in comps:
        xi = (zeta - c) / math.sqrt(2 * T)
        Z = 1j * math.sqrt(math.pi) * wofz(xi)
        total += w * (-(1.0 / T) * (1.0 + xi * Z))
    return total


class TestEvalG:
    def test_matches_faddeeva_closed_form(self):
        cases = [
            (ProfileSpec("maxwellian", T=1.0, u=0.0), [(1.0, 0.0, 1.0)]),
            (ProfileSpec("maxwellian", T=0.5, u=1.3), [(1.0, 1.3, 0.5)]),
            (two_stream(), [(0.5, -2.0, 0.25), (0.5, 2.0, 0.25)]),
        ]
        zetas = [0.5j, 1.0 + 0.3j, -2.0 + 0.05j, 0.7 + 2.0j]
        for p, comps in cases:
            for z in zetas:
                got = eval_G(p, z)
                want = G_mixture_oracle(z, comps)
                assert abs(got - want) < 1e-12

    def test_requires_upper_half_plane(self):
        p = two_stream()
        for z in (0.3, 0.3 - 0.1j, -1.0 + 0.0j):
            with pytest.raises(ParameterError):
                eval_G(p, z)

    def test_conjugate_reflection_even_profile(self):
        p = two_stream()
        for z in (0.8 + 0.37j, 0.1 + 1.0j, -2.3 + 0.2j):
            lhs = eval_G(p, -z.conjugate())
            rhs = eval_G(p, z).conjugate()
            assert abs(lhs - rhs) < 1e-11

    def test_decay_at_large_zeta(self):
        p = two_stream()
        vals = [abs(eval_G(p, x + 1.0j)) for x in (20.0, 40.0, 80.0)]
        assert vals[0] < 1e-2
        assert vals[1] < vals[0]
        assert vals[2] < vals[1]

    def test_tabulated_exact_integrals_match_analytic(self):
        v = np.linspace(-10, 10, 4097)
        mu = np.exp(-v * v / 2) / math.sqrt(2 * math.pi)
        p = ProfileSpec("tabulated", v=v, mu=mu)
        for z in (0.5j, 1.0 + 0.3j, -2.0 + 0.05j):
            got = eval_G(p, z)
            want = G_mixture_oracle(z, [(1.0, 0.0, 1.0)])
            # limited by the table's own interpolation error, not the integrator
            assert abs(got - want) < 5e-9

    def test_refining_quadrature_leaves_G_unchanged(self):
        p = two_stream()
        coarse = _PanelG(p, n_panels=96)
        fine = _PanelG(p, n_panels=192)
        zetas = np.array([0.5j, 1.0 + 0.4j, -1.5 + 0.3j])
        assert np.max(np.abs(coarse(zetas) - fine(zetas))) < 1e-9


class TestBoundaryValues:
    def test_real_part_matches_neutral_point_integral(self):
        g = eval_G_real(two_stream(), 0.0)
        assert abs(g.real - I0_TWO_STREAM) < 1e-9
        assert abs(g.imag) < 1e-12  # mu'(0) = 0 at the minimum

    def test_imaginary_part_scales_with_jump_constant(self):
        p = two_stream()
        xi = 1.0
        dmu = float(p.dmu(xi))
        for c in (PLEMELJ_C, 2.0, -1.0):
            g = eval_G_real(p, xi, plemelj_c=c)
            assert abs(g.imag - c * dmu) < 1e-14

    def test_default_constant_is_the_boundary_limit(self):
        # the off-axis values must approach the boundary rule as Im zeta -> 0,
        # which pins the default jump constant independently of any convention
        p = two_stream()
        xi = 1.2
        limit = eval_G_real(p, xi)
        approach = eval_G(p, xi + 1e-3j)
        assert abs(approach - limit) < 5e-3
        closer = eval_G(p, xi + 1e-4j)
        assert abs(closer - limit) < abs(approach - limit)


class TestDispersionFunction:
    def test_definition_and_mode_zero_error(self):
        p = two_stream()
        M, n, lam = 16.0, 2, 0.2 + 0.4j
        zeta = 1j * M * lam / (2 * math.pi * n)
        want = 1.0 - (M / (2 * math.pi * n)) ** 2 * eval_G(p, zeta)
        assert abs(eval_dispersion(p, n, lam, M) - want) < 1e-14
        with pytest.raises(ParameterError):
            eval_dispersion(p, 0, lam, M)

    def test_mode_negation_symmetry(self):
        p = two_stream()
        for lam in (0.3 + 0.11j, 0.05 - 0.9j):
            a = eval_dispersion(p, 1, lam, 16.0)
            b = eval_dispersion(p, -1, -lam, 16.0)
            assert abs(a - b) < 1e-14

    def test_tends_to_one_for_large_lambda(self):
        d = eval_dispersion(two_stream(), 1, 500.0, 16.0)
        assert abs(d - 1.0) < 1e-4


class TestRootFinding:
    def test_two_stream_frozen_dominant_root(self):
        roots = find_unstable_roots(two_stream(), 16.0)
        assert len(roots) == 1
        r = roots[0]
        assert r.n == 1
        assert r.dominant
        assert r.residual <= 1e-10
        assert abs(r.lam.imag) < 1e-11
        assert abs(r.lam.real - LAMBDA1_TWO_STREAM) < 1e-9
        assert abs(r.zeta - 1j * 16.0 * r.lam / (2 * math.pi)) < 1e-14
        # conjugation invariant (even profile)
        resid_conj = abs(eval_dispersion(two_stream(), r.n, r.lam.conjugate(), r.M))
        assert resid_conj <= 1e-9

    def test_winding_count_matches_root_count(self):
        p = two_stream()
        box = (1e-4, 1.5, -2.0, 2.0)
        assert count_roots_winding(p, 1, 16.0, box) == 1
        assert count_roots_winding(p, 2, 16.0, box) == 0

    def test_stable_configurations_give_no_roots(self):
        assert find_unstable_roots(ProfileSpec("maxwellian", T=1.0, u=0.0), 16.0) == []
        # torus too short: (2 pi / M)^2 exceeds the neutral-point integral
        assert find_unstable_roots(two_stream(), 10.0) == []

    def test_torus_doubling_adds_modes_and_preserves_rates(self):
        p = two_stream()
        by_M = {M: find_unstable_roots(p, M) for M in (16.0, 32.0, 64.0)}
        assert sorted(set(r.n for r in by_M[16.0])) == [1]
        assert sorted(set(r.n for r in by_M[32.0])) == [1, 2]
        assert sorted(set(r.n for r in by_M[64.0])) == [1, 2, 3, 4, 5]
        # equal wavenumber 2 pi n / M means equal growth rate
        rate = {}
        for M, roots in by_M.items():
            for r in roots:
                rate[round(2 * math.pi * r.n / M, 12)] = rate.get(
                    round(2 * math.pi * r.n / M, 12), []) + [r.lam]
        for k, lams in rate.items():
            for lam in lams[1:]:
                assert abs(lam - lams[0]) < 1e-8

    def test_even_double_minimum_profile_gives_conjugate_pair(self):
        v = np.linspace(-9, 9, 4097)

        def nrm(c, T):
            return np.exp(-(v - c) ** 2 / (2 * T)) / math.sqrt(2 * math.pi * T)

        mu = 0.4 * nrm(-3.0, 0.25) + 0.2 * nrm(0.0, 0.25) + 0.4 * nrm(3.0, 0.25)
        p = ProfileSpec("tabulated", v=v, mu=mu)
        roots = find_unstable_roots(p, 15.0, n_range=[1])
        assert len(roots) == 2
        a, b = roots
        assert a.n == b.n == 1
        assert abs(a.lam - b.lam.conjugate()) < 1e-8
        assert a.lam.imag > 0 > b.lam.imag
        assert a.dominant and not b.dominant
        for r in roots:
            assert r.residual <= 1e-10


@pytest.fixture(scope="module")
def mode():
    p = two_stream()
    root = find_unstable_roots(p, 16.0)[0]
    x = np.arange(256) * (16.0 / 256)
    v = np.linspace(-6.0, 6.0, 512)
    return p, root, build_eigenmode(p, root, (x, v))


class TestEigenmode:
    def test_unit_l1_norm(self, mode):
        _, _, m = mode
        dx = m.x[1] - m.x[0]
        dv = m.v[1] - m.v[0]
        assert abs(np.sum(np.abs(m.h1)) * dx * dv - 1.0) < 1e-12

    def test_density_consistency(self, mode):
        _, _, m = mode
        dv = m.v[1] - m.v[0]
        rho_num = m.h1.sum(axis=1) * dv
        err = np.max(np.abs(rho_num - m.rho1)) / np.max(np.abs(m.rho1))
        assert err < 1e-10

    def test_zero_x_average(self, mode):
        _, _, m = mode
        assert np.max(np.abs(m.h1.mean(axis=0))) < 1e-14

    def test_ell_profile_formula(self, mode):
        p, root, m = mode
        xi = -root.zeta
        want = xi.imag * p.dmu(m.v) / ((m.v + xi.real) ** 2 + xi.imag ** 2)
        assert np.max(np.abs(m.ell - want)) == 0.0

    def test_kappa_positive_real(self, mode):
        _, _, m = mode
        assert m.kappa > 0.0

    def test_undersized_velocity_box_raises(self, mode):
        p, root, _ = mode
        x = np.arange(64) * (16.0 / 64)
        v = np.linspace(-2.5, 2.5, 64)
        with pytest.raises(ResolutionError):
            build_eigenmode(p, root, (x, v))


class TestSecondCorrector:
    def test_coefficient_sign_and_derivative_profile(self):
        p = two_stream()
        root = find_unstable_roots(p, 16.0)[0]
        x = np.arange(256) * (16.0 / 256)
        v = np.linspace(-6.0, 6.0, 1024)
        m = build_eigenmode(p, root, (x, v))
        coef, dell = h2_xaverage_coefficient(m)
        assert coef < 0.0
        dv = v[1] - v[0]
        # ell decays at the box edges, so its derivative integrates to ~zero
        assert abs(np.sum(dell) * dv) < 1e-10
        # finite differences reproduce an independent central difference
        mid = slice(10, -10)
        ref = np.gradient(m.ell, v)[mid]
        assert np.max(np.abs(dell[mid] - ref)) < 5e-4 * np.max(np.abs(ref))
        # prediction vanishes at t = 0 and grows with the doubled rate
        t = np.array([0.0, 0.5, 1.0])
        amp = coef * (np.exp(2 * root.lam.real * t) - 1.0)
        assert amp[0] == 0.0
        assert abs(amp[2] / amp[1] - (math.exp(2 * root.lam.real) - 1.0)
                   / (math.exp(root.lam.real) - 1.0)) < 1e-12
