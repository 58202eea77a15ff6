"""Circle heat kernel and the fundamental solution on the slab."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import spearmanr

from magdrift.heatkernel import (DEFAULT_PARAMS, HeatKernelParams, g_image_sum,
                                 g_theta, gamma, gamma3, gamma3_minus_mean,
                                 gamma_cell_average, xi)

# Frozen oracle values, computed with an independent image-sum kernel and
# scipy adaptive quadrature (both sides agree to ~1e-15, see the oracle
# functions at the bottom of this file).
GAMMA3_AT_1_HALF = 0.2650723180949082
GAMMA_AT_HALF_ONE = 0.004807319754280259


def test_gamma3_mass_one_on_circle():
    # only the constant term survives integrating the cosine series
    x3 = np.linspace(-np.pi, np.pi, 4097)[:-1]
    for t in (0.01, 0.1, 1.0, 10.0):
        mass = np.mean(gamma3(np.full(x3.shape, t), x3)) * 2 * np.pi
        assert mass == pytest.approx(1.0, abs=1e-12), t


def test_gamma3_positive():
    ts = np.array([0.005, 0.05, 0.5, 5.0])
    x3 = np.linspace(-np.pi, np.pi, 101)
    vals = gamma3(ts[:, None], x3[None, :])
    assert np.all(vals > 0)


def test_gamma3_long_time_limit():
    x3 = np.linspace(-np.pi, np.pi, 64)
    vals = gamma3(np.full(64, 40.0), x3)
    np.testing.assert_allclose(vals, 1 / (2 * np.pi), atol=1e-15)


def test_representation_equivalence_20_samples():
    rng = np.random.default_rng(8)
    ts = rng.uniform(0.02, 5.0, 20)
    xs = rng.uniform(-np.pi, np.pi, 20)
    series = gamma3(np.maximum(ts, 1.0000001), xs)  # force the Fourier branch
    image = g_theta(np.maximum(ts, 1.0000001), xs) / (2 * np.pi)
    np.testing.assert_allclose(series, image, atol=1e-12)
    # and at the frozen point
    assert gamma3(1.0, 0.5) == pytest.approx(GAMMA3_AT_1_HALF, abs=1e-14)
    assert g_theta(1.0, 0.5) / (2 * np.pi) == pytest.approx(GAMMA3_AT_1_HALF,
                                                            abs=1e-14)


def test_theta_form_equals_plain_image_sum():
    rng = np.random.default_rng(9)
    ts = rng.uniform(0.01, 3.0, 50)
    xs = rng.uniform(-np.pi, np.pi, 50)
    np.testing.assert_allclose(g_theta(ts, xs), g_image_sum(ts, xs), rtol=1e-13)


def test_gamma3_rejects_nonpositive_t():
    with pytest.raises(ValueError):
        gamma3(0.0, 0.1)
    with pytest.raises(ValueError):
        g_theta(-1.0, 0.1)


def test_sandwich_bounds():
    # exp(-x3^2/4t) g_t(0) <= g_t(x3) <= (sqrt(pi/t) + g_t(0)) exp(-x3^2/4t)
    ts = np.array([0.01, 0.05, 0.2, 1.0, 3.0, 10.0])
    xs = np.linspace(-np.pi, np.pi, 41)
    for t in ts:
        g0 = float(g_theta(t, 0.0))
        g = g_image_sum(np.full(xs.shape, t), xs)
        lo = np.exp(-xs**2 / (4 * t)) * g0
        hi = (np.sqrt(np.pi / t) + g0) * np.exp(-xs**2 / (4 * t))
        assert np.all(g >= lo - 1e-12), t
        assert np.all(g <= hi + 1e-12), t


def test_g_zero_bounds():
    ts = np.linspace(0.01, 20.0, 300)
    g0 = g_theta(ts, np.zeros_like(ts))
    assert np.all(g0 >= np.sqrt(np.pi / ts) - 1e-12)
    assert np.all(g0 <= 1.0 + np.sqrt(np.pi / ts) + 1e-12)
    assert np.all(g0 - 1.0 >= 2 * np.exp(-ts) - 1e-12)
    assert np.all(g0 - 1.0 <= 2 * np.exp(-ts) / (1 - np.exp(-ts)) + 1e-12)


def test_gamma_matches_brute_force_oracle():
    val = float(gamma(np.array([0.5, 0.0, 1.0])))
    assert val == pytest.approx(GAMMA_AT_HALF_ONE, abs=1e-12)
    brute = _gamma_brute(0.5, 1.0)
    assert val == pytest.approx(brute, abs=1e-8)


def test_gamma_parity_and_periodicity():
    a = gamma(np.array([[0.4, 0.3, 1.1], [0.4, 0.3, -1.1],
                        [0.4, 0.3, 1.1 + 2 * np.pi]]))
    assert a[0] == pytest.approx(a[1], abs=1e-15)
    assert a[0] == pytest.approx(a[2], abs=1e-15)


def test_gamma_rejects_origin():
    with pytest.raises(ValueError):
        gamma(np.zeros(3))


def test_gamma_decay_rates_bounded_and_nonincreasing():
    # sampled sup over shells of |Gamma| |x|, |grad Gamma| |x|^2,
    # |D2 Gamma| |x|^3: bounded by one constant, no growth trend in radius
    rng = np.random.default_rng(10)
    shells = np.linspace(0.1, 5.0, 12)
    sup0, sup1, sup2 = [], [], []
    h = 5e-3
    for r in shells:
        ang = rng.uniform(0, 2 * np.pi, 24)
        zfrac = rng.uniform(-1, 1, 24)
        # points with |x| = r split between plane and x3 (wrapped range)
        z = np.clip(r * zfrac, -np.pi + 0.05, np.pi - 0.05)
        rho = np.sqrt(np.maximum(r**2 - z**2, 1e-12))
        pts = np.stack([rho * np.cos(ang), rho * np.sin(ang), z], axis=-1)
        g0 = np.abs(gamma(pts))
        grads, hess = [], []
        for a in range(3):
            dx = np.zeros(3)
            dx[a] = h
            gp, gm = gamma(pts + dx), gamma(pts - dx)
            grads.append((gp - gm) / (2 * h))
            hess.append((gp - 2 * gamma(pts) + gm) / h**2)
        g1 = np.sqrt(sum(g * g for g in grads))
        g2 = np.max(np.abs(np.stack(hess)), axis=0)
        sup0.append(np.max(g0) * r)
        sup1.append(np.max(g1) * r**2)
        sup2.append(np.max(g2) * r**3)
    for sup in (sup0, sup1, sup2):
        assert max(sup) < 10.0, sup  # a single finite constant covers all shells
        rho_s = spearmanr(shells, sup).statistic
        assert rho_s <= 0.0, (sup, rho_s)


def test_xi_harmonic_away_from_source():
    x0 = np.array([0.6, 0.5, np.sqrt(1 - 0.61)])
    h = 0.1
    lap = 0.0
    for axis in range(3):
        dx = np.zeros(3)
        dx[axis] = h
        vals = [float(xi(x0 + k * dx)) for k in (2, 1, 0, -1, -2)]
        lap += (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3]
                - vals[4]) / (12 * h * h)
    assert abs(lap) <= 1e-4


def test_xi_periodic_and_log_tail():
    x = np.array([0.8, -0.2, 0.9])
    assert float(xi(x)) == pytest.approx(
        float(xi(x + [0, 0, 2 * np.pi])), abs=1e-14)
    # for |xbar| -> infinity, Xi ~ -ln|xbar| / 4 pi^2
    for r in (20.0, 60.0):
        v = float(xi(np.array([r, 0.0, 1.0])))
        assert v == pytest.approx(-np.log(r) / (4 * np.pi**2), abs=2e-3 / r)


def test_xi_scaling_with_reference_length():
    # Xi_R0(x) = Xi_1(x / R0) / R0
    R0 = 1.7
    x = np.array([0.9, 0.3, 1.2])
    assert float(xi(x, R0=R0)) == pytest.approx(float(xi(x / R0)) / R0,
                                                rel=1e-13)


def test_xi_rejects_plane_axis():
    with pytest.raises(ValueError):
        xi(np.array([0.0, 0.0, 1.0]))


def test_cell_average_matches_quadrature_on_neighbor_cell():
    h = 0.125
    ctr = (h, 0.0, 0.0)
    xg, wg = np.polynomial.legendre.leggauss(24)
    pts = np.stack(np.meshgrid(ctr[0] + 0.5 * h * xg, 0.5 * h * xg,
                               0.5 * h * xg, indexing="ij"),
                   axis=-1).reshape(-1, 3)
    W = (np.outer(np.outer(wg, wg).ravel(), wg).ravel()) * (h / 2) ** 3
    brute = float(np.dot(W, gamma(pts))) / h**3
    mine = gamma_cell_average(ctr, (h, h, h))
    assert mine == pytest.approx(brute, abs=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        HeatKernelParams(tol_series=0.0)
    with pytest.raises(ValueError):
        HeatKernelParams(tol_quad=1e-2)
    with pytest.raises(ValueError):
        HeatKernelParams(t_switch=-1.0)


# ---------------------------------------------------------------------------
# independent brute-force oracle: plain image sum in x3 (image count grows
# with sqrt(t)) and fine fixed-step quadrature in log t


def _g_images(t, x3):
    K = 40 + int(4 * np.sqrt(t))
    n = np.arange(-K, K + 1)
    return np.sqrt(np.pi / t) * np.sum(np.exp(-((x3 + 2 * np.pi * n) ** 2)
                                              / (4 * t)))


def _gamma_brute(r, x3):
    u = np.linspace(-60.0, 9.0, 200001)
    t = np.exp(u)
    vals = np.array([tt * np.exp(-r * r / (4 * tt)) / (4 * np.pi * tt)
                     * (_g_images(tt, x3) - 1.0) / (2 * np.pi) for tt in t])
    return float(np.trapezoid(vals, u))
