"""Heat kernels on the circle and the fundamental solution on R^2 x T^1.

The Green's function of -Laplace on R^2 x T^1 (period 2 pi) splits as

    Xi(x) = -ln|xbar| / (4 pi^2) + Gamma(x),
    Gamma(x) = int_0^inf Gamma_12(t, xbar) [Gamma_3(t, x3) - 1/(2 pi)] dt,

where Gamma_12 is the plane heat kernel and Gamma_3 the circle heat kernel.
Gamma_3 has two convergent representations交:, a cosine series efficient for
large t and a Gaussian image sum (theta duality) efficient for small t; the
switch point is t_switch.  The t-integral is evaluated with a composite
Gauss-Legendre rule in log t, refined until two resolutions agree to the
requested quadrature tolerance.

Everything here is for the unit reference length (period 2 pi).  For period
2 pi R0 use the scaling Xi_R0(x) = Xi(x / R0) / R0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erf

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class HeatKernelParams:
    """Evaluation controls for Gamma_3 and the Gamma t-integral."""

    tol_series: float = 1e-15
    t_switch: float = 1.0
    tol_quad: float = 1e-10

    def __post_init__(self):
        for name in ("tol_series", "tol_quad"):
            v = getattr(self, name)
            if not (0.0 < v <= 1e-3):
                raise ValueError(f"{name} must lie in (0, 1e-3], got {v}")
        if self.t_switch <= 0.0:
            raise ValueError("t_switch must be positive")


DEFAULT_PARAMS = HeatKernelParams()


def _fourier_terms(t, tol):
    # smallest N with exp(-N^2 t) < tol; clamp for safety
    t = max(float(np.min(t)), 1e-12)
    n = int(np.ceil(np.sqrt(max(-np.log(tol), 1.0) / t))) + 1
    return min(max(n, 2), 4000)


def g_theta(t, x3, params: HeatKernelParams = DEFAULT_PARAMS):
    """g_t(x3) = 2 pi sum_n k_t(x3 + 2 pi n) via the theta-dual form.

    Uses sqrt(pi/t) e^{-x3^2/4t} (1 + 2 sum_n e^{-pi^2 n^2/t} cosh(pi n x3/t))
    with each cosh product paired into two decaying exponentials so the
    evaluation never overflows.  Efficient for t below a few units.
    """
    t = np.asarray(t, float)
    x3 = np.asarray(x3, float)
    if np.any(t <= 0.0):
        raise ValueError("t must be positive")
    acc = np.ones(np.broadcast(t, x3).shape)
    n = 1
    while True:
        pn = np.pi * n
        term_p = np.exp(-pn * (pn - x3) / t)
        term_m = np.exp(-pn * (pn + x3) / t)
        acc = acc + term_p + term_m
        if n >= 3 and float(np.max(term_p + term_m)) < params.tol_series:
            break
        n += 1
        if n > 64:
            break
    return np.sqrt(np.pi / t) * np.exp(-x3 * x3 / (4.0 * t)) * acc


def g_image_sum(t, x3, n_images: int = 64):
    """g_t(x3) by the direct Gaussian image sum (reference implementation)."""
    t = np.asarray(t, float)
    x3 = np.asarray(x3, float)
    t_b, x3_b = np.broadcast_arrays(t, x3)
    n = np.arange(-n_images, n_images + 1)
    z = x3_b[..., None] + TWO_PI * n
    s = np.sum(np.exp(-z * z / (4.0 * t_b[..., None])), axis=-1)
    return np.sqrt(np.pi / t_b) * s


def gamma3(t, x3, params: HeatKernelParams = DEFAULT_PARAMS):
    """Heat kernel on the circle, Gamma_3(t, x3) > 0 with unit mass on T^1.

    Evaluated by the cosine series (1 + 2 sum e^{-n^2 t} cos n x3) / 2 pi for
    t >= t_switch and as g_t / 2 pi below, both truncated at tol_series.
    """
    t = np.asarray(t, float)
    x3 = np.asarray(x3, float)
    if np.any(t <= 0.0):
        raise ValueError("t must be positive")
    t_b, x3_b = np.broadcast_arrays(t, x3)
    out = np.empty(t_b.shape)
    small = t_b < params.t_switch
    if np.any(small):
        out[small] = g_theta(t_b[small], x3_b[small], params) / TWO_PI
    if np.any(~small):
        ts, xs = t_b[~small], x3_b[~small]
        acc = np.zeros(ts.shape)
        for n in range(1, _fourier_terms(ts, params.tol_series) + 1):
            acc += np.exp(-n * n * ts) * np.cos(n * xs)
        out[~small] = (1.0 + 2.0 * acc) / TWO_PI
    return out if out.ndim else float(out)


def gamma3_minus_mean(t, x3, params: HeatKernelParams = DEFAULT_PARAMS):
    """Gamma_3(t, x3) - 1/(2 pi), the zero-mean part driving Gamma."""
    t = np.asarray(t, float)
    x3 = np.asarray(x3, float)
    t_b, x3_b = np.broadcast_arrays(t, x3)
    out = np.empty(t_b.shape)
    small = t_b < params.t_switch
    if np.any(small):
        out[small] = (g_theta(t_b[small], x3_b[small], params) - 1.0) / TWO_PI
    if np.any(~small):
        ts, xs = t_b[~small], x3_b[~small]
        acc = np.zeros(ts.shape)
        for n in range(1, _fourier_terms(ts, params.tol_series) + 1):
            acc += np.exp(-n * n * ts) * np.cos(n * xs)
        out[~small] = acc / np.pi
    return out


# ---------------------------------------------------------------------------
# Composite Gauss-Legendre rule in u = ln t

_U_LO, _U_MID, _U_HI = -60.0, 0.0, 45.0


@lru_cache(maxsize=8)
def _log_panels(panels_small: int, panels_large: int, order: int = 12):
    xg, wg = np.polynomial.legendre.leggauss(order)

    def build(a, b, panels):
        edges = np.linspace(a, b, panels + 1)
        half = 0.5 * (edges[1] - edges[0])
        mid = 0.5 * (edges[:-1] + edges[1:])
        u = (mid[:, None] + half * xg[None, :]).ravel()
        w = np.tile(wg * half, panels)
        return u, w

    u1, w1 = build(_U_LO, _U_MID, panels_small)
    u2, w2 = build(_U_MID, _U_HI, panels_large)
    return u1, w1, u2, w2


def _gamma_fixed(r, x3, panels: int, params: HeatKernelParams):
    """Gamma at radii r and angles x3 (broadcast), fixed panel count."""
    u1, w1, u2, w2 = _log_panels(panels, panels)
    t1, t2 = np.exp(u1), np.exp(u2)
    r = np.asarray(r, float)[..., None]
    x3 = np.asarray(x3, float)[..., None]
    # t < t_switch leg: image representation
    d1 = (g_theta(np.broadcast_to(t1, r.shape[:-1] + t1.shape),
                  np.broadcast_to(x3, r.shape[:-1] + t1.shape), params) - 1.0) / TWO_PI
    f1 = t1 * np.exp(-r * r / (4.0 * t1)) / (4.0 * np.pi * t1) * d1
    # t >= t_switch leg: cosine series
    nmax = _fourier_terms(float(t2[0]), params.tol_series)
    n = np.arange(1, nmax + 1)
    d2 = np.einsum("...n,tn->...t", np.cos(n * x3), np.exp(-np.outer(t2, n * n)))
    f2 = t2 * np.exp(-r * r / (4.0 * t2)) / (4.0 * np.pi * t2) * d2 / np.pi
    return f1 @ w1 + f2 @ w2


def gamma(x, params: HeatKernelParams = DEFAULT_PARAMS, singular_cutoff: float = 1e-8):
    """Gamma(x) on R^2 x T^1, vectorized over points x of shape (..., 3).

    The integral over t is computed on composite Gauss-Legendre panels in
    log t; the panel count doubles until two successive resolutions agree
    to tol_quad (the integrand decays double-exponentially at both ends of
    the log axis, so convergence is fast and certified).
    """
    x = np.asarray(x, float)
    r = np.hypot(x[..., 0], x[..., 1])
    x3 = (x[..., 2] + np.pi) % TWO_PI - np.pi
    if np.any(np.hypot(r, x3) < singular_cutoff):
        raise ValueError(f"Gamma is singular at the origin (|x| < {singular_cutoff})")
    coarse = _gamma_fixed(r, x3, 40, params)
    for panels in (80, 160):
        fine = _gamma_fixed(r, x3, panels, params)
        if float(np.max(np.abs(fine - coarse))) <= params.tol_quad:
            return fine
        coarse = fine
    return coarse


def xi(x, R0: float = 1.0, params: HeatKernelParams = DEFAULT_PARAMS,
       singular_cutoff: float = 1e-8):
    """Fundamental solution Xi on R^2 x T^1 with period 2 pi R0.

    Xi(x) = -ln(|xbar|/R0) / (4 pi^2 R0) + Gamma(x/R0) / R0; it is periodic
    in x3 and behaves like -ln|xbar| / (4 pi^2 R0) as |xbar| -> infinity.
    """
    x = np.asarray(x, float) / R0
    r = np.hypot(x[..., 0], x[..., 1])
    if np.any(r < singular_cutoff):
        raise ValueError("Xi requires |xbar| above the singular cutoff")
    return (-np.log(r) / (4.0 * np.pi**2) + gamma(x, params, singular_cutoff)) / R0


# ---------------------------------------------------------------------------
# Exact cell averages of Gamma (used for near-singular convolution weights)


def _erf_box(a, b, t):
    """int_a^b exp(-s^2/4t) / sqrt(4 pi t) ds, elementwise over t."""
    s = np.sqrt(4.0 * t)
    return 0.5 * (erf(b / s) - erf(a / s))


def _gamma3m_cell(za, zb, t, params: HeatKernelParams, n_images: int = 8):
    """int_za^zb (Gamma_3(t, z) - 1/2pi) dz, elementwise over t."""
    out = np.empty_like(t)
    small = t < params.t_switch
    if np.any(small):
        # int g_t dz = pi * sum_n [erf((zb+2pi n)/sqrt(4t)) - erf((za+2pi n)/sqrt(4t))]
        ts = t[small]
        acc = np.zeros_like(ts)
        for n in range(-n_images, n_images + 1):
            acc += erf((zb + TWO_PI * n) / np.sqrt(4 * ts)) - erf((za + TWO_PI * n) / np.sqrt(4 * ts))
        out[small] = (np.pi * acc - (zb - za)) / TWO_PI
    if np.any(~small):
        tl = t[~small]
        nmax = _fourier_terms(float(np.min(tl)), params.tol_series)
        acc = np.zeros_like(tl)
        for n in range(1, nmax + 1):
            acc += np.exp(-n * n * tl) * (np.sin(n * zb) - np.sin(n * za)) / n
        out[~small] = acc / np.pi
    return out


def gamma_cell_average(center, cell, params: HeatKernelParams = DEFAULT_PARAMS,
                       panels: int = 120):
    """Average of Gamma over the box center +/- cell/2 (exact separability).

    The t-integrand of Gamma factorizes over coordinates, so the cell
    integral reduces to erf products in the plane and an erf image sum (or
    sine series) along x3, leaving a single smooth t-quadrature.  Used for
    convolution weights on cells at or near the kernel singularity, where
    midpoint sampling breaks down.
    """
    cx, cy, cz = center
    hx, hy, hz = cell
    u1, w1, u2, w2 = _log_panels(panels, panels)
    u = np.concatenate([u1, u2])
    w = np.concatenate([w1, w2])
    t = np.exp(u)
    fx = _erf_box(cx - hx / 2, cx + hx / 2, t)
    fy = _erf_box(cy - hy / 2, cy + hy / 2, t)
    fz = _gamma3m_cell(cz - hz / 2, cz + hz / 2, t, params)
    vals = t * fx * fy * fz
    return float(np.dot(w, vals)) / (hx * hy * hz)


def log_cell_average(center, cell, order: int = 24):
    """Average of -ln|xbar| / (4 pi^2) over a plane cell (Gauss-Legendre).

    Handles the singular cell at the origin: Gauss nodes never land on 0.
    """
    cx, cy = center
    hx, hy = cell
    xg, wg = np.polynomial.legendre.leggauss(order)
    xs = cx + 0.5 * hx * xg
    ys = cy + 0.5 * hy * xg
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    W = np.outer(wg, wg) * (hx * hy / 4.0)
    vals = -np.log(np.hypot(X, Y)) / (4.0 * np.pi**2)
    return float(np.sum(W * vals)) / (hx * hy)
