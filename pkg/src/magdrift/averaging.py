"""Averages along the periodic characteristic flow of the magnetic field.

For the cylindrical field B e = B0 (x2/R0, -x1/R0, 1) the flow is closed
form,

    X(s; x) = (R(-s B0/R0) xbar, x3 + s B0),    period S = 2 pi R0 / B0,

with R the plane rotation.  The function average is the uniform mean of u
along one period; the vector average pushes the field back through the
(orthogonal, block rotation + 1) flow Jacobian before averaging.  Both are
orthogonal projections onto flow-invariant objects and are computed with
uniform quadrature, which converges spectrally for smooth periodic
integrands.

Angular vector fields nu_theta = (x2, -x1, 0)/|xbar|^2 and
nu_par = (0, 0, 1) are curl free, invariant under the flow pushforward and
pair constantly with the field; they enter the curl/average commutation
identity < grad(a) ^ nu > = grad(<a>) ^ nu checked here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import CYLINDRICAL, UNIFORM, MagneticFieldConfig

NU_THETA = "nu_theta"
NU_PARALLEL = "nu_parallel"
AXIS_CUTOFF = 1e-6


def angular_field(kind: str, x) -> np.ndarray:
    """Evaluate an angular vector field at points x of shape (..., 3)."""
    x = np.asarray(x, float)
    out = np.zeros(x.shape)
    if kind == NU_PARALLEL:
        out[..., 2] = 1.0
        return out
    if kind != NU_THETA:
        raise ValueError(f"unknown angular field {kind!r}")
    rho2 = x[..., 0] ** 2 + x[..., 1] ** 2
    if np.any(rho2 < AXIS_CUTOFF**2):
        raise ValueError("nu_theta is singular on the axis (|xbar| < 1e-6)")
    out[..., 0] = x[..., 1] / rho2
    out[..., 1] = -x[..., 0] / rho2
    return out


@dataclass(frozen=True)
class FlowSpec:
    """Characteristic flow of Be . grad with quadrature resolution.

    For the built-in geometries the flow and its period are closed form;
    a user-supplied divergence-free field may be passed as ``b_func``
    together with its period (period detection is not attempted), in
    which case orbits are integrated with the classical 4th-order scheme
    and only function averages are available.
    """

    cfg: MagneticFieldConfig = field(default_factory=MagneticFieldConfig)
    n_quad: int = 256
    b_func: Callable | None = None
    period: float | None = None

    @property
    def S(self) -> float:
        if self.period is not None:
            return self.period
        return 2.0 * np.pi * self.cfg.R0 / self.cfg.B0

    def __post_init__(self):
        if self.n_quad < 4:
            raise ValueError("n_quad must be at least 4")
        if self.b_func is not None and self.period is None:
            raise ValueError("a generic flow requires an explicit period")


def _plane_rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return c, s


def flow(spec: FlowSpec, s, x) -> np.ndarray:
    """X(s; x), broadcast over s (...,) and x (..., 3); x3 wrapped."""
    x = np.asarray(x, float)
    s = np.asarray(s, float)
    cfg = spec.cfg
    if spec.b_func is not None:
        return _orbit_rk4(spec, s, x)
    out = np.empty(np.broadcast_shapes(s.shape + (1,), x.shape))
    span = 2.0 * np.pi * cfg.R0
    if cfg.kind == CYLINDRICAL:
        c, sn = _plane_rotation(-s * cfg.B0 / cfg.R0)
        out[..., 0] = c * x[..., 0] - sn * x[..., 1]
        out[..., 1] = sn * x[..., 0] + c * x[..., 1]
    else:
        out[..., 0] = np.broadcast_to(x[..., 0], out.shape[:-1])
        out[..., 1] = np.broadcast_to(x[..., 1], out.shape[:-1])
    out[..., 2] = (x[..., 2] + s * cfg.B0 + np.pi * cfg.R0) % span - np.pi * cfg.R0
    return out


def _orbit_rk4(spec: FlowSpec, s, x, n_sub: int = 64):
    s = float(s)
    y = np.asarray(x, float).copy()
    h = s / n_sub
    for _ in range(n_sub):
        k1 = spec.b_func(y)
        k2 = spec.b_func(y + 0.5 * h * k1)
        k3 = spec.b_func(y + 0.5 * h * k2)
        k4 = spec.b_func(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def _quad_nodes(spec: FlowSpec):
    # uniform nodes on [0, S): the trapezoid rule for periodic integrands
    return spec.S * np.arange(spec.n_quad) / spec.n_quad


def average_function(spec: FlowSpec, u: Callable, x) -> np.ndarray:
    """<u>(x) = (1/S) int_0^S u(X(s; x)) ds by uniform quadrature."""
    x = np.asarray(x, float)
    nodes = _quad_nodes(spec)
    if spec.b_func is not None:
        acc = np.zeros(x.shape[:-1])
        for s in nodes:
            acc += u(_orbit_rk4(spec, s, x))
        return acc / spec.n_quad
    pts = flow(spec, nodes.reshape(-1, *([1] * (x.ndim - 1))), x)
    return np.mean(u(pts), axis=0)


def average_vector_field(spec: FlowSpec, c: Callable, x) -> np.ndarray:
    """<c>(x) = (1/S) int_0^S dX(-s; X(s; x)) c(X(s; x)) ds.

    Uses the closed-form block pushforward (plane rotation by +s B0/R0,
    identity along x3) of the cylindrical flow; the uniform field is the
    degenerate zero-angle case.  Generic flows are not supported here.
    """
    if spec.b_func is not None:
        raise NotImplementedError("vector averages require the closed-form flow")
    x = np.asarray(x, float)
    cfg = spec.cfg
    nodes = _quad_nodes(spec)
    pts = flow(spec, nodes.reshape(-1, *([1] * (x.ndim - 1))), x)
    vals = c(pts)
    if cfg.kind == CYLINDRICAL:
        theta = (nodes * cfg.B0 / cfg.R0).reshape(-1, *([1] * (x.ndim - 1)))
        ct, st = np.cos(theta), np.sin(theta)
        out = np.empty_like(vals)
        out[..., 0] = ct * vals[..., 0] - st * vals[..., 1]
        out[..., 1] = st * vals[..., 0] + ct * vals[..., 1]
        out[..., 2] = vals[..., 2]
        vals = out
    return np.mean(vals, axis=0)


def fd_gradient(f: Callable, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function on (..., 3) points."""
    x = np.asarray(x, float)
    out = np.empty(x.shape)
    for a in range(3):
        dx = np.zeros(3)
        dx[a] = h
        out[..., a] = (f(x + dx) - f(x - dx)) / (2.0 * h)
    return out


def check_commutation(spec: FlowSpec, alpha: Callable, eta_kind: str, x,
                      fd_step: float = 1e-5) -> float:
    """sup | <grad(alpha) ^ eta> - grad(<alpha>) ^ eta | over the points x.

    Gradients are central differences, averages are flow quadratures; the
    identity holds for angular eta and for gradients of invariants.
    """
    x = np.asarray(x, float)

    def cross_field(pts):
        g = fd_gradient(alpha, pts, fd_step)
        return np.cross(g, angular_field(eta_kind, pts))

    lhs = average_vector_field(spec, cross_field, x)

    def abar(pts):
        return average_function(spec, alpha, pts)

    rhs = np.cross(fd_gradient(abar, x, fd_step), angular_field(eta_kind, x))
    return float(np.max(np.abs(lhs - rhs)))
