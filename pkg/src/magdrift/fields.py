"""Magnetic geometry, rotations, Maxwellian equilibrium and drift velocities.

The external magnetic field is B(x) e(x) with |e| = 1 and div(B e) = 0.  Two
configurations are supported:

* ``uniform``:     B e = B0 (0, 0, 1)
* ``cylindrical``: B e = B0 (x2/R0, -x1/R0, 1), the tokamak-like field whose
  lines wind on cylinders around the x3 axis.

For the cylindrical field every geometric quantity needed by the drift and
fluid solvers (grad omega_c, the e-Jacobian, rot e, rot(e/B)) has a closed
form; those are provided here so the drift-equivalence and averaging checks
are not polluted by finite-difference noise.  Points are arrays of shape
(..., 3) with x3 understood on the periodic interval [-pi R0, pi R0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIFORM = "uniform"
CYLINDRICAL = "cylindrical"


@dataclass(frozen=True)
class ScaledParams:
    """Scaling knobs of the kinetic system.

    epsilon is the ratio of the cyclotron period to the observation time,
    sigma the velocity diffusion, tau the relaxation time.  Charge, mass and
    vacuum permittivity are normalized (q_over_m = eps0 = 1) by default.
    """

    epsilon: float = 0.1
    sigma: float = 1.0
    tau: float = 1.0
    q_over_m: float = 1.0
    eps0: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError(f"epsilon must be in (0, 1], got {self.epsilon}")
        for name in ("sigma", "tau", "q_over_m", "eps0"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class MagneticFieldConfig:
    """Geometry of the external field B(x) e(x).

    B(x) >= B0 > 0 everywhere by construction, matching the hypothesis under
    which the drift limit holds.  R0 is the reference length of the
    cylindrical winding (ignored for the uniform field).
    """

    kind: str = CYLINDRICAL
    B0: float = 1.0
    R0: float = 1.0
    q_over_m: float = 1.0

    def __post_init__(self):
        if self.kind not in (UNIFORM, CYLINDRICAL):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.B0 <= 0.0:
            raise ValueError("B0 must be positive")
        if self.R0 <= 0.0:
            raise ValueError("R0 must be positive")
        if self.q_over_m <= 0.0:
            raise ValueError("q_over_m must be positive")

    # -- core evaluations ------------------------------------------------

    def b_field(self, x):
        """B e at points x, shape (..., 3)."""
        x = np.asarray(x, float)
        out = np.empty(x.shape)
        if self.kind == UNIFORM:
            out[..., 0] = 0.0
            out[..., 1] = 0.0
            out[..., 2] = self.B0
        else:
            out[..., 0] = self.B0 * x[..., 1] / self.R0
            out[..., 1] = -self.B0 * x[..., 0] / self.R0
            out[..., 2] = self.B0
        return out

    def magnitude(self, x):
        """|B e| = B(x)."""
        x = np.asarray(x, float)
        if self.kind == UNIFORM:
            return np.full(x.shape[:-1], self.B0)
        rho2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return self.B0 * np.sqrt(1.0 + rho2 / self.R0**2)

    def _s(self, x):
        # s = 1 + |xbar|^2 / R0^2, the recurring cylindrical factor
        return 1.0 + (x[..., 0] ** 2 + x[..., 1] ** 2) / self.R0**2

    def unit_vector(self, x):
        """e = B e / B, unit vector along the field."""
        be = self.b_field(x)
        return be / np.linalg.norm(be, axis=-1, keepdims=True)

    def omega_c(self, x):
        """Cyclotron frequency omega_c = (q/m) B(x)."""
        return self.q_over_m * self.magnitude(x)

    # -- closed-form geometry (cylindrical; zero for uniform) -------------

    def grad_omega_c(self, x):
        x = np.asarray(x, float)
        out = np.zeros(x.shape)
        if self.kind == CYLINDRICAL:
            s = self._s(x)
            c = self.q_over_m * self.B0 / (self.R0**2 * np.sqrt(s))
            out[..., 0] = c * x[..., 0]
            out[..., 1] = c * x[..., 1]
        return out

    def curvature(self, x):
        """(e . grad) e, the field-line curvature vector."""
        x = np.asarray(x, float)
        out = np.zeros(x.shape)
        if self.kind == CYLINDRICAL:
            s = self._s(x)
            out[..., 0] = -x[..., 0] / (self.R0**2 * s)
            out[..., 1] = -x[..., 1] / (self.R0**2 * s)
        return out

    def rot_e(self, x):
        """curl of the unit vector e."""
        x = np.asarray(x, float)
        out = np.zeros(x.shape)
        if self.kind == CYLINDRICAL:
            s = self._s(x)
            h3 = s**-1.5
            rho2 = x[..., 0] ** 2 + x[..., 1] ** 2
            out[..., 0] = -x[..., 1] * h3 / self.R0**2
            out[..., 1] = x[..., 0] * h3 / self.R0**2
            out[..., 2] = -2.0 / (self.R0 * np.sqrt(s)) + rho2 * h3 / self.R0**3
        return out

    def e_dot_rot_e(self, x):
        """e . rot e; equals -2 / (R0 s) for the cylindrical field."""
        x = np.asarray(x, float)
        if self.kind == UNIFORM:
            return np.zeros(x.shape[:-1])
        return -2.0 / (self.R0 * self._s(x))

    def e_over_B(self, x):
        """e / B = B e / B^2."""
        be = self.b_field(x)
        b2 = np.sum(be * be, axis=-1, keepdims=True)
        return be / b2

    def rot_e_over_B(self, x):
        """curl(e / B); parallel to the field direction for the cylinder."""
        x = np.asarray(x, float)
        out = np.zeros(x.shape)
        if self.kind == CYLINDRICAL:
            s = self._s(x)
            c = -2.0 / (self.B0 * self.R0 * s**2)
            out[..., 0] = c * x[..., 1] / self.R0
            out[..., 1] = -c * x[..., 0] / self.R0
            out[..., 2] = c
        return out

    def bound_rot_e_over_B(self) -> float:
        """Closed-form sup of |rot(e/B)|, attained on the axis."""
        if self.kind == UNIFORM:
            return 0.0
        return 2.0 / (self.B0 * self.R0)


def eval_field(cfg: MagneticFieldConfig, x):
    """Evaluate (B, e, omega_c) at points x of shape (..., 3)."""
    x = np.asarray(x, float)
    if not np.all(np.isfinite(x)):
        raise ValueError("field evaluation at non-finite point")
    B = cfg.magnitude(x)
    e = cfg.unit_vector(x)
    return B, e, cfg.q_over_m * B


def rotate(theta, e, v):
    """Rotation of angle theta around the unit axis e applied to v.

    R(theta, e) v = cos(theta) (I - e x e) v - sin(theta) (v ^ e) + (v.e) e.
    Norm and the component along e are preserved.  Accepts broadcastable
    arrays: theta (...,), e and v (..., 3).
    """
    theta = np.asarray(theta, float)
    e = np.asarray(e, float)
    v = np.asarray(v, float)
    norm = np.linalg.norm(e, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-10):
        raise ValueError("rotation axis must be a unit vector (|e|-1 > 1e-10)")
    ct = np.cos(theta)[..., None]
    st = np.sin(theta)[..., None]
    ve = np.sum(v * e, axis=-1, keepdims=True)
    return ct * (v - ve * e) - st * np.cross(v, e) + ve * e


def drift_velocities(cfg: MagneticFieldConfig, x, E, sigma: float = 1.0):
    """The three fluid drift velocities at x for electric field E.

    Returns (v_ExB, v_GD, v_CD):

    * v_ExB = E ^ e / B, the electric cross-field drift;
    * v_GD  = -sigma grad(omega_c) ^ e / omega_c^2, the magnetic gradient
      drift (velocity-averaged against the Maxwellian, whence sigma);
    * v_CD  = -sigma ((e.grad) e) ^ e / omega_c, the curvature drift.

    For the uniform field v_GD = v_CD = 0 exactly.
    """
    x = np.asarray(x, float)
    E = np.asarray(E, float)
    B = cfg.magnitude(x)[..., None]
    e = cfg.unit_vector(x)
    v_exb = np.cross(E, e) / B
    if cfg.kind == UNIFORM:
        return v_exb, np.zeros(x.shape), np.zeros(x.shape)
    wc = cfg.omega_c(x)[..., None]
    v_gd = -sigma * np.cross(cfg.grad_omega_c(x), e) / wc**2
    v_cd = -sigma * np.cross(cfg.curvature(x), e) / wc
    return v_exb, v_gd, v_cd


def maxwellian(v, sigma: float):
    """Maxwellian M(v) = exp(-|v|^2 / 2 sigma) / (2 pi sigma)^{3/2}."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    v = np.asarray(v, float)
    v2 = np.sum(v * v, axis=-1)
    return np.exp(-v2 / (2.0 * sigma)) / (2.0 * np.pi * sigma) ** 1.5
