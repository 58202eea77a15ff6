"""Solver for the cylindrical drift-fluid limit model.

The concentration obeys

    dt n + div[(n e / omega_c) ^ grad(sigma(1 + ln n) + (q/m) Phi[n])] = 0

with the self-consistent decaying potential of the slab Poisson problem.
Expanding the divergence turns the log term into geometry: n is advected
along U = E ^ e/B + sigma (m/q) rot(e/B) while growing along the orbit at
rate rot(e/B).E, the discrete analogue of the exponential Jacobian law
det J = exp(-int rot(e/B).E).  A step is one implicit-midpoint Picard
iteration on the electric field: advect with the averaged old/new field,
re-deposit, solve Poisson, repeat to a fixed point.

For concentrations in the constraint kernel, n(x) = N(R(x3/R0) xbar), the
dynamics reduces exactly to the plane:  dt N + div(N R(pi/2) grad K / w0)
with the anisotropic reduced elliptic problem for Phi.  Because
R(pi/2) grad(ln N) . grad N = 0 pointwise, N is equivalently advected by
the incompressible field R(pi/2) grad Phi / B0 alone, which is what the
reduced solver integrates (and exactly how the 3D characteristic velocity
projects onto the invariants).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.ndimage import map_coordinates

from .entropy import DiagnosticsRecord
from .fields import MagneticFieldConfig, ScaledParams
from .grids import Grid2D, ScalarField2D, ScalarField3D, SlabGrid3D
from .poisson import electric_field, reduced_elliptic_solve, solve_poisson_spectral

PAD = 4


class PicardError(RuntimeError):
    """Picard iteration on the electric field failed to converge."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class PicardConfig:
    tol_E: float = 1e-10
    max_iterations: int = 20
    damping: float = 1.0
    floor: float = 1e-12   # relative positivity floor inside logarithms

    def __post_init__(self):
        if self.tol_E <= 0:
            raise ValueError("tol_E must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")


def k_functional(n: ScalarField3D, phi: ScalarField3D, sigma: float,
                 q_over_m: float, floor: float = 1e-12) -> np.ndarray:
    """Generalized chemical potential sigma (1 + ln n) + (q/m) Phi.

    The relative ``floor`` regularizes ln n at the edge of compact
    supports, where n is negligible anyway.
    """
    peak = float(np.max(n.values))
    if peak <= 0:
        raise ValueError("k functional requires a nonzero concentration")
    nf = np.maximum(n.values, floor * peak)
    return sigma * (1.0 + np.log(nf)) + q_over_m * phi.values


# ---------------------------------------------------------------------------
# interpolation on the slab (plane zero continuation, x3 periodic)


def _pad_plane_of(values: np.ndarray) -> np.ndarray:
    out = np.zeros((values.shape[0] + 2 * PAD, values.shape[1] + 2 * PAD)
                   + values.shape[2:])
    out[PAD:-PAD, PAD:-PAD] = values
    return out


class _SlabSampler:
    """Spline coefficients prepared once, evaluated at many point sets.

    The plane is zero-padded (compact data) and prefiltered with mirror
    ends inside the dead margin; the periodic axis is prefiltered and
    evaluated with exact wraparound.  Plane coordinates are clamped into
    the margin, so feet beyond the truncated box read (near) zero.
    """

    def __init__(self, grid: SlabGrid3D, arrays, order: int = 3):
        from scipy.ndimage import spline_filter1d
        self.grid = grid
        self.order = order
        self.coeffs = []
        for a in arrays:
            p = _pad_plane_of(np.asarray(a, float))
            if order > 1:
                p = spline_filter1d(p, order=order, axis=0, mode="mirror")
                p = spline_filter1d(p, order=order, axis=1, mode="mirror")
                p = spline_filter1d(p, order=order, axis=2, mode="grid-wrap")
            self.coeffs.append(p)
        self._shape = self.coeffs[0].shape

    def coords(self, pts: np.ndarray) -> np.ndarray:
        g = self.grid
        span = 2.0 * np.pi * g.R0
        cx = np.clip((pts[..., 0] + g.L) / g.hx + PAD, 1.0, self._shape[0] - 2.0)
        cy = np.clip((pts[..., 1] + g.L) / g.hy + PAD, 1.0, self._shape[1] - 2.0)
        cz = ((pts[..., 2] + np.pi * g.R0) % span) / g.hz
        return np.stack([cx.ravel(), cy.ravel(), cz.ravel()])

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        coords = self.coords(pts)
        out = np.stack([
            map_coordinates(p, coords, order=self.order, mode="grid-wrap",
                            prefilter=False) for p in self.coeffs], axis=-1)
        return out.reshape(pts.shape[:-1] + (len(self.coeffs),))


def interp_slab(grid: SlabGrid3D, values: np.ndarray, pts: np.ndarray,
                order: int = 3) -> np.ndarray:
    """Cubic interpolation with zero plane continuation and periodic x3."""
    sampler = _SlabSampler(grid, [values], order=order)
    return sampler(pts)[..., 0]


# ---------------------------------------------------------------------------
# 3D advection


def advect_step(n: ScalarField3D, E: np.ndarray, dt: float,
                cfg: MagneticFieldConfig, params: ScaledParams,
                rk_substeps: int = 4) -> ScalarField3D:
    """One backward semi-Lagrangian step of the limit transport equation.

    Feet follow U = E ^ e/B + sigma (m/q) rot(e/B), integrated with the
    classical 4-stage scheme (``rk_substeps`` substeps over dt); the
    density is interpolated cubically at the foot and multiplied by exp of
    the trapezoid quadrature of rot(e/B).E along the orbit.  E samples at
    the substep boundaries feed both the first stage and the growth
    quadrature.  Feet leaving the truncated plane read zero (compactly
    supported inflow).
    """
    grid = n.grid
    E_sample = _SlabSampler(grid, [E[0], E[1], E[2]])
    geom = params.sigma / cfg.q_over_m

    def U_from(p, Ep):
        return np.cross(Ep, cfg.e_over_B(p)) + geom * cfg.rot_e_over_B(p)

    pts = grid.nodes().reshape(-1, 3)
    h = -dt / rk_substeps
    Ep = E_sample(pts)
    gvals = [np.sum(cfg.rot_e_over_B(pts) * Ep, axis=-1)]
    for _ in range(rk_substeps):
        k1 = U_from(pts, Ep)
        p2 = pts + 0.5 * h * k1
        k2 = U_from(p2, E_sample(p2))
        p3 = pts + 0.5 * h * k2
        k3 = U_from(p3, E_sample(p3))
        p4 = pts + h * k3
        k4 = U_from(p4, E_sample(p4))
        pts = pts + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        Ep = E_sample(pts)
        gvals.append(np.sum(cfg.rot_e_over_B(pts) * Ep, axis=-1))
    gvals = np.stack(gvals)
    expo = np.trapezoid(gvals, dx=dt / rk_substeps, axis=0)
    vals = interp_slab(grid, n.values, pts) * np.exp(expo)
    vals = vals.reshape(grid.shape)
    np.maximum(vals, 0.0, out=vals)  # clip cubic undershoot at support edge
    return ScalarField3D(grid, vals)


def picard_solve_E(n_prev: ScalarField3D, E_prev: np.ndarray, dt: float,
                   cfg: MagneticFieldConfig, params: ScaledParams,
                   picard: PicardConfig):
    """Fixed point of E -> field of the density advected with the midpoint field.

    Iterates E_{k+1} = (1 - damping) E_k + damping F((E_prev + E_k)/2)
    where F advects n_prev and solves the Poisson problem; stops when
    sup |F - E_k| <= tol_E.  Returns (n_next, phi_next, E_next, info) with
    the residual history and measured contraction ratios; raises
    PicardError when max_iterations is exceeded (the local existence time
    shrinks with the field size, so the caller should reduce dt).
    """
    E_k = E_prev.copy()
    history, ratios = [], []
    for it in range(1, picard.max_iterations + 1):
        E_mid = 0.5 * (E_prev + E_k)
        n_cand = advect_step(n_prev, E_mid, dt, cfg, params)
        phi = solve_poisson_spectral(n_cand, params.eps0, check_support=False)
        E_new = electric_field(phi)
        delta = float(np.max(np.abs(E_new - E_k)))
        history.append(delta)
        if len(history) > 1 and history[-2] > 0:
            ratios.append(history[-1] / history[-2])
        E_k = (1.0 - picard.damping) * E_k + picard.damping * E_new
        if delta <= picard.tol_E:
            info = {"iterations": it, "residuals": history, "ratios": ratios,
                    "contraction": max(ratios) if ratios else 0.0}
            return n_cand, phi, E_k, info
    raise PicardError(
        f"no convergence after {picard.max_iterations} iterations "
        f"(last residual {history[-1]:.3e}); reduce dt", history)


# ---------------------------------------------------------------------------
# diagnostics and the time loop


def fluid_free_energy(n: ScalarField3D, phi: ScalarField3D,
                      params: ScaledParams, floor: float = 1e-12):
    """(sigma int n ln n, (q/2m) int n Phi) on the grid.

    The field part uses the interaction form, which is finite and
    box-insensitive for compact charged data on the slab, where the
    squared-gradient form diverges logarithmically with the truncation.
    Both forms share the conservation identity d/dt E[n] = int k[n] dt n.
    """
    vol = n.grid.cell_volume
    peak = float(np.max(n.values))
    nf = np.maximum(n.values, floor * max(peak, 1e-300))
    ent = params.sigma * float(np.sum(n.values * np.log(nf))) * vol
    inter = 0.5 * params.q_over_m * float(np.sum(n.values * phi.values)) * vol
    return ent, inter


def _grad_norms(f: ScalarField3D):
    g = f.grid
    gx = np.gradient(f.values, g.hx, axis=0)
    gy = np.gradient(f.values, g.hy, axis=1)
    gz = (np.roll(f.values, -1, axis=2) - np.roll(f.values, 1, axis=2)) / (2 * g.hz)
    mag = np.sqrt(gx**2 + gy**2 + gz**2)
    return float(np.max(mag)), float(np.sum(mag)) * g.cell_volume


def coarse_average(n: ScalarField3D, hist) -> np.ndarray:
    """Cell averages of a node-sampled field on the coarse histogram bins.

    Trapezoid rule over each bin (solver nodes sit on bin edges), aligned
    with the particle-histogram cells: histogram bin j covers
    [-L + j H, -L + (j+1) H).  Zero continuation past the plane edge,
    periodic wrap along x3.
    """
    g = n.grid
    fx, fy, fz = g.nx // hist.nx, g.ny // hist.ny, g.nz // hist.nz
    if fx * hist.nx != g.nx or fy * hist.ny != g.ny or fz * hist.nz != g.nz:
        raise ValueError("histogram dims must divide the solver grid")
    vp = np.zeros((g.nx + 1, g.ny + 1, g.nz + 1))
    vp[:-1, :-1, :-1] = n.values
    vp[:-1, :-1, -1] = n.values[:, :, 0]
    win = np.lib.stride_tricks.sliding_window_view(vp, (fx + 1, fy + 1, fz + 1))
    win = win[::fx, ::fy, ::fz]
    wx = np.ones(fx + 1)
    wx[0] = wx[-1] = 0.5
    wy = np.ones(fy + 1)
    wy[0] = wy[-1] = 0.5
    wz = np.ones(fz + 1)
    wz[0] = wz[-1] = 0.5
    kern = wx[:, None, None] * wy[None, :, None] * wz[None, None, :] / (fx * fy * fz)
    return np.einsum("ijkabc,abc->ijk", win, kern)


@dataclass
class FluidResult:
    records: list
    picard_log: list            # rows: (step, iterations, residual, contraction)
    envelope: list              # rows: (t, n_inf, a-priori bound)
    state: tuple                # final (n, phi, E)
    checkpoints: list = field(default_factory=list)  # (n, phi, E) at requested times
    grid: SlabGrid3D | None = None

    def coarse_at(self, icp: int, hist) -> np.ndarray:
        return coarse_average(self.checkpoints[icp][0], hist)

    def field_at(self, icp: int) -> np.ndarray:
        return self.checkpoints[icp][2]


def _fluid_record(t, n, phi, E, cfg, params, floor):
    from .kinetic import constraint_residual
    ent, inter = fluid_free_energy(n, phi, params, floor)
    mass = n.integral()
    ke = 1.5 * params.sigma * mass  # Maxwellian closure of the limit state
    return DiagnosticsRecord(
        time=t, mass=mass, kinetic_energy=ke, field_energy=inter,
        free_energy=ent + inter, entropy=ent, modulated_energy=0.0,
        rel_entropy_f_vs_nM=0.0,
        constraint_residual=constraint_residual(cfg, n.grid, n.values),
        epsilon=0.0)


def solve_fluid(n_in: ScalarField3D, T: float, dt: float,
                cfg: MagneticFieldConfig | None = None,
                params: ScaledParams | None = None,
                picard: PicardConfig | None = None,
                checkpoint_times: Sequence[float] = (),
                quiet: bool = True, adapt_dt: bool = True):
    """March the limit model to time T; records diagnostics every step.

    On Picard non-convergence the step is retried with dt halved (twice)
    when ``adapt_dt`` is set, mirroring the shrinking local existence
    time; the effective step is reported in the Picard log.
    """
    cfg = cfg or MagneticFieldConfig()
    params = params or ScaledParams()
    picard = picard or PicardConfig()
    if np.any(n_in.values < 0):
        raise ValueError("initial concentration must be nonnegative")
    grid = n_in.grid
    n = ScalarField3D(grid, n_in.values.copy())
    phi = solve_poisson_spectral(n, params.eps0)
    E = electric_field(phi)
    cb = cfg.bound_rot_e_over_B()

    checkpoint_times = sorted(float(t) for t in checkpoint_times)
    cps = []
    records = [_fluid_record(0.0, n, phi, E, cfg, params, picard.floor)]
    pic_log, envelope = [], []
    n_inf0 = float(np.max(n.values))
    e_hist_t, e_hist = [0.0], [float(np.max(np.abs(E)))]

    t, step = 0.0, 0
    next_cp = 0
    while t < T - 1e-12:
        dt_step = min(dt, T - t)
        if next_cp < len(checkpoint_times):
            dt_step = min(dt_step, checkpoint_times[next_cp] - t)
        tries, sub = 0, 1
        while True:
            try:
                h = dt_step / sub
                n_new, phi_new, E_new, info = picard_solve_E(
                    n, E, h, cfg, params, picard)
                for _ in range(sub - 1):
                    n_new, phi_new, E_new, info = picard_solve_E(
                        n_new, E_new, h, cfg, params, picard)
                break
            except PicardError:
                tries += 1
                if not adapt_dt or tries > 2:
                    raise
                sub *= 2
        n, phi, E = n_new, phi_new, E_new
        t += dt_step
        step += 1
        e_hist_t.append(t)
        e_hist.append(float(np.max(np.abs(E))))
        records.append(_fluid_record(t, n, phi, E, cfg, params, picard.floor))
        pic_log.append((step, info["iterations"], info["residuals"][-1],
                        info["contraction"], h))
        bound = n_inf0 * np.exp(cb * np.trapezoid(e_hist, e_hist_t))
        envelope.append((t, float(np.max(n.values)), float(bound)))
        if next_cp < len(checkpoint_times) and \
                abs(t - checkpoint_times[next_cp]) < 1e-10:
            cps.append((ScalarField3D(grid, n.values.copy()),
                        ScalarField3D(grid, phi.values.copy()), E.copy()))
            next_cp += 1
        if not quiet:
            r = records[-1]
            print(f"[fluid] t={t:.3f} mass={r.mass:.8f} F={r.free_energy:.8f} "
                  f"picard={info['iterations']}")
    return FluidResult(records, pic_log, envelope, (n, phi, E), cps, grid)


def solve_fluid_reference(initial, T: float, checkpoints: Sequence[float],
                          grid: SlabGrid3D | None = None,
                          cfg: MagneticFieldConfig | None = None,
                          sigma: float = 1.0, dt: float = 0.01,
                          picard: PicardConfig | None = None,
                          quiet: bool = True) -> FluidResult:
    """Fluid trajectory from an InitialData profile (sweep reference)."""
    cfg = cfg or MagneticFieldConfig()
    grid = grid or SlabGrid3D()
    params = ScaledParams(sigma=sigma)
    n0 = ScalarField3D(grid, initial.density(grid.nodes(), cfg))
    return solve_fluid(n0, T, dt, cfg, params, picard,
                       checkpoint_times=checkpoints, quiet=quiet)


# ---------------------------------------------------------------------------
# lift / restrict between the plane of invariants and the slab


def lift(N: ScalarField2D, grid3: SlabGrid3D) -> ScalarField3D:
    """n(x) = N(R(x3/R0) xbar); zero where the rotated point leaves the plane grid."""
    g2 = N.grid
    spline = RectBivariateSpline(g2.axis_x(), g2.axis_y(), N.values, kx=3, ky=3)
    X = grid3.nodes()
    theta = X[..., 2] / grid3.R0
    c, s = np.cos(theta), np.sin(theta)
    y1 = c * X[..., 0] - s * X[..., 1]
    y2 = s * X[..., 0] + c * X[..., 1]
    inside = ((np.abs(y1) <= g2.L - g2.hx) & (np.abs(y2) <= g2.L - g2.hy))
    vals = np.where(inside, spline.ev(y1.ravel(), y2.ravel()).reshape(y1.shape), 0.0)
    return ScalarField3D(grid3, vals)


def restrict(n: ScalarField3D, grid2: Grid2D, n_quad: int | None = None) -> ScalarField2D:
    """Flow average of n evaluated on the x3 = 0 slice of the invariants.

    Equals the plain x3 = 0 slice whenever n satisfies the parallel
    constraint exactly; averaging first suppresses interpolation and
    constraint noise at quadrature accuracy.  The default quadrature count
    is the grid's x3 resolution, which places every node on a grid plane
    (no interpolation across x3).
    """
    g3 = n.grid
    if n_quad is None:
        n_quad = g3.nz
    Y = grid2.nodes()
    S = 2.0 * np.pi * g3.R0  # x3 travel over one period (B0 cancels)
    svals = np.arange(n_quad) / n_quad  # fraction of the period
    acc = np.zeros(grid2.shape)
    for f in svals:
        ang = -2.0 * np.pi * f
        c, s = np.cos(ang), np.sin(ang)
        pts = np.empty(grid2.shape + (3,))
        pts[..., 0] = c * Y[..., 0] - s * Y[..., 1]
        pts[..., 1] = s * Y[..., 0] + c * Y[..., 1]
        pts[..., 2] = f * S
        acc += interp_slab(g3, n.values, pts)
    return ScalarField2D(grid2, acc / n_quad)


# ---------------------------------------------------------------------------
# reduced 2D solver


def _pad_plane(values: np.ndarray) -> np.ndarray:
    out = np.zeros((values.shape[0] + 2 * PAD, values.shape[1] + 2 * PAD))
    out[PAD:-PAD, PAD:-PAD] = values
    return out


def interp_plane(grid: Grid2D, values: np.ndarray, pts: np.ndarray,
                 order: int = 3) -> np.ndarray:
    cx = (pts[..., 0] + grid.L) / grid.hx + PAD
    cy = (pts[..., 1] + grid.L) / grid.hy + PAD
    out = map_coordinates(_pad_plane(values), np.stack([cx.ravel(), cy.ravel()]),
                          order=order, mode="grid-constant", cval=0.0)
    return out.reshape(pts.shape[:-1])


def _plane_gradient(grid: Grid2D, values: np.ndarray):
    from .poisson import _fd4
    return _fd4(values, grid.hx, axis=0), _fd4(values, grid.hy, axis=1)


def advect_step_2d(N: ScalarField2D, phi: ScalarField2D, dt: float,
                   cfg: MagneticFieldConfig, rk_substeps: int = 4) -> ScalarField2D:
    """Semi-Lagrangian step along the incompressible R(pi/2) grad Phi / B0."""
    grid = N.grid
    gx, gy = _plane_gradient(grid, phi.values)
    ux = _pad_plane(-gy / cfg.B0)
    uy = _pad_plane(gx / cfg.B0)

    def U(p):
        cx = (p[..., 0] + grid.L) / grid.hx + PAD
        cy = (p[..., 1] + grid.L) / grid.hy + PAD
        coords = np.stack([cx.ravel(), cy.ravel()])
        out = np.empty(p.shape)
        out[..., 0] = map_coordinates(ux, coords, order=1, mode="grid-constant",
                                      cval=0.0).reshape(p.shape[:-1])
        out[..., 1] = map_coordinates(uy, coords, order=1, mode="grid-constant",
                                      cval=0.0).reshape(p.shape[:-1])
        return out

    pts = grid.nodes().reshape(-1, 2)
    h = -dt / rk_substeps
    for _ in range(rk_substeps):
        k1 = U(pts)
        k2 = U(pts + 0.5 * h * k1)
        k3 = U(pts + 0.5 * h * k2)
        k4 = U(pts + h * k3)
        pts = pts + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    vals = interp_plane(grid, N.values, pts).reshape(grid.shape)
    np.maximum(vals, 0.0, out=vals)
    return ScalarField2D(grid, vals)


def k_functional_2d(N: ScalarField2D, phi: ScalarField2D, sigma: float,
                    q_over_m: float, floor: float = 1e-12) -> np.ndarray:
    peak = float(np.max(N.values))
    nf = np.maximum(N.values, floor * max(peak, 1e-300))
    return sigma * (1.0 + np.log(nf)) + q_over_m * phi.values


def solve_reduced_2d(N_in: ScalarField2D, T: float, dt: float,
                     cfg: MagneticFieldConfig | None = None,
                     params: ScaledParams | None = None,
                     picard: PicardConfig | None = None,
                     checkpoint_times: Sequence[float] = (),
                     quiet: bool = True):
    """Time loop of the reduced plane model with the same Picard structure."""
    cfg = cfg or MagneticFieldConfig()
    params = params or ScaledParams()
    picard = picard or PicardConfig()
    grid = N_in.grid
    N = ScalarField2D(grid, N_in.values.copy())
    phi = reduced_elliptic_solve(N, cfg.R0, params.eps0)
    records = [(0.0, N.integral(), _reduced_free_energy(N, phi, params, picard.floor))]
    pic_log = []
    cps = []
    checkpoint_times = sorted(float(t) for t in checkpoint_times)
    next_cp = 0
    t, step = 0.0, 0
    while t < T - 1e-12:
        dt_step = min(dt, T - t)
        if next_cp < len(checkpoint_times):
            dt_step = min(dt_step, checkpoint_times[next_cp] - t)
        phi_k = phi
        history, ratios = [], []
        converged = False
        for it in range(1, picard.max_iterations + 1):
            phi_mid = ScalarField2D(grid, 0.5 * (phi.values + phi_k.values))
            N_cand = advect_step_2d(N, phi_mid, dt_step, cfg)
            phi_new = reduced_elliptic_solve(N_cand, cfg.R0, params.eps0,
                                             x0=phi_k.values)
            delta = _max_field_delta(grid, phi_new, phi_k)
            history.append(delta)
            if len(history) > 1 and history[-2] > 0:
                ratios.append(history[-1] / history[-2])
            phi_k = ScalarField2D(grid, (1 - picard.damping) * phi_k.values
                                  + picard.damping * phi_new.values)
            if delta <= picard.tol_E:
                converged = True
                break
        if not converged:
            raise PicardError(
                f"reduced solver: no convergence after {picard.max_iterations} "
                f"iterations (residual {history[-1]:.3e})", history)
        N, phi = N_cand, phi_k
        t += dt_step
        step += 1
        records.append((t, N.integral(),
                        _reduced_free_energy(N, phi, params, picard.floor)))
        pic_log.append((step, it, history[-1],
                        max(ratios) if ratios else 0.0, dt_step))
        if next_cp < len(checkpoint_times) and \
                abs(t - checkpoint_times[next_cp]) < 1e-10:
            cps.append(ScalarField2D(grid, N.values.copy()))
            next_cp += 1
        if not quiet:
            print(f"[reduced2d] t={t:.3f} mass={records[-1][1]:.8f} picard={it}")
    return {"records": records, "picard_log": pic_log, "checkpoints": cps,
            "state": (N, phi)}


def _max_field_delta(grid: Grid2D, a: ScalarField2D, b: ScalarField2D) -> float:
    gax, gay = _plane_gradient(grid, a.values)
    gbx, gby = _plane_gradient(grid, b.values)
    return float(max(np.max(np.abs(gax - gbx)), np.max(np.abs(gay - gby))))


def _reduced_free_energy(N: ScalarField2D, phi: ScalarField2D,
                         params: ScaledParams, floor: float) -> float:
    area = N.grid.cell_area
    peak = float(np.max(N.values))
    nf = np.maximum(N.values, floor * max(peak, 1e-300))
    ent = params.sigma * float(np.sum(N.values * np.log(nf))) * area
    inter = 0.5 * params.q_over_m * float(np.sum(N.values * phi.values)) * area
    return ent + inter
