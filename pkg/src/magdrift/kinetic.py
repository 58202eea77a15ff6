"""Stochastic-particle solver for the scaled kinetic system.

One particle step of size dt advances the characteristics of

    eps dt f + v.grad_x f + (q/m) E.grad_v f + (q/m)(v ^ B e / eps).grad_v f
        = (1/tau) div_v(sigma grad_v f + v f)

by Strang splitting: half streaming, half electric kick, one exact
magnetic rotation v <- R(-omega_c dt / eps^2, e) v, one exact
Ornstein-Uhlenbeck collision update

    v <- v exp(-dt/(eps tau)) + sqrt(sigma (1 - exp(-2 dt/(eps tau)))) xi,

then the mirrored kick and streaming, a charge deposit and a field solve.
The rotation and collision substeps are exact in law for any dt, so the
only step-size limits are the splitting accuracy guards (streaming CFL and
gyro-angle resolution), both configurable.

Randomness comes from counter-based Philox streams keyed by (seed, role)
with the step index in the counter block, so trajectories are reproducible
and independent of particle iteration order and worker count.  Deposition
runs over fixed-size particle chunks merged in a fixed order, which keeps
the output bitwise identical for any number of workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .entropy import DiagnosticsRecord, h_entropy
from .fields import CYLINDRICAL, MagneticFieldConfig, ScaledParams, rotate
from .grids import ScalarField3D, SlabGrid3D
from .poisson import electric_field, solve_poisson_spectral

DEPOSIT_CHUNK = 1 << 16


class CflError(ValueError):
    """Requested dt violates the streaming or gyro-resolution guard."""


# ---------------------------------------------------------------------------
# initial data


@dataclass(frozen=True)
class InitialData:
    """Concentration profile in the constraint kernel times a velocity law.

    The concentration is a profile N on the flow invariants,
    n(x) = N(R(x3/R0) xbar), lifted to the slab; ``blob`` is a Gaussian
    centered at distance ``center_radius`` from the axis, ``ring`` a
    Gaussian annulus, and ``radial`` the centered Gaussian (a stationary
    state of the limit model).  Velocities are Maxwellian with diffusion
    sigma, optionally shifted (ill-prepared data) by ``velocity_shift``.
    """

    profile: str = "blob"
    center_radius: float = 1.0
    width: float = 0.5
    mass: float = 20.0
    velocity_shift: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.profile not in ("blob", "ring", "radial"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.width <= 0 or self.mass <= 0:
            raise ValueError("width and mass must be positive")

    def invariant_profile(self, ybar, R0: float = 1.0) -> np.ndarray:
        """Unnormalized N on the plane of invariants."""
        y1, y2 = ybar[..., 0], ybar[..., 1]
        if self.profile in ("blob",):
            d2 = (y1 - self.center_radius) ** 2 + y2**2
            return np.exp(-d2 / (2.0 * self.width**2))
        r = np.hypot(y1, y2)
        r0 = 0.0 if self.profile == "radial" else self.center_radius
        return np.exp(-((r - r0) ** 2) / (2.0 * self.width**2))

    def normalization(self, R0: float) -> float:
        """Scale A with int A N = mass over the slab (length 2 pi R0)."""
        if self.profile == "blob":
            plane = 2.0 * np.pi * self.width**2
        else:
            r0 = 0.0 if self.profile == "radial" else self.center_radius
            r = np.linspace(0.0, r0 + 12.0 * self.width, 20001)
            plane = 2.0 * np.pi * np.trapezoid(
                r * np.exp(-((r - r0) ** 2) / (2.0 * self.width**2)), r)
        return self.mass / (plane * 2.0 * np.pi * R0)

    def density(self, x, cfg: MagneticFieldConfig) -> np.ndarray:
        """n_in(x) on the slab, normalized to total mass."""
        x = np.asarray(x, float)
        theta = x[..., 2] / cfg.R0
        c, s = np.cos(theta), np.sin(theta)
        ybar = np.stack([c * x[..., 0] - s * x[..., 1],
                         s * x[..., 0] + c * x[..., 1]], axis=-1)
        return self.normalization(cfg.R0) * self.invariant_profile(ybar, cfg.R0)


@dataclass
class ParticleEnsemble:
    """Weighted samples of the kinetic density on the slab."""

    x: np.ndarray          # (M, 3), x3 wrapped to [-pi R0, pi R0)
    v: np.ndarray          # (M, 3)
    weight: float          # statistical weight, total_mass / M
    R0: float = 1.0

    @property
    def count(self) -> int:
        return self.x.shape[0]

    @property
    def total_mass(self) -> float:
        return self.weight * self.count

    def wrap(self):
        span = 2.0 * np.pi * self.R0
        self.x[:, 2] = (self.x[:, 2] + np.pi * self.R0) % span - np.pi * self.R0


def _rng(seed: int, role: int, block: int = 0) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, role], dtype=np.uint64)
    counter = np.array([0, 0, block & 0xFFFFFFFFFFFFFFFF, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def sample_initial(initial: InitialData, M: int, seed: int,
                   params: ScaledParams, cfg: MagneticFieldConfig) -> ParticleEnsemble:
    """Draw M weighted samples of n_in(x) M(v); reproducible for a seed.

    Positions are sampled exactly on the invariants (x3 uniform on the
    period, ybar from the plane profile, xbar = R(-x3/R0) ybar); the blob
    profile samples its Gaussian directly, the ring and radial profiles
    by rejection inside a bounding annulus.  Velocities are Gaussian with
    covariance sigma I3, plus the configured shift.
    """
    if M < 0:
        raise ValueError("M must be nonnegative")
    rng = _rng(seed, role=0)
    if M == 0:
        return ParticleEnsemble(np.zeros((0, 3)), np.zeros((0, 3)),
                                weight=0.0, R0=cfg.R0)
    x3 = rng.uniform(-np.pi * cfg.R0, np.pi * cfg.R0, M)
    if initial.profile == "blob":
        ybar = rng.normal(0.0, initial.width, (M, 2))
        ybar[:, 0] += initial.center_radius
    else:
        r0 = 0.0 if initial.profile == "radial" else initial.center_radius
        rmax = r0 + 8.0 * initial.width
        ybar = np.empty((M, 2))
        have = 0
        while have < M:
            need = M - have
            cand = rng.uniform(-rmax, rmax, (int(need * 3.5) + 64, 2))
            r = np.hypot(cand[:, 0], cand[:, 1])
            keep = (rng.uniform(0.0, 1.0, cand.shape[0])
                    < np.exp(-((r - r0) ** 2) / (2.0 * initial.width**2)))
            good = cand[keep][:need]
            ybar[have:have + good.shape[0]] = good
            have += good.shape[0]
    theta = x3 / cfg.R0
    c, s = np.cos(theta), np.sin(theta)
    x = np.empty((M, 3))
    x[:, 0] = c * ybar[:, 0] + s * ybar[:, 1]   # xbar = R(-theta) ybar
    x[:, 1] = -s * ybar[:, 0] + c * ybar[:, 1]
    x[:, 2] = x3
    v = rng.normal(0.0, np.sqrt(params.sigma), (M, 3))
    v += np.asarray(initial.velocity_shift, float)
    ens = ParticleEnsemble(x, v, weight=initial.mass / M, R0=cfg.R0)
    ens.wrap()
    return ens


# ---------------------------------------------------------------------------
# deposit and gather


def _cic_indices(grid: SlabGrid3D, x: np.ndarray):
    sx = np.clip((x[:, 0] + grid.L) / grid.hx, 0.0, grid.nx - 1 - 1e-12)
    sy = np.clip((x[:, 1] + grid.L) / grid.hy, 0.0, grid.ny - 1 - 1e-12)
    sz = ((x[:, 2] + np.pi * grid.R0) / grid.hz) % grid.nz
    ix = sx.astype(np.int64)
    iy = sy.astype(np.int64)
    iz = sz.astype(np.int64) % grid.nz
    return ix, iy, iz, sx - ix, sy - iy, sz - iz


def deposit_density(ens: ParticleEnsemble, grid: SlabGrid3D,
                    workers: int = 1) -> ScalarField3D:
    """Cloud-in-cell charge deposit; conserves total mass exactly.

    Plane positions beyond the box are gathered into the boundary cells
    (compact-support data should never get there), x3 wraps periodically.
    The particle array is processed in fixed-size chunks accumulated in a
    fixed order, so results do not depend on the worker count.
    """
    ncells = grid.nx * grid.ny * grid.nz
    chunks = [(lo, min(lo + DEPOSIT_CHUNK, ens.count))
              for lo in range(0, max(ens.count, 1), DEPOSIT_CHUNK)]

    def accumulate(bounds):
        lo, hi = bounds
        if hi <= lo:
            return np.zeros(ncells)
        ix, iy, iz, fx, fy, fz = _cic_indices(grid, ens.x[lo:hi])
        izp = (iz + 1) % grid.nz
        acc = np.zeros(ncells)
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            jx = np.minimum(ix + dx, grid.nx - 1)
            for dy, wy in ((0, 1.0 - fy), (1, fy)):
                jy = np.minimum(iy + dy, grid.ny - 1)
                for jz, wz in ((iz, 1.0 - fz), (izp, fz)):
                    lin = (jx * grid.ny + jy) * grid.nz + jz
                    acc += np.bincount(lin, weights=wx * wy * wz, minlength=ncells)
        return acc

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(accumulate, chunks))
    else:
        parts = [accumulate(c) for c in chunks]
    counts = np.zeros(ncells)
    for p in parts:
        counts += p
    values = counts.reshape(grid.shape) * (ens.weight / grid.cell_volume)
    return ScalarField3D(grid, values)


def gather_field(grid: SlabGrid3D, F: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Trilinear gather of a (3, nx, ny, nz) grid field at particle positions."""
    ix, iy, iz, fx, fy, fz = _cic_indices(grid, x)
    izp = (iz + 1) % grid.nz
    out = np.zeros((x.shape[0], 3))
    for dx, wx in ((0, 1.0 - fx), (1, fx)):
        jx = np.minimum(ix + dx, grid.nx - 1)
        for dy, wy in ((0, 1.0 - fy), (1, fy)):
            jy = np.minimum(iy + dy, grid.ny - 1)
            for jz, wz in ((iz, 1.0 - fz), (izp, fz)):
                w = (wx * wy * wz)[:, None]
                out += w * F[:, jx, jy, jz].T
    return out


# ---------------------------------------------------------------------------
# state and stepping


@dataclass
class KineticState:
    ens: ParticleEnsemble
    params: ScaledParams
    cfg: MagneticFieldConfig
    grid: SlabGrid3D
    seed: int
    t: float = 0.0
    step_index: int = 0
    workers: int = 1
    self_consistent: bool = True
    n_dep: ScalarField3D | None = None
    phi: ScalarField3D | None = None
    E: np.ndarray | None = None

    def refresh_field(self):
        self.n_dep = deposit_density(self.ens, self.grid, self.workers)
        if self.self_consistent:
            self.phi = solve_poisson_spectral(self.n_dep, self.params.eps0,
                                             check_support=False)
            self.E = electric_field(self.phi)
        else:
            self.phi = ScalarField3D(self.grid, np.zeros(self.grid.shape))
            self.E = np.zeros((3,) + self.grid.shape)


def make_kinetic_state(initial: InitialData, M: int, seed: int,
                       params: ScaledParams, cfg: MagneticFieldConfig,
                       grid: SlabGrid3D, workers: int = 1,
                       self_consistent: bool = True) -> KineticState:
    ens = sample_initial(initial, M, seed, params, cfg)
    state = KineticState(ens, params, cfg, grid, seed, workers=workers,
                         self_consistent=self_consistent)
    state.refresh_field()
    return state


def dt_limits(params: ScaledParams, grid: SlabGrid3D, cfg: MagneticFieldConfig,
              cfl_velocity_sigmas: float = 6.0, gyro_angle_max: float = 0.0,
              support_radius: float = 3.0) -> dict:
    """Step-size guards: streaming CFL, optionally gyro-angle resolution.

    The streaming guard bounds dt |v_ref| / eps by the plane cell size with
    v_ref a fixed velocity quantile (a sample-max guard would trip on
    Gaussian tails).  The rotation and collision substeps are exact in law
    for any dt, so no gyro-period stability limit exists; an optional
    gyro-angle cap (set ``gyro_angle_max`` positive) additionally resolves
    the per-step rotation angle, which reduces the splitting error of the
    slow drift dynamics at small epsilon at a steep cost in steps.
    """
    vref = cfl_velocity_sigmas * np.sqrt(params.sigma)
    h = min(grid.hx, grid.hy)
    dt_stream = h * params.epsilon / vref
    if cfg.kind == CYLINDRICAL:
        bmax = cfg.B0 * np.sqrt(1.0 + (support_radius / cfg.R0) ** 2)
    else:
        bmax = cfg.B0
    dt_gyro = np.inf
    if gyro_angle_max > 0:
        dt_gyro = gyro_angle_max * params.epsilon**2 / (cfg.q_over_m * bmax)
    return {"dt_stream": dt_stream, "dt_gyro": dt_gyro,
            "dt": min(dt_stream, dt_gyro)}


def step_kinetic(state: KineticState, dt: float, check_guards: bool = True,
                 refresh: bool = True) -> KineticState:
    """One Strang-split step; mutates and returns the state.

    Substep order: half streaming, half kick, exact rotation, exact
    collision, half kick, half streaming, then charge deposit and field
    refresh.  |v| is invariant under the rotation substep; weights never
    change, so mass is conserved exactly.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0.0:
        if refresh:
            state.refresh_field()
        return state
    p, cfg, grid = state.params, state.cfg, state.grid
    if check_guards:
        lim = dt_limits(p, grid, cfg)
        if dt > lim["dt_stream"] * (1 + 1e-9):
            raise CflError(f"dt={dt} exceeds streaming guard {lim['dt_stream']:.3e}")
    ens = state.ens
    half = 0.5 * dt / p.epsilon

    ens.x += half * ens.v
    ens.wrap()
    E = gather_field(grid, state.E, ens.x)
    kick = (0.5 * dt * p.q_over_m / p.epsilon)
    ens.v += kick * E

    B, e, wc = cfg.magnitude(ens.x), cfg.unit_vector(ens.x), None
    theta = -(cfg.q_over_m * B) * dt / p.epsilon**2
    ens.v = rotate(theta, e, ens.v)

    if dt / (p.epsilon * p.tau) > 1e-15:
        a = np.exp(-dt / (p.epsilon * p.tau))
        b = np.sqrt(p.sigma * (1.0 - a * a))
        xi = _rng(state.seed, role=1, block=state.step_index).normal(
            0.0, 1.0, ens.v.shape)
        ens.v = a * ens.v + b * xi

    ens.v += kick * gather_field(grid, state.E, ens.x)
    ens.x += half * ens.v
    ens.wrap()

    state.t += dt
    state.step_index += 1
    if refresh:
        state.refresh_field()
    return state


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class HistogramSpec:
    """Coarse (x, v) histogram for entropy estimates."""

    nx: int = 16
    ny: int = 16
    nz: int = 8
    nv: int = 12
    v_halfwidth_sigmas: float = 5.0

    @property
    def n_xbins(self) -> int:
        return self.nx * self.ny * self.nz


def _xbin_index(hist: HistogramSpec, grid: SlabGrid3D, x: np.ndarray):
    ix = np.clip(((x[:, 0] + grid.L) / (2 * grid.L) * hist.nx).astype(np.int64),
                 0, hist.nx - 1)
    iy = np.clip(((x[:, 1] + grid.L) / (2 * grid.L) * hist.ny).astype(np.int64),
                 0, hist.ny - 1)
    span = 2.0 * np.pi * grid.R0
    iz = (((x[:, 2] + np.pi * grid.R0) / span * hist.nz).astype(np.int64)) % hist.nz
    return (ix * hist.ny + iy) * hist.nz + iz


def _vbin_index(hist: HistogramSpec, sigma: float, v: np.ndarray):
    vmax = hist.v_halfwidth_sigmas * np.sqrt(sigma)
    iv = np.clip(((v + vmax) / (2 * vmax) * hist.nv).astype(np.int64),
                 0, hist.nv - 1)
    return (iv[:, 0] * hist.nv + iv[:, 1]) * hist.nv + iv[:, 2]


def _vbin_gauss_mass(hist: HistogramSpec, sigma: float) -> np.ndarray:
    """Exact Maxwellian mass of each velocity bin (tails in the edge bins)."""
    vmax = hist.v_halfwidth_sigmas * np.sqrt(sigma)
    edges = np.linspace(-vmax, vmax, hist.nv + 1) / np.sqrt(sigma)
    cdf = ndtr(edges)
    cdf[0], cdf[-1] = 0.0, 1.0
    m1 = np.diff(cdf)
    return (m1[:, None, None] * m1[None, :, None] * m1[None, None, :]).ravel()


def phase_counts(state: KineticState, hist: HistogramSpec):
    """Joint (x-bin, v-bin) counts plus the x-marginal."""
    xb = _xbin_index(hist, state.grid, state.ens.x)
    vb = _vbin_index(hist, state.params.sigma, state.ens.v)
    nv3 = hist.nv**3
    joint = xb * nv3 + vb
    cnt = np.bincount(joint, minlength=hist.n_xbins * nv3)
    return cnt.reshape(hist.n_xbins, nv3), np.bincount(xb, minlength=hist.n_xbins)


def coarse_density(state: KineticState, hist: HistogramSpec) -> np.ndarray:
    """Deposited concentration on the coarse histogram, shape (nx, ny, nz)."""
    xcnt = np.bincount(_xbin_index(hist, state.grid, state.ens.x),
                       minlength=hist.n_xbins)
    vol = _hist_cell_volume(hist, state.grid)
    return (xcnt * state.ens.weight / vol).reshape(hist.nx, hist.ny, hist.nz)


def _hist_cell_volume(hist: HistogramSpec, grid: SlabGrid3D) -> float:
    return (2 * grid.L / hist.nx) * (2 * grid.L / hist.ny) * \
        (2 * np.pi * grid.R0 / hist.nz)


def _entropy_terms(cnt_joint, cnt_x, vmass, w, sigma, vol):
    """(int n ln n, velocity relative entropy) from histogram counts.

    The relative entropy carries the Miller-Madow correction
    (occupied joint cells - occupied x cells)/2 counts, the standard
    first-order bias removal for plug-in entropies of multinomial counts;
    without it sparsely filled velocity bins inflate the estimate by
    an amount that drifts with the support occupancy.
    """
    occ_x = cnt_x > 0
    nlnn = w * float(np.sum(cnt_x[occ_x] * np.log(cnt_x[occ_x] * (w / vol))))
    rows, cols = np.nonzero(cnt_joint)
    c = cnt_joint[rows, cols].astype(float)
    base = cnt_x[rows].astype(float) * vmass[cols]
    ratio = c / base
    plugin = float(np.sum(base * (h_entropy(ratio) - 1.0))) + float(np.sum(cnt_x))
    correction = 0.5 * (rows.size - int(np.count_nonzero(occ_x)))
    rel = sigma * w * max(plugin - correction, 0.0)
    return nlnn, rel


def kinetic_diagnostics(state: KineticState, hist: HistogramSpec,
                        reference=None, n_bootstrap: int = 16) -> DiagnosticsRecord:
    """Diagnostics record from particles, fields, and the coarse histogram.

    The free energy uses the histogram decomposition
    sigma int f ln f + KE = sigma int n ln n + RelEnt_v(f | n M)
    - (3 sigma / 2) ln(2 pi sigma) mass, whose kinetic-energy terms cancel
    exactly, so the noisy velocity part enters only through the relative
    entropy.  ``reference`` is an optional (coarse concentration, E field)
    pair for the modulated energy; without one the initial state of the
    run is the natural reference and must be supplied by the caller.
    Bootstrap resampling of particles gives the standard error of the free
    energy used by the monotonicity acceptance test.
    """
    p = state.params
    ens = state.ens
    w = ens.weight
    vol = _hist_cell_volume(hist, state.grid)
    mass = ens.total_mass
    ke = 0.5 * w * float(np.sum(ens.v**2))
    fe_field = 0.5 * p.eps0 * float(np.sum(state.E**2)) * state.grid.cell_volume

    cnt_joint, cnt_x = phase_counts(state, hist)
    vmass = _vbin_gauss_mass(hist, p.sigma)
    nlnn, rel_v = _entropy_terms(cnt_joint, cnt_x, vmass, w, p.sigma, vol)
    const = 1.5 * p.sigma * np.log(2.0 * np.pi * p.sigma) * mass
    free_energy = p.sigma * nlnn + rel_v - const + fe_field
    entropy = free_energy - ke - fe_field

    if reference is not None:
        ref_n, ref_E = reference
        from .entropy import modulated_energy
        mod = modulated_energy(coarse_density(state, hist), ref_n, state.E,
                               ref_E, p.sigma, vol, state.grid.cell_volume,
                               p.eps0)
    else:
        mod = 0.0

    resid = constraint_residual(state.cfg, state.grid, state.n_dep.values)

    # bootstrap standard error of the histogram part of the free energy
    se = 0.0
    if n_bootstrap > 1 and ens.count > 0:
        xb = _xbin_index(hist, state.grid, ens.x)
        vb = _vbin_index(hist, p.sigma, ens.v)
        nv3 = hist.nv**3
        joint = xb * nv3 + vb
        rng = _rng(state.seed, role=2, block=state.step_index)
        vals = np.empty(n_bootstrap)
        for b in range(n_bootstrap):
            idx = rng.integers(0, ens.count, ens.count)
            jb = joint[idx]
            cj = np.bincount(jb, minlength=hist.n_xbins * nv3).reshape(
                hist.n_xbins, nv3)
            cx = np.bincount(jb // nv3, minlength=hist.n_xbins)
            nl, rv = _entropy_terms(cj, cx, vmass, w, p.sigma, vol)
            vals[b] = p.sigma * nl + rv
        se = float(np.std(vals))

    return DiagnosticsRecord(
        time=state.t, mass=mass, kinetic_energy=ke, field_energy=fe_field,
        free_energy=free_energy, entropy=entropy, modulated_energy=mod,
        rel_entropy_f_vs_nM=rel_v, constraint_residual=resid,
        free_energy_se=se, epsilon=p.epsilon)


def constraint_residual(cfg: MagneticFieldConfig, grid: SlabGrid3D,
                        values: np.ndarray, norm: str = "l2") -> float:
    """Relative size of Be . grad n against |Be| |grad n|.

    Central differences in the plane, periodic differences along x3; the
    ratio is zero (up to noise and discretization) exactly when n is
    constant along the magnetic lines.
    """
    gx = np.gradient(values, grid.hx, axis=0)
    gy = np.gradient(values, grid.hy, axis=1)
    gz = (np.roll(values, -1, axis=2) - np.roll(values, 1, axis=2)) / (2 * grid.hz)
    be = cfg.b_field(grid.nodes())
    bmag = np.linalg.norm(be, axis=-1)
    par = (be[..., 0] * gx + be[..., 1] * gy + be[..., 2] * gz) / bmag
    gmag = np.sqrt(gx**2 + gy**2 + gz**2)
    if norm == "linf":
        den = float(np.max(gmag))
        return float(np.max(np.abs(par))) / den if den > 0 else 0.0
    den = float(np.linalg.norm(gmag))
    return float(np.linalg.norm(par)) / den if den > 0 else 0.0


# ---------------------------------------------------------------------------
# drivers


def run_kinetic(initial: InitialData, params: ScaledParams,
                cfg: MagneticFieldConfig, grid: SlabGrid3D, M: int, T: float,
                seed: int = 1234, dt: float | None = None,
                hist: HistogramSpec | None = None, diag_times=None,
                workers: int = 1, reference=None, quiet: bool = True,
                snapshot_cb=None, checkpoint_cb=None):
    """Time loop with diagnostics at the requested times.

    dt defaults to the guard limit rounded so every diagnostic time is an
    integer number of steps.  ``checkpoint_cb(state, index)`` fires after
    the diagnostics of each requested time.  Returns (records, state).
    """
    hist = hist or HistogramSpec()
    state = make_kinetic_state(initial, M, seed, params, cfg, grid, workers)
    if diag_times is None:
        diag_times = [T * k / 5.0 for k in range(1, 6)]
    diag_times = sorted(set(float(t) for t in diag_times))
    if dt is None:
        dt = dt_limits(params, grid, cfg)["dt"]
    gap = min(np.diff([0.0] + diag_times)) if diag_times else T
    per = max(1, int(np.ceil(gap / dt - 1e-9)))
    dt = gap / per

    records = [kinetic_diagnostics(state, hist, reference)]
    if snapshot_cb is not None:
        snapshot_cb(state)
    for icp, t_target in enumerate(diag_times):
        nsteps = int(round((t_target - state.t) / dt))
        for _ in range(nsteps):
            step_kinetic(state, dt)
        state.t = t_target  # avoid accumulation drift in the time stamp
        records.append(kinetic_diagnostics(state, hist, reference))
        if snapshot_cb is not None:
            snapshot_cb(state)
        if checkpoint_cb is not None:
            checkpoint_cb(state, icp)
        if not quiet:
            r = records[-1]
            print(f"[kinetic] t={r.time:.3f} mass={r.mass:.6f} "
                  f"F={r.free_energy:.6f} relent_v={r.rel_entropy_f_vs_nM:.3e}")
    return records, state


def run_vs_reference(eps: float, initial: InitialData, T: float,
                     checkpoints: Sequence[float], M: int, fluid_run,
                     seed: int = 1234, sigma: float = 1.0, tau: float = 1.0,
                     grid: SlabGrid3D | None = None,
                     cfg: MagneticFieldConfig | None = None,
                     hist: HistogramSpec | None = None, workers: int = 1,
                     quiet: bool = True) -> dict:
    """One epsilon entry of the convergence sweep.

    Runs the standard kinetic time loop to T and, at each checkpoint,
    evaluates the modulated energy, velocity relative entropy and L1
    distance against the fluid reference trajectory.  The Monte Carlo
    noise floor is the modulated-energy functional evaluated between the
    two disjoint half ensembles at the final checkpoint, scaled by 1/4
    (halves carry twice the sampling variance of the full ensemble).
    """
    cfg = cfg or MagneticFieldConfig()
    grid = grid or SlabGrid3D()
    hist = hist or HistogramSpec()
    params = ScaledParams(epsilon=eps, sigma=sigma, tau=tau)

    from .entropy import modulated_energy

    vol = _hist_cell_volume(hist, grid)
    out = {"modulated": [], "rel_entropy_velocity": [], "l1_distance": [],
           "noise_floor": 0.0}
    checkpoints = sorted(float(t) for t in checkpoints)

    def compare(state, icp):
        n_ref, E_ref = fluid_run.coarse_at(icp, hist), fluid_run.field_at(icp)
        n_coarse = coarse_density(state, hist)
        out["modulated"].append(modulated_energy(
            n_coarse, n_ref, state.E, E_ref, params.sigma, vol,
            grid.cell_volume, params.eps0))
        out["l1_distance"].append(float(np.sum(np.abs(n_coarse - n_ref)) * vol))
        if not quiet:
            print(f"[kinetic eps={eps}] t={state.t:.3f} "
                  f"E_mod={out['modulated'][-1]:.4e}")
        if icp == len(checkpoints) - 1:
            out["noise_floor"] = _half_ensemble_floor(state, hist, vol)

    records, _ = run_kinetic(initial, params, cfg, grid, M, T, seed=seed,
                             hist=hist, diag_times=checkpoints,
                             workers=workers, quiet=True, checkpoint_cb=compare)
    out["records"] = records
    out["rel_entropy_velocity"] = [r.rel_entropy_f_vs_nM for r in records[1:]]
    return out


def _half_ensemble_floor(state: KineticState, hist: HistogramSpec,
                         vol: float) -> float:
    """Modulated energy between disjoint half ensembles, scaled to the full."""
    from .entropy import modulated_energy
    ens, cfg, params = state.ens, state.cfg, state.params
    half = ens.count // 2
    parts = []
    for sl in (slice(0, half), slice(half, None)):
        cnt = len(range(*sl.indices(ens.count)))
        sub = KineticState(
            ParticleEnsemble(ens.x[sl], ens.v[sl],
                             ens.weight * ens.count / max(cnt, 1), R0=ens.R0),
            params, cfg, state.grid, state.seed, t=state.t,
            workers=state.workers)
        sub.refresh_field()
        parts.append((coarse_density(sub, hist), sub.E))
    return 0.25 * modulated_energy(parts[0][0], parts[1][0], parts[0][1],
                                   parts[1][1], params.sigma, vol,
                                   state.grid.cell_volume, params.eps0)
