"""Elliptic solvers: cross-oracle, residuals, field bounds, reduced operator."""

import numpy as np
import pytest
import sympy as sp

from magdrift.grids import (Grid2D, ScalarField2D, ScalarField3D, SlabGrid3D,
                            read_gdsn, write_gdsn)
from magdrift.heatkernel import xi
from magdrift.poisson import (PoissonConvergenceError, _convolve_direct,
                              electric_field, reduced_elliptic_solve,
                              solve_poisson_convolution, solve_poisson_spectral,
                              spectral_residual, verify_field_bounds)

GRID = SlabGrid3D(L=4.0, nx=64, ny=64, nz=16)


def gaussian_density(grid, center, width, amp_z, phase=0.0):
    X = grid.nodes()
    d2 = (X[..., 0] - center[0]) ** 2 + (X[..., 1] - center[1]) ** 2
    mod = 1.0 + amp_z * np.cos(X[..., 2] / grid.R0 + phase)
    return ScalarField3D(grid, np.exp(-d2 / (2 * width**2)) * mod)


FAMILIES = [((0.5, 0.3), 0.50, 0.5), ((-0.4, 0.2), 0.55, 0.3),
            ((0.0, 0.0), 0.60, 1.0)]


def test_cross_solver_oracle_three_gaussians():
    interior = (slice(8, -8), slice(8, -8), slice(None))
    for center, width, amp in FAMILIES:
        n = gaussian_density(GRID, center, width, amp)
        ps = solve_poisson_spectral(n)
        pc = solve_poisson_convolution(n)
        rel = np.max(np.abs(ps.values[interior] - pc.values[interior]))
        rel /= np.max(np.abs(ps.values))
        assert rel <= 1e-4, (center, width, amp, rel)


def test_zero_density_zero_potential():
    n = ScalarField3D(GRID, np.zeros(GRID.shape))
    assert np.all(solve_poisson_spectral(n).values == 0.0)
    assert np.all(solve_poisson_convolution(n).values == 0.0)


def test_linearity():
    n1 = gaussian_density(GRID, (0.5, 0.0), 0.5, 0.4)
    n2 = gaussian_density(GRID, (-0.3, 0.4), 0.6, 0.0)
    p1 = solve_poisson_spectral(n1)
    p2 = solve_poisson_spectral(n2)
    p12 = solve_poisson_spectral(ScalarField3D(GRID, n1.values + n2.values))
    scale = np.max(np.abs(p12.values))
    assert np.max(np.abs(p12.values - p1.values - p2.values)) <= 1e-12 * scale


def test_solver_operator_residual():
    n = gaussian_density(GRID, (0.4, -0.2), 0.55, 0.6)
    phi = solve_poisson_spectral(n)
    res = spectral_residual(phi, n)
    assert res["mode_perp_residual"] <= 1e-8
    assert res["mode0_consistency"] <= 1e-8


def test_convolution_guard():
    big = SlabGrid3D(L=4.0, nx=128, ny=64, nz=16)
    n = ScalarField3D(big, np.zeros(big.shape))
    with pytest.raises(ValueError):
        solve_poisson_convolution(n)


def test_fft_equals_direct_summation():
    grid = SlabGrid3D(L=3.0, nx=16, ny=16, nz=8)
    X = grid.nodes()
    vals = np.exp(-((X[..., 0] - 0.4) ** 2 + X[..., 1] ** 2) / 0.8) \
        * (1 + 0.3 * np.sin(X[..., 2]))
    n = ScalarField3D(grid, vals)
    phi = solve_poisson_convolution(n)
    pts = [(2, 3, 1), (8, 8, 0), (12, 5, 6), (0, 0, 0), (15, 15, 7)]
    direct = _convolve_direct(n, points=pts)
    got = np.array([phi.values[i, j, k] for (i, j, k) in pts])
    np.testing.assert_allclose(got, direct, atol=1e-13 * np.max(np.abs(direct)))


def test_point_source_matches_fundamental_solution():
    # single filled cell: away from the source the potential approaches
    # Xi times the source mass (harmonic correction terms are O(h^4))
    grid = SlabGrid3D(L=4.0, nx=32, ny=32, nz=16)
    vals = np.zeros(grid.shape)
    i0, j0, k0 = 16, 16, 8  # node at the origin... offset to keep |xbar| > 0
    vals[i0, j0, k0] = 1.0
    n = ScalarField3D(grid, vals)
    phi = solve_poisson_convolution(n)
    mass = grid.cell_volume
    x0 = np.array([grid.axis_x()[i0], grid.axis_y()[j0], grid.axis_z()[k0]])
    for (i, j, k) in [(24, 16, 8), (16, 26, 12), (8, 8, 4)]:
        x = np.array([grid.axis_x()[i], grid.axis_y()[j], grid.axis_z()[k]])
        expected = float(xi(x - x0, R0=grid.R0)) * mass
        assert phi.values[i, j, k] == pytest.approx(expected, rel=2e-3)


def test_electric_field_constant_potential():
    phi = ScalarField3D(GRID, np.full(GRID.shape, 3.7))
    E = electric_field(phi)
    np.testing.assert_allclose(E, 0.0, atol=1e-12)


def test_electric_field_manufactured():
    z = GRID.axis_z()
    phi = ScalarField3D(GRID, np.broadcast_to(np.sin(z), GRID.shape).copy())
    E = electric_field(phi)
    np.testing.assert_allclose(E[2], np.broadcast_to(-np.cos(z), GRID.shape),
                               atol=1e-13)
    np.testing.assert_allclose(E[:2], 0.0, atol=1e-13)


def _grad_inf(E, grid):
    out = 0.0
    for c in range(3):
        gx = np.gradient(E[c], grid.hx, axis=0)
        gy = np.gradient(E[c], grid.hy, axis=1)
        gz = (np.roll(E[c], -1, axis=2) - np.roll(E[c], 1, axis=2)) / (2 * grid.hz)
        out = max(out, float(np.max(np.abs(gx))), float(np.max(np.abs(gy))),
                  float(np.max(np.abs(gz))))
    return out


def test_field_bounds_over_width_family():
    # shrinking widths: the ratios |E|/( |n|_inf + |n|_1 ) and the
    # log-Lipschitz gradient ratio stay bounded by a common constant
    ratios_E, ratios_G = [], []
    for width in (0.8, 0.565, 0.4):
        n = gaussian_density(GRID, (0.2, 0.1), width, 0.4)
        phi = solve_poisson_spectral(n)
        E = electric_field(phi)
        gn = _grad_inf(np.stack([n.values] * 3), GRID)
        rep = verify_field_bounds(n, E, grad_n_inf=gn,
                                  grad_E_inf=_grad_inf(E, GRID))
        ratios_E.append(rep["ratio_E"])
        ratios_G.append(rep["ratio_gradE"])
    assert max(ratios_E) < 1.0, ratios_E
    assert max(ratios_G) < 1.0, ratios_G
    assert max(ratios_E) < 3 * min(ratios_E)


def test_field_scales_linearly():
    n = gaussian_density(GRID, (0.3, 0.0), 0.5, 0.3)
    E1 = electric_field(solve_poisson_spectral(n))
    n2 = ScalarField3D(GRID, 2.0 * n.values)
    E2 = electric_field(solve_poisson_spectral(n2))
    assert np.max(np.abs(E2 - 2 * E1)) <= 1e-12 * np.max(np.abs(E2))


def test_zero_density_zero_field_energy():
    n = ScalarField3D(GRID, np.zeros(GRID.shape))
    E = electric_field(solve_poisson_spectral(n))
    assert float(np.sum(E * E)) == 0.0


# ---------------------------------------------------------------------------
# reduced anisotropic 2D operator


def _manufactured(R0):
    y1, y2 = sp.symbols("y1 y2", real=True)
    Phi = sp.exp(-(y1**2 + y2**2)) * (1 + y1 * y2 / 2)
    A11 = 1 + y2**2 / R0**2
    A12 = -y1 * y2 / R0**2
    A22 = 1 + y1**2 / R0**2
    f1 = A11 * sp.diff(Phi, y1) + A12 * sp.diff(Phi, y2)
    f2 = A12 * sp.diff(Phi, y1) + A22 * sp.diff(Phi, y2)
    N = -(sp.diff(f1, y1) + sp.diff(f2, y2))
    return (sp.lambdify((y1, y2), N, "numpy"),
            sp.lambdify((y1, y2), Phi, "numpy"))


def test_reduced_solve_zero():
    g2 = Grid2D(L=4.0, nx=33, ny=33)
    out = reduced_elliptic_solve(ScalarField2D(g2, np.zeros(g2.shape)),
                                 boundary="zero")
    np.testing.assert_allclose(out.values, 0.0, atol=1e-14)


def test_reduced_solve_manufactured_second_order():
    fN, fP = _manufactured(1.0)
    errs = []
    for nn in (33, 65, 129):
        g2 = Grid2D(L=4.0, nx=nn, ny=nn)
        Y = g2.nodes()
        N = ScalarField2D(g2, fN(Y[..., 0], Y[..., 1]))
        sol = reduced_elliptic_solve(N, R0=1.0, boundary="zero", tol=1e-12)
        errs.append(float(np.max(np.abs(sol.values - fP(Y[..., 0], Y[..., 1])))))
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(o > 1.8 for o in orders), (errs, orders)


def test_reduced_solve_isotropic_limit():
    # R0 -> infinity: the operator becomes the plain Laplacian
    g2 = Grid2D(L=4.0, nx=65, ny=65)
    Y = g2.nodes()
    N = ScalarField2D(g2, np.exp(-2 * (Y[..., 0] ** 2 + Y[..., 1] ** 2)))
    big = reduced_elliptic_solve(N, R0=1e6, boundary="zero", tol=1e-12)
    fN, fP = None, None
    iso = reduced_elliptic_solve(N, R0=1e12, boundary="zero", tol=1e-12)
    assert np.max(np.abs(big.values - iso.values)) <= 1e-6 * np.max(np.abs(iso.values))


def test_reduced_solve_nonconvergence_raises():
    g2 = Grid2D(L=4.0, nx=65, ny=65)
    Y = g2.nodes()
    N = ScalarField2D(g2, np.exp(-2 * (Y[..., 0] ** 2 + Y[..., 1] ** 2)))
    with pytest.raises(PoissonConvergenceError):
        reduced_elliptic_solve(N, boundary="zero", tol=1e-12, max_iter=2)


def test_reduced_freespace_matches_lifted_slab_solution():
    # the reduced solution with free-space boundary data equals the x3 = 0
    # restriction of the 3D potential of the lifted density
    from magdrift.fluid import lift
    g2 = Grid2D(L=4.0, nx=64, ny=64)
    Y = g2.nodes()
    N = ScalarField2D(g2, np.exp(-((Y[..., 0] - 1.0) ** 2 + Y[..., 1] ** 2)
                                 / (2 * 0.6**2)))
    phi2 = reduced_elliptic_solve(N, R0=1.0, boundary="freespace")
    n3 = lift(N, GRID)
    phi3 = solve_poisson_spectral(n3)
    # compare on the x3 = 0 slice (grid z index of x3 = 0 is nz//2)
    k0 = GRID.nz // 2
    assert abs(GRID.axis_z()[k0]) < 1e-12
    diff = np.abs(phi2.values - phi3.values[:, :, k0])
    assert np.max(diff) <= 2e-3 * np.max(np.abs(phi3.values)), np.max(diff)


# ---------------------------------------------------------------------------
# GDSN snapshots


def test_gdsn_roundtrip(tmp_path):
    vals = np.random.default_rng(0).normal(size=(6, 5, 4))
    path = tmp_path / "snap.gdsn"
    write_gdsn(path, vals, (2.0, 3.0, 6.28))
    back, extents = read_gdsn(path)
    np.testing.assert_array_equal(back, vals)
    assert extents == [2.0, 3.0, 6.28]
    raw = path.read_bytes()
    assert raw[:4] == b"GDSN"
    # little-endian u32 version 1, ndim 3
    assert raw[4:12] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")


def test_gdsn_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.gdsn"
    p.write_bytes(b"NOPE" + bytes(64))
    with pytest.raises(ValueError):
        read_gdsn(p)
