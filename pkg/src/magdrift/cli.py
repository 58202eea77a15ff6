"""Batch driver: config in, deterministic CSV / GDSN / PNG artifacts out.

Subcommands: kinetic-run, fluid-run, reduced2d-run, sweep,
poisson-selftest, averaging-selftest.  Every run writes a manifest that
embeds the resolved configuration, the package version, the wall clock
and the produced files; failures leave a FAILED marker in the manifest.
Exit codes: 0 success, 2 configuration or usage error, 3 solver
non-convergence.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, build_objects, effective_text, load_config

SUBCOMMANDS = ("kinetic-run", "fluid-run", "reduced2d-run", "sweep",
               "poisson-selftest", "averaging-selftest")


def _write_manifest(outdir: Path, subcommand: str, cfg: RunConfig, t0: float,
                    outputs, status: str) -> None:
    lines = ["magdrift run manifest",
             f"status: {status}",
             f"subcommand: {subcommand}",
             f"version: {__version__}",
             f"wall_clock_seconds: {time.time() - t0:.3f}",
             "outputs:"]
    lines += [f"  - {name}" for name in outputs]
    lines.append("config:")
    lines += ["  " + ln for ln in effective_text(cfg).splitlines()]
    (outdir / "run_manifest.txt").write_text("\n".join(lines) + "\n")


def _cmd_kinetic(cfg: RunConfig, outdir: Path, quiet: bool):
    from .grids import field3d_to_gdsn
    from .kinetic import run_kinetic
    from .report import render_run_figure, write_diagnostics_csv

    obj = build_objects(cfg)
    outputs = []
    snap_idx = [0]

    def snapshot(state):
        if cfg.snapshot_cadence and snap_idx[0] % cfg.snapshot_cadence == 0:
            name = f"density_{snap_idx[0]:04d}.gdsn"
            field3d_to_gdsn(outdir / name, state.n_dep)
            outputs.append(name)
        snap_idx[0] += 1

    records, state = run_kinetic(
        obj["initial"], obj["params"], obj["field_cfg"], obj["grid"],
        cfg.particles, cfg.kinetic_T, seed=cfg.seed,
        dt=cfg.kinetic_dt or None, hist=obj["hist"],
        diag_times=[t for t in cfg.checkpoints if t <= cfg.kinetic_T],
        workers=cfg.workers, quiet=quiet, snapshot_cb=snapshot)
    write_diagnostics_csv(outdir / "diagnostics.csv", records)
    outputs.append("diagnostics.csv")
    if cfg.figures:
        render_run_figure(outdir / "diagnostics.png", records,
                          f"kinetic run, eps={cfg.epsilon}")
        outputs.append("diagnostics.png")
    return outputs


def _cmd_fluid(cfg: RunConfig, outdir: Path, quiet: bool):
    from .fluid import solve_fluid
    from .grids import ScalarField3D, field3d_to_gdsn
    from .report import render_field_slice, render_run_figure, write_diagnostics_csv
    import csv

    obj = build_objects(cfg)
    grid = obj["grid"]
    n0 = ScalarField3D(grid, obj["initial"].density(grid.nodes(), obj["field_cfg"]))
    res = solve_fluid(n0, cfg.fluid_T, cfg.fluid_dt, obj["field_cfg"],
                      obj["params"], obj["picard"],
                      checkpoint_times=[t for t in cfg.checkpoints
                                        if t <= cfg.fluid_T], quiet=quiet)
    outputs = []
    write_diagnostics_csv(outdir / "diagnostics.csv", res.records)
    outputs.append("diagnostics.csv")
    with open(outdir / "picard_log.csv", "w", newline="\n") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step", "iterations", "final_residual", "contraction_ratio",
                     "dt_effective"])
        for row in res.picard_log:
            wr.writerow([row[0], row[1], repr(float(row[2])),
                         repr(float(row[3])), repr(float(row[4]))])
    outputs.append("picard_log.csv")
    if cfg.snapshot_cadence:
        for i, (ncp, _, _) in enumerate(res.checkpoints):
            name = f"density_cp{i:02d}.gdsn"
            field3d_to_gdsn(outdir / name, ncp)
            outputs.append(name)
    if cfg.figures:
        render_run_figure(outdir / "diagnostics.png", res.records, "fluid run")
        render_field_slice(outdir / "density_final.png", res.state[0],
                           "final concentration, x3 = -pi R0 slice")
        outputs += ["diagnostics.png", "density_final.png"]
    return outputs


def _cmd_reduced2d(cfg: RunConfig, outdir: Path, quiet: bool):
    from .fluid import solve_reduced_2d
    from .grids import Grid2D, ScalarField2D, field2d_to_gdsn
    from .kinetic import InitialData
    from .report import render_selftest_figure
    import csv

    obj = build_objects(cfg)
    g2 = Grid2D(L=cfg.L, nx=cfg.nx, ny=cfg.ny)
    init: InitialData = obj["initial"]
    Y = g2.nodes()
    N0 = ScalarField2D(g2, init.normalization(cfg.R0) * init.invariant_profile(Y))
    res = solve_reduced_2d(N0, cfg.fluid_T, cfg.fluid_dt, obj["field_cfg"],
                           obj["params"], obj["picard"],
                           checkpoint_times=[t for t in cfg.checkpoints
                                             if t <= cfg.fluid_T], quiet=quiet)
    outputs = []
    with open(outdir / "reduced2d_diagnostics.csv", "w", newline="\n") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["time", "mass", "free_energy"])
        for t, m, fe in res["records"]:
            wr.writerow([repr(float(t)), repr(float(m)), repr(float(fe))])
    outputs.append("reduced2d_diagnostics.csv")
    if cfg.snapshot_cadence:
        field2d_to_gdsn(outdir / "reduced2d_final.gdsn", res["state"][0])
        outputs.append("reduced2d_final.gdsn")
    if cfg.figures:
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(5.2, 4.4))
        im = ax.imshow(res["state"][0].values.T, origin="lower",
                       extent=(-g2.L, g2.L, -g2.L, g2.L))
        fig.colorbar(im, ax=ax)
        ax.set_title("reduced 2D concentration, final")
        fig.tight_layout()
        fig.savefig(outdir / "reduced2d_final.png")
        plt.close(fig)
        outputs.append("reduced2d_final.png")
    return outputs


def _cmd_sweep(cfg: RunConfig, outdir: Path, quiet: bool):
    from .entropy import convergence_sweep
    from .report import (render_sweep_figure, write_diagnostics_csv,
                         write_sweep_csv, write_sweep_summary)

    obj = build_objects(cfg)
    result = convergence_sweep(
        cfg.epsilons, obj["initial"], cfg.kinetic_T, cfg.particles,
        kinetic_cfg={"grid": obj["grid"], "cfg": obj["field_cfg"],
                     "hist": obj["hist"], "sigma": cfg.sigma, "tau": cfg.tau,
                     "workers": cfg.workers},
        fluid_cfg={"grid": obj["grid"], "cfg": obj["field_cfg"],
                   "sigma": cfg.sigma, "dt": cfg.fluid_dt,
                   "picard": obj["picard"]},
        checkpoints=[t for t in cfg.checkpoints if t <= cfg.kinetic_T],
        seed=cfg.seed, quiet=quiet)
    outputs = []
    write_sweep_csv(outdir / "sweep.csv", result)
    write_sweep_summary(outdir / "sweep_summary.txt", result)
    outputs += ["sweep.csv", "sweep_summary.txt"]
    for eps, recs in result.records.items():
        name = f"kinetic_eps{eps:g}.csv"
        write_diagnostics_csv(outdir / name, recs)
        outputs.append(name)
    write_diagnostics_csv(outdir / "fluid_reference.csv", result.fluid_records)
    outputs.append("fluid_reference.csv")
    if cfg.figures:
        render_sweep_figure(outdir / "sweep.png", result)
        outputs.append("sweep.png")
    if not quiet:
        print(f"fitted log-log slope: {result.slope:.3f}")
    return outputs


def _cmd_poisson_selftest(cfg: RunConfig, outdir: Path, quiet: bool):
    from .grids import ScalarField3D
    from .heatkernel import xi
    from .poisson import solve_poisson_convolution, solve_poisson_spectral
    from .report import render_selftest_figure

    obj = build_objects(cfg)
    grid = obj["grid"]
    X = grid.nodes()
    labels, values = [], []
    worst = 0.0
    for k, (c, w, amp) in enumerate([((1.0, 0.3), 0.5, 0.5),
                                     ((-0.8, 0.5), 0.7, 0.3),
                                     ((0.0, 0.0), 0.9, 1.0)]):
        d2 = (X[..., 0] - c[0]) ** 2 + (X[..., 1] - c[1]) ** 2
        n = ScalarField3D(grid, np.exp(-d2 / (2 * w * w))
                          * (1 + amp * np.cos(X[..., 2] / grid.R0)))
        ps = solve_poisson_spectral(n, cfg.eps0)
        pc = solve_poisson_convolution(n, cfg.eps0)
        interior = (slice(grid.nx // 8, -grid.nx // 8),
                    slice(grid.ny // 8, -grid.ny // 8), slice(None))
        rel = float(np.max(np.abs(ps.values[interior] - pc.values[interior]))
                    / np.max(np.abs(ps.values)))
        labels.append(f"gaussian {k + 1}")
        values.append(rel)
        worst = max(worst, rel)
    # harmonicity of the fundamental solution at |x| = 1
    x0 = np.array([0.6, 0.5, np.sqrt(1 - 0.61)])
    h = 0.1
    lap = 0.0
    for axis in range(3):
        dx = np.zeros(3)
        dx[axis] = h
        vals = [float(xi(x0 + k * dx)) for k in (2, 1, 0, -1, -2)]
        lap += (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3]
                - vals[4]) / (12 * h * h)
    labels.append("-Lap Xi at |x|=1")
    values.append(abs(lap))
    print(f"poisson-selftest: max cross-solver relative error = {worst:.3e} "
          f"(threshold 1e-4); |Lap Xi| at |x|=1 = {abs(lap):.3e}")
    outputs = []
    if cfg.figures:
        render_selftest_figure(outdir / "poisson_selftest.png", labels, values,
                               1e-4, "Poisson cross-solver self test")
        outputs.append("poisson_selftest.png")
    if worst > 1e-4 or abs(lap) > 1e-4:
        raise RuntimeError("poisson self test exceeded 1e-4")
    return outputs


def _cmd_averaging_selftest(cfg: RunConfig, outdir: Path, quiet: bool):
    import numpy as np

    from .averaging import NU_PARALLEL, NU_THETA, FlowSpec, check_commutation
    from .report import render_selftest_figure

    obj = build_objects(cfg)
    spec = FlowSpec(cfg=obj["field_cfg"])
    rng = np.random.default_rng(cfg.seed)
    pts = rng.uniform(-2.0, 2.0, (400, 3))
    pts = pts[np.hypot(pts[:, 0], pts[:, 1]) > 0.25]
    alphas = {
        "alpha=x1": lambda p: p[..., 0],
        "alpha=smooth": lambda p: np.sin(p[..., 2] / cfg.R0) * p[..., 0] * p[..., 1]
        + np.exp(-(p[..., 0] ** 2 + p[..., 1] ** 2)),
        "alpha=gauss*cos": lambda p: np.exp(-((p[..., 0] - 0.5) ** 2
                                              + p[..., 1] ** 2))
        * np.cos(p[..., 2] / cfg.R0),
    }
    labels, values = [], []
    worst = 0.0
    for name, alpha in alphas.items():
        for eta in (NU_THETA, NU_PARALLEL):
            r = check_commutation(spec, alpha, eta, pts)
            labels.append(f"{name}, {eta}")
            values.append(r)
            worst = max(worst, r)
    print(f"averaging-selftest: max commutation residual = {worst:.3e} "
          "(threshold 1e-6)")
    outputs = []
    if cfg.figures:
        render_selftest_figure(outdir / "averaging_selftest.png", labels, values,
                               1e-6, "curl/average commutation residuals")
        outputs.append("averaging_selftest.png")
    if worst > 1e-6:
        raise RuntimeError("averaging self test exceeded 1e-6")
    return outputs


_HANDLERS = {
    "kinetic-run": _cmd_kinetic,
    "fluid-run": _cmd_fluid,
    "reduced2d-run": _cmd_reduced2d,
    "sweep": _cmd_sweep,
    "poisson-selftest": _cmd_poisson_selftest,
    "averaging-selftest": _cmd_averaging_selftest,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="magdrift",
        description="magnetized-plasma kinetics and its drift-fluid limit")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", default=None, help="path to the config file")
    parser.add_argument("--out-dir", default=None,
                        help="output directory (default from config)")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--epsilon", type=float, default=None,
                        help="epsilon override")
    parser.add_argument("--quiet", action="store_true")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0,) else 0

    t0 = time.time()
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.epsilon is not None:
            if not (0.0 < args.epsilon <= 1.0):
                raise ConfigError("--epsilon must lie in (0, 1]")
            cfg.epsilon = args.epsilon
        if args.out_dir is not None:
            cfg.directory = args.out_dir
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    outdir = Path(cfg.directory)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        outputs = _HANDLERS[args.subcommand](cfg, outdir, args.quiet)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        _write_manifest(outdir, args.subcommand, cfg, t0, [],
                        f"FAILED ({exc})")
        return 2
    except Exception as exc:  # solver non-convergence and kin
        from .fluid import PicardError
        from .kinetic import CflError
        from .poisson import PoissonConvergenceError
        _write_manifest(outdir, args.subcommand, cfg, t0, [],
                        f"FAILED ({exc})")
        if isinstance(exc, (PicardError, PoissonConvergenceError, CflError,
                            RuntimeError)):
            print(f"solver failure: {exc}", file=sys.stderr)
            return 3
        raise
    _write_manifest(outdir, args.subcommand, cfg, t0, outputs, "OK")
    return 0


if __name__ == "__main__":
    sys.exit(main())
