"""Delimited outputs and the figures rendered alongside them.

CSV files carry a header row, '.' decimal points, full-precision repr
floats and LF line endings, so identical runs produce byte-identical
files.  Figures are rendered with the Agg backend next to each CSV.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .entropy import DiagnosticsRecord, SweepResult

plt.rcParams["figure.dpi"] = 110
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_diagnostics_csv(path, records) -> None:
    with open(path, "w", newline="\n") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(DiagnosticsRecord.CSV_FIELDS)
        for rec in records:
            wr.writerow([_fmt(v) for v in rec.csv_row()])


def write_sweep_csv(path, result: SweepResult) -> None:
    with open(path, "w", newline="\n") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SweepResult.TABLE_FIELDS)
        for row in result.table_rows():
            wr.writerow([_fmt(v) for v in row])


def write_sweep_summary(path, result: SweepResult) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(f"fitted_slope = {_fmt(result.slope)}\n")
        fh.write(f"fitted_intercept = {_fmt(result.intercept)}\n")
        fh.write("# slope of log(modulated energy at final checkpoint) vs log(epsilon);\n")
        fh.write("# the energy itself is fitted (not its square root), so the\n")
        fh.write("# sqrt-epsilon theoretical bound corresponds to slope 0.5\n")
        for eps in result.epsilons:
            fh.write(f"included[{_fmt(eps)}] = {int(result.included[eps])}\n")


def render_run_figure(path, records, title: str) -> None:
    t = [r.time for r in records]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6.4))
    ax = axes[0, 0]
    ax.plot(t, [r.mass for r in records], marker=".")
    ax.set_ylabel("mass")
    ax = axes[0, 1]
    ax.plot(t, [r.free_energy for r in records], marker=".", label="free energy")
    ax.plot(t, [r.kinetic_energy for r in records], marker=".", label="kinetic")
    ax.plot(t, [r.field_energy for r in records], marker=".", label="field")
    ax.legend(fontsize=8)
    ax.set_ylabel("energies")
    ax = axes[1, 0]
    ax.semilogy(t, np.maximum([r.rel_entropy_f_vs_nM for r in records], 1e-300),
                marker=".", label="rel. entropy f|nM")
    ax.semilogy(t, np.maximum([r.modulated_energy for r in records], 1e-300),
                marker=".", label="modulated energy")
    ax.legend(fontsize=8)
    ax.set_xlabel("t")
    ax = axes[1, 1]
    ax.semilogy(t, np.maximum([r.constraint_residual for r in records], 1e-300),
                marker=".")
    ax.set_ylabel("constraint residual")
    ax.set_xlabel("t")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_sweep_figure(path, result: SweepResult) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    eps = np.array(result.epsilons, float)
    emod = np.array([result.modulated[e][-1] for e in result.epsilons])
    floors = np.array([result.noise_floor[e] for e in result.epsilons])
    inc = np.array([result.included[e] for e in result.epsilons], bool)
    ax.loglog(eps[inc], emod[inc], "o", label="modulated energy (fit)")
    if np.any(~inc):
        ax.loglog(eps[~inc], emod[~inc], "x", label="below noise floor")
    ax.loglog(eps, floors, "k--", alpha=0.6, label="MC noise floor")
    if np.isfinite(result.slope):
        xs = np.array([eps.min(), eps.max()])
        ax.loglog(xs, np.exp(result.intercept) * xs**result.slope, "-",
                  alpha=0.7, label=f"fit slope {result.slope:.2f}")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("modulated energy at final checkpoint")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_field_slice(path, field3d, title: str, z_index: int = 0) -> None:
    fig, ax = plt.subplots(figsize=(5.4, 4.6))
    g = field3d.grid
    im = ax.imshow(field3d.values[:, :, z_index].T, origin="lower",
                   extent=(-g.L, g.L, -g.L, g.L), cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_selftest_figure(path, labels, values, threshold, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    xs = np.arange(len(labels))
    ax.bar(xs, np.maximum(values, 1e-300))
    ax.set_yscale("log")
    ax.axhline(threshold, color="r", ls="--", label=f"threshold {threshold:g}")
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
