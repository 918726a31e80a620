"""Plot-ready tables and figures from IRF bundle CSVs."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .identify import read_bundle_csv

PLOT_COLUMNS = ("horizon", "series", "point", "lo", "hi")

STYLE = {
    "font.size": 8,
    "axes.titlesize": 8,
    "axes.labelsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "savefig.dpi": 150,
}


def bundle_names(paths: Sequence) -> list[str]:
    """Short names per bundle file: the stem without ``irf_``, prefixed by
    the parent directory when two files share a stem."""
    paths = [Path(p) for p in paths]
    stems = [p.stem[4:] if p.stem.startswith("irf_") else p.stem for p in paths]
    return [f"{p.parent.name}_{s}" if stems.count(s) > 1 else s for p, s in zip(paths, stems)]


def plot_rows(paths: Sequence) -> list[tuple]:
    """Long-format rows (horizon, series, point, lo, hi); the series name is
    ``<bundle name>:<variable>``."""
    rows = []
    for path, stem in zip(paths, bundle_names(paths)):
        labels, arr = read_bundle_csv(path)
        for j, lab in enumerate(labels):
            for h in range(arr.shape[0]):
                rows.append((h, f"{stem}:{lab}", *arr[h, j]))
    return rows


def write_plot_data(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for h, name, pt, lo, hi in rows:
            w.writerow([h, name, repr(float(pt)), repr(float(lo)), repr(float(hi))])
    return path


def plot_bundle(csv_path, out_path, title: str | None = None) -> Path:
    """One panel per variable: point response, percentile band, zero line."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.ticker import MaxNLocator

    labels, arr = read_bundle_csv(csv_path)
    n = len(labels)
    ncols = min(4, n)
    nrows = math.ceil(n / ncols)
    h = np.arange(arr.shape[0])
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(2.2 * ncols, 1.8 * nrows), squeeze=False)
        for j, ax in enumerate(axes.flat):
            if j >= n:
                ax.set_visible(False)
                continue
            ax.fill_between(h, arr[:, j, 1], arr[:, j, 2], color="0.8", lw=0)
            ax.plot(h, arr[:, j, 0], color="k")
            ax.axhline(0.0, color="0.4", lw=0.6, ls="--")
            ax.set_title(labels[j])
            ax.set_xlim(0, h[-1])
            ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        if title:
            fig.suptitle(title, fontsize=9)
        fig.tight_layout()
        fig.savefig(out_path, format="png", metadata={"Software": None})
        plt.close(fig)
    return Path(out_path)


def render_report(paths: Sequence, out_dir) -> list[Path]:
    """Write plot_data.csv plus one PNG per bundle; returns written files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(Path(p) for p in paths)
    written = [write_plot_data(plot_rows(paths), out_dir / "plot_data.csv")]
    for p, name in zip(paths, bundle_names(paths)):
        written.append(plot_bundle(p, out_dir / f"irf_{name}.png", title=name))
    return written
