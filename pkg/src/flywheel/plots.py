"""Optional SVG figures. Imported lazily so matplotlib stays an extra."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def write_plots(out, records) -> list:
    """Learning curves and the last T_c heatmap; returns the files written."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .harness import read_matrix_csv

    out = Path(out)
    written = []
    cycles = [r["cycle"] for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("test_acc", "refurb_acc", "selection_auc", "gamma"):
        vals = [np.nan if r.get(key) is None else r[key] for r in records]
        ax.plot(cycles, vals, label=key)
    ax.set_xlabel("cycle")
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right")
    fig.tight_layout()
    path = out / "curves.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    written.append(path)

    tc = sorted((out / "matrices").glob("Tc_cycle_*.csv"))
    if tc:
        T = read_matrix_csv(tc[-1])
        K = T.shape[0]
        fig, ax = plt.subplots(figsize=(4, 4))
        im = ax.imshow(T, vmin=0, vmax=1, cmap="viridis")
        ax.set_xticks(range(K), [str(k + 1) for k in range(K)])
        ax.set_yticks(range(K), [str(k + 1) for k in range(K)])
        ax.set_xlabel("observed label")
        ax.set_ylabel("true label")
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        path = out / "Tc_heatmap.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written
