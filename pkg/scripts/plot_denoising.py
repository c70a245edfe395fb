"""Render a `crossfusor visualize-denoising` bundle.

Usage: python scripts/plot_denoising.py RUN_DIR [--save out.png]

Top panel: leader/follower histories, ground truth and the intermediate
trajectories x_k. Bottom panel: per-frame noise magnitude |x_k - x0_hat(k)|
as a heatmap over steps. Needs matplotlib (``pip install crossfusor[plot]``).
"""
import argparse
import csv
import json
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np


def read_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--save", type=Path)
    args = ap.parse_args()
    manifest = json.loads((args.run_dir / "manifest.json").read_text())
    head, hist = read_table(args.run_dir / manifest["history_file"])
    col = {name: i for i, name in enumerate(head)}

    fig, (ax, hm) = plt.subplots(2, 1, figsize=(8, 7), constrained_layout=True)
    for name in ("x_lea", "x_stu", "x_fol"):
        ax.plot(hist[:, 0], hist[:, col[name]], label=name)
    steps = manifest["steps"]
    mags = []
    for k in steps:
        _, tab = read_table(args.run_dir / manifest["files"][str(k)])
        ax.plot(tab[:, 1], tab[:, 2], lw=0.8, alpha=0.6, label=f"x_{k}")
        mags.append(tab[:, 3])
    ax.plot(tab[:, 1], tab[:, 4], "k--", label="truth")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("position [ft]")
    ax.legend(fontsize=7, ncol=3)

    im = hm.imshow(np.array(mags), aspect="auto", cmap="magma",
                   extent=[tab[0, 1], tab[-1, 1], len(steps) - 0.5, -0.5])
    hm.set_yticks(range(len(steps)), [str(k) for k in steps])
    hm.set_ylabel("step k")
    hm.set_xlabel("time [s]")
    fig.colorbar(im, ax=hm, label="|x_k - x0_hat| [ft]")
    if args.save:
        fig.savefig(args.save, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main()
