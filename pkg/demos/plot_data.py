"""
Plot the data.csv written by a CLI run
======================================

Usage: python demos/plot_data.py OUT_DIR [more dirs...]

The first CSV column is used as the x axis and every other column is drawn
against it.  A log scale is chosen when a column spans more than three
decades.  Each figure is saved next to its CSV as data.png.
"""

import csv
import json
import sys
from pathlib import Path

import numpy as np


def load(out_dir):
    with open(Path(out_dir) / "data.csv") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return header, body


def plot(out_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    header, data = load(out_dir)
    report = json.loads((Path(out_dir) / "report.json").read_text())
    fig, ax = plt.subplots(figsize=(6, 4))
    for j in range(1, data.shape[1]):
        ax.plot(data[:, 0], data[:, j], ".-", label=header[j], ms=3)
    pos = data[:, 1:][data[:, 1:] > 0]
    if pos.size and pos.max() / pos.min() > 1e3:
        ax.set_yscale("log")
    ax.set_xlabel(header[0])
    ax.set_title(f"{report['command']} ({report['status']})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    target = Path(out_dir) / "data.png"
    fig.savefig(target, dpi=120)
    plt.close(fig)
    return target


if __name__ == "__main__":
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    for d in sys.argv[1:]:
        print(plot(d))
