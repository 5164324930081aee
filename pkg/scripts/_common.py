"""Helpers shared by the figure scripts."""
import argparse
import json
from pathlib import Path

import numpy as np

from qpssh.sweep import SweepSpec, detect_transitions, regime_runs

CONFIGS = Path(__file__).resolve().parent / "configs"


def parser(description, default_cells, default_out):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--n-cells", type=int, default=default_cells, help=f"unit cells, L = 2N (default {default_cells})")
    p.add_argument("--points", type=int, default=201, help="grid points (default 201)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    p.add_argument("--out", default=default_out, help="CSV written here")
    return p


def load_spec(name, n_cells, points) -> SweepSpec:
    data = json.loads((CONFIGS / name).read_text())
    data["base"]["n_cells"] = n_cells
    data["num_points"] = points
    return SweepSpec.from_dict(data)


def write_table(table, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        table.write_csv(fh)
    print(f"wrote {path}")


def print_regimes(table):
    for regime, lo, hi in regime_runs(table.axis_values, table.regimes()):
        print(f"  {regime:<13s} {lo:7.3f} .. {hi:7.3f}")


def print_edge_peaks(table):
    peaks = detect_transitions(table.dnpr_edge(), table.axis_values)
    print("  dNPR0 peaks:", ", ".join(f"{p:.3f}" for p in peaks) or "none")
    return peaks


def sign_changes(values):
    d = np.diff(np.asarray(values, dtype=float))
    return int((np.sign(d[1:]) * np.sign(d[:-1]) < 0).sum())
