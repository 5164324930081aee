"""W1 sweep of the t1=1, t2=1.3, gamma=0.05 chain with W2 = W1.

Prints the bulk regimes, the winding-number plateaus, where |E|0 leaves and
re-enters 1e-3 and the dNPR0 peaks. Use --n-cells 610 for the edge study.
"""
import time

import numpy as np

from _common import load_spec, parser, print_edge_peaks, print_regimes, write_table
from qpssh.sweep import run_sweep


def main():
    args = parser(__doc__.splitlines()[0], 305, "results/fig1.csv").parse_args()
    spec = load_spec("fig1.json", args.n_cells, args.points)
    t0 = time.perf_counter()
    table = run_sweep(spec, jobs=args.jobs)
    print(f"L={spec.base.L}, {args.points} points, {time.perf_counter() - t0:.0f}s")
    print("bulk regimes:")
    print_regimes(table)
    grid = table.axis_values
    mu = np.rint(table.column("mu_calibrated")).astype(int)
    small = table.column("absE_edge") < 1e-3
    for i in np.flatnonzero(mu[1:] != mu[:-1]):
        print(f"  mu {mu[i]} -> {mu[i + 1]} between W1={grid[i]:.3f} and {grid[i + 1]:.3f}")
    for i in np.flatnonzero(small[1:] != small[:-1]):
        word = "leaves" if small[i] else "returns below"
        print(f"  |E|0 {word} 1e-3 between W1={grid[i]:.3f} and {grid[i + 1]:.3f}")
    print_edge_peaks(table)
    print(f"  max NPR0 = {np.nanmax(table.column('npr_edge')):.4f}")
    write_table(table, args.out)


if __name__ == "__main__":
    main()
