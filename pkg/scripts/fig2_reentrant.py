"""Reentrant bulk localization: t1=1, t2=2.5, gamma=0.2, W2 = -2 cos(3 W1) + 2.

Prints the regime sequence, the IPR0 oscillation count and the |Im E| of the
extended bulk states at the snapshot points.
"""
import time

import numpy as np

from _common import load_spec, parser, print_regimes, sign_changes, write_table
from qpssh.localization import default_thresholds
from qpssh.sweep import run_sweep


def main():
    args = parser(__doc__.splitlines()[0], 500, "results/fig2.csv").parse_args()
    spec = load_spec("fig2.json", args.n_cells, args.points)
    t0 = time.perf_counter()
    table = run_sweep(spec, jobs=args.jobs)
    L = spec.base.L
    print(f"L={L}, {args.points} points, {time.perf_counter() - t0:.0f}s")
    print("bulk regimes:")
    print_regimes(table)
    print(f"  IPR0 derivative sign changes: {sign_changes(table.column('ipr_edge'))}")
    eta = default_thresholds(L)[0]
    for value, profiles in sorted(table.snapshots.items()):
        bulk = [p for p in profiles if not p.is_edge]
        ext = [abs(p.im_E) for p in bulk if p.ipr < eta]
        im = np.array([abs(p.im_E) for p in bulk])
        line = f"  W1={value}: {len(ext)}/{len(bulk)} extended bulk states"
        if ext:
            line += f", max |Im E| {max(ext):.2e} vs median {np.median(im):.2e}"
        print(line)
    write_table(table, args.out)


if __name__ == "__main__":
    main()
