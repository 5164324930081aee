"""Gamma sweep of the t1=9, t2=1, W1=0.0039, W2=1.563 chain plus a size scan.

The size scan at gamma=4.66946 stands in for the thermodynamic-limit runs
(L up to 40000), which are out of desk reach.
"""
import time

from _common import load_spec, parser, print_regimes, write_table
from qpssh.localization import default_thresholds
from qpssh.sweep import finite_size_scan, run_sweep


def main():
    p = parser(__doc__.splitlines()[0], 1000, "results/fig4.csv")
    p.add_argument("--sizes", type=int, nargs="+", default=[1000, 2000, 3000])
    p.add_argument("--skip-sweep", action="store_true")
    args = p.parse_args()
    spec = load_spec("fig4.json", args.n_cells, args.points)
    if not args.skip_sweep:
        t0 = time.perf_counter()
        table = run_sweep(spec, jobs=args.jobs)
        print(f"L={spec.base.L}, {args.points} points, {time.perf_counter() - t0:.0f}s")
        print_regimes(table)
        write_table(table, args.out)
    point = spec.base.replace(gamma=4.66946)
    print("size scan at gamma=4.66946:")
    for r in finite_size_scan(point, args.sizes, jobs=args.jobs):
        print(f"  L={r.L:5d}  NPR_B={r.npr_bulk:.5f}  (eta {default_thresholds(r.L)[1]:.5f})  {r.regime}")


if __name__ == "__main__":
    main()
