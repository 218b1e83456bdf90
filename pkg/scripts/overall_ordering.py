"""Early filtering vs same-layer filtering vs no filtering on the synthetic benchmark.

    python scripts/overall_ordering.py --seeds 10 --out results/overall.csv
"""
import argparse

import numpy as np

from earlyfilter.calibrate import CalibrationConfig
from earlyfilter.fileio import write_rows
from earlyfilter.pipeline import evaluate_split, run
from earlyfilter.synthetic import SyntheticBenchmark, generate_synthetic


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--calib-count", type=int, default=10)
    p.add_argument("--calib-prefix", type=int, default=80)
    p.add_argument("--tolerance", type=int, default=3)
    p.add_argument("--early", default="conv1", help="filter layer for the early-filtering run")
    p.add_argument("--extract", default="conv3")
    p.add_argument("--out", default="results/overall.csv")
    args = p.parse_args()

    rows = [["seed", "unfiltered", "same_layer", "early", "early_removed"]]
    for seed in range(args.seeds):
        data = generate_synthetic(SyntheticBenchmark(seed=seed))
        common = dict(extract_layer=args.extract, calib_count=args.calib_count, calib_prefix=args.calib_prefix)
        early = run(data.net, data.reference, data.query,
                    CalibrationConfig(args.early, args.extract, tolerance=args.tolerance), **common)
        same = run(data.net, data.reference, data.query,
                   CalibrationConfig(args.extract, args.extract, tolerance=args.tolerance), **common)
        _, plain = evaluate_split(data.net, data.reference, data.query, args.extract, None,
                                  args.calib_prefix, args.tolerance)
        rows.append([seed, f"{plain.max_f1:.4f}", f"{same.max_f1:.4f}", f"{early.max_f1:.4f}", len(early.mask)])
        print(f"seed {seed}: unfiltered {plain.max_f1:.3f}  same-layer {same.max_f1:.3f}  "
              f"early {early.max_f1:.3f}  (removed {early.mask.sorted()})", flush=True)

    table = np.array([[float(v) for v in r[1:4]] for r in rows[1:]])
    med = np.median(table, axis=0)
    print(f"median: unfiltered {med[0]:.3f}  same-layer {med[1]:.3f}  early {med[2]:.3f}")
    write_rows(args.out, rows)


if __name__ == "__main__":
    main()
