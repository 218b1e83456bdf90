"""Max F1 as a function of the number of calibration triplets.

    python scripts/calibration_count.py --counts 1,5,10,50 --seeds 5
"""
import argparse

import numpy as np

from earlyfilter.calibrate import CalibrationConfig
from earlyfilter.fileio import write_rows
from earlyfilter.pipeline import evaluate_split, run
from earlyfilter.synthetic import SyntheticBenchmark, generate_synthetic


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--counts", default="1,5,10,50")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--calib-prefix", type=int, default=80)
    p.add_argument("--tolerance", type=int, default=3)
    p.add_argument("--filter", default="conv1")
    p.add_argument("--extract", default="conv3")
    p.add_argument("--out", default="results/calibration_count.csv")
    args = p.parse_args()
    counts = [int(c) for c in args.counts.split(",")]

    cfg = CalibrationConfig(args.filter, args.extract, tolerance=args.tolerance)
    rows = [["seed", "calib_count", "removed", "max_f1", "baseline_max_f1"]]
    by_count = {c: [] for c in counts}
    for seed in range(args.seeds):
        data = generate_synthetic(SyntheticBenchmark(seed=seed))
        _, plain = evaluate_split(data.net, data.reference, data.query, args.extract, None,
                                  args.calib_prefix, args.tolerance)
        for count in counts:
            res = run(data.net, data.reference, data.query, cfg, extract_layer=args.extract,
                      calib_count=count, calib_prefix=args.calib_prefix)
            by_count[count].append(res.max_f1)
            rows.append([seed, count, len(res.mask), f"{res.max_f1:.4f}", f"{plain.max_f1:.4f}"])
            print(f"seed {seed} count {count:3d}: max F1 {res.max_f1:.3f} (baseline {plain.max_f1:.3f}, "
                  f"removed {len(res.mask)})", flush=True)
    for count in counts:
        print(f"count {count:3d}: mean max F1 {np.mean(by_count[count]):.3f}")
    write_rows(args.out, rows)


if __name__ == "__main__":
    main()
