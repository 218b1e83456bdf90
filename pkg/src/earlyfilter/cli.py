"""Command line: synth, calibrate, evaluate, sweep, heatmap, randfilter."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline
from .calibrate import random_filter, read_mask, write_mask
from .config import RunConfig, dump_config, load_config
from .data import load_traverse, save_traverse
from .engine import load_network, save_network, forward
from .fileio import atomic_write, write_rows
from .recognize import activation_heatmap, write_grid_csv, write_matches_csv, write_pgm
from .synthetic import SyntheticBenchmark, generate_synthetic


def _add_common(p: argparse.ArgumentParser, *, data=True):
    if data:
        p.add_argument("--net", required=True, help="FMFNET1 network file")
        p.add_argument("--ref", required=True, help="reference traverse directory")
        p.add_argument("--query", required=True, help="query traverse directory")
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--filter-layer")
    p.add_argument("--extract-layer")
    p.add_argument("--tolerance", type=int, help="ground-truth tolerance in frames")
    p.add_argument("--window", type=int, help="quality-score exclusion half-width in frames")
    p.add_argument("--calib-prefix", type=int, help="frames held out for calibration (default 40%%)")
    p.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="earlyfilter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic condition-shift benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-places", type=int, default=SyntheticBenchmark.n_places)

    p = sub.add_parser("calibrate", help="calibrate a feature-map filter")
    _add_common(p)
    p.add_argument("--calib-count", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--halt-fraction", type=float)
    p.add_argument("--consensus-threshold", type=float)

    p = sub.add_parser("evaluate", help="evaluate place recognition with an optional mask")
    _add_common(p)
    p.add_argument("--mask", help="mask file from 'calibrate'; omit for no filtering")

    p = sub.add_parser("sweep", help="calibrate and evaluate every filter/extract layer pair")
    _add_common(p)
    p.add_argument("--calib-count", default="1,5,50", help="comma-separated calibration set counts")
    p.add_argument("--layers", help="comma-separated conv layers to sweep (default: all)")

    p = sub.add_parser("heatmap", help="activation peak heatmaps with and without a mask")
    _add_common(p, data=False)
    p.add_argument("--net", required=True)
    p.add_argument("--query", required=True, help="traverse directory holding the frame")
    p.add_argument("--mask", required=True)
    p.add_argument("--frame", type=int, default=0)

    p = sub.add_parser("randfilter", help="evaluate a random mask (control run)")
    _add_common(p)
    p.add_argument("--count", type=int, help="number of maps to remove")
    p.add_argument("--mask", help="match the size of this mask instead of --count")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: getattr(args, k, None) for k in (
        "seed", "filter_layer", "extract_layer", "tolerance", "window", "calib_prefix",
        "batch_size", "halt_fraction", "consensus_threshold")}
    count = getattr(args, "calib_count", None)
    if isinstance(count, int):
        overrides["calib_count"] = count
    return cfg.update(**overrides)


def _load(args, cfg: RunConfig):
    net = load_network(args.net)
    ref = load_traverse(args.ref, condition="reference", mean=cfg.mean)
    query = load_traverse(args.query, condition="query", mean=cfg.mean)
    return net, ref, query


def _report(out: Path, reports, curve) -> None:
    curve.write_csv(out / "pr.csv")
    write_matches_csv(reports, out / "matches.csv")
    print(f"max_f1={curve.max_f1:.6f}")


def cmd_synth(args) -> int:
    data = generate_synthetic(SyntheticBenchmark(seed=args.seed, n_places=args.n_places))
    out = Path(args.out_dir)
    save_traverse(data.reference, out / "ref")
    save_traverse(data.query, out / "query")
    save_network(data.net, out / "net.fmf")
    atomic_write(out / "benchmark.txt",
                 f"seed={args.seed}\nn_places={args.n_places}\n"
                 f"planted={','.join(map(str, data.planted))}\ndelta_ratio={data.delta_ratio:.4f}\n")
    print(f"planted={','.join(map(str, data.planted))} delta_ratio={data.delta_ratio:.2f}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    ccfg = cfg.calibration()
    net, ref, query = _load(args, cfg)
    prefix = cfg.prefix(len(ref))
    mask, traces = pipeline.calibrate_prefix(net, ref, query, ccfg, cfg.calib_count, prefix)
    out = Path(args.out_dir)
    write_mask(mask, out / "mask.txt")
    for i, t in enumerate(traces):
        t.write_csv(out / "traces" / f"trace_{i:03d}.csv")
    atomic_write(out / "config.txt", dump_config(cfg))
    n_maps = net.output_shape(ccfg.filter_layer)[0]
    print(f"removed={len(mask)}/{n_maps} maps={','.join(map(str, mask.sorted()))}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    net, ref, query = _load(args, cfg)
    mask = read_mask(args.mask) if args.mask else None
    extract = cfg.extract_layer or net.conv_names()[-1]
    reports, curve = pipeline.evaluate_split(net, ref, query, extract, mask, cfg.prefix(len(ref)),
                                             cfg.tolerance, cfg.window)
    _report(Path(args.out_dir), reports, curve)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    net, ref, query = _load(args, cfg)
    counts = [int(v) for v in args.calib_count.split(",") if v.strip()]
    convs = args.layers.split(",") if args.layers else net.conv_names()
    order = {name: net.index(name) for name in convs}
    prefix = cfg.prefix(len(ref))
    baseline = {}
    for extract in convs:
        _, curve = pipeline.evaluate_split(net, ref, query, extract, None, prefix, cfg.tolerance, cfg.window)
        baseline[extract] = curve.max_f1
    rows = [["calib_count", "filter_layer", "extract_layer", "removed", "max_f1", "baseline_max_f1"]]
    for count in counts:
        for filt in convs:
            for extract in convs:
                if order[filt] > order[extract]:
                    continue
                run_cfg = cfg.update(filter_layer=filt, extract_layer=extract)
                res = pipeline.run(net, ref, query, run_cfg.calibration(), extract_layer=extract,
                                   calib_count=count, calib_prefix=prefix, window=cfg.window)
                rows.append([count, filt, extract, len(res.mask), f"{res.max_f1:.6f}", f"{baseline[extract]:.6f}"])
                print(f"calib_count={count} filter={filt} extract={extract} max_f1={res.max_f1:.4f} "
                      f"baseline={baseline[extract]:.4f}", flush=True)
    write_rows(Path(args.out_dir) / "sweep.csv", rows)
    return 0


def cmd_heatmap(args) -> int:
    cfg = _config(args)
    net = load_network(args.net)
    traverse = load_traverse(args.query, mean=cfg.mean)
    mask = read_mask(args.mask)
    tap = net.activation_tap(cfg.extract_layer or mask.layer)
    img = traverse[args.frame]
    out = Path(args.out_dir)
    for label, m in (("pre", None), ("post", mask)):
        grid = activation_heatmap(forward(net, img, tap, m))
        write_pgm(grid, out / f"heatmap_{label}.pgm")
        write_grid_csv(grid, out / f"heatmap_{label}.csv")
    print(f"tap={tap} frame={args.frame}")
    return 0


def cmd_randfilter(args) -> int:
    cfg = _config(args)
    net, ref, query = _load(args, cfg)
    if args.mask:
        ref_mask = read_mask(args.mask)
        layer, count = ref_mask.layer, len(ref_mask)
    else:
        if args.count is None or cfg.filter_layer is None:
            raise ValueError("randfilter needs --mask, or --count with --filter-layer")
        layer, count = cfg.filter_layer, args.count
    mask = random_filter(net, layer, count, cfg.seed)
    out = Path(args.out_dir)
    write_mask(mask, out / "random_mask.txt")
    extract = cfg.extract_layer or net.conv_names()[-1]
    reports, curve = pipeline.evaluate_split(net, ref, query, extract, mask, cfg.prefix(len(ref)),
                                             cfg.tolerance, cfg.window)
    _report(out, reports, curve)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "heatmap": cmd_heatmap,
    "randfilter": cmd_randfilter,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as e:
        print(f"earlyfilter {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
