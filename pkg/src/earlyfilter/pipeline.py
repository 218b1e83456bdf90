"""End-to-end runs: calibrate on a held-out prefix, evaluate on the remainder."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .calibrate import CalibrationConfig, CalibrationTrace, build_triplets, calibrate
from .data import Traverse, check_aligned
from .descriptor import pyramid_pool
from .engine import FilterMask, NetworkSpec, forward
from .recognize import DEFAULT_WINDOW, MatchReport, PRCurve, evaluate


def describe(net: NetworkSpec, images, tap: str, mask: FilterMask | None = None) -> np.ndarray:
    return np.stack([pyramid_pool(forward(net, img, tap, mask)) for img in images])


@dataclass
class RunResult:
    mask: FilterMask | None
    traces: list[CalibrationTrace]
    reports: list[MatchReport]
    curve: PRCurve

    @property
    def max_f1(self) -> float:
        return self.curve.max_f1


def resolve_config(net: NetworkSpec, cfg: CalibrationConfig) -> CalibrationConfig:
    """Map a conv extract layer onto its post-ReLU tap."""
    tap = net.activation_tap(cfg.extract_layer)
    if tap == cfg.extract_layer:
        return cfg
    return replace(cfg, extract_layer=tap)


def calibrate_prefix(net: NetworkSpec, ref: Traverse, query: Traverse, cfg: CalibrationConfig,
                     calib_count: int, calib_prefix: int) -> tuple[FilterMask, list[CalibrationTrace]]:
    check_aligned(ref, query)
    cfg = resolve_config(net, cfg)
    triplets = build_triplets(calib_prefix, calib_count, cfg)
    return calibrate(net, query.images, ref.images, triplets, cfg)


def evaluate_split(net: NetworkSpec, ref: Traverse, query: Traverse, extract_layer: str,
                   mask: FilterMask | None, calib_prefix: int, tolerance: int,
                   window: int = DEFAULT_WINDOW) -> tuple[list[MatchReport], PRCurve]:
    check_aligned(ref, query)
    tap = net.activation_tap(extract_layer)
    ref_d = describe(net, ref.images[calib_prefix:], tap, mask)
    query_d = describe(net, query.images[calib_prefix:], tap, mask)
    return evaluate(query_d, ref_d, tolerance, window)


def run(net: NetworkSpec, ref: Traverse, query: Traverse, cfg: CalibrationConfig | None, *,
        extract_layer: str, calib_count: int, calib_prefix: int, window: int = DEFAULT_WINDOW,
        tolerance: int | None = None, mask: FilterMask | None = None) -> RunResult:
    """Calibrate (unless ``cfg`` is None or a mask is given) and evaluate."""
    traces: list[CalibrationTrace] = []
    if cfg is not None and mask is None:
        mask, traces = calibrate_prefix(net, ref, query, cfg, calib_count, calib_prefix)
        tolerance = cfg.tolerance if tolerance is None else tolerance
    if tolerance is None:
        raise ValueError("tolerance required when not calibrating")
    reports, curve = evaluate_split(net, ref, query, extract_layer, mask, calib_prefix, tolerance, window)
    return RunResult(mask, traces, reports, curve)
