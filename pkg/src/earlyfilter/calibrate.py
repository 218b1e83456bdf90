"""Greedy feature-map filter calibration driven by a triplet margin.

For each calibration triplet, maps in the filter layer are removed in batches,
ranking every remaining map by the margin obtained when it alone is added to
the current mask. Descriptors are pooled from the (later) extraction layer.
Removal continues until the halting count is reached and the best mask seen
over all iterations, the empty mask included, is kept. Masks from several
triplets are merged by vote.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .descriptor import l2_distance, pyramid_pool
from .engine import Conv, FilterMask, NetworkSpec, forward, forward_cached
from .fileio import atomic_write, write_rows

N_SOFT_NEGATIVES = 4


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationConfig:
    filter_layer: str
    extract_layer: str
    batch_size: int = 4
    halt_fraction: float = 0.5
    consensus_threshold: float = 0.66
    tolerance: int = 3
    hard_offset: int | None = None  # defaults to tolerance + 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise CalibrationError("batch_size must be >= 1")
        if not 0 < self.halt_fraction <= 0.5:
            raise CalibrationError(
                f"halt_fraction={self.halt_fraction} is outside (0, 0.5]: removing more than half "
                "of an early layer's feature maps makes localisation unstable")
        if not 0 < self.consensus_threshold <= 1:
            raise CalibrationError("consensus_threshold must be in (0, 1]")
        if self.tolerance < 0:
            raise CalibrationError("tolerance must be >= 0")
        if self.hard_offset is not None and self.hard_offset <= self.tolerance:
            raise CalibrationError("hard_offset must exceed the ground-truth tolerance")

    @property
    def hard_offset_frames(self) -> int:
        return self.tolerance + 5 if self.hard_offset is None else self.hard_offset

    def check(self, net: NetworkSpec) -> None:
        if not isinstance(net.layer(self.filter_layer), Conv):
            raise CalibrationError(f"filter layer {self.filter_layer!r} is not a convolution")
        if net.index(self.filter_layer) > net.index(self.extract_layer):
            raise CalibrationError(
                f"filter layer {self.filter_layer!r} must not come after extract layer {self.extract_layer!r}")


@dataclass(frozen=True)
class TripletSet:
    """Frame indices: ``query`` in the query traverse, the rest in the reference traverse."""

    query: int
    positive: int
    hard_negative: int
    soft_negatives: tuple[int, ...]

    @property
    def negatives(self) -> tuple[int, ...]:
        return (self.hard_negative,) + tuple(self.soft_negatives)


def build_triplets(n_images: int, n_sets: int, cfg: CalibrationConfig) -> list[TripletSet]:
    """Evenly spaced anchors over the first ``n_images`` frames of aligned traverses.

    The hard negative sits ``hard_offset`` frames ahead of the anchor; the four
    soft negatives are drawn without replacement from frames outside the
    ground-truth tolerance of the anchor.
    """
    offset = cfg.hard_offset_frames
    n_anchor = n_images - offset
    if n_sets < 1:
        raise CalibrationError("need at least one triplet set")
    if n_anchor < n_sets:
        raise CalibrationError(
            f"dataset too small: {n_images} frames leave {max(n_anchor, 0)} anchors "
            f"for {n_sets} sets with hard offset {offset}")
    rng = np.random.default_rng(cfg.rng_seed)
    anchors = np.round(np.linspace(0, n_anchor - 1, n_sets)).astype(int)
    if n_sets == 1:
        anchors = np.array([(n_anchor - 1) // 2])
    sets = []
    for a in anchors:
        a = int(a)
        hard = a + offset
        pool = [i for i in range(n_images) if abs(i - a) > cfg.tolerance and i != hard]
        if len(pool) < N_SOFT_NEGATIVES:
            raise CalibrationError(f"dataset too small: only {len(pool)} soft-negative candidates for frame {a}")
        soft = rng.choice(pool, size=N_SOFT_NEGATIVES, replace=False)
        sets.append(TripletSet(a, a, hard, tuple(int(s) for s in soft)))
    return sets


@dataclass(frozen=True)
class TripletImages:
    query: np.ndarray
    positive: np.ndarray
    negatives: tuple[np.ndarray, ...]

    @classmethod
    def resolve(cls, triplet: TripletSet, query_images: Sequence, ref_images: Sequence) -> "TripletImages":
        return cls(query_images[triplet.query], ref_images[triplet.positive],
                   tuple(ref_images[i] for i in triplet.negatives))


@dataclass(frozen=True)
class TripletActivations:
    """Unmasked filter-layer activations of a triplet's images, reused for every candidate mask."""

    query: np.ndarray
    positive: np.ndarray
    negatives: tuple[np.ndarray, ...]

    @classmethod
    def from_images(cls, net: NetworkSpec, images: TripletImages, cfg: CalibrationConfig):
        act = lambda x: forward(net, x, cfg.filter_layer)  # noqa: E731
        return cls(act(images.query), act(images.positive), tuple(act(n) for n in images.negatives))


Triplet = Union[TripletImages, TripletActivations]


def _activations(net, triplet: Triplet, cfg) -> TripletActivations:
    if isinstance(triplet, TripletActivations):
        return triplet
    return TripletActivations.from_images(net, triplet, cfg)


def margin_from_descriptors(query, positive, negatives) -> float:
    """Averaged reference-to-negative L2 distance minus query-to-reference distance."""
    neg = sum(l2_distance(positive, n) for n in negatives) / len(negatives)
    return neg - l2_distance(query, positive)


def _margin(net, acts: TripletActivations, removed, cfg) -> float:
    mask = FilterMask(cfg.filter_layer, removed)

    def desc(a):
        return pyramid_pool(forward_cached(net, a, cfg.filter_layer, cfg.extract_layer, mask))

    return margin_from_descriptors(desc(acts.query), desc(acts.positive), [desc(n) for n in acts.negatives])


def triplet_margin(net: NetworkSpec, mask: FilterMask | None, triplet: Triplet, cfg: CalibrationConfig) -> float:
    removed = frozenset() if mask is None else mask.removed
    if mask is not None and mask.layer != cfg.filter_layer:
        raise CalibrationError(f"mask layer {mask.layer!r} differs from filter layer {cfg.filter_layer!r}")
    return _margin(net, _activations(net, triplet, cfg), removed, cfg)


def candidate_margins(net: NetworkSpec, current: FilterMask, triplet: Triplet,
                      cfg: CalibrationConfig) -> dict[int, float]:
    """Margin for each remaining map j, evaluated with ``current ∪ {j}`` removed."""
    acts = _activations(net, triplet, cfg)
    n_maps = net.output_shape(cfg.filter_layer)[0]
    return {j: _margin(net, acts, current.removed | {j}, cfg)
            for j in range(n_maps) if j not in current.removed}


def greedy_batch_step(net: NetworkSpec, current: FilterMask, triplet: Triplet, cfg: CalibrationConfig,
                      count: int | None = None) -> list[int]:
    """Pick the next ``count`` maps to remove (default ``cfg.batch_size``).

    Margins are computed once; the batch is taken by repeated argmax with
    earlier picks excluded, lowest index first on ties.
    """
    count = cfg.batch_size if count is None else count
    scores = candidate_margins(net, current, triplet, cfg)
    if count > len(scores):
        raise CalibrationError(f"asked for {count} maps but only {len(scores)} remain")
    idx = np.array(sorted(scores))
    d = np.array([scores[j] for j in idx])
    picked = []
    for _ in range(count):
        k = int(np.argmax(d))
        picked.append(int(idx[k]))
        d[k] = -np.inf
    return picked


@dataclass
class CalibrationTrace:
    """Per-iteration (removed set, margin) records for one calibration triplet."""

    removed: list[frozenset] = field(default_factory=list)
    margins: list[float] = field(default_factory=list)

    @property
    def best_index(self) -> int:
        # first maximum: the smallest mask wins ties
        return int(np.argmax(self.margins))

    @property
    def final(self) -> frozenset:
        return self.removed[self.best_index]

    def __len__(self):
        return len(self.margins)

    def write_csv(self, path) -> None:
        rows = [["iteration", "removed_count", "margin", "removed"]]
        rows += [[i, len(r), repr(m), " ".join(str(j) for j in sorted(r))]
                 for i, (r, m) in enumerate(zip(self.removed, self.margins))]
        write_rows(path, rows)


def halt_count(n_maps: int, cfg: CalibrationConfig) -> int:
    return math.floor(n_maps * cfg.halt_fraction)


def calibrate_image(net: NetworkSpec, triplet: Triplet, cfg: CalibrationConfig) -> CalibrationTrace:
    cfg.check(net)
    n_maps = net.output_shape(cfg.filter_layer)[0]
    if n_maps < 4:
        raise CalibrationError(f"filter layer has {n_maps} maps; need at least 4")
    acts = _activations(net, triplet, cfg)
    target = halt_count(n_maps, cfg)
    mask = FilterMask(cfg.filter_layer)
    trace = CalibrationTrace([mask.removed], [_margin(net, acts, mask.removed, cfg)])
    while len(mask) < target:
        batch = greedy_batch_step(net, mask, acts, cfg, min(cfg.batch_size, target - len(mask)))
        mask = mask.union(batch)
        trace.removed.append(mask.removed)
        trace.margins.append(_margin(net, acts, mask.removed, cfg))
    return trace


def consensus_aggregate(traces: Sequence[CalibrationTrace], cfg: CalibrationConfig) -> FilterMask:
    """Keep maps removed in at least ``consensus_threshold`` of the traces."""
    if not traces:
        raise CalibrationError("need at least one trace")
    counts: dict[int, int] = {}
    for t in traces:
        for j in t.final:
            counts[j] = counts.get(j, 0) + 1
    n = len(traces)
    return FilterMask(cfg.filter_layer, {j for j, c in counts.items() if c / n >= cfg.consensus_threshold})


def calibrate(net: NetworkSpec, query_images: Sequence, ref_images: Sequence,
              triplets: Sequence[TripletSet], cfg: CalibrationConfig) -> tuple[FilterMask, list[CalibrationTrace]]:
    cfg.check(net)
    traces = [calibrate_image(net, TripletImages.resolve(t, query_images, ref_images), cfg) for t in triplets]
    return consensus_aggregate(traces, cfg), traces


def random_filter(net: NetworkSpec, layer: str, count: int, seed: int) -> FilterMask:
    """Uniformly random set of ``count`` maps in ``layer`` (the random-selection control)."""
    n_maps = net.output_shape(layer)[0]
    if not isinstance(net.layer(layer), Conv):
        raise CalibrationError(f"layer {layer!r} is not a convolution")
    if not 0 <= count <= n_maps // 2:
        raise CalibrationError(f"count {count} must be between 0 and {n_maps // 2}")
    rng = np.random.default_rng(seed)
    return FilterMask(layer, rng.choice(n_maps, size=count, replace=False).tolist())


def write_mask(mask: FilterMask, path) -> None:
    atomic_write(path, f"layer={mask.layer}\n{','.join(str(i) for i in mask.sorted())}\n")


def read_mask(path) -> FilterMask:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("layer="):
        raise CalibrationError(f"{path}: first line must be 'layer=<name>'")
    layer = lines[0][len("layer="):].strip()
    body = lines[1].strip() if len(lines) > 1 else ""
    try:
        removed = [int(v) for v in body.split(",") if v.strip()]
    except ValueError:
        raise CalibrationError(f"{path}: second line must be comma-separated integers") from None
    return FilterMask(layer, removed)

