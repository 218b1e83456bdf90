import numpy as np
import pytest

from earlyfilter.calibrate import CalibrationConfig
from earlyfilter.engine import dumps_network
from earlyfilter.pipeline import calibrate_prefix, run
from earlyfilter.synthetic import (
    SyntheticBenchmark, SyntheticError, channel_deltas, generate_synthetic, planted_delta_ratio,
)


@pytest.fixture(scope="module")
def bench():
    return generate_synthetic(SyntheticBenchmark(seed=0))


def test_shapes(bench):
    assert len(bench.reference) == len(bench.query) == 200
    assert bench.reference[0].shape == (1, 32, 32)
    assert bench.net.output_shape("conv1")[0] == 16
    assert len(bench.planted) == 4
    assert all(0 <= p < 16 for p in bench.planted)


def test_images_in_unit_range(bench):
    for t in (bench.reference, bench.query):
        arr = np.stack(t.images)
        assert arr.min() >= 0.0 and arr.max() <= 1.0


def test_deterministic_per_seed():
    cfg = SyntheticBenchmark(seed=3, n_places=40)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert dumps_network(a.net) == dumps_network(b.net)
    assert a.planted == b.planted
    for x, y in zip(a.reference.images + a.query.images, b.reference.images + b.query.images):
        assert x.tobytes() == y.tobytes()
    c = generate_synthetic(SyntheticBenchmark(seed=4, n_places=40))
    assert c.reference[0].tobytes() != a.reference[0].tobytes()


@pytest.mark.parametrize("seed", range(3))
def test_planted_channels_respond_to_condition(seed):
    data = generate_synthetic(SyntheticBenchmark(seed=seed, n_places=60))
    deltas = channel_deltas(data.net, data.reference, data.query)
    ratio = planted_delta_ratio(deltas, data.planted)
    assert ratio >= 5.0
    assert ratio == pytest.approx(data.delta_ratio)


def test_unreachable_ratio_reports_failure():
    with pytest.raises(SyntheticError, match="not separable"):
        generate_synthetic(SyntheticBenchmark(n_places=20, min_delta_ratio=1e6, max_attempts=2))


@pytest.mark.parametrize("bad", [dict(n_places=19), dict(n_planted=9), dict(n_planted=0)])
def test_invalid_config(bad):
    with pytest.raises(SyntheticError):
        SyntheticBenchmark(**bad)


def test_five_triplet_consensus_hits_planted(bench):
    cfg = CalibrationConfig("conv1", "conv3", tolerance=3)
    mask, traces = calibrate_prefix(bench.net, bench.reference, bench.query, cfg, 5, 80)
    assert len(traces) == 5
    assert mask.removed & set(bench.planted)


def test_calibrated_run_beats_unfiltered(bench):
    cfg = CalibrationConfig("conv1", "conv3", tolerance=3)
    filtered = run(bench.net, bench.reference, bench.query, cfg, extract_layer="conv3", calib_count=5,
                   calib_prefix=80)
    plain = run(bench.net, bench.reference, bench.query, None, extract_layer="conv3", calib_count=0,
                calib_prefix=80, tolerance=3)
    assert len(filtered.reports) == 120
    assert filtered.max_f1 > plain.max_f1
