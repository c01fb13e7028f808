"""Stuck-at sweeps checked against independent, uncached evaluations."""

import json

import numpy as np
import pytest
from test_base import (
    random_set,
    randomize_batch_norm,
    toy_network,
    two_point_network,
)

from qnn_fat.errors import ConfigurationError
from qnn_fat.evaluation import (
    FaultSpec,
    ScatterPoint,
    SweepReport,
    TargetKind,
    accuracy,
    count_correct,
    enumerate_faults,
    read_report_csv,
    read_report_json,
    read_scatter_csv,
    read_summary_csv,
    summarize,
    sweep,
    sweep_channels,
    sweep_pixels,
    write_report_csv,
    write_report_json,
    write_scatter_csv,
    write_summary_csv,
)
from qnn_fat.layers import ForwardContext, LayerKind
from qnn_fat.network import build_network

# ---------------------------------------------------------------------------
# Fixtures and oracles
# ---------------------------------------------------------------------------


@pytest.fixture
def toy():
    return randomize_batch_norm(toy_network(seed=5), seed=5)


@pytest.fixture
def two_point():
    return randomize_batch_norm(two_point_network(seed=2, act_bits=2), seed=2)


@pytest.fixture
def samples():
    return random_set(n=48, seed=9)


def channel_oracle(net, data, fault):
    """Accuracy with the channel forced through batch-norm surgery on a clone.

    gamma = 0 and beta = eps make the batch-norm before the point emit eps for
    that channel; the quantizer and pooling keep a constant codebook value.
    """
    twin = net.clone()
    layer_index = twin.injection_points[fault.layer].layer_index
    bn = next(
        layer for layer in reversed(twin.layers[:layer_index])
        if layer.kind is LayerKind.BATCH_NORM
    )
    bn.gamma.data[fault.target] = 0.0
    bn.beta.data[fault.target] = fault.value
    return accuracy(twin, data)


def pixel_oracle(net, data, fault):
    """Plain eval-mode layer loop over the full data set; the pixel is assigned
    by hand right after the layer at the fault's point."""
    clamp_at = net.injection_points[fault.layer].layer_index
    h, w = fault.target
    ctx = ForwardContext(train=False)
    x = np.array(data.images, dtype=np.float32)
    for i, layer in enumerate(net.layers):
        x = layer.forward(x, ctx)
        if i == clamp_at:
            x = x.copy()
            x[:, :, h, w] = fault.value
    predicted = x.reshape(len(data), -1).argmax(axis=1)
    return 100.0 * np.count_nonzero(predicted == data.labels) / len(data)


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------


def test_counts_for_toy_network(toy):
    assert len(enumerate_faults(toy, "channel")) == 2 * 4
    assert len(enumerate_faults(toy, "pixel")) == 2 * 9


def test_counts_for_two_point_network(two_point):
    assert len(enumerate_faults(two_point, "channel")) == 3 * (3 + 5)
    assert len(enumerate_faults(two_point, "pixel")) == 3 * (9 + 1)


def test_cnv_s_convolutional_channel_count():
    net = build_network("cnv-s", (1, 28, 28), 10, rng=np.random.default_rng(0))
    assert [p.shape for p in net.injection_points] == [
        (16, 13, 13), (32, 5, 5), (64, 3, 3), (128, 1, 1)
    ]
    assert len(enumerate_faults(net, "channel", layers=[0, 1, 2])) == 224
    expected_pixels = 2 * (13 * 13 + 5 * 5 + 3 * 3 + 1)
    assert len(enumerate_faults(net, "pixel")) == expected_pixels


def test_enumeration_order(two_point):
    faults = enumerate_faults(two_point, "channel")
    values = [-1.0, 0.0, 1.0]
    keys = [(values.index(f.value), f.layer, f.target) for f in faults]
    assert keys == sorted(keys)
    assert faults[0] == FaultSpec(0, TargetKind.CHANNEL, 0, -1.0)
    assert faults[-1] == FaultSpec(1, TargetKind.CHANNEL, 4, 1.0)


def test_enumeration_rejects_bad_layers_and_float_codebooks(toy):
    with pytest.raises(ConfigurationError):
        enumerate_faults(toy, "channel", layers=[3])
    with pytest.raises(ConfigurationError):
        enumerate_faults(toy, "rows")
    float_net = toy_network(act_bits=32, slot="dropout2d", p=10.0)
    with pytest.raises(ConfigurationError):
        enumerate_faults(float_net, "channel")


# ---------------------------------------------------------------------------
# Fault application
# ---------------------------------------------------------------------------


def test_apply_is_pure_and_idempotent():
    rng = np.random.default_rng(0)
    x = rng.choice([-1.0, 1.0], size=(2, 4, 3, 3)).astype(np.float32)
    before = x.copy()
    fault = FaultSpec(0, TargetKind.PIXEL, (1, 2), -1.0)
    once = fault.apply(x)
    np.testing.assert_array_equal(fault.apply(once), once)
    np.testing.assert_array_equal(x, before)
    assert np.all(once[:, :, 1, 2] == -1.0)
    np.testing.assert_array_equal(np.delete(once.reshape(2, 4, 9), 5, axis=2),
                                  np.delete(x.reshape(2, 4, 9), 5, axis=2))


@pytest.mark.parametrize(
    "fault",
    [
        FaultSpec(1, TargetKind.CHANNEL, 0, 1.0),
        FaultSpec(0, TargetKind.CHANNEL, 4, 1.0),
        FaultSpec(0, TargetKind.PIXEL, (3, 0), 1.0),
        FaultSpec(0, TargetKind.CHANNEL, 0, 0.5),
        FaultSpec(0, TargetKind.CHANNEL, 0, 0.0),
    ],
    ids=str,
)
def test_invalid_fault_specs(toy, samples, fault):
    with pytest.raises(ConfigurationError):
        accuracy(toy, samples, fault)


def test_pixel_target_index():
    assert FaultSpec(0, TargetKind.PIXEL, (1, 2), 1.0).target_index(3) == 5
    assert FaultSpec(0, TargetKind.CHANNEL, 7, 1.0).target_index(3) == 7


def test_accuracy_on_empty_data_fails(toy):
    with pytest.raises(ConfigurationError):
        accuracy(toy, random_set(n=0))


# ---------------------------------------------------------------------------
# Sweeps against the oracles
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("net_name", ["toy", "two_point"])
def test_channel_sweep_matches_batch_norm_surgery(request, samples, net_name):
    net = request.getfixturevalue(net_name)
    report = sweep_channels(net, samples)
    for fault, acc in report.entries:
        assert acc == channel_oracle(net, samples, fault), str(fault)
        assert acc == accuracy(net, samples, fault), str(fault)
    assert report.error_free == accuracy(net, samples)


@pytest.mark.parametrize("net_name", ["toy", "two_point"])
def test_pixel_sweep_matches_layer_by_layer_run(request, samples, net_name):
    net = request.getfixturevalue(net_name)
    report = sweep_pixels(net, samples)
    for fault, acc in report.entries:
        assert acc == pytest.approx(pixel_oracle(net, samples, fault), abs=1e-9), str(fault)


def test_small_batches_give_the_same_counts(two_point, samples):
    faults = enumerate_faults(two_point, "channel")
    full = count_correct(two_point, samples.images, samples.labels, faults, batch_size=256)
    small = count_correct(two_point, samples.images, samples.labels, faults, batch_size=7)
    np.testing.assert_array_equal(full, small)


def test_sweep_does_not_modify_the_network(two_point, samples):
    digest = two_point.parameter_digest()
    status = two_point.slot_status()
    sweep(two_point, samples, "pixel")
    assert two_point.parameter_digest() == digest
    assert two_point.slot_status() == status


def test_worker_count_does_not_change_results(two_point, samples):
    serial = sweep_channels(two_point, samples, workers=1)
    parallel = sweep_channels(two_point, samples, workers=2)
    assert serial.faults == parallel.faults
    assert serial.accuracies == parallel.accuracies
    assert parallel.metadata["timing"]["workers"] == 2


def test_layer_selection(two_point, samples):
    report = sweep_channels(two_point, samples, layers=[1])
    assert {f.layer for f in report.faults} == {1}
    assert len(report) == 3 * 5
    assert report.metadata["layers"] == [1]
    assert report.points == [{"index": 1, "layer_index": 8, "shape": [5, 1, 1]}]


def test_invalid_worker_count(toy, samples):
    with pytest.raises(ConfigurationError):
        sweep(toy, samples, workers=0)


def test_statistics_match_two_pass_variance(two_point, samples):
    report = sweep_channels(two_point, samples)
    values = list(report.accuracies)
    mean = sum(values) / len(values)
    variance = sum((v - mean) ** 2 for v in values) / len(values)
    assert report.mean_accuracy == pytest.approx(mean)
    assert report.variance == pytest.approx(variance, abs=1e-9)
    assert report.min_accuracy == min(values)
    assert report.max_accuracy == max(values)


def test_sweep_metadata(toy, samples):
    report = sweep_channels(toy, samples, metadata={"checkpoint": "toy.qfat"})
    assert report.metadata["network"] == "toy_w1a1"
    assert report.metadata["eval_samples"] == 48
    assert report.metadata["checkpoint"] == "toy.qfat"
    assert report.codebook == (-1.0, 1.0)


# ---------------------------------------------------------------------------
# Summaries and files
# ---------------------------------------------------------------------------


def test_summarize(two_point, samples):
    report = sweep_channels(two_point, samples)
    summary = summarize(report)
    assert [row.layer for row in summary.rows] == [0, 1]
    assert [row.targets for row in summary.rows] == [3, 5]
    for row in summary.rows:
        for eps, (low, high) in row.extremes.items():
            accs = [a for f, a in report.entries if f.layer == row.layer and f.value == eps]
            assert (low, high) == (min(accs), max(accs))
    assert summary.scatter == ScatterPoint(report.min_accuracy, report.max_accuracy,
                                           report.error_free)


def test_summary_skips_layers_without_configurations():
    report = SweepReport("channel", 90.0, [FaultSpec(1, TargetKind.CHANNEL, 0, 1.0)], [80.0],
                         (-1.0, 1.0))
    summary = summarize(report)
    assert [row.layer for row in summary.rows] == [1]
    assert summary.rows[0].extremes == {1.0: (80.0, 80.0)}


def test_empty_report_statistics_fail():
    report = SweepReport("channel", 90.0, [], [], (-1.0, 1.0))
    with pytest.raises(ConfigurationError):
        report.min_accuracy


def test_report_csv(tmp_path, two_point, samples):
    report = sweep_pixels(two_point, samples)
    rows = read_report_csv(write_report_csv(report, tmp_path / "sweep.csv"))
    assert len(rows) == len(report)
    header = (tmp_path / "sweep.csv").read_text().splitlines()[0]
    assert header == "layer,target_kind,target_index,epsilon,accuracy"
    for row, (fault, acc) in zip(rows, report.entries):
        assert row["layer"] == fault.layer
        assert row["target_kind"] == "pixel"
        assert row["epsilon"] == fault.value
        assert row["accuracy"] == pytest.approx(acc, abs=0.005)
    assert rows[4]["target_index"] == 4
    assert "-1.000000" in (tmp_path / "sweep.csv").read_text().splitlines()[1]


def test_report_csv_rejects_out_of_range_accuracy(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("layer,target_kind,target_index,epsilon,accuracy\n0,channel,0,1.000000,101.00\n")
    with pytest.raises(ConfigurationError):
        read_report_csv(path)


def test_report_json(tmp_path, toy, samples):
    report = sweep_pixels(toy, samples)
    path = write_report_json(report, tmp_path / "sweep.json")
    loaded = read_report_json(path)
    assert loaded.faults == report.faults
    assert loaded.accuracies == report.accuracies
    assert loaded.error_free == report.error_free
    assert loaded.mode is TargetKind.PIXEL
    data = json.loads(path.read_text())
    assert data["summary"]["count"] == len(report)
    assert data["configurations"][1]["target_index"] == 1


def test_report_json_rejects_other_versions(tmp_path):
    path = tmp_path / "old.json"
    path.write_text(json.dumps({"schema_version": 99, "configurations": []}))
    with pytest.raises(ConfigurationError):
        read_report_json(path)
    with pytest.raises(FileNotFoundError):
        read_report_json(tmp_path / "missing.json")


def test_summary_csv(tmp_path, two_point, samples):
    summary = summarize(sweep_channels(two_point, samples))
    path = write_summary_csv(summary, tmp_path / "summary.csv")
    header = path.read_text().splitlines()[0].split(",")
    assert header[:4] == ["layer", "targets", "min_s@-1.000000", "max_s@-1.000000"]
    rows = read_summary_csv(path)
    assert [row["targets"] for row in rows] == [3, 5]
    low, high = summary.rows[1].extremes[0.0]
    assert rows[1]["min_s@0.000000"] == pytest.approx(low, abs=0.005)
    assert rows[1]["max_s@0.000000"] == pytest.approx(high, abs=0.005)


def test_scatter_csv(tmp_path):
    points = {"sat": ScatterPoint(10.0, 98.5, 98.75), "fat2": ScatterPoint(95.25, 98.0, 98.25)}
    loaded = read_scatter_csv(write_scatter_csv(points, tmp_path / "scatter.csv"))
    assert loaded == points
