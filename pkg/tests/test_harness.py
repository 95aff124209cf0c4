"""Standard eval orchestration, robustness sweeps, and rate binning."""

import math

import numpy as np
import pytest

from evbench.config import config_from_dict
from evbench.errors import EvbenchError
from evbench.events import parse_binary_events
from evbench.harness import (
    DEFAULT_COUNT_VALUES,
    DEFAULT_DISCARD_RATIOS,
    DEFAULT_DURATION_VALUES_MS,
    RunResult,
    SequenceResult,
    TimelineRow,
    bin_by_event_rate,
    derive_seed,
    run_standard_eval,
    sweep_discard,
    sweep_duration,
    sweep_event_count,
)

from conftest import plugin_cmdline, write_tiny_dataset


@pytest.fixture
def tiny_config(tmp_path):
    raw = write_tiny_dataset(tmp_path, [("seq_a", 3000, 21, 1), ("seq_b", 3000, 21, 2)])
    return config_from_dict(raw, base_dir=tmp_path)


class TestStandardEval:
    def test_between_frames_row_count_is_frames_minus_one(self, tiny_config):
        result = run_standard_eval(tiny_config)
        for seq in result.sequences:
            assert seq.status == "ok"
            assert seq.counts["groups"] == 20
            assert len(seq.rows) == 20
            assert seq.counts["matched"] == 20  # between-frames matches exactly

    def test_dataset_mean_is_mean_of_sequence_means(self, tiny_config):
        result = run_standard_eval(tiny_config)
        means = [s.means["mse"] for s in result.sequences]
        agg = result.dataset_means()["voxel_collapse"]["tiny"]["mse"]
        assert agg == pytest.approx(float(np.mean(means)), abs=1e-12)

    def test_rerun_is_identical(self, tiny_config):
        assert run_standard_eval(tiny_config).to_dict() == run_standard_eval(tiny_config).to_dict()

    def test_parallel_matches_serial(self, tmp_path):
        raw = write_tiny_dataset(tmp_path, [("s1", 2000, 11, 3), ("s2", 2000, 11, 4),
                                            ("s3", 2000, 11, 5)])
        serial = run_standard_eval(config_from_dict(raw, base_dir=tmp_path))
        raw["parallelism"] = 3
        parallel = run_standard_eval(config_from_dict(raw, base_dir=tmp_path))
        assert serial.to_dict()["sequences"] == parallel.to_dict()["sequences"]

    def test_eval_window_restricts_scoring(self, tmp_path):
        raw = write_tiny_dataset(tmp_path, [("seq_a", 3000, 21, 1)])
        raw["datasets"][0]["sequences"][0]["eval_window"] = [1.0, 2.0]
        result = run_standard_eval(config_from_dict(raw, base_dir=tmp_path))
        rows = result.sequences[0].rows
        assert all(1.0 <= r.timestamp <= 2.0 for r in rows)
        assert 0 < len(rows) < 20

    def test_preprocess_changes_results_deterministically(self, tmp_path):
        raw = write_tiny_dataset(tmp_path, [("seq_a", 3000, 11, 1)])
        raw["preprocess"] = {"noise_rate": 5.0, "drop_ratio": 0.2}
        cfg = config_from_dict(raw, base_dir=tmp_path)
        r1, r2 = run_standard_eval(cfg), run_standard_eval(cfg)
        assert r1.to_dict() == r2.to_dict()
        clean = run_standard_eval(config_from_dict(
            write_tiny_dataset(tmp_path / "clean", [("seq_a", 3000, 11, 1)]),
            base_dir=tmp_path / "clean"))
        assert r1.to_dict()["sequences"] != clean.to_dict()["sequences"]

    def test_no_ground_truth_rows_unmatched(self, tmp_path):
        raw = write_tiny_dataset(tmp_path, [("seq_a", 2000, 0, 1)])
        raw["grouping"] = {"mode": "fixed_number", "n_g": 500}
        result = run_standard_eval(config_from_dict(raw, base_dir=tmp_path))
        seq = result.sequences[0]
        assert seq.status == "ok"
        assert seq.counts["matched"] == 0
        assert all(r.values["mse"] is None for r in seq.rows)
        assert seq.means["mse"] is None

    def test_between_frames_without_gt_fails_sequence(self, tmp_path):
        raw = write_tiny_dataset(tmp_path, [("seq_a", 2000, 0, 1)])
        result = run_standard_eval(config_from_dict(raw, base_dir=tmp_path))
        assert result.sequences[0].status == "failed"
        assert "frame" in result.sequences[0].error
        assert result.any_failed

    def test_leaky_integrator_backend(self, tmp_path):
        raw = write_tiny_dataset(tmp_path, [("seq_a", 2000, 11, 1)])
        raw["reconstructors"] = [{"builtin": "leaky_integrator", "tau": 0.2}]
        result = run_standard_eval(config_from_dict(raw, base_dir=tmp_path))
        assert result.sequences[0].status == "ok"
        assert result.sequences[0].reconstructor == "leaky_integrator"


class TestPluginsInHarness:
    def test_echo_plugin_full_eval(self, tmp_path, plugin_script):
        raw = write_tiny_dataset(tmp_path, [("seq_a", 2000, 11, 1)])
        raw["reconstructors"] = [{"plugin": plugin_cmdline(plugin_script, "echo"),
                                  "label": "echo"}]
        result = run_standard_eval(config_from_dict(raw, base_dir=tmp_path))
        seq = result.sequences[0]
        assert seq.status == "ok"
        assert len(seq.rows) == 10
        # constant 0.5 image scores a deterministic MSE against ground truth
        assert all(r.values["mse"] is not None for r in seq.rows)

    def test_crashing_plugin_fails_only_its_sequence(self, tmp_path, plugin_script):
        raw = write_tiny_dataset(tmp_path, [("small_1", 2000, 0, 1),
                                            ("big", 12000, 0, 2),
                                            ("small_2", 2000, 0, 3)])
        raw["grouping"] = {"mode": "fixed_number", "n_g": 500}
        raw["reconstructors"] = [{"plugin": plugin_cmdline(plugin_script, "crash-after-10"),
                                  "label": "plug"}]
        crash = run_standard_eval(config_from_dict(raw, base_dir=tmp_path))
        by_name = {s.sequence: s for s in crash.sequences}
        assert by_name["small_1"].status == "ok"
        assert by_name["big"].status == "failed"
        assert by_name["small_2"].status == "ok"
        # partial results retained and flagged
        assert len(by_name["big"].rows) == 10
        assert by_name["big"].counts["failed"] == 24 - 10
        # the surviving sequences are bit-identical to a clean echo run
        raw["reconstructors"] = [{"plugin": plugin_cmdline(plugin_script, "echo"),
                                  "label": "plug"}]
        clean = run_standard_eval(config_from_dict(raw, base_dir=tmp_path))
        clean_by_name = {s.sequence: s for s in clean.sequences}
        for name in ("small_1", "small_2"):
            assert by_name[name].to_dict() == clean_by_name[name].to_dict()

    def test_metric_plugin_in_registry(self, tmp_path, plugin_script):
        raw = write_tiny_dataset(tmp_path, [("seq_a", 2000, 11, 1)])
        raw["metrics"] = [{"name": "mse"},
                          {"name": "plugmse", "plugin": plugin_cmdline(plugin_script, "mse"),
                           "kind": "full_reference", "direction": "lower_better"}]
        result = run_standard_eval(config_from_dict(raw, base_dir=tmp_path))
        seq = result.sequences[0]
        assert seq.status == "ok"
        for row in seq.rows:
            # the wire carries f32 tensors, so agreement is at f32 precision
            assert row.values["plugmse"] == pytest.approx(row.values["mse"], abs=1e-6)


class TestSweeps:
    def test_count_sweep_default_has_9_points(self, tiny_config):
        values = list(DEFAULT_COUNT_VALUES)
        assert values == list(range(5000, 45001, 5000)) and len(values) == 9
        report = sweep_event_count(tiny_config, [500, 1000])
        assert report.axis == "event_count"
        assert [p.value for p in report.points] == [500.0, 1000.0]

    def test_single_value_single_point(self, tiny_config):
        report = sweep_event_count(tiny_config, [500])
        assert len(report.points) == 1

    def test_matched_count_non_increasing_with_group_size(self, tiny_config):
        report = sweep_event_count(tiny_config, [100, 300, 600, 1500])
        matched = [
            sum(s.counts["matched"] for s in p.result.sequences) for p in report.points
        ]
        assert matched == sorted(matched, reverse=True)

    def test_duration_sweep_defaults_and_fps_labels(self, tiny_config):
        values = list(DEFAULT_DURATION_VALUES_MS)
        assert values == [float(v) for v in range(10, 101, 10)] and len(values) == 10
        report = sweep_duration(tiny_config, [100.0, 500.0])
        assert [p.label for p in report.points] == ["10fps", "2fps"]

    def test_duration_group_count_is_ceil_span_over_duration(self, tiny_config, tmp_path):
        report = sweep_duration(tiny_config, [300.0])
        point = report.points[0]
        for seq_result in point.result.sequences:
            spec = next(
                s for d in tiny_config.datasets for s in d.sequences
                if s.name == seq_result.sequence
            )
            stream = parse_binary_events(spec.events_path)
            assert seq_result.counts["groups"] == math.ceil(stream.duration / 0.3)

    def test_duration_equal_to_span_gives_one_group(self, tiny_config):
        # tiny dataset sequences span 2.0 s
        report = sweep_duration(tiny_config, [2000.0])
        for seq in report.points[0].result.sequences:
            assert seq.counts["groups"] == 1

    def test_discard_sweep_defaults(self, tiny_config):
        ratios = list(DEFAULT_DISCARD_RATIOS)
        assert ratios == [i / 10 for i in range(10)] and len(ratios) == 10

    def test_discard_zero_identical_to_standard_run(self, tiny_config):
        report = sweep_discard(tiny_config, [0.0])
        standard = run_standard_eval(tiny_config)
        assert report.points[0].result.to_dict()["sequences"] == standard.to_dict()["sequences"]

    def test_discard_group_count_is_surviving_frames_minus_one(self, tiny_config):
        report = sweep_discard(tiny_config, [0.0, 0.5])
        for point in report.points:
            for seq in point.result.sequences:
                assert seq.counts["groups"] == seq.counts["matched"]
                assert len(seq.rows) == seq.counts["groups"]

    def test_discard_survivors_binomial(self, tmp_path):
        raw = write_tiny_dataset(tmp_path, [("seq_a", 3000, 100, 1)])
        cfg = config_from_dict(raw, base_dir=tmp_path)
        report = sweep_discard(cfg, [0.9])
        groups = report.points[0].result.sequences[0].counts["groups"]
        survivors = groups + 1
        # 98 interior frames kept with p=0.1 plus 2 endpoints
        expected = 98 * 0.1 + 2
        sigma = math.sqrt(98 * 0.1 * 0.9)
        assert abs(survivors - expected) <= 3 * sigma

    def test_sweep_points_order_independent(self, tiny_config):
        a = sweep_discard(tiny_config, [0.2, 0.5])
        b = sweep_discard(tiny_config, [0.5])
        assert a.points[1].result.to_dict() == b.points[0].result.to_dict()

    def test_sweep_value_validation(self, tiny_config):
        with pytest.raises(EvbenchError):
            sweep_event_count(tiny_config, [])
        with pytest.raises(EvbenchError):
            sweep_event_count(tiny_config, [2000, 1000])
        with pytest.raises(EvbenchError):
            sweep_discard(tiny_config, [0.5, 1.0])
        with pytest.raises(EvbenchError):
            sweep_duration(tiny_config, [0.0, 10.0])


def synthetic_run(rates, values, label="r") -> RunResult:
    rows = [
        TimelineRow(float(i), i, float(rate), True, {"m": None if v is None else float(v)})
        for i, (rate, v) in enumerate(zip(rates, values))
    ]
    seq = SequenceResult("d", "s", label, rows=rows,
                         means={"m": 0.0}, counts={"groups": len(rows), "matched": len(rows),
                                                   "failed": 0})
    return RunResult(config_echo={}, metric_names=["m"], sequences=[seq])


class TestRateBinning:
    def test_uniform_rates_give_uniform_edges(self):
        rates = np.linspace(0.0, 10e6, 101)
        result = synthetic_run(rates, np.zeros_like(rates))
        report = bin_by_event_rate(result, "m")
        assert report.bin_count == 10
        np.testing.assert_allclose(report.edges, np.arange(11) * 1e6, atol=1e-3)

    def test_identical_rates_degenerate_single_bin(self):
        result = synthetic_run([5.0] * 20, range(20))
        report = bin_by_event_rate(result, "m")
        assert report.bin_count == 1
        assert report.counts["r"] == [20]

    def test_metric_equals_rate_bins_match_centers(self):
        rng = np.random.default_rng(0)
        rates = rng.uniform(0.0, 1000.0, 500)
        rates[0], rates[1] = 0.0, 1000.0  # pin the observed extremes
        result = synthetic_run(rates, rates)
        report = bin_by_event_rate(result, "m")
        assert report.bin_count == 10
        width = 100.0
        for b in range(10):
            center = (report.edges[b] + report.edges[b + 1]) / 2
            assert abs(report.means["r"][b] - center) <= width / 2

    def test_empty_bins_reported_with_count_0_and_null_mean(self):
        rates = [0.0, 1000.0]
        result = synthetic_run(rates, [1.0, 2.0])
        report = bin_by_event_rate(result, "m")
        assert report.counts["r"][0] == 1 and report.counts["r"][9] == 1
        assert report.counts["r"][3] == 0
        assert report.means["r"][3] is None

    def test_default_metric_is_first_registered(self):
        result = synthetic_run([0.0, 10.0], [1.0, 2.0])
        assert bin_by_event_rate(result).metric == "m"

    def test_unscored_rows_excluded_from_means(self):
        result = synthetic_run([0.0, 500.0, 1000.0], [1.0, None, 3.0])
        report = bin_by_event_rate(result, "m")
        assert sum(report.counts["r"]) == 2


class TestDeriveSeed:
    def test_stable_and_distinct(self):
        assert derive_seed(1, "a", "b") == derive_seed(1, "a", "b")
        assert derive_seed(1, "a", "b") != derive_seed(1, "a", "c")
        assert derive_seed(1, "a", "b") != derive_seed(2, "a", "b")

    def test_fits_in_63_bits(self):
        assert 0 <= derive_seed(123, "x") < 2 ** 63
