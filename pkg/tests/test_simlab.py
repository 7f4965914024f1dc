import math

import numpy as np
import pytest

from ratiorich import simlab
from ratiorich.estimators import ESTIMATORS, RichnessEstimate
from ratiorich.simlab import (
    DegenerateSampleError,
    SimulationConfig,
    apply_chimeric_inflation,
    calibration_from_report,
    error_stats,
    replicate_rng,
    report_rows,
    report_to_csv,
    report_to_json,
    run_replications,
    runtime_report,
    sample_nb_counts,
    scaled_mad,
    se_calibration,
    subsample_curve,
    truncate_to_observed,
)

from helpers import table


class TestSampleNbCounts:
    def test_mean_within_three_standard_errors(self):
        rng = replicate_rng(123, 0)
        draws = sample_nb_counts(100_000, 500, 0.99, rng)
        mean = 500 * 0.01 / 0.99
        var = 500 * 0.01 / 0.99**2
        tol = 3 * math.sqrt(var / draws.size)
        assert abs(draws.mean() - mean) <= tol

    def test_expected_zero_count(self):
        # P(0) = prob**size evaluated numerically; binomial tolerance
        C = 200_000
        p0 = 0.99**500
        rng = replicate_rng(9, 0)
        zeros = int(np.sum(sample_nb_counts(C, 500, 0.99, rng) == 0))
        sd = math.sqrt(C * p0 * (1 - p0))
        assert abs(zeros - C * p0) <= 5 * sd

    def test_same_seed_same_vector(self):
        a = sample_nb_counts(5000, 500, 0.99, replicate_rng(7, 3))
        b = sample_nb_counts(5000, 500, 0.99, replicate_rng(7, 3))
        assert np.array_equal(a, b)

    def test_different_stream_differs(self):
        a = sample_nb_counts(5000, 500, 0.99, replicate_rng(7, 3))
        b = sample_nb_counts(5000, 500, 0.99, replicate_rng(7, 4))
        assert not np.array_equal(a, b)

    def test_extreme_probability_validation(self):
        with pytest.raises(ValueError):
            sample_nb_counts(10, 5, 0.0, replicate_rng(1, 0))
        with pytest.raises(ValueError):
            sample_nb_counts(10, 5, 1.0, replicate_rng(1, 0))

    def test_underflowing_p0_still_samples(self):
        # prob**size underflows to zero; the log-space walk must cope
        rng = replicate_rng(11, 0)
        draws = sample_nb_counts(2000, 50_000, 0.99, rng)
        mean = 50_000 * 0.01 / 0.99
        assert abs(draws.mean() - mean) <= 5 * math.sqrt(50_000 * 0.01 / 0.99**2 / 2000)


class TestTruncate:
    def test_drops_zeros(self):
        assert truncate_to_observed([0, 0, 1, 2, 2]).counts == {1: 1, 2: 2}

    def test_all_zero_degenerate(self):
        with pytest.raises(DegenerateSampleError):
            truncate_to_observed([0, 0, 0])

    def test_no_zeros_preserves_richness(self):
        t = truncate_to_observed([1, 2, 3, 3])
        assert sum(f for _, f in t.entries) == 4


class TestInflation:
    def test_doubling(self):
        t = apply_chimeric_inflation(table({1: 100, 2: 50}), 100.0)
        assert t.counts == {1: 200, 2: 50}

    def test_deflation(self):
        t = apply_chimeric_inflation(table({1: 100, 2: 50}), -80.0)
        assert t.counts == {1: 20, 2: 50}

    def test_rounding_half_away_from_zero(self):
        t = apply_chimeric_inflation(table({1: 10, 2: 5}), 33.0)
        assert t.counts == {1: 13, 2: 5}  # 13.3 rounds to 13

    def test_rate_zero_is_identity(self):
        t = table({1: 17, 2: 5, 3: 2})
        assert apply_chimeric_inflation(t, 0.0) == t

    def test_full_removal_drops_entry(self):
        t = apply_chimeric_inflation(table({1: 3, 2: 5}), -100.0)
        assert t.counts == {2: 5}

    def test_missing_singletons_pass_through(self):
        t = table({2: 5, 3: 1})
        assert apply_chimeric_inflation(t, 250.0) == t


class TestErrorStats:
    def test_hand_computed_oracle(self):
        # sorted squared errors [0, 100, 100, 10000, 10000]; trimming one per
        # tail leaves mean 3400
        stats = error_stats([4990, 5010, 5000, 5100, 4900], 5000.0, 0.2)
        assert stats.trimmed_rmse == pytest.approx(math.sqrt(3400.0))
        assert stats.mean_sq == pytest.approx(4040.0)
        assert stats.median_sq == pytest.approx(100.0)

    def test_all_exact(self):
        stats = error_stats([5000.0] * 5, 5000.0, 0.2)
        assert stats == (0.0, 0.0, 0.0)

    def test_zero_trim_is_plain_rmse(self):
        stats = error_stats([1.0, 3.0, 7.0], 2.0, 0.0)
        assert stats.trimmed_rmse == pytest.approx(math.sqrt(stats.mean_sq))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            error_stats([], 5.0, 0.2)


class TestRunReplications:
    CFG = dict(C=300, size=500, prob=0.99, chimeric_rate=0.0, reps=30, seed=99)

    def test_identical_config_identical_report(self):
        cfg = SimulationConfig(**self.CFG)
        a = report_to_csv(run_replications(cfg))
        b = report_to_csv(run_replications(cfg))
        assert a == b

    def test_serial_parallel_identical(self):
        cfg = SimulationConfig(**self.CFG)
        serial = report_to_csv(run_replications(cfg, workers=1))
        parallel = report_to_csv(run_replications(cfg, workers=2))
        assert serial == parallel

    def test_nof1_invariant_to_inflation_rate(self):
        # the singleton-free estimator never reads f_1, so its statistics are
        # identical across chimeric rates on the same seed
        reports = [
            run_replications(
                SimulationConfig(**{**self.CFG, "chimeric_rate": rate}, estimators=("nof1",))
            )
            for rate in (0.0, 100.0, -80.0)
        ]
        rows = [report_rows(r) for r in reports]
        values = [[(stat, val) for _, stat, val, *_ in r] for r in rows]
        assert values[0] == values[1] == values[2]

    def test_failures_plus_successes_equal_reps(self):
        cfg = SimulationConfig(C=30, size=2, prob=0.7, reps=40, seed=5, estimators=("nof1", "chao1"))
        report = run_replications(cfg)
        for entry in report.stats:
            assert 0 <= entry.failures <= cfg.reps

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimulationConfig(C=0, size=5, prob=0.5)
        with pytest.raises(ValueError):
            SimulationConfig(C=5, size=5, prob=1.5)
        with pytest.raises(ValueError):
            SimulationConfig(C=5, size=5, prob=0.5, trim=0.5)
        with pytest.raises(ValueError):
            SimulationConfig(C=5, size=5, prob=0.5, estimators=("bogus",))
        with pytest.raises(ValueError):
            SimulationConfig(C=5, size=5, prob=0.5, seed=-1)


class TestReportSerialization:
    def test_fixed_csv_columns(self):
        cfg = SimulationConfig(C=200, size=500, prob=0.99, reps=5, seed=1, estimators=("chao1",))
        text = report_to_csv(run_replications(cfg))
        header, *rows = text.strip().split("\n")
        assert header == "estimator,statistic,value,failures,reps,seed"
        stats = [row.split(",")[1] for row in rows]
        assert stats == [
            "trimmed_rmse",
            "mean_sq_error",
            "median_sq_error",
            "median_se",
            "mad_of_estimates",
        ]

    def test_runtime_rows_opt_in(self):
        cfg = SimulationConfig(C=200, size=500, prob=0.99, reps=5, seed=1, estimators=("chao1",))
        report = run_replications(cfg)
        assert len(report_rows(report, include_runtimes=True)) == 8
        assert len(report_rows(report)) == 5

    def test_json_matches_csv_values(self):
        import json

        cfg = SimulationConfig(C=200, size=500, prob=0.99, reps=8, seed=3, estimators=("chao1",))
        report = run_replications(cfg)
        payload = json.loads(report_to_json(report))
        csv_rows = report_rows(report)
        for estimator, stat, value, *_ in csv_rows:
            assert payload["estimators"][estimator][stat] == pytest.approx(value)


class TestCalibration:
    def test_requires_single_estimator(self):
        cfg = SimulationConfig(C=100, size=500, prob=0.99, reps=3, seed=1)
        with pytest.raises(ValueError, match="one estimator"):
            se_calibration(cfg)

    def test_degenerate_zero_spread_flagged(self):
        # two taxa sampled at depth ~50 reads each: chao1 is the constant 2
        # with zero standard error in every replicate
        cfg = SimulationConfig(C=2, size=50, prob=0.5, reps=5, seed=8, estimators=("chao1",))
        with pytest.warns(UserWarning, match="zero spread"):
            cal = se_calibration(cfg)
        assert cal.mad_of_estimates == 0.0
        assert math.isnan(cal.relative_error_percent)

    def test_matches_report_fields(self):
        cfg = SimulationConfig(C=300, size=500, prob=0.99, reps=25, seed=4, estimators=("nof1",))
        report = run_replications(cfg)
        cal = calibration_from_report(report)
        entry = report.stats[0]
        assert cal.median_se == entry.median_se
        assert cal.mad_of_estimates == entry.mad_of_estimates
        expected = 100.0 * (entry.median_se - entry.mad_of_estimates) / entry.mad_of_estimates
        assert cal.relative_error_percent == pytest.approx(expected)


class TestScaledMad:
    def test_normal_consistency_factor(self):
        assert scaled_mad([1.0, 2.0, 3.0]) == pytest.approx(1.4826)

    def test_constant_sample(self):
        assert scaled_mad([5.0, 5.0, 5.0]) == 0.0


class TestSubsampleCurve:
    VECTOR = [1] * 256 + [2] * 128 + [3] * 64 + [4] * 32 + [5] * 16 + [6] * 8

    def test_full_fraction_single_evaluation(self):
        rng = np.random.default_rng(2)
        rows = subsample_curve(self.VECTOR, [1.0], reps=50, rng=rng, estimators=("chao1",))
        assert len(rows) == 1
        row = rows[0]
        assert row.sd_C_hat == 0.0
        from ratiorich.freqtab import from_abundances
        from ratiorich.estimators import chao1

        assert row.mean_C_hat == pytest.approx(chao1(from_abundances(self.VECTOR)).C_hat)

    def test_rows_ascending_fraction_major(self):
        rng = np.random.default_rng(3)
        rows = subsample_curve(
            self.VECTOR, [0.5, 1.0], reps=5, rng=rng, estimators=("chao1", "nof1")
        )
        assert [(r.fraction, r.estimator) for r in rows] == [
            (0.5, "chao1"),
            (0.5, "nof1"),
            (1.0, "chao1"),
            (1.0, "nof1"),
        ]

    def test_half_depth_estimates_below_full_on_average(self):
        rng = np.random.default_rng(4)
        rows = subsample_curve(self.VECTOR, [0.5, 1.0], reps=200, rng=rng, estimators=("chao1",))
        half, full = rows[0], rows[1]
        assert half.failures == 0
        assert half.mean_C_hat < full.mean_C_hat

    def test_unsorted_rejected(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError, match="ascending"):
            subsample_curve(self.VECTOR, [1.0, 0.5], reps=2, rng=rng)

    def test_out_of_range_rejected(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError, match="fractions"):
            subsample_curve(self.VECTOR, [0.0, 0.5], reps=2, rng=rng)


class TestRuntimeReport:
    def test_noop_estimator_times_near_zero(self, monkeypatch):
        def instant(table):
            return RichnessEstimate("instant", 1.0, 0.0, None, 0.0, None, [])

        monkeypatch.setitem(ESTIMATORS, "instant", instant)
        cfg = SimulationConfig(C=100, size=500, prob=0.99, reps=10, seed=6, estimators=("instant",))
        times = runtime_report(cfg)["instant"]
        assert all(t >= 0.0 for t in times)
        assert times[2] < 0.01  # median of a no-op call

    def test_real_estimators_return_finite_triples(self):
        cfg = SimulationConfig(C=300, size=500, prob=0.99, reps=8, seed=6, estimators=("nof1", "chao1"))
        report = runtime_report(cfg)
        for name in ("nof1", "chao1"):
            tmean, mean, median = report[name]
            assert all(math.isfinite(x) and x >= 0 for x in (tmean, mean, median))
