#!/usr/bin/env python3
##############################################################################
# /tests/test_evaluation.py - Tests for metrics, CV, timing and ranking      #
# Copyright (C) 2024 PowerCoreFW contributors                                #
#                                                                            #
# This file is part of PowerCoreFW. You can redistribute it and/or modify    #
# it under the terms of the [BSD-3-Clause] as published by                   #
# the Free Software Foundation.                                              #
##############################################################################

import unittest
import sys
import os
import io
import math

sys.dont_write_bytecode = True
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from powercorefw import (
    Dataset,
    InputValidationError,
    METRIC_NAMES,
    MetricError,
    cross_validate,
    fit_mlr,
    fold_indices,
    metrics,
    r_squared,
    rank_reports,
    read_report_summary,
    timing_report,
    write_report,
    write_trace,
    read_rows,
)

parametrize = pytest.mark.parametrize


class MeanModel:
    def __init__(self, value):
        self.value = value

    def predict_many(self, matrix):
        return np.full(len(matrix), self.value)


def mean_trainer(d, target, features):
    return MeanModel(float(d.column(target).mean()))


def linear_dataset(n=60, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    cpu = rng.uniform(0, 100, n)
    power = 100.0 + 0.7 * cpu + rng.normal(scale=noise, size=n)
    return Dataset(["cpu_user", "power_w"], np.column_stack([cpu, power]), label="A1")


class TestMetrics(unittest.TestCase):
    def test_known_values(self):
        vec = metrics([1.0, 2.0, 4.0], [1.0, 2.0, 3.0])
        self.assertEqual(vec.se.tolist(), [0.0, 0.0, 1.0])
        self.assertEqual(vec.ae.tolist(), [0.0, 0.0, 1.0])
        self.assertEqual(vec.pe.tolist(), [0.0, 0.0, 0.25])
        self.assertEqual(vec.ape.tolist(), [0.0, 0.0, 0.25])
        self.assertAlmostEqual(vec.ase[2], 2.0 / 3.0)
        self.assertAlmostEqual(vec.r2, 1.0 - 1.0 / (14.0 / 3.0))

    def test_signed_percentage_error(self):
        vec = metrics([10.0, 20.0], [12.0, 15.0])
        self.assertEqual(vec.pe.tolist(), [-0.2, 0.25])
        self.assertEqual(vec.ape.tolist(), [0.2, 0.25])

    def test_zero_actual_excluded_from_pe(self):
        vec = metrics([0.0, 2.0, 4.0], [1.0, 2.0, 3.0])
        self.assertTrue(math.isnan(vec.pe[0]))
        self.assertEqual(vec.pe_excluded, 1)
        self.assertEqual(vec.summary()["APE"][0], 0.125)

    def test_perfect_estimates(self):
        y = [100.0, 110.0, 105.0]
        vec = metrics(y, y)
        self.assertEqual(vec.r2, 1.0)
        self.assertEqual(float(vec.ape.max()), 0.0)

    def test_constant_actual(self):
        with self.assertRaises(MetricError):
            metrics([5.0, 5.0, 5.0], [5.0, 4.0, 6.0])
        with self.assertRaises(MetricError):
            r_squared([5.0, 5.0], [1.0, 2.0])

    def test_length_mismatch(self):
        with self.assertRaises(InputValidationError):
            metrics([1.0, 2.0], [1.0])

    def test_unknown_metric(self):
        with self.assertRaises(InputValidationError):
            metrics([1.0, 2.0], [1.0, 2.0]).vector("MAPE")


class TestFolds(unittest.TestCase):
    def test_partition(self):
        folds = fold_indices(23, 10, seed=0)
        self.assertEqual(len(folds), 10)
        self.assertEqual(sorted(np.concatenate(folds).tolist()), list(range(23)))
        sizes = [f.shape[0] for f in folds]
        self.assertLessEqual(max(sizes) - min(sizes), 1)

    def test_seeded(self):
        a = fold_indices(30, 5, seed=3)
        b = fold_indices(30, 5, seed=3)
        self.assertTrue(all(np.array_equal(x, y) for x, y in zip(a, b)))

    def test_rejects_bad_k(self):
        with self.assertRaises(InputValidationError):
            fold_indices(5, 10, seed=0)
        with self.assertRaises(InputValidationError):
            fold_indices(5, 1, seed=0)


class TestCrossValidate(unittest.TestCase):
    def test_noiseless_linear_model(self):
        report = cross_validate(linear_dataset(), "power_w", ["cpu_user"], fit_mlr, k=10, seed=0)
        self.assertAlmostEqual(report.mean("R2"), 1.0, places=9)
        self.assertLess(report.mean("APE"), 1e-9)
        self.assertEqual(report.k, 10)
        self.assertEqual(len(report.fold_r2), 10)
        self.assertEqual(len(report.fold_seconds), 10)

    def test_pooled_in_fold_order(self):
        d = linear_dataset(noise=2.0)
        report = cross_validate(d, None, None, fit_mlr, k=5, seed=1)
        folds = fold_indices(d.n_rows, 5, seed=1)
        self.assertEqual(report.row_index.tolist(), np.concatenate(folds).tolist())
        self.assertEqual(report.actual.tolist(), d.column("power_w")[report.row_index].tolist())
        self.assertAlmostEqual(report.mean("R2"), r_squared(report.actual, report.estimated))

    def test_mean_predictor_has_no_skill(self):
        report = cross_validate(linear_dataset(noise=1.0), "power_w", ["cpu_user"], mean_trainer, k=5)
        self.assertLess(report.mean("R2"), 0.0)

    def test_reproducible_and_thread_safe(self):
        d = linear_dataset(noise=3.0)
        a = cross_validate(d, "power_w", ["cpu_user"], fit_mlr, k=10, seed=4)
        b = cross_validate(d, "power_w", ["cpu_user"], fit_mlr, k=10, seed=4, workers=4)
        self.assertEqual(a.estimated.tolist(), b.estimated.tolist())
        self.assertEqual(a.summary, b.summary)

    def test_too_few_rows(self):
        with self.assertRaises(InputValidationError):
            cross_validate(linear_dataset(n=5), "power_w", ["cpu_user"], fit_mlr, k=10)

    def test_report_tables(self):
        report = cross_validate(linear_dataset(noise=1.0), "power_w", ["cpu_user"], fit_mlr, k=5, model="mlr")
        rows = report.table_rows()
        self.assertEqual([r[0] for r in rows], list(METRIC_NAMES))

        buf = io.StringIO()
        write_report(report, buf)
        buf.seek(0)
        self.assertEqual(read_report_summary(buf), report.summary)

        buf = io.StringIO()
        write_trace(report, buf)
        buf.seek(0)
        header, trace = read_rows(buf)
        self.assertEqual(header, ["row", "actual", "estimated"])
        self.assertEqual(len(trace), 60)

    def test_report_counts_zero_actuals(self):
        rng = np.random.default_rng(9)
        cpu = np.concatenate([np.zeros(3), rng.uniform(1.0, 100.0, 57)])
        d = Dataset(["cpu_user", "power_w"], np.column_stack([cpu, 0.7 * cpu]), label="A1")
        report = cross_validate(d, "power_w", ["cpu_user"], fit_mlr, k=5, seed=2)
        self.assertEqual(report.pe_excluded, 3)

        buf = io.StringIO()
        write_report(report, buf)
        buf.seek(0)
        _, rows = read_rows(buf)
        self.assertEqual(rows[-1], ["PE_excluded", "3", "0"])
        buf.seek(0)
        self.assertNotIn("PE_excluded", read_report_summary(buf))

    def test_not_a_report(self):
        with self.assertRaises(InputValidationError):
            read_report_summary(io.StringIO("variable,mic,selected\ncpu_user,0.5,1\n"))


class TestTiming(unittest.TestCase):
    def test_repeats(self):
        timing = timing_report(fit_mlr, linear_dataset(), repeats=3)
        self.assertEqual(len(timing.samples), 3)
        self.assertGreaterEqual(timing.seconds, 0.0)
        self.assertGreaterEqual(timing.sd, 0.0)
        self.assertEqual(float(timing), timing.seconds)

    def test_rejects_zero_repeats(self):
        with self.assertRaises(InputValidationError):
            timing_report(fit_mlr, linear_dataset(), repeats=0)


class TestRanking(unittest.TestCase):
    def test_ape_then_r2(self):
        reports = {
            "ret": {"APE": (0.05, 0.01), "R2": (0.90, 0.02)},
            "mlr": {"APE": (0.03, 0.01), "R2": (0.80, 0.02)},
            "mlp": {"APE": (0.03, 0.01), "R2": (0.95, 0.02)},
        }
        self.assertEqual([r.name for r in rank_reports(reports)], ["mlp", "mlr", "ret"])

    def test_full_tie_keeps_input_order(self):
        same = {"APE": (0.02, 0.0), "R2": (0.9, 0.0)}
        self.assertEqual([r.name for r in rank_reports({"b": same, "a": same})], ["b", "a"])

    def test_undefined_scores_rank_last(self):
        reports = {
            "a": {"APE": (math.nan, math.nan), "R2": (0.99, 0.0)},
            "b": {"APE": (0.02, 0.0), "R2": (math.nan, math.nan)},
            "c": {"APE": (0.02, 0.0), "R2": (0.90, 0.0)},
            "d": {"APE": (0.05, 0.0), "R2": (0.99, 0.0)},
        }
        self.assertEqual([r.name for r in rank_reports(reports)], ["c", "b", "d", "a"])

    def test_rejects_empty_or_incomplete(self):
        with self.assertRaises(InputValidationError):
            rank_reports({})
        with self.assertRaises(InputValidationError):
            rank_reports({"x": {"APE": (0.1, 0.0)}})


@parametrize("k", [2, 5, 10])
def test_every_row_held_out_once(k):
    report = cross_validate(linear_dataset(n=40, noise=1.0), "power_w", ["cpu_user"], fit_mlr, k=k)
    assert sorted(report.row_index.tolist()) == list(range(40))
    assert report.estimated.shape == (40,)


def noisy_series(seed, n=50):
    rng = np.random.default_rng(seed)
    y = rng.uniform(50.0, 200.0, n)
    return y, y + rng.normal(scale=5.0, size=n)


@parametrize("seed", range(5))
def test_metric_identities(seed):
    y, yhat = noisy_series(seed)
    vec = metrics(y, yhat)
    np.testing.assert_allclose(vec.se, vec.ae ** 2)
    np.testing.assert_allclose(vec.ape, np.abs(vec.pe))
    np.testing.assert_allclose(vec.pe, (y - yhat) / y)
    expected_r2 = 1.0 - ((y - yhat) ** 2).sum() / ((y - y.mean()) ** 2).sum()
    assert vec.r2 == pytest.approx(expected_r2, rel=1e-12)
    scale = np.abs(np.diff(y)).mean()
    assert vec.ase.mean() * scale == pytest.approx(vec.ae.mean(), rel=1e-12)


@parametrize("factor", [0.5, 3.0, 1000.0])
def test_relative_metrics_ignore_units(factor):
    y, yhat = noisy_series(7)
    base, scaled = metrics(y, yhat), metrics(factor * y, factor * yhat)
    for name in ("PE", "APE", "ASE"):
        np.testing.assert_allclose(scaled.vector(name), base.vector(name), rtol=1e-10)
    np.testing.assert_allclose(scaled.se, factor ** 2 * base.se, rtol=1e-10)
    assert scaled.r2 == pytest.approx(base.r2, rel=1e-10)


if __name__ == "__main__":
    unittest.main()
