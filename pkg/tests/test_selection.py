#!/usr/bin/env python3
##############################################################################
# /tests/test_selection.py - Tests for MIC scoring and the KS test           #
# Copyright (C) 2024 PowerCoreFW contributors                                #
#                                                                            #
# This file is part of PowerCoreFW. You can redistribute it and/or modify    #
# it under the terms of the [BSD-3-Clause] as published by                   #
# the Free Software Foundation.                                              #
##############################################################################

import unittest
import sys
import os

sys.dont_write_bytecode = True
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from powercorefw import (
    Dataset,
    InputValidationError,
    ks_gaussian_test,
    mic,
    select_variables,
    selection_summary,
)

parametrize = pytest.mark.parametrize


def selection_dataset(n=200, seed=0):
    rng = np.random.default_rng(seed)
    cpu = rng.uniform(0.0, 100.0, n)
    disk = rng.uniform(0.0, 50.0, n)
    power = 50.0 + 2.0 * cpu
    return Dataset(
        ["cpu_user", "disk_io_ms", "procs_blocked", "power_w"],
        np.column_stack([cpu, disk, np.zeros(n), power]),
        label="A1",
    )


class TestMic(unittest.TestCase):
    def test_identity_is_one(self):
        x = np.arange(200, dtype=float)
        self.assertAlmostEqual(mic(x, x), 1.0, places=9)

    def test_parabola_is_near_one(self):
        x = np.random.default_rng(1).uniform(-1.0, 1.0, 400)
        self.assertGreater(mic(x, x ** 2), 0.95)

    def test_independent_noise_is_low(self):
        rng = np.random.default_rng(2)
        self.assertLess(mic(rng.normal(size=300), rng.normal(size=300)), 0.5)

    def test_constant_is_zero(self):
        self.assertEqual(mic(np.ones(50), np.arange(50.0)), 0.0)
        self.assertEqual(mic(np.arange(50.0), np.full(50, 3.0)), 0.0)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=150)
        y = x + rng.normal(scale=0.5, size=150)
        self.assertEqual(mic(x, y), mic(y, x))

    def test_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=150)
        y = np.sin(3 * x) + rng.normal(scale=0.2, size=150)
        self.assertAlmostEqual(mic(x, y), mic(np.exp(x), y ** 3 + 2 * y), places=12)

    def test_in_unit_interval(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=120)
        score = mic(x, np.abs(x) + rng.normal(scale=0.1, size=120))
        self.assertTrue(0.0 <= score <= 1.0)

    def test_rejects_bad_input(self):
        with self.assertRaises(InputValidationError):
            mic([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        with self.assertRaises(InputValidationError):
            mic([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
        with self.assertRaises(InputValidationError):
            mic(range(10), range(10), exponent=1.5)


class TestSelectVariables(unittest.TestCase):
    def test_keeps_informative_counters(self):
        report = select_variables(selection_dataset(), threshold=0.10)
        self.assertEqual(report.target, "power_w")
        self.assertEqual(report.scores[0].variable, "cpu_user")
        self.assertAlmostEqual(report.score_of("cpu_user"), 1.0, places=9)
        self.assertIn("cpu_user", report.selected)
        self.assertNotIn("procs_blocked", report.selected)
        self.assertEqual(report.score_of("procs_blocked"), 0.0)

    def test_scores_sorted_descending(self):
        report = select_variables(selection_dataset())
        mics = [s.mic for s in report.scores]
        self.assertEqual(mics, sorted(mics, reverse=True))
        self.assertEqual(len(report.scores), 3)

    def test_threshold_is_inclusive(self):
        d = selection_dataset()
        report = select_variables(d, threshold=0.0)
        self.assertEqual(len(report.selected), 3)
        cpu = report.score_of("cpu_user")
        self.assertIn("cpu_user", select_variables(d, threshold=cpu).selected)

    def test_threads_match_serial(self):
        d = selection_dataset()
        self.assertEqual(select_variables(d, workers=1), select_variables(d, workers=3))

    def test_report_rows(self):
        rows = select_variables(selection_dataset()).to_rows()
        self.assertEqual(rows[0][0], "cpu_user")
        self.assertEqual(rows[0][2], 1)
        self.assertEqual(dict((r[0], r[2]) for r in rows)["procs_blocked"], 0)

    def test_summary(self):
        summary = selection_summary(select_variables(selection_dataset()))
        self.assertEqual(summary["target"], "power_w")
        self.assertIn("cpu_user", summary["selected"])
        self.assertEqual(set(summary["scores"]), {"cpu_user", "disk_io_ms", "procs_blocked"})

    def test_target_must_be_power(self):
        with self.assertRaises(InputValidationError):
            select_variables(selection_dataset(), target="cpu_user")
        with self.assertRaises(InputValidationError):
            select_variables(selection_dataset(), target="missing")
        with self.assertRaises(InputValidationError):
            select_variables(selection_dataset(), threshold=1.5)


class TestKs(unittest.TestCase):
    def test_gaussian_sample_not_rejected(self):
        sample = np.random.default_rng(6).normal(140.0, 5.0, 1000)
        result = ks_gaussian_test(sample)
        self.assertFalse(result.gaussian_rejected_at_5pct)
        self.assertEqual(result.n, 1000)

    def test_skewed_sample_rejected(self):
        sample = np.random.default_rng(7).exponential(10.0, 2000)
        result = ks_gaussian_test(sample)
        self.assertTrue(result.gaussian_rejected_at_5pct)
        self.assertLess(result.p_value, 1e-6)

    def test_constant_sample(self):
        result = ks_gaussian_test(np.full(20, 120.0))
        self.assertEqual(result.statistic, 1.0)
        self.assertEqual(result.p_value, 0.0)

    def test_needs_eight_values(self):
        with self.assertRaises(InputValidationError):
            ks_gaussian_test([1.0, 2.0, 3.0])


@parametrize("n", [4, 10, 57])
def test_mic_small_samples_bounded(n):
    x = np.arange(n, dtype=float)
    assert 0.0 <= mic(x, np.cos(x)) <= 1.0


RELATIONSHIPS = {
    "linear": lambda x: 3.0 * x - 1.0,
    "quadratic": lambda x: (x - 0.5) ** 2,
    "sine": lambda x: np.sin(4.0 * np.pi * x),
}


@parametrize("shape", sorted(RELATIONSHIPS))
def test_mic_noiseless_functions_near_one(shape):
    x = np.random.default_rng(11).uniform(0.0, 1.0, 1000)
    assert mic(x, RELATIONSHIPS[shape](x)) >= 0.9


@parametrize("seed", [12, 13, 14])
def test_mic_independent_uniforms_low(seed):
    rng = np.random.default_rng(seed)
    assert mic(rng.uniform(size=1000), rng.uniform(size=1000)) <= 0.25


@parametrize("shape", sorted(RELATIONSHIPS))
def test_mic_agrees_with_minepy(shape):
    minepy = pytest.importorskip("minepy")
    rng = np.random.default_rng(15)
    x = rng.uniform(0.0, 1.0, 500)
    y = RELATIONSHIPS[shape](x) + rng.normal(scale=0.05, size=500)
    mine = minepy.MINE(alpha=0.6, c=15)
    mine.compute_score(x, y)
    assert abs(mic(x, y) - mine.mic()) < 0.1


def test_ks_rejects_bimodal_sample():
    rng = np.random.default_rng(16)
    sample = np.concatenate([rng.normal(100.0, 2.0, 500), rng.normal(160.0, 2.0, 500)])
    result = ks_gaussian_test(sample)
    assert result.gaussian_rejected_at_5pct
    assert result.p_value < 1e-6


if __name__ == "__main__":
    unittest.main()
