#!/usr/bin/env python3
##############################################################################
# /tests/test_mlr.py - Tests for multiple linear regression                  #
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
    LinearModel,
    coefficient_table,
    fit_mlr,
    predict_mlr,
    solve_least_squares,
)

parametrize = pytest.mark.parametrize


def linear_dataset(n=50, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    cpu = rng.uniform(0, 100, n)
    disk = rng.uniform(0, 1000, n)
    power = 80.0 + 0.5 * cpu + 0.01 * disk + rng.normal(scale=noise, size=n)
    return Dataset(["cpu_user", "disk_io_ms", "power_w"], np.column_stack([cpu, disk, power]))


class TestFitMlr(unittest.TestCase):
    def test_line_through_three_points(self):
        d = Dataset(["x", "power_w"], [[0.0, 1.0], [1.0, 3.0], [2.0, 5.0]])
        m = fit_mlr(d, "power_w", ["x"])
        self.assertAlmostEqual(m.intercept, 1.0, places=12)
        self.assertAlmostEqual(m.coefficients[0], 2.0, places=12)
        self.assertAlmostEqual(predict_mlr(m, [10.0]), 21.0, places=10)

    def test_recovers_noiseless_coefficients(self):
        m = fit_mlr(linear_dataset())
        self.assertAlmostEqual(m.intercept, 80.0, places=8)
        self.assertAlmostEqual(m.coefficients[0], 0.5, places=10)
        self.assertAlmostEqual(m.coefficients[1], 0.01, places=10)
        self.assertEqual(m.features, ("cpu_user", "disk_io_ms"))
        self.assertEqual(m.warnings, ())

    def test_residual_mean_is_zero(self):
        m = fit_mlr(linear_dataset(noise=3.0))
        self.assertAlmostEqual(m.residual_mean, 0.0, places=9)

    def test_matches_numpy_lstsq(self):
        d = linear_dataset(noise=2.0, seed=3)
        m = fit_mlr(d)
        x = np.column_stack([np.ones(d.n_rows), d.matrix(["cpu_user", "disk_io_ms"])])
        expected, *_ = np.linalg.lstsq(x, d.column("power_w"), rcond=None)
        self.assertTrue(np.allclose([m.intercept, *m.coefficients], expected, atol=1e-8))

    def test_rank_deficient_column_gets_zero(self):
        base = linear_dataset()
        cpu = base.column("cpu_user")
        d = Dataset(
            ["cpu_user", "cpu_copy", "power_w"],
            np.column_stack([cpu, 2.0 * cpu, base.column("power_w") - 0.01 * base.column("disk_io_ms")]),
        )
        m = fit_mlr(d)
        self.assertEqual(len(m.warnings), 1)
        self.assertIn(0.0, m.coefficients)
        fitted = m.predict_many(d.matrix(["cpu_user", "cpu_copy"]))
        self.assertTrue(np.allclose(fitted, d.column("power_w")))

    def test_constant_feature_is_dropped(self):
        base = linear_dataset()
        d = Dataset(
            ["cpu_user", "mem_total_kb", "power_w"],
            np.column_stack([base.column("cpu_user"), np.full(base.n_rows, 4046780.0), base.column("power_w")]),
        )
        m = fit_mlr(d)
        self.assertEqual(m.coefficients[1], 0.0)
        self.assertEqual(len(m.warnings), 1)

    def test_too_few_rows(self):
        d = Dataset(["a", "b", "power_w"], [[1.0, 2.0, 3.0], [2.0, 1.0, 4.0]])
        with self.assertRaises(InputValidationError):
            fit_mlr(d)

    def test_target_not_a_feature(self):
        with self.assertRaises(InputValidationError):
            fit_mlr(linear_dataset(), "power_w", ["cpu_user", "power_w"])

    def test_no_features_predicts_mean(self):
        d = linear_dataset()
        m = fit_mlr(d, "power_w", [])
        self.assertAlmostEqual(predict_mlr(m, []), float(d.column("power_w").mean()))


class TestPredictMlr(unittest.TestCase):
    def test_arity_and_finiteness(self):
        m = LinearModel(1.0, (2.0, 3.0), ("a", "b"))
        self.assertEqual(predict_mlr(m, [1.0, 1.0]), 6.0)
        with self.assertRaises(InputValidationError):
            predict_mlr(m, [1.0])
        with self.assertRaises(InputValidationError):
            predict_mlr(m, [1.0, float("inf")])

    def test_predict_many_matches_predict(self):
        d = linear_dataset(noise=1.0)
        m = fit_mlr(d)
        x = d.matrix(list(m.features))
        many = m.predict_many(x)
        self.assertTrue(np.allclose([m.predict(row) for row in x], many, rtol=1e-12, atol=0.0))

    def test_dict_round_trip(self):
        m = fit_mlr(linear_dataset(noise=1.0))
        again = LinearModel.from_dict(m.to_dict(), m.features, m.target)
        self.assertEqual(again, m)

    def test_coefficient_table(self):
        m = LinearModel(1.5, (2.0,), ("cpu_user",))
        self.assertEqual(coefficient_table(m), [("(intercept)", 1.5), ("cpu_user", 2.0)])


class TestSolveLeastSquares(unittest.TestCase):
    def test_empty_design(self):
        beta, dropped = solve_least_squares(np.zeros((3, 0)), np.ones(3))
        self.assertEqual(beta.shape, (0,))
        self.assertEqual(dropped, [])


def random_problem(seed, n=100, v=5):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, v)) * rng.uniform(0.1, 100.0, v)
    y = 40.0 + x @ rng.normal(size=v) + rng.normal(scale=3.0, size=n)
    names = [f"c{i}" for i in range(v)]
    return Dataset(names + ["power_w"], np.column_stack([x, y])), x, y


@parametrize("seed", range(6))
def test_matches_pseudo_inverse(seed):
    d, x, y = random_problem(seed)
    m = fit_mlr(d)
    expected = np.linalg.pinv(np.column_stack([np.ones(len(y)), x])) @ y
    np.testing.assert_allclose([m.intercept, *m.coefficients], expected, rtol=1e-7, atol=1e-8)


@parametrize("seed", range(6))
def test_residuals_orthogonal_to_design(seed):
    d, x, y = random_problem(seed)
    m = fit_mlr(d)
    residuals = y - m.predict_many(x)
    assert abs(residuals.sum()) < 1e-8 * np.abs(y).sum()
    for column in x.T:
        assert abs(column @ residuals) < 1e-8 * np.abs(column).sum() * np.abs(y).max()
    assert abs(m.residual_mean) < 1e-9 * np.abs(y).max()


@parametrize("shift", [-500.0, 0.25, 1e4])
def test_target_shift_moves_only_intercept(shift):
    d, x, y = random_problem(3)
    shifted = Dataset(d.names, np.column_stack([x, y + shift]))
    base, moved = fit_mlr(d), fit_mlr(shifted)
    assert moved.intercept == pytest.approx(base.intercept + shift, rel=1e-9, abs=1e-7)
    np.testing.assert_allclose(moved.coefficients, base.coefficients, rtol=1e-9, atol=1e-12)


if __name__ == "__main__":
    unittest.main()
