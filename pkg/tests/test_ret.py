#!/usr/bin/env python3
##############################################################################
# /tests/test_ret.py - Tests for the regression tree                         #
# Copyright (C) 2024 PowerCoreFW contributors                                #
#                                                                            #
# This file is part of PowerCoreFW. You can redistribute it and/or modify    #
# it under the terms of the [BSD-3-Clause] as published by                   #
# the Free Software Foundation.                                              #
##############################################################################

import unittest
import sys
import os
import math

sys.dont_write_bytecode = True
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from powercorefw import (
    Dataset,
    InputValidationError,
    LeafNode,
    SplitNode,
    TreeModel,
    best_split,
    fit_ret,
    predict_ret,
    render_tree,
)

parametrize = pytest.mark.parametrize


def step_dataset():
    return Dataset(["x", "power_w"], [[1.0, 1.0], [2.0, 1.0], [3.0, 10.0], [4.0, 10.0]])


def noisy_dataset(n=80, seed=0):
    rng = np.random.default_rng(seed)
    cpu = rng.uniform(0, 100, n)
    disk = rng.uniform(0, 100, n)
    power = np.where(cpu > 50, 150.0, 100.0) + 0.1 * disk + rng.normal(scale=1.0, size=n)
    return Dataset(["cpu_user", "disk_io_ms", "power_w"], np.column_stack([cpu, disk, power]))


class TestBestSplit(unittest.TestCase):
    def test_step(self):
        candidate = best_split(step_dataset(), "power_w", ["x"])
        self.assertEqual(candidate.variable, "x")
        self.assertEqual(candidate.split_value, 2.5)
        self.assertEqual(candidate.gain, 81.0)

    def test_identical_targets(self):
        d = Dataset(["x", "power_w"], [[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
        self.assertIsNone(best_split(d, "power_w", ["x"]))

    def test_constant_feature(self):
        d = Dataset(["x", "power_w"], [[1.0, 5.0], [1.0, 6.0], [1.0, 7.0]])
        self.assertIsNone(best_split(d, "power_w", ["x"]))

    def test_tie_goes_to_first_name(self):
        d = Dataset(
            ["b", "a", "power_w"],
            [[1.0, 1.0, 1.0], [2.0, 2.0, 1.0], [3.0, 3.0, 10.0], [4.0, 4.0, 10.0]],
        )
        self.assertEqual(best_split(d, "power_w", ["b", "a"]).variable, "a")

    def test_needs_two_rows(self):
        with self.assertRaises(InputValidationError):
            best_split(step_dataset().take([0]), "power_w", ["x"])


class TestFitRet(unittest.TestCase):
    def test_single_split(self):
        m = fit_ret(step_dataset(), "power_w", ["x"])
        self.assertEqual(m.internal_count(), 1)
        self.assertEqual(predict_ret(m, [0.0]), 1.0)
        self.assertEqual(predict_ret(m, [2.5]), 1.0)
        self.assertEqual(predict_ret(m, [2.6]), 10.0)

    def test_infinite_alpha_is_single_leaf(self):
        m = fit_ret(noisy_dataset(), alpha=math.inf)
        self.assertIsInstance(m.root, LeafNode)
        self.assertAlmostEqual(m.root.prediction, float(noisy_dataset().column("power_w").mean()))

    def test_zero_alpha_fits_training_data(self):
        d = noisy_dataset(n=40)
        m = fit_ret(d, alpha=0.0)
        fitted = m.predict_many(d.matrix(list(m.features)))
        self.assertTrue(np.allclose(fitted, d.column("power_w")))

    def test_larger_alpha_gives_smaller_tree(self):
        d = noisy_dataset()
        sizes = [len(fit_ret(d, alpha=a).leaves()) for a in (0.0, 0.001, 0.01, 0.1)]
        self.assertEqual(sizes, sorted(sizes, reverse=True))

    def test_finds_the_step(self):
        m = fit_ret(noisy_dataset())
        self.assertIsInstance(m.root, SplitNode)
        self.assertEqual(m.root.variable, "cpu_user")
        self.assertTrue(40.0 < m.root.split_value < 60.0)

    def test_leaf_sizes_add_up(self):
        m = fit_ret(noisy_dataset())
        self.assertEqual(sum(leaf.n for leaf in m.leaves()), 80)
        self.assertEqual(m.root.n, 80)

    def test_constant_target(self):
        d = Dataset(["x", "power_w"], [[1.0, 3.0], [2.0, 3.0], [3.0, 3.0]])
        m = fit_ret(d)
        self.assertIsInstance(m.root, LeafNode)
        self.assertEqual(m.root.prediction, 3.0)

    def test_no_features(self):
        m = fit_ret(step_dataset(), "power_w", [])
        self.assertEqual(predict_ret(m, []), 5.5)

    def test_rejects_bad_alpha(self):
        with self.assertRaises(InputValidationError):
            fit_ret(step_dataset(), alpha=-1.0)
        with self.assertRaises(InputValidationError):
            fit_ret(step_dataset(), alpha=float("nan"))


class TestPredictRet(unittest.TestCase):
    def test_mapping_input(self):
        m = fit_ret(step_dataset())
        self.assertEqual(predict_ret(m, {"x": 4.0}), 10.0)
        with self.assertRaises(InputValidationError):
            predict_ret(m, {"y": 4.0})

    def test_arity(self):
        m = fit_ret(step_dataset())
        with self.assertRaises(InputValidationError):
            predict_ret(m, [1.0, 2.0])

    def test_dict_round_trip(self):
        m = fit_ret(noisy_dataset())
        self.assertEqual(TreeModel.from_dict(m.to_dict(), m.features, m.target), m)

    def test_infinite_alpha_serializes(self):
        m = fit_ret(step_dataset(), alpha=math.inf)
        doc = m.to_dict()
        self.assertEqual(doc["alpha"], "inf")
        self.assertEqual(TreeModel.from_dict(doc, m.features, m.target), m)

    def test_render(self):
        text = render_tree(fit_ret(step_dataset()))
        self.assertIn("x <= 2.5", text)
        self.assertIn("leaf n=2 -> 10", text)


@parametrize("seed", [0, 1, 2])
def test_predictions_are_leaf_means(seed):
    d = noisy_dataset(seed=seed)
    m = fit_ret(d)
    means = {leaf.prediction for leaf in m.leaves()}
    for row in d.matrix(list(m.features)):
        assert predict_ret(m, row) in means


def exhaustive_split(x, y, features):
    """Every feature and every midpoint, gains from direct sums of squares."""
    def sse(v):
        return float(((v - v.mean()) ** 2).sum()) if v.size else 0.0

    parent = sse(y)
    best = None
    for j in sorted(range(len(features)), key=lambda i: features[i]):
        values = np.unique(x[:, j])
        for a, b in zip(values[:-1], values[1:]):
            cut = (a + b) / 2.0
            left = x[:, j] <= cut
            gain = parent - sse(y[left]) - sse(y[~left])
            if best is None or gain > best[2] + 1e-9 * max(1.0, abs(best[2])):
                best = (features[j], cut, gain)
    return best


@parametrize("seed", range(8))
def test_best_split_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    features = ["zeta", "alpha", "mid"]
    x = np.column_stack([
        rng.integers(0, 12, 40).astype(float),
        rng.normal(size=40).round(1),
        rng.uniform(0.0, 5.0, 40),
    ])
    y = 2.0 * (x[:, 0] > 6) + x[:, 2] + rng.normal(scale=0.5, size=40)
    d = Dataset(features + ["power_w"], np.column_stack([x, y]))

    found = best_split(d, "power_w", features)
    variable, value, gain = exhaustive_split(x, y, features)
    assert found.variable == variable
    assert found.split_value == pytest.approx(value)
    assert found.gain == pytest.approx(gain, rel=1e-9)


def test_identical_columns_split_on_first_name():
    rng = np.random.default_rng(30)
    cpu = rng.uniform(0.0, 100.0, 30)
    d = Dataset(["user", "busy", "power_w"], np.column_stack([cpu, cpu, 50.0 + (cpu > 40.0) * 20.0]))
    assert best_split(d, "power_w", ["user", "busy"]).variable == "busy"


if __name__ == "__main__":
    unittest.main()
