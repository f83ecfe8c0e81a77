#!/usr/bin/env python3
##############################################################################
# /tests/test_utils.py - Tests for PowerCoreFW utilities                     #
# Copyright (C) 2024 PowerCoreFW contributors                                #
#                                                                            #
# This file is part of PowerCoreFW. You can redistribute it and/or modify    #
# it under the terms of the [BSD-3-Clause] as published by                   #
# the Free Software Foundation.                                              #
##############################################################################

import unittest
import sys
import os
import logging
import time

# Add the src directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
sys.dont_write_bytecode = True

from powercorefw import PowerCoreFW, _


class TestPowerCoreUtilities(unittest.TestCase):
    def test_get_logger_namespace(self):
        self.assertEqual(_.get_logger("collector").name, "powercorefw.collector")
        self.assertEqual(_.get_logger("powercorefw.mlp").name, "powercorefw.mlp")
        self.assertIsInstance(_.get_logger("x"), logging.Logger)

    def test_now(self):
        before = int(time.time() * 1000)
        stamp = _.now()
        after = int(time.time() * 1000)
        self.assertIsInstance(stamp, int)
        self.assertTrue(before <= stamp <= after + 1)

    def test_timed(self):
        result, seconds = _.timed(sum, [1, 2, 3])
        self.assertEqual(result, 6)
        self.assertGreaterEqual(seconds, 0.0)

    def test_monotonic_seconds(self):
        a = _.monotonic_seconds()
        b = _.monotonic_seconds()
        self.assertGreaterEqual(b, a)

    def test_seeded_rng_is_reproducible(self):
        a = _.seeded_rng(7).normal(size=5)
        b = _.seeded_rng(7).normal(size=5)
        self.assertEqual(a.tolist(), b.tolist())
        c = _.seeded_rng(8).normal(size=5)
        self.assertNotEqual(a.tolist(), c.tolist())

    def test_format_real_round_trips(self):
        for value in (0.1, 1.0 / 3.0, 123456.789, 1e-300, -2.5):
            self.assertEqual(float(_.format_real(value)), value)
        self.assertEqual(_.format_real(0.1), "0.1")

    def test_version_metadata(self):
        import powercorefw

        self.assertEqual(powercorefw.__version__, PowerCoreFW._version)
        self.assertEqual(_.tool_version(), PowerCoreFW._version)


if __name__ == "__main__":
    unittest.main()
