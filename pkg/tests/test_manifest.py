#!/usr/bin/env python3
##############################################################################
# /tests/test_manifest.py - Tests for the run manifest                       #
# Copyright (C) 2024 PowerCoreFW contributors                                #
#                                                                            #
# This file is part of PowerCoreFW. You can redistribute it and/or modify    #
# it under the terms of the [BSD-3-Clause] as published by                   #
# the Free Software Foundation.                                              #
##############################################################################

import unittest
import sys
import os
import json
import tempfile

sys.dont_write_bytecode = True
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from powercorefw import InputValidationError, PowerCoreError, RunManifest, StageRecord


class TestRunManifest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "run.jsonl")

    def tearDown(self):
        self.tmp.cleanup()

    def test_empty(self):
        self.assertEqual(RunManifest(self.path).records(), [])

    def test_append_and_read(self):
        m = RunManifest(self.path)
        m.append("select", ["a1.csv"], ["sel.csv"], {"threshold": 0.1}, 0.8, started_ms=1000)
        m.append("train", ["a1.csv", "sel.csv"], ["a1-mlr.json"], {"model": "mlr"}, 0.2)
        records = RunManifest(self.path).records()
        self.assertEqual([r.stage for r in records], ["select", "train"])
        self.assertEqual(records[0].parameters, {"threshold": 0.1})
        self.assertEqual(records[0].started_ms, 1000)
        self.assertEqual(records[1].inputs, ("a1.csv", "sel.csv"))
        self.assertEqual(m.outputs(), ["sel.csv", "a1-mlr.json"])

    def test_one_json_object_per_line(self):
        m = RunManifest(self.path)
        m.append("collect", [], ["a1.csv"])
        m.append("select", ["a1.csv"], ["sel.csv"])
        with open(self.path) as f:
            lines = f.read().splitlines()
        self.assertEqual(len(lines), 2)
        self.assertEqual(json.loads(lines[0])["stage"], "collect")

    def test_output_recorded_once(self):
        m = RunManifest(self.path)
        m.append("train", ["a1.csv"], ["model.json"])
        with self.assertRaises(InputValidationError):
            m.append("train", ["a1.csv"], ["./model.json"])
        with self.assertRaises(InputValidationError):
            m.append("evaluate", ["a1.csv"], ["r.csv", "r.csv"])
        self.assertEqual(len(m.records()), 1)

    def test_malformed_line(self):
        with open(self.path, "w") as f:
            f.write("{not json}\n")
        with self.assertRaises(InputValidationError):
            RunManifest(self.path).records()

    def test_record_dict_round_trip(self):
        record = StageRecord("choose", ("a.csv", "b.csv"), (), {"winner": "a.csv"}, 0.01, 5)
        self.assertEqual(StageRecord.from_dict(record.to_dict()), record)

    def test_records_without_command_line_load(self):
        with open(self.path, "w") as f:
            f.write(json.dumps({"stage": "select", "outputs": ["sel.csv"]}) + "\n")
        self.assertEqual(RunManifest(self.path).records()[0].argv, ())

    def test_check_outputs_does_not_write(self):
        m = RunManifest(self.path)
        self.assertEqual(m.check_outputs(["out/./a.csv"]), [os.path.normpath("out/a.csv")])
        self.assertFalse(os.path.exists(self.path))
        m.append("select", [], ["a.csv"])
        with self.assertRaises(InputValidationError):
            m.check_outputs(["a.csv"])


class TestReplay(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.manifest = RunManifest(os.path.join(self.tmp.name, "run.jsonl"))
        self.calls = []

    def tearDown(self):
        self.tmp.cleanup()

    def runner(self, argv):
        self.calls.append(list(argv))
        return 0

    def test_runs_command_lines_in_order(self):
        self.manifest.append("select", ["a1.csv"], ["sel.csv"], argv=["select", "a1.csv", "-o", "sel.csv"])
        self.manifest.append("describe", ["a1.csv"], [], argv=["describe", "a1.csv"])
        self.manifest.append("train", ["a1.csv"], ["m.json"], argv=["train", "a1.csv", "-o", "m.json"])
        replayed = self.manifest.replay(self.runner)
        self.assertEqual([r.stage for r in replayed], ["select", "train"])
        self.assertEqual(self.calls, [["select", "a1.csv", "-o", "sel.csv"], ["train", "a1.csv", "-o", "m.json"]])
        self.assertEqual(len(self.manifest.records()), 3)

    def test_missing_command_line(self):
        self.manifest.append("select", ["a1.csv"], ["sel.csv"])
        with self.assertRaises(InputValidationError):
            self.manifest.replay(self.runner)

    def test_failing_stage_stops_replay(self):
        self.manifest.append("select", [], ["sel.csv"], argv=["select"])
        self.manifest.append("train", [], ["m.json"], argv=["train"])
        with self.assertRaises(PowerCoreError):
            self.manifest.replay(lambda argv: 1)


if __name__ == "__main__":
    unittest.main()
