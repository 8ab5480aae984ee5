# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

import csv
import io
import json
import os
import tempfile
import unittest
from fractions import Fraction
from unittest.mock import patch

from trilinear_lab.cli import HANDLERS, _jsonable, build_parser, main, write_rows
from trilinear_lab.errors import InvariantViolation


class TestParser(unittest.TestCase):
    def test_given_nested_subcommand_when_parse_args_then_subcommand_joins_group_and_action(
        self,
    ):
        args = build_parser().parse_args(["--seed", "3", "table", "build", "--R", "32"])

        self.assertEqual(args.subcommand, "table build")
        self.assertEqual(args.seed, 3)
        self.assertEqual(args.R, "32")

    def test_given_unset_flags_when_parse_args_then_they_are_absent(self):
        args = vars(build_parser().parse_args(["threshold"]))

        self.assertNotIn("n", args)
        self.assertNotIn("seed", args)
        self.assertEqual(args["subcommand"], "threshold")


class TestMain(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)
        self.output = self.directory.name

    def _summary(self, stem):
        with open(os.path.join(self.output, f"{stem}.json")) as stream:
            return json.load(stream)

    @patch("sys.stdout", new_callable=io.StringIO)
    def test_given_threshold_subcommand_when_main_then_exponent_is_printed_and_written(
        self, patch_stdout
    ):
        code = main(["--output-dir", self.output, "threshold", "--n", "3", "--k", "3"])

        self.assertEqual(code, 0)
        self.assertEqual(patch_stdout.getvalue().strip(), "14/15")
        summary = self._summary("threshold")
        self.assertEqual(summary["schema_version"], 1)
        self.assertEqual(summary["results"]["threshold"], "14/15")
        self.assertEqual(summary["config"]["k"], 3)
        self.assertEqual(len(summary["config_hash"]), 64)

    @patch("sys.stderr", new_callable=io.StringIO)
    def test_given_k_out_of_range_when_main_then_exit_code_is_one(self, patch_stderr):
        code = main(["--output-dir", self.output, "threshold", "--n", "3", "--k", "5"])

        self.assertEqual(code, 1)
        self.assertIn("k: ", patch_stderr.getvalue())

    @patch("sys.stderr", new_callable=io.StringIO)
    def test_given_missing_config_file_when_main_then_exit_code_is_one(self, patch_stderr):
        path = os.path.join(self.output, "absent.yaml")

        code = main(["--config", path, "--output-dir", self.output, "threshold"])

        self.assertEqual(code, 1)
        self.assertIn("absent.yaml", patch_stderr.getvalue())

    def test_given_config_file_when_main_then_command_line_overrides_the_file(self):
        path = os.path.join(self.output, "run.yaml")
        with open(path, "w") as stream:
            stream.write("subcommand: threshold\nn: 3\nk: 3\n")

        with patch("sys.stdout", new_callable=io.StringIO):
            code = main(["--config", path, "--output-dir", self.output, "threshold", "--k", "1"])

        self.assertEqual(code, 0)
        self.assertEqual(self._summary("threshold")["results"]["threshold"], "10/3")

    def test_given_p_above_the_critical_exponent_when_recursion_iterate_then_trace_is_written(
        self,
    ):
        code = main(["--output-dir", self.output, "recursion", "iterate", "--p", "0.95"])

        self.assertEqual(code, 0)
        with open(os.path.join(self.output, "recursion_iterate.csv")) as stream:
            rows = list(csv.reader(stream))
        self.assertEqual(len(rows), 62)
        self.assertEqual(rows[0][:3], ["m", "p", "R"])
        self.assertEqual(rows[1][-1], "")
        results = self._summary("recursion_iterate")["results"]
        self.assertEqual(results["classification"], "bounded")
        self.assertEqual(results["closed_form"], "bounded")

    def test_given_failing_check_when_main_then_exit_code_is_two_and_summary_is_written(self):
        def failing(config):
            return [{"a": 1.0}], {"value": float("inf")}, {"identity": False}

        with patch.dict(HANDLERS, {"threshold": failing}):
            code = main(["--output-dir", self.output, "threshold"])

        self.assertEqual(code, 2)
        summary = self._summary("threshold")
        self.assertEqual(summary["checks"], {"identity": False})
        self.assertEqual(summary["results"]["value"], "inf")

    @patch("sys.stderr", new_callable=io.StringIO)
    def test_given_invariant_violation_when_main_then_exit_code_is_two(self, patch_stderr):
        def violating(config):
            raise InvariantViolation("pointwise bound failed")

        with patch.dict(HANDLERS, {"threshold": violating}):
            code = main(["--output-dir", self.output, "threshold"])

        self.assertEqual(code, 2)
        self.assertIn("pointwise bound failed", patch_stderr.getvalue())

    def test_given_standard_triple_when_geometry_check_then_every_check_passes(self):
        code = main(["--output-dir", self.output, "geometry", "check", "--samples", "16"])

        self.assertEqual(code, 0)
        summary = self._summary("geometry_check")
        self.assertTrue(all(summary["checks"].values()))
        self.assertGreater(summary["results"]["nu_curvature"], 0.0)

    @patch("sys.stderr", new_callable=io.StringIO)
    def test_given_unknown_flag_when_main_then_exit_code_is_one(self, patch_stderr):
        code = main(["--output-dir", self.output, "threshold", "--bogus", "1"])

        self.assertEqual(code, 1)
        self.assertIn("--bogus", patch_stderr.getvalue())

    @patch("sys.stdout", new_callable=io.StringIO)
    def test_given_help_flag_when_main_then_exit_code_is_zero(self, patch_stdout):
        self.assertEqual(main(["--help"]), 0)
        self.assertIn("usage", patch_stdout.getvalue())

    def test_given_scale_sixteen_when_packets_census_then_decay_check_passes(self):
        code = main(["--output-dir", self.output, "packets", "census", "--R", "16"])

        self.assertEqual(code, 0)
        summary = self._summary("packets_census")
        self.assertTrue(summary["checks"]["tube_decay"])
        self.assertEqual(summary["results"]["decay"]["distances"], [64.0, 128.0, 256.0, 512.0])
        self.assertLessEqual(
            summary["results"]["census_ratio"], summary["results"]["census_ratio_power_N"]
        )


class TestArtifacts(unittest.TestCase):
    def test_given_non_finite_and_rational_values_when_jsonable_then_they_become_strings(self):
        value = _jsonable({"a": float("inf"), "b": Fraction(14, 15), 3: (1, 2.5)})

        self.assertEqual(value, {"a": "inf", "b": "14/15", "3": [1, 2.5]})

    def test_given_rows_with_different_keys_when_write_rows_then_header_is_their_union(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "rows.csv")

            write_rows(path, [{"a": 1, "b": 0.1}, {"a": 2, "c": None}])

            with open(path) as stream:
                rows = list(csv.reader(stream))
        self.assertEqual(rows, [["a", "b", "c"], ["1", "0.10000000000000001", ""], ["2", "", ""]])

