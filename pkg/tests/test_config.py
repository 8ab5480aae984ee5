# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

import unittest

from trilinear_lab.config import SCHEMA, parse_config
from trilinear_lab.errors import ConfigError

TABLE_CONFIG = """\
subcommand: table build
n: 3
R: 32
c: 1/4
surface1.kind: double_cone
surface1.half_width: 0.1
surface2.kind: paraboloid
"""


class TestParseConfig(unittest.TestCase):
    def test_given_minimal_config_when_parse_config_then_defaults_are_filled_in(self):
        config = parse_config("subcommand: threshold\n")

        self.assertEqual(config.subcommand, "threshold")
        for key, field in SCHEMA.items():
            if key != "subcommand":
                self.assertEqual(getattr(config, key), field.default)

    def test_given_rational_string_when_parse_config_then_value_is_exact_float(self):
        config = parse_config("subcommand: trend run\np: 14/15\n")

        self.assertEqual(config.p, 14 / 15)

    def test_given_surface_keys_when_parse_config_then_descriptors_are_numbered_in_order(self):
        config = parse_config(TABLE_CONFIG)

        self.assertEqual([s.kind for s in config.surfaces], ["double_cone", "paraboloid"])
        self.assertEqual(config.surfaces[0].half_width, 0.1)
        self.assertEqual(config.surfaces[1].n, 3)
        self.assertEqual(config.c, 0.25)

    def test_given_overrides_when_parse_config_then_command_line_values_win(self):
        config = parse_config(TABLE_CONFIG, {"R": "16", "seed": 9})

        self.assertEqual(config.R, 16.0)
        self.assertEqual(config.seed, 9)

    def test_given_no_subcommand_when_parse_config_then_config_error_names_the_key(self):
        with self.assertRaises(ConfigError) as context:
            parse_config("n: 3\n")

        self.assertEqual(context.exception.key, "subcommand")

    def test_given_unknown_key_when_parse_config_then_config_error_carries_its_line(self):
        with self.assertRaises(ConfigError) as context:
            parse_config("subcommand: extend\nbogus: 1\n")

        self.assertEqual(context.exception.line, 2)
        self.assertEqual(str(context.exception), "line 2: bogus: unknown key")

    def test_given_unknown_subcommand_when_parse_config_then_config_error_is_raised(self):
        with self.assertRaises(ConfigError):
            parse_config("subcommand: table destroy\n")

    def test_given_k_above_n_plus_one_when_parse_config_then_config_error_is_raised(self):
        with self.assertRaises(ConfigError) as context:
            parse_config("subcommand: threshold\nn: 3\nk: 5\n")

        self.assertIn("k <= n+1", str(context.exception))

    def test_given_integer_where_string_expected_when_parse_config_then_config_error_is_raised(  # noqa: E501
        self,
    ):
        with self.assertRaises(ConfigError):
            parse_config("subcommand: extend\noutput_dir: 3\n")

    def test_given_boolean_for_real_key_when_parse_config_then_config_error_is_raised(self):
        with self.assertRaises(ConfigError):
            parse_config("subcommand: extend\np: true\n")

    def test_given_value_out_of_range_when_parse_config_then_config_error_is_raised(self):
        with self.assertRaises(ConfigError):
            parse_config("subcommand: table build\nc: 1.5\n")

    def test_given_surface_without_kind_when_parse_config_then_config_error_is_raised(self):
        with self.assertRaises(ConfigError):
            parse_config("subcommand: geometry check\nsurface1.half_width: 0.1\n")

    def test_given_unknown_surface_field_when_parse_config_then_config_error_is_raised(self):
        with self.assertRaises(ConfigError):
            parse_config("subcommand: geometry check\nsurface1.colour: red\n")

    def test_given_surface_numbering_gap_when_parse_config_then_config_error_is_raised(self):
        with self.assertRaises(ConfigError):
            parse_config("subcommand: geometry check\nsurface2.kind: paraboloid\n")

    def test_given_malformed_yaml_when_parse_config_then_config_error_is_raised(self):
        with self.assertRaises(ConfigError):
            parse_config("subcommand: [extend\n")

    def test_given_list_document_when_parse_config_then_config_error_is_raised(self):
        with self.assertRaises(ConfigError):
            parse_config("- extend\n")


class TestRunConfig(unittest.TestCase):
    def test_given_equal_configs_when_config_hash_then_hashes_match(self):
        self.assertEqual(
            parse_config(TABLE_CONFIG).config_hash(), parse_config(TABLE_CONFIG).config_hash()
        )

    def test_given_different_seeds_when_config_hash_then_hashes_differ(self):
        first = parse_config(TABLE_CONFIG, {"seed": 1})
        second = parse_config(TABLE_CONFIG, {"seed": 2})

        self.assertNotEqual(first.config_hash(), second.config_hash())

    def test_given_config_when_echo_then_surfaces_omit_unset_fields(self):
        echo = parse_config(TABLE_CONFIG).echo()

        self.assertEqual(echo["R"], 32.0)
        self.assertNotIn("center", echo["surfaces"][0])
        self.assertEqual(echo["surfaces"][0]["kind"], "double_cone")

    def test_given_unknown_attribute_when_getattr_then_attribute_error_is_raised(self):
        with self.assertRaises(AttributeError):
            parse_config("subcommand: threshold\n").nonexistent
