# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

import math
import os
import unittest
from fractions import Fraction

import numpy as np
from lab_fixtures import SMALL_C, SMALL_R

from trilinear_lab.errors import ExperimentError
from trilinear_lab.experiments import (
    RecursionConfig,
    SquashedCapConfig,
    classify_recursion,
    counterexample_target,
    cross_cube_trend,
    double_cone_trend,
    random_wave,
    recursion_iterate,
    resolved_cells,
    scaling_fit,
    squashed_cap_run,
    squashed_cap_series,
    table_study,
    threshold_exponent,
    transversality_precheck,
)
from trilinear_lab.geometry import double_cone_triple
from trilinear_lab.waves import FrequencyGrid


class TestExponents(unittest.TestCase):
    def test_given_n_three_and_k_three_when_threshold_exponent_then_exponent_is_fourteen_fifteenths(  # noqa: E501
        self,
    ):
        self.assertEqual(threshold_exponent(3, 3), Fraction(14, 15))

    def test_given_k_one_when_threshold_exponent_then_exponent_is_the_linear_one(self):
        self.assertEqual(threshold_exponent(3, 1), Fraction(10, 3))

    def test_given_k_two_and_n_plus_one_when_threshold_exponent_then_exact_values_are_returned(  # noqa: E501
        self,
    ):
        self.assertEqual(threshold_exponent(3, 2), Fraction(3, 2))
        self.assertEqual(threshold_exponent(3, 4), Fraction(2, 3))

    def test_given_increasing_k_when_threshold_exponent_then_exponent_decreases(self):
        for n in (3, 4, 5):
            values = [threshold_exponent(n, k) for k in range(1, n + 2)]

            self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_given_k_above_n_plus_one_when_threshold_exponent_then_experiment_error_is_raised(
        self,
    ):
        with self.assertRaises(ExperimentError):
            threshold_exponent(3, 5)

    def test_given_p_at_threshold_when_counterexample_target_then_normalized_exponent_vanishes(  # noqa: E501
        self,
    ):
        self.assertAlmostEqual(counterexample_target(3, 3, 14 / 15), 0.0)
        self.assertAlmostEqual(counterexample_target(3, 3, 14 / 15, normalized=False), 7.5)

    def test_given_exact_power_law_when_scaling_fit_then_slope_and_intercept_are_recovered(
        self,
    ):
        fit = scaling_fit([1.0, 2.0, 4.0], [3.0, 12.0, 48.0])

        self.assertAlmostEqual(fit.slope, 2.0)
        self.assertAlmostEqual(fit.intercept, math.log(3.0))
        self.assertAlmostEqual(fit.residual, 0.0)

    def test_given_two_points_when_scaling_fit_then_experiment_error_is_raised(self):
        with self.assertRaises(ExperimentError):
            scaling_fit([1.0, 2.0], [1.0, 2.0])

    def test_given_nonpositive_value_when_scaling_fit_then_experiment_error_is_raised(self):
        with self.assertRaises(ExperimentError):
            scaling_fit([1.0, 2.0, 4.0], [1.0, 0.0, 2.0])


class TestSquashedCaps(unittest.TestCase):
    def setUp(self):
        self.config = SquashedCapConfig(
            epsilons=(0.25, 0.125, 0.0625), resolution=2, space_resolution=4, samples=16
        )

    def test_given_epsilon_when_squashed_cap_run_then_pointwise_ratio_is_certified(self):
        record = squashed_cap_run(self.config, 0.25)

        self.assertGreaterEqual(record.pointwise_min, record.certified_factor - 1e-9)
        self.assertGreater(record.certified_factor, 0.0)

    def test_given_epsilon_when_squashed_cap_run_then_numeric_norm_matches_closed_form(self):
        record = squashed_cap_run(self.config, 0.25)

        self.assertAlmostEqual(record.cap_volume, (2 * 0.0625) ** 2 * 0.5)
        for value in record.norm_numeric:
            self.assertAlmostEqual(value, record.norm_closed_form)

    def test_given_three_epsilons_when_squashed_cap_series_then_every_p_is_fitted(self):
        records, fits = squashed_cap_series(self.config, threads=2)

        self.assertEqual([r.epsilon for r in records], [0.25, 0.125, 0.0625])
        self.assertEqual(set(fits), set(self.config.p_values))

    def test_given_default_caps_when_squashed_cap_series_then_slopes_match_the_exponent_algebra(  # noqa: E501
        self,
    ):
        config = SquashedCapConfig()

        records, fits = squashed_cap_series(config)

        for record in records:
            self.assertGreaterEqual(record.pointwise_min, 0.9)
        for p in config.p_values:
            self.assertLessEqual(abs(fits[p].slope - (7.5 - 7 / p)), 0.3)
            self.assertAlmostEqual(counterexample_target(3, 3, p), 7.5 - 7 / p)

    def test_given_epsilon_above_a_quarter_when_squashed_cap_config_then_experiment_error_is_raised(  # noqa: E501
        self,
    ):
        with self.assertRaises(ExperimentError):
            SquashedCapConfig(epsilons=(0.5,))

    def test_given_single_node_resolution_when_squashed_cap_config_then_experiment_error_is_raised(  # noqa: E501
        self,
    ):
        with self.assertRaises(ExperimentError):
            SquashedCapConfig(resolution=1)


class TestRecursion(unittest.TestCase):
    def test_given_p_above_the_critical_exponent_when_recursion_iterate_then_trace_is_bounded(
        self,
    ):
        config = RecursionConfig(n=3, p=0.95, C=10.0, C0=4, epsilon=0.01, max_doublings=60)

        trace = recursion_iterate(config)

        self.assertEqual(trace.classification, "bounded")
        self.assertEqual(len(trace.radii), 61)
        self.assertEqual(trace.radii[0], 256.0)
        self.assertIsNotNone(trace.cauchy_step)
        self.assertTrue(0 < trace.tail_bound < math.inf)

    def test_given_p_at_the_critical_exponent_when_recursion_iterate_then_trace_is_divergent(
        self,
    ):
        config = RecursionConfig(n=3, p=14 / 15, epsilon=0.01)

        trace = recursion_iterate(config)

        self.assertEqual(trace.classification, "divergent")
        self.assertIsNone(trace.cauchy_step)
        self.assertIsNone(trace.tail_bound)

    def test_given_p_below_the_critical_exponent_when_recursion_iterate_then_trace_is_divergent(  # noqa: E501
        self,
    ):
        trace = recursion_iterate(RecursionConfig(n=3, p=0.90))

        self.assertEqual(trace.classification, "divergent")
        self.assertGreater(trace.log_values[-1], trace.log_values[1])

    def test_given_grid_of_p_when_recursion_iterate_then_classification_follows_exponent_sign(
        self,
    ):
        for p in np.linspace(0.5, 1.5, 50):
            config = RecursionConfig(n=3, p=float(p), max_doublings=20)
            exponent = 7 / 4 * (1 / p - 1.5 * 5 / 7) + config.epsilon

            trace = recursion_iterate(config)

            expected = "bounded" if exponent < 0 else "divergent"
            self.assertEqual(trace.classification, expected)
            if expected == "divergent":
                steps = np.diff(trace.log_values)
                self.assertTrue(np.all(steps >= 2 * np.log1p(config.C) - 1e-9))

    def test_given_any_trace_when_recursion_iterate_then_running_maximum_never_decreases(self):
        for p in (0.9, 0.95, 1.2):
            trace = recursion_iterate(RecursionConfig(n=3, p=p, max_doublings=30))

            self.assertTrue(np.all(np.diff(trace.log_values) >= 0))
            self.assertEqual(trace.classification, classify_recursion(trace.config))

    def test_given_explicit_start_when_recursion_config_then_start_is_r0(self):
        self.assertEqual(RecursionConfig(R0=10.0).start, 10.0)
        self.assertEqual(RecursionConfig(C0=2).start, 16.0)

    def test_given_nonpositive_p_when_recursion_config_then_experiment_error_is_raised(self):
        with self.assertRaises(ExperimentError):
            RecursionConfig(p=0.0)


class TestTrends(unittest.TestCase):
    def test_given_standard_triple_when_double_cone_trend_then_every_radius_has_a_ratio(self):
        trend = double_cone_trend(
            3, 1.0, [2.0, 4.0, 8.0], resolution=4, grid_resolution=3, sample_count=8
        )

        self.assertEqual(len(trend.values), 3)
        self.assertTrue(all(v > 0 for v in trend.values))
        self.assertIsNotNone(trend.fit)

    def test_given_zero_amplitude_when_double_cone_trend_then_values_are_zero(self):
        trend = double_cone_trend(
            3,
            1.0,
            [2.0, 4.0, 8.0],
            resolution=2,
            grid_resolution=2,
            amplitudes=(1.0, 0.0, 1.0),
            sample_count=8,
        )

        self.assertEqual(trend.values, (0.0, 0.0, 0.0))
        self.assertIsNone(trend.fit)

    def test_given_triple_with_flat_patch_when_transversality_precheck_then_experiment_error_is_raised(  # noqa: E501
        self,
    ):
        with self.assertRaises(ExperimentError):
            transversality_precheck(double_cone_triple(3, violating=True), 8, 0)

    def test_given_seed_and_index_when_random_wave_then_stream_is_reproducible(self):
        patch = double_cone_triple(3)[0]
        grid = FrequencyGrid.uniform(patch.box, 2)

        first = random_wave(patch, grid, 7, 0)
        again = random_wave(patch, grid, 7, 0)
        other = random_wave(patch, grid, 7, 1)

        np.testing.assert_array_equal(first.amplitudes, again.amplitudes)
        self.assertFalse(np.array_equal(first.amplitudes, other.amplitudes))

    def test_given_standard_triple_when_table_study_then_table_identity_holds(self):
        study = table_study(double_cone_triple(3), SMALL_R, SMALL_C, depth=1, resolution=4)

        self.assertLess(study.decomposition_error, 1e-12)
        self.assertGreaterEqual(study.cross_cube_max, 0.0)
        self.assertTrue(study.margin_ok)

    def test_given_larger_side_when_resolved_cells_then_cells_grow_and_keep_the_phase_bound(
        self,
    ):
        patch = double_cone_triple(3)[0]
        wave = random_wave(patch, FrequencyGrid.uniform(patch.box, 3), 0, 0)
        extent = np.max(np.abs(patch.embed(wave.grid.nodes)).sum(axis=1))

        small = resolved_cells([wave], 16.0, 4, 2)
        large = resolved_cells([wave], 64.0, 4, 2)

        self.assertEqual(small % 2, 0)
        self.assertEqual(large % 2, 0)
        self.assertGreater(large, small)
        self.assertLessEqual(64.0 / large * extent, np.pi / 2 + 1e-12)
        self.assertEqual(resolved_cells([wave], 0.5, 8, 2), 8)

    def test_given_nonpositive_side_when_resolved_cells_then_experiment_error_is_raised(self):
        with self.assertRaises(ExperimentError):
            resolved_cells([], 0.0, 4, 2)


@unittest.skipUnless(os.environ.get("TRILINEAR_LAB_SLOW"), "slow cross-cube acceptance run")
class TestCrossCubeAcceptance(unittest.TestCase):
    def test_given_standard_triple_when_cross_cube_trend_then_exponent_is_near_the_prediction(
        self,
    ):
        radii = [16.0, 32.0, 64.0, 128.0]

        _, fit = cross_cube_trend(3, radii, SMALL_C, depth=1, resolution=4)

        self.assertIsNotNone(fit)
        self.assertLessEqual(fit.slope, -(3 - 2) / 4 + 0.2)
