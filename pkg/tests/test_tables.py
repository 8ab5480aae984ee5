# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

import os
import tempfile
import unittest
from unittest.mock import patch

import numpy as np
from lab_fixtures import SMALL_C, SMALL_R, small_decomposition

from trilinear_lab.errors import TableError
from trilinear_lab.experiments import pair_census_trend, triple_decompositions
from trilinear_lab.geometry import double_cone_triple
from trilinear_lab.tables import (
    CubeFamily,
    InteriorRegion,
    TubeWeightMatrix,
    _cluster_count,
    averaging_bound,
    build_table,
    cube_cutoff_norm,
    cross_cube_norm,
    find_averaging_cube,
    interior_fraction,
    localized_trilinear_diagnostic,
    pair_census,
    slab_density,
    subdivide,
    three_sequence_bound,
    tube_weights,
    two_thirds_bound,
    write_table,
)
from trilinear_lab.waves import FreeWave, FrequencyGrid, SpaceTimeCube, mass


class TestCubeFamily(unittest.TestCase):
    def setUp(self):
        self.family = subdivide(SpaceTimeCube.cube([0.0, 0.0], 4.0, 4), 1)

    def test_given_level_one_when_subdivide_then_four_children_of_half_side(self):
        self.assertEqual(self.family.count, 4)
        np.testing.assert_allclose(self.family.child_sides, [2.0, 2.0])
        np.testing.assert_allclose(self.family.centers[0], [-1.0, -1.0])

    def test_given_point_when_locate_then_child_index_and_offset_are_returned(self):
        index, offset = self.family.locate(np.array([[-1.5, 1.5]]))

        self.assertEqual(int(index[0]), 1)
        np.testing.assert_allclose(offset[0], [-0.25, 0.25])

    def test_given_negative_level_when_subdivide_then_table_error_is_raised(self):
        with self.assertRaises(TableError):
            subdivide(SpaceTimeCube.cube([0.0], 1.0, 1), -1)

    def test_given_interior_region_when_contains_then_only_cores_are_inside(self):
        region = InteriorRegion(self.family, 0.5)

        inside = region.contains(np.array([[-1.0, -1.0], [-0.1, -1.0], [5.0, 0.0]]))

        self.assertEqual(inside.tolist(), [True, False, False])

    def test_given_c_when_interior_fraction_then_fraction_is_complement_of_cores(self):
        self.assertAlmostEqual(interior_fraction(3, 0.1), 1.0 - 0.9**4)
        self.assertLessEqual(interior_fraction(3, 0.1), 4 * 0.1)


class TestAveragingCube(unittest.TestCase):
    def setUp(self):
        self.outer = SpaceTimeCube.cube([0.0, 0.0], 4.0, 8)

    def test_given_zero_field_when_find_averaging_cube_then_ratio_is_one(self):
        result = find_averaging_cube(np.zeros((8, 8)), self.outer, 0.25, 1, 1.0)

        self.assertEqual(result.ratio, 1.0)

    def test_given_constant_field_when_find_averaging_cube_then_centered_candidate_captures_everything(  # noqa: E501
        self,
    ):
        result = find_averaging_cube(np.ones((8, 8)), self.outer, 0.25, 0, 1.0)

        self.assertAlmostEqual(result.ratio, 1.0)
        self.assertAlmostEqual(result.side, 2.0)
        self.assertLessEqual(result.ratio, result.bound)

    def test_given_field_of_wrong_shape_when_find_averaging_cube_then_table_error_is_raised(
        self,
    ):
        with self.assertRaises(TableError):
            find_averaging_cube(np.ones((4, 4)), self.outer, 0.25, 1, 1.0)

    def test_given_random_fields_when_find_averaging_cube_then_norms_match_brute_force(self):
        rng = np.random.default_rng(0)
        points = self.outer.points
        in_quarter = np.all(np.abs(points) <= 0.5, axis=1)
        for _ in range(50):
            field = rng.standard_normal((8, 8))

            result = find_averaging_cube(field, self.outer, 0.3, 1, 1.0, candidates=3)

            weights = np.abs(field.ravel()) * self.outer.cell_volume
            expected = []
            for center in result.candidate_centers:
                low = center - 1.0
                child = low + np.floor(points - low) + 0.5
                core = np.all(np.abs(points - child) <= 0.35, axis=1)
                inside = np.all(np.abs(points - center) <= 1.0, axis=1)
                expected.append(np.sum(weights[in_quarter & core & inside]))
            np.testing.assert_allclose(result.candidate_norms, expected, atol=1e-12)
            best = result.candidate_centers[int(np.argmax(expected))]
            np.testing.assert_allclose(result.center, best)
            self.assertAlmostEqual(result.ratio, np.sum(weights[in_quarter]) / max(expected))

    def test_given_random_fields_and_small_c_when_find_averaging_cube_then_ratio_is_within_bound(  # noqa: E501
        self,
    ):
        rng = np.random.default_rng(1)
        for _ in range(50):
            result = find_averaging_cube(rng.standard_normal((8, 8)), self.outer, 0.01, 1, 1.0)

            self.assertLessEqual(result.ratio, averaging_bound(1, 0.01, 1.0))

    def test_given_zero_c_when_averaging_bound_then_bound_is_one(self):
        self.assertEqual(averaging_bound(3, 0.0, 1.0), 1.0)


class TestTable(unittest.TestCase):
    def setUp(self):
        self.decomposition, self.patch = small_decomposition()
        partner_patch = double_cone_triple(3)[1]
        self.partner = FreeWave.constant(
            partner_patch, FrequencyGrid.uniform(partner_patch.box, 2)
        )
        self.cube = SpaceTimeCube.cube(np.zeros(4), SMALL_R, 4)

    def test_given_zero_row_when_normalized_then_row_becomes_uniform(self):
        family = subdivide(SpaceTimeCube.cube([0.0], 1.0, 2), 1)
        weights = TubeWeightMatrix(np.array([[1.0, 3.0], [0.0, 0.0]]), family)

        np.testing.assert_allclose(weights.normalized(), [[0.25, 0.75], [0.5, 0.5]])

    def test_given_partner_when_build_table_then_entries_sum_to_the_wave(self):
        weights = tube_weights(self.decomposition, self.partner, self.cube, depth=1, threads=2)

        table = build_table(self.decomposition, weights)

        self.assertEqual(weights.entries.shape, (len(self.decomposition.tubes), 16))
        self.assertLess(table.decomposition_error(), 1e-12)
        self.assertTrue(table.margin_check()[2])

    @patch("trilinear_lab.tables.extend_on_grid")
    def test_given_partner_without_mass_when_build_table_then_every_entry_is_a_sixteenth_of_the_wave(  # noqa: E501
        self, patch_extend_on_grid
    ):
        patch_extend_on_grid.side_effect = lambda wave, cube: np.zeros(
            cube.resolution, dtype=complex
        )
        weights = tube_weights(self.decomposition, self.partner, self.cube, depth=1)

        table = build_table(self.decomposition, weights)

        source = self.decomposition.source
        np.testing.assert_allclose(table.entry(5).amplitudes, source.amplitudes / 16)
        self.assertAlmostEqual(table.mass(), mass(source) / 16)
        self.assertAlmostEqual(table.mass_constant(), (1 / 16 - 1) / SMALL_C)

    def test_given_cube_of_wrong_side_when_tube_weights_then_table_error_is_raised(self):
        cube = SpaceTimeCube.cube(np.zeros(4), 2 * SMALL_R, 4)

        with self.assertRaises(TableError):
            tube_weights(self.decomposition, self.partner, cube, depth=1)

    def test_given_coarse_resolution_when_tube_weights_then_table_error_is_raised(self):
        cube = SpaceTimeCube.cube(np.zeros(4), SMALL_R, 2)

        with self.assertRaises(TableError):
            tube_weights(self.decomposition, self.partner, cube, depth=1)

    def test_given_zero_partners_when_cross_cube_norm_then_norm_is_zero(self):
        weights = tube_weights(self.decomposition, self.partner, self.cube, depth=1)
        table = build_table(self.decomposition, weights)
        zero = self.partner.scaled(0.0)

        self.assertEqual(cross_cube_norm(table, 0, 1, [zero, zero], SMALL_C, 1.0, 2), 0.0)

    def test_given_tubes_near_and_far_from_cube_when_tube_weights_then_weight_concentrates_near(
        self,
    ):
        weights = tube_weights(self.decomposition, self.partner, self.cube, depth=1)

        tubes = self.decomposition.tubes
        sums = weights.row_sums
        near = [i for i, tube in enumerate(tubes) if np.allclose(tube.x_T, 0.0)]
        far = [i for i, tube in enumerate(tubes) if np.max(np.abs(tube.x_T)) > SMALL_R]
        self.assertTrue(near)
        self.assertTrue(far)
        self.assertGreater(np.min(sums[near]), 10 * np.max(sums[far]))

    def test_given_swapped_or_scaled_partners_when_cross_cube_norm_then_norm_is_symmetric(self):
        weights = tube_weights(self.decomposition, self.partner, self.cube, depth=1)
        table = build_table(self.decomposition, weights)
        other = self.decomposition.source

        value = cross_cube_norm(table, 0, 5, [self.partner, other], SMALL_C, 1.0, 2)

        swapped = cross_cube_norm(table, 0, 5, [other, self.partner], SMALL_C, 1.0, 2)
        scaled = cross_cube_norm(table, 0, 5, [self.partner.scaled(3j), other], SMALL_C, 1.0, 2)
        self.assertAlmostEqual(swapped, value, delta=1e-12 * max(1.0, value))
        self.assertAlmostEqual(scaled, 3 * value, delta=1e-9 * max(1.0, value))

    def test_given_equal_cubes_when_cross_cube_norm_then_table_error_is_raised(self):
        weights = tube_weights(self.decomposition, self.partner, self.cube, depth=1)
        table = build_table(self.decomposition, weights)

        with self.assertRaises(TableError):
            cross_cube_norm(table, 2, 2, [self.partner, self.partner], SMALL_C)

    def test_given_table_when_write_table_then_coefficients_have_one_row_per_tube(self):
        weights = tube_weights(self.decomposition, self.partner, self.cube, depth=1)
        table = build_table(self.decomposition, weights)

        with tempfile.TemporaryDirectory() as directory:
            path = write_table(table, directory)

            with open(path) as stream:
                lines = stream.read().splitlines()
            self.assertEqual(len(lines), len(self.decomposition.tubes) + 1)
            self.assertTrue(os.path.exists(os.path.join(directory, "manifest.json")))


class TestBounds(unittest.TestCase):
    def test_given_sequences_when_three_sequence_bound_then_bound_holds(self):
        lhs, rhs, holds = three_sequence_bound([1, 1], [1, 1], [1, 1], 0.5)

        self.assertAlmostEqual(lhs, 2.0)
        self.assertAlmostEqual(rhs, np.sqrt(8.0))
        self.assertTrue(holds)

    def test_given_exponent_below_one_third_when_three_sequence_bound_then_table_error_is_raised(  # noqa: E501
        self,
    ):
        with self.assertRaises(TableError):
            three_sequence_bound([1], [1], [1], 0.25)

    def test_given_waves_when_two_thirds_bound_then_bound_scales_like_r_to_three_halves(self):
        patch = double_cone_triple(3)[0]
        wave = FreeWave.constant(patch, FrequencyGrid.uniform(patch.box, 2))

        bound = two_thirds_bound(4.0, [wave, wave, wave])

        self.assertAlmostEqual(bound, 8.0 * mass(wave) ** 1.5)

    def test_given_anchor_when_slab_density_then_anchor_node_is_inside_the_slab(self):
        patch = double_cone_triple(3)[0]
        density = slab_density(patch, patch.center, 1e-3)

        self.assertEqual(density(patch.center[None, :])[0], 1.0)

    def test_given_thin_slab_when_localized_trilinear_diagnostic_then_table_error_is_raised(
        self,
    ):
        cube = SpaceTimeCube.cube(np.zeros(4), 4.0, 2)

        with self.assertRaises(TableError):
            localized_trilinear_diagnostic(cube, [], 0.1)

    def test_given_constant_triple_when_localized_trilinear_diagnostic_then_ratio_is_positive(  # noqa: E501
        self,
    ):
        waves = [
            FreeWave.constant(p, FrequencyGrid.uniform(p.box, 2)) for p in double_cone_triple(3)
        ]
        cube = SpaceTimeCube.cube(np.zeros(4), 4.0, 2)

        ratio = localized_trilinear_diagnostic(cube, waves, 1.0)

        self.assertGreater(ratio, 0.0)
        silent = [waves[0].scaled(0.0)] + waves[1:]
        self.assertEqual(localized_trilinear_diagnostic(cube, silent, 1.0), 0.0)

    def test_given_zero_wave_when_cube_cutoff_norm_then_norm_is_zero(self):
        patch = double_cone_triple(3)[0]
        wave = FreeWave.constant(patch, FrequencyGrid.uniform(patch.box, 2), 0.0)

        self.assertEqual(cube_cutoff_norm(wave, SpaceTimeCube.cube(np.zeros(4), 2.0, 2), 10), 0.0)


class TestPairCensus(unittest.TestCase):
    def test_given_nearby_occurrences_when_cluster_count_then_they_form_one_cluster(self):
        indices = np.arange(10)[:, None]
        occurrences = np.array([[0, 0], [1, 1], [5, 5]])

        self.assertEqual(_cluster_count(occurrences, indices, near=2), 2)
        self.assertEqual(_cluster_count(occurrences[:0], indices, near=2), 0)

    def test_given_family_of_wrong_side_when_pair_census_then_table_error_is_raised(self):
        decomposition, patch = small_decomposition()
        family = subdivide(SpaceTimeCube.cube(np.zeros(4), SMALL_R, 2), 1)

        with self.assertRaises(TableError):
            pair_census(decomposition, decomposition, family, patch, patch.center[None, :])

    def test_given_cubes_of_side_r_when_pair_census_then_max_multiplicity_is_the_largest_count(  # noqa: E501
        self,
    ):
        decomposition, patch = small_decomposition()
        lattice = decomposition.lattice
        family = CubeFamily(SpaceTimeCube.cube(np.zeros(4), SMALL_R, 4), lattice.J)

        census = pair_census(decomposition, decomposition, family, patch, lattice.leaf_reps)

        self.assertEqual(census.max_multiplicity, max(census.counts.values(), default=0))
        self.assertTrue(all(count >= 1 for count in census.counts.values()))


class TestPairCensusOccurrences(unittest.TestCase):
    def test_given_one_tube_per_surface_when_pair_census_then_every_pair_has_multiplicity_one(self):  # noqa: E501
        triple = double_cone_triple(3)
        second, third = triple_decompositions(triple[1:], SMALL_R, SMALL_C, 1, seed=0)
        J = second.lattice.J
        family = subdivide(SpaceTimeCube.cube(np.zeros(4), SMALL_R, 2**J), J)

        census = pair_census(
            second,
            third,
            family,
            triple[0],
            triple[0].center[None, :],
            near=4,
            tube_radius=2 * second.lattice.r,
            separation=0.0,
        )

        self.assertGreater(census.related_pairs, 0)
        self.assertEqual(len(census.counts), 1)
        self.assertEqual(census.max_multiplicity, 1)

    def test_given_standard_triple_when_pair_census_trend_then_occurrences_are_found(self):
        trend, censuses = pair_census_trend(3, [SMALL_R], SMALL_C)

        self.assertEqual(len(censuses), 1)
        self.assertGreater(censuses[0].related_pairs, 0)
        self.assertGreaterEqual(trend.values[0], 1.0)

    def test_given_violating_triple_when_pair_census_trend_then_occurrences_are_found(self):
        trend, censuses = pair_census_trend(3, [SMALL_R], SMALL_C, violating=True)

        self.assertGreater(censuses[0].related_pairs, 0)
        self.assertEqual(trend.values[0], float(censuses[0].max_multiplicity))
        self.assertGreaterEqual(censuses[0].max_multiplicity, 1)
