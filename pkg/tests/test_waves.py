# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

import io
import unittest

import numpy as np
from lab_fixtures import constant_paraboloid_wave

from trilinear_lab.errors import WaveError
from trilinear_lab.geometry import HypersurfacePatch, double_cone_triple
from trilinear_lab.waves import (
    FreeWave,
    FrequencyGrid,
    SpaceTimeCube,
    evolve,
    extend,
    extend_on_grid,
    lp_norm,
    margin,
    margin_budget,
    mass,
    product_lp_norm,
    read_wave,
    trilinear_ratio,
    write_wave,
)


class TestFrequencyGrid(unittest.TestCase):
    def test_given_box_when_uniform_grid_then_spacing_and_weight_match_cells(self):
        grid = FrequencyGrid.uniform(np.array([[0.0, 1.0], [0.0, 2.0]]), 4)

        np.testing.assert_allclose(grid.spacing, [0.25, 0.5])
        self.assertAlmostEqual(grid.weight, 0.125)
        self.assertEqual(grid.size, 16)
        np.testing.assert_allclose(grid.nodes[0], [0.125, 0.25])

    def test_given_mismatched_resolution_when_frequency_grid_then_wave_error_is_raised(self):
        with self.assertRaises(WaveError):
            FrequencyGrid(np.array([[0.0, 1.0], [0.0, 1.0]]), (4,))

    def test_given_amplitude_count_mismatch_when_free_wave_then_wave_error_is_raised(self):
        wave = constant_paraboloid_wave()

        with self.assertRaises(WaveError):
            FreeWave(wave.grid, np.ones(3), wave.patch, wave.reference)


class TestFreeWave(unittest.TestCase):
    def setUp(self):
        self.wave = constant_paraboloid_wave()

    def test_given_constant_density_on_unit_square_when_mass_then_mass_is_one(self):
        self.assertAlmostEqual(mass(self.wave), 1.0)

    def test_given_constant_density_when_extend_at_origin_then_value_is_domain_area(self):
        value = extend(self.wave, np.zeros((1, 3)))

        self.assertAlmostEqual(value[0], 1.0 + 0j)

    def test_given_unrotated_patch_when_extend_on_grid_then_values_match_direct_sum(self):
        amplitudes = np.arange(self.wave.grid.size) * (1 + 0.5j)
        wave = self.wave.with_amplitudes(amplitudes)
        cube = SpaceTimeCube.cube([0.3, -0.2, 0.5], 6.0, 3)

        on_grid = extend_on_grid(wave, cube).ravel()
        direct = extend(wave, cube.points)

        np.testing.assert_allclose(on_grid, direct, rtol=1e-10, atol=1e-12)

    def test_given_two_waves_when_extend_then_extension_is_linear(self):
        other = self.wave.with_amplitudes(np.arange(self.wave.grid.size) * (0.5 - 1j))
        points = np.array([[0.3, -0.2, 0.1], [2.0, 1.0, -3.0]])

        combined = extend(self.wave.scaled(2.0).added(other.scaled(1j)), points)

        np.testing.assert_allclose(
            combined, 2.0 * extend(self.wave, points) + 1j * extend(other, points), atol=1e-12
        )

    def test_given_modulated_amplitudes_when_extend_then_extension_is_translated(self):
        shift = np.array([0.7, -1.1, 0.4])
        nodes = self.wave.grid.nodes
        modulation = np.exp(-1j * (nodes @ shift[:2] + shift[2] * self.wave.phase_values()))
        moved = self.wave.with_amplitudes(self.wave.amplitudes * modulation)
        points = np.array([[0.3, -0.2, 0.1], [2.0, 1.0, -3.0]])

        np.testing.assert_allclose(
            extend(moved, points), extend(self.wave, points - shift), atol=1e-12
        )

    def test_given_time_shift_when_evolve_then_extension_is_the_shifted_extension(self):
        points = np.array([[0.3, -0.2, 0.1], [2.0, 1.0, -3.0]])

        evolved = extend(evolve(self.wave, 1.5), points)

        shifted = extend(self.wave, points + [0.0, 0.0, 1.5])
        np.testing.assert_allclose(evolved, shifted, atol=1e-12)

    def test_given_finer_grid_when_extend_then_midpoint_sums_converge(self):
        point = np.array([[0.3, -0.2, 0.1]])

        coarse = extend(constant_paraboloid_wave(32), point)
        fine = extend(constant_paraboloid_wave(64), point)

        np.testing.assert_allclose(coarse, fine, atol=1e-3)

    def test_given_cube_of_wrong_dimension_when_extend_on_grid_then_wave_error_is_raised(self):
        with self.assertRaises(WaveError):
            extend_on_grid(self.wave, SpaceTimeCube.cube([0.0, 0.0], 1.0, 2))

    def test_given_wave_when_evolve_then_mass_is_preserved(self):
        evolved = evolve(self.wave, 2.5)

        self.assertAlmostEqual(mass(evolved), mass(self.wave))

    def test_given_zero_time_when_evolve_then_same_wave_is_returned(self):
        self.assertIs(evolve(self.wave, 0.0), self.wave)

    def test_given_reference_equal_to_grid_box_when_margin_then_margin_is_zero(self):
        self.assertAlmostEqual(margin(self.wave), 0.0)

    def test_given_wider_reference_when_margin_then_margin_is_the_extra_width(self):
        reference = self.wave.grid.box + np.array([-0.1, 0.1])
        wave = FreeWave(self.wave.grid, self.wave.amplitudes, self.wave.patch, reference)

        self.assertAlmostEqual(margin(wave), 0.1)

    def test_given_zero_wave_when_margin_then_margin_is_infinite(self):
        self.assertEqual(margin(self.wave.scaled(0.0)), float("inf"))

    def test_given_budget_below_margin_when_margin_budget_then_requirement_holds(self):
        measured, required, ok = margin_budget(self.wave, 0.05, 16.0)

        self.assertAlmostEqual(required, 0.05 - 0.5)
        self.assertTrue(ok)

    def test_given_waves_on_different_grids_when_added_then_wave_error_is_raised(self):
        other = constant_paraboloid_wave(resolution=2)

        with self.assertRaises(WaveError):
            self.wave.added(other)


class TestNorms(unittest.TestCase):
    def test_given_ones_when_lp_norm_then_norm_is_volume_to_one_over_p(self):
        self.assertAlmostEqual(lp_norm(np.ones(8), 0.5, 2.0), 2.0)

    def test_given_nonpositive_exponent_when_product_lp_norm_then_wave_error_is_raised(self):
        wave = constant_paraboloid_wave()

        with self.assertRaises(WaveError):
            product_lp_norm([wave], SpaceTimeCube.cube(np.zeros(3), 1.0, 2), 0.0)

    def test_given_zero_mass_wave_when_trilinear_ratio_then_wave_error_is_raised(self):
        triple = double_cone_triple(3)
        waves = [
            FreeWave.constant(p, FrequencyGrid.uniform(p.box, 2), 1.0 if i else 0.0)
            for i, p in enumerate(triple)
        ]

        with self.assertRaises(WaveError):
            trilinear_ratio(waves, SpaceTimeCube.cube(np.zeros(4), 2.0, 2), 1.0)

    def test_given_two_waves_when_trilinear_ratio_then_wave_error_is_raised(self):
        wave = constant_paraboloid_wave()

        with self.assertRaises(WaveError):
            trilinear_ratio([wave, wave], SpaceTimeCube.cube(np.zeros(3), 1.0, 2), 1.0)

    def test_given_tiny_cube_when_product_lp_norm_then_norm_matches_constant_product(self):
        wave = constant_paraboloid_wave()
        cube = SpaceTimeCube.cube(np.zeros(3), 1e-6, 1)

        norm = product_lp_norm([wave, wave], cube, 1.0)

        self.assertAlmostEqual(norm / cube.volume, 1.0, places=6)


class TestSpaceTimeCube(unittest.TestCase):
    def test_given_cube_when_shrunk_then_sides_scale_and_center_stays(self):
        cube = SpaceTimeCube.cube([1.0, 2.0], 4.0, 4)

        core = cube.shrunk(0.75, resolution=2)

        np.testing.assert_allclose(core.sides, [3.0, 3.0])
        np.testing.assert_allclose(core.center, [1.0, 2.0])
        self.assertEqual(core.resolution, (2, 2))

    def test_given_cube_when_cell_volume_then_volume_is_split_evenly(self):
        cube = SpaceTimeCube.cube(np.zeros(3), 2.0, 4)

        self.assertAlmostEqual(cube.cell_volume, 8.0 / 64)
        self.assertEqual(len(cube.points), 64)


class TestWaveFiles(unittest.TestCase):
    def test_given_written_wave_when_read_wave_then_amplitudes_are_identical(self):
        wave = constant_paraboloid_wave().with_amplitudes(np.linspace(0, 1, 16) * (1 / 3 + 1j))
        stream = io.StringIO()
        write_wave(wave, stream)
        stream.seek(0)

        loaded = read_wave(stream, wave.patch)

        np.testing.assert_array_equal(loaded.amplitudes, wave.amplitudes)
        np.testing.assert_array_equal(loaded.grid.box, wave.grid.box)

    def test_given_file_without_header_when_read_wave_then_wave_error_is_raised(self):
        patch = HypersurfacePatch.paraboloid(2, half_width=0.5)

        with self.assertRaises(WaveError):
            read_wave(io.StringIO("box 0 1 0 1\n"), patch)
