# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

"""Small, fast objects shared by the unit tests."""

from typing import Tuple

from trilinear_lab.experiments import random_wave
from trilinear_lab.geometry import HypersurfacePatch, double_cone_triple
from trilinear_lab.packets import (
    PacketDecomposition,
    build_lattice,
    compatible_grid,
    decompose,
)
from trilinear_lab.waves import FreeWave, FrequencyGrid

SMALL_R = 16.0
SMALL_C = 0.25
# two leaf representatives on the first standard patch
LARGE_R = 64.0


def small_decomposition(
    R: float = SMALL_R, c: float = SMALL_C, seed: int = 0
) -> Tuple[PacketDecomposition, HypersurfacePatch]:
    """Packets of a random wave on the first standard double-cone patch in n = 3."""
    patch = double_cone_triple(3)[0]
    grid, bounding = compatible_grid(patch, R, c, points_per_axis=2)
    lattice = build_lattice(patch, R, c, bounding, grid)
    return decompose(random_wave(patch, grid, seed, 0), lattice), patch


def constant_paraboloid_wave(resolution: int = 4) -> FreeWave:
    """f ≡ 1 on the unit square under the paraboloid in n = 2."""
    patch = HypersurfacePatch.paraboloid(2, half_width=0.5)
    return FreeWave.constant(patch, FrequencyGrid.uniform(patch.box, resolution))
