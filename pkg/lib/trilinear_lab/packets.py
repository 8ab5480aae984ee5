# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

"""# Packets Library.

Wave-packet decomposition of a free wave into tubes T = (ξ_T, x_T).

The frequency side is split by a hard Voronoi assignment of every grid node to the nearest
leaf representative, measured in projected chart coordinates. Each frequency piece is then
split on the position side by a spatial partition of unity Σ_{x₀ ∈ L} η^{x₀} = 1 over the
lattice L = c^{-2} r Zⁿ. On the discrete grid the position profile of a piece is periodic
with period 2π/h per axis, so the partition is exact when the lattice spans exactly one
period:

```python
from trilinear_lab.packets import build_lattice, compatible_grid, decompose

grid, bounding_box = compatible_grid(patch, R=64, c=0.25, points_per_axis=2)
wave = FreeWave.from_function(patch, grid, density)
lattice = build_lattice(patch, 64, 0.25, bounding_box, grid)
decomposition = decompose(wave, lattice)
assert decomposition.reconstruction_error() < 1e-10
```

η is a tensor product of squared Gaussian-tapered kernels |g|², so it is nonnegative,
band-limited to fewer than M grid steps per axis and exactly normalized; only its zeroth
coefficient 1/M matters for the partition. Multiplying by η^{x₀} is a direct
convolution of node amplitudes with its Fourier coefficients, which keeps every packet on
the source grid and keeps exact zeros exact.
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.signal

from .errors import PacketError
from .geometry import HypersurfacePatch
from .waves import (
    FreeWave,
    FrequencyGrid,
    SpaceTimeCube,
    extend_on_grid,
    local_coordinates,
    margin,
    mass,
    write_wave,
)

logger = logging.getLogger(__name__)

DEFAULT_DECAY_POWER = 10
FREQUENCY_SPREAD_BOUND = 2.0
MARGIN_LOSS_CONSTANT = 2.0
PERIOD_TOLERANCE = 1e-9
DECAY_FACTORS = (4.0, 8.0, 16.0, 32.0)
DECAY_TAPER_NODES = 8
DECAY_SLOPE_BOUND = -3.0


def dyadic_level(R: float) -> int:
    """Level J with r = 2^{-J} R the dyadic value nearest to √R (ties go to the smaller r)."""
    if R <= 1:
        raise PacketError(f"scale R must exceed 1, got {R}")
    levels = np.arange(0, int(np.ceil(np.log2(R))) + 1)
    distances = np.abs(R / 2.0**levels - np.sqrt(R))
    best = np.flatnonzero(distances <= distances.min() + 1e-12)
    return int(levels[best[-1]])


@dataclass(frozen=True, eq=False)
class PacketLattice:
    """Leaf representatives and spatial lattice at scale R.

    Attributes:
        patch: Patch whose leaves are sampled.
        R: Scale.
        J: Dyadic level, r = 2^{-J} R.
        c: Smallness parameter.
        leaf_reps: Representatives ξ_T, shape (L, n), in scan order.
        leaf_coords: Projected chart coordinates of the representatives, shape (L, n-2).
        spatial_points: Lattice points x_T in the bounding box, shape (K, n), C order.
        points_per_axis: Lattice points per axis.
        bounding_box: Spatial box, shape (n, 2).
        decay_power: Power N of the tube cutoffs.
    """

    patch: HypersurfacePatch
    R: float
    J: int
    c: float
    leaf_reps: np.ndarray
    leaf_coords: np.ndarray
    spatial_points: np.ndarray
    points_per_axis: Tuple[int, ...]
    bounding_box: np.ndarray
    decay_power: int = DEFAULT_DECAY_POWER

    @property
    def r(self) -> float:
        """Packet scale r = 2^{-J} R."""
        return self.R / 2.0**self.J

    @property
    def spacing(self) -> float:
        """Lattice spacing c^{-2} r, also the tube radius."""
        return self.r / self.c**2

    @property
    def leaf_count(self) -> int:
        """Number of leaf representatives."""
        return len(self.leaf_reps)

    def tube(self, leaf: int, point: int) -> "Tube":
        """Tube of lattice point `point` on leaf `leaf`."""
        xi = self.leaf_reps[leaf]
        return Tube(
            leaf=leaf,
            point=point,
            x_T=self.spatial_points[point],
            xi_T=xi,
            velocity=self.patch.phase.gradient(xi),
            radius=self.spacing,
            decay_power=self.decay_power,
            patch=self.patch,
        )

    @property
    def tubes(self) -> List["Tube"]:
        """Every tube, leaf-major."""
        return [
            self.tube(leaf, point)
            for leaf in range(self.leaf_count)
            for point in range(len(self.spatial_points))
        ]


@dataclass(frozen=True)
class Tube:
    """Tube |x − x_T + t ∇φ(ξ_T)| ≤ c^{-2} r in the graph coordinates of its patch."""

    leaf: int
    point: int
    x_T: np.ndarray = field(compare=False, hash=False)
    xi_T: np.ndarray = field(compare=False, hash=False)
    velocity: np.ndarray = field(compare=False, hash=False)
    radius: float = field(compare=False, hash=False)
    decay_power: int = field(compare=False, hash=False)
    patch: HypersurfacePatch = field(compare=False, hash=False, repr=False)

    def axis_distance(self, points: np.ndarray) -> np.ndarray:
        """|x − x_T + t ∇φ(ξ_T)| at ambient points."""
        x, t = local_coordinates(self.patch, points)
        return np.linalg.norm(x - self.x_T + t[:, None] * self.velocity, axis=-1)

    def cutoff(self, points: np.ndarray) -> np.ndarray:
        """χ̃_T = (1 + |x − x_T + t∇φ(ξ_T)| / radius)^{-N}."""
        return (1.0 + self.axis_distance(points) / self.radius) ** (-float(self.decay_power))

    def axis_point(self, t: float) -> np.ndarray:
        """Ambient point of the tube axis at time t."""
        local = np.insert(self.x_T - t * self.velocity, self.patch.graph_axis, t)
        return self.patch.to_ambient(local)


def _greedy_separated(coords: np.ndarray, separation: float) -> List[int]:
    chosen: List[int] = []
    kept = np.empty((0, coords.shape[1]))
    for index, point in enumerate(coords):
        if len(kept) and np.min(np.linalg.norm(kept - point, axis=1)) < separation:
            continue
        chosen.append(index)
        kept = np.vstack([kept, point])
    return chosen


def build_lattice(
    patch: HypersurfacePatch,
    R: float,
    c: float,
    bounding_box: np.ndarray,
    grid: FrequencyGrid,
    decay_power: int = DEFAULT_DECAY_POWER,
) -> PacketLattice:
    """Builds leaf representatives and the spatial lattice.

    Args:
        patch: Foliated patch.
        R: Scale, R > 1.
        c: Smallness parameter in (0, 1).
        bounding_box: Spatial box of shape (n, 2) intersected with c^{-2} r Zⁿ.
        grid: Frequency grid whose nodes are scanned, in lexicographic order, for a maximal
            r^{-1}-separated set of projected chart coordinates.
        decay_power: Power N of the tube cutoffs.

    Returns:
        PacketLattice: The lattice.
    """
    if patch.leaf_chart is None:
        raise PacketError(f"{patch.name} has no leaf_chart")
    if not 0 < c < 1:
        raise PacketError(f"c must lie in (0, 1), got {c}")
    nodes = grid.nodes
    nodes = nodes[patch.contains(nodes)]
    if len(nodes) == 0:
        raise PacketError("no grid node lies in the patch domain")
    J = dyadic_level(R)
    r = R / 2.0**J
    coords = patch.leaf_of(nodes)
    chosen = _greedy_separated(coords, 1.0 / r)

    spacing = r / c**2
    box = np.asarray(bounding_box, dtype=float)
    if box.shape != (patch.n, 2):
        raise PacketError(f"bounding box must have shape ({patch.n}, 2)")
    per_axis = []
    for low, high in box:
        first = int(np.ceil(low / spacing - PERIOD_TOLERANCE))
        last = int(np.floor(high / spacing + PERIOD_TOLERANCE))
        if last < first:
            raise PacketError("bounding box contains no lattice point")
        per_axis.append(spacing * np.arange(first, last + 1))
    mesh = np.meshgrid(*per_axis, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)

    lattice = PacketLattice(
        patch=patch,
        R=float(R),
        J=J,
        c=float(c),
        leaf_reps=nodes[chosen],
        leaf_coords=coords[chosen],
        spatial_points=points,
        points_per_axis=tuple(len(a) for a in per_axis),
        bounding_box=box,
        decay_power=decay_power,
    )
    logger.info(
        f"lattice R={R} r={r} J={J}: {lattice.leaf_count} leaves, "
        f"{len(points)} spatial points, spacing {spacing}"
    )
    return lattice


def compatible_grid(
    patch: HypersurfacePatch,
    R: float,
    c: float,
    points_per_axis: int,
    box: Optional[np.ndarray] = None,
) -> Tuple[FrequencyGrid, np.ndarray]:
    """Frequency grid and spatial bounding box for which the partition of unity is exact.

    The grid spacing is h = 2π / (M c^{-2} r) with M = points_per_axis, and the bounding box
    holds exactly M lattice points per axis. The grid is centered in `box` (default the
    patch box) and leaves at least one cell of margin on each side.
    """
    if points_per_axis < 1:
        raise PacketError(f"points_per_axis must be positive, got {points_per_axis}")
    box = patch.box if box is None else np.asarray(box, dtype=float)
    r = R / 2.0 ** dyadic_level(R)
    spacing = r / c**2
    step = 2 * np.pi / (points_per_axis * spacing)
    widths = box[:, 1] - box[:, 0]
    resolution = np.floor(widths / step - PERIOD_TOLERANCE).astype(int) - 1
    if np.any(resolution < 1):
        raise PacketError(
            f"box too narrow for grid step {step:.4g}; lower points_per_axis or enlarge the box"
        )
    center = box.mean(axis=1)
    half = resolution * step / 2
    grid = FrequencyGrid(np.stack([center - half, center + half], axis=1), tuple(resolution))
    first = -(points_per_axis // 2)
    bounding = np.tile([first * spacing, (first + points_per_axis - 1) * spacing], (patch.n, 1))
    return grid, bounding


def window_half_width(points: int) -> int:
    """Half length, in grid steps, of the support of the window coefficients."""
    taper = (points + 3) // 4
    return 2 * taper - 2


def _window_coefficients(points: int) -> np.ndarray:
    taper = (points + 3) // 4
    steps = np.arange(-taper + 1, taper)
    root = np.exp(-0.5 * (steps / (taper / 4.0)) ** 2)
    squared = np.convolve(root, root)
    squared = squared / (points * squared[len(squared) // 2])
    pad = (2 * points - 1 - len(squared)) // 2
    return np.pad(squared, pad)


@dataclass(frozen=True, eq=False)
class PacketDecomposition:
    """Packets φ_T of a source wave over a lattice; packets are computed on demand.

    Attributes:
        source: The decomposed wave.
        lattice: The packet lattice.
        assignment: Leaf index of every grid node (hard Voronoi cells).
        pieces: Frequency pieces, one amplitude grid per leaf.
    """

    source: FreeWave
    lattice: PacketLattice
    assignment: np.ndarray
    pieces: List[np.ndarray]
    _cache: Dict[Tuple[int, int], FreeWave] = field(default_factory=dict, repr=False)

    @property
    def tubes(self) -> List[Tube]:
        """Tubes of the lattice."""
        return self.lattice.tubes

    def packet(self, tube: Tube) -> FreeWave:
        """Packet φ_T(0) of `tube`."""
        key = (tube.leaf, tube.point)
        if key not in self._cache:
            self._cache[key] = self._compute(tube.leaf, tube.point)
        return self._cache[key]

    def packets(self) -> Iterator[Tuple[Tube, FreeWave]]:
        """Yields (tube, packet) pairs in tube order."""
        for tube in self.tubes:
            yield tube, self.packet(tube)

    def compute_all(self, threads: int = 1) -> None:
        """Fills the packet cache, one leaf per worker."""
        leaves = range(self.lattice.leaf_count)
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            for leaf, waves in zip(leaves, pool.map(self._compute_leaf, leaves)):
                for point, wave in enumerate(waves):
                    self._cache[(leaf, point)] = wave

    def _compute_leaf(self, leaf: int) -> List[FreeWave]:
        return [self._compute(leaf, p) for p in range(len(self.lattice.spatial_points))]

    def _compute(self, leaf: int, point: int) -> FreeWave:
        piece = self.pieces[leaf]
        if not np.any(piece):
            return self.source.with_amplitudes(np.zeros(self.source.grid.size))
        x0 = self.lattice.spatial_points[point]
        out = piece
        for axis, (h, m) in enumerate(zip(self.source.grid.spacing, self.lattice.points_per_axis)):
            j = np.arange(-m + 1, m)
            kernel = _window_coefficients(m) * np.exp(-1j * j * h * x0[axis])
            shape = [1] * out.ndim
            shape[axis] = len(kernel)
            out = scipy.signal.convolve(out, kernel.reshape(shape), mode="same", method="direct")
        return self.source.with_amplitudes(out)

    def reconstruction_error(self) -> float:
        """Relative L² error of Σ_T φ_T(0) against the source."""
        total = np.zeros(self.source.grid.size, dtype=complex)
        for _, wave in self.packets():
            total += wave.amplitudes
        scale = np.linalg.norm(self.source.amplitudes)
        error = np.linalg.norm(total - self.source.amplitudes)
        return float(error / scale) if scale > 0 else float(error)

    def frequency_spread(self) -> float:
        """Max chart distance, in units of r^{-1}, from a packet node to its leaf."""
        patch = self.lattice.patch
        nodes = self.source.grid.nodes
        worst = 0.0
        for tube, wave in self.packets():
            support = np.flatnonzero(wave.amplitudes)
            if support.size == 0:
                continue
            coords = patch.leaf_of(nodes[support])
            distance = np.linalg.norm(coords - self.lattice.leaf_coords[tube.leaf], axis=-1)
            worst = max(worst, float(np.max(distance)) * self.lattice.r)
        return worst

    def margin_loss(self) -> Tuple[float, float, bool]:
        """min_T margin(φ_T) against margin(φ) − 2 r^{-1}."""
        required = margin(self.source) - MARGIN_LOSS_CONSTANT / self.lattice.r
        worst = min((margin(w) for _, w in self.packets()), default=float("inf"))
        return worst, required, worst >= required

    def tube_masses(self) -> np.ndarray:
        """Mass of each packet in tube order."""
        return np.array([mass(w) for _, w in self.packets()])


def decompose(wave: FreeWave, lattice: PacketLattice) -> PacketDecomposition:
    """Splits `wave` into packets φ_T with Σ_T φ_T(0) = φ(0) node-exactly.

    Args:
        wave: Wave on a grid inside the lattice patch's domain with positive margin.
        lattice: Lattice whose spatial points span one quadrature period per axis.

    Returns:
        PacketDecomposition: Frequency pieces plus lazily computed packets.
    """
    if wave.patch is not lattice.patch:
        raise PacketError("wave and lattice belong to different patches")
    if margin(wave) <= 0:
        raise PacketError("decompose needs a wave with positive margin")
    nodes = wave.grid.nodes
    if not np.all(lattice.patch.contains(nodes)):
        raise PacketError("wave grid leaves the patch domain")
    for axis, (h, m) in enumerate(zip(wave.grid.spacing, lattice.points_per_axis)):
        period = 2 * np.pi / (h * lattice.spacing)
        if abs(period - m) > PERIOD_TOLERANCE * max(1.0, m):
            raise PacketError(
                f"axis {axis}: lattice has {m} points but one quadrature period holds "
                f"{period:.6g}; build the grid with compatible_grid"
            )

    coords = lattice.patch.leaf_of(nodes)
    distances = np.linalg.norm(coords[:, None, :] - lattice.leaf_coords[None, :, :], axis=-1)
    # argmin keeps the first minimum, i.e. the lexicographically first representative
    assignment = np.argmin(distances, axis=1)
    values = wave.amplitudes
    pieces = []
    for leaf in range(lattice.leaf_count):
        piece = np.where(assignment == leaf, values, 0.0).reshape(wave.grid.shape)
        pieces.append(piece)
    logger.info(
        f"decomposed wave of mass {mass(wave):.6g} into {lattice.leaf_count} frequency pieces "
        f"x {len(lattice.spatial_points)} lattice points"
    )
    return PacketDecomposition(wave, lattice, assignment, pieces)


@dataclass(frozen=True)
class DecayFit:
    """Log-log fit of sup |φ_T| over translated cubes against distance to the tube."""

    slope: float
    intercept: float
    distances: Tuple[float, ...]
    sup_values: Tuple[float, ...]
    below_resolution: bool


def tube_decay(
    packet: FreeWave,
    tube: Tube,
    cube: SpaceTimeCube,
    distances: Sequence[float],
) -> DecayFit:
    """Fits the decay of a packet away from its tube.

    A copy of `cube` is centered at distance d from the tube axis, at the time coordinate of
    the cube center, along the first spatial axis of the tube's graph coordinates.

    Args:
        packet: The packet φ_T.
        tube: Its tube.
        cube: Cube whose side and resolution are used; its side plays the role of R.
        distances: At least three distances; the largest must be at least 4R.

    Returns:
        DecayFit: Slope and intercept of log sup |φ_T| against log d.
    """
    distances = [float(d) for d in distances]
    if len(distances) < 3:
        raise PacketError(f"tube_decay needs at least 3 distances, got {len(distances)}")
    if max(distances) < 4 * cube.side:
        raise PacketError("the farthest distance must be at least 4R")
    period = float(np.min(2 * np.pi / packet.grid.spacing))
    if max(distances) + cube.side > period / 2:
        raise PacketError(
            f"distance {max(distances)} reaches half the quadrature period {period:.6g}"
        )
    _, t = local_coordinates(tube.patch, cube.center[None, :])
    direction = np.zeros(tube.patch.dim)
    direction[0 if tube.patch.graph_axis != 0 else 1] = 1.0
    direction = tube.patch.to_ambient(direction)
    base = tube.axis_point(float(t[0]))
    sups = []
    for d in distances:
        moved = SpaceTimeCube(base + d * direction, cube.sides, cube.resolution)
        sups.append(float(np.max(np.abs(extend_on_grid(packet, moved)))))
    below = np.count_nonzero(packet.amplitudes) <= 1
    if below or min(sups) <= 0:
        if below:
            logger.warning("packet has one-node frequency support: no localization to fit")
        return DecayFit(0.0, 0.0, tuple(distances), tuple(sups), True)
    slope, intercept = np.polyfit(np.log(distances), np.log(sups), 1)
    return DecayFit(float(slope), float(intercept), tuple(distances), tuple(sups), False)


def decay_points_per_axis(R: float, c: float, farthest: float) -> int:
    """Smallest M whose period M c^{-2} r keeps a cube `farthest`·R away inside half of it."""
    spacing = R / 2.0 ** dyadic_level(R) / c**2
    return max(2, int(np.ceil(2 * (farthest + 1) * R / spacing - PERIOD_TOLERANCE)))


def covering_points_per_axis(patch: HypersurfacePatch, R: float, c: float, reach: float) -> int:
    """Odd M whose centered lattice reaches `reach` per axis and whose grid has a node.

    compatible_grid needs at least two grid steps across the narrowest side of the patch
    box; M is raised to satisfy that as well.
    """
    spacing = R / 2.0 ** dyadic_level(R) / c**2
    cover = 2 * int(np.ceil(reach / spacing - PERIOD_TOLERANCE)) + 1
    width = float(np.min(patch.box[:, 1] - patch.box[:, 0]))
    nodes = int(np.ceil(4 * np.pi / (width * spacing))) + 1
    return max(cover, nodes)


def tapered_wave(patch: HypersurfacePatch, grid: FrequencyGrid, taper: int) -> FreeWave:
    """Wave with a Hann profile on the central `taper` nodes of each axis and zero elsewhere."""
    profile = scipy.signal.windows.hann(taper + 2)[1:-1]
    amplitudes = np.ones(())
    for size in grid.shape:
        if size < taper:
            raise PacketError(f"grid of {size} nodes cannot hold a taper of {taper}")
        axis = np.zeros(size)
        start = (size - taper) // 2
        axis[start : start + taper] = profile
        amplitudes = np.multiply.outer(amplitudes, axis)
    return FreeWave.from_function(patch, grid, lambda nodes: amplitudes.ravel())


def tube_decay_study(
    patch: HypersurfacePatch,
    R: float,
    c: float,
    factors: Sequence[float] = DECAY_FACTORS,
    decay_power: int = DEFAULT_DECAY_POWER,
    cube_resolution: int = 2,
) -> DecayFit:
    """Decay of one packet at distances factor·R from its tube.

    The grid period is chosen with `decay_points_per_axis` so the farthest cube fits in half
    of it. The source is a tapered wave kept clear of the grid edges by the window support,
    so its packet on the tube through the origin is exactly η^{0} times the source profile.

    Args:
        patch: Patch with a leaf chart.
        R: Scale; the cube side.
        c: Smallness parameter.
        factors: Distances in units of R; at least three, the largest at least 4.
        decay_power: Power N of the tube cutoffs.
        cube_resolution: Evaluation cells per axis of each translated cube.

    Returns:
        DecayFit: The fitted slope and the sampled sups.
    """
    points = decay_points_per_axis(R, c, max(factors))
    margin_nodes = window_half_width(points)
    resolution = 2 * margin_nodes + DECAY_TAPER_NODES
    spacing = R / 2.0 ** dyadic_level(R) / c**2
    step = 2 * np.pi / (points * spacing)
    center = patch.box.mean(axis=1)
    half = (resolution + 1.5) * step / 2
    box = np.stack([center - half, center + half], axis=1)
    grid, bounding = compatible_grid(patch, R, c, points, box=box)
    if not np.all(patch.contains(grid.nodes)):
        raise PacketError(
            f"patch {patch.name} is too narrow for a decay grid of {resolution} nodes per axis"
        )
    lattice = build_lattice(patch, R, c, bounding, grid, decay_power)
    wave = tapered_wave(patch, grid, DECAY_TAPER_NODES)
    decomposition = decompose(wave, lattice)
    support = decomposition.assignment[np.flatnonzero(wave.amplitudes)]
    leaves = np.bincount(support, minlength=lattice.leaf_count)
    if np.count_nonzero(leaves) > 1:
        logger.warning(f"tapered wave straddles {np.count_nonzero(leaves)} leaves")
    leaf = int(np.argmax(leaves))
    point = int(np.argmin(np.linalg.norm(lattice.spatial_points, axis=1)))
    tube = lattice.tube(leaf, point)
    cube = SpaceTimeCube.cube(tube.axis_point(0.0), R, cube_resolution)
    fit = tube_decay(decomposition.packet(tube), tube, cube, [f * R for f in factors])
    logger.info(
        f"tube decay R={R} c={c}: {points} points per axis, {resolution} nodes per axis, "
        f"slope {fit.slope:.3f}"
    )
    return fit


def subcube_centers(cube: SpaceTimeCube, level: int) -> np.ndarray:
    """Centers of the 2^{(n+1) level} children of `cube`, C order."""
    count = 2**level
    axes = [
        low + (np.arange(count) + 0.5) * side / count for low, side in zip(cube.lower, cube.sides)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def block_sums(values: np.ndarray, blocks: int) -> np.ndarray:
    """Sums a grid array over `blocks` equal blocks per axis; result flattened in C order."""
    shape = []
    for size in values.shape:
        if size % blocks:
            raise PacketError(f"grid of {size} cells does not split into {blocks} blocks")
        shape.extend([blocks, size // blocks])
    reshaped = values.reshape(shape)
    return reshaped.sum(axis=tuple(range(1, len(shape), 2))).ravel()


def local_mass_census(
    decomposition: PacketDecomposition,
    cube: SpaceTimeCube,
    threads: int = 1,
    power: float = 1.0,
) -> float:
    """Ratio Σ_T sup_{q ∈ Q_J(Q)} χ̃_T(c_q)^{-power} ‖φ_T‖²_{L²(q)} / (r M(φ)).

    χ̃_T already carries the decay power N, so the default power 1 weighs a subcube at
    distance d from the tube by (1 + d / c^{-2} r)^N. Passing power = N gives the weight
    χ̃_T^{-N} with N applied twice.

    Args:
        decomposition: Packets of φ.
        cube: Q, with side equal to the lattice scale R and a resolution that is a multiple
            of 2^J per axis.
        threads: Worker threads over tubes.
        power: Exponent applied to the inverse cutoff; must be nonnegative.
    """
    if power < 0:
        raise PacketError(f"census power must be nonnegative, got {power}")
    lattice = decomposition.lattice
    if abs(cube.side - lattice.R) > 1e-9 * lattice.R or np.ptp(cube.sides) > 0:
        raise PacketError(f"census cube must have side R = {lattice.R}")
    total_mass = mass(decomposition.source)
    if total_mass == 0:
        return 0.0
    blocks = 2**lattice.J
    centers = subcube_centers(cube, lattice.J)

    def contribution(item: Tuple[Tube, FreeWave]) -> float:
        tube, wave = item
        if wave.is_zero:
            return 0.0
        density = np.abs(extend_on_grid(wave, cube)) ** 2 * cube.cell_volume
        local = block_sums(density, blocks)
        weights = tube.cutoff(centers) ** -power
        return float(np.max(weights * local))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        terms = list(pool.map(contribution, decomposition.packets()))
    ratio = float(np.sum(terms)) / (lattice.r * total_mass)
    logger.info(f"local mass census ratio {ratio:.6g}")
    return ratio


@dataclass(frozen=True)
class WeightedMassCheck:
    """Both sides of the regrouped mass inequality."""

    lhs: float
    rhs: float
    passed: bool
    inhomogeneous_rhs: float


def weighted_mass_check(
    decomposition: PacketDecomposition, weights: np.ndarray, constant: float
) -> WeightedMassCheck:
    """Checks (Σ_{q₀} M(Σ_T m_{q₀,T} φ_T))^{1/2} ≤ (1 + cC) M(φ)^{1/2}.

    Args:
        decomposition: Packets of φ.
        weights: Matrix of shape (tubes, q₀) whose rows sum to 1.
        constant: The configured C.

    Returns:
        WeightedMassCheck: lhs, homogeneous rhs, the comparison and the printed
            inhomogeneous right side (1 + cC) M(φ) for the record.
    """
    tubes = decomposition.tubes
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 2 or weights.shape[0] != len(tubes):
        raise PacketError(f"weights must have shape ({len(tubes)}, q0), got {weights.shape}")
    if np.any(weights < 0):
        raise PacketError("weights must be nonnegative")
    rows = weights.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > 1e-12):
        worst = int(np.argmax(np.abs(rows - 1.0)))
        raise PacketError(f"weight row {worst} sums to {rows[worst]!r}, not 1")
    groups = np.zeros((weights.shape[1], decomposition.source.grid.size), dtype=complex)
    for row, tube in enumerate(tubes):
        wave = decomposition.packet(tube)
        if not wave.is_zero:
            groups += np.outer(weights[row], wave.amplitudes)
    weight = decomposition.source.grid.weight
    lhs = float(np.sqrt(np.sum(np.abs(groups) ** 2) * weight))
    total = mass(decomposition.source)
    factor = 1.0 + decomposition.lattice.c * constant
    rhs = factor * np.sqrt(total)
    return WeightedMassCheck(lhs, float(rhs), lhs <= rhs, factor * total)


def write_decomposition(
    decomposition: PacketDecomposition, directory: str, max_tubes: Optional[int] = None
) -> str:
    """Writes a manifest plus one wave file per nonzero tube, heaviest first.

    Returns:
        str: Path of the manifest.
    """
    os.makedirs(directory, exist_ok=True)
    lattice = decomposition.lattice
    entries = [(mass(w), t) for t, w in decomposition.packets() if not w.is_zero]
    entries.sort(key=lambda item: (-item[0], item[1].leaf, item[1].point))
    if max_tubes is not None:
        entries = entries[:max_tubes]
    tubes = []
    for index, (packet_mass, tube) in enumerate(entries):
        name = f"tube_{index:05d}.wave"
        with open(os.path.join(directory, name), "w") as stream:
            write_wave(decomposition.packet(tube), stream)
        tubes.append(
            {
                "file": name,
                "leaf": tube.leaf,
                "point": tube.point,
                "x_T": [float(v) for v in tube.x_T],
                "xi_T": [float(v) for v in tube.xi_T],
                "mass": packet_mass,
            }
        )
    manifest = {
        "R": lattice.R,
        "J": lattice.J,
        "r": lattice.r,
        "c": lattice.c,
        "spacing": lattice.spacing,
        "points_per_axis": list(lattice.points_per_axis),
        "leaf_count": lattice.leaf_count,
        "decay_power": lattice.decay_power,
        "tubes": tubes,
    }
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as stream:
        json.dump(manifest, stream, indent=2, sort_keys=True)
    return path


