# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

"""# Waves Library.

Frequency-side densities on midpoint quadrature grids, the extension operator

    E f(x, t) = Σ_ξ e^{i(x·ξ + t φ(ξ))} f(ξ) hⁿ,

free-wave evolution, mass, margin and mixed L^p norms over space-time boxes.

Ambient points are mapped to the graph coordinates of the owning patch before evaluation:
the graph axis carries t and the remaining axes carry x. A `FreeWave` is immutable; every
operation that changes amplitudes returns a new wave.

Waves serialize to a plain text format: three header lines (`box`, `resolution`,
`reference`) followed by one `re im` pair per node in C order, written with 17 significant
digits so a round trip is exact.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .errors import WaveError
from .geometry import HypersurfacePatch

logger = logging.getLogger(__name__)

FLUSH_THRESHOLD = 1e-300
PHASE_PER_CELL_LIMIT = np.pi / 4
EVALUATION_CHUNK = 1 << 22
WAVE_FORMAT_HEADER = "# trilinear-lab wave v1"


def _midpoints(low: float, high: float, count: int) -> np.ndarray:
    step = (high - low) / count
    return low + step * (np.arange(count) + 0.5)


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Tensor grid of cell midpoints over an axis-aligned box.

    Attributes:
        box: Array of shape (n, 2) with the lower and upper corner.
        resolution: Number of cells per axis.
    """

    box: np.ndarray
    resolution: Tuple[int, ...]

    def __post_init__(self):
        """Validates and freezes the box and resolution."""
        box = np.array(self.box, dtype=float)
        resolution = tuple(int(r) for r in self.resolution)
        if box.ndim != 2 or box.shape[1] != 2:
            raise WaveError(f"grid box must have shape (n, 2), got {box.shape}")
        if len(resolution) != box.shape[0]:
            raise WaveError(f"resolution {resolution} does not match {box.shape[0]} axes")
        if any(r < 1 for r in resolution):
            raise WaveError(f"empty grid: resolution {resolution}")
        if np.any(box[:, 1] <= box[:, 0]):
            raise WaveError("grid box has nonpositive volume")
        box.setflags(write=False)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "resolution", resolution)

    @classmethod
    def uniform(cls, box: np.ndarray, resolution: int) -> "FrequencyGrid":
        """Grid with `resolution` cells on every axis."""
        box = np.asarray(box, dtype=float)
        return cls(box, (resolution,) * box.shape[0])

    @classmethod
    def with_spacing(cls, box: np.ndarray, spacing: float) -> "FrequencyGrid":
        """Grid whose per-axis spacing is at most `spacing`."""
        box = np.asarray(box, dtype=float)
        resolution = np.ceil((box[:, 1] - box[:, 0]) / spacing - 1e-9).astype(int)
        return cls(box, tuple(int(r) for r in np.maximum(resolution, 1)))

    @property
    def n(self) -> int:
        """Number of frequency axes."""
        return self.box.shape[0]

    @property
    def shape(self) -> Tuple[int, ...]:
        """Per-axis resolution."""
        return self.resolution

    @property
    def size(self) -> int:
        """Number of nodes."""
        return int(np.prod(self.resolution))

    @property
    def spacing(self) -> np.ndarray:
        """Per-axis cell width."""
        return (self.box[:, 1] - self.box[:, 0]) / np.asarray(self.resolution)

    @property
    def weight(self) -> float:
        """Cell volume hⁿ."""
        return float(np.prod(self.spacing))

    @property
    def axes(self) -> List[np.ndarray]:
        """Per-axis node coordinates."""
        return [_midpoints(lo, hi, r) for (lo, hi), r in zip(self.box, self.resolution)]

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates of shape (size, n) in C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True, eq=False)
class FreeWave:
    """Frequency density f on a grid, attached to the patch whose phase evolves it.

    Attributes:
        grid: Quadrature grid over U.
        amplitudes: One complex amplitude per node, flattened in C order.
        patch: Owning patch.
        reference: Box V ⊇ U used for margins, shape (n, 2).
    """

    grid: FrequencyGrid
    amplitudes: np.ndarray
    patch: HypersurfacePatch
    reference: np.ndarray

    def __post_init__(self):
        """Validates amplitudes and the reference box, then freezes them."""
        amplitudes = np.array(self.amplitudes, dtype=complex).ravel()
        if amplitudes.size != self.grid.size:
            raise WaveError(
                f"{amplitudes.size} amplitudes for a grid of {self.grid.size} nodes"
            )
        amplitudes[np.abs(amplitudes) < FLUSH_THRESHOLD] = 0.0
        amplitudes.setflags(write=False)
        reference = np.array(self.reference, dtype=float)
        if reference.shape != self.grid.box.shape:
            raise WaveError(f"reference box has shape {reference.shape}")
        if np.any(reference[:, 0] > self.grid.box[:, 0]) or np.any(
            reference[:, 1] < self.grid.box[:, 1]
        ):
            raise WaveError("reference set V must contain the grid box U")
        reference.setflags(write=False)
        if self.grid.n != self.patch.n:
            raise WaveError(f"grid has {self.grid.n} axes, patch expects {self.patch.n}")
        object.__setattr__(self, "amplitudes", amplitudes)
        object.__setattr__(self, "reference", reference)

    @classmethod
    def from_function(
        cls,
        patch: HypersurfacePatch,
        grid: FrequencyGrid,
        density: Callable[[np.ndarray], np.ndarray],
        reference: Optional[np.ndarray] = None,
    ) -> "FreeWave":
        """Samples `density` at the grid nodes.

        Args:
            patch: Owning patch; every node must lie in its domain.
            grid: Quadrature grid.
            density: Vectorized map from nodes (N, n) to amplitudes (N,).
            reference: Margin reference V, defaults to the patch box.
        """
        nodes = grid.nodes
        if not np.all(patch.contains(nodes)):
            raise WaveError(f"grid nodes leave the domain of {patch.name}")
        if reference is None:
            low = np.minimum(patch.box[:, 0], grid.box[:, 0])
            high = np.maximum(patch.box[:, 1], grid.box[:, 1])
            reference = np.stack([low, high], axis=1)
        return cls(grid, density(nodes), patch, reference)

    @classmethod
    def constant(
        cls,
        patch: HypersurfacePatch,
        grid: FrequencyGrid,
        value: complex = 1.0,
        reference: Optional[np.ndarray] = None,
    ) -> "FreeWave":
        """Wave with the same amplitude `value` at every node."""
        return cls.from_function(
            patch, grid, lambda nodes: np.full(len(nodes), value, dtype=complex), reference
        )

    @property
    def values(self) -> np.ndarray:
        """Amplitudes reshaped to the grid."""
        return self.amplitudes.reshape(self.grid.shape)

    @property
    def is_zero(self) -> bool:
        """Whether every amplitude is zero."""
        return not np.any(self.amplitudes)

    def with_amplitudes(self, amplitudes: np.ndarray) -> "FreeWave":
        """Same grid, patch and reference with new amplitudes."""
        return FreeWave(self.grid, amplitudes, self.patch, self.reference)

    def scaled(self, factor: complex) -> "FreeWave":
        """Wave multiplied by `factor`."""
        return self.with_amplitudes(factor * self.amplitudes)

    def added(self, other: "FreeWave") -> "FreeWave":
        """Sum of two waves on the same grid."""
        if other.grid.shape != self.grid.shape or not np.array_equal(
            other.grid.box, self.grid.box
        ):
            raise WaveError("cannot add waves on different grids")
        return self.with_amplitudes(self.amplitudes + other.amplitudes)

    def phase_values(self) -> np.ndarray:
        """φ at the grid nodes."""
        return self.patch.phase.value(self.grid.nodes)


def local_coordinates(
    patch: HypersurfacePatch, points: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Splits ambient points into spatial x (P, n) and time t (P,) of the patch's graph chart."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[-1] != patch.dim:
        raise WaveError(f"points have dimension {points.shape[-1]}, expected {patch.dim}")
    local = patch.to_local(points)
    return np.delete(local, patch.graph_axis, axis=-1), local[:, patch.graph_axis]


def extend(wave: FreeWave, points: np.ndarray) -> np.ndarray:
    """Midpoint-rule extension Σ e^{i(x·ξ + tφ(ξ))} f(ξ) hⁿ at ambient points.

    Args:
        wave: The free wave.
        points: Ambient points of shape (P, n+1).

    Returns:
        np.ndarray: Complex values of shape (P,).
    """
    x, t = local_coordinates(wave.patch, points)
    support = np.flatnonzero(wave.amplitudes)
    out = np.zeros(len(x), dtype=complex)
    if support.size == 0:
        return out
    nodes = wave.grid.nodes[support]
    phases = wave.phase_values()[support]
    amplitudes = wave.amplitudes[support]
    chunk = max(1, EVALUATION_CHUNK // support.size)
    for start in range(0, len(x), chunk):
        stop = start + chunk
        argument = x[start:stop] @ nodes.T + np.outer(t[start:stop], phases)
        out[start:stop] = np.sum(np.exp(1j * argument) * amplitudes, axis=1)
    return out * wave.grid.weight


def mass(wave: FreeWave) -> float:
    """Σ |f(ξ)|² hⁿ."""
    return float(np.sum(np.abs(wave.amplitudes) ** 2) * wave.grid.weight)


def margin(wave: FreeWave) -> float:
    """Distance from the union of support cells to the complement of the reference box V.

    Returns:
        float: The margin, clamped at 0, or +inf for the zero wave.
    """
    support = np.flatnonzero(wave.amplitudes)
    if support.size == 0:
        return float("inf")
    half = wave.grid.spacing / 2
    nodes = wave.grid.nodes[support]
    low_gap = nodes - half - wave.reference[:, 0]
    high_gap = wave.reference[:, 1] - nodes - half
    return float(max(0.0, np.min(np.minimum(low_gap, high_gap))))


def margin_budget(wave: FreeWave, budget: float, scale: float) -> Tuple[float, float, bool]:
    """Both sides of the margin requirement margin ≥ M − R^{−1/4} for a configured budget M."""
    required = budget - scale ** (-0.25)
    measured = margin(wave)
    return measured, required, measured >= required


def evolve(wave: FreeWave, t: float) -> FreeWave:
    """Free evolution e^{itφ(D)}: multiplies the density by e^{itφ(ξ)}."""
    if t == 0:
        return wave
    return wave.with_amplitudes(wave.amplitudes * np.exp(1j * t * wave.phase_values()))


@dataclass(frozen=True, eq=False)
class SpaceTimeCube:
    """Axis-aligned space-time box sampled on a midpoint grid.

    Attributes:
        center: Center in R^{n+1}.
        sides: Side length per axis; equal for a cube of size R.
        resolution: Evaluation cells per axis.
    """

    center: np.ndarray
    sides: np.ndarray
    resolution: Tuple[int, ...]

    def __post_init__(self):
        """Broadcasts sides and resolution, then freezes them."""
        center = np.array(self.center, dtype=float)
        sides = np.broadcast_to(np.asarray(self.sides, dtype=float), center.shape).copy()
        resolution = tuple(int(r) for r in np.broadcast_to(self.resolution, center.shape))
        if np.any(sides <= 0):
            raise WaveError(f"cube sides must be positive, got {sides.tolist()}")
        if any(r < 1 for r in resolution):
            raise WaveError(f"cube resolution must be positive, got {resolution}")
        center.setflags(write=False)
        sides.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "sides", sides)
        object.__setattr__(self, "resolution", resolution)

    @classmethod
    def cube(cls, center: Sequence[float], side: float, resolution: int) -> "SpaceTimeCube":
        """Cube of equal sides centered at `center`."""
        center = np.asarray(center, dtype=float)
        return cls(center, np.full(center.shape, float(side)), (resolution,) * center.size)

    @property
    def dim(self) -> int:
        """Dimension n+1."""
        return self.center.size

    @property
    def side(self) -> float:
        """Longest side."""
        return float(np.max(self.sides))

    @property
    def lower(self) -> np.ndarray:
        """Lower corner."""
        return self.center - self.sides / 2

    @property
    def upper(self) -> np.ndarray:
        """Upper corner."""
        return self.center + self.sides / 2

    @property
    def volume(self) -> float:
        """Volume of the box."""
        return float(np.prod(self.sides))

    @property
    def cell_volume(self) -> float:
        """Volume of one sampling cell."""
        return self.volume / float(np.prod(self.resolution))

    @property
    def axes(self) -> List[np.ndarray]:
        """Per-axis cell midpoints."""
        return [
            _midpoints(lo, hi, r) for lo, hi, r in zip(self.lower, self.upper, self.resolution)
        ]

    @property
    def points(self) -> np.ndarray:
        """Cell midpoints of shape (cells, n+1) in C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Half-open membership test."""
        points = np.asarray(points, dtype=float)
        return np.all((points >= self.lower) & (points < self.upper), axis=-1)

    def shrunk(self, factor: float, resolution: Optional[int] = None) -> "SpaceTimeCube":
        """The concentric box scaled by `factor`, e.g. (1 − c)q."""
        res = self.resolution if resolution is None else (resolution,) * self.dim
        return SpaceTimeCube(self.center, self.sides * factor, res)


def extend_on_grid(wave: FreeWave, cube: SpaceTimeCube) -> np.ndarray:
    """Evaluates E f on the cube's midpoint grid, returned with shape cube.resolution.

    Unrotated patches use a separable evaluation per time slice; rotated patches fall back
    to the direct sum.
    """
    if cube.dim != wave.patch.dim:
        raise WaveError(f"cube has dimension {cube.dim}, wave lives in {wave.patch.dim}")
    if wave.patch.rotation is not None:
        return extend(wave, cube.points).reshape(cube.resolution)
    axis = wave.patch.graph_axis
    spatial_axes = [a for i, a in enumerate(cube.axes) if i != axis]
    times = cube.axes[axis]
    factors = [
        np.exp(1j * np.outer(xs, xi)) for xs, xi in zip(spatial_axes, wave.grid.axes)
    ]
    phases = wave.phase_values().reshape(wave.grid.shape)
    values = wave.values
    slices = []
    for t in times:
        field = values * np.exp(1j * t * phases)
        # contract each frequency axis against its spatial axis, in order
        for factor in factors:
            field = np.tensordot(field, factor, axes=([0], [1]))
        slices.append(field)
    out = np.stack(slices, axis=axis) * wave.grid.weight
    return out


def phase_per_cell(waves: Sequence[FreeWave], cube: SpaceTimeCube) -> float:
    """Largest phase change across one frequency cell or one evaluation cell.

    Frequency side: Σ_a (|x_a| + |t| |∂_a φ|) h_a at the cube corners. Space-time side:
    |Σ(ξ)|_∞-weighted cell widths.
    """
    bounds = [[lo, hi] for lo, hi in zip(cube.lower, cube.upper)]
    corners = np.array(np.meshgrid(*bounds, indexing="ij")).reshape(cube.dim, -1).T
    cell = cube.sides / np.asarray(cube.resolution)
    worst = 0.0
    for wave in waves:
        x, t = local_coordinates(wave.patch, corners)
        gradient = np.max(np.abs(wave.patch.phase.gradient(wave.grid.nodes)), axis=0)
        spacing = wave.grid.spacing
        frequency_side = np.max((np.abs(x) + np.abs(t)[:, None] * gradient) @ spacing)
        embedded = np.abs(wave.patch.embed(wave.grid.nodes))
        space_side = float(np.max(embedded @ cell))
        worst = max(worst, float(frequency_side), space_side)
    return worst


def product_lp_norm(waves: Sequence[FreeWave], cube: SpaceTimeCube, p: float) -> float:
    """Riemann-sum L^p(cube) norm of Π E fᵢ.

    Args:
        waves: Waves living in the cube's dimension.
        cube: Evaluation box.
        p: Exponent, p > 0.

    Returns:
        float: (Σ |Π E fᵢ|^p · cell volume)^{1/p}.
    """
    if p <= 0:
        raise WaveError(f"p must be positive, got {p}")
    if not waves:
        raise WaveError("product_lp_norm needs at least one wave")
    if any(w.is_zero for w in waves):
        return 0.0
    resolution = phase_per_cell(waves, cube)
    if resolution > PHASE_PER_CELL_LIMIT:
        logger.warning(
            f"phase per cell {resolution:.3f} exceeds pi/4; quadrature may be unresolved"
        )
    product = np.ones(cube.resolution, dtype=complex)
    for wave in waves:
        product = product * extend_on_grid(wave, cube)
    return lp_norm(product, cube.cell_volume, p)


def lp_norm(field: np.ndarray, cell_volume: float, p: float) -> float:
    """(Σ |F|^p · cell volume)^{1/p} of sampled values."""
    return float((np.sum(np.abs(field) ** p) * cell_volume) ** (1.0 / p))


def trilinear_ratio(waves: Sequence[FreeWave], cube: SpaceTimeCube, p: float) -> float:
    """product_lp_norm of three waves over Π mass^{1/2}."""
    if len(waves) != 3:
        raise WaveError(f"trilinear_ratio needs 3 waves, got {len(waves)}")
    masses = [mass(w) for w in waves]
    if min(masses) <= 0:
        raise WaveError("trilinear_ratio is undefined for a zero-mass wave")
    return product_lp_norm(waves, cube, p) / float(np.prod(np.sqrt(masses)))


def write_wave(wave: FreeWave, stream: TextIO) -> None:
    """Writes the textual wave format."""
    stream.write(f"{WAVE_FORMAT_HEADER}\n")
    stream.write("box " + " ".join(f"{v:.17g}" for v in wave.grid.box.ravel()) + "\n")
    stream.write("resolution " + " ".join(str(r) for r in wave.grid.resolution) + "\n")
    stream.write("reference " + " ".join(f"{v:.17g}" for v in wave.reference.ravel()) + "\n")
    for value in wave.amplitudes:
        stream.write(f"{value.real:.17g} {value.imag:.17g}\n")


def read_wave(stream: TextIO, patch: HypersurfacePatch) -> FreeWave:
    """Reads the textual wave format and attaches the wave to `patch`."""
    lines = [line.strip() for line in stream if line.strip()]
    if not lines or lines[0] != WAVE_FORMAT_HEADER:
        raise WaveError("not a trilinear-lab wave file")
    try:
        fields = {}
        for line in lines[1:4]:
            name, *values = line.split()
            fields[name] = values
        box = np.array([float(v) for v in fields["box"]]).reshape(-1, 2)
        resolution = tuple(int(v) for v in fields["resolution"])
        reference = np.array([float(v) for v in fields["reference"]]).reshape(-1, 2)
        amplitudes = np.array(
            [complex(float(re), float(im)) for re, im in (line.split() for line in lines[4:])]
        )
    except (KeyError, ValueError) as e:
        raise WaveError(f"malformed wave file: {e}")
    return FreeWave(FrequencyGrid(box, resolution), amplitudes, patch, reference)
