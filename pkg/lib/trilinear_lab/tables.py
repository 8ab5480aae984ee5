# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

"""# Tables Library.

Cube combinatorics and the table construction that reassigns the packets of one wave to
the subcubes q₀ of a cube Q, weighted by where a partner wave's mass lives.

```python
from trilinear_lab.tables import build_table, subdivide, tube_weights

weights = tube_weights(decomposition, partner, cube, depth=2)
table = build_table(decomposition, weights)
assert table.decomposition_error() < 1e-12
```

Besides the table itself this module carries the averaging-cube search, the cross-cube
norms of table entries, the slab-localized trilinear diagnostic and the census of how
often a pair of tubes is counted by the separated cube relation.
"""

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse
import scipy.spatial

from .errors import InvariantViolation, TableError
from .geometry import HypersurfacePatch, leaf_tangents, unit_normals
from .packets import PacketDecomposition, Tube, block_sums, write_decomposition
from .waves import FreeWave, SpaceTimeCube, extend_on_grid, lp_norm, margin, mass

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATES = 5
TABLE_MARGIN_CONSTANT = 2.0


@dataclass(frozen=True, eq=False)
class CubeFamily:
    """The 2^{(n+1)j} children of a cube at level j, in C order of their multi-indices."""

    parent: SpaceTimeCube
    level: int

    @property
    def per_axis(self) -> int:
        """Children per axis, 2^level."""
        return 2**self.level

    @property
    def count(self) -> int:
        """Number of children."""
        return self.per_axis**self.parent.dim

    @property
    def child_sides(self) -> np.ndarray:
        """Side lengths of each child."""
        return self.parent.sides / self.per_axis

    @property
    def child_volume(self) -> float:
        """Volume of each child."""
        return float(np.prod(self.child_sides))

    @property
    def indices(self) -> np.ndarray:
        """Multi-index of every child, shape (count, n+1)."""
        shape = (self.per_axis,) * self.parent.dim
        return np.array(np.unravel_index(np.arange(self.count), shape)).T

    @property
    def centers(self) -> np.ndarray:
        """Child centers in C order, shape (count, n+1)."""
        return self.parent.lower + (self.indices + 0.5) * self.child_sides

    def child(self, index: int, resolution: Optional[Sequence[int]] = None) -> SpaceTimeCube:
        """Child `index` as a cube, by default at the parent resolution split evenly."""
        if resolution is None:
            resolution = tuple(max(1, r // self.per_axis) for r in self.parent.resolution)
        return SpaceTimeCube(self.centers[index], self.child_sides, tuple(resolution))

    def children(self, resolution: Optional[Sequence[int]] = None) -> List[SpaceTimeCube]:
        """Every child in C order."""
        return [self.child(i, resolution) for i in range(self.count)]

    def locate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Child index of each point and its offset from the child center in child units."""
        relative = (np.asarray(points, dtype=float) - self.parent.lower) / self.child_sides
        cells = np.clip(np.floor(relative).astype(int), 0, self.per_axis - 1)
        flat = np.ravel_multi_index(tuple(cells.T), (self.per_axis,) * self.parent.dim)
        return flat, relative - cells - 0.5


def subdivide(cube: SpaceTimeCube, level: int) -> CubeFamily:
    """Splits `cube` into 2^{(n+1) level} children."""
    if level < 0:
        raise TableError(f"subdivision level must be nonnegative, got {level}")
    return CubeFamily(cube, level)


@dataclass(frozen=True, eq=False)
class InteriorRegion:
    """I^{c,j}(Q): the union of the concentric cores (1 − c)q of the children of Q."""

    family: CubeFamily
    c: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Whether each point lies in the core of its child."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.all(
            (points >= self.family.parent.lower) & (points < self.family.parent.upper), axis=-1
        )
        _, offsets = self.family.locate(points)
        core = np.all(np.abs(offsets) <= (1.0 - self.c) / 2, axis=-1)
        return inside & core

    @property
    def complement_fraction(self) -> float:
        """Fraction of Q outside the cores."""
        return interior_fraction(self.family.parent.dim - 1, self.c)


def interior_fraction(n: int, c: float) -> float:
    """|Q \\ I^{c,j}(Q)| / |Q| = 1 − (1 − c)^{n+1}, at most (n+1)c."""
    if not 0 <= c < 1:
        raise TableError(f"c must lie in [0, 1), got {c}")
    return 1.0 - (1.0 - c) ** (n + 1)


def averaging_bound(n: int, c: float, p: float) -> float:
    """(1 + (n+1) 2^{n+1} c)^{1/p}."""
    return (1.0 + (n + 1) * 2 ** (n + 1) * c) ** (1.0 / p)


@dataclass(frozen=True)
class AveragingCube:
    """Outcome of find_averaging_cube.

    Attributes:
        center: Center of the chosen cube Q(x, t; 2R).
        side: 2R.
        ratio: ‖f‖_{L^p(Q_R)} over the best interior norm.
        bound: The volume-fraction bound on the ratio.
        candidate_centers: All candidate centers, C order.
        candidate_norms: Interior norm of every candidate.
    """

    center: np.ndarray
    side: float
    ratio: float
    bound: float
    candidate_centers: np.ndarray
    candidate_norms: np.ndarray


def candidate_centers(inner: SpaceTimeCube, per_axis: int) -> np.ndarray:
    """Uniform midpoint subgrid of `inner` with `per_axis` centers per axis."""
    axes = [
        low + (np.arange(per_axis) + 0.5) * side / per_axis
        for low, side in zip(inner.lower, inner.sides)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def interior_norms(
    values: np.ndarray,
    outer: SpaceTimeCube,
    centers: np.ndarray,
    c: float,
    level: int,
    p: float,
) -> np.ndarray:
    """‖f‖_{L^p(Q_R ∩ I^{c,j}(Q(z; 2R)))} for every center z.

    Args:
        values: Field samples on the midpoint grid of `outer` = 4Q_R.
        outer: The sampled cube.
        centers: Candidate centers z, shape (m, n+1).
        c: Core shrink factor.
        level: Subdivision level j of Q(z; 2R).
        p: Exponent.
    """
    inner = SpaceTimeCube(outer.center, outer.sides / 4, outer.resolution)
    points = outer.points
    in_inner = inner.contains(points)
    points = points[in_inner]
    weights = np.abs(np.asarray(values).ravel()[in_inner]) ** p * outer.cell_volume
    norms = np.empty(len(centers))
    for i, center in enumerate(centers):
        family = CubeFamily(SpaceTimeCube(center, outer.sides / 2, outer.resolution), level)
        region = InteriorRegion(family, c)
        norms[i] = np.sum(weights[region.contains(points)]) ** (1.0 / p)
    return norms


def find_averaging_cube(
    values: np.ndarray,
    outer: SpaceTimeCube,
    c: float,
    level: int,
    p: float,
    candidates: int = DEFAULT_CANDIDATES,
) -> AveragingCube:
    """Picks the cube Q(x, t; 2R) whose interior region captures most of ‖f‖_{L^p(Q_R)}.

    Args:
        values: Samples of f on the midpoint grid of `outer`, the cube 4Q_R.
        outer: The sampled cube of side 4R; Q_R is its concentric quarter.
        c: Core shrink factor.
        level: Subdivision level j.
        p: Exponent.
        candidates: Candidate centers per axis, on a uniform subgrid of Q_R.

    Returns:
        AveragingCube: The maximizing candidate and its ratio.
    """
    if candidates < 1:
        raise TableError("find_averaging_cube needs at least one candidate")
    if p <= 0:
        raise TableError(f"p must be positive, got {p}")
    values = np.asarray(values)
    if values.shape != tuple(outer.resolution):
        raise TableError(f"field has shape {values.shape}, grid is {outer.resolution}")
    inner = SpaceTimeCube(outer.center, outer.sides / 4, outer.resolution)
    centers = candidate_centers(inner, candidates)
    norms = interior_norms(values, outer, centers, c, level, p)
    in_inner = inner.contains(outer.points)
    total = lp_norm(values.ravel()[in_inner], outer.cell_volume, p)
    best = int(np.argmax(norms))
    bound = averaging_bound(outer.dim - 1, c, p)
    ratio = 1.0 if total == 0 else (np.inf if norms[best] == 0 else total / norms[best])
    if ratio > bound * (1 + 1e-12):
        raise InvariantViolation(
            f"averaging ratio {ratio:.6g} exceeds the volume-fraction bound {bound:.6g}"
        )
    side = float(outer.sides[0] / 2)
    return AveragingCube(centers[best], side, float(ratio), bound, centers, norms)


@dataclass(frozen=True, eq=False)
class TubeWeightMatrix:
    """Entries m_{q₀,T} = ‖χ̃_T φ₂‖²_{L²(q₀)}; rows are tubes, columns the children of Q."""

    entries: np.ndarray
    family: CubeFamily

    @property
    def row_sums(self) -> np.ndarray:
        """Total weight of each tube."""
        return self.entries.sum(axis=1)

    def normalized(self) -> np.ndarray:
        """Rows divided by m_T; rows with m_T = 0 become uniform 2^{-(n+1)C₀}."""
        sums = self.row_sums
        out = np.full(self.entries.shape, 1.0 / self.family.count)
        positive = sums > 0
        out[positive] = self.entries[positive] / sums[positive, None]
        return out


def tube_weights(
    decomposition: PacketDecomposition,
    partner: FreeWave,
    cube: SpaceTimeCube,
    depth: int,
    threads: int = 1,
) -> TubeWeightMatrix:
    """Grid sums of |χ̃_T φ₂|² over every q₀ ∈ Q_{C₀}(Q).

    Args:
        decomposition: Packets of φ₁.
        partner: The wave φ₂.
        cube: Q, of side R equal to the lattice scale.
        depth: C₀.
        threads: Worker threads over tubes.
    """
    lattice = decomposition.lattice
    if abs(cube.side - lattice.R) > 1e-9 * lattice.R:
        raise TableError(f"cube side {cube.side} does not match the lattice scale {lattice.R}")
    blocks = 2**depth
    if any(r % blocks or r // blocks < 2 for r in cube.resolution):
        raise TableError(
            f"resolution {cube.resolution} is too coarse: need a multiple of {blocks} with at "
            "least 2 nodes per q0 axis"
        )
    density = np.abs(extend_on_grid(partner, cube)) ** 2 * cube.cell_volume
    points = cube.points

    def row(tube: Tube) -> np.ndarray:
        cutoff = tube.cutoff(points).reshape(cube.resolution)
        return block_sums(cutoff**2 * density, blocks)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(row, decomposition.tubes))
    entries = np.array(rows)
    logger.info(f"tube weights: {entries.shape[0]} tubes x {entries.shape[1]} subcubes")
    return TubeWeightMatrix(entries, subdivide(cube, depth))


@dataclass(frozen=True, eq=False)
class WaveTable:
    """Table Φ^{(q₀)} = Σ_T (m_{q₀,T} / m_T) φ_T over the children q₀ of Q.

    Attributes:
        decomposition: Packets of φ.
        coefficients: Normalized weights, shape (tubes, q₀), rows summing to 1.
        family: The children q₀ of Q at depth C₀.
    """

    decomposition: PacketDecomposition
    coefficients: np.ndarray
    family: CubeFamily
    _entries: Dict[int, FreeWave] = field(default_factory=dict, repr=False)

    @property
    def depth(self) -> int:
        """Subdivision depth C₀."""
        return self.family.level

    def entry(self, index: int) -> FreeWave:
        """Entry Φ^{(q₀)} for child `index`, computed once."""
        if index not in self._entries:
            source = self.decomposition.source
            total = np.zeros(source.grid.size, dtype=complex)
            for row, (_, wave) in enumerate(self.decomposition.packets()):
                weight = self.coefficients[row, index]
                if weight and not wave.is_zero:
                    total += weight * wave.amplitudes
            self._entries[index] = source.with_amplitudes(total)
        return self._entries[index]

    def entries(self) -> List[FreeWave]:
        """Every entry in child order."""
        return [self.entry(i) for i in range(self.family.count)]

    def decomposition_error(self) -> float:
        """Relative error of Σ_{q₀} Φ^{(q₀)} against φ."""
        source = self.decomposition.source.amplitudes
        total = np.sum([w.amplitudes for w in self.entries()], axis=0)
        scale = np.linalg.norm(source)
        error = float(np.linalg.norm(total - source))
        return error / scale if scale > 0 else error

    def mass(self) -> float:
        """Σ_{q₀} M(Φ^{(q₀)})."""
        return float(sum(mass(w) for w in self.entries()))

    def mass_constant(self) -> float:
        """κ with M(Φ) = (1 + cκ) M(φ); 0 for the zero wave."""
        source = mass(self.decomposition.source)
        if source == 0:
            return 0.0
        return (self.mass() / source - 1.0) / self.decomposition.lattice.c

    def margin_check(self) -> Tuple[float, float, bool]:
        """min margin(Φ^{(q₀)}) against margin(φ) − 2 R^{-1/2}."""
        lattice = self.decomposition.lattice
        required = margin(self.decomposition.source) - TABLE_MARGIN_CONSTANT / np.sqrt(lattice.R)
        worst = min(margin(w) for w in self.entries())
        return worst, float(required), worst >= required


def build_table(decomposition: PacketDecomposition, weights: TubeWeightMatrix) -> WaveTable:
    """Builds the table of `decomposition` from a tube weight matrix.

    Zero rows get uniform weights so that Σ_{q₀} Φ^{(q₀)} = φ holds node-exactly.
    """
    if weights.entries.shape[0] != len(decomposition.tubes):
        raise TableError(
            f"weights have {weights.entries.shape[0]} rows for {len(decomposition.tubes)} tubes"
        )
    coefficients = weights.normalized()
    rows = coefficients.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > 1e-12):
        raise InvariantViolation("normalized table weights are not row-stochastic")
    zero = int(np.sum(weights.row_sums == 0))
    if zero:
        logger.debug(f"{zero} zero-mass tube rows received uniform weights")
    table = WaveTable(decomposition, coefficients, weights.family)
    logger.info(f"built table of depth {weights.family.level} with {weights.family.count} entries")
    return table


def write_table(table: WaveTable, directory: str, max_tubes: Optional[int] = None) -> str:
    """Writes the decomposition manifest plus coefficients.csv (rows tubes, columns q₀)."""
    write_decomposition(table.decomposition, directory, max_tubes)
    path = os.path.join(directory, "coefficients.csv")
    with open(path, "w", newline="") as stream:
        writer = csv.writer(stream)
        writer.writerow(["leaf", "point"] + [f"q{i}" for i in range(table.family.count)])
        for tube, row in zip(table.decomposition.tubes, table.coefficients):
            writer.writerow([tube.leaf, tube.point] + [f"{v:.17g}" for v in row])
    return path


def cube_cutoff(cube: SpaceTimeCube, points: np.ndarray, decay_power: int) -> np.ndarray:
    """χ̃_q = (1 + |(x, t) − c_q| / side)^{-N}."""
    distance = np.linalg.norm(np.atleast_2d(points) - cube.center, axis=-1)
    return (1.0 + distance / cube.side) ** (-float(decay_power))


def _window(cube: SpaceTimeCube, factor: int) -> SpaceTimeCube:
    resolution = tuple(r * factor for r in cube.resolution)
    return SpaceTimeCube(cube.center, cube.sides * factor, resolution)


def cube_cutoff_norm(
    wave: FreeWave, cube: SpaceTimeCube, decay_power: int, window_factor: int = 3
) -> float:
    """‖χ̃_q E f‖_{L²} over the concentric window of `window_factor` times the side."""
    window = _window(cube, window_factor)
    field = extend_on_grid(wave, window).ravel() * cube_cutoff(cube, window.points, decay_power)
    return lp_norm(field, window.cell_volume, 2.0)


def cross_cube_norm(
    table: WaveTable,
    source: int,
    target: int,
    partners: Sequence[FreeWave],
    c: float,
    p: float = 1.0,
    resolution: Optional[int] = None,
) -> float:
    """‖Φ^{(q')} φ₂ φ₃‖_{L^p((1−c)q'')} for q' = child `source`, q'' = child `target`.

    Args:
        table: The table of φ₁.
        source: Index of q'.
        target: Index of q''; must differ from `source`.
        partners: φ₂ and φ₃.
        c: Core shrink factor.
        p: Exponent, 1 or 2/3 in the recursion.
        resolution: Evaluation cells per axis on (1−c)q''.
    """
    if source == target:
        raise TableError(f"cross-cube norm needs q' != q'', both are child {source}")
    if len(partners) != 2:
        raise TableError(f"cross-cube norm needs two partner waves, got {len(partners)}")
    core = table.family.child(target).shrunk(1.0 - c, resolution)
    product = extend_on_grid(table.entry(source), core)
    for wave in partners:
        product = product * extend_on_grid(wave, core)
    return lp_norm(product, core.cell_volume, p)


def cross_cube_l1(
    table: WaveTable,
    source: int,
    target: int,
    partners: Sequence[FreeWave],
    c: float,
    resolution: Optional[int] = None,
) -> float:
    """Cross-cube L¹ norm of Φ^{(source)} against the partners on `target`."""
    return cross_cube_norm(table, source, target, partners, c, 1.0, resolution)


def two_thirds_bound(R: float, waves: Sequence[FreeWave]) -> float:
    """R^{3/2} Π M(φᵢ)^{1/2}, the L^{2/3} bound up to its constant."""
    return float(R**1.5 * np.prod([np.sqrt(mass(w)) for w in waves]))


def three_sequence_bound(
    a: Sequence[float], b: Sequence[float], c: Sequence[float], q: float
) -> Tuple[float, float, bool]:
    """Σ aᵢ^q bᵢ^q cᵢ^q against (Σa)^q (Σb)^q (Σc)^q, valid for q ≥ 1/3."""
    if q < 1.0 / 3.0:
        raise TableError(f"three-sequence bound needs q >= 1/3, got {q}")
    a, b, c = (np.asarray(s, dtype=float) for s in (a, b, c))
    if not a.shape == b.shape == c.shape:
        raise TableError("sequences must have equal length")
    if np.any(a < 0) or np.any(b < 0) or np.any(c < 0):
        raise TableError("sequences must be nonnegative")
    lhs = float(np.sum((a * b * c) ** q))
    rhs = float((a.sum() * b.sum() * c.sum()) ** q)
    return lhs, rhs, lhs <= rhs * (1 + 1e-12)


def slab_density(
    patch: HypersurfacePatch, anchor: Sequence[float], mu: float
) -> Callable[[np.ndarray], np.ndarray]:
    """Indicator of the nodes ξ with Σ(ξ) within μ of the 3-plane through Σ(anchor).

    The 3-plane is spanned by the leaf through `anchor` and the normal there.
    """
    anchor = patch.require_inside(anchor)
    span = np.vstack([leaf_tangents(patch, anchor), unit_normals(patch, anchor)])
    basis, _ = np.linalg.qr(span.T)
    origin = patch.embed(anchor)

    def density(nodes: np.ndarray) -> np.ndarray:
        offsets = patch.embed(nodes) - origin
        residual = offsets - (offsets @ basis) @ basis.T
        return (np.linalg.norm(residual, axis=-1) <= mu).astype(complex)

    return density


def localized_trilinear_diagnostic(
    cube: SpaceTimeCube,
    waves: Sequence[FreeWave],
    mu: float,
    decay_power: int = 10,
    window_factor: int = 3,
) -> float:
    """‖Π φᵢ‖_{L¹(q)} / (μ^{(n−2)/2} r^{-3/2} Π ‖χ̃_q φᵢ‖_{L²}) for a cube q of side r.

    Args:
        cube: q; its side is r.
        waves: φ₁ (slab-localized with thickness μ), φ₂, φ₃.
        mu: Slab thickness, at least 1/r.
        decay_power: Power N of χ̃_q.
    """
    r = cube.side
    if mu < 1.0 / r:
        raise TableError(f"slab thickness {mu} is below 1/r = {1.0 / r}")
    if len(waves) != 3:
        raise TableError(f"diagnostic needs 3 waves, got {len(waves)}")
    product = np.ones(cube.resolution, dtype=complex)
    for wave in waves:
        product = product * extend_on_grid(wave, cube)
    numerator = lp_norm(product, cube.cell_volume, 1.0)
    if numerator == 0:
        return 0.0
    n = cube.dim - 1
    norms = [cube_cutoff_norm(w, cube, decay_power, window_factor) for w in waves]
    return numerator / (mu ** ((n - 2) / 2) * r**-1.5 * float(np.prod(norms)))


@dataclass(frozen=True)
class PairCensus:
    """Cluster counts of (q, q') occurrences per tube pair (T₂, T₃)."""

    max_multiplicity: int
    counts: Dict[Tuple[Tuple[int, int], Tuple[int, int]], int]
    related_pairs: int


def _related(
    centers: np.ndarray,
    first: np.ndarray,
    second: np.ndarray,
    normals: np.ndarray,
    alpha: Tuple[float, float],
    width: float,
) -> np.ndarray:
    """Boolean matrix of q' ∈ `second` meeting S(q) for q ∈ `first`."""
    offsets = centers[second][None, :, :] - centers[first][:, None, :]
    related = np.zeros(offsets.shape[:2], dtype=bool)
    low, high = alpha
    for normal in normals:
        projection = offsets @ normal
        size = np.clip(np.abs(projection), low, high)
        nearest = np.sign(projection)[..., None] * size[..., None] * normal
        nearest = np.where(projection[..., None] == 0, size[..., None] * normal, nearest)
        related |= np.linalg.norm(offsets - nearest, axis=-1) <= width
    distance = np.linalg.norm(offsets, axis=-1)
    return related & (distance >= low)


def _cluster_count(occurrences: np.ndarray, indices: np.ndarray, near: int) -> int:
    """Greedy cover of occurrences (q, q') by clusters of Chebyshev index radius `near`."""
    if len(occurrences) == 0:
        return 0
    points = np.hstack([indices[occurrences[:, 0]], indices[occurrences[:, 1]]])
    pairs = scipy.spatial.cKDTree(points).query_pairs(near, p=np.inf, output_type="ndarray")
    count = len(points)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(count)])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(count)])
    close = scipy.sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(count, count))
    remaining = np.ones(count, dtype=bool)
    clusters = 0
    while remaining.any():
        degree = np.where(remaining, close @ remaining.astype(float), -1.0)
        pick = int(np.argmax(degree))
        remaining[close.indices[close.indptr[pick] : close.indptr[pick + 1]]] = False
        clusters += 1
    return clusters


def _incidence(
    decomposition: PacketDecomposition, centers: np.ndarray, radius: float
) -> Tuple[List[Tuple[int, int]], scipy.sparse.csr_matrix]:
    """Active tubes and the sparse cube-by-tube matrix of cubes within `radius` of each axis."""
    keys = []
    rows, cols = [], []
    for tube, wave in decomposition.packets():
        if wave.is_zero:
            continue
        cubes = np.flatnonzero(tube.axis_distance(centers) <= radius)
        if cubes.size:
            rows.append(cubes)
            cols.append(np.full(cubes.size, len(keys)))
            keys.append((tube.leaf, tube.point))
    rows_all = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
    cols_all = np.concatenate(cols) if cols else np.zeros(0, dtype=int)
    matrix = scipy.sparse.csr_matrix(
        (np.ones(len(rows_all), dtype=bool), (rows_all, cols_all)), shape=(len(centers), len(keys))
    )
    return keys, matrix


def _related_pairs(
    centers: np.ndarray,
    normals: np.ndarray,
    alpha: Tuple[float, float],
    width: float,
    chunk: int = 256,
) -> Tuple[np.ndarray, np.ndarray]:
    """All cube pairs (q, q') with q' meeting S(q), computed a block of rows at a time."""
    everything = np.arange(len(centers))
    first, second = [], []
    for start in range(0, len(centers), chunk):
        block = everything[start : start + chunk]
        rows, cols = np.nonzero(_related(centers, block, everything, normals, alpha, width))
        first.append(block[rows])
        second.append(cols)
    return np.concatenate(first), np.concatenate(second)


def _expand(
    q: np.ndarray,
    q_prime: np.ndarray,
    meet3: scipy.sparse.csr_matrix,
    meet2: scipy.sparse.csr_matrix,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Every (T₃ ∋ q, T₂ ∋ q') combination over the related pairs, as index arrays."""
    count3 = np.diff(meet3.indptr)[q]
    count2 = np.diff(meet2.indptr)[q_prime]
    sizes = count3 * count2
    pair = np.repeat(np.arange(len(q)), sizes)
    local = np.arange(int(sizes.sum())) - np.repeat(np.cumsum(sizes) - sizes, sizes)
    tube3 = meet3.indices[meet3.indptr[q[pair]] + local // count2[pair]]
    tube2 = meet2.indices[meet2.indptr[q_prime[pair]] + local % count2[pair]]
    return pair, tube3, tube2


def pair_census(
    second: PacketDecomposition,
    third: PacketDecomposition,
    family: CubeFamily,
    pivot: HypersurfacePatch,
    pivot_points: np.ndarray,
    near: int = 2,
    alpha_max: float = 2.0,
    tube_radius: Optional[float] = None,
    separation: Optional[float] = None,
) -> PairCensus:
    """Counts the separated occurrences of every pair of active tubes (T₂, T₃).

    An occurrence is a pair of cubes q ∋ T₃, q' ∋ T₂ with q' ∩ S(q) ≠ ∅, where S(q) is the
    r-neighborhood of c(q) + {αN₁(ζ) : separation ≤ |α| ≤ alpha_max R} for the pivot
    normals N₁. Occurrences within `near` cells of each other in both q and q' form one
    cluster; the multiplicity of a pair is its cluster count.

    Args:
        second: Packets of φ₂.
        third: Packets of φ₃.
        family: Cubes of side r tiling Q.
        pivot: The first surface.
        pivot_points: Points of the pivot surface whose normals span the cone.
        near: Chebyshev index radius of tolerated near-coincident configurations.
        alpha_max: Upper end of |α| in units of R.
        tube_radius: Radius for tube-cube incidence, default r.
        separation: Lower end of |α|, default cR.
    """
    lattices = (second.lattice, third.lattice)
    r, c, R = lattices[0].r, lattices[0].c, lattices[0].R
    if any(abs(lat.r - r) > 1e-12 * r or lat.c != c for lat in lattices):
        raise TableError("pair census needs decompositions at one scale r and one c")
    if np.max(np.abs(family.child_sides - r)) > 1e-9 * r:
        raise TableError(f"cube family has side {family.child_sides[0]}, expected r = {r}")
    radius = r if tube_radius is None else tube_radius
    low = c * R if separation is None else separation
    centers = family.centers
    normals = unit_normals(pivot, np.atleast_2d(pivot_points))

    keys2, meet2 = _incidence(second, centers, radius)
    keys3, meet3 = _incidence(third, centers, radius)
    q, q_prime = _related_pairs(centers, normals, (low, alpha_max * R), r)
    pair, tube3, tube2 = _expand(q, q_prime, meet3, meet2)

    counts: Dict[Tuple[Tuple[int, int], Tuple[int, int]], int] = {}
    if len(pair) == 0:
        logger.info(f"pair census: {len(q)} related cube pairs and no occurrence")
        return PairCensus(0, counts, 0)
    order = np.lexsort((tube3, tube2))
    tube2, tube3 = tube2[order], tube3[order]
    labels = tube2 * max(1, len(keys3)) + tube3
    _, starts = np.unique(labels, return_index=True)
    ends = np.append(starts[1:], len(labels))
    occurrences = np.stack([q[pair[order]], q_prime[pair[order]]], axis=1)
    points = np.hstack([family.indices[occurrences[:, 0]], family.indices[occurrences[:, 1]]])
    spread = (
        np.maximum.reduceat(points, starts, axis=0) - np.minimum.reduceat(points, starts, axis=0)
    ).max(axis=1)
    for start, end, width in zip(starts, ends, spread):
        count = 1
        if width > near:
            count = _cluster_count(occurrences[start:end], family.indices, near)
        counts[(keys2[tube2[start]], keys3[tube3[start]])] = count
    best = max(counts.values(), default=0)
    logger.info(
        f"pair census over {len(keys2)} x {len(keys3)} active tubes: "
        f"{len(q)} related cube pairs, {len(pair)} occurrences, max multiplicity {best}"
    )
    return PairCensus(best, counts, len(pair))
