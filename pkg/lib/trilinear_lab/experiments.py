# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

"""# Experiments Library.

End-to-end studies built on the geometry, waves, packets and tables libraries:

- `threshold_exponent` and `counterexample_target`: the exponent algebra of the k-linear
  threshold p(k) = 2(n+1+k) / (k(n+k−1)).
- `squashed_cap_run`: squashed caps on k sphere caps Σᵢ, graphed over {ζᵢ = 0}, whose
  extensions stay large on the dual box R_c.
- `recursion_iterate`: the induction-on-scales recursion for Ā_p(R), run as an equality
  update.
- `double_cone_trend`, `cross_cube_trend` and `pair_census_trend`: measured trends on the
  standard double-cone triple. They are heuristic evidence over test densities and verify
  nothing over all densities.

Every run is deterministic given its seed:

```python
from trilinear_lab.experiments import RecursionConfig, recursion_iterate

trace = recursion_iterate(RecursionConfig(n=3, p=0.95, C=10, C0=4, epsilon=0.01))
assert trace.classification == "bounded"
```
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.special

from .errors import ExperimentError, InvariantViolation
from .geometry import (
    HypersurfacePatch,
    SphereCapPhase,
    double_cone_triple,
    estimate_transversality,
)
from .packets import (
    PacketDecomposition,
    build_lattice,
    compatible_grid,
    covering_points_per_axis,
    decompose,
)
from .tables import (
    PairCensus,
    build_table,
    cross_cube_l1,
    pair_census,
    subdivide,
    tube_weights,
)
from .waves import (
    FreeWave,
    FrequencyGrid,
    SpaceTimeCube,
    extend,
    mass,
    product_lp_norm,
    trilinear_ratio,
)

logger = logging.getLogger(__name__)

CAUCHY_TOLERANCE = 1e-9
TRANSVERSALITY_FLOOR = 0.01
# φ₂ and φ₃ packets for the pair census are taken at c close to 1
PAIR_CENSUS_C = 0.9
# lattice half width, in units of R, holding every tube that meets Q
PAIR_REACH = 2.0
# largest phase change of a wave across one evaluation cell
RESOLVED_PHASE = np.pi / 2


def threshold_exponent(n: int, k: int) -> Fraction:
    """p(k) = 2(n+1+k) / (k(n+k−1)), exactly."""
    if n < 1:
        raise ExperimentError(f"n must be positive, got {n}")
    if not 1 <= k <= n + 1:
        raise ExperimentError(f"k = {k} violates 1 <= k <= n+1 = {n + 1}")
    return Fraction(2 * (n + 1 + k), k * (n + k - 1))


def counterexample_target(n: int, k: int, p: float, normalized: bool = True) -> float:
    """Predicted ε-exponent of the squashed-cap norm.

    The raw norm scales like ε^{k(n+k−1) − (n+1+k)/p}; dividing by Π‖fᵢ‖₂ removes a further
    k(n+k−1)/2.
    """
    threshold_exponent(n, k)
    raw = k * (n + k - 1) - (n + 1 + k) / p
    return raw - k * (n + k - 1) / 2 if normalized else raw


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares line through (log x, log y)."""

    slope: float
    intercept: float
    residual: float


def scaling_fit(xs: Sequence[float], ys: Sequence[float]) -> ScalingFit:
    """Least-squares line through the points in log-log coordinates.

    Args:
        xs: At least three positive abscissae, e.g. ε or R values.
        ys: Matching positive values.

    Returns:
        ScalingFit: Slope, intercept and root-mean-square residual.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) != len(ys):
        raise ExperimentError(f"{len(xs)} abscissae for {len(ys)} values")
    if len(xs) < 3:
        raise ExperimentError(f"a scaling fit needs at least 3 points, got {len(xs)}")
    if np.any(ys <= 0) or np.any(xs <= 0):
        raise ExperimentError("scaling fit needs positive values")
    log_x, log_y = np.log(xs), np.log(ys)
    (slope, intercept) = np.polyfit(log_x, log_y, 1)
    residual = float(np.sqrt(np.mean((slope * log_x + intercept - log_y) ** 2)))
    return ScalingFit(float(slope), float(intercept), residual)


@dataclass(frozen=True)
class SquashedCapConfig:
    """Parameters of the squashed-cap experiment.

    Attributes:
        n: Surfaces live in R^{n+1}.
        k: Number of caps, 1 <= k <= n+1.
        epsilons: Values of ε in (0, 1/4].
        c_small: Box constant of R_c, at most 1/2.
        resolution: Frequency nodes per axis of every Uᵢ.
        space_resolution: Evaluation cells per axis of R_c.
        p_values: Exponents of the reported L^p norms.
        samples: Random points of R_c for the pointwise check.
        seed: Root seed.
    """

    n: int = 3
    k: int = 3
    epsilons: Tuple[float, ...] = (0.25, 0.125, 0.0625)
    c_small: float = 0.1
    resolution: int = 4
    space_resolution: int = 8
    p_values: Tuple[float, ...] = (0.8, 14 / 15, 1.2)
    samples: int = 256
    seed: int = 0

    def __post_init__(self):
        """Rejects configurations outside the supported parameter ranges."""
        threshold_exponent(self.n, self.k)
        for epsilon in self.epsilons:
            if not 0 < epsilon <= 0.25:
                raise ExperimentError(f"epsilon {epsilon} outside (0, 1/4]")
        if not 0 < self.c_small <= 0.5:
            raise ExperimentError(f"c_small {self.c_small} outside (0, 1/2]")
        if self.resolution < 2:
            raise ExperimentError(
                f"resolution {self.resolution} cannot resolve a cell of U: need 2 nodes per axis"
            )
        if any(p <= 0 for p in self.p_values):
            raise ExperimentError("every p must be positive")


@dataclass(frozen=True)
class SquashedCapRecord:
    """One ε of the squashed-cap experiment."""

    epsilon: float
    cap_volume: float
    norm_closed_form: float
    norm_numeric: Tuple[float, ...]
    pointwise_min: float
    max_phase_deviation: float
    certified_factor: float
    nominal_factor: float
    lp_norms: Dict[float, float]
    normalized_norms: Dict[float, float]


def squashed_cap_patch(n: int, k: int, axis: int, epsilon: float) -> HypersurfacePatch:
    """Σ_axis over the squashed box: |ζ_j| < ε² for j < k, |ζ_j| < ε for j ≥ k (j ≠ axis)."""
    widths = [epsilon**2 if j < k else epsilon for j in range(n + 1) if j != axis]
    box = np.array([[-w, w] for w in widths])
    return HypersurfacePatch(
        n=n,
        graph_axis=axis,
        phase=SphereCapPhase(np.zeros(n)),
        box=box,
        name=f"squashed_cap_{axis + 1}",
    )


def dual_box(config: SquashedCapConfig, epsilon: float) -> SpaceTimeCube:
    """R_c: |x_i| <= c ε^{-2} for i < k and c ε^{-1} otherwise."""
    n, k, c = config.n, config.k, config.c_small
    half = np.array([c / epsilon**2 if i < k else c / epsilon for i in range(n + 1)])
    return SpaceTimeCube(np.zeros(n + 1), 2 * half, (config.space_resolution,) * (n + 1))


def squashed_cap_run(config: SquashedCapConfig, epsilon: float) -> SquashedCapRecord:
    """Runs one ε: builds fᵢ ≡ 1 on every Uᵢ and measures the extensions on R_c.

    Args:
        config: Experiment parameters.
        epsilon: The ε of this run.

    Returns:
        SquashedCapRecord: Closed-form and numeric ‖fᵢ‖₂, the pointwise ratio on R_c with
            its certified factor, and every L^p(R_c) norm of Π Eᵢfᵢ.
    """
    n, k = config.n, config.k
    box = dual_box(config, epsilon)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
    samples = rng.uniform(box.lower, box.upper, size=(config.samples, n + 1))
    corners = np.array(np.meshgrid(*zip(box.lower, box.upper), indexing="ij"))
    samples = np.vstack([np.zeros(n + 1), corners.reshape(n + 1, -1).T, samples])

    waves = []
    deviation = 0.0
    ratio = np.inf
    for axis in range(k):
        patch = squashed_cap_patch(n, k, axis, epsilon)
        grid = FrequencyGrid(patch.box, (config.resolution,) * n)
        wave = FreeWave.constant(patch, grid)
        waves.append(wave)
        surface = patch.embed(grid.nodes)
        phases = samples @ surface.T - samples[:, axis : axis + 1]
        deviation = max(deviation, float(np.max(np.abs(phases))))
        volume = float(np.prod(patch.box[:, 1] - patch.box[:, 0]))
        ratio = min(ratio, float(np.min(np.abs(extend(wave, samples)))) / volume)

    volume = (2 * epsilon**2) ** (k - 1) * (2 * epsilon) ** (n + 1 - k)
    closed = float(np.sqrt(volume))
    numeric = tuple(float(np.sqrt(mass(w))) for w in waves)
    if max(abs(v - closed) for v in numeric) > 1e-12 * max(1.0, closed):
        raise InvariantViolation(f"‖f‖₂ = {numeric} disagrees with √|U| = {closed}")
    certified = float(np.cos(deviation)) if deviation <= np.pi / 2 else 0.0
    if ratio < certified - 1e-9:
        raise InvariantViolation(
            f"pointwise ratio {ratio:.6g} below the certified factor {certified:.6g}"
        )
    nominal = float(np.cos(3 * config.c_small))
    if deviation > 3 * config.c_small:
        logger.warning(
            f"epsilon={epsilon}: phase deviation {deviation:.4f} exceeds 3c = {3 * config.c_small}"
        )
    norms = {p: product_lp_norm(waves, box, p) for p in config.p_values}
    scale = float(np.prod(numeric))
    record = SquashedCapRecord(
        epsilon=epsilon,
        cap_volume=volume,
        norm_closed_form=closed,
        norm_numeric=numeric,
        pointwise_min=ratio,
        max_phase_deviation=deviation,
        certified_factor=certified,
        nominal_factor=nominal,
        lp_norms=norms,
        normalized_norms={p: v / scale for p, v in norms.items()},
    )
    logger.info(f"squashed cap epsilon={epsilon}: pointwise min {ratio:.4f}")
    return record


def squashed_cap_series(
    config: SquashedCapConfig, threads: int = 1
) -> Tuple[List[SquashedCapRecord], Dict[float, ScalingFit]]:
    """Runs every ε of `config` and fits the mass-normalized norms against ε per p."""
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        records = list(pool.map(lambda e: squashed_cap_run(config, e), config.epsilons))
    fits = {}
    if len(records) >= 3:
        epsilons = [r.epsilon for r in records]
        for p in config.p_values:
            fits[p] = scaling_fit(epsilons, [r.normalized_norms[p] for r in records])
            target = counterexample_target(config.n, config.k, p)
            logger.info(f"p={p}: normalized slope {fits[p].slope:.4f}, target {target:.4f}")
    return records, fits


@dataclass(frozen=True)
class RecursionConfig:
    """Constants of the induction-on-scales recursion.

    Attributes:
        n: Dimension.
        p: Exponent.
        C: Constant of the (1 + cC) factors.
        C0: Table depth; the default R₀ is 2^{2 C0}.
        epsilon: The ε loss.
        C_eps: The constant C(ε) of the error term.
        R0: Starting scale, Ā(R₀) = 1.
        max_doublings: Number of doublings traced.
    """

    n: int = 3
    p: float = 0.95
    C: float = 10.0
    C0: int = 4
    epsilon: float = 0.01
    C_eps: float = 1.0
    R0: Optional[float] = None
    max_doublings: int = 60

    def __post_init__(self):
        """Rejects nonpositive constants."""
        if self.p <= 0:
            raise ExperimentError(f"p must be positive, got {self.p}")
        if min(self.C, self.C_eps, self.epsilon) <= 0 or self.C0 < 0:
            raise ExperimentError("recursion constants must be positive")
        if self.max_doublings < 1:
            raise ExperimentError("max_doublings must be positive")

    @property
    def start(self) -> float:
        """R₀, or 2^{2 C0} when unset."""
        return float(self.R0) if self.R0 is not None else 2.0 ** (2 * self.C0)

    @property
    def delta(self) -> float:
        """1/p − (3/2)(n+2)/(n+4)."""
        return 1.0 / self.p - 1.5 * (self.n + 2) / (self.n + 4)

    @property
    def error_exponent(self) -> float:
        """(n+4)/4 · Δ, the R-exponent of the error term once c is chosen."""
        return (self.n + 4) / 4 * self.delta

    @property
    def exponent(self) -> float:
        """(n+4)/4 · Δ + ε; the recursion is bounded iff this is negative."""
        return self.error_exponent + self.epsilon


@dataclass(frozen=True)
class RecursionTrace:
    """Trajectory of log Ā_p(R_m) with R_m = 2^m R₀, and its classification."""

    config: RecursionConfig
    radii: Tuple[float, ...]
    log_values: Tuple[float, ...]
    log_step_factors: Tuple[float, ...]
    classification: str
    cauchy_step: Optional[int]
    tail_bound: Optional[float]
    settled_in_trace: bool = False


def classify_recursion(config: RecursionConfig) -> str:
    """Closed-form sign criterion."""
    return "bounded" if config.exponent < 0 else "divergent"


def _increment_bound(config: RecursionConfig, m: float) -> float:
    """log of the simplified per-step factor (1 + Cc)² (1 + (2^{1/p} − 1) C(ε) R^{e})."""
    log_r = np.log(config.start) + m * np.log(2.0)
    c = np.exp(config.exponent / config.C * log_r)
    error = (2.0 ** (1.0 / config.p) - 1.0) * config.C_eps * np.exp(config.error_exponent * log_r)
    return float(2 * np.log1p(config.C * c) + np.log1p(error))


def _cauchy_step(config: RecursionConfig) -> int:
    """Smallest m whose increment bound is below the Cauchy tolerance; needs a decreasing bound."""
    high = 1
    while _increment_bound(config, high) >= CAUCHY_TOLERANCE:
        high *= 2
        if high > 2**40:
            raise ExperimentError("increment bound does not fall below the Cauchy tolerance")
    low = 0
    while high - low > 1:
        middle = (low + high) // 2
        if _increment_bound(config, middle) < CAUCHY_TOLERANCE:
            high = middle
        else:
            low = middle
    return high


def _tail_bound(config: RecursionConfig, m: int) -> float:
    """Geometric bound on Σ_{j ≥ m} of the increment bound."""
    log_r = np.log(config.start) + m * np.log(2.0)
    ratio_c = 2.0 ** (config.exponent / config.C)
    ratio_e = 2.0 ** config.error_exponent
    first = 2 * config.C * np.exp(config.exponent / config.C * log_r) / (1 - ratio_c)
    second = (
        (2.0 ** (1.0 / config.p) - 1.0)
        * config.C_eps
        * np.exp(config.error_exponent * log_r)
        / (1 - ratio_e)
    )
    return float(first + second)


def recursion_iterate(config: RecursionConfig) -> RecursionTrace:
    """Iterates the recursion for Ā_p as an equality update, in log space.

    A(R) = (1 + cC) ((1 + cC)^p Ā(R/2)^p + (C(ε) R^{(n+4)/4 Δ})^p)^{1/p} with
    c(R) = R^{((n+4)/4 Δ + ε)/C}, and Ā(R) = max(Ā(R/2), A(R)).

    The classification follows the sign of (n+4)/4 Δ + ε. For a bounded recursion the
    trace also carries the first step whose increment bound drops below 1e-9 and a
    geometric bound on the growth left after it.
    """
    p = config.p
    radii = [config.start]
    logs = [0.0]
    factors = []
    for m in range(1, config.max_doublings + 1):
        log_r = np.log(config.start) + m * np.log(2.0)
        c = np.exp(config.exponent / config.C * log_r)
        log_factor = np.log1p(c * config.C)
        error = np.log(config.C_eps) + config.error_exponent * log_r
        combined = scipy.special.logsumexp([p * (log_factor + logs[-1]), p * error]) / p
        logs.append(max(logs[-1], float(log_factor + combined)))
        radii.append(float(np.exp(log_r)))
        factors.append(_increment_bound(config, m))

    classification = classify_recursion(config)
    step = tail = None
    if classification == "bounded":
        step = _cauchy_step(config)
        tail = _tail_bound(config, step)
    settled = len(logs) > 1 and logs[-1] - logs[-2] < CAUCHY_TOLERANCE
    logger.info(
        f"recursion n={config.n} p={p}: {classification}, exponent {config.exponent:.6g}, "
        f"log A after {config.max_doublings} doublings {logs[-1]:.6g}"
    )
    return RecursionTrace(
        config, tuple(radii), tuple(logs), tuple(factors), classification, step, tail, settled
    )


@dataclass(frozen=True)
class TrendResult:
    """Measured quantity per R, with its fitted growth exponent when defined."""

    radii: Tuple[float, ...]
    values: Tuple[float, ...]
    fit: Optional[ScalingFit]


def _fit_or_none(radii: Sequence[float], values: Sequence[float]) -> Optional[ScalingFit]:
    if len(radii) < 3 or min(values) <= 0:
        return None
    return scaling_fit(radii, values)


def transversality_precheck(
    triple: Sequence[HypersurfacePatch], sample_count: int, seed: int
) -> None:
    """Raises ExperimentError unless ν and the curvature floor are both bounded away from 0."""
    report = estimate_transversality(triple, sample_count, seed)
    curvature = report.nu_curvature or 0.0
    if report.nu_transversal <= TRANSVERSALITY_FLOOR or curvature <= TRANSVERSALITY_FLOOR:
        raise ExperimentError(
            f"transversality precheck failed: nu_transversal={report.nu_transversal:.4g}, "
            f"nu_curvature={curvature:.4g}, both must exceed {TRANSVERSALITY_FLOOR}"
        )


def double_cone_trend(
    n: int,
    p: float,
    radii: Sequence[float],
    resolution: int,
    grid_resolution: int,
    amplitudes: Sequence[complex] = (1.0, 1.0, 1.0),
    sample_count: int = 64,
    seed: int = 0,
    threads: int = 1,
) -> TrendResult:
    """trilinear_ratio of constant densities on the standard triple, on cubes of side R.

    Args:
        n: Dimension, at least 3.
        p: Exponent.
        radii: Cube sides R.
        resolution: Evaluation cells per cube axis.
        grid_resolution: Frequency nodes per patch axis.
        amplitudes: The constant value of each density.
        sample_count: Samples of the transversality precheck.
        seed: Root seed.
        threads: Worker threads over R.
    """
    triple = double_cone_triple(n)
    transversality_precheck(triple, sample_count, seed)
    waves = [
        FreeWave.constant(patch, FrequencyGrid.uniform(patch.box, grid_resolution), value)
        for patch, value in zip(triple, amplitudes)
    ]
    if any(w.is_zero for w in waves):
        return TrendResult(tuple(radii), tuple(0.0 for _ in radii), None)

    def ratio(side: float) -> float:
        cube = SpaceTimeCube.cube(np.zeros(n + 1), side, resolution)
        return trilinear_ratio(waves, cube, p)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        values = list(pool.map(ratio, radii))
    fit = _fit_or_none(radii, values)
    if fit is not None:
        logger.info(f"double-cone trend p={p}: growth exponent {fit.slope:.4f}")
    return TrendResult(tuple(radii), tuple(values), fit)


def random_wave(patch: HypersurfacePatch, grid: FrequencyGrid, seed: int, index: int) -> FreeWave:
    """Complex Gaussian amplitudes on `grid`, from the stream (seed, index)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, index)))
    amplitudes = rng.standard_normal(grid.size) + 1j * rng.standard_normal(grid.size)
    return FreeWave(grid, amplitudes, patch, patch.box)


def triple_decompositions(
    triple: Sequence[HypersurfacePatch],
    R: float,
    c: float,
    points_per_axis: int,
    seed: int,
) -> List[PacketDecomposition]:
    """Packets of one random wave per patch, on grids compatible with the lattice at R."""
    decompositions = []
    for index, patch in enumerate(triple):
        grid, bounding = compatible_grid(patch, R, c, points_per_axis)
        lattice = build_lattice(patch, R, c, bounding, grid)
        decompositions.append(decompose(random_wave(patch, grid, seed, index), lattice))
    return decompositions


def resolved_cells(waves: Sequence[FreeWave], side: float, minimum: int, multiple: int) -> int:
    """Cells per axis of a cube of `side` across which no wave turns more than π/2.

    The phase change across one cell is |Σ(ξ)|₁ times the cell width, maximized over the
    frequency nodes. The count is at least `minimum` and a multiple of `multiple` holding
    at least two cells per block.
    """
    if side <= 0 or minimum < 1 or multiple < 1:
        raise ExperimentError(
            f"need a positive side and counts, got side={side}, minimum={minimum}, "
            f"multiple={multiple}"
        )
    extent = max(
        (float(np.max(np.abs(w.patch.embed(w.grid.nodes)).sum(axis=1))) for w in waves),
        default=0.0,
    )
    needed = max(minimum, 2 * multiple, int(np.ceil(side * extent / RESOLVED_PHASE)))
    return multiple * int(np.ceil(needed / multiple))


@dataclass(frozen=True)
class TableStudy:
    """Table of φ₁ weighted by φ₂ at one scale R, with its measured constants."""

    R: float
    decomposition_error: float
    mass_constant: float
    margin_ok: bool
    cross_cube_max: float


def table_study(
    triple: Sequence[HypersurfacePatch],
    R: float,
    c: float,
    depth: int,
    resolution: int,
    points_per_axis: int = 2,
    seed: int = 0,
    threads: int = 1,
) -> TableStudy:
    """Builds the table of φ₁ on Q = [−R/2, R/2]^{n+1} and measures its cross-cube norms.

    The cross-cube value is max over q' ≠ q'' of ‖Φ^{(q')} φ₂ φ₃‖_{L¹((1−c)q'')} divided by
    Π M(φᵢ)^{1/2}.
    """
    first, second, third = triple_decompositions(triple, R, c, points_per_axis, seed)
    dim = first.lattice.patch.dim
    sources = [d.source for d in (first, second, third)]
    cells = resolved_cells(sources, R, resolution, 2**depth)
    if cells > resolution:
        logger.info(f"table study at R={R}: {cells} cells per axis instead of {resolution}")
    cube = SpaceTimeCube.cube(np.zeros(dim), R, cells)
    weights = tube_weights(first, second.source, cube, depth, threads)
    table = build_table(first, weights)
    partners = [second.source, third.source]
    scale = float(np.prod([np.sqrt(mass(source)) for source in sources]))
    core_resolution = max(2, cells // 2**depth)
    best = 0.0
    for source in range(table.family.count):
        for target in range(table.family.count):
            if source != target:
                value = cross_cube_l1(table, source, target, partners, c, core_resolution)
                best = max(best, value / scale)
    _, _, margin_ok = table.margin_check()
    return TableStudy(R, table.decomposition_error(), table.mass_constant(), margin_ok, best)


def cross_cube_trend(
    n: int,
    radii: Sequence[float],
    c: float,
    depth: int,
    resolution: int,
    points_per_axis: int = 2,
    seed: int = 0,
    threads: int = 1,
) -> Tuple[List[TableStudy], Optional[ScalingFit]]:
    """table_study over R on the standard triple, with the fitted R-exponent of the max."""
    triple = double_cone_triple(n)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        studies = list(
            pool.map(
                lambda R: table_study(triple, R, c, depth, resolution, points_per_axis, seed),
                radii,
            )
        )
    fit = _fit_or_none(radii, [s.cross_cube_max for s in studies])
    if fit is not None:
        logger.info(
            f"cross-cube exponent {fit.slope:.4f} against -(n-2)/4 = {-(n - 2) / 4:.4f}"
        )
    return studies, fit


def pair_census_trend(
    n: int,
    radii: Sequence[float],
    c: float,
    violating: bool = False,
    points_per_axis: int = 2,
    near: int = 2,
    seed: int = 0,
    threads: int = 1,
    pair_c: float = PAIR_CENSUS_C,
) -> Tuple[TrendResult, List[PairCensus]]:
    """Max (T₂, T₃) multiplicity per R for the standard or the violating triple.

    φ₂ and φ₃ are decomposed at `pair_c`, close to 1, on lattices wide enough that every
    tube meeting Q is present; the pivot lattice and the separation cR use `c`.
    """
    triple = double_cone_triple(n, violating=violating)
    pivot = triple[0]

    def census(R: float) -> PairCensus:
        grid, bounding = compatible_grid(pivot, R, c, points_per_axis)
        pivot_lattice = build_lattice(pivot, R, c, bounding, grid)
        points = max(
            covering_points_per_axis(patch, R, pair_c, PAIR_REACH * R) for patch in triple[1:]
        )
        second, third = triple_decompositions(triple[1:], R, pair_c, points, seed)
        J = pivot_lattice.J
        family = subdivide(SpaceTimeCube.cube(np.zeros(n + 1), R, 2**J), J)
        return pair_census(
            second, third, family, pivot, pivot_lattice.leaf_reps, near, separation=c * R
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        censuses = list(pool.map(census, radii))
    values = [float(result.max_multiplicity) for result in censuses]
    label = "violating" if violating else "standard"
    logger.info(
        f"pair census ({label} triple): multiplicities {values}, "
        f"occurrences {[result.related_pairs for result in censuses]}"
    )
    return TrendResult(tuple(radii), tuple(values), _fit_or_none(radii, values)), censuses
