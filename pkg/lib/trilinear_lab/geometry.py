# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

"""# Geometry Library.

Graph-type hypersurface patches in R^{n+1}, their unit normals and shape operators, and the
sampled transversality, curvature and foliation quantities used by the rest of the lab.

A patch is the graph of a phase φ over an axis-aligned box U ⊂ R^n, inserted at
`graph_axis`, optionally followed by an orthogonal `rotation`:

```python
from trilinear_lab.geometry import HypersurfacePatch, shape_operator

patch = HypersurfacePatch.double_cone(n=3, half_width=0.1)
shape = shape_operator(patch, patch.center)
print(shape.eigenvalues)  # two vanishing principal curvatures, one nonzero
```

Patches carrying a `leaf_chart` are foliated: the leaves are the fibers of the projection
of chart coordinates onto their last n-2 entries. All sampling is driven by
`numpy.random.SeedSequence` streams keyed by purpose and patch index, so the same seed
reproduces a report bit for bit and a larger sample count only appends samples.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .errors import GeometryError, InvariantViolation

logger = logging.getLogger(__name__)

GRADIENT_RELATIVE_TOLERANCE = 1e-6
CHART_ROUNDTRIP_TOLERANCE = 1e-10
FLATNESS_FLAG_THRESHOLD = 1e-6
GL_DEGENERATE_THRESHOLD = 1e-3
DSPAN_MIN_NORM = 1e-9
SAMPLE_BATCH = 256
MAX_SAMPLE_BATCHES = 4096

# SeedSequence spawn keys, one per sampling purpose
_SAMPLE_POINTS = 0
_SAMPLE_LEAF_PAIRS = 1
_SAMPLE_DSPAN = 2
_SAMPLE_COEFFICIENTS = 3
_SAMPLE_FLATNESS = 4
_SAMPLE_CHECKS = 5


class Phase(ABC):
    """Scalar phase φ on n frequency variables, vectorized over leading axes."""

    @abstractmethod
    def value(self, xi: np.ndarray) -> np.ndarray:
        """Evaluates φ on points of shape (..., n)."""

    @abstractmethod
    def gradient(self, xi: np.ndarray) -> np.ndarray:
        """Evaluates ∇φ, shape (..., n)."""

    @abstractmethod
    def hessian(self, xi: np.ndarray) -> np.ndarray:
        """Evaluates the Hessian of φ, shape (..., n, n)."""


class HyperplanePhase(Phase):
    """φ(ξ) = a·ξ + b."""

    def __init__(self, slope: Sequence[float], offset: float = 0.0):
        """Stores the slope a and offset b."""
        self.slope = np.asarray(slope, dtype=float)
        self.offset = float(offset)

    def value(self, xi: np.ndarray) -> np.ndarray:
        """Evaluates a·ξ + b."""
        return np.asarray(xi, dtype=float) @ self.slope + self.offset

    def gradient(self, xi: np.ndarray) -> np.ndarray:
        """Constant gradient a."""
        xi = np.asarray(xi, dtype=float)
        return np.broadcast_to(self.slope, xi.shape).copy()

    def hessian(self, xi: np.ndarray) -> np.ndarray:
        """Zero Hessian."""
        xi = np.asarray(xi, dtype=float)
        return np.zeros(xi.shape + (xi.shape[-1],))


class SphereCapPhase(Phase):
    """Upper sphere cap φ(ξ) = √(ρ² − |ξ − c|²)."""

    def __init__(self, center: Sequence[float], radius: float = 1.0):
        """Stores the center c and radius ρ."""
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def value(self, xi: np.ndarray) -> np.ndarray:
        """Evaluates √(ρ² − |ξ − c|²)."""
        d = np.asarray(xi, dtype=float) - self.center
        return np.sqrt(self.radius**2 - np.sum(d * d, axis=-1))

    def gradient(self, xi: np.ndarray) -> np.ndarray:
        """Evaluates −(ξ − c)/φ."""
        d = np.asarray(xi, dtype=float) - self.center
        return -d / self.value(xi)[..., None]

    def hessian(self, xi: np.ndarray) -> np.ndarray:
        """Evaluates −(I/φ + (ξ − c)(ξ − c)ᵀ/φ³)."""
        d = np.asarray(xi, dtype=float) - self.center
        phi = self.value(xi)[..., None, None]
        eye = np.eye(d.shape[-1])
        return -(eye / phi + d[..., :, None] * d[..., None, :] / phi**3)


class ParaboloidPhase(Phase):
    """φ(ξ) = ½ a |ξ − c|² + b."""

    def __init__(self, center: Sequence[float], curvature: float = 1.0, offset: float = 0.0):
        """Stores the center c, curvature a and offset b."""
        self.center = np.asarray(center, dtype=float)
        self.curvature = float(curvature)
        self.offset = float(offset)

    def value(self, xi: np.ndarray) -> np.ndarray:
        """Evaluates ½ a |ξ − c|² + b."""
        d = np.asarray(xi, dtype=float) - self.center
        return 0.5 * self.curvature * np.sum(d * d, axis=-1) + self.offset

    def gradient(self, xi: np.ndarray) -> np.ndarray:
        """Evaluates a (ξ − c)."""
        return self.curvature * (np.asarray(xi, dtype=float) - self.center)

    def hessian(self, xi: np.ndarray) -> np.ndarray:
        """Constant Hessian a I."""
        xi = np.asarray(xi, dtype=float)
        n = xi.shape[-1]
        return np.broadcast_to(self.curvature * np.eye(n), xi.shape + (n,)).copy()


class DoubleConePhase(Phase):
    """Double-cone model ζ_{n+1} + ζ_n = |(ζ_1, ..., ζ_{n-1})|, graphed as φ = |ξ'| − ξ_n."""

    def value(self, xi: np.ndarray) -> np.ndarray:
        """Evaluates |ξ'| − ξ_n."""
        xi = np.asarray(xi, dtype=float)
        return np.linalg.norm(xi[..., :-1], axis=-1) - xi[..., -1]

    def gradient(self, xi: np.ndarray) -> np.ndarray:
        """Evaluates (ξ'/|ξ'|, −1)."""
        xi = np.asarray(xi, dtype=float)
        radial = xi[..., :-1]
        rho = np.linalg.norm(radial, axis=-1)[..., None]
        return np.concatenate([radial / rho, -np.ones(xi.shape[:-1] + (1,))], axis=-1)

    def hessian(self, xi: np.ndarray) -> np.ndarray:
        """Hessian of |ξ'|, padded with a zero row and column for ξ_n."""
        xi = np.asarray(xi, dtype=float)
        n = xi.shape[-1]
        radial = xi[..., :-1]
        rho = np.linalg.norm(radial, axis=-1)[..., None, None]
        block = np.eye(n - 1) / rho - radial[..., :, None] * radial[..., None, :] / rho**3
        out = np.zeros(xi.shape + (n,))
        out[..., : n - 1, : n - 1] = block
        return out


class CylinderPhase(Phase):
    """Cylinder ζ_1² + ... + ζ_{n-1}² = 1 graphed over the remaining coordinates.

    The frequency variables are (ζ_1, ..., ζ_{n-2}, ζ_n, ζ_{n+1}); the graphed coordinate is
    ζ_{n-1} = √(1 − ζ_1² − ... − ζ_{n-2}²), independent of the last two variables.
    """

    def value(self, xi: np.ndarray) -> np.ndarray:
        """Evaluates √(1 − ζ_1² − ... − ζ_{n-2}²)."""
        a = np.asarray(xi, dtype=float)[..., :-2]
        return np.sqrt(1.0 - np.sum(a * a, axis=-1))

    def gradient(self, xi: np.ndarray) -> np.ndarray:
        """Gradient, zero in the last two variables."""
        xi = np.asarray(xi, dtype=float)
        out = np.zeros_like(xi)
        out[..., :-2] = -xi[..., :-2] / self.value(xi)[..., None]
        return out

    def hessian(self, xi: np.ndarray) -> np.ndarray:
        """Hessian, zero in the last two rows and columns."""
        xi = np.asarray(xi, dtype=float)
        n = xi.shape[-1]
        a = xi[..., :-2]
        phi = self.value(xi)[..., None, None]
        block = -(np.eye(n - 2) / phi + a[..., :, None] * a[..., None, :] / phi**3)
        out = np.zeros(xi.shape + (n,))
        out[..., : n - 2, : n - 2] = block
        return out


class LeafChart(ABC):
    """Bijection 𝐱: U → Ũ whose last n-2 coordinates label the leaves."""

    @abstractmethod
    def forward(self, xi: np.ndarray) -> np.ndarray:
        """Maps frequency points to chart coordinates."""

    @abstractmethod
    def inverse(self, x: np.ndarray) -> np.ndarray:
        """Maps chart coordinates back to frequency points."""


class IdentityChart(LeafChart):
    """Leaves are the planes spanned by the first two frequency coordinates."""

    def forward(self, xi: np.ndarray) -> np.ndarray:
        """Returns a copy of `xi`."""
        return np.array(xi, dtype=float)

    def inverse(self, x: np.ndarray) -> np.ndarray:
        """Returns a copy of `x`."""
        return np.array(x, dtype=float)


class PermutationChart(LeafChart):
    """Reorders coordinates so the two free (leaf) directions come first."""

    def __init__(self, order: Sequence[int]):
        """Stores the coordinate order and its inverse."""
        self.order = np.asarray(order, dtype=int)
        self.inverse_order = np.argsort(self.order)

    def forward(self, xi: np.ndarray) -> np.ndarray:
        """Permutes coordinates into chart order."""
        return np.asarray(xi, dtype=float)[..., self.order]

    def inverse(self, x: np.ndarray) -> np.ndarray:
        """Undoes the permutation."""
        return np.asarray(x, dtype=float)[..., self.inverse_order]


class GnomonicConeChart(LeafChart):
    """Chart (|ξ'|, ξ_n, ξ_2/ξ_1, ..., ξ_{n-1}/ξ_1) of the double cone, valid for ξ_1 > 0."""

    def forward(self, xi: np.ndarray) -> np.ndarray:
        """Maps ξ to (|ξ'|, ξ_n, ξ_2/ξ_1, ..., ξ_{n-1}/ξ_1)."""
        xi = np.asarray(xi, dtype=float)
        radial = xi[..., :-1]
        rho = np.linalg.norm(radial, axis=-1)[..., None]
        angles = radial[..., 1:] / radial[..., :1]
        return np.concatenate([rho, xi[..., -1:], angles], axis=-1)

    def inverse(self, x: np.ndarray) -> np.ndarray:
        """Recovers ξ from its gnomonic coordinates."""
        x = np.asarray(x, dtype=float)
        rho = x[..., :1]
        angles = x[..., 2:]
        direction = np.concatenate([np.ones(x.shape[:-1] + (1,)), angles], axis=-1)
        direction = direction / np.sqrt(1.0 + np.sum(angles * angles, axis=-1))[..., None]
        return np.concatenate([rho * direction, x[..., 1:2]], axis=-1)


def _cone_predicate(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return (xi[..., 0] > 1e-6) & (np.linalg.norm(xi[..., :-1], axis=-1) > 1e-6)


@dataclass(frozen=True, eq=False)
class HypersurfacePatch:
    """Graph-type hypersurface patch in R^{n+1}.

    Attributes:
        n: Ambient dimension minus one.
        graph_axis: Ambient index carrying φ(ξ) before rotation.
        phase: The phase φ.
        box: Array of shape (n, 2) with the lower and upper corner of U.
        predicate: Optional vectorized membership test refining the box.
        leaf_chart: Optional foliation chart.
        rotation: Optional orthogonal matrix applied to the embedded graph.
        name: Label used in reports.
    """

    n: int
    graph_axis: int
    phase: Phase
    box: np.ndarray
    predicate: Optional[Callable[[np.ndarray], np.ndarray]] = None
    leaf_chart: Optional[LeafChart] = None
    rotation: Optional[np.ndarray] = None
    name: str = "patch"

    def __post_init__(self):
        """Validates the box, graph axis and rotation."""
        box = np.array(self.box, dtype=float)
        if box.shape != (self.n, 2):
            raise GeometryError(f"box must have shape ({self.n}, 2), got {box.shape}")
        if np.any(box[:, 1] <= box[:, 0]):
            raise GeometryError(f"box of {self.name} has nonpositive volume")
        if not 0 <= self.graph_axis <= self.n:
            raise GeometryError(f"graph_axis {self.graph_axis} outside 0..{self.n}")
        box.setflags(write=False)
        object.__setattr__(self, "box", box)
        if self.rotation is not None:
            rotation = np.array(self.rotation, dtype=float)
            dim = self.n + 1
            if rotation.shape != (dim, dim):
                raise GeometryError(f"rotation must be {dim}x{dim}, got {rotation.shape}")
            if not np.allclose(rotation.T @ rotation, np.eye(dim), atol=1e-10):
                raise GeometryError(f"rotation of {self.name} is not orthogonal")
            rotation.setflags(write=False)
            object.__setattr__(self, "rotation", rotation)

    @classmethod
    def hyperplane(
        cls,
        n: int,
        slope: Optional[Sequence[float]] = None,
        center: Optional[Sequence[float]] = None,
        half_width: float = 0.5,
        graph_axis: Optional[int] = None,
        rotation: Optional[np.ndarray] = None,
    ) -> "HypersurfacePatch":
        """Flat patch; its trivial foliation is declared through the identity chart."""
        center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        slope = np.zeros(n) if slope is None else np.asarray(slope, dtype=float)
        return cls(
            n=n,
            graph_axis=n if graph_axis is None else graph_axis,
            phase=HyperplanePhase(slope),
            box=_box_around(center, half_width),
            leaf_chart=IdentityChart(),
            rotation=rotation,
            name="hyperplane",
        )

    @classmethod
    def sphere_cap(
        cls,
        n: int,
        center: Optional[Sequence[float]] = None,
        half_width: float = 0.1,
        radius: float = 1.0,
        graph_axis: Optional[int] = None,
        rotation: Optional[np.ndarray] = None,
        declare_foliation: bool = False,
    ) -> "HypersurfacePatch":
        """Cap of the sphere of `radius` around the origin, graphed over {ζ_axis = 0}."""
        center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        phase = SphereCapPhase(np.zeros(n), radius)
        box = _box_around(center, half_width)
        if np.sum(np.max(np.abs(box), axis=1) ** 2) >= radius**2:
            raise GeometryError("sphere cap box reaches the equator of the sphere")
        return cls(
            n=n,
            graph_axis=n if graph_axis is None else graph_axis,
            phase=phase,
            box=box,
            leaf_chart=IdentityChart() if declare_foliation else None,
            rotation=rotation,
            name="sphere_cap",
        )

    @classmethod
    def paraboloid(
        cls,
        n: int,
        center: Optional[Sequence[float]] = None,
        half_width: float = 0.5,
        curvature: float = 1.0,
        rotation: Optional[np.ndarray] = None,
        declare_foliation: bool = False,
    ) -> "HypersurfacePatch":
        """Paraboloid φ = ½ a |ξ − c|² on the cube of half width `half_width` around c."""
        center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        return cls(
            n=n,
            graph_axis=n,
            phase=ParaboloidPhase(center, curvature),
            box=_box_around(center, half_width),
            leaf_chart=IdentityChart() if declare_foliation else None,
            rotation=rotation,
            name="paraboloid",
        )

    @classmethod
    def double_cone(
        cls,
        n: int,
        center: Optional[Sequence[float]] = None,
        half_width: float = 0.1,
        rotation: Optional[np.ndarray] = None,
    ) -> "HypersurfacePatch":
        """Double-cone model around `center`, by default (1, 0, ..., 0)."""
        if n < 2:
            raise GeometryError(f"double cone needs n >= 2, got {n}")
        if center is None:
            center = np.zeros(n)
            center[0] = 1.0
        center = np.asarray(center, dtype=float)
        box = _box_around(center, half_width)
        if box[0, 0] <= 0:
            raise GeometryError("double cone box must stay in ξ_1 > 0, away from the apex")
        return cls(
            n=n,
            graph_axis=n,
            phase=DoubleConePhase(),
            box=box,
            predicate=_cone_predicate,
            leaf_chart=GnomonicConeChart(),
            rotation=rotation,
            name="double_cone",
        )

    @classmethod
    def cylinder(
        cls,
        n: int,
        center: Optional[Sequence[float]] = None,
        half_width: float = 0.1,
        rotation: Optional[np.ndarray] = None,
    ) -> "HypersurfacePatch":
        """Cylinder ζ_1² + ... + ζ_{n-1}² = 1 with free (ζ_n, ζ_{n+1})."""
        if n < 2:
            raise GeometryError(f"cylinder needs n >= 2, got {n}")
        center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        order = [n - 2, n - 1] + list(range(n - 2))
        return cls(
            n=n,
            graph_axis=n - 2,
            phase=CylinderPhase(),
            box=_box_around(center, half_width),
            leaf_chart=PermutationChart(order),
            rotation=rotation,
            name="cylinder",
        )

    @property
    def dim(self) -> int:
        """Ambient dimension n+1."""
        return self.n + 1

    @property
    def center(self) -> np.ndarray:
        """Center of the parameter box."""
        return self.box.mean(axis=1)

    def contains(self, xi: np.ndarray) -> np.ndarray:
        """Vectorized membership in U."""
        xi = np.asarray(xi, dtype=float)
        inside = np.all((xi >= self.box[:, 0]) & (xi <= self.box[:, 1]), axis=-1)
        if self.predicate is not None:
            inside = inside & self.predicate(xi)
        return inside

    def require_inside(self, xi: np.ndarray) -> np.ndarray:
        """Returns `xi` as an array; raises GeometryError if any point leaves U."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.n:
            raise GeometryError(f"point has dimension {xi.shape[-1]}, expected {self.n}")
        if not np.all(self.contains(xi)):
            raise GeometryError(f"point {xi.tolist()} outside the domain of {self.name}")
        return xi

    def rotated(self, rotation: np.ndarray) -> "HypersurfacePatch":
        """Returns the patch with `rotation` applied after its own rotation."""
        rotation = np.asarray(rotation, dtype=float)
        combined = rotation if self.rotation is None else rotation @ self.rotation
        return replace(self, rotation=combined)

    def to_ambient(self, local: np.ndarray) -> np.ndarray:
        """Rotates vectors given in graph coordinates, shape (..., n+1)."""
        if self.rotation is None:
            return np.asarray(local, dtype=float)
        return np.asarray(local) @ self.rotation.T

    def to_local(self, ambient: np.ndarray) -> np.ndarray:
        """Inverse of `to_ambient`."""
        if self.rotation is None:
            return np.asarray(ambient, dtype=float)
        return np.asarray(ambient) @ self.rotation

    def embed(self, xi: np.ndarray) -> np.ndarray:
        """Σ(ξ) in ambient coordinates, shape (..., n+1)."""
        xi = np.asarray(xi, dtype=float)
        local = np.insert(xi, self.graph_axis, self.phase.value(xi), axis=-1)
        return self.to_ambient(local)

    def leaf_of(self, xi: np.ndarray) -> np.ndarray:
        """Leaf identifier π(𝐱(ξ)) of each point."""
        chart = self._require_chart()
        return chart.forward(xi)[..., 2:]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draws `count` domain points by rejection from fixed-size uniform batches.

        Args:
            count: Number of points.
            rng: Generator consumed in whole batches, so a longer draw extends a shorter one.

        Returns:
            np.ndarray: Points of shape (count, n).
        """
        if count < 1:
            raise GeometryError(f"sample count must be positive, got {count}")
        accepted: List[np.ndarray] = []
        total = 0
        for _ in range(MAX_SAMPLE_BATCHES):
            if total >= count:
                break
            batch = rng.uniform(self.box[:, 0], self.box[:, 1], size=(SAMPLE_BATCH, self.n))
            batch = batch[self.contains(batch)]
            accepted.append(batch)
            total += len(batch)
        if total < count:
            raise GeometryError(f"domain of {self.name} rejects almost every sample")
        return np.concatenate(accepted)[:count]

    def _require_chart(self) -> LeafChart:
        if self.leaf_chart is None:
            raise GeometryError(f"{self.name} has no leaf_chart")
        return self.leaf_chart


def _box_around(center: np.ndarray, half_width: float) -> np.ndarray:
    if half_width <= 0:
        raise GeometryError(f"half_width must be positive, got {half_width}")
    return np.stack([center - half_width, center + half_width], axis=1)


def _rng(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, index)))


def gram_volume(vectors: Sequence[Sequence[float]]) -> float:
    """Volume of the parallelepiped spanned by `vectors`.

    Args:
        vectors: m vectors of a common dimension d with 1 <= m <= d.

    Returns:
        float: √det(A Aᵀ) for the matrix A whose rows are the vectors.
    """
    if len(vectors) == 0:
        raise GeometryError("gram_volume needs at least one vector")
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        raise GeometryError(f"vectors have mismatched dimensions {sorted(dims)}")
    matrix = np.asarray(vectors, dtype=float)
    if matrix.shape[0] > matrix.shape[1]:
        raise GeometryError(
            f"{matrix.shape[0]} vectors exceed the dimension {matrix.shape[1]}"
        )
    return float(gram_volumes(matrix))


def gram_volumes(stacks: np.ndarray) -> np.ndarray:
    """Batched gram_volume over arrays of shape (..., m, d)."""
    stacks = np.asarray(stacks, dtype=float)
    gram = stacks @ np.swapaxes(stacks, -1, -2)
    return np.sqrt(np.maximum(np.linalg.det(gram), 0.0))


def _normals_local(patch: HypersurfacePatch, xi: np.ndarray) -> np.ndarray:
    grad = patch.phase.gradient(xi)
    local = np.insert(-grad, patch.graph_axis, 1.0, axis=-1)
    return local / np.linalg.norm(local, axis=-1, keepdims=True)


def unit_normals(patch: HypersurfacePatch, xi: np.ndarray) -> np.ndarray:
    """Vectorized unit normals for domain points of shape (..., n)."""
    return patch.to_ambient(_normals_local(patch, np.asarray(xi, dtype=float)))


def unit_normal(patch: HypersurfacePatch, xi: Sequence[float]) -> np.ndarray:
    """Unit normal (−∇φ, 1)/√(1+|∇φ|²), with the 1 in the graph slot, rotated to ambient.

    Args:
        patch: The patch.
        xi: A point of U.

    Returns:
        np.ndarray: Unit vector in R^{n+1}.
    """
    xi = patch.require_inside(xi)
    return unit_normals(patch, xi)


def _tangent_frame(patch: HypersurfacePatch, xi: np.ndarray) -> np.ndarray:
    """Columns ∂_j Σ(ξ) in ambient coordinates, shape (n+1, n)."""
    grad = patch.phase.gradient(xi)
    frame = np.insert(np.eye(patch.n), patch.graph_axis, grad, axis=0)
    return patch.to_ambient(frame.T).T


@dataclass(frozen=True, eq=False)
class ShapeOperator:
    """Weingarten map of a patch at one point.

    Attributes:
        eigenvalues: Principal curvatures sorted by magnitude.
        eigenvectors: Matching unit principal directions as ambient columns, shape (n+1, n).
        weingarten: Matrix of the map in graph parameters, G⁻¹B.
        frame: Tangent frame ∂_j Σ as ambient columns.
        metric: First fundamental form G.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    weingarten: np.ndarray
    frame: np.ndarray
    metric: np.ndarray

    def apply(self, vectors: np.ndarray) -> np.ndarray:
        """Applies S to ambient tangent vectors, given as rows; returns rows."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        params = np.linalg.solve(self.metric, self.frame.T @ vectors.T)
        return (self.frame @ (self.weingarten @ params)).T


def shape_operator(patch: HypersurfacePatch, xi: Sequence[float]) -> ShapeOperator:
    """Assembles the Weingarten map from the first and second fundamental forms.

    The second fundamental form of a graph is Hess φ / √(1+|∇φ|²) and the metric is
    I + ∇φ∇φᵀ; principal curvatures solve the symmetric generalized eigenproblem B w = λ G w.

    Args:
        patch: The patch.
        xi: A point of U.

    Returns:
        ShapeOperator: Eigen-decomposition plus the data needed to apply the map.
    """
    xi = patch.require_inside(xi)
    grad = patch.phase.gradient(xi)
    metric = np.eye(patch.n) + np.outer(grad, grad)
    second = patch.phase.hessian(xi) / np.sqrt(1.0 + grad @ grad)
    try:
        values, vectors = scipy.linalg.eigh(second, metric)
    except np.linalg.LinAlgError as e:
        raise InvariantViolation(f"degenerate metric at {xi.tolist()}: {e}")
    order = np.argsort(np.abs(values), kind="stable")
    frame = _tangent_frame(patch, xi)
    return ShapeOperator(
        eigenvalues=values[order],
        eigenvectors=frame @ vectors[:, order],
        weingarten=np.linalg.solve(metric, second),
        frame=frame,
        metric=metric,
    )


def leaf_tangents(patch: HypersurfacePatch, xi: np.ndarray) -> np.ndarray:
    """Unit pushforwards of the first two chart directions, as rows of shape (2, n+1)."""
    chart = patch._require_chart()
    x = chart.forward(xi)
    frame = _tangent_frame(patch, xi)
    rows = []
    for axis in (0, 1):
        step = 1e-6 * max(1.0, abs(x[axis]))
        offset = np.zeros_like(x)
        offset[axis] = step
        dxi = (chart.inverse(x + offset) - chart.inverse(x - offset)) / (2 * step)
        tangent = frame @ dxi
        rows.append(tangent / np.linalg.norm(tangent))
    return np.array(rows)


def _leaf_step(patch: HypersurfacePatch) -> float:
    return 0.05 * float(np.min(patch.box[:, 1] - patch.box[:, 0]))


@dataclass(frozen=True)
class FlatnessReport:
    """Outcome of check_foliation_flatness."""

    leaf_flatness_max: float
    normal_variation_max: float
    sample_count: int
    seed: int

    @property
    def flagged(self) -> bool:
        """Whether either flatness measure exceeds the flag threshold."""
        return max(self.leaf_flatness_max, self.normal_variation_max) > FLATNESS_FLAG_THRESHOLD


def check_foliation_flatness(
    patch: HypersurfacePatch, sample_count: int, seed: int, index: int = 0
) -> FlatnessReport:
    """Measures how far the declared leaves are from flat, normal-constant submanifolds.

    Args:
        patch: A patch with a leaf_chart.
        sample_count: Number of sampled points.
        seed: Root seed.
        index: Stream index, so several patches sampled under one seed stay independent.

    Returns:
        FlatnessReport: max |S_N v| over leaf tangents v and max normal change along leaf
            segments.
    """
    chart = patch._require_chart()
    points = patch.sample(sample_count, _rng(seed, _SAMPLE_FLATNESS, index))
    flatness = 0.0
    variation = 0.0
    step = _leaf_step(patch)
    for xi in points:
        shape = shape_operator(patch, xi)
        tangents = leaf_tangents(patch, xi)
        flatness = max(flatness, float(np.max(np.linalg.norm(shape.apply(tangents), axis=1))))
        x = chart.forward(xi)
        normal = unit_normals(patch, xi)
        for axis in (0, 1):
            moved = x.copy()
            moved[axis] += step
            other = chart.inverse(moved)
            if patch.contains(other):
                variation = max(
                    variation, float(np.linalg.norm(unit_normals(patch, other) - normal))
                )
    report = FlatnessReport(flatness, variation, sample_count, seed)
    if report.flagged:
        logger.warning(
            f"{patch.name}: declared leaves are not flat "
            f"(max |S_N v| = {flatness:.3e}, normal variation {variation:.3e})"
        )
    return report


def _leaf_complement(patch: HypersurfacePatch, xi: np.ndarray, shape: ShapeOperator):
    """Orthonormal basis v_4, ..., v_{n+1} of the leaf-tangent complement, as rows."""
    leaf = scipy.linalg.orth(leaf_tangents(patch, xi).T)
    tangent = shape.eigenvectors
    projected = tangent - leaf @ (leaf.T @ tangent)
    basis = scipy.linalg.orth(projected, rcond=1e-8)
    return basis[:, : patch.n - 2].T


@dataclass(frozen=True)
class ConditionReport:
    """Sampled lower estimates of the transversality and curvature conditions."""

    nu_transversal: float
    nu_curvature: Optional[float]
    leaf_flatness_max: Optional[float]
    gl_constant: Optional[float]
    dispersion_ratio_range: Optional[Tuple[float, float]]
    sample_count: int
    seed: int


def _check_triple(patches: Sequence[HypersurfacePatch]) -> None:
    if len(patches) < 3:
        raise GeometryError(f"need 3 patches, got {len(patches)}")
    dims = {p.dim for p in patches[:3]}
    if len(dims) != 1:
        raise GeometryError(f"patches live in different dimensions {sorted(dims)}")


def estimate_transversality(
    patches: Sequence[HypersurfacePatch], sample_count: int, seed: int
) -> ConditionReport:
    """Monte Carlo minima of the 3-normal volume and of the curvature volume.

    Sample s pairs the s-th point of every patch, so enlarging `sample_count` keeps all
    earlier samples and the minima can only decrease.

    Args:
        patches: At least three patches; the first three are used.
        sample_count: Number of sampled triples.
        seed: Root seed.

    Returns:
        ConditionReport: All sampled quantities; curvature, flatness, GL and dispersion
            fields are None when a needed leaf_chart is missing.
    """
    _check_triple(patches)
    triple = list(patches[:3])
    points = [p.sample(sample_count, _rng(seed, _SAMPLE_POINTS, i)) for i, p in enumerate(triple)]
    normals = [unit_normals(p, pts) for p, pts in zip(triple, points)]
    stacks = np.stack(normals, axis=1)
    nu_transversal = float(np.min(gram_volumes(stacks)))

    foliated = all(p.leaf_chart is not None for p in triple)
    nu_curvature = None
    flatness = None
    dispersion = None
    if foliated:
        nu_curvature = _curvature_minimum(triple, points, normals)
        flatness = max(
            check_foliation_flatness(p, sample_count, seed, i).leaf_flatness_max
            for i, p in enumerate(triple)
        )
        if triple[0].n >= 3:
            ranges = [
                normal_dispersion_ratio(p, sample_count, seed, i) for i, p in enumerate(triple)
            ]
            dispersion = (min(r[0] for r in ranges), max(r[1] for r in ranges))
    else:
        logger.info("curvature volume skipped: not every patch declares a leaf_chart")
    kappa = None
    if triple[0].leaf_chart is not None:
        kappa = gl_constant(triple, 0, sample_count, seed)
    report = ConditionReport(
        nu_transversal=nu_transversal,
        nu_curvature=nu_curvature,
        leaf_flatness_max=flatness,
        gl_constant=kappa,
        dispersion_ratio_range=dispersion,
        sample_count=sample_count,
        seed=seed,
    )
    logger.info(f"transversality report: {report}")
    return report


def _curvature_minimum(
    triple: List[HypersurfacePatch], points: List[np.ndarray], normals: List[np.ndarray]
) -> float:
    best = np.inf
    for s in range(len(points[0])):
        base = [normals[i][s] for i in range(3)]
        for patch, pts in zip(triple, points):
            xi = pts[s]
            shape = shape_operator(patch, xi)
            complement = _leaf_complement(patch, xi, shape)
            curved = shape.apply(complement) if len(complement) else np.zeros((0, patch.dim))
            volume = abs(float(np.linalg.det(np.vstack([base, curved]))))
            best = min(best, volume)
    return float(best)


def gl_constant(
    patches: Sequence[HypersurfacePatch], pivot: int, sample_count: int, seed: int
) -> float:
    """Sampled constant of the dspan transversality bound.

    For each sample, two pivot normals N_α, N_β are combined with coefficients drawn from
    [−1, 1]², and additionally with the coefficient direction minimizing the ratio, which
    is the limit of dense coefficient sampling since the ratio is homogeneous.

    Args:
        patches: At least three patches.
        pivot: Index of the patch whose dspan is sampled.
        sample_count: Number of sampled configurations.
        seed: Root seed.

    Returns:
        float: min vol(N, N₂, N₃)/|N| over the samples.
    """
    _check_triple(patches)
    if not 0 <= pivot < 3:
        raise GeometryError(f"pivot {pivot} is not one of 0, 1, 2")
    triple = list(patches[:3])
    pivot_patch = triple[pivot]
    pivot_patch._require_chart()
    others = [p for i, p in enumerate(triple) if i != pivot]

    alpha_points = pivot_patch.sample(sample_count, _rng(seed, _SAMPLE_DSPAN, 0))
    beta_points = pivot_patch.sample(sample_count, _rng(seed, _SAMPLE_DSPAN, 1))
    second = others[0].sample(sample_count, _rng(seed, _SAMPLE_DSPAN, 2))
    third = others[1].sample(sample_count, _rng(seed, _SAMPLE_DSPAN, 3))
    coefficients = _rng(seed, _SAMPLE_COEFFICIENTS).uniform(-1.0, 1.0, size=(sample_count, 5))

    n_alpha = unit_normals(pivot_patch, alpha_points)
    n_beta = unit_normals(pivot_patch, beta_points)
    n_two = unit_normals(others[0], second)
    n_three = unit_normals(others[1], third)

    kappa = np.inf
    for s in range(sample_count):
        pair = np.stack([n_alpha[s], n_beta[s]], axis=1)
        candidates = [coefficients[s, :2]]
        minimizer = _minimizing_direction(pair, n_two[s], n_three[s])
        if minimizer is not None:
            candidates.append(minimizer)
        for ab in candidates:
            combined = pair @ ab
            size = np.linalg.norm(combined)
            if size < DSPAN_MIN_NORM:
                continue
            ratio = gram_volume([combined / size, n_two[s], n_three[s]])
            kappa = min(kappa, ratio)
    if not np.isfinite(kappa):
        raise GeometryError("every dspan sample degenerated to |N| < 1e-9")

    _verify_gl_inequality(float(kappa), n_alpha, n_beta, n_two, n_three, coefficients)
    if kappa < GL_DEGENERATE_THRESHOLD:
        logger.warning(f"gl_constant {kappa:.3e} below {GL_DEGENERATE_THRESHOLD}: degenerate")
    return float(kappa)


def _minimizing_direction(
    pair: np.ndarray, second: np.ndarray, third: np.ndarray
) -> Optional[np.ndarray]:
    """Coefficients (a, b) minimizing |P(a N_α + b N_β)| / |a N_α + b N_β|.

    P projects onto the orthogonal complement of span(N₂, N₃).
    """
    span = scipy.linalg.orth(np.stack([second, third], axis=1))
    projected = pair - span @ (span.T @ pair)
    gram = pair.T @ pair
    if np.linalg.matrix_rank(gram, tol=1e-12) < 2:
        return None
    _, vectors = scipy.linalg.eigh(projected.T @ projected, gram)
    direction = vectors[:, 0]
    return direction / np.max(np.abs(direction))


def _verify_gl_inequality(
    kappa: float,
    n_alpha: np.ndarray,
    n_beta: np.ndarray,
    n_two: np.ndarray,
    n_three: np.ndarray,
    coefficients: np.ndarray,
) -> None:
    # coefficients[:, 2:] are the (a, b, c) of the norm inequality
    combined = coefficients[:, :1] * n_alpha + coefficients[:, 1:2] * n_beta
    a, b, c = coefficients[:, 2], coefficients[:, 3], coefficients[:, 4]
    lhs = np.linalg.norm(a[:, None] * combined + b[:, None] * n_two + c[:, None] * n_three, axis=1)
    scale = np.maximum.reduce([np.abs(a) * np.linalg.norm(combined, axis=1), np.abs(b), np.abs(c)])
    failures = lhs < kappa * scale / 4 - 1e-12
    if np.any(failures):
        raise InvariantViolation(
            f"|aN + bN2 + cN3| >= kappa max(...)/4 fails on {int(np.sum(failures))} samples"
        )


def dispersion_ratio(
    patch: HypersurfacePatch, xi1: Sequence[float], xi2: Sequence[float]
) -> Optional[float]:
    """|N(ξ₁) − N(ξ₂)| over the chart distance of their leaves; None on a common leaf."""
    xi1 = patch.require_inside(xi1)
    xi2 = patch.require_inside(xi2)
    distance = float(np.linalg.norm(patch.leaf_of(xi1) - patch.leaf_of(xi2)))
    if distance < 1e-12:
        return None
    return float(np.linalg.norm(unit_normals(patch, xi1) - unit_normals(patch, xi2)) / distance)


def normal_dispersion_ratio(
    patch: HypersurfacePatch, sample_count: int, seed: int, index: int = 0
) -> Tuple[float, float]:
    """Range of the normal dispersion ratio over sampled pairs on distinct leaves.

    Args:
        patch: A patch with a leaf_chart.
        sample_count: Number of sampled pairs.
        seed: Root seed.
        index: Stream index.

    Returns:
        Tuple[float, float]: (min_ratio, max_ratio).
    """
    patch._require_chart()
    first = patch.sample(sample_count, _rng(seed, _SAMPLE_LEAF_PAIRS, 2 * index))
    second = patch.sample(sample_count, _rng(seed, _SAMPLE_LEAF_PAIRS, 2 * index + 1))
    distances = np.linalg.norm(patch.leaf_of(first) - patch.leaf_of(second), axis=-1)
    keep = distances >= 1e-12
    if not np.any(keep):
        raise GeometryError(f"{patch.name}: every sampled pair shares a leaf")
    skipped = int(np.sum(~keep))
    if skipped:
        logger.debug(f"{patch.name}: skipped {skipped} same-leaf pairs")
    jumps = np.linalg.norm(unit_normals(patch, first) - unit_normals(patch, second), axis=-1)
    ratios = jumps[keep] / distances[keep]
    low, high = float(np.min(ratios)), float(np.max(ratios))
    if low <= 0.0:
        logger.warning(f"{patch.name}: normal map is non-dispersive (min ratio {low})")
    return low, high


def gradient_consistency(patch: HypersurfacePatch, sample_count: int, seed: int) -> float:
    """Max relative error of ∇φ against central finite differences at sampled points."""
    points = patch.sample(sample_count, _rng(seed, _SAMPLE_CHECKS, 0))
    step = 1e-5 * float(np.min(patch.box[:, 1] - patch.box[:, 0]))
    worst = 0.0
    for xi in points:
        exact = patch.phase.gradient(xi)
        offsets = step * np.eye(patch.n)
        numeric = (patch.phase.value(xi + offsets) - patch.phase.value(xi - offsets)) / (2 * step)
        scale = max(1.0, float(np.linalg.norm(exact)))
        worst = max(worst, float(np.linalg.norm(numeric - exact)) / scale)
    return worst


def chart_roundtrip_error(patch: HypersurfacePatch, sample_count: int, seed: int) -> float:
    """Max |𝐱⁻¹(𝐱(ξ)) − ξ| at sampled points."""
    chart = patch._require_chart()
    points = patch.sample(sample_count, _rng(seed, _SAMPLE_CHECKS, 1))
    return float(np.max(np.abs(chart.inverse(chart.forward(points)) - points)))


def frame_rotation(sources: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Orthogonal matrix sending each orthonormal source row to the matching target row.

    Both frames are completed to orthonormal bases by QR; the completions are paired in
    order.
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if sources.shape != targets.shape:
        raise GeometryError(f"frame shapes differ: {sources.shape} vs {targets.shape}")
    dim = sources.shape[1]
    return _complete_frame(targets, dim) @ _complete_frame(sources, dim).T


def _complete_frame(rows: np.ndarray, dim: int) -> np.ndarray:
    if not np.allclose(rows @ rows.T, np.eye(len(rows)), atol=1e-10):
        raise GeometryError("frame vectors are not orthonormal")
    q, _ = np.linalg.qr(np.hstack([rows.T, np.eye(dim)]))
    signs = np.sign(np.sum(q[:, : len(rows)] * rows.T, axis=0))
    q[:, : len(rows)] *= signs
    return q


def double_cone_triple(
    n: int, half_width: float = 0.1, violating: bool = False
) -> List[HypersurfacePatch]:
    """Three rotated double-cone patches positioned transversally.

    Patch i sends its central normal to e_i and its angular curvature directions to
    e_3, ..., e_n, so the curvature volume stays away from zero. In the violating variant
    the second surface is flat with normal e_3, which lies in dspan of the first patch's
    normals.
    """
    if n < 3:
        raise GeometryError(f"the standard double-cone triple needs n >= 3, got {n}")
    dim = n + 1
    reference = HypersurfacePatch.double_cone(n, half_width=half_width)
    normal = unit_normals(reference, reference.center)
    angular = np.eye(dim)[1 : n - 1]
    identity = np.eye(dim)
    patches = []
    for i in range(3):
        if violating and i == 1:
            rotation = frame_rotation(identity[n : n + 1], identity[3:4])
            patch = HypersurfacePatch.hyperplane(n, half_width=half_width, rotation=rotation)
            patches.append(replace(patch, name="flat_in_dspan"))
            continue
        rotation = frame_rotation(
            np.vstack([normal, angular]), np.vstack([identity[i], identity[3:dim]])
        )
        patch = HypersurfacePatch.double_cone(n, half_width=half_width, rotation=rotation)
        patches.append(replace(patch, name=f"double_cone_{i + 1}"))
    return patches


_KINDS = ("sphere_cap", "paraboloid", "double_cone", "cylinder", "hyperplane")


@dataclass
class PatchDescriptor:
    """Declarative description of a patch, as read from configuration."""

    kind: str
    n: int
    center: Optional[List[float]] = None
    half_width: Optional[float] = None
    radius: float = 1.0
    curvature: float = 1.0
    slope: Optional[List[float]] = None
    graph_axis: Optional[int] = None
    rotation: Optional[List[float]] = None
    foliated: bool = False


def patch_from_descriptor(descriptor: PatchDescriptor) -> HypersurfacePatch:
    """Builds a patch from a configuration descriptor."""
    kind = descriptor.kind
    n = descriptor.n
    rotation = None
    if descriptor.rotation is not None:
        values = np.asarray(descriptor.rotation, dtype=float)
        if values.size != (n + 1) ** 2:
            raise GeometryError(f"rotation needs {(n + 1) ** 2} row-major entries")
        rotation = values.reshape(n + 1, n + 1)
    if descriptor.center is not None and len(descriptor.center) != n:
        raise GeometryError(f"center needs {n} entries, got {len(descriptor.center)}")
    width = descriptor.half_width
    if kind == "sphere_cap":
        return HypersurfacePatch.sphere_cap(
            n,
            descriptor.center,
            width or 0.1,
            descriptor.radius,
            descriptor.graph_axis,
            rotation,
            declare_foliation=descriptor.foliated,
        )
    if kind == "paraboloid":
        return HypersurfacePatch.paraboloid(
            n, descriptor.center, width or 0.5, descriptor.curvature, rotation, descriptor.foliated
        )
    if kind == "double_cone":
        return HypersurfacePatch.double_cone(n, descriptor.center, width or 0.1, rotation)
    if kind == "cylinder":
        return HypersurfacePatch.cylinder(n, descriptor.center, width or 0.1, rotation)
    if kind == "hyperplane":
        return HypersurfacePatch.hyperplane(
            n, descriptor.slope, descriptor.center, width or 0.5, descriptor.graph_axis, rotation
        )
    raise GeometryError(f"unknown patch kind {kind!r}, expected one of {', '.join(_KINDS)}")
