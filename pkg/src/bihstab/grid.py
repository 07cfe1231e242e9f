"""Half-space box geometry: node lattices, boundary partition, reflection, quadrature.

The computational domain is an axis-aligned box whose top face lies exactly in
the hyperplane {x_n = 0}; the rest of the space below is {x_n < 0}.  The top
face is the inaccessible boundary part Gamma0, everything else is the
accessible part Gamma.  Reflection across {x_n = 0} doubles the box, and the
doubled node lattice is symmetric under x_n -> -x_n node for node, which keeps
the reflection map exact (no interpolation anywhere).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Box",
    "Grid",
    "Face",
    "BoundaryPartition",
    "build_grid",
    "doubled_box",
    "reflect_index",
    "enclosing_radius",
]

#: smallest admissible node count per axis (one-sided 5-point stencils must fit)
MIN_NODES_PER_AXIS = 5


@dataclass(frozen=True)
class Box:
    """Axis-aligned node lattice with uniform spacing per axis."""

    extents: tuple[tuple[float, float], ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.extents) != len(self.counts):
            raise ValueError("extents and counts must have the same length")
        for (a, b), m in zip(self.extents, self.counts):
            if not b > a:
                raise ValueError(f"degenerate extent ({a}, {b})")
            if m < MIN_NODES_PER_AXIS:
                raise ValueError(
                    f"need at least {MIN_NODES_PER_AXIS} nodes per axis for the "
                    f"one-sided 5-point normal-derivative stencil, got {m}"
                )

    @property
    def n(self) -> int:
        return len(self.extents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.counts))

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(
            (b - a) / (m - 1) for (a, b), m in zip(self.extents, self.counts)
        )

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            np.linspace(a, b, m) for (a, b), m in zip(self.extents, self.counts)
        )

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    def meshgrid(self, sparse: bool = True) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij", sparse=sparse))

    def node_coords(self, idx: tuple[int, ...]) -> np.ndarray:
        return np.array([ax[i] for ax, i in zip(self.axes, idx)])

    def volume_weights(self) -> np.ndarray:
        """Trapezoid quadrature weights, shape ``counts``."""
        w = np.ones(1)
        for (a, b), m in zip(self.extents, self.counts):
            h = (b - a) / (m - 1)
            w1 = np.full(m, h)
            w1[0] = w1[-1] = h / 2
            w = np.multiply.outer(w, w1)
        return w.reshape(self.counts)

    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.counts, dtype=bool)
        for ax in range(self.n):
            sl_lo = [slice(None)] * self.n
            sl_hi = [slice(None)] * self.n
            sl_lo[ax] = 0
            sl_hi[ax] = -1
            mask[tuple(sl_lo)] = False
            mask[tuple(sl_hi)] = False
        return mask

    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask()

    def header(self, **extra) -> dict:
        """Structured-text header shared with the field file format."""
        out = {
            "dimension": self.n,
            "extents": [[float(a), float(b)] for a, b in self.extents],
            "counts": list(self.counts),
        }
        out.update(extra)
        return out


@dataclass(frozen=True)
class Face:
    """One face of the box boundary.

    ``indices`` is an (m, n) array of node multi-indices in C order and
    ``weights`` the matching tangential trapezoid weights (they sum to the
    face area exactly).
    """

    axis: int
    side: int  # 0 = lower end, 1 = upper end
    normal: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    @property
    def name(self) -> str:
        return f"{'+' if self.side else '-'}x{self.axis + 1}"


@dataclass(frozen=True)
class BoundaryPartition:
    """Boundary nodes split into the flat top Gamma0 and the accessible Gamma.

    The edge ring where the top face meets the side faces is assigned to
    Gamma; Gamma0 is the open interior of the top face.
    """

    faces: tuple[Face, ...]
    node_index: np.ndarray  # (b, n) multi-indices of all boundary nodes, C order
    gamma0_local: np.ndarray  # positions into node_index
    gamma_local: np.ndarray
    normals: np.ndarray  # (b, n) unit normal per node (primary face rule)
    node_weights: np.ndarray  # (b,) surface weight summed over incident faces
    metadata: dict = field(default_factory=dict)

    @property
    def n_boundary(self) -> int:
        return self.node_index.shape[0]


class Grid(Box):
    """Box with its top face pinned to {x_n = 0} plus boundary structure."""

    def __init__(self, extents, counts):
        object.__setattr__(self, "extents", tuple(tuple(map(float, e)) for e in extents))
        object.__setattr__(self, "counts", tuple(int(c) for c in counts))
        Box.__post_init__(self)
        a_n, b_n = self.extents[-1]
        if b_n != 0.0:
            raise ValueError(f"top face must lie at x_n = 0 exactly, got {b_n}")
        self._boundary: BoundaryPartition | None = None

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and self.extents == other.extents
            and self.counts == other.counts
        )

    def __hash__(self):
        return hash((self.extents, self.counts))

    def boundary(self) -> BoundaryPartition:
        if self._boundary is None:
            object.__setattr__(self, "_boundary", _build_boundary(self))
        return self._boundary

    def boundary_flat(self) -> np.ndarray:
        """Flat (raveled) node ids of the boundary nodes, C order."""
        bp = self.boundary()
        return np.ravel_multi_index(bp.node_index.T, self.counts)


def build_grid(extents, counts, n: int | None = None) -> Grid:
    """Build the half-space box grid.

    Parameters
    ----------
    extents : sequence of (a_i, b_i)
        Per-axis intervals; the last must end at 0.
    counts : sequence of int
        Nodes per axis, each at least 5.
    n : int, optional
        Expected dimension; checked against ``len(extents)`` when given.
    """
    if n is not None and n != len(extents):
        raise ValueError(f"dimension mismatch: n={n} but {len(extents)} extents")
    return Grid(extents, counts)


def _build_boundary(grid: Grid) -> BoundaryPartition:
    n = grid.n
    counts = grid.counts
    faces = []
    for axis in range(n):
        tang = [ax for ax in range(n) if ax != axis]
        tang_counts = [counts[t] for t in tang]
        # tangential trapezoid weights
        w = np.ones(1)
        for t in tang:
            a, b = grid.extents[t]
            h = (b - a) / (counts[t] - 1)
            w1 = np.full(counts[t], h)
            w1[0] = w1[-1] = h / 2
            w = np.multiply.outer(w, w1)
        w = w.reshape(-1)
        mesh = np.meshgrid(*[np.arange(m) for m in tang_counts], indexing="ij")
        m_face = int(np.prod(tang_counts))
        for side in (0, 1):
            idx = np.empty((m_face, n), dtype=np.intp)
            idx[:, axis] = 0 if side == 0 else counts[axis] - 1
            for k, t in enumerate(tang):
                idx[:, t] = mesh[k].reshape(-1)
            normal = np.zeros(n)
            normal[axis] = -1.0 if side == 0 else 1.0
            faces.append(Face(axis, side, normal, idx, w.copy()))
    faces = tuple(faces)

    bmask = grid.boundary_mask()
    node_index = np.argwhere(bmask)  # C order
    flat = np.ravel_multi_index(node_index.T, counts)
    pos_of_flat = {f: i for i, f in enumerate(flat)}

    # Gamma0: interior of the top face (x_n = 0); the edge ring goes to Gamma.
    top_sel = node_index[:, n - 1] == counts[n - 1] - 1
    ring = np.zeros(len(node_index), dtype=bool)
    for j in range(n - 1):
        ring |= node_index[:, j] == 0
        ring |= node_index[:, j] == counts[j] - 1
    gamma0_local = np.flatnonzero(top_sel & ~ring)
    gamma_local = np.flatnonzero(~(top_sel & ~ring))

    # primary face per node: faces ordered (axis, side) with the top face last
    order = sorted(
        range(len(faces)),
        key=lambda i: (faces[i].axis == n - 1 and faces[i].side == 1, faces[i].axis, faces[i].side),
    )
    normals = np.zeros((len(node_index), n))
    assigned = np.zeros(len(node_index), dtype=bool)
    node_weights = np.zeros(len(node_index))
    for fi in order:
        f = faces[fi]
        fflat = np.ravel_multi_index(f.indices.T, counts)
        locs = np.array([pos_of_flat[v] for v in fflat])
        node_weights[locs] += f.weights
        fresh = ~assigned[locs]
        normals[locs[fresh]] = f.normal
        assigned[locs[fresh]] = True

    meta = {"edge_ring": "gamma"}
    return BoundaryPartition(
        faces, node_index, gamma0_local, gamma_local, normals, node_weights, meta
    )


def doubled_box(grid: Grid) -> Box:
    """Node lattice of the reflected union (box united with its mirror image)."""
    a_n, _ = grid.extents[-1]
    extents = grid.extents[:-1] + ((a_n, -a_n),)
    counts = grid.counts[:-1] + (2 * grid.counts[-1] - 1,)
    return Box(extents, counts)


def reflect_index(grid: Grid, idx: tuple[int, ...]) -> tuple[int, ...]:
    """Mirror a doubled-grid node across {x_n = 0}; exact involution."""
    dbl = doubled_box(grid)
    m = dbl.counts[-1]
    if not all(0 <= i < c for i, c in zip(idx, dbl.counts)):
        raise IndexError(f"node {idx} outside the doubled grid {dbl.counts}")
    return idx[:-1] + (m - 1 - idx[-1],)


def reflect_values(values: np.ndarray, sign: float = 1.0) -> np.ndarray:
    """Values of f(x*) on a lattice symmetric in the last axis (times sign)."""
    return sign * values[..., ::-1]


def enclosing_radius(grid: Grid) -> float:
    """Largest node distance to the origin over the doubled domain."""
    r2 = 0.0
    for a, b in grid.extents[:-1]:
        r2 += max(a * a, b * b)
    a_n, _ = grid.extents[-1]
    r2 += a_n * a_n
    return float(np.sqrt(r2))


DEFAULT_EXTENTS = ((-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0))
DEFAULT_COUNTS = (17, 17, 9)


def default_grid() -> Grid:
    return build_grid(DEFAULT_EXTENTS, DEFAULT_COUNTS)
