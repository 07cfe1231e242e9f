"""Partial Dirichlet-to-Neumann map on the accessible boundary part.

The map sends Navier data (f, g) supported on Gamma to the pair of one-sided
normal derivatives (d_nu u, d_nu lap u) restricted to Gamma.  Fractional
boundary norms are spectral powers of a discrete Laplace-Beltrami operator on
the boundary node graph: 5-point stencils inside each face, stitched across
edges, symmetrized against the surface quadrature weights.  The operator gap

    sup { ||(L1 - L2)(f, g)||_{5/2, 1/2} : ||(f, g)||_{7/2, 3/2} = 1 }

is the largest generalized singular value of the difference map between those
two weighted spaces, computed by power iteration.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from .grid import Grid
from .fields import ScalarField
from .forward import OperatorHandle, solve_navier

__all__ = [
    "TraceData",
    "DtnMap",
    "BoundarySpectral",
    "boundary_spectral",
    "boundary_sobolev_norm",
    "apply_dtn",
    "assemble_dtn_map",
    "dtn_gap_norm",
    "boundary_normal_derivative",
    "write_dtn_map",
    "read_dtn_map",
]

GAP_RTOL = 1e-6
GAP_MAX_ITER = 10_000

IN_ORDERS = (3.5, 1.5)  # trace smoothness of (f, g)
OUT_ORDERS = (2.5, 0.5)  # trace smoothness of (d_nu u, d_nu lap u)


@dataclass
class TraceData:
    """Navier boundary data as values over the grid's boundary node list."""

    grid: Grid
    f: np.ndarray
    g: np.ndarray
    gamma_supported: bool = True

    def __post_init__(self):
        b = self.grid.boundary().n_boundary
        self.f = np.asarray(self.f, dtype=np.complex128).reshape(b)
        self.g = np.asarray(self.g, dtype=np.complex128).reshape(b)
        if self.gamma_supported:
            self.validate_support()

    def validate_support(self):
        bp = self.grid.boundary()
        bad_f = np.abs(self.f[bp.gamma0_local]).max(initial=0.0)
        bad_g = np.abs(self.g[bp.gamma0_local]).max(initial=0.0)
        if max(bad_f, bad_g) > 0.0:
            raise ValueError(
                "trace data marked Gamma-supported but has nonzero values on "
                f"Gamma0 (max |f| = {bad_f:.3e}, max |g| = {bad_g:.3e})"
            )

    def to_grid_arrays(self):
        bflat = self.grid.boundary_flat()
        fv = np.zeros(self.grid.n_nodes, dtype=np.complex128)
        gv = np.zeros(self.grid.n_nodes, dtype=np.complex128)
        fv[bflat] = self.f
        gv[bflat] = self.g
        return fv.reshape(self.grid.shape), gv.reshape(self.grid.shape)


# ---------------------------------------------------------------------------
# boundary Laplace-Beltrami spectral machinery

@dataclass
class BoundarySpectral:
    grid: Grid
    lam: np.ndarray  # eigenvalues of S^-1 K, nonnegative
    V: np.ndarray  # S-orthonormal eigenvectors, columns
    S: np.ndarray  # surface quadrature weights (diagonal)

    def coefficients(self, t: np.ndarray) -> np.ndarray:
        return self.V.T @ (self.S * t)

    def weighted(self, t: np.ndarray, tau: float) -> np.ndarray:
        """Spectral image diag((1+lam)^{tau/2}) V^T S t; its 2-norm is ||t||_{H^tau}."""
        return (1.0 + self.lam) ** (tau / 2) * self.coefficients(t)


_SPECTRAL_CACHE: dict = {}


def _boundary_adjacency(grid: Grid):
    bp = grid.boundary()
    counts = grid.counts
    n = grid.n
    idx = bp.node_index
    flat = np.ravel_multi_index(idx.T, counts)
    pos = {f: i for i, f in enumerate(flat)}
    edges = []
    for i in range(idx.shape[0]):
        base = idx[i]
        pinned = [
            (ax, base[ax]) for ax in range(n) if base[ax] in (0, counts[ax] - 1)
        ]
        for ax in range(n):
            nb = base.copy()
            nb[ax] += 1
            if nb[ax] >= counts[ax]:
                continue
            # surface edge: both endpoints pinned to a common face off the step axis
            shares = any(
                p_ax != ax and nb[p_ax] == p_val for p_ax, p_val in pinned
            )
            if not shares:
                continue
            j = pos.get(int(np.ravel_multi_index(nb, counts)))
            if j is not None:
                edges.append((i, j, grid.dx[ax]))
    return edges


def boundary_spectral(grid: Grid) -> BoundarySpectral:
    """Eigendecomposition of the boundary-graph Laplace-Beltrami operator."""
    key = (grid.extents, grid.counts)
    if key in _SPECTRAL_CACHE:
        return _SPECTRAL_CACHE[key]
    bp = grid.boundary()
    b = bp.n_boundary
    K = np.zeros((b, b))
    for i, j, h in _boundary_adjacency(grid):
        w = 1.0 / h**2
        K[i, i] += w
        K[j, j] += w
        K[i, j] -= w
        K[j, i] -= w
    S = bp.node_weights
    lam, V = eigh(K, np.diag(S))
    lam = np.clip(lam, 0.0, None)
    spec = BoundarySpectral(grid, lam, V, S)
    _SPECTRAL_CACHE[key] = spec
    return spec


def boundary_sobolev_norm(grid: Grid, t: np.ndarray, tau: float) -> float:
    """|| (I + Lambda_B)^{tau/2} t ||_{L2(boundary)} for boundary node values."""
    spec = boundary_spectral(grid)
    t = np.asarray(t, dtype=np.complex128).reshape(spec.S.size)
    return float(np.linalg.norm(spec.weighted(t, tau)))


# ---------------------------------------------------------------------------
# normal derivatives and the map itself

def boundary_normal_derivative(grid: Grid, values: np.ndarray) -> np.ndarray:
    """One-sided second-order d_nu at every boundary node (primary face rule)."""
    bp = grid.boundary()
    values = np.asarray(values).reshape(grid.shape)
    out = np.zeros(bp.n_boundary, dtype=np.complex128)
    idx = bp.node_index
    for ax in range(grid.n):
        h = grid.dx[ax]
        for side, sgn in ((0, -1.0), (1, 1.0)):
            normal_val = -1.0 if side == 0 else 1.0
            sel = np.flatnonzero(np.abs(bp.normals[:, ax] - normal_val) < 0.5)
            if sel.size == 0:
                continue
            sub = idx[sel]
            step = 1 if side == 0 else -1
            i0 = tuple(sub[:, k] for k in range(grid.n))
            i1 = tuple(
                sub[:, k] + (step if k == ax else 0) for k in range(grid.n)
            )
            i2 = tuple(
                sub[:, k] + (2 * step if k == ax else 0) for k in range(grid.n)
            )
            # directional derivative along the inward step; nu points outward
            d = (-3 * values[i0] + 4 * values[i1] - values[i2]) / (2 * h)
            out[sel] = -d
    return out


def apply_dtn(op: OperatorHandle, trace: TraceData) -> TraceData:
    """Solve the Navier problem for (f, g) and return (d_nu u, d_nu lap u) on Gamma."""
    grid = trace.grid
    trace.validate_support()
    fv, gv = trace.to_grid_arrays()
    u, w = solve_navier(op, fv, gv)
    du = boundary_normal_derivative(grid, u.values)
    dw = boundary_normal_derivative(grid, w.values)
    bp = grid.boundary()
    mask = np.zeros(bp.n_boundary, dtype=bool)
    mask[bp.gamma_local] = True
    du[~mask] = 0.0
    dw[~mask] = 0.0
    return TraceData(grid, du, dw, gamma_supported=False)


@dataclass
class DtnMap:
    grid: Grid
    matrix: np.ndarray  # (2 gamma, 2 gamma) complex: columns = nodal (f | g) basis
    meta: dict = field(default_factory=dict)

    @property
    def n_gamma(self) -> int:
        return self.matrix.shape[0] // 2


def _hash_bytes(*chunks) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c)
    return h.hexdigest()[:16]


def assemble_dtn_map(op: OperatorHandle, check_margin: bool = True) -> DtnMap:
    """Column-by-column assembly over the Gamma-supported nodal basis."""
    grid = op.box
    if not isinstance(grid, Grid):
        raise TypeError("DtN assembly needs the half-space grid")
    bp = grid.boundary()
    gam = bp.gamma_local
    ng = gam.size
    b = bp.n_boundary
    cols = np.zeros((2 * ng, 2 * ng), dtype=np.complex128)
    if check_margin:
        # gate once, then reuse the factorization for every column
        solve_navier(
            op, np.zeros(grid.shape), np.zeros(grid.shape), check_margin=True
        )
    for slot in (0, 1):
        for k in range(ng):
            f = np.zeros(b, dtype=np.complex128)
            g = np.zeros(b, dtype=np.complex128)
            (f if slot == 0 else g)[gam[k]] = 1.0
            t = TraceData(grid, f, g)
            out = apply_dtn(op, t)
            col = slot * ng + k
            cols[:ng, col] = out.f[gam]
            cols[ng:, col] = out.g[gam]
    meta = {
        "grid_hash": _hash_bytes(json.dumps(grid.header(), sort_keys=True).encode()),
        "coef_hash": _hash_bytes(
            np.ascontiguousarray(op.A.values).tobytes(),
            np.ascontiguousarray(op.q.values).tobytes(),
        ),
        "gamma_local": gam.tolist(),
    }
    return DtnMap(grid, cols, meta)


def _gamma_gram(grid: Grid, tau: float) -> np.ndarray:
    """Gram matrix of the H^tau boundary norm restricted to Gamma node columns."""
    spec = boundary_spectral(grid)
    gam = grid.boundary().gamma_local
    Ttau = ((1.0 + spec.lam) ** (tau / 2))[:, None] * (spec.V.T * spec.S[None, :])
    B = Ttau[:, gam]
    return B.T @ B


def dtn_gap_norm(m1: DtnMap, m2: DtnMap) -> float:
    """Largest weighted singular value of the difference of two DtN maps.

    Power iteration on the pencil (D^H W_out D, W_in) where W_in is the
    (7/2, 3/2) input Gram and W_out the (5/2, 1/2) output Gram over the
    Gamma nodal basis; relative tolerance 1e-6.
    """
    if m1.grid != m2.grid or m1.matrix.shape != m2.matrix.shape:
        raise ValueError("DtN maps must share one grid and Gamma indexing")
    grid = m1.grid
    D = m2.matrix - m1.matrix
    if not np.any(D):
        return 0.0
    ng = m1.n_gamma

    def blockdiag(t_in: tuple) -> np.ndarray:
        G = np.zeros((2 * ng, 2 * ng))
        G[:ng, :ng] = _gamma_gram(grid, t_in[0])
        G[ng:, ng:] = _gamma_gram(grid, t_in[1])
        return G

    G_in = blockdiag(IN_ORDERS)
    H_out = blockdiag(OUT_ORDERS)
    chol = cho_factor(G_in + 1e-14 * np.eye(2 * ng) * np.abs(G_in).max())
    rng = np.random.default_rng(2718)
    x = rng.standard_normal(2 * ng) + 1j * rng.standard_normal(2 * ng)
    x /= np.linalg.norm(x)
    rho_old = 0.0
    for it in range(1, GAP_MAX_ITER + 1):
        y = D @ x
        w = D.conj().T @ (H_out @ y)
        num = float(np.real(np.vdot(x, w)))
        den = float(np.real(np.vdot(x, G_in @ x)))
        rho = num / den
        if it > 1 and abs(rho - rho_old) <= GAP_RTOL * max(rho, 1e-300):
            return float(np.sqrt(max(rho, 0.0)))
        rho_old = rho
        x = cho_solve(chol, w)
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return 0.0
        x /= nx
    raise RuntimeError(
        f"gap power iteration did not converge in {GAP_MAX_ITER} iterations"
    )


# ---------------------------------------------------------------------------
# serialization: BFLD-style header + dense complex blocks

def write_dtn_map(path, m: DtnMap, name: str = "dtn"):
    header = m.grid.header(
        format="BFLD-DTN",
        name=name,
        components=2,
        complex=True,
        n_gamma=m.n_gamma,
        **{k: v for k, v in m.meta.items() if k != "gamma_local"},
    )
    header["gamma_local"] = m.meta.get("gamma_local", [])
    payload = np.ascontiguousarray(m.matrix, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload.view("<f8").tobytes())


def read_dtn_map(path) -> DtnMap:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        raw = fh.read()
    if header.get("format") != "BFLD-DTN":
        raise ValueError(f"not a DtN map file: {path}")
    grid = Grid(tuple(tuple(e) for e in header["extents"]), tuple(header["counts"]))
    ng = header["n_gamma"]
    mat = np.frombuffer(raw, dtype="<f8").view("<c16").reshape(2 * ng, 2 * ng)
    meta = {
        "grid_hash": header.get("grid_hash"),
        "coef_hash": header.get("coef_hash"),
        "gamma_local": header.get("gamma_local", []),
    }
    return DtnMap(grid, mat.copy(), meta)
