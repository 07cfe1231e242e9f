"""Discrete perturbed biharmonic operator and the Navier boundary-value solver.

The fourth-order equation is solved in split form with the auxiliary unknown
w = lap(u):

    lap(w) + A . D u + q u = r   in the interior,
    lap(u) - w             = 0   in the interior,
    u = f,  w = g                on the boundary,

where D = -i grad.  Prescribing (u, lap u) on the boundary makes the Navier
data exact boundary rows, which are eliminated into the right-hand side.
Stencils are second order: 7-point Laplacians and central first derivatives
inside, 3-point one-sided normal derivatives on the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.sparse import bmat, csr_matrix, identity
from scipy.sparse.linalg import splu, spilu, lgmres, LinearOperator

from .grid import Box, Face, Grid
from .fields import (
    ScalarField,
    VectorField,
    diff1,
    diff2,
    divergence,
    laplacian,
    trapezoid_integral,
)

__all__ = [
    "OperatorHandle",
    "assemble",
    "solve_navier",
    "adjoint_coefficients",
    "assumption1_margin",
    "MarginReport",
    "greens_residual",
    "apply_operator",
    "Assumption1Violated",
    "SolveFailure",
]

ITERATIVE_LIMIT = 200_000  # unknowns; above this the solver goes iterative
MARGIN_RTOL = 1e-8  # Assumption-1 gate, relative to the matrix scale
ALGEBRAIC_RTOL = 1e-10


class Assumption1Violated(RuntimeError):
    """The assembled operator is singular at this discretization."""


class SolveFailure(RuntimeError):
    pass


class MarginReport(NamedTuple):
    value: float
    converged: bool
    iterations: int


def _stencil_matrices(box: Box):
    """Interior-row couplings of the 7-point Laplacian and central gradients.

    Returns (L_ii, L_ib, D_ii, D_ib): interior-to-interior and
    interior-to-boundary blocks; D_* are per-axis lists for the plain
    derivative d/dx_j (no -i factor).
    """
    counts = box.counts
    n = box.n
    interior = box.interior_mask()
    flat_interior = np.flatnonzero(interior.reshape(-1))
    flat_boundary = np.flatnonzero(~interior.reshape(-1))
    m = flat_interior.size
    b = flat_boundary.size
    pos_int = -np.ones(box.n_nodes, dtype=np.intp)
    pos_int[flat_interior] = np.arange(m)
    pos_bnd = -np.ones(box.n_nodes, dtype=np.intp)
    pos_bnd[flat_boundary] = np.arange(b)
    int_multi = np.argwhere(interior)

    strides = np.array(
        [int(np.prod(counts[k + 1 :])) for k in range(n)], dtype=np.intp
    )

    def split(cols_flat, vals):
        ii = pos_int[cols_flat]
        sel = ii >= 0
        rows_i = np.arange(m)[sel]
        entry_i = (rows_i, ii[sel], vals[sel] if np.ndim(vals) else np.full(sel.sum(), vals))
        bb = pos_bnd[cols_flat]
        selb = bb >= 0
        rows_b = np.arange(m)[selb]
        entry_b = (rows_b, bb[selb], vals[selb] if np.ndim(vals) else np.full(selb.sum(), vals))
        return entry_i, entry_b

    lap_i = [[], [], []]
    lap_b = [[], [], []]
    grad_i = []
    grad_b = []
    center_flat = (int_multi @ strides).astype(np.intp)
    for axis in range(n):
        h = box.dx[axis]
        plus = center_flat + strides[axis]
        minus = center_flat - strides[axis]
        # Laplacian: +1/h^2 at both neighbors, -2/h^2 at the center
        gi = [[], [], []]
        gb = [[], [], []]
        for cols, wlap, wgrad in (
            (plus, 1.0 / h**2, 1.0 / (2 * h)),
            (minus, 1.0 / h**2, -1.0 / (2 * h)),
        ):
            (ri, ci, vi), (rb, cb, vb) = split(cols, np.full(m, wlap))
            lap_i[0].append(ri), lap_i[1].append(ci), lap_i[2].append(vi)
            lap_b[0].append(rb), lap_b[1].append(cb), lap_b[2].append(vb)
            (ri, ci, vi), (rb, cb, vb) = split(cols, np.full(m, wgrad))
            gi[0].append(ri), gi[1].append(ci), gi[2].append(vi)
            gb[0].append(rb), gb[1].append(cb), gb[2].append(vb)
        lap_i[0].append(np.arange(m))
        lap_i[1].append(np.arange(m))
        lap_i[2].append(np.full(m, -2.0 / h**2))
        grad_i.append(
            csr_matrix(
                (np.concatenate(gi[2]), (np.concatenate(gi[0]), np.concatenate(gi[1]))),
                shape=(m, m),
            )
        )
        grad_b.append(
            csr_matrix(
                (np.concatenate(gb[2]), (np.concatenate(gb[0]), np.concatenate(gb[1]))),
                shape=(m, b),
            )
        )
    L_ii = csr_matrix(
        (np.concatenate(lap_i[2]), (np.concatenate(lap_i[0]), np.concatenate(lap_i[1]))),
        shape=(m, m),
    )
    L_ib = csr_matrix(
        (np.concatenate(lap_b[2]), (np.concatenate(lap_b[0]), np.concatenate(lap_b[1]))),
        shape=(m, b),
    )
    L_ii.sum_duplicates()
    L_ib.sum_duplicates()
    return L_ii, L_ib, grad_i, grad_b, flat_interior, flat_boundary


@dataclass
class OperatorHandle:
    box: Box
    A: VectorField
    q: ScalarField
    matrix: "csr_matrix"  # split-form system, 2 x (interior nodes)
    rhs_blocks: dict
    flat_interior: np.ndarray
    flat_boundary: np.ndarray
    _lu: object = None
    _margin: MarginReport | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_unknowns(self) -> int:
        return self.matrix.shape[0]

    def matrix_bytes(self) -> bytes:
        m = self.matrix.tocsr()
        m.sort_indices()
        return m.indptr.tobytes() + m.indices.tobytes() + m.data.tobytes()

    def factor(self):
        """Factorization of the half-size Schur system B = L^2 + C.

        Split solves are recovered exactly from B-solves: eliminating w from
        (C u + L w, L u - w) = (b1, b2) gives B u = b1 + L b2, w = L u - b2.
        """
        if self._lu is None:
            L = self.rhs_blocks["L_ii"]
            B = (L @ L + self.rhs_blocks["C_ii"]).tocsc()
            self._lu = splu(B)
        return self._lu

    def solve_split(self, b: np.ndarray, adjoint: bool = False) -> np.ndarray:
        """Solve the split system M x = b (or M^H x = b) via the Schur factor."""
        m = self.flat_interior.size
        L = self.rhs_blocks["L_ii"]
        b1, b2 = b[:m], b[m:]
        lu = self.factor()
        if not adjoint:
            u = lu.solve(b1 + L @ b2)
            w = L @ u - b2
        else:
            u = lu.solve(b1 + L @ b2, trans="H")
            w = L @ u - b2
        return np.concatenate([u, w])

    def matrix_scale(self) -> float:
        return float(np.max(np.abs(self.matrix.data)))

    def margin(self, max_iter: int = 200, rtol: float = 1e-6) -> MarginReport:
        if self._margin is None:
            self._margin = assumption1_margin(self, max_iter=max_iter, rtol=rtol)
        return self._margin


def assemble(box: Box, A: VectorField, q: ScalarField) -> OperatorHandle:
    """Assemble the split-form sparse system for the given coefficients."""
    if A.box.shape != box.shape or q.box.shape != box.shape:
        raise ValueError("coefficient fields must live on the assembly grid")
    L_ii, L_ib, grad_i, grad_b, flat_int, flat_bnd = _stencil_matrices(box)
    m = L_ii.shape[0]
    a_int = [A.values[j].reshape(-1)[flat_int] for j in range(box.n)]
    q_int = q.values.reshape(-1)[flat_int]

    C_ii = None
    for j in range(box.n):
        term = grad_i[j].multiply((-1j * a_int[j])[:, None]).tocsr()
        C_ii = term if C_ii is None else C_ii + term
    C_ii = (C_ii + csr_matrix((q_int, (np.arange(m), np.arange(m))), shape=(m, m))).tocsr()
    C_ib = None
    for j in range(box.n):
        term = grad_b[j].multiply((-1j * a_int[j])[:, None]).tocsr()
        C_ib = term if C_ib is None else C_ib + term

    M = bmat(
        [[C_ii, L_ii.astype(np.complex128)], [L_ii.astype(np.complex128), -identity(m, dtype=np.complex128, format="csr")]],
        format="csr",
    )
    M.sort_indices()
    rhs_blocks = {
        "L_ib": L_ib.astype(np.complex128),
        "C_ib": C_ib.tocsr(),
        "L_ii": L_ii.astype(np.complex128).tocsr(),
        "C_ii": C_ii,
    }
    return OperatorHandle(box, A, q, M, rhs_blocks, flat_int, flat_bnd)


def _gate(op: OperatorHandle):
    # cheap cached estimate; a loose tolerance is plenty for a 1e-8 gate
    rep = op.meta.get("gate_margin")
    if rep is None:
        rep = assumption1_margin(op, max_iter=40, rtol=1e-2)
        op.meta["gate_margin"] = rep
    if rep.value < MARGIN_RTOL * op.matrix_scale():
        raise Assumption1Violated(
            f"Assumption 1 violated at discretization: margin {rep.value:.3e} "
            f"below {MARGIN_RTOL:.0e} x matrix scale {op.matrix_scale():.3e}"
        )


def solve_navier(
    op: OperatorHandle,
    f,
    g,
    rhs=None,
    check_margin: bool = True,
):
    """Solve the Navier problem with boundary data (u, lap u) = (f, g).

    Parameters
    ----------
    f, g : array or ScalarField
        Full-grid-shaped data; only boundary node values are read.
    rhs : array or ScalarField, optional
        Interior source for the fourth-order equation.

    Returns
    -------
    (u, w) : pair of ScalarField on the full grid with w the discrete
        Laplacian unknown; the relative algebraic residual is at most 1e-10.
    """
    box = op.box
    fv = (f.values if isinstance(f, ScalarField) else np.asarray(f)).reshape(-1)
    gv = (g.values if isinstance(g, ScalarField) else np.asarray(g)).reshape(-1)
    f_b = fv[op.flat_boundary].astype(np.complex128)
    g_b = gv[op.flat_boundary].astype(np.complex128)
    m = op.flat_interior.size
    r1 = np.zeros(m, dtype=np.complex128)
    if rhs is not None:
        rv = (rhs.values if isinstance(rhs, ScalarField) else np.asarray(rhs)).reshape(-1)
        r1 = rv[op.flat_interior].astype(np.complex128)
    b = np.concatenate(
        [
            r1 - op.rhs_blocks["C_ib"] @ f_b - op.rhs_blocks["L_ib"] @ g_b,
            -op.rhs_blocks["L_ib"] @ f_b,
        ]
    )
    if check_margin:
        _gate(op)
    if op.n_unknowns <= ITERATIVE_LIMIT:
        x = op.solve_split(b)
    else:
        ilu = spilu(op.matrix.tocsc(), drop_tol=1e-5, fill_factor=10)
        prec = LinearOperator(op.matrix.shape, ilu.solve)
        x, info = lgmres(op.matrix, b, M=prec, rtol=1e-12, atol=0.0)
        if info != 0:
            raise SolveFailure(f"iterative Navier solve did not converge (info={info})")
    bnorm = float(np.linalg.norm(b))
    resid = float(np.linalg.norm(op.matrix @ x - b))
    rel = resid / bnorm if bnorm > 0 else resid
    if rel > ALGEBRAIC_RTOL:
        raise SolveFailure(f"Navier solve residual {rel:.3e} exceeds {ALGEBRAIC_RTOL:.0e}")
    u = np.zeros(box.n_nodes, dtype=np.complex128)
    w = np.zeros(box.n_nodes, dtype=np.complex128)
    u[op.flat_interior] = x[:m]
    w[op.flat_interior] = x[m:]
    u[op.flat_boundary] = f_b
    w[op.flat_boundary] = g_b
    return (
        ScalarField(box, u.reshape(box.shape)),
        ScalarField(box, w.reshape(box.shape)),
    )


def adjoint_coefficients(A: VectorField, q: ScalarField):
    """Coefficients of the formal L2 adjoint: (conj A, conj q - i div conj A)."""
    A_star = VectorField(A.box, np.conj(A.values))
    div_astar = divergence(A_star)
    q_star = ScalarField(q.box, np.conj(q.values) - 1j * div_astar.values)
    return A_star, q_star


def assumption1_margin(op: OperatorHandle, max_iter: int = 200, rtol: float = 1e-6) -> MarginReport:
    """Smallest singular value via inverse power iteration on the normal equations."""
    op.factor()
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(op.n_unknowns) + 1j * rng.standard_normal(op.n_unknowns)
    v /= np.linalg.norm(v)
    lam_old = 0.0
    for it in range(1, max_iter + 1):
        y = op.solve_split(v, adjoint=True)
        z = op.solve_split(y)
        lam = float(np.linalg.norm(z))
        if lam == 0.0:
            return MarginReport(np.inf, True, it)
        v = z / lam
        if abs(lam - lam_old) <= rtol * lam:
            return MarginReport(1.0 / np.sqrt(lam), True, it)
        lam_old = lam
    return MarginReport(1.0 / np.sqrt(lam_old), False, max_iter)


def apply_operator(op: OperatorHandle, u: ScalarField) -> ScalarField:
    """Evaluate lap(lap u) + A.Du + qu nodewise (one-sided stencils at the rim)."""
    box = op.box
    w = laplacian(u.values, box.dx)
    out = laplacian(w, box.dx)
    for j in range(box.n):
        out = out + op.A.values[j] * (-1j) * diff1(u.values, box.dx[j], j)
    out = out + op.q.values * u.values
    return ScalarField(box, out)


def _face_normal_derivative(values: np.ndarray, box: Box, f: Face) -> np.ndarray:
    """One-sided second-order normal derivative on one face, flattened."""
    h = box.dx[f.axis]
    v = np.moveaxis(values, f.axis, 0)
    if f.side == 0:
        d = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)
        return -d.reshape(-1)
    d = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
    return d.reshape(-1)


def _face_values(values: np.ndarray, box: Box, f: Face) -> np.ndarray:
    v = np.moveaxis(values, f.axis, 0)
    return (v[0] if f.side == 0 else v[-1]).reshape(-1)


def greens_residual(
    grid: Grid,
    u: ScalarField,
    v: ScalarField,
    A: VectorField,
    q: ScalarField,
) -> complex:
    """Defect of the Green identity for the operator pair (L, L*).

    Evaluates | <Lu, v> - <u, L*v> - (boundary terms) | with trapezoid
    quadrature, one-sided normal derivatives, and one-sided Laplacians on the
    rim.  The five boundary terms are the flux pairings of u, lap u and their
    normal derivatives against v, plus the first-order term -i nu.(u A v-bar).
    """
    box = grid
    lap_u = laplacian(u.values, box.dx)
    lap_v = laplacian(v.values, box.dx)
    Lu = laplacian(lap_u, box.dx) + q.values * u.values
    for j in range(box.n):
        Lu = Lu + A.values[j] * (-1j) * diff1(u.values, box.dx[j], j)
    A_star, q_star = adjoint_coefficients(A, q)
    Lsv = laplacian(lap_v, box.dx) + q_star.values * v.values
    for j in range(box.n):
        Lsv = Lsv + A_star.values[j] * (-1j) * diff1(v.values, box.dx[j], j)

    vol = trapezoid_integral(Lu * np.conj(v.values), box) - trapezoid_integral(
        u.values * np.conj(Lsv), box
    )

    bnd = 0.0 + 0.0j
    for f in grid.boundary().faces:
        u_f = _face_values(u.values, box, f)
        v_f = _face_values(v.values, box, f)
        lapu_f = _face_values(lap_u, box, f)
        lapv_f = _face_values(lap_v, box, f)
        dnu_u = _face_normal_derivative(u.values, box, f)
        dnu_v = _face_normal_derivative(v.values, box, f)
        dnu_lapu = _face_normal_derivative(lap_u, box, f)
        dnu_lapv = _face_normal_derivative(lap_v, box, f)
        nuA = sum(
            f.normal[j] * _face_values(A.values[j], box, f) for j in range(box.n)
        )
        integrand = (
            -1j * u_f * nuA * np.conj(v_f)
            + dnu_lapu * np.conj(v_f)
            - lapu_f * np.conj(dnu_v)
            + dnu_u * np.conj(lapv_f)
            - u_f * np.conj(dnu_lapv)
        )
        bnd += complex(np.sum(f.weights * integrand))
    return vol - bnd
