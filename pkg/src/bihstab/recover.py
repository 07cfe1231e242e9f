"""Reconstruction pipelines: boundary pairings to Fourier samples to norms.

For a coefficient pair (A1, q1), (A2, q2), the measurable quantity is

    B(xi, h) = sum_Gamma [ d_nu(lap(u1 - u2)) conj(v) + d_nu(u1 - u2) conj(lap v) ]

with u2, v reflected CGO fields for the second operator and the adjoint of
the first, and u1 the forward solve of the first operator driven by the
traces of u2.  By the Green identity this equals the volume pairing

    int_Omega [ (A2 - A1) . D u2 + (q2 - q1) u2 ] conj(v) dx,

and substituting the CGO phases turns it into Fourier data of the evenly/oddly
extended coefficient differences plus reflection cross-terms at the split
frequencies xi_pm (recorded, never subtracted) and remainder terms of size
O(h).  Three pipelines share this machinery:

* dA:   h-scaled pairing, unit amplitudes, +-mu2 runs combined into the two
        tangential samples mu . F(A_ext)(xi) and the 2-form components;
* phi:  h-scaled pairing, linear amplitude on the u2 side, interpreted as
        -F(phi_ext)(xi) up to the solenoidal contamination;
* q:    unscaled pairing, unit amplitudes, interpreted as F(q_ext)(xi).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .grid import Grid, doubled_box, enclosing_radius
from .fields import (
    ScalarField,
    VectorField,
    extend_reflect_A,
    extend_reflect_q,
    divergence,
    fourier_samples,
    hodge_decompose,
    l2_norm,
    linf_norm,
    pair_index,
)
from .forward import OperatorHandle, assemble, solve_navier
from .dtn import assemble_dtn_map, dtn_gap_norm
from .cgo import (
    Amplitude,
    CgoSolution,
    CgoTorus,
    assemble_reflected,
    build_cgo_torus,
    build_frame,
    build_zetas,
    detuned_zetas,
    embed_on_torus,
    solve_amplitude,
)

__all__ = [
    "RecoveryPipeline",
    "FourierSample",
    "volume_pairing",
    "boundary_pairing",
    "fourier_sample_dA",
    "fourier_sample_phi",
    "fourier_sample_q",
    "truncated_hminus1",
    "ScheduleParams",
    "schedule_from_gap",
    "stability_rhs",
    "RhsValue",
    "riemann_lebesgue_check",
    "RiemannLebesgueReport",
    "StabilityRecord",
    "sweep",
    "frequency_lattice",
    "oracle_vector_transform",
    "oracle_two_form_transform",
]


# ---------------------------------------------------------------------------
# pairings

def volume_pairing(
    A1: VectorField,
    q1: ScalarField,
    A2: VectorField,
    q2: ScalarField,
    u2: CgoSolution,
    v: CgoSolution,
) -> complex:
    """Trapezoid quadrature of int_Omega [(A2-A1).Du2 + (q2-q1)u2] conj(v).

    Needs interior knowledge of the coefficients; its role is to validate the
    measurement-side boundary pairing through the Green identity.
    """
    grid = u2.grid
    w = grid.volume_weights()
    du = u2.omega("Du")
    integrand = (q2.values - q1.values) * u2.omega("u")
    for j in range(grid.n):
        integrand = integrand + (A2.values[j] - A1.values[j]) * du[j]
    return complex(np.sum(w * integrand * np.conj(v.omega("u"))))


def boundary_pairing(op1: OperatorHandle, u2: CgoSolution, v: CgoSolution) -> complex:
    """Measurement-side pairing over Gamma.

    Solves the first operator with the traces of u2 and integrates the normal
    derivatives of the difference against (v, lap v) over the accessible
    boundary faces.
    """
    grid = u2.grid
    f = u2.omega("u")
    g = u2.omega("w")
    u1, w1 = solve_navier(op1, f, g)
    e_u = u1.values - f
    e_w = w1.values - g
    v_u = v.omega("u")
    v_w = v.omega("w")
    total = 0.0 + 0.0j
    n = grid.n
    for face in grid.boundary().faces:
        if face.axis == n - 1 and face.side == 1:
            continue  # Gamma0: the CGO factors vanish there
        h = grid.dx[face.axis]
        axis = face.axis

        def dnu(vals):
            # 5-point one-sided first derivative (the stencil the grid's
            # minimum node count guarantees); fourth order keeps the trace
            # quadrature from dominating the pairing error at small h
            m = np.moveaxis(vals, axis, 0)
            if face.side == 0:
                d = (-25 * m[0] + 48 * m[1] - 36 * m[2] + 16 * m[3] - 3 * m[4]) / (12 * h)
                return -d.reshape(-1)
            d = (25 * m[-1] - 48 * m[-2] + 36 * m[-3] - 16 * m[-4] + 3 * m[-5]) / (12 * h)
            return d.reshape(-1)

        def at_face(vals):
            m = np.moveaxis(vals, axis, 0)
            return (m[0] if face.side == 0 else m[-1]).reshape(-1)

        total += complex(
            np.sum(
                face.weights
                * (
                    dnu(e_w) * np.conj(at_face(v_u))
                    + dnu(e_u) * np.conj(at_face(v_w))
                )
            )
        )
    return total


# ---------------------------------------------------------------------------
# the pipeline object

@dataclass
class FourierSample:
    xi: np.ndarray
    mode: str  # "dA" | "phi" | "q"
    h: float
    value: complex | None  # phi / q value; None for dA
    m_mu1: complex | None = None
    m_mu2: complex | None = None
    two_form: dict | None = None  # (j, k) -> component of F(dA_ext)(xi)
    pairing_plus: complex = 0.0
    pairing_minus: complex = 0.0
    diagnostics: dict = field(default_factory=dict)


class RecoveryPipeline:
    """Shared state for the dA / phi / q sample pipelines on one coefficient pair."""

    def __init__(
        self,
        grid: Grid,
        A1: VectorField,
        q1: ScalarField,
        A2: VectorField,
        q2: ScalarField,
        symbol: str = "stencil",
        alpha: float = 0.5,
        op1: OperatorHandle | None = None,
        torus: CgoTorus | None = None,
        v_cache: dict | None = None,
        detune: bool = False,
    ):
        self.grid = grid
        self.A1, self.q1, self.A2, self.q2 = A1, q1, A2, q2
        self.symbol = symbol
        self.alpha = alpha
        self.detune = detune
        self.op1 = op1 if op1 is not None else assemble(grid, A1, q1)
        self.torus = torus if torus is not None else build_cgo_torus(grid)

        At2 = extend_reflect_A(A2, grid)
        qt2 = extend_reflect_q(q2, grid)
        self.coef_u2 = (
            embed_on_torus(self.torus, At2.values),
            embed_on_torus(self.torus, qt2.values),
        )
        At1 = extend_reflect_A(A1, grid)
        qt1 = extend_reflect_q(q1, grid)
        A1c = VectorField(At1.box, np.conj(At1.values))
        q1_star = np.conj(qt1.values) - 1j * divergence(A1c).values
        self.coef_v = (
            embed_on_torus(self.torus, A1c.values),
            embed_on_torus(self.torus, q1_star),
        )
        # v depends only on the first operator: reusable across perturbations
        self._v_cache = v_cache if v_cache is not None else {}

    def _zetas(self, frame, xi, h: float, sign: int):
        if self.detune and self.symbol == "stencil":
            return detuned_zetas(frame, xi, h, sign, self.torus.dx)
        return build_zetas(frame, xi, h, sign)

    def _v_solution(self, xi, h: float, sign: int) -> CgoSolution:
        key = (tuple(np.round(np.asarray(xi, dtype=float), 12)), h, sign)
        if key not in self._v_cache:
            frame = build_frame(xi)
            zetas = self._zetas(frame, xi, h, sign)
            amp = solve_amplitude("one", frame)
            self._v_cache[key] = assemble_reflected(
                self.grid, self.torus, zetas, "v", amp, *self.coef_v, symbol=self.symbol
            )
        return self._v_cache[key]

    def signed_pairing(self, xi, h: float, sign: int, u2_mode: str):
        """One +-mu2 run: assembled CGO pair and the boundary pairing value."""
        frame = build_frame(xi)
        zetas = self._zetas(frame, xi, h, sign)
        amp2 = solve_amplitude(u2_mode, frame)
        u2 = assemble_reflected(
            self.grid, self.torus, zetas, "u2", amp2, *self.coef_u2, symbol=self.symbol
        )
        v = self._v_solution(xi, h, sign)
        pb = boundary_pairing(self.op1, u2, v)
        return pb, u2, v, frame, zetas

    def _run_both_signs(self, xi, h: float, u2_mode: str):
        pb_p, u2p, vp, frame, zz_p = self.signed_pairing(xi, h, +1, u2_mode)
        pb_m, u2m, vm, _, zz_m = self.signed_pairing(xi, h, -1, u2_mode)
        diag = {
            "xi_plus": zz_p.xi_plus.tolist(),
            "xi_minus": zz_p.xi_minus.tolist(),
            "i2_bound": _i2_bound(xi, h, self.alpha),
            "i3_bound_scale": h,
            "gamma0_rel_u2": max(
                u2p.diagnostics["gamma0_rel_u"], u2m.diagnostics["gamma0_rel_u"]
            ),
            "pde_residual_u2": max(
                u2p.diagnostics["pde_residual_rel"], u2m.diagnostics["pde_residual_rel"]
            ),
            "remainder_residual": max(
                u2p.diagnostics["remainder"]["residual_rel"],
                u2m.diagnostics["remainder"]["residual_rel"],
            ),
        }
        return pb_p, pb_m, frame, (zz_p, zz_m), diag


def _mu_combination(zz_p, zz_m, P_p: complex, P_m: complex):
    """Solve the 2x2 system for (mu1 . F, mu2 . F) from the +-mu2 pairings.

    P_+- carry the transverse coefficient vectors conj(p) mu1 -+ conj(q) mu2
    of zeta2 in either run; inverting the pair isolates the two tangential
    samples (the -h xi/2 component contributes the O(h) bias recorded with
    the samples, it cannot be separated from measurements).
    """
    a1, b1 = np.conj(zz_p.p), np.conj(zz_p.q)
    a2, b2 = np.conj(zz_m.p), -np.conj(zz_m.q)
    det = a1 * b2 - b1 * a2
    if abs(det) < 1e-13:
        raise ValueError("degenerate mu-combination (h |xi| too close to 2)")
    m1 = (b2 * P_p - b1 * P_m) / det
    m2 = (-a2 * P_p + a1 * P_m) / det
    return complex(m1), complex(m2)


def _i2_bound(xi, h: float, alpha: float) -> float:
    """Modelled size of the reflection cross-terms (diagnostic only)."""
    xi = np.asarray(xi, dtype=float)
    eps = np.sqrt(h)
    t2 = float(xi[:-1] @ xi[:-1])
    n2 = float(xi @ xi)
    return float(np.exp(-(eps**2 / np.pi) * t2 / (h * h * n2)) + eps**alpha)


def fourier_sample_dA(pipeline: RecoveryPipeline, xi, h: float) -> FourierSample:
    """Tangential Fourier samples of the extended difference field and the
    assembled 2-form components at one frequency.

    Combines the +-mu2 runs of the h-scaled pairing.  The exact phase algebra
    gives h A . Du2 conj(v) the diagonal part zeta2 . F(A_ext)(xi); inverting
    the transverse coefficients of the two runs isolates
    m(xi, mu1) and m(xi, mu2), and
    (F dA_ext)_{jk} = i (xi_j F_k - xi_k F_j) with
    F = m1 mu1 + m2 mu2 the transverse part of F(A_ext)(xi).
    """
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi[:-1]) == 0.0:
        raise ValueError("dA sampling needs |xi'| > 0 (reflection artifacts collapse)")
    pb_p, pb_m, frame, (zz_p, zz_m), diag = pipeline._run_both_signs(xi, h, "one")
    P_p, P_m = h * pb_p, h * pb_m
    m1, m2 = _mu_combination(zz_p, zz_m, P_p, P_m)
    F = m1 * frame.mu1 + m2 * frame.mu2
    two_form = {}
    for j, k in pair_index(xi.size):
        two_form[(j, k)] = 1j * (xi[j] * F[k] - xi[k] * F[j])
    return FourierSample(
        xi, "dA", h, None, m1, m2, two_form, P_p, P_m, diag
    )


def fourier_sample_phi(pipeline: RecoveryPipeline, xi, h: float) -> FourierSample:
    """Sample interpreted as -F(phi_ext)(xi), phi the Hodge scalar of the
    difference field; linear amplitude on the u2 side, unit on the v side.

    Averaging the +-mu2 runs cancels the mu2 component of the solenoidal
    contamination; what remains is bounded by the sup norm of the solenoidal
    part (recorded by the caller when the truth is known).  The sample is
    divided by sqrt(1 - h^2|xi|^2/4) so that the transverse phase vector
    applied to grad(a2) integrates by parts to exactly -F(phi_ext) at finite
    h, not just in the limit.
    """
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi[:-1]) == 0.0:
        raise ValueError("phi sampling needs |xi'| > 0")
    pb_p, pb_m, frame, (zz_p, zz_m), diag = pipeline._run_both_signs(xi, h, "linear")
    P_p, P_m = h * pb_p, h * pb_m
    value, _ = _mu_combination(zz_p, zz_m, P_p, P_m)
    return FourierSample(xi, "phi", h, complex(value), None, None, None, P_p, P_m, diag)


def fourier_sample_q(pipeline: RecoveryPipeline, xi, h: float) -> FourierSample:
    """Sample interpreted as F(q_ext)(xi); unscaled pairing, unit amplitudes.

    The pairing is deliberately not multiplied by h (that scaling belongs to
    the dA pipeline and would kill the q information); with equal first-order
    coefficients the pairing converges to the Fourier transform of the even
    extension of q2 - q1.
    """
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi[:-1]) == 0.0:
        raise ValueError("q sampling needs |xi'| > 0")
    pb_p, pb_m, frame, zetas, diag = pipeline._run_both_signs(xi, h, "one")
    value = (pb_p + pb_m) / 2.0
    return FourierSample(xi, "q", h, complex(value), None, None, None, complex(pb_p), complex(pb_m), diag)


# ---------------------------------------------------------------------------
# truncated H^{-1} estimation

def truncated_hminus1(xis, values, rho: float, m_hat: float, dxi) -> float:
    """Parseval split: low-frequency lattice integral plus the tail bound.

    Returns ((2 pi)^{-n} sum_{E(rho)} |m(xi)|^2/(1+|xi|^2) prod(dxi)
    + m_hat^2 / rho^2)^{1/2}; ``m_hat`` bounds the L2 norm of the field, which
    controls the complement of E(rho).  Values may be (m,) or (m, ncomp).
    """
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    values = np.asarray(values, dtype=np.complex128)
    if values.ndim == 1:
        values = values[:, None]
    n = xis.shape[1]
    dxi = np.asarray(dxi, dtype=float)
    tang = np.linalg.norm(xis[:, :-1], axis=1)
    vert = np.abs(xis[:, -1])
    inside = (tang <= rho + 1e-12) & (vert <= rho + 1e-12)
    xi2 = np.sum(xis**2, axis=1)
    dens = np.sum(np.abs(values) ** 2, axis=1) / (1.0 + xi2)
    cell = float(np.prod(dxi)) / (2 * np.pi) ** n
    low = float(np.sum(dens[inside])) * cell
    return float(np.sqrt(low + (m_hat / rho) ** 2))


# ---------------------------------------------------------------------------
# schedules and theorem right-hand sides

@dataclass
class ScheduleParams:
    """Parameter bundle derived from the measured gap and the a priori data."""

    R: float
    n: int
    s: float
    alpha: float
    M: float
    h0: float
    eps0: float
    eta: float
    kappa: float
    theta1: float
    theta2: float
    h_tilde0: float
    log_delta: float  # natural log of the small-gap threshold
    gap: float
    branch: str  # "small-gap" | "large-gap"
    h: float | None = None
    eps: float | None = None
    rho_dA: float | None = None
    rho_phi_q: float | None = None

    def __post_init__(self):
        if not self.s > self.n / 2 + 1:
            raise ValueError(f"need s > n/2 + 1, got s = {self.s}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        for name, th in (("theta1", self.theta1), ("theta2", self.theta2)):
            if not 0 < th < 1:
                raise ValueError(f"{name} = {th} outside (0, 1)")
        if self.branch == "small-gap":
            if self.h is None or not self.h < self.h_tilde0:
                raise ValueError("scheduled h must stay below min(h0, eps0^2)")
            rho = max(self.rho_dA, self.rho_phi_q)
            if not 1.0 - self.h**2 * (2 * rho**2) / 4.0 > 0.0:
                raise ValueError(
                    "scheduled (h, rho) violates 1 - h^2 |xi|^2 / 4 > 0 on E(rho)"
                )

    @property
    def delta(self) -> float:
        return float(np.exp(self.log_delta))


def schedule_from_gap(gap: float, consts: dict) -> ScheduleParams:
    """Derive (h, eps, rho) from the measured gap, or flag the large-gap branch.

    The threshold is delta = exp(-11 R / h0~^{1/alpha})^{2(1+s)^2/eta^2} with
    h0~ = min(h0, eps0^2); below it,

        h   = ((1/(11R)) |log gap|)^{-alpha eta^2 / (2(1+s)^2)},
        eps = sqrt(h),
        rho = h^{-alpha/(n+2)}               (dA pipeline),
        rho = h^{-4 alpha eta^2/((n+2)^3(1+s)^2)}   (phi and q pipelines),

    and the feasibility inequalities are asserted.  At or above the threshold
    the estimates reduce to the trivial a priori bound and no h is emitted.
    """
    R = float(consts["R"])
    n = int(consts["n"])
    s = float(consts["s"])
    alpha = float(consts["alpha"])
    h0 = float(consts["h0"])
    eps0 = float(consts["eps0"])
    M = float(consts.get("M", 1.0))
    eta = 0.5 * (s - n / 2)
    kappa = eta**2 / (2 * (1 + s) ** 2)
    theta1 = alpha**2 * eta**4 / ((n + 2) ** 2 * (1 + s) ** 4)
    theta2 = 2 * alpha**2 * eta**4 / ((n + 2) ** 3 * (1 + s) ** 4)
    h_tilde0 = min(h0, eps0**2)
    log_delta = -(11 * R / h_tilde0 ** (1 / alpha)) * (2 * (1 + s) ** 2 / eta**2)
    base = dict(
        R=R, n=n, s=s, alpha=alpha, M=M, h0=h0, eps0=eps0,
        eta=eta, kappa=kappa, theta1=theta1, theta2=theta2,
        h_tilde0=h_tilde0, log_delta=log_delta, gap=float(gap),
    )
    if gap <= 0.0 or np.log(gap) >= log_delta:
        return ScheduleParams(branch="large-gap", **base)
    h = ((1.0 / (11 * R)) * abs(np.log(gap))) ** (-alpha * eta**2 / (2 * (1 + s) ** 2))
    rho_dA = h ** (-alpha / (n + 2))
    rho_pq = h ** (-4 * alpha * eta**2 / ((n + 2) ** 3 * (1 + s) ** 2))
    return ScheduleParams(
        branch="small-gap",
        h=float(h),
        eps=float(np.sqrt(h)),
        rho_dA=float(rho_dA),
        rho_phi_q=float(rho_pq),
        **base,
    )


class RhsValue(NamedTuple):
    value: float
    flag: str  # "" | "zero-gap" | "unit-gap-limit"


def stability_rhs(gap: float, params: ScheduleParams, which: str, C_cal: float) -> RhsValue:
    """Right-hand side C (gap^kappa + |log gap|^{-theta}) of the estimates.

    ``which`` picks the exponent: theta1 for the sup-norm magnetic estimate,
    theta2 for the H^{-1} electric estimate; the sup-norm electric estimate is
    the latter raised to the outer power eta/(1+s).  A zero gap returns 0 with
    a flag (the uniqueness regime); at gap = 1 the log term is taken in the
    vanishing limit and flagged.
    """
    if C_cal <= 0:
        raise ValueError("calibration constant must be positive")
    if gap == 0.0:
        return RhsValue(0.0, "zero-gap")
    theta = {"A_Linfty": params.theta1, "q_Hminus1": params.theta2, "q_Linfty": params.theta2}[which]
    flag = ""
    log_gap = abs(np.log(gap))
    if log_gap == 0.0:
        log_term = 0.0
        flag = "unit-gap-limit"
    else:
        log_term = log_gap ** (-theta)
    core = gap**params.kappa + log_term
    if which == "q_Linfty":
        return RhsValue(float(C_cal * core ** (params.eta / (1 + params.s))), flag)
    return RhsValue(float(C_cal * core), flag)


# ---------------------------------------------------------------------------
# quantitative Riemann-Lebesgue checker

@dataclass
class RiemannLebesgueReport:
    C0: float
    alpha_fit: float
    alpha_used: float
    C_min: float
    holds: bool | None
    n_grid: int
    worst_pair: tuple


def riemann_lebesgue_check(
    f: ScalarField,
    eps_grid,
    xi_grid,
    delta: float = 0.4,
    alpha: float | None = None,
    C_cal: float | None = None,
    eps0: float | None = None,
) -> RiemannLebesgueReport:
    """Check |F f(xi)| <= C (exp(-eps^2 |xi|^2 / 4 pi) + eps^alpha) on a grid.

    The L1 translation modulus ||f(.-y) - f||_{L1} is measured over lattice
    shifts |y| < delta and fitted log-log to produce (C0, alpha); the report
    carries the minimal viable constant over the (eps, xi) grid and, when a
    frozen calibration constant is supplied, whether the bound holds with it.
    """
    box = f.box
    w = box.volume_weights()
    vals = f.values
    shifts = []
    moduli = []
    for ax in range(box.n):
        for steps in (1, 2, 3):
            y = steps * box.dx[ax]
            if y >= delta:
                continue
            shifted = np.zeros_like(vals)
            sl_src = [slice(None)] * box.n
            sl_dst = [slice(None)] * box.n
            sl_src[ax] = slice(0, vals.shape[ax] - steps)
            sl_dst[ax] = slice(steps, None)
            shifted[tuple(sl_dst)] = vals[tuple(sl_src)]
            moduli.append(float(np.sum(np.abs(shifted - vals) * w)))
            shifts.append(y)
    if len(shifts) < 2:
        raise ValueError("delta too small: no lattice shifts below it")
    logy = np.log(np.asarray(shifts))
    logm = np.log(np.maximum(np.asarray(moduli), 1e-300))
    slope, intercept = np.polyfit(logy, logm, 1)
    alpha_fit = float(slope)
    alpha_used = float(alpha) if alpha is not None else float(np.clip(alpha_fit, 0.05, 0.99))
    C0 = float(np.exp(intercept))

    eps_grid = np.asarray(eps_grid, dtype=float)
    if eps0 is not None:
        if np.any(eps_grid >= eps0):
            raise ValueError("eps grid must stay below eps0")
    xi_grid = np.atleast_2d(np.asarray(xi_grid, dtype=float))
    fhat = np.abs(fourier_samples(f, xi_grid))
    xi2 = np.sum(xi_grid**2, axis=1)
    C_min = 0.0
    worst = (0.0, 0.0)
    for eps in eps_grid:
        bound = np.exp(-(eps**2) * xi2 / (4 * np.pi)) + eps**alpha_used
        ratio = fhat / bound
        k = int(np.argmax(ratio))
        if ratio[k] > C_min:
            C_min = float(ratio[k])
            worst = (float(eps), float(np.sqrt(xi2[k])))
    holds = None if C_cal is None else bool(C_min <= C_cal * (1 + 1e-12))
    return RiemannLebesgueReport(
        C0, alpha_fit, alpha_used, C_min, holds, int(eps_grid.size * xi_grid.shape[0]), worst
    )


# ---------------------------------------------------------------------------
# frequency lattices and oracles

def frequency_lattice(dxi, rho: float, n: int = 3) -> np.ndarray:
    """Uniform lattice covering E(rho), excluding the zero-measure |xi'| = 0 line."""
    dxi = np.asarray(dxi, dtype=float)
    axes = []
    for j in range(n):
        k_max = int(np.floor(rho / dxi[j] + 1e-9))
        axes.append(dxi[j] * np.arange(-k_max, k_max + 1))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    tang = np.linalg.norm(pts[:, :-1], axis=1)
    keep = (tang > 1e-12) & (tang <= rho + 1e-12)
    return pts[keep]


def oracle_vector_transform(A_ext: VectorField, xis) -> np.ndarray:
    """F(A_ext)(xi) per frequency, shape (m, n)."""
    return fourier_samples(A_ext, xis)


def oracle_two_form_transform(A_ext: VectorField, xis) -> np.ndarray:
    """(F dA_ext)_{jk}(xi) = i (xi_j F_k - xi_k F_j), shape (m, n(n-1)/2)."""
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    FA = fourier_samples(A_ext, xis)
    n = xis.shape[1]
    out = np.zeros((xis.shape[0], n * (n - 1) // 2), dtype=np.complex128)
    for c, (j, k) in enumerate(pair_index(n)):
        out[:, c] = 1j * (xis[:, j] * FA[:, k] - xis[:, k] * FA[:, j])
    return out


# ---------------------------------------------------------------------------
# the stability sweep

@dataclass
class StabilityRecord:
    tau: float
    gap: float
    err_dA_Hm1: float
    err_q_Hm1: float
    err_A_Linf: float
    h: float
    rho: float
    n_freq: int
    branch: str
    fitted_exponents: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    error: str = ""


def _reconstruct_A_on_grid(grid: Grid, xis, F_perp, phi_values, dxi) -> np.ndarray:
    """Low-pass reconstruction A_rec = invF[tangential samples] + grad(phi_rec)."""
    n = grid.n
    cell = float(np.prod(dxi)) / (2 * np.pi) ** n
    mesh = grid.meshgrid(sparse=False)
    coords = np.stack([m.reshape(-1) for m in mesh], axis=1)
    phases = np.exp(1j * coords @ xis.T)  # (nodes, m)
    A_rec = np.zeros((n, coords.shape[0]), dtype=np.complex128)
    for j in range(n):
        A_rec[j] = phases @ (F_perp[:, j] * cell)
        # gradient part: d_j of the phi reconstruction multiplies by i xi_j
        A_rec[j] += phases @ (1j * xis[:, j] * phi_values * cell)
    return A_rec.reshape((n,) + grid.shape)


def sweep(
    grid: Grid,
    base: tuple,
    direction: tuple,
    taus,
    consts: dict,
    lattice: np.ndarray,
    h_probe: float,
    symbol: str = "stencil",
    include_phi: bool = True,
    progress=None,
) -> list[StabilityRecord]:
    """Empirical stability probe: gap vs reconstruction errors per scale tau.

    For each tau the second operator is (A1 + tau dA, q1 + tau dq); the row
    records the measured DtN gap, the schedule branch, and the reconstruction
    errors of the three pipelines against the known differences, with the
    H^{-1} errors through the truncated Parseval split and the sup-norm error
    through the Hodge-assembled low-pass reconstruction.  Failures are
    recorded per row and the sweep continues.
    """
    A1, q1 = base
    dA, dq = direction
    op1 = assemble(grid, A1, q1)
    map1 = assemble_dtn_map(op1)
    torus = build_cgo_torus(grid)
    v_cache: dict = {}
    dxi = _lattice_spacing(lattice)
    rho = float(consts.get("rho", np.max(np.abs(lattice))))
    records: list[StabilityRecord] = []
    for tau in taus:
        try:
            rec = _sweep_row(
                grid, A1, q1, dA, dq, float(tau), consts, lattice, dxi, rho,
                h_probe, symbol, include_phi, op1, map1, torus, v_cache,
            )
        except Exception as exc:  # keep the sweep alive, record the failure
            rec = StabilityRecord(
                float(tau), np.nan, np.nan, np.nan, np.nan, h_probe, rho,
                lattice.shape[0], "failed", error=f"{type(exc).__name__}: {exc}",
            )
        records.append(rec)
        if progress is not None:
            progress(rec)
    _fit_exponents(records)
    return records


def _lattice_spacing(lattice: np.ndarray) -> np.ndarray:
    out = []
    for j in range(lattice.shape[1]):
        vals = np.unique(np.round(lattice[:, j], 12))
        diffs = np.diff(vals)
        out.append(float(np.min(diffs[diffs > 1e-12])) if diffs.size else 1.0)
    return np.asarray(out)


def _sweep_row(
    grid, A1, q1, dA, dq, tau, consts, lattice, dxi, rho, h_probe,
    symbol, include_phi, op1, map1, torus, v_cache,
) -> StabilityRecord:
    A2 = VectorField(grid, A1.values + tau * dA.values)
    q2 = ScalarField(grid, q1.values + tau * dq.values)
    if tau == 0.0:
        return StabilityRecord(
            tau, 0.0, 0.0, 0.0, 0.0, h_probe, rho, lattice.shape[0], "zero-row"
        )
    op2 = assemble(grid, A2, q2)
    map2 = assemble_dtn_map(op2)
    gap = dtn_gap_norm(map1, map2)
    params = schedule_from_gap(gap, consts)
    h = params.h if params.branch == "small-gap" else h_probe

    pipe = RecoveryPipeline(
        grid, A1, q1, A2, q2, symbol=symbol, alpha=consts.get("alpha", 0.5),
        op1=op1, torus=torus, v_cache=v_cache,
    )
    # truth on the doubled box
    dA_field = VectorField(grid, tau * dA.values)
    dq_field = ScalarField(grid, tau * dq.values)
    dA_ext = extend_reflect_A(dA_field, grid)
    dq_ext = extend_reflect_q(dq_field, grid)
    truth_two_form = oracle_two_form_transform(dA_ext, lattice)
    truth_q = fourier_samples(dq_ext, lattice)

    m = lattice.shape[0]
    npairs = truth_two_form.shape[1]
    samp_two_form = np.zeros((m, npairs), dtype=np.complex128)
    samp_q = np.zeros(m, dtype=np.complex128)
    F_perp = np.zeros((m, grid.n), dtype=np.complex128)
    phi_minus = np.zeros(m, dtype=np.complex128)
    for i, xi in enumerate(lattice):
        s_da = fourier_sample_dA(pipe, xi, h)
        samp_two_form[i] = [s_da.two_form[p] for p in pair_index(grid.n)]
        F_perp[i] = s_da.m_mu1 * build_frame(xi).mu1 + s_da.m_mu2 * build_frame(xi).mu2
        s_q = fourier_sample_q(pipe, xi, h)
        samp_q[i] = s_q.value
        if include_phi:
            s_phi = fourier_sample_phi(pipe, xi, h)
            phi_minus[i] = -s_phi.value  # estimate of +F(phi_ext)(xi)

    m_hat_dA = l2_norm(VectorField(dA_ext.box, np.stack([c for c in _exterior(dA_ext)])))
    m_hat_q = l2_norm(dq_ext)
    err_dA = truncated_hminus1(lattice, samp_two_form - truth_two_form, rho, 0.0, dxi)
    err_q = truncated_hminus1(lattice, samp_q - truth_q, rho, 0.0, dxi)

    err_A = np.nan
    hodge_diag = {}
    if include_phi:
        A_rec = _reconstruct_A_on_grid(grid, lattice, F_perp, phi_minus, dxi)
        err_A = float(np.max(np.abs(A_rec - dA_field.values)))
        hodge_diag["A_truth_linf"] = linf_norm(dA_field)
    return StabilityRecord(
        tau, float(gap), float(err_dA), float(err_q), float(err_A),
        float(h), float(rho), int(m), params.branch,
        diagnostics={
            "m_hat_dA": m_hat_dA,
            "m_hat_q": m_hat_q,
            "truth_dA_Hm1_lattice": truncated_hminus1(lattice, truth_two_form, rho, 0.0, dxi),
            "truth_q_Hm1_lattice": truncated_hminus1(lattice, truth_q, rho, 0.0, dxi),
            **hodge_diag,
        },
    )


def _exterior(A_ext: VectorField):
    from .fields import exterior_derivative

    return exterior_derivative(A_ext).values


def _fit_exponents(records: list[StabilityRecord]):
    ok = [
        r for r in records
        if r.error == "" and r.gap > 0 and np.isfinite(r.gap)
    ]
    fits = {}
    for name in ("err_dA_Hm1", "err_q_Hm1", "err_A_Linf"):
        pts = [(r.gap, getattr(r, name)) for r in ok if getattr(r, name) > 0 and np.isfinite(getattr(r, name))]
        if len(pts) >= 2:
            lg = np.log([p[0] for p in pts])
            le = np.log([p[1] for p in pts])
            slope, _ = np.polyfit(lg, le, 1)
            fits[name] = float(slope)
    for r in records:
        r.fitted_exponents = dict(fits)
