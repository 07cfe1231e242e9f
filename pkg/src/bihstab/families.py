"""Built-in coefficient families: bumps, solenoidal bumps, gradient fields.

All families have closed-form derivatives so that divergence-free and
pure-gradient structure holds analytically, not just to stencil accuracy.
The smooth compactly supported bump is

    chi(t) = exp(1 - 1/(1 - t^2))  for |t| < 1,  0 otherwise,  t = |x - c|/w,

so every field vanishes identically outside the ball |x - c| < w.
"""

from __future__ import annotations

import numpy as np

from .grid import Box
from .fields import ScalarField, VectorField

__all__ = ["scalar_family", "vector_family", "FAMILIES"]


def _bump(t2):
    """exp(1 - 1/(1 - t^2)) on t^2 < 1, smooth and compactly supported."""
    inside = t2 < 1.0
    safe = np.where(inside, 1.0 - t2, 1.0)
    return np.where(inside, np.exp(1.0 - 1.0 / safe), 0.0)


def _bump_dt2(t2):
    """d/d(t^2) of the bump (used for exact gradients)."""
    inside = t2 < 1.0
    safe = np.where(inside, 1.0 - t2, 1.0)
    val = np.where(inside, np.exp(1.0 - 1.0 / safe), 0.0)
    return np.where(inside, -val / safe**2, 0.0)


def _radii(box: Box, center, width):
    mesh = box.meshgrid()
    t2 = sum((m - c) ** 2 for m, c in zip(mesh, center)) / width**2
    return mesh, t2


def scalar_family(box: Box, spec: dict) -> ScalarField:
    """Build a scalar coefficient from a family description."""
    fam = spec["family"]
    if fam == "zero":
        return ScalarField.zeros(box)
    if fam == "constant":
        return ScalarField(box, complex(spec.get("value", 1.0)) * np.ones(box.shape))
    amp = complex(spec.get("amplitude", 1.0))
    center = spec.get("center", [0.0] * (box.n - 1) + [-0.5])
    width = float(spec.get("width", 0.3))
    if fam == "gaussian":
        mesh = box.meshgrid()
        r2 = sum((m - c) ** 2 for m, c in zip(mesh, center))
        return ScalarField(box, amp * np.exp(-r2 / width**2) * np.ones(box.shape))
    if fam == "bump":
        _, t2 = _radii(box, center, width)
        return ScalarField(box, amp * _bump(t2) * np.ones(box.shape))
    raise ValueError(f"unknown scalar family {fam!r}")


def vector_family(box: Box, spec: dict) -> VectorField:
    """Build a vector coefficient from a family description.

    ``solenoidal_bump`` is curl(psi e_k) for a bump stream function psi, so
    its divergence vanishes identically; ``gradient_bump`` is grad(psi), so
    its exterior derivative vanishes identically.
    """
    fam = spec["family"]
    n = box.n
    if fam == "zero":
        return VectorField.zeros(box)
    if fam == "constant":
        vec = spec.get("value", [1.0] + [0.0] * (n - 1))
        vals = np.stack(
            [complex(v) * np.ones(box.shape, dtype=np.complex128) for v in vec]
        )
        return VectorField(box, vals)
    amp = complex(spec.get("amplitude", 1.0))
    center = spec.get("center", [0.0] * (n - 1) + [-0.5])
    width = float(spec.get("width", 0.3))
    mesh, t2 = _radii(box, center, width)
    dpsi = [
        amp * _bump_dt2(t2) * 2.0 * (m - c) / width**2
        for m, c in zip(mesh, center)
    ]
    if fam == "gradient_bump":
        vals = np.stack([d * np.ones(box.shape, dtype=np.complex128) for d in dpsi])
        return VectorField(box, vals)
    if fam == "solenoidal_bump":
        # curl of (0, ..., 0, psi, 0): components (d_2 psi, -d_1 psi, 0, ...)
        vals = np.zeros((n,) + box.shape, dtype=np.complex128)
        vals[0] = dpsi[1] * np.ones(box.shape)
        vals[1] = -dpsi[0] * np.ones(box.shape)
        return VectorField(box, vals)
    raise ValueError(f"unknown vector family {fam!r}")


def stream_bump(box: Box, spec: dict) -> ScalarField:
    """The scalar potential behind gradient_bump (for oracle comparisons)."""
    amp = complex(spec.get("amplitude", 1.0))
    center = spec.get("center", [0.0] * (box.n - 1) + [-0.5])
    width = float(spec.get("width", 0.3))
    _, t2 = _radii(box, center, width)
    return ScalarField(box, amp * _bump(t2) * np.ones(box.shape))


FAMILIES = {
    "scalar": ("zero", "constant", "gaussian", "bump"),
    "vector": ("zero", "constant", "gradient_bump", "solenoidal_bump"),
}
