"""Numerical toolkit for a first-order-perturbed biharmonic operator on a
half-space box: forward Navier solves, partial Dirichlet-to-Neumann maps,
reflected complex-geometric-optics fields, and Fourier-sample reconstruction
of the magnetic field, its Hodge scalar, and the electric potential."""

__version__ = "0.1.0"

from .grid import (
    Box,
    Grid,
    build_grid,
    default_grid,
    doubled_box,
    enclosing_radius,
    reflect_index,
)
from .fields import (
    AdmissiblePair,
    ScalarField,
    TwoForm,
    VectorField,
    exterior_derivative,
    extend_reflect_A,
    extend_reflect_q,
    hodge_decompose,
    interpolation_bound,
    read_field,
    semiclassical_h1_norm,
    sobolev_norm,
    write_field,
)

__all__ = [
    "__version__",
    "Box",
    "Grid",
    "build_grid",
    "default_grid",
    "doubled_box",
    "enclosing_radius",
    "reflect_index",
    "AdmissiblePair",
    "ScalarField",
    "TwoForm",
    "VectorField",
    "exterior_derivative",
    "extend_reflect_A",
    "extend_reflect_q",
    "hodge_decompose",
    "interpolation_bound",
    "read_field",
    "semiclassical_h1_norm",
    "sobolev_norm",
    "write_field",
]
