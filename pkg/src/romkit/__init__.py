"""romkit: finite-volume snapshot generation, POD-Galerkin reduction and
RBF-interpolated eddy viscosity for parametrized thermal mixing flows."""

__version__ = "0.1.0"

from . import (  # noqa: F401
    errors,
    evaluation,
    fom,
    galerkin,
    lifting,
    mesh,
    operators,
    pod,
    rbf,
    rom,
    storage,
)
