"""Structured 2D finite-volume meshes, cell fields and boundary conditions.

Cells live on a uniform Cartesian grid restricted to an active mask (this is
how the tee geometry is represented).  Cell unknowns are collocated at cell
centres; faces are enumerated once at construction into interior faces
(owner/neighbour pairs) and boundary faces (owner + outward normal + patch).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
OUTLET = "outlet"
BC_KINDS = (DIRICHLET, NEUMANN, OUTLET)


class BoundaryCondition:
    """A boundary condition for one patch of one field.

    kind is one of "dirichlet" (fixed face value), "neumann" (zero normal
    gradient, face copies the cell) or "outlet" (zero-gradient for the owning
    field; the distinction from "neumann" is bookkeeping for pressure
    anchoring).  value is a scalar for 1-component fields or a length-2
    sequence for vector fields; it is ignored for the zero-gradient kinds.
    """

    __slots__ = ("kind", "value")

    def __init__(self, kind, value=0.0):
        if kind not in BC_KINDS:
            raise ConfigurationError(f"unknown boundary condition kind {kind!r}")
        self.kind = kind
        self.value = np.atleast_1d(np.asarray(value, dtype=float))
        if not np.all(np.isfinite(self.value)):
            raise DataError("boundary condition value must be finite")

    def component(self, c):
        """Boundary value for component c (scalars broadcast)."""
        if self.value.size == 1:
            return float(self.value[0])
        return float(self.value[c])

    def __repr__(self):
        return f"BoundaryCondition({self.kind!r}, {self.value.tolist()})"


def dirichlet(value):
    return BoundaryCondition(DIRICHLET, value)


def neumann():
    return BoundaryCondition(NEUMANN)


def outlet():
    return BoundaryCondition(OUTLET)


class Mesh:
    """Uniform Cartesian mesh restricted to an active-cell mask.

    Do not call the constructor directly in normal use; build meshes through
    box_mesh / tee_mesh so that the geometry can be serialized.
    """

    def __init__(self, mask, dx, dy, patch_labeler, kind="custom", params=None):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2 or not mask.any():
            raise ConfigurationError("mask must be 2D with at least one active cell")
        if dx <= 0 or dy <= 0:
            raise ConfigurationError("cell sizes must be positive")
        self.mask = mask
        self.ny, self.nx = mask.shape
        self.dx = float(dx)
        self.dy = float(dy)
        self.kind = kind
        self.params = dict(params or {})

        cell_id = -np.ones((self.ny, self.nx), dtype=np.int64)
        jj, ii = np.nonzero(mask)
        self.n_cells = len(ii)
        cell_id[jj, ii] = np.arange(self.n_cells)
        self.cell_id = cell_id
        self.ci = ii.astype(np.int64)
        self.cj = jj.astype(np.int64)
        self.xc = (self.ci + 0.5) * self.dx
        self.yc = (self.cj + 0.5) * self.dy
        self.cell_volumes = np.full(self.n_cells, self.dx * self.dy)

        # interior faces, axis 0 = x-normal, axis 1 = y-normal
        own, nei, axis = [], [], []
        mx = mask[:, :-1] & mask[:, 1:]
        j, i = np.nonzero(mx)
        own.append(cell_id[j, i])
        nei.append(cell_id[j, i + 1])
        axis.append(np.zeros(len(i), dtype=np.int64))
        my = mask[:-1, :] & mask[1:, :]
        j, i = np.nonzero(my)
        own.append(cell_id[j, i])
        nei.append(cell_id[j + 1, i])
        axis.append(np.ones(len(i), dtype=np.int64))
        self.iface_owner = np.concatenate(own)
        self.iface_neigh = np.concatenate(nei)
        self.iface_axis = np.concatenate(axis)
        self.n_ifaces = len(self.iface_owner)

        # boundary faces: sides of active cells not shared with an active cell
        padded = np.zeros((self.ny + 2, self.nx + 2), dtype=bool)
        padded[1:-1, 1:-1] = mask
        bc_cell, bc_axis, bc_sign = [], [], []
        for ax, sgn, dj, di in ((0, -1, 0, -1), (0, 1, 0, 1), (1, -1, -1, 0), (1, 1, 1, 0)):
            nb = padded[1 + dj:self.ny + 1 + dj, 1 + di:self.nx + 1 + di]
            j, i = np.nonzero(mask & ~nb)
            bc_cell.append(cell_id[j, i])
            bc_axis.append(np.full(len(i), ax, dtype=np.int64))
            bc_sign.append(np.full(len(i), sgn, dtype=np.int64))
        self.bface_cell = np.concatenate(bc_cell)
        self.bface_axis = np.concatenate(bc_axis)
        self.bface_sign = np.concatenate(bc_sign)
        self.n_bfaces = len(self.bface_cell)

        names = patch_labeler(
            self.ci[self.bface_cell], self.cj[self.bface_cell],
            self.bface_axis, self.bface_sign,
        )
        self.patch_names = sorted(set(names))
        lookup = {n: k for k, n in enumerate(self.patch_names)}
        self.bface_patch = np.array([lookup[n] for n in names], dtype=np.int64)
        self._patch_faces = {
            n: np.nonzero(self.bface_patch == lookup[n])[0] for n in self.patch_names
        }

        self.iface_area = np.where(self.iface_axis == 0, self.dy, self.dx)
        self.bface_area = np.where(self.bface_axis == 0, self.dy, self.dx)
        # centre-to-centre distance across a face, per axis
        self.iface_dist = np.where(self.iface_axis == 0, self.dx, self.dy)
        self.bface_dist = np.where(self.bface_axis == 0, self.dx, self.dy)

        h = hashlib.sha256()
        h.update(mask.tobytes())
        h.update(np.float64([self.dx, self.dy]).tobytes())
        h.update(",".join(self.patch_names).encode())
        h.update(self.bface_patch.tobytes())
        self.signature = h.hexdigest()[:16]

    @property
    def h(self):
        """Characteristic cell size sqrt(dx*dy) used by the eddy-viscosity model."""
        return float(np.sqrt(self.dx * self.dy))

    def patch_faces(self, name):
        try:
            return self._patch_faces[name]
        except KeyError:
            raise ConfigurationError(f"mesh has no patch named {name!r}") from None

    def weights(self, components):
        """Volume weight vector matching a flattened (n_cells, components) field."""
        return np.repeat(self.cell_volumes, components)

    def same_as(self, other):
        return isinstance(other, Mesh) and other.signature == self.signature

    def __repr__(self):
        return (f"Mesh(kind={self.kind!r}, n_cells={self.n_cells}, "
                f"dx={self.dx}, dy={self.dy}, patches={self.patch_names})")


def box_mesh(nx, ny, dx, dy, left="left", right="right", bottom="bottom", top="top"):
    """Full rectangular mesh; side patch names may coincide to merge patches."""
    sides = {(0, -1): left, (0, 1): right, (1, -1): bottom, (1, 1): top}

    def label(ci, cj, axis, sign):
        return [sides[(a, s)] for a, s in zip(axis, sign)]

    mask = np.ones((ny, nx), dtype=bool)
    params = {"nx": nx, "ny": ny, "dx": dx, "dy": dy,
              "left": left, "right": right, "bottom": bottom, "top": top}
    return Mesh(mask, dx, dy, label, kind="box", params=params)


def tee_mesh(main_nx=64, main_ny=32, branch_nx=16, branch_ny=24, branch_i0=24, h=0.01):
    """Tee junction: horizontal main channel with a vertical branch on top.

    Main inlet on the left ("inlet_main"), branch inlet at the branch top
    ("inlet_branch"), outlet on the right end of the main channel, every other
    boundary face is "walls".
    """
    if branch_i0 < 0 or branch_i0 + branch_nx > main_nx:
        raise ConfigurationError("branch does not fit inside the main channel span")
    nx, ny = main_nx, main_ny + branch_ny
    mask = np.zeros((ny, nx), dtype=bool)
    mask[:main_ny, :] = True
    mask[main_ny:, branch_i0:branch_i0 + branch_nx] = True

    def label(ci, cj, axis, sign):
        names = []
        for i, j, a, s in zip(ci, cj, axis, sign):
            if a == 0 and s == -1 and i == 0 and j < main_ny:
                names.append("inlet_main")
            elif a == 0 and s == 1 and i == nx - 1 and j < main_ny:
                names.append("outlet")
            elif a == 1 and s == 1 and j == ny - 1:
                names.append("inlet_branch")
            else:
                names.append("walls")
        return names

    params = {"main_nx": main_nx, "main_ny": main_ny, "branch_nx": branch_nx,
              "branch_ny": branch_ny, "branch_i0": branch_i0, "h": h}
    return Mesh(mask, h, h, label, kind="tee", params=params)


class Field:
    """Cell-centred field with 1 or 2 components on a given mesh."""

    __slots__ = ("mesh", "values")

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != mesh.n_cells:
            raise DimensionError(
                f"field values shaped {values.shape} do not fit mesh with "
                f"{mesh.n_cells} cells")
        if values.shape[1] not in (1, 2):
            raise DimensionError("fields carry 1 or 2 components")
        if not np.all(np.isfinite(values)):
            raise DataError("field values must be finite")
        self.mesh = mesh
        self.values = values

    @property
    def components(self):
        return self.values.shape[1]

    def flat(self):
        """Cell-major, component-minor flattening (the on-disk layout)."""
        return self.values.reshape(-1)

    def copy(self):
        return Field(self.mesh, self.values.copy())

    def __repr__(self):
        return f"Field(components={self.components}, n_cells={self.mesh.n_cells})"


def check_compatible(f, g):
    if not f.mesh.same_as(g.mesh):
        raise DimensionError("fields live on different meshes")
    if f.components != g.components:
        raise DimensionError(
            f"component mismatch: {f.components} vs {g.components}")


def validate_bcs(mesh, bcs, components):
    """Every patch gets exactly one condition; Dirichlet values fit the field."""
    missing = [p for p in mesh.patch_names if p not in bcs]
    if missing:
        raise ConfigurationError(f"missing boundary conditions for patches {missing}")
    extra = [p for p in bcs if p not in mesh.patch_names]
    if extra:
        raise ConfigurationError(f"boundary conditions for unknown patches {extra}")
    for p, bc in bcs.items():
        if bc.kind == DIRICHLET and bc.value.size not in (1, components):
            raise ConfigurationError(
                f"patch {p!r}: Dirichlet value has {bc.value.size} components, "
                f"field has {components}")
