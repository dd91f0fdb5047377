"""Boundary lifting: control functions that homogenize Dirichlet data.

A control function (lift) carries unit value in the parametrized component on
its own Dirichlet patch and zero on every other Dirichlet patch, so snapshots
minus coefficient-scaled lifts have homogeneous boundary values and can be
compressed by POD with parameter-independent modes.  Lifts are computed from
a steady diffusion (potential) solve; velocity lifts can additionally be made
discretely divergence-free by a pressure projection, which changes interior
values only and keeps the declared boundary data intact.

The scaling coefficient of a lift at a given boundary condition set is the
signed value of the parametrized component there (e.g. a downward inflow of
magnitude 0.77 lifts with coefficient -0.77 against a +1 unit lift).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DataError, DimensionError
from .mesh import BoundaryCondition, Field, Mesh, dirichlet, neumann, validate_bcs
from .operators import (
    boundary_face_values,
    divergence_matrix,
    gradient_matrix,
    laplacian_matrix,
)
from .pod import SnapshotSet


@dataclass
class LiftingFunction:
    """A control field for one Dirichlet patch.

    kind is "velocity" or "scalar"; component is the parametrized vector
    component (0 for scalars); bcs is the lift's own boundary closure (unit
    Dirichlet on the patch, zero on other Dirichlet patches, Neumann
    elsewhere); method records how the field was built.
    """

    kind: str
    patch: str
    component: int
    field: Field
    bcs: dict
    method: str = "potential"

    @property
    def mesh(self):
        return self.field.mesh

    def flat(self):
        return self.field.flat()

    def patch_face_values(self, patch):
        """Closure face values of the lift restricted to one patch."""
        vals = boundary_face_values(self.field, self.bcs)
        return vals[self.mesh.patch_faces(patch)]

    def boundary_residual(self):
        """Max deviation from (unit on own patch, zero on other Dirichlet)."""
        worst = 0.0
        for patch, bc in self.bcs.items():
            if bc.kind != "dirichlet":
                continue
            vals = self.patch_face_values(patch)
            target = np.zeros(self.field.components)
            if patch == self.patch:
                target[self.component] = 1.0
            worst = max(worst, float(np.abs(vals - target).max()))
        return worst


def _lift_bcs(bcs, patch, components, component):
    out = {}
    for name, bc in bcs.items():
        if bc.kind == "dirichlet":
            val = np.zeros(components)
            if name == patch:
                val[component] = 1.0
            out[name] = dirichlet(val if components > 1 else float(val[0]))
        else:
            out[name] = neumann()
    return out


def _projection_pressure_bcs(bcs):
    """Dirichlet reference at outflow patches, Neumann elsewhere."""
    return {name: (dirichlet(0.0) if bc.kind == "outlet" else neumann())
            for name, bc in bcs.items()}


def make_solenoidal(field, bcs_u, bcs_p=None):
    """Project a velocity field onto the discretely divergence-free space.

    Solves the composite divergence(gradient(.)) problem and subtracts the
    gradient correction; boundary face data (the bc closure) is unchanged.
    When no pressure Dirichlet patch exists, the potential is anchored at
    cell 0 (enclosed domain).
    """
    mesh = field.mesh
    if bcs_p is None:
        bcs_p = _projection_pressure_bcs(bcs_u)
    Gx, Gy, _, _ = gradient_matrix(mesh, bcs_p)
    Dx, Dy, bdiv = divergence_matrix(mesh, bcs_u)
    L = (Dx @ Gx + Dy @ Gy).tocsc()
    rhs = Dx @ field.values[:, 0] + Dy @ field.values[:, 1] + bdiv
    if not any(bc.kind == "dirichlet" for bc in bcs_p.values()):
        L = L.tolil()
        L[0, :] = 0.0
        L[0, 0] = 1.0
        L = L.tocsc()
        rhs[0] = 0.0
    dp = spla.splu(L).solve(rhs)
    corrected = field.values - np.column_stack([Gx @ dp, Gy @ dp])
    out = Field(mesh, corrected)
    resid = np.abs(Dx @ corrected[:, 0] + Dy @ corrected[:, 1] + bdiv).max()
    if resid > 1e-8 * max(1.0, np.abs(corrected).max()) / min(mesh.dx, mesh.dy):
        raise DataError(f"projection left divergence {resid:.3e}")
    return out


def compute_control_function(mesh, bcs, patch, solenoidal=False,
                             method="potential", snapshots=None):
    """Build the control function for one Dirichlet patch.

    method "potential" solves the steady diffusion problem described above;
    method "snapshot-average" uses the mean of the given snapshot columns
    instead (it generally does not have exact unit boundary values, which is
    why it is not the default).  solenoidal=True additionally projects a
    velocity lift onto the divergence-free space.
    """
    if patch not in bcs:
        raise ConfigurationError(f"unknown patch {patch!r}")
    if bcs[patch].kind != "dirichlet":
        raise ConfigurationError(f"patch {patch!r} is not a Dirichlet patch")
    components = max(max(bc.value.size for bc in bcs.values()
                         if bc.kind == "dirichlet"), 1)
    validate_bcs(mesh, bcs, components)
    kind = "velocity" if components == 2 else "scalar"
    ref = bcs[patch].component(0) if components == 1 else None
    if components == 1:
        component = 0
    else:
        vec = np.array([bcs[patch].component(c) for c in range(components)])
        component = int(np.argmax(np.abs(vec)))
    lift_bcs = _lift_bcs(bcs, patch, components, component)

    if method == "snapshot-average":
        if snapshots is None:
            raise ConfigurationError(
                "snapshot-average lifting needs a snapshot set")
        if not snapshots.mesh.same_as(mesh) or snapshots.components != components:
            raise DimensionError("snapshot set does not match the field space")
        vals = snapshots.matrix.mean(axis=1).reshape(mesh.n_cells, components)
        field = Field(mesh, vals)
    elif method == "potential":
        cols = np.zeros((mesh.n_cells, components))
        A, b = laplacian_matrix(mesh, lift_bcs, component=component)
        cols[:, component] = spla.splu(A.tocsc()).solve(-b)
        field = Field(mesh, cols if components > 1 else cols[:, 0])
    else:
        raise ConfigurationError(f"unknown lifting method {method!r}")

    if solenoidal:
        if components != 2:
            raise ConfigurationError(
                "solenoidal projection applies to velocity lifts only")
        # outflow patches are identified from the physical bc set; the lift's
        # own closure has already demoted them to plain Neumann
        field = make_solenoidal(field, lift_bcs,
                                bcs_p=_projection_pressure_bcs(bcs))
    return LiftingFunction(kind=kind, patch=patch, component=component,
                           field=field, bcs=lift_bcs, method=method)


def scaling_coefficient(lift, bcs):
    """Signed lift coefficient implied by a physical bc set: the value of the
    parametrized component on the lift's patch."""
    bc = bcs.get(lift.patch)
    if bc is None or bc.kind != "dirichlet":
        raise ConfigurationError(
            f"bc set has no Dirichlet data on patch {lift.patch!r}")
    return float(bc.component(lift.component))


def coefficient_table(lifts, bcs_per_mu, n_time):
    """(n_lifts, n_mu*n_time) table of scaling coefficients, time-constant."""
    rows = []
    for lift in lifts:
        per_mu = [scaling_coefficient(lift, bcs) for bcs in bcs_per_mu]
        rows.append(np.repeat(per_mu, n_time))
    return np.array(rows, dtype=float)


def homogenize(snaps, lifts, coefficients):
    """Subtract coefficient-scaled lifts from every snapshot column."""
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape != (len(lifts), snaps.n_columns):
        raise DimensionError(
            f"coefficient table is {coefficients.shape}, expected "
            f"({len(lifts)}, {snaps.n_columns})")
    matrix = snaps.matrix.copy()
    for lift, row in zip(lifts, coefficients):
        if not lift.mesh.same_as(snaps.mesh) \
                or lift.field.components != snaps.components:
            raise DimensionError("lift does not match the snapshot space")
        matrix -= np.outer(lift.flat(), row)
    return SnapshotSet(mesh=snaps.mesh, components=snaps.components,
                       matrix=matrix, mus=snaps.mus, times=snaps.times,
                       kind=snaps.kind)


def reapply(values, lifts, coefficients):
    """Add coefficient-scaled lifts back; exact inverse of homogenize."""
    coefficients = np.asarray(coefficients, dtype=float).reshape(-1)
    if coefficients.size != len(lifts):
        raise DimensionError("one coefficient per lift required")
    was_field = isinstance(values, Field)
    flat = values.flat() if was_field else np.asarray(values, dtype=float).copy()
    for lift, c in zip(lifts, coefficients):
        flat = flat + c * lift.flat()
    if was_field:
        return Field(values.mesh,
                     flat.reshape(values.mesh.n_cells, values.components))
    return flat


def boundary_residual(snaps, lifts, coefficients, bcs_per_mu, patches=None):
    """Worst homogenized face value over the parametrized patches.

    Face values come from each column's own physical bc closure minus the
    coefficient-scaled lift closures; this pins the coefficient/sign algebra.
    """
    coefficients = np.asarray(coefficients, dtype=float)
    patches = patches or [l.patch for l in lifts]
    worst = 0.0
    for ki in range(snaps.n_mu):
        bcs = bcs_per_mu[ki]
        for ji in range(snaps.n_time):
            col = snaps.col_index(ki, ji)
            f = snaps.column_field(col)
            vals = boundary_face_values(f, bcs)
            for lift, row in zip(lifts, coefficients):
                lvals = boundary_face_values(lift.field, lift.bcs)
                vals = vals - row[col] * lvals
            for patch in patches:
                idx = snaps.mesh.patch_faces(patch)
                if idx.size:
                    worst = max(worst, float(np.abs(vals[idx]).max()))
    return worst


def save_lifts(directory, lifts):
    import json
    from pathlib import Path

    from .storage import save_field

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = []
    for i, lift in enumerate(lifts):
        save_field(directory / f"lift_{i:02d}.romf", lift.field)
        meta.append({"kind": lift.kind, "patch": lift.patch,
                     "component": lift.component, "method": lift.method,
                     "bcs": {name: {"kind": bc.kind,
                                    "value": [float(v) for v in bc.value]}
                             for name, bc in lift.bcs.items()}})
    (directory / "lifts.json").write_text(json.dumps(meta, indent=1))


def load_lifts(directory, mesh):
    import json
    from pathlib import Path

    from .storage import load_field

    directory = Path(directory)
    meta = json.loads((directory / "lifts.json").read_text())
    lifts = []
    for i, m in enumerate(meta):
        field = load_field(directory / f"lift_{i:02d}.romf", mesh)
        bcs = {name: BoundaryCondition(d["kind"], np.asarray(d["value"]))
               for name, d in m["bcs"].items()}
        lifts.append(LiftingFunction(kind=m["kind"], patch=m["patch"],
                                     component=int(m["component"]), field=field,
                                     bcs=bcs, method=m["method"]))
    return lifts
