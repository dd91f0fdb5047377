"""Discrete finite-volume calculus on masked Cartesian meshes.

Two implementations of each operator exist on purpose: direct field functions
(gather/scatter over faces) and sparse-matrix builders used by the implicit
solvers and the reduced-operator assembly.  The test suite checks that both
paths agree to near round-off, so the matrices inherit the field semantics.

Boundary closure rules, shared by every operator:
  dirichlet        face value is the prescribed value; diffusive fluxes use a
                   half-cell distance to the face
  neumann / outlet face value copies the owning cell, diffusive flux is zero

Face interpolation is the arithmetic mean (uniform meshes).  The convective
term supports "central" (mean) and "upwind" (donor-cell by flux sign, ties to
the owner) interpolation of the transported quantity.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DimensionError
from .mesh import DIRICHLET, BoundaryCondition, Field, check_compatible, validate_bcs

SCHEMES = ("central", "upwind")


def inner_product(f, g):
    """Volume-weighted L2 inner product sum_c V_c (f_c . g_c)."""
    check_compatible(f, g)
    return float(np.sum(f.mesh.cell_volumes[:, None] * f.values * g.values))


def norm(f):
    return float(np.sqrt(max(inner_product(f, f), 0.0)))


def _bc_values(mesh, bcs, components):
    """Per-boundary-face (kind-code, value) arrays.

    kind code: 0 dirichlet, 1 copy (neumann/outlet).  values shaped
    (n_bfaces, components), zero where not dirichlet.
    """
    code = np.empty(mesh.n_bfaces, dtype=np.int64)
    vals = np.zeros((mesh.n_bfaces, components))
    for name in mesh.patch_names:
        bc = bcs[name]
        faces = mesh.patch_faces(name)
        if bc.kind == DIRICHLET:
            code[faces] = 0
            for c in range(components):
                vals[faces, c] = bc.component(c)
        else:
            code[faces] = 1
    return code, vals


def boundary_face_values(field, bcs):
    """Field values on boundary faces under the closure rules, (n_bfaces, c)."""
    mesh = field.mesh
    validate_bcs(mesh, bcs, field.components)
    code, vals = _bc_values(mesh, bcs, field.components)
    copy = code == 1
    out = vals.copy()
    out[copy] = field.values[mesh.bface_cell[copy]]
    return out


def _scatter(mesh, idx, weights, ncomp):
    out = np.zeros((mesh.n_cells, ncomp))
    for c in range(ncomp):
        out[:, c] = np.bincount(idx, weights=weights[:, c], minlength=mesh.n_cells)
    return out


def gradient(f, bcs):
    """Gauss cell gradient of a scalar field, returned as a 2-component Field."""
    if f.components != 1:
        raise DimensionError("gradient expects a 1-component field; see jacobian")
    mesh = f.mesh
    validate_bcs(mesh, bcs, 1)
    v = f.values[:, 0]
    own, nei, ax = mesh.iface_owner, mesh.iface_neigh, mesh.iface_axis
    fv = 0.5 * (v[own] + v[nei]) * mesh.iface_area
    bcode, bval = _bc_values(mesh, bcs, 1)
    bcell = mesh.bface_cell
    bv = np.where(bcode == 1, v[bcell], bval[:, 0]) * mesh.bface_area * mesh.bface_sign

    out = np.zeros((mesh.n_cells, 2))
    for a in 0, 1:
        m = ax == a
        mb = mesh.bface_axis == a
        idx = np.concatenate([own[m], nei[m], bcell[mb]])
        w = np.concatenate([fv[m], -fv[m], bv[mb]])
        out[:, a] = np.bincount(idx, weights=w, minlength=mesh.n_cells)
    out /= mesh.cell_volumes[:, None]
    return Field(mesh, out)


def jacobian(u, bcs):
    """Cell velocity-gradient tensor J[c, i, a] = d u_i / d x_a, plain array."""
    mesh = u.mesh
    validate_bcs(mesh, bcs, u.components)
    J = np.empty((mesh.n_cells, u.components, 2))
    for i in range(u.components):
        comp_bcs = {}
        for name, bc in bcs.items():
            if bc.kind == DIRICHLET:
                comp_bcs[name] = BoundaryCondition(DIRICHLET, bc.component(i))
            else:
                comp_bcs[name] = bc
        J[:, i, :] = gradient(Field(mesh, u.values[:, i]), comp_bcs).values
    return J


def divergence(u, bcs):
    """Face-flux divergence of a 2-component field as a scalar Field."""
    if u.components != 2:
        raise DimensionError("divergence expects a 2-component field")
    mesh = u.mesh
    validate_bcs(mesh, bcs, 2)
    own, nei, ax = mesh.iface_owner, mesh.iface_neigh, mesh.iface_axis
    un = 0.5 * (u.values[own, ax] + u.values[nei, ax]) * mesh.iface_area
    bcode, bval = _bc_values(mesh, bcs, 2)
    bcell, bax = mesh.bface_cell, mesh.bface_axis
    bv = np.where(bcode == 1, u.values[bcell, bax], bval[np.arange(mesh.n_bfaces), bax])
    bv = bv * mesh.bface_area * mesh.bface_sign
    idx = np.concatenate([own, nei, bcell])
    w = np.concatenate([un, -un, bv])
    out = np.bincount(idx, weights=w, minlength=mesh.n_cells) / mesh.cell_volumes
    return Field(mesh, out)


def laplacian(f, bcs):
    """Compact central Laplacian (per component for vector fields)."""
    mesh = f.mesh
    validate_bcs(mesh, bcs, f.components)
    own, nei = mesh.iface_owner, mesh.iface_neigh
    tif = mesh.iface_area / mesh.iface_dist
    bcode, bval = _bc_values(mesh, bcs, f.components)
    bcell = mesh.bface_cell
    dirb = bcode == 0
    tbf = (mesh.bface_area / (0.5 * mesh.bface_dist))[dirb]
    dcell = bcell[dirb]

    out = np.zeros((mesh.n_cells, f.components))
    for c in range(f.components):
        v = f.values[:, c]
        flux = tif * (v[nei] - v[own])
        bflux = tbf * (bval[dirb, c] - v[dcell])
        idx = np.concatenate([own, nei, dcell])
        w = np.concatenate([flux, -flux, bflux])
        out[:, c] = np.bincount(idx, weights=w, minlength=mesh.n_cells)
    out /= mesh.cell_volumes[:, None]
    return Field(mesh, out)


def face_fluxes(u, bcs):
    """Signed volumetric flux through every face of the carrier field u.

    Interior fluxes are oriented owner -> neighbour; boundary fluxes are
    outward.  Returns (interior, boundary) arrays of area * u_n.
    """
    if u.components != 2:
        raise DimensionError("flux carrier must have 2 components")
    mesh = u.mesh
    validate_bcs(mesh, bcs, 2)
    own, nei, ax = mesh.iface_owner, mesh.iface_neigh, mesh.iface_axis
    fi = 0.5 * (u.values[own, ax] + u.values[nei, ax]) * mesh.iface_area
    bcode, bval = _bc_values(mesh, bcs, 2)
    bcell, bax = mesh.bface_cell, mesh.bface_axis
    ub = np.where(bcode == 1, u.values[bcell, bax], bval[np.arange(mesh.n_bfaces), bax])
    fb = ub * mesh.bface_area * mesh.bface_sign
    return fi, fb


def convective_term(u, w, bcs_u, bcs_w, scheme="central"):
    """div(u w): flux-form convection of w (scalar or vector) by carrier u."""
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown convection scheme {scheme!r}")
    if not u.mesh.same_as(w.mesh):
        raise DimensionError("carrier and transported fields live on different meshes")
    mesh = u.mesh
    validate_bcs(mesh, bcs_w, w.components)
    fi, fb = face_fluxes(u, bcs_u)
    own, nei = mesh.iface_owner, mesh.iface_neigh
    bcode, bval = _bc_values(mesh, bcs_w, w.components)
    bcell = mesh.bface_cell

    if scheme == "central":
        wf = 0.5 * (w.values[own] + w.values[nei])
    else:
        donor = np.where(fi >= 0.0, own, nei)
        wf = w.values[donor]
    # boundary transported value: copy kinds use the cell value, dirichlet
    # faces the prescribed value; upwind outflow always takes the cell value
    wb = np.where((bcode == 1)[:, None], w.values[bcell], bval)
    if scheme == "upwind":
        wb = np.where((fb >= 0.0)[:, None], w.values[bcell], wb)

    idx = np.concatenate([own, nei, bcell])
    weights = np.concatenate([fi[:, None] * wf, -fi[:, None] * wf, fb[:, None] * wb])
    out = _scatter(mesh, idx, weights, w.components) / mesh.cell_volumes[:, None]
    return Field(mesh, out)


def grad_transpose_divergence(u, bcs_u, weight=None):
    """div(k (grad u)^T) with optional per-cell scalar weight k.

    Face tensor values interpolate the cell Jacobians (owner copy on the
    boundary); the weight interpolates the same way.  Used for the transpose
    part of the viscous stress and its turbulent counterpart.
    """
    mesh = u.mesh
    J = jacobian(u, bcs_u)  # (n, i, a)
    own, nei, ax = mesh.iface_owner, mesh.iface_neigh, mesh.iface_axis
    bcell, bax = mesh.bface_cell, mesh.bface_axis
    # flux of output component i through an axis-a face is k * d u_a / d x_i
    ti = 0.5 * (J[own, ax, :] + J[nei, ax, :])   # (n_if, i)
    tb = J[bcell, bax, :]
    if weight is not None:
        k = weight.values[:, 0] if isinstance(weight, Field) else np.asarray(weight)
        ti *= (0.5 * (k[own] + k[nei]))[:, None]
        tb = tb * k[bcell][:, None]
    ti *= mesh.iface_area[:, None]
    tb = tb * (mesh.bface_area * mesh.bface_sign)[:, None]
    idx = np.concatenate([own, nei, bcell])
    w = np.concatenate([ti, -ti, tb])
    out = _scatter(mesh, idx, w, u.components) / mesh.cell_volumes[:, None]
    return Field(mesh, out)


# ---------------------------------------------------------------------------
# sparse-matrix builders (same numerics as the field functions)
# ---------------------------------------------------------------------------

def _bc_ncomp(bcs, minimum=1):
    n = minimum
    for bc in bcs.values():
        if bc.kind == DIRICHLET:
            n = max(n, bc.value.size)
    return n


def laplacian_matrix(mesh, bcs, component=0):
    """(A, b) with laplacian(f) == A f + b for the given component's values."""
    ncomp = _bc_ncomp(bcs, component + 1)
    validate_bcs(mesh, bcs, ncomp)
    own, nei = mesh.iface_owner, mesh.iface_neigh
    vol = mesh.cell_volumes
    t = mesh.iface_area / mesh.iface_dist
    rows = np.concatenate([own, own, nei, nei])
    cols = np.concatenate([own, nei, nei, own])
    vals = np.concatenate([-t, t, -t, t])
    b = np.zeros(mesh.n_cells)
    bcode, bval = _bc_values(mesh, bcs, ncomp)
    dirb = bcode == 0
    if dirb.any():
        cells = mesh.bface_cell[dirb]
        tb = mesh.bface_area[dirb] / (0.5 * mesh.bface_dist[dirb])
        rows = np.concatenate([rows, cells])
        cols = np.concatenate([cols, cells])
        vals = np.concatenate([vals, -tb])
        np.add.at(b, cells, tb * bval[dirb, component])
    A = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_cells,) * 2).tocsr()
    A = sp.diags(1.0 / vol) @ A
    return A, b / vol


def gradient_matrix(mesh, bcs):
    """(Gx, Gy, bx, by) with gradient(f) == (Gx f + bx, Gy f + by)."""
    validate_bcs(mesh, bcs, 1)
    own, nei, ax = mesh.iface_owner, mesh.iface_neigh, mesh.iface_axis
    vol = mesh.cell_volumes
    bcode, bval = _bc_values(mesh, bcs, 1)
    out = []
    for a in 0, 1:
        m = ax == a
        o, n = own[m], nei[m]
        half = 0.5 * mesh.iface_area[m]
        rows = np.concatenate([o, o, n, n])
        cols = np.concatenate([o, n, o, n])
        vals = np.concatenate([half, half, -half, -half])
        b = np.zeros(mesh.n_cells)
        mb = mesh.bface_axis == a
        cells = mesh.bface_cell[mb]
        sa = (mesh.bface_sign * mesh.bface_area)[mb]
        copy = bcode[mb] == 1
        rows = np.concatenate([rows, cells[copy]])
        cols = np.concatenate([cols, cells[copy]])
        vals = np.concatenate([vals, sa[copy]])
        np.add.at(b, cells[~copy], sa[~copy] * bval[mb][~copy, 0])
        G = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_cells,) * 2).tocsr()
        out.append(sp.diags(1.0 / vol) @ G)
        out.append(b / vol)
    return out[0], out[2], out[1], out[3]


def divergence_matrix(mesh, bcs):
    """(Dx, Dy, b) with divergence(u) == Dx ux + Dy uy + b.

    b carries the prescribed Dirichlet face fluxes, so Dx/Dy alone give the
    divergence response to the cell values (what a projection can correct).
    """
    validate_bcs(mesh, bcs, 2)
    own, nei, ax = mesh.iface_owner, mesh.iface_neigh, mesh.iface_axis
    vol = mesh.cell_volumes
    bcode, bval = _bc_values(mesh, bcs, 2)
    b = np.zeros(mesh.n_cells)
    mats = []
    for a in 0, 1:
        m = ax == a
        o, n = own[m], nei[m]
        half = 0.5 * mesh.iface_area[m]
        rows = np.concatenate([o, o, n, n])
        cols = np.concatenate([o, n, o, n])
        vals = np.concatenate([half, half, -half, -half])
        mb = mesh.bface_axis == a
        cells = mesh.bface_cell[mb]
        sa = (mesh.bface_sign * mesh.bface_area)[mb]
        copy = bcode[mb] == 1
        rows = np.concatenate([rows, cells[copy]])
        cols = np.concatenate([cols, cells[copy]])
        vals = np.concatenate([vals, sa[copy]])
        np.add.at(b, cells[~copy], sa[~copy] * bval[mb][~copy, a])
        D = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_cells,) * 2).tocsr()
        mats.append(sp.diags(1.0 / vol) @ D)
    return mats[0], mats[1], b / vol


def convection_matrix(mesh, u, bcs_u, bcs_w, scheme, w_components):
    """(C, B) with convective_term(u, w) == C w[:, c] + B[:, c] per component."""
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown convection scheme {scheme!r}")
    validate_bcs(mesh, bcs_w, w_components)
    fi, fb = face_fluxes(u, bcs_u)
    own, nei = mesh.iface_owner, mesh.iface_neigh
    vol = mesh.cell_volumes
    bcode, bval = _bc_values(mesh, bcs_w, w_components)
    bcell = mesh.bface_cell

    if scheme == "central":
        rows = np.concatenate([own, own, nei, nei])
        cols = np.concatenate([own, nei, own, nei])
        hf = 0.5 * fi
        vals = np.concatenate([hf, hf, -hf, -hf])
    else:
        donor = np.where(fi >= 0.0, own, nei)
        rows = np.concatenate([own, nei])
        cols = np.concatenate([donor, donor])
        vals = np.concatenate([fi, -fi])

    B = np.zeros((mesh.n_cells, w_components))
    outflow = fb >= 0.0 if scheme == "upwind" else np.zeros(mesh.n_bfaces, bool)
    use_cell = (bcode == 1) | outflow
    rows = np.concatenate([rows, bcell[use_cell]])
    cols = np.concatenate([cols, bcell[use_cell]])
    vals = np.concatenate([vals, fb[use_cell]])
    fixed = ~use_cell
    for c in range(w_components):
        np.add.at(B[:, c], bcell[fixed], fb[fixed] * bval[fixed, c])
    C = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_cells,) * 2).tocsr()
    return sp.diags(1.0 / vol) @ C, B / vol[:, None]
