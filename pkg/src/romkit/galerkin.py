"""Galerkin projection of the discrete flow operators onto POD bases.

Every reduced entry is a volume-weighted inner product of a discrete-operator
output with a mode, using exactly the same sparse operator builders the
full-order solver steps with; with the central convection scheme all terms
are bilinear in their arguments, so the reduced tensors reproduce the
full-order right-hand side exactly on the basis span.

Velocity fields decompose as u = sum_d uD_d zeta_d + sum_j a_j phi_j, so each
operator yields mode-mode blocks plus lift-interaction blocks (the lift
substituted into each slot).  The temperature lift enters as one combined
field with the physical boundary closure, since its boundary data is not
parametrized.  Supremizer modes enrich the velocity basis so the reduced
divergence constraint can determine the pressure coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, fields as dc_fields

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DataError, DimensionError, EnrichmentError
from .mesh import Field, dirichlet
from .operators import (
    convection_matrix,
    divergence_matrix,
    grad_transpose_divergence,
    gradient_matrix,
    jacobian,
    laplacian_matrix,
)
from .pod import PODBasis


def homogeneous_bcs(bcs):
    """Same bc kinds with every Dirichlet value zeroed."""
    return {name: (dirichlet(np.zeros(bc.value.size)) if bc.kind == "dirichlet"
                   else bc)
            for name, bc in bcs.items()}


@dataclass
class ReducedOperators:
    """Dense reduced operators; empty arrays mean 'not assembled'.

    Index conventions (k is always the projection/output index):
      mass[k, j]                gram of velocity modes
      diffusion[k, j]           <lap phi_j, phi_k>
      diffusion_transpose[k, j] <div(grad phi_j)^T, phi_k>
      convection[i, j, k]       <div(phi_i phi_j), phi_k>   (i carries the flux)
      turb_diffusion[i, j, k]   <xi_i * lap phi_j, phi_k>
      turb_transpose[i, j, k]   <div(xi_i (grad phi_j)^T), phi_k>
      pressure_grad[k, i]       <grad psi_i, phi_k>
      div_modes[i, j]           <div phi_j, psi_i>
      conv_lift_flux[d, j, k]   <div(zeta_d phi_j), phi_k>
      conv_lift_carried[d,j,k]  <div(phi_j zeta_d), phi_k>
      conv_lift_lift[d, e, k]   <div(zeta_d zeta_e), phi_k>
      diff_lift[d, k]           <lap zeta_d + div(grad zeta_d)^T, phi_k>
      turb_lift[i, d, k]        <xi_i lap zeta_d + div(xi_i (grad zeta_d)^T), phi_k>
      div_lift[d, i]            <div zeta_d, psi_i>
      thermal_mass[k, j]        gram of temperature modes
      thermal_convection[i,j,k] <div(phi_i chi_j), chi_k>
      thermal_diffusion[k, j]   <lap chi_j, chi_k>
      thermal_turb[i, j, k]     <xi_i lap chi_j, chi_k>
      th_conv_mode_lift[i, k]   <div(phi_i theta_lift), chi_k>
      th_conv_lift_mode[d,j,k]  <div(zeta_d chi_j), chi_k>
      th_conv_lift_lift[d, k]   <div(zeta_d theta_lift), chi_k>
      th_diffusion_lift[k]      <lap theta_lift, chi_k>
      th_turb_lift[i, k]        <xi_i lap theta_lift, chi_k>
      xi_mean[i]                volume average of xi_i
    """

    mass: np.ndarray = dc_field(default_factory=lambda: np.empty((0, 0)))
    diffusion: np.ndarray = dc_field(default_factory=lambda: np.empty((0, 0)))
    diffusion_transpose: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0)))
    convection: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0, 0)))
    turb_diffusion: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0, 0)))
    turb_transpose: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0, 0)))
    pressure_grad: np.ndarray = dc_field(default_factory=lambda: np.empty((0, 0)))
    div_modes: np.ndarray = dc_field(default_factory=lambda: np.empty((0, 0)))
    conv_lift_flux: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0, 0)))
    conv_lift_carried: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0, 0)))
    conv_lift_lift: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0, 0)))
    diff_lift: np.ndarray = dc_field(default_factory=lambda: np.empty((0, 0)))
    turb_lift: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0, 0)))
    div_lift: np.ndarray = dc_field(default_factory=lambda: np.empty((0, 0)))
    thermal_mass: np.ndarray = dc_field(default_factory=lambda: np.empty((0, 0)))
    thermal_convection: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0, 0)))
    thermal_diffusion: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0)))
    thermal_turb: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0, 0)))
    th_conv_mode_lift: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0)))
    th_conv_lift_mode: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0, 0)))
    th_conv_lift_lift: np.ndarray = dc_field(
        default_factory=lambda: np.empty((0, 0)))
    th_diffusion_lift: np.ndarray = dc_field(
        default_factory=lambda: np.empty(0))
    th_turb_lift: np.ndarray = dc_field(default_factory=lambda: np.empty((0, 0)))
    xi_mean: np.ndarray = dc_field(default_factory=lambda: np.empty(0))
    nu: float = 0.0
    alpha: float = 0.0
    pr_t: float = 1.0
    n_sup: int = 0

    @property
    def n_velocity(self):
        return self.mass.shape[0]

    @property
    def n_pressure(self):
        return self.pressure_grad.shape[1]

    @property
    def n_thermal(self):
        return self.thermal_mass.shape[0]

    @property
    def n_turb(self):
        return self.turb_diffusion.shape[0]

    def validate(self):
        for f in dc_fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray) and not np.all(np.isfinite(v)):
                raise DataError(f"reduced operator {f.name} has non-finite entries")
        return self


def combine(*parts, nu=None, alpha=None, pr_t=None):
    """Merge partial operator sets; later parts fill arrays the earlier left
    empty.  Physical constants are set from the keyword arguments."""
    out = ReducedOperators()
    for part in parts:
        for f in dc_fields(out):
            v = getattr(part, f.name)
            if isinstance(v, np.ndarray) and v.size:
                setattr(out, f.name, v)
        out.n_sup = max(out.n_sup, part.n_sup)
    if nu is not None:
        out.nu = float(nu)
    if alpha is not None:
        out.alpha = float(alpha)
    if pr_t is not None:
        out.pr_t = float(pr_t)
    return out.validate()


def _check_space(basis, mesh, components, what):
    if not basis.mesh.same_as(mesh):
        raise DimensionError(f"{what} basis lives on a different mesh")
    if basis.components != components:
        raise DimensionError(f"{what} basis must have {components} components")


def _columns(basis):
    return basis.modes


def _as_fields(matrix, mesh, components):
    return [Field(mesh, matrix[:, j].reshape(mesh.n_cells, components))
            for j in range(matrix.shape[1])]


def _apply_componentwise(A, matrix, n_cells, components):
    """Apply a scalar-space sparse matrix to each component of flat columns."""
    out = np.empty_like(matrix)
    cols = matrix.reshape(n_cells, components, -1)
    res = out.reshape(n_cells, components, -1)
    for c in range(components):
        res[:, c, :] = A @ cols[:, c, :]
    return out


def _gram(weights, X, Y):
    return X.T @ (weights[:, None] * Y)


def _gtd_face_tensors(mesh, fields_with_bcs):
    """Area-scaled face flux tensors of the transpose-gradient operator.

    Returns (interior, boundary) arrays of shape (n_faces, 2, len(fields));
    entry [f, i, j] is the unweighted flux of output component i for field j
    through face f, so that contracting against owner/neighbour differences
    (or boundary owner values) of a test field reproduces the volume inner
    product with grad_transpose_divergence.
    """
    own, nei, ax = mesh.iface_owner, mesh.iface_neigh, mesh.iface_axis
    bcell, bax = mesh.bface_cell, mesh.bface_axis
    r = len(fields_with_bcs)
    Aif = np.empty((own.size, 2, r))
    Abf = np.empty((bcell.size, 2, r))
    for j, (f, bcs) in enumerate(fields_with_bcs):
        J = jacobian(f, bcs)
        Aif[:, :, j] = 0.5 * (J[own, ax, :] + J[nei, ax, :])
        Abf[:, :, j] = J[bcell, bax, :]
    Aif *= mesh.iface_area[:, None, None]
    Abf *= (mesh.bface_area * mesh.bface_sign)[:, None, None]
    return Aif, Abf


def assemble_velocity_operators(phi, psi, xi, lifts, bcs_u, bcs_p,
                                scheme="central"):
    """Reduced momentum/continuity blocks; see ReducedOperators for layout."""
    mesh = phi.mesh
    _check_space(phi, mesh, 2, "velocity")
    _check_space(psi, mesh, 1, "pressure")
    _check_space(xi, mesh, 1, "eddy-viscosity")
    n = mesh.n_cells
    w2 = mesh.weights(2)
    w1 = mesh.weights(1)
    hom_u = homogeneous_bcs(bcs_u)
    hom_p = homogeneous_bcs(bcs_p)
    Phi = _columns(phi)
    Psi = _columns(psi)
    Xi = _columns(xi)
    ru = Phi.shape[1]
    rp = Psi.shape[1]
    rnu = Xi.shape[1]
    nd = len(lifts)
    ops = ReducedOperators()

    ops.mass = _gram(w2, Phi, Phi)

    # laplacian and transpose-divergence of modes and lifts
    A_lap = laplacian_matrix(mesh, hom_u, component=0)[0].tocsr()
    lap_modes = _apply_componentwise(A_lap, Phi, n, 2)
    ops.diffusion = _gram(w2, Phi, lap_modes)
    phi_fields = _as_fields(Phi, mesh, 2)
    gtd_modes = np.column_stack(
        [grad_transpose_divergence(f, hom_u).flat() for f in phi_fields])
    ops.diffusion_transpose = _gram(w2, Phi, gtd_modes)

    lift_fields = [l.field for l in lifts]
    lap_lifts = np.empty((2 * n, nd))
    gtd_lifts = np.empty((2 * n, nd))
    for d, l in enumerate(lifts):
        lap_l = np.empty((n, 2))
        for c in range(2):
            A_c, b_c = laplacian_matrix(mesh, l.bcs, component=c)
            lap_l[:, c] = A_c @ l.field.values[:, c] + b_c
        lap_lifts[:, d] = lap_l.reshape(-1)
        gtd_lifts[:, d] = grad_transpose_divergence(l.field, l.bcs).flat()
    ops.diff_lift = _gram(w2, lap_lifts + gtd_lifts, Phi)

    # convection: flux carrier i = modes, then lifts
    ops.convection = np.empty((ru, ru, ru))
    ops.conv_lift_carried = np.empty((nd, ru, ru))
    for i, f in enumerate(phi_fields):
        C, _ = convection_matrix(mesh, f, hom_u, hom_u, scheme, w_components=2)
        ops.convection[i] = _gram(w2, _apply_componentwise(C, Phi, n, 2), Phi)
        for d, l in enumerate(lifts):
            Cl, Bl = convection_matrix(mesh, f, hom_u, l.bcs, scheme,
                                       w_components=2)
            carried = _apply_componentwise(Cl, l.flat()[:, None], n, 2) \
                + Bl.reshape(-1)[:, None]
            ops.conv_lift_carried[d, i] = _gram(w2, carried, Phi)[0]
    ops.conv_lift_flux = np.empty((nd, ru, ru))
    ops.conv_lift_lift = np.empty((nd, nd, ru))
    for d, l in enumerate(lifts):
        C, _ = convection_matrix(mesh, l.field, l.bcs, hom_u, scheme,
                                 w_components=2)
        ops.conv_lift_flux[d] = _gram(w2, _apply_componentwise(C, Phi, n, 2),
                                      Phi)
        for e, le in enumerate(lifts):
            Ce, Be = convection_matrix(mesh, l.field, l.bcs, le.bcs, scheme,
                                       w_components=2)
            val = _apply_componentwise(Ce, le.flat()[:, None], n, 2) \
                + Be.reshape(-1)[:, None]
            ops.conv_lift_lift[d, e] = _gram(w2, val, Phi)[0]

    # turbulence closure blocks: pointwise xi * lap plus conservative
    # transpose; the transpose term is assembled from its face-bilinear form
    # (flux tensor of the j argument against owner/neighbour differences of
    # the k argument, the weight interpolated to faces) rather than one field
    # evaluation per (i, j) pair
    ops.turb_diffusion = np.empty((rnu, ru, ru))
    ops.turb_transpose = np.empty((rnu, ru, ru))
    ops.turb_lift = np.empty((rnu, nd, ru))
    lap_modes_cells = lap_modes.reshape(n, 2, ru)
    lap_lifts_cells = lap_lifts.reshape(n, 2, nd)
    own, nei = mesh.iface_owner, mesh.iface_neigh
    bcell = mesh.bface_cell
    Aif, Abf = _gtd_face_tensors(mesh, [(f, hom_u) for f in phi_fields])
    Lif, Lbf = _gtd_face_tensors(mesh, [(l.field, l.bcs) for l in lifts])
    Pc = Phi.reshape(n, 2, ru)
    Dif = Pc[own] - Pc[nei]
    Dbf = Pc[bcell]
    Ki = 0.5 * (Xi[own] + Xi[nei])
    Kb = Xi[bcell]
    for i in range(rnu):
        xi_i = Xi[:, i]
        weighted = (xi_i[:, None, None] * lap_modes_cells).reshape(2 * n, ru)
        ops.turb_diffusion[i] = _gram(w2, weighted, Phi)
        ops.turb_transpose[i] = (
            np.tensordot(Aif * Ki[:, i, None, None], Dif, axes=([0, 1], [0, 1]))
            + np.tensordot(Abf * Kb[:, i, None, None], Dbf,
                           axes=([0, 1], [0, 1])))
        wl = _gram(w2, (xi_i[:, None, None] * lap_lifts_cells).reshape(2 * n, nd),
                   Phi)
        gl = (np.tensordot(Lif * Ki[:, i, None, None], Dif,
                           axes=([0, 1], [0, 1]))
              + np.tensordot(Lbf * Kb[:, i, None, None], Dbf,
                             axes=([0, 1], [0, 1])))
        ops.turb_lift[i] = wl + gl

    # pressure gradient and divergence pairings
    Gx, Gy, gbx, gby = gradient_matrix(mesh, hom_p)
    grad_psi = np.empty((2 * n, rp))
    grad_psi.reshape(n, 2, rp)[:, 0, :] = Gx @ Psi + gbx[:, None]
    grad_psi.reshape(n, 2, rp)[:, 1, :] = Gy @ Psi + gby[:, None]
    ops.pressure_grad = _gram(w2, Phi, grad_psi)
    Dx, Dy, bdiv = divergence_matrix(mesh, hom_u)
    ucols = Phi.reshape(n, 2, ru)
    div_modes = Dx @ ucols[:, 0, :] + Dy @ ucols[:, 1, :] + bdiv[:, None]
    ops.div_modes = _gram(w1, Psi, div_modes)
    div_l = np.empty((n, nd))
    for d, l in enumerate(lifts):
        Dxl, Dyl, bl = divergence_matrix(mesh, l.bcs)
        div_l[:, d] = Dxl @ l.field.values[:, 0] + Dyl @ l.field.values[:, 1] + bl
    ops.div_lift = _gram(w1, div_l, Psi)
    return ops.validate()


def assemble_thermal_operators(phi, chi, xi, lifts, theta_lift, theta_bcs,
                               bcs_u, scheme="central"):
    """Reduced temperature-equation blocks.

    theta_lift is the combined temperature lift field (fixed boundary data),
    theta_bcs its closure — the physical temperature boundary conditions.
    """
    mesh = phi.mesh
    _check_space(phi, mesh, 2, "velocity")
    _check_space(chi, mesh, 1, "temperature")
    _check_space(xi, mesh, 1, "eddy-viscosity")
    n = mesh.n_cells
    w1 = mesh.weights(1)
    hom_u = homogeneous_bcs(bcs_u)
    hom_t = homogeneous_bcs(theta_bcs)
    Phi = _columns(phi)
    Chi = _columns(chi)
    Xi = _columns(xi)
    ru = Phi.shape[1]
    rt = Chi.shape[1]
    rnu = Xi.shape[1]
    nd = len(lifts)
    ops = ReducedOperators()

    ops.thermal_mass = _gram(w1, Chi, Chi)
    A_t, _ = laplacian_matrix(mesh, hom_t)
    lap_chi = A_t @ Chi
    ops.thermal_diffusion = _gram(w1, Chi, lap_chi)
    A_tl, b_tl = laplacian_matrix(mesh, theta_bcs)
    lap_theta_lift = A_tl @ theta_lift.values[:, 0] + b_tl
    ops.th_diffusion_lift = _gram(w1, Chi, lap_theta_lift[:, None])[:, 0]

    ops.thermal_turb = np.empty((rnu, rt, rt))
    ops.th_turb_lift = np.empty((rnu, rt))
    for i in range(rnu):
        xi_i = Xi[:, i]
        ops.thermal_turb[i] = _gram(w1, xi_i[:, None] * lap_chi, Chi)
        ops.th_turb_lift[i] = _gram(w1, Chi, (xi_i * lap_theta_lift)[:, None])[:, 0]

    ops.thermal_convection = np.empty((ru, rt, rt))
    ops.th_conv_mode_lift = np.empty((ru, rt))
    for i in range(ru):
        f = Field(mesh, Phi[:, i].reshape(n, 2))
        C, _ = convection_matrix(mesh, f, hom_u, hom_t, scheme, w_components=1)
        ops.thermal_convection[i] = _gram(w1, C @ Chi, Chi)
        Cl, Bl = convection_matrix(mesh, f, hom_u, theta_bcs, scheme,
                                   w_components=1)
        val = Cl @ theta_lift.values[:, 0] + Bl[:, 0]
        ops.th_conv_mode_lift[i] = _gram(w1, Chi, val[:, None])[:, 0]

    ops.th_conv_lift_mode = np.empty((nd, rt, rt))
    ops.th_conv_lift_lift = np.empty((nd, rt))
    for d, l in enumerate(lifts):
        C, _ = convection_matrix(mesh, l.field, l.bcs, hom_t, scheme,
                                 w_components=1)
        ops.th_conv_lift_mode[d] = _gram(w1, C @ Chi, Chi)
        Cl, Bl = convection_matrix(mesh, l.field, l.bcs, theta_bcs, scheme,
                                   w_components=1)
        val = Cl @ theta_lift.values[:, 0] + Bl[:, 0]
        ops.th_conv_lift_lift[d] = _gram(w1, Chi, val[:, None])[:, 0]

    ops.xi_mean = (w1 @ Xi) / w1.sum()
    return ops.validate()


def supremizer_enrichment(psi, phi, bcs_u, bcs_p, pairing_floor=1e-6):
    """Velocity-space enrichment modes paired to the pressure modes.

    For each pressure mode solve (I - lap) s = grad psi with homogeneous
    Dirichlet data on all Dirichlet velocity patches, orthonormalize the
    result against the velocity basis and previously accepted supremizers
    (zero modes are rejected), and verify that the divergence pairing matrix
    <div s_j, psi_i> is uniformly nonsingular.
    """
    mesh = psi.mesh
    _check_space(psi, mesh, 1, "pressure")
    _check_space(phi, mesh, 2, "velocity")
    n = mesh.n_cells
    w2 = mesh.weights(2)
    w1 = mesh.weights(1)
    hom_u = homogeneous_bcs(bcs_u)
    hom_p = homogeneous_bcs(bcs_p)
    A_lap = laplacian_matrix(mesh, hom_u, component=0)[0]
    solver = spla.splu((sp.eye(n) - A_lap).tocsc())
    Gx, Gy, gbx, gby = gradient_matrix(mesh, hom_p)

    Phi = phi.modes
    raw = []
    for i in range(psi.rank):
        g = np.column_stack([Gx @ psi.modes[:, i] + gbx,
                             Gy @ psi.modes[:, i] + gby])
        raw.append(np.column_stack([solver.solve(g[:, 0]),
                                    solver.solve(g[:, 1])]).reshape(-1))
    norms = [np.sqrt(w2 * s @ s) for s in raw]
    scale = max(max(norms, default=0.0), 1e-300)
    kept = []
    for s, nrm in zip(raw, norms):
        if nrm < 1e-10 * scale:
            continue  # degenerate (e.g. constant) pressure mode lifts to zero
        for _ in range(2):  # re-orthogonalize for stability
            s = s - Phi @ (Phi.T @ (w2 * s))
            for q in kept:
                s = s - q * (w2 * q @ s)
        nrm = np.sqrt(w2 * s @ s)
        if nrm < 1e-10 * scale:
            continue
        kept.append(s / nrm)
    if not kept:
        raise EnrichmentError("no usable supremizer modes were produced")
    S = np.column_stack(kept)

    Dx, Dy, _ = divergence_matrix(mesh, hom_u)
    sc = S.reshape(n, 2, -1)
    div_s = Dx @ sc[:, 0, :] + Dy @ sc[:, 1, :]
    pairing = _gram(w1, psi.modes, div_s)
    sv = np.linalg.svd(pairing, compute_uv=False)
    ratio = float(sv.min() / max(sv.max(), 1e-300))
    if ratio <= pairing_floor:
        raise EnrichmentError(
            f"divergence pairing nearly singular (ratio {ratio:.3e}); "
            "pressure modes are insufficiently observable")
    return S, pairing


def append_supremizers(phi, S):
    """Velocity basis extended by supremizer columns (zero spectrum tail)."""
    modes = np.concatenate([phi.modes, S], axis=1)
    eig = np.concatenate([phi.eigenvalues, np.zeros(S.shape[1])])
    out = PODBasis(mesh=phi.mesh, components=phi.components, modes=modes,
                   eigenvalues=eig, kind=phi.kind, local_ranks=phi.local_ranks)
    return out


def project_snapshots(snaps, basis):
    """Coefficient table <mode_i, snapshot_j>, shape (rank, n_columns)."""
    if not snaps.mesh.same_as(basis.mesh) or snaps.components != basis.components:
        raise DimensionError("snapshot set and basis live on different spaces")
    return basis.project(snaps.matrix)


def save_operators(path, ops):
    from .storage import save_arrays

    arrays = {}
    for f in dc_fields(ops):
        v = getattr(ops, f.name)
        if isinstance(v, np.ndarray):
            arrays[f.name] = v
    arrays["scalars"] = np.array([ops.nu, ops.alpha, ops.pr_t, float(ops.n_sup)])
    save_arrays(path, arrays)


def load_operators(path):
    from .storage import load_arrays

    arrays = load_arrays(path)
    scalars = arrays.pop("scalars")
    ops = ReducedOperators(**arrays)
    ops.nu, ops.alpha, ops.pr_t = map(float, scalars[:3])
    ops.n_sup = int(scalars[3])
    return ops
