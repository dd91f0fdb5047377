"""Full-order model: incompressible flow with a temperature passive scalar.

The solver advances momentum with explicit convection and implicit (backward)
diffusion, enforces incompressibility with an incremental pressure projection,
then advances temperature one-way coupled to the fresh velocity.  The
projection solves the composite operator divergence(gradient(.)) directly, so
the corrected cell velocities are discretely divergence-free to solver
precision under this package's own divergence operator.

Closure: an algebraic eddy viscosity nu_t = (cs*h)^2 * |sym grad u| refreshed
every step; the turbulent stress enters as nu_t * lap(u) plus the conservative
transpose part div(nu_t grad(u)^T), and the thermal equation sees
alpha + nu_t/Pr_t as a pointwise diffusivity.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DataError, SolverDivergenceError
from .mesh import Field, Mesh, dirichlet, neumann, outlet, tee_mesh
from .operators import (
    SCHEMES,
    convection_matrix,
    convective_term,
    divergence_matrix,
    grad_transpose_divergence,
    gradient_matrix,
    jacobian,
    laplacian_matrix,
)


@dataclass
class FOMConfig:
    """Physical and numerical parameters of a full-order run."""

    mesh: Mesh = dc_field(default_factory=tee_mesh)
    geometry: str = "tee"            # "tee" or "cavity"
    nu: float = 1.0e-3               # kinematic viscosity [m^2/s]
    alpha: float = 1.4e-3            # laminar thermal diffusivity [m^2/s]
    pr_t: float = 0.85               # turbulent Prandtl number
    cs: float = 0.15                 # eddy-viscosity model constant
    u_main: float = 0.58             # main inlet speed (lid speed for cavity)
    u_branch: float = 0.76           # branch inlet speed
    theta_main: float = 292.15       # main inlet temperature [K]
    theta_branch: float = 309.5      # branch inlet temperature [K]
    dt: float = 2.5e-3
    t_final: float = 3.0
    snapshot_every: float = 0.1
    scheme_u: str = "central"
    scheme_theta: str = "central"
    implicit_convection: bool = True
    picard_sweeps: int = 1           # outer velocity/pressure sweeps per step
    with_temperature: bool = True
    init: str = "lifting"            # "lifting" (potential start) or "zero"

    def __post_init__(self):
        if self.geometry not in ("tee", "cavity"):
            raise ConfigurationError(f"unknown geometry {self.geometry!r}")
        if self.picard_sweeps < 1:
            raise ConfigurationError("picard_sweeps must be at least 1")
        for name in ("nu", "alpha", "dt", "t_final", "snapshot_every", "pr_t"):
            if getattr(self, name) <= 0.0:
                raise ConfigurationError(f"{name} must be positive")
        if self.cs < 0.0:
            raise ConfigurationError("cs must be non-negative")
        if self.scheme_u not in SCHEMES or self.scheme_theta not in SCHEMES:
            raise ConfigurationError("convection schemes must be 'central' or 'upwind'")
        if self.init not in ("lifting", "zero"):
            raise ConfigurationError(f"unknown init mode {self.init!r}")
        for count, (a, b) in (("steps", (self.t_final, self.dt)),
                              ("cadence", (self.snapshot_every, self.dt))):
            k = round(a / b)
            if k < 1 or abs(k * b - a) > 1e-9 * a:
                raise ConfigurationError(
                    f"{count}: {a} is not an integer multiple of dt={b}")
        umax = max(abs(self.u_main), abs(self.u_branch))
        cfl = umax * self.dt / min(self.mesh.dx, self.mesh.dy)
        if cfl > 1.0:
            warnings.warn(f"convective CFL {cfl:.2f} exceeds 1; expect instability",
                          stacklevel=2)


@dataclass
class SnapshotRecord:
    """One saved state: fields keyed by their on-disk names U, p, T, nut."""

    mu: tuple
    t: float
    fields: dict


def tee_velocity_bcs(mu):
    u_m, u_b = float(mu[0]), float(mu[1])
    return {"inlet_main": dirichlet((u_m, 0.0)),
            "inlet_branch": dirichlet((0.0, -u_b)),
            "walls": dirichlet((0.0, 0.0)),
            "outlet": outlet()}


def tee_pressure_bcs():
    return {"inlet_main": neumann(), "inlet_branch": neumann(),
            "walls": neumann(), "outlet": dirichlet(0.0)}


def tee_temperature_bcs(theta_main, theta_branch):
    return {"inlet_main": dirichlet(theta_main),
            "inlet_branch": dirichlet(theta_branch),
            "walls": neumann(), "outlet": outlet()}


def cavity_velocity_bcs(lid_speed):
    return {"walls": dirichlet((0.0, 0.0)), "lid": dirichlet((lid_speed, 0.0))}


def cavity_pressure_bcs():
    return {"walls": neumann(), "lid": neumann()}


def strain_rate_magnitude(u, bcs_u):
    """|sym grad u| = sqrt(2 D:D) per cell, the Smagorinsky-style norm."""
    J = jacobian(u, bcs_u)
    D = 0.5 * (J + np.transpose(J, (0, 2, 1)))
    return np.sqrt(2.0 * np.einsum("cij,cij->c", D, D))


def eddy_viscosity_model(u, bcs_u, cs, h=None):
    """Algebraic closure nu_t = (cs*h)^2 |sym grad u| as a scalar Field."""
    if cs < 0.0:
        raise ConfigurationError("cs must be non-negative")
    h = u.mesh.h if h is None else float(h)
    return Field(u.mesh, (cs * h) ** 2 * strain_rate_magnitude(u, bcs_u))


def turbulent_diffusivity(nut, pr_t):
    """alpha_t = nu_t / Pr_t."""
    if pr_t <= 0.0:
        raise ConfigurationError("turbulent Prandtl number must be positive")
    vals = nut.values if isinstance(nut, Field) else np.asarray(nut)
    out = vals / pr_t
    return Field(nut.mesh, out) if isinstance(nut, Field) else out


def _implicit_factor(A, coeff, dtinv, C=None):
    """LU factors of I/dt - diag(coeff) @ A (+ C for implicit convection)."""
    n = A.shape[0]
    M = sp.eye(n, format="csr") * dtinv - sp.diags(coeff) @ A
    if C is not None:
        M = M + C
    return spla.splu(M.tocsc())


class _Stepper:
    """Shared time-stepping core for the tee and cavity problems."""

    def __init__(self, mesh, config, bcs_u, bcs_p, bcs_t=None):
        self.mesh = mesh
        self.cfg = config
        self.bcs_u = bcs_u
        self.bcs_p = bcs_p
        self.bcs_t = bcs_t
        n = mesh.n_cells

        self.Gx, self.Gy, self.gbx, self.gby = gradient_matrix(mesh, bcs_p)
        self.Dx, self.Dy, self.bdiv = divergence_matrix(mesh, bcs_u)
        L = (self.Dx @ self.Gx + self.Dy @ self.Gy).tocsc()
        self.pinned = not any(bc.kind == "dirichlet" for bc in bcs_p.values())
        if self.pinned:
            L = L.tolil()
            L[0, :] = 0.0
            L[0, 0] = 1.0
            L = L.tocsc()
        self.poisson = spla.splu(L)

        lap_u = laplacian_matrix(mesh, bcs_u, component=0)
        self.lap_u_A = lap_u[0].tocsr()
        self.lap_u_b = np.column_stack(
            [lap_u[1], laplacian_matrix(mesh, bcs_u, component=1)[1]])
        self.dtinv = 1.0 / config.dt
        self._explicit_conv = not config.implicit_convection
        self._mom_cached = None
        if config.cs == 0.0 and self._explicit_conv:
            self._mom_cached = _implicit_factor(
                self.lap_u_A, np.full(n, config.nu), self.dtinv)

        if bcs_t is not None:
            A, self.lap_t_b = laplacian_matrix(mesh, bcs_t)
            self.lap_t_A = A.tocsr()
            self._heat_cached = None
            if config.cs == 0.0 and self._explicit_conv:
                self._heat_cached = _implicit_factor(
                    self.lap_t_A, np.full(n, config.alpha), self.dtinv)

    def eddy_viscosity(self, u):
        if self.cfg.cs == 0.0:
            return np.zeros(self.mesh.n_cells)
        return eddy_viscosity_model(Field(self.mesh, u), self.bcs_u,
                                    self.cfg.cs).values[:, 0]

    def step(self, u, p, theta):
        cfg, mesh = self.cfg, self.mesh
        dt = cfg.dt
        nut = self.eddy_viscosity(u)
        nu_eff = cfg.nu + nut

        # Outer sweeps refresh the linearization point (convection carrier,
        # transpose stress, pressure gradient) from the latest iterate, so the
        # step's fixed point approaches the fully implicit coupled system;
        # one sweep is the classic semi-implicit projection step.  The
        # explicit-convection path has nothing to re-linearize.
        u_k, p_k = u, p
        sweeps = 1 if self._explicit_conv else cfg.picard_sweeps
        for _ in range(sweeps):
            uf = Field(mesh, u_k)
            gradp = np.column_stack([self.Gx @ p_k + self.gbx,
                                     self.Gy @ p_k + self.gby])
            tl = cfg.nu * grad_transpose_divergence(uf, self.bcs_u).values
            if cfg.cs != 0.0:
                tl += grad_transpose_divergence(uf, self.bcs_u, weight=nut).values

            rhs = u / dt - gradp + tl + nu_eff[:, None] * self.lap_u_b
            if self._explicit_conv:
                rhs -= convective_term(uf, uf, self.bcs_u, self.bcs_u,
                                       cfg.scheme_u).values
                solve = self._mom_cached or _implicit_factor(
                    self.lap_u_A, nu_eff, self.dtinv)
            else:
                C, Bc = convection_matrix(mesh, uf, self.bcs_u, self.bcs_u,
                                          cfg.scheme_u, w_components=2)
                rhs -= Bc
                solve = _implicit_factor(self.lap_u_A, nu_eff, self.dtinv, C)
            ustar = np.column_stack([solve.solve(rhs[:, 0]),
                                     solve.solve(rhs[:, 1])])

            div_star = self.Dx @ ustar[:, 0] + self.Dy @ ustar[:, 1] + self.bdiv
            rhs_p = div_star / dt
            if self.pinned:
                rhs_p[0] = 0.0
            dp = self.poisson.solve(rhs_p)
            u_k = ustar - dt * np.column_stack([self.Gx @ dp, self.Gy @ dp])
            p_k = p_k + dp
        u_new, p_new = u_k, p_k

        theta_new = theta
        if self.bcs_t is not None and theta is not None:
            alpha_eff = cfg.alpha + nut / cfg.pr_t
            rhs_t = theta / dt + alpha_eff * self.lap_t_b
            if self._explicit_conv:
                rhs_t -= convective_term(Field(mesh, u_new), Field(mesh, theta),
                                         self.bcs_u, self.bcs_t,
                                         cfg.scheme_theta).values[:, 0]
                tsolve = self._heat_cached or _implicit_factor(
                    self.lap_t_A, alpha_eff, self.dtinv)
            else:
                Ct, Bt = convection_matrix(mesh, Field(mesh, u_new), self.bcs_u,
                                           self.bcs_t, cfg.scheme_theta,
                                           w_components=1)
                rhs_t -= Bt[:, 0]
                tsolve = _implicit_factor(self.lap_t_A, alpha_eff, self.dtinv, Ct)
            theta_new = tsolve.solve(rhs_t)

        div_new = self.Dx @ u_new[:, 0] + self.Dy @ u_new[:, 1] + self.bdiv
        return u_new, p_new, theta_new, nut, float(np.abs(div_new).max())


def _initial_state(config, mu):
    """Initial fields: potential-flow lifting blend or rest."""
    mesh = config.mesh
    n = mesh.n_cells
    if config.geometry == "cavity" or config.init == "zero":
        u0 = np.zeros((n, 2))
        theta0 = np.full(n, config.theta_main)
        return u0, np.zeros(n), theta0
    from .lifting import compute_control_function, scaling_coefficient
    u0 = np.zeros((n, 2))
    bcs_u = tee_velocity_bcs(mu)
    for patch in ("inlet_main", "inlet_branch"):
        zeta = compute_control_function(mesh, bcs_u, patch, solenoidal=True)
        u0 += scaling_coefficient(zeta, bcs_u) * zeta.field.values
    theta0 = np.zeros(n)
    bcs_t = tee_temperature_bcs(config.theta_main, config.theta_branch)
    for patch in ("inlet_main", "inlet_branch"):
        zeta = compute_control_function(mesh, bcs_t, patch, solenoidal=False)
        theta0 += scaling_coefficient(zeta, bcs_t) * zeta.field.values[:, 0]
    return u0, np.zeros(n), theta0


def run_fom(config, mu=None):
    """Advance the full-order model and return the saved snapshot records.

    mu = (main inlet speed, branch inlet speed); defaults to the config values.
    """
    mesh = config.mesh
    if mu is None:
        mu = (config.u_main, config.u_branch)
    mu = (float(mu[0]), float(mu[1]))

    if config.geometry == "tee":
        bcs_u = tee_velocity_bcs(mu)
        bcs_p = tee_pressure_bcs()
        bcs_t = (tee_temperature_bcs(config.theta_main, config.theta_branch)
                 if config.with_temperature else None)
    else:
        bcs_u = cavity_velocity_bcs(mu[0])
        bcs_p = cavity_pressure_bcs()
        bcs_t = None

    stepper = _Stepper(mesh, config, bcs_u, bcs_p, bcs_t)
    u, p, theta = _initial_state(config, mu)

    n_steps = round(config.t_final / config.dt)
    k_snap = round(config.snapshot_every / config.dt)
    u_ref = max(1.0, abs(mu[0]), abs(mu[1]))
    div_limit = 1e-8 * u_ref / min(mesh.dx, mesh.dy)

    records = []
    for step in range(1, n_steps + 1):
        u, p, theta, nut, max_div = stepper.step(u, p, theta)
        if not np.all(np.isfinite(u)) or np.abs(u).max() > 1e6 * u_ref:
            raise SolverDivergenceError(
                f"velocity blew up at step {step} (t={step * config.dt:.6g})")
        if max_div > div_limit:
            raise DataError(
                f"projection left divergence {max_div:.3e} at step {step}")
        if step % k_snap == 0:
            # evaluate the closure from the state being recorded, not the
            # lagged value the step used
            fields = {"U": Field(mesh, u.copy()), "p": Field(mesh, p.copy()),
                      "nut": Field(mesh, stepper.eddy_viscosity(u))}
            if bcs_t is not None:
                fields["T"] = Field(mesh, theta.copy())
            records.append(SnapshotRecord(mu=mu, t=step * config.dt, fields=fields))
    return records


def lid_cavity_profile(n, re=100.0, lid=1.0, dt=None, t_max=30.0, steady_tol=1e-6):
    """Steady lid-driven cavity; returns (y, u_x) along the vertical mid-line.

    Runs the same stepping core as run_fom on an enclosed n x n box until the
    velocity increment stalls (max |du| < steady_tol * lid) or t_max.
    """
    h = 1.0 / n
    mesh = _cavity_mesh(n)
    if dt is None:
        dt = 0.32 * h / lid
    config = FOMConfig(mesh=mesh, geometry="cavity", nu=lid / re, cs=0.0,
                       with_temperature=False, dt=dt, t_final=t_max,
                       snapshot_every=t_max, u_main=lid, u_branch=0.0,
                       scheme_u="central")
    stepper = _Stepper(mesh, config, cavity_velocity_bcs(lid),
                       cavity_pressure_bcs(), None)
    u = np.zeros((mesh.n_cells, 2))
    p = np.zeros(mesh.n_cells)
    n_steps = round(t_max / dt)
    for step in range(1, n_steps + 1):
        u_new, p, _, _, _ = stepper.step(u, p, None)
        delta = np.abs(u_new - u).max()
        u = u_new
        if step % 25 == 0 and delta < steady_tol * lid:
            break
    mid = mesh.ci == n // 2
    order = np.argsort(mesh.yc[mid])
    return mesh.yc[mid][order], u[mid, 0][order]


def _cavity_mesh(n):
    from .mesh import box_mesh
    return box_mesh(n, n, 1.0 / n, 1.0 / n,
                    left="walls", right="walls", bottom="walls", top="lid")


def manufactured_snapshots(mesh, mus, times, mode_count, components=1, seed=0,
                           constant_in_time=False):
    """Synthetic snapshot set of exact rank mode_count with known content.

    Shapes are orthonormalized smooth trigonometric fields; coefficients are
    smooth in (mu, t) with geometrically decaying amplitudes, so the POD
    spectrum is unambiguous.  Returns a ManufacturedSet with the snapshot set,
    the shapes (columns, flattened cell-major) and the coefficient table.
    """
    from .pod import SnapshotSet
    rng = np.random.default_rng(seed)
    n = mesh.n_cells
    nh = n * components
    if mode_count < 1 or mode_count > nh:
        raise ConfigurationError("mode_count must be in [1, n_cells*components]")

    lx = mesh.nx * mesh.dx
    ly = mesh.ny * mesh.dy
    shapes = np.empty((nh, mode_count))
    w = np.repeat(mesh.cell_volumes, components)
    for k in range(mode_count):
        raw = np.zeros((n, components))
        for c in range(components):
            kx, ky = rng.integers(1, 4, size=2)
            phx, phy = rng.uniform(0, 2 * np.pi, size=2)
            raw[:, c] = (np.sin(kx * np.pi * mesh.xc / lx + phx)
                         * np.cos(ky * np.pi * mesh.yc / ly + phy)
                         + 0.3 * rng.normal())
        col = raw.reshape(-1)
        for j in range(k):
            col -= (w * shapes[:, j] @ col) * shapes[:, j]
        nrm = np.sqrt(w * col @ col)
        if nrm < 1e-12:
            raise DataError("degenerate manufactured shape; change the seed")
        shapes[:, k] = col / nrm

    mus = [tuple(float(x) for x in m) for m in mus]
    times = np.asarray(times, dtype=float)
    cols = len(mus) * len(times)
    coeffs = np.empty((mode_count, cols))
    om = rng.uniform(0.5, 3.0, size=mode_count)
    ph = rng.uniform(0, 2 * np.pi, size=mode_count)
    kmu = rng.uniform(0.5, 2.0, size=(mode_count, 2))
    for ki, m in enumerate(mus):
        for ji, t in enumerate(times):
            tt = 0.0 if constant_in_time else t
            coeffs[:, ki * len(times) + ji] = (
                (0.5 ** np.arange(mode_count))
                * (1.2 + np.sin(om * tt + kmu[:, 0] * m[0] + kmu[:, 1] * m[1] + ph)))
    matrix = shapes @ coeffs
    snaps = SnapshotSet(mesh=mesh, components=components, matrix=matrix,
                        mus=mus, times=times, kind="manufactured")
    return ManufacturedSet(snapshots=snaps, shapes=shapes, coefficients=coeffs)


@dataclass
class ManufacturedSet:
    snapshots: object
    shapes: np.ndarray
    coefficients: np.ndarray


# ---------------------------------------------------------------------------
# snapshot directory layout
# ---------------------------------------------------------------------------

def save_snapshot_sweep(root, mesh, runs, mus, times, config_hash=""):
    """Write runs[k][j] -> root/mu_<k>/t_<j>/<name>.romf plus manifests."""
    import json
    from pathlib import Path

    from .storage import save_field, save_mesh

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    save_mesh(root / "mesh.txt", mesh)
    for k, records in enumerate(runs):
        for j, rec in enumerate(records):
            d = root / f"mu_{k:03d}" / f"t_{j:03d}"
            d.mkdir(parents=True, exist_ok=True)
            for name, f in rec.fields.items():
                save_field(d / f"{name}.romf", f)
    manifest = {"mus": [list(m) for m in mus], "times": list(map(float, times)),
                "config_hash": config_hash,
                "fields": sorted(runs[0][0].fields) if runs and runs[0] else []}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_snapshot_sweep(root):
    """Read back a sweep directory -> (mesh, mus, times, runs, manifest)."""
    import json
    from pathlib import Path

    from .storage import load_field, load_mesh

    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    mesh = load_mesh(root / "mesh.txt")
    mus = [tuple(m) for m in manifest["mus"]]
    times = np.asarray(manifest["times"])
    runs = []
    for k, mu in enumerate(mus):
        records = []
        for j, t in enumerate(times):
            d = root / f"mu_{k:03d}" / f"t_{j:03d}"
            fields = {name: load_field(d / f"{name}.romf", mesh)
                      for name in manifest["fields"]}
            records.append(SnapshotRecord(mu=mu, t=float(t), fields=fields))
        runs.append(records)
    return mesh, mus, times, runs, manifest
