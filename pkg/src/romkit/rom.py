"""Online integration of the reduced flow model.

Each backward-Euler step solves the projected momentum/continuity saddle
system with Newton's method (exact Jacobian of the quadratic convection
term), then a linear backward-Euler step for the temperature coefficients
using the fresh velocity, mirroring the full-order operator splitting.  The
eddy-viscosity coefficients are tabulated over the step times up front and
held fixed within each Newton solve.

Cost per step depends only on the reduced ranks, never on the mesh size.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit

from .errors import ConfigurationError, DimensionError, StepError
from .mesh import Field

NEWTON_TOL = 1e-10
NEWTON_MAXIT = 50


@dataclass
class ReducedState:
    """Coefficient snapshot at one time: velocity a, pressure b, temperature
    c, eddy-viscosity l."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    l: np.ndarray
    t: float


@dataclass
class ReducedTrajectory:
    """Coefficient histories (row per time level, t=0 first) plus timings."""

    times: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    l: np.ndarray
    step_seconds: np.ndarray
    newton_iters: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    @property
    def n_steps(self):
        return self.times.size - 1

    def state(self, k):
        return ReducedState(a=self.a[k], b=self.b[k], c=self.c[k],
                            l=self.l[k], t=float(self.times[k]))

    def truncated(self, n_done):
        m = n_done + 1
        return ReducedTrajectory(
            times=self.times[:m], a=self.a[:m], b=self.b[:m], c=self.c[:m],
            l=self.l[:m], step_seconds=self.step_seconds[:n_done],
            newton_iters=self.newton_iters[:n_done], meta=dict(self.meta))


@njit(cache=True)
def _momentum_step(a_n, b_n, M, Q, lin, const, P, R, g2, dt, tol, maxit):
    """One backward-Euler Newton solve of the projected saddle system.

    lin[j, k] collects every velocity-linear contribution at this step
    (lift convection, laminar and turbulent diffusion); const[k] the
    coefficient-independent ones.  Returns (a, b, iters, residual history,
    converged flag).
    """
    ru = a_n.size
    rp = b_n.size
    m = ru + rp
    a = a_n.copy()
    b = b_n.copy()
    hist = np.empty(maxit + 1)
    it = 0
    converged = False
    for it in range(1, maxit + 1):
        F = np.zeros(m)
        for k in range(ru):
            acc = const[k]
            for j in range(ru):
                acc += M[k, j] * (a[j] - a_n[j]) / dt + lin[j, k] * a[j]
            for i in range(ru):
                ai = a[i]
                if ai != 0.0:
                    for j in range(ru):
                        acc += ai * a[j] * Q[i, j, k]
            for i in range(rp):
                acc += P[k, i] * b[i]
            F[k] = acc
        for i in range(rp):
            acc = g2[i]
            for j in range(ru):
                acc += R[i, j] * a[j]
            F[ru + i] = acc
        nrm = np.sqrt(np.sum(F * F))
        hist[it - 1] = nrm
        if nrm < tol:
            converged = True
            break

        J = np.zeros((m, m))
        for k in range(ru):
            for mm in range(ru):
                acc = M[k, mm] / dt + lin[mm, k]
                for i in range(ru):
                    acc += a[i] * (Q[i, mm, k] + Q[mm, i, k])
                J[k, mm] = acc
            for i in range(rp):
                J[k, ru + i] = P[k, i]
        for i in range(rp):
            for j in range(ru):
                J[ru + i, j] = R[i, j]
        delta = np.linalg.solve(J, F)
        for j in range(ru):
            a[j] -= delta[j]
        for i in range(rp):
            b[i] -= delta[ru + i]
    return a, b, it, hist[:it], converged


@njit(cache=True)
def _thermal_step(c_n, a, Mth, G, lin_th, alpha_N, rhs_fix, dt):
    """Linear backward-Euler step for the temperature coefficients.

    lin_th[j, k] collects lift convection and turbulent diffusion; alpha_N
    the laminar (or effective-scalar) diffusion operator; rhs_fix every
    coefficient-independent right-hand-side contribution.
    """
    rt = c_n.size
    ru = a.size
    A = np.zeros((rt, rt))
    for k in range(rt):
        for j in range(rt):
            acc = Mth[k, j] / dt + lin_th[j, k] - alpha_N[k, j]
            for i in range(ru):
                acc += a[i] * G[i, j, k]
            A[k, j] = acc
    rhs = rhs_fix.copy()
    for k in range(rt):
        for j in range(rt):
            rhs[k] += Mth[k, j] * c_n[j] / dt
    return np.linalg.solve(A, rhs)


def _as_table(eddy, times, r_nu):
    """Eddy-viscosity coefficient table, one row per time level."""
    if eddy is None:
        return np.zeros((times.size, max(r_nu, 0)))
    if callable(eddy):
        tab = np.array([np.atleast_1d(eddy(t)) for t in times], dtype=float)
    else:
        tab = np.asarray(eddy, dtype=float)
        if tab.ndim == 1:
            tab = tab[:, None]
    if tab.shape != (times.size, r_nu):
        raise DimensionError(
            f"eddy coefficient table has shape {tab.shape}, "
            f"expected {(times.size, r_nu)}")
    if not np.all(np.isfinite(tab)):
        raise ConfigurationError("eddy coefficient table has non-finite entries")
    return tab


def solve(ops, u_lift_coeffs, dt, t_final, eddy_coefficients=None,
          a0=None, b0=None, c0=None, with_thermal=None,
          thermal_closure="tensor", newton_tol=NEWTON_TOL,
          newton_maxit=NEWTON_MAXIT):
    """Integrate the reduced model from t=0 to t_final.

    u_lift_coeffs are the boundary-control coefficients (one per velocity
    lift); eddy_coefficients is a callable t -> l or a table with one row per
    time level t_0..t_N.  Aborted runs raise StepError carrying the partial
    trajectory.  thermal_closure "tensor" keeps the projected pointwise
    eddy-diffusivity; "scalar" replaces it by its volume mean.
    """
    if dt <= 0.0 or t_final <= 0.0:
        raise ConfigurationError("dt and t_final must be positive")
    n_steps = round(t_final / dt)
    if abs(n_steps * dt - t_final) > 1e-9 * t_final or n_steps < 1:
        raise ConfigurationError("t_final must be an integer number of steps")
    if thermal_closure not in ("tensor", "scalar"):
        raise ConfigurationError(f"unknown thermal closure {thermal_closure!r}")

    ru = ops.n_velocity
    rp = ops.n_pressure
    rt = ops.n_thermal
    rn = ops.n_turb
    nd = ops.conv_lift_flux.shape[0] if ops.conv_lift_flux.size else 0
    uD = np.zeros(nd) if nd == 0 else np.asarray(u_lift_coeffs, dtype=float)
    if uD.shape != (nd,):
        raise DimensionError(f"expected {nd} lift coefficients, got {uD.shape}")
    if with_thermal is None:
        with_thermal = rt > 0
    if with_thermal and rt == 0:
        raise ConfigurationError("no thermal operators were assembled")

    times = dt * np.arange(n_steps + 1)
    l_tab = _as_table(eddy_coefficients, times, rn)

    a = np.zeros(ru) if a0 is None else np.asarray(a0, dtype=float).copy()
    b = np.zeros(rp) if b0 is None else np.asarray(b0, dtype=float).copy()
    c = np.zeros(rt) if c0 is None else np.asarray(c0, dtype=float).copy()
    for name, vec, r in (("a0", a, ru), ("b0", b, rp), ("c0", c, rt)):
        if vec.shape != (r,):
            raise DimensionError(f"{name} must have shape ({r},)")

    # step-constant folds of the lift interactions
    nu = ops.nu
    M = ops.mass
    Q = np.ascontiguousarray(ops.convection)
    P = ops.pressure_grad
    R = ops.div_modes
    BBT = (ops.diffusion + ops.diffusion_transpose).T  # [j, k]
    QT = ops.turb_diffusion + ops.turb_transpose       # [i, j, k]
    if nd:
        lin0 = (np.einsum("d,djk->jk", uD, ops.conv_lift_flux)
                + np.einsum("d,djk->jk", uD, ops.conv_lift_carried)
                - nu * BBT)
        const0 = (np.einsum("d,e,dek->k", uD, uD, ops.conv_lift_lift)
                  - nu * (uD @ ops.diff_lift))
        TLu = np.einsum("idk,d->ik", ops.turb_lift, uD) if rn else \
            np.zeros((0, ru))
        g2 = uD @ ops.div_lift if rp else np.zeros(0)
    else:
        lin0 = -nu * BBT
        const0 = np.zeros(ru)
        TLu = np.zeros((rn, ru))
        g2 = np.zeros(rp)

    if with_thermal:
        Mth = ops.thermal_mass
        Gt = np.ascontiguousarray(ops.thermal_convection)
        N = ops.thermal_diffusion
        NT = ops.thermal_turb
        THCML = ops.th_conv_mode_lift          # [i(mode), k]
        THCLM = ops.th_conv_lift_mode          # [d, j, k]
        THCLL = ops.th_conv_lift_lift          # [d, k]
        THDL = ops.th_diffusion_lift           # [k]
        THTL = ops.th_turb_lift                # [i, k]
        lin_th0 = (np.einsum("d,djk->jk", uD, THCLM) if nd
                   else np.zeros((rt, rt)))
        rhs_fix0 = (ops.alpha * THDL
                    - (uD @ THCLL if nd else np.zeros(rt)))

    traj = ReducedTrajectory(
        times=times,
        a=np.zeros((n_steps + 1, ru)), b=np.zeros((n_steps + 1, rp)),
        c=np.zeros((n_steps + 1, rt)), l=l_tab.copy(),
        step_seconds=np.zeros(n_steps), newton_iters=np.zeros(n_steps, int),
        meta={"dt": dt, "t_final": t_final, "newton_tol": newton_tol,
              "thermal_closure": thermal_closure if with_thermal else "none",
              "lift_coefficients": uD.tolist()})
    traj.a[0], traj.b[0], traj.c[0] = a, b, c

    wall0 = time.perf_counter()
    for k in range(1, n_steps + 1):
        t_step0 = time.perf_counter()
        l = l_tab[k]
        lin = lin0 - np.einsum("i,ijk->jk", l, QT) if rn else lin0
        const = const0 - (l @ TLu if rn else 0.0)
        a_new, b_new, iters, hist, ok = _momentum_step(
            a, b, M, Q, lin, const, P, R, g2, dt, newton_tol, newton_maxit)
        if not ok or not np.all(np.isfinite(a_new)):
            raise StepError(
                f"momentum Newton failed at step {k} (t={k * dt:.6g}), "
                f"residual {hist[-1]:.3e} after {iters} iterations",
                residuals=hist, trajectory=traj.truncated(k - 1))
        a, b = a_new, b_new

        if with_thermal:
            if thermal_closure == "tensor":
                alpha_N = ops.alpha * N
                lin_th = lin_th0 - (np.einsum("i,ijk->jk", l, NT) / ops.pr_t
                                    if rn else 0.0)
                rhs_fix = rhs_fix0 + ((l @ THTL) / ops.pr_t if rn else 0.0)
            else:
                alpha_eff = ops.alpha + (l @ ops.xi_mean) / ops.pr_t
                alpha_N = alpha_eff * N
                lin_th = lin_th0
                rhs_fix = alpha_eff * THDL - (uD @ THCLL if nd else 0.0)
            rhs = rhs_fix - (a @ THCML if THCML.size else 0.0)
            c = _thermal_step(c, a, Mth, Gt, lin_th, alpha_N, rhs, dt)
            if not np.all(np.isfinite(c)):
                raise StepError(
                    f"thermal step produced non-finite coefficients at step {k}",
                    trajectory=traj.truncated(k - 1))

        traj.a[k], traj.b[k], traj.c[k] = a, b, c
        traj.newton_iters[k - 1] = iters
        traj.step_seconds[k - 1] = time.perf_counter() - t_step0
    traj.meta["online_seconds"] = time.perf_counter() - wall0
    return traj


def constraint_residual(ops, trajectory, u_lift_coeffs):
    """max_k ||R a(t_k) + lift divergence|| over the trajectory."""
    if ops.div_modes.size == 0:
        return 0.0
    nd = ops.div_lift.shape[0]
    uD = np.asarray(u_lift_coeffs, dtype=float)
    g2 = uD @ ops.div_lift if nd else 0.0
    res = trajectory.a @ ops.div_modes.T + g2
    return float(np.abs(res).max())


def initial_conditions(fields, bases, u_lifts=(), u_lift_coeffs=(),
                       theta_lifts=(), theta_lift_coeffs=(),
                       interp=None, mu=None, t=0.0):
    """Project full-order initial fields onto the reduced bases.

    fields and bases map names among "U", "p", "T", "nut" to Fields and
    trained bases; coefficient blocks without a basis come back empty.  The
    eddy coefficients are taken from the interpolant at (mu, t) when one is
    given, else by projecting fields["nut"], else zeros.
    """
    def project(name, lifts=(), coeffs=()):
        basis = bases[name]
        f = fields[name]
        if not f.mesh.same_as(basis.mesh):
            raise DimensionError(
                f"initial field {name!r} lives on a different mesh than its basis")
        return project_field(basis, f, lifts, coeffs)

    a = (project("U", u_lifts, u_lift_coeffs)
         if "U" in fields and "U" in bases else np.zeros(0))
    b = project("p") if "p" in fields and "p" in bases else np.zeros(0)
    c = (project("T", theta_lifts, theta_lift_coeffs)
         if "T" in fields and "T" in bases else np.zeros(0))
    if interp is not None:
        if mu is None:
            raise ConfigurationError(
                "mu is required to evaluate the eddy-coefficient interpolant")
        l = np.asarray(interp.evaluate(mu, t), dtype=float)
    elif "nut" in fields and "nut" in bases:
        l = project("nut")
    elif "nut" in bases:
        l = np.zeros(bases["nut"].rank)
    else:
        l = np.zeros(0)
    return ReducedState(a=a, b=b, c=c, l=l, t=float(t))


def reconstruct(trajectory, bases, u_lifts=(), u_lift_coeffs=(),
                theta_lift=None, indices=None):
    """Full-order fields along a trajectory: {name: [Field, ...]}.

    Emits "U", "p", "T" and "nut" for whichever bases are present, at the
    time levels selected by `indices` (default: all saved levels).
    """
    if indices is None:
        indices = range(trajectory.times.size)
    out = {}
    if "U" in bases:
        out["U"] = [reconstruct_velocity(bases["U"], u_lifts, u_lift_coeffs,
                                         trajectory.a[k]) for k in indices]
    if "p" in bases:
        out["p"] = [reconstruct_pressure(bases["p"], trajectory.b[k])
                    for k in indices]
    if "T" in bases and trajectory.c.shape[1]:
        out["T"] = [reconstruct_temperature(bases["T"], theta_lift,
                                            trajectory.c[k]) for k in indices]
    if "nut" in bases and trajectory.l.shape[1]:
        out["nut"] = [reconstruct_eddy_viscosity(bases["nut"], trajectory.l[k])
                      for k in indices]
    return out


def reconstruct_velocity(basis, lifts, u_lift_coeffs, a):
    vec = basis.modes @ np.asarray(a, dtype=float)
    for coef, lift in zip(np.atleast_1d(u_lift_coeffs), lifts):
        vec = vec + coef * lift.flat()
    return Field(basis.mesh, vec.reshape(basis.mesh.n_cells, basis.components))


def reconstruct_pressure(basis, b):
    return Field(basis.mesh, basis.modes @ np.asarray(b, dtype=float))


def reconstruct_temperature(basis, theta_lift, c):
    vec = basis.modes @ np.asarray(c, dtype=float)
    if theta_lift is not None:
        vec = vec + theta_lift.flat()
    return Field(basis.mesh, vec)


def reconstruct_eddy_viscosity(basis, l):
    return Field(basis.mesh, basis.modes @ np.asarray(l, dtype=float))


def project_field(basis, field, lifts=(), lift_coeffs=()):
    """Coefficients of a full-order field after removing lift content."""
    vec = field.flat().astype(float, copy=True)
    for coef, lift in zip(np.atleast_1d(lift_coeffs), lifts):
        vec -= coef * (lift.flat() if hasattr(lift, "flat") else
                       np.asarray(lift, dtype=float).reshape(-1))
    return basis.project(vec)
