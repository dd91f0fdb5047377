"""Reduced-order integrator: step algebra, constraint handling, replay."""

import numpy as np
import pytest
import scipy.linalg
import scipy.optimize

from romkit import fom, galerkin, lifting, pod, rom
from romkit.errors import ConfigurationError, DimensionError, StepError
from romkit.galerkin import ReducedOperators
from romkit.mesh import Field


def _plain_ops(ru=4, rp=0, rn=0, seed=0, nu=0.05):
    """Hand-built reduced operators for a small stable quadratic system."""
    rng = np.random.default_rng(seed)
    ops = ReducedOperators()
    ops.mass = np.eye(ru)
    D = rng.normal(size=(ru, ru))
    ops.diffusion = -(D @ D.T + ru * np.eye(ru))  # symmetric negative definite
    ops.diffusion_transpose = np.zeros((ru, ru))
    ops.convection = 0.3 * rng.normal(size=(ru, ru, ru))
    ops.nu = nu
    if rp:
        R = rng.normal(size=(rp, ru))
        ops.div_modes = R
        ops.pressure_grad = R.T.copy()
    if rn:
        ops.turb_diffusion = 0.1 * rng.normal(size=(rn, ru, ru))
        ops.turb_transpose = 0.1 * rng.normal(size=(rn, ru, ru))
    return ops


def _reference_trajectory(ops, a0, dt, n_steps, l_tab=None):
    """Backward-Euler reference using a generic black-box root finder."""
    ru = ops.n_velocity
    rp = ops.n_pressure
    rn = ops.n_turb
    BBT = (ops.diffusion + ops.diffusion_transpose).T
    QT = ops.turb_diffusion + ops.turb_transpose if rn else None
    a_hist = [np.asarray(a0, dtype=float)]
    b = np.zeros(rp)
    for k in range(1, n_steps + 1):
        a_n = a_hist[-1]
        lin = -ops.nu * BBT
        if rn:
            lin = lin - np.einsum("i,ijk->jk", l_tab[k], QT)

        def residual(x, a_n=a_n, lin=lin):
            a, lam = x[:ru], x[ru:]
            F = np.empty(ru + rp)
            F[:ru] = (ops.mass @ (a - a_n) / dt
                      + np.einsum("ijk,i,j->k", ops.convection, a, a)
                      + lin.T @ a)
            if rp:
                F[:ru] += ops.pressure_grad @ lam
                F[ru:] = ops.div_modes @ a
            return F

        sol = scipy.optimize.root(residual, np.concatenate([a_n, b]),
                                  tol=1e-13)
        assert sol.success, sol.message
        a_hist.append(sol.x[:ru])
        b = sol.x[ru:]
    return np.array(a_hist)


def test_momentum_step_matches_root_finder():
    ops = _plain_ops(ru=4, seed=1)
    a0 = np.array([0.9, -0.4, 0.2, 0.5])
    traj = rom.solve(ops, (), dt=0.02, t_final=0.2, a0=a0)
    ref = _reference_trajectory(ops, a0, 0.02, 10)
    assert np.abs(traj.a - ref).max() < 1e-9
    assert traj.times[-1] == pytest.approx(0.2)
    assert np.all(traj.newton_iters >= 1)


def test_constrained_step_matches_root_finder():
    ops = _plain_ops(ru=5, rp=2, seed=2)
    # start on the constraint manifold: R a0 = 0
    rng = np.random.default_rng(3)
    ns = scipy.linalg.null_space(ops.div_modes)
    a0 = ns @ rng.normal(size=ns.shape[1])
    traj = rom.solve(ops, (), dt=0.02, t_final=0.2, a0=a0)
    ref = _reference_trajectory(ops, a0, 0.02, 10)
    assert np.abs(traj.a - ref).max() < 1e-8
    assert rom.constraint_residual(ops, traj, ()) < 1e-9


def test_eddy_table_and_callable_agree():
    ops = _plain_ops(ru=4, rn=2, seed=4)
    times = 0.05 * np.arange(7)
    table = np.column_stack([np.sin(times), np.cos(times)])
    t1 = rom.solve(ops, (), dt=0.05, t_final=0.3,
                   eddy_coefficients=table, a0=np.ones(4))
    t2 = rom.solve(ops, (), dt=0.05, t_final=0.3,
                   eddy_coefficients=lambda t: [np.sin(t), np.cos(t)],
                   a0=np.ones(4))
    assert np.abs(t1.a - t2.a).max() < 1e-13
    ref = _reference_trajectory(ops, np.ones(4), 0.05, 6, l_tab=table)
    assert np.abs(t1.a - ref).max() < 1e-9


def test_backward_euler_first_order_convergence():
    ops = _plain_ops(ru=4, seed=5)
    a0 = np.array([0.8, -0.3, 0.4, 0.1])
    fine = rom.solve(ops, (), dt=0.0025, t_final=0.4, a0=a0)
    errs = []
    for dt in (0.04, 0.02):
        traj = rom.solve(ops, (), dt=dt, t_final=0.4, a0=a0)
        errs.append(np.abs(traj.a[-1] - fine.a[-1]).max())
    ratio = errs[0] / errs[1]
    assert 1.5 < ratio < 2.8


def test_solve_validation():
    ops = _plain_ops(ru=3, seed=6)
    with pytest.raises(ConfigurationError):
        rom.solve(ops, (), dt=-0.1, t_final=1.0)
    with pytest.raises(ConfigurationError):
        rom.solve(ops, (), dt=0.3, t_final=1.0)
    with pytest.raises(DimensionError):
        rom.solve(ops, (), dt=0.1, t_final=1.0, a0=np.zeros(5))
    with pytest.raises(ConfigurationError):
        rom.solve(ops, (), dt=0.1, t_final=1.0, with_thermal=True)
    with pytest.raises(ConfigurationError):
        rom.solve(ops, (), dt=0.1, t_final=1.0, thermal_closure="banana")
    ops_rn = _plain_ops(ru=3, rn=2, seed=7)
    with pytest.raises(DimensionError):
        rom.solve(ops_rn, (), dt=0.1, t_final=0.2,
                  eddy_coefficients=np.zeros((3, 1)))
    with pytest.raises(ConfigurationError):
        rom.solve(ops_rn, (), dt=0.1, t_final=0.2,
                  eddy_coefficients=np.full((3, 2), np.nan))


def test_newton_failure_carries_partial_trajectory():
    ops = _plain_ops(ru=4, seed=8)
    a0 = 50.0 * np.ones(4)
    with pytest.raises(StepError) as err:
        rom.solve(ops, (), dt=0.05, t_final=0.5, a0=a0, newton_maxit=1)
    partial = err.value.trajectory
    assert partial is not None
    assert partial.times.size >= 1
    assert np.array_equal(partial.a[0], a0)


def test_trajectory_accessors():
    ops = _plain_ops(ru=3, seed=9)
    traj = rom.solve(ops, (), dt=0.1, t_final=0.5, a0=np.ones(3))
    s = traj.state(2)
    assert s.t == pytest.approx(0.2)
    assert np.array_equal(s.a, traj.a[2])
    cut = traj.truncated(3)
    assert cut.n_steps == 3
    assert cut.times[-1] == pytest.approx(0.3)
    assert "online_seconds" in traj.meta


# ---------------------------------------------------------------------------
# mini replay: FOM -> POD -> Galerkin -> ROM on a coarse tee problem
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def mini():
    mu = (0.55, 0.73)
    mesh = fom.tee_mesh(main_nx=20, main_ny=10, branch_nx=5, branch_ny=8,
                        branch_i0=8, h=1.0 / 40)
    cfg = fom.FOMConfig(mesh=mesh, dt=5e-3, t_final=0.25, snapshot_every=5e-3,
                        picard_sweeps=2)
    recs = fom.run_fom(cfg, mu=mu)
    bcs_u = fom.tee_velocity_bcs(mu)
    bcs_p = fom.tee_pressure_bcs()
    bcs_t = fom.tee_temperature_bcs(cfg.theta_main, cfg.theta_branch)

    u_lifts = [lifting.compute_control_function(mesh, bcs_u, p, solenoidal=True)
               for p in ("inlet_main", "inlet_branch")]
    uD = np.array([lifting.scaling_coefficient(l, bcs_u) for l in u_lifts])
    th_main = lifting.compute_control_function(mesh, bcs_t, "inlet_main")
    th_branch = lifting.compute_control_function(mesh, bcs_t, "inlet_branch")
    theta_lift = Field(mesh, cfg.theta_main * th_main.field.values
                       + cfg.theta_branch * th_branch.field.values)

    times = np.array([r.t for r in recs])
    sets = {name: pod.SnapshotSet.from_records(mesh, [recs], name, [mu], times)
            for name in ("U", "p", "T", "nut")}
    u0, p0, t0 = fom._initial_state(cfg, mu)
    hom_u = sets["U"].matrix - np.outer(
        u_lifts[0].flat(), np.full(len(recs), uD[0])) - np.outer(
        u_lifts[1].flat(), np.full(len(recs), uD[1]))
    sets["U"] = pod.SnapshotSet(mesh=mesh, components=2, matrix=hom_u,
                                mus=[mu], times=times, kind="U")
    hom_t = sets["T"].matrix - theta_lift.flat()[:, None]
    sets["T"] = pod.SnapshotSet(mesh=mesh, components=1, matrix=hom_t,
                                mus=[mu], times=times, kind="T")

    def solid_rank(s):
        lam, _ = pod.eigendecompose(pod.assemble_correlation(s))
        return int(np.count_nonzero(lam > 1e-11 * lam[0]))

    phi = pod.standard_pod(sets["U"], rank=solid_rank(sets["U"]))
    psi = pod.standard_pod(sets["p"], rank=solid_rank(sets["p"]))
    chi = pod.standard_pod(sets["T"], rank=solid_rank(sets["T"]))
    xi = pod.standard_pod(sets["nut"], rank=solid_rank(sets["nut"]))
    S, _ = galerkin.supremizer_enrichment(psi, phi, bcs_u, bcs_p)
    phi2 = galerkin.append_supremizers(phi, S)

    vops = galerkin.assemble_velocity_operators(phi2, psi, xi, u_lifts,
                                                bcs_u, bcs_p)
    tops = galerkin.assemble_thermal_operators(phi2, chi, xi, u_lifts,
                                               theta_lift, bcs_t, bcs_u)
    ops = galerkin.combine(vops, tops, nu=cfg.nu, alpha=cfg.alpha,
                           pr_t=cfg.pr_t)
    ops.n_sup = S.shape[1]

    a_fom = np.zeros((len(recs) + 1, phi2.rank))
    c_fom = np.zeros((len(recs) + 1, chi.rank))
    l_fom = np.zeros((len(recs) + 1, xi.rank))
    a_fom[0] = rom.project_field(phi2, Field(mesh, u0), u_lifts, uD)
    c_fom[0] = chi.project(t0 - theta_lift.values[:, 0])
    l_fom[0] = xi.project(fom.eddy_viscosity_model(
        Field(mesh, u0), bcs_u, cfg.cs).flat())
    for k, rec in enumerate(recs, start=1):
        a_fom[k] = phi2.project(rec.fields["U"].flat()
                                - uD[0] * u_lifts[0].flat()
                                - uD[1] * u_lifts[1].flat())
        c_fom[k] = chi.project(rec.fields["T"].flat()
                               - theta_lift.values[:, 0])
        l_fom[k] = xi.project(rec.fields["nut"].flat())
    return dict(cfg=cfg, mu=mu, mesh=mesh, ops=ops, uD=uD, phi2=phi2, psi=psi,
                chi=chi, xi=xi, u_lifts=u_lifts, theta_lift=theta_lift,
                a_fom=a_fom, c_fom=c_fom, l_fom=l_fom, recs=recs)


def test_replay_tracks_projected_coefficients(mini):
    cfg = mini["cfg"]
    traj = rom.solve(mini["ops"], mini["uD"], cfg.dt, cfg.t_final,
                     eddy_coefficients=mini["l_fom"],
                     a0=mini["a_fom"][0], c0=mini["c_fom"][0])
    den_a = np.sqrt((mini["a_fom"][1:] ** 2).sum())
    den_c = np.sqrt((mini["c_fom"][1:] ** 2).sum())
    err_a = np.sqrt(((traj.a[1:] - mini["a_fom"][1:]) ** 2).sum()) / den_a
    err_c = np.sqrt(((traj.c[1:] - mini["c_fom"][1:]) ** 2).sum()) / den_c
    assert err_a < 5e-3
    assert err_c < 5e-3
    assert rom.constraint_residual(mini["ops"], traj, mini["uD"]) < 1e-9


def test_reconstruction_roundtrip(mini):
    cfg = mini["cfg"]
    traj = rom.solve(mini["ops"], mini["uD"], cfg.dt, cfg.t_final,
                     eddy_coefficients=mini["l_fom"],
                     a0=mini["a_fom"][0], c0=mini["c_fom"][0])
    bases = {"U": mini["phi2"], "p": mini["psi"], "T": mini["chi"],
             "nut": mini["xi"]}
    out = rom.reconstruct(traj, bases, u_lifts=mini["u_lifts"],
                          u_lift_coeffs=mini["uD"],
                          theta_lift=mini["theta_lift"], indices=[10, 50])
    assert set(out) == {"U", "p", "T", "nut"}
    assert len(out["U"]) == 2
    u10 = rom.reconstruct_velocity(mini["phi2"], mini["u_lifts"], mini["uD"],
                                   traj.a[10])
    assert np.allclose(out["U"][0].values, u10.values)
    # reconstructed velocity at the last recorded step stays near the snapshot
    rec = mini["recs"][-1]
    u_rec = rom.reconstruct_velocity(mini["phi2"], mini["u_lifts"], mini["uD"],
                                     traj.a[-1])
    rel = (np.abs(u_rec.values - rec.fields["U"].values).max()
           / np.abs(rec.fields["U"].values).max())
    assert rel < 0.02


def test_initial_conditions_projection(mini):
    rec = mini["recs"][-1]
    fields = dict(rec.fields)
    bases = {"U": mini["phi2"], "p": mini["psi"], "T": mini["chi"],
             "nut": mini["xi"]}
    state = rom.initial_conditions(
        fields, bases, u_lifts=mini["u_lifts"], u_lift_coeffs=mini["uD"],
        theta_lifts=[mini["theta_lift"]], theta_lift_coeffs=[1.0],
        t=rec.t)
    assert np.allclose(state.a, mini["a_fom"][-1], atol=1e-10)
    assert np.allclose(state.c, mini["c_fom"][-1], atol=1e-10)
    assert np.allclose(state.l, mini["l_fom"][-1], atol=1e-10)
    assert state.t == pytest.approx(rec.t)
    assert state.b.shape == (mini["psi"].rank,)


def test_initial_conditions_validation(mini):
    other_mesh = fom.tee_mesh(8, 4, 2, 3, 3, 0.05)
    bad = {"U": Field(other_mesh, np.zeros((other_mesh.n_cells, 2)))}
    with pytest.raises(DimensionError):
        rom.initial_conditions(bad, {"U": mini["phi2"]})
    with pytest.raises(ConfigurationError):
        rom.initial_conditions({}, {"nut": mini["xi"]},
                               interp="not-none-without-mu")


def test_thermal_closures_agree_for_uniform_eddy_modes(mini):
    """A spatially constant eddy mode makes tensor and scalar closures equal."""
    mesh = mini["mesh"]
    w1 = mesh.weights(1)
    const = np.full((mesh.n_cells, 1), 1.0)
    const /= np.sqrt(w1 @ const[:, 0] ** 2)
    xi_const = pod.PODBasis(mesh=mesh, components=1, modes=const,
                            eigenvalues=np.array([1.0]), kind="nut")
    cfg = mini["cfg"]
    bcs_u = fom.tee_velocity_bcs(mini["mu"])
    bcs_t = fom.tee_temperature_bcs(cfg.theta_main, cfg.theta_branch)
    bcs_p = fom.tee_pressure_bcs()
    vops = galerkin.assemble_velocity_operators(
        mini["phi2"], mini["psi"], xi_const, mini["u_lifts"], bcs_u, bcs_p)
    tops = galerkin.assemble_thermal_operators(
        mini["phi2"], mini["chi"], xi_const, mini["u_lifts"],
        mini["theta_lift"], bcs_t, bcs_u)
    ops = galerkin.combine(vops, tops, nu=cfg.nu, alpha=cfg.alpha,
                           pr_t=cfg.pr_t)
    l_tab = np.full((11, 1), 2e-4)
    kw = dict(eddy_coefficients=l_tab, a0=mini["a_fom"][0],
              c0=mini["c_fom"][0])
    t_tensor = rom.solve(ops, mini["uD"], cfg.dt, 10 * cfg.dt,
                         thermal_closure="tensor", **kw)
    t_scalar = rom.solve(ops, mini["uD"], cfg.dt, 10 * cfg.dt,
                         thermal_closure="scalar", **kw)
    assert np.abs(t_tensor.c - t_scalar.c).max() < 1e-10
    assert np.abs(t_tensor.a - t_scalar.a).max() < 1e-12
