"""Full-order solver: incompressibility, boundedness, model terms, storage."""

import numpy as np
import pytest

from romkit import fom, operators
from romkit.errors import ConfigurationError
from romkit.mesh import Field, box_mesh, tee_mesh


def _coarse_config(**kw):
    mesh = tee_mesh(main_nx=24, main_ny=12, branch_nx=6, branch_ny=9,
                    branch_i0=9, h=1.0 / 48)
    base = dict(mesh=mesh, dt=5.0e-3, t_final=0.4, snapshot_every=0.1)
    base.update(kw)
    return fom.FOMConfig(**base)


@pytest.fixture(scope="module")
def coarse_run():
    cfg = _coarse_config()
    return cfg, fom.run_fom(cfg, mu=(0.59, 0.77))


def test_config_validation():
    mesh = tee_mesh(16, 8, 4, 6, 6, 0.02)
    with pytest.raises(ConfigurationError):
        fom.FOMConfig(mesh=mesh, geometry="sphere")
    with pytest.raises(ConfigurationError):
        fom.FOMConfig(mesh=mesh, dt=-1.0)
    with pytest.raises(ConfigurationError):
        fom.FOMConfig(mesh=mesh, picard_sweeps=0)
    with pytest.raises(ConfigurationError):
        fom.FOMConfig(mesh=mesh, scheme_u="quick")
    with pytest.raises(ConfigurationError):
        fom.FOMConfig(mesh=mesh, init="warm")
    with pytest.raises(ConfigurationError):
        fom.FOMConfig(mesh=mesh, dt=3e-3, snapshot_every=1e-2)
    with pytest.warns(UserWarning):
        fom.FOMConfig(mesh=mesh, dt=0.1, t_final=0.2, snapshot_every=0.1,
                      u_main=1.0)


def test_run_records_cadence_and_fields(coarse_run):
    cfg, recs = coarse_run
    assert len(recs) == 4
    assert [round(r.t, 6) for r in recs] == [0.1, 0.2, 0.3, 0.4]
    for rec in recs:
        assert set(rec.fields) == {"U", "p", "T", "nut"}
        assert rec.fields["U"].components == 2
        assert rec.fields["T"].components == 1


def test_velocity_is_divergence_free(coarse_run):
    cfg, recs = coarse_run
    from romkit.fom import tee_velocity_bcs
    bcs_u = tee_velocity_bcs((0.59, 0.77))
    limit = 1e-8 * 1.0 / min(cfg.mesh.dx, cfg.mesh.dy)
    for rec in recs:
        div = operators.divergence(rec.fields["U"], bcs_u)
        assert np.abs(div.values).max() < limit


def test_recorded_eddy_viscosity_matches_recorded_velocity(coarse_run):
    cfg, recs = coarse_run
    from romkit.fom import tee_velocity_bcs
    bcs_u = tee_velocity_bcs((0.59, 0.77))
    for rec in recs[:2]:
        nut = fom.eddy_viscosity_model(rec.fields["U"], bcs_u, cfg.cs)
        assert np.allclose(nut.values, rec.fields["nut"].values, atol=1e-14)
        assert rec.fields["nut"].values.min() >= 0.0


def test_temperature_bounded_by_inlet_values():
    # upwind transport keeps the passive scalar inside its boundary data range
    cfg = _coarse_config(scheme_theta="upwind", t_final=0.3)
    recs = fom.run_fom(cfg, mu=(0.59, 0.77))
    lo, hi = cfg.theta_main, cfg.theta_branch
    for rec in recs:
        T = rec.fields["T"].values
        assert T.min() >= lo - 1e-10
        assert T.max() <= hi + 1e-10


def test_outlet_temperature_mixes_inlet_streams():
    cfg = _coarse_config(t_final=2.0, dt=5e-3, snapshot_every=0.5)
    recs = fom.run_fom(cfg, mu=(0.59, 0.77))
    mesh = cfg.mesh
    faces = mesh.patch_faces("outlet")
    cells = mesh.bface_cell[faces]
    t_out = float(recs[-1].fields["T"].values[cells, 0].mean())
    assert cfg.theta_main < t_out < cfg.theta_branch


def test_initial_state_lifting_blend():
    cfg = _coarse_config()
    u0, p0, th0 = fom._initial_state(cfg, (0.59, 0.77))
    mesh = cfg.mesh
    from romkit.fom import tee_velocity_bcs
    bcs_u = tee_velocity_bcs((0.59, 0.77))
    div = operators.divergence(Field(mesh, u0), bcs_u)
    assert np.abs(div.values).max() < 1e-8 / min(mesh.dx, mesh.dy)
    assert np.allclose(p0, 0.0)
    assert th0.min() > 0.0  # lifted temperature blend, not rest
    cfg_zero = _coarse_config(init="zero")
    u0z, _, th0z = fom._initial_state(cfg_zero, (0.59, 0.77))
    assert np.allclose(u0z, 0.0)
    assert np.allclose(th0z, cfg.theta_main)


def test_explicit_and_implicit_convection_agree_at_small_dt():
    # both integrators discretize the same dynamics; a few tiny steps from the
    # same smooth state must agree to first order
    kw = dict(dt=2.5e-4, t_final=2.5e-3, snapshot_every=2.5e-3, cs=0.0)
    rec_i = fom.run_fom(_coarse_config(implicit_convection=True, **kw),
                        mu=(0.3, 0.4))[-1]
    rec_e = fom.run_fom(_coarse_config(implicit_convection=False, **kw),
                        mu=(0.3, 0.4))[-1]
    du = np.abs(rec_i.fields["U"].values - rec_e.fields["U"].values).max()
    assert du < 5e-4


def test_picard_sweeps_converge_toward_fixed_point():
    # the sweep-2 state must sit closer to the sweep-4 state than sweep-1 does
    kw = dict(dt=5e-3, t_final=5e-2, snapshot_every=5e-2)
    states = {}
    for sweeps in (1, 2, 4):
        rec = fom.run_fom(_coarse_config(picard_sweeps=sweeps, **kw),
                          mu=(0.59, 0.77))[-1]
        states[sweeps] = rec.fields["U"].values
    d12 = np.abs(states[1] - states[4]).max()
    d24 = np.abs(states[2] - states[4]).max()
    assert d24 < d12


def test_strain_rate_of_linear_field_is_exact():
    mesh = box_mesh(8, 6, 0.1, 0.1)
    A = np.array([[0.3, -0.7], [1.1, -0.3]])
    u = Field(mesh, np.column_stack([A[0, 0] * mesh.xc + A[0, 1] * mesh.yc,
                                     A[1, 0] * mesh.xc + A[1, 1] * mesh.yc]))
    from romkit.mesh import neumann
    bcs = {p: neumann() for p in mesh.patch_names}
    mag = fom.strain_rate_magnitude(u, bcs)
    D = 0.5 * (A + A.T)
    expect = np.sqrt(2.0 * np.sum(D * D))
    inner = np.ones(mesh.n_cells, bool)
    inner[mesh.bface_cell] = False
    assert np.allclose(mag[inner], expect, rtol=1e-12)
    nut = fom.eddy_viscosity_model(u, bcs, cs=0.2)
    assert np.allclose(nut.values[inner, 0], (0.2 * mesh.h) ** 2 * expect,
                       rtol=1e-12)
    with pytest.raises(ConfigurationError):
        fom.eddy_viscosity_model(u, bcs, cs=-0.1)


def test_turbulent_diffusivity_scaling():
    mesh = box_mesh(3, 3, 0.1, 0.1)
    nut = Field(mesh, np.full(mesh.n_cells, 0.02))
    alpha_t = fom.turbulent_diffusivity(nut, 0.85)
    assert np.allclose(alpha_t.values, 0.02 / 0.85)
    with pytest.raises(ConfigurationError):
        fom.turbulent_diffusivity(nut, 0.0)


def test_lid_cavity_profile_shape():
    y, ux = fom.lid_cavity_profile(16, re=100.0, t_max=8.0, steady_tol=1e-5)
    assert y.shape == ux.shape == (16,)
    assert np.all(np.diff(y) > 0)
    # no-slip at the bottom, dragged along under the lid
    assert abs(ux[0]) < 0.1
    assert ux[-1] > 0.5
    # the return flow reverses sign somewhere below mid-height
    assert ux.min() < -0.05


def test_manufactured_snapshots_structure():
    mesh = box_mesh(10, 8, 0.1, 0.1)
    mus = [(0.5, 0.7), (0.55, 0.75)]
    times = np.linspace(0.1, 0.5, 5)
    made = fom.manufactured_snapshots(mesh, mus, times, mode_count=4, seed=3)
    snaps = made.snapshots
    assert snaps.n_columns == 10
    assert np.linalg.matrix_rank(snaps.matrix) == 4
    w = snaps.weights
    G = made.shapes.T @ (w[:, None] * made.shapes)
    assert np.abs(G - np.eye(4)).max() < 1e-10
    assert np.allclose(made.shapes @ made.coefficients, snaps.matrix)
    with pytest.raises(ConfigurationError):
        fom.manufactured_snapshots(mesh, mus, times, mode_count=0)


def test_snapshot_sweep_roundtrip(tmp_path, coarse_run):
    cfg, recs = coarse_run
    mus = [(0.59, 0.77)]
    times = [r.t for r in recs]
    fom.save_snapshot_sweep(tmp_path / "snaps", cfg.mesh, [recs], mus, times,
                            config_hash="abc123")
    mesh, mus2, times2, runs, manifest = fom.load_snapshot_sweep(
        tmp_path / "snaps")
    assert mesh.same_as(cfg.mesh)
    assert mus2 == mus
    assert np.allclose(times2, times)
    assert manifest["config_hash"] == "abc123"
    for a, b in zip(recs, runs[0]):
        for name in a.fields:
            assert np.array_equal(a.fields[name].values, b.fields[name].values)
