"""Error metrics, line probes and CSV report output."""

import csv

import numpy as np
import pytest

from romkit import evaluation as ev
from romkit.errors import ConfigurationError, DataError, DimensionError
from romkit.fom import tee_mesh
from romkit.mesh import Field, box_mesh


@pytest.fixture(scope="module")
def mesh():
    return box_mesh(8, 5, 0.1, 0.2)


def _field(mesh, fn, components=1):
    xc = (np.arange(mesh.nx) + 0.5) * mesh.dx
    yc = (np.arange(mesh.ny) + 0.5) * mesh.dy
    vals = np.zeros((mesh.n_cells, components))
    for j in range(mesh.ny):
        for i in range(mesh.nx):
            c = mesh.cell_id[j, i]
            if c >= 0:
                v = fn(xc[i], yc[j])
                vals[c] = v if components > 1 else [v]
    return Field(mesh, vals)


def test_weighted_norm_matches_cell_sum(mesh):
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(mesh.n_cells, 2))
    f = Field(mesh, vals)
    expected = np.sqrt(np.sum(mesh.cell_volumes[:, None] * vals ** 2))
    assert ev.weighted_norm(f) == pytest.approx(expected, rel=1e-13)


def test_relative_l2_error_formula(mesh):
    f = _field(mesh, lambda x, y: 2.0 + x)
    g = Field(mesh, f.values * 1.01)
    # uniform 1% amplification -> exactly 1% relative error
    assert ev.relative_l2_error(f, g) == pytest.approx(1.0, rel=1e-12)
    assert ev.relative_l2_error(f, f) == 0.0
    with pytest.raises(DataError):
        ev.relative_l2_error(Field(mesh, np.zeros(mesh.n_cells)), f)
    other = box_mesh(4, 4, 0.1, 0.1)
    with pytest.raises(DimensionError):
        ev.relative_l2_error(f, Field(other, np.zeros(other.n_cells)))


def test_error_statistics():
    lo, hi, avg = ev.error_statistics([3.0, 1.0, 2.0])
    assert (lo, hi, avg) == (1.0, 3.0, 2.0)
    with pytest.raises(DataError):
        ev.error_statistics([])


def test_total_energy_and_error(mesh):
    u = _field(mesh, lambda x, y: (1.0, -0.5), components=2)
    th = _field(mesh, lambda x, y: 2.0)
    vol = mesh.cell_volumes.sum()
    e = ev.total_energy(u, th, kinetic_weight=2.0, thermal_weight=0.5)
    assert e == pytest.approx(0.5 * 2.0 * 1.25 * vol + 0.5 * 0.5 * 4.0 * vol,
                              rel=1e-12)
    # scaling temperature by sqrt(2) doubles the thermal half of the energy
    th2 = Field(mesh, th.values * np.sqrt(2.0))
    err = ev.total_energy_error(u, th, u, th2, kinetic_weight=2.0,
                                thermal_weight=0.5)
    e_th = 0.5 * 0.5 * 4.0 * vol
    assert err == pytest.approx(100.0 * e_th / e, rel=1e-12)
    assert ev.total_energy_error(u, th, u, th) == 0.0


def test_speedup():
    assert ev.speedup(100.0, 4.0) == pytest.approx(25.0)
    with pytest.raises(DataError):
        ev.speedup(0.0, 1.0)
    with pytest.raises(DataError):
        ev.speedup(1.0, -2.0)


def test_line_probe_reads_cell_values(mesh):
    f = _field(mesh, lambda x, y: x + 10.0 * y)
    # horizontal line through the middle of cell row j=2 (y in [0.4, 0.6))
    arcs, vals = ev.line_probe(f, [(0.05, 0.5), (0.75, 0.5)], spacing=0.1)
    assert arcs[0] == 0.0
    assert arcs[-1] == pytest.approx(0.7)
    assert np.all(np.diff(arcs) > 0)
    xc = 0.05 + arcs
    expected = (np.floor(xc / mesh.dx) + 0.5) * mesh.dx + 10.0 * 0.5
    assert np.allclose(vals[:, 0], expected)


def test_line_probe_multi_segment_and_components(mesh):
    f = _field(mesh, lambda x, y: (x, y), components=2)
    poly = [(0.05, 0.1), (0.05, 0.9), (0.75, 0.9)]
    arcs, vals = ev.line_probe(f, poly)
    assert vals.shape[1] == 2
    assert arcs[-1] == pytest.approx(0.8 + 0.7)
    # first leg is vertical: x-component constant, y-component increasing
    leg1 = vals[arcs <= 0.8 + 1e-12]
    assert np.allclose(leg1[:, 0], 0.05, atol=mesh.dx)
    assert np.all(np.diff(leg1[:, 1]) >= 0)


def test_line_probe_rejects_outside_points(mesh):
    f = _field(mesh, lambda x, y: 0.0)
    with pytest.raises(ConfigurationError):
        ev.line_probe(f, [(0.05, 0.5), (2.0, 0.5)])
    with pytest.raises(ConfigurationError):
        ev.line_probe(f, [(0.05, -0.3), (0.05, 0.5)])
    with pytest.raises(ConfigurationError):
        ev.line_probe(f, [(0.05, 0.5)])  # not a polyline


def test_line_probe_rejects_inactive_cells():
    tee = tee_mesh(16, 8, 4, 6, 6, h=0.05)
    f = Field(tee, np.zeros(tee.n_cells))
    # a point above the main duct but outside the branch opening
    x_dead = (6 - 2) * 0.05  # left of branch_i0
    y_dead = 8 * 0.05 + 0.1
    with pytest.raises(ConfigurationError):
        ev.line_probe(f, [(x_dead, 0.1), (x_dead, y_dead)])


def test_report_validate_and_statistics():
    times = np.array([0.1, 0.2, 0.3])
    rep = ev.ErrorReport(times=times,
                         field_errors={"U": np.array([1.0, 2.0, 3.0])})
    rep.validate()
    assert rep.statistics()["U"] == (1.0, 3.0, 2.0)
    bad_len = ev.ErrorReport(times=times,
                             field_errors={"U": np.array([1.0])})
    with pytest.raises(DataError):
        bad_len.validate()
    bad_neg = ev.ErrorReport(times=times,
                             field_errors={"U": np.array([1.0, -2.0, 3.0])})
    with pytest.raises(DataError):
        bad_neg.validate()
    with pytest.raises(DataError):
        rep.speedup_factor


def test_build_report_and_write(tmp_path, mesh):
    times = [0.5, 1.0]
    u_f = [_field(mesh, lambda x, y: (1.0 + x, y), components=2)
           for _ in times]
    t_f = [_field(mesh, lambda x, y: 300.0 + x) for _ in times]
    u_r = [Field(mesh, f.values * 1.02) for f in u_f]
    t_r = [Field(mesh, f.values * 1.001) for f in t_f]
    rep = ev.build_report(times, {"U": u_f, "T": t_f},
                          {"U": u_r, "T": t_r},
                          fom_seconds=40.0, rom_seconds=0.5)
    assert rep.field_errors["U"][0] == pytest.approx(2.0, rel=1e-9)
    assert rep.field_errors["T"][1] == pytest.approx(0.1, rel=1e-9)
    assert rep.energy_errors is not None and rep.energy_errors.shape == (2,)
    assert rep.speedup_factor == pytest.approx(80.0)

    written = rep.write(tmp_path)
    names = {p.name for p in written}
    assert names == {"errors_U.csv", "errors_T.csv", "stats.csv",
                     "energy.csv", "timing.csv"}
    with open(tmp_path / "errors_U.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "percent"]
    assert float(rows[1][1]) == pytest.approx(2.0, rel=1e-9)
    with open(tmp_path / "timing.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert float(rows[1][2]) == pytest.approx(80.0)
    with open(tmp_path / "energy.csv") as fh:
        first = fh.readline()
    assert first.startswith("#") and "kinetic_weight" in first


def test_build_report_length_mismatch(mesh):
    f = _field(mesh, lambda x, y: 1.0)
    with pytest.raises(DataError):
        ev.build_report([0.1, 0.2], {"T": [f]}, {"T": [f, f]})


def test_build_report_skips_missing_fields(mesh):
    f = _field(mesh, lambda x, y: 1.0)
    rep = ev.build_report([0.1], {"T": [f], "p": [f]}, {"T": [f]})
    assert set(rep.field_errors) == {"T"}
    assert rep.energy_errors is None


def test_write_probe_csv(tmp_path):
    arcs = np.array([0.0, 0.5, 1.0])
    vals = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    path = tmp_path / "probe.csv"
    ev.write_probe_csv(path, arcs, vals)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["s", "vx", "vy"]
    assert [float(x) for x in rows[2]] == [0.5, 3.0, 4.0]
    ev.write_probe_csv(tmp_path / "probe1.csv", arcs, vals[:, 0])
    with open(tmp_path / "probe1.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["s", "v"]
