"""Error metrics and report tables for comparing full and reduced runs.

All norms are volume-weighted L2 norms over the mesh, so the numbers are
discrete analogues of the continuous field errors.  Reports are emitted as
plain CSV files; plotting is left to the consumer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import ConfigurationError, DataError
from .mesh import Field, check_compatible


def weighted_norm(f: Field) -> float:
    """Volume-weighted L2 norm of a field."""
    w = f.mesh.weights(f.components)
    return float(np.sqrt(w @ (f.flat() ** 2)))


def relative_l2_error(fom: Field, rom: Field) -> float:
    """100 * ||fom - rom|| / ||fom|| in the volume-weighted L2 norm."""
    check_compatible(fom, rom)
    denom = weighted_norm(fom)
    if denom == 0.0:
        raise DataError("reference field has zero norm; relative error is undefined")
    diff = Field(fom.mesh, fom.values - rom.values)
    return 100.0 * weighted_norm(diff) / denom


def error_statistics(series):
    """(min, max, average) of an error series over the saved time instances."""
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise DataError("cannot take statistics of an empty error series")
    return float(series.min()), float(series.max()), float(series.mean())


def total_energy(velocity: Field, temperature: Field,
                 kinetic_weight: float = 1.0, thermal_weight: float = 1.0) -> float:
    """Combined energy 0.5*kw*<u,u> + 0.5*tw*<theta,theta> (volume-weighted)."""
    return (0.5 * kinetic_weight * weighted_norm(velocity) ** 2
            + 0.5 * thermal_weight * weighted_norm(temperature) ** 2)


def total_energy_error(fom_velocity: Field, fom_temperature: Field,
                       rom_velocity: Field, rom_temperature: Field,
                       kinetic_weight: float = 1.0, thermal_weight: float = 1.0) -> float:
    """100 * |E_fom - E_rom| / E_fom with E the combined kinetic+thermal energy."""
    e_fom = total_energy(fom_velocity, fom_temperature, kinetic_weight, thermal_weight)
    e_rom = total_energy(rom_velocity, rom_temperature, kinetic_weight, thermal_weight)
    if e_fom == 0.0:
        raise DataError("reference energy is zero; relative error is undefined")
    return 100.0 * abs(e_fom - e_rom) / e_fom


def speedup(fom_seconds: float, rom_seconds: float) -> float:
    """Wall-time ratio full/reduced."""
    if fom_seconds <= 0.0 or rom_seconds <= 0.0:
        raise DataError("wall times must be positive to form a speedup")
    return fom_seconds / rom_seconds


def _sample_polyline(polyline, spacing):
    """Points along the polyline at roughly `spacing`, with arc lengths."""
    pts = np.asarray(polyline, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ConfigurationError("polyline must be an (m, 2) array with m >= 2")
    samples = [pts[0]]
    arcs = [0.0]
    base = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        seg = float(np.hypot(*(b - a)))
        if seg == 0.0:
            continue
        n_sub = max(1, int(np.ceil(seg / spacing - 1e-12)))
        for k in range(1, n_sub + 1):
            t = k / n_sub
            samples.append(a + t * (b - a))
            arcs.append(base + t * seg)
        base += seg
    return np.array(samples), np.array(arcs)


def line_probe(f: Field, polyline, spacing: Optional[float] = None):
    """Sample a field along a polyline by nearest-cell lookup.

    Returns (arc_length, values) where values has one column per component.
    Raises if any sample point falls outside the active domain.
    """
    mesh = f.mesh
    if spacing is None:
        spacing = min(mesh.dx, mesh.dy)
    pts, arcs = _sample_polyline(polyline, spacing)
    tol = 1e-9 * min(mesh.dx, mesh.dy)
    i = np.clip(np.floor(pts[:, 0] / mesh.dx), 0, mesh.nx - 1).astype(np.int64)
    j = np.clip(np.floor(pts[:, 1] / mesh.dy), 0, mesh.ny - 1).astype(np.int64)
    in_box = ((pts[:, 0] >= -tol) & (pts[:, 0] <= mesh.nx * mesh.dx + tol)
              & (pts[:, 1] >= -tol) & (pts[:, 1] <= mesh.ny * mesh.dy + tol))
    cells = mesh.cell_id[j, i]
    bad = ~in_box | (cells < 0)
    if np.any(bad):
        k = int(np.nonzero(bad)[0][0])
        raise ConfigurationError(
            f"probe point ({pts[k, 0]:.6g}, {pts[k, 1]:.6g}) lies outside the domain")
    return arcs, f.values[cells]


@dataclass
class ErrorReport:
    """Per-field error series plus energy and timing for one reduced run.

    field_errors maps a field name to its percent error series sampled at
    `times`.  Energy and timing entries are optional; statistics and speedup
    are derived on demand.
    """

    times: np.ndarray
    field_errors: Dict[str, np.ndarray] = field(default_factory=dict)
    energy_errors: Optional[np.ndarray] = None
    fom_seconds: Optional[float] = None
    rom_seconds: Optional[float] = None
    kinetic_weight: float = 1.0
    thermal_weight: float = 1.0

    def validate(self):
        nt = len(self.times)
        for name, series in self.field_errors.items():
            series = np.asarray(series, dtype=float)
            if series.shape != (nt,):
                raise DataError(f"error series for {name!r} does not match the time axis")
            if np.any(series < 0) or not np.all(np.isfinite(series)):
                raise DataError(f"error series for {name!r} must be finite and >= 0")
        if self.energy_errors is not None:
            e = np.asarray(self.energy_errors, dtype=float)
            if e.shape != (nt,) or np.any(e < 0) or not np.all(np.isfinite(e)):
                raise DataError("energy error series must be finite, >= 0 and match the time axis")
        return self

    def statistics(self):
        """{field: (min, max, average)} over the saved time instances."""
        return {name: error_statistics(series)
                for name, series in self.field_errors.items()}

    @property
    def speedup_factor(self) -> float:
        if self.fom_seconds is None or self.rom_seconds is None:
            raise DataError("timing information missing from the report")
        return speedup(self.fom_seconds, self.rom_seconds)

    def write(self, out_dir):
        """Emit the CSV bundle under out_dir; returns the written paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, series in self.field_errors.items():
            path = out / f"errors_{name}.csv"
            _write_rows(path, ("t", "percent"), zip(self.times, series))
            written.append(path)
        if self.field_errors:
            path = out / "stats.csv"
            rows = [(name,) + stats for name, stats in self.statistics().items()]
            _write_rows(path, ("field", "min", "max", "avg"), rows)
            written.append(path)
        if self.energy_errors is not None:
            path = out / "energy.csv"
            header_comment = (f"# kinetic_weight={self.kinetic_weight:g} "
                              f"thermal_weight={self.thermal_weight:g}")
            _write_rows(path, ("t", "percent"), zip(self.times, self.energy_errors),
                        comment=header_comment)
            written.append(path)
        if self.fom_seconds is not None and self.rom_seconds is not None:
            path = out / "timing.csv"
            _write_rows(path, ("fom_seconds", "rom_seconds", "speedup"),
                        [(self.fom_seconds, self.rom_seconds, self.speedup_factor)])
            written.append(path)
        return written


def build_report(times, fom_fields, rom_fields, fom_seconds=None, rom_seconds=None,
                 kinetic_weight: float = 1.0, thermal_weight: float = 1.0) -> ErrorReport:
    """Assemble an ErrorReport from per-time field lists.

    fom_fields / rom_fields map a field name to a list of Fields, one per
    entry of `times`.  The energy series is filled when both velocity ("U")
    and temperature ("T") are present on both sides.
    """
    times = np.asarray(times, dtype=float)
    nt = len(times)
    errors: Dict[str, np.ndarray] = {}
    for name, fom_list in fom_fields.items():
        if name not in rom_fields:
            continue
        rom_list = rom_fields[name]
        if len(fom_list) != nt or len(rom_list) != nt:
            raise DataError(f"field {name!r}: series length does not match the time axis")
        errors[name] = np.array([relative_l2_error(f, r)
                                 for f, r in zip(fom_list, rom_list)])
    energy = None
    if all(k in fom_fields and k in rom_fields for k in ("U", "T")):
        energy = np.array([
            total_energy_error(fom_fields["U"][k], fom_fields["T"][k],
                               rom_fields["U"][k], rom_fields["T"][k],
                               kinetic_weight, thermal_weight)
            for k in range(nt)
        ])
    report = ErrorReport(times=times, field_errors=errors, energy_errors=energy,
                         fom_seconds=fom_seconds, rom_seconds=rom_seconds,
                         kinetic_weight=kinetic_weight, thermal_weight=thermal_weight)
    return report.validate()


def write_probe_csv(path, arc_lengths, values, component_names=None):
    """probe CSV: arc length plus one column per sampled component."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if component_names is None:
        component_names = ["v"] if values.shape[1] == 1 else ["vx", "vy"]
    _write_rows(Path(path), ("s", *component_names),
                (np.concatenate([[s], row]) for s, row in zip(arc_lengths, values)))


def _write_rows(path, header, rows, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(comment + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, str):
        return x
    return format(float(x), ".10g")
