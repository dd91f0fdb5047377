"""Staged offline/online pipeline with content-hashed artifact caching.

The offline build runs generate -> lift -> pod -> project -> train-rbf.
Every stage writes its artifacts under <cache root>/stages/<name>/ and records
a key in the run manifest: the hash of the package version, the stage's
effective config sections and the content of its upstream artifacts.  A stage
whose key matches and whose outputs exist is skipped, so reruns are
idempotent, and deleting one stage's outputs regenerates at most that stage
and its dependents.

The online step loads the artifacts, integrates the reduced model at a query
parameter, reconstructs fields on a cadence and (optionally) evaluates errors
against a fresh full-order reference run.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import os
import time
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, StageError
from .evaluation import build_report
from .fom import (
    FOMConfig,
    load_snapshot_sweep,
    run_fom,
    save_snapshot_sweep,
    tee_pressure_bcs,
    tee_temperature_bcs,
    tee_velocity_bcs,
)
from .galerkin import (
    append_supremizers,
    assemble_thermal_operators,
    assemble_velocity_operators,
    combine,
    load_operators,
    save_operators,
    supremizer_enrichment,
)
from .lifting import (
    coefficient_table,
    compute_control_function,
    homogenize,
    load_lifts,
    save_lifts,
    scaling_coefficient,
)
from .mesh import Field, tee_mesh
from .pod import SnapshotSet, load_basis, nested_pod, save_basis, standard_pod
from .rbf import joint_centers, load_interpolant, resolve_spread, save_interpolant
from .rbf import train as rbf_train
from .rom import reconstruct, solve
from .storage import load_arrays, load_field, load_mesh, save_arrays, save_field

FIELD_NAMES = ("U", "p", "T", "nut")

_TRAIN_MAIN = ",".join(f"{0.535 + 0.01 * k:.3f}" for k in range(10))
_TRAIN_BRANCH = ",".join(f"{0.715 + 0.01 * k:.3f}" for k in range(10))

DEFAULTS = {
    "mesh": {
        "main_nx": "64", "main_ny": "32", "branch_nx": "16",
        "branch_ny": "24", "branch_i0": "24", "h": "0.01",
    },
    "fom": {
        "nu": "1e-3", "alpha": "1.4e-3", "pr_t": "0.85", "cs": "0.15",
        "dt": "2.5e-3", "t_final": "3.0", "snapshot_every": "0.1",
        "scheme_u": "central", "scheme_theta": "central",
        "theta_main": "292.15", "theta_branch": "309.5",
        "implicit_convection": "true", "picard_sweeps": "2", "init": "lifting",
    },
    "training": {"u_main": _TRAIN_MAIN, "u_branch": _TRAIN_BRANCH},
    "testing": {"u_main": "0.550,0.570,0.580,0.590",
                "u_branch": "0.730,0.750,0.760,0.770"},
    "pod": {
        "method": "standard",
        "u_rank": "6", "p_rank": "10", "t_rank": "11", "nut_rank": "10",
        "u_threshold": "", "p_threshold": "", "t_threshold": "",
        "nut_threshold": "", "local_rank": "10", "local_threshold": "",
    },
    "rbf": {"spread": "cond-target", "lam": "0.0"},
    "online": {"dt": "", "t_final": "", "thermal_closure": "tensor",
               "fields_every": ""},
    "output": {"root": "romkit_run"},
}

STAGE_ORDER = ("generate", "lift", "pod", "project", "train-rbf")

# stage -> (config sections entering its key, upstream stages whose artifact
# content enters its key)
STAGE_DEFS = {
    "generate": (("mesh", "fom", "training"), ()),
    "lift": (("mesh", "fom", "training"), ("generate",)),
    "pod": (("pod",), ("lift",)),
    "project": (("fom",), ("lift", "pod")),
    "train-rbf": (("rbf",), ("lift", "pod")),
}


def _floats(text):
    items = [s.strip() for s in str(text).split(",") if s.strip()]
    try:
        return [float(s) for s in items]
    except ValueError as exc:
        raise ConfigurationError(f"expected a comma-separated number list, got {text!r}") from exc


def _bool(text):
    t = str(text).strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


@dataclass
class RunConfig:
    """Effective pipeline configuration (defaults merged with the file)."""

    sections: dict = dc_field(default_factory=dict)
    path: str = "<defaults>"

    def get(self, section, key):
        return self.sections[section][key]

    def section_text(self, name):
        """Canonical text of one section, the unit of config hashing."""
        items = sorted(self.sections[name].items())
        return "\n".join(f"{k}={v}" for k, v in items)

    # ---- parsed views ------------------------------------------------
    def mesh(self):
        m = self.sections["mesh"]
        return tee_mesh(int(m["main_nx"]), int(m["main_ny"]),
                        int(m["branch_nx"]), int(m["branch_ny"]),
                        branch_i0=int(m["branch_i0"]), h=float(m["h"]))

    def fom_config(self, mesh=None, mu=None):
        f = self.sections["fom"]
        mesh = self.mesh() if mesh is None else mesh
        kwargs = dict(
            mesh=mesh, geometry="tee",
            nu=float(f["nu"]), alpha=float(f["alpha"]), pr_t=float(f["pr_t"]),
            cs=float(f["cs"]), dt=float(f["dt"]), t_final=float(f["t_final"]),
            snapshot_every=float(f["snapshot_every"]),
            scheme_u=f["scheme_u"], scheme_theta=f["scheme_theta"],
            theta_main=float(f["theta_main"]),
            theta_branch=float(f["theta_branch"]),
            implicit_convection=_bool(f["implicit_convection"]),
            picard_sweeps=int(f["picard_sweeps"]), init=f["init"])
        if mu is not None:
            kwargs["u_main"], kwargs["u_branch"] = float(mu[0]), float(mu[1])
        return FOMConfig(**kwargs)

    def training_mus(self):
        mains = _floats(self.get("training", "u_main"))
        branches = _floats(self.get("training", "u_branch"))
        if not mains or len(mains) != len(branches):
            raise ConfigurationError(
                "training u_main and u_branch must be nonempty lists of equal length")
        return [(m, b) for m, b in zip(mains, branches)]

    def test_mus(self):
        mains = _floats(self.get("testing", "u_main"))
        branches = _floats(self.get("testing", "u_branch"))
        if len(mains) != len(branches):
            raise ConfigurationError(
                "testing u_main and u_branch must have equal length")
        return [(m, b) for m, b in zip(mains, branches)]

    def pod_plan(self):
        p = self.sections["pod"]
        method = p["method"]
        if method not in ("standard", "nested"):
            raise ConfigurationError(f"unknown pod method {method!r}")
        plan = {"method": method}
        for name, key in (("U", "u"), ("p", "p"), ("T", "t"), ("nut", "nut")):
            thr = p[f"{key}_threshold"].strip()
            if thr:
                plan[name] = {"threshold": float(thr)}
            else:
                rank = int(p[f"{key}_rank"])
                if rank < 1:
                    raise ConfigurationError(f"{key}_rank must be at least 1")
                plan[name] = {"rank": rank}
        lthr = p["local_threshold"].strip()
        plan["local"] = ({"local_threshold": float(lthr)} if lthr
                         else {"local_rank": int(p["local_rank"])})
        return plan

    def rbf_plan(self):
        spread = self.get("rbf", "spread").strip()
        try:
            spread = float(spread)
        except ValueError:
            pass
        return {"spread": spread, "lam": float(self.get("rbf", "lam"))}

    def online_plan(self):
        o = self.sections["online"]
        f = self.sections["fom"]
        dt = float(o["dt"]) if o["dt"].strip() else float(f["dt"])
        t_final = (float(o["t_final"]) if o["t_final"].strip()
                   else float(f["t_final"]))
        fields_every = (float(o["fields_every"]) if o["fields_every"].strip()
                        else float(f["snapshot_every"]))
        closure = o["thermal_closure"]
        if closure not in ("tensor", "scalar"):
            raise ConfigurationError(f"unknown thermal closure {closure!r}")
        return {"dt": dt, "t_final": t_final, "fields_every": fields_every,
                "thermal_closure": closure}

    def output_root(self):
        return Path(self.get("output", "root"))

    def validate(self):
        self.mesh()
        self.fom_config()
        self.training_mus()
        self.test_mus()
        self.pod_plan()
        self.rbf_plan()
        self.online_plan()
        return self


def load_config(path=None):
    """Parse an INI run configuration; missing file -> error, no file -> defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file {path} does not exist")
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigurationError(f"unknown config section [{section}]")
            for key in parser[section]:
                if key not in DEFAULTS[section]:
                    raise ConfigurationError(
                        f"unknown key {key!r} in section [{section}]")
    sections = {name: dict(parser[name]) for name in DEFAULTS}
    return RunConfig(sections=sections,
                     path=str(path) if path is not None else "<defaults>").validate()


# ---------------------------------------------------------------------------
# hashing helpers
# ---------------------------------------------------------------------------

def _sha_text(*parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode())
        h.update(b"\x00")
    return h.hexdigest()


def _file_sha(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _tree_entries(root):
    root = Path(root)
    entries = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            entries[p.relative_to(root).as_posix()] = _file_sha(p)
    return entries


def _tree_digest(root):
    entries = _tree_entries(root)
    return _sha_text(*(f"{k}:{v}" for k, v in sorted(entries.items())))


# ---------------------------------------------------------------------------
# the pipeline
# ---------------------------------------------------------------------------

class Pipeline:
    def __init__(self, config: RunConfig):
        self.cfg = config
        self.out_root = Path(config.output_root())
        cache = os.environ.get("ROMKIT_CACHE", "").strip()
        self.cache_root = Path(cache) if cache else self.out_root
        self.stage_root = self.cache_root / "stages"
        self.manifest_path = self.cache_root / "manifest.json"
        self.manifest = self._load_manifest()

    # ---- manifest ----------------------------------------------------
    def _load_manifest(self):
        if self.manifest_path.is_file():
            return json.loads(self.manifest_path.read_text())
        return {"version": __version__, "stages": {}, "warnings": []}

    def _save_manifest(self):
        self.manifest["version"] = __version__
        self.manifest["config"] = {name: self.cfg.section_text(name)
                                   for name in DEFAULTS}
        self.cache_root.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(json.dumps(self.manifest, indent=1))

    def record_warning(self, stage, message):
        self.manifest.setdefault("warnings", []).append(
            {"stage": stage, "message": message,
             "at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())})
        self._save_manifest()

    # ---- stage plumbing ----------------------------------------------
    def stage_dir(self, name):
        return self.stage_root / name

    def stage_key(self, name):
        sections, upstream = STAGE_DEFS[name]
        parts = [__version__, name]
        parts += [self.cfg.section_text(s) for s in sections]
        parts += [_tree_digest(self.stage_dir(u)) for u in upstream]
        return _sha_text(*parts)

    def _is_cached(self, name, key):
        rec = self.manifest["stages"].get(name)
        if not rec or rec.get("key") != key:
            return False
        d = self.stage_dir(name)
        return all((d / rel).is_file() for rel in rec.get("outputs", {}))

    def run_stage(self, name, force=False):
        """Run one stage (and any missing upstreams); returns True if it ran."""
        if name not in STAGE_DEFS:
            raise ConfigurationError(f"unknown stage {name!r}")
        for up in STAGE_DEFS[name][1]:
            self.run_stage(up, force=False)
        key = self.stage_key(name)
        if not force and self._is_cached(name, key):
            return False
        out = self.stage_dir(name)
        if out.exists():
            for p in sorted(out.rglob("*"), reverse=True):
                p.unlink() if p.is_file() else p.rmdir()
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        try:
            getattr(self, "_stage_" + name.replace("-", "_"))(out)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, str(exc)) from exc
        self.manifest["stages"][name] = {
            "key": key, "outputs": _tree_entries(out),
            "seconds": time.perf_counter() - t0,
            "completed_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
        self._save_manifest()
        return True

    def offline(self):
        """Run all offline stages; returns {stage: ran} in order."""
        return {name: self.run_stage(name) for name in STAGE_ORDER}

    # ---- stage implementations ----------------------------------------
    def _stage_generate(self, out):
        cfg = self.cfg
        mesh = cfg.mesh()
        mus = cfg.training_mus()
        runs, seconds = [], []
        for mu in mus:
            fom_cfg = cfg.fom_config(mesh=mesh, mu=mu)
            t0 = time.perf_counter()
            runs.append(run_fom(fom_cfg, mu))
            seconds.append(time.perf_counter() - t0)
        times = [rec.t for rec in runs[0]]
        save_snapshot_sweep(out / "snapshots", mesh, runs, mus, times,
                            config_hash=_sha_text(cfg.section_text("fom")))
        (out / "timings.json").write_text(json.dumps(
            {"per_mu_seconds": seconds, "mean_seconds": float(np.mean(seconds))},
            indent=1))

    def _stage_lift(self, out):
        cfg = self.cfg
        mesh, mus, times, runs, _ = load_snapshot_sweep(
            self.stage_dir("generate") / "snapshots")
        fom_cfg = cfg.fom_config(mesh=mesh)
        bcs_u_mu = [tee_velocity_bcs(mu) for mu in mus]
        bcs_t = tee_temperature_bcs(fom_cfg.theta_main, fom_cfg.theta_branch)
        zl = [compute_control_function(mesh, bcs_u_mu[0], p, solenoidal=True)
              for p in ("inlet_main", "inlet_branch")]
        tl = [compute_control_function(mesh, bcs_t, p)
              for p in ("inlet_main", "inlet_branch")]
        save_lifts(out / "lifts_u", zl)
        save_lifts(out / "lifts_theta", tl)
        nt = len(times)
        uD_rows = coefficient_table(zl, bcs_u_mu, nt)
        tD = np.array([scaling_coefficient(t, bcs_t) for t in tl])
        theta_lift = Field(mesh, sum(c * t.field.values[:, 0]
                                     for c, t in zip(tD, tl)))
        save_field(out / "theta_lift.romf", theta_lift)

        sets = {}
        for name in FIELD_NAMES:
            comp = runs[0][0].fields[name].components
            snaps = SnapshotSet.from_records(mesh, runs, name, mus, times)
            if name == "U":
                snaps = homogenize(snaps, zl, uD_rows)
            elif name == "T":
                snaps = homogenize(snaps, tl, np.tile(tD[:, None], (1, snaps.n_columns)))
            sets[f"set_{name}"] = snaps.matrix
            sets[f"components_{name}"] = np.array([float(comp)])
        sets["uD_rows"] = uD_rows
        sets["tD"] = tD
        sets["times"] = np.asarray(times, dtype=float)
        sets["mus"] = np.asarray(mus, dtype=float)
        save_arrays(out / "sets.bin", sets)

    def _load_sets(self):
        mesh = load_mesh(self.stage_dir("generate") / "snapshots" / "mesh.txt")
        a = load_arrays(self.stage_dir("lift") / "sets.bin")
        mus = [tuple(m) for m in a["mus"]]
        times = a["times"]
        sets = {}
        for name in FIELD_NAMES:
            sets[name] = SnapshotSet(
                mesh=mesh, components=int(a[f"components_{name}"][0]),
                matrix=a[f"set_{name}"], mus=mus, times=times, kind=name)
        return mesh, mus, times, sets, a["uD_rows"], a["tD"]

    def _stage_pod(self, out):
        cfg = self.cfg
        mesh, mus, times, sets, _, _ = self._load_sets()
        plan = cfg.pod_plan()
        meta = {"method": plan["method"], "ranks": {}, "local_ranks": {}}
        bases = {}
        for name in FIELD_NAMES:
            spec = plan[name]
            if plan["method"] == "nested":
                basis = nested_pod(sets[name].split_by_mu(), **plan["local"], **spec)
                meta["local_ranks"][name] = list(basis.local_ranks)
            else:
                basis = standard_pod(sets[name], **spec)
            bases[name] = basis
            meta["ranks"][name] = basis.rank
        bcs_u = tee_velocity_bcs(mus[0])
        S, _ = supremizer_enrichment(bases["p"], bases["U"], bcs_u,
                                     tee_pressure_bcs())
        bases["U"] = append_supremizers(bases["U"], S)
        meta["n_sup"] = S.shape[1]
        meta["ranks"]["U_enriched"] = bases["U"].rank
        for name in FIELD_NAMES:
            save_basis(out / f"basis_{name}.bin", bases[name])
        (out / "pod.json").write_text(json.dumps(meta, indent=1))

    def _load_bases(self, mesh):
        pod_dir = self.stage_dir("pod")
        meta = json.loads((pod_dir / "pod.json").read_text())
        bases = {}
        for name in FIELD_NAMES:
            comp = 2 if name == "U" else 1
            bases[name] = load_basis(pod_dir / f"basis_{name}.bin", mesh, kind=name)
            if bases[name].components != comp:
                raise StageError("pod", f"basis {name!r} has unexpected components")
        return bases, meta

    def _stage_project(self, out):
        cfg = self.cfg
        mesh, mus, times, sets, _, _ = self._load_sets()
        bases, meta = self._load_bases(mesh)
        fom_cfg = cfg.fom_config(mesh=mesh)
        lift_dir = self.stage_dir("lift")
        zl = load_lifts(lift_dir / "lifts_u", mesh)
        theta_lift = load_field(lift_dir / "theta_lift.romf", mesh)
        bcs_u = tee_velocity_bcs(mus[0])
        bcs_p = tee_pressure_bcs()
        bcs_t = tee_temperature_bcs(fom_cfg.theta_main, fom_cfg.theta_branch)
        ops = combine(
            assemble_velocity_operators(bases["U"], bases["p"], bases["nut"],
                                        zl, bcs_u, bcs_p,
                                        scheme=fom_cfg.scheme_u),
            assemble_thermal_operators(bases["U"], bases["T"], bases["nut"],
                                       zl, theta_lift, bcs_t, bcs_u,
                                       scheme=fom_cfg.scheme_theta),
            nu=fom_cfg.nu, alpha=fom_cfg.alpha, pr_t=fom_cfg.pr_t)
        ops.n_sup = int(meta.get("n_sup", 0))
        save_operators(out / "operators.bin", ops)

    def _stage_train_rbf(self, out):
        cfg = self.cfg
        mesh, mus, times, sets, _, _ = self._load_sets()
        bases, _ = self._load_bases(mesh)
        xi = bases["nut"]
        nut = sets["nut"].matrix
        w = mesh.weights(1)
        L = xi.modes.T @ (w[:, None] * nut)      # (rank, n_columns)
        centers = joint_centers(mus, times)
        plan = cfg.rbf_plan()
        gamma = resolve_spread(centers, plan["spread"])
        interp = rbf_train(centers, L, gamma, lam_reg=plan["lam"])
        save_interpolant(out / "interpolant.bin", interp)
        (out / "rbf.json").write_text(json.dumps(
            {"spread_policy": str(plan["spread"]), "gamma": gamma,
             "lam": plan["lam"], "condition": interp.cond_estimate}, indent=1))

    # ---- online -------------------------------------------------------
    def load_artifacts(self):
        """Load everything the online stage needs, with a helpful error."""
        wanted = {
            "generate": ["snapshots/mesh.txt"],
            "lift": ["sets.bin", "theta_lift.romf", "lifts_u/lifts.json"],
            "pod": [f"basis_{n}.bin" for n in FIELD_NAMES],
            "project": ["operators.bin"],
            "train-rbf": ["interpolant.bin"],
        }
        missing = [f"stages/{stage}/{rel}" for stage, rels in wanted.items()
                   for rel in rels if not (self.stage_dir(stage) / rel).is_file()]
        if missing:
            raise StageError(
                "online",
                "offline artifacts are incomplete; missing: " + ", ".join(missing))
        mesh = load_mesh(self.stage_dir("generate") / "snapshots" / "mesh.txt")
        bases, pod_meta = self._load_bases(mesh)
        lift_dir = self.stage_dir("lift")
        zl = load_lifts(lift_dir / "lifts_u", mesh)
        theta_lift = load_field(lift_dir / "theta_lift.romf", mesh)
        ops = load_operators(self.stage_dir("project") / "operators.bin")
        interp = load_interpolant(self.stage_dir("train-rbf") / "interpolant.bin")
        sets_meta = load_arrays(lift_dir / "sets.bin")
        return {"mesh": mesh, "bases": bases, "pod_meta": pod_meta, "zl": zl,
                "theta_lift": theta_lift, "ops": ops, "interp": interp,
                "mus": [tuple(m) for m in sets_meta["mus"]],
                "times": sets_meta["times"]}

    def online(self, mu, dt=None, t_final=None, out_dir=None, reference=True,
               fields_every=None, thermal_closure=None):
        """Solve the reduced model at mu, reconstruct, optionally evaluate.

        Returns the results directory.  With reference=True a full-order run
        at the same parameters provides the error report and the timing row.
        """
        art = self.load_artifacts()
        plan = self.cfg.online_plan()
        dt = plan["dt"] if dt is None else float(dt)
        t_final = plan["t_final"] if t_final is None else float(t_final)
        fields_every = (plan["fields_every"] if fields_every is None
                        else float(fields_every))
        closure = thermal_closure or plan["thermal_closure"]
        mu = (float(mu[0]), float(mu[1]))
        tag = f"mu_{mu[0]:g}_{mu[1]:g}"
        out = (Path(out_dir) if out_dir is not None
               else self.out_root / "online" / tag)
        out.mkdir(parents=True, exist_ok=True)

        training = np.asarray(art["mus"], dtype=float)
        lo, hi = training.min(axis=0), training.max(axis=0)
        extrapolating = bool(np.any(np.asarray(mu) < lo - 1e-12)
                             or np.any(np.asarray(mu) > hi + 1e-12))
        if extrapolating:
            msg = (f"query mu={mu} lies outside the trained range "
                   f"[{lo.tolist()}, {hi.tolist()}]; extrapolating")
            warnings.warn(msg, stacklevel=2)
            self.record_warning("online", msg)

        bcs_u = tee_velocity_bcs(mu)
        uD = np.array([scaling_coefficient(z, bcs_u) for z in art["zl"]])
        n_steps = round(t_final / dt)
        tgrid = dt * np.arange(n_steps + 1)
        pts = np.column_stack([np.tile(mu, (tgrid.size, 1)), tgrid])
        l_tab = art["interp"].evaluate_points(pts)
        traj = solve(art["ops"], uD, dt, t_final, eddy_coefficients=l_tab,
                     thermal_closure=closure)

        self._write_coefficients(out / "coefficients.csv", traj)
        k_fields = max(1, round(fields_every / dt))
        idx = list(range(0, n_steps + 1, k_fields))
        if idx[-1] != n_steps:
            idx.append(n_steps)
        fields = reconstruct(traj, art["bases"], art["zl"], uD,
                             theta_lift=art["theta_lift"], indices=idx)
        for pos, k in enumerate(idx):
            d = out / "fields" / f"t_{k:06d}"
            d.mkdir(parents=True, exist_ok=True)
            for name in fields:
                save_field(d / f"{name}.romf", fields[name][pos])

        meta = {"mu": list(mu), "dt": dt, "t_final": t_final,
                "thermal_closure": closure, "extrapolating": extrapolating,
                "online_seconds": traj.meta["online_seconds"],
                "field_times": [float(tgrid[k]) for k in idx]}

        if reference:
            fom_cfg = self.cfg.fom_config(mesh=art["mesh"], mu=mu)
            fom_cfg = FOMConfig(**{**fom_cfg.__dict__, "dt": dt, "t_final": t_final,
                                   "snapshot_every": fields_every})
            t0 = time.perf_counter()
            records = run_fom(fom_cfg, mu)
            fom_seconds = time.perf_counter() - t0
            snap_idx = [round(rec.t / dt) for rec in records]
            rom_fields = reconstruct(traj, art["bases"], art["zl"], uD,
                                     theta_lift=art["theta_lift"], indices=snap_idx)
            fom_fields = {name: [rec.fields[name] for rec in records]
                          for name in records[0].fields}
            report = build_report([rec.t for rec in records], fom_fields,
                                  rom_fields, fom_seconds=fom_seconds,
                                  rom_seconds=traj.meta["online_seconds"])
            report.write(out)
            meta["fom_seconds"] = fom_seconds
            meta["speedup"] = report.speedup_factor
            meta["error_stats"] = {k: list(v) for k, v in report.statistics().items()}

        (out / "meta.json").write_text(json.dumps(meta, indent=1))
        return out

    @staticmethod
    def _write_coefficients(path, traj):
        ru, rp = traj.a.shape[1], traj.b.shape[1]
        rt, rn = traj.c.shape[1], traj.l.shape[1]
        header = (["t"] + [f"a{i}" for i in range(ru)] + [f"b{i}" for i in range(rp)]
                  + [f"c{i}" for i in range(rt)] + [f"l{i}" for i in range(rn)])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k, t in enumerate(traj.times):
                row = np.concatenate([[t], traj.a[k], traj.b[k], traj.c[k], traj.l[k]])
                writer.writerow([format(x, ".12g") for x in row])
