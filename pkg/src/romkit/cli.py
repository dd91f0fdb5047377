"""Command-line driver: offline stages, online solves and error reports.

Exit codes: 0 on success, 2 for configuration problems (bad config file,
unknown keys, malformed arguments), 3 when a pipeline stage or solver fails.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigurationError, RomkitError
from .evaluation import line_probe, write_probe_csv
from .pipeline import STAGE_ORDER, Pipeline, load_config
from .storage import load_field


def _cmd_stage(name):
    def run(pipe, args):
        ran = pipe.run_stage(name)
        state = "built" if ran else "cached"
        print(f"{name}: {state} ({pipe.stage_dir(name)})")
        return 0
    return run


def _cmd_offline(pipe, args):
    for name, ran in pipe.offline().items():
        print(f"{name}: {'built' if ran else 'cached'}")
    print(f"artifacts: {pipe.stage_root}")
    return 0


def _cmd_solve(pipe, args):
    out = pipe.online(args.mu, dt=args.dt, t_final=args.T, out_dir=args.out,
                      reference=False, fields_every=args.fields_every,
                      thermal_closure=args.thermal_closure)
    print(f"solution written to {out}")
    return 0


def _run_probes(pipe, args, out):
    mesh = load_mesh_of(pipe)
    for spec in args.probe or []:
        name = spec[0]
        x0, y0, x1, y1 = (float(v) for v in spec[1:])
        field_dirs = sorted((out / "fields").iterdir())
        f = load_field(field_dirs[-1] / "U.romf", mesh)
        arc, vals = line_probe(f, [(x0, y0), (x1, y1)])
        write_probe_csv(out / f"probe_{name}.csv", arc, vals)
        print(f"probe {name}: {len(arc)} samples along "
              f"({x0:g},{y0:g})->({x1:g},{y1:g})")


def load_mesh_of(pipe):
    from .storage import load_mesh
    return load_mesh(pipe.stage_dir("generate") / "snapshots" / "mesh.txt")


def _cmd_eval(pipe, args):
    out = pipe.online(args.mu, dt=args.dt, t_final=args.T, out_dir=args.out,
                      reference=not args.no_reference,
                      fields_every=args.fields_every,
                      thermal_closure=args.thermal_closure)
    _run_probes(pipe, args, out)
    meta = json.loads((out / "meta.json").read_text())
    if "error_stats" in meta:
        for fname, (mn, mx, avg) in sorted(meta["error_stats"].items()):
            print(f"{fname}: min {mn:.4g}%  max {mx:.4g}%  avg {avg:.4g}%")
        print(f"speedup: {meta['speedup']:.1f}x "
              f"(fom {meta['fom_seconds']:.2f}s / rom {meta['online_seconds']:.2f}s)")
    print(f"report written to {out}")
    return 0


def _cmd_pipeline(pipe, args):
    _cmd_offline(pipe, args)
    if args.offline_only:
        return 0
    for mu in pipe.cfg.test_mus():
        out = pipe.online(mu, reference=not args.no_reference)
        meta = json.loads((out / "meta.json").read_text())
        line = f"mu=({mu[0]:g}, {mu[1]:g}) -> {out}"
        if "speedup" in meta:
            line += f"  speedup {meta['speedup']:.1f}x"
        print(line)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="romkit",
        description="Reduced-order thermal-mixing pipeline: snapshot "
                    "generation, POD-Galerkin projection and online solves.")
    parser.add_argument("-c", "--config", default=None,
                        help="INI run configuration (defaults used if omitted)")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in STAGE_ORDER:
        p = sub.add_parser(name, help=f"run the offline stage {name!r}")
        p.set_defaults(func=_cmd_stage(name))

    p = sub.add_parser("offline", help="run every offline stage in order")
    p.set_defaults(func=_cmd_offline)

    def online_args(p, with_probe=False):
        p.add_argument("--mu", type=float, nargs=2, required=True,
                       metavar=("U_MAIN", "U_BRANCH"),
                       help="inlet speeds of the query point")
        p.add_argument("--dt", type=float, default=None, help="time step [s]")
        p.add_argument("--T", type=float, default=None, help="final time [s]")
        p.add_argument("--out", default=None, help="results directory")
        p.add_argument("--fields-every", type=float, default=None,
                       help="cadence for reconstructed field dumps [s]")
        p.add_argument("--thermal-closure", choices=("tensor", "scalar"),
                       default=None)
        if with_probe:
            p.add_argument("--probe", nargs=5, action="append",
                           metavar=("NAME", "X0", "Y0", "X1", "Y1"),
                           help="sample the final velocity along a segment")

    p = sub.add_parser("solve", help="integrate the reduced model at one mu")
    online_args(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("eval", help="solve and compare against a reference run")
    online_args(p, with_probe=True)
    p.add_argument("--no-reference", action="store_true",
                   help="skip the full-order reference run")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pipeline", help="offline stages plus online evaluation "
                                        "at every configured test point")
    p.add_argument("--offline-only", action="store_true")
    p.add_argument("--no-reference", action="store_true")
    p.set_defaults(func=_cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        pipe = Pipeline(cfg)
        return int(args.func(pipe, args) or 0)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RomkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
