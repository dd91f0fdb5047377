"""On-disk formats: field binaries, mesh manifests and dense array blobs.

Field files ("ROMF"): magic bytes, u32 version = 1, u32 n_cells,
u32 components, then float64 cell-major/component-minor payload, all
little-endian.

Meshes are stored as key=value text manifests describing the generating
geometry (box or tee) so they can be rebuilt exactly.

Array blobs hold a sequence of named dense float64 arrays in one binary file
next to a text manifest of name:shape lines; used for reduced operators and
trained interpolants.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .mesh import Field, Mesh, box_mesh, tee_mesh

ROMF_MAGIC = b"ROMF"
ROMF_VERSION = 1


def save_field(path, field):
    path = Path(path)
    vals = np.ascontiguousarray(field.values, dtype="<f8")
    with open(path, "wb") as f:
        f.write(ROMF_MAGIC)
        f.write(struct.pack("<III", ROMF_VERSION, field.mesh.n_cells, field.components))
        f.write(vals.tobytes())


def load_field(path, mesh):
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != ROMF_MAGIC:
            raise DataError(f"{path}: not a field file (bad magic {magic!r})")
        version, n_cells, comps = struct.unpack("<III", f.read(12))
        if version != ROMF_VERSION:
            raise DataError(f"{path}: unsupported field file version {version}")
        if n_cells != mesh.n_cells:
            raise DataError(
                f"{path}: file has {n_cells} cells, mesh has {mesh.n_cells}")
        payload = f.read(8 * n_cells * comps)
    vals = np.frombuffer(payload, dtype="<f8").reshape(n_cells, comps).copy()
    return Field(mesh, vals)


def save_mesh(path, mesh):
    if mesh.kind not in ("box", "tee"):
        raise DataError(f"only factory-built meshes can be saved, got {mesh.kind!r}")
    lines = [f"kind={mesh.kind}"]
    for k, v in sorted(mesh.params.items()):
        lines.append(f"{k}={v}")
    lines.append(f"n_cells={mesh.n_cells}")
    lines.append(f"patches={','.join(mesh.patch_names)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path):
    entries = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        entries[key.strip()] = val.strip()
    kind = entries.get("kind")
    if kind == "box":
        mesh = box_mesh(
            int(entries["nx"]), int(entries["ny"]),
            float(entries["dx"]), float(entries["dy"]),
            left=entries["left"], right=entries["right"],
            bottom=entries["bottom"], top=entries["top"])
    elif kind == "tee":
        mesh = tee_mesh(
            int(entries["main_nx"]), int(entries["main_ny"]),
            int(entries["branch_nx"]), int(entries["branch_ny"]),
            int(entries["branch_i0"]), float(entries["h"]))
    else:
        raise DataError(f"{path}: unknown mesh kind {kind!r}")
    if "n_cells" in entries and int(entries["n_cells"]) != mesh.n_cells:
        raise DataError(f"{path}: rebuilt mesh cell count does not match manifest")
    return mesh


def save_arrays(path, arrays):
    """Write named float64 arrays to <path> with a <path>.manifest shape index."""
    path = Path(path)
    manifest = []
    with open(path, "wb") as f:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            manifest.append(f"{name}:{','.join(str(s) for s in arr.shape)}")
            f.write(arr.tobytes())
    Path(str(path) + ".manifest").write_text("\n".join(manifest) + "\n")


def load_arrays(path):
    path = Path(path)
    out = {}
    with open(path, "rb") as f:
        for line in Path(str(path) + ".manifest").read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            name, _, shape_s = line.partition(":")
            shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise DataError(f"{path}: truncated array blob at {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return out
