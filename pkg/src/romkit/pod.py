"""Proper orthogonal decomposition via the method of snapshots.

Bases are computed from the N_s x N_s volume-weighted correlation matrix
rather than a direct SVD of the tall snapshot matrix; an SVD of the
weighted matrix appears only in the tests as an independent oracle.  A
nested (two-stage) variant trades the global eigenproblem for per-parameter
local ones whose retained modes, scaled by their eigenvalues, feed a second
small POD.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DataError, DimensionError, RankError
from .mesh import Field, Mesh


@dataclass
class SnapshotSet:
    """Columns of field snapshots over a (parameter, time) grid.

    Column order is all times of the first parameter point, then the second,
    and so on: column k*n_time + j holds the snapshot at (mus[k], times[j]).
    Single-parameter sets (e.g. from split_by_mu) have one entry in mus.
    """

    mesh: Mesh
    components: int
    matrix: np.ndarray
    mus: list
    times: np.ndarray
    kind: str = "field"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        self.mus = [tuple(float(x) for x in m) for m in self.mus]
        nh = self.mesh.n_cells * self.components
        ns = len(self.mus) * len(self.times)
        if self.matrix.shape != (nh, ns):
            raise DimensionError(
                f"snapshot matrix is {self.matrix.shape}, expected ({nh}, {ns})")
        if ns == 0:
            raise DataError("empty snapshot set")
        if not np.all(np.isfinite(self.matrix)):
            raise DataError("snapshot matrix contains non-finite entries")

    @property
    def n_mu(self):
        return len(self.mus)

    @property
    def n_time(self):
        return len(self.times)

    @property
    def n_columns(self):
        return self.matrix.shape[1]

    @property
    def weights(self):
        return self.mesh.weights(self.components)

    def col_index(self, ki, ji):
        return ki * self.n_time + ji

    def column_field(self, col):
        return Field(self.mesh,
                     self.matrix[:, col].reshape(self.mesh.n_cells, self.components))

    def split_by_mu(self):
        """One single-parameter SnapshotSet per mu, preserving column order."""
        nt = self.n_time
        return [SnapshotSet(mesh=self.mesh, components=self.components,
                            matrix=self.matrix[:, k * nt:(k + 1) * nt],
                            mus=[mu], times=self.times, kind=self.kind)
                for k, mu in enumerate(self.mus)]

    @classmethod
    def from_records(cls, mesh, runs, name, mus, times, kind=None):
        """Stack runs[k][j].fields[name] into the global column layout."""
        cols = []
        for records in runs:
            for rec in records:
                cols.append(rec.fields[name].flat())
        if not cols:
            raise DataError("no snapshot records given")
        matrix = np.column_stack(cols)
        components = runs[0][0].fields[name].components
        return cls(mesh=mesh, components=components, matrix=matrix,
                   mus=list(mus), times=np.asarray(times, dtype=float),
                   kind=kind or name)


@dataclass
class PODBasis:
    """Volume-orthonormal modes with the full eigenvalue spectrum kept."""

    mesh: Mesh
    components: int
    modes: np.ndarray               # (N_h, rank)
    eigenvalues: np.ndarray         # full spectrum, descending
    kind: str = "field"
    local_ranks: list = dc_field(default_factory=list)  # nested POD bookkeeping

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=float)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        nh = self.mesh.n_cells * self.components
        if self.modes.ndim != 2 or self.modes.shape[0] != nh:
            raise DimensionError(
                f"modes matrix is {self.modes.shape}, expected ({nh}, rank)")
        if self.rank > self.eigenvalues.size:
            raise RankError("more modes than eigenvalues")

    @property
    def rank(self):
        return self.modes.shape[1]

    @property
    def weights(self):
        return self.mesh.weights(self.components)

    def cumulative_energy(self):
        total = self.eigenvalues.sum()
        if total <= 0.0:
            raise DataError("zero-energy spectrum")
        return np.cumsum(self.eigenvalues) / total

    def mode_field(self, i):
        return Field(self.mesh,
                     self.modes[:, i].reshape(self.mesh.n_cells, self.components))

    def orthonormality_error(self):
        G = self.modes.T @ (self.weights[:, None] * self.modes)
        return float(np.abs(G - np.eye(self.rank)).max())

    def project(self, x):
        """Coefficients <x, phi_i> for a column vector or matrix of columns."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1) if x.ndim == 1 else x
        return self.modes.T @ (self.weights[:, None] * flat) if flat.ndim == 2 \
            else self.modes.T @ (self.weights * flat)

    def reconstruct(self, coeffs):
        return self.modes @ np.asarray(coeffs, dtype=float)

    def truncated(self, rank):
        if rank < 1 or rank > self.rank:
            raise RankError(f"rank {rank} outside [1, {self.rank}]")
        return PODBasis(mesh=self.mesh, components=self.components,
                        modes=self.modes[:, :rank], eigenvalues=self.eigenvalues,
                        kind=self.kind, local_ranks=self.local_ranks)


def assemble_correlation(snaps):
    """C[i, j] = volume-weighted inner product of snapshots i and j."""
    S = snaps.matrix
    if not np.all(np.isfinite(S)):
        raise DataError("snapshot matrix contains non-finite entries")
    C = S.T @ (snaps.weights[:, None] * S)
    return 0.5 * (C + C.T)


def eigendecompose(C):
    """Eigenpairs of a symmetric PSD matrix, sorted by descending eigenvalue.

    Small negative eigenvalues from rounding (above -1e-12 * lambda_1) are
    clipped to zero; anything more negative means the input was not PSD.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionError("correlation matrix must be square")
    asym = np.abs(C - C.T).max()
    scale = max(np.abs(C).max(), 1e-300)
    if asym > 1e-10 * scale:
        raise DataError(f"matrix asymmetry {asym:.3e} exceeds tolerance")
    lam, W = np.linalg.eigh(0.5 * (C + C.T))
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    W = W[:, order]
    lam1 = max(lam[0], 0.0)
    floor = -1e-12 * lam1 if lam1 > 0 else -1e-300
    if lam.min() < floor:
        raise DataError(
            f"matrix is not positive semi-definite (lambda_min={lam.min():.3e})")
    return np.clip(lam, 0.0, None), W


def compute_modes(snaps, lam, W, rank):
    """Modes phi_i = S @ W[:, i] / sqrt(lam_i), renormalized to unit norm."""
    lam = np.asarray(lam, dtype=float)
    W = np.asarray(W, dtype=float)
    if rank < 1:
        raise RankError("rank must be at least 1")
    lam1 = lam[0] if lam.size else 0.0
    usable = lam > 1e-14 * max(lam1, 1e-300)
    if rank > np.count_nonzero(usable):
        bad = int(np.argmin(usable)) if not usable.all() else lam.size
        raise RankError(
            f"rank {rank} exceeds numerical rank; eigenvalue {bad} is defective")
    modes = snaps.matrix @ (W[:, :rank] / np.sqrt(lam[:rank]))
    w = snaps.weights
    norms = np.sqrt(np.einsum("ij,ij->j", modes, w[:, None] * modes))
    modes /= norms
    return PODBasis(mesh=snaps.mesh, components=snaps.components, modes=modes,
                    eigenvalues=lam, kind=snaps.kind)


def truncate_by_energy(lam, threshold):
    """Smallest rank whose cumulative eigenvalue fraction reaches threshold."""
    lam = np.asarray(lam, dtype=float)
    if not 0.0 < threshold <= 1.0:
        raise DataError("energy threshold must be in (0, 1]")
    total = lam.sum()
    if total <= 0.0:
        raise DataError("cannot truncate an all-zero spectrum")
    frac = np.cumsum(lam) / total
    return int(np.searchsorted(frac, threshold - 1e-14) + 1)


def standard_pod(snaps, threshold=None, rank=None):
    """Single-stage POD: correlation, eigendecomposition, mode assembly."""
    if (threshold is None) == (rank is None):
        raise DataError("give exactly one of threshold or rank")
    lam, W = eigendecompose(assemble_correlation(snaps))
    if rank is None:
        rank = truncate_by_energy(lam, threshold)
        rank = min(rank, int(np.count_nonzero(lam > 1e-14 * max(lam[0], 1e-300))))
    return compute_modes(snaps, lam, W, rank)


def nested_pod(local_sets, local_threshold=None, threshold=None, rank=None,
               local_rank=None):
    """Two-stage POD over per-parameter local sets.

    Each local set gets its own POD; the retained local modes are scaled by
    their eigenvalues and concatenated into a small global matrix which is
    then decomposed again.  The result records the per-parameter local ranks.
    """
    if not local_sets:
        raise DataError("no local snapshot sets given")
    if (local_threshold is None) == (local_rank is None):
        raise DataError("give exactly one of local_threshold or local_rank")
    base = local_sets[0]
    cols = []
    local_ranks = []
    for s in local_sets:
        if not s.mesh.same_as(base.mesh) or s.components != base.components:
            raise DimensionError("local sets live on different spaces")
        lam, W = eigendecompose(assemble_correlation(s))
        if lam.sum() <= 0.0:
            raise DataError(f"zero-energy local set at mu={s.mus[0]}")
        r = (local_rank if local_rank is not None
             else truncate_by_energy(lam, local_threshold))
        r = min(r, int(np.count_nonzero(lam > 1e-14 * max(lam[0], 1e-300))))
        local = compute_modes(s, lam, W, r)
        cols.append(local.modes * lam[:r])
        local_ranks.append(r)
    stacked = np.concatenate(cols, axis=1)
    pseudo = SnapshotSet(mesh=base.mesh, components=base.components,
                         matrix=stacked, mus=[(0.0,)],
                         times=np.arange(stacked.shape[1], dtype=float),
                         kind=base.kind)
    basis = standard_pod(pseudo, threshold=threshold, rank=rank)
    basis.kind = base.kind
    basis.local_ranks = local_ranks
    return basis


def cost_model(n_time, n_mu, local_rank):
    """Eigenproblem work: standard (Nt*Np)^3 vs nested Nt^3*Np + (r*Np)^3."""
    for v in (n_time, n_mu, local_rank):
        if int(v) != v or v < 1:
            raise DataError("cost model arguments must be positive integers")
    n_time, n_mu, local_rank = int(n_time), int(n_mu), int(local_rank)
    standard = (n_time * n_mu) ** 3
    nested = n_time ** 3 * n_mu + (local_rank * n_mu) ** 3
    return standard, nested


def reconstruction_error(snaps, basis):
    """Relative L2-of-residuals of projecting every snapshot onto the basis."""
    if not snaps.mesh.same_as(basis.mesh) or snaps.components != basis.components:
        raise DimensionError("snapshot set and basis live on different spaces")
    w = snaps.weights
    S = snaps.matrix
    resid = S - basis.modes @ (basis.modes.T @ (w[:, None] * S))
    num = np.einsum("ij,ij->", resid, w[:, None] * resid)
    den = np.einsum("ij,ij->", S, w[:, None] * S)
    if den <= 0.0:
        raise DataError("zero-energy snapshot set")
    return float(np.sqrt(max(num, 0.0) / den))


def save_basis(path, basis):
    """One binary file per mode plus a text manifest with the spectrum."""
    from pathlib import Path

    from .storage import save_arrays

    path = Path(path)
    save_arrays(path, {"modes": basis.modes, "eigenvalues": basis.eigenvalues,
                       "local_ranks": np.asarray(basis.local_ranks, dtype=float),
                       "meta": np.asarray([basis.components], dtype=float)})
    lines = ["# rank eigenvalue cumulative_energy"]
    cum = np.cumsum(basis.eigenvalues) / max(basis.eigenvalues.sum(), 1e-300)
    for i, (l, c) in enumerate(zip(basis.eigenvalues, cum), start=1):
        lines.append(f"{i} {l!r} {c!r}")
    Path(str(path) + ".spectrum").write_text("\n".join(lines) + "\n")


def load_basis(path, mesh, kind="field"):
    from .storage import load_arrays

    arrays = load_arrays(path)
    components = int(arrays["meta"][0])
    return PODBasis(mesh=mesh, components=components, modes=arrays["modes"],
                    eigenvalues=arrays["eigenvalues"], kind=kind,
                    local_ranks=[int(r) for r in arrays["local_ranks"]])
