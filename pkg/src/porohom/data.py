"""Training-data generation and dataset statistics.

Pairs (F, P) are harvested from macroscopic FE2 solves with the beam
backend: at every accepted solver iterate (plus each load step's initial
state) the deformation gradient at each quadrature point together with the
averaged micro stress is stored.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import fem, solvers
from .constitutive import BeamMaterial
from .errors import EmptyDataset, ParseError, ValidationError
from .micro import micro_stress
from .rve import BeamNetwork

_AXES = "xyz"


def component_names(dim: int, symbol: str) -> list[str]:
    """Row-major component labels, e.g. P_xy for entry [0, 1]."""
    return [
        f"{symbol}_{_AXES[i]}{_AXES[j]}" for i in range(dim) for j in range(dim)
    ]


@dataclass
class Dataset:
    dim: int
    F: np.ndarray                  # (n, d, d)
    P: np.ndarray                  # (n, d, d)
    split: np.ndarray              # (n,) uint8: 0 train, 1 validation
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.F)

    def arrays(self, which: str = "all"):
        """Flattened (X, Y) arrays of shape (m, d^2), row-major components."""
        d = self.dim
        sel = {
            "all": slice(None),
            "train": self.split == 0,
            "validation": self.split == 1,
        }[which]
        return (
            self.F[sel].reshape(-1, d * d).copy(),
            self.P[sel].reshape(-1, d * d).copy(),
        )

    def subset(self, indices) -> "Dataset":
        return Dataset(
            dim=self.dim, F=self.F[indices], P=self.P[indices],
            split=self.split[indices], provenance=dict(self.provenance),
        )


def assign_split(n: int, seed: int, val_fraction: float = 0.1) -> np.ndarray:
    """Seeded permutation split; tags disjoint by construction."""
    rng = np.random.default_rng(seed)
    split = np.zeros(n, dtype=np.uint8)
    n_val = int(round(val_fraction * n))
    split[rng.permutation(n)[:n_val]] = 1
    return split


def _dedup(F: np.ndarray, P: np.ndarray):
    """Remove pairs with exactly repeated deformation gradients."""
    seen: set[bytes] = set()
    keep = np.zeros(len(F), dtype=bool)
    for i, row in enumerate(F):
        key = row.tobytes()
        if key not in seen:
            seen.add(key)
            keep[i] = True
    return F[keep], P[keep], int(len(F) - keep.sum())


# ---------------------------------------------------------------------------
# harvest: replay accepted iterates through the micro backend
# ---------------------------------------------------------------------------

def _harvest_states(problem: solvers.MacroProblem, report: solvers.SolveReport):
    """Lifted displacement fields of each load step's initial state and of
    every accepted iterate."""
    states = []
    u_free = np.zeros(problem.free.size)
    idx = 0
    for lam, n_it in zip(report.load_fractions, report.iterations_per_step):
        states.append(problem.lift(u_free, lam))
        for _ in range(n_it):
            rec = report.trace[idx]
            idx += 1
            u_free = rec.u if hasattr(rec, "u") else rec
        states.append(problem.lift(u_free, lam))
    return states


def _replay(mesh: fem.MacroMesh, states, material: BeamMaterial):
    d = mesh.dim
    Fs, Ps = [], []
    for u in states:
        F = fem.deformation_gradients(mesh, u).reshape(-1, d, d)
        P = material.evaluate_batch(F)
        Fs.append(F)
        Ps.append(P)
    return np.concatenate(Fs), np.concatenate(Ps)


# ---------------------------------------------------------------------------
# 2D protocol: seven parameterized boundary-condition families
# ---------------------------------------------------------------------------

def _family_2d(mesh: fem.MacroMesh, family: int, gamma: float):
    """Dirichlet entries for one of the seven basic deformation cases."""
    nodes = mesh.nodes
    left = fem.boundary_nodes(mesh, 0, 0.0)
    right = fem.boundary_nodes(mesh, 0, 1.0)
    bottom = fem.boundary_nodes(mesh, 1, 0.0)
    top = fem.boundary_nodes(mesh, 1, 1.0)
    entries = []

    def fix(nodes_, ux=None, uy=None):
        for n in nodes_:
            if ux is not None:
                entries.append((int(n), 0, float(ux(nodes[n]))))
            if uy is not None:
                entries.append((int(n), 1, float(uy(nodes[n]))))

    if family == 0:    # uniaxial stretch/compression x
        fix(left, ux=lambda p: -0.5 * gamma, uy=lambda p: 0.0)
        fix(right, ux=lambda p: 0.5 * gamma, uy=lambda p: 0.0)
    elif family == 1:  # uniaxial stretch/compression y
        fix(bottom, uy=lambda p: -0.5 * gamma, ux=lambda p: 0.0)
        fix(top, uy=lambda p: 0.5 * gamma, ux=lambda p: 0.0)
    elif family == 2:  # simple shear x (x faces shifted in x by y)
        for sel in (left, right):
            fix(sel, ux=lambda p: gamma * (p[1] - 0.5), uy=lambda p: 0.0)
    elif family == 3:  # simple shear y
        for sel in (bottom, top):
            fix(sel, uy=lambda p: gamma * (p[0] - 0.5), ux=lambda p: 0.0)
    elif family == 4:  # equibiaxial
        for sel in (left, right, bottom, top):
            fix(sel, ux=lambda p: gamma * (p[0] - 0.5),
                uy=lambda p: gamma * (p[1] - 0.5))
    elif family == 5:  # rotation + stretch of the right face
        c, s = np.cos(gamma), np.sin(gamma)
        fix(left, ux=lambda p: 0.0, uy=lambda p: 0.0)

        def rot(p):
            rel = p - np.array([1.0, 0.5])
            return np.array([c * rel[0] - s * rel[1],
                             s * rel[0] + c * rel[1]]) - rel

        fix(right, ux=lambda p: rot(p)[0] + 0.3 * abs(gamma),
            uy=lambda p: rot(p)[1])
    else:              # opposing-face transverse shift (bending-like)
        fix(left, ux=lambda p: 0.0, uy=lambda p: 0.0)
        fix(right, ux=lambda p: 0.0, uy=lambda p: gamma)
    return mesh.with_dirichlet(entries)


def data_mesh_2d() -> fem.MacroMesh:
    """Small macro grid for the 2D generation protocol (60 DOFs)."""
    return fem.square_mesh("q1", 4, 5)


def generate_2d(
    network: BeamNetwork,
    n_simulations: int,
    seed: int,
    mesh: fem.MacroMesh | None = None,
    solver_config: solvers.SolverConfig | None = None,
    val_fraction: float = 0.1,
    magnitude_range: tuple = (0.1, 0.5),
) -> Dataset:
    """FE2 simulations cycling the seven 2D test-case families with random
    magnitude and sign; harvests every quadrature-point pair per iterate."""
    if network.dim != 2:
        raise ValidationError("generate_2d requires a 2D network")
    if n_simulations < 1:
        raise ValueError("n_simulations must be >= 1")
    base_mesh = mesh if mesh is not None else data_mesh_2d()
    cfg = solver_config or solvers.SolverConfig(method="bfgs", load_steps=4)
    cfg.trace = True
    rng = np.random.default_rng(seed)
    material = BeamMaterial(network)
    Fs, Ps = [], []
    n_failed = 0
    for sim in range(n_simulations):
        family = sim % 7
        gamma = float(rng.uniform(*magnitude_range) * rng.choice([-1.0, 1.0]))
        mesh_s = _family_2d(base_mesh, family, gamma)
        problem = solvers.MacroProblem(mesh_s, material)
        try:
            report = solvers.load_stepper(problem, cfg)
        except Exception:
            n_failed += 1
            continue
        F, P = _replay(mesh_s, _harvest_states(problem, report), material)
        Fs.append(F)
        Ps.append(P)
    if not Fs:
        raise EmptyDataset("all simulations failed")
    F = np.concatenate(Fs)
    P = np.concatenate(Ps)
    F, P, n_dup = _dedup(F, P)
    split = assign_split(len(F), seed + 1, val_fraction)
    return Dataset(
        dim=2, F=F, P=P, split=split,
        provenance={
            "protocol": "2d-seven-cases", "seed": seed,
            "n_simulations": n_simulations, "n_failed": n_failed,
            "n_duplicates_removed": n_dup,
            "network_sha256": network_hash(network),
        },
    )


# ---------------------------------------------------------------------------
# 3D protocol: random affine boundary deformation on a small cube
# ---------------------------------------------------------------------------

def data_mesh_3d() -> fem.MacroMesh:
    """Small macro cube for the 3D generation protocol (192 DOFs)."""
    return fem.cube_mesh("q1", 3)


def generate_3d(
    network: BeamNetwork,
    n_samples: int,
    seed: int,
    amplitude: float = 0.25,
    mesh: fem.MacroMesh | None = None,
    solver_config: solvers.SolverConfig | None = None,
    val_fraction: float = 0.1,
) -> Dataset:
    """Affine Dirichlet data u = (F_d - I) x on the whole cube boundary with
    F_d = I + H, H entries i.i.d. uniform; harvests all quadrature points."""
    if network.dim != 3:
        raise ValidationError("generate_3d requires a 3D network")
    base_mesh = mesh if mesh is not None else data_mesh_3d()
    cfg = solver_config or solvers.SolverConfig(method="bfgs", load_steps=1)
    cfg.trace = True
    rng = np.random.default_rng(seed)
    # the frozen quasi-Newton operator makes the many small solves cheap;
    # the micro model is linear so it is near-exact
    material = BeamMaterial(network, frozen_tangent=True)
    on_bnd = np.zeros(base_mesh.n_nodes, dtype=bool)
    for ax in range(3):
        on_bnd |= np.isclose(base_mesh.nodes[:, ax], 0.0)
        on_bnd |= np.isclose(base_mesh.nodes[:, ax], 1.0)
    bnd_nodes = np.where(on_bnd)[0]
    Fs, Ps = [], []
    n_failed = 0
    for _ in range(n_samples):
        H = rng.uniform(-amplitude, amplitude, size=(3, 3))
        entries = []
        for n in bnd_nodes:
            u = H @ base_mesh.nodes[n]
            for c in range(3):
                entries.append((int(n), c, float(u[c])))
        mesh_s = base_mesh.with_dirichlet(entries)
        problem = solvers.MacroProblem(mesh_s, material)
        try:
            report = solvers.load_stepper(problem, cfg)
        except Exception:
            n_failed += 1
            continue
        F, P = _replay(mesh_s, _harvest_states(problem, report), material)
        Fs.append(F)
        Ps.append(P)
    if not Fs:
        raise EmptyDataset("all samples failed")
    F = np.concatenate(Fs)
    P = np.concatenate(Ps)
    F, P, n_dup = _dedup(F, P)
    split = assign_split(len(F), seed + 1, val_fraction)
    return Dataset(
        dim=3, F=F, P=P, split=split,
        provenance={
            "protocol": "3d-random-affine", "seed": seed,
            "n_samples": n_samples, "amplitude": amplitude,
            "n_failed": n_failed, "n_duplicates_removed": n_dup,
            "network_sha256": network_hash(network),
        },
    )


def network_hash(network: BeamNetwork) -> str:
    h = hashlib.sha256()
    h.update(network.nodes.tobytes())
    h.update(network.elements.tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass
class DatasetStats:
    dim: int
    input_mean: np.ndarray
    input_std: np.ndarray
    input_min: np.ndarray
    input_max: np.ndarray
    output_mean: np.ndarray
    output_std: np.ndarray
    output_min: np.ndarray
    output_max: np.ndarray
    correlation: np.ndarray        # (d^2, d^2): corr(F_i, P_j)
    degenerate: bool               # any zero-variance component encountered

    def input_names(self):
        return component_names(self.dim, "F")

    def output_names(self):
        return component_names(self.dim, "P")


def compute_stats(dataset: Dataset) -> DatasetStats:
    """Exact sample statistics and Pearson input-output correlations."""
    if dataset.n == 0:
        raise EmptyDataset("cannot compute statistics of an empty dataset")
    X, Y = dataset.arrays("all")
    xm, ym = X.mean(axis=0), Y.mean(axis=0)
    xs, ys = X.std(axis=0), Y.std(axis=0)
    d2 = X.shape[1]
    corr = np.zeros((d2, d2))
    degenerate = bool(np.any(xs == 0) or np.any(ys == 0))
    cov = (X - xm).T @ (Y - ym) / len(X)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(xs, ys)
    corr[~np.isfinite(corr)] = 0.0
    corr = np.clip(corr, -1.0, 1.0)
    return DatasetStats(
        dim=dataset.dim,
        input_mean=xm, input_std=xs, input_min=X.min(axis=0),
        input_max=X.max(axis=0),
        output_mean=ym, output_std=ys, output_min=Y.min(axis=0),
        output_max=Y.max(axis=0),
        correlation=corr, degenerate=degenerate,
    )


def audit_dataset(dataset: Dataset, network: BeamNetwork, n_check: int = 50,
                  seed: int = 0) -> float:
    """Re-solve a random subset of samples; returns the max relative error
    of the stored stress against a fresh micro solve."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(dataset.n, size=min(n_check, dataset.n), replace=False)
    worst = 0.0
    for i in idx:
        P = micro_stress(network, dataset.F[i])
        scale = max(np.linalg.norm(P), 1e-300)
        worst = max(worst, np.linalg.norm(P - dataset.P[i]) / scale)
    return worst


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------
# binary: magic 'PHDS', u32 version, u32 dim, u64 count, then count records
# of d^2 F components followed by d^2 P components (float64 little-endian).

_MAGIC = b"PHDS"
_VERSION = 1


def save_dataset(dataset: Dataset, path) -> None:
    import struct

    d = dataset.dim
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIQ", _VERSION, d, dataset.n))
        rec = np.concatenate(
            [dataset.F.reshape(-1, d * d), dataset.P.reshape(-1, d * d)], axis=1
        )
        f.write(np.ascontiguousarray(rec, dtype="<f8").tobytes())


def load_dataset(path, split_seed: int = 1, val_fraction: float = 0.1) -> Dataset:
    """Load a dataset file; split tags are re-derived from `split_seed`."""
    import struct

    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise ParseError(f"cannot read dataset file {path}: {exc}") from exc
    if raw[:4] != _MAGIC:
        raise ParseError(f"{path}: not a porohom dataset file")
    try:
        version, dim, count = struct.unpack_from("<IIQ", raw, 4)
    except struct.error as exc:
        raise ParseError(f"{path}: truncated header") from exc
    if version != _VERSION:
        raise ParseError(f"{path}: unsupported dataset version {version}")
    if dim not in (2, 3):
        raise ValidationError(f"{path}: invalid dimension {dim}")
    d2 = dim * dim
    header = 4 + 16  # magic + (version, dim, count)
    expected = header + count * 2 * d2 * 8
    if len(raw) != expected:
        raise ParseError(
            f"{path}: size {len(raw)} does not match header count {count}"
        )
    rec = np.frombuffer(raw, dtype="<f8", offset=header).reshape(count, 2 * d2)
    F = rec[:, :d2].reshape(count, dim, dim).copy()
    P = rec[:, d2:].reshape(count, dim, dim).copy()
    return Dataset(
        dim=dim, F=F, P=P,
        split=assign_split(count, split_seed, val_fraction),
        provenance={"loaded_from": str(path), "split_seed": split_seed},
    )


def export_csv(dataset: Dataset, path) -> None:
    X, Y = dataset.arrays("all")
    names = component_names(dataset.dim, "F") + component_names(dataset.dim, "P")
    header = ",".join(names + ["split"])
    data = np.column_stack([X, Y, dataset.split])
    np.savetxt(path, data, delimiter=",", header=header, comments="")
