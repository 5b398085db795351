"""End-to-end FE2 runs, field post-processing, comparisons and benchmarks.

Every report path writes delimited tables (CSV/JSON) together with rendered
matplotlib figures, plus VTK fields for external viewers.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem, plots, solvers, vtkio
from .constitutive import BeamMaterial, NeuralMaterial
from .errors import MeshMismatch, ValidationError
from .nn import load_model
from .rve import load_network

DEFAULT_CASES = {
    "square": "shear_x",
    "plate1": "compress_x",
    "plate5": "compress_x",
    "cube": "torsion_pull_x",
    "cubehole": "torsion_pull_x",
    "cylinder": "torsion_pull_x",
}

DEFAULT_MAGNITUDES = {
    "shear_x": 0.15,
    "compress_x": 0.1,
    "torsion_pull_x": 36.0,  # total rotation in degrees
}


@dataclass
class RunSpec:
    shape: str = "square"
    etype: str = "q1"
    refine: int = 0
    backend: str = "beam"              # beam | nn
    net_path: str | None = None
    weights_path: str | None = None
    case: str | None = None
    magnitude: float | None = None
    solver: solvers.SolverConfig = field(default_factory=solvers.SolverConfig)
    out_dir: str | None = None

    def resolved_case(self) -> str:
        return self.case or DEFAULT_CASES[self.shape]

    def resolved_magnitude(self) -> float:
        if self.magnitude is not None:
            return self.magnitude
        return DEFAULT_MAGNITUDES[self.resolved_case()]

    def config_hash(self) -> str:
        payload = json.dumps(
            {
                "shape": self.shape, "etype": self.etype, "refine": self.refine,
                "backend": self.backend, "case": self.resolved_case(),
                "magnitude": self.resolved_magnitude(),
                "solver": self.solver.method,
                "tol": self.solver.rel_residual_tol,
                "load_steps": self.solver.load_steps,
                "fd_eps": self.solver.fd_epsilon,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# boundary-condition cases
# ---------------------------------------------------------------------------

def apply_case(mesh: fem.MacroMesh, case: str, magnitude: float) -> fem.MacroMesh:
    """Dirichlet data for the named deformation test case."""
    nodes = mesh.nodes
    entries = []
    if case == "shear_x":
        sel = np.concatenate(
            [fem.boundary_nodes(mesh, 0, 0.0), fem.boundary_nodes(mesh, 0, 1.0)]
        )
        for n in sel:
            entries.append((int(n), 0, magnitude * (nodes[n, 1] - 0.5)))
            entries.append((int(n), 1, 0.0))
            if mesh.dim == 3:
                entries.append((int(n), 2, 0.0))
    elif case == "compress_x":
        for n in fem.boundary_nodes(mesh, 0, 0.0):
            entries.append((int(n), 0, 0.5 * magnitude))
            entries.append((int(n), 1, 0.0))
        for n in fem.boundary_nodes(mesh, 0, 1.0):
            entries.append((int(n), 0, -0.5 * magnitude))
            entries.append((int(n), 1, 0.0))
    elif case == "torsion_pull_x":
        if mesh.dim != 3:
            raise ValidationError("torsion_pull_x requires a 3D mesh")
        theta = np.deg2rad(magnitude) / 2.0  # each face rotates half the total
        x_lo = nodes[:, 0].min()
        x_hi = nodes[:, 0].max()
        length = x_hi - x_lo
        cy = 0.5 * (nodes[:, 1].min() + nodes[:, 1].max())
        cz = 0.5 * (nodes[:, 2].min() + nodes[:, 2].max())
        pull = 0.05 * length
        for sign, face_x in ((-1.0, x_lo), (1.0, x_hi)):
            c, s = np.cos(sign * theta), np.sin(sign * theta)
            for n in fem.boundary_nodes(mesh, 0, face_x):
                rel_y = nodes[n, 1] - cy
                rel_z = nodes[n, 2] - cz
                entries.append((int(n), 0, sign * pull))
                entries.append((int(n), 1, c * rel_y - s * rel_z - rel_y))
                entries.append((int(n), 2, s * rel_y + c * rel_z - rel_z))
    else:
        raise ValueError(f"unknown case {case!r}")
    return mesh.with_dirichlet(entries)


# ---------------------------------------------------------------------------
# stress post-processing
# ---------------------------------------------------------------------------

def von_mises(P: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Equivalent stress from the symmetrized Cauchy estimate P F^T / det F.

    Batched over leading axes; 2D uses the in-plane formula."""
    det = np.linalg.det(F)
    sigma = np.einsum("...ij,...kj->...ik", P, F) / det[..., None, None]
    sigma = 0.5 * (sigma + np.swapaxes(sigma, -1, -2))
    if P.shape[-1] == 2:
        s11, s22 = sigma[..., 0, 0], sigma[..., 1, 1]
        s12 = sigma[..., 0, 1]
        return np.sqrt(np.maximum(s11**2 - s11 * s22 + s22**2 + 3 * s12**2, 0.0))
    s11, s22, s33 = sigma[..., 0, 0], sigma[..., 1, 1], sigma[..., 2, 2]
    s12, s23, s31 = sigma[..., 0, 1], sigma[..., 1, 2], sigma[..., 2, 0]
    return np.sqrt(np.maximum(
        0.5 * ((s11 - s22) ** 2 + (s22 - s33) ** 2 + (s33 - s11) ** 2)
        + 3.0 * (s12**2 + s23**2 + s31**2), 0.0,
    ))


def nodal_von_mises(mesh: fem.MacroMesh, u: np.ndarray,
                    callback: fem.ConstitutiveCallback) -> np.ndarray:
    """Volume-weighted average of quadrature-point von Mises onto nodes."""
    cache = fem._quad_cache(mesh)
    d = mesh.dim
    F = fem.deformation_gradients(mesh, u)
    P = callback.evaluate_batch(F.reshape(-1, d, d)).reshape(F.shape)
    vm = von_mises(P, F)                       # (nE, nq)
    w = cache["wdet"]                          # (nE, nq)
    num = np.zeros(mesh.n_nodes)
    den = np.zeros(mesh.n_nodes)
    contrib = (vm * w).sum(axis=1)             # per element
    wsum = w.sum(axis=1)
    for a in range(mesh.elements.shape[1]):
        np.add.at(num, mesh.elements[:, a], contrib)
        np.add.at(den, mesh.elements[:, a], wsum)
    return num / np.where(den > 0, den, 1.0)


def element_von_mises(mesh, u, callback) -> np.ndarray:
    cache = fem._quad_cache(mesh)
    d = mesh.dim
    F = fem.deformation_gradients(mesh, u)
    P = callback.evaluate_batch(F.reshape(-1, d, d)).reshape(F.shape)
    vm = von_mises(P, F)
    w = cache["wdet"]
    return (vm * w).sum(axis=1) / w.sum(axis=1)


# ---------------------------------------------------------------------------
# FE2 run
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    spec: RunSpec
    mesh: fem.MacroMesh
    report: solvers.SolveReport
    u: np.ndarray
    nodal_vm: np.ndarray
    element_vm: np.ndarray
    material: fem.ConstitutiveCallback
    out_dir: Path | None = None


def build_material(spec: RunSpec) -> fem.ConstitutiveCallback:
    if spec.backend == "beam":
        if not spec.net_path:
            raise ValueError("beam backend requires net_path")
        net = load_network(spec.net_path)
        return BeamMaterial(net, fd_epsilon=spec.solver.fd_epsilon)
    if spec.backend == "nn":
        if not spec.weights_path:
            raise ValueError("nn backend requires weights_path")
        return NeuralMaterial(load_model(spec.weights_path))
    raise ValueError(f"unknown backend {spec.backend!r}")


def run_fe2(spec: RunSpec, material: fem.ConstitutiveCallback | None = None,
            mesh: fem.MacroMesh | None = None) -> RunResult:
    """Load-stepped FE2 solve with the selected microscale backend.

    Writes report.json, fields.csv, mesh.txt, solution.vtk and figures into
    spec.out_dir when set. A preconstructed material/mesh can be injected."""
    if material is None:
        material = build_material(spec)
    if mesh is None:
        mesh = fem.generate_mesh(spec.shape, spec.etype, spec.refine)
        mesh = apply_case(mesh, spec.resolved_case(), spec.resolved_magnitude())
    if material.dim != mesh.dim:
        raise ValidationError(
            f"backend dimension {material.dim} does not match mesh dimension "
            f"{mesh.dim}"
        )
    problem = solvers.MacroProblem(mesh, material)
    report = solvers.load_stepper(problem, spec.solver)
    u = report.u
    nodal_vm = nodal_von_mises(mesh, u, material)
    elem_vm = element_von_mises(mesh, u, material)
    result = RunResult(
        spec=spec, mesh=mesh, report=report, u=u,
        nodal_vm=nodal_vm, element_vm=elem_vm, material=material,
    )
    if spec.out_dir:
        result.out_dir = write_run_outputs(result, spec.out_dir)
    return result


def write_run_outputs(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = result.spec
    mesh = result.mesh
    d = mesh.dim

    payload = result.report.to_dict()
    payload["config_hash"] = spec.config_hash()
    payload["spec"] = {
        "shape": spec.shape, "etype": spec.etype, "refine": spec.refine,
        "backend": spec.backend, "case": spec.resolved_case(),
        "magnitude": spec.resolved_magnitude(),
        "von_mises_definition": "sym(P F^T / det F), deviatoric equivalent",
    }
    payload["n_constitutive_evals"] = int(result.material.n_eval)
    (out / "report.json").write_text(json.dumps(payload, indent=2))

    # iteration table (CSV)
    with open(out / "iterations.csv", "w") as f:
        f.write("load_fraction,iterations,wall_time_s\n")
        for lam, it, t in zip(
            result.report.load_fractions,
            result.report.iterations_per_step,
            result.report.wall_times,
        ):
            f.write(f"{lam:.6g},{it},{t:.6g}\n")

    # nodal fields (CSV)
    cols = ["x", "y", "z"][:d] + ["ux", "uy", "uz"][:d] + ["von_mises"]
    table = np.column_stack(
        [mesh.nodes, result.u.reshape(-1, d), result.nodal_vm]
    )
    np.savetxt(out / "fields.csv", table, delimiter=",",
               header=",".join(cols), comments="")

    fem.save_mesh(mesh, out / "mesh.txt")
    vtkio.write_unstructured_grid(
        out / "solution.vtk", mesh.nodes, mesh.elements,
        vtkio.ETYPE_TO_VTK[(mesh.etype, d)],
        point_data={
            "displacement": result.u.reshape(-1, d),
            "von_mises": result.nodal_vm,
        },
        cell_data={"von_mises": result.element_vm},
        title=f"porohom fe2 {spec.shape} {spec.etype} {spec.backend}",
    )
    plots.save_fig(
        plots.residual_history_figure(
            result.report,
            title=f"{spec.shape}/{spec.etype} {spec.backend} ({spec.solver.method})",
        ),
        out / "residuals.png",
    )
    if d == 2:
        fig = plots.field_figure_2d(mesh, result.u, result.nodal_vm,
                                    title="deformed configuration")
    else:
        fig = plots.field_figure_3d(mesh, result.u, result.nodal_vm,
                                    title="deformed configuration")
    plots.save_fig(fig, out / "field.png")
    return out


# ---------------------------------------------------------------------------
# run comparison
# ---------------------------------------------------------------------------

@dataclass
class ComparisonReport:
    u_rel_l2: float
    u_rel_max: float
    vm_rel_l2: float
    vm_rel_max: float
    node_diff: np.ndarray          # per-node displacement difference magnitude
    vm_diff: np.ndarray            # per-node von Mises difference

    def to_dict(self):
        return {
            "u_rel_l2": self.u_rel_l2,
            "u_rel_max": self.u_rel_max,
            "vm_rel_l2": self.vm_rel_l2,
            "vm_rel_max": self.vm_rel_max,
        }

    def max_norm(self):
        return max(self.u_rel_l2, self.u_rel_max, self.vm_rel_l2,
                   self.vm_rel_max)


def compare_fields(mesh_a, u_a, vm_a, mesh_b, u_b, vm_b) -> ComparisonReport:
    if (
        mesh_a.etype != mesh_b.etype
        or mesh_a.nodes.shape != mesh_b.nodes.shape
        or not np.allclose(mesh_a.nodes, mesh_b.nodes, atol=1e-12)
        or not np.array_equal(mesh_a.elements, mesh_b.elements)
    ):
        raise MeshMismatch("runs do not share a mesh")
    du = u_a - u_b
    dvm = vm_a - vm_b
    rep = ComparisonReport(
        u_rel_l2=float(np.linalg.norm(du) / np.linalg.norm(u_b)),
        u_rel_max=float(np.abs(du).max() / np.abs(u_b).max()),
        vm_rel_l2=float(np.linalg.norm(dvm) / np.linalg.norm(vm_b)),
        vm_rel_max=float(np.abs(dvm).max() / np.abs(vm_b).max()),
        node_diff=np.linalg.norm(du.reshape(mesh_a.n_nodes, -1), axis=1),
        vm_diff=np.abs(dvm),
    )
    return rep


def compare_runs(a, b, out_dir=None) -> ComparisonReport:
    """Compare two runs (RunResult objects or run output directories)."""
    if not isinstance(a, RunResult):
        a = load_run_fields(a)
    if not isinstance(b, RunResult):
        b = load_run_fields(b)
    rep = compare_fields(a.mesh, a.u, a.nodal_vm, b.mesh, b.u, b.nodal_vm)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "comparison.csv", "w") as f:
            f.write("norm,value\n")
            f.write(f"u_rel_l2,{rep.u_rel_l2:.6e}\n")
            f.write(f"u_rel_max,{rep.u_rel_max:.6e}\n")
            f.write(f"vm_rel_l2,{rep.vm_rel_l2:.6e}\n")
            f.write(f"vm_rel_max,{rep.vm_rel_max:.6e}\n")
        if a.mesh.dim == 2:
            fig = plots.comparison_figure_2d(
                a.mesh, a.u, rep.vm_diff, title="von Mises difference"
            )
        else:
            fig = plots.field_figure_3d(
                a.mesh, a.u, rep.vm_diff, title="von Mises difference",
                label="|vM difference| [MPa]",
            )
        plots.save_fig(fig, out / "difference.png")
    return rep


@dataclass
class _LoadedRun:
    mesh: fem.MacroMesh
    u: np.ndarray
    nodal_vm: np.ndarray


def load_run_fields(run_dir) -> _LoadedRun:
    run_dir = Path(run_dir)
    mesh = fem.load_mesh(run_dir / "mesh.txt")
    table = np.genfromtxt(run_dir / "fields.csv", delimiter=",", names=True)
    d = mesh.dim
    ucols = ["ux", "uy", "uz"][:d]
    u = np.column_stack([table[c] for c in ucols]).ravel()
    return _LoadedRun(mesh=mesh, u=u, nodal_vm=np.asarray(table["von_mises"]))


# ---------------------------------------------------------------------------
# backend benchmark
# ---------------------------------------------------------------------------

def benchmark_backend(beam_material: BeamMaterial,
                      nn_material: NeuralMaterial,
                      n_evals: int = 100, seed: int = 0,
                      spread: float = 0.05) -> dict:
    """Median wall time per single stress evaluation, beam vs surrogate.

    Warm-up evaluations are excluded; both backends see the same random
    deformation gradients."""
    d = beam_material.dim
    rng = np.random.default_rng(seed)
    Fs = np.eye(d) + rng.uniform(-spread, spread, size=(n_evals, d, d))
    beam_material.evaluate(Fs[0])
    nn_material.evaluate(Fs[0])
    t_beam = np.empty(n_evals)
    t_nn = np.empty(n_evals)
    for i, F in enumerate(Fs):
        t0 = time.perf_counter()
        beam_material.evaluate(F)
        t_beam[i] = time.perf_counter() - t0
    for i, F in enumerate(Fs):
        t0 = time.perf_counter()
        nn_material.evaluate(F)
        t_nn[i] = time.perf_counter() - t0
    med_b = float(np.median(t_beam))
    med_n = float(np.median(t_nn))
    return {
        "n_evals": n_evals,
        "dim": d,
        "beam_median_s": med_b,
        "nn_median_s": med_n,
        "beam_mean_s": float(t_beam.mean()),
        "nn_mean_s": float(t_nn.mean()),
        "speedup": med_b / med_n,
    }


def write_benchmark_outputs(result: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w") as f:
        f.write("metric,value\n")
        for k, v in result.items():
            f.write(f"{k},{v}\n")
    plots.save_fig(plots.benchmark_figure(result), out / "bench.png")
    return out
