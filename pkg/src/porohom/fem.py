"""Macroscopic finite elements: Q1 quads/hexes, P1 and P2 simplices.

Total-Lagrangian internal-force assembly against an arbitrary constitutive
callback mapping the deformation gradient to first Piola-Kirchhoff stress,
with an optional consistent tangent for Newton solves.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay

from .errors import (
    DegenerateElement,
    MissingTangent,
    NonPositiveJacobian,
    ParseError,
    UnsupportedMesh,
    ValidationError,
)

ETYPES = ("q1", "p1", "p2")


# ---------------------------------------------------------------------------
# constitutive callback protocol
# ---------------------------------------------------------------------------

class ConstitutiveCallback:
    """Maps deformation gradients to first Piola-Kirchhoff stress.

    Subclasses implement evaluate() (and ideally evaluate_batch() for speed);
    a consistent tangent dP/dF as a d^2 x d^2 matrix in row-major component
    ordering is optional. Evaluation counters support call accounting."""

    dim: int = 2
    provides_tangent = False

    def __init__(self):
        self.n_eval = 0
        self.n_tangent = 0

    def evaluate(self, F: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate_batch(self, Fs: np.ndarray) -> np.ndarray:
        return np.stack([self.evaluate(F) for F in Fs])

    def tangent(self, F: np.ndarray) -> np.ndarray:
        raise MissingTangent(f"{type(self).__name__} provides no tangent")

    def tangent_batch(self, Fs: np.ndarray) -> np.ndarray:
        return np.stack([self.tangent(F) for F in Fs])


class LinearElastic(ConstitutiveCallback):
    """P = C vec(F - I) with a constant d^2 x d^2 modulus C (row-major)."""

    provides_tangent = True

    def __init__(self, C: np.ndarray, dim: int):
        super().__init__()
        self.C = np.asarray(C, dtype=float)
        self.dim = dim

    @classmethod
    def isotropic(cls, E: float, nu: float, dim: int) -> "LinearElastic":
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 * (1 + nu))
        d = dim
        C = np.zeros((d * d, d * d))
        for i in range(d):
            for j in range(d):
                for k in range(d):
                    for l in range(d):
                        val = lam * (i == j) * (k == l) + mu * (
                            (i == k) * (j == l) + (i == l) * (j == k)
                        )
                        C[i * d + j, k * d + l] = val
        return cls(C, dim)

    def evaluate(self, F):
        d = self.dim
        self.n_eval += 1
        return (self.C @ (F - np.eye(d)).ravel()).reshape(d, d)

    def evaluate_batch(self, Fs):
        d = self.dim
        self.n_eval += len(Fs)
        H = (Fs - np.eye(d)).reshape(len(Fs), d * d)
        return (H @ self.C.T).reshape(len(Fs), d, d)

    def tangent(self, F):
        self.n_tangent += 1
        return self.C.copy()

    def tangent_batch(self, Fs):
        self.n_tangent += len(Fs)
        return np.broadcast_to(self.C, (len(Fs),) + self.C.shape).copy()


# ---------------------------------------------------------------------------
# reference elements
# ---------------------------------------------------------------------------

_SQ3 = 1.0 / np.sqrt(3.0)


def _ref_q1_2d():
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    gp = np.array([[x, y] for y in (-_SQ3, _SQ3) for x in (-_SQ3, _SQ3)])
    gw = np.ones(4)

    def shape(xi):
        n = 0.25 * (1 + corners[:, 0] * xi[0]) * (1 + corners[:, 1] * xi[1])
        dn = np.stack(
            [
                0.25 * corners[:, 0] * (1 + corners[:, 1] * xi[1]),
                0.25 * corners[:, 1] * (1 + corners[:, 0] * xi[0]),
            ],
            axis=1,
        )
        return n, dn

    return gp, gw, shape


def _ref_q1_3d():
    corners = np.array(
        [
            [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
            [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
        ],
        dtype=float,
    )
    gp = np.array(
        [[x, y, z] for z in (-_SQ3, _SQ3) for y in (-_SQ3, _SQ3) for x in (-_SQ3, _SQ3)]
    )
    gw = np.ones(8)

    def shape(xi):
        t = 1 + corners * xi
        n = 0.125 * t[:, 0] * t[:, 1] * t[:, 2]
        dn = 0.125 * np.stack(
            [
                corners[:, 0] * t[:, 1] * t[:, 2],
                corners[:, 1] * t[:, 0] * t[:, 2],
                corners[:, 2] * t[:, 0] * t[:, 1],
            ],
            axis=1,
        )
        return n, dn

    return gp, gw, shape


def _ref_p1(dim):
    if dim == 2:
        gp = np.array([[1 / 3, 1 / 3]])
        gw = np.array([0.5])
    else:
        gp = np.array([[0.25, 0.25, 0.25]])
        gw = np.array([1 / 6])

    def shape(xi):
        lam0 = 1.0 - xi.sum()
        n = np.concatenate([[lam0], xi])
        dn = np.vstack([-np.ones((1, dim)), np.eye(dim)])
        return n, dn

    return gp, gw, shape


def _ref_p2_2d():
    # corners 0,1,2 then midedges (01),(12),(20)
    gp = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
    gw = np.array([1 / 6, 1 / 6, 1 / 6])

    def shape(xi):
        l0 = 1 - xi[0] - xi[1]
        l1, l2 = xi
        n = np.array(
            [
                l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
            ]
        )
        dl0 = np.array([-1.0, -1.0])
        dl1 = np.array([1.0, 0.0])
        dl2 = np.array([0.0, 1.0])
        dn = np.stack(
            [
                (4 * l0 - 1) * dl0, (4 * l1 - 1) * dl1, (4 * l2 - 1) * dl2,
                4 * (l0 * dl1 + l1 * dl0),
                4 * (l1 * dl2 + l2 * dl1),
                4 * (l2 * dl0 + l0 * dl2),
            ]
        )
        return n, dn

    return gp, gw, shape


def _ref_p2_3d():
    # corners 0..3 then midedges (01),(12),(20),(03),(13),(23) [VTK order]
    a = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
    b = (5.0 - np.sqrt(5.0)) / 20.0
    gp = np.array(
        [[a, b, b], [b, a, b], [b, b, a], [b, b, b]]
    )
    gw = np.full(4, 1 / 24)

    def shape(xi):
        l0 = 1 - xi.sum()
        l1, l2, l3 = xi
        lam = np.array([l0, l1, l2, l3])
        dlam = np.vstack([-np.ones((1, 3)), np.eye(3)])
        n = np.concatenate(
            [
                lam * (2 * lam - 1),
                [
                    4 * l0 * l1, 4 * l1 * l2, 4 * l0 * l2,
                    4 * l0 * l3, 4 * l1 * l3, 4 * l2 * l3,
                ],
            ]
        )
        pairs = [(0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3)]
        dn = np.vstack(
            [ (4 * lam[:, None] - 1) * dlam ]
            + [4 * (lam[i] * dlam[j] + lam[j] * dlam[i])[None, :] for i, j in pairs]
        )
        return n, dn

    return gp, gw, shape


def reference_element(etype: str, dim: int):
    """Quadrature points/weights and shape-function evaluator."""
    if etype == "q1":
        return _ref_q1_2d() if dim == 2 else _ref_q1_3d()
    if etype == "p1":
        return _ref_p1(dim)
    if etype == "p2":
        return _ref_p2_2d() if dim == 2 else _ref_p2_3d()
    raise ValueError(f"unknown element type {etype!r}")


def nodes_per_element(etype: str, dim: int) -> int:
    return {
        ("q1", 2): 4, ("q1", 3): 8,
        ("p1", 2): 3, ("p1", 3): 4,
        ("p2", 2): 6, ("p2", 3): 10,
    }[(etype, dim)]


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------

@dataclass
class MacroMesh:
    dim: int
    etype: str
    nodes: np.ndarray               # (nN, dim)
    elements: np.ndarray            # (nE, k)
    dirichlet_dofs: np.ndarray = field(
        default_factory=lambda: np.empty(0, dtype=int))
    dirichlet_vals: np.ndarray = field(
        default_factory=lambda: np.empty(0, dtype=float))
    structure: dict | None = None   # generator metadata for mesh_refine

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_dofs(self) -> int:
        return self.dim * self.n_nodes

    def free_dofs(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_dofs), self.dirichlet_dofs)

    def with_dirichlet(self, entries) -> "MacroMesh":
        """Copy of the mesh with Dirichlet data (node, component, value)."""
        entries = list(entries)
        dofs = np.array([n * self.dim + c for n, c, _ in entries], dtype=int)
        vals = np.array([v for _, _, v in entries], dtype=float)
        order = np.argsort(dofs, kind="stable")
        return MacroMesh(
            dim=self.dim, etype=self.etype, nodes=self.nodes,
            elements=self.elements, dirichlet_dofs=dofs[order],
            dirichlet_vals=vals[order], structure=self.structure,
        )


def _quad_cache(mesh: MacroMesh):
    cache = getattr(mesh, "_qcache", None)
    if cache is not None:
        return cache
    gp, gw, shape = reference_element(mesh.etype, mesh.dim)
    nq = len(gp)
    k = mesh.elements.shape[1]
    d = mesh.dim
    dn_ref = np.empty((nq, k, d))
    for q, xi in enumerate(gp):
        _, dn_ref[q] = shape(xi)
    X = mesh.nodes[mesh.elements]                        # (nE, k, d)
    # J[e,q,i,j] = sum_a X[e,a,i] dn_ref[q,a,j]
    J = np.einsum("eai,qaj->eqij", X, dn_ref)
    detJ = np.linalg.det(J)
    if np.any(detJ <= 0):
        e, q = np.argwhere(detJ <= 0)[0]
        raise DegenerateElement(
            f"element {int(e)} has detJ = {detJ[e, q]:.3e} <= 0 at point {int(q)}"
        )
    Jinv = np.linalg.inv(J)
    # dNdX[e,q,a,i] = dn_ref[q,a,j] Jinv[e,q,j,i]
    dNdX = np.einsum("qaj,eqji->eqai", dn_ref, Jinv)
    wdet = detJ * gw[None, :]
    gidx = (mesh.elements[:, :, None] * d + np.arange(d)[None, None, :])  # (nE,k,d)
    cache = {"dNdX": dNdX, "wdet": wdet, "gidx": gidx, "nq": nq}
    mesh._qcache = cache
    return cache


def deformation_gradients(mesh: MacroMesh, u: np.ndarray) -> np.ndarray:
    """F at every quadrature point: (nE, nq, d, d)."""
    cache = _quad_cache(mesh)
    d = mesh.dim
    ue = u.reshape(-1, d)[mesh.elements]                 # (nE, k, d)
    F = np.einsum("eai,eqaj->eqij", ue, cache["dNdX"])
    F += np.eye(d)
    return F


def deformation_gradient(mesh: MacroMesh, element: int, point: int,
                         u: np.ndarray) -> np.ndarray:
    """F = I + du/dX at one quadrature point."""
    u = np.asarray(u, dtype=float)
    if u.size != mesh.n_dofs:
        raise ValueError("displacement vector does not match mesh DOF count")
    return deformation_gradients(mesh, u)[element, point]


def assemble_internal_forces(
    mesh: MacroMesh,
    u: np.ndarray,
    callback: ConstitutiveCallback,
    on_nonpositive_det: str = "warn",
) -> np.ndarray:
    """Raw internal-force vector (no Dirichlet masking).

    det(F) <= 0 at a quadrature point warns by default; pass "raise" to turn
    it into a NonPositiveJacobian load-step cutback trigger."""
    cache = _quad_cache(mesh)
    d = mesh.dim
    F = deformation_gradients(mesh, u)
    det = np.linalg.det(F.reshape(-1, d, d))
    if np.any(det <= 0):
        n_bad = int((det <= 0).sum())
        if on_nonpositive_det == "raise":
            raise NonPositiveJacobian(f"det(F) <= 0 at {n_bad} quadrature points")
        warnings.warn(f"det(F) <= 0 at {n_bad} quadrature points", RuntimeWarning)
    P = callback.evaluate_batch(F.reshape(-1, d, d)).reshape(F.shape)
    contrib = np.einsum("eq,eqij,eqaj->eai", cache["wdet"], P, cache["dNdX"])
    f = np.zeros(mesh.n_dofs)
    np.add.at(f, cache["gidx"], contrib)
    return f


def assemble_residual(
    mesh: MacroMesh,
    u: np.ndarray,
    callback: ConstitutiveCallback,
    on_nonpositive_det: str = "warn",
) -> np.ndarray:
    """Internal forces with Dirichlet rows zeroed."""
    r = assemble_internal_forces(mesh, u, callback, on_nonpositive_det)
    r[mesh.dirichlet_dofs] = 0.0
    return r


def assemble_tangent(
    mesh: MacroMesh, u: np.ndarray, callback: ConstitutiveCallback
) -> sp.csr_matrix:
    """Sparse consistent tangent d(residual)/du over all DOFs."""
    if not callback.provides_tangent:
        raise MissingTangent(
            f"{type(callback).__name__} does not provide a constitutive tangent"
        )
    cache = _quad_cache(mesh)
    d = mesh.dim
    nq = cache["nq"]
    F = deformation_gradients(mesh, u)
    A = callback.tangent_batch(F.reshape(-1, d, d))
    nE, k = mesh.elements.shape
    A = A.reshape(nE, nq, d, d, d, d)  # [i,j | k,l] from row-major d^2 x d^2
    Kel = np.einsum(
        "eq,eqak,eqikjl,eqbl->eaibj", cache["wdet"], cache["dNdX"], A, cache["dNdX"]
    ).reshape(nE, k * d, k * d)
    gdof = cache["gidx"].reshape(nE, k * d)
    rows = np.repeat(gdof, k * d, axis=1).ravel()
    cols = np.tile(gdof, (1, k * d)).ravel()
    return sp.coo_matrix(
        (Kel.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)
    ).tocsr()


# ---------------------------------------------------------------------------
# structured generators
# ---------------------------------------------------------------------------

def square_mesh(etype: str, nx: int, ny: int | None = None) -> MacroMesh:
    """Unit-square mesh with nx x ny element grid (nx quads per row)."""
    ny = nx if ny is None else ny
    if etype in ("q1", "p1"):
        xs = np.linspace(0, 1, nx + 1)
        ys = np.linspace(0, 1, ny + 1)
        nodes = np.array([[x, y] for y in ys for x in xs])

        def nid(i, j):
            return j * (nx + 1) + i

        elems = []
        for j in range(ny):
            for i in range(nx):
                quad = [nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)]
                if etype == "q1":
                    elems.append(quad)
                else:
                    elems.append([quad[0], quad[1], quad[2]])
                    elems.append([quad[0], quad[2], quad[3]])
    else:  # p2: corner grid nx x ny, node lattice (2nx+1) x (2ny+1)
        xs = np.linspace(0, 1, 2 * nx + 1)
        ys = np.linspace(0, 1, 2 * ny + 1)
        nodes = np.array([[x, y] for y in ys for x in xs])

        def lid(i, j):
            return j * (2 * nx + 1) + i

        elems = []
        for j in range(ny):
            for i in range(nx):
                c = [
                    lid(2 * i, 2 * j), lid(2 * i + 2, 2 * j),
                    lid(2 * i + 2, 2 * j + 2), lid(2 * i, 2 * j + 2),
                ]
                for tri in ([0, 1, 2], [0, 2, 3]):
                    v = [c[t] for t in tri]
                    mids = [
                        (v[0] + v[1]) // 2, (v[1] + v[2]) // 2, (v[2] + v[0]) // 2,
                    ]
                    elems.append(v + mids)
    mesh = MacroMesh(
        dim=2, etype=etype, nodes=nodes, elements=np.array(elems, dtype=int),
        structure={"shape": "square", "nx": nx, "ny": ny},
    )
    return mesh


_HEX_TO_TETS = [
    [0, 1, 3, 7], [0, 1, 7, 5], [0, 5, 7, 4],
    [1, 2, 3, 7], [1, 7, 2, 6], [1, 7, 6, 5],
]


def cube_mesh(etype: str, n: int) -> MacroMesh:
    """Unit-cube mesh with n^3 cell grid."""
    if etype in ("q1", "p1"):
        xs = np.linspace(0, 1, n + 1)
        nodes = np.array([[x, y, z] for z in xs for y in xs for x in xs])

        def nid(i, j, k):
            return (k * (n + 1) + j) * (n + 1) + i

        elems = []
        for k in range(n):
            for j in range(n):
                for i in range(n):
                    hexn = [
                        nid(i, j, k), nid(i + 1, j, k),
                        nid(i + 1, j + 1, k), nid(i, j + 1, k),
                        nid(i, j, k + 1), nid(i + 1, j, k + 1),
                        nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1),
                    ]
                    if etype == "q1":
                        elems.append(hexn)
                    else:
                        for tet in _HEX_TO_TETS:
                            elems.append([hexn[t] for t in tet])
        elems = np.array(elems, dtype=int)
        if etype == "p1":
            elems = _orient_tets(nodes, elems)
    else:  # p2 tets on the half-step lattice
        m = 2 * n + 1
        xs = np.linspace(0, 1, m)
        nodes = np.array([[x, y, z] for z in xs for y in xs for x in xs])

        def lid(i, j, k):
            return (k * m + j) * m + i

        elems = []
        for k in range(n):
            for j in range(n):
                for i in range(n):
                    hexn = [
                        (2 * i, 2 * j, 2 * k), (2 * i + 2, 2 * j, 2 * k),
                        (2 * i + 2, 2 * j + 2, 2 * k), (2 * i, 2 * j + 2, 2 * k),
                        (2 * i, 2 * j, 2 * k + 2), (2 * i + 2, 2 * j, 2 * k + 2),
                        (2 * i + 2, 2 * j + 2, 2 * k + 2), (2 * i, 2 * j + 2, 2 * k + 2),
                    ]
                    for tet in _HEX_TO_TETS:
                        corn = [hexn[t] for t in tet]
                        v = [lid(*c) for c in corn]
                        mid = []
                        for a, b in ((0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3)):
                            mc = tuple(
                                (corn[a][ax] + corn[b][ax]) // 2 for ax in range(3)
                            )
                            mid.append(lid(*mc))
                        elems.append(v + mid)
        elems = np.array(elems, dtype=int)
        elems = _orient_tets(nodes, elems, quadratic=True)
    return MacroMesh(
        dim=3, etype=etype, nodes=nodes, elements=elems,
        structure={"shape": "cube", "n": n},
    )


def _orient_tets(nodes, elems, quadratic=False):
    """Flip tets with negative volume so detJ > 0."""
    p = nodes[elems[:, :4]]
    vol = np.einsum(
        "ei,ei->e",
        np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]),
        p[:, 3] - p[:, 0],
    )
    flip = vol < 0
    out = elems.copy()
    if quadratic:
        # swap corners 1,2 and midedges (01)<->(02), (13)<->(23)
        out[np.ix_(flip, [1, 2])] = elems[np.ix_(flip, [2, 1])]
        out[np.ix_(flip, [4, 6])] = elems[np.ix_(flip, [6, 4])]
        out[np.ix_(flip, [8, 9])] = elems[np.ix_(flip, [9, 8])]
    else:
        out[np.ix_(flip, [1, 2])] = elems[np.ix_(flip, [2, 1])]
    return out


def _orient_tris(nodes, elems):
    p = nodes[elems[:, :3]]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    flip = area2 < 0
    out = elems.copy()
    out[np.ix_(flip, [1, 2])] = elems[np.ix_(flip, [2, 1])]
    return out


# ---------------------------------------------------------------------------
# unstructured (Delaunay) generators for the demo geometries
# ---------------------------------------------------------------------------

def _tri_to_p2(nodes: np.ndarray, tris: np.ndarray):
    """Add midedge nodes to a P1 triangulation (or tets)."""
    nn = len(nodes)
    mid_map: dict[tuple[int, int], int] = {}
    extra: list[np.ndarray] = []
    if tris.shape[1] == 3:
        pairs = [(0, 1), (1, 2), (2, 0)]
    else:
        pairs = [(0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3)]

    def mid(a, b):
        key = (a, b) if a < b else (b, a)
        idx = mid_map.get(key)
        if idx is None:
            idx = nn + len(extra)
            mid_map[key] = idx
            extra.append(0.5 * (nodes[a] + nodes[b]))
        return idx

    out = []
    for el in tris:
        out.append(list(el) + [mid(el[a], el[b]) for a, b in pairs])
    return np.vstack([nodes, np.array(extra)]), np.array(out, dtype=int)


PLATE_HOLES = {
    "plate1": [((0.5, 0.5), 0.2)],
    "plate5": [
        ((0.5, 0.5), 0.2),
        ((0.18, 0.5), 0.1), ((0.82, 0.5), 0.1),
        ((0.5, 0.18), 0.1), ((0.5, 0.82), 0.1),
    ],
}


def plate_mesh(variant: str, etype: str = "p1", refine: int = 0,
               hole_segments: int = 64, seed: int = 0) -> MacroMesh:
    """Unit-square plate with punched circular holes, Delaunay-meshed."""
    if etype == "q1":
        raise UnsupportedMesh("holed plates are meshed with simplices (p1/p2)")
    holes = PLATE_HOLES[variant]
    h = 1.0 / (12 * 2**refine)
    rng = np.random.default_rng(seed)

    def in_hole(pts, margin=0.0):
        inside = np.zeros(len(pts), dtype=bool)
        for (cx, cy), r in holes:
            inside |= np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) < r + margin
        return inside

    n_side = int(round(1.0 / h))
    grid = np.linspace(0, 1, n_side + 1)
    pts = np.array([[x, y] for y in grid for x in grid])
    interior = (
        (pts[:, 0] > 0) & (pts[:, 0] < 1) & (pts[:, 1] > 0) & (pts[:, 1] < 1)
    )
    jitter = rng.uniform(-0.15 * h, 0.15 * h, size=pts.shape)
    pts = pts + jitter * interior[:, None]
    pts = pts[~in_hole(pts, margin=0.5 * h)]
    ring_pts = []
    for (cx, cy), r in holes:
        nseg = max(8, int(hole_segments * (r / 0.2) * 2**refine / 2))
        th = np.linspace(0, 2 * np.pi, nseg, endpoint=False)
        ring_pts.append(np.column_stack([cx + r * np.cos(th), cy + r * np.sin(th)]))
    pts = np.vstack([pts] + ring_pts)
    tri = Delaunay(pts)
    cent = pts[tri.simplices].mean(axis=1)
    keep = ~in_hole(cent)
    tris = _orient_tris(pts, tri.simplices[keep])
    nodes = pts
    if etype == "p2":
        nodes, tris = _tri_to_p2(nodes, tris)
    return MacroMesh(
        dim=2, etype=etype, nodes=nodes, elements=tris,
        structure={"shape": variant, "refine": refine},
    )


def cube_hole_mesh(etype: str = "p1", refine: int = 0,
                   hole_segments: int = 16, seed: int = 0) -> MacroMesh:
    """Unit cube with a cylindrical hole (d=0.5) along the x axis."""
    if etype == "q1":
        raise UnsupportedMesh("holed cubes are meshed with simplices (p1/p2)")
    n = 6 * 2**refine
    r_hole = 0.25
    grid = np.linspace(0, 1, n + 1)
    pts = np.array([[x, y, z] for z in grid for y in grid for x in grid])
    rad = np.hypot(pts[:, 1] - 0.5, pts[:, 2] - 0.5)
    pts = pts[rad > r_hole + 0.4 / n]
    # jitter interior points: a regular lattice makes Delaunay degenerate
    rng = np.random.default_rng(seed)
    interior = np.all((pts > 1e-12) & (pts < 1 - 1e-12), axis=1)
    pts = pts + rng.uniform(-0.1 / n, 0.1 / n, pts.shape) * interior[:, None]
    rings = []
    th = np.linspace(0, 2 * np.pi, hole_segments * 2**refine, endpoint=False)
    for x in grid:
        rings.append(
            np.column_stack(
                [np.full(th.shape, x), 0.5 + r_hole * np.cos(th), 0.5 + r_hole * np.sin(th)]
            )
        )
    pts = np.vstack([pts] + rings)
    tet = Delaunay(pts)
    cent = pts[tet.simplices].mean(axis=1)
    keep = np.hypot(cent[:, 1] - 0.5, cent[:, 2] - 0.5) > r_hole
    simp = tet.simplices[keep]
    vols = np.einsum(
        "ei,ei->e",
        np.cross(pts[simp[:, 1]] - pts[simp[:, 0]],
                 pts[simp[:, 2]] - pts[simp[:, 0]]),
        pts[simp[:, 3]] - pts[simp[:, 0]],
    )
    simp = simp[np.abs(vols) > 1e-4 / n**3]
    tets = _orient_tets(pts, simp)
    nodes = pts
    if etype == "p2":
        nodes, tets = _tri_to_p2(nodes, tets)
    return MacroMesh(
        dim=3, etype=etype, nodes=nodes, elements=tets,
        structure={"shape": "cubehole", "refine": refine},
    )


def cylinder_mesh(etype: str = "p1", refine: int = 0) -> MacroMesh:
    """Cylinder of length 2, diameter 1, axis along x."""
    if etype == "q1":
        raise UnsupportedMesh("cylinders are meshed with simplices (p1/p2)")
    n_ax = 8 * 2**refine
    xs = np.linspace(0, 2, n_ax + 1)
    disk = [np.array([[0.0, 0.0]])]
    n_rings = 3 * 2**refine
    for k in range(1, n_rings + 1):
        r = 0.5 * k / n_rings
        m = max(6, int(round(2 * np.pi * r / (0.5 / n_rings))))
        th = np.linspace(0, 2 * np.pi, m, endpoint=False) + (0.5 * k)
        disk.append(np.column_stack([r * np.cos(th), r * np.sin(th)]))
    disk = np.vstack(disk)
    pts = np.vstack([
        np.column_stack([np.full(len(disk), x), disk[:, 0] + 0.5, disk[:, 1] + 0.5])
        for x in xs
    ])
    tet = Delaunay(pts)
    # the cylinder is convex: all Delaunay tets are inside; drop slivers
    vols = np.abs(np.einsum(
        "ei,ei->e",
        np.cross(pts[tet.simplices[:, 1]] - pts[tet.simplices[:, 0]],
                 pts[tet.simplices[:, 2]] - pts[tet.simplices[:, 0]]),
        pts[tet.simplices[:, 3]] - pts[tet.simplices[:, 0]],
    )) / 6.0
    keep = vols > 1e-5 / (n_ax * n_rings**2)
    tets = _orient_tets(pts, tet.simplices[keep])
    nodes = pts
    if etype == "p2":
        nodes, tets = _tri_to_p2(nodes, tets)
    return MacroMesh(
        dim=3, etype=etype, nodes=nodes, elements=tets,
        structure={"shape": "cylinder", "refine": refine},
    )


def generate_mesh(shape: str, etype: str = "q1", refine: int = 0) -> MacroMesh:
    """Built-in demo geometries at a given refinement level.

    square/cube refine by axis doubling; holed/cylindrical shapes regenerate
    at doubled point density."""
    if shape == "square":
        base = 2 if etype == "p2" else 4
        return square_mesh(etype, base * 2**refine)
    if shape == "cube":
        base = 1 if etype == "p2" else 2
        return cube_mesh(etype, base * 2**refine)
    if shape in PLATE_HOLES:
        return plate_mesh(shape, etype, refine)
    if shape == "cubehole":
        return cube_hole_mesh(etype, refine)
    if shape == "cylinder":
        return cylinder_mesh(etype, refine)
    raise ValueError(f"unknown shape {shape!r}")


def mesh_refine(mesh: MacroMesh) -> MacroMesh:
    """Double the per-axis element counts of a structured generator mesh."""
    s = mesh.structure
    if not s:
        raise UnsupportedMesh("mesh has no generator structure metadata")
    if s["shape"] == "square":
        return square_mesh(mesh.etype, 2 * s["nx"], 2 * s["ny"])
    if s["shape"] == "cube":
        return cube_mesh(mesh.etype, 2 * s["n"])
    raise UnsupportedMesh(f"cannot refine unstructured shape {s['shape']!r}")


# ---------------------------------------------------------------------------
# boundary-node helpers and mesh I/O
# ---------------------------------------------------------------------------

def boundary_nodes(mesh: MacroMesh, axis: int, value: float,
                   tol: float = 1e-9) -> np.ndarray:
    return np.where(np.abs(mesh.nodes[:, axis] - value) < tol)[0]


def save_mesh(mesh: MacroMesh, path) -> None:
    with open(path, "w") as f:
        f.write(f"{mesh.dim} {mesh.etype} {mesh.n_nodes} {mesh.n_elements} "
                f"{len(mesh.dirichlet_dofs)}\n")
        for p in mesh.nodes:
            f.write(" ".join(f"{x:.17g}" for x in p) + "\n")
        for el in mesh.elements:
            f.write(" ".join(str(i) for i in el) + "\n")
        for dof, val in zip(mesh.dirichlet_dofs, mesh.dirichlet_vals):
            f.write(f"{dof // mesh.dim} {dof % mesh.dim} {val:.17g}\n")


def load_mesh(path) -> MacroMesh:
    try:
        with open(path) as f:
            lines = [ln for ln in f.read().split("\n") if ln.strip()]
        head = lines[0].split()
        dim, etype = int(head[0]), head[1]
        n_nodes, n_elems, n_dir = int(head[2]), int(head[3]), int(head[4])
        if etype not in ETYPES:
            raise ParseError(f"unknown element type {etype!r} in {path}")
        pos = 1
        nodes = np.array(
            [[float(x) for x in lines[pos + i].split()] for i in range(n_nodes)]
        )
        pos += n_nodes
        k = nodes_per_element(etype, dim)
        elements = np.array(
            [[int(x) for x in lines[pos + i].split()] for i in range(n_elems)],
            dtype=int,
        ).reshape(n_elems, k)
        pos += n_elems
        entries = []
        for i in range(n_dir):
            node, comp, val = lines[pos + i].split()
            entries.append((int(node), int(comp), float(val)))
    except (ValueError, IndexError, OSError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed mesh file {path}: {exc}") from exc
    mesh = MacroMesh(dim=dim, etype=etype, nodes=nodes, elements=elements)
    if entries:
        mesh = mesh.with_dirichlet(entries)
    if mesh.elements.size and (
        mesh.elements.min() < 0 or mesh.elements.max() >= n_nodes
    ):
        raise ValidationError(f"mesh file {path}: element index out of range")
    return mesh
