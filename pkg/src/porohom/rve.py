"""Periodic beam-network RVE generation and file I/O.

2D networks are generated from a target pore-size distribution by
sequential disk packing followed by a Laguerre-Voronoi (power diagram)
tessellation of the 3x3 replicated packing, cut out at the center copy.
3D networks are not generated here; they are loaded from file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    DegenerateTessellation,
    PackingFailed,
    ParseError,
    ValidationError,
)

# relative tolerances, scaled by domain_edge where used
FACE_TOL = 1e-7      # node-on-face detection
MERGE_TOL = 1e-7     # coincident dual-vertex merging
PRUNE_TOL = 1e-6     # short-edge collapse
PAIR_TOL = 1e-9      # periodic pair coordinate agreement
CORNER_TOL = 1e-6    # node-at-corner detection


@dataclass(frozen=True)
class Material:
    """Beam material and section parameters (E in MPa, lengths in domain units)."""

    E: float
    nu: float
    A: float
    I: float

    @classmethod
    def circular(cls, E: float = 1000.0, nu: float = 0.3, radius: float = 0.02) -> "Material":
        return cls(E=E, nu=nu, A=math.pi * radius**2, I=math.pi * radius**4 / 4.0)


@dataclass
class PoreSizeDistribution:
    """Target pore diameters with probability weights on a square domain."""

    diameters: np.ndarray
    weights: np.ndarray
    domain_edge: float = 1.0

    def __post_init__(self):
        self.diameters = np.asarray(self.diameters, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.validate()

    def validate(self):
        if self.diameters.ndim != 1 or self.diameters.shape != self.weights.shape:
            raise ValidationError("PoreSizeDistribution: diameters/weights shape mismatch")
        if np.any(self.diameters <= 0):
            raise ValidationError("PoreSizeDistribution: diameters must be strictly positive")
        if np.any(np.diff(self.diameters) <= 0):
            raise ValidationError("PoreSizeDistribution: diameters must be strictly increasing")
        if np.any(self.weights < 0):
            raise ValidationError("PoreSizeDistribution: weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValidationError("PoreSizeDistribution: weights must sum to 1 within 1e-12")
        if self.domain_edge <= 0:
            raise ValidationError("PoreSizeDistribution: domain_edge must be positive")


@dataclass
class SpherePacking:
    """Non-overlapping disk (2D) or sphere (3D) packing in [0, edge]^d."""

    centers: np.ndarray
    radii: np.ndarray
    domain_edge: float

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def packing_fraction(self) -> float:
        if self.dim == 2:
            filled = np.pi * (self.radii**2).sum()
        else:
            filled = 4.0 / 3.0 * np.pi * (self.radii**3).sum()
        return float(filled / self.domain_edge**self.dim)

    def validate(self, tol: float | None = None):
        if tol is None:
            tol = 1e-9 * self.domain_edge
        c, r = self.centers, self.radii
        if np.any(c < 0) or np.any(c > self.domain_edge):
            bad = int(np.where((c < 0) | (c > self.domain_edge))[0][0])
            raise ValidationError(f"SpherePacking: center {bad} outside domain")
        for i in range(len(r)):
            d = np.linalg.norm(c[i + 1:] - c[i], axis=1)
            viol = np.where(d < r[i + 1:] + r[i] - tol)[0]
            if viol.size:
                j = int(viol[0]) + i + 1
                raise ValidationError(f"SpherePacking: spheres {i} and {j} overlap")


@dataclass
class BeamNetwork:
    """Periodic beam-frame RVE: nodes, elements, pairing, corners, material."""

    dim: int
    nodes: np.ndarray           # (nN, dim)
    elements: np.ndarray        # (nB, 2) int
    periodic_pairs: np.ndarray  # (nP, 3) int: plus node, minus node, axis
    corner_nodes: np.ndarray    # (2**dim,) int
    material: Material
    domain_edge: float

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def element_lengths(self) -> np.ndarray:
        d = self.nodes[self.elements[:, 1]] - self.nodes[self.elements[:, 0]]
        return np.linalg.norm(d, axis=1)


def validate_network(net: BeamNetwork) -> None:
    """Check every BeamNetwork invariant; raise ValidationError naming the
    violated invariant and the offending entity."""
    if net.dim not in (2, 3):
        raise ValidationError(f"BeamNetwork: dim must be 2 or 3, got {net.dim}")
    if net.nodes.shape[1] != net.dim:
        raise ValidationError("BeamNetwork: node coordinate width != dim")
    n = net.n_nodes
    el = net.elements
    if el.size and (el.min() < 0 or el.max() >= n):
        raise ValidationError("BeamNetwork: elements contain out-of-range node index")
    same = np.where(el[:, 0] == el[:, 1])[0]
    if same.size:
        raise ValidationError(f"BeamNetwork: element {int(same[0])} has i == j")
    lengths = net.element_lengths()
    short = np.where(lengths <= 0)[0]
    if short.size:
        raise ValidationError(f"BeamNetwork: element {int(short[0])} has zero length")
    deg = np.zeros(n, dtype=int)
    if el.size:
        np.add.at(deg, el.ravel(), 1)
    orphan = np.where(deg == 0)[0]
    if orphan.size:
        raise ValidationError(f"BeamNetwork: node {int(orphan[0])} belongs to no element")
    # connectivity on the periodic quotient graph (paired nodes identified);
    # that is the notion that makes the reduced stiffness regular
    if not _connected(n, el, net.periodic_pairs):
        raise ValidationError("BeamNetwork: network graph is not connected")
    # periodic pairs on opposite faces
    tol = PAIR_TOL * net.domain_edge
    for k, (plus, minus, axis) in enumerate(np.asarray(net.periodic_pairs, dtype=int)):
        if not (0 <= plus < n and 0 <= minus < n and 0 <= axis < net.dim):
            raise ValidationError(f"BeamNetwork: periodic pair {k} has invalid indices")
        delta = net.nodes[plus] - net.nodes[minus]
        expect = np.zeros(net.dim)
        expect[axis] = net.domain_edge
        if np.max(np.abs(delta - expect)) > tol:
            raise ValidationError(
                f"BeamNetwork: periodic pair {k} ({plus},{minus},axis {axis}) "
                f"does not satisfy the face-offset invariant"
            )
    corners = np.asarray(net.corner_nodes, dtype=int)
    if corners.shape != (2**net.dim,):
        raise ValidationError(
            f"BeamNetwork: corner_nodes must have exactly {2**net.dim} entries, "
            f"got {corners.size}"
        )
    if corners.size and (corners.min() < 0 or corners.max() >= n):
        raise ValidationError("BeamNetwork: corner_nodes contain out-of-range index")


def _connected(n_nodes: int, elements: np.ndarray,
               periodic_pairs: np.ndarray | None = None) -> bool:
    if n_nodes == 0:
        return True
    adj = [[] for _ in range(n_nodes)]
    for a, b in elements:
        adj[a].append(b)
        adj[b].append(a)
    if periodic_pairs is not None:
        for plus, minus, _ax in np.asarray(periodic_pairs, dtype=int).reshape(-1, 3):
            adj[plus].append(minus)
            adj[minus].append(plus)
    seen = np.zeros(n_nodes, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return bool(seen.all())


# ---------------------------------------------------------------------------
# disk packing
# ---------------------------------------------------------------------------

def pack_disks(
    dist: PoreSizeDistribution,
    seed: int,
    max_attempts: int = 5000,
    mode: str = "volume",
    packing_fraction: float = 0.42,
) -> SpherePacking:
    """Sequential (largest-first) random disk packing matching `dist`.

    `mode` selects whether the weights are interpreted as pore volume (area)
    fractions or pore count fractions. Placement rejects overlaps in the
    periodic metric so the replicated packing used by the tessellation is
    overlap-free as well. Deterministic for a fixed seed.
    """
    dist.validate()
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    if mode not in ("volume", "count"):
        raise ValueError(f"unknown packing mode {mode!r}")
    edge = dist.domain_edge
    radii_cls = dist.diameters / 2.0
    area_cls = np.pi * radii_cls**2
    target_area = packing_fraction * edge**2
    if mode == "volume":
        counts = np.rint(dist.weights * target_area / area_cls).astype(int)
    else:
        scale = target_area / float((dist.weights * area_cls).sum())
        counts = np.rint(dist.weights * scale).astype(int)
    counts = np.maximum(counts, (dist.weights > 0).astype(int))

    radii = np.repeat(radii_cls, counts)
    order = np.argsort(-radii, kind="stable")
    radii = radii[order]

    rng = np.random.default_rng(seed)
    centers = np.empty((len(radii), 2))
    for i, r in enumerate(radii):
        placed = centers[:i]
        for _ in range(max_attempts):
            c = rng.uniform(0.0, edge, 2)
            if i:
                delta = np.abs(placed - c)
                delta = np.minimum(delta, edge - delta)
                if np.any((delta**2).sum(axis=1) < (radii[:i] + r) ** 2):
                    continue
            centers[i] = c
            break
        else:
            raise PackingFailed(
                f"could not place disk {i} (r={r:.4g}) within {max_attempts} attempts; "
                f"target fraction {packing_fraction} may be too dense for this distribution"
            )
    return SpherePacking(centers=centers, radii=radii.copy(), domain_edge=edge)


# ---------------------------------------------------------------------------
# power diagram tessellation (2D)
# ---------------------------------------------------------------------------

def _power_dual_segments(points: np.ndarray, weights: np.ndarray):
    """Dual edges of the 2D power diagram via the lifting map.

    Lift generators to z = |x|^2 - w; lower-hull facets of the lifted cloud
    are the regular triangulation, whose facet-adjacency dual is the power
    diagram 1-skeleton.
    """
    lift = np.column_stack([points, (points**2).sum(axis=1) - weights])
    try:
        hull = ConvexHull(lift)
    except QhullError as exc:
        raise DegenerateTessellation(f"regular triangulation failed: {exc}") from exc
    tris = hull.simplices[hull.equations[:, 2] < -1e-12]
    p2 = (points**2).sum(axis=1) - weights
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    # power center of each triangle: 2 (c_b - c_a) . x = p2_b - p2_a, same for c
    A = 2.0 * np.stack([points[b] - points[a], points[c] - points[a]], axis=1)
    rhs = np.stack([p2[b] - p2[a], p2[c] - p2[a]], axis=1)
    det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
    if np.any(np.abs(det) < 1e-14):
        raise DegenerateTessellation("collinear generator triple in regular triangulation")
    verts = np.empty((len(tris), 2))
    verts[:, 0] = (rhs[:, 0] * A[:, 1, 1] - rhs[:, 1] * A[:, 0, 1]) / det
    verts[:, 1] = (rhs[:, 1] * A[:, 0, 0] - rhs[:, 0] * A[:, 1, 0]) / det

    edge_map: dict[tuple[int, int], list[int]] = {}
    for t, tri in enumerate(tris):
        for i in range(3):
            key = (tri[i], tri[(i + 1) % 3])
            key = (key[1], key[0]) if key[0] > key[1] else key
            edge_map.setdefault(key, []).append(t)
    pairs = [v for v in edge_map.values() if len(v) == 2]
    return verts, np.array(pairs, dtype=int)


def _clip_segment(p0, p1, edge):
    """Liang-Barsky clip of segment p0-p1 against [0, edge]^2; None if outside."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for ax in range(2):
        if abs(d[ax]) < 1e-300:
            if p0[ax] < 0.0 or p0[ax] > edge:
                return None
            continue
        ta = -p0[ax] / d[ax]
        tb = (edge - p0[ax]) / d[ax]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 >= t1:
            return None
    return p0 + t0 * d, p0 + t1 * d


def tessellate_periodic(packing: SpherePacking, material: Material | None = None) -> BeamNetwork:
    """Laguerre-Voronoi tessellation of the 3x3 replicated packing, cut out
    at the center copy, with periodic pairs and corner nodes identified."""
    if packing.dim != 2:
        raise ValueError("tessellate_periodic generates 2D networks only; "
                         "load 3D networks from file")
    edge = packing.domain_edge
    offsets = [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)]
    pts = np.vstack([packing.centers + np.array(o, dtype=float) * edge for o in offsets])
    wts = np.tile(packing.radii**2, len(offsets))
    verts, dual_pairs = _power_dual_segments(pts, wts)

    merge = MERGE_TOL * edge
    node_map: dict[tuple[int, int], int] = {}
    nodes: list[np.ndarray] = []

    def add_node(p: np.ndarray) -> int:
        key = (int(round(p[0] / merge)), int(round(p[1] / merge)))
        idx = node_map.get(key)
        if idx is None:
            idx = len(nodes)
            node_map[key] = idx
            nodes.append(p)
        return idx

    elems: set[tuple[int, int]] = set()
    face_tol = FACE_TOL * edge
    for ta, tb in dual_pairs:
        clip = _clip_segment(verts[ta], verts[tb], edge)
        if clip is None:
            continue
        q0, q1 = clip
        if np.linalg.norm(q1 - q0) < merge:
            continue
        # a wall lying in a max face duplicates its min-face periodic copy;
        # keep only the min-face representative
        if any(
            abs(q0[ax] - edge) < face_tol and abs(q1[ax] - edge) < face_tol
            for ax in range(2)
        ):
            continue
        a, b = add_node(q0), add_node(q1)
        if a != b:
            elems.add((a, b) if a < b else (b, a))

    if not nodes:
        raise DegenerateTessellation("no tessellation edges intersect the center domain")
    node_arr = np.array(nodes)
    elem_arr = np.array(sorted(elems), dtype=int)
    node_arr, elem_arr = _prune_short_edges(node_arr, elem_arr, edge)
    node_arr, elem_arr = _drop_orphans(node_arr, elem_arr)
    node_arr = np.clip(node_arr, 0.0, edge)
    _snap_faces(node_arr, edge)

    pairs = _match_periodic(node_arr, edge)
    corners = _pick_corners(node_arr, edge)
    net = BeamNetwork(
        dim=2,
        nodes=node_arr,
        elements=elem_arr,
        periodic_pairs=pairs,
        corner_nodes=corners,
        material=material or Material.circular(radius=0.02 * edge),
        domain_edge=edge,
    )
    try:
        validate_network(net)
    except ValidationError as exc:
        raise DegenerateTessellation(
            f"tessellation produced an invalid network ({exc}); perturb the packing seed"
        ) from exc
    return net


def _prune_short_edges(nodes: np.ndarray, elems: np.ndarray, edge: float):
    """Collapse edges shorter than PRUNE_TOL*edge by merging endpoints.

    Boundary nodes win merges so face coordinates stay exact for pairing."""
    tol = PRUNE_TOL * edge
    parent = np.arange(len(nodes))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def on_face(i):
        return np.any(np.abs(nodes[i]) < FACE_TOL * edge) or np.any(
            np.abs(nodes[i] - edge) < FACE_TOL * edge
        )

    changed = True
    while changed:
        changed = False
        for a, b in elems:
            ra, rb = find(a), find(b)
            if ra == rb:
                continue
            if np.linalg.norm(nodes[ra] - nodes[rb]) < tol:
                # keep the boundary endpoint if exactly one lies on a face
                keep, drop = (ra, rb) if on_face(ra) or not on_face(rb) else (rb, ra)
                parent[drop] = keep
                changed = True
    roots = np.array([find(i) for i in range(len(nodes))])
    keep_ids = np.unique(roots)
    remap = -np.ones(len(nodes), dtype=int)
    remap[keep_ids] = np.arange(len(keep_ids))
    new_nodes = nodes[keep_ids]
    new_elems = set()
    for a, b in elems:
        ia, ib = remap[roots[a]], remap[roots[b]]
        if ia != ib:
            new_elems.add((ia, ib) if ia < ib else (ib, ia))
    return new_nodes, np.array(sorted(new_elems), dtype=int)


def _drop_orphans(nodes: np.ndarray, elems: np.ndarray):
    used = np.zeros(len(nodes), dtype=bool)
    used[elems.ravel()] = True
    remap = -np.ones(len(nodes), dtype=int)
    remap[used] = np.arange(int(used.sum()))
    return nodes[used], remap[elems]


def _snap_faces(nodes: np.ndarray, edge: float) -> None:
    tol = FACE_TOL * edge
    for ax in range(nodes.shape[1]):
        nodes[np.abs(nodes[:, ax]) < tol, ax] = 0.0
        nodes[np.abs(nodes[:, ax] - edge) < tol, ax] = edge


def _match_periodic(nodes: np.ndarray, edge: float) -> np.ndarray:
    """Pair every plus-face node with its minus-face image per axis.

    Minus-face nodes without a plus image are allowed: they are endpoints of
    in-face walls whose max-face duplicate was dropped."""
    dim = nodes.shape[1]
    pairs = []
    for ax in range(dim):
        minus = np.where(nodes[:, ax] == 0.0)[0]
        plus = np.where(nodes[:, ax] == edge)[0]
        others = [k for k in range(dim) if k != ax]
        used = np.zeros(len(minus), dtype=bool)
        for ip in plus:
            if len(minus) == 0:
                raise DegenerateTessellation(
                    f"axis {ax}: plus-face node {int(ip)} has no periodic image"
                )
            diffs = np.abs(nodes[np.ix_(minus, others)] - nodes[ip, others])
            dist = diffs.max(axis=1) if diffs.size else np.zeros(len(minus))
            dist[used] = np.inf
            j = int(np.argmin(dist))
            if dist[j] > PRUNE_TOL * edge:
                raise DegenerateTessellation(
                    f"axis {ax}: plus-face node {int(ip)} has no periodic image"
                )
            used[j] = True
            pairs.append((int(ip), int(minus[j]), ax))
    if not pairs:
        return np.empty((0, 3), dtype=int)
    return np.array(pairs, dtype=int)


def _pick_corners(nodes: np.ndarray, edge: float) -> np.ndarray:
    """One node per domain corner: exact hit if present, else nearest boundary node."""
    dim = nodes.shape[1]
    on_boundary = np.zeros(len(nodes), dtype=bool)
    for ax in range(dim):
        on_boundary |= (nodes[:, ax] == 0.0) | (nodes[:, ax] == edge)
    boundary_ids = np.where(on_boundary)[0]
    if boundary_ids.size < 2**dim:
        raise DegenerateTessellation("fewer boundary nodes than corners")
    corners = []
    taken: set[int] = set()
    for bits in range(2**dim):
        corner = np.array([(bits >> ax) & 1 for ax in range(dim)], dtype=float) * edge
        d = np.linalg.norm(nodes[boundary_ids] - corner, axis=1)
        for j in np.argsort(d, kind="stable"):
            cand = int(boundary_ids[j])
            if cand not in taken:
                corners.append(cand)
                taken.add(cand)
                break
    return np.array(corners, dtype=int)


# ---------------------------------------------------------------------------
# network file format
# ---------------------------------------------------------------------------
# header: dim nN nB nP nC
# nN node lines (x y [z]), nB element lines (i j),
# nP pair lines (plus minus axis), nC corner lines (node),
# one trailing material line (E nu A I edge). Indices 0-based.

def save_network(net: BeamNetwork, path) -> None:
    with open(path, "w") as f:
        f.write(f"{net.dim} {net.n_nodes} {net.n_elements} "
                f"{len(net.periodic_pairs)} {len(net.corner_nodes)}\n")
        for p in net.nodes:
            f.write(" ".join(f"{x:.17g}" for x in p) + "\n")
        for a, b in net.elements:
            f.write(f"{a} {b}\n")
        for plus, minus, ax in net.periodic_pairs:
            f.write(f"{plus} {minus} {ax}\n")
        for c in net.corner_nodes:
            f.write(f"{c}\n")
        m = net.material
        f.write(f"{m.E:.17g} {m.nu:.17g} {m.A:.17g} {m.I:.17g} {net.domain_edge:.17g}\n")


def load_network(path) -> BeamNetwork:
    try:
        with open(path) as f:
            tokens = f.read().split("\n")
    except OSError as exc:
        raise ParseError(f"cannot read network file {path}: {exc}") from exc
    lines = [ln for ln in tokens if ln.strip()]
    try:
        dim, n_nodes, n_elems, n_pairs, n_corners = map(int, lines[0].split())
    except (ValueError, IndexError) as exc:
        raise ParseError(f"bad network header in {path}") from exc
    expected = 1 + n_nodes + n_elems + n_pairs + n_corners + 1
    if len(lines) != expected:
        raise ParseError(
            f"network file {path}: expected {expected} lines, found {len(lines)}"
        )
    pos = 1
    try:
        nodes = np.array(
            [[float(x) for x in lines[pos + i].split()] for i in range(n_nodes)]
        )
        pos += n_nodes
        elements = np.array(
            [[int(x) for x in lines[pos + i].split()] for i in range(n_elems)],
            dtype=int,
        ).reshape(n_elems, 2)
        pos += n_elems
        pairs = np.array(
            [[int(x) for x in lines[pos + i].split()] for i in range(n_pairs)],
            dtype=int,
        ).reshape(n_pairs, 3)
        pos += n_pairs
        corners = np.array([int(lines[pos + i]) for i in range(n_corners)], dtype=int)
        pos += n_corners
        E, nu, A, I, edge = (float(x) for x in lines[pos].split())
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed entry in network file {path}: {exc}") from exc
    if nodes.size and nodes.shape[1] != dim:
        raise ParseError(f"network file {path}: node width does not match dim {dim}")
    net = BeamNetwork(
        dim=dim,
        nodes=nodes,
        elements=elements,
        periodic_pairs=pairs,
        corner_nodes=corners,
        material=Material(E=E, nu=nu, A=A, I=I),
        domain_edge=edge,
    )
    validate_network(net)
    return net


def achieved_weights(packing: SpherePacking, dist: PoreSizeDistribution,
                     mode: str = "volume") -> np.ndarray:
    """Achieved per-class weight vector of a packing against `dist` classes."""
    radii_cls = dist.diameters / 2.0
    idx = np.argmin(np.abs(packing.radii[:, None] - radii_cls[None, :]), axis=1)
    if mode == "volume":
        contrib = np.pi * packing.radii**2
    else:
        contrib = np.ones_like(packing.radii)
    out = np.zeros(len(radii_cls))
    np.add.at(out, idx, contrib)
    return out / out.sum()
