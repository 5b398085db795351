#!/usr/bin/env python3
"""Generate the checked-in 3D periodic beam-network fixture.

Run once; the resulting file is committed under tests/fixtures/. The package
itself only ingests 3D networks, so this script does the one-off tessellation:
periodic sphere packing, 3x3x3 replication, scipy Voronoi, center-cube cutout.
"""

import sys
from pathlib import Path

import numpy as np
from scipy.spatial import Voronoi

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from porohom.rve import (  # noqa: E402
    BeamNetwork,
    Material,
    _drop_orphans,
    _match_periodic,
    _pick_corners,
    _prune_short_edges,
    _snap_faces,
    validate_network,
)

EDGE = 1.0


def pack_spheres(n_target, radius, seed, max_attempts=20000):
    rng = np.random.default_rng(seed)
    centers = []
    for _ in range(n_target):
        for _ in range(max_attempts):
            c = rng.uniform(0.0, EDGE, 3)
            if centers:
                d = np.abs(np.array(centers) - c)
                d = np.minimum(d, EDGE - d)
                if np.any((d**2).sum(axis=1) < (2 * radius) ** 2):
                    continue
            centers.append(c)
            break
        else:
            raise RuntimeError("packing stalled; lower n_target or radius")
    return np.array(centers)


def clip_segment_3d(p0, p1, edge):
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for ax in range(3):
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


def main(out_path, n_spheres=105, seed=2024):
    base = pack_spheres(n_spheres, radius=0.09, seed=seed)
    offsets = [
        np.array([i, j, k], dtype=float)
        for i in (-1, 0, 1)
        for j in (-1, 0, 1)
        for k in (-1, 0, 1)
    ]
    pts = np.vstack([base + o * EDGE for o in offsets])
    vor = Voronoi(pts)

    # collect unique cell edges from the ridge polygons
    seg_keys = set()
    for poly in vor.ridge_vertices:
        if -1 in poly:
            continue
        m = len(poly)
        for i in range(m):
            a, b = poly[i], poly[(i + 1) % m]
            seg_keys.add((a, b) if a < b else (b, a))

    merge = 1e-7 * EDGE
    node_map = {}
    nodes = []

    def add_node(p):
        key = tuple(int(round(x / merge)) for x in p)
        idx = node_map.get(key)
        if idx is None:
            idx = len(nodes)
            node_map[key] = idx
            nodes.append(p)
        return idx

    elems = set()
    for a, b in sorted(seg_keys):
        clip = clip_segment_3d(vor.vertices[a], vor.vertices[b], EDGE)
        if clip is None:
            continue
        q0, q1 = clip
        if np.linalg.norm(q1 - q0) < merge:
            continue
        # drop walls lying in a max face (duplicates of min-face copies)
        if any(
            abs(q0[ax] - EDGE) < 1e-7 and abs(q1[ax] - EDGE) < 1e-7
            for ax in range(3)
        ):
            continue
        ia, ib = add_node(q0), add_node(q1)
        if ia != ib:
            elems.add((ia, ib) if ia < ib else (ib, ia))

    node_arr = np.array(nodes)
    elem_arr = np.array(sorted(elems), dtype=int)
    node_arr, elem_arr = _prune_short_edges(node_arr, elem_arr, EDGE)
    node_arr, elem_arr = _drop_orphans(node_arr, elem_arr)
    node_arr = np.clip(node_arr, 0.0, EDGE)
    _snap_faces(node_arr, EDGE)
    pairs = _match_periodic(node_arr, EDGE)
    corners = _pick_corners(node_arr, EDGE)

    net = BeamNetwork(
        dim=3,
        nodes=node_arr,
        elements=elem_arr,
        periodic_pairs=pairs,
        corner_nodes=corners,
        material=Material.circular(radius=0.02 * EDGE),
        domain_edge=EDGE,
    )
    validate_network(net)
    from porohom.rve import save_network

    save_network(net, out_path)
    print(f"wrote {out_path}: {net.n_nodes} nodes, {net.n_elements} beams, "
          f"{len(pairs)} pairs")


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/rve3d.net"
    main(out)
