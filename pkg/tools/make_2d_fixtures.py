#!/usr/bin/env python3
"""Generate the checked-in 2D RVE fixtures (run once, commit the outputs).

rve2d_small.net mirrors the scale of a desk RVE (~200 beams); rve2d_bench.net
is a finer microstructure (>1000 beams) used by the backend benchmark.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import porohom as ph  # noqa: E402


def main(outdir="tests/fixtures"):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    dist = ph.PoreSizeDistribution(
        diameters=np.array([0.08, 0.12]), weights=np.array([0.5, 0.5])
    )
    pk = ph.pack_disks(dist, seed=1, packing_fraction=0.44)
    net = ph.tessellate_periodic(pk)
    ph.save_network(net, outdir / "rve2d_small.net")
    print(f"rve2d_small: {net.n_nodes} nodes, {net.n_elements} beams")

    dist = ph.PoreSizeDistribution(
        diameters=np.array([0.028, 0.046]), weights=np.array([0.5, 0.5])
    )
    pk = ph.pack_disks(dist, seed=10, packing_fraction=0.43, max_attempts=20000)
    net = ph.tessellate_periodic(pk)
    ph.save_network(net, outdir / "rve2d_bench.net")
    print(f"rve2d_bench: {net.n_nodes} nodes, {net.n_elements} beams")


if __name__ == "__main__":
    main(*sys.argv[1:])
