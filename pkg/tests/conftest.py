import numpy as np
import pytest

import porohom as ph
from pathlib import Path

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def rve2d():
    return ph.load_network(FIXTURES / "rve2d_small.net")


@pytest.fixture(scope="session")
def rve2d_bench():
    return ph.load_network(FIXTURES / "rve2d_bench.net")


@pytest.fixture(scope="session")
def rve3d():
    return ph.load_network(FIXTURES / "rve3d.net")


@pytest.fixture()
def random_network_2d():
    """Random 20-element connected frame (not an RVE) for assembly oracles."""
    rng = np.random.default_rng(8)
    nodes = rng.uniform(0.0, 1.0, size=(12, 2))
    elems = [(i, i + 1) for i in range(11)]
    seen = set(elems)
    while len(elems) < 20:
        a, b = sorted(rng.integers(0, 12, 2).tolist())
        if a != b and (a, b) not in seen:
            seen.add((a, b))
            elems.append((a, b))
    return ph.BeamNetwork(
        dim=2,
        nodes=nodes,
        elements=np.array(elems, dtype=int),
        periodic_pairs=np.empty((0, 3), dtype=int),
        corner_nodes=np.empty(0, dtype=int),
        material=ph.Material(E=50.0, nu=0.3, A=0.02, I=3e-5),
        domain_edge=1.0,
    )
