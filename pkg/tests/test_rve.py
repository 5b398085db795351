"""Packing, tessellation and network-file tests."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

import porohom as ph
from porohom import rve
from porohom.errors import PackingFailed, ParseError, ValidationError


def bimodal(d1=0.09, d2=0.14, w=0.5):
    return ph.PoreSizeDistribution(
        diameters=np.array([d1, d2]), weights=np.array([w, 1 - w])
    )


class TestDistribution:
    def test_rejects_bad_weights(self):
        with pytest.raises(ValidationError):
            ph.PoreSizeDistribution(np.array([0.1, 0.2]), np.array([0.5, 0.6]))

    def test_rejects_unsorted_diameters(self):
        with pytest.raises(ValidationError):
            ph.PoreSizeDistribution(np.array([0.2, 0.1]), np.array([0.5, 0.5]))

    def test_rejects_negative_diameter(self):
        with pytest.raises(ValidationError):
            ph.PoreSizeDistribution(np.array([-0.1, 0.2]), np.array([0.5, 0.5]))


class TestPackDisks:
    def test_single_entry_places_disk(self):
        dist = ph.PoreSizeDistribution(np.array([0.5]), np.array([1.0]))
        pk = ph.pack_disks(dist, seed=0, packing_fraction=0.19)
        assert len(pk.radii) >= 1
        assert pk.radii[0] == pytest.approx(0.25)
        assert np.all(pk.centers >= 0) and np.all(pk.centers <= 1)

    def test_no_overlaps_exhaustive(self):
        dist = bimodal(0.1, 0.2)
        pk = ph.pack_disks(dist, seed=1)
        c, r = pk.centers, pk.radii
        for i in range(len(r)):
            for j in range(i + 1, len(r)):
                gap = np.linalg.norm(c[i] - c[j]) - (r[i] + r[j])
                assert gap >= -1e-9

    def test_deterministic(self):
        dist = bimodal()
        a = ph.pack_disks(dist, seed=13)
        b = ph.pack_disks(dist, seed=13)
        assert np.array_equal(a.centers, b.centers)
        assert np.array_equal(a.radii, b.radii)

    def test_impossible_target_raises(self):
        # five half-edge disks cannot all fit periodically in the unit square
        dist = ph.PoreSizeDistribution(np.array([0.5]), np.array([1.0]))
        with pytest.raises(PackingFailed):
            ph.pack_disks(dist, seed=0, max_attempts=200, packing_fraction=0.95)

    def test_achieved_weights_close(self):
        dist = ph.PoreSizeDistribution(
            np.array([0.05, 0.08, 0.12]), np.array([0.3, 0.4, 0.3])
        )
        pk = ph.pack_disks(dist, seed=2, packing_fraction=0.42)
        assert len(pk.radii) >= 50
        got = rve.achieved_weights(pk, dist, mode="volume")
        assert np.abs(got - dist.weights).sum() <= 0.1

    def test_count_mode(self):
        dist = bimodal()
        pk = ph.pack_disks(dist, seed=3, mode="count", packing_fraction=0.3)
        n_small = int((pk.radii < 0.06).sum())
        n_large = int((pk.radii > 0.06).sum())
        assert abs(n_small - n_large) <= 1


class TestTessellate:
    def test_four_disk_square_lattice(self):
        # analytically symmetric packing: cells are the four quarter squares,
        # boundary nodes pair exactly under x -> x +- 1
        pk = ph.SpherePacking(
            centers=np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]]),
            radii=np.full(4, 0.2),
            domain_edge=1.0,
        )
        net = ph.tessellate_periodic(pk)
        for plus, minus, ax in net.periodic_pairs:
            delta = net.nodes[plus] - net.nodes[minus]
            expect = np.zeros(2)
            expect[ax] = 1.0
            assert_allclose(delta, expect, atol=1e-9)
        # square-lattice cut: nodes at {0,.5,1} x {0,.5,1} grid positions
        assert net.n_nodes == 8
        assert net.n_elements == 8

    def test_pairs_satisfy_offset_invariant(self, rve2d):
        e = rve2d.domain_edge
        for plus, minus, ax in rve2d.periodic_pairs:
            delta = rve2d.nodes[plus] - rve2d.nodes[minus]
            expect = np.zeros(2)
            expect[ax] = e
            assert np.max(np.abs(delta - expect)) <= 1e-9 * e

    def test_connected(self, rve2d):
        assert rve._connected(
            rve2d.n_nodes, rve2d.elements, rve2d.periodic_pairs
        )

    def test_deterministic_pipeline(self):
        dist = bimodal()
        n1 = ph.tessellate_periodic(ph.pack_disks(dist, seed=4))
        n2 = ph.tessellate_periodic(ph.pack_disks(dist, seed=4))
        assert np.array_equal(n1.nodes, n2.nodes)
        assert np.array_equal(n1.elements, n2.elements)
        assert np.array_equal(n1.periodic_pairs, n2.periodic_pairs)

    def test_periodic_closure(self, rve2d):
        # every face-crossing edge endpoint has its periodic image paired:
        # plus-face nodes always, minus-face nodes whenever a non-in-face
        # edge is incident (in-face walls keep only the minus copy)
        e = rve2d.domain_edge
        pairs = {(int(p), int(m), int(a)) for p, m, a in rve2d.periodic_pairs}
        incident = {i: [] for i in range(rve2d.n_nodes)}
        for a, b in rve2d.elements:
            incident[int(a)].append(int(b))
            incident[int(b)].append(int(a))
        for ax in range(2):
            for i in np.where(rve2d.nodes[:, ax] == e)[0]:
                assert any(p == i and a == ax for p, m, a in pairs)
            for i in np.where(rve2d.nodes[:, ax] == 0.0)[0]:
                crossing = any(
                    rve2d.nodes[j, ax] != 0.0 for j in incident[int(i)]
                )
                if crossing:
                    assert any(m == i and a == ax for p, m, a in pairs)

    def test_no_short_edges(self, rve2d):
        assert rve2d.element_lengths().min() > 1e-6 * rve2d.domain_edge

    def test_corner_count(self, rve2d):
        assert len(rve2d.corner_nodes) == 4
        assert len(set(rve2d.corner_nodes.tolist())) == 4

    def test_rejects_3d_packing(self):
        pk = ph.SpherePacking(
            centers=np.zeros((1, 3)), radii=np.array([0.1]), domain_edge=1.0
        )
        with pytest.raises(ValueError):
            ph.tessellate_periodic(pk)


class TestNetworkIO:
    def test_roundtrip_identity(self, rve2d, tmp_path):
        p = tmp_path / "net.txt"
        ph.save_network(rve2d, p)
        back = ph.load_network(p)
        assert back.dim == rve2d.dim
        assert np.array_equal(back.nodes, rve2d.nodes)
        assert np.array_equal(back.elements, rve2d.elements)
        assert np.array_equal(back.periodic_pairs, rve2d.periodic_pairs)
        assert np.array_equal(back.corner_nodes, rve2d.corner_nodes)
        assert back.material == rve2d.material
        assert back.domain_edge == rve2d.domain_edge

    def test_missing_corners_rejected(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text(
            "2 2 1 0 0\n0 0\n1 0\n0 1\n1000 0.3 1e-3 1e-7 1\n"
        )
        with pytest.raises(ValidationError, match="corner_nodes"):
            ph.load_network(p)

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("2 xx\n")
        with pytest.raises(ParseError):
            ph.load_network(p)

    def test_truncated_file(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("2 5 4 0 4\n0 0\n1 0\n")
        with pytest.raises(ParseError):
            ph.load_network(p)

    def test_3d_fixture_loads_connected(self, rve3d):
        assert rve3d.dim == 3
        assert rve3d.n_elements >= 1000
        assert rve._connected(rve3d.n_nodes, rve3d.elements, rve3d.periodic_pairs)
        assert len(rve3d.corner_nodes) == 8
