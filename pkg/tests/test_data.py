"""Dataset generation, statistics and file-format tests."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from porohom import data
from porohom.errors import EmptyDataset, ParseError, ValidationError


def small_random_dataset(n=200, dim=2, seed=0):
    rng = np.random.default_rng(seed)
    F = np.eye(dim) + 0.2 * rng.normal(size=(n, dim, dim))
    P = rng.normal(size=(n, dim, dim))
    return data.Dataset(dim=dim, F=F, P=P, split=data.assign_split(n, seed))


class TestGenerate2d:
    def test_zero_magnitude_gives_identity_pairs(self, rve2d):
        ds = data.generate_2d(rve2d, n_simulations=1, seed=0,
                              magnitude_range=(0.0, 0.0))
        assert ds.n >= 1
        assert_allclose(ds.F, np.broadcast_to(np.eye(2), ds.F.shape), atol=1e-14)
        assert abs(ds.P).max() <= 1e-12

    def test_deterministic(self, rve2d):
        a = data.generate_2d(rve2d, n_simulations=2, seed=3)
        b = data.generate_2d(rve2d, n_simulations=2, seed=3)
        assert np.array_equal(a.F, b.F)
        assert np.array_equal(a.P, b.P)
        assert np.array_equal(a.split, b.split)

    def test_split_disjoint_with_ratio(self, rve2d):
        ds = data.generate_2d(rve2d, n_simulations=2, seed=1)
        n_val = int((ds.split == 1).sum())
        assert n_val == int(round(0.1 * ds.n))
        assert set(np.unique(ds.split)) <= {0, 1}

    def test_audit_reproduces_stresses(self, rve2d):
        ds = data.generate_2d(rve2d, n_simulations=2, seed=2)
        assert data.audit_dataset(ds, rve2d, n_check=50, seed=0) <= 1e-10

    def test_correlation_pattern(self, dataset2d):
        st = data.compute_stats(dataset2d)
        c = np.abs(st.correlation)
        names = st.input_names()
        # normal rows pair with their own normal output
        ixx, ixy, iyx, iyy = (names.index(f"F_{t}") for t in
                              ("xx", "xy", "yx", "yy"))
        assert np.argmax(c[ixx]) == ixx
        assert np.argmax(c[iyy]) == iyy
        # shear inputs correlate with both shear outputs
        for row in (ixy, iyx):
            top = np.argmax(c[row])
            assert top in (ixy, iyx)
            assert c[row, ixy] > 0.3 and c[row, iyx] > 0.3


class TestGenerate3d:
    def test_trivial_zero_amplitude(self, rve3d):
        ds = data.generate_3d(rve3d, n_samples=1, seed=0, amplitude=0.0)
        assert_allclose(ds.F, np.broadcast_to(np.eye(3), ds.F.shape), atol=1e-14)
        assert abs(ds.P).max() <= 1e-12

    def test_input_statistics_bracket(self, dataset3d):
        st = data.compute_stats(dataset3d)
        assert np.all(np.abs(st.input_mean) <= 0.03)
        assert np.all(st.input_std >= 0.10) and np.all(st.input_std <= 0.20)


class TestStats:
    def test_constant_dataset_degenerate(self):
        ds = data.Dataset(
            dim=2, F=np.broadcast_to(np.eye(2), (10, 2, 2)).copy(),
            P=np.zeros((10, 2, 2)), split=np.zeros(10, dtype=np.uint8),
        )
        st = data.compute_stats(ds)
        assert st.degenerate
        assert abs(st.correlation).max() == 0.0
        assert np.all(st.input_std == 0.0)

    def test_two_point_perfect_correlation(self):
        F = np.zeros((2, 2, 2))
        F[1] = 1.0
        P = np.zeros((2, 2, 2))
        P[1] = 1.0
        ds = data.Dataset(dim=2, F=F, P=P, split=np.zeros(2, dtype=np.uint8))
        st = data.compute_stats(ds)
        assert_allclose(st.correlation, np.ones((4, 4)), atol=1e-12)

    def test_against_streaming_oracle(self):
        ds = small_random_dataset(n=500, seed=5)
        st = data.compute_stats(ds)
        X, Y = ds.arrays("all")
        # independent streaming (Welford) mean/variance oracle
        mean = np.zeros(4)
        m2 = np.zeros(4)
        for k, row in enumerate(X, start=1):
            delta = row - mean
            mean += delta / k
            m2 += delta * (row - mean)
        assert_allclose(st.input_mean, mean, atol=1e-12)
        assert_allclose(st.input_std, np.sqrt(m2 / len(X)), atol=1e-12)
        # naive Pearson per component pair
        for i in range(4):
            for j in range(4):
                xi = X[:, i] - X[:, i].mean()
                yj = Y[:, j] - Y[:, j].mean()
                r = (xi * yj).sum() / np.sqrt((xi**2).sum() * (yj**2).sum())
                assert st.correlation[i, j] == pytest.approx(r, abs=1e-12)

    def test_empty_dataset_raises(self):
        ds = data.Dataset(dim=2, F=np.zeros((0, 2, 2)), P=np.zeros((0, 2, 2)),
                          split=np.zeros(0, dtype=np.uint8))
        with pytest.raises(EmptyDataset):
            data.compute_stats(ds)


class TestDatasetIO:
    def test_roundtrip_bit_identical(self, tmp_path):
        ds = small_random_dataset(n=1000, seed=7)
        p = tmp_path / "ds.bin"
        data.save_dataset(ds, p)
        back = data.load_dataset(p)
        assert np.array_equal(back.F, ds.F)
        assert np.array_equal(back.P, ds.P)

    def test_count_mismatch_raises(self, tmp_path):
        ds = small_random_dataset(n=10)
        p = tmp_path / "ds.bin"
        data.save_dataset(ds, p)
        raw = p.read_bytes()
        p.write_bytes(raw[:-16])  # drop half a record
        with pytest.raises(ParseError):
            data.load_dataset(p)

    def test_bad_dim_raises(self, tmp_path):
        import struct

        p = tmp_path / "ds.bin"
        p.write_bytes(b"PHDS" + struct.pack("<IIQ", 1, 5, 0))
        with pytest.raises(ValidationError):
            data.load_dataset(p)

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "ds.bin"
        p.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(ParseError):
            data.load_dataset(p)

    def test_csv_export(self, tmp_path):
        ds = small_random_dataset(n=20)
        p = tmp_path / "ds.csv"
        data.export_csv(ds, p)
        header = p.read_text().splitlines()[0]
        assert header.split(",")[:2] == ["F_xx", "F_xy"]
        table = np.loadtxt(p, delimiter=",", skiprows=1)
        assert table.shape == (20, 9)
