"""Surrogate MLP tests: GELU, jacobian, training, model files."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from porohom import data, nn
from porohom.errors import (
    DivergedLoss,
    ParseError,
    ShapeMismatch,
    VersionMismatch,
)


def linear_dataset(n=256, dim=2, seed=0, noise=0.0):
    """Dataset from an exact linear map P = C vec(F - I)."""
    rng = np.random.default_rng(seed)
    d2 = dim * dim
    C = rng.normal(size=(d2, d2))
    F = np.eye(dim) + 0.3 * rng.normal(size=(n, dim, dim))
    P = ((F - np.eye(dim)).reshape(n, d2) @ C.T).reshape(n, dim, dim)
    if noise:
        P = P + noise * rng.normal(size=P.shape)
    return data.Dataset(
        dim=dim, F=F, P=P, split=data.assign_split(n, seed + 1),
        provenance={"protocol": "synthetic-linear"},
    )


class TestGelu:
    def test_matches_reference_definition(self):
        # x * Phi(x) against math.erf (correctly rounded) on [-10, 10]
        xs = np.linspace(-10, 10, 4001)
        ref = np.array(
            [0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0))) for x in xs]
        )
        got = nn.gelu(xs)
        assert abs(got - ref).max() <= 1e-7

    def test_derivative_matches_fd(self):
        xs = np.linspace(-6, 6, 101)
        h = 1e-6
        fd = (nn.gelu(xs + h) - nn.gelu(xs - h)) / (2 * h)
        assert abs(nn.gelu_prime(xs) - fd).max() <= 1e-8


class TestForward:
    def test_zero_weight_model_outputs_denormalized_zero(self):
        model = nn.init_model(2, [8], "gelu", seed=0)
        for w in model.weights:
            w[:] = 0.0
        model.mu_out = np.array([1.0, 2.0, 3.0, 4.0])
        model.s_out = np.array([1.0, 1.0, 2.0, 1.0])
        out = nn.forward(model, np.eye(2) * 7.0)
        assert_allclose(out.ravel(), model.mu_out)

    def test_hand_composed_single_neuron(self):
        # one tanh neuron: y = w2 * tanh(x w1 + b1) + b2 composed by hand
        model = nn.init_model(2, [1], "tanh", seed=0)
        w1 = np.array([[0.1], [0.2], [-0.3], [0.4]])
        b1 = np.array([0.05])
        w2 = np.array([[1.0, -2.0, 0.5, 0.25]])
        b2 = np.array([0.1, 0.2, -0.1, 0.0])
        model.weights = [w1.copy(), w2.copy()]
        model.biases = [b1.copy(), b2.copy()]
        F = np.array([[1.1, 0.2], [-0.1, 0.9]])
        z = float(F.ravel() @ w1[:, 0] + b1[0])
        expect = (np.tanh(z) * w2[0] + b2).reshape(2, 2)
        assert_allclose(nn.forward(model, F), expect, rtol=1e-14)

    def test_shape_mismatch(self):
        model = nn.init_model(2, [4], "gelu")
        with pytest.raises(ShapeMismatch):
            nn.forward(model, np.eye(3))
        with pytest.raises(ShapeMismatch):
            nn.forward_batch(model, np.zeros((5, 9)))


class TestJacobian:
    def test_linear_model_exact_weight_product(self):
        model = nn.init_model(2, [], "gelu", seed=1)  # single linear layer
        J = nn.jacobian(model, np.eye(2))
        assert_allclose(J, model.weights[0].T, rtol=1e-14)

    @pytest.mark.parametrize("act", ["gelu", "tanh", "sigmoid"])
    def test_matches_central_differences(self, act):
        rng = np.random.default_rng(3)
        for trial in range(10):
            model = nn.init_model(2, [17, 9], act, seed=trial)
            model.mu_in = rng.normal(size=4) * 0.1
            model.s_in = rng.uniform(0.5, 2.0, 4)
            model.mu_out = rng.normal(size=4)
            model.s_out = rng.uniform(0.5, 2.0, 4)
            F = np.eye(2) + 0.2 * rng.normal(size=(2, 2))
            J = nn.jacobian(model, F)
            Jfd = np.zeros((4, 4))
            h = 1e-6
            for j in range(4):
                dF = np.zeros(4)
                dF[j] = h
                Jfd[:, j] = (
                    nn.forward(model, F + dF.reshape(2, 2))
                    - nn.forward(model, F - dF.reshape(2, 2))
                ).ravel() / (2 * h)
            assert np.linalg.norm(J - Jfd) <= 1e-5 * np.linalg.norm(Jfd)


class TestTrain:
    def test_exact_linear_map_to_machine_precision(self):
        ds = linear_dataset(n=256, seed=0)
        model = nn.init_model(2, [], "gelu", seed=0)
        cfg = nn.TrainConfig(epochs=4000, batch_size=256, lr=0.05,
                             lr_decay_epoch=2500, seed=0)
        trained, rep = nn.train(model, ds, cfg)
        assert rep.final_train_loss <= 1e-10

    def test_deterministic_for_fixed_seed(self):
        ds = linear_dataset(n=200, seed=2, noise=0.01)
        cfg = nn.TrainConfig(epochs=30, batch_size=64, seed=5,
                             lr_decay_epoch=100)
        m1, r1 = nn.train(nn.init_model(2, [16], "gelu", seed=5), ds, cfg)
        m2, r2 = nn.train(nn.init_model(2, [16], "gelu", seed=5), ds, cfg)
        assert r1.final_train_loss == r2.final_train_loss
        for a, b in zip(m1.weights, m2.weights):
            assert np.array_equal(a, b)

    def test_doubling_epochs_does_not_regress(self):
        for seed in (0, 1, 2):
            ds = linear_dataset(n=500, seed=seed, noise=0.02)
            cfg1 = nn.TrainConfig(epochs=50, batch_size=128, seed=seed,
                                  lr_decay_epoch=1000)
            cfg2 = nn.TrainConfig(epochs=100, batch_size=128, seed=seed,
                                  lr_decay_epoch=1000)
            _, r1 = nn.train(nn.init_model(2, [24], "gelu", seed=seed), ds, cfg1)
            _, r2 = nn.train(nn.init_model(2, [24], "gelu", seed=seed), ds, cfg2)
            assert r2.final_train_loss <= 1.1 * r1.final_train_loss

    def test_full_batch_loss_nearly_monotone(self):
        ds = linear_dataset(n=300, seed=4, noise=0.05)
        cfg = nn.TrainConfig(epochs=80, batch_size=300, seed=0,
                             lr_decay_epoch=1000)
        _, rep = nn.train(nn.init_model(2, [16], "tanh", seed=0), ds, cfg)
        losses = np.array(rep.train_loss)
        assert np.all(losses[1:] <= 1.05 * losses[:-1])

    def test_diverged_loss_raises(self):
        ds = linear_dataset(n=100, seed=6)
        ds.P *= 1e150  # overflow the first update
        cfg = nn.TrainConfig(epochs=5, lr=1e300)
        with pytest.raises(DivergedLoss):
            nn.train(nn.init_model(2, [8], "gelu"), ds, cfg)

    def test_normalization_roundtrip(self):
        ds = linear_dataset(n=128, seed=7)
        m, _ = nn.train(
            nn.init_model(2, [4], "gelu", seed=0), ds,
            nn.TrainConfig(epochs=2),
        )
        X, _ = ds.arrays("train")
        back = ((X - m.mu_in) / m.s_in) * m.s_in + m.mu_in
        assert abs(back - X).max() <= 1e-12 * max(1.0, abs(X).max())
        assert np.all(m.s_in > 0) and np.all(m.s_out > 0)


class TestGridSearch:
    def test_single_cell(self):
        ds = linear_dataset(n=200, seed=8, noise=0.05)
        res = nn.grid_search(
            ds, activations=("gelu",), widths=(8,), depths=(1,),
            config=nn.TrainConfig(epochs=10, lr_decay_epoch=100),
        )
        assert res.losses.shape == (1, 1, 1)
        assert np.isfinite(res.losses).all()
        assert res.best == ("gelu", 8, 1)

    def test_reproducible_under_seed(self):
        ds = linear_dataset(n=200, seed=9, noise=0.05)
        cfg = nn.TrainConfig(epochs=8, seed=3, lr_decay_epoch=100)
        r1 = nn.grid_search(ds, ("tanh",), (8, 16), (1,), cfg)
        r2 = nn.grid_search(ds, ("tanh",), (8, 16), (1,), cfg)
        assert np.array_equal(r1.losses, r2.losses)


class TestModelIO:
    def test_roundtrip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(11)
        model = nn.init_model(3, [32, 16], "gelu", seed=2)
        model.activations = ["gelu", "tanh"]
        model.mu_in = rng.normal(size=9)
        model.s_in = rng.uniform(0.5, 2, 9)
        p = tmp_path / "model.phnn"
        nn.save_model(model, p)
        back = nn.load_model(p)
        X = rng.normal(size=(100, 9))
        assert np.array_equal(
            nn.forward_batch(model, X), nn.forward_batch(back, X)
        )

    def test_truncated_file(self, tmp_path):
        model = nn.init_model(2, [8], "gelu")
        p = tmp_path / "model.phnn"
        nn.save_model(model, p)
        raw = p.read_bytes()
        p.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(ParseError):
            nn.load_model(p)

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "bad.phnn"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ParseError):
            nn.load_model(p)

    def test_dim_mismatch(self, tmp_path):
        model = nn.init_model(3, [8], "gelu")
        p = tmp_path / "model.phnn"
        nn.save_model(model, p)
        with pytest.raises(VersionMismatch, match="dim"):
            nn.load_model(p, expect_dim=2)

    def test_version_mismatch(self, tmp_path):
        model = nn.init_model(2, [8], "gelu")
        p = tmp_path / "model.phnn"
        nn.save_model(model, p)
        raw = bytearray(p.read_bytes())
        raw[4] = 99  # bump the version field
        p.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatch):
            nn.load_model(p)
