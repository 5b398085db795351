"""Constitutive backends bridging the macro solver to a microscale model."""

from __future__ import annotations

import numpy as np

from .fem import ConstitutiveCallback
from .micro import MicroSolver
from .rve import BeamNetwork


class BeamMaterial(ConstitutiveCallback):
    """Microscale backend: solve the beam RVE and average its stress.

    The reduced stiffness is factorized once; every evaluation performs the
    load build, triangular solves and per-beam averaging. The constitutive
    tangent is formed by central differences (column ordering row-major over
    the deformation-gradient components).
    """

    provides_tangent = True

    def __init__(self, network: BeamNetwork, fd_epsilon: float = 1e-6,
                 frozen_tangent: bool = False, fast_linear: bool = False):
        super().__init__()
        self.network = network
        self.solver = MicroSolver(network)
        self.dim = network.dim
        self.fd_epsilon = fd_epsilon
        # frozen mode reuses the tangent evaluated at the undeformed state;
        # the micro model is linear so this is a near-exact quasi-Newton
        # operator at a fraction of the FD cost
        self.frozen_tangent = frozen_tangent
        # fast_linear applies the precomputed linear response operator
        # instead of per-evaluation back-substitutions (identical output for
        # the linear micro model); used by bulk data generation
        self.fast_linear = fast_linear
        self._tangent_at_identity = None

    def evaluate(self, F: np.ndarray) -> np.ndarray:
        return self.evaluate_batch(np.asarray(F, dtype=float)[None])[0]

    def evaluate_batch(self, Fs: np.ndarray) -> np.ndarray:
        Fs = np.asarray(Fs, dtype=float)
        self.n_eval += len(Fs)
        if self.fast_linear:
            u_full = self.solver.solve_batch_linear(Fs)
        else:
            u_full, _ = self.solver.solve_batch(Fs)
        return self.solver.average_stress_batch(u_full)

    def _fd_tangent_batch(self, Fs: np.ndarray) -> np.ndarray:
        d = self.dim
        m = len(Fs)
        eps = self.fd_epsilon
        pert = np.zeros((m, 2 * d * d, d, d))
        for j in range(d * d):
            dF = np.zeros(d * d)
            dF[j] = eps
            dF = dF.reshape(d, d)
            pert[:, 2 * j] = Fs + dF
            pert[:, 2 * j + 1] = Fs - dF
        P = self.evaluate_batch(pert.reshape(-1, d, d)).reshape(m, 2 * d * d, d * d)
        T = np.empty((m, d * d, d * d))
        for j in range(d * d):
            T[:, :, j] = (P[:, 2 * j] - P[:, 2 * j + 1]) / (2 * eps)
        return T

    def tangent(self, F: np.ndarray) -> np.ndarray:
        return self.tangent_batch(np.asarray(F, dtype=float)[None])[0]

    def tangent_batch(self, Fs: np.ndarray) -> np.ndarray:
        Fs = np.asarray(Fs, dtype=float)
        self.n_tangent += len(Fs)
        if self.frozen_tangent:
            if self._tangent_at_identity is None:
                eye = np.eye(self.dim)[None]
                self._tangent_at_identity = self._fd_tangent_batch(eye)[0]
            T = self._tangent_at_identity
            return np.broadcast_to(T, (len(Fs),) + T.shape).copy()
        return self._fd_tangent_batch(Fs)


class NeuralMaterial(ConstitutiveCallback):
    """Surrogate backend: MLP forward pass with its exact Jacobian."""

    provides_tangent = True

    def __init__(self, model):
        super().__init__()
        from . import nn

        self._nn = nn
        self.model = model
        self.dim = model.dim

    def evaluate(self, F: np.ndarray) -> np.ndarray:
        self.n_eval += 1
        return self._nn.forward(self.model, F)

    def evaluate_batch(self, Fs: np.ndarray) -> np.ndarray:
        Fs = np.asarray(Fs, dtype=float)
        self.n_eval += len(Fs)
        d = self.dim
        out = self._nn.forward_batch(self.model, Fs.reshape(len(Fs), d * d))
        return out.reshape(len(Fs), d, d)

    def tangent(self, F: np.ndarray) -> np.ndarray:
        self.n_tangent += 1
        return self._nn.jacobian(self.model, F)

    def tangent_batch(self, Fs: np.ndarray) -> np.ndarray:
        Fs = np.asarray(Fs, dtype=float)
        self.n_tangent += len(Fs)
        return self._nn.jacobian_batch(self.model, Fs.reshape(len(Fs), -1))


class RecordingMaterial(ConstitutiveCallback):
    """Wrapper that records (F, P) pairs from stress evaluations.

    Tangent calls delegate to the inner callback directly, so FD probing
    inside the inner tangent is not recorded."""

    def __init__(self, inner: ConstitutiveCallback):
        super().__init__()
        self.inner = inner
        self.dim = inner.dim
        self.provides_tangent = inner.provides_tangent
        self.records_F: list[np.ndarray] = []
        self.records_P: list[np.ndarray] = []
        self.paused = False

    def evaluate(self, F):
        return self.evaluate_batch(np.asarray(F, dtype=float)[None])[0]

    def evaluate_batch(self, Fs):
        P = self.inner.evaluate_batch(Fs)
        self.n_eval += len(Fs)
        if not self.paused:
            self.records_F.append(np.array(Fs, copy=True))
            self.records_P.append(np.array(P, copy=True))
        return P

    def tangent(self, F):
        self.n_tangent += 1
        return self.inner.tangent(F)

    def tangent_batch(self, Fs):
        self.n_tangent += len(Fs)
        return self.inner.tangent_batch(Fs)

    def harvested(self):
        if not self.records_F:
            d = self.dim
            return np.empty((0, d, d)), np.empty((0, d, d))
        return np.concatenate(self.records_F), np.concatenate(self.records_P)
