"""Macroscopic nonlinear solvers: BFGS with Wolfe line search, (Quasi-)Newton
with a constitutive tangent, and dynamic load stepping."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import (
    LineSearchFailed,
    MaxIterations,
    NonPositiveJacobian,
    SingularTangent,
    StepTooSmall,
)
from . import fem


@dataclass
class SolverConfig:
    method: str = "bfgs"              # bfgs | newton
    rel_residual_tol: float = 1e-10
    max_iterations: int = 60
    fd_epsilon: float = 1e-6
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    load_steps: int = 4
    min_step_fraction: float = 1.0 / 64.0
    max_ls_evals: int = 25
    dense_bfgs_max_dof: int = 10_000
    lbfgs_memory: int = 30
    trace: bool = False

    def __post_init__(self):
        if not (0 < self.wolfe_c1 < self.wolfe_c2 < 1):
            raise ValueError("Wolfe constants must satisfy 0 < c1 < c2 < 1")
        if self.rel_residual_tol <= 0:
            raise ValueError("rel_residual_tol must be positive")


@dataclass
class StepRecord:
    """One accepted BFGS step, kept when tracing for post-hoc Wolfe checks."""

    u: np.ndarray
    direction: np.ndarray
    alpha: float


@dataclass
class SolveReport:
    converged: bool
    method: str
    iterations_per_step: list = field(default_factory=list)
    residual_histories: list = field(default_factory=list)
    load_fractions: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    u: np.ndarray | None = None
    trace: list = field(default_factory=list)

    @property
    def total_iterations(self) -> int:
        return int(sum(self.iterations_per_step))

    @property
    def mean_iterations_per_step(self) -> float:
        if not self.iterations_per_step:
            return 0.0
        return float(np.mean(self.iterations_per_step))

    def to_dict(self) -> dict:
        return {
            "converged": bool(self.converged),
            "method": self.method,
            "iterations_per_step": [int(i) for i in self.iterations_per_step],
            "mean_iterations_per_step": self.mean_iterations_per_step,
            "residual_histories": [
                [float(r) for r in h] for h in self.residual_histories
            ],
            "load_fractions": [float(x) for x in self.load_fractions],
            "wall_times": [float(t) for t in self.wall_times],
        }


# ---------------------------------------------------------------------------
# finite-difference constitutive tangent
# ---------------------------------------------------------------------------

def fd_constitutive_tangent(evaluate, F_bar: np.ndarray,
                            epsilon: float = 1e-6) -> np.ndarray:
    """Central-difference d(vec P)/d(vec F), row-major component ordering.

    Column j holds the derivative with respect to deformation-gradient
    component j (row-major)."""
    F_bar = np.asarray(F_bar, dtype=float)
    d = F_bar.shape[0]
    T = np.empty((d * d, d * d))
    for j in range(d * d):
        dF = np.zeros(d * d)
        dF[j] = epsilon
        dF = dF.reshape(d, d)
        Pp = np.asarray(evaluate(F_bar + dF), dtype=float)
        Pm = np.asarray(evaluate(F_bar - dF), dtype=float)
        T[:, j] = (Pp - Pm).ravel() / (2 * epsilon)
    return T


# ---------------------------------------------------------------------------
# BFGS with strong-Wolfe line search on the least-squares merit
# ---------------------------------------------------------------------------

def _merit(r: np.ndarray) -> float:
    return 0.5 * float(r @ r)


class _LinePhi:
    """phi(alpha) = 0.5 ||R(u + alpha d)||^2 with residual memoization."""

    def __init__(self, residual, u, d):
        self.residual = residual
        self.u = u
        self.d = d
        # absolute perturbation in parameter space: near convergence the
        # direction shrinks with the residual, so a relative step would
        # probe below floating-point noise
        dn = np.linalg.norm(d)
        self.h = 1e-8 * (1.0 + np.linalg.norm(u)) / max(dn, 1e-300)
        self.cache: dict[float, np.ndarray] = {}
        self.n_evals = 0

    def r_at(self, alpha: float) -> np.ndarray:
        r = self.cache.get(alpha)
        if r is None:
            r = self.residual(self.u + alpha * self.d)
            self.cache[alpha] = r
            self.n_evals += 1
        return r

    def phi(self, alpha: float) -> float:
        return _merit(self.r_at(alpha))

    def dphi(self, alpha: float) -> float:
        # directional derivative via a central difference of the residual
        h = self.h
        rp = self.r_at(alpha + h)
        rm = self.r_at(alpha - h)
        jd = (rp - rm) / (2 * h)
        return float(self.r_at(alpha) @ jd)


def _zoom(line, a_lo, a_hi, phi0, dphi0, c1, c2, budget):
    phi_lo = line.phi(a_lo)
    for _ in range(budget):
        a = 0.5 * (a_lo + a_hi)
        phi_a = line.phi(a)
        if phi_a > phi0 + c1 * a * dphi0 or phi_a >= phi_lo:
            a_hi = a
        else:
            dphi_a = line.dphi(a)
            if abs(dphi_a) <= -c2 * dphi0:
                return a
            if dphi_a * (a_hi - a_lo) >= 0:
                a_hi = a_lo
            a_lo = a
            phi_lo = phi_a
        if abs(a_hi - a_lo) < 1e-14:
            break
    raise LineSearchFailed("zoom bracket exhausted")


def _wolfe_line_search(line: _LinePhi, phi0, dphi0, c1, c2, max_evals):
    """Strong Wolfe line search (bracket + zoom)."""
    if dphi0 >= 0:
        raise LineSearchFailed("search direction is not a descent direction")
    a_prev, phi_prev = 0.0, phi0
    a = 1.0
    for it in range(12):
        if line.n_evals > max_evals:
            raise LineSearchFailed("line-search evaluation budget exhausted")
        phi_a = line.phi(a)
        # a near-exact solve satisfies both conditions; skip the derivative
        if phi_a <= 1e-8 * phi0:
            return a
        if phi_a > phi0 + c1 * a * dphi0 or (phi_a >= phi_prev and it > 0):
            return _zoom(line, a_prev, a, phi0, dphi0, c1, c2, max_evals)
        dphi_a = line.dphi(a)
        if abs(dphi_a) <= -c2 * dphi0:
            return a
        if dphi_a >= 0:
            return _zoom(line, a, a_prev, phi0, dphi0, c1, c2, max_evals)
        a_prev, phi_prev = a, phi_a
        a *= 2.0
    raise LineSearchFailed("bracketing exhausted")


class _DenseInverseHessian:
    def __init__(self, n, k0=None):
        if k0 is None:
            self.H = np.eye(n)
        else:
            k0 = sp.csc_matrix(k0)
            try:
                lu = splu(k0)
            except RuntimeError as exc:
                raise SingularTangent(str(exc)) from exc
            H = lu.solve(np.eye(n))
            self.H = 0.5 * (H + H.T)  # the update formula assumes symmetry
        self.H0 = self.H.copy()

    def apply(self, g):
        return self.H @ g

    def reset(self):
        self.H = self.H0.copy()

    def update(self, s, y):
        rho = 1.0 / float(y @ s)
        Hy = self.H @ y
        sHy = np.outer(s, Hy)
        self.H -= rho * (sHy + sHy.T)
        self.H += (rho**2 * float(y @ Hy) + rho) * np.outer(s, s)


class _LimitedMemoryHessian:
    def __init__(self, n, k0=None, memory=30):
        self.memory = memory
        self.S: list[np.ndarray] = []
        self.Y: list[np.ndarray] = []
        if k0 is None:
            self.lu = None
        else:
            try:
                self.lu = splu(sp.csc_matrix(k0))
            except RuntimeError as exc:
                raise SingularTangent(str(exc)) from exc

    def _h0(self, g):
        return self.lu.solve(g) if self.lu is not None else g

    def apply(self, g):
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(self.S), reversed(self.Y)):
            a = float(s @ q) / float(y @ s)
            alphas.append(a)
            q -= a * y
        r = self._h0(q)
        for (s, y), a in zip(zip(self.S, self.Y), reversed(alphas)):
            b = float(y @ r) / float(y @ s)
            r += (a - b) * s
        return r

    def reset(self):
        self.S.clear()
        self.Y.clear()

    def update(self, s, y):
        self.S.append(s)
        self.Y.append(y)
        if len(self.S) > self.memory:
            self.S.pop(0)
            self.Y.pop(0)


def bfgs_solve(residual, u0: np.ndarray, config: SolverConfig,
               initial_hessian=None):
    """BFGS on the nonlinear system R(u) = 0.

    The residual is treated as the gradient of the (unavailable) potential;
    step lengths satisfy strong Wolfe conditions on the least-squares merit
    0.5 ||R||^2. `initial_hessian` seeds the inverse-Hessian approximation
    (exact or FD-approximated tangent at u0). Returns a SolveReport."""
    u = np.asarray(u0, dtype=float).copy()
    n = u.size
    R = residual(u)
    r0 = np.linalg.norm(R)
    history = [r0]
    report = SolveReport(converged=False, method="bfgs", u=u,
                         residual_histories=[history])
    if r0 == 0.0:
        report.converged = True
        report.iterations_per_step = [0]
        return report
    if n <= config.dense_bfgs_max_dof:
        hess = _DenseInverseHessian(n, initial_hessian)
    else:
        hess = _LimitedMemoryHessian(n, initial_hessian, config.lbfgs_memory)

    for it in range(1, config.max_iterations + 1):
        d = -hess.apply(R)
        line = _LinePhi(residual, u, d)
        phi0 = _merit(R)
        line.cache[0.0] = R
        # fast path: a near-exact unit step satisfies strong Wolfe without
        # derivative probing (phi >= 0 and nearly flat at the minimum)
        if line.phi(1.0) <= 1e-8 * phi0:
            alpha = 1.0
        else:
            dphi0 = line.dphi(0.0)
            if dphi0 >= 0:
                hess.reset()
                d = -hess.apply(R)
                line = _LinePhi(residual, u, d)
                line.cache[0.0] = R
                dphi0 = line.dphi(0.0)
            alpha = _wolfe_line_search(
                line, phi0, dphi0, config.wolfe_c1, config.wolfe_c2,
                config.max_ls_evals,
            )
        R_new = line.r_at(alpha)
        s = alpha * d
        y = R_new - R
        u = u + s
        # curvature safeguard: skip the update, keep the step
        if float(s @ y) > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            hess.update(s, y)
        R = R_new
        history.append(np.linalg.norm(R))
        if config.trace:
            report.trace.append(StepRecord(u=u.copy(), direction=d, alpha=alpha))
        report.u = u
        report.iterations_per_step = [it]
        if history[-1] <= config.rel_residual_tol * r0:
            report.converged = True
            return report
    raise MaxIterations(
        f"BFGS did not reach {config.rel_residual_tol:g} relative residual "
        f"in {config.max_iterations} iterations"
    )


# ---------------------------------------------------------------------------
# (Quasi-)Newton with assembled tangent
# ---------------------------------------------------------------------------

def _solve_linear(K, rhs):
    if np.isscalar(K) or (isinstance(K, np.ndarray) and K.ndim == 0):
        if K == 0:
            raise SingularTangent("zero scalar tangent")
        return rhs / K
    if sp.issparse(K):
        try:
            return splu(sp.csc_matrix(K)).solve(rhs)
        except RuntimeError as exc:
            raise SingularTangent(str(exc)) from exc
    K = np.atleast_2d(np.asarray(K, dtype=float))
    try:
        return np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularTangent(str(exc)) from exc


def newton_solve(residual, tangent, u0: np.ndarray, config: SolverConfig):
    """Newton / Quasi-Newton iteration with a tangent provider.

    `tangent(u)` may return a sparse matrix, a dense matrix or a scalar.
    Linear solves use a sparse direct factorization. Returns a SolveReport
    whose trace holds the iterates when tracing is enabled."""
    u = np.asarray(u0, dtype=float).copy()
    R = residual(u)
    r0 = np.linalg.norm(R)
    history = [r0]
    report = SolveReport(converged=False, method="newton", u=u,
                         residual_histories=[history])
    if r0 == 0.0:
        report.converged = True
        report.iterations_per_step = [0]
        return report
    for it in range(1, config.max_iterations + 1):
        K = tangent(u)
        delta = _solve_linear(K, -R)
        u = u + delta
        R = residual(u)
        history.append(np.linalg.norm(R))
        if config.trace:
            report.trace.append(u.copy())
        report.u = u
        report.iterations_per_step = [it]
        if history[-1] <= config.rel_residual_tol * r0:
            report.converged = True
            return report
    raise MaxIterations(
        f"Newton did not reach {config.rel_residual_tol:g} relative residual "
        f"in {config.max_iterations} iterations"
    )


# ---------------------------------------------------------------------------
# load-scalable macroscopic problem and dynamic load stepping
# ---------------------------------------------------------------------------

class MacroProblem:
    """FE problem with Dirichlet data scalable by a load fraction."""

    def __init__(self, mesh: fem.MacroMesh, callback: fem.ConstitutiveCallback):
        if mesh.dirichlet_dofs.size == 0:
            raise ValueError("MacroProblem requires non-empty Dirichlet data")
        self.mesh = mesh
        self.callback = callback
        self.free = mesh.free_dofs()
        self.fixed = mesh.dirichlet_dofs
        self.target_vals = mesh.dirichlet_vals

    def lift(self, u_free: np.ndarray, lam: float) -> np.ndarray:
        u = np.zeros(self.mesh.n_dofs)
        u[self.free] = u_free
        u[self.fixed] = lam * self.target_vals
        return u

    def residual_free(self, u_free: np.ndarray, lam: float,
                      cutback: bool = True) -> np.ndarray:
        u = self.lift(u_free, lam)
        mode = "raise" if cutback else "warn"
        r = fem.assemble_internal_forces(
            self.mesh, u, self.callback, on_nonpositive_det=mode
        )
        return r[self.free]

    def tangent_free(self, u_free: np.ndarray, lam: float) -> sp.csr_matrix:
        u = self.lift(u_free, lam)
        K = fem.assemble_tangent(self.mesh, u, self.callback)
        return K[self.free][:, self.free].tocsr()


def _solve_one_step(problem: MacroProblem, u_free, lam, config) -> SolveReport:
    residual = lambda uf: problem.residual_free(uf, lam)  # noqa: E731
    if config.method == "newton":
        tangent = lambda uf: problem.tangent_free(uf, lam)  # noqa: E731
        return newton_solve(residual, tangent, u_free, config)
    k0 = problem.tangent_free(u_free, lam)
    return bfgs_solve(residual, u_free, config, initial_hessian=k0)


def load_stepper(problem: MacroProblem, config: SolverConfig) -> SolveReport:
    """Incremental application of the Dirichlet data with adaptive steps.

    Failure of the inner solve halves the increment (aborting below the
    minimum fraction); two consecutive successes double it again, capped at
    the initial increment. The final state corresponds to full load."""
    agg = SolveReport(converged=False, method=config.method)
    u_free = np.zeros(problem.free.size)
    lam = 0.0
    inc0 = 1.0 / max(1, config.load_steps)
    inc = inc0
    easy = 0
    while lam < 1.0 - 1e-12:
        target = min(1.0, lam + inc)
        t0 = time.perf_counter()
        try:
            step = _solve_one_step(problem, u_free, target, config)
        except (LineSearchFailed, MaxIterations, SingularTangent,
                NonPositiveJacobian) as exc:
            inc *= 0.5
            easy = 0
            if inc < config.min_step_fraction * inc0 - 1e-15:
                raise StepTooSmall(
                    f"load increment fell below {config.min_step_fraction:g} "
                    f"of the initial step at lambda = {lam:.4f}"
                ) from exc
            continue
        u_free = step.u
        lam = target
        agg.iterations_per_step.append(step.iterations_per_step[0])
        agg.residual_histories.append(step.residual_histories[0])
        agg.load_fractions.append(lam)
        agg.wall_times.append(time.perf_counter() - t0)
        agg.trace.extend(step.trace)
        easy += 1
        if easy >= 2 and inc < inc0 - 1e-15:
            inc = min(2 * inc, inc0)
            easy = 0
    agg.converged = True
    agg.u = problem.lift(u_free, 1.0)
    return agg
