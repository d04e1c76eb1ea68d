"""Proximal mappings under compact low-rank metrics.

The prox of g with step tau under M = d*I + U1 U1' - U2 U2' (scaled
factors) reduces to the scalar-metric prox plus a small root-finding
problem in r1 + r2 unknowns,

    prox_g^B(x) = prox_g^{B0}(x + B1^{-1} U2 a2* - B0^{-1} U1 a1*),

where B = M/tau, B0 is its scalar part, B1 = B0 + U1 U1' and (a1*, a2*)
is the unique zero of the coupled system L below. L is piecewise smooth,
so the system is solved by a semi-smooth Newton iteration on Clarke
Jacobian elements, globalized by residual backtracking.
"""

from dataclasses import dataclass, field

import numpy as np

from .prox import prox_euclidean, prox_jacobian

# Tikhonov shift applied when a Newton matrix is numerically singular
SINGULAR_SHIFT = 1e-8
MAX_BACKTRACKS = 30


class ProxNewtonError(RuntimeError):
    """Semi-smooth Newton failed; carries the best iterate found."""

    def __init__(self, message, alpha, residual, iterations):
        super().__init__(message)
        self.alpha = alpha
        self.residual = residual
        self.iterations = iterations


@dataclass
class NewtonConfig:
    max_iters: int = 50
    tol: float = None  # None: prox_metric uses 1e-10 * (1 + ||v||)
    rho: float = 0.0  # inexactness budget; the dense solves used here are exact
    armijo_shrink: float = 0.5  # 1.0 disables the backtracking safeguard


@dataclass
class NewtonStats:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = True
    alpha: np.ndarray = None


class RootProblem:
    """Coupled system whose zero locates the metric prox.

    u1, u2 are the tau-folded factors; b0_scale = d/tau is the scalar part
    of B = M/tau. The B1 inverse is cached as a capacitance factorization.
    """

    def __init__(self, x, u1, u2, b0_scale, g, tau):
        self.x = x
        self.u1 = u1
        self.u2 = u2
        self.r1 = u1.shape[1]
        self.r2 = u2.shape[1]
        if self.r1 + self.r2 < 1:
            raise ValueError("low-rank part is empty; use the scalar prox directly")
        self.b0_scale = float(b0_scale)
        self.g = g
        self.tau = float(tau)
        # d/tau * I is the scalar metric; prox under it is prox_euclidean(g, tau, d)
        self.d = self.b0_scale * self.tau
        self.e1 = u1 / self.b0_scale
        self.e2 = self._b1_inv(u2)

    def _b1_inv(self, v):
        """(b0_scale*I + u1 u1^T)^{-1} v via the capacitance identity."""
        if self.r1 == 0:
            return v / self.b0_scale
        cap = self.b0_scale * np.eye(self.r1) + self.u1.T @ self.u1
        return (v - self.u1 @ np.linalg.solve(cap, self.u1.T @ v)) / self.b0_scale

    def _split(self, alpha):
        return alpha[: self.r1], alpha[self.r1 :]

    def shifted_point(self, alpha):
        a1, a2 = self._split(alpha)
        return self.x + self.e2 @ a2 - self.e1 @ a1

    def prox_b0(self, q):
        return prox_euclidean(self.g, self.tau, self.d, q)

    def residual(self, alpha):
        """L(alpha) and the cached inner point q for Jacobian reuse."""
        a1, a2 = self._split(alpha)
        q = self.shifted_point(alpha)
        p = self.prox_b0(q)
        l1 = self.u1.T @ (self.x + self.e2 @ a2 - p) + a1
        l2 = self.u2.T @ (self.x - p) + a2
        return np.concatenate([l1, l2]), q

    def jacobian(self, alpha, q):
        """Clarke-Jacobian element of L assembled from the prox Jacobian."""
        j = prox_jacobian(self.g, self.tau, self.d, q)
        je1 = j.matmat(self.e1) if self.r1 else np.zeros((self.x.shape[0], 0))
        je2 = j.matmat(self.e2) if self.r2 else np.zeros((self.x.shape[0], 0))
        g11 = np.eye(self.r1) + self.u1.T @ je1
        g12 = self.u1.T @ (self.e2 - je2)
        g21 = self.u2.T @ je1
        g22 = np.eye(self.r2) - self.u2.T @ je2
        return np.block([[g11, g12], [g21, g22]])

    def recover(self, alpha):
        return self.prox_b0(self.shifted_point(alpha))


def semismooth_newton(problem, alpha0, cfg=None):
    """Solve L(alpha) = 0; returns (alpha, NewtonStats).

    Newton systems are solved exactly (dense, (r1+r2)^2), which satisfies
    any inexactness budget cfg.rho. A singular Newton matrix is shifted by
    SINGULAR_SHIFT; residual backtracking guards against divergence and
    raises ProxNewtonError when exhausted.
    """
    cfg = cfg or NewtonConfig()
    tol = cfg.tol if cfg.tol is not None else 1e-10 * (1.0 + np.linalg.norm(problem.x))
    alpha = np.asarray(alpha0, dtype=float).copy()
    if alpha.shape != (problem.r1 + problem.r2,):
        raise ValueError("alpha0 has wrong dimension")
    l_val, q = problem.residual(alpha)
    res = float(np.linalg.norm(l_val))
    stats = NewtonStats(residuals=[res])
    while res > tol:
        if stats.iterations >= cfg.max_iters:
            stats.converged = False
            raise ProxNewtonError(
                f"no convergence after {cfg.max_iters} iterations (residual {res:.3e})",
                alpha, res, stats.iterations,
            )
        g_mat = problem.jacobian(alpha, q)
        try:
            step = np.linalg.solve(g_mat, l_val)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(g_mat + SINGULAR_SHIFT * np.eye(g_mat.shape[0]), l_val)
        t = 1.0
        for _ in range(MAX_BACKTRACKS + 1):
            cand = alpha - t * step
            l_cand, q_cand = problem.residual(cand)
            res_cand = float(np.linalg.norm(l_cand))
            if res_cand < res or cfg.armijo_shrink >= 1.0:
                break
            t *= cfg.armijo_shrink
        else:
            raise ProxNewtonError(
                f"residual stalled at {res:.3e} after safeguard exhaustion",
                alpha, res, stats.iterations,
            )
        alpha, l_val, q, res = cand, l_cand, q_cand, res_cand
        stats.iterations += 1
        stats.residuals.append(res)
    stats.alpha = alpha
    return alpha, stats


def prox_metric(metric, g, tau, v, cfg=None, alpha0=None):
    """Minimize g(z) + (1/(2 tau)) ||z - v||_M^2; returns (point, stats).

    Scalar metrics short-circuit to the closed-form prox. Otherwise the
    factors are folded by tau and the root problem is solved, warm-started
    from alpha0 when supplied.
    """
    v = np.asarray(v, dtype=float)
    u1s, u2s = (metric.u1[:, :0], metric.u2[:, :0]) if metric.rank == 0 else folded_factors(metric, tau)
    if u1s.shape[1] + u2s.shape[1] == 0:
        stats = NewtonStats(alpha=np.zeros(0))
        return prox_euclidean(g, tau, metric.d, v), stats
    problem = RootProblem(v, u1s, u2s, metric.d / tau, g, tau)
    r = problem.r1 + problem.r2
    if alpha0 is None or np.shape(alpha0) != (r,):
        alpha0 = np.zeros(r)
    alpha, stats = semismooth_newton(problem, alpha0, cfg)
    return problem.recover(alpha), stats


def folded_factors(metric, tau):
    """Scale the metric factors so B = M/tau has unit-coefficient blocks."""
    c = metric.c_shrink
    u1 = metric.u1 * np.sqrt(c * metric.gamma1 / tau) if metric.gamma1 > 0 else metric.u1[:, :0]
    u2 = metric.u2 * np.sqrt(c * metric.gamma2 / tau) if metric.gamma2 > 0 else metric.u2[:, :0]
    return u1, u2
