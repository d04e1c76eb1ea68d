import numpy as np
import pytest

from qnpd import prox
from qnpd.metric import LbfgsMemory, build_metric
from qnpd.mprox import (
    NewtonConfig,
    ProxNewtonError,
    RootProblem,
    folded_factors,
    prox_metric,
    semismooth_newton,
)

ALPHA, C_M = 0.01, 50.0


def random_metric(rng, n, m):
    mem = LbfgsMemory(m, dim=n)
    for _ in range(m):
        s = rng.standard_normal(n)
        y = rng.standard_normal(n)
        if np.dot(s, y) < 0:
            y = -y
        mem.push(s, y)
    return build_metric(mem, ALPHA, C_M)


def projected_gradient_oracle(dense_m, g, tau, v, step_tol=1e-12, max_iters=500_000):
    """Brute-force minimizer of g + (1/2 tau)||. - v||_M^2 for indicator g."""
    lip = np.linalg.eigvalsh(dense_m).max() / tau
    step = 1.0 / lip
    z = prox.prox_euclidean(g, 1.0, 1.0, v)
    for _ in range(max_iters):
        grad = dense_m @ (z - v) / tau
        z_new = prox.prox_euclidean(g, 1.0, 1.0, z - step * grad)
        if np.linalg.norm(z_new - z) <= step_tol:
            return z_new
        z = z_new
    raise AssertionError("oracle did not converge")


class TestReduction:
    def test_rank_zero_equals_euclidean(self):
        mem = LbfgsMemory(2, base_scale=1.0, dim=2)
        metric = build_metric(mem, ALPHA, C_M)
        g = prox.nonneg(2)
        v = np.array([-1.0, 2.0])
        got, stats = prox_metric(metric, g, 0.7, v)
        assert np.array_equal(got, prox.prox_euclidean(g, 0.7, metric.d, v))
        assert stats.iterations == 0
        assert np.allclose(got, [0.0, 2.0])

    def test_zero_prox_is_identity_with_zero_alpha(self):
        rng = np.random.default_rng(1)
        metric = random_metric(rng, 6, 2)
        g = prox.zero(6)
        v = rng.standard_normal(6)
        got, stats = prox_metric(metric, g, 0.5, v)
        assert np.allclose(got, v, atol=1e-12)
        assert stats.iterations == 0
        assert np.allclose(stats.alpha, 0.0)

    def test_linear_converges_in_one_iteration(self):
        rng = np.random.default_rng(2)
        metric = random_metric(rng, 6, 2)
        g = prox.linear(rng.standard_normal(6))
        v = rng.standard_normal(6)
        got, stats = prox_metric(metric, g, 0.8, v)
        assert stats.iterations == 1
        # closed form: v - tau M^{-1} c
        expect = v - 0.8 * np.linalg.solve(metric.densify(), g.c)
        assert np.abs(got - expect).max() < 1e-9


class TestJacobian:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        metric = random_metric(rng, 8, 2)
        g = prox.box(-0.4, 0.9, 8)
        tau = 0.6
        u1, u2 = folded_factors(metric, tau)
        problem = RootProblem(rng.standard_normal(8), u1, u2, metric.d / tau, g, tau)
        r = problem.r1 + problem.r2
        alpha = 0.1 * rng.standard_normal(r)
        l0, q = problem.residual(alpha)
        jac = problem.jacobian(alpha, q)
        eps = 1e-7
        fd = np.zeros((r, r))
        for k in range(r):
            e = np.zeros(r)
            e[k] = eps
            lp, _ = problem.residual(alpha + e)
            lm, _ = problem.residual(alpha - e)
            fd[:, k] = (lp - lm) / (2 * eps)
        assert np.abs(jac - fd).max() < 1e-5


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(8))
    def test_box_and_nonneg_match_projected_gradient(self, seed):
        rng = np.random.default_rng(400 + seed)
        n = rng.integers(4, 13)
        metric = random_metric(rng, n, rng.integers(1, 4))
        g = prox.box(0.0, 1.0, n) if seed % 2 else prox.nonneg(n)
        tau = float(rng.uniform(0.3, 1.5))
        v = rng.standard_normal(n)
        got, _ = prox_metric(metric, g, tau, v)
        expect = projected_gradient_oracle(metric.densify(), g, tau, v)
        assert np.abs(got - expect).max() < 1e-8

    def test_spec_box_instance(self):
        rng = np.random.default_rng(99)
        metric = random_metric(rng, 6, 1)
        g = prox.box(0.0, 1.0, 6)
        v = rng.standard_normal(6) * 1.5
        got, _ = prox_metric(metric, g, 0.7, v)
        expect = projected_gradient_oracle(metric.densify(), g, 0.7, v)
        assert np.abs(got - expect).max() < 1e-8


class TestNewtonBehavior:
    def test_superlinear_tail(self):
        rng = np.random.default_rng(5)
        checked = 0
        for _ in range(10):
            n = 10
            metric = random_metric(rng, n, 2)
            # ball projection is curved outside, so the tail has several steps
            g = prox.l2inf_ball(0.8, 2, n)
            v = 2.0 * rng.standard_normal(n)
            _, stats = prox_metric(metric, g, 0.9, v)
            res = stats.residuals
            for k in range(len(res) - 1):
                if res[k] <= 1e-4:
                    assert res[k + 1] <= res[k] ** 1.5 + 1e-300
                    checked += 1
        assert checked > 0

    def test_warm_start_reduces_iterations(self):
        rng = np.random.default_rng(6)
        metric = random_metric(rng, 8, 2)
        g = prox.nonneg(8)
        v = rng.standard_normal(8)
        p1, stats1 = prox_metric(metric, g, 0.7, v)
        p2, stats2 = prox_metric(metric, g, 0.7, v, alpha0=stats1.alpha)
        assert np.allclose(p1, p2, atol=1e-9)
        assert stats2.iterations <= stats1.iterations

    def test_failure_carries_diagnostics(self):
        rng = np.random.default_rng(7)
        metric = random_metric(rng, 6, 2)
        g = prox.nonneg(6)
        v = rng.standard_normal(6) * 3
        cfg = NewtonConfig(max_iters=0, tol=1e-14)
        with pytest.raises(ProxNewtonError) as err:
            prox_metric(metric, g, 0.5, v, cfg=cfg)
        assert err.value.iterations == 0
        assert err.value.residual > 0

    def test_pure_local_mode_skips_backtracking(self):
        rng = np.random.default_rng(8)
        metric = random_metric(rng, 6, 1)
        g = prox.box(0.0, 1.0, 6)
        v = rng.standard_normal(6)
        got, _ = prox_metric(metric, g, 0.7, v, cfg=NewtonConfig(armijo_shrink=1.0))
        expect, _ = prox_metric(metric, g, 0.7, v)
        assert np.allclose(got, expect, atol=1e-9)

    def test_semismooth_newton_rejects_bad_alpha0(self):
        rng = np.random.default_rng(9)
        metric = random_metric(rng, 6, 1)
        u1, u2 = folded_factors(metric, 1.0)
        problem = RootProblem(rng.standard_normal(6), u1, u2, metric.d, prox.nonneg(6), 1.0)
        with pytest.raises(ValueError):
            semismooth_newton(problem, np.zeros(problem.r1 + problem.r2 + 1))
