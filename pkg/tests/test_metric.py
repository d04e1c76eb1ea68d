import io

import numpy as np
import pytest

from qnpd.metric import (
    CompactMetric,
    LbfgsMemory,
    MetricBuilder,
    build_metric,
    lowrank_sym_eigs,
)

ALPHA, C_M = 0.01, 50.0


def dense_bfgs_update(m0, s, y):
    """Direct rank-two update oracle: M0 + yy^T/<s,y> - M0 s s^T M0/<s,M0 s>."""
    ms = m0 @ s
    return m0 + np.outer(y, y) / np.dot(s, y) - np.outer(ms, ms) / np.dot(s, ms)


def clamp_oracle(m_tilde, alpha=ALPHA, c_m=C_M):
    norm = np.abs(np.linalg.eigvalsh(m_tilde)).max()
    c = min((c_m - alpha) / norm, 1.0)
    return c * m_tilde + alpha * np.eye(m_tilde.shape[0])


def random_memory(rng, n, m, n_push=None):
    mem = LbfgsMemory(m, dim=n)
    for _ in range(n_push if n_push is not None else m):
        s = rng.standard_normal(n)
        y = rng.standard_normal(n)
        if np.dot(s, y) < 0:
            y = -y
        mem.push(s, y)
    return mem


class TestMemory:
    def test_accepts_positive_curvature(self):
        mem = LbfgsMemory(3, eps_curv=1e-8, dim=2)
        e1 = np.array([1.0, 0.0])
        assert mem.push(e1, e1) is True
        assert len(mem) == 1

    def test_rejects_negative_curvature(self):
        mem = LbfgsMemory(3, dim=2)
        e1 = np.array([1.0, 0.0])
        assert mem.push(e1, -e1) is False
        assert len(mem) == 0

    def test_ring_buffer_keeps_last_two(self):
        mem = LbfgsMemory(2, dim=2)
        vecs = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
        for v in vecs:
            assert mem.push(v, 2.0 * v)
        assert len(mem) == 2
        assert np.array_equal(mem.pairs[0].s, vecs[1])
        assert np.array_equal(mem.pairs[1].s, vecs[2])

    def test_dimension_mismatch_raises(self):
        mem = LbfgsMemory(2, dim=2)
        mem.push(np.ones(2), np.ones(2))
        with pytest.raises(ValueError):
            mem.push(np.ones(3), np.ones(3))

    def test_auto_base_scale_uses_latest_pair(self):
        mem = LbfgsMemory(2, dim=2)
        s = np.array([1.0, 0.0])
        mem.push(s, 2.0 * s)
        assert mem.base_scale == pytest.approx(np.dot(2 * s, 2 * s) / np.dot(s, 2 * s))
        assert LbfgsMemory(2, dim=2).base_scale == 1.0


class TestBuild:
    def test_empty_memory_scalar_clamp(self):
        mem = LbfgsMemory(3, base_scale=1.0, dim=2)
        metric = build_metric(mem, ALPHA, C_M)
        # min((50 - 0.01)/1, 1) * 1 + 0.01
        assert np.allclose(metric.densify(), 1.01 * np.eye(2))

    def test_single_pair_matches_bfgs_oracle_basis_vectors(self):
        mem = LbfgsMemory(3, base_scale=1.0, dim=2)
        s = np.array([1.0, 0.0])
        mem.push(s, 2.0 * s)
        metric = build_metric(mem, ALPHA, C_M, gamma1=1.0, gamma2=1.0)
        expect = clamp_oracle(dense_bfgs_update(np.eye(2), s, 2.0 * s))
        assert np.abs(metric.densify() - expect).max() < 1e-10
        assert np.allclose(np.diag(expect), [2.01, 1.01])

    @pytest.mark.parametrize("seed", range(5))
    def test_single_pair_matches_bfgs_oracle_random(self, seed):
        rng = np.random.default_rng(seed)
        n = 6
        s = rng.standard_normal(n)
        y = rng.standard_normal(n)
        if np.dot(s, y) < 0:
            y = -y
        mem = LbfgsMemory(1, base_scale=1.0, dim=n)
        mem.push(s, y)
        metric = build_metric(mem, ALPHA, C_M)
        expect = clamp_oracle(dense_bfgs_update(np.eye(n), s, y))
        assert np.abs(metric.densify() - expect).max() < 1e-10 * np.abs(expect).max()

    def test_spectrum_within_bounds(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            mem = random_memory(rng, 8, 3)
            metric = build_metric(mem, ALPHA, C_M)
            eigs = np.linalg.eigvalsh(metric.densify())
            assert eigs.min() >= ALPHA - 1e-12
            assert eigs.max() <= C_M + 1e-12

    def test_degenerate_pairs_warn_and_drop(self):
        mem = LbfgsMemory(3, base_scale=1.0, dim=4)
        s = np.array([1.0, 0.0, 0.0, 0.0])
        t = np.array([0.0, 1e-8, 0.0, 0.0])
        mem.push(s, 2 * s)
        # vanishing pair pushes middle-matrix eigenvalues below the drop threshold
        mem.push(t, 2 * t)
        with pytest.warns(RuntimeWarning):
            metric = build_metric(mem, ALPHA, C_M)
        eigs = np.linalg.eigvalsh(metric.densify())
        assert eigs.min() >= ALPHA - 1e-12
        assert eigs.max() <= C_M + 1e-12


class TestApply:
    def test_scalar_metric_apply(self):
        mem = LbfgsMemory(3, base_scale=1.0, dim=2)
        metric = build_metric(mem, ALPHA, C_M)
        assert np.allclose(metric.apply(np.array([1.0, 2.0])), [1.01, 2.02])
        assert np.array_equal(metric.apply(np.zeros(2)), np.zeros(2))

    def test_scalar_metric_inverse(self):
        mem = LbfgsMemory(3, base_scale=1.0, dim=2)
        metric = build_metric(mem, ALPHA, C_M)
        assert np.allclose(metric.apply_inverse(np.array([1.01, 0.0])), [1.0, 0.0])

    def test_matches_dense_oracles(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            mem = random_memory(rng, 8, 3)
            metric = build_metric(mem, ALPHA, C_M)
            dense = metric.densify()
            x = rng.standard_normal(8)
            assert np.abs(metric.apply(x) - dense @ x).max() < 1e-12 * np.abs(dense @ x).max()
            solve = np.linalg.solve(dense, x)
            assert np.abs(metric.apply_inverse(x) - solve).max() < 1e-10 * np.abs(solve).max()
            mns = metric.m_norm_sq(x)
            assert abs(mns - x @ dense @ x) < 1e-12 * abs(x @ dense @ x)

    def test_inverse_consistency(self):
        rng = np.random.default_rng(3)
        mem = random_memory(rng, 8, 3)
        metric = build_metric(mem, ALPHA, C_M)
        x = rng.standard_normal(8)
        assert np.linalg.norm(metric.apply_inverse(metric.apply(x)) - x) <= 1e-10 * np.linalg.norm(x)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        mem = random_memory(rng, 10, 4)
        metric = build_metric(mem, ALPHA, C_M)
        for _ in range(10):
            x, z = rng.standard_normal(10), rng.standard_normal(10)
            mx, mz = metric.apply(x), metric.apply(z)
            assert abs(np.dot(mx, z) - np.dot(x, mz)) <= 1e-12 * np.linalg.norm(mx) * np.linalg.norm(z)

    def test_solve_shifted(self):
        rng = np.random.default_rng(9)
        mem = random_memory(rng, 8, 3)
        metric = build_metric(mem, ALPHA, C_M)
        dense = metric.densify()
        x = rng.standard_normal(8)
        for shift in (0.3, 2.0):
            got = metric.solve_shifted(x, shift)
            expect = np.linalg.solve(dense + shift * np.eye(8), x)
            assert np.abs(got - expect).max() < 1e-10 * np.abs(expect).max()

    def test_m_norm_examples(self):
        metric = CompactMetric.scalar(2, 1.01)
        assert metric.m_norm_sq(np.zeros(2)) == 0.0
        assert metric.m_norm_sq(np.array([1.0, 0.0])) == pytest.approx(1.01)

    def test_dimension_mismatch(self):
        metric = CompactMetric.scalar(3, 1.0)
        with pytest.raises(ValueError):
            metric.apply(np.ones(4))

    def test_eigenvalue_range_matches_dense(self):
        rng = np.random.default_rng(13)
        mem = random_memory(rng, 8, 3)
        metric = build_metric(mem, ALPHA, C_M)
        eigs = np.linalg.eigvalsh(metric.densify())
        lo, hi = metric.eigenvalue_range()
        assert lo == pytest.approx(eigs.min(), abs=1e-10)
        assert hi == pytest.approx(eigs.max(), abs=1e-10)

    def test_dump_dense_round_trips(self):
        metric = CompactMetric.scalar(2, 1.01)
        buf = io.StringIO()
        metric.dump_dense(buf)
        parsed = np.array([[float(v) for v in line.split()] for line in buf.getvalue().splitlines()])
        assert np.array_equal(parsed, metric.densify())


class TestLowRankEigs:
    def test_matches_dense(self):
        rng = np.random.default_rng(2)
        w = rng.standard_normal((10, 4))
        coeffs = np.array([1.0, -0.5, 2.0, -1.5])
        dense = (w * coeffs) @ w.T
        eigs = np.sort(np.linalg.eigvalsh(dense))
        got = np.sort(lowrank_sym_eigs(w, coeffs))
        nonzero = eigs[np.abs(eigs) > 1e-10]
        assert np.allclose(np.sort(got), nonzero, atol=1e-10)


class TestSafeguard:
    def test_recorded_sequence_satisfies_drift_bound(self):
        rng = np.random.default_rng(17)
        n = 12
        builder = MetricBuilder(ALPHA, C_M, safeguard=True)
        mem = LbfgsMemory(3, base_scale=1.0, dim=n)
        metrics, etas = [], []
        for k in range(12):
            s = rng.standard_normal(n)
            y = rng.standard_normal(n)
            if np.dot(s, y) < 0:
                y = -y
            mem.push(s, y)
            metrics.append(builder.build(mem).densify())
            etas.append(builder.eta(builder.builds))
        for k in range(len(metrics) - 1):
            gap = (1.0 + etas[k]) * metrics[k] - metrics[k + 1]
            assert np.linalg.eigvalsh(gap).min() >= -1e-10

    def test_safeguard_metric_still_bounded(self):
        rng = np.random.default_rng(21)
        builder = MetricBuilder(ALPHA, C_M, safeguard=True)
        mem = LbfgsMemory(3, base_scale=1.0, dim=6)
        for _ in range(5):
            s = rng.standard_normal(6)
            y = rng.standard_normal(6)
            if np.dot(s, y) < 0:
                y = -y
            mem.push(s, y)
            metric = builder.build(mem)
            eigs = np.linalg.eigvalsh(metric.densify())
            assert eigs.min() >= ALPHA - 1e-12
            assert eigs.max() <= C_M + 1e-12
