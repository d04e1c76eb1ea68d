"""Limited-memory quasi-Newton metric in compact low-rank form.

The metric is assembled from curvature pairs (s, y) = (step, gradient
change) kept in an LbfgsMemory ring buffer. The raw compact form
base*I + A Q^{-1} A^T is spectrally split into two outer-product blocks,

    M_tilde = base*I + gamma1*U1 U1^T - gamma2*U2 U2^T,

then shrunk and floored so the final operator

    M = min((c_m - alpha)/||M_tilde||_2, 1) * M_tilde + alpha*I

has all eigenvalues in [alpha, c_m]. Applying M costs O(n r) and M^{-1}
is available at the same cost through a cached capacitance factorization.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

# relative threshold below which eigendirections of Q are dropped
QK_DROP_RTOL = 1e-12


@dataclass(frozen=True)
class CurvaturePair:
    """One (step, gradient-change) pair."""

    s: np.ndarray
    y: np.ndarray


class LbfgsMemory:
    """Ring buffer of the m most recent accepted curvature pairs.

    base_scale=None selects the automatic base b0 = <y,y>/<s,y> of the
    most recent pair (Hessian-side L-BFGS scaling, so the secant scale of
    the compact form survives the c_m clamp); a float pins it.
    """

    def __init__(self, m, base_scale=None, eps_curv=1e-8, dim=None):
        if m < 0:
            raise ValueError("memory length must be nonnegative")
        if base_scale is not None and base_scale <= 0:
            raise ValueError("base_scale must be positive")
        self.m = int(m)
        self.fixed_base = base_scale
        self.eps_curv = float(eps_curv)
        self.dim = dim
        self.pairs = []

    def __len__(self):
        return len(self.pairs)

    @property
    def base_scale(self):
        if self.fixed_base is not None:
            return float(self.fixed_base)
        if not self.pairs:
            return 1.0
        p = self.pairs[-1]
        return float(np.dot(p.y, p.y) / np.dot(p.s, p.y))

    def push(self, s, y):
        """Store (s, y) if it passes the curvature gate; return acceptance."""
        s = np.asarray(s, dtype=float)
        y = np.asarray(y, dtype=float)
        if s.shape != y.shape or s.ndim != 1:
            raise ValueError("s and y must be 1-d vectors of equal dimension")
        if self.dim is None:
            self.dim = s.shape[0]
        elif s.shape[0] != self.dim:
            raise ValueError("pair dimension does not match memory dimension")
        if self.m == 0:
            return False
        sy = float(np.dot(s, y))
        if not sy > self.eps_curv * np.linalg.norm(s) * np.linalg.norm(y):
            return False
        self.pairs.append(CurvaturePair(s.copy(), y.copy()))
        if len(self.pairs) > self.m:
            self.pairs.pop(0)
        return True

    def s_matrix(self):
        return np.column_stack([p.s for p in self.pairs])

    def y_matrix(self):
        return np.column_stack([p.y for p in self.pairs])


def lowrank_sym_eigs(w, coeffs):
    """Nonzero-subspace eigenvalues of sum_i coeffs[i] * w[:,i] w[:,i]^T."""
    if w.shape[1] == 0:
        return np.zeros(0)
    q, r = np.linalg.qr(w)
    a = r @ (coeffs[:, None] * r.T)
    return np.linalg.eigvalsh(0.5 * (a + a.T))


class CompactMetric:
    """Positive-definite operator d*I + W diag(sig) W^T with cached inverse.

    d = c_shrink*base_scale + alpha, W = [U1 U2] and
    sig = (c_shrink*gamma1, ..., -c_shrink*gamma2, ...).
    """

    def __init__(self, n, base_scale, u1, u2, gamma1, gamma2, alpha, c_shrink):
        self.n = int(n)
        self.base_scale = float(base_scale)
        self.u1 = np.asarray(u1, dtype=float).reshape(self.n, -1)
        self.u2 = np.asarray(u2, dtype=float).reshape(self.n, -1)
        self.gamma1 = float(gamma1)
        self.gamma2 = float(gamma2)
        self.alpha = float(alpha)
        self.c_shrink = float(c_shrink)
        self.d = self.c_shrink * self.base_scale + self.alpha

        blocks, coeffs = [], []
        if self.u1.shape[1] and self.gamma1 != 0.0:
            blocks.append(self.u1)
            coeffs.append(np.full(self.u1.shape[1], self.c_shrink * self.gamma1))
        if self.u2.shape[1] and self.gamma2 != 0.0:
            blocks.append(self.u2)
            coeffs.append(np.full(self.u2.shape[1], -self.c_shrink * self.gamma2))
        if blocks:
            self.w = np.hstack(blocks)
            self.sig = np.concatenate(coeffs)
            self.wtw = self.w.T @ self.w
            cap = np.eye(self.w.shape[1]) + self.sig[:, None] * self.wtw / self.d
            self._cap_lu = linalg.lu_factor(cap)
        else:
            self.w = np.zeros((self.n, 0))
            self.sig = np.zeros(0)
            self.wtw = np.zeros((0, 0))
            self._cap_lu = None

    @classmethod
    def scalar(cls, n, value):
        """Plain scalar metric value*I (identity metric for value=1)."""
        return cls(n, value, np.zeros((n, 0)), np.zeros((n, 0)), 0.0, 0.0, 0.0, 1.0)

    @property
    def rank(self):
        return self.u1.shape[1] + self.u2.shape[1]

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of dimension {self.n}, got {x.shape}")
        return x

    def apply(self, x):
        """M x in O(n r)."""
        x = self._check(x)
        if self.sig.size == 0:
            return self.d * x
        return self.d * x + self.w @ (self.sig * (self.w.T @ x))

    def apply_inverse(self, x):
        """M^{-1} x via the cached capacitance factorization."""
        x = self._check(x)
        if self._cap_lu is None:
            return x / self.d
        wtx = self.w.T @ x
        z = linalg.lu_solve(self._cap_lu, self.sig * wtx)
        return x / self.d - self.w @ z / self.d**2

    def solve_shifted(self, x, shift):
        """(M + shift*I)^{-1} x; the small capacitance is rebuilt per shift."""
        x = self._check(x)
        ds = self.d + shift
        if self.sig.size == 0:
            return x / ds
        cap = np.eye(self.w.shape[1]) + self.sig[:, None] * self.wtw / ds
        z = np.linalg.solve(cap, self.sig * (self.w.T @ x))
        return x / ds - self.w @ z / ds**2

    def m_norm_sq(self, x):
        """<M x, x>; zero only at x = 0."""
        x = self._check(x)
        if self.sig.size == 0:
            return self.d * float(np.dot(x, x))
        wtx = self.w.T @ x
        return self.d * float(np.dot(x, x)) + float(np.dot(self.sig * wtx, wtx))

    def eigenvalue_range(self):
        """Exact (min, max) eigenvalue from the reduced low-rank problem."""
        lr = lowrank_sym_eigs(self.w, self.sig)
        vals = self.d + lr
        if self.rank < self.n or lr.size == 0:
            vals = np.append(vals, self.d)
        return float(vals.min()), float(vals.max())

    def densify(self):
        """Dense n x n matrix; intended for small-n testing."""
        m = self.d * np.eye(self.n)
        if self.sig.size:
            m += (self.w * self.sig) @ self.w.T
        return m

    def dump_dense(self, stream):
        """Debug dump: one row per line, full-precision scientific notation."""
        for row in self.densify():
            stream.write(" ".join(format(v, ".17e") for v in row) + "\n")


def _compact_factors(s_mat, y_mat, b0):
    """Spectral split of the compact quasi-Newton correction.

    Returns (u1, u2, n_dropped) where near-singular eigendirections of the
    middle matrix are dropped.
    """
    n, p = s_mat.shape
    sy = s_mat.T @ y_mat
    d_blk = np.diag(np.diag(sy))
    l_blk = np.tril(sy, -1)
    a_mat = np.hstack([b0 * s_mat, y_mat])
    q_mat = np.block([[-b0 * (s_mat.T @ s_mat), -l_blk], [-l_blk.T, d_blk]])
    q_mat = 0.5 * (q_mat + q_mat.T)
    lam, vec = np.linalg.eigh(q_mat)
    keep = np.abs(lam) >= QK_DROP_RTOL * np.abs(lam).max()
    n_dropped = int(np.count_nonzero(~keep))
    lam, vec = lam[keep], vec[:, keep]
    if lam.size == 0:
        return np.zeros((n, 0)), np.zeros((n, 0)), n_dropped
    inv_lam = 1.0 / lam
    av = a_mat @ vec
    u1 = av[:, inv_lam > 0] * np.sqrt(inv_lam[inv_lam > 0])
    u2 = av[:, inv_lam < 0] * np.sqrt(-inv_lam[inv_lam < 0])
    return u1, u2, n_dropped


def build_metric(mem, alpha, c_m, gamma1=1.0, gamma2=1.0):
    """Build the clamped compact metric from the current memory contents."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if c_m <= alpha:
        raise ValueError("c_m must exceed alpha")
    b0 = mem.base_scale
    n_dropped = 0
    if len(mem) == 0:
        u1 = u2 = None
    else:
        u1, u2, n_dropped = _compact_factors(mem.s_matrix(), mem.y_matrix(), b0)
        if n_dropped:
            warnings.warn(
                f"dropped {n_dropped} near-singular quasi-Newton eigendirection(s)",
                RuntimeWarning,
            )
        if u1.shape[1] == 0 and u2.shape[1] == 0:
            u1 = u2 = None
    if u1 is None:
        if mem.dim is None:
            raise ValueError("empty memory has no dimension; construct it with dim=")
        n = mem.dim
        c = min((c_m - alpha) / b0, 1.0)
        return CompactMetric(n, b0, np.zeros((n, 0)), np.zeros((n, 0)), gamma1, gamma2, alpha, c)
    n = u1.shape[0]
    norm = _tilde_norm(b0, u1, u2, gamma1, gamma2, n)
    c = min((c_m - alpha) / norm, 1.0)
    return CompactMetric(n, b0, u1, u2, gamma1, gamma2, alpha, c)


def _tilde_norm(b0, u1, u2, gamma1, gamma2, n):
    """Exact spectral norm of b0*I + gamma1 U1 U1^T - gamma2 U2 U2^T."""
    w = np.hstack([u1, u2])
    coeffs = np.concatenate([np.full(u1.shape[1], gamma1), np.full(u2.shape[1], -gamma2)])
    lr = lowrank_sym_eigs(w, coeffs)
    vals = b0 + lr
    if w.shape[1] < n or lr.size == 0:
        vals = np.append(vals, b0)
    return float(np.abs(vals).max())


def default_eta(k, eta0=1.0):
    """Default summable safeguard schedule eta_k = eta0 / k^2 (k >= 1)."""
    return eta0 / k**2


class MetricBuilder:
    """Produces the per-iteration metric; optionally enforces the bounded
    metric-drift condition (1 + eta_k) M_k >= M_{k+1}.

    In safeguard mode the base scale is pinned, the gamma factors are capped
    at eta_k / ||U_i||^2, and the whole low-rank deviation R of M = d*I + R
    is rescaled into the budget ||R|| <= eta_k * d / (2 + eta_1). A short
    induction over builds shows the budget makes the drift condition hold
    for every consecutive pair, for any nonincreasing summable schedule.
    """

    def __init__(self, alpha, c_m, gamma1=1.0, gamma2=1.0, safeguard=False,
                 eta=None, safeguard_base=1.0):
        self.alpha = float(alpha)
        self.c_m = float(c_m)
        self.gamma1 = float(gamma1)
        self.gamma2 = float(gamma2)
        self.safeguard = bool(safeguard)
        self.eta = eta if eta is not None else default_eta
        self.safeguard_base = float(safeguard_base)
        self.builds = 0
        if self.safeguard:
            d = self.safeguard_base + self.alpha
            self.kappa = d / (2.0 + self.eta(1))
            if self.safeguard_base + self.kappa * self.eta(1) > self.c_m - self.alpha:
                raise ValueError("safeguard budget exceeds c_m; raise c_m or shrink eta")

    def build(self, mem):
        self.builds += 1
        if not self.safeguard:
            return build_metric(mem, self.alpha, self.c_m, self.gamma1, self.gamma2)
        return self._build_safeguarded(mem)

    def _build_safeguarded(self, mem):
        eta_k = self.eta(self.builds)
        b0 = self.safeguard_base
        n = mem.dim
        if len(mem) == 0:
            return CompactMetric(n, b0, np.zeros((n, 0)), np.zeros((n, 0)),
                                 self.gamma1, self.gamma2, self.alpha, 1.0)
        u1, u2, _ = _compact_factors(mem.s_matrix(), mem.y_matrix(), b0)
        g1, g2 = self.gamma1, self.gamma2
        if u1.shape[1]:
            g1 = min(g1, eta_k / float(np.linalg.eigvalsh(u1.T @ u1).max()))
        if u2.shape[1]:
            g2 = min(g2, eta_k / float(np.linalg.eigvalsh(u2.T @ u2).max()))
        w = np.hstack([u1, u2])
        coeffs = np.concatenate([np.full(u1.shape[1], g1), np.full(u2.shape[1], -g2)])
        lr = lowrank_sym_eigs(w, coeffs)
        r_norm = float(np.abs(lr).max()) if lr.size else 0.0
        budget = self.kappa * eta_k
        t = 1.0 if r_norm <= budget else budget / r_norm
        return CompactMetric(n, b0, u1, u2, t * g1, t * g2, self.alpha, 1.0)
