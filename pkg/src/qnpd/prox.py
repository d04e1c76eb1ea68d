"""Closed-form proximal operators and their generalized Jacobians.

prox_euclidean(g, tau, scale, v) minimizes

    g(z) + (scale / (2 tau)) ||z - v||^2,

i.e. the prox of g with step tau under the scalar metric scale*I. The
Jacobian routine returns one element of the Clarke Jacobian of
v -> prox(v); at clamp/boundary ties the inactive (identity) branch is
chosen so the semi-smooth Newton systems stay well conditioned.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass(frozen=True)
class ProxFunction:
    kind: str
    n: int
    lo: np.ndarray = None
    hi: np.ndarray = None
    radius: float = None
    group_size: int = None
    c: np.ndarray = field(default=None)
    b: np.ndarray = field(default=None)
    a: np.ndarray = field(default=None)
    offset: float = None


def zero(n):
    return ProxFunction("zero", n)


def nonneg(n):
    return ProxFunction("nonneg", n)


def box(lo, hi, n):
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
    if np.any(lo > hi):
        raise ValueError("box bounds need lo <= hi componentwise")
    return ProxFunction("box", n, lo=lo, hi=hi)


def l2inf_ball(radius, group_size, n):
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n % group_size != 0:
        raise ValueError("dimension must be divisible by group_size")
    return ProxFunction("l2inf_ball", n, radius=float(radius), group_size=int(group_size))


def linear(c):
    c = np.asarray(c, dtype=float)
    return ProxFunction("linear", c.shape[0], c=c)


def quadratic(b):
    b = np.asarray(b, dtype=float)
    return ProxFunction("quadratic", b.shape[0], b=b)


def hyperplane(a, offset):
    a = np.asarray(a, dtype=float)
    if np.linalg.norm(a) == 0:
        raise ValueError("hyperplane normal must be nonzero")
    return ProxFunction("hyperplane", a.shape[0], a=a, offset=float(offset))


def group_norms(v, group_size):
    g = v.reshape(-1, group_size)
    return np.sqrt(np.sum(g * g, axis=1))


def prox_euclidean(g, tau, scale, v):
    """Exact minimizer of g(z) + (scale/(2 tau)) ||z - v||^2."""
    v = np.asarray(v, dtype=float)
    if g.kind == "zero":
        return v.copy()
    if g.kind == "nonneg":
        return np.maximum(v, 0.0)
    if g.kind == "box":
        return np.clip(v, g.lo, g.hi)
    if g.kind == "l2inf_ball":
        return kernels.project_groups_l2(np.ascontiguousarray(v), g.radius, g.group_size)
    if g.kind == "linear":
        return v - (tau / scale) * g.c
    if g.kind == "quadratic":
        return (scale * v + tau * g.b) / (scale + tau)
    if g.kind == "hyperplane":
        return v + ((g.offset - np.dot(v, g.a)) / np.dot(g.a, g.a)) * g.a
    raise ValueError(f"unknown prox kind {g.kind!r}")


def value(g, x, tol=None):
    """g(x); indicators return +inf outside the set (with slack tol)."""
    x = np.asarray(x, dtype=float)
    if tol is None:
        tol = 1e-9 * (1.0 + float(np.linalg.norm(x)))
    if g.kind == "zero":
        return 0.0
    if g.kind == "nonneg":
        return 0.0 if x.min(initial=0.0) >= -tol else np.inf
    if g.kind == "box":
        ok = np.all(x >= g.lo - tol) and np.all(x <= g.hi + tol)
        return 0.0 if ok else np.inf
    if g.kind == "l2inf_ball":
        return 0.0 if group_norms(x, g.group_size).max() <= g.radius + tol else np.inf
    if g.kind == "linear":
        return float(np.dot(g.c, x))
    if g.kind == "quadratic":
        return 0.5 * float(np.sum((x - g.b) ** 2))
    if g.kind == "hyperplane":
        return 0.0 if abs(np.dot(g.a, x) - g.offset) <= tol * np.linalg.norm(g.a) else np.inf
    raise ValueError(f"unknown prox kind {g.kind!r}")


class ProxJacobian:
    """Structured Clarke-Jacobian element of v -> prox(v).

    form is one of "diag" (diagonal vector), "groups" (block diagonal with
    group_size blocks) or "projector" (I - u u^T for a unit vector u).
    """

    def __init__(self, form, data, n, group_size=None):
        self.form = form
        self.data = data
        self.n = n
        self.group_size = group_size

    def matvec(self, x):
        return self.matmat(x.reshape(-1, 1)).reshape(-1)

    def matmat(self, v):
        if self.form == "diag":
            return self.data[:, None] * v
        if self.form == "groups":
            r = v.shape[1]
            vg = v.reshape(-1, self.group_size, r)
            return np.einsum("gij,gjr->gir", self.data, vg).reshape(self.n, r)
        if self.form == "projector":
            u = self.data
            return v - np.outer(u, u @ v)
        raise ValueError(f"unknown jacobian form {self.form!r}")

    def dense(self):
        return self.matmat(np.eye(self.n))


def prox_jacobian(g, tau, scale, v):
    """One Clarke-Jacobian element of the prox at v (ties pick identity)."""
    v = np.asarray(v, dtype=float)
    n = g.n
    if g.kind in ("zero", "linear"):
        return ProxJacobian("diag", np.ones(n), n)
    if g.kind == "nonneg":
        return ProxJacobian("diag", (v >= 0.0).astype(float), n)
    if g.kind == "box":
        d = ((v >= g.lo) & (v <= g.hi)).astype(float)
        return ProxJacobian("diag", d, n)
    if g.kind == "quadratic":
        return ProxJacobian("diag", np.full(n, scale / (scale + tau)), n)
    if g.kind == "hyperplane":
        return ProxJacobian("projector", g.a / np.linalg.norm(g.a), n)
    if g.kind == "l2inf_ball":
        gs = g.group_size
        groups = v.reshape(-1, gs)
        norms = group_norms(v, gs)
        blocks = np.tile(np.eye(gs), (groups.shape[0], 1, 1))
        outside = norms > g.radius
        for i in np.nonzero(outside)[0]:
            u = groups[i] / norms[i]
            blocks[i] = (g.radius / norms[i]) * (np.eye(gs) - np.outer(u, u))
        return ProxJacobian("groups", blocks, n, gs)
    raise ValueError(f"unknown prox kind {g.kind!r}")
