"""Primal-dual saddle-point solvers.

All runners attack

    min_x max_y  <Kx, y> + g(x) + h(x) - f*(y)

by alternating a dual prox ascent step with a primal prox descent step
under a (possibly variable, quasi-Newton) metric:

    run_var_pdal    line search on the dual step size, variable metric
    run_pdal        line search, scalar metric (empty memory)
    run_pdhg_fixed  fixed steps from worst-case constants, scalar metric
    run_var_pdhg    fixed step from the metric-floor bound, variable metric
    run_accelerated shrinking step-ratio schedule for strongly convex g

The line search multiplies the trial dual step by mu until the breaking
condition

    tau*sigma*||K dx||^2 + 2*tau*(h(x+) - h(x) - <grad h(x), dx>)
        <= delta * ||dx||_M^2

holds; affine primal proxes use closed forms so repeated trials cost O(n).
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import prox as proxlib
from .metric import LbfgsMemory, MetricBuilder
from .mprox import NewtonConfig, ProxNewtonError, prox_metric


class ConfigError(ValueError):
    pass


class DomainError(ValueError):
    pass


class LineSearchError(RuntimeError):
    """Line search exhausted its trial budget; usually a problem-definition bug."""

    def __init__(self, message, iteration, trials):
        super().__init__(message)
        self.iteration = iteration
        self.trials = trials


class SaddleProblem:
    """Problem data: smooth h, prox-friendly g and f*, linear coupling K."""

    def __init__(self, dim_x, dim_y, h_value, h_grad, g, fstar, k_apply, k_adjoint,
                 l_k_estimate=None, lipschitz_h=None, lipschitz_is_bound=True,
                 gamma_strong=0.0, primal_value=None,
                 h_value_guarded=None, h_grad_guarded=None):
        self.dim_x = int(dim_x)
        self.dim_y = int(dim_y)
        self.h_value = h_value
        self.h_grad = h_grad
        self.g = g
        self.fstar = fstar
        self.k_apply = k_apply
        self.k_adjoint = k_adjoint
        self.l_k_estimate = l_k_estimate
        self.lipschitz_h = lipschitz_h
        self.lipschitz_is_bound = bool(lipschitz_is_bound)
        self.gamma_strong = float(gamma_strong)
        self.primal_value = primal_value
        self.h_value_guarded = h_value_guarded or h_value
        self.h_grad_guarded = h_grad_guarded or h_grad

    def adjoint_mismatch(self, rng, trials=5):
        """max |<Kx,y> - <x,K*y>| / (||Kx|| ||y||) over random vectors."""
        worst = 0.0
        for _ in range(trials):
            x = rng.standard_normal(self.dim_x)
            y = rng.standard_normal(self.dim_y)
            kx = self.k_apply(x)
            scale = np.linalg.norm(kx) * np.linalg.norm(y)
            if scale == 0.0:
                continue
            worst = max(worst, abs(np.dot(kx, y) - np.dot(x, self.k_adjoint(y))) / scale)
        return worst

    def gradient_mismatch(self, point, eps=1e-6, rng=None, trials=8):
        """Relative error of h_grad against central differences at point."""
        grad = self.h_grad(point)
        rng = rng or np.random.default_rng(0)
        worst = 0.0
        scale = 1.0 + np.linalg.norm(grad)
        for _ in range(trials):
            d = rng.standard_normal(self.dim_x)
            d /= np.linalg.norm(d)
            fd = (self.h_value(point + eps * d) - self.h_value(point - eps * d)) / (2 * eps)
            worst = max(worst, abs(fd - np.dot(grad, d)) / scale)
        return worst


@dataclass
class SolverConfig:
    mu: float = 0.7
    delta: float = 0.99
    beta: float = 1.0
    sigma0: float = 1.0
    theta0: float = 1.0
    max_iters: int = 300
    bar_sigma_rule: str = "aggressive"  # or "conservative"
    metric_every: int = 1
    m: int = 5
    alpha: float = 0.01
    c_m: float = 50.0
    gamma1: float = 1.0
    gamma2: float = 1.0
    eps_curv: float = 1e-8
    base_scale: float = None  # None selects the automatic scaling
    safeguard: bool = False
    eta0: float = 1.0
    gamma_strong: float = None  # acceleration override; problem value otherwise
    c_theta: float = 10.0
    tol: float = None  # residual stopping; None runs to max_iters
    ls_max_trials: int = 60

    def validate(self, accelerated=False):
        if not 0.0 < self.mu < 1.0:
            raise ConfigError("mu must lie in (0, 1)")
        hi = 1.0 if accelerated else 1.0 - 1e-12
        if not 0.0 < self.delta <= hi:
            raise ConfigError("delta must lie in (0, 1); delta = 1 only when accelerated")
        for name in ("beta", "sigma0", "theta0"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.bar_sigma_rule not in ("aggressive", "conservative"):
            raise ConfigError("bar_sigma_rule must be aggressive or conservative")
        if self.metric_every < 1:
            raise ConfigError("metric_every must be >= 1")


@dataclass
class IterateState:
    x: np.ndarray
    y: np.ndarray
    y_prev: np.ndarray
    sigma: float
    theta: float
    beta_k: float
    metric: object = None
    grad_h_x: np.ndarray = None
    h_x: float = None
    Kx: np.ndarray = None
    erg_x: np.ndarray = None
    erg_y: np.ndarray = None
    erg_y_base: np.ndarray = None
    erg_w_base: float = 0.0
    s_n: float = 0.0
    k: int = 0


TRACE_COLUMNS = ("iter", "wall_s", "sigma", "tau", "theta", "beta",
                 "ls_trials", "primal", "gap", "dual_res", "rank")


class ConvergenceRecord:
    """Append-only per-iteration trace with CSV output."""

    def __init__(self):
        self.rows = []
        self.ergodic_gap = []
        self.kl_floor_events = 0

    def add(self, **kw):
        self.rows.append(tuple(kw[c] for c in TRACE_COLUMNS))

    def column(self, name):
        i = TRACE_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def __len__(self):
        return len(self.rows)

    def to_csv(self, stream):
        stream.write(",".join(TRACE_COLUMNS) + "\n")
        for row in self.rows:
            stream.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")

    @staticmethod
    def read_csv(stream):
        header = stream.readline().strip().split(",")
        data = [line.strip().split(",") for line in stream if line.strip()]
        cols = {}
        for j, name in enumerate(header):
            vals = [row[j] for row in data]
            cols[name] = np.array([float(v) for v in vals])
        return cols


@dataclass
class SolverResult:
    x: np.ndarray
    y: np.ndarray
    ergodic_x: np.ndarray
    ergodic_y: np.ndarray
    stop_reason: str


def dual_step(state, problem, sigma_prev):
    """Dual prox ascent from y^{k-1} using the cached K x^k."""
    return proxlib.prox_euclidean(problem.fstar, sigma_prev, 1.0,
                                  state.y + sigma_prev * state.Kx)


@dataclass
class LSResult:
    x_new: np.ndarray
    Kx_new: np.ndarray
    h_new: float
    sigma: float
    theta: float
    tau: float
    trials: int
    y_bar: np.ndarray
    mnorm_dx: float
    newton_alpha: np.ndarray = None


def breaking_condition(tau, sigma, delta, k_dx_sq, bregman, mnorm_dx):
    """(lhs, rhs) of the step-acceptance inequality, exactly as compared."""
    return tau * sigma * k_dx_sq + 2.0 * tau * bregman, delta * mnorm_dx


def line_search_step(state, problem, cfg, beta_prev=None, beta_k=None, warm_alpha=None):
    """Backtracking on the dual trial step until the breaking condition holds.

    state.y must already hold the iteration-k dual update. Returns the
    accepted primal candidate and step bookkeeping.
    """
    beta_prev = state.beta_k if beta_prev is None else beta_prev
    beta_k = beta_prev if beta_k is None else beta_k
    metric = state.metric
    g = problem.g
    sigma_prev, theta_prev = state.sigma, state.theta
    ratio = beta_prev / beta_k
    bar_sigma = ratio * sigma_prev
    if cfg.bar_sigma_rule == "aggressive":
        bar_sigma *= math.sqrt(1.0 + theta_prev)

    dy = state.y - state.y_prev
    kty = problem.k_adjoint(state.y)
    ktdy = problem.k_adjoint(dy)
    u1 = metric.apply_inverse(kty)
    u2 = metric.apply_inverse(ktdy)
    u3 = metric.apply_inverse(state.grad_h_x)

    kind = g.kind
    affine = kind in ("zero", "linear", "hyperplane", "quadratic")
    if kind in ("zero", "linear"):
        uc = metric.apply_inverse(g.c) if kind == "linear" else np.zeros_like(state.x)
        kv1, kv2, kv3 = problem.k_apply(u1), problem.k_apply(u2), problem.k_apply(u3)
        kvc = problem.k_apply(uc) if kind == "linear" else np.zeros_like(state.Kx)
    elif kind == "hyperplane":
        ua = metric.apply_inverse(g.a)
        na = float(np.dot(g.a, ua))  # ||a||^2 in the M^{-1} norm
        kua = problem.k_apply(ua)
        kv1, kv2, kv3 = problem.k_apply(u1), problem.k_apply(u2), problem.k_apply(u3)
    elif kind == "quadratic":
        p0 = metric.apply(state.x)
        rhs_fixed = kty + state.grad_h_x - g.b
        rhs_dy = ktdy

    newton_alpha = warm_alpha
    for i in range(cfg.ls_max_trials):
        sigma = bar_sigma * cfg.mu**i
        theta = sigma / sigma_prev
        tau = beta_k * sigma
        y_bar = state.y + theta * dy

        if kind in ("zero", "linear"):
            x_new = state.x - tau * (u1 + theta * u2 + u3 + uc)
            kx_new = state.Kx - tau * (kv1 + theta * kv2 + kv3 + kvc)
        elif kind == "hyperplane":
            x_lin = state.x - tau * (u1 + theta * u2 + u3)
            coef = (g.offset - float(np.dot(x_lin, g.a))) / na
            x_new = x_lin + coef * ua
            kx_new = state.Kx - tau * (kv1 + theta * kv2 + kv3) + coef * kua
        elif kind == "quadratic":
            x_new = metric.solve_shifted(p0 - tau * (rhs_fixed + theta * rhs_dy), tau)
            kx_new = problem.k_apply(x_new)
        else:
            arg = state.x - tau * (u1 + theta * u2 + u3)
            try:
                x_new, nstats = prox_metric(metric, g, tau, arg, alpha0=newton_alpha)
            except ProxNewtonError as err:
                raise LineSearchError(
                    f"metric prox failed at iteration {state.k}: {err}", state.k, i
                ) from err
            newton_alpha = nstats.alpha
            kx_new = problem.k_apply(x_new)

        dx = x_new - state.x
        mnorm_dx = metric.m_norm_sq(dx)
        h_new = problem.h_value(x_new)
        k_dx = kx_new - state.Kx
        bregman = h_new - state.h_x - float(np.dot(state.grad_h_x, dx))
        lhs, rhs = breaking_condition(tau, sigma, cfg.delta,
                                      float(np.dot(k_dx, k_dx)), bregman, mnorm_dx)
        if lhs <= rhs:
            return LSResult(x_new, kx_new, h_new, sigma, theta, tau, i + 1,
                            y_bar, mnorm_dx, newton_alpha)
    raise LineSearchError(
        f"breaking condition failed {cfg.ls_max_trials} times at iteration {state.k}; "
        "check the gradient and operator definitions",
        state.k, cfg.ls_max_trials,
    )


def sigma_lower_bound(cfg, problem):
    """Lemma-style worst-case floor mu * sigma_lo; 0 when L is not a true bound."""
    if problem.l_k_estimate is None or problem.lipschitz_h is None:
        return 0.0
    if not problem.lipschitz_is_bound:
        return 0.0
    l_hat = max(problem.lipschitz_h, problem.l_k_estimate)
    if l_hat == 0.0:
        return math.inf
    lo = (-1.0 + math.sqrt(4.0 * cfg.delta * cfg.alpha / cfg.beta + 1.0)) / (2.0 * l_hat)
    return cfg.mu * lo


def _init_state(problem, cfg, x1, y0):
    x1 = np.asarray(x1, dtype=float).copy()
    y0 = np.asarray(y0, dtype=float).copy()
    if proxlib.value(problem.g, x1) == np.inf:
        raise DomainError("x1 is infeasible for g")
    h0 = problem.h_value(x1)
    if not np.isfinite(h0):
        raise DomainError("x1 lies outside dom h")
    state = IterateState(
        x=x1, y=y0.copy(), y_prev=y0.copy(),
        sigma=cfg.sigma0, theta=cfg.theta0, beta_k=cfg.beta,
        grad_h_x=problem.h_grad(x1), h_x=h0, Kx=problem.k_apply(x1),
        erg_x=np.zeros_like(x1), erg_y=np.zeros_like(y0),
    )
    return state


def _record_row(record, state, problem, ls, wall, primal_ref, saddle_ref, timing):
    primal = math.nan
    if problem.primal_value is not None:
        primal = float(problem.primal_value(state.x))
    gap = primal - primal_ref if (primal_ref is not None and not math.isnan(primal)) else math.nan
    dual_res = float(np.linalg.norm(state.y - state.y_prev)) / max(ls.sigma / ls.theta, 1e-300)
    record.add(
        iter=state.k, wall_s=wall if timing else 0.0, sigma=ls.sigma, tau=ls.tau,
        theta=ls.theta, beta=state.beta_k, ls_trials=ls.trials, primal=primal,
        gap=gap, dual_res=dual_res, rank=state.metric.rank,
    )
    if saddle_ref is not None:
        w = state.erg_w_base + state.s_n
        record.ergodic_gap.append(
            primal_dual_gap(problem,
                            state.erg_x / state.s_n,
                            (state.erg_y_base + state.erg_y) / w,
                            saddle_ref)
        )


def _run_line_search_loop(problem, cfg, x1, y0, accelerated,
                          primal_ref=None, saddle_ref=None, timing=True):
    cfg.validate(accelerated=accelerated)
    gamma = cfg.gamma_strong if cfg.gamma_strong is not None else problem.gamma_strong
    if accelerated:
        if gamma <= 0.0:
            raise ConfigError("accelerated mode needs a positive strong-convexity modulus")
        if cfg.c_theta <= 1.0:
            raise ConfigError("c_theta must exceed 1")

    state = _init_state(problem, cfg, x1, y0)
    mem = LbfgsMemory(cfg.m, base_scale=cfg.base_scale, eps_curv=cfg.eps_curv,
                      dim=problem.dim_x)
    builder = MetricBuilder(cfg.alpha, cfg.c_m, cfg.gamma1, cfg.gamma2,
                            safeguard=cfg.safeguard,
                            eta=(lambda k: cfg.eta0 / k**2) if cfg.safeguard else None)
    record = ConvergenceRecord()
    warm_alpha = None
    stop_reason = "max_iters"
    t0 = time.perf_counter()
    for k in range(1, cfg.max_iters + 1):
        state.k = k
        beta_prev = state.beta_k
        if accelerated:
            shrink = min(1.0 + (gamma / cfg.c_m) * beta_prev * state.sigma, cfg.c_theta)
            beta_k = beta_prev / shrink
        else:
            beta_k = beta_prev
        if (k - 1) % cfg.metric_every == 0:
            state.metric = builder.build(mem)
            warm_alpha = None

        sigma_prev = state.sigma
        y_new = dual_step(state, problem, sigma_prev)
        state.y_prev, state.y = state.y, y_new

        ls = line_search_step(state, problem, cfg, beta_prev, beta_k, warm_alpha)
        warm_alpha = ls.newton_alpha

        grad_new = problem.h_grad(ls.x_new)
        mem.push(ls.x_new - state.x, grad_new - state.grad_h_x)

        if k == 1:
            state.erg_y_base = ls.sigma * ls.theta * y0
            state.erg_w_base = ls.sigma * ls.theta
        state.s_n += ls.sigma
        state.erg_x += ls.sigma * ls.x_new
        state.erg_y += ls.sigma * ls.y_bar

        primal_res = math.sqrt(max(ls.mnorm_dx, 0.0)) / ls.tau
        dual_res = np.linalg.norm(state.y - state.y_prev) / sigma_prev

        state.x, state.Kx = ls.x_new, ls.Kx_new
        state.h_x, state.grad_h_x = ls.h_new, grad_new
        state.sigma, state.theta, state.beta_k = ls.sigma, ls.theta, beta_k

        _record_row(record, state, problem, ls, time.perf_counter() - t0,
                    primal_ref, saddle_ref, timing)
        if cfg.tol is not None and primal_res < cfg.tol and dual_res < cfg.tol:
            stop_reason = "residual"
            break

    w = state.erg_w_base + state.s_n
    result = SolverResult(state.x, state.y, state.erg_x / state.s_n,
                          (state.erg_y_base + state.erg_y) / w, stop_reason)
    return result, record


def run_var_pdal(problem, cfg, x1, y0, **kw):
    """Variable-metric primal-dual iteration with line search."""
    return _run_line_search_loop(problem, cfg, x1, y0, accelerated=False, **kw)


def run_pdal(problem, cfg, x1, y0, **kw):
    """Line-search iteration with the scalar (empty-memory) metric."""
    cfg = replace_cfg(cfg, m=0, base_scale=cfg.base_scale or 1.0)
    return _run_line_search_loop(problem, cfg, x1, y0, accelerated=False, **kw)


def run_accelerated(problem, cfg, x1, y0, **kw):
    """Strong-convexity accelerated variant (shrinking step ratio)."""
    return _run_line_search_loop(problem, cfg, x1, y0, accelerated=True, **kw)


def run_apdal(problem, cfg, x1, y0, **kw):
    cfg = replace_cfg(cfg, m=0, base_scale=cfg.base_scale or 1.0)
    return _run_line_search_loop(problem, cfg, x1, y0, accelerated=True, **kw)


def replace_cfg(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)


def pdhg_fixed_sigma(cfg, problem, metric_scalar):
    """Largest sigma with tau*(sigma*Lk^2 + L) <= delta*d, tau = beta*sigma."""
    if problem.l_k_estimate is None or problem.lipschitz_h is None:
        raise ConfigError("fixed-step runs need l_k_estimate and lipschitz_h")
    lk, lh = problem.l_k_estimate, problem.lipschitz_h
    target = cfg.delta * metric_scalar
    if lk == 0.0 and lh == 0.0:
        return cfg.sigma0
    if lk == 0.0:
        return target / (cfg.beta * lh)
    disc = (cfg.beta * lh) ** 2 + 4.0 * cfg.beta * lk**2 * target
    return (-cfg.beta * lh + math.sqrt(disc)) / (2.0 * cfg.beta * lk**2)


def lemma_sigma(cfg, problem):
    """Metric-floor step: valid for every metric with eigenvalues >= alpha."""
    if problem.l_k_estimate is None or problem.lipschitz_h is None:
        raise ConfigError("fixed-step runs need l_k_estimate and lipschitz_h")
    l_hat = max(problem.lipschitz_h, problem.l_k_estimate)
    if l_hat == 0.0:
        return cfg.sigma0
    return (-1.0 + math.sqrt(4.0 * cfg.delta * cfg.alpha / cfg.beta + 1.0)) / (2.0 * l_hat)


def _run_fixed_loop(problem, cfg, x1, y0, sigma, variable_metric,
                    primal_ref=None, saddle_ref=None, timing=True):
    state = _init_state(problem, cfg, x1, y0)
    mem = LbfgsMemory(cfg.m if variable_metric else 0,
                      base_scale=cfg.base_scale or 1.0 if not variable_metric else cfg.base_scale,
                      eps_curv=cfg.eps_curv, dim=problem.dim_x)
    builder = MetricBuilder(cfg.alpha, cfg.c_m, cfg.gamma1, cfg.gamma2,
                            safeguard=cfg.safeguard,
                            eta=(lambda k: cfg.eta0 / k**2) if cfg.safeguard else None)
    record = ConvergenceRecord()
    tau = cfg.beta * sigma
    warm_alpha = None
    h_value = problem.h_value_guarded
    h_grad = problem.h_grad_guarded
    t0 = time.perf_counter()
    for k in range(1, cfg.max_iters + 1):
        state.k = k
        if (k - 1) % cfg.metric_every == 0:
            state.metric = builder.build(mem)
            warm_alpha = None
        y_new = dual_step(state, problem, sigma)
        state.y_prev, state.y = state.y, y_new
        y_bar = 2.0 * state.y - state.y_prev

        arg = state.x - tau * state.metric.apply_inverse(
            problem.k_adjoint(y_bar) + state.grad_h_x)
        x_new, nstats = prox_metric(state.metric, problem.g, tau, arg, alpha0=warm_alpha)
        warm_alpha = nstats.alpha

        grad_new = h_grad(x_new)
        if variable_metric:
            mem.push(x_new - state.x, grad_new - state.grad_h_x)

        if k == 1:
            state.erg_y_base = sigma * 1.0 * y0
            state.erg_w_base = sigma
        state.s_n += sigma
        state.erg_x += sigma * x_new
        state.erg_y += sigma * y_bar

        mnorm_dx = state.metric.m_norm_sq(x_new - state.x)
        state.x, state.Kx = x_new, problem.k_apply(x_new)
        state.grad_h_x = grad_new
        state.h_x = h_value(x_new)
        state.sigma = sigma
        state.theta = 1.0

        ls = LSResult(x_new, state.Kx, state.h_x, sigma, 1.0, tau, 0, y_bar, mnorm_dx)
        _record_row(record, state, problem, ls, time.perf_counter() - t0,
                    primal_ref, saddle_ref, timing)

    w = state.erg_w_base + state.s_n
    result = SolverResult(state.x, state.y, state.erg_x / state.s_n,
                          (state.erg_y_base + state.erg_y) / w, "max_iters")
    return result, record


def run_pdhg_fixed(problem, cfg, x1, y0, **kw):
    """Fixed-step baseline; steps from worst-case L and ||K|| constants."""
    cfg.validate()
    scalar_metric = MetricBuilder(cfg.alpha, cfg.c_m, cfg.gamma1, cfg.gamma2).build(
        LbfgsMemory(0, base_scale=cfg.base_scale or 1.0, dim=problem.dim_x))
    sigma = pdhg_fixed_sigma(cfg, problem, scalar_metric.d)
    return _run_fixed_loop(problem, cfg, x1, y0, sigma, variable_metric=False, **kw)


def run_var_pdhg(problem, cfg, x1, y0, **kw):
    """Variable metric with the a-priori metric-floor step (no line search)."""
    cfg.validate()
    sigma = lemma_sigma(cfg, problem)
    return _run_fixed_loop(problem, cfg, x1, y0, sigma, variable_metric=True, **kw)


def primal_dual_gap(problem, x, y, saddle_ref):
    """Merit P(x) + D(y) against a reference saddle point; zero at the saddle."""
    x_hat, y_hat = saddle_ref
    hx = problem.h_value(x)
    if not np.isfinite(hx):
        raise DomainError("x lies outside dom h")
    p_val = (proxlib.value(problem.g, x) + hx
             - proxlib.value(problem.g, x_hat) - problem.h_value(x_hat)
             + float(np.dot(problem.k_adjoint(y_hat), x - x_hat)))
    d_val = (proxlib.value(problem.fstar, y) - proxlib.value(problem.fstar, y_hat)
             - float(np.dot(problem.k_apply(x_hat), y - y_hat)))
    return p_val + d_val
