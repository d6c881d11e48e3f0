"""Numerical certification of the inexact-denoiser convergence bound.

For an analytic Gaussian-mixture prior everything in the bound is computable:
the objective f = g + h, its gradient, the Lipschitz constants of grad g
(L = 1 for least squares) and grad h (M, estimated by sampling), a reference
lower value f*, and the "shadow" iterate that the ideal denoiser would have
produced from the same previous point.  :func:`certify_theorem1` runs the
solver with a deliberately perturbed prior and checks, at every iteration,

* the averaged gradient bound
  (1/t) sum ||grad f(x_k)||^2 <= B1/t (f(x_0) - f*) + B2 * mean(eps^2),
* the descent-with-error inequality
  f(x_k) <= f(x_{k-1}) - (1 - gamma M)/(2 gamma) ||x_k - x_{k-1}||^2
  + lambda alpha^2 eps_{k-1}^2 / 2,
* the shadow-step proximity ||x_k - xbar_k|| <= alpha * eps_{k-1}.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .core import ContractViolation
from .priors import (
    EpsilonSchedule,
    GmmMmsePrior,
    GmmPrior,
    gmm_mmse_denoise,
    gmm_regularizer,
    inexact_wrap,
)
from .solver import SolveConfig, pr_sans_solve, pr_sans_step

LSQ_LIPSCHITZ = 1.0
STEP_MARGIN = 1e-6


class UnsupportedPriorError(ContractViolation):
    """The operation needs an analytic (Gaussian-mixture) prior."""


class InfeasibleStepError(ContractViolation):
    """gamma violates gamma < min(1/M, 1/L)."""


class CertificationError(AssertionError):
    def __init__(self, report: "CertificationReport"):
        self.report = report
        super().__init__(f"certification failed at step {report.first_violation}")


def _require_gmm(gmm) -> GmmPrior:
    if isinstance(gmm, GmmMmsePrior):
        return gmm.gmm
    if not isinstance(gmm, GmmPrior):
        raise UnsupportedPriorError(f"analytic prior required, got {type(gmm).__name__}")
    return gmm


def objective(x, y, gmm, sigma: float, tau: float) -> float:
    """f(x) = 0.5*||x - y||^2 - tau*sigma^2*log p_z(x), no constants dropped."""
    gmm = _require_gmm(gmm)
    x = np.asarray(x, dtype=np.float64)
    d = x - np.asarray(y, dtype=np.float64)
    return 0.5 * float(d @ d) + gmm_regularizer(gmm, x, sigma, tau)[0]


def grad_objective(x, y, gmm, sigma: float, tau: float) -> np.ndarray:
    """grad f(x) = (x - y) + tau * (x - D_sigma(x))."""
    gmm = _require_gmm(gmm)
    x = np.asarray(x, dtype=np.float64)
    return (x - np.asarray(y, dtype=np.float64)) + tau * (x - gmm_mmse_denoise(gmm, x, sigma))


def grad_h(gmm: GmmPrior, x, sigma: float, tau: float) -> np.ndarray:
    """Batched gradient of the implicit regularizer."""
    x = np.asarray(x, dtype=np.float64)
    return tau * (x - gmm_mmse_denoise(gmm, x, sigma))


# --------------------------------------------------------------------------
# Lipschitz constant of grad h
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzEstimate:
    value: float
    raw_max: float
    exact: Optional[float] = None

    def __float__(self):
        return self.value


def default_box(gmm: GmmPrior, y=None, pad: float = 3.0):
    """Axis-aligned box covering the mixture means (and y) with ``pad`` std margins."""
    pts = gmm.means if y is None else np.vstack([gmm.means, np.atleast_2d(y)])
    s = pad * np.sqrt(gmm.variances.max())
    return pts.min(axis=0) - s, pts.max(axis=0) + s


def estimate_lipschitz_M(gmm, sigma: float, tau: float, domain_box=None, n_samples: int = 4000,
                         seed: int = 0, safety: float = 1.2) -> LipschitzEstimate:
    """Sampled Lipschitz constant of grad h, inflated by ``safety``.

    Half the pairs are nearly coincident (probing the local Hessian norm),
    half are spread over the box, and a further set lies on the segments
    joining component means, where the mixture Hessian peaks.
    """
    gmm = _require_gmm(gmm)
    if n_samples < 2:
        raise ContractViolation("n_samples must be >= 2")
    if domain_box is None:
        domain_box = default_box(gmm)
    lo = np.broadcast_to(np.asarray(domain_box[0], float), (gmm.dim,))
    hi = np.broadcast_to(np.asarray(domain_box[1], float), (gmm.dim,))
    rng = np.random.default_rng(seed)
    width = float(np.max(hi - lo))

    n_near = n_samples // 2
    u_near = rng.uniform(lo, hi, (n_near, gmm.dim))
    dirs = rng.standard_normal((n_near, gmm.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    v_near = u_near + 1e-4 * width * dirs

    n_far = n_samples - n_near
    u_far = rng.uniform(lo, hi, (n_far, gmm.dim))
    v_far = rng.uniform(lo, hi, (n_far, gmm.dim))

    u_seg, v_seg = [], []
    k = gmm.n_components
    if k > 1:
        ts = np.linspace(0.0, 1.0, 64)
        for i in range(k):
            for j in range(i + 1, k):
                a, b = gmm.means[i], gmm.means[j]
                pts = a[None] + ts[:, None] * (b - a)[None]
                d = rng.standard_normal(pts.shape)
                d /= np.linalg.norm(d, axis=1, keepdims=True)
                along = (b - a) / max(np.linalg.norm(b - a), 1e-300)
                u_seg += [pts, pts]
                v_seg += [pts + 1e-4 * width * d, pts + 1e-4 * width * along[None]]
    u = np.vstack([u_near, u_far] + u_seg)
    v = np.vstack([v_near, v_far] + v_seg)

    num = np.linalg.norm(grad_h(gmm, u, sigma, tau) - grad_h(gmm, v, sigma, tau), axis=1)
    den = np.linalg.norm(u - v, axis=1)
    ok = den > 0
    raw = float(np.max(num[ok] / den[ok]))
    exact = None
    if k == 1:
        exact = tau * sigma**2 / (gmm.variances[0] + sigma**2)
    return LipschitzEstimate(safety * raw, raw, exact)


# --------------------------------------------------------------------------
# Constants
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TheoremConstants:
    gamma: float
    tau: float
    L: float
    M: float
    lam: float
    alpha: float
    alpha_statement: Optional[float]
    B1: float
    B2: float

    @property
    def stationarity_factor(self) -> float:
        """||grad f(x)|| = factor * fixed-point residual for the least-squares g."""
        return (1.0 + self.gamma * self.L) / self.gamma


def compute_constants(gamma: float, tau: float, L: float, M: float) -> TheoremConstants:
    """Bound constants.  ``alpha`` is gamma*tau/(1 - gamma*L); the variant
    gamma*tau/(1 - gamma*tau) is kept as ``alpha_statement`` for reporting
    (``None`` when gamma*tau >= 1)."""
    if not (gamma > 0 and tau > 0 and L > 0 and M > 0):
        raise ContractViolation("gamma, tau, L, M must all be > 0")
    if gamma * M >= 1 or gamma * L >= 1:
        raise InfeasibleStepError(
            f"gamma={gamma} infeasible: need gamma < min(1/M, 1/L) = {min(1 / M, 1 / L)}"
        )
    lam = 1.0 / gamma + L
    alpha = gamma * tau / (1.0 - gamma * L)
    alpha_stmt = gamma * tau / (1.0 - gamma * tau) if gamma * tau < 1 else None
    B1 = 4.0 * (1.0 + gamma * M) ** 2 / (gamma * (1.0 - gamma * M))
    B2 = lam * alpha**2 * B1 / 2.0 + 2.0 * alpha**2 * (1.0 + gamma * L) ** 2 / gamma**2
    return TheoremConstants(gamma, tau, L, M, lam, alpha, alpha_stmt, B1, B2)


# --------------------------------------------------------------------------
# Reference optimum
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceOptimum:
    x_star: np.ndarray
    f_star: float
    basins: tuple  # ((x, f), ...) distinct stationary points found


def _descend(x, y, gmm, sigma, tau, tol, max_iter):
    """Quasi-Newton descent from ``x``, then Armijo gradient steps to polish."""
    fun = lambda v: (objective(v, y, gmm, sigma, tau), grad_objective(v, y, gmm, sigma, tau))
    res = optimize.minimize(fun, x, jac=True, method="L-BFGS-B",
                            options={"gtol": tol, "ftol": 0.0, "maxiter": max_iter})
    x = res.x
    f, g = fun(x)
    step = 1.0 / (1.0 + tau)
    for _ in range(200):
        gn2 = float(g @ g)
        if np.sqrt(gn2) < tol:
            break
        while step > 1e-16:
            x_try = x - step * g
            f_try, g_try = fun(x_try)
            if f_try <= f - 0.5 * step * gn2:
                break
            step *= 0.5
        else:
            break
        x, f, g = x_try, f_try, g_try
    return x, f


def solve_reference_fstar(y, gmm, sigma: float, tau: float, tol: float = 1e-11,
                          max_iter: int = 5000, extra_starts=()) -> ReferenceOptimum:
    """Best stationary point of f found by descent from y and every component mean."""
    gmm = _require_gmm(gmm)
    y = np.asarray(y, dtype=np.float64)
    starts = [y] + [m for m in gmm.means] + [np.asarray(s, float) for s in extra_starts]
    found: list[tuple[np.ndarray, float]] = []
    for s in starts:
        x, f = _descend(np.array(s, dtype=np.float64), y, gmm, sigma, tau, tol, max_iter)
        if not any(np.linalg.norm(x - b) < 1e-6 * max(1.0, np.linalg.norm(b)) for b, _ in found):
            found.append((x, f))
    best = min(found, key=lambda t: t[1])
    return ReferenceOptimum(best[0], best[1], tuple(found))


# --------------------------------------------------------------------------
# Certification
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TheoryProblem:
    gmm: GmmPrior
    sigma: float
    tau: float
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if y.size != self.gmm.dim:
            raise ContractViolation("y must match the prior dimension")
        if not (self.sigma > 0 and self.tau > 0):
            raise ContractViolation("sigma and tau must be > 0")
        object.__setattr__(self, "y", y)

    @classmethod
    def random(cls, seed: int, dim: int = 2, n_components: int = 3, sigma: float = 1.0,
               tau: float = 1.0) -> "TheoryProblem":
        rng = np.random.default_rng(seed)
        gmm = GmmPrior.random(dim, n_components, rng, spread=1.5, var_range=(0.3, 1.0))
        y = rng.uniform(-2.0, 2.0, dim)
        return cls(gmm, sigma, tau, y)


@dataclass(frozen=True)
class CertifyConfig:
    gamma: Optional[float] = None  # None: 0.5 * min(1/M, 1/L)
    max_iter: int = 500
    slack: float = 1e-7
    abs_floor: float = 1e-12
    asymptote_tol: float = 1e-8
    lipschitz_samples: int = 4000
    seed: int = 0
    M: Optional[float] = None
    b2_scale: float = 1.0  # test hook: <1 corrupts B2 to prove the check is live


@dataclass
class CertificationReport:
    constants: TheoremConstants
    schedule: str
    square_summable: bool
    f0: float
    f_star: float
    lhs: list
    rhs: list
    satisfied: list
    min_grad_sq: list
    descent_violations: list = field(default_factory=list)
    proximity_violations: list = field(default_factory=list)
    bound_violations: list = field(default_factory=list)
    asymptote_ok: Optional[bool] = None
    gradient_floor: float = 0.0
    max_proximity_ratio: float = 0.0

    @property
    def passed(self) -> bool:
        return (
            not self.bound_violations
            and not self.descent_violations
            and not self.proximity_violations
            and self.asymptote_ok is not False
        )

    @property
    def first_violation(self) -> Optional[int]:
        idx = self.bound_violations + self.descent_violations + self.proximity_violations
        if idx:
            return min(idx)
        if self.asymptote_ok is False:
            return len(self.lhs)
        return None

    def raise_for_failure(self) -> None:
        if not self.passed:
            raise CertificationError(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "lhs", "rhs", "satisfied", "min_grad_sq"])
        for i, (a, b, s, m) in enumerate(zip(self.lhs, self.rhs, self.satisfied, self.min_grad_sq)):
            w.writerow([i + 1, f"{a:.17g}", f"{b:.17g}", int(s), f"{m:.17g}"])
        return buf.getvalue()

    def to_json(self) -> str:
        d = asdict(self)
        d["passed"] = self.passed
        d["first_violation"] = self.first_violation
        return json.dumps(d, indent=2, sort_keys=True)


def _tol(slack, floor, *scales):
    return max(slack * max(abs(s) for s in scales), floor)


def certify_theorem1(problem: TheoryProblem, schedule: EpsilonSchedule,
                     cfg: CertifyConfig = CertifyConfig()) -> CertificationReport:
    """Run the solver with an inexact prior and audit the bound at every t."""
    gmm, sigma, tau, y = problem.gmm, problem.sigma, problem.tau, problem.y
    if cfg.M is not None:
        M = float(cfg.M)
    else:
        M = estimate_lipschitz_M(gmm, sigma, tau, default_box(gmm, y), cfg.lipschitz_samples,
                                 cfg.seed).value
    L = LSQ_LIPSCHITZ
    limit = min(1.0 / M, 1.0 / L)
    gamma = 0.5 * limit if cfg.gamma is None else float(cfg.gamma)
    if not (0 < gamma <= limit - STEP_MARGIN):
        raise InfeasibleStepError(f"gamma={gamma} infeasible: need gamma < {limit} - {STEP_MARGIN}")
    const = compute_constants(gamma, tau, L, M)
    B2 = const.B2 * cfg.b2_scale

    exact = GmmMmsePrior(gmm, sigma)
    prior = inexact_wrap(exact, schedule, cfg.seed)
    solve_cfg = SolveConfig(gamma=gamma, tau=tau, max_iter=cfg.max_iter, fp_tol=0.0,
                            trace_level="full")
    _, trace = pr_sans_solve(y, prior, solve_cfg)

    xs = [trace.x0] + trace.iterates
    f = np.array([trace.f_initial] + trace.f_values)
    grad_sq = np.array(trace.grad_norms) ** 2
    eps = np.array(trace.epsilons)

    ref = solve_reference_fstar(y, gmm, sigma, tau)
    f_star = min(ref.f_star, float(f.min()))

    t = np.arange(1, len(grad_sq) + 1)
    lhs = np.cumsum(grad_sq) / t
    rhs = const.B1 / t * (f[0] - f_star) + B2 * np.cumsum(eps**2) / t
    report = CertificationReport(
        constants=const,
        schedule=schedule.spec(),
        square_summable=schedule.square_summable,
        f0=float(f[0]),
        f_star=f_star,
        lhs=lhs.tolist(),
        rhs=rhs.tolist(),
        satisfied=[],
        min_grad_sq=np.minimum.accumulate(grad_sq).tolist(),
    )
    for i in range(len(t)):
        ok = lhs[i] <= rhs[i] + _tol(cfg.slack, cfg.abs_floor, rhs[i])
        report.satisfied.append(bool(ok))
        if not ok:
            report.bound_violations.append(i + 1)

    decrease = (1 - gamma * M) / (2 * gamma)
    ratio_max = 0.0
    for k in range(1, len(xs)):
        dx = xs[k] - xs[k - 1]
        bound = f[k - 1] - decrease * float(dx @ dx) + const.lam * const.alpha**2 * eps[k - 1] ** 2 / 2
        if f[k] > bound + _tol(cfg.slack, cfg.abs_floor, f[k - 1], f[k]):
            report.descent_violations.append(k)
        shadow = pr_sans_step(xs[k - 1], y, exact, solve_cfg)
        dist = float(np.linalg.norm(xs[k] - shadow))
        limit_k = const.alpha * eps[k - 1]
        if dist > limit_k + _tol(cfg.slack, cfg.abs_floor, limit_k):
            report.proximity_violations.append(k)
        if limit_k > 0:
            ratio_max = max(ratio_max, dist / limit_k)
    report.max_proximity_ratio = ratio_max
    report.gradient_floor = float(grad_sq.min())
    if schedule.square_summable:
        report.asymptote_ok = bool(report.min_grad_sq[-1] < cfg.asymptote_tol)
    return report
