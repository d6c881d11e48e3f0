"""Plug-and-play proximal-gradient restoration.

One iteration is

    x_k = prox_{gamma g}(x_{k-1} - gamma * tau * (x_{k-1} - D(x_{k-1})))

with the least-squares data term g(x) = 0.5 * ||x - y||^2, whose proximal
map is available in closed form.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ContractViolation
from .priors import GmmMmsePrior, InexactPrior, NonFiniteOutputError, PriorHandle, apply_prior

TRACE_LEVELS = ("final", "norms", "full")


class SolverDivergenceError(RuntimeError):
    """An iterate became non-finite."""

    def __init__(self, iteration: int):
        super().__init__(f"non-finite iterate at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class SolveConfig:
    gamma: float = 0.7
    tau: float = 1.0
    max_iter: int = 20
    fp_tol: float = 0.0
    trace_level: str = "norms"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ContractViolation("gamma must be > 0")
        if not self.tau > 0:
            raise ContractViolation("tau must be > 0")
        if int(self.max_iter) < 1:
            raise ContractViolation("max_iter must be >= 1")
        if not self.fp_tol >= 0:
            raise ContractViolation("fp_tol must be >= 0")
        if self.trace_level not in TRACE_LEVELS:
            raise ContractViolation(f"trace_level must be one of {TRACE_LEVELS}")


@dataclass
class SolveTrace:
    """Per-iteration record; entry k-1 of every list describes iterate x_k."""

    x0: Optional[np.ndarray] = None
    iterates: list = field(default_factory=list)
    f_initial: Optional[float] = None
    f_values: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)
    fixed_point_residuals: list = field(default_factory=list)

    @property
    def n_iter(self) -> int:
        return len(self.step_norms)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "f", "grad_norm", "step_norm", "epsilon", "fp_residual"])
        for i in range(self.n_iter):
            f = f"{self.f_values[i]:.17g}" if self.f_values else ""
            g = f"{self.grad_norms[i]:.17g}" if self.grad_norms else ""
            eps = f"{self.epsilons[i]:.17g}" if self.epsilons else ""
            fp = f"{self.fixed_point_residuals[i]:.17g}" if self.fixed_point_residuals else ""
            w.writerow([i + 1, f, g, f"{self.step_norms[i]:.17g}", eps, fp])
        return buf.getvalue()


def prox_data_fidelity(v, y, gamma: float) -> np.ndarray:
    """argmin_x 0.5*||x - v||^2 + gamma * 0.5*||x - y||^2."""
    if not gamma > 0:
        raise ContractViolation("gamma must be > 0")
    v = np.asarray(v, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if v.shape != y.shape:
        raise ContractViolation(f"shape mismatch: {v.shape} vs {y.shape}")
    return (v + gamma * y) / (1.0 + gamma)


def pr_sans_step(x_prev, y, prior: PriorHandle, cfg: SolveConfig) -> np.ndarray:
    x_prev = np.asarray(x_prev, dtype=np.float64)
    residual = x_prev - apply_prior(prior, x_prev)
    return prox_data_fidelity(x_prev - cfg.gamma * cfg.tau * residual, y, cfg.gamma)


def _analytic(prior: PriorHandle) -> Optional[GmmMmsePrior]:
    exact = prior.exact
    return exact if isinstance(exact, GmmMmsePrior) else None


def objective_and_grad(x, y, prior: GmmMmsePrior, tau: float):
    """f(x) = 0.5*||x - y||^2 + h(x) and its gradient, for the analytic prior."""
    h, gh = prior.regularizer(x, tau)
    d = np.asarray(x, dtype=np.float64) - y
    return 0.5 * float(d @ d) + h, d + gh


def pr_sans_solve(y, prior: PriorHandle, cfg: SolveConfig, x0=None):
    """Iterate :func:`pr_sans_step` until the fixed-point residual drops below
    ``cfg.fp_tol`` or ``cfg.max_iter`` steps have run.

    The fixed-point residual of x_k is measured with the ideal operator
    (``prior.exact``) so that inexact wrappers are not advanced by the
    bookkeeping.  For non-inexact priors the residual's step doubles as the
    next iterate, so each iteration costs one denoiser call.

    Returns ``(x_final, trace)``.
    """
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ContractViolation("measurement must be finite")
    x = y.copy() if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractViolation("x0 and y shapes differ")

    exact = prior.exact
    reuse = exact is prior
    analytic = _analytic(prior)
    level = cfg.trace_level
    flat = y.ndim == 1
    trace = SolveTrace()
    if level == "full":
        trace.x0 = x.copy()
    if analytic is not None and flat and level != "final":
        trace.f_initial = objective_and_grad(x, y, analytic, cfg.tau)[0]

    pending = None
    for k in range(1, int(cfg.max_iter) + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                if reuse and pending is not None:
                    x_new = pending
                else:
                    x_new = pr_sans_step(x, y, prior, cfg)
                if not np.all(np.isfinite(x_new)):
                    raise SolverDivergenceError(k)
                eps = prior.last_epsilon if isinstance(prior, InexactPrior) else 0.0
                pending = pr_sans_step(x_new, y, exact, cfg)
        except NonFiniteOutputError as exc:
            raise SolverDivergenceError(k) from exc
        fp = float(np.linalg.norm(x_new - pending))
        if level != "final":
            trace.step_norms.append(float(np.linalg.norm(x_new - x)))
            trace.epsilons.append(float(eps))
            trace.fixed_point_residuals.append(fp)
            if analytic is not None and flat:
                f, g = objective_and_grad(x_new, y, analytic, cfg.tau)
                trace.f_values.append(f)
                trace.grad_norms.append(float(np.linalg.norm(g)))
            if level == "full":
                trace.iterates.append(x_new.copy())
        x = x_new
        if fp < cfg.fp_tol:
            break
    return x, trace


@dataclass(frozen=True)
class FixedPointResidual:
    residual: float
    stationarity: Optional[float] = None


def fixed_point_residual(x, y, prior: PriorHandle, cfg: SolveConfig) -> FixedPointResidual:
    """||x - step(x)|| with the ideal operator, plus ||grad f(x)|| for analytic priors.

    For the least-squares data term the two are proportional:
    residual = gamma / (1 + gamma) * ||grad f(x)||.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractViolation("x must be finite")
    y = np.asarray(y, dtype=np.float64)
    exact = prior.exact
    r = float(np.linalg.norm(x - pr_sans_step(x, y, exact, cfg)))
    stat = None
    analytic = _analytic(prior)
    if analytic is not None and x.ndim == 1:
        stat = float(np.linalg.norm(objective_and_grad(x, y, analytic, cfg.tau)[1]))
    return FixedPointResidual(r, stat)
