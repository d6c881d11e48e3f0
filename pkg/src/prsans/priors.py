"""Non-learned denoising priors.

Every prior exposes ``apply(z)``, the denoiser D(z), and ``exact``, the ideal
operator it approximates (itself, except for :class:`InexactPrior`).  The
Gaussian-mixture prior is the analytic one: its MMSE denoiser, the noisy
density p_z and the implicit regularizer h = -tau*sigma^2*log p_z are all
available in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.special import logsumexp

from .core import ContractViolation

# --------------------------------------------------------------------------
# Gaussian mixture prior
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GmmPrior:
    """Isotropic Gaussian mixture: sum_i w_i N(mu_i, s_i^2 I)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        mu = np.asarray(self.means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[:, None] if w.size == mu.size else mu[None, :]
        v = np.atleast_1d(np.asarray(self.variances, dtype=np.float64))
        if w.ndim != 1 or w.size < 1:
            raise ContractViolation("need at least one mixture component")
        if mu.shape[0] != w.size or v.shape != w.shape or mu.shape[1] < 1:
            raise ContractViolation("weights, means and variances disagree in size")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ContractViolation("weights must be positive and sum to 1")
        if np.any(v <= 0):
            raise ContractViolation("variances must be positive")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(v))):
            raise ContractViolation("mixture parameters must be finite")
        for name, arr in (("weights", w), ("means", mu), ("variances", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp])[:, None] * noise

    def to_json(self) -> str:
        return json.dumps(
            {
                "weights": self.weights.tolist(),
                "means": self.means.tolist(),
                "variances": self.variances.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GmmPrior":
        d = json.loads(text)
        return cls(np.array(d["weights"]), np.array(d["means"]), np.array(d["variances"]))

    @classmethod
    def random(cls, dim: int, n_components: int, rng: np.random.Generator,
               spread: float = 2.0, var_range=(0.2, 1.5)) -> "GmmPrior":
        w = rng.uniform(0.5, 1.5, n_components)
        w /= w.sum()
        mu = rng.uniform(-spread, spread, (n_components, dim))
        v = rng.uniform(*var_range, n_components)
        return cls(w, mu, v)


def _as_batch(gmm: GmmPrior, z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    if zb.ndim != 2 or zb.shape[1] != gmm.dim:
        raise ContractViolation(f"expected vectors of length {gmm.dim}, got shape {z.shape}")
    if not np.all(np.isfinite(zb)):
        raise ContractViolation("input must be finite")
    return zb, single


def _component_logpdf(gmm: GmmPrior, zb: np.ndarray, sigma: float) -> np.ndarray:
    """log(w_i) + log N(z; mu_i, (s_i^2 + sigma^2) I), shape (batch, components)."""
    var = gmm.variances + sigma**2
    sq = ((zb[:, None, :] - gmm.means[None, :, :]) ** 2).sum(axis=2)
    n = gmm.dim
    return np.log(gmm.weights) - 0.5 * n * np.log(2 * np.pi * var) - 0.5 * sq / var


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise ContractViolation(f"sigma must be > 0, got {sigma}")


def log_pz(gmm: GmmPrior, z, sigma: float):
    """Log density of z = x + n with x ~ gmm and n ~ N(0, sigma^2 I)."""
    _check_sigma(sigma)
    zb, single = _as_batch(gmm, z)
    out = logsumexp(_component_logpdf(gmm, zb, sigma), axis=1)
    return float(out[0]) if single else out


def responsibilities(gmm: GmmPrior, z, sigma: float) -> np.ndarray:
    """Posterior component probabilities given the noisy observation."""
    _check_sigma(sigma)
    zb, single = _as_batch(gmm, z)
    lp = _component_logpdf(gmm, zb, sigma)
    r = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    return r[0] if single else r


def gmm_mmse_denoise(gmm: GmmPrior, z, sigma: float) -> np.ndarray:
    """Posterior mean E[x | z] under the mixture prior and AWGN of std ``sigma``.

    Each component contributes its conjugate posterior mean
    (s_i^2 z + sigma^2 mu_i) / (s_i^2 + sigma^2), weighted by the component
    responsibility computed in log space.
    """
    _check_sigma(sigma)
    zb, single = _as_batch(gmm, z)
    lp = _component_logpdf(gmm, zb, sigma)
    r = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    s2 = gmm.variances
    shrink = s2 / (s2 + sigma**2)
    comp_means = shrink[None, :, None] * zb[:, None, :] + (1 - shrink)[None, :, None] * gmm.means[None]
    out = np.einsum("bk,bkn->bn", r, comp_means)
    return out[0] if single else out


def gmm_regularizer(gmm: GmmPrior, z, sigma: float, tau: float):
    """Implicit regularizer h(z) = -tau*sigma^2*log p_z(z) and its gradient.

    The gradient uses the score identity grad h = tau * (z - D_sigma(z)).
    """
    _check_sigma(sigma)
    if not tau > 0:
        raise ContractViolation(f"tau must be > 0, got {tau}")
    value = -tau * sigma**2 * log_pz(gmm, z, sigma)
    grad = tau * (np.asarray(z, dtype=np.float64) - gmm_mmse_denoise(gmm, z, sigma))
    return value, grad


# --------------------------------------------------------------------------
# Total variation
# --------------------------------------------------------------------------


def _grad2d(x: np.ndarray) -> np.ndarray:
    g = np.zeros((2,) + x.shape)
    g[0, :-1, :] = x[1:, :] - x[:-1, :]
    g[1, :, :-1] = x[:, 1:] - x[:, :-1]
    return g


def _grad2d_adjoint(p: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`_grad2d` (negative divergence)."""
    pv, ph = p[0], p[1]
    out = np.zeros(pv.shape)
    out[:-1, :] -= pv[:-1, :]
    out[1:, :] += pv[:-1, :]
    out[:, :-1] -= ph[:, :-1]
    out[:, 1:] += ph[:, :-1]
    return out


def anisotropic_tv(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    return float(np.abs(_grad2d(x)).sum())


def tv_denoise(z, strength: float, tol: float = 1e-6, max_iter: int = 500) -> np.ndarray:
    """Approximate minimiser of 0.5*||x - z||^2 + strength * TV(x), anisotropic TV.

    Projected gradient on the dual with step 1/8 (||grad||^2 <= 8 in 2D).
    Forward differences are zero across the last row/column, i.e. the image
    is extended symmetrically.  1-D input is treated as a single-row image.
    """
    if strength < 0:
        raise ContractViolation("strength must be >= 0")
    z = np.asarray(z, dtype=np.float64)
    if strength == 0:
        return z.copy()
    shape = z.shape
    img = z[None, :] if z.ndim == 1 else z
    if img.ndim != 2:
        raise ContractViolation("tv_denoise expects a 1-D signal or 2-D image")
    p = np.zeros((2,) + img.shape)
    step = 1.0 / (8.0 * strength)
    for _ in range(max_iter):
        x = img - strength * _grad2d_adjoint(p)
        p_new = np.clip(p + step * _grad2d(x), -1.0, 1.0)
        change = np.linalg.norm(p_new - p)
        scale = max(np.linalg.norm(p_new), 1e-300)
        p = p_new
        if change / scale < tol:
            break
    return (img - strength * _grad2d_adjoint(p)).reshape(shape)


# --------------------------------------------------------------------------
# Error schedules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EpsilonSchedule:
    """Per-call denoiser error bound eps_k, k = 0, 1, 2, ...

    ``pow`` is c / (k + 1)^p so that the first call is finite; ``list``
    holds explicit values and is zero past its end.
    """

    rule: str = "zero"
    c: float = 0.0
    p: float = 1.0
    values: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.rule not in ("zero", "const", "pow", "list"):
            raise ContractViolation(f"unknown schedule rule {self.rule!r}")
        if self.c < 0 or self.p < 0 or any(v < 0 for v in self.values):
            raise ContractViolation("schedule parameters must be >= 0")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __call__(self, k: int) -> float:
        if self.rule == "zero":
            return 0.0
        if self.rule == "const":
            return float(self.c)
        if self.rule == "pow":
            return float(self.c / (k + 1) ** self.p)
        return self.values[k] if k < len(self.values) else 0.0

    def values_upto(self, n: int) -> np.ndarray:
        return np.array([self(k) for k in range(n)])

    @property
    def square_summable(self) -> bool:
        if self.rule in ("zero", "list"):
            return True
        if self.rule == "const":
            return self.c == 0
        return self.c == 0 or 2 * self.p > 1

    @classmethod
    def parse(cls, spec: str) -> "EpsilonSchedule":
        """Parse ``zero``, ``const:<c>``, ``pow:<c>:<p>`` or ``list:<c1,c2,...>``."""
        head, _, rest = spec.strip().partition(":")
        try:
            if head == "zero" and not rest:
                return cls("zero")
            if head == "const":
                return cls("const", c=float(rest))
            if head == "pow":
                c, p = rest.split(":")
                return cls("pow", c=float(c), p=float(p))
            if head == "list":
                return cls("list", values=tuple(float(v) for v in rest.split(",") if v.strip()))
        except ValueError as exc:
            raise ContractViolation(f"bad schedule spec {spec!r}: {exc}") from exc
        raise ContractViolation(f"bad schedule spec {spec!r}")

    def spec(self) -> str:
        if self.rule == "zero":
            return "zero"
        if self.rule == "const":
            return f"const:{self.c!r}"
        if self.rule == "pow":
            return f"pow:{self.c!r}:{self.p!r}"
        return "list:" + ",".join(repr(v) for v in self.values)


# --------------------------------------------------------------------------
# Prior handles
# --------------------------------------------------------------------------


class PriorHandle:
    """Uniform denoiser interface used by the restoration solver."""

    kind: str = ""
    sigma: Optional[float] = None

    @property
    def exact(self) -> "PriorHandle":
        return self

    def apply(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, z):
        return apply_prior(self, z)


class GmmMmsePrior(PriorHandle):
    kind = "gmm_mmse"

    def __init__(self, gmm: GmmPrior, sigma: float):
        _check_sigma(sigma)
        self.gmm = gmm
        self.sigma = float(sigma)

    def apply(self, z):
        return gmm_mmse_denoise(self.gmm, z, self.sigma)

    def regularizer(self, z, tau: float):
        return gmm_regularizer(self.gmm, z, self.sigma, tau)


class TVPrior(PriorHandle):
    kind = "tv"

    def __init__(self, strength: float, tol: float = 1e-6, max_iter: int = 500):
        if strength < 0:
            raise ContractViolation("strength must be >= 0")
        self.strength = float(strength)
        self.tol = tol
        self.max_iter = max_iter

    def apply(self, z):
        return tv_denoise(z, self.strength, self.tol, self.max_iter)


class GaussianBlurPrior(PriorHandle):
    kind = "gaussian_blur"

    def __init__(self, width: float):
        if width < 0:
            raise ContractViolation("blur width must be >= 0")
        self.width = float(width)

    def apply(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.width == 0:
            return z.copy()
        return ndimage.gaussian_filter(z, self.width, mode="reflect")


def _unit_direction(seed: int, k: int, shape: tuple) -> np.ndarray:
    u = np.random.default_rng([int(seed), int(k)]).standard_normal(shape)
    return u / np.linalg.norm(u)


class InexactPrior(PriorHandle):
    """Base denoiser plus a perturbation of norm exactly eps_k on call k.

    The direction of call k depends only on (seed, k, shape), never on the
    input.  Holds a call counter, so one instance must not be shared across
    concurrent solves; use :meth:`clone`.
    """

    kind = "inexact"

    def __init__(self, base: PriorHandle, schedule: EpsilonSchedule, seed: int):
        if isinstance(base, InexactPrior):
            raise ContractViolation("cannot wrap an already inexact prior")
        self.base = base
        self.schedule = schedule
        self.seed = int(seed)
        self.sigma = base.sigma
        self.calls = 0
        self.last_epsilon: Optional[float] = None

    @property
    def exact(self) -> PriorHandle:
        return self.base

    def apply(self, z):
        out = self.base.apply(z)
        eps = self.schedule(self.calls)
        if eps > 0:
            out = out + eps * _unit_direction(self.seed, self.calls, np.shape(out))
        self.last_epsilon = eps
        self.calls += 1
        return out

    def clone(self) -> "InexactPrior":
        return InexactPrior(self.base, self.schedule, self.seed)


def inexact_wrap(base: PriorHandle, schedule: EpsilonSchedule, seed: int) -> InexactPrior:
    return InexactPrior(base, schedule, seed)


class NonFiniteOutputError(ContractViolation):
    """A denoiser returned inf or NaN for a finite input."""


def apply_prior(prior: PriorHandle, z) -> np.ndarray:
    """Evaluate the denoiser, checking finiteness and shape of input and output."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ContractViolation("prior input must be finite")
    out = np.asarray(prior.apply(z), dtype=np.float64)
    if out.shape != z.shape:
        raise ContractViolation(f"prior returned shape {out.shape} for input {z.shape}")
    if not np.all(np.isfinite(out)):
        raise NonFiniteOutputError(f"{prior.kind} prior produced non-finite output")
    return out


def gmm_from_components(weights: Sequence[float], means, variances) -> GmmPrior:
    return GmmPrior(np.asarray(weights, float), np.asarray(means, float), np.asarray(variances, float))


def single_gaussian(dim: int, variance: float, mean=None) -> GmmPrior:
    mu = np.zeros((1, dim)) if mean is None else np.asarray(mean, float).reshape(1, dim)
    return GmmPrior(np.ones(1), mu, np.array([variance]))


def shrinkage_slope(variance: float, sigma: float, tau: float) -> float:
    """Exact Lipschitz constant of grad h for a single isotropic Gaussian prior."""
    return tau * sigma**2 / (variance + sigma**2)


__all__ = [
    "GmmPrior", "log_pz", "responsibilities", "gmm_mmse_denoise", "gmm_regularizer",
    "tv_denoise", "anisotropic_tv", "EpsilonSchedule", "PriorHandle", "GmmMmsePrior",
    "TVPrior", "GaussianBlurPrior", "InexactPrior", "inexact_wrap", "apply_prior", "NonFiniteOutputError",
    "single_gaussian", "shrinkage_slope", "gmm_from_components",
]
