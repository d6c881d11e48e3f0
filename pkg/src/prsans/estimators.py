"""scikit-learn style wrappers around the restoration building blocks.

Images are passed as 2-D arrays or stacks of shape (n_images, height, width).
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import ContractViolation, DetectorImage
from .learned import (LearnedPrior, PairDataset, TrainConfig, adapt, denoiser_forward, pretrain)
from .priors import PriorHandle, tv_denoise
from .sansdata import ScatteringGeometry, azimuthal_average
from .solver import SolveConfig, pr_sans_solve


def check_image_stack(X, name: str = "X") -> tuple[np.ndarray, bool]:
    """Validate finite float images; returns a (n, h, w) stack and whether the
    input was a single image."""
    X = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float64,
                    ensure_all_finite=True, input_name=name)
    if X.ndim == 2:
        return X[None], True
    if X.ndim != 3:
        raise ContractViolation(f"{name} must be an image or a stack of images, got ndim={X.ndim}")
    return X, False


def _unstack(stack: np.ndarray, single: bool) -> np.ndarray:
    return stack[0] if single else stack


class ResidualDenoiser(BaseEstimator):
    """Residual CNN denoiser.  ``fit(noisy, clean)`` pre-trains from scratch;
    ``adapt(noisy, clean)`` fine-tunes the fitted parameters."""

    def __init__(self, depth: int = 5, channels: int = 16, epochs: int = 30, lr: float = 0.3,
                 momentum: float = 0.9, batch: int = 8, patch: int = 40, sigma: float = 5.0 / 255.0,
                 clip: Optional[float] = 0.1, seed: int = 0):
        self.depth = depth
        self.channels = channels
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.batch = batch
        self.patch = patch
        self.sigma = sigma
        self.clip = clip
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, momentum=self.momentum, batch=self.batch,
                           seed=self.seed, patch=self.patch, sigma=self.sigma, depth=self.depth,
                           channels=self.channels, clip=self.clip)

    def _pairs(self, X, y, role):
        noisy, _ = check_image_stack(X)
        clean, _ = check_image_stack(y, "y")
        if noisy.shape != clean.shape:
            raise ContractViolation("X and y must have the same shape")
        return PairDataset(clean, noisy, role, self.sigma)

    def fit(self, X, y):
        self.params_, self.curve_ = pretrain(self._pairs(X, y, "source"), self._train_config())
        return self

    def adapt(self, X, y):
        check_is_fitted(self, "params_")
        self.params_, self.curve_ = adapt(self.params_, self._pairs(X, y, "target"), self._train_config())
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        stack, single = check_image_stack(X)
        return _unstack(denoiser_forward(self.params_, stack), single)

    def as_prior(self) -> LearnedPrior:
        check_is_fitted(self, "params_")
        return LearnedPrior(self.params_)


class TVDenoiser(TransformerMixin, BaseEstimator):
    def __init__(self, strength: float = 0.05, tol: float = 1e-6, max_iter: int = 500):
        self.strength = strength
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        check_image_stack(X)
        return self

    def transform(self, X):
        stack, single = check_image_stack(X)
        out = np.array([tv_denoise(x, self.strength, self.tol, self.max_iter) for x in stack])
        return _unstack(out, single)


class PnPRestorer(TransformerMixin, BaseEstimator):
    """Proximal-gradient PnP restoration of each image with a fixed prior."""

    def __init__(self, prior: Optional[PriorHandle] = None, gamma: float = 0.7, tau: float = 1.0,
                 max_iter: int = 20, fp_tol: float = 0.0):
        self.prior = prior
        self.gamma = gamma
        self.tau = tau
        self.max_iter = max_iter
        self.fp_tol = fp_tol

    def fit(self, X=None, y=None):
        if self.prior is None:
            raise ContractViolation("PnPRestorer needs a prior")
        self.config_ = SolveConfig(self.gamma, self.tau, self.max_iter, self.fp_tol, "norms")
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        stack, single = check_image_stack(X)
        out, self.traces_ = [], []
        for x in stack:
            restored, trace = pr_sans_solve(x, self.prior, self.config_)
            out.append(restored)
            self.traces_.append(trace)
        return _unstack(np.array(out), single)


class AzimuthalAverager(TransformerMixin, BaseEstimator):
    """Maps each detector image to its binned I(Q) intensities (n_images, n_bins)."""

    def __init__(self, geometry: Optional[ScatteringGeometry] = None, n_bins: int = 100,
                 binning: str = "log"):
        self.geometry = geometry
        self.n_bins = n_bins
        self.binning = binning

    def fit(self, X=None, y=None):
        self.geometry_ = self.geometry if self.geometry is not None else ScatteringGeometry()
        return self

    def transform(self, X):
        check_is_fitted(self, "geometry_")
        stack, _ = check_image_stack(X)
        g = self.geometry_
        curves = [azimuthal_average(DetectorImage(x, g.beam_center), g, self.n_bins, self.binning)
                  for x in stack]
        self.q_bins_ = curves[0].q_bins
        self.pixel_counts_ = curves[0].pixel_count
        return np.array([c.intensity for c in curves])
