"""Plug-and-play restoration of SANS detector images with domain-adapted priors."""

from .core import DetectorImage, MetricsRecord, compute_metrics, read_image, write_image
from .priors import (EpsilonSchedule, GaussianBlurPrior, GmmMmsePrior, GmmPrior, InexactPrior,
                     PriorHandle, TVPrior, apply_prior, gmm_mmse_denoise, gmm_regularizer,
                     inexact_wrap, tv_denoise)
from .solver import SolveConfig, SolveTrace, fixed_point_residual, pr_sans_solve, pr_sans_step
from .learned import (LearnedPrior, PairDataset, ResidualDenoiserParams, TrainConfig, adapt,
                      denoiser_forward, loss_and_grad, pretrain)
from .theory import (CertificationReport, TheoremConstants, certify_theorem1, compute_constants,
                     estimate_lipschitz_M, grad_objective, solve_reference_fstar)
from .sansdata import (FormFactorModel, IQCurve, ScatteringGeometry, azimuthal_average, q_map,
                       simulate_acquisition, synth_clean_pattern)

__version__ = "0.1.0"
