"""Desk-scale learning experiments on synthetic SANS data.

Two drivers share one configuration:

* :func:`run_adaptation_sweep` pre-trains a texture denoiser, fine-tunes it on
  K target pairs for each K in ``k_values`` and trains a zero-start baseline on
  the largest K, reporting target validation MSE.
* :func:`run_restoration_benchmark` restores short-exposure test acquisitions
  with PnP (adapted prior), the adapted prior alone and TV, with tau and the
  TV strength tuned on a separate tuning split.

Target pairs follow the denoiser's definition: clean = long-exposure image,
noisy = clean + AWGN at the training sigma.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .core import DetectorImage, compute_metrics, substream
from .learned import (LearnedPrior, PairDataset, ResidualDenoiserParams, TrainConfig, adapt,
                      denoiser_forward, extract_patches, mse, pretrain, texture_images,
                      train_zero_start)
from .priors import tv_denoise
from .sansdata import (ScatteringGeometry, acquisition_pairs, azimuthal_average, sans_corpus,
                       small_geometry)
from .solver import SolveConfig, pr_sans_solve


def _seed(seed: int, name: str) -> int:
    return int(substream(seed, name).integers(0, 2**31 - 1))


@dataclass(frozen=True)
class SansBenchmarkConfig:
    seed: int = 0
    size: int = 64
    flux_scale: float = 160.0
    ratio: float = 12.0
    sigma: float = 5.0 / 255.0
    n_source_images: int = 60
    source_image_size: int = 64
    patches_per_image: int = 8
    pretrain: TrainConfig = TrainConfig(epochs=20)
    adapt: TrainConfig = TrainConfig(epochs=30)
    k_values: tuple = (0, 20, 40, 60, 80)
    n_val: int = 10
    n_tune: int = 10
    n_test: int = 10
    gamma: float = 0.7
    max_iter: int = 20
    tau_grid: tuple = (1.0, 1.5, 2.0, 2.5, 3.0, 3.25, 3.5)
    tv_grid: tuple = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.08)
    iq_bins: int = 30

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_values"] = list(self.k_values)
        d["tau_grid"] = list(self.tau_grid)
        d["tv_grid"] = list(self.tv_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SansBenchmarkConfig":
        d = dict(d)
        for key in ("pretrain", "adapt"):
            if key in d and isinstance(d[key], dict):
                d[key] = TrainConfig(**{**asdict(getattr(cls, key)), **d[key]})
        for key in ("k_values", "tau_grid", "tv_grid"):
            if key in d:
                d[key] = tuple(d[key])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# --------------------------------------------------------------------------
# Data
# --------------------------------------------------------------------------


@dataclass
class TargetSplit:
    """Ground truth, short (time factor 1) and long (``ratio``) acquisitions."""

    truth: np.ndarray
    low: np.ndarray
    high: np.ndarray
    geometries: list

    def denoising_pairs(self, sigma: float, seed: int) -> PairDataset:
        return PairDataset.synthesize(self.high, sigma, "target", seed)


def source_dataset(cfg: SansBenchmarkConfig) -> PairDataset:
    images = texture_images(cfg.n_source_images, cfg.source_image_size, _seed(cfg.seed, "source"))
    patch = min(cfg.pretrain.patch, cfg.source_image_size)
    patches = extract_patches(images, patch, cfg.patches_per_image, _seed(cfg.seed, "patches"))
    return PairDataset.synthesize(patches, cfg.sigma, "source", _seed(cfg.seed, "source-noise"))


def target_split(cfg: SansBenchmarkConfig, name: str, n: int) -> TargetSplit:
    seed = _seed(cfg.seed, f"target-{name}")
    clean = sans_corpus(n, cfg.size, seed)
    pairs = acquisition_pairs(clean, cfg.flux_scale, cfg.ratio, _seed(seed, "acquisition"))
    geoms = [ScatteringGeometry(pixel_pitch=small_geometry(cfg.size).pixel_pitch, width=cfg.size,
                                height=cfg.size, beam_center=c.beam_center) for c in clean]
    return TargetSplit(
        truth=np.array([c.data for c in clean]).reshape(-1, cfg.size, cfg.size),
        low=np.array([lo.data for lo, _ in pairs]).reshape(-1, cfg.size, cfg.size),
        high=np.array([hi.data for _, hi in pairs]).reshape(-1, cfg.size, cfg.size),
        geometries=geoms,
    )


def pretrain_source(cfg: SansBenchmarkConfig):
    train_cfg = TrainConfig(**{**asdict(cfg.pretrain), "sigma": cfg.sigma,
                               "seed": _seed(cfg.seed, "pretrain")})
    return pretrain(source_dataset(cfg), train_cfg)


# --------------------------------------------------------------------------
# Adaptation sweep
# --------------------------------------------------------------------------


@dataclass
class AdaptationSweep:
    k_values: list
    val_mse: list
    zero_start_k: int
    zero_start_val_mse: float
    models: dict = field(default_factory=dict, repr=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "k", "val_mse"])
        for k, v in zip(self.k_values, self.val_mse):
            w.writerow(["adapted", k, f"{v:.10g}"])
        w.writerow(["zero_start", self.zero_start_k, f"{self.zero_start_val_mse:.10g}"])
        return buf.getvalue()

    def worst_increase(self) -> float:
        """Largest relative increase of validation MSE between consecutive K."""
        v = np.asarray(self.val_mse)
        return float(np.max(v[1:] / v[:-1] - 1.0)) if v.size > 1 else 0.0


def run_adaptation_sweep(cfg: SansBenchmarkConfig,
                         source_params: Optional[ResidualDenoiserParams] = None) -> AdaptationSweep:
    if source_params is None:
        source_params, _ = pretrain_source(cfg)
    kmax = max(cfg.k_values)
    train = target_split(cfg, "train", kmax).denoising_pairs(cfg.sigma, _seed(cfg.seed, "train-noise"))
    val = target_split(cfg, "val", cfg.n_val).denoising_pairs(cfg.sigma, _seed(cfg.seed, "val-noise"))
    train_cfg = TrainConfig(**{**asdict(cfg.adapt), "sigma": cfg.sigma, "seed": _seed(cfg.seed, "adapt")})
    models, losses = {}, []
    for k in cfg.k_values:
        params, _ = adapt(source_params, train.head(k), train_cfg, validation=val)
        models[k] = params
        losses.append(mse(params, val.clean, val.noisy))
    zero, _ = train_zero_start(train, train_cfg, validation=val)
    models["zero_start"] = zero
    return AdaptationSweep(list(cfg.k_values), losses, kmax, mse(zero, val.clean, val.noisy), models)


# --------------------------------------------------------------------------
# Restoration benchmark
# --------------------------------------------------------------------------

METHODS = ("noisy", "tv", "prior", "pr_sans")


def _restore(method: str, y: np.ndarray, params, cfg: SansBenchmarkConfig, tau: float, tv: float):
    if method == "noisy":
        return y
    if method == "tv":
        return tv_denoise(y, tv)
    if method == "prior":
        return denoiser_forward(params, y)
    x, _ = pr_sans_solve(y, LearnedPrior(params),
                         SolveConfig(gamma=cfg.gamma, tau=tau, max_iter=cfg.max_iter, trace_level="final"))
    return x


def _mean_snr(ref, ests) -> float:
    return float(np.mean([compute_metrics(r, e).snr_db for r, e in zip(ref, ests)]))


@dataclass
class RestorationBenchmark:
    tau: float
    tv_strength: float
    rows: list  # (image, method, MetricsRecord 2D, iq_nmse, iq_mae)

    def mean_snr(self, method: str) -> float:
        return float(np.mean([r[2].snr_db for r in self.rows if r[1] == method]))

    def mean_iq(self, method: str) -> tuple:
        sel = [r for r in self.rows if r[1] == method]
        return float(np.mean([r[3] for r in sel])), float(np.mean([r[4] for r in sel]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image", "method", "snr_db", "rmse", "nmse", "mae", "iq_nmse", "iq_mae"])
        for i, m, rec, iq_nmse, iq_mae in self.rows:
            w.writerow([i, m, *rec.as_row(), f"{iq_nmse:.6g}", f"{iq_mae:.6g}"])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"tau": self.tau, "tv_strength": self.tv_strength,
                "mean_snr_db": {m: self.mean_snr(m) for m in METHODS}}


def tune_parameters(params, tune: TargetSplit, cfg: SansBenchmarkConfig) -> tuple[float, float]:
    """Grid-search tau (PnP) and TV strength for the best mean SNR on the tuning split."""
    best_tau = max(cfg.tau_grid, key=lambda t: _mean_snr(
        tune.high, [_restore("pr_sans", y, params, cfg, t, 0.0) for y in tune.low]))
    best_tv = max(cfg.tv_grid, key=lambda s: _mean_snr(
        tune.high, [_restore("tv", y, params, cfg, 0.0, s) for y in tune.low]))
    return float(best_tau), float(best_tv)


def run_restoration_benchmark(cfg: SansBenchmarkConfig, params: ResidualDenoiserParams,
                              reference: str = "high") -> RestorationBenchmark:
    """Restore ``n_test`` short acquisitions; metrics against the long acquisition
    (``reference='high'``) or the noiseless truth (``'truth'``)."""
    tau, tv = tune_parameters(params, target_split(cfg, "tune", cfg.n_tune), cfg)
    test = target_split(cfg, "test", cfg.n_test)
    refs = test.high if reference == "high" else test.truth
    rows = []
    for i in range(cfg.n_test):
        ref_iq = azimuthal_average(_image(refs[i], test.geometries[i]), test.geometries[i], cfg.iq_bins)
        for m in METHODS:
            est = _restore(m, test.low[i], params, cfg, tau, tv)
            iq = azimuthal_average(_image(est, test.geometries[i]), test.geometries[i], cfg.iq_bins)
            ok = ref_iq.valid & iq.valid
            iq_rec = compute_metrics(ref_iq.intensity[ok], iq.intensity[ok])
            rows.append((i, m, compute_metrics(refs[i], est), iq_rec.nmse, iq_rec.mae))
    return RestorationBenchmark(tau, tv, rows)


def _image(data, geometry):
    return DetectorImage(np.asarray(data, dtype=np.float64), geometry.beam_center)


def config_json(cfg: SansBenchmarkConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
