"""Synthetic SANS detector images and their reduction to I(Q) curves."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import ContractViolation, DetectorImage


@dataclass(frozen=True)
class ScatteringGeometry:
    """Flat area detector normal to the beam.

    Lengths in metres, wavelength in Angstrom, beam centre in fractional
    pixel coordinates (column, row) with pixel centres at integers.
    """

    wavelength: float = 6.0
    sample_detector_distance: float = 15.5
    pixel_pitch: float = 5.5e-3
    width: int = 256
    height: int = 256
    beam_center: Optional[tuple] = None

    def __post_init__(self):
        if min(self.wavelength, self.sample_detector_distance, self.pixel_pitch) <= 0:
            raise ContractViolation("wavelength, distance and pixel pitch must be > 0")
        if self.width < 1 or self.height < 1:
            raise ContractViolation("detector dimensions must be >= 1")
        bc = self.beam_center
        if bc is None:
            bc = ((self.width - 1) / 2.0, (self.height - 1) / 2.0)
        bc = (float(bc[0]), float(bc[1]))
        if not (-self.width <= bc[0] <= 2 * self.width and -self.height <= bc[1] <= 2 * self.height):
            raise ContractViolation("beam centre too far outside the detector")
        object.__setattr__(self, "beam_center", bc)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ScatteringGeometry":
        d = dict(d)
        if d.get("beam_center") is not None:
            d["beam_center"] = tuple(d["beam_center"])
        return cls(**d)


def q_map(geometry: ScatteringGeometry) -> np.ndarray:
    """Per-pixel momentum transfer Q = (4 pi / lambda) sin(theta), in 1/Angstrom.

    The scattering angle 2 theta satisfies tan(2 theta) = r / d for a pixel at
    radial distance r from the beam centre.
    """
    g = geometry
    rows, cols = np.indices((g.height, g.width), dtype=np.float64)
    cx, cy = g.beam_center
    r = np.hypot(cols - cx, rows - cy) * g.pixel_pitch
    theta = 0.5 * np.arctan2(r, g.sample_detector_distance)
    return 4.0 * np.pi / g.wavelength * np.sin(theta)


# --------------------------------------------------------------------------
# Form factors
# --------------------------------------------------------------------------


def sphere_amplitude(u) -> np.ndarray:
    """3 (sin u - u cos u) / u^3, with the small-u series near 0."""
    u = np.asarray(u, dtype=np.float64)
    out = np.empty_like(u)
    small = np.abs(u) < 1e-2
    us = u[small]
    out[small] = 1.0 - us**2 / 10.0 + us**4 / 280.0 - us**6 / 15120.0
    ul = u[~small]
    out[~small] = 3.0 * (np.sin(ul) - ul * np.cos(ul)) / ul**3
    return out


@dataclass(frozen=True)
class FormFactorModel:
    """Single-particle scattering model: scale * P(Q) + background.

    ``kind`` is ``sphere`` (``radius``), ``guinier_porod`` (``rg``,
    ``porod_exponent``) or ``flat``.
    """

    kind: str = "sphere"
    radius: float = 50.0
    rg: float = 30.0
    porod_exponent: float = 4.0
    scale: float = 1.0
    background: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sphere", "guinier_porod", "flat"):
            raise ContractViolation(f"unknown form factor {self.kind!r}")
        if self.radius <= 0 or self.rg <= 0:
            raise ContractViolation("radius and rg must be > 0")
        if self.scale <= 0 or self.background < 0:
            raise ContractViolation("scale must be > 0 and background >= 0")
        if self.kind == "guinier_porod" and self.porod_exponent <= 0:
            raise ContractViolation("porod exponent must be > 0")

    def form_factor(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if self.kind == "flat":
            return np.ones_like(q)
        if self.kind == "sphere":
            return sphere_amplitude(q * self.radius) ** 2
        # Guinier-Porod with a smooth junction at q1 (Hammouda 2010, s = 0)
        d, rg = self.porod_exponent, self.rg
        q1 = np.sqrt(1.5 * d) / rg
        guinier = np.exp(-(q**2) * rg**2 / 3.0)
        with np.errstate(divide="ignore"):
            porod = np.exp(-d / 2.0) * (q1 / np.where(q > 0, q, 1.0)) ** d
        return np.where(q <= q1, guinier, porod)

    def intensity(self, q) -> np.ndarray:
        return self.scale * self.form_factor(q) + self.background

    @classmethod
    def from_dict(cls, d: dict) -> "FormFactorModel":
        return cls(**d)


def synth_clean_pattern(model: FormFactorModel, geometry: ScatteringGeometry) -> DetectorImage:
    q = q_map(geometry)
    return DetectorImage(
        data=model.intensity(q),
        beam_center=geometry.beam_center,
        meta={"model": model.kind},
    )


# --------------------------------------------------------------------------
# Acquisition
# --------------------------------------------------------------------------


def simulate_acquisition(clean: DetectorImage, time_factor: float, flux_scale: float = 1.0,
                         seed: int = 0, mode: str = "poisson",
                         awgn_sigma: float = 0.0) -> DetectorImage:
    """Noisy acquisition of ``clean`` with exposure proportional to ``time_factor``.

    ``poisson``: counts ~ Poisson(time_factor * flux_scale * clean), returned
    divided by the same factor, so the expectation is ``clean`` and the
    variance is clean / (time_factor * flux_scale).  ``awgn``: additive
    Gaussian noise of variance awgn_sigma^2 / time_factor.
    """
    if not (time_factor > 0 and flux_scale > 0):
        raise ContractViolation("time_factor and flux_scale must be > 0")
    rng = np.random.default_rng(seed)
    if mode == "poisson":
        if np.any(clean.data < 0):
            raise ContractViolation("Poisson acquisition needs non-negative intensities")
        expo = time_factor * flux_scale
        data = rng.poisson(clean.data * expo) / expo
    elif mode == "awgn":
        data = clean.data + rng.normal(0.0, awgn_sigma / np.sqrt(time_factor), clean.data.shape)
    else:
        raise ContractViolation(f"unknown acquisition mode {mode!r}")
    acq = None if clean.acq_time is None else clean.acq_time * time_factor
    img = clean.with_data(data, time_factor=time_factor, noise=mode)
    return DetectorImage(img.data, img.beam_center, img.mask, acq, img.meta)


# --------------------------------------------------------------------------
# Reduction
# --------------------------------------------------------------------------


@dataclass
class IQCurve:
    q_bins: np.ndarray
    intensity: np.ndarray
    pixel_count: np.ndarray
    edges: np.ndarray = field(repr=False, default=None)

    @property
    def valid(self) -> np.ndarray:
        """False for empty bins (their intensity is a 0 placeholder)."""
        return self.pixel_count > 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["q", "intensity", "pixel_count"])
        for q, i, n in zip(self.q_bins, self.intensity, self.pixel_count):
            w.writerow([f"{q:.10g}", f"{i:.10g}", int(n)])
        return buf.getvalue()


def azimuthal_average(image: DetectorImage, geometry: ScatteringGeometry, n_bins: int = 100,
                      binning: str = "log", q_range: Optional[tuple] = None) -> IQCurve:
    """Mean intensity of valid pixels in Q bins.

    Linear bins span [0, Q_max] and catch a Q = 0 pixel in the lowest bin;
    log bins span [Q_min>0, Q_max] and drop Q = 0.  Bin centres are
    arithmetic (linear) or geometric (log) midpoints of the edges.
    """
    if n_bins < 2:
        raise ContractViolation("n_bins must be >= 2")
    if image.data.shape != (geometry.height, geometry.width):
        raise ContractViolation("image and geometry dimensions differ")
    q = q_map(geometry)
    valid = image.mask.copy()
    if binning == "log":
        valid &= q > 0
    elif binning != "linear":
        raise ContractViolation(f"binning must be 'linear' or 'log', got {binning!r}")
    qv = q[valid]
    iv = image.data[valid]
    if qv.size == 0:
        raise ContractViolation("no valid pixels to reduce")
    if q_range is None:
        lo = 0.0 if binning == "linear" else float(qv.min())
        hi = float(qv.max())
    else:
        lo, hi = map(float, q_range)
    if binning == "log":
        edges = np.geomspace(lo, hi, n_bins + 1)
        centers = np.sqrt(edges[:-1] * edges[1:])
    else:
        edges = np.linspace(lo, hi, n_bins + 1)
        centers = 0.5 * (edges[:-1] + edges[1:])
    idx = np.searchsorted(edges, qv, side="right") - 1
    # the top edge belongs to the last bin
    idx[qv == edges[-1]] = n_bins - 1
    inside = (idx >= 0) & (idx < n_bins)
    counts = np.bincount(idx[inside], minlength=n_bins)
    sums = np.bincount(idx[inside], weights=iv[inside], minlength=n_bins)
    intensity = np.divide(sums, counts, out=np.zeros(n_bins), where=counts > 0)
    return IQCurve(centers, intensity, counts, edges)


# --------------------------------------------------------------------------
# Synthetic corpus for learning experiments
# --------------------------------------------------------------------------


def random_model(rng: np.random.Generator) -> FormFactorModel:
    if rng.uniform() < 0.5:
        return FormFactorModel("sphere", radius=float(rng.uniform(60.0, 200.0)),
                               scale=1.0, background=float(rng.uniform(0.0, 0.02)))
    return FormFactorModel("guinier_porod", rg=float(rng.uniform(30.0, 120.0)),
                           porod_exponent=float(rng.uniform(2.5, 4.0)),
                           scale=1.0, background=float(rng.uniform(0.0, 0.02)))


def small_geometry(size: int, rng: Optional[np.random.Generator] = None) -> ScatteringGeometry:
    """A ``size`` x ``size`` detector spanning the default instrument's Q range,
    with the beam centre jittered by up to 3 pixels when ``rng`` is given."""
    pitch = 5.5e-3 * 256 / size
    bc = ((size - 1) / 2.0, (size - 1) / 2.0)
    if rng is not None:
        bc = (bc[0] + rng.uniform(-3, 3), bc[1] + rng.uniform(-3, 3))
    return ScatteringGeometry(pixel_pitch=pitch, width=size, height=size, beam_center=bc)


def sans_corpus(n: int, size: int, seed: int) -> list[DetectorImage]:
    """``n`` clean synthetic patterns on a ``size``-pixel detector, peak-normalised to 1."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        model = random_model(rng)
        geom = small_geometry(size, rng)
        img = synth_clean_pattern(model, geom)
        out.append(img.with_data(img.data / img.data.max()))
    return out


def acquisition_pairs(clean: list[DetectorImage], flux_scale: float, ratio: float, seed: int):
    """(low, high) acquisitions of each clean pattern at exposures 1 and ``ratio``."""
    rng = np.random.default_rng(seed)
    pairs = []
    for img in clean:
        s_low, s_high = rng.integers(0, 2**63 - 1, 2)
        low = simulate_acquisition(img, 1.0, flux_scale, int(s_low))
        high = simulate_acquisition(img, ratio, flux_scale, int(s_high))
        pairs.append((low, high))
    return pairs
