"""Shared containers, image I/O, evaluation metrics and seeded random streams."""

from __future__ import annotations

import csv
import io
import json
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

SNR_CAP = 300.0

MAGIC = b"PRSANSIM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sII")  # magic, version, metadata byte length


class ContractViolation(ValueError):
    """Raised when an operation's preconditions are not met."""


class ZeroReferenceError(ContractViolation):
    """Relative metrics requested against an all-zero reference."""


class ImageFormatError(ValueError):
    """Base class for image file decoding errors. ``code`` identifies the failure."""

    code = "format"


class BadMagicError(ImageFormatError):
    code = "magic"


class VersionError(ImageFormatError):
    code = "version"


class MetadataError(ImageFormatError):
    code = "metadata"


class PayloadSizeError(ImageFormatError):
    code = "payload_size"


class DimensionMismatchError(ImageFormatError):
    code = "dimension"


class NonFiniteError(ImageFormatError):
    code = "non_finite"


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose (noise, init, shuffle, ...).

    Every stream derives from one experiment-level seed, so changing how one
    stage consumes randomness leaves the other stages untouched.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


@dataclass(frozen=True, eq=False)
class DetectorImage:
    """A 2D detector image with validity mask and acquisition metadata.

    ``data`` is indexed ``[row, column]``; pixel centres sit at integer
    coordinates, so ``beam_center = (cx, cy)`` is expressed as
    (column, row) in the same fractional pixel units.
    """

    data: np.ndarray
    beam_center: tuple[float, float] = None  # type: ignore[assignment]
    mask: np.ndarray = None  # type: ignore[assignment]
    acq_time: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ContractViolation(f"image data must be a non-empty 2D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ContractViolation("image data must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

        if self.mask is None:
            mask = np.ones(data.shape, dtype=bool)
        else:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != data.shape:
                raise ContractViolation(f"mask shape {mask.shape} != data shape {data.shape}")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

        if self.beam_center is None:
            bc = ((data.shape[1] - 1) / 2.0, (data.shape[0] - 1) / 2.0)
        else:
            bc = (float(self.beam_center[0]), float(self.beam_center[1]))
        object.__setattr__(self, "beam_center", bc)

        if self.acq_time is not None and not self.acq_time > 0:
            raise ContractViolation("acq_time must be > 0 when present")
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray, **meta) -> "DetectorImage":
        """Copy with new pixel values, keeping mask, beam centre and metadata."""
        return replace(self, data=data, meta={**self.meta, **meta})


def normalize(image: DetectorImage) -> DetectorImage:
    """Linearly rescale valid pixels to [0, 1]; the rescale is kept in ``meta``."""
    valid = image.data[image.mask]
    lo = float(valid.min()) if valid.size else 0.0
    hi = float(valid.max()) if valid.size else 1.0
    scale = hi - lo if hi > lo else 1.0
    return image.with_data((image.data - lo) / scale, norm_offset=lo, norm_scale=scale)


def denormalize(image: DetectorImage) -> DetectorImage:
    """Invert :func:`normalize` using the rescale stored in ``meta``."""
    meta = dict(image.meta)
    lo = meta.pop("norm_offset", 0.0)
    scale = meta.pop("norm_scale", 1.0)
    return replace(image, data=image.data * scale + lo, meta=meta)


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRecord:
    snr_db: Optional[float]
    rmse: float
    nmse: Optional[float]
    mae: float

    def as_row(self) -> list[str]:
        return [_fmt(self.snr_db), _fmt(self.rmse), _fmt(self.nmse), _fmt(self.mae)]


METRICS_HEADER = ("snr_db", "rmse", "nmse", "mae")


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6g}"


def _valid_pixels(ref, est, mask):
    if isinstance(ref, DetectorImage) or isinstance(est, DetectorImage):
        if not (isinstance(ref, DetectorImage) and isinstance(est, DetectorImage)):
            raise ContractViolation("ref and est must both be DetectorImage or both arrays")
        if ref.data.shape != est.data.shape:
            raise ContractViolation(f"shape mismatch: {ref.data.shape} vs {est.data.shape}")
        if not np.array_equal(ref.mask, est.mask):
            raise ContractViolation("masks of ref and est differ")
        m = ref.mask if mask is None else (ref.mask & np.asarray(mask, dtype=bool))
        return ref.data[m], est.data[m]
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ContractViolation(f"shape mismatch: {ref.shape} vs {est.shape}")
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != ref.shape:
            raise ContractViolation("mask shape does not match data")
        return ref[m], est[m]
    return ref.ravel(), est.ravel()


def compute_metrics(ref, est, mask=None, relative: bool = True) -> MetricsRecord:
    """SNR (dB), RMSE, NMSE and MAE of ``est`` against ``ref`` over valid pixels.

    ``relative=False`` skips SNR and NMSE, which are undefined for an
    all-zero reference.
    """
    r, e = _valid_pixels(ref, est, mask)
    if r.size == 0:
        raise ContractViolation("no valid pixels to compare")
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(e))):
        raise ContractViolation("metric inputs must be finite")
    diff = r - e
    err_norm = float(np.linalg.norm(diff))
    rmse = err_norm / np.sqrt(r.size)
    mae = float(np.mean(np.abs(diff)))
    if not relative:
        return MetricsRecord(None, rmse, None, mae)
    ref_norm = float(np.linalg.norm(r))
    if ref_norm == 0.0:
        raise ZeroReferenceError("reference is all zero; SNR/NMSE undefined")
    nmse = (err_norm / ref_norm) ** 2
    if err_norm == 0.0:
        snr = SNR_CAP
    else:
        snr = min(SNR_CAP, 20.0 * np.log10(ref_norm / err_norm))
    return MetricsRecord(float(snr), float(rmse), float(nmse), float(mae))


def metrics_csv(records: Iterable[MetricsRecord], labels: Optional[Sequence[str]] = None) -> str:
    """Render records as CSV text with 6 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(METRICS_HEADER)
    if labels is not None:
        header = ["label"] + header
    writer.writerow(header)
    for i, rec in enumerate(records):
        row = rec.as_row()
        if labels is not None:
            row = [labels[i]] + row
        writer.writerow(row)
    return buf.getvalue()


# --------------------------------------------------------------------------
# Image file format
# --------------------------------------------------------------------------


def _rle_encode(mask: np.ndarray) -> list[int]:
    """Run lengths of a flat boolean mask, alternating valid/invalid, starting valid."""
    flat = mask.ravel()
    runs = []
    current = True
    count = 0
    for v in flat:
        if bool(v) == current:
            count += 1
        else:
            runs.append(count)
            current = not current
            count = 1
    runs.append(count)
    return runs


def _rle_decode(runs: Sequence[int], size: int) -> np.ndarray:
    if any((not isinstance(r, int)) or r < 0 for r in runs) or sum(runs) != size:
        raise MetadataError("mask run lengths do not cover the image")
    vals = np.zeros(len(runs), dtype=bool)
    vals[0::2] = True
    return np.repeat(vals, runs)


def encode_image(image: DetectorImage) -> bytes:
    """Serialise an image: fixed header, JSON metadata, little-endian f32 payload."""
    payload = np.ascontiguousarray(image.data, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise ContractViolation("image values overflow float32")
    meta = {
        "width": image.width,
        "height": image.height,
        "beam_center": list(image.beam_center),
        "acq_time": image.acq_time,
        "mask_rle": _rle_encode(image.mask),
        "payload_bytes": payload.nbytes,
        "meta": image.meta,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(blob)) + blob + payload.tobytes()


def decode_image(raw: bytes) -> DetectorImage:
    if len(raw) < _HEADER.size:
        raise BadMagicError("file shorter than header")
    magic, version, meta_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {version}")
    start = _HEADER.size
    if len(raw) < start + meta_len:
        raise MetadataError("metadata block truncated")
    try:
        meta = json.loads(raw[start : start + meta_len].decode("utf-8"))
        width, height = int(meta["width"]), int(meta["height"])
        declared = int(meta["payload_bytes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise MetadataError(f"unreadable metadata: {exc}") from exc
    payload = raw[start + meta_len :]
    if len(payload) != declared or declared % 4:
        raise PayloadSizeError(f"payload has {len(payload)} bytes, header declares {declared}")
    if width < 1 or height < 1 or width * height * 4 != declared:
        raise DimensionMismatchError(
            f"{width}x{height} image needs {width * height} floats, payload holds {declared // 4}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("payload contains non-finite values")
    mask = _rle_decode(meta.get("mask_rle", [width * height]), width * height).reshape(height, width)
    return DetectorImage(
        data=values.astype(np.float64),
        beam_center=tuple(meta["beam_center"]),
        mask=mask,
        acq_time=meta.get("acq_time"),
        meta=meta.get("meta", {}),
    )


def write_image(path: Union[str, Path], image: DetectorImage) -> None:
    """Write ``image``; pixel values are stored as float32."""
    Path(path).write_bytes(encode_image(image))


def read_image(path: Union[str, Path]) -> DetectorImage:
    return decode_image(Path(path).read_bytes())
