"""Residual convolutional denoiser with hand-written backpropagation.

The network predicts the noise: D(z) = z - net(z), where ``net`` is a stack
of same-size 3x3 convolutions with ReLU between layers and a linear last
layer.  Tensors are channels-last, ``(batch, height, width, channels)``.

Training minimises the per-pixel mean squared error between clean patches
and D(noisy) with SGD + momentum.  ``pretrain`` fits a generic prior on a
source corpus; ``adapt`` fine-tunes it on a few target-domain pairs.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import ContractViolation, substream
from .priors import PriorHandle

log = logging.getLogger(__name__)

PAD_MODES = {"symmetric": "symmetric", "periodic": "wrap"}
CKPT_MAGIC = b"PRSANSNN"
CKPT_VERSION = 1


@dataclass(eq=False)
class ResidualDenoiserParams:
    weights: list  # per layer, shape (k, k, c_in, c_out)
    biases: list  # per layer, shape (c_out,)
    sigma_train: float = 5.0 / 255.0
    provenance: str = "zero_start"
    adapted_pairs: Optional[int] = None
    pad_mode: str = "symmetric"
    seed: Optional[int] = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractViolation("need one bias vector per layer and at least one layer")
        if self.weights[0].shape[2] != 1 or self.weights[-1].shape[3] != 1:
            raise ContractViolation("first layer must take 1 channel and last layer emit 1")
        for w, b in zip(self.weights, self.biases):
            k = w.shape[0]
            if w.ndim != 4 or w.shape[1] != k or k % 2 == 0 or b.shape != (w.shape[3],):
                raise ContractViolation("kernels must be odd, square, with matching biases")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[3] != b.shape[2]:
                raise ContractViolation("layer channel counts do not chain")
        if self.pad_mode not in PAD_MODES:
            raise ContractViolation(f"pad_mode must be one of {sorted(PAD_MODES)}")
        if self.provenance not in ("zero_start", "pretrained", "adapted"):
            raise ContractViolation(f"bad provenance {self.provenance!r}")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def channels(self) -> list[int]:
        return [self.weights[0].shape[2]] + [w.shape[3] for w in self.weights]

    @property
    def kernel(self) -> int:
        return self.weights[0].shape[0]

    def copy(self, **changes) -> "ResidualDenoiserParams":
        changes.setdefault("weights", self.weights)
        changes.setdefault("biases", self.biases)
        changes["weights"] = [np.array(w, dtype=np.float64) for w in changes["weights"]]
        changes["biases"] = [np.array(b, dtype=np.float64) for b in changes["biases"]]
        return replace(self, **changes)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.weights + self.biases)


def init_params(depth: int = 5, channels: int = 16, kernel: int = 3, seed: int = 0,
                sigma_train: float = 5.0 / 255.0, zero: bool = False,
                final_scale: float = 0.01, pad_mode: str = "symmetric") -> ResidualDenoiserParams:
    """He-scaled seeded Gaussian weights; the last layer is shrunk by
    ``final_scale`` so an untrained net starts close to the identity."""
    if depth < 1:
        raise ContractViolation("depth must be >= 1")
    chans = [1] + [channels] * (depth - 1) + [1]
    rng = substream(seed, "init")
    weights, biases = [], []
    for i in range(depth):
        shape = (kernel, kernel, chans[i], chans[i + 1])
        if zero:
            w = np.zeros(shape)
        else:
            w = rng.standard_normal(shape) * np.sqrt(2.0 / (kernel * kernel * chans[i]))
            if i == depth - 1:
                w *= final_scale
        weights.append(w)
        biases.append(np.zeros(chans[i + 1]))
    return ResidualDenoiserParams(weights, biases, sigma_train, "zero_start", None, pad_mode, seed)


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------


def _pad(a: np.ndarray, r: int, mode: str) -> np.ndarray:
    if r == 0:
        return a
    return np.pad(a, ((0, 0), (r, r), (r, r), (0, 0)), mode=PAD_MODES[mode])


def _pad_adjoint(gp: np.ndarray, r: int, mode: str) -> np.ndarray:
    """Scatter-add the gradient of a padded tensor back onto the unpadded one."""
    if r == 0:
        return gp
    for axis in (1, 2):
        n = gp.shape[axis] - 2 * r
        src = np.pad(np.arange(n), r, mode=PAD_MODES[mode])
        inner = np.take(gp, np.arange(r, r + n), axis=axis).copy()
        for i in list(range(r)) + list(range(r + n, n + 2 * r)):
            sl = [slice(None)] * 4
            sl[axis] = src[i]
            so = [slice(None)] * 4
            so[axis] = i
            inner[tuple(sl)] += gp[tuple(so)]
        gp = inner
    return gp


def _windows(ap: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    """im2col: (B, H, W, k*k*C) view-derived copy of k x k neighbourhoods."""
    cols = np.lib.stride_tricks.sliding_window_view(ap, (k, k), axis=(1, 2))
    # (B, H, W, C, k, k) -> (B, H, W, k, k, C)
    return cols.transpose(0, 1, 2, 4, 5, 3).reshape(ap.shape[0], h, w, -1)


def _conv(a, weight, bias, mode):
    k = weight.shape[0]
    b, h, w, _ = a.shape
    ap = _pad(a, k // 2, mode)
    cols = _windows(ap, k, h, w)
    return cols @ weight.reshape(-1, weight.shape[3]) + bias, ap


def _as_batch(z) -> tuple[np.ndarray, tuple]:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 2:
        return z[None, :, :, None], z.shape
    if z.ndim == 3:
        return z[:, :, :, None], z.shape
    raise ContractViolation(f"expected an image or a stack of images, got shape {z.shape}")


def net_forward(params: ResidualDenoiserParams, x: np.ndarray, keep: bool = False):
    """Run the convolution stack on a (B, H, W, 1) batch.

    With ``keep`` also returns the padded inputs and pre-activations that
    :func:`_net_backward` needs.
    """
    cache = []
    a = x
    last = params.depth - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        pre, ap = _conv(a, w, b, params.pad_mode)
        if keep:
            cache.append((ap, pre))
        a = pre if i == last else np.maximum(pre, 0.0)
    return (a, cache) if keep else a


def denoiser_forward(params: ResidualDenoiserParams, z) -> np.ndarray:
    """D(z) = z - net(z) for one image (H, W) or a stack (B, H, W)."""
    zb, shape = _as_batch(z)
    if not np.all(np.isfinite(zb)):
        raise ContractViolation("denoiser input must be finite")
    return (zb - net_forward(params, zb)).reshape(shape)


class Gradients(NamedTuple):
    weights: list
    biases: list


def _net_backward(params, cache, g_out):
    """Reverse pass through the stack given d loss / d net output."""
    dws, dbs = [None] * params.depth, [None] * params.depth
    g = g_out
    last = params.depth - 1
    for i in range(last, -1, -1):
        w = params.weights[i]
        ap, pre = cache[i]
        if i != last:
            g = g * (pre > 0)
        k = w.shape[0]
        bsz, h, wd, cout = g.shape
        g2 = g.reshape(-1, cout)
        cols = _windows(ap, k, h, wd).reshape(-1, k * k * w.shape[2])
        dws[i] = (cols.T @ g2).reshape(w.shape)
        dbs[i] = g2.sum(axis=0)
        if i == 0:
            break
        dcols = (g2 @ w.reshape(-1, cout).T).reshape(bsz, h, wd, k, k, w.shape[2])
        dap = np.zeros(ap.shape)
        for di in range(k):
            for dj in range(k):
                dap[:, di : di + h, dj : dj + wd, :] += dcols[:, :, :, di, dj, :]
        g = _pad_adjoint(dap, k // 2, params.pad_mode)
    return Gradients(dws, dbs)


def loss_and_grad(params: ResidualDenoiserParams, clean, noisy):
    """Mean over the batch of ||clean - D(noisy)||^2 / (pixels per image), and its gradient."""
    cb, _ = _as_batch(clean)
    nb, _ = _as_batch(noisy)
    if cb.shape != nb.shape or cb.shape[0] == 0:
        raise ContractViolation("clean and noisy batches must be non-empty and the same shape")
    out, cache = net_forward(params, nb, keep=True)
    err = cb - nb + out  # clean - (noisy - net(noisy))
    n = err.size
    loss = float(np.sum(err**2) / n)
    return loss, _net_backward(params, cache, 2.0 * err / n)


def mse(params: ResidualDenoiserParams, clean, noisy, batch: int = 32) -> float:
    """Per-pixel MSE of the denoiser over a dataset, in memory-bounded chunks."""
    cb, _ = _as_batch(clean)
    nb, _ = _as_batch(noisy)
    total = 0.0
    for s in range(0, cb.shape[0], batch):
        d = nb[s : s + batch] - net_forward(params, nb[s : s + batch])
        total += float(np.sum((cb[s : s + batch] - d) ** 2))
    return total / cb.size


# --------------------------------------------------------------------------
# Data
# --------------------------------------------------------------------------


@dataclass(eq=False)
class PairDataset:
    """Clean/noisy patch pairs; ``clean`` and ``noisy`` are (N, p, p) arrays."""

    clean: np.ndarray
    noisy: np.ndarray
    role: str = "source"
    noise_sigma: Optional[float] = None

    def __post_init__(self):
        self.clean = np.asarray(self.clean, dtype=np.float64).reshape(-1, *np.shape(self.clean)[-2:])
        self.noisy = np.asarray(self.noisy, dtype=np.float64).reshape(self.clean.shape)
        if self.role not in ("source", "target"):
            raise ContractViolation("role must be 'source' or 'target'")
        if self.clean.shape[1] != self.clean.shape[2]:
            raise ContractViolation("patches must be square")

    def __len__(self) -> int:
        return self.clean.shape[0]

    @property
    def patch(self) -> int:
        return self.clean.shape[1]

    def subset(self, idx) -> "PairDataset":
        idx = np.asarray(idx, dtype=int)
        return PairDataset(self.clean[idx], self.noisy[idx], self.role, self.noise_sigma)

    def head(self, k: int) -> "PairDataset":
        return self.subset(np.arange(min(k, len(self))))

    @classmethod
    def synthesize(cls, clean, sigma: float, role: str, seed: int) -> "PairDataset":
        """Pairs (x, x + n) with one fixed AWGN realisation n ~ N(0, sigma^2) per patch."""
        clean = np.asarray(clean, dtype=np.float64)
        if clean.size == 0:
            return cls(np.zeros((0, 1, 1)), np.zeros((0, 1, 1)), role, sigma)
        noise = substream(seed, "noise").normal(0.0, sigma, clean.shape)
        return cls(clean, clean + noise, role, sigma)


def extract_patches(images: Sequence[np.ndarray], patch: int, per_image: int, seed: int) -> np.ndarray:
    """``per_image`` seeded random crops of size ``patch`` from each image."""
    rng = substream(seed, "patches")
    out = []
    for img in images:
        img = np.asarray(img, dtype=np.float64)
        h, w = img.shape
        if h < patch or w < patch:
            raise ContractViolation(f"image {img.shape} smaller than patch {patch}")
        for _ in range(per_image):
            i = rng.integers(0, h - patch + 1)
            j = rng.integers(0, w - patch + 1)
            out.append(img[i : i + patch, j : j + patch])
    return np.array(out).reshape(-1, patch, patch)


def texture_images(n: int, size: int, seed: int) -> list[np.ndarray]:
    """Procedural grayscale images in [0, 1]: mixtures of smooth blobs, oriented
    gratings, piecewise-constant rectangles and radial ramps."""
    rng = substream(seed, "textures")
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = []
    for _ in range(n):
        img = np.zeros((size, size))
        for _ in range(rng.integers(2, 6)):
            kind = rng.integers(0, 4)
            amp = rng.uniform(0.2, 1.0)
            if kind == 0:
                cx, cy, s = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.05, 0.3)
                img += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s**2))
            elif kind == 1:
                th, f, ph = rng.uniform(0, np.pi), rng.uniform(1, 8), rng.uniform(0, 2 * np.pi)
                img += amp * 0.5 * (1 + np.sin(2 * np.pi * f * (xx * np.cos(th) + yy * np.sin(th)) + ph))
            elif kind == 2:
                x0, x1 = np.sort(rng.uniform(0, 1, 2))
                y0, y1 = np.sort(rng.uniform(0, 1, 2))
                img += amp * ((xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1))
            else:
                cx, cy = rng.uniform(0, 1), rng.uniform(0, 1)
                r = np.hypot(xx - cx, yy - cy)
                img += amp * np.exp(-r / rng.uniform(0.05, 0.5))
        img -= img.min()
        if img.max() > 0:
            img /= img.max()
        out.append(img)
    return out


def load_image_dir(path, size: int) -> list[np.ndarray]:
    """Grayscale images from a directory, centre-cropped/resized to ``size`` and scaled to [0, 1]."""
    from PIL import Image

    out = []
    for p in sorted(Path(path).iterdir()):
        if p.suffix.lower() not in (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pgm"):
            continue
        im = Image.open(p).convert("L")
        s = min(im.size)
        left, top = (im.size[0] - s) // 2, (im.size[1] - s) // 2
        im = im.crop((left, top, left + s, top + s)).resize((size, size), Image.BILINEAR)
        out.append(np.asarray(im, dtype=np.float64) / 255.0)
    return out


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 0.3
    momentum: float = 0.9
    batch: int = 8
    seed: int = 0
    patch: int = 40
    sigma: float = 5.0 / 255.0
    depth: int = 5
    channels: int = 16
    kernel: int = 3
    val_fraction: float = 0.1
    clip: Optional[float] = 0.1  # max global gradient norm; None disables

    def __post_init__(self):
        if self.epochs < 0 or self.batch < 1 or self.patch < 1:
            raise ContractViolation("epochs >= 0, batch >= 1 and patch >= 1 required")
        if not (self.lr > 0 and 0 <= self.momentum < 1 and self.sigma > 0):
            raise ContractViolation("lr > 0, 0 <= momentum < 1 and sigma > 0 required")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainingCurve:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        for e, v in enumerate(self.val_loss):
            t = self.train_loss[e - 1] if e > 0 else float("nan")
            lines.append(f"{e},{t:.10g},{v:.10g}")
        return "\n".join(lines) + "\n"


def _dihedral(x: np.ndarray, code: int) -> np.ndarray:
    if code & 4:
        x = x.T
    return np.rot90(x, code & 3)


def _make_batch(data: PairDataset, idx, patch, rng):
    cs, ns = [], []
    p = data.patch
    for i in idx:
        code = int(rng.integers(0, 8))
        a = rng.integers(0, p - patch + 1) if p > patch else 0
        b = rng.integers(0, p - patch + 1) if p > patch else 0
        cs.append(_dihedral(data.clean[i, a : a + patch, b : b + patch], code))
        ns.append(_dihedral(data.noisy[i, a : a + patch, b : b + patch], code))
    return np.array(cs), np.array(ns)


def _split(data: PairDataset, fraction: float, seed: int):
    n = len(data)
    n_val = max(1, int(round(fraction * n))) if n > 1 else 0
    perm = substream(seed, "split").permutation(n)
    return data.subset(perm[n_val:]), data.subset(perm[:n_val])


def _fit(params: ResidualDenoiserParams, train: PairDataset, val: PairDataset, cfg: TrainConfig):
    """SGD + momentum with one 10x decay at 80% of epochs; keeps the best-validation snapshot."""
    patch = min(cfg.patch, train.patch)
    params = params.copy()
    vel_w = [np.zeros_like(w) for w in params.weights]
    vel_b = [np.zeros_like(b) for b in params.biases]
    rng = substream(cfg.seed, "shuffle")
    curve = TrainingCurve()
    best = params.copy()
    best_val = mse(params, val.clean, val.noisy) if len(val) else np.inf
    curve.val_loss.append(best_val)
    decay_at = int(0.8 * cfg.epochs)
    for epoch in range(cfg.epochs):
        lr = cfg.lr * (0.1 if epoch >= decay_at else 1.0)
        order = rng.permutation(len(train))
        losses = []
        for s in range(0, len(order), cfg.batch):
            c, nz = _make_batch(train, order[s : s + cfg.batch], patch, rng)
            loss, g = loss_and_grad(params, c, nz)
            losses.append(loss)
            if cfg.clip is not None:
                norm = np.sqrt(sum(float(np.sum(a * a)) for a in g.weights + g.biases))
                scale = min(1.0, cfg.clip / norm) if norm > 0 else 1.0
            else:
                scale = 1.0
            for i in range(params.depth):
                vel_w[i] = cfg.momentum * vel_w[i] - lr * scale * g.weights[i]
                vel_b[i] = cfg.momentum * vel_b[i] - lr * scale * g.biases[i]
                params.weights[i] += vel_w[i]
                params.biases[i] += vel_b[i]
        if not params.all_finite():
            raise FloatingPointError(f"training diverged in epoch {epoch}")
        curve.train_loss.append(float(np.mean(losses)))
        v = mse(params, val.clean, val.noisy) if len(val) else curve.train_loss[-1]
        curve.val_loss.append(v)
        if v < best_val:
            best_val, best = v, params.copy()
            curve.best_epoch = epoch + 1
        log.debug("epoch %d train %.4g val %.4g", epoch, curve.train_loss[-1], v)
    return best, curve


def pretrain(dataset: PairDataset, cfg: TrainConfig = TrainConfig(),
             validation: Optional[PairDataset] = None, init: Optional[ResidualDenoiserParams] = None):
    """Train a denoiser from scratch on source pairs.  Returns ``(params, curve)``."""
    if dataset.role != "source":
        raise ContractViolation("pretrain expects a source-role dataset")
    if len(dataset) == 0:
        raise ContractViolation("empty training dataset")
    if init is None:
        init = init_params(cfg.depth, cfg.channels, cfg.kernel, cfg.seed, cfg.sigma)
    train, val = (dataset, validation) if validation is not None else _split(dataset, cfg.val_fraction, cfg.seed)
    params, curve = _fit(init, train, val, cfg)
    return params.copy(provenance="pretrained", sigma_train=cfg.sigma, adapted_pairs=None), curve


def train_zero_start(dataset: PairDataset, cfg: TrainConfig = TrainConfig(),
                     validation: Optional[PairDataset] = None):
    """Baseline: train from a fresh initialisation on (typically few) target pairs."""
    if len(dataset) == 0:
        raise ContractViolation("empty training dataset")
    init = init_params(cfg.depth, cfg.channels, cfg.kernel, cfg.seed, cfg.sigma)
    train, val = (dataset, validation) if validation is not None else _split(dataset, cfg.val_fraction, cfg.seed)
    params, curve = _fit(init, train, val, cfg)
    return params.copy(provenance="zero_start"), curve


def adapt(source_params: ResidualDenoiserParams, target: PairDataset, cfg: TrainConfig = TrainConfig(),
          validation: Optional[PairDataset] = None):
    """Fine-tune ``source_params`` on target-domain pairs (same loop as :func:`pretrain`)."""
    if target.role != "target":
        raise ContractViolation("adapt expects a target-role dataset")
    if source_params.provenance == "zero_start":
        log.warning("adapting parameters that were never pretrained")
    k = len(target)
    if k == 0:
        return source_params.copy(provenance="adapted", adapted_pairs=0), TrainingCurve()
    train, val = (target, validation) if validation is not None else _split(target, cfg.val_fraction, cfg.seed)
    if len(train) == 0:
        train = target
    params, curve = _fit(source_params, train, val, cfg)
    return params.copy(provenance="adapted", adapted_pairs=k), curve


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path, params: ResidualDenoiserParams) -> None:
    """JSON header (architecture, provenance, sigma, seed) + little-endian f32 weights."""
    layers = [{"kernel": int(w.shape[0]), "in": int(w.shape[2]), "out": int(w.shape[3])}
              for w in params.weights]
    payload = b"".join(
        np.ascontiguousarray(w, dtype="<f4").tobytes() + np.ascontiguousarray(b, dtype="<f4").tobytes()
        for w, b in zip(params.weights, params.biases)
    )
    header = json.dumps({
        "layers": layers,
        "provenance": params.provenance,
        "adapted_pairs": params.adapted_pairs,
        "sigma_train": params.sigma_train,
        "pad_mode": params.pad_mode,
        "seed": params.seed,
        "payload_bytes": len(payload),
    }, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(header)) + header + payload)


def load_checkpoint(path) -> ResidualDenoiserParams:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError("not a denoiser checkpoint")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    head = json.loads(raw[16 : 16 + hlen])
    payload = raw[16 + hlen :]
    if len(payload) != head["payload_bytes"]:
        raise ValueError("checkpoint payload size mismatch")
    weights, biases, off = [], [], 0
    for layer in head["layers"]:
        shape = (layer["kernel"], layer["kernel"], layer["in"], layer["out"])
        n = int(np.prod(shape))
        weights.append(np.frombuffer(payload, "<f4", n, off).reshape(shape).astype(np.float64))
        off += 4 * n
        biases.append(np.frombuffer(payload, "<f4", layer["out"], off).astype(np.float64))
        off += 4 * layer["out"]
    return ResidualDenoiserParams(weights, biases, head["sigma_train"], head["provenance"],
                                  head["adapted_pairs"], head["pad_mode"], head["seed"])


class LearnedPrior(PriorHandle):
    kind = "learned"

    def __init__(self, params: ResidualDenoiserParams):
        self.params = params
        self.sigma = params.sigma_train

    def apply(self, z):
        return denoiser_forward(self.params, z)
