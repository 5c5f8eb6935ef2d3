"""Shared convolutional encoder with a pathology head and a patient-matching head.

Encoder, for a normalised log-mel input of shape (bands, frames)::

    fixed average pool (input_pool)          -> (1, H0, W0)
    append a band-coordinate channel         -> (2, H0, W0)
    conv k x k, `channels` maps, ReLU        -> (C, H0-k+1, W0-k+1)
    2 x 2 average pool                       -> (C, H1, W1)
    conv k x k, `embed_dim` maps, ReLU       -> (D, H1-k+1, W1-k+1)
    global average pool                      -> z in R^D

Heads are affine maps of z: ``main`` (3 logits, or 2 in 2-label mode) and
``aux`` (2 logits).  The coordinate channel (a fixed ramp from -1 at the
lowest band to +1 at the highest) lets the first-layer filters respond to
where a pattern sits in frequency, which global pooling would otherwise
discard.  Gradients are computed by hand; the checks in the test
suite compare them against central finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .augment import pad_or_crop
from .features import N_MELS, FeatureNorm, apply_norm, mel_spectrogram


@dataclass(frozen=True)
class Architecture:
    n_bands: int = N_MELS
    input_pool: tuple[int, int] = (4, 4)
    kernel: int = 3
    channels: int = 16
    embed_dim: int = 64
    n_main: int = 3
    coord_channel: bool = True

    @property
    def in_channels(self) -> int:
        return 2 if self.coord_channel else 1

    def __post_init__(self):
        object.__setattr__(self, "input_pool", tuple(int(p) for p in self.input_pool))
        if self.n_main not in (2, 3):
            raise ValueError(f"n_main must be 2 or 3, got {self.n_main}")
        if min(self.input_pool) < 1 or self.kernel < 1 or self.channels < 1 or self.embed_dim < 1:
            raise ValueError("architecture sizes must be positive")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k, c, d = self.kernel, self.channels, self.embed_dim
        return {
            "conv1.weight": (c, self.in_channels, k, k),
            "conv1.bias": (c,),
            "conv2.weight": (d, c, k, k),
            "conv2.bias": (d,),
            "main.weight": (self.n_main, d),
            "main.bias": (self.n_main,),
            "aux.weight": (2, d),
            "aux.bias": (2,),
        }


ENCODER_PARAMS = ("conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias")


@dataclass
class ModelParams:
    arch: Architecture
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = self.arch.param_shapes()
        if set(self.tensors) != set(shapes):
            raise ValueError(f"parameter names {sorted(self.tensors)} do not match {sorted(shapes)}")
        for name, shape in shapes.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())


def init_params(arch: Architecture, seed: int = 0, dtype=np.float64, aux_init: str = "random") -> ModelParams:
    """He-normal conv weights, small random head weights, zero biases.

    Each parameter group draws from its own child seed, so changing how one
    group is initialised leaves the others untouched.
    """
    enc_seq, main_seq, aux_seq = np.random.SeedSequence(seed).spawn(3)
    enc, main, aux = (np.random.default_rng(s) for s in (enc_seq, main_seq, aux_seq))
    shapes = arch.param_shapes()
    k, c, d = arch.kernel, arch.channels, arch.embed_dim
    t = {
        "conv1.weight": enc.normal(0.0, np.sqrt(2.0 / (arch.in_channels * k * k)), shapes["conv1.weight"]),
        "conv1.bias": np.zeros(c),
        "conv2.weight": enc.normal(0.0, np.sqrt(2.0 / (c * k * k)), shapes["conv2.weight"]),
        "conv2.bias": np.zeros(d),
        "main.weight": main.normal(0.0, np.sqrt(1.0 / d), shapes["main.weight"]),
        "main.bias": np.zeros(arch.n_main),
    }
    if aux_init == "random":
        t["aux.weight"] = aux.normal(0.0, np.sqrt(1.0 / d), shapes["aux.weight"])
    elif aux_init == "zeros":
        t["aux.weight"] = np.zeros(shapes["aux.weight"])
    else:
        raise ValueError(f"unknown aux_init {aux_init!r}")
    t["aux.bias"] = np.zeros(2)
    return ModelParams(arch, {name: v.astype(dtype) for name, v in t.items()})


# --------------------------------------------------------------------------
# layers


def avg_pool(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Non-overlapping average pool over the last two axes; ragged edges are dropped."""
    *lead, h, w = x.shape
    ho, wo = h // ph, w // pw
    if ho == 0 or wo == 0:
        raise ValueError(f"input {h}x{w} smaller than pool {ph}x{pw}")
    x = x[..., : ho * ph, : wo * pw].reshape(*lead, ho, ph, wo, pw)
    return x.mean(axis=(-3, -1))


def avg_pool_backward(dout: np.ndarray, in_shape: tuple[int, ...], ph: int, pw: int) -> np.ndarray:
    *lead, ho, wo = dout.shape
    dx = np.zeros(in_shape, dtype=dout.dtype)
    spread = np.repeat(np.repeat(dout / (ph * pw), ph, axis=-2), pw, axis=-1)
    dx[..., : ho * ph, : wo * pw] = spread
    return dx


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Valid cross-correlation. x: (B, C, H, W), w: (F, C, k, k) -> (B, F, H-k+1, W-k+1)."""
    bsz, c, h, wd = x.shape
    f, _, k, _ = w.shape
    ho, wo = h - k + 1, wd - k + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"input {h}x{wd} smaller than kernel {k}")
    cols = sliding_window_view(x, (k, k), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, c * k * k)
    out = cols @ w.reshape(f, -1).T + b
    return out.reshape(bsz, ho, wo, f).transpose(0, 3, 1, 2), cols


def conv2d_backward(dout: np.ndarray, cols: np.ndarray, x_shape, w: np.ndarray):
    bsz, c, h, wd = x_shape
    f, _, k, _ = w.shape
    ho, wo = h - k + 1, wd - k + 1
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(f, -1)).reshape(bsz, ho, wo, c, k, k)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx, dw, db


# --------------------------------------------------------------------------
# forward / losses / backward


class Outputs(NamedTuple):
    z: np.ndarray
    main_logits: np.ndarray
    aux_logits: np.ndarray


def _as_batch(params: ModelParams, spec: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(spec)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != params.arch.n_bands:
        raise ValueError(f"expected (batch, {params.arch.n_bands}, frames) input, got {np.shape(spec)}")
    return x, single


def _forward(params: ModelParams, x: np.ndarray):
    a = params.arch
    p0 = avg_pool(x, *a.input_pool)[:, None].astype(params["conv1.weight"].dtype, copy=False)
    if a.coord_channel:
        bsz, _, h, w = p0.shape
        ramp = np.broadcast_to(np.linspace(-1.0, 1.0, h, dtype=p0.dtype)[None, None, :, None], (bsz, 1, h, w))
        p0 = np.concatenate([p0, ramp], axis=1)
    a1, cols1 = conv2d(p0, params["conv1.weight"], params["conv1.bias"])
    h1 = np.maximum(a1, 0.0)
    p1 = avg_pool(h1, 2, 2)
    a2, cols2 = conv2d(p1, params["conv2.weight"], params["conv2.bias"])
    h2 = np.maximum(a2, 0.0)
    z = h2.mean(axis=(2, 3))
    main = z @ params["main.weight"].T + params["main.bias"]
    aux = z @ params["aux.weight"].T + params["aux.bias"]
    cache = (p0.shape, cols1, a1, h1.shape, p1.shape, cols2, a2, z)
    return Outputs(z, main, aux), cache


def forward(params: ModelParams, spec: np.ndarray) -> Outputs:
    """Embedding and logits for one (bands, frames) spectrogram or a batch of them."""
    x, single = _as_batch(params, spec)
    out, _ = _forward(params, x)
    if single:
        return Outputs(out.z[0], out.main_logits[0], out.aux_logits[0])
    return out


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce_with_logits(logits, targets) -> np.ndarray:
    """Element-wise binary cross-entropy in the overflow-free logit form."""
    l = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    return np.maximum(l, 0.0) - l * y + np.log1p(np.exp(-np.abs(l)))


def loss_main(main_logits, y_main) -> float:
    """Mean binary cross-entropy over label dimensions (and over the batch)."""
    l = np.asarray(main_logits)
    if l.shape != np.shape(y_main):
        raise ValueError(f"logits {l.shape} and targets {np.shape(y_main)} differ in shape")
    return float(bce_with_logits(l, y_main).mean())


def cross_entropy(aux_logits, y_aux) -> np.ndarray:
    l = np.atleast_2d(np.asarray(aux_logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y_aux)).astype(np.int64)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("y_aux must be 0 or 1")
    lse = np.logaddexp(l[:, 0], l[:, 1])
    return lse - l[np.arange(len(y)), y]


def loss_aux(aux_logits, y_aux) -> float:
    """Two-class softmax cross-entropy, averaged over the batch."""
    return float(cross_entropy(aux_logits, y_aux).mean())


def loss_total(main: float, aux: float, alpha: float) -> float:
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return main + alpha * aux


class Losses(NamedTuple):
    main: float
    aux: float
    total: float


class NonFiniteLossError(FloatingPointError):
    pass


def backward(params: ModelParams, specs: np.ndarray, y_main: np.ndarray, y_aux: np.ndarray,
             alpha: float) -> tuple[Losses, dict[str, np.ndarray]]:
    """Batch-mean losses and gradients of ``main + alpha * aux`` for every parameter."""
    x, _ = _as_batch(params, specs)
    y_main = np.asarray(y_main, dtype=np.float64).reshape(len(x), -1)
    y_aux = np.asarray(y_aux).reshape(len(x))
    out, (p0_shape, cols1, a1, h1_shape, p1_shape, cols2, a2, z) = _forward(params, x)
    lm, la = loss_main(out.main_logits, y_main), loss_aux(out.aux_logits, y_aux)
    losses = Losses(lm, la, loss_total(lm, la, alpha))
    if not np.isfinite(losses.total):
        raise NonFiniteLossError(
            f"non-finite loss (main={lm!r}, aux={la!r}); max |logit| = "
            f"{np.abs(out.main_logits).max():.3g}, params finite: {params.is_finite()}")

    bsz = len(x)
    dmain = (sigmoid(out.main_logits) - y_main) / y_main.size
    probs = np.exp(out.aux_logits - np.logaddexp(out.aux_logits[:, :1], out.aux_logits[:, 1:]))
    onehot = np.zeros_like(probs)
    onehot[np.arange(bsz), y_aux.astype(np.int64)] = 1.0
    daux = alpha * (probs - onehot) / bsz

    g = {
        "main.weight": dmain.T @ z,
        "main.bias": dmain.sum(axis=0),
        "aux.weight": daux.T @ z,
        "aux.bias": daux.sum(axis=0),
    }
    dz = dmain @ params["main.weight"] + daux @ params["aux.weight"]
    ho, wo = a2.shape[2:]
    da2 = np.broadcast_to(dz[:, :, None, None] / (ho * wo), a2.shape) * (a2 > 0)
    dp1, g["conv2.weight"], g["conv2.bias"] = conv2d_backward(da2, cols2, p1_shape, params["conv2.weight"])
    dh1 = avg_pool_backward(dp1, h1_shape, 2, 2)
    da1 = dh1 * (a1 > 0)
    _, g["conv1.weight"], g["conv1.bias"] = conv2d_backward(da1, cols1, p0_shape, params["conv1.weight"])
    return losses, g


def batch_losses(params: ModelParams, specs: np.ndarray, y_main, y_aux, alpha: float) -> Losses:
    out = forward(params, np.asarray(specs))
    lm = loss_main(np.atleast_2d(out.main_logits), np.asarray(y_main, dtype=np.float64).reshape(len(specs), -1))
    la = loss_aux(out.aux_logits, y_aux)
    return Losses(lm, la, loss_total(lm, la, alpha))


# --------------------------------------------------------------------------
# checkpoint
#
# little-endian layout:
#   8s  magic b"PCMCLCKP"
#   u32 format version
#   u32 n = length of the JSON metadata block, then n bytes of UTF-8 JSON
#   u32 number of tensors, then per tensor:
#       u16 name length, name bytes (UTF-8)
#       u8  ndim, ndim x u32 shape
#       prod(shape) float64 values, row-major

CKPT_MAGIC = b"PCMCLCKP"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        key = name.encode()
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    data = memoryview(Path(path).read_bytes())
    if bytes(data[:8]) != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    meta = json.loads(bytes(data[pos:pos + n]))
    pos += n
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", data, pos)
        name = bytes(data[pos + 2:pos + 2 + klen]).decode()
        pos += 2 + klen
        (ndim,) = struct.unpack_from("<B", data, pos)
        shape = struct.unpack_from(f"<{ndim}I", data, pos + 1)
        pos += 1 + 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return tensors, meta


def arch_to_dict(arch: Architecture) -> dict:
    d = asdict(arch)
    d["input_pool"] = list(arch.input_pool)
    return d


@dataclass
class TrainedModel:
    """Everything inference needs: weights, feature normalisation, label mode, input length."""

    params: ModelParams
    norm: FeatureNorm
    label_mode: str = "three"
    target_len: int = 160000

    def features(self, waveform: np.ndarray) -> np.ndarray:
        """Normalised log-mel of ``waveform`` repeat-padded or centre-cropped to ``target_len``."""
        return apply_norm(mel_spectrogram(pad_or_crop(waveform, self.target_len)), self.norm)


def save_model(path: str | Path, model: TrainedModel, extra_meta: dict | None = None) -> None:
    tensors = dict(model.params.tensors)
    tensors["norm.mean"] = model.norm.mean
    tensors["norm.std"] = model.norm.std
    meta = {
        "arch": arch_to_dict(model.params.arch),
        "label_mode": model.label_mode,
        "target_len": model.target_len,
    }
    if extra_meta:
        meta["extra"] = extra_meta
    save_checkpoint(path, tensors, meta)


def load_model(path: str | Path) -> tuple[TrainedModel, dict]:
    tensors, meta = load_checkpoint(path)
    norm = FeatureNorm(mean=tensors.pop("norm.mean"), std=tensors.pop("norm.std"))
    arch = Architecture(**meta["arch"])
    model = TrainedModel(ModelParams(arch, tensors), norm, meta["label_mode"], meta["target_len"])
    return model, meta.get("extra", {})
