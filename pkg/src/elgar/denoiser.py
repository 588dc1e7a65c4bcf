"""Conditional denoising network: gated transformer blocks over frame tokens.

Each block runs self-attention, cross-attention over the per-frame
condition vectors, and a feed-forward sublayer. A timestep embedding
(sinusoidal map followed by a two-layer head) drives per-sublayer
adaptive layer-norm modulation: scale and shift applied after the norm,
and a gate applied immediately before the residual add. All gate heads
start at exactly zero, so a freshly initialized network is the identity
on its token stream: the output is just the output projection of the
embedded input, independent of the condition. A dropped condition is
replaced by a learned null token, never by zeros.

Parameter count for blocks B, width d, condition dim D, max frames M:

    count(B, d, D, M) = (25 B + 4) d^2 + (2 M + D + 22 B + 625) d + 309

(token and output projections 309d + d and 309d + 309, two positional
tables M d each, null token d, timestep head 2 d^2 + 2 d, per block
25 d^2 + 22 d, final modulation head 2 d^2 + 2 d.)
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import NonFiniteActivation, ShapeMismatch
from .motion import FEATURE_DIM

CHECKPOINT_MAGIC = b"ELGC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DenoiserConfig:
    blocks: int = 2
    dim: int = 64
    heads: int = 4
    cond_dim: int = 4
    max_frames: int = 150

    def __post_init__(self):
        if self.blocks < 1:
            raise ShapeMismatch("need at least one block")
        if self.dim % self.heads:
            raise ShapeMismatch("latent dim must be divisible by the head count")

    def as_dict(self) -> dict:
        return {
            "blocks": self.blocks,
            "dim": self.dim,
            "heads": self.heads,
            "cond_dim": self.cond_dim,
            "max_frames": self.max_frames,
        }

    def param_count(self) -> int:
        b, d, dc, m = self.blocks, self.dim, self.cond_dim, self.max_frames
        return (25 * b + 4) * d * d + (2 * m + dc + 22 * b + 625) * d + FEATURE_DIM


class DenoiserParams:
    """Named parameter arrays in a fixed declaration order."""

    def __init__(self, config: DenoiserConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        self.arrays = arrays

    @classmethod
    def initialize(cls, config: DenoiserConfig, seed: int = 0) -> "DenoiserParams":
        rng = np.random.default_rng(seed)
        d = config.dim
        a: dict[str, np.ndarray] = {}

        def normal(name, shape, std=0.02):
            a[name] = std * rng.standard_normal(shape)

        def zeros(name, shape):
            a[name] = np.zeros(shape)

        normal("token_w", (FEATURE_DIM, d))
        zeros("token_b", (d,))
        # positional tables start at token scale so frame identity is visible
        # against the noised input from the first step
        normal("pos", (config.max_frames, d), std=0.3)
        normal("cond_w", (config.cond_dim, d))
        zeros("cond_b", (d,))
        normal("cond_pos", (config.max_frames, d), std=0.3)
        normal("null_cond", (1, d))
        normal("time_w1", (d, d))
        zeros("time_b1", (d,))
        normal("time_w2", (d, d))
        zeros("time_b2", (d,))
        for i in range(config.blocks):
            p = f"b{i}_"
            zeros(p + "adaln_w", (d, 9 * d))  # adaLN-Zero: heads start at zero
            zeros(p + "adaln_b", (9 * d,))
            for sub in ("sa", "ca"):
                for mat in ("q", "k", "v", "o"):
                    normal(p + f"{sub}_w{mat}", (d, d))
                    zeros(p + f"{sub}_b{mat}", (d,))
            normal(p + "ff_w1", (d, 4 * d))
            zeros(p + "ff_b1", (4 * d,))
            normal(p + "ff_w2", (4 * d, d))
            zeros(p + "ff_b2", (d,))
        zeros("final_adaln_w", (d, 2 * d))
        zeros("final_adaln_b", (2 * d,))
        normal("out_w", (d, FEATURE_DIM))
        zeros("out_b", (FEATURE_DIM,))

        total = sum(v.size for v in a.values())
        assert total == config.param_count(), (total, config.param_count())
        return cls(config, a)

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()])


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of a scalar timestep, shape (1, dim)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = float(t) * freqs
    emb = np.concatenate([np.cos(args), np.sin(args)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb[None, :]


def _attention(xq, xkv, tensors, prefix, heads):
    d = xq.data.shape[-1]
    dh = d // heads
    fq = xq.data.shape[0]
    fk = xkv.data.shape[0]

    def heads_of(x, n, which):
        h = ad.linear(x, tensors[prefix + f"w{which}"], tensors[prefix + f"b{which}"])
        return ad.transpose(ad.reshape(h, (n, heads, dh)), (1, 0, 2))

    q = heads_of(xq, fq, "q")
    k = heads_of(xkv, fk, "k")
    v = heads_of(xkv, fk, "v")
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
    attn = ad.softmax(scores)
    mixed = ad.reshape(ad.transpose(ad.matmul(attn, v), (1, 0, 2)), (fq, d))
    return ad.linear(mixed, tensors[prefix + "wo"], tensors[prefix + "bo"])


def _modulate(x, scale_t, shift_t):
    return ad.add(ad.mul(x, ad.add_const(scale_t, 1.0)), shift_t)


def forward_with_tape(
    params: DenoiserParams,
    x_t: np.ndarray,
    t: int,
    cond: np.ndarray | None,
) -> tuple[ad.Tensor, dict[str, ad.Tensor]]:
    """Build the forward graph; returns the output tensor and the parameter
    tensors so a caller can read gradients after backward."""
    cfg = params.config
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.ndim != 2 or x_t.shape[1] != FEATURE_DIM:
        raise ShapeMismatch(f"expected (F, {FEATURE_DIM}) input, got {x_t.shape}")
    n = x_t.shape[0]
    if n > cfg.max_frames:
        raise ShapeMismatch(f"{n} frames exceed the configured maximum {cfg.max_frames}")
    if t < 1:
        raise ShapeMismatch("timestep must be at least 1")
    if cond is not None:
        cond = np.asarray(cond, dtype=np.float64)
        if cond.shape != (n, cfg.cond_dim):
            raise ShapeMismatch(f"condition must be (F, {cfg.cond_dim}), got {cond.shape}")

    tensors = {k: ad.Tensor(v) for k, v in params.arrays.items()}
    idx = np.arange(n)

    x = ad.add(
        ad.linear(ad.Tensor(x_t), tensors["token_w"], tensors["token_b"]),
        ad.gather(tensors["pos"], idx),
    )
    if cond is None:
        kv = tensors["null_cond"]
    else:
        kv = ad.add(
            ad.linear(ad.Tensor(cond), tensors["cond_w"], tensors["cond_b"]),
            ad.gather(tensors["cond_pos"], idx),
        )

    temb = ad.linear(ad.Tensor(timestep_embedding(t, cfg.dim)), tensors["time_w1"], tensors["time_b1"])
    temb = ad.linear(ad.gelu(temb), tensors["time_w2"], tensors["time_b2"])

    for i in range(cfg.blocks):
        p = f"b{i}_"
        mods = ad.split(ad.linear(temb, tensors[p + "adaln_w"], tensors[p + "adaln_b"]), 9)
        sa_in = _modulate(ad.layer_norm(x), mods[0], mods[1])
        sa = _attention(sa_in, sa_in, tensors, p + "sa_", cfg.heads)
        x = ad.add(x, ad.mul(mods[2], sa))
        ca_in = _modulate(ad.layer_norm(x), mods[3], mods[4])
        ca = _attention(ca_in, kv, tensors, p + "ca_", cfg.heads)
        x = ad.add(x, ad.mul(mods[5], ca))
        ff_in = _modulate(ad.layer_norm(x), mods[6], mods[7])
        ff = ad.linear(ad.gelu(ad.linear(ff_in, tensors[p + "ff_w1"], tensors[p + "ff_b1"])), tensors[p + "ff_w2"], tensors[p + "ff_b2"])
        x = ad.add(x, ad.mul(mods[8], ff))

    fmods = ad.split(ad.linear(temb, tensors["final_adaln_w"], tensors["final_adaln_b"]), 2)
    x = _modulate(ad.layer_norm(x), fmods[0], fmods[1])
    out = ad.linear(x, tensors["out_w"], tensors["out_b"])
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteActivation("denoiser produced NaN or inf")
    return out, tensors


def denoiser_forward(
    params: DenoiserParams, x_t: np.ndarray, t: int, cond: np.ndarray | None
) -> np.ndarray:
    """Predicted clean signal (F, 309)."""
    return forward_with_tape(params, x_t, t, cond)[0].data


def write_checkpoint(path: str | Path, params: DenoiserParams) -> None:
    """Binary checkpoint: magic, version, config echo, then every parameter
    as little-endian float64 in declaration order."""
    cfg_blob = json.dumps(params.config.as_dict(), sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(cfg_blob)))
    buf.write(cfg_blob)
    for v in params.arrays.values():
        buf.write(v.astype("<f8").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> DenoiserParams:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ShapeMismatch("not a checkpoint file")
    version, cfg_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise ShapeMismatch(f"unsupported checkpoint version {version}")
    cfg = DenoiserConfig(**json.loads(raw[12 : 12 + cfg_len].decode("utf-8")))
    template = DenoiserParams.initialize(cfg, seed=0)
    offset = 12 + cfg_len
    arrays: dict[str, np.ndarray] = {}
    for name, ref in template.arrays.items():
        n = ref.size
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(ref.shape).copy()
        offset += 8 * n
    if offset != len(raw):
        raise ShapeMismatch("checkpoint length disagrees with its config")
    return DenoiserParams(cfg, arrays)
