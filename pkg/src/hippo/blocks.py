"""Sequence encoder block with an attention branch and a convolution branch.

The attention branch is a pre-normalized single-head self-attention with
rotary position encoding on queries and keys, followed by a pre-normalized
SwiGLU feed-forward, each with a residual connection. The convolution
branch applies a point-wise projection, SiLU, and a depth-wise convolution
(also pre-normalized, residual). The branch outputs are blended by a
softmax over two learnable merge logits.

Sequences are stored rows-as-positions, (length, width). Validity masks
are boolean arrays over positions; masked positions never influence valid
ones (attention logits get -inf on masked keys, convolutions see zeros).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CONV_KERNEL_WIDTH = 3
FFN_MULT = 2


def rope_rotate(x: Tensor, position: int) -> Tensor:
    """Rotate one feature vector (width d, even) to encode a position."""
    if x.ndim != 1:
        raise ValueError("rope_rotate expects a 1-D vector")
    out = ad.rope(ad.reshape(x, (1, x.shape[0])), [position])
    return ad.reshape(out, (x.shape[0],))


@dataclass
class ConvLlamaParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ffn_gate: Tensor
    ffn_up: Tensor
    ffn_down: Tensor
    pw: Tensor
    dw: Tensor
    merge: Tensor
    g_attn: Tensor
    g_ffn: Tensor
    g_cnn: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{f}": getattr(self, f) for f in (
            "wq", "wk", "wv", "wo", "ffn_gate", "ffn_up", "ffn_down",
            "pw", "dw", "merge", "g_attn", "g_ffn", "g_cnn")}


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def init_conv_llama(rng: np.random.Generator, d: int,
                    k: int = CONV_KERNEL_WIDTH) -> ConvLlamaParams:
    if d % 2 != 0:
        raise ValueError("hidden width must be even for rotary pairs")
    h = FFN_MULT * d
    return ConvLlamaParams(
        wq=ad.parameter(_uniform(rng, d, (d, d))),
        wk=ad.parameter(_uniform(rng, d, (d, d))),
        wv=ad.parameter(_uniform(rng, d, (d, d))),
        wo=ad.parameter(_uniform(rng, d, (d, d))),
        ffn_gate=ad.parameter(_uniform(rng, d, (d, h))),
        ffn_up=ad.parameter(_uniform(rng, d, (d, h))),
        ffn_down=ad.parameter(_uniform(rng, h, (h, d))),
        pw=ad.parameter(_uniform(rng, d, (d, d))),
        dw=ad.parameter(_uniform(rng, k, (d, k))),
        merge=ad.parameter(np.zeros(2)),
        g_attn=ad.parameter(np.ones(d)),
        g_ffn=ad.parameter(np.ones(d)),
        g_cnn=ad.parameter(np.ones(d)),
    )


def _check_mask(mask: np.ndarray, length: int) -> np.ndarray:
    if mask is None:
        return np.ones(length, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (length,):
        raise ValueError("mask length must match the sequence")
    if not mask.any():
        raise ValueError("mask excludes every position")
    return mask


def attention_branch(x: Tensor, p: ConvLlamaParams, mask: np.ndarray | None = None) -> Tensor:
    length = x.shape[0]
    mask = _check_mask(mask, length)
    positions = np.arange(length)
    key_bias = np.where(mask, 0.0, ad.NEG_INF)

    h = ad.rms_norm(x, p.g_attn)
    q = ad.rope(ad.matmul(h, p.wq), positions)
    k = ad.rope(ad.matmul(h, p.wk), positions)
    v = ad.matmul(h, p.wv)
    x = ad.add(x, ad.matmul(ad.attention(q, k, v, key_bias), p.wo))

    h = ad.rms_norm(x, p.g_ffn)
    ff = ad.matmul(ad.mul(ad.silu(ad.matmul(h, p.ffn_gate)), ad.matmul(h, p.ffn_up)),
                   p.ffn_down)
    return ad.add(x, ff)


def cnn_branch(x: Tensor, p: ConvLlamaParams, mask: np.ndarray | None = None) -> Tensor:
    length = x.shape[0]
    mask = _check_mask(mask, length)
    col = mask.astype(np.float64)[:, None]

    h = ad.rms_norm(ad.cmul(x, col), p.g_cnn)
    h = ad.silu(ad.matmul(h, p.pw))
    h = ad.cmul(h, col)  # padded positions must not leak into the kernel
    h = ad.transpose2d(ad.depthwise_conv1d(ad.transpose2d(h), p.dw))
    h = ad.cmul(h, col)
    return ad.add(x, h)


def conv_llama_block(x: Tensor, p: ConvLlamaParams, mask: np.ndarray | None = None) -> Tensor:
    w = ad.softmax(p.merge)
    wa = ad.reshape(ad.rows(ad.reshape(w, (2, 1)), 0, 1), (1, 1))
    wc = ad.reshape(ad.rows(ad.reshape(w, (2, 1)), 1, 2), (1, 1))
    return ad.add(ad.mul(attention_branch(x, p, mask), wa),
                  ad.mul(cnn_branch(x, p, mask), wc))
