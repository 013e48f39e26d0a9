"""Three-stage hierarchical pronunciation scorer.

Phone stage: projected per-phone likelihood-ratio features plus a phone
embedding run through three encoder blocks; a regressor scores each phone.
Word stage: two attention pools compress phone features and phone encodings
into per-word vectors, which are projected, combined with word embeddings,
and run through two blocks; three depth-wise convolutions split the result
into per-aspect word representations, each scored by its own regressor.
Utterance stage: phone features, phone encodings, and the merged word
representations (expanded back to phone length) are fused, encoded by one
block, pooled five ways, combined with the projected acoustic summary
vector through residual connections, and scored by five regressors.

Sequences are (length, width); only the valid prefix of padded inputs is
ever touched, so predictions at valid positions are exactly independent of
padding. The mean phone encoding `z` is exposed for the embedding
regularizer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import CONV_KERNEL_WIDTH, ConvLlamaParams, conv_llama_block, init_conv_llama
from .ctc import gop_feature_dim

PHONE_ASPECTS = ("phone_accuracy",)
WORD_ASPECTS = ("word_accuracy", "word_stress", "word_total")
UTT_ASPECTS = ("utt_accuracy", "utt_fluency", "utt_completeness", "utt_prosody", "utt_total")
ALL_ASPECTS = PHONE_ASPECTS + WORD_ASPECTS + UTT_ASPECTS
GRANULARITY_ASPECTS = {"phone": PHONE_ASPECTS, "word": WORD_ASPECTS, "utt": UTT_ASPECTS}

SSL_DIM = 1024
N_SSL_VECTORS = 3

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    n_phone_types: int
    n_word_types: int
    d_p: int = 24
    d_w: int = 24
    d_u: int = 24

    @property
    def gop_dim(self) -> int:
        return gop_feature_dim(self.n_phone_types)

    def to_dict(self) -> dict:
        return {"n_phone_types": self.n_phone_types, "n_word_types": self.n_word_types,
                "d_p": self.d_p, "d_w": self.d_w, "d_u": self.d_u}


@dataclass
class ModelInputs:
    """One utterance view ready for the model; arrays may carry padding."""

    gop: np.ndarray            # (N_arr, P + 2)
    phone_ids: np.ndarray      # (N_arr,)
    word_ids: np.ndarray       # (M_arr,)
    phone_to_word: np.ndarray  # (N_arr,)
    ssl: np.ndarray            # (3, 1024)
    n_phones: int
    n_words: int

    def __post_init__(self):
        self.gop = np.asarray(self.gop, dtype=np.float64)
        self.phone_ids = np.asarray(self.phone_ids, dtype=np.intp)
        self.word_ids = np.asarray(self.word_ids, dtype=np.intp)
        self.phone_to_word = np.asarray(self.phone_to_word, dtype=np.intp)
        self.ssl = np.asarray(self.ssl, dtype=np.float64)
        n, m = self.n_phones, self.n_words
        if not (1 <= n <= len(self.phone_ids)) or not (1 <= m <= len(self.word_ids)):
            raise ValueError("valid lengths out of range")
        if self.gop.shape[0] != len(self.phone_ids):
            raise ValueError("gop rows must match phone_ids")
        if self.ssl.shape != (N_SSL_VECTORS, SSL_DIM):
            raise ValueError(f"ssl must be ({N_SSL_VECTORS}, {SSL_DIM})")
        p2w = self.phone_to_word[:n]
        if np.any(np.diff(p2w) < 0):
            raise ValueError("phone_to_word must be non-decreasing")
        owned = np.bincount(p2w, minlength=m)
        if len(owned) != m or np.any(owned[:m] < 1):
            raise ValueError("every word must own at least one phone")


@dataclass
class ScoreTargets:
    """Normalized (0..2) targets for each aspect, padded like the inputs."""

    phone: np.ndarray          # (N_arr,)
    word: dict[str, np.ndarray]
    utt: dict[str, float]

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {"phone_accuracy": np.asarray(self.phone, dtype=np.float64)}
        for a in WORD_ASPECTS:
            out[a] = np.asarray(self.word[a], dtype=np.float64)
        for a in UTT_ASPECTS:
            out[a] = np.array([float(self.utt[a])])
        return out


@dataclass
class AspectPredictions:
    preds: dict[str, Tensor]
    targets: dict[str, np.ndarray] | None
    masks: dict[str, np.ndarray]
    z: Tensor  # (1, d_p) time-averaged phone encoding


@dataclass
class AttentionPoolParams:
    dw: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{f}": getattr(self, f) for f in ("dw", "wq", "wk", "wv", "wo")}


@dataclass
class RegressorParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{f}": getattr(self, f) for f in ("w1", "b1", "w2", "b2")}


@dataclass
class HippoParams:
    config: ModelConfig
    lin_p_w: Tensor
    lin_p_b: Tensor
    lin_ssl_w: Tensor
    lin_ssl_b: Tensor
    phone_emb: Tensor
    word_emb: Tensor
    phn_enc: list[ConvLlamaParams]
    pool_feat: AttentionPoolParams
    pool_hid: AttentionPoolParams
    lin_w_w: Tensor
    lin_w_b: Tensor
    word_enc: list[ConvLlamaParams]
    word_aspect_dw: list[Tensor]
    fuse_dw_feat: Tensor
    fuse_dw_hid: Tensor
    fuse_dw_word: Tensor
    fuse_merge: Tensor
    lin_u_w: Tensor
    lin_u_b: Tensor
    utt_enc: list[ConvLlamaParams]
    utt_pools: list[AttentionPoolParams]
    regressors: dict[str, RegressorParams] = field(default_factory=dict)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {
            "lin_p.w": self.lin_p_w, "lin_p.b": self.lin_p_b,
            "lin_ssl.w": self.lin_ssl_w, "lin_ssl.b": self.lin_ssl_b,
            "phone_emb": self.phone_emb, "word_emb": self.word_emb,
        }
        for i, blk in enumerate(self.phn_enc):
            out.update(blk.named(f"phn_enc.{i}"))
        out.update(self.pool_feat.named("pool_feat"))
        out.update(self.pool_hid.named("pool_hid"))
        out.update({"lin_w.w": self.lin_w_w, "lin_w.b": self.lin_w_b})
        for i, blk in enumerate(self.word_enc):
            out.update(blk.named(f"word_enc.{i}"))
        for i, t in enumerate(self.word_aspect_dw):
            out[f"word_aspect_dw.{i}"] = t
        out.update({"fuse.dw_feat": self.fuse_dw_feat, "fuse.dw_hid": self.fuse_dw_hid,
                    "fuse.dw_word": self.fuse_dw_word, "fuse.merge": self.fuse_merge,
                    "lin_u.w": self.lin_u_w, "lin_u.b": self.lin_u_b})
        for i, blk in enumerate(self.utt_enc):
            out.update(blk.named(f"utt_enc.{i}"))
        for i, pool in enumerate(self.utt_pools):
            out.update(pool.named(f"utt_pool.{i}"))
        for name, reg in self.regressors.items():
            out.update(reg.named(f"reg.{name}"))
        return out


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def _init_pool(rng, d) -> AttentionPoolParams:
    return AttentionPoolParams(
        dw=ad.parameter(_uniform(rng, CONV_KERNEL_WIDTH, (d, CONV_KERNEL_WIDTH))),
        wq=ad.parameter(_uniform(rng, d, (d, d))),
        wk=ad.parameter(_uniform(rng, d, (d, d))),
        wv=ad.parameter(_uniform(rng, d, (d, d))),
        wo=ad.parameter(_uniform(rng, d, (d, d))),
    )


def _init_regressor(rng, d) -> RegressorParams:
    return RegressorParams(
        w1=ad.parameter(_uniform(rng, d, (d, d))),
        b1=ad.parameter(np.zeros(d)),
        w2=ad.parameter(_uniform(rng, d, (d, 1))),
        b2=ad.parameter(np.zeros(1)),
    )


def init_params(config: ModelConfig, rng: np.random.Generator) -> HippoParams:
    dp, dw, du = config.d_p, config.d_w, config.d_u
    params = HippoParams(
        config=config,
        lin_p_w=ad.parameter(_uniform(rng, config.gop_dim, (config.gop_dim, dp))),
        lin_p_b=ad.parameter(np.zeros(dp)),
        lin_ssl_w=ad.parameter(_uniform(rng, N_SSL_VECTORS * SSL_DIM,
                                        (N_SSL_VECTORS * SSL_DIM, du))),
        lin_ssl_b=ad.parameter(np.zeros(du)),
        phone_emb=ad.parameter(rng.normal(0.0, 0.02, (config.n_phone_types, dp))),
        word_emb=ad.parameter(rng.normal(0.0, 0.02, (config.n_word_types, dw))),
        phn_enc=[init_conv_llama(rng, dp) for _ in range(3)],
        pool_feat=_init_pool(rng, dp),
        pool_hid=_init_pool(rng, dp),
        lin_w_w=ad.parameter(_uniform(rng, 2 * dp, (2 * dp, dw))),
        lin_w_b=ad.parameter(np.zeros(dw)),
        word_enc=[init_conv_llama(rng, dw) for _ in range(2)],
        word_aspect_dw=[ad.parameter(_uniform(rng, CONV_KERNEL_WIDTH,
                                               (dw, CONV_KERNEL_WIDTH))) for _ in range(3)],
        fuse_dw_feat=ad.parameter(_uniform(rng, CONV_KERNEL_WIDTH, (dp, CONV_KERNEL_WIDTH))),
        fuse_dw_hid=ad.parameter(_uniform(rng, CONV_KERNEL_WIDTH, (dp, CONV_KERNEL_WIDTH))),
        fuse_dw_word=ad.parameter(_uniform(rng, CONV_KERNEL_WIDTH, (dw, CONV_KERNEL_WIDTH))),
        fuse_merge=ad.parameter(np.zeros(3)),
        lin_u_w=ad.parameter(_uniform(rng, 2 * dp + dw, (2 * dp + dw, du))),
        lin_u_b=ad.parameter(np.zeros(du)),
        utt_enc=[init_conv_llama(rng, du)],
        utt_pools=[_init_pool(rng, du) for _ in range(5)],
    )
    for name in PHONE_ASPECTS:
        params.regressors[name] = _init_regressor(rng, dp)
    for name in WORD_ASPECTS:
        params.regressors[name] = _init_regressor(rng, dw)
    for name in UTT_ASPECTS:
        params.regressors[name] = _init_regressor(rng, du)
    return params


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------


def _dwconv_seq(x: Tensor, kernels: Tensor) -> Tensor:
    """Depth-wise convolution over a rows-as-positions sequence."""
    return ad.transpose2d(ad.depthwise_conv1d(ad.transpose2d(x), kernels))


def _regress(reg: RegressorParams, x: Tensor) -> Tensor:
    h = ad.silu(ad.linear(x, reg.w1, reg.b1))
    out = ad.linear(h, reg.w2, reg.b2)
    return ad.reshape(out, (x.shape[0],))


def attention_pool(x: Tensor, bounds, p: AttentionPoolParams) -> Tensor:
    """Depth-wise conv over the sequence, per-segment self-attention,
    mean over each segment; one output row per segment."""
    xc = _dwconv_seq(x, p.dw)
    q = ad.matmul(xc, p.wq)
    k = ad.matmul(xc, p.wk)
    v = ad.matmul(xc, p.wv)
    return ad.matmul(ad.segment_attention_mean(q, k, v, bounds), p.wo)


def segment_bounds(phone_to_word: np.ndarray, n_words: int) -> list[tuple[int, int]]:
    counts = np.bincount(phone_to_word, minlength=n_words)
    ends = np.cumsum(counts)
    starts = ends - counts
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def project_inputs(inputs: ModelInputs, params: HippoParams) -> tuple[Tensor, Tensor]:
    """Valid-prefix feature projection: per-phone features and the
    projected acoustic summary vector."""
    cfg = params.config
    if inputs.gop.shape[1] != cfg.gop_dim:
        raise ValueError(f"gop width {inputs.gop.shape[1]} != expected {cfg.gop_dim}")
    gop = Tensor(inputs.gop[:inputs.n_phones])
    xp = ad.linear(gop, params.lin_p_w, params.lin_p_b)
    ssl = Tensor(inputs.ssl.reshape(1, -1))
    xssl = ad.linear(ssl, params.lin_ssl_w, params.lin_ssl_b)
    return xp, xssl


def phone_stage(xp: Tensor, phone_ids: np.ndarray, params: HippoParams) -> tuple[Tensor, Tensor]:
    if np.any(phone_ids < 0) or np.any(phone_ids >= params.config.n_phone_types):
        raise ValueError("phone id outside the embedding table")
    h = ad.add(xp, ad.gather_rows(params.phone_emb, phone_ids))
    for blk in params.phn_enc:
        h = conv_llama_block(h, blk)
    scores = _regress(params.regressors["phone_accuracy"], h)
    return h, scores


def word_stage(xp: Tensor, hp: Tensor, word_ids: np.ndarray, phone_to_word: np.ndarray,
               params: HippoParams):
    if np.any(word_ids < 0) or np.any(word_ids >= params.config.n_word_types):
        raise ValueError("word id outside the embedding table")
    bounds = segment_bounds(phone_to_word, len(word_ids))
    pooled = ad.concat([attention_pool(xp, bounds, params.pool_feat),
                        attention_pool(hp, bounds, params.pool_hid)], axis=1)
    xw = ad.linear(pooled, params.lin_w_w, params.lin_w_b)
    h = ad.add(xw, ad.gather_rows(params.word_emb, word_ids))
    for blk in params.word_enc:
        h = conv_llama_block(h, blk)
    aspect_seqs = [_dwconv_seq(h, dw) for dw in params.word_aspect_dw]
    scores = {name: _regress(params.regressors[name], seq)
              for name, seq in zip(WORD_ASPECTS, aspect_seqs)}
    return h, aspect_seqs, scores


def utterance_stage(xp: Tensor, hp: Tensor, word_aspect_seqs, xssl: Tensor,
                    phone_to_word: np.ndarray, params: HippoParams) -> dict[str, Tensor]:
    w = ad.softmax(params.fuse_merge)
    parts = []
    for i, seq in enumerate(word_aspect_seqs):
        wi = ad.reshape(ad.rows(ad.reshape(w, (3, 1)), i, i + 1), (1, 1))
        parts.append(ad.mul(seq, wi))
    merged = ad.add(ad.add(parts[0], parts[1]), parts[2])
    expanded = ad.gather_rows(merged, phone_to_word)  # word rows -> phone length

    fused = ad.concat([_dwconv_seq(xp, params.fuse_dw_feat),
                       _dwconv_seq(hp, params.fuse_dw_hid),
                       _dwconv_seq(expanded, params.fuse_dw_word)], axis=1)
    h = ad.linear(fused, params.lin_u_w, params.lin_u_b)
    for blk in params.utt_enc:
        h = conv_llama_block(h, blk)

    whole = [(0, h.shape[0])]
    scores = {}
    for name, pool in zip(UTT_ASPECTS, params.utt_pools):
        vec = ad.add(attention_pool(h, whole, pool), xssl)  # residual acoustic summary
        scores[name] = _regress(params.regressors[name], vec)
    return scores


def _pad_to(t: Tensor, total: int) -> Tensor:
    if t.shape[0] == total:
        return t
    return ad.concat([t, Tensor(np.zeros(total - t.shape[0]))], axis=0)


def forward(inputs: ModelInputs, params: HippoParams,
            targets: ScoreTargets | None = None) -> AspectPredictions:
    n, m = inputs.n_phones, inputs.n_words
    xp, xssl = project_inputs(inputs, params)
    hp, phone_scores = phone_stage(xp, inputs.phone_ids[:n], params)
    z = ad.mean_(hp, axis=0, keepdims=True)
    _, aspect_seqs, word_scores = word_stage(
        xp, hp, inputs.word_ids[:m], inputs.phone_to_word[:n], params)
    utt_scores = utterance_stage(xp, hp, aspect_seqs, xssl,
                                 inputs.phone_to_word[:n], params)

    n_arr, m_arr = len(inputs.phone_ids), len(inputs.word_ids)
    preds = {"phone_accuracy": _pad_to(phone_scores, n_arr)}
    masks = {"phone_accuracy": np.arange(n_arr) < n}
    for name in WORD_ASPECTS:
        preds[name] = _pad_to(word_scores[name], m_arr)
        masks[name] = np.arange(m_arr) < m
    for name in UTT_ASPECTS:
        preds[name] = utt_scores[name]
        masks[name] = np.ones(1, dtype=bool)

    tdict = targets.as_dict() if targets is not None else None
    if tdict is not None:
        for name in ALL_ASPECTS:
            if tdict[name].shape != preds[name].data.shape:
                raise ValueError(f"target shape mismatch for {name}")
    return AspectPredictions(preds=preds, targets=tdict, masks=masks, z=z)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: HippoParams, path) -> None:
    doc = {"format_version": CHECKPOINT_VERSION,
           "config": params.config.to_dict(),
           "params": {}}
    for name, t in params.named_parameters().items():
        doc["params"][name] = {"shape": list(t.data.shape),
                               "values": t.data.reshape(-1).tolist()}
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> HippoParams:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
    config = ModelConfig(**doc["config"])
    params = init_params(config, np.random.default_rng(0))
    named = params.named_parameters()
    stored = doc["params"]
    if set(stored) != set(named):
        missing = set(named) ^ set(stored)
        raise ValueError(f"checkpoint parameter names do not match: {sorted(missing)[:5]}")
    for name, t in named.items():
        entry = stored[name]
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != t.data.shape:
            raise ValueError(f"shape mismatch for {name}")
        t.data = arr
    return params
