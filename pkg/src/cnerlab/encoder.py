"""Token encoder and classifier head.

A small post-norm transformer: learned token + position embeddings, then K
blocks of (multi-head self-attention, residual, layer norm, relu FFN,
residual, layer norm), followed by a per-token affine map + softmax.
Attention logits at padded key positions are masked to -inf, which makes
hidden states at real positions independent of whatever sits in the padding.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng
from .autodiff import Tensor


class IdOutOfRangeError(ValueError):
    pass


class SentenceTooLongError(ValueError):
    pass


class AllMaskedError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    label_count: int
    embed_dim: int = 32
    num_layers: int = 2
    num_heads: int = 2
    ffn_dim: int = 64
    max_len: int = 32
    init_seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if min(self.vocab_size, self.label_count, self.embed_dim, self.num_heads,
               self.ffn_dim, self.max_len) < 1:
            raise ValueError("all size fields must be >= 1")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")


@dataclass
class LayerParams:
    # Keys carry no bias: a shared key offset shifts every attention logit in
    # a row equally, which softmax cancels, so the parameter would be
    # unidentifiable (gradient zero up to rounding).
    wq: Tensor
    bq: Tensor
    wk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


@dataclass
class ModelParams:
    """All learnable tensors; treat as immutable during a forward/backward pass."""

    config: EncoderConfig
    token_embed: Tensor
    pos_embed: Tensor
    layers: list[LayerParams] = field(default_factory=list)
    cls_weight: Tensor = None
    cls_bias: Tensor = None

    def named(self) -> list[tuple[str, Tensor]]:
        """(name, tensor) pairs in a fixed order; the checkpoint layout."""
        pairs = [("embed.token", self.token_embed), ("embed.pos", self.pos_embed)]
        for i, layer in enumerate(self.layers):
            for attr in ("wq", "bq", "wk", "wv", "bv", "wo", "bo",
                         "ln1_gain", "ln1_bias", "w1", "b1", "w2", "b2",
                         "ln2_gain", "ln2_bias"):
                pairs.append((f"layer.{i}.{attr}", getattr(layer, attr)))
        pairs.append(("cls.weight", self.cls_weight))
        pairs.append(("cls.bias", self.cls_bias))
        return pairs

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def copy(self) -> "ModelParams":
        named = {name: Tensor(t.data.copy()) for name, t in self.named()}
        return params_from_named(self.config, named)

    def byte_digest(self) -> str:
        h = hashlib.sha256()
        for name, t in self.named():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


def params_from_named(config: EncoderConfig, named: dict[str, Tensor]) -> ModelParams:
    layers = []
    for i in range(config.num_layers):
        kwargs = {
            attr: named[f"layer.{i}.{attr}"]
            for attr in ("wq", "bq", "wk", "wv", "bv", "wo", "bo",
                         "ln1_gain", "ln1_bias", "w1", "b1", "w2", "b2",
                         "ln2_gain", "ln2_bias")
        }
        layers.append(LayerParams(**kwargs))
    return ModelParams(
        config=config,
        token_embed=named["embed.token"],
        pos_embed=named["embed.pos"],
        layers=layers,
        cls_weight=named["cls.weight"],
        cls_bias=named["cls.bias"],
    )


def init_params(config: EncoderConfig) -> ModelParams:
    """Uniform(-init_scale, init_scale) weights; layer-norm gains 1, biases 0.

    Deterministic given init_seed: tensors are drawn in named() order from a
    single stream.
    """
    gen = rng.substream(config.init_seed, rng.PARAM_INIT)
    d, f, y = config.embed_dim, config.ffn_dim, config.label_count

    def uniform(*shape):
        return Tensor(gen.uniform(-config.init_scale, config.init_scale, size=shape))

    params = ModelParams(
        config=config,
        token_embed=uniform(config.vocab_size, d),
        pos_embed=uniform(config.max_len, d),
    )
    for _ in range(config.num_layers):
        params.layers.append(
            LayerParams(
                wq=uniform(d, d), bq=uniform(d),
                wk=uniform(d, d),
                wv=uniform(d, d), bv=uniform(d),
                wo=uniform(d, d), bo=uniform(d),
                ln1_gain=Tensor(np.ones(d)), ln1_bias=Tensor(np.zeros(d)),
                w1=uniform(d, f), b1=uniform(f),
                w2=uniform(f, d), b2=uniform(d),
                ln2_gain=Tensor(np.ones(d)), ln2_bias=Tensor(np.zeros(d)),
            )
        )
    params.cls_weight = uniform(y, d)
    params.cls_bias = uniform(y)
    return params


def _heads(x: Tensor, batch: int, length: int, num_heads: int, head_dim: int) -> Tensor:
    split = ad.reshape(x, (batch, length, num_heads, head_dim))
    return ad.transpose(split, (0, 2, 1, 3))


def encode(params: ModelParams, token_ids: np.ndarray, mask: np.ndarray) -> Tensor:
    """Hidden states (batch, length, d); rows at padded positions are garbage
    by contract and must be excluded downstream via ``mask``."""
    cfg = params.config
    ids = np.asarray(token_ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if ids.ndim != 2 or mask.shape != ids.shape:
        raise ad.ShapeMismatchError("token_ids and mask must be equal 2-D arrays")
    batch, length = ids.shape
    if length > cfg.max_len:
        raise SentenceTooLongError(f"batch length {length} exceeds max_len {cfg.max_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise IdOutOfRangeError("token id outside the embedding table")

    x = ad.add(
        ad.gather_rows(params.token_embed, ids),
        ad.gather_rows(params.pos_embed, np.arange(length)),
    )
    head_dim = cfg.embed_dim // cfg.num_heads
    inv_sqrt = 1.0 / math.sqrt(head_dim)
    key_pad = ~mask.reshape(batch, 1, 1, length)
    for layer in params.layers:
        q = _heads(ad.add(ad.matmul(x, layer.wq), layer.bq), batch, length, cfg.num_heads, head_dim)
        k = _heads(ad.matmul(x, layer.wk), batch, length, cfg.num_heads, head_dim)
        v = _heads(ad.add(ad.matmul(x, layer.wv), layer.bv), batch, length, cfg.num_heads, head_dim)
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), inv_sqrt)
        scores = ad.masked_fill(scores, np.broadcast_to(key_pad, scores.shape), -np.inf)
        ctx = ad.matmul(ad.softmax(scores), v)
        merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (batch, length, cfg.embed_dim))
        attn_out = ad.add(ad.matmul(merged, layer.wo), layer.bo)
        x = ad.layer_norm(ad.add(x, attn_out), layer.ln1_gain, layer.ln1_bias)
        hidden = ad.relu(ad.add(ad.matmul(x, layer.w1), layer.b1))
        ffn_out = ad.add(ad.matmul(hidden, layer.w2), layer.b2)
        x = ad.layer_norm(ad.add(x, ffn_out), layer.ln2_gain, layer.ln2_bias)
    return x


def pool_sentences(h: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of the unmasked rows of each sentence: (batch, d) representations."""
    mask = np.asarray(mask, dtype=bool)
    batch, length, dim = h.shape
    lengths = mask.sum(axis=1)
    if (lengths == 0).any():
        raise AllMaskedError("a sentence has no unmasked positions")
    weights = (mask / lengths[:, None]).reshape(batch, 1, length)
    return ad.reshape(ad.matmul(weights, h), (batch, dim))


def classify(params: ModelParams, h: Tensor) -> Tensor:
    """Per-token label distribution: softmax(W h + b) on the last axis."""
    logits = ad.add(ad.matmul(h, ad.transpose(params.cls_weight, (1, 0))), params.cls_bias)
    return ad.softmax(logits)
