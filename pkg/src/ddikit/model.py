"""The DDI prediction network: embedding stack, encoder-only transformer,
residual 1-d conv feature extractor, KG self-attention branch, fusion MLPs
and the classifier head.

Defaults follow the training setup this repo reproduces: model width 256,
6 encoder layers with 8 heads, feedforward width 256, sequence length 500,
learned positional embeddings, and a KG pair vector of length 800 treated as
two 400-wide tokens inside the KG self-attention block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, Parameter


@dataclass
class ModelConfig:
    vocab_size: int
    n_classes: int
    d_model: int = 256
    n_layers: int = 6
    n_heads: int = 8
    d_ff: int = 256
    max_len: int = 500
    n_segments: int = 2
    kg_dim: int = 800
    kg_heads: int = 4
    conv_blocks: int = 8
    conv_kernel: int = 3
    pool_stride: int = 2
    mlp1_hidden: int = 512
    mlp1_out: int = 256
    mlp2_hidden: int = 512
    dropout: float = 0.1
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.kg_dim % 2 or (self.kg_dim // 2) % self.kg_heads:
            raise ValueError("kg_dim must be even and half divisible by kg_heads")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def conv_out_len(self) -> int:
        n = self.max_len
        for _ in range(self.conv_blocks):
            n = -(-n // self.pool_stride)
        return n

    def to_dict(self) -> dict:
        return asdict(self)


class ParamStore:
    """Flat registry of named parameters and non-trainable buffers."""

    def __init__(self, rng: np.random.Generator, dtype):
        self.rng = rng
        self.dtype = dtype
        self.params: dict[str, Parameter] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def param(self, name: str, shape, init: str = "normal", std: float = 0.02) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if init == "normal":
            data = self.rng.normal(0.0, std, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(init)
        p = Parameter(data, name=name, dtype=self.dtype)
        self.params[name] = p
        return p

    def buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        if name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        arr = np.asarray(data, dtype=np.float64)
        self.buffers[name] = arr
        return arr


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int):
        self.w = store.param(f"{name}.w", (d_in, d_out))
        self.b = store.param(f"{name}.b", (d_out,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int):
        self.gain = store.param(f"{name}.gain", (d,), init="ones")
        self.bias = store.param(f"{name}.bias", (d,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias)


class BatchNorm1d:
    def __init__(self, store: ParamStore, name: str, channels: int, momentum: float = 0.1):
        self.gamma = store.param(f"{name}.gamma", (channels,), init="ones")
        self.beta = store.param(f"{name}.beta", (channels,), init="zeros")
        self.running_mean = store.buffer(f"{name}.running_mean", np.zeros(channels))
        self.running_var = store.buffer(f"{name}.running_var", np.ones(channels))
        self.momentum = momentum

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ad.batch_norm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, training, self.momentum)


class Conv1d:
    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 kernel: int, stride: int = 1):
        std = 1.0 / math.sqrt(c_in * kernel)
        self.w = store.param(f"{name}.w", (c_out, c_in, kernel), std=std)
        self.b = store.param(f"{name}.b", (c_out,), init="zeros")
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.w, self.b, stride=self.stride)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor,
                                 mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v with optional key padding mask.

    q, k: [..., n, d_k]; v: [..., n, d_v]; mask: boolean [batch, n] (True =
    real token) or None. Fully-masked query rows yield zero output rows.
    """
    d_k = q.shape[-1]
    scores = ad.scale(ad.matmul(q, ad.transpose(k, _swap_last(k.ndim))), 1.0 / math.sqrt(d_k))
    if mask is not None:
        bias_arr = np.where(mask, 0.0, -1e9).astype(scores.dtype)
        shape = [mask.shape[0]] + [1] * (scores.ndim - 2) + [mask.shape[-1]]
        scores = ad.add(scores, ad.constant(bias_arr.reshape(shape), dtype=scores.dtype))
    weights = ad.softmax(scores, axis=-1)
    if mask is not None and not mask.all():
        row_ok = mask.any(axis=-1).astype(weights.dtype)
        shape = [mask.shape[0]] + [1] * (weights.ndim - 1)
        weights = ad.mul(weights, ad.constant(row_ok.reshape(shape), dtype=weights.dtype))
    return ad.matmul(weights, v)


def _swap_last(ndim: int):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class MultiHeadAttention:
    """h parallel attention heads over linear projections, concatenated and
    projected back to model width."""

    def __init__(self, store: ParamStore, name: str, d_model: int, n_heads: int):
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.w_q = Linear(store, f"{name}.w_q", d_model, d_model)
        self.w_k = Linear(store, f"{name}.w_k", d_model, d_model)
        self.w_v = Linear(store, f"{name}.w_v", d_model, d_model)
        self.w_o = Linear(store, f"{name}.w_o", d_model, d_model)

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        x = ad.reshape(x, (b, n, self.n_heads, self.d_k))
        return ad.transpose(x, (0, 2, 1, 3))

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, n, d = x.shape
        q = self._split(self.w_q(x))
        k = self._split(self.w_k(x))
        v = self._split(self.w_v(x))
        heads = scaled_dot_product_attention(q, k, v, mask)
        merged = ad.reshape(ad.transpose(heads, (0, 2, 1, 3)), (b, n, d))
        return self.w_o(merged)


class FeedForward:
    def __init__(self, store: ParamStore, name: str, d_model: int, d_ff: int):
        self.fc1 = Linear(store, f"{name}.fc1", d_model, d_ff)
        self.fc2 = Linear(store, f"{name}.fc2", d_ff, d_model)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.fc1(x)))


class EncoderLayer:
    """Post-norm residual layer: x <- LN(x + MHA(x)); x <- LN(x + FFN(x))."""

    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig):
        self.attn = MultiHeadAttention(store, f"{name}.attn", cfg.d_model, cfg.n_heads)
        self.norm1 = LayerNorm(store, f"{name}.norm1", cfg.d_model)
        self.ffn = FeedForward(store, f"{name}.ffn", cfg.d_model, cfg.d_ff)
        self.norm2 = LayerNorm(store, f"{name}.norm2", cfg.d_model)
        self.dropout = cfg.dropout

    def __call__(self, x: Tensor, mask, rng, training: bool) -> Tensor:
        a = ad.dropout(self.attn(x, mask), self.dropout, rng, training)
        x = self.norm1(ad.add(x, a))
        f = ad.dropout(self.ffn(x), self.dropout, rng, training)
        return self.norm2(ad.add(x, f))


class EmbeddingStack:
    """Sum of token, segment and learned positional embeddings."""

    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig):
        self.token = store.param(f"{name}.token", (cfg.vocab_size, cfg.d_model))
        self.segment = store.param(f"{name}.segment", (cfg.n_segments, cfg.d_model))
        self.position = store.param(f"{name}.position", (cfg.max_len, cfg.d_model))

    def __call__(self, ids: np.ndarray, segment_ids: np.ndarray) -> Tensor:
        b, n = ids.shape
        tok = ad.embedding_lookup(self.token, ids)
        seg = ad.embedding_lookup(self.segment, segment_ids)
        pos = ad.embedding_lookup(self.position, np.broadcast_to(np.arange(n), (b, n)))
        return ad.add(ad.add(tok, seg), pos)


class Encoder:
    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig):
        self.layers = [EncoderLayer(store, f"{name}.{i}", cfg) for i in range(cfg.n_layers)]

    def __call__(self, x: Tensor, mask, rng, training: bool) -> Tensor:
        for layer in self.layers:
            x = layer(x, mask, rng, training)
        return x


class ConvBlock:
    """conv -> BN -> relu -> conv -> BN with a residual around the block."""

    def __init__(self, store: ParamStore, name: str, channels: int, kernel: int):
        self.conv1 = Conv1d(store, f"{name}.conv1", channels, channels, kernel)
        self.bn1 = BatchNorm1d(store, f"{name}.bn1", channels)
        self.conv2 = Conv1d(store, f"{name}.conv2", channels, channels, kernel)
        self.bn2 = BatchNorm1d(store, f"{name}.bn2", channels)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = ad.relu(self.bn1(self.conv1(x), training))
        h = self.bn2(self.conv2(h), training)
        return ad.add(x, h)


class ConvModule:
    """Stack of residual conv blocks with stride-2 max pooling between them;
    the sequence length halves (ceil) per block."""

    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig):
        self.blocks = [ConvBlock(store, f"{name}.{i}", cfg.d_model, cfg.conv_kernel)
                       for i in range(cfg.conv_blocks)]
        self.pool_stride = cfg.pool_stride

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        # x: [batch, length, channels] -> [batch, channels, length]
        x = ad.transpose(x, (0, 2, 1))
        for block in self.blocks:
            x = ad.max_pool1d(block(x, training), self.pool_stride, self.pool_stride)
        b, c, n = x.shape
        return ad.reshape(x, (b, c * n))


class MlpModule:
    """linear -> batch norm -> leaky relu -> linear."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_hidden: int, d_out: int):
        self.fc1 = Linear(store, f"{name}.fc1", d_in, d_hidden)
        self.bn = BatchNorm1d(store, f"{name}.bn", d_hidden)
        self.fc2 = Linear(store, f"{name}.fc2", d_hidden, d_out)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.fc2(ad.leaky_relu(self.bn(self.fc1(x), training)))


class KgSelfAttention:
    """Self-attention over the two drug halves of the KG pair vector.

    The pair vector is reshaped to 2 tokens x (kg_dim/2), passed through one
    multi-head self-attention layer with residual + layer norm, and flattened
    back. No positional term, so the block is equivariant to swapping the
    two halves.
    """

    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig):
        self.half = cfg.kg_dim // 2
        self.attn = MultiHeadAttention(store, f"{name}.attn", self.half, cfg.kg_heads)
        self.norm = LayerNorm(store, f"{name}.norm", self.half)

    def __call__(self, pair: Tensor) -> Tensor:
        b = pair.shape[0]
        tokens = ad.reshape(pair, (b, 2, self.half))
        out = self.norm(ad.add(tokens, self.attn(tokens)))
        return ad.reshape(out, (b, 2 * self.half))


class DdiModel:
    """Full network: logits = MLP2(concat(MLP1(conv(encoder(embed(seq)))),
    kg_self_attention(pair_vec))). Softmax is applied by the loss/metrics
    layer, not here."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.store = ParamStore(rng, cfg.np_dtype)
        self.rng = np.random.default_rng(seed + 1)  # dropout stream
        self.embeddings = EmbeddingStack(self.store, "embed", cfg)
        self.encoder = Encoder(self.store, "encoder", cfg)
        self.conv = ConvModule(self.store, "conv", cfg)
        conv_out = cfg.conv_out_len() * cfg.d_model
        self.mlp1 = MlpModule(self.store, "mlp1", conv_out, cfg.mlp1_hidden, cfg.mlp1_out)
        self.kg_attn = KgSelfAttention(self.store, "kg_attn", cfg)
        self.mlp2 = MlpModule(self.store, "mlp2", cfg.mlp1_out + cfg.kg_dim,
                              cfg.mlp2_hidden, cfg.n_classes)
        self.training = True

    def parameters(self) -> dict[str, Parameter]:
        return self.store.params

    def buffers(self) -> dict[str, np.ndarray]:
        return self.store.buffers

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.store.params.values())

    def train(self):
        self.training = True

    def eval(self):
        self.training = False

    def encode(self, ids: np.ndarray, segment_ids: np.ndarray, mask: np.ndarray) -> Tensor:
        x = self.embeddings(ids, segment_ids)
        return self.encoder(x, mask, self.rng, self.training)

    def forward(self, ids: np.ndarray, segment_ids: np.ndarray, mask: np.ndarray,
                pair_vec: np.ndarray) -> Tensor:
        """ids/segment_ids: int [batch, max_len]; mask: bool [batch, max_len];
        pair_vec: [batch, kg_dim]. Returns logits [batch, n_classes]."""
        hidden = self.encode(ids, segment_ids, mask)
        seq_feat = self.mlp1(self.conv(hidden, self.training), self.training)
        kg_feat = self.kg_attn(ad.constant(pair_vec, dtype=self.cfg.np_dtype))
        fused = ad.concat([seq_feat, kg_feat], axis=1)
        return self.mlp2(fused, self.training)


class PretrainModel:
    """Embedding stack + encoder + token-prediction head for masked-token
    pretraining. Shares the architecture (and parameter names) of the main
    model's encoder so weights transfer 1:1."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.store = ParamStore(rng, cfg.np_dtype)
        self.rng = np.random.default_rng(seed + 1)
        self.embeddings = EmbeddingStack(self.store, "embed", cfg)
        self.encoder = Encoder(self.store, "encoder", cfg)
        self.lm_head = Linear(self.store, "lm_head", cfg.d_model, cfg.vocab_size)
        self.training = True

    def parameters(self) -> dict[str, Parameter]:
        return self.store.params

    def buffers(self) -> dict[str, np.ndarray]:
        return self.store.buffers

    def train(self):
        self.training = True

    def eval(self):
        self.training = False

    def encode(self, ids, segment_ids, mask) -> Tensor:
        x = self.embeddings(ids, segment_ids)
        return self.encoder(x, mask, self.rng, self.training)

    def masked_logits(self, ids, segment_ids, mask, flat_positions: np.ndarray) -> Tensor:
        """Logits only at the masked positions (flat indices into the
        flattened [batch * max_len] sequence)."""
        hidden = self.encode(ids, segment_ids, mask)
        b, n, d = hidden.shape
        flat = ad.reshape(hidden, (b * n, d))
        picked = ad.embedding_lookup(flat, flat_positions)
        return self.lm_head(picked)


TRANSFER_PREFIXES = ("embed.", "encoder.")


def transfer_encoder_weights(src: PretrainModel, dst: DdiModel):
    """Copy pretrained embedding-stack and encoder weights into the main
    model; all other modules keep their fresh initialization."""
    sp, dp = src.parameters(), dst.parameters()
    for name, p in sp.items():
        if name.startswith(TRANSFER_PREFIXES):
            if dp[name].data.shape != p.data.shape:
                raise ValueError(f"shape mismatch transferring {name}")
            dp[name].data = p.data.astype(dp[name].data.dtype).copy()
