"""Conditional variational transformer over packed intent+utterance sequences.

An encoder stack reads the full packed sequence bidirectionally and maps its
[CLS] state to a Gaussian posterior.  The decoder stack sees the same input
embeddings with the [CLS] slot replaced by the latent sample, under a mask
that keeps the intent sentence self-contained, makes the utterance
left-to-right, and lets the latent slot attend only to itself.  The final
latent-slot state is concatenated onto every row before a two-layer head and
a projection tied to the token embedding table.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .text import Batch


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_h: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    max_len: int = 32
    dropout: float = 0.1
    # rows other than the latent slot may attend to column 0
    z_visible: bool = True
    init_std: float = 0.02
    ln_eps: float = 1e-12

    def __post_init__(self):
        if self.d_h % self.n_heads:
            raise ValueError(f"d_h={self.d_h} is not divisible by n_heads={self.n_heads}")
        if self.n_enc_layers < 1 or self.n_dec_layers < 1:
            raise ValueError("need at least one encoder and one decoder block")
        if self.vocab_size < 5:
            raise ValueError("vocabulary must hold the specials plus at least one word")

    @property
    def d_k(self) -> int:
        return self.d_h // self.n_heads

    @property
    def latent_dim(self) -> int:
        return self.d_h

    def to_dict(self) -> dict:
        return asdict(self)


def _trunc_normal(rng, shape, std):
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def _block_shapes(prefix, d, d_ff):
    return {
        f"{prefix}.wq": (d, d), f"{prefix}.bq": (d,),
        f"{prefix}.wk": (d, d), f"{prefix}.bk": (d,),
        f"{prefix}.wv": (d, d), f"{prefix}.bv": (d,),
        f"{prefix}.wo": (d, d), f"{prefix}.bo": (d,),
        f"{prefix}.ln1.g": (d,), f"{prefix}.ln1.b": (d,),
        f"{prefix}.w_ff1": (d, d_ff), f"{prefix}.b_ff1": (d_ff,),
        f"{prefix}.w_ff2": (d_ff, d), f"{prefix}.b_ff2": (d,),
        f"{prefix}.ln2.g": (d,), f"{prefix}.ln2.b": (d,),
    }  # fmt: skip


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.d_h
    shapes = {
        "tok_emb": (cfg.vocab_size, d),
        "pos_emb": (cfg.max_len, d),
        "seg_emb": (2, d),
    }
    for i in range(cfg.n_enc_layers):
        shapes.update(_block_shapes(f"enc.{i}", d, cfg.d_ff))
    shapes.update({"lat.w_mu": (d, d), "lat.b_mu": (d,), "lat.w_sigma": (d, d), "lat.b_sigma": (d,)})
    for i in range(cfg.n_dec_layers):
        shapes.update(_block_shapes(f"dec.{i}", d, cfg.d_ff))
    shapes.update({
        "head.w1": (2 * d, d), "head.b1": (d,),
        "head.w2": (d, d), "head.b2": (d,),
        "head.ln.g": (d,), "head.ln.b": (d,),
        "out.bias": (cfg.vocab_size,),
    })  # fmt: skip
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Truncated-normal weights, zero biases, unit layer-norm gains."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            data = _trunc_normal(rng, shape, cfg.init_std)
        params[name] = nx.parameter(data, name=name)
    return params


# ---------------------------------------------------------------- masks


def build_encoder_mask(T: int) -> np.ndarray:
    if T < 1:
        raise ValueError("T must be positive")
    return np.ones((T, T), dtype=bool)


def build_decoder_mask(t1_len: int, t2_len: int, z_visible: bool = True) -> np.ndarray:
    """Allow-matrix for the decoder; ``True`` means attention is permitted.

    Row 0 (latent slot) sees only itself.  Intent rows see the intent span.
    Utterance rows see the intent span plus utterance positions up to their
    own.  With ``z_visible=False`` no row except row 0 sees column 0.
    """
    if t1_len < 2 or t2_len < 0:
        raise ValueError(f"invalid span lengths t1_len={t1_len}, t2_len={t2_len}")
    T = t1_len + t2_len
    allow = np.zeros((T, T), dtype=bool)
    allow[1:, :t1_len] = True
    allow[t1_len:, t1_len:] = np.tril(np.ones((t2_len, t2_len), dtype=bool))
    if not z_visible:
        allow[1:, 0] = False
    allow[0, 0] = True
    return allow


def _stack_masks(batch: Batch, per_example) -> np.ndarray:
    """Embed per-example allow-matrices into the padded width; pad rows see themselves."""
    W = batch.width
    allow = np.zeros((batch.size, W, W), dtype=bool)
    idx = np.arange(W)
    allow[:, idx, idx] = True
    for b in range(batch.size):
        n = int(batch.lengths[b])
        allow[b, :n, :n] = per_example(b)
    return nx.additive_mask(allow)[:, None, :, :]


def encoder_attention_mask(batch: Batch) -> np.ndarray:
    return _stack_masks(batch, lambda b: build_encoder_mask(int(batch.lengths[b])))


def decoder_attention_mask(batch: Batch, z_visible: bool = True) -> np.ndarray:
    return _stack_masks(
        batch, lambda b: build_decoder_mask(int(batch.t1_lens[b]), int(batch.t2_lens[b]), z_visible)
    )


# ---------------------------------------------------------------- forward pieces


def embed(batch: Batch, params) -> Tensor:
    """Token + position + segment embeddings, shape [B, T, d_h]."""
    max_len = params["pos_emb"].shape[0]
    if batch.width > max_len:
        raise ValueError(f"sequence length {batch.width} exceeds max_len={max_len}")
    tok = nx.embedding(params["tok_emb"], batch.token_ids)
    pos = nx.embedding(params["pos_emb"], batch.position_ids)
    seg = nx.embedding(params["seg_emb"], batch.segment_ids)
    return tok + pos + seg


def _linear(x, params, w, b):
    return x @ params[w] + params[b]


def transformer_block(H: Tensor, mask: np.ndarray, params, prefix: str, cfg: ModelConfig, rng=None, trace=None):
    """Post-norm block: masked multi-head attention, then a GELU feed-forward.

    ``rng`` enables dropout (training); ``trace`` collects attention weights.
    """
    B, T, d = H.shape
    h, dk = cfg.n_heads, cfg.d_k

    def heads(x):
        return x.reshape(B, T, h, dk).transpose(0, 2, 1, 3)

    q = heads(_linear(H, params, f"{prefix}.wq", f"{prefix}.bq"))
    k = heads(_linear(H, params, f"{prefix}.wk", f"{prefix}.bk"))
    v = heads(_linear(H, params, f"{prefix}.wv", f"{prefix}.bv"))
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dk))
    probs = nx.masked_softmax(scores, mask)
    if trace is not None:
        trace.append(probs.data.copy())
    probs = nx.dropout(probs, cfg.dropout, rng)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    attn = _linear(ctx, params, f"{prefix}.wo", f"{prefix}.bo")
    H = nx.layer_norm(H + attn, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"], cfg.ln_eps)
    ff = nx.gelu(_linear(H, params, f"{prefix}.w_ff1", f"{prefix}.b_ff1"))
    ff = nx.dropout(_linear(ff, params, f"{prefix}.w_ff2", f"{prefix}.b_ff2"), cfg.dropout, rng)
    return nx.layer_norm(H + ff, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"], cfg.ln_eps)


def encode(H0: Tensor, mask: np.ndarray, params, cfg: ModelConfig, rng=None):
    """Run the encoder stack; returns (h_cls [B, d_h], final states [B, T, d_h])."""
    H = H0
    for i in range(cfg.n_enc_layers):
        H = transformer_block(H, mask, params, f"enc.{i}", cfg, rng)
    return H[:, 0, :], H


@dataclass
class LatentStats:
    mu: Tensor
    log_var: Tensor
    z: Tensor
    eps: np.ndarray = field(repr=False)


def latent_head(h_cls: Tensor, params, eps: np.ndarray) -> LatentStats:
    """Gaussian posterior parameters and a reparameterised sample."""
    mu = h_cls @ params["lat.w_mu"] + params["lat.b_mu"]
    log_var = h_cls @ params["lat.w_sigma"] + params["lat.b_sigma"]
    eps = np.asarray(eps, dtype=nx.get_dtype())
    z = mu + nx.exp(log_var * 0.5) * eps
    return LatentStats(mu=mu, log_var=log_var, z=z, eps=eps)


def decode_forward(z, H0: Tensor, batch: Batch, params, cfg: ModelConfig, rng=None, trace=None) -> Tensor:
    """Next-token logits [B, T, V]; row t scores the token at t + 1."""
    z = nx.as_tensor(z)
    B, T, d = H0.shape
    if z.ndim == 1:
        z = nx.broadcast_to(z.reshape(1, d), (B, d))
    H = nx.concat([z.reshape(B, 1, d), H0[:, 1:, :]], axis=1)
    mask = decoder_attention_mask(batch, cfg.z_visible)
    for i in range(cfg.n_dec_layers):
        H = transformer_block(H, mask, params, f"dec.{i}", cfg, rng, trace)
    z_state = nx.broadcast_to(H[:, 0:1, :], (B, T, d))
    Hc = nx.concat([H, z_state], axis=-1)
    Hf = nx.gelu(_linear(Hc, params, "head.w1", "head.b1"))
    Hf = nx.gelu(_linear(Hf, params, "head.w2", "head.b2"))
    Hf = nx.layer_norm(Hf, params["head.ln.g"], params["head.ln.b"], cfg.ln_eps)
    return Hf @ params["tok_emb"].transpose(1, 0) + params["out.bias"]
