"""The two-level encoder: input embedders, a cross-modal transformer fusing
each subtitle sentence with its frame group, and a temporal transformer over
the whole clip with a positional residual.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import AlignedClip
from .errors import ConfigError, ShapeError, UsageError

log = logging.getLogger(__name__)

ATTENTION_MASK_BIAS = -1e30


@dataclass
class ModelConfig:
    d: int = 64
    cross_layers: int = 2
    cross_heads: int = 4
    temporal_layers: int = 1
    temporal_heads: int = 4
    vocab_size: int = 128
    frame_feature_dim: int = 32
    max_frames: int = 64
    max_tokens: int = 48
    ffn_multiplier: int = 4
    dropout: float = 0.1

    def __post_init__(self):
        for heads in (self.cross_heads, self.temporal_heads):
            if self.d % heads != 0:
                raise ConfigError(f"hidden size {self.d} not divisible by head count {heads}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def full_scale(cls, vocab_size: int = 50272) -> "ModelConfig":
        """The large preset: 6x768x12 fusion, 3x768x12 temporal, 4352-dim frames."""
        return cls(
            d=768,
            cross_layers=6,
            cross_heads=12,
            temporal_layers=3,
            temporal_heads=12,
            vocab_size=vocab_size,
            frame_feature_dim=4352,
            max_frames=100,
            max_tokens=64,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# -- parameter containers ----------------------------------------------------


class Linear:
    def __init__(self, rng: np.random.Generator, fan_in: int, fan_out: int, init: str = "xavier"):
        if init == "xavier":
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        elif init == "small":
            # task heads use a tight init so untrained logits sit near zero
            w = rng.normal(0.0, 0.02, size=(fan_in, fan_out))
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.w = T.Tensor(w, requires_grad=True)
        self.b = T.Tensor(np.zeros(fan_out), requires_grad=True)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.matmul(x, self.w) + self.b

    def params(self, prefix: str) -> dict[str, T.Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = T.Tensor(np.ones(d), requires_grad=True)
        self.bias = T.Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.layer_norm(x, self.gain, self.bias, eps=self.eps)

    def params(self, prefix: str) -> dict[str, T.Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


class EmbeddingTable:
    def __init__(self, rng: np.random.Generator, rows: int, d: int):
        self.table = T.Tensor(rng.normal(0.0, 0.02, size=(rows, d)), requires_grad=True)

    def __call__(self, ids) -> T.Tensor:
        return T.embedding(self.table, ids)

    def params(self, prefix: str) -> dict[str, T.Tensor]:
        return {f"{prefix}.table": self.table}


class MultiHeadAttention:
    """Multi-head attention; self-attention by default, cross-attention when
    ``kv`` rows are supplied.  ``key_mask`` is boolean over keys, either
    (n_keys,) or a full (n_queries, n_keys) grid (e.g. causal)."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        self.d = d
        self.heads = heads
        self.dh = d // heads
        self.wq = Linear(rng, d, d)
        self.wk = Linear(rng, d, d)
        self.wv = Linear(rng, d, d)
        self.wo = Linear(rng, d, d)

    def __call__(
        self,
        x: T.Tensor,
        key_mask: np.ndarray | None = None,
        capture: list | None = None,
        kv: T.Tensor | None = None,
    ) -> T.Tensor:
        source = x if kv is None else kv
        q, k, v = self.wq(x), self.wk(source), self.wv(source)
        if key_mask is not None:
            bias = T.Tensor(np.where(key_mask, 0.0, ATTENTION_MASK_BIAS))
        outs = []
        scale = 1.0 / np.sqrt(self.dh)
        for h in range(self.heads):
            lo, hi = h * self.dh, (h + 1) * self.dh
            qh = T.slice_cols(q, lo, hi)
            kh = T.slice_cols(k, lo, hi)
            vh = T.slice_cols(v, lo, hi)
            scores = T.matmul(qh, kh.T) * scale
            if key_mask is not None:
                scores = scores + bias
            attn = T.softmax(scores, axis=-1)
            if capture is not None:
                capture.append(attn.data.copy())
            outs.append(T.matmul(attn, vh))
        return self.wo(T.concat_cols(outs))

    def params(self, prefix: str) -> dict[str, T.Tensor]:
        out = {}
        for name, lin in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            out.update(lin.params(f"{prefix}.{name}"))
        return out


class TransformerBlock:
    """Pre-LN block: x += attn(LN(x)); x += ffn(LN(x))."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int, ffn_multiplier: int):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(rng, d, heads)
        self.ln2 = LayerNorm(d)
        self.ffn1 = Linear(rng, d, d * ffn_multiplier)
        self.ffn2 = Linear(rng, d * ffn_multiplier, d)

    def __call__(self, x, key_mask=None, dropout=0.0, train_rng=None, capture=None):
        a = self.attn(self.ln1(x), key_mask=key_mask, capture=capture)
        x = x + T.dropout(a, dropout, train_rng)
        f = self.ffn2(T.gelu(self.ffn1(self.ln2(x))))
        return x + T.dropout(f, dropout, train_rng)

    def params(self, prefix: str) -> dict[str, T.Tensor]:
        out = {}
        out.update(self.ln1.params(f"{prefix}.ln1"))
        out.update(self.attn.params(f"{prefix}.attn"))
        out.update(self.ln2.params(f"{prefix}.ln2"))
        out.update(self.ffn1.params(f"{prefix}.ffn1"))
        out.update(self.ffn2.params(f"{prefix}.ffn2"))
        return out


class TransformerStack:
    def __init__(self, rng, d: int, layers: int, heads: int, ffn_multiplier: int):
        self.blocks = [TransformerBlock(rng, d, heads, ffn_multiplier) for _ in range(layers)]
        self.ln_out = LayerNorm(d)

    def __call__(self, x, key_mask=None, dropout=0.0, train_rng=None, capture=None):
        for i, block in enumerate(self.blocks):
            layer_capture = None
            if capture is not None:
                capture.append([])
                layer_capture = capture[-1]
            x = block(x, key_mask=key_mask, dropout=dropout, train_rng=train_rng, capture=layer_capture)
        return self.ln_out(x)

    def params(self, prefix: str) -> dict[str, T.Tensor]:
        out = {}
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"{prefix}.{i}"))
        out.update(self.ln_out.params(f"{prefix}.ln_out"))
        return out


# -- the encoder --------------------------------------------------------------


@dataclass
class EncodedClip:
    """Per-clip encoder outputs, with frame rows in timestamp order."""

    clip: AlignedClip
    w_cross: list[T.Tensor]  # per sentence, (L_i, d)
    v_emb: T.Tensor  # (N_v, d) video-embedder output
    v_cross: T.Tensor  # (N_v, d) fused frame rows
    v_temp: T.Tensor  # (N_v, d) temporally contextualized rows
    attention: dict = field(default_factory=dict)


class HierarchicalEncoder:
    """Embeds tokens and frames, fuses each sentence with its frame group,
    then contextualizes the reassembled clip with the temporal stack."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.token_emb = EmbeddingTable(rng, c.vocab_size, c.d)
        self.text_pos = EmbeddingTable(rng, c.max_tokens, c.d)
        self.text_ln = LayerNorm(c.d)
        self.frame_fc = Linear(rng, c.frame_feature_dim, c.d)
        self.frame_pos = EmbeddingTable(rng, c.max_frames, c.d)
        self.frame_ln = LayerNorm(c.d)
        self.cross = TransformerStack(rng, c.d, c.cross_layers, c.cross_heads, c.ffn_multiplier)
        self.temporal = TransformerStack(
            rng, c.d, c.temporal_layers, c.temporal_heads, c.ffn_multiplier
        )

    def params(self, prefix: str = "encoder") -> dict[str, T.Tensor]:
        out = {}
        out.update(self.token_emb.params(f"{prefix}.token_emb"))
        out.update(self.text_pos.params(f"{prefix}.text_pos"))
        out.update(self.text_ln.params(f"{prefix}.text_ln"))
        out.update(self.frame_fc.params(f"{prefix}.frame_fc"))
        out.update(self.frame_pos.params(f"{prefix}.frame_pos"))
        out.update(self.frame_ln.params(f"{prefix}.frame_ln"))
        out.update(self.cross.params(f"{prefix}.cross"))
        out.update(self.temporal.params(f"{prefix}.temporal"))
        return out

    # -- embedders -----------------------------------------------------------

    def embed_text(self, token_ids: Sequence[int]) -> T.Tensor:
        """LN(token embedding + position embedding), truncating overlong input."""
        ids = list(token_ids)
        if len(ids) > self.config.max_tokens:
            log.warning(
                "sentence of %d tokens truncated to max_tokens=%d", len(ids), self.config.max_tokens
            )
            ids = ids[: self.config.max_tokens]
        if not ids:
            raise UsageError("embed_text needs at least one token")
        if max(ids) >= self.config.vocab_size or min(ids) < 0:
            raise IndexError(f"token id out of range [0, {self.config.vocab_size})")
        tok = self.token_emb(ids)
        pos = self.text_pos(np.arange(len(ids)))
        return self.text_ln(tok + pos)

    def embed_video(self, features: np.ndarray, positions) -> T.Tensor:
        """LN(FC(features) + position embedding) at the given frame positions.

        ``positions`` is an int start (contiguous group) or explicit per-row
        frame indices.
        """
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.config.frame_feature_dim:
            raise ShapeError(
                f"frame features {features.shape} do not match "
                f"frame_feature_dim={self.config.frame_feature_dim}"
            )
        if isinstance(positions, (int, np.integer)):
            positions = np.arange(positions, positions + features.shape[0])
        positions = np.asarray(positions, dtype=np.intp)
        if positions.max(initial=0) >= self.config.max_frames:
            raise ShapeError(
                f"frame position {positions.max()} exceeds max_frames={self.config.max_frames}"
            )
        proj = self.frame_fc(T.Tensor(features))
        pos = self.frame_pos(positions)
        return self.frame_ln(proj + pos)

    # -- transformer stages ----------------------------------------------------

    def cross_modal_forward(
        self,
        v_emb: T.Tensor | None,
        w_emb: T.Tensor | None,
        train_rng: np.random.Generator | None = None,
        capture: list | None = None,
    ) -> tuple[T.Tensor | None, T.Tensor | None]:
        """Self-attention over the joint [frames | tokens] sequence, split back
        by modality afterwards.  Either side may be absent (the query path
        passes no frames)."""
        if v_emb is None and w_emb is None:
            raise UsageError("cross_modal_forward needs at least one modality")
        parts = [p for p in (v_emb, w_emb) if p is not None]
        joint = parts[0] if len(parts) == 1 else T.concat_rows(parts)
        out = self.cross(
            joint, dropout=self.config.dropout, train_rng=train_rng, capture=capture
        )
        k = v_emb.shape[0] if v_emb is not None else 0
        v_cross = T.take_rows(out, np.arange(k)) if v_emb is not None else None
        w_cross = (
            T.take_rows(out, np.arange(k, out.shape[0])) if w_emb is not None else None
        )
        return v_cross, w_cross

    def temporal_apply(
        self,
        rows: T.Tensor,
        key_mask: np.ndarray | None = None,
        train_rng: np.random.Generator | None = None,
        capture: list | None = None,
    ) -> T.Tensor:
        return self.temporal(
            rows, key_mask=key_mask, dropout=self.config.dropout, train_rng=train_rng, capture=capture
        )

    def temporal_forward(
        self,
        v_emb: T.Tensor,
        v_cross: T.Tensor,
        pad_mask: np.ndarray | None = None,
        train_rng: np.random.Generator | None = None,
        capture: list | None = None,
    ) -> T.Tensor:
        """f_temp(V_emb + V_cross): the embedder residual carries position
        information into the temporal stack."""
        if v_emb.shape != v_cross.shape:
            raise ShapeError(f"residual shape {v_emb.shape} != fused shape {v_cross.shape}")
        return self.temporal_apply(v_emb + v_cross, key_mask=pad_mask, train_rng=train_rng, capture=capture)

    # -- whole-clip pipeline -----------------------------------------------------

    def fuse_clip(
        self,
        clip: AlignedClip,
        token_ids_override: Sequence[Sequence[int]] | None = None,
        frame_features_override: np.ndarray | None = None,
        train_rng: np.random.Generator | None = None,
        capture_attention: bool = False,
    ) -> tuple[T.Tensor, T.Tensor, list[T.Tensor], dict]:
        """Run embedders and per-sentence fusion; reassemble frame rows in
        timestamp order.  Overrides substitute masked inputs without
        touching the clip itself."""
        if clip.n_frames > self.config.max_frames:
            raise ShapeError(
                f"clip {clip.clip_id!r} has {clip.n_frames} frames, "
                f"max_frames={self.config.max_frames}"
            )
        features = (
            clip.frame_features if frame_features_override is None else frame_features_override
        )
        attention: dict = {}
        v_emb_parts, v_cross_parts, w_cross_list = [], [], []
        order = []
        for j, sent in enumerate(clip.sentences):
            ids = sent.token_ids if token_ids_override is None else token_ids_override[j]
            group = np.asarray(sent.frame_indices, dtype=np.intp)
            w_emb = self.embed_text(ids) if len(ids) else None
            v_emb = self.embed_video(features[group], group) if len(group) else None
            capture = [] if capture_attention else None
            v_cross, w_cross = self.cross_modal_forward(
                v_emb, w_emb, train_rng=train_rng, capture=capture
            )
            if capture_attention:
                attention[("cross", j)] = capture
            if v_emb is not None:
                v_emb_parts.append(v_emb)
                v_cross_parts.append(v_cross)
                order.extend(sent.frame_indices)
            w_cross_list.append(w_cross)

        # scatter sentence groups back into global timestamp order
        perm = np.argsort(np.asarray(order, dtype=np.intp), kind="stable")
        v_emb_full = T.take_rows(T.concat_rows(v_emb_parts), perm)
        v_cross_full = T.take_rows(T.concat_rows(v_cross_parts), perm)
        return v_emb_full, v_cross_full, w_cross_list, attention

    def encode_clip(
        self,
        clip: AlignedClip,
        token_ids_override: Sequence[Sequence[int]] | None = None,
        frame_features_override: np.ndarray | None = None,
        train_rng: np.random.Generator | None = None,
        capture_attention: bool = False,
    ) -> EncodedClip:
        v_emb, v_cross, w_cross_list, attention = self.fuse_clip(
            clip,
            token_ids_override=token_ids_override,
            frame_features_override=frame_features_override,
            train_rng=train_rng,
            capture_attention=capture_attention,
        )
        capture = [] if capture_attention else None
        v_temp = self.temporal_forward(v_emb, v_cross, train_rng=train_rng, capture=capture)
        if capture_attention:
            attention[("temporal",)] = capture
        return EncodedClip(
            clip=clip,
            w_cross=w_cross_list,
            v_emb=v_emb,
            v_cross=v_cross,
            v_temp=v_temp,
            attention=attention,
        )
