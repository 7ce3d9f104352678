"""Counterpart-motion predictors.

All three models share one call signature::

    model(x_ctx, y_ctx, past, person_ids=(0, 1)) -> (B, 51)

x_ctx / y_ctx are the subject and counterpart context windows (B, 30, 51),
``past`` is the last 10 frames of both (B, 10, 102). The inverted and
segment models ignore ``past``; it is a suffix of the context anyway.

``person_ids`` names the owner of the subject slot and the counterpart slot.
It only matters with ``use_person_id`` on; swapping it to (1, 0) attaches
each person's embedding to the other person's features.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, replace

import torch
from torch import Tensor, nn

from .errors import ConfigError, DivergenceError, ShapeError
from .nn import (
    AttentionConfig,
    DecoderLayer,
    EncoderLayer,
    FeedForward,
    MultiHeadAttention,
    causal_mask,
    count_parameters,
    glorot_linear,
    sinusoidal_positional_encoding,
)


class Arch(str, enum.Enum):
    SIMPLE = "simple"
    INVERTED = "inverted"
    CROSS_SEGMENT = "crossseg"


@dataclass(frozen=True)
class ModelConfig:
    arch: Arch = Arch.SIMPLE
    n_encoder_layers: int = 2
    n_decoder_layers: int = 1
    d_model: int = 512
    n_heads: int = 8
    d_ffn: int = 2048
    dropout: float = 0.1
    activation: str = "gelu"
    use_person_id: bool = False
    seg_len: int = 5
    n_routers: int = 30
    ctx_len: int = 30
    past_len: int = 10
    n_persons: int = 2
    feats_per_person: int = 51

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch(self.arch))
        if self.feats_per_person != 17 * 3:
            raise ConfigError("feats_per_person must be 51 (17 joints x 3)")
        if self.activation != "gelu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.past_len > self.ctx_len:
            raise ConfigError("past_len cannot exceed ctx_len")
        if self.n_persons != 2:
            raise ConfigError("exactly two persons are supported")
        if self.arch is Arch.CROSS_SEGMENT and self.ctx_len % self.seg_len:
            raise ConfigError(f"ctx_len={self.ctx_len} not divisible by seg_len={self.seg_len}")

    @property
    def n_variates(self) -> int:
        return self.n_persons * self.feats_per_person

    @property
    def n_segments(self) -> int:
        return self.ctx_len // self.seg_len

    @property
    def out_segments(self) -> int:
        # one predicted frame, rounded up to whole segments
        return math.ceil(1 / self.seg_len)

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.d_model, self.n_heads, self.dropout)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arch"] = self.arch.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


def _owners(person_ids, n_feats: int, device) -> Tensor:
    """Per-variate owner ids: n_feats for the subject slot, then the counterpart slot."""
    a, b = (int(i) for i in person_ids)
    return torch.tensor([a] * n_feats + [b] * n_feats, dtype=torch.long, device=device)


class MotionModel(nn.Module):
    """Common plumbing: config, shape checks, divergence-checked prediction."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg

    def _check(self, x_ctx: Tensor, y_ctx: Tensor, past: Tensor | None) -> None:
        c = self.cfg
        want = (c.ctx_len, c.feats_per_person)
        if x_ctx.dim() != 3 or tuple(x_ctx.shape[1:]) != want or x_ctx.shape != y_ctx.shape:
            raise ShapeError(f"contexts must be (B, {c.ctx_len}, {c.feats_per_person})")
        if past is not None and tuple(past.shape) != (x_ctx.shape[0], c.past_len, c.n_variates):
            raise ShapeError(f"past must be (B, {c.past_len}, {c.n_variates})")

    @property
    def num_parameters(self) -> int:
        return count_parameters(self)

    @torch.no_grad()
    def predict(self, x_ctx: Tensor, y_ctx: Tensor, past: Tensor | None = None, person_ids=(0, 1)) -> Tensor:
        out = self(x_ctx, y_ctx, past, person_ids)
        if not torch.isfinite(out).all():
            raise DivergenceError("model produced non-finite output")
        return out


class SimpleTransformer(MotionModel):
    """Temporal-token encoder/decoder.

    Encoder tokens are the 30 context frames with both persons' 51 features
    concatenated; decoder tokens are the 10 past frames under a causal mask.
    The last decoder position is projected to the counterpart's next frame.
    Person embeddings live in feature space (one 51-vector per person added
    to that person's slice of every frame).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        att = cfg.attention
        f = cfg.feats_per_person
        self.enc_in = glorot_linear(cfg.n_variates, cfg.d_model)
        self.dec_in = glorot_linear(cfg.n_variates, cfg.d_model)
        self.register_buffer("enc_pe", sinusoidal_positional_encoding(cfg.ctx_len, cfg.d_model), persistent=False)
        self.register_buffer("dec_pe", sinusoidal_positional_encoding(cfg.past_len, cfg.d_model), persistent=False)
        self.register_buffer("dec_mask", causal_mask(cfg.past_len), persistent=False)
        self.drop = nn.Dropout(cfg.dropout)
        self.encoder = nn.ModuleList(EncoderLayer(att, cfg.d_ffn) for _ in range(cfg.n_encoder_layers))
        self.enc_norm = nn.LayerNorm(cfg.d_model)
        self.decoder = nn.ModuleList(DecoderLayer(att, cfg.d_ffn) for _ in range(cfg.n_decoder_layers))
        self.dec_norm = nn.LayerNorm(cfg.d_model)
        self.head = glorot_linear(cfg.d_model, f)
        if cfg.use_person_id:
            self.person_embedding = nn.Parameter(torch.randn(cfg.n_persons, f) * 0.02)

    def apply_person_id(self, frames: Tensor, person_ids) -> Tensor:
        """Add each slot owner's vector to its 51-feature slice of (B, L, 102)."""
        if not self.cfg.use_person_id:
            return frames
        owners = _owners(person_ids, self.cfg.feats_per_person, frames.device)
        f = self.cfg.feats_per_person
        emb = torch.cat([self.person_embedding[owners[0]], self.person_embedding[owners[f]]])
        return frames + emb

    def encode(self, x_ctx: Tensor, y_ctx: Tensor, person_ids=(0, 1)) -> Tensor:
        src = self.apply_person_id(torch.cat([x_ctx, y_ctx], dim=-1), person_ids)
        h = self.drop(self.enc_in(src) + self.enc_pe)
        for layer in self.encoder:
            h = layer(h)
        return self.enc_norm(h)

    def forward(self, x_ctx: Tensor, y_ctx: Tensor, past: Tensor | None = None, person_ids=(0, 1)) -> Tensor:
        self._check(x_ctx, y_ctx, past)
        if past is None:
            past = torch.cat([x_ctx, y_ctx], dim=-1)[:, -self.cfg.past_len :]
        memory = self.encode(x_ctx, y_ctx, person_ids)
        return self.head(self.decode(past, memory, person_ids)[:, -1])

    def decode(self, past: Tensor, memory: Tensor, person_ids=(0, 1)) -> Tensor:
        """(B, past_len, d_model) decoder states; position i only sees past[:, :i + 1]."""
        h = self.drop(self.dec_in(self.apply_person_id(past, person_ids)) + self.dec_pe)
        for layer in self.decoder:
            h = layer(h, memory, self.dec_mask)
        return self.dec_norm(h)


class InvertedTransformer(MotionModel):
    """Variate-token encoder: each of the 102 scalar series is one token.

    No attention over time; a shared linear map embeds each 30-frame series
    and a shared linear head reads one value back per token.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        att = cfg.attention
        self.embed = glorot_linear(cfg.ctx_len, cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)
        self.encoder = nn.ModuleList(EncoderLayer(att, cfg.d_ffn) for _ in range(cfg.n_encoder_layers))
        self.norm = nn.LayerNorm(cfg.d_model)
        self.head = glorot_linear(cfg.d_model, 1)
        if cfg.use_person_id:
            self.person_embedding = nn.Parameter(torch.randn(cfg.n_persons, cfg.d_model) * 0.02)

    def apply_person_id(self, tokens: Tensor, owners: Tensor | None) -> Tensor:
        if not self.cfg.use_person_id:
            return tokens
        if owners is None or owners.shape[0] != tokens.shape[-2]:
            raise ConfigError("every variate token needs an owner")
        return tokens + self.person_embedding[owners]

    def forward_variates(self, series: Tensor, owners: Tensor | None = None) -> Tensor:
        """(B, D, T) series -> (B, D) one predicted value per variate."""
        h = self.drop(self.apply_person_id(self.embed(series), owners))
        for layer in self.encoder:
            h = layer(h)
        return self.head(self.norm(h)).squeeze(-1)

    def forward(self, x_ctx: Tensor, y_ctx: Tensor, past: Tensor | None = None, person_ids=(0, 1)) -> Tensor:
        self._check(x_ctx, y_ctx, past)
        f = self.cfg.feats_per_person
        series = torch.cat([x_ctx, y_ctx], dim=-1).transpose(1, 2)
        out = self.forward_variates(series, _owners(person_ids, f, series.device))
        return out[:, f:]


class TwoStageAttention(nn.Module):
    """Cross-time then cross-dimension attention on (B, D, S, d_model) tokens.

    Stage 1 attends over the S segments of each variate. Stage 2 runs, per
    segment position, F router tokens over the D variates (routers as
    queries) and then the variates over the routers.
    """

    def __init__(self, att: AttentionConfig, d_ffn: int, n_segments: int, n_routers: int):
        super().__init__()
        d = att.d_model
        self.time_norm = nn.LayerNorm(d)
        self.time_attn = MultiHeadAttention(att)
        self.time_ffn_norm = nn.LayerNorm(d)
        self.time_ffn = FeedForward(d, d_ffn, att.dropout)
        self.dim_norm = nn.LayerNorm(d)
        self.dim_sender = MultiHeadAttention(att)
        self.dim_receiver = MultiHeadAttention(att)
        self.dim_ffn_norm = nn.LayerNorm(d)
        self.dim_ffn = FeedForward(d, d_ffn, att.dropout)
        self.drop = nn.Dropout(att.dropout)
        self.router = nn.Parameter(torch.empty(n_segments, n_routers, d))
        nn.init.xavier_uniform_(self.router.data.view(n_segments * n_routers, d))

    def forward(self, x: Tensor, return_attn: bool = False):
        if x.dim() != 4 or x.shape[2] != self.router.shape[0] or x.shape[3] != self.router.shape[2]:
            raise ShapeError(f"TSA expects (B, D, {self.router.shape[0]}, {self.router.shape[2]}), got {tuple(x.shape)}")
        b, d_var, s, d = x.shape

        h = self.time_norm(x)
        t_out, t_w = self.time_attn(h, h, h, return_weights=True)
        x = x + self.drop(t_out)
        x = x + self.drop(self.time_ffn(self.time_ffn_norm(x)))

        # (B, D, S, d) -> (B, S, D, d): one routing problem per segment position
        xs = x.transpose(1, 2)
        h = self.dim_norm(xs)
        routers = self.router.unsqueeze(0).expand(b, -1, -1, -1)
        buffer, send_w = self.dim_sender(routers, h, h, return_weights=True)
        received, recv_w = self.dim_receiver(h, buffer, buffer, return_weights=True)
        xs = xs + self.drop(received)
        xs = xs + self.drop(self.dim_ffn(self.dim_ffn_norm(xs)))
        out = xs.transpose(1, 2)
        if return_attn:
            return out, {"time": t_w, "send": send_w, "receive": recv_w}
        return out


class SegmentDecoderLayer(nn.Module):
    """TSA over the decoder's own tokens, then per-variate cross-attention."""

    def __init__(self, att: AttentionConfig, d_ffn: int, out_segments: int, n_routers: int):
        super().__init__()
        self.tsa = TwoStageAttention(att, d_ffn, out_segments, n_routers)
        self.cross_norm = nn.LayerNorm(att.d_model)
        self.cross_attn = MultiHeadAttention(att)
        self.ffn_norm = nn.LayerNorm(att.d_model)
        self.ffn = FeedForward(att.d_model, d_ffn, att.dropout)
        self.drop = nn.Dropout(att.dropout)

    def forward(self, x: Tensor, memory: Tensor) -> Tensor:
        x = self.tsa(x)
        x = x + self.drop(self.cross_attn(self.cross_norm(x), memory, memory))
        return x + self.drop(self.ffn(self.ffn_norm(x)))


class CrossSegmentTransformer(MotionModel):
    """Segment-token model with two-stage (time, then router) attention.

    Each variate's 30-frame context is cut into ``seg_len``-frame segments,
    each embedded as one token. The decoder holds ``out_segments`` learned
    tokens per variate and emits ``seg_len`` frames per variate; only the
    first frame is used as the prediction.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        att = cfg.attention
        d_var, s, d = cfg.n_variates, cfg.n_segments, cfg.d_model
        self.seg_embed = glorot_linear(cfg.seg_len, d)
        self.enc_pos = nn.Parameter(torch.randn(1, d_var, s, d) * 0.02)
        self.enc_norm_in = nn.LayerNorm(d)
        self.drop = nn.Dropout(cfg.dropout)
        self.encoder = nn.ModuleList(
            TwoStageAttention(att, cfg.d_ffn, s, cfg.n_routers) for _ in range(cfg.n_encoder_layers)
        )
        self.enc_norm = nn.LayerNorm(d)
        self.dec_pos = nn.Parameter(torch.randn(1, d_var, cfg.out_segments, d) * 0.02)
        self.decoder = nn.ModuleList(
            SegmentDecoderLayer(att, cfg.d_ffn, cfg.out_segments, cfg.n_routers)
            for _ in range(cfg.n_decoder_layers)
        )
        self.dec_norm = nn.LayerNorm(d)
        self.head = glorot_linear(d, cfg.seg_len)
        if cfg.use_person_id:
            self.person_embedding = nn.Parameter(torch.randn(cfg.n_persons, d) * 0.02)

    def segment(self, series: Tensor) -> Tensor:
        """(B, D, T) -> (B, D, T / seg_len, seg_len)."""
        b, d_var, t = series.shape
        if t % self.cfg.seg_len:
            raise ConfigError(f"series length {t} not divisible by seg_len={self.cfg.seg_len}")
        return series.reshape(b, d_var, t // self.cfg.seg_len, self.cfg.seg_len)

    def apply_person_id(self, tokens: Tensor, owners: Tensor | None) -> Tensor:
        if not self.cfg.use_person_id:
            return tokens
        if owners is None or owners.shape[0] != tokens.shape[1]:
            raise ConfigError("every variate token needs an owner")
        return tokens + self.person_embedding[owners][None, :, None, :]

    def encode(self, series: Tensor, owners: Tensor | None) -> Tensor:
        tokens = self.seg_embed(self.segment(series)) + self.enc_pos
        h = self.drop(self.enc_norm_in(self.apply_person_id(tokens, owners)))
        for layer in self.encoder:
            h = layer(h)
        return self.enc_norm(h)

    def forward_segments(self, series: Tensor, owners: Tensor | None = None) -> Tensor:
        """(B, D, T) -> (B, D, out_segments * seg_len) predicted frames per variate."""
        memory = self.encode(series, owners)
        b = series.shape[0]
        h = self.dec_pos.expand(b, -1, -1, -1)
        for layer in self.decoder:
            h = layer(h, memory)
        out = self.head(self.dec_norm(h))
        return out.reshape(b, series.shape[1], -1)

    def forward(self, x_ctx: Tensor, y_ctx: Tensor, past: Tensor | None = None, person_ids=(0, 1)) -> Tensor:
        self._check(x_ctx, y_ctx, past)
        f = self.cfg.feats_per_person
        series = torch.cat([x_ctx, y_ctx], dim=-1).transpose(1, 2)
        frames = self.forward_segments(series, _owners(person_ids, f, series.device))
        return frames[:, f:, 0]


_ARCHS = {
    Arch.SIMPLE: SimpleTransformer,
    Arch.INVERTED: InvertedTransformer,
    Arch.CROSS_SEGMENT: CrossSegmentTransformer,
}


def build_model(cfg: ModelConfig, seed: int | None = None) -> MotionModel:
    """Instantiate the configured architecture; ``seed`` fixes the init."""
    if seed is not None:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            return _ARCHS[cfg.arch](cfg)
    return _ARCHS[cfg.arch](cfg)
