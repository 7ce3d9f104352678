"""Neural building blocks shared by the three architectures.

Thin layer over torch: attention is written out so the weights can be
inspected, everything else is the usual torch module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .errors import ConfigError, DivergenceError, ShapeError


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int = 512
    n_heads: int = 8
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-4
    algorithm: str = "adam"
    batch_size: int = 32
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.algorithm not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.algorithm!r}")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


def gelu_tanh(x: Tensor) -> Tensor:
    return 0.5 * x * (1.0 + torch.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def glorot_linear(d_in: int, d_out: int, bias: bool = True) -> nn.Linear:
    lin = nn.Linear(d_in, d_out, bias=bias)
    nn.init.xavier_uniform_(lin.weight)
    if bias:
        nn.init.zeros_(lin.bias)
    return lin


def causal_mask(length: int, device=None) -> Tensor:
    """Additive mask: 0 on and below the diagonal, -inf above."""
    m = torch.full((length, length), float("-inf"), device=device)
    return torch.triu(m, diagonal=1)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over the second-to-last axis.

    Inputs are (..., L, d_model); any leading axes are treated as batch.
    """

    def __init__(self, cfg: AttentionConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.q_proj = glorot_linear(d, d)
        self.k_proj = glorot_linear(d, d)
        self.v_proj = glorot_linear(d, d)
        self.out_proj = glorot_linear(d, d)
        self.attn_drop = nn.Dropout(cfg.dropout)

    def forward(self, q: Tensor, k: Tensor, v: Tensor, mask: Tensor | None = None, return_weights: bool = False):
        d = self.cfg.d_model
        if q.shape[-1] != d or k.shape[-1] != d or v.shape[-1] != d:
            raise ShapeError(f"attention inputs must end in d_model={d}")
        if k.shape[-2] != v.shape[-2]:
            raise ShapeError("keys and values need the same sequence length")
        lead = q.shape[:-2]
        h, dh = self.cfg.n_heads, self.cfg.d_head
        lq, lk = q.shape[-2], k.shape[-2]

        def heads(x: Tensor, length: int) -> Tensor:
            return x.reshape(*x.shape[:-2], length, h, dh).transpose(-3, -2)

        qh = heads(self.q_proj(q), lq)
        kh = heads(self.k_proj(k), lk)
        vh = heads(self.v_proj(v), lk)
        scores = qh @ kh.transpose(-1, -2) / math.sqrt(dh)
        if mask is not None:
            scores = scores + mask
        weights = torch.softmax(scores, dim=-1)
        out = self.attn_drop(weights) @ vh
        out = out.transpose(-3, -2).reshape(*lead, lq, d)
        out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out


class FeedForward(nn.Module):
    def __init__(self, d_model: int = 512, d_ffn: int = 2048, dropout: float = 0.1):
        super().__init__()
        self.d_model = d_model
        self.lin1 = glorot_linear(d_model, d_ffn)
        self.lin2 = glorot_linear(d_ffn, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_model:
            raise ShapeError(f"feed-forward input must end in d_model={self.d_model}")
        return self.lin2(self.drop(gelu(self.lin1(x))))


class EncoderLayer(nn.Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, cfg: AttentionConfig, d_ffn: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, d_ffn, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: Tensor, mask: Tensor | None = None) -> Tensor:
        h = self.norm1(x)
        x = x + self.drop(self.attn(h, h, h, mask))
        return x + self.drop(self.ffn(self.norm2(x)))


class DecoderLayer(nn.Module):
    """Pre-norm masked self-attention, cross-attention and feed-forward."""

    def __init__(self, cfg: AttentionConfig, d_ffn: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, d_ffn, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: Tensor, memory: Tensor, self_mask: Tensor | None = None) -> Tensor:
        h = self.norm1(x)
        x = x + self.drop(self.self_attn(h, h, h, self_mask))
        h = self.norm2(x)
        x = x + self.drop(self.cross_attn(h, memory, memory))
        return x + self.drop(self.ffn(self.norm3(x)))


def sinusoidal_positional_encoding(seq_len: int, d_model: int) -> Tensor:
    """(seq_len, d_model) table; even columns sin, odd columns cos."""
    if seq_len < 1:
        raise ShapeError("seq_len must be >= 1")
    pos = torch.arange(seq_len, dtype=torch.float64).unsqueeze(1)
    freq = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / d_model))
    pe = torch.zeros(seq_len, d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq[: d_model // 2])
    return pe.to(torch.float32)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error, accumulated in float64."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    diff = pred.to(torch.float64) - target.to(torch.float64)
    return (diff * diff).mean()


def make_optimizer(params, cfg: OptimizerConfig) -> torch.optim.Optimizer:
    params = list(params)
    if cfg.algorithm == "sgd":
        return torch.optim.SGD(params, lr=cfg.learning_rate)
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps)


def check_gradients(params) -> None:
    for i, p in enumerate(params):
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise DivergenceError(f"non-finite gradient in parameter {i}", index=i)


def clip_gradients(params, max_norm: float) -> float:
    return float(torch.nn.utils.clip_grad_norm_(list(params), max_norm))


def optimizer_step(optimizer: torch.optim.Optimizer) -> None:
    """Check every gradient is finite, then apply one update."""
    for group in optimizer.param_groups:
        check_gradients(group["params"])
    optimizer.step()


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())

