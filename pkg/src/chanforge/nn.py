"""Differentiable building blocks for the channel GAN.

Double-precision tensor math on CPU: dense layers, activations, scaled
dot-product and multi-head attention, layer normalization, the residual
transformer encoder stack, and learned positional encoding. All functions
are pure maps from (inputs, parameter dict) to outputs; reverse-mode
derivatives come from the autograd engine via grad(), including the
second-order pattern the gradient penalty needs (the input-gradient map is
itself differentiable w.r.t. parameters).

Parameters live in plain dicts keyed by stable names; dict insertion order
is the canonical ordering everywhere (checkpoints, optimizers, gradients).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

DTYPE = torch.float64

ParamStore = dict[str, torch.Tensor]


class NonFiniteError(ArithmeticError):
    """A forward value or gradient came out NaN/inf; message names the tensor."""


def set_single_thread() -> None:
    """Pin intra-op parallelism to one thread so runs are bit-reproducible."""
    torch.set_num_threads(1)


@dataclass(frozen=True)
class ArchConfig:
    """Network dimensions shared by generator and discriminator.

    seq_len positions of width d_m are embedded to width d_x, run through
    n_layers encoder layers with n_heads attention heads (head width
    d_x / n_heads), and read out through the role-specific head.
    """

    seq_len: int = 15
    d_m: int = 15
    d_x: int = 128
    n_layers: int = 6
    n_heads: int = 4
    noise_dim: int = 32
    leaky_slope: float = 0.2
    gen_hidden: int = 240
    out_dim: int = 60
    ln_eps: float = 1e-5

    def __post_init__(self):
        dims = (self.seq_len, self.d_m, self.d_x, self.n_layers, self.n_heads,
                self.noise_dim, self.gen_hidden, self.out_dim)
        if any(d < 1 for d in dims):
            raise ValueError("all architecture dimensions must be >= 1")
        if self.d_x % self.n_heads != 0:
            raise ValueError(f"d_x={self.d_x} must be divisible by n_heads={self.n_heads}")

    @property
    def d_k(self) -> int:
        return self.d_x // self.n_heads

    @property
    def d_v(self) -> int:
        return self.d_x // self.n_heads

    def to_dict(self) -> dict:
        return {
            "seq_len": self.seq_len, "d_m": self.d_m, "d_x": self.d_x,
            "n_layers": self.n_layers, "n_heads": self.n_heads,
            "noise_dim": self.noise_dim, "leaky_slope": self.leaky_slope,
            "gen_hidden": self.gen_hidden, "out_dim": self.out_dim,
            "ln_eps": self.ln_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**d)


def paper_arch() -> ArchConfig:
    """Full-size architecture: d_x=128, 6 layers, 4 heads."""
    return ArchConfig()


def reduced_arch() -> ArchConfig:
    """Desk-scale architecture for CPU tests: d_x=32, 2 layers, 2 heads."""
    return ArchConfig(d_x=32, n_layers=2, n_heads=2)


def as_tensor(x, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(x), dtype=DTYPE)
    if requires_grad:
        t = t.clone().requires_grad_(True)
    return t


def _check2d(name: str, t: torch.Tensor, rows: int | None, cols: int | None):
    if t.dim() != 2:
        raise ValueError(f"{name} must be 2-D, got shape {tuple(t.shape)}")
    if rows is not None and t.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {t.shape[0]}")
    if cols is not None and t.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} cols, got {t.shape[1]}")


def dense(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Affine map x @ w + b over the last dimension."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(
            f"dense: input width {x.shape[-1]} does not match weight rows {w.shape[0]}"
        )
    if b.shape != (w.shape[1],):
        raise ValueError(f"dense: bias shape {tuple(b.shape)} != ({w.shape[1]},)")
    return x @ w + b


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.clamp(x, min=0.0)


def leaky_relu(x: torch.Tensor, slope: float = 0.2) -> torch.Tensor:
    return torch.where(x >= 0, x, slope * x)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Shift-stabilized softmax; rows sum to one."""
    z = x - x.max(dim=dim, keepdim=True).values
    e = torch.exp(z)
    return e / e.sum(dim=dim, keepdim=True)


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """softmax(q k^T / sqrt(d_k)) v over the trailing two dims."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError("attention: q and k must share the key width")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError("attention: k and v must agree on the sequence length")
    d_k = q.shape[-1]
    logits = q @ k.transpose(-1, -2) / math.sqrt(d_k)
    return softmax(logits, dim=-1) @ v


def multi_head_attention(
    x: torch.Tensor, heads: list[tuple[torch.Tensor, torch.Tensor, torch.Tensor]],
    wo: torch.Tensor,
) -> torch.Tensor:
    """Concat of per-head attention outputs, mixed by the output matrix."""
    outs = []
    for wq, wk, wv in heads:
        outs.append(attention(x @ wq, x @ wk, x @ wv))
    cat = torch.cat(outs, dim=-1)
    if cat.shape[-1] != wo.shape[0]:
        raise ValueError(
            f"multi_head_attention: concat width {cat.shape[-1]} != wo rows {wo.shape[0]}"
        )
    return cat @ wo


def layer_norm(x: torch.Tensor, scale: torch.Tensor, offset: torch.Tensor,
               eps: float = 1e-5) -> torch.Tensor:
    """Normalize each position over the feature dimension, then rescale."""
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * scale + offset


def feed_forward(x, w1, b1, w2, b2) -> torch.Tensor:
    """Two dense layers with a ReLU between (hidden width = model width)."""
    return dense(relu(dense(x, w1, b1)), w2, b2)


def _layer_heads(params: ParamStore, prefix: str, n_heads: int):
    return [
        (params[f"{prefix}.attn.h{j}.wq"],
         params[f"{prefix}.attn.h{j}.wk"],
         params[f"{prefix}.attn.h{j}.wv"])
        for j in range(n_heads)
    ]


def encoder_layer(x: torch.Tensor, params: ParamStore, prefix: str,
                  n_heads: int, eps: float = 1e-5) -> torch.Tensor:
    """Residual multi-head attention and feed-forward sub-layers, each
    followed by layer normalization (post-norm)."""
    mha = multi_head_attention(x, _layer_heads(params, prefix, n_heads),
                               params[f"{prefix}.attn.wo"])
    y = layer_norm(x + mha, params[f"{prefix}.ln1.scale"],
                   params[f"{prefix}.ln1.offset"], eps)
    ffn = feed_forward(y, params[f"{prefix}.ffn.w1"], params[f"{prefix}.ffn.b1"],
                       params[f"{prefix}.ffn.w2"], params[f"{prefix}.ffn.b2"])
    return layer_norm(y + ffn, params[f"{prefix}.ln2.scale"],
                      params[f"{prefix}.ln2.offset"], eps)


def transformer_encoder(x: torch.Tensor, params: ParamStore, arch: ArchConfig,
                        prefix: str = "enc") -> torch.Tensor:
    for i in range(arch.n_layers):
        x = encoder_layer(x, params, f"{prefix}{i}", arch.n_heads, arch.ln_eps)
    return x


def positional_encode(x_embedding: torch.Tensor, pe: torch.Tensor) -> torch.Tensor:
    if x_embedding.shape[-2:] != pe.shape:
        raise ValueError(
            f"positional_encode: embedding {tuple(x_embedding.shape)} vs PE {tuple(pe.shape)}"
        )
    return x_embedding + pe


def init_tensor(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                requires_grad: bool = True) -> torch.Tensor:
    """Uniform init on [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(fan_in)
    t = torch.from_numpy(rng.uniform(-bound, bound, size=shape))
    return t.requires_grad_(requires_grad)


def clone_params(params: ParamStore, requires_grad: bool = True) -> ParamStore:
    return {k: v.detach().clone().requires_grad_(requires_grad) for k, v in params.items()}


def check_same_structure(a: ParamStore, b: ParamStore) -> None:
    if list(a.keys()) != list(b.keys()):
        raise ValueError("parameter stores have different tensor names/order")
    for k in a:
        if a[k].shape != b[k].shape:
            raise ValueError(f"parameter {k!r} shape mismatch: "
                             f"{tuple(a[k].shape)} vs {tuple(b[k].shape)}")


def grad(
    loss: torch.Tensor,
    params: ParamStore,
    inputs: tuple[torch.Tensor, ...] = (),
    create_graph: bool = False,
    allow_unused: bool = False,
) -> tuple[dict[str, torch.Tensor], tuple[torch.Tensor, ...]]:
    """Reverse-mode gradients of a scalar loss for every parameter (and,
    optionally, designated input tensors).

    With create_graph=True the returned gradients stay differentiable, which
    is what lets the gradient-penalty term be trained: the map from an
    interpolated input to its gradient is itself differentiated w.r.t. the
    parameters. Non-finite results raise NonFiniteError naming the first
    offending tensor.
    """
    if loss.dim() != 0:
        raise ValueError("loss must be a scalar")
    if not torch.isfinite(loss):
        raise NonFiniteError("loss is non-finite")
    names = list(params.keys())
    leaves = [params[n] for n in names] + list(inputs)
    grads = torch.autograd.grad(loss, leaves, create_graph=create_graph,
                                allow_unused=allow_unused)
    out: dict[str, torch.Tensor] = {}
    for n, g in zip(names, grads[: len(names)]):
        if g is None:
            g = torch.zeros_like(params[n])
        elif not torch.all(torch.isfinite(g)):
            raise NonFiniteError(f"gradient of parameter {n!r} is non-finite")
        out[n] = g
    input_grads = []
    for i, g in enumerate(grads[len(names):]):
        if g is not None and not torch.all(torch.isfinite(g)):
            raise NonFiniteError(f"gradient of input #{i} is non-finite")
        input_grads.append(g)
    return out, tuple(input_grads)
