"""Conditional generator and discriminator networks.

Both nets share one skeleton: the input (noise+condition for G, channel+
condition for D) is densely mapped to seq_len * d_m values, reshaped into a
sequence, embedded per position to width d_x, shifted by a learned
positional encoding, and run through the transformer encoder. The generator
reads out through dense layers of gen_hidden and out_dim neurons (tanh
keeps the output inside the normalized [-1, 1] box); the discriminator
through two single-neuron dense layers and a sigmoid, with the pre-sigmoid
logit clamped so the output never saturates to exactly 0 or 1.
"""
from __future__ import annotations

import numpy as np
import torch

from .nn import (
    ArchConfig,
    ParamStore,
    dense,
    init_tensor,
    leaky_relu,
    positional_encode,
    sigmoid,
    transformer_encoder,
)

LOGIT_CLAMP = 15.0
GeneratorParams = ParamStore
DiscriminatorParams = ParamStore


def _init_trunk(params: ParamStore, rng: np.random.Generator, arch: ArchConfig,
                in_dim: int) -> None:
    seq_width = arch.seq_len * arch.d_m
    params["input.w"] = init_tensor(rng, (in_dim, seq_width), in_dim)
    params["input.b"] = init_tensor(rng, (seq_width,), in_dim)
    params["embed.w"] = init_tensor(rng, (arch.d_m, arch.d_x), arch.d_m)
    params["embed.b"] = init_tensor(rng, (arch.d_x,), arch.d_m)
    params["pe"] = init_tensor(rng, (arch.seq_len, arch.d_x), arch.d_x)
    for i in range(arch.n_layers):
        p = f"enc{i}"
        for j in range(arch.n_heads):
            params[f"{p}.attn.h{j}.wq"] = init_tensor(rng, (arch.d_x, arch.d_k), arch.d_x)
            params[f"{p}.attn.h{j}.wk"] = init_tensor(rng, (arch.d_x, arch.d_k), arch.d_x)
            params[f"{p}.attn.h{j}.wv"] = init_tensor(rng, (arch.d_x, arch.d_v), arch.d_x)
        params[f"{p}.attn.wo"] = init_tensor(
            rng, (arch.n_heads * arch.d_v, arch.d_x), arch.n_heads * arch.d_v)
        params[f"{p}.ln1.scale"] = torch.ones(arch.d_x, dtype=torch.float64,
                                              requires_grad=True)
        params[f"{p}.ln1.offset"] = torch.zeros(arch.d_x, dtype=torch.float64,
                                                requires_grad=True)
        params[f"{p}.ffn.w1"] = init_tensor(rng, (arch.d_x, arch.d_x), arch.d_x)
        params[f"{p}.ffn.b1"] = init_tensor(rng, (arch.d_x,), arch.d_x)
        params[f"{p}.ffn.w2"] = init_tensor(rng, (arch.d_x, arch.d_x), arch.d_x)
        params[f"{p}.ffn.b2"] = init_tensor(rng, (arch.d_x,), arch.d_x)
        params[f"{p}.ln2.scale"] = torch.ones(arch.d_x, dtype=torch.float64,
                                              requires_grad=True)
        params[f"{p}.ln2.offset"] = torch.zeros(arch.d_x, dtype=torch.float64,
                                                requires_grad=True)


def init_generator_params(arch: ArchConfig, rng: np.random.Generator) -> GeneratorParams:
    params: ParamStore = {}
    _init_trunk(params, rng, arch, arch.noise_dim + 1)
    flat = arch.seq_len * arch.d_x
    params["head1.w"] = init_tensor(rng, (flat, arch.gen_hidden), flat)
    params["head1.b"] = init_tensor(rng, (arch.gen_hidden,), flat)
    params["head2.w"] = init_tensor(rng, (arch.gen_hidden, arch.out_dim), arch.gen_hidden)
    params["head2.b"] = init_tensor(rng, (arch.out_dim,), arch.gen_hidden)
    return params


def init_discriminator_params(arch: ArchConfig, rng: np.random.Generator) -> DiscriminatorParams:
    params: ParamStore = {}
    _init_trunk(params, rng, arch, arch.out_dim + 1)
    flat = arch.seq_len * arch.d_x
    params["head1.w"] = init_tensor(rng, (flat, 1), flat)
    params["head1.b"] = init_tensor(rng, (1,), flat)
    params["head2.w"] = init_tensor(rng, (1, 1), 1)
    params["head2.b"] = init_tensor(rng, (1,), 1)
    return params


def init_model(arch: ArchConfig, seed: int) -> tuple[GeneratorParams, DiscriminatorParams]:
    """Seeded initialization of both networks (disjoint storage)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return init_generator_params(arch, rng), init_discriminator_params(arch, rng)


def _trunk_forward(xin: torch.Tensor, params: ParamStore, arch: ArchConfig) -> torch.Tensor:
    """(B, in_dim) -> flattened encoder output (B, seq_len * d_x)."""
    h = leaky_relu(dense(xin, params["input.w"], params["input.b"]), arch.leaky_slope)
    seq = h.reshape(-1, arch.seq_len, arch.d_m)
    emb = dense(seq, params["embed.w"], params["embed.b"])
    x = positional_encode(emb, params["pe"])
    x = transformer_encoder(x, params, arch)
    return x.reshape(-1, arch.seq_len * arch.d_x)


def generator_forward(z: torch.Tensor, c: torch.Tensor, params: GeneratorParams,
                      arch: ArchConfig) -> torch.Tensor:
    """(B, noise_dim) x (B, 1) -> normalized flat channels (B, out_dim)."""
    if z.dim() != 2 or z.shape[1] != arch.noise_dim:
        raise ValueError(f"z must be (B, {arch.noise_dim}), got {tuple(z.shape)}")
    if c.shape != (z.shape[0], 1):
        raise ValueError(f"c must be (B, 1) matching z, got {tuple(c.shape)}")
    flat = _trunk_forward(torch.cat([z, c], dim=1), params, arch)
    h = leaky_relu(dense(flat, params["head1.w"], params["head1.b"]), arch.leaky_slope)
    return torch.tanh(dense(h, params["head2.w"], params["head2.b"]))


def discriminator_forward(x: torch.Tensor, c: torch.Tensor, params: DiscriminatorParams,
                          arch: ArchConfig) -> torch.Tensor:
    """(B, out_dim) x (B, 1) -> probability the channel is real, in (0, 1)."""
    if x.dim() != 2 or x.shape[1] != arch.out_dim:
        raise ValueError(f"x must be (B, {arch.out_dim}), got {tuple(x.shape)}")
    if c.shape != (x.shape[0], 1):
        raise ValueError(f"c must be (B, 1) matching x, got {tuple(c.shape)}")
    flat = _trunk_forward(torch.cat([x, c], dim=1), params, arch)
    h = leaky_relu(dense(flat, params["head1.w"], params["head1.b"]), arch.leaky_slope)
    logit = dense(h, params["head2.w"], params["head2.b"])
    return sigmoid(torch.clamp(logit, -LOGIT_CLAMP, LOGIT_CLAMP))


def param_count(arch: ArchConfig, role: str) -> int:
    """Exact parameter count; role is 'generator' or 'discriminator'.

    trunk(in_dim) = in_dim*(L*d_m) + L*d_m            input dense
                  + d_m*d_x + d_x                     embedding dense
                  + L*d_x                             positional encoding
                  + n_layers * (h*(2*d_k + d_v)*d_x   per-head q/k/v
                                + h*d_v*d_x           output mix
                                + 2*(d_x^2 + d_x)     feed-forward
                                + 4*d_x)              two layer norms
    """
    L, dm, dx, h = arch.seq_len, arch.d_m, arch.d_x, arch.n_heads
    trunk_fixed = (
        dm * dx + dx
        + L * dx
        + arch.n_layers * (
            h * (2 * arch.d_k + arch.d_v) * dx
            + h * arch.d_v * dx
            + 2 * (dx * dx + dx)
            + 4 * dx
        )
    )
    flat = L * dx
    if role == "generator":
        in_dim = arch.noise_dim + 1
        head = flat * arch.gen_hidden + arch.gen_hidden \
            + arch.gen_hidden * arch.out_dim + arch.out_dim
    elif role == "discriminator":
        in_dim = arch.out_dim + 1
        head = flat * 1 + 1 + 1 * 1 + 1
    else:
        raise ValueError(f"unknown role {role!r}")
    return in_dim * (L * dm) + L * dm + trunk_fixed + head
