"""Adversarial training loops.

Pre-training runs the penalized minimax objective on simulated channels:
the discriminator takes three Adam steps per epoch against the log-loss
plus the gradient penalty, then the generator takes one SGD step on
E[log(1 - D(G(z|c)|c))]. Fine-tuning restarts the same loop on a small
measured dataset with an L2-SP term anchoring both networks to the
pre-trained weights. Everything is driven by one serializable numpy
Generator so a run is a pure function of (seed, config, data) and can be
resumed bit-exactly from a checkpoint.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import nn
from .channel import (
    ChannelDiagnostics,
    FlatChannelVector,
    NormalizationStats,
    denormalize,
    flatten,
    normalize,
    unflatten,
)
from .checkpoint import (
    TAG_FINETUNED,
    TAG_PRETRAINED,
    Checkpoint,
    CheckpointProvenanceError,
    content_hash,
)
from .nn import ArchConfig, NonFiniteError, ParamStore
from .tgan import discriminator_forward, generator_forward, init_model

PENALTY_NORM_EPS = 1e-24  # vanishes in float64 for any norm >= 1e-4


class TrainingAbort(RuntimeError):
    """Non-finite loss or gradient; carries the last good checkpoint."""

    def __init__(self, message: str, checkpoint: Checkpoint, epoch: int):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of one training phase (pre-train or fine-tune)."""

    lambda_gp: float = 10.0
    lr: float = 1e-4
    epochs: int = 10000
    critic_steps_per_epoch: int = 3
    generator_steps_per_epoch: int = 1
    batch_size: int | None = 64  # None = full dataset each step
    l2sp_alpha: float = 0.1
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.lambda_gp < 0 or self.l2sp_alpha < 0:
            raise ValueError("penalty coefficients must be >= 0")
        if self.lr <= 0 or self.epochs < 0:
            raise ValueError("lr must be > 0 and epochs >= 0")
        if self.critic_steps_per_epoch < 1 or self.generator_steps_per_epoch < 1:
            raise ValueError("per-epoch step counts must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None")

    def to_dict(self) -> dict:
        return {
            "lambda_gp": self.lambda_gp, "lr": self.lr, "epochs": self.epochs,
            "critic_steps_per_epoch": self.critic_steps_per_epoch,
            "generator_steps_per_epoch": self.generator_steps_per_epoch,
            "batch_size": self.batch_size, "l2sp_alpha": self.l2sp_alpha,
            "adam_beta1": self.adam_beta1, "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps, "log_every": self.log_every,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter store."""

    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ParamStore) -> "AdamState":
        return cls(
            m={k: torch.zeros_like(p) for k, p in params.items()},
            v={k: torch.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params: ParamStore, grads: dict[str, torch.Tensor],
              state: AdamState, lr: float, beta1: float, beta2: float,
              eps: float) -> None:
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    with torch.no_grad():
        for k, p in params.items():
            g = grads[k]
            state.m[k].mul_(beta1).add_(g, alpha=1.0 - beta1)
            state.v[k].mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.addcdiv_(state.m[k] / bc1, (state.v[k] / bc2).sqrt() + eps, value=-lr)


def sgd_step(params: ParamStore, grads: dict[str, torch.Tensor], lr: float) -> None:
    with torch.no_grad():
        for k, p in params.items():
            p.add_(grads[k], alpha=-lr)


def l2sp_penalty(params: ParamStore, anchor: ParamStore, alpha: float) -> torch.Tensor:
    """(alpha / 2) * squared L2 distance to the anchor weights."""
    nn.check_same_structure(params, anchor)
    total = torch.zeros((), dtype=torch.float64)
    for k, p in params.items():
        total = total + ((p - anchor[k]) ** 2).sum()
    return 0.5 * alpha * total


def l2sp_distance(params: ParamStore, anchor: ParamStore) -> float:
    """Plain L2 distance ||w - w0||_2 (diagnostic)."""
    nn.check_same_structure(params, anchor)
    total = 0.0
    for k, p in params.items():
        total += float(((p.detach() - anchor[k].detach()) ** 2).sum())
    return float(np.sqrt(total))


def gradient_penalty(
    d_params: ParamStore,
    arch: ArchConfig,
    real: torch.Tensor,
    fake: torch.Tensor,
    c: torch.Tensor,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean (||grad_x D(x_tilde|c)||_2 - 1)^2 over per-sample uniform
    interpolants between real and fake channels.

    The gradient is taken w.r.t. the channel input only (not the condition)
    and stays differentiable w.r.t. the discriminator parameters.
    """
    if real.shape != fake.shape or real.shape[0] != c.shape[0]:
        raise ValueError("real, fake and condition batches must be aligned")
    u = torch.from_numpy(rng.uniform(size=(real.shape[0], 1)))
    xt = (u * real + (1.0 - u) * fake).detach().requires_grad_(True)
    out = discriminator_forward(xt, c, d_params, arch)
    (g,) = torch.autograd.grad(out.sum(), xt, create_graph=True)
    if not torch.all(torch.isfinite(g)):
        bad = int(torch.nonzero(~torch.isfinite(g).all(dim=1))[0])
        raise NonFiniteError(f"penalty input-gradient non-finite for sample {bad}")
    norm = torch.sqrt((g**2).sum(dim=1) + PENALTY_NORM_EPS)
    return ((norm - 1.0) ** 2).mean(), xt


@dataclass
class TrainState:
    """Mutable state owned by one training run."""

    arch: ArchConfig
    config: TrainConfig
    stats: NormalizationStats
    g_params: ParamStore
    d_params: ParamStore
    adam_d: AdamState
    rng: np.random.Generator
    epoch: int = 0
    d_steps: int = 0
    g_steps: int = 0
    history: dict[str, list[float]] = field(
        default_factory=lambda: {"loss_d": [], "loss_g": [], "penalty": []}
    )
    anchor_g: ParamStore | None = None
    anchor_d: ParamStore | None = None
    anchor_hash: str | None = None

    @property
    def finetuning(self) -> bool:
        return self.anchor_g is not None


def prepare_training_data(channels, stats: NormalizationStats) -> tuple[np.ndarray, np.ndarray]:
    """Dataset -> (normalized flat channels (n, 60), conditions (n, 1))."""
    diag = ChannelDiagnostics()
    x = np.stack([normalize(flatten(ch), stats, diag).values for ch in channels])
    c = np.array([[stats.normalize_distance(ch.distance_m)] for ch in channels])
    if diag.normalize_clamps:
        warnings.warn(
            f"{diag.normalize_clamps} feature values fell outside the "
            "normalization ranges and were clamped", stacklevel=2,
        )
    return x, c


def _sample_batch(state: TrainState, x: np.ndarray, c: np.ndarray):
    n = x.shape[0]
    bs = state.config.batch_size
    if bs is None or bs >= n:
        idx = np.arange(n)
    else:
        idx = state.rng.integers(0, n, size=bs)
    return torch.from_numpy(x[idx]), torch.from_numpy(c[idx])


def _noise(state: TrainState, n: int) -> torch.Tensor:
    return torch.from_numpy(
        state.rng.standard_normal((n, state.arch.noise_dim))
    )


def discriminator_step(state: TrainState, x: np.ndarray, c: np.ndarray) -> tuple[float, float]:
    """One Adam ascent step on E[log D(x|c)] + E[log(1-D(G(z|c)|c))] - lambda*penalty.

    Returns (loss, penalty) values of the minimized negation.
    """
    cfg = state.config
    real, cond = _sample_batch(state, x, c)
    z = _noise(state, real.shape[0])
    with torch.no_grad():
        fake = generator_forward(z, cond, state.g_params, state.arch)
    penalty, _ = gradient_penalty(state.d_params, state.arch, real, fake, cond, state.rng)
    d_real = discriminator_forward(real, cond, state.d_params, state.arch)
    d_fake = discriminator_forward(fake, cond, state.d_params, state.arch)
    loss = (
        -torch.log(d_real).mean()
        - torch.log(1.0 - d_fake).mean()
        + cfg.lambda_gp * penalty
    )
    if state.finetuning:
        loss = loss + l2sp_penalty(state.d_params, state.anchor_d, cfg.l2sp_alpha)
    grads, _ = nn.grad(loss, state.d_params)
    adam_step(state.d_params, grads, state.adam_d, cfg.lr,
              cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    state.d_steps += 1
    return float(loss.detach()), float(penalty.detach())


def generator_step(state: TrainState, c_pool: np.ndarray) -> float:
    """One SGD descent step on E[log(1 - D(G(z|c)|c))]; returns the loss."""
    cfg = state.config
    n = c_pool.shape[0]
    if cfg.batch_size is None or cfg.batch_size >= n:
        idx = np.arange(n)
    else:
        idx = state.rng.integers(0, n, size=cfg.batch_size)
    cond = torch.from_numpy(c_pool[idx])
    z = _noise(state, cond.shape[0])
    fake = generator_forward(z, cond, state.g_params, state.arch)
    d_fake = discriminator_forward(fake, cond, state.d_params, state.arch)
    loss = torch.log(1.0 - d_fake).mean()
    if state.finetuning:
        loss = loss + l2sp_penalty(state.g_params, state.anchor_g, cfg.l2sp_alpha)
    grads, _ = nn.grad(loss, state.g_params)
    sgd_step(state.g_params, grads, cfg.lr)
    state.g_steps += 1
    return float(loss.detach())


def train_epoch(state: TrainState, x: np.ndarray, c: np.ndarray) -> None:
    """Schedule unit: critic_steps discriminator updates, then
    generator_steps generator updates, each on freshly sampled batches."""
    d_losses, penalties, g_losses = [], [], []
    for _ in range(state.config.critic_steps_per_epoch):
        dl, pen = discriminator_step(state, x, c)
        d_losses.append(dl)
        penalties.append(pen)
    for _ in range(state.config.generator_steps_per_epoch):
        g_losses.append(generator_step(state, c))
    state.epoch += 1
    state.history["loss_d"].append(float(np.mean(d_losses)))
    state.history["loss_g"].append(float(np.mean(g_losses)))
    state.history["penalty"].append(float(np.mean(penalties)))


def _params_to_numpy(params: ParamStore) -> dict[str, np.ndarray]:
    return {k: p.detach().numpy().copy() for k, p in params.items()}


def _params_from_numpy(arrs: dict[str, np.ndarray], requires_grad: bool = True) -> ParamStore:
    return {k: torch.from_numpy(np.asarray(a, dtype=np.float64).copy())
                 .requires_grad_(requires_grad)
            for k, a in arrs.items()}


def state_to_checkpoint(state: TrainState, tag: str) -> Checkpoint:
    return Checkpoint(
        tag=tag,
        arch=state.arch,
        train_config=state.config.to_dict(),
        norm_stats=state.stats,
        g_params=_params_to_numpy(state.g_params),
        d_params=_params_to_numpy(state.d_params),
        adam_m=_params_to_numpy(state.adam_d.m),
        adam_v=_params_to_numpy(state.adam_d.v),
        adam_t=state.adam_d.t,
        rng_state=state.rng.bit_generator.state,
        epoch=state.epoch,
        d_steps=state.d_steps,
        g_steps=state.g_steps,
        history={k: np.asarray(v, dtype=np.float64) for k, v in state.history.items()},
        anchor_g=_params_to_numpy(state.anchor_g) if state.anchor_g else None,
        anchor_d=_params_to_numpy(state.anchor_d) if state.anchor_d else None,
        anchor_hash=state.anchor_hash,
    )


def state_from_checkpoint(ckpt: Checkpoint, config: TrainConfig | None = None) -> TrainState:
    config = config or TrainConfig.from_dict(ckpt.train_config)
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    adam = AdamState(
        m={k: torch.from_numpy(a.copy()) for k, a in ckpt.adam_m.items()},
        v={k: torch.from_numpy(a.copy()) for k, a in ckpt.adam_v.items()},
        t=ckpt.adam_t,
    )
    return TrainState(
        arch=ckpt.arch,
        config=config,
        stats=ckpt.norm_stats,
        g_params=_params_from_numpy(ckpt.g_params),
        d_params=_params_from_numpy(ckpt.d_params),
        adam_d=adam,
        rng=rng,
        epoch=ckpt.epoch,
        d_steps=ckpt.d_steps,
        g_steps=ckpt.g_steps,
        history={k: list(v) for k, v in ckpt.history.items()},
        anchor_g=_params_from_numpy(ckpt.anchor_g, False) if ckpt.anchor_g else None,
        anchor_d=_params_from_numpy(ckpt.anchor_d, False) if ckpt.anchor_d else None,
        anchor_hash=ckpt.anchor_hash,
    )


class _ProgressLog:
    """CSV progress stream (diagnostic; carries wall time, so it is not
    covered by the byte-identical-artifacts guarantee)."""

    def __init__(self, path, resume: bool):
        self.file = open(path, "a" if resume else "w")
        if not resume:
            self.file.write("epoch,loss_d,loss_g,penalty,wall_time_s\n")
        self.start = time.monotonic()

    def log(self, state: TrainState):
        h = state.history
        self.file.write(
            f"{state.epoch},{h['loss_d'][-1]!r},{h['loss_g'][-1]!r},"
            f"{h['penalty'][-1]!r},{time.monotonic() - self.start:.3f}\n"
        )
        self.file.flush()

    def close(self):
        self.file.close()


def _run_training(state: TrainState, x: np.ndarray, c: np.ndarray, tag: str,
                  progress_path=None) -> Checkpoint:
    nn.set_single_thread()
    log = _ProgressLog(progress_path, resume=state.epoch > 0) if progress_path else None
    last_good = state_to_checkpoint(state, tag)
    try:
        while state.epoch < state.config.epochs:
            try:
                train_epoch(state, x, c)
            except NonFiniteError as e:
                raise TrainingAbort(
                    f"non-finite loss at epoch {state.epoch + 1}: {e}",
                    checkpoint=last_good, epoch=state.epoch,
                ) from e
            last_good = state_to_checkpoint(state, tag)
            if log and (state.epoch % state.config.log_every == 0
                        or state.epoch == state.config.epochs):
                log.log(state)
    finally:
        if log:
            log.close()
    return state_to_checkpoint(state, tag)


def pretrain(channels, arch: ArchConfig, config: TrainConfig,
             resume: Checkpoint | None = None, progress_path=None) -> Checkpoint:
    """Train a fresh model on simulated channels; returns a 'pretrained'
    checkpoint carrying the dataset's normalization statistics."""
    channels = list(channels)
    if not channels:
        raise ValueError("pretraining needs a nonempty dataset")
    if resume is not None:
        if resume.tag != TAG_PRETRAINED:
            raise CheckpointProvenanceError(
                f"cannot resume pretraining from a {resume.tag!r} checkpoint")
        if resume.arch != arch:
            raise CheckpointProvenanceError("resume checkpoint architecture mismatch")
        state = state_from_checkpoint(resume, config)
    else:
        stats = NormalizationStats.from_channels(channels)
        g_params, d_params = init_model(arch, config.seed)
        state = TrainState(
            arch=arch, config=config, stats=stats,
            g_params=g_params, d_params=d_params,
            adam_d=AdamState.zeros_like(d_params),
            rng=np.random.default_rng(np.random.SeedSequence((config.seed, 1))),
        )
    x, c = prepare_training_data(channels, state.stats)
    return _run_training(state, x, c, TAG_PRETRAINED, progress_path)


def finetune(ckpt: Checkpoint, channels, config: TrainConfig,
             resume: Checkpoint | None = None, progress_path=None) -> Checkpoint:
    """Transfer both networks from a pretrained checkpoint and fine-tune on
    measured channels with the L2-SP anchor term on both objectives."""
    channels = list(channels)
    if not channels:
        raise ValueError("fine-tuning needs a nonempty dataset")
    if resume is not None:
        if resume.tag != TAG_FINETUNED:
            raise CheckpointProvenanceError(
                f"cannot resume fine-tuning from a {resume.tag!r} checkpoint")
        state = state_from_checkpoint(resume, config)
    else:
        if ckpt.tag != TAG_PRETRAINED:
            raise CheckpointProvenanceError(
                f"fine-tuning must start from a pretrained checkpoint, got {ckpt.tag!r}")
        g_params = _params_from_numpy(ckpt.g_params)
        d_params = _params_from_numpy(ckpt.d_params)
        state = TrainState(
            arch=ckpt.arch, config=config, stats=ckpt.norm_stats,
            g_params=g_params, d_params=d_params,
            adam_d=AdamState.zeros_like(d_params),
            rng=np.random.default_rng(np.random.SeedSequence((config.seed, 2))),
            anchor_g=nn.clone_params(g_params, requires_grad=False),
            anchor_d=nn.clone_params(d_params, requires_grad=False),
            anchor_hash=ckpt.content_hash or content_hash(ckpt),
        )
    x, c = prepare_training_data(channels, state.stats)
    return _run_training(state, x, c, TAG_FINETUNED, progress_path)


def generate(ckpt: Checkpoint, n: int, distances, seed: int,
             id_prefix: str = "gen") -> list:
    """Sample n channels from a checkpoint's generator at given distances.

    distances shorter than n are cycled. Deterministic under (checkpoint,
    n, distances, seed).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    nn.set_single_thread()
    arch, stats = ckpt.arch, ckpt.norm_stats
    g_params = _params_from_numpy(ckpt.g_params, requires_grad=False)
    d = np.asarray(list(distances), dtype=np.float64)
    if d.size == 0:
        raise ValueError("at least one distance is required")
    if np.any(d <= 0):
        raise ValueError("distances must be > 0")
    d = np.resize(d, n)
    if np.any(d > stats.distance_max):
        warnings.warn(
            "some distances exceed the training range; generation extrapolates",
            stacklevel=2,
        )
    rng = np.random.default_rng(np.random.SeedSequence((seed, 3)))
    z_all = rng.standard_normal((n, arch.noise_dim))
    c_all = (d / stats.distance_max).reshape(-1, 1)
    outs = []
    with torch.no_grad():
        for lo in range(0, n, 1024):
            hi = min(lo + 1024, n)
            out = generator_forward(torch.from_numpy(z_all[lo:hi]),
                                    torch.from_numpy(c_all[lo:hi]),
                                    g_params, arch)
            outs.append(out.numpy())
    flat = np.concatenate(outs, axis=0)
    channels = []
    diag = ChannelDiagnostics()
    for i in range(n):
        vec = FlatChannelVector(flat[i], normalized=True)
        raw = denormalize(vec, stats, diag)
        channels.append(unflatten(raw, float(d[i]), id=f"{id_prefix}-{i:05d}",
                                  diagnostics=diag))
    return channels
