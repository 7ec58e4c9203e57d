"""Drop-based stochastic channel generator.

A simplified stand-in for a full geometry-based standard channel model:
per-drop large-scale parameters (shadowing, K-factor, delay spread, angular
spread) are drawn with cross-correlation, then a sparse multipath channel is
constructed around them. Delays follow an exponential profile and azimuths a
wrapped cluster mixture; both are moment-matched so the realized per-channel
RMS spreads hit the drop's DS/AS targets exactly whenever the power profile
is non-degenerate. Used to produce GAN pre-training datasets and synthetic
pseudo-measurement ground truth.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    SPEED_OF_LIGHT,
    POWER_FLOOR_DB,
    N_MPC,
    ChannelRealization,
    Mpc,
    pad_to_n_mpc,
)
from .stats import fspl, values_spread

# below this spread (ns or deg) the power profile is treated as a point mass
# and moment-matching is skipped
DEGENERATE_SPREAD = 1e-9

LSP_ORDER = ("shadow", "k_factor", "delay_spread", "angular_spread")


class SpreadTargetWarning(UserWarning):
    """Per-drop DS/AS target unreachable; best-effort values kept."""


@dataclass(frozen=True)
class LargeScaleParams:
    """Statistics driving the simulator.

    DS/AS mean and std are linear-domain moments of lognormal distributions;
    shadowing and K-factor are normal in dB. corr is the 4x4 correlation of
    the underlying Gaussian variates, ordered per LSP_ORDER.
    """

    ple: float
    shadow_sigma_db: float
    k_mean_db: float
    k_std_db: float
    ds_mean_ns: float
    ds_std_ns: float
    as_mean_deg: float
    as_std_deg: float
    corr: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        object.__setattr__(self, "corr", np.asarray(self.corr, dtype=np.float64))
        if self.ple <= 0:
            raise ValueError(f"ple must be > 0, got {self.ple}")
        for name in ("shadow_sigma_db", "k_std_db", "ds_std_ns", "as_std_deg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("ds_mean_ns", "as_mean_deg"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        c = self.corr
        if c.shape != (4, 4):
            raise ValueError(f"corr must be 4x4 over {LSP_ORDER}, got {c.shape}")
        if not np.allclose(c, c.T, atol=1e-12):
            raise ValueError("corr must be symmetric")
        if not np.allclose(np.diag(c), 1.0, atol=1e-12):
            raise ValueError("corr must have a unit diagonal")
        if np.min(np.linalg.eigvalsh(c)) < -1e-9:
            raise ValueError("corr must be positive semidefinite")

    def corr_sqrt(self) -> np.ndarray:
        """Symmetric PSD square root of corr."""
        vals, vecs = np.linalg.eigh(self.corr)
        return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


@dataclass(frozen=True)
class RealizedLsp:
    shadow_db: float
    k_db: float
    ds_ns: float
    as_deg: float


@dataclass(frozen=True)
class SimConfig:
    lsp: LargeScaleParams
    f_hz: float = 300e9
    d_min_m: float = 2.0
    d_max_m: float = 25.0
    n_paths_min: int = 6
    n_paths_max: int = 8
    cluster_centers_deg: tuple[float, ...] = (0.0, 180.0, 360.0)
    cluster_std_deg: float = 15.0
    eoa_min_deg: float = -20.0
    eoa_max_deg: float = 20.0
    d0_m: float = 1.0

    def __post_init__(self):
        if self.f_hz <= 0:
            raise ValueError("f_hz must be > 0")
        if not self.d_min_m > self.d0_m:
            raise ValueError(f"d_min_m must exceed the reference distance {self.d0_m} m")
        if not self.d_max_m >= self.d_min_m:
            raise ValueError("d_max_m must be >= d_min_m")
        if not 1 <= self.n_paths_min <= self.n_paths_max <= N_MPC:
            raise ValueError(f"path count range must satisfy 1 <= min <= max <= {N_MPC}")
        if self.cluster_std_deg < 0:
            raise ValueError("cluster_std_deg must be >= 0")
        if not self.eoa_min_deg <= self.eoa_max_deg:
            raise ValueError("elevation range inverted")


def _lognormal_mu_sigma(mean: float, std: float) -> tuple[float, float]:
    """Log-domain parameters from linear-domain mean/std."""
    if std == 0.0:
        return math.log(mean), 0.0
    sigma2 = math.log(1.0 + (std / mean) ** 2)
    return math.log(mean) - sigma2 / 2.0, math.sqrt(sigma2)


def sample_lsp(config: SimConfig, rng: np.random.Generator) -> RealizedLsp:
    """Draw one drop's correlated LSP realization."""
    lsp = config.lsp
    g = lsp.corr_sqrt() @ rng.standard_normal(4)
    mu_ds, sg_ds = _lognormal_mu_sigma(lsp.ds_mean_ns, lsp.ds_std_ns)
    mu_as, sg_as = _lognormal_mu_sigma(lsp.as_mean_deg, lsp.as_std_deg)
    return RealizedLsp(
        shadow_db=lsp.shadow_sigma_db * g[0],
        k_db=lsp.k_mean_db + lsp.k_std_db * g[1],
        ds_ns=math.exp(mu_ds + sg_ds * g[2]),
        as_deg=math.exp(mu_as + sg_as * g[3]),
    )


def _power_fractions(excess_ns: np.ndarray, k_db: float) -> np.ndarray:
    """First path carries the K-factor fraction; the rest decay over delay."""
    n = excess_ns.size
    if n == 1:
        return np.ones(1)
    k_lin = 10.0 ** (k_db / 10.0)
    tail = excess_ns[1:]
    gamma = float(tail.mean()) or 1.0
    w = np.exp(-tail / gamma)
    fracs = np.empty(n)
    fracs[0] = k_lin / (k_lin + 1.0)
    fracs[1:] = w / w.sum() / (k_lin + 1.0)
    return fracs


def _match_delay_spread(excess_ns, fracs, target_ns: float) -> np.ndarray:
    s0 = values_spread(excess_ns, fracs).rms
    if s0 <= DEGENERATE_SPREAD:
        if target_ns > DEGENERATE_SPREAD:
            warnings.warn(
                "degenerate power profile: delay-spread target unreachable",
                SpreadTargetWarning, stacklevel=3,
            )
        return excess_ns
    return excess_ns * (target_ns / s0)


def _match_angular_spread(aoa_deg, fracs, target_deg: float) -> np.ndarray:
    sp = values_spread(aoa_deg, fracs)
    if sp.rms <= DEGENERATE_SPREAD:
        if target_deg > DEGENERATE_SPREAD:
            warnings.warn(
                "degenerate azimuth profile: angular-spread target unreachable",
                SpreadTargetWarning, stacklevel=3,
            )
        return aoa_deg
    scaled = sp.mean + (aoa_deg - sp.mean) * (target_deg / sp.rms)
    hi = np.nextafter(360.0, 0.0)
    if np.any(scaled < 0.0) or np.any(scaled > hi):
        warnings.warn(
            "angular-spread target pushed azimuths out of [0, 360); "
            "clamped (best effort)",
            SpreadTargetWarning, stacklevel=3,
        )
        scaled = np.clip(scaled, 0.0, hi)
    return scaled


def generate_channel(
    config: SimConfig, distance_m: float, rng: np.random.Generator, id: str = ""
) -> ChannelRealization:
    """One drop: realized LSPs, moment-matched delays/azimuths, K-split powers."""
    if not config.d_min_m <= distance_m <= config.d_max_m:
        raise ValueError(
            f"distance {distance_m} m outside configured range "
            f"[{config.d_min_m}, {config.d_max_m}]"
        )
    lsp = sample_lsp(config, rng)
    n_main = int(rng.integers(config.n_paths_min, config.n_paths_max + 1))

    excess = np.zeros(n_main)
    if n_main > 1:
        excess[1:] = np.sort(rng.exponential(scale=1.0, size=n_main - 1))
    fracs = _power_fractions(excess, lsp.k_db)
    excess = _match_delay_spread(excess, fracs, lsp.ds_ns)
    t0_ns = distance_m / SPEED_OF_LIGHT * 1e9
    delays = t0_ns + excess

    centers = rng.choice(np.asarray(config.cluster_centers_deg, dtype=np.float64),
                         size=n_main)
    aoa = (centers + config.cluster_std_deg * rng.standard_normal(n_main)) % 360.0
    aoa = _match_angular_spread(aoa, fracs, lsp.as_deg)
    eoa = rng.uniform(config.eoa_min_deg, config.eoa_max_deg, size=n_main)

    pl_db = (
        fspl(config.d0_m, config.f_hz)
        + 10.0 * config.lsp.ple * math.log10(distance_m / config.d0_m)
        + lsp.shadow_db
    )
    with np.errstate(divide="ignore"):
        gains = 10.0 * np.log10(fracs) - pl_db
    gains = np.clip(gains, POWER_FLOOR_DB, 0.0)

    mpcs = [Mpc(float(g), float(d), float(a), float(e))
            for g, d, a, e in zip(gains, delays, aoa, eoa)]
    return ChannelRealization(pad_to_n_mpc(mpcs), distance_m, id)


def channel_rng(seed: int, index: int) -> np.random.Generator:
    """Per-channel stream derived from (seed, index); parallel-safe."""
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def generate_dataset(
    config: SimConfig, n: int, seed: int, id_prefix: str = "sim"
) -> list[ChannelRealization]:
    """n channels with distances uniform in range, reproducible from seed.

    Every channel owns an independent rng stream keyed by (seed, index), so
    serial and parallel generation agree bit for bit.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    channels = []
    for i in range(n):
        rng = channel_rng(seed, i)
        d = float(rng.uniform(config.d_min_m, config.d_max_m))
        channels.append(generate_channel(config, d, rng, id=f"{id_prefix}-{i:05d}"))
    return channels
