"""Multipath channel data model.

A channel is a fixed-length list of 15 multipath components (MPCs), each
described by a [gain, delay, azimuth AoA, elevation EoA] quadruple in
dB / ns / degrees, plus the Tx-Rx distance. Channels shorter than 15 paths
are padded with floor-gain entries. This module provides the flat 60-vector
encoding consumed by the GAN, min-max normalization to [-1, 1], complex
impulse-response reconstruction, and rasterization onto a power
delay-angular profile (PDAP) grid.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

SPEED_OF_LIGHT = 3e8  # m/s, idealized value conventional in channel modeling

POWER_FLOOR_DB = -200.0  # "no energy" gain; also the PDAP display floor
N_MPC = 15               # fixed number of MPC slots per channel
MPC_WIDTH = 4            # [gain_db, delay_ns, aoa_deg, eoa_deg]
FLAT_DIM = N_MPC * MPC_WIDTH

EOA_MIN_DEG = -20.0
EOA_MAX_DEG = 20.0

SOUNDER_RESOLUTION_NS = 0.0667  # 66.7 ps sounder time resolution


class ResolutionWarning(UserWarning):
    """Tap grid too coarse to resolve paths the sounder could separate."""


@dataclass
class ChannelDiagnostics:
    """Counters for silent corrections applied while decoding channels."""

    delay_clamps: int = 0
    gain_clamps: int = 0
    elevation_clamps: int = 0
    normalize_clamps: int = 0
    denormalize_clamps: int = 0
    dropped_out_of_range: int = 0

    def total(self) -> int:
        return sum(getattr(self, f.name) for f in fields(self))


@dataclass(frozen=True)
class Mpc:
    """One multipath component.

    gain_db is a power gain (amplitude 10**(gain_db/20)), bounded in
    [POWER_FLOOR_DB, 0]. Azimuth lives on [0, 360), elevation on [-20, 20].
    """

    gain_db: float
    delay_ns: float
    aoa_deg: float
    eoa_deg: float

    def __post_init__(self):
        vals = (self.gain_db, self.delay_ns, self.aoa_deg, self.eoa_deg)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"MPC fields must be finite, got {vals}")
        if self.delay_ns < 0:
            raise ValueError(f"delay_ns must be >= 0, got {self.delay_ns}")
        if not (POWER_FLOOR_DB <= self.gain_db <= 0.0):
            raise ValueError(
                f"gain_db must lie in [{POWER_FLOOR_DB}, 0], got {self.gain_db}"
            )
        if not (0.0 <= self.aoa_deg < 360.0):
            raise ValueError(f"aoa_deg must lie in [0, 360), got {self.aoa_deg}")
        if not (EOA_MIN_DEG <= self.eoa_deg <= EOA_MAX_DEG):
            raise ValueError(
                f"eoa_deg must lie in [{EOA_MIN_DEG}, {EOA_MAX_DEG}], got {self.eoa_deg}"
            )

    @property
    def linear_power(self) -> float:
        return 10.0 ** (self.gain_db / 10.0)


def floor_mpc() -> Mpc:
    """Zero-power padding entry."""
    return Mpc(gain_db=POWER_FLOOR_DB, delay_ns=0.0, aoa_deg=0.0, eoa_deg=0.0)


def sort_mpcs(mpcs) -> tuple[Mpc, ...]:
    """Stable sort by descending gain (ties keep input order)."""
    return tuple(sorted(mpcs, key=lambda m: -m.gain_db))


@dataclass(frozen=True)
class ChannelRealization:
    """One channel: exactly N_MPC components sorted by descending gain."""

    mpcs: tuple[Mpc, ...]
    distance_m: float
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "mpcs", tuple(self.mpcs))
        if len(self.mpcs) != N_MPC:
            raise ValueError(f"channel must have exactly {N_MPC} MPCs, got {len(self.mpcs)}")
        gains = [m.gain_db for m in self.mpcs]
        if any(a < b for a, b in zip(gains, gains[1:])):
            raise ValueError("MPCs must be sorted by descending gain_db")
        if not (math.isfinite(self.distance_m) and self.distance_m > 0):
            raise ValueError(f"distance_m must be > 0, got {self.distance_m}")

    def total_linear_power(self) -> float:
        return sum(m.linear_power for m in self.mpcs)


def pad_to_n_mpc(mpcs) -> tuple[Mpc, ...]:
    """Pad with floor entries up to N_MPC and sort by descending gain."""
    mpcs = list(mpcs)
    if len(mpcs) > N_MPC:
        raise ValueError(f"more than {N_MPC} MPCs: {len(mpcs)}")
    mpcs.extend(floor_mpc() for _ in range(N_MPC - len(mpcs)))
    return sort_mpcs(mpcs)


@dataclass(eq=False)
class FlatChannelVector:
    """60-vector of 15 consecutive [gain, delay, aoa, eoa] quadruples."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1).copy()
        if v.shape != (FLAT_DIM,):
            raise ValueError(f"flat vector must have {FLAT_DIM} entries, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("flat vector entries must be finite")
        if self.normalized and np.max(np.abs(v)) > 1.0 + 1e-9:
            raise ValueError("normalized vector entries must lie in [-1, 1]")
        self.values = v


@dataclass(frozen=True)
class FeatureRange:
    min: float
    max: float

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise ValueError("feature range bounds must be finite")
        if not self.max > self.min:
            raise ValueError(f"feature range must have max > min, got [{self.min}, {self.max}]")

    @property
    def span(self) -> float:
        return self.max - self.min


@dataclass(frozen=True)
class NormalizationStats:
    """Per-feature min/max over a training dataset, plus the distance max.

    The distance is the GAN condition variable and is normalized as
    d / distance_max in (0, 1].
    """

    gain: FeatureRange
    delay: FeatureRange
    aoa: FeatureRange
    eoa: FeatureRange
    distance_max: float

    def __post_init__(self):
        if not (math.isfinite(self.distance_max) and self.distance_max > 0):
            raise ValueError(f"distance_max must be > 0, got {self.distance_max}")

    @classmethod
    def from_channels(cls, channels) -> "NormalizationStats":
        channels = list(channels)
        if not channels:
            raise ValueError("cannot compute normalization stats from an empty dataset")
        feats = np.array(
            [[m.gain_db, m.delay_ns, m.aoa_deg, m.eoa_deg] for ch in channels for m in ch.mpcs]
        )
        lo, hi = feats.min(axis=0), feats.max(axis=0)
        ranges = []
        for j in range(MPC_WIDTH):
            if hi[j] <= lo[j]:
                raise ValueError(
                    f"degenerate feature column {j}: all values equal {lo[j]}; "
                    "normalization needs max > min"
                )
            ranges.append(FeatureRange(float(lo[j]), float(hi[j])))
        dmax = max(ch.distance_m for ch in channels)
        return cls(ranges[0], ranges[1], ranges[2], ranges[3], float(dmax))

    def mins_flat(self) -> np.ndarray:
        """Per-entry minima for the 60-vector layout."""
        return np.tile([self.gain.min, self.delay.min, self.aoa.min, self.eoa.min], N_MPC)

    def maxs_flat(self) -> np.ndarray:
        return np.tile([self.gain.max, self.delay.max, self.aoa.max, self.eoa.max], N_MPC)

    def normalize_distance(self, distance_m: float) -> float:
        return distance_m / self.distance_max

    def denormalize_distance(self, c: float) -> float:
        return c * self.distance_max

    def to_dict(self) -> dict:
        return {
            "gain": [self.gain.min, self.gain.max],
            "delay": [self.delay.min, self.delay.max],
            "aoa": [self.aoa.min, self.aoa.max],
            "eoa": [self.eoa.min, self.eoa.max],
            "distance_max": self.distance_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            gain=FeatureRange(*d["gain"]),
            delay=FeatureRange(*d["delay"]),
            aoa=FeatureRange(*d["aoa"]),
            eoa=FeatureRange(*d["eoa"]),
            distance_max=d["distance_max"],
        )


def flatten(channel: ChannelRealization) -> FlatChannelVector:
    """Channel -> 60-vector in the fixed quadruple layout (unnormalized)."""
    vals = np.empty(FLAT_DIM)
    for i, m in enumerate(channel.mpcs):
        vals[4 * i : 4 * i + 4] = (m.gain_db, m.delay_ns, m.aoa_deg, m.eoa_deg)
    return FlatChannelVector(vals, normalized=False)


def unflatten(
    vec: FlatChannelVector,
    distance_m: float,
    id: str = "",
    diagnostics: ChannelDiagnostics | None = None,
) -> ChannelRealization:
    """60-vector -> channel. Inverse of flatten on valid inputs.

    Out-of-range entries are repaired: azimuth wraps mod 360, negative delays
    clamp to 0, gains clamp into [POWER_FLOOR_DB, 0], elevation clamps into
    its scan range. Repairs are counted in diagnostics when provided.
    """
    if vec.normalized:
        raise ValueError("unflatten expects an unnormalized vector; denormalize first")
    v = vec.values  # construction guarantees 60 finite entries
    mpcs = []
    for i in range(N_MPC):
        g, d, a, e = v[4 * i : 4 * i + 4]
        if d < 0:
            d = 0.0
            if diagnostics:
                diagnostics.delay_clamps += 1
        gc = min(0.0, max(POWER_FLOOR_DB, g))
        if gc != g and diagnostics:
            diagnostics.gain_clamps += 1
        a = a % 360.0
        ec = min(EOA_MAX_DEG, max(EOA_MIN_DEG, e))
        if ec != e and diagnostics:
            diagnostics.elevation_clamps += 1
        mpcs.append(Mpc(gc, float(d), float(a), ec))
    return ChannelRealization(sort_mpcs(mpcs), distance_m, id)


def normalize(
    vec: FlatChannelVector,
    stats: NormalizationStats,
    diagnostics: ChannelDiagnostics | None = None,
) -> FlatChannelVector:
    """Per-feature affine map onto [-1, 1] using the training-set ranges."""
    if vec.normalized:
        raise ValueError("vector is already normalized")
    lo, hi = stats.mins_flat(), stats.maxs_flat()
    clipped = np.clip(vec.values, lo, hi)
    if diagnostics:
        diagnostics.normalize_clamps += int(np.sum(clipped != vec.values))
    out = 2.0 * (clipped - lo) / (hi - lo) - 1.0
    return FlatChannelVector(out, normalized=True)


def denormalize(
    vec: FlatChannelVector,
    stats: NormalizationStats,
    diagnostics: ChannelDiagnostics | None = None,
) -> FlatChannelVector:
    """Inverse of normalize; input entries outside [-1, 1] are clamped."""
    if not vec.normalized:
        raise ValueError("vector is not normalized")
    clipped = np.clip(vec.values, -1.0, 1.0)
    if diagnostics:
        diagnostics.denormalize_clamps += int(np.sum(clipped != vec.values))
    lo, hi = stats.mins_flat(), stats.maxs_flat()
    out = lo + (clipped + 1.0) * (hi - lo) / 2.0
    return FlatChannelVector(out, normalized=False)


def reconstruct_cir(
    channel: ChannelRealization,
    rng: np.random.Generator,
    tap_interval_ns: float,
) -> np.ndarray:
    """Discretized complex impulse response h[k] on a uniform tap grid.

    Each MPC contributes amplitude 10**(gain_db/20) with a phase drawn
    uniformly on [0, 2pi) from rng (the stored parameter set carries no
    phase), placed on the nearest tap. Taps hit by several MPCs accumulate
    coherently.
    """
    if tap_interval_ns <= 0:
        raise ValueError("tap_interval_ns must be > 0")
    if tap_interval_ns > SOUNDER_RESOLUTION_NS:
        warnings.warn(
            f"tap interval {tap_interval_ns} ns is coarser than the sounder "
            f"resolution of {SOUNDER_RESOLUTION_NS} ns; paths may merge",
            ResolutionWarning,
            stacklevel=2,
        )
    phases = rng.uniform(0.0, 2.0 * np.pi, size=N_MPC)
    max_delay = max(m.delay_ns for m in channel.mpcs)
    n_taps = int(round(max_delay / tap_interval_ns)) + 1
    h = np.zeros(n_taps, dtype=np.complex128)
    for m, phi in zip(channel.mpcs, phases):
        k = int(round(m.delay_ns / tap_interval_ns))
        h[k] += 10.0 ** (m.gain_db / 20.0) * np.exp(1j * phi)
    return h


@dataclass(frozen=True)
class PdapGrid:
    """Delay x azimuth raster. Azimuth always covers [0, 360)."""

    delta_tau_ns: float = 1.0
    delta_theta_deg: float = 10.0
    t_max_ns: float = 200.0
    floor_db: float = POWER_FLOOR_DB

    def __post_init__(self):
        if self.delta_tau_ns <= 0 or self.delta_theta_deg <= 0:
            raise ValueError("bin widths must be > 0")
        if not math.isfinite(self.floor_db):
            raise ValueError("floor_db must be finite")
        if self.t_max_ns <= 0:
            raise ValueError("t_max_ns must be > 0")
        if abs(360.0 / self.delta_theta_deg - round(360.0 / self.delta_theta_deg)) > 1e-9:
            raise ValueError("delta_theta_deg must divide 360")

    @property
    def n_delay_bins(self) -> int:
        return int(math.ceil(self.t_max_ns / self.delta_tau_ns - 1e-12))

    @property
    def n_azimuth_bins(self) -> int:
        return int(round(360.0 / self.delta_theta_deg))


@dataclass(eq=False)
class Pdap:
    """Power (dB) on the grid; cells with no energy sit at grid.floor_db."""

    grid: PdapGrid
    power_db: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.power_db, dtype=np.float64)
        expect = (self.grid.n_delay_bins, self.grid.n_azimuth_bins)
        if p.shape != expect:
            raise ValueError(f"power_db must have shape {expect}, got {p.shape}")
        if np.any(p < self.grid.floor_db - 1e-12):
            raise ValueError("PDAP cells must not fall below grid.floor_db")
        self.power_db = p

    def linear_power(self) -> np.ndarray:
        """Cell powers in linear scale; floor cells count as zero energy."""
        lin = 10.0 ** (self.power_db / 10.0)
        lin[self.power_db <= self.grid.floor_db] = 0.0
        return lin

    def delay_profile(self) -> np.ndarray:
        """Marginal linear power vs delay bin (azimuth summed out)."""
        return self.linear_power().sum(axis=1)

    def azimuth_profile(self) -> np.ndarray:
        """Marginal linear power vs azimuth bin (delay summed out)."""
        return self.linear_power().sum(axis=0)


def build_pdap(
    channel: ChannelRealization,
    grid: PdapGrid | None = None,
    diagnostics: ChannelDiagnostics | None = None,
) -> Pdap:
    """Accumulate each MPC's linear power into its (delay, azimuth) bin.

    Floor-gain padding entries carry no energy and are skipped. MPCs with
    delay at or beyond t_max_ns are dropped (and counted). Cells are
    converted to dB; empty cells are set to grid.floor_db.
    """
    grid = grid or PdapGrid()
    acc = np.zeros((grid.n_delay_bins, grid.n_azimuth_bins))
    for m in channel.mpcs:
        if m.gain_db <= POWER_FLOOR_DB:
            continue
        i = int(m.delay_ns / grid.delta_tau_ns)
        if m.delay_ns >= grid.t_max_ns or i >= grid.n_delay_bins:
            if diagnostics:
                diagnostics.dropped_out_of_range += 1
            continue
        j = int((m.aoa_deg % 360.0) / grid.delta_theta_deg)
        acc[i, j] += m.linear_power
    power_db = np.full(acc.shape, grid.floor_db)
    hit = acc > 0
    power_db[hit] = np.maximum(10.0 * np.log10(acc[hit]), grid.floor_db)
    return Pdap(grid, power_db)
