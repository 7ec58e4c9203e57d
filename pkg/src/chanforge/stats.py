"""Channel evaluation statistics.

Power-weighted delay/angular spreads, close-in path-loss fitting, Friis
free-space loss, SSIM over PDAPs, empirical CDFs with distribution-free
(DKW) confidence bands, and whole-dataset summaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import SPEED_OF_LIGHT, ChannelRealization, Pdap, PdapGrid, build_pdap


@dataclass(frozen=True)
class SpreadResult:
    """Power-weighted mean and RMS spread of a profile (ns or degrees)."""

    mean: float
    rms: float


def _weighted_spread(powers: np.ndarray, step: float) -> SpreadResult:
    powers = np.asarray(powers, dtype=np.float64)
    if powers.ndim != 1 or powers.size == 0:
        raise ValueError("profile must be a nonempty 1-D sequence")
    if np.any(powers < 0) or not np.all(np.isfinite(powers)):
        raise ValueError("profile powers must be finite and nonnegative (linear scale)")
    total = powers.sum()
    if total <= 0:
        raise ValueError("empty profile: no strictly positive power")
    coords = np.arange(powers.size) * step
    mean = float(np.dot(coords, powers) / total)
    rms = float(math.sqrt(np.dot((coords - mean) ** 2, powers) / total))
    return SpreadResult(mean, rms)


def delay_spread(powers, delta_tau_ns: float) -> SpreadResult:
    """Mean delay and RMS delay spread of a linear power-vs-delay profile.

    Bin i represents delay i * delta_tau_ns.
    """
    if delta_tau_ns <= 0:
        raise ValueError("delta_tau_ns must be > 0")
    return _weighted_spread(powers, delta_tau_ns)


def angular_spread(powers, delta_theta_deg: float) -> SpreadResult:
    """Mean angle and RMS angular spread of a linear power-vs-azimuth profile.

    Applies the linear (non-circular) formula verbatim; bin i represents
    the AoA i * delta_theta_deg.
    """
    if delta_theta_deg <= 0:
        raise ValueError("delta_theta_deg must be > 0")
    return _weighted_spread(powers, delta_theta_deg)


def values_spread(values, powers) -> SpreadResult:
    """Power-weighted spread over explicit coordinates (un-binned MPCs)."""
    values = np.asarray(values, dtype=np.float64)
    powers = np.asarray(powers, dtype=np.float64)
    if values.shape != powers.shape:
        raise ValueError("values and powers must have the same length")
    total = powers.sum()
    if total <= 0:
        raise ValueError("empty profile: no strictly positive power")
    mean = float(np.dot(values, powers) / total)
    rms = float(math.sqrt(np.dot((values - mean) ** 2, powers) / total))
    return SpreadResult(mean, rms)


def fspl(d0_m: float, f_hz: float) -> float:
    """Free-space path loss in dB at distance d0_m and frequency f_hz (Friis)."""
    if d0_m <= 0 or f_hz <= 0:
        raise ValueError("d0_m and f_hz must be > 0")
    return -20.0 * math.log10(SPEED_OF_LIGHT / (4.0 * math.pi * f_hz * d0_m))


@dataclass(frozen=True)
class CiFit:
    """Close-in reference-distance path-loss fit PL = FSPL(d0) + 10*PLE*log10(d/d0)."""

    ple: float
    d0_m: float
    fspl_d0_db: float
    rmse_db: float


def fit_ci_model(samples, f_hz: float, d0_m: float = 1.0) -> CiFit:
    """Least-squares PLE over (distance_m, path_loss_db) samples.

    Closed form: PLE = sum(r_i g_i) / sum(g_i^2) with r_i the path loss in
    excess of FSPL(d0) and g_i = 10*log10(d_i/d0).
    """
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("CI fit needs at least 2 samples")
    d = np.array([s[0] for s in samples], dtype=np.float64)
    pl = np.array([s[1] for s in samples], dtype=np.float64)
    if np.any(d <= d0_m):
        raise ValueError(f"all distances must exceed the reference distance {d0_m} m")
    if np.unique(d).size < 2:
        raise ValueError("degenerate design: all sample distances are equal")
    anchor = fspl(d0_m, f_hz)
    g = 10.0 * np.log10(d / d0_m)
    r = pl - anchor
    ple = float(np.dot(r, g) / np.dot(g, g))
    resid = pl - (anchor + ple * g)
    return CiFit(ple=ple, d0_m=d0_m, fspl_d0_db=anchor,
                 rmse_db=float(np.sqrt(np.mean(resid**2))))


def ple_accuracy(ple_est: float, ple_ref: float) -> float:
    """Relative-error accuracy percentage, floored at 0."""
    if ple_ref == 0:
        raise ValueError("reference PLE must be nonzero")
    return max(0.0, (1.0 - abs(ple_est - ple_ref) / abs(ple_ref)) * 100.0)


def channel_path_loss_db(channel: ChannelRealization) -> float:
    """Path loss from MPC gains: transmitted over received power, in dB."""
    return -10.0 * math.log10(channel.total_linear_power())


def _active_paths(channel: ChannelRealization):
    """(values, powers) arrays over paths above the zero-power floor."""
    from .channel import POWER_FLOOR_DB

    act = [m for m in channel.mpcs if m.gain_db > POWER_FLOOR_DB]
    if not act:
        raise ValueError("empty profile: channel has no active paths")
    return act, np.array([m.linear_power for m in act])


def channel_delay_spread(channel: ChannelRealization) -> SpreadResult:
    """Un-binned power-weighted delay spread over the channel's active paths."""
    act, p = _active_paths(channel)
    return values_spread([m.delay_ns for m in act], p)


def channel_angular_spread(channel: ChannelRealization) -> SpreadResult:
    """Un-binned power-weighted azimuth spread over the active paths."""
    act, p = _active_paths(channel)
    return values_spread([m.aoa_deg for m in act], p)


def _gaussian_kernel(side: int, sigma: float) -> np.ndarray:
    r = (side - 1) / 2.0
    x = np.arange(side) - r
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()


def ssim(a: Pdap, b: Pdap, window: int = 7, dynamic_range_db: float = 100.0,
         sigma: float = 1.5) -> float:
    """Mean single-scale SSIM between two PDAPs sharing one grid.

    Gaussian-weighted local statistics over every fully interior window;
    per-window indices below 0 are clamped so the result stays in [0, 1].
    The stabilizer constants use C1 = (0.01 R)^2, C2 = (0.03 R)^2 with
    R = dynamic_range_db.
    """
    if a.grid != b.grid:
        raise ValueError("PDAPs must share the same grid")
    if window % 2 != 1 or window < 1:
        raise ValueError("window must be an odd positive side length")
    if dynamic_range_db <= 0:
        raise ValueError("dynamic_range_db must be > 0")
    x, y = a.power_db, b.power_db
    if min(x.shape) < window:
        raise ValueError(f"PDAP smaller than the {window}x{window} SSIM window")
    w = _gaussian_kernel(window, sigma)
    xw = np.lib.stride_tricks.sliding_window_view(x, (window, window))
    yw = np.lib.stride_tricks.sliding_window_view(y, (window, window))
    mu_x = np.tensordot(xw, w, axes=([2, 3], [0, 1]))
    mu_y = np.tensordot(yw, w, axes=([2, 3], [0, 1]))
    xx = np.tensordot(xw * xw, w, axes=([2, 3], [0, 1]))
    yy = np.tensordot(yw * yw, w, axes=([2, 3], [0, 1]))
    xy = np.tensordot(xw * yw, w, axes=([2, 3], [0, 1]))
    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y
    c1 = (0.01 * dynamic_range_db) ** 2
    c2 = (0.03 * dynamic_range_db) ** 2
    idx = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return float(np.mean(np.clip(idx, 0.0, 1.0)))


@dataclass(eq=False)
class EmpiricalCdf:
    """Right-continuous step CDF: F(values[k]) = (k+1)/n over sorted values."""

    values: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_samples(cls, samples) -> "EmpiricalCdf":
        v = np.sort(np.asarray(samples, dtype=np.float64))
        if v.size == 0:
            raise ValueError("empirical CDF needs at least one sample")
        if not np.all(np.isfinite(v)):
            raise ValueError("samples must be finite")
        return cls(v, np.arange(1, v.size + 1) / v.size)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def evaluate(self, x) -> np.ndarray:
        """F(x) for scalar or array x."""
        k = np.searchsorted(self.values, np.asarray(x, dtype=np.float64), side="right")
        return k / self.n


def empirical_cdf(samples) -> EmpiricalCdf:
    return EmpiricalCdf.from_samples(samples)


def dkw_epsilon(n: int, delta: float) -> float:
    """Dvoretzky-Kiefer-Wolfowitz band half-width sqrt(ln(2/delta) / (2n))."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


@dataclass(eq=False)
class ConfidenceBand:
    """[max(0, F-eps), min(1, F+eps)] around an empirical CDF."""

    cdf: EmpiricalCdf
    epsilon: float
    delta: float

    def bounds(self, x) -> tuple[np.ndarray, np.ndarray]:
        f = self.cdf.evaluate(x)
        return np.maximum(0.0, f - self.epsilon), np.minimum(1.0, f + self.epsilon)

    def lower(self) -> np.ndarray:
        return np.maximum(0.0, self.cdf.probs - self.epsilon)

    def upper(self) -> np.ndarray:
        return np.minimum(1.0, self.cdf.probs + self.epsilon)


def dkw_band(cdf: EmpiricalCdf, delta: float = 0.01) -> ConfidenceBand:
    return ConfidenceBand(cdf, dkw_epsilon(cdf.n, delta), delta)


@dataclass(frozen=True)
class BandCheck:
    within: bool
    max_violation: float


def cdf_within_band(test: EmpiricalCdf, band: ConfidenceBand) -> BandCheck:
    """Sup-distance check of a test CDF against a confidence band.

    Evaluated at every step point of both CDFs and just below each step
    (where step functions attain their extremes against each other).
    """
    pts = np.union1d(test.values, band.cdf.values)
    pts = np.concatenate([pts, np.nextafter(pts, -np.inf)])
    f = test.evaluate(pts)
    lo, hi = band.bounds(pts)
    violation = np.maximum(f - hi, lo - f)
    worst = float(np.max(violation))
    return BandCheck(within=worst <= 0.0, max_violation=max(0.0, worst))


@dataclass(eq=False)
class DatasetSummary:
    """Per-channel spreads and path losses plus dataset-level aggregates."""

    ids: list[str]
    distances_m: np.ndarray
    ds_ns: np.ndarray
    as_deg: np.ndarray
    path_loss_db: np.ndarray
    mean_ds_ns: float
    mean_as_deg: float
    ci: CiFit
    ds_cdf: EmpiricalCdf
    as_cdf: EmpiricalCdf


def summarize_dataset(
    channels,
    grid: PdapGrid | None = None,
    f_hz: float = 300e9,
    d0_m: float = 1.0,
) -> DatasetSummary:
    """Delay/angular spreads via each channel's PDAP marginals, path losses
    from MPC gains, the CI fit over (distance, path loss), and CDFs.
    """
    channels = list(channels)
    if not channels:
        raise ValueError("cannot summarize an empty dataset")
    grid = grid or PdapGrid()
    ids, ds, asp, pls = [], [], [], []
    for ch in channels:
        try:
            pdap = build_pdap(ch, grid)
            ds.append(delay_spread(pdap.delay_profile(), grid.delta_tau_ns).rms)
            asp.append(angular_spread(pdap.azimuth_profile(), grid.delta_theta_deg).rms)
            pls.append(channel_path_loss_db(ch))
        except ValueError as e:
            raise ValueError(f"channel {ch.id!r}: {e}") from e
        ids.append(ch.id)
    d = np.array([ch.distance_m for ch in channels])
    ds = np.asarray(ds)
    asp = np.asarray(asp)
    pls = np.asarray(pls)
    ci = fit_ci_model(zip(d, pls), f_hz=f_hz, d0_m=d0_m)
    return DatasetSummary(
        ids=ids,
        distances_m=d,
        ds_ns=ds,
        as_deg=asp,
        path_loss_db=pls,
        mean_ds_ns=float(ds.mean()),
        mean_as_deg=float(asp.mean()),
        ci=ci,
        ds_cdf=empirical_cdf(ds),
        as_cdf=empirical_cdf(asp),
    )
