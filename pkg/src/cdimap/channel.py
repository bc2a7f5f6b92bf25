"""Synthetic multipath channels: tapped-delay-line ground truth per location,
wideband frequency sweeps, impulse responses, and data-validation metrics.

The ground-truth generator is a Rician-style mixture: one deterministic
line-of-sight tap plus complex-Gaussian scattered taps.  Large-scale gain
(log-normal shadowing on top of free-space loss) and the LOS power fraction
are drawn from spatially correlated Gaussian fields so the low quantiles of
the fading distribution vary smoothly over the map.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import AnalysisError, ConfigurationError, DomainError, FormatError
from .rng import substream
from .scenario import Location, distance, distance_matrix

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# span/coherence-bandwidth ratio below which frequency sweeps stop emulating
# independent small-scale fading samples
MIN_SPAN_TO_COHERENCE = 100.0


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform sweep grid: n_points from f_min to f_max inclusive [Hz]."""

    f_min: float
    f_max: float
    n_points: int

    def __post_init__(self) -> None:
        if not (self.f_max > self.f_min > 0):
            raise ConfigurationError(f"need f_max > f_min > 0, got [{self.f_min}, {self.f_max}]")
        if self.n_points < 2:
            raise ConfigurationError(f"n_points must be >= 2, got {self.n_points}")

    @property
    def spacing(self) -> float:
        return (self.f_max - self.f_min) / (self.n_points - 1)

    @property
    def span(self) -> float:
        return self.f_max - self.f_min

    def frequencies(self) -> np.ndarray:
        return self.f_min + self.spacing * np.arange(self.n_points)


@dataclass(frozen=True)
class MultipathProfile:
    """Tapped-delay line: complex coefficients and delays [s], LOS tap first."""

    alphas: np.ndarray
    taus: np.ndarray

    def __post_init__(self) -> None:
        alphas = np.asarray(self.alphas, dtype=complex)
        taus = np.asarray(self.taus, dtype=float)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "taus", taus)
        if alphas.shape != taus.shape or alphas.ndim != 1 or alphas.size < 1:
            raise ConfigurationError("profile needs K >= 1 matching coefficients and delays")
        if not np.all(taus > 0):
            raise ConfigurationError("all path delays must be positive")
        if not np.all(np.isfinite(alphas)) or not np.all(np.isfinite(taus)):
            raise ConfigurationError("non-finite path parameters")

    @property
    def n_paths(self) -> int:
        return int(self.alphas.size)


@dataclass(frozen=True)
class CFRSweep:
    """Complex channel frequency response over a uniform grid."""

    grid: FrequencyGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=complex)
        object.__setattr__(self, "values", values)
        if values.shape != (self.grid.n_points,):
            raise FormatError(
                f"sweep has {values.shape} values for a {self.grid.n_points}-point grid"
            )


@dataclass(frozen=True)
class CIR:
    """Channel impulse response on the IDFT delay grid of a sweep.

    Delay bins are spaced 1/(n_points * spacing), i.e. 1/(f_max - f_min) up
    to the 1/n_points discretization of the inverse transform.
    """

    delays: np.ndarray
    taps: np.ndarray
    powers_db: np.ndarray
    grid: FrequencyGrid


@dataclass(frozen=True)
class FadingSampleSet:
    """Narrowband channel gains rho = |h|^2 (linear power) at one location."""

    location_id: int
    rho: np.ndarray

    def __post_init__(self) -> None:
        rho = np.asarray(self.rho, dtype=float)
        object.__setattr__(self, "rho", rho)
        if rho.ndim != 1 or rho.size < 1:
            raise AnalysisError("sample set must hold N >= 1 gains")
        if not np.all(rho > 0):
            raise AnalysisError(f"location {self.location_id}: nonpositive channel gains")

    @property
    def n(self) -> int:
        return int(self.rho.size)


@dataclass(frozen=True)
class EnvironmentSpec:
    """Ground-truth generator parameters.

    los_fraction is the share of total path power carried by the LOS tap
    (Rician factor K = f/(1-f)); it varies over space as a clipped Gaussian
    field.  Shadowing is log-normal in dB on top of free-space loss at
    ref_frequency_hz, with two spatial scales: a long-range component
    (shadowing_std_db over corr_length_m) and a short-range clutter
    component (clutter_std_db over clutter_corr_length_m).  Scattered-path
    excess delays are uniform in delay_spread_range (seconds beyond the LOS
    flight time).
    """

    n_scatterers: int = 48
    los_fraction_mean: float = 0.10
    los_fraction_std: float = 0.05
    shadowing_std_db: float = 3.5
    corr_length_m: float = 40.0
    clutter_std_db: float = 1.2
    clutter_corr_length_m: float = 2.0
    delay_spread_range: tuple[float, float] = (60e-9, 520e-9)
    ref_frequency_hz: float = 6e9
    los_fraction_max: float = 0.95

    def __post_init__(self) -> None:
        lo, hi = self.delay_spread_range
        if not (0 < lo < hi):
            raise ConfigurationError(f"bad delay spread range {self.delay_spread_range}")
        if self.corr_length_m <= 0 or self.clutter_corr_length_m <= 0:
            raise ConfigurationError("field correlation lengths must be positive")
        if self.n_scatterers < 0:
            raise ConfigurationError("n_scatterers must be >= 0")
        if min(self.shadowing_std_db, self.clutter_std_db, self.los_fraction_std) < 0:
            raise ConfigurationError("field standard deviations must be >= 0")
        if self.ref_frequency_hz <= 0:
            raise ConfigurationError("ref_frequency_hz must be positive")


@dataclass(frozen=True)
class EnvironmentFields:
    """One realization of the correlated per-location fields."""

    shadowing_db: dict[int, float]
    los_fraction: dict[int, float]


def _correlated_field(dist: np.ndarray, corr_length: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance Gaussian field with a squared-exponential kernel."""
    n = dist.shape[0]
    cov = np.exp(-0.5 * (dist / corr_length) ** 2)
    jitter = 1e-10
    while True:
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            jitter *= 100.0
            if jitter > 1e-2:
                raise
    return chol @ rng.standard_normal(n)


def draw_environment_fields(
    env: EnvironmentSpec, locations: list[Location], rng: np.random.Generator
) -> EnvironmentFields:
    """Draw the correlated shadowing and LOS-fraction fields over a location set."""
    dist = distance_matrix(locations, locations)
    shadow = env.shadowing_std_db * _correlated_field(dist, env.corr_length_m, rng)
    if env.clutter_std_db > 0:
        shadow = shadow + env.clutter_std_db * _correlated_field(
            dist, env.clutter_corr_length_m, rng
        )
    frac_raw = env.los_fraction_mean + env.los_fraction_std * _correlated_field(
        dist, env.corr_length_m, rng
    )
    frac = np.clip(frac_raw, 0.0, env.los_fraction_max)
    ids = [loc.id for loc in locations]
    return EnvironmentFields(
        shadowing_db=dict(zip(ids, shadow.tolist())),
        los_fraction=dict(zip(ids, frac.tolist())),
    )


def synth_multipath(
    env: EnvironmentSpec,
    loc: Location,
    bs: Location,
    rng: np.random.Generator,
    fields: EnvironmentFields | None = None,
) -> MultipathProfile:
    """Ground-truth tapped-delay line for one location.

    Tap 1 is the LOS path: delay = distance/c, deterministic magnitude from
    the large-scale gain and the LOS power fraction.  Scattered taps get
    uniform excess delays and circular complex-Gaussian coefficients;
    magnitudes are frequency-flat by construction.  Without `fields`, the
    field values for this location are drawn marginally from the same
    distributions (no cross-location correlation).
    """
    d = distance(loc, bs)
    if d <= 0:
        raise ConfigurationError(f"location {loc.id} coincides with the base station")
    tau_los = d / SPEED_OF_LIGHT

    if fields is not None:
        shadow_db = fields.shadowing_db[loc.id]
        frac = fields.los_fraction[loc.id]
    else:
        total_shadow_std = math.hypot(env.shadowing_std_db, env.clutter_std_db)
        shadow_db = total_shadow_std * rng.standard_normal()
        frac = float(
            np.clip(
                env.los_fraction_mean + env.los_fraction_std * rng.standard_normal(),
                0.0,
                env.los_fraction_max,
            )
        )

    gain_db = free_space_loss(d, env.ref_frequency_hz) + shadow_db
    gain = 10.0 ** (gain_db / 10.0)

    taus = [tau_los]
    alphas = [complex(math.sqrt(frac * gain), 0.0)]
    k = env.n_scatterers
    if k > 0:
        lo, hi = env.delay_spread_range
        excess = rng.uniform(lo, hi, size=k)
        scale = math.sqrt((1.0 - frac) * gain / (2.0 * k))
        coeff = scale * (rng.standard_normal(k) + 1j * rng.standard_normal(k))
        taus.extend((tau_los + excess).tolist())
        alphas.extend(coeff.tolist())
    return MultipathProfile(alphas=np.array(alphas), taus=np.array(taus))


def cfr_from_profile(profile: MultipathProfile, grid: FrequencyGrid) -> CFRSweep:
    """Evaluate H(f) = sum_k alpha_k exp(-2*pi*j*f*tau_k) on the grid."""
    f = grid.frequencies()
    phases = np.exp(-2j * np.pi * np.outer(f, profile.taus))
    return CFRSweep(grid=grid, values=phases @ profile.alphas)


def cir_from_cfr(sweep: CFRSweep) -> CIR:
    """Inverse DFT of the (rectangular-windowed) sweep.

    Delay axis: m / (n * spacing), m = 0..n-1; the baseband IDFT is phase
    corrected for f_min so physical path delays land on the axis directly.
    """
    grid = sweep.grid
    n = grid.n_points
    delays = np.arange(n) / (n * grid.spacing)
    taps = np.exp(2j * np.pi * grid.f_min * delays) * np.fft.ifft(sweep.values)
    mag = np.abs(taps)
    with np.errstate(divide="ignore"):
        powers_db = 20.0 * np.log10(mag)
    return CIR(delays=delays, taps=taps, powers_db=powers_db, grid=grid)


def cfr_from_cir(cir: CIR) -> CFRSweep:
    """Exact inverse of cir_from_cfr."""
    values = np.fft.fft(np.exp(-2j * np.pi * cir.grid.f_min * cir.delays) * cir.taps)
    return CFRSweep(grid=cir.grid, values=values)


def fading_samples_from_cfr(sweep: CFRSweep, location_id: int = -1) -> FadingSampleSet:
    """Per-frequency powers |H(f)|^2 as narrowband fading samples (N = n_points)."""
    rho = np.abs(sweep.values) ** 2
    if not np.all(rho > 0):
        raise AnalysisError("sweep contains zero-power bins; cannot form fading samples")
    return FadingSampleSet(location_id=location_id, rho=rho)


def coherence_bandwidth(cir: CIR, threshold_db: float = -110.0) -> float:
    """1 / (max-excess delay spread of taps above threshold_db).

    Single tap above threshold -> +inf (flat channel).
    """
    above = cir.powers_db > threshold_db
    if not np.any(above):
        raise AnalysisError(f"no CIR taps above {threshold_db} dB")
    delays = cir.delays[above]
    spread = float(delays.max() - delays.min())
    if spread == 0.0:
        return math.inf
    return 1.0 / spread


class PathlossFit(NamedTuple):
    eta: float
    residual: float


def fit_pathloss_exponent(sweep: CFRSweep) -> PathlossFit:
    """Least-squares fit of ln(rho) vs ln(f); eta is the negated slope.

    residual is the RMS of the fit residuals in ln(rho).
    """
    rho = np.abs(sweep.values) ** 2
    if not np.all(rho > 0):
        raise AnalysisError("zero-power bins; pathloss fit undefined")
    x = np.log(sweep.grid.frequencies())
    y = np.log(rho)
    design = np.stack([np.ones_like(x), x], axis=1)
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    fitted = design @ coef
    residual = float(np.sqrt(np.mean((y - fitted) ** 2)))
    return PathlossFit(eta=float(-coef[1]), residual=residual)


def free_space_loss(d: float, f_c: float) -> float:
    """Free-space power loss 20*log10(c / (4*pi*d*f_c)) in dB."""
    if d <= 0 or f_c <= 0:
        raise DomainError(f"need d > 0 and f_c > 0, got d={d}, f_c={f_c}")
    return 20.0 * math.log10(SPEED_OF_LIGHT / (4.0 * math.pi * d * f_c))


def check_sampling_validity(env: EnvironmentSpec, grid: FrequencyGrid) -> float:
    """Span / expected coherence bandwidth; warns when the sweep is too narrow
    for per-frequency powers to emulate independent small-scale fading."""
    expected_bc = 1.0 / env.delay_spread_range[1]
    ratio = grid.span / expected_bc
    if ratio < MIN_SPAN_TO_COHERENCE:
        warnings.warn(
            f"frequency span / coherence bandwidth = {ratio:.1f} < "
            f"{MIN_SPAN_TO_COHERENCE:.0f}: sweep powers will not emulate "
            "independent fading samples",
            stacklevel=2,
        )
    return ratio


def synth_world(
    env: EnvironmentSpec,
    locations: list[Location],
    bs: Location,
    grid: FrequencyGrid,
    seed: int,
) -> dict[int, CFRSweep]:
    """Synthesize one CFR sweep per location with correlated fields.

    Per-location randomness comes from substream(seed, "channel", id), so any
    subset of locations reproduces identically.
    """
    check_sampling_validity(env, grid)
    fields = draw_environment_fields(env, locations, substream(seed, "fields"))
    sweeps: dict[int, CFRSweep] = {}
    for loc in locations:
        profile = synth_multipath(env, loc, bs, substream(seed, "channel", loc.id), fields)
        sweeps[loc.id] = cfr_from_profile(profile, grid)
    return sweeps
