"""Rate selection policies: the map-based quantile rule, the Rayleigh
model-based baseline, and the genie that sees the held-out samples.

The special functions needed here (inverse error function, chi-square
quantile) are implemented in-module: an initial approximation polished by
Newton iterations until the defining equation holds to <= 1e-12 absolute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import FadingSampleSet
from .errors import DomainError
from .stats import outage_capacity_empirical


@dataclass(frozen=True)
class RateDecision:
    """A selected transmission rate [bits/s/Hz] and how it was reached."""

    rate: float
    method: str  # cdi_map | baseline_rayleigh | genie
    inputs: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.rate < 0:
            raise ValueError(f"rate must be >= 0, got {self.rate}")


def inverse_erf(p: float) -> float:
    """y with erf(y) = p, |p| < 1, accurate to 1e-12 absolute in erf(y).

    Initial guess from the Beasley-Springer/Moro-style rational approximation
    of the normal quantile, then Newton polish on erf(y) - p.
    """
    if not -1.0 < p < 1.0:
        raise DomainError(f"inverse_erf requires |p| < 1, got {p}")
    if p == 0.0:
        return 0.0

    # normal quantile of (p+1)/2, crude start
    q = (p + 1.0) / 2.0
    t = math.sqrt(-2.0 * math.log(min(q, 1.0 - q)))
    z = t - (2.30753 + 0.27061 * t) / (1.0 + t * (0.99229 + 0.04481 * t))
    if q < 0.5:
        z = -z
    y = z / math.sqrt(2.0)

    two_over_sqrt_pi = 2.0 / math.sqrt(math.pi)
    for _ in range(60):
        diff = math.erf(y) - p
        if abs(diff) <= 1e-15:
            break
        y -= diff / (two_over_sqrt_pi * math.exp(-y * y))
    return y


def _regularized_lower_gamma(a: float, x: float) -> float:
    """P(a, x): series for x < a+1, continued fraction otherwise."""
    if x < 0 or a <= 0:
        raise DomainError(f"P(a,x) needs a > 0, x >= 0; got a={a}, x={x}")
    if x == 0.0:
        return 0.0
    lg = math.lgamma(a)
    if x < a + 1.0:
        # series: sum x^n / (a)_{n+1}
        term = 1.0 / a
        total = term
        n = a
        for _ in range(1000):
            n += 1.0
            term *= x / n
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return total * math.exp(-x + a * math.log(x) - lg)
    # Lentz continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    q = math.exp(-x + a * math.log(x) - lg) * h
    return 1.0 - q


def chi_square_quantile(p: float, dof: int) -> float:
    """x with P(chi2_dof <= x) = p, accurate to 1e-10 absolute in the CDF.

    Bisection bracket followed by Newton on the regularized incomplete gamma.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile level must be in (0,1), got {p}")
    if dof < 1:
        raise DomainError(f"dof must be >= 1, got {dof}")
    a = dof / 2.0
    cdf = lambda x: _regularized_lower_gamma(a, x / 2.0)

    lo, hi = 0.0, float(dof)
    while cdf(hi) < p:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9 * max(1.0, hi):
            break
    x = 0.5 * (lo + hi)
    # Newton polish; pdf of chi2 at x
    for _ in range(40):
        diff = cdf(x) - p
        if abs(diff) <= 1e-13:
            break
        pdf = math.exp((a - 1.0) * math.log(x / 2.0) - x / 2.0 - math.lgamma(a)) / 2.0
        if pdf <= 0:
            break
        step = diff / pdf
        x = max(x - step, x / 2.0)
    return x


def cdi_quantile_rates(mu, sigma2, gamma_tx: float, delta: float) -> np.ndarray:
    """Vector form of the map rule over predictive (mu, sigma2) arrays:

        R = log2(1 + gamma_tx * exp(mu + sqrt(2)*sigma*erfinv(2*delta - 1)))
    """
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must be in (0,1), got {delta}")
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 < 0):
        raise DomainError("predictive variance must be >= 0")
    q_delta = np.asarray(mu, dtype=float) + np.sqrt(2.0 * sigma2) * inverse_erf(2.0 * delta - 1.0)
    return np.log2(1.0 + gamma_tx * np.exp(q_delta))


def select_rate_cdi(pred, gamma_tx: float, delta: float) -> RateDecision:
    """Rate at the delta-quantile of the predictive log-quantile distribution."""
    rate = float(cdi_quantile_rates(pred.mu, pred.sigma2, gamma_tx, delta))
    return RateDecision(rate=rate, method="cdi_map", inputs={"mu": pred.mu, "sigma2": pred.sigma2})


def select_rate_baseline(snr_samples, epsilon: float, delta: float) -> RateDecision:
    """Rayleigh model-based rule from M instantaneous SNR draws.

    Under Rayleigh fading the SNR is exponential, so 2*sum(snr)/mean is
    chi-square with 2M degrees of freedom; a delta-confidence lower bound on
    the mean SNR is

        lb = 2 * sum(snr) / Q_chi2(1 - delta; 2M)

    and the rate targets the analytic epsilon-quantile of that exponential:
    R = log2(1 + lb * (-ln(1 - epsilon))).  The exceedance probability of
    the true outage target is exactly delta when the fading really is
    Rayleigh, for any mean SNR.
    """
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must be in (0,1), got {epsilon}")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must be in (0,1), got {delta}")
    samples = [float(s) for s in snr_samples]
    if len(samples) < 1:
        raise DomainError("need at least one SNR sample")
    if any(s <= 0 for s in samples):
        raise DomainError("SNR samples must be positive")
    m = len(samples)
    lower_bound = 2.0 * sum(samples) / chi_square_quantile(1.0 - delta, 2 * m)
    rate = math.log2(1.0 + lower_bound * (-math.log(1.0 - epsilon)))
    return RateDecision(
        rate=rate,
        method="baseline_rayleigh",
        inputs={"m": m, "mean_snr_lb": lower_bound},
    )


def select_rate_genie(samples: FadingSampleSet, epsilon: float, gamma_tx: float) -> RateDecision:
    """Empirical epsilon-outage capacity from the location's own samples."""
    rate = outage_capacity_empirical(samples, epsilon, gamma_tx)
    return RateDecision(rate=rate, method="genie", inputs={"n": samples.n})
