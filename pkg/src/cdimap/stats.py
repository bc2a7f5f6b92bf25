"""Distribution-free fading statistics: order-statistic quantiles, empirical
outage probability, and the empirical outage capacity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import FadingSampleSet
from .errors import InsufficientSamplesError


@dataclass(frozen=True)
class QuantileEstimate:
    """Log-gain quantile from the r-th order statistic, r = floor(N*epsilon)."""

    epsilon: float
    q_hat: float
    r: int


def quantile_order(n: int, epsilon: float) -> int:
    """r = floor(N*epsilon); raises when r < 1 (too few samples)."""
    r = math.floor(n * epsilon)
    if r < 1:
        raise InsufficientSamplesError(
            f"floor(N*epsilon) = floor({n}*{epsilon}) < 1: too few samples for the quantile"
        )
    return r


def empirical_quantile_log(samples: FadingSampleSet, epsilon: float) -> QuantileEstimate:
    """Natural log of the r-th smallest gain, r = floor(N*epsilon).

    Ties are resolved by a stable sort (no effect on the returned value).
    """
    r = quantile_order(samples.n, epsilon)
    order = np.sort(samples.rho, kind="stable")
    return QuantileEstimate(epsilon=epsilon, q_hat=float(np.log(order[r - 1])), r=r)


def outage_threshold(rate: float, gamma_tx: float) -> float:
    """Gain below which rate is in outage: (2^R - 1) / gamma_tx."""
    return (2.0**rate - 1.0) / gamma_tx


def empirical_outage(samples: FadingSampleSet, rate: float, gamma_tx: float) -> float:
    """Fraction of gains rho <= (2^R - 1)/gamma_tx (empirical CDF at the threshold)."""
    if rate < 0:
        raise ValueError(f"rate must be >= 0, got {rate}")
    return float(np.mean(samples.rho <= outage_threshold(rate, gamma_tx)))


def outage_capacity_empirical(samples: FadingSampleSet, epsilon: float, gamma_tx: float) -> float:
    """Largest rate with empirical outage <= epsilon: log2(1 + gamma_tx * e^q_hat).

    This is the genie rate on held-out test data.
    """
    q = empirical_quantile_log(samples, epsilon)
    return math.log2(1.0 + gamma_tx * math.exp(q.q_hat))


def quantile_sampling_variance(samples: FadingSampleSet, epsilon: float) -> float:
    """Asymptotic variance of the log-quantile estimate.

    eps*(1-eps) / (N * f(q)^2) with f the density of ln(rho) at the quantile,
    estimated by a finite difference of neighboring order statistics.
    """
    n = samples.n
    r = quantile_order(n, epsilon)
    log_order = np.log(np.sort(samples.rho, kind="stable"))
    k = max(1, round(math.sqrt(r)))
    lo = max(1, r - k)
    hi = min(n, r + k)
    width = float(log_order[hi - 1] - log_order[lo - 1])
    if width <= 0:
        # ties across the whole window: no density information, report no noise
        return 0.0
    density = (hi - lo) / (n * width)
    return epsilon * (1.0 - epsilon) / (n * density**2)
