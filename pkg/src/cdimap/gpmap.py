"""Spatial model of the log epsilon-quantile field: a Gaussian process with an
exponential (Matern-1/2) kernel over Euclidean distance, constant mean, and a
homoscedastic noise term floored at the order-statistic sampling variance.

Hyperparameters are fit by maximizing the marginal likelihood with a seeded
multi-start Nelder-Mead search over log-parameterized (signal variance,
length scale, noise variance); the constant mean is profiled in closed form
at every objective evaluation, which is equivalent to including it in the
search but keeps the simplex three-dimensional.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import Bounds, minimize

from .channel import FadingSampleSet
from .errors import InsufficientDataError, NumericalError
from .rng import substream
from .scenario import Location, distance
from .stats import empirical_quantile_log, quantile_sampling_variance

SIGNAL_VARIANCE_BOX = (1e-6, 1e3)
LENGTH_SCALE_BOX = (0.5, 500.0)
NOISE_VARIANCE_BOX = (1e-6, 1e3)
N_STARTS = 8
_JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class GPHyperparameters:
    mean_const: float
    signal_variance: float
    length_scale: float
    noise_variance: float

    def __post_init__(self) -> None:
        if self.signal_variance < 0:
            raise ValueError(f"signal_variance must be >= 0, got {self.signal_variance}")
        if self.length_scale <= 0:
            raise ValueError(f"length_scale must be > 0, got {self.length_scale}")
        if self.noise_variance < 0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")


@dataclass(frozen=True)
class PredictiveQuantile:
    """Gaussian predictive distribution of the log-quantile at one location."""

    mu: float
    sigma2: float


@dataclass(frozen=True)
class QuantileDataset:
    """Per-location log-quantile estimates sharing one epsilon and sample count.

    noise_floor is the sampling variance of the quantile estimator (median
    across locations); the fitted noise variance is never allowed below it.
    """

    entries: tuple[tuple[Location, float], ...]
    epsilon: float
    n_samples: int
    noise_floor: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def size(self) -> int:
        return len(self.entries)


def quantile_dataset_from_samples(
    sample_sets: list[FadingSampleSet],
    locations: list[Location],
    epsilon: float,
) -> QuantileDataset:
    """Reduce raw sample sets to (location, q_hat) pairs plus the noise floor."""
    if len(sample_sets) != len(locations):
        raise ValueError("one sample set per location required")
    entries = []
    variances = []
    n = sample_sets[0].n
    for samples, loc in zip(sample_sets, locations):
        if samples.n != n:
            raise ValueError("all locations must share the same sample count N")
        entries.append((loc, empirical_quantile_log(samples, epsilon).q_hat))
        variances.append(quantile_sampling_variance(samples, epsilon))
    return QuantileDataset(
        entries=tuple(entries),
        epsilon=epsilon,
        n_samples=n,
        noise_floor=float(np.median(variances)),
    )


def kernel_eval(hp: GPHyperparameters, a: Location, b: Location) -> float:
    """Exponential kernel: signal_variance * exp(-distance / length_scale)."""
    return hp.signal_variance * math.exp(-distance(a, b) / hp.length_scale)


def _canonical(data: QuantileDataset) -> tuple[list[Location], np.ndarray]:
    """Entries sorted by location id so results are order-independent bit for bit."""
    entries = sorted(data.entries, key=lambda e: e[0].id)
    locs = [e[0] for e in entries]
    ids = [l.id for l in locs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate location ids in dataset")
    return locs, np.array([e[1] for e in entries], dtype=float)


def _pairwise(locs: list[Location]) -> np.ndarray:
    pts = np.array([(l.x, l.y, l.z) for l in locs], dtype=float)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def _chol_gram(dist: np.ndarray, sv: float, ls: float, nv: float):
    """Cholesky of sv*exp(-dist/ls) + nv*I with jitter escalation."""
    gram = sv * np.exp(-dist / ls)
    diag = np.diag_indices_from(gram)
    last_err: Exception | None = None
    for jitter in _JITTERS:
        gram_j = gram.copy()
        gram_j[diag] += nv + jitter
        try:
            return cho_factor(gram_j, lower=True, check_finite=False)
        except np.linalg.LinAlgError as err:  # pragma: no cover - rare escalation path
            last_err = err
    cond = float(np.linalg.cond(gram + nv * np.eye(gram.shape[0])))
    raise NumericalError(
        f"Gram matrix not positive definite (cond ~ {cond:.3e}, sv={sv:.3e}, "
        f"ls={ls:.3e}, nv={nv:.3e})"
    ) from last_err


def log_marginal_likelihood(data: QuantileDataset, hp: GPHyperparameters) -> float:
    """-1/2 r' A^-1 r - 1/2 log det A - D/2 log 2pi, A = K + nv*I, r = y - mean."""
    locs, y = _canonical(data)
    factor = _chol_gram(_pairwise(locs), hp.signal_variance, hp.length_scale, hp.noise_variance)
    r = y - hp.mean_const
    alpha = cho_solve(factor, r, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return float(-0.5 * (r @ alpha) - 0.5 * logdet - 0.5 * len(y) * math.log(2.0 * math.pi))


def _profiled_neg_lml(theta: np.ndarray, dist: np.ndarray, y: np.ndarray) -> float:
    """Negative LML at exp(theta) = (sv, ls, nv), with the GLS-optimal mean."""
    sv, ls, nv = np.exp(theta)
    try:
        factor = _chol_gram(dist, sv, ls, nv)
    except NumericalError:
        return 1e300
    ones = np.ones_like(y)
    sol = cho_solve(factor, np.stack([y, ones], axis=1), check_finite=False)
    denom = float(sol[:, 1].sum())
    if denom <= 0:  # pragma: no cover - PD matrix implies positive denom
        return 1e300
    mean = float(sol[:, 0].sum()) / denom
    r = y - mean
    alpha = cho_solve(factor, r, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return float(0.5 * (r @ alpha) + 0.5 * logdet + 0.5 * len(y) * math.log(2.0 * math.pi))


def fit_hyperparameters(data: QuantileDataset, seed: int = 0) -> GPHyperparameters:
    """Maximize the marginal likelihood over the documented hyperparameter box.

    Multi-start Nelder-Mead (one moment-based start plus N_STARTS-1 seeded
    log-uniform starts); deterministic given the seed and invariant to the
    ordering of the dataset entries.
    """
    if data.size < 3:
        raise InsufficientDataError(f"need >= 3 training locations, got {data.size}")
    locs, y = _canonical(data)
    dist = _pairwise(locs)

    nv_lo = max(NOISE_VARIANCE_BOX[0], data.noise_floor)
    lb = np.log([SIGNAL_VARIANCE_BOX[0], LENGTH_SCALE_BOX[0], nv_lo])
    ub = np.log([SIGNAL_VARIANCE_BOX[1], LENGTH_SCALE_BOX[1], NOISE_VARIANCE_BOX[1]])
    bounds = Bounds(lb, ub)

    var_y = float(np.var(y))
    off_diag = dist[np.triu_indices_from(dist, k=1)]
    med_dist = float(np.median(off_diag)) if off_diag.size else 1.0
    moment_start = np.clip(
        np.log([max(var_y, 1e-5), max(med_dist, 1.0), max(var_y / 10.0, nv_lo * 2.0)]), lb, ub
    )

    rng = substream(seed, "gpfit")
    starts = [moment_start] + [rng.uniform(lb, ub) for _ in range(N_STARTS - 1)]

    best_x: np.ndarray | None = None
    best_f = math.inf
    for x0 in starts:
        res = minimize(
            _profiled_neg_lml,
            x0,
            args=(dist, y),
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": 1e-3, "fatol": 1e-4, "maxfev": 200},
        )
        if res.fun < best_f:
            best_f = res.fun
            best_x = res.x
    if best_x is None or not math.isfinite(best_f):
        raise NumericalError("hyperparameter search failed at every start")

    sv, ls, nv = np.exp(best_x)
    factor = _chol_gram(dist, sv, ls, nv)
    sol = cho_solve(factor, np.stack([y, np.ones_like(y)], axis=1), check_finite=False)
    mean = float(sol[:, 0].sum() / sol[:, 1].sum())
    return GPHyperparameters(
        mean_const=mean, signal_variance=float(sv), length_scale=float(ls), noise_variance=float(nv)
    )


def predict_batch(
    data: QuantileDataset, hp: GPHyperparameters, xs: list[Location]
) -> tuple[np.ndarray, np.ndarray]:
    """Predictive (mu, sigma2) arrays at several query locations.

    One factorization of the training system is shared by all queries.
    """
    locs, y = _canonical(data)
    factor = _chol_gram(_pairwise(locs), hp.signal_variance, hp.length_scale, hp.noise_variance)
    r = y - hp.mean_const
    alpha = cho_solve(factor, r, check_finite=False)

    train_pts = np.array([(l.x, l.y, l.z) for l in locs], dtype=float)
    query_pts = np.array([(l.x, l.y, l.z) for l in xs], dtype=float)
    cross = np.sqrt(((train_pts[:, None, :] - query_pts[None, :, :]) ** 2).sum(axis=2))
    k_star = hp.signal_variance * np.exp(-cross / hp.length_scale)

    mu = hp.mean_const + k_star.T @ alpha
    v = cho_solve(factor, k_star, check_finite=False)
    sigma2 = hp.signal_variance + hp.noise_variance - np.einsum("ij,ij->j", k_star, v)

    scale = hp.signal_variance + hp.noise_variance
    bad = sigma2 < -1e-8 * max(scale, 1.0)
    if np.any(bad):
        raise NumericalError(
            f"negative predictive variance (min {sigma2.min():.3e}); "
            "training system is numerically singular"
        )
    if np.any(sigma2 < 0):
        warnings.warn("clamping slightly negative predictive variance to 0", stacklevel=2)
        sigma2 = np.maximum(sigma2, 0.0)
    return mu, sigma2


def predict(data: QuantileDataset, hp: GPHyperparameters, x: Location) -> PredictiveQuantile:
    """Gaussian predictive distribution of the log-quantile at one location."""
    mu, sigma2 = predict_batch(data, hp, [x])
    return PredictiveQuantile(mu=float(mu[0]), sigma2=float(sigma2[0]))
