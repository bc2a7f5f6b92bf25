"""Monte Carlo campaign: repeated train/test splits over a fading world,
per-location rate selection with the map, baseline, and genie policies, and
aggregation into meta-probabilities, outage CDFs, and throughput statistics.

Repetitions are independent work units; each derives its randomness from
(seed, D, repetition index), so reports are bit-identical for a given
(world, config, seed) regardless of worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import CFRSweep, FadingSampleSet, fading_samples_from_cfr
from .errors import CampaignError, ConfigurationError, InsufficientDataError, NumericalError
from .gpmap import QuantileDataset, fit_hyperparameters, predict_batch
from .rateselect import cdi_quantile_rates, chi_square_quantile
from .rng import substream
from .scenario import Location, SplitSpec, split_train_test
from .stats import empirical_quantile_log, quantile_sampling_variance

METHODS = ("cdi_map", "baseline_rayleigh", "genie")

RECORD_DTYPE = np.dtype(
    [
        ("rep", np.int32),
        ("loc", np.int32),
        ("rate", np.float64),
        ("p_out", np.float64),
        ("r_eps", np.float64),
        ("tput", np.float64),
    ]
)


@dataclass(frozen=True)
class EvalConfig:
    """Campaign parameters; defaults mirror the reference protocol."""

    gamma_tx: float
    epsilon: float = 0.01
    delta: float = 0.05
    D_list: tuple[int, ...] = (10, 25, 50, 100)
    L: int = 10_000
    M: int = 10
    seed: int = 0
    n_workers: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigurationError(f"epsilon must be in (0,1), got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigurationError(f"delta must be in (0,1), got {self.delta}")
        if self.L < 1:
            raise ConfigurationError(f"L must be >= 1, got {self.L}")
        if self.M < 1:
            raise ConfigurationError(f"M must be >= 1, got {self.M}")
        if self.gamma_tx <= 0:
            raise ConfigurationError(f"gamma_tx must be positive, got {self.gamma_tx}")
        if not self.D_list:
            raise ConfigurationError("D_list must not be empty")
        object.__setattr__(self, "D_list", tuple(int(d) for d in self.D_list))


@dataclass(frozen=True)
class EvalRecord:
    """One (repetition, test location, method) outcome."""

    rep: int
    loc: int
    method: str
    rate: float
    p_out: float
    r_eps: float
    normalized_throughput: float


@dataclass
class FadingWorld:
    """Ground truth: one fading sample set per location."""

    locations: list[Location]
    samples: dict[int, FadingSampleSet]

    def __post_init__(self) -> None:
        missing = [loc.id for loc in self.locations if loc.id not in self.samples]
        if missing:
            raise ConfigurationError(f"locations without samples: {missing[:5]}")


def world_from_sweeps(locations: list[Location], sweeps: dict[int, CFRSweep]) -> FadingWorld:
    samples = {
        loc.id: fading_samples_from_cfr(sweeps[loc.id], location_id=loc.id) for loc in locations
    }
    return FadingWorld(locations=locations, samples=samples)


@dataclass
class EvalReport:
    """Aggregated campaign output.

    records maps (D, method) to a structured array (RECORD_DTYPE); all summary
    fields are reproducible from records and the config.
    """

    config: EvalConfig
    n_locations: int
    records: dict[tuple[int, str], np.ndarray]
    failed_reps: dict[int, list[int]]
    meta: dict[tuple[int, str], float] = field(default_factory=dict)
    mean_tput: dict[tuple[int, str], float] = field(default_factory=dict)
    conditional_meta: dict[tuple[int, str], dict[int, tuple[float, int]]] = field(
        default_factory=dict
    )
    outage_grid: np.ndarray | None = None
    outage_curves: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)
    tput_grid: np.ndarray | None = None
    tput_curves: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)

    def iter_records(self, D: int, method: str):
        for row in self.records[(D, method)]:
            yield EvalRecord(
                rep=int(row["rep"]),
                loc=int(row["loc"]),
                method=method,
                rate=float(row["rate"]),
                p_out=float(row["p_out"]),
                r_eps=float(row["r_eps"]),
                normalized_throughput=float(row["tput"]),
            )


def _as_record_array(records) -> np.ndarray:
    if isinstance(records, np.ndarray) and records.dtype == RECORD_DTYPE:
        return records
    rows = [
        (r.rep, r.loc, r.rate, r.p_out, r.r_eps, r.normalized_throughput) for r in list(records)
    ]
    return np.array(rows, dtype=RECORD_DTYPE)


def meta_probability(records, epsilon: float) -> float:
    """Fraction of records whose measured outage strictly exceeds epsilon."""
    arr = _as_record_array(records)
    if arr.size == 0:
        raise ValueError("meta_probability of an empty record set")
    return float(np.mean(arr["p_out"] > epsilon))


def normalized_throughput(rate: float, p_out: float, r_eps: float, epsilon: float) -> float:
    """R*(1 - p_out) / (R_eps*(1 - epsilon)); undefined for r_eps = 0."""
    if r_eps <= 0:
        raise ValueError(f"r_eps must be positive, got {r_eps}")
    return rate * (1.0 - p_out) / (r_eps * (1.0 - epsilon))


def conditional_meta_by_location(records, epsilon: float) -> dict[int, tuple[float, int]]:
    """Per-location exceedance fraction with the record count attached."""
    arr = _as_record_array(records)
    out: dict[int, tuple[float, int]] = {}
    exceed = arr["p_out"] > epsilon
    for loc in np.unique(arr["loc"]):
        mask = arr["loc"] == loc
        out[int(loc)] = (float(np.mean(exceed[mask])), int(mask.sum()))
    return out


def outage_cdf_curve(records, p_grid: np.ndarray) -> np.ndarray:
    """Empirical CDF of measured outage probabilities on a grid of p values."""
    arr = _as_record_array(records)
    if arr.size == 0:
        raise ValueError("outage_cdf_curve of an empty record set")
    p_out = np.sort(arr["p_out"])
    return np.searchsorted(p_out, np.asarray(p_grid, dtype=float), side="right") / p_out.size


def default_outage_grid(epsilon: float) -> np.ndarray:
    grid = np.concatenate([[0.0], np.logspace(-4, 0, 201), [epsilon]])
    return np.unique(grid)


def default_tput_grid() -> np.ndarray:
    return np.linspace(0.0, 2.5, 251)


# ---------------------------------------------------------------------------
# campaign internals


@dataclass
class _WorldContext:
    """Precomputed per-location quantities shared by every repetition."""

    locations: list[Location]
    sorted_rho: np.ndarray  # (n_locs, N), ascending
    q_hat: np.ndarray
    noise_var: np.ndarray
    r_eps: np.ndarray
    p_out_genie: np.ndarray
    n_samples: int
    cfg: EvalConfig
    chi2_q: float


def _prepare_context(world: FadingWorld, cfg: EvalConfig) -> _WorldContext:
    locs = sorted(world.locations, key=lambda l: l.id)
    n = world.samples[locs[0].id].n
    sorted_rho = np.empty((len(locs), n))
    q_hat = np.empty(len(locs))
    noise_var = np.empty(len(locs))
    r_eps = np.empty(len(locs))
    p_out_genie = np.empty(len(locs))
    for i, loc in enumerate(locs):
        samples = world.samples[loc.id]
        if samples.n != n:
            raise ConfigurationError("all locations must share the same sample count")
        sorted_rho[i] = np.sort(samples.rho)
        est = empirical_quantile_log(samples, cfg.epsilon)
        q_hat[i] = est.q_hat
        noise_var[i] = quantile_sampling_variance(samples, cfg.epsilon)
        r_eps[i] = math.log2(1.0 + cfg.gamma_tx * math.exp(est.q_hat))
        threshold = (2.0 ** r_eps[i] - 1.0) / cfg.gamma_tx
        p_out_genie[i] = np.searchsorted(sorted_rho[i], threshold, side="right") / n
    return _WorldContext(
        locations=locs,
        sorted_rho=sorted_rho,
        q_hat=q_hat,
        noise_var=noise_var,
        r_eps=r_eps,
        p_out_genie=p_out_genie,
        n_samples=n,
        cfg=cfg,
        chi2_q=chi_square_quantile(1.0 - cfg.delta, 2 * cfg.M),
    )


def _run_repetition(ctx: _WorldContext, D: int, rep: int):
    """One repetition: split, fit, select, evaluate.  Returns per-method rows
    or None when the map fit failed."""
    cfg = ctx.cfg
    rng = substream(cfg.seed, "campaign", D, rep)
    train_locs, test_locs = split_train_test(ctx.locations, SplitSpec(D=D, seed=0), rng=rng)
    fit_seed = int(rng.integers(2**62))

    id_to_idx = {loc.id: i for i, loc in enumerate(ctx.locations)}
    train_idx = np.array([id_to_idx[l.id] for l in train_locs])
    test_idx = np.array([id_to_idx[l.id] for l in test_locs])

    dataset = QuantileDataset(
        entries=tuple((loc, float(ctx.q_hat[id_to_idx[loc.id]])) for loc in train_locs),
        epsilon=cfg.epsilon,
        n_samples=ctx.n_samples,
        noise_floor=float(np.median(ctx.noise_var[train_idx])),
    )
    try:
        hp = fit_hyperparameters(dataset, seed=fit_seed)
        mu, sigma2 = predict_batch(dataset, hp, test_locs)
    except (NumericalError, InsufficientDataError):
        return None

    n = ctx.n_samples
    n_test = len(test_locs)
    rows = {method: np.empty(n_test, dtype=RECORD_DTYPE) for method in METHODS}

    cdi_rate = cdi_quantile_rates(mu, np.asarray(sigma2), cfg.gamma_tx, cfg.delta)
    cdi_thresh = (2.0**cdi_rate - 1.0) / cfg.gamma_tx
    norm = 1.0 - cfg.epsilon
    log1m_eps = -math.log(1.0 - cfg.epsilon)

    for j, idx in enumerate(test_idx):
        loc_id = ctx.locations[idx].id
        rho_sorted = ctx.sorted_rho[idx]
        r_eps = ctx.r_eps[idx]

        p_cdi = np.searchsorted(rho_sorted, cdi_thresh[j], side="right") / n
        rows["cdi_map"][j] = (
            rep,
            loc_id,
            cdi_rate[j],
            p_cdi,
            r_eps,
            cdi_rate[j] * (1.0 - p_cdi) / (r_eps * norm),
        )

        # baseline: M fresh draws, excluded from its own outage evaluation
        drawn = rng.choice(n, size=cfg.M, replace=False)
        snr_sum = cfg.gamma_tx * float(ctx.sorted_rho[idx][drawn].sum())
        lb = 2.0 * snr_sum / ctx.chi2_q
        base_rate = math.log2(1.0 + lb * log1m_eps)
        base_thresh = (2.0**base_rate - 1.0) / cfg.gamma_tx
        count_full = int(np.searchsorted(rho_sorted, base_thresh, side="right"))
        count_drawn = int(np.sum(ctx.sorted_rho[idx][drawn] <= base_thresh))
        p_base = (count_full - count_drawn) / (n - cfg.M)
        rows["baseline_rayleigh"][j] = (
            rep,
            loc_id,
            base_rate,
            p_base,
            r_eps,
            base_rate * (1.0 - p_base) / (r_eps * norm),
        )

        # genie achieves the target by construction; throughput is exactly 1
        rows["genie"][j] = (rep, loc_id, r_eps, ctx.p_out_genie[idx], r_eps, 1.0)
    return rows


_WORKER_CTX: dict = {}


def _init_worker(ctx: _WorldContext) -> None:
    _WORKER_CTX["ctx"] = ctx


def _run_chunk(args: tuple[int, list[int]]):
    D, reps = args
    ctx = _WORKER_CTX["ctx"]
    return [(rep, _run_repetition(ctx, D, rep)) for rep in reps]


def run_campaign(world: FadingWorld, cfg: EvalConfig) -> EvalReport:
    """Run the full campaign over every D in cfg.D_list.

    Aborts with CampaignError when more than 1% of the repetitions of any D
    fail (map-fit failures are recorded, never retried).
    """
    max_d = max(cfg.D_list)
    if len(world.locations) <= max_d:
        raise ConfigurationError(
            f"world has {len(world.locations)} locations; need > max(D_list) = {max_d}"
        )
    ctx = _prepare_context(world, cfg)
    n_workers = cfg.n_workers or min(os.cpu_count() or 1, 8)

    tasks: list[tuple[int, list[int]]] = []
    chunk = max(1, math.ceil(cfg.L / (n_workers * 8)))
    for D in cfg.D_list:
        for lo in range(0, cfg.L, chunk):
            tasks.append((D, list(range(lo, min(lo + chunk, cfg.L)))))

    results: dict[int, dict[int, dict | None]] = {D: {} for D in cfg.D_list}
    if n_workers <= 1:
        _init_worker(ctx)
        for task in tasks:
            for rep, rows in _run_chunk(task):
                results[task[0]][rep] = rows
    else:
        with ProcessPoolExecutor(
            max_workers=n_workers, initializer=_init_worker, initargs=(ctx,)
        ) as pool:
            for task, chunk_result in zip(tasks, pool.map(_run_chunk, tasks)):
                for rep, rows in chunk_result:
                    results[task[0]][rep] = rows

    records: dict[tuple[int, str], np.ndarray] = {}
    failed: dict[int, list[int]] = {}
    for D in cfg.D_list:
        per_rep = results[D]
        failed[D] = sorted(rep for rep, rows in per_rep.items() if rows is None)
        if len(failed[D]) > 0.01 * cfg.L:
            raise CampaignError(
                f"D={D}: {len(failed[D])}/{cfg.L} repetitions failed (> 1%); aborting"
            )
        for method in METHODS:
            parts = [per_rep[rep][method] for rep in sorted(per_rep) if per_rep[rep] is not None]
            records[(D, method)] = (
                np.concatenate(parts) if parts else np.empty(0, dtype=RECORD_DTYPE)
            )

    report = EvalReport(
        config=cfg, n_locations=len(world.locations), records=records, failed_reps=failed
    )
    _aggregate(report)
    return report


def _aggregate(report: EvalReport) -> None:
    cfg = report.config
    report.outage_grid = default_outage_grid(cfg.epsilon)
    report.tput_grid = default_tput_grid()
    for key, arr in report.records.items():
        if arr.size == 0:
            continue
        report.meta[key] = meta_probability(arr, cfg.epsilon)
        report.mean_tput[key] = float(np.mean(arr["tput"]))
        report.conditional_meta[key] = conditional_meta_by_location(arr, cfg.epsilon)
        report.outage_curves[key] = outage_cdf_curve(arr, report.outage_grid)
        tputs = np.sort(arr["tput"])
        report.tput_curves[key] = (
            np.searchsorted(tputs, report.tput_grid, side="right") / tputs.size
        )
