import math

import numpy as np
import pytest

from cdimap import evaluate
from cdimap.channel import FadingSampleSet
from cdimap.errors import CampaignError, ConfigurationError, NumericalError
from cdimap.evaluate import (
    EvalConfig,
    EvalRecord,
    FadingWorld,
    conditional_meta_by_location,
    default_outage_grid,
    meta_probability,
    normalized_throughput,
    outage_cdf_curve,
    run_campaign,
)
from cdimap.rng import substream

GAMMA = 2.5e14


def rec(p_out, loc=0, rep=0, rate=1.0, r_eps=1.0, tput=1.0):
    return EvalRecord(
        rep=rep, loc=loc, method="cdi_map", rate=rate, p_out=p_out, r_eps=r_eps,
        normalized_throughput=tput,
    )


class TestAggregationOps:
    def test_meta_all_zero(self):
        assert meta_probability([rec(0.0) for _ in range(5)], 0.01) == 0.0

    def test_meta_half_above(self):
        records = [rec(0.02), rec(0.02), rec(0.001), rec(0.005)]
        assert meta_probability(records, 0.01) == 0.5

    def test_meta_strict_inequality(self):
        assert meta_probability([rec(0.01)], 0.01) == 0.0

    def test_meta_empty_rejected(self):
        with pytest.raises(ValueError):
            meta_probability([], 0.01)

    def test_throughput_identity_point(self):
        assert normalized_throughput(2.0, 0.01, 2.0, 0.01) == pytest.approx(1.0, rel=1e-12)

    def test_throughput_zero_rate(self):
        assert normalized_throughput(0.0, 0.5, 2.0, 0.01) == 0.0

    def test_throughput_requires_positive_reference(self):
        with pytest.raises(ValueError):
            normalized_throughput(1.0, 0.0, 0.0, 0.01)

    def test_conditional_values_single_record(self):
        records = [rec(0.02, loc=1), rec(0.001, loc=2)]
        cond = conditional_meta_by_location(records, 0.01)
        assert cond[1] == (1.0, 1)
        assert cond[2] == (0.0, 1)

    def test_conditional_pooling_is_weighted_average(self):
        rng = substream(0, "pool")
        records = [
            rec(float(rng.uniform(0, 0.03)), loc=int(rng.integers(0, 6))) for _ in range(200)
        ]
        cond = conditional_meta_by_location(records, 0.01)
        pooled = meta_probability(records, 0.01)
        weighted = sum(p * c for p, c in cond.values()) / sum(c for _, c in cond.values())
        assert pooled == pytest.approx(weighted, rel=1e-12)

    def test_outage_cdf_step_and_bounds(self):
        records = [rec(0.25) for _ in range(4)]
        grid = np.array([0.0, 0.2, 0.25, 0.3, 1.0])
        curve = outage_cdf_curve(records, grid)
        assert curve.tolist() == [0.0, 0.0, 1.0, 1.0, 1.0]

    def test_outage_cdf_monotone_ends_at_one(self):
        rng = substream(1, "cdf")
        records = [rec(float(rng.uniform(0, 1))) for _ in range(300)]
        curve = outage_cdf_curve(records, default_outage_grid(0.01))
        assert np.all(np.diff(curve) >= 0)
        assert curve[-1] == 1.0

    def test_cdf_at_epsilon_complements_meta(self):
        rng = substream(2, "eps")
        eps = 0.01
        records = [rec(float(rng.choice([0.0, eps, 0.02, 0.5]))) for _ in range(100)]
        grid = default_outage_grid(eps)
        curve = outage_cdf_curve(records, grid)
        at_eps = curve[np.where(grid == eps)[0][0]]
        assert at_eps == pytest.approx(1.0 - meta_probability(records, eps), rel=1e-12)


class TestEvalConfig:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            EvalConfig(gamma_tx=GAMMA, epsilon=0.0)
        with pytest.raises(ConfigurationError):
            EvalConfig(gamma_tx=GAMMA, delta=1.0)
        with pytest.raises(ConfigurationError):
            EvalConfig(gamma_tx=-1.0)
        with pytest.raises(ConfigurationError):
            EvalConfig(gamma_tx=GAMMA, L=0)
        with pytest.raises(ConfigurationError):
            EvalConfig(gamma_tx=GAMMA, D_list=())


class TestCampaign:
    def test_record_counts_single_rep(self, small_world):
        cfg = EvalConfig(gamma_tx=GAMMA, D_list=(10,), L=1, n_workers=1, seed=4)
        report = run_campaign(small_world, cfg)
        for method in evaluate.METHODS:
            assert report.records[(10, method)].size == 117

    def test_genie_throughput_exactly_one(self, small_world):
        cfg = EvalConfig(gamma_tx=GAMMA, D_list=(10,), L=3, n_workers=1, seed=4)
        report = run_campaign(small_world, cfg)
        assert np.all(report.records[(10, "genie")]["tput"] == 1.0)

    def test_genie_outage_never_exceeds_epsilon(self, small_world):
        cfg = EvalConfig(gamma_tx=GAMMA, D_list=(10,), L=3, n_workers=1, seed=4)
        report = run_campaign(small_world, cfg)
        assert np.all(report.records[(10, "genie")]["p_out"] <= cfg.epsilon)

    def test_determinism_across_worker_counts(self, small_world):
        cfgs = [
            EvalConfig(gamma_tx=GAMMA, D_list=(10, 25), L=6, n_workers=w, seed=9) for w in (1, 2)
        ]
        r1, r2 = (run_campaign(small_world, c) for c in cfgs)
        for key in r1.records:
            assert np.array_equal(r1.records[key], r2.records[key])

    def test_baseline_outage_excludes_drawn_samples(self, small_world):
        # denominators: baseline outage counts live on N-M samples, so any
        # strictly interior value is a multiple of 1/(N-M), not 1/N
        cfg = EvalConfig(gamma_tx=GAMMA, D_list=(10,), L=4, n_workers=1, seed=4)
        report = run_campaign(small_world, cfg)
        n = small_world.samples[0].n
        p = report.records[(10, "baseline_rayleigh")]["p_out"]
        interior = p[(p > 0) & (p < 1)]
        assert interior.size > 0
        scaled = interior * (n - cfg.M)
        assert np.allclose(scaled, np.round(scaled), atol=1e-9)

    def test_same_sample_count_required(self, small_world):
        locs = small_world.locations[:3]
        samples = {l.id: small_world.samples[l.id] for l in locs}
        samples[locs[0].id] = FadingSampleSet(
            location_id=locs[0].id, rho=samples[locs[0].id].rho[:500]
        )
        world = FadingWorld(locations=locs, samples=samples)
        with pytest.raises(ConfigurationError):
            run_campaign(world, EvalConfig(gamma_tx=GAMMA, D_list=(2,), L=1, n_workers=1))

    def test_world_must_exceed_max_d(self, small_world):
        cfg = EvalConfig(gamma_tx=GAMMA, D_list=(127,), L=1, n_workers=1)
        with pytest.raises(ConfigurationError):
            run_campaign(small_world, cfg)

    def test_fit_failures_abort_when_frequent(self, small_world, monkeypatch):
        def explode(*args, **kwargs):
            raise NumericalError("forced failure")

        monkeypatch.setattr(evaluate, "fit_hyperparameters", explode)
        cfg = EvalConfig(gamma_tx=GAMMA, D_list=(10,), L=5, n_workers=1, seed=4)
        with pytest.raises(CampaignError):
            run_campaign(small_world, cfg)

    def test_outlier_location_has_elevated_conditional_meta(self, small_world):
        # one location's gains scaled down hard: the map keeps overshooting
        # there, so its conditional meta-probability exceeds the average
        outlier = 57
        samples = dict(small_world.samples)
        samples[outlier] = FadingSampleSet(
            location_id=outlier, rho=samples[outlier].rho * 10 ** (-0.8)
        )
        world = FadingWorld(locations=small_world.locations, samples=samples)
        cfg = EvalConfig(gamma_tx=GAMMA, D_list=(30,), L=25, n_workers=2, seed=12)
        report = run_campaign(world, cfg)
        cond = report.conditional_meta[(30, "cdi_map")]
        assert outlier in cond
        pooled = report.meta[(30, "cdi_map")]
        assert cond[outlier][0] > pooled
        assert cond[outlier][0] >= 0.5
