import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdimap.channel import FadingSampleSet
from cdimap.errors import InsufficientSamplesError
from cdimap.rng import substream
from cdimap.stats import (
    empirical_outage,
    empirical_quantile_log,
    outage_capacity_empirical,
    quantile_sampling_variance,
)


def samples_of(values, loc=0):
    return FadingSampleSet(location_id=loc, rho=np.asarray(values, dtype=float))


class TestQuantile:
    def test_order_index_8001(self):
        rng = substream(0, "q")
        s = samples_of(rng.exponential(1.0, size=8001))
        est = empirical_quantile_log(s, 0.01)
        assert est.r == 80

    def test_constructed_order(self):
        # rho = e^1 .. e^100, eps=0.05 -> r=5, q_hat = 5
        s = samples_of(np.exp(np.arange(1.0, 101.0)))
        est = empirical_quantile_log(s, 0.05)
        assert est.r == 5
        assert est.q_hat == pytest.approx(5.0, abs=1e-12)

    def test_exponential_quantile_monte_carlo(self):
        # Exp(1): eps-quantile is -ln(1-eps); order-statistic asymptotics give
        # sd(x_(r)) ~ sqrt(eps(1-eps)/N)/f(x_eps), mapped to the log domain by 1/x_eps
        n, eps = 10**6, 0.01
        x_eps = -math.log(1.0 - eps)
        f_at_q = math.exp(-x_eps)
        sd_x = math.sqrt(eps * (1 - eps) / n) / f_at_q
        sd_log = sd_x / x_eps
        s = samples_of(substream(42, "expq").exponential(1.0, size=n))
        est = empirical_quantile_log(s, eps)
        assert abs(est.q_hat - math.log(x_eps)) <= 3 * sd_log

    def test_too_few_samples(self):
        with pytest.raises(InsufficientSamplesError):
            empirical_quantile_log(samples_of([1.0, 2.0]), 0.01)

    def test_monotone_in_epsilon(self):
        s = samples_of(substream(1, "mono").exponential(1.0, size=500))
        qs = [empirical_quantile_log(s, e).q_hat for e in (0.01, 0.05, 0.1, 0.3, 0.9)]
        assert qs == sorted(qs)

    @given(st.floats(0.01, 100.0), st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_scale_equivariance(self, scale, seed):
        rho = substream(seed, "scale").exponential(1.0, size=200)
        q0 = empirical_quantile_log(samples_of(rho), 0.05).q_hat
        q1 = empirical_quantile_log(samples_of(scale * rho), 0.05).q_hat
        assert q1 == pytest.approx(q0 + math.log(scale), abs=1e-12)


class TestOutage:
    def test_rate_zero(self):
        s = samples_of([0.5, 1.0, 2.0])
        assert empirical_outage(s, 0.0, gamma_tx=10.0) == 0.0

    def test_large_rate(self):
        s = samples_of([0.5, 1.0, 2.0])
        assert empirical_outage(s, 500.0, gamma_tx=10.0) == 1.0

    def test_exponential_analytic(self):
        # threshold at the Exp(1) 1%-quantile -> outage ~ 1%
        n = 10**6
        s = samples_of(substream(7, "out").exponential(1.0, size=n))
        rate = math.log2(1.0 + (-math.log(0.99)))
        p = empirical_outage(s, rate, gamma_tx=1.0)
        assert p == pytest.approx(0.01, abs=3 * math.sqrt(0.01 * 0.99 / n))


class TestOutageCapacity:
    def test_constant_samples(self):
        s = samples_of([2.5] * 50)
        for eps in (0.05, 0.3, 0.9):
            assert outage_capacity_empirical(s, eps, gamma_tx=4.0) == pytest.approx(
                math.log2(1 + 4.0 * 2.5), rel=1e-12
            )

    def test_exponential_value(self):
        n, eps, gamma = 10**6, 0.01, 100.0
        x_eps = -math.log(1.0 - eps)
        # delta method: sd(R) = gamma/((1+gamma*x)ln2) * sd(x_(r))
        sd_x = math.sqrt(eps * (1 - eps) / n) / math.exp(-x_eps)
        sd_rate = gamma / ((1 + gamma * x_eps) * math.log(2)) * sd_x
        s = samples_of(substream(3, "cap").exponential(1.0, size=n))
        r = outage_capacity_empirical(s, eps, gamma_tx=gamma)
        assert r == pytest.approx(math.log2(1 + gamma * x_eps), abs=3 * sd_rate)

    @pytest.mark.parametrize("n", [10, 100, 8001])
    def test_quantile_cdf_duality(self, n):
        # brute force: outage at the capacity rate stays within (eps-1/N, eps].
        # The rate <-> threshold round trip wobbles by ~1 ulp, so bracket the
        # threshold with a 1e-12 relative slack (far above the ulp error, far
        # below any gap between distinct continuous samples).
        rng = substream(n, "dual")
        gamma = 37.5
        for trial in range(60):
            eps = float(rng.uniform(1.5 / n, 0.5))
            rho = rng.lognormal(mean=rng.normal(), sigma=1.0, size=n)
            s = samples_of(rho)
            rate = outage_capacity_empirical(s, eps, gamma_tx=gamma)
            thr = (2.0**rate - 1.0) / gamma
            out_lo = np.mean(rho <= thr * (1 - 1e-12))
            out_hi = np.mean(rho <= thr * (1 + 1e-12))
            assert out_lo <= eps
            assert out_hi > eps - 1.0 / n
            assert out_lo <= empirical_outage(s, rate, gamma_tx=gamma) <= out_hi


class TestSamplingVariance:
    def test_matches_asymptotics_on_exponential(self):
        # Exp(1), log-domain density at the quantile: f_ln(q) = x_eps*exp(-x_eps)
        n, eps = 8001, 0.01
        x_eps = -math.log(1.0 - eps)
        target = eps * (1 - eps) / (n * (x_eps * math.exp(-x_eps)) ** 2)
        vals = [
            quantile_sampling_variance(
                samples_of(substream(k, "var").exponential(1.0, size=n)), eps
            )
            for k in range(40)
        ]
        assert np.median(vals) == pytest.approx(target, rel=0.35)
