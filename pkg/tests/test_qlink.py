"""Link-physics tests: entropy arithmetic, attenuation, rate dynamics, outages.

Frozen expected values were computed with mpmath at 50 digits (binary
entropy closed form) and by bisection on the privacy-amplification
crossover; the derivations are kept next to the assertions.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdscada.qlink import (LinkDomainError, LinkParams, QkdLink,
                            attenuation, binary_entropy, key_rate,
                            nominal_rate, privacy_amplification,
                            sample_outages, step_rate_ou)


def make_params(**overrides):
    base = dict(photon_rate=1e6, fiber_length=20.0, base_attenuation=0.2,
                attenuation_jitter_std=0.04, sift_ratio=0.5, mean_rate=2e5,
                reversion_rate=0.5, rate_noise_std=500.0, break_rate=1e-3,
                outage_duration_range=(3.0, 5.0))
    base.update(overrides)
    return LinkParams(**base)


class TestBinaryEntropy:
    def test_endpoints(self):
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0

    def test_symmetry_point(self):
        assert binary_entropy(0.5) == pytest.approx(1.0, abs=1e-12)

    def test_known_value(self):
        # mpmath.mp.dps=50: h(0.11) = 0.49991595816452787...
        assert binary_entropy(0.11) == pytest.approx(0.4999159581645279, abs=1e-12)
        assert abs(binary_entropy(0.11) - 0.49991) < 1e-4

    def test_domain(self):
        with pytest.raises(LinkDomainError):
            binary_entropy(-0.01)
        with pytest.raises(LinkDomainError):
            binary_entropy(1.01)

    @given(st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
    def test_range_and_symmetry(self, p):
        h = binary_entropy(p)
        assert 0.0 <= h <= 1.0
        assert h == pytest.approx(binary_entropy(1.0 - p), abs=1e-12)


class TestPrivacyAmplification:
    def test_perfect_channel(self):
        assert privacy_amplification(0.0) == 1.0

    def test_clamped_above_crossover(self):
        # h(0.25) = 0.8112... > 0.5 so the raw factor is negative.
        assert binary_entropy(0.25) > 0.5
        assert privacy_amplification(0.25) == 0.0

    def test_crossover_location(self):
        # Bisection oracle on 1 - 2 h(p) over [0, 0.25].
        lo, hi = 0.0, 0.25
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if 1.0 - 2.0 * binary_entropy(mid) > 0:
                lo = mid
            else:
                hi = mid
        root = 0.5 * (lo + hi)
        assert 0.1099 <= root <= 0.1101
        assert privacy_amplification(root + 1e-4) == 0.0
        assert privacy_amplification(root - 1e-4) > 0.0

    def test_domain(self):
        with pytest.raises(LinkDomainError):
            privacy_amplification(0.51)

    @given(st.floats(min_value=0.0, max_value=0.5, allow_nan=False))
    def test_bounded(self, q):
        assert 0.0 <= privacy_amplification(q) <= 1.0

    @given(st.floats(min_value=0.0, max_value=0.5), st.floats(min_value=0.0, max_value=0.5))
    def test_monotone_nonincreasing(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert privacy_amplification(lo) >= privacy_amplification(hi) - 1e-12


class TestAttenuation:
    def test_benchmark_fiber(self):
        # 10^(-0.2*20/10) = 10^-0.4
        p = make_params()
        assert attenuation(p, 0.0) == pytest.approx(0.3981071705534972, abs=1e-4)

    def test_lossless(self):
        p = make_params(base_attenuation=0.0)
        assert attenuation(p, 0.0) == 1.0

    def test_long_fiber_decade(self):
        p = make_params(fiber_length=50.0)
        assert attenuation(p, 0.0) == pytest.approx(0.1, abs=1e-6)

    def test_negative_draw_clamped(self):
        p = make_params()
        assert attenuation(p, -1.0) == 1.0

    def test_monotone_in_length(self):
        short = attenuation(make_params(fiber_length=10.0), 0.0)
        long = attenuation(make_params(fiber_length=40.0), 0.0)
        assert short > long


class TestKeyRate:
    def test_outage_forces_zero(self):
        p = make_params()
        assert key_rate(p, 0.5, 0.01, broken=True) == 0.0

    def test_clean_channel_product(self):
        p = make_params()
        assert key_rate(p, 0.3981, 0.0, False) == pytest.approx(1.9905e5, abs=1.0)

    def test_high_qber_halts_output(self):
        p = make_params()
        assert key_rate(p, 0.5, 0.25, False) == 0.0

    @given(st.floats(min_value=0.01, max_value=0.5), st.floats(min_value=0.01, max_value=0.5))
    def test_monotone_in_attenuation(self, a0_lo_raw, a0_hi_raw):
        lo, hi = sorted([a0_lo_raw, a0_hi_raw])
        p_lo = make_params(base_attenuation=lo)
        p_hi = make_params(base_attenuation=hi)
        r_lo = key_rate(p_lo, attenuation(p_lo, 0.0), 0.02, False)
        r_hi = key_rate(p_hi, attenuation(p_hi, 0.0), 0.02, False)
        assert r_lo >= r_hi - 1e-9


class TestRateProcess:
    def test_drift_fixed_point(self):
        p = make_params()
        assert step_rate_ou(p.mean_rate, p, 0.1, 0.0) == p.mean_rate

    def test_single_euler_step(self):
        # lambda*dt = 0.1 pulls a 2x excursion to 1.9x.
        p = make_params(reversion_rate=1.0)
        out = step_rate_ou(2.0 * p.mean_rate, p, 0.1, 0.0)
        assert out == pytest.approx(1.9 * p.mean_rate, rel=1e-12)

    def test_geometric_convergence_noise_free(self):
        p = make_params(reversion_rate=1.0)
        dt = 0.1
        g = 3.0 * p.mean_rate
        gap0 = abs(g - p.mean_rate)
        for k in range(1, 30):
            g = step_rate_ou(g, p, dt, 0.0)
            assert abs(g - p.mean_rate) == pytest.approx(
                (1 - p.reversion_rate * dt) ** k * gap0, rel=1e-9)

    def test_stationary_mean(self):
        # Long-run Monte Carlo: empirical mean within 2% of the attractor.
        p = make_params(mean_rate=1000.0, reversion_rate=1.0, rate_noise_std=100.0)
        rng = np.random.default_rng(7)
        dt = 0.05
        g = p.mean_rate
        total = 0.0
        n = 200_000
        draws = rng.standard_normal(n)
        for z in draws:
            g = step_rate_ou(g, p, dt, float(z))
            total += g
        assert total / n == pytest.approx(p.mean_rate, rel=0.02)

    def test_clamped_at_zero(self):
        p = make_params(rate_noise_std=1e9)
        assert step_rate_ou(0.0, p, 0.1, -10.0) == 0.0


class TestOutages:
    def test_no_failures(self):
        p = make_params(break_rate=0.0)
        sched = sample_outages(p, 1e6, np.random.default_rng(0))
        assert sched.events == ()

    def test_poisson_count(self):
        # lambda = 1/5000 per second over 5e6 s: mean 1000, sigma ~31.6.
        p = make_params(break_rate=1.0 / 5000.0)
        sched = sample_outages(p, 5e6, np.random.default_rng(42))
        n = len(sched.events)
        assert abs(n - 1000) <= 3 * math.sqrt(1000)

    def test_durations_in_range(self):
        p = make_params(break_rate=0.01)
        sched = sample_outages(p, 10000, np.random.default_rng(3))
        assert sched.events
        for _, duration in sched.events:
            assert 3.0 <= duration <= 5.0

    def test_seed_determinism(self):
        p = make_params(break_rate=0.01)
        a = sample_outages(p, 10000, np.random.default_rng(11))
        b = sample_outages(p, 10000, np.random.default_rng(11))
        assert a.events == b.events

    def test_sorted_starts(self):
        p = make_params(break_rate=0.01)
        sched = sample_outages(p, 10000, np.random.default_rng(5))
        starts = [s for s, _ in sched.events]
        assert starts == sorted(starts)


class TestQkdLink:
    def test_trajectory_reproducible(self):
        p = make_params(break_rate=0.02)
        run = []
        for seed in (123, 123):
            link = QkdLink(p, horizon=100.0, rng=np.random.default_rng(seed))
            states = [(link.advance(0.1).rate, link.state.eta, link.state.broken)
                      for _ in range(1000)]
            run.append(states)
        assert run[0] == run[1]

    def test_rate_zero_when_broken(self):
        p = make_params(break_rate=0.05)
        link = QkdLink(p, horizon=200.0, rng=np.random.default_rng(1))
        saw_outage = False
        for _ in range(2000):
            s = link.advance(0.1)
            if s.broken:
                saw_outage = True
                assert s.rate == 0.0
            assert s.rate >= 0.0
            assert 0.0 <= s.eta <= 1.0
            assert 0.0 <= s.qber <= 0.5
        assert saw_outage

    def test_nominal_rate_sizing(self):
        p = make_params()
        expected = 1e6 * attenuation(p, 0.0) * 0.5 * privacy_amplification(0.02)
        assert nominal_rate(p) == pytest.approx(expected, rel=1e-12)


class TestValidation:
    def test_bad_params_rejected(self):
        with pytest.raises(LinkDomainError):
            make_params(photon_rate=0.0)
        with pytest.raises(LinkDomainError):
            make_params(sift_ratio=1.5)
        with pytest.raises(LinkDomainError):
            make_params(outage_duration_range=(5.0, 3.0))
        with pytest.raises(LinkDomainError):
            step_rate_ou(1.0, make_params(), 0.0, 0.0)
