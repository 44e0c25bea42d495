import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irsched.rate_model import RateModel, q
from irsched.simulator import sample_traces
from irsched.vlft import (
    EnumerationBudgetError,
    IncrementSchedule,
    InfeasibleError,
    SdoTruncation,
    SearchBounds,
    asymptotic_throughput,
    attempt_probabilities,
    expected_blocklength,
    expected_blocklength_gradient,
    expected_info_bits,
    make_report,
    optimize_es,
    optimize_sdo,
    round_schedule,
    sdo_extend,
    sdo_search,
    sdo_sequence,
    throughput,
    window_around,
)


def en_direct(model, n):
    """E[N] written as first-attempt + interval + failure terms."""
    qs = [q((model.k / x - model.mu) / model.sigma) for x in n]
    total = n[0] * qs[0]
    for i in range(1, len(n)):
        total += n[i] * (qs[i] - qs[i - 1])
    return total + n[-1] * (1 - qs[-1])


def brute_force(model, ranges):
    best, arg = -1.0, None
    for cand in itertools.product(*ranges):
        if any(b <= a for a, b in zip(cand, cand[1:])):
            continue
        r = throughput(model, cand)
        if r > best:
            best, arg = r, cand
    return arg, best


class TestSchedule:
    def test_strictly_increasing(self):
        with pytest.raises(ValueError):
            IncrementSchedule((150, 150))

    def test_positive(self):
        with pytest.raises(ValueError):
            IncrementSchedule((0, 10))

    def test_empty(self):
        with pytest.raises(ValueError):
            IncrementSchedule(())

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            IncrementSchedule((1, 2), "FOO")

    def test_bounds(self):
        with pytest.raises(ValueError):
            IncrementSchedule((100, 150)).check_bounds(SearchBounds(120, 960))

    def test_search_bounds_default(self, model):
        assert SearchBounds.for_model(model) == SearchBounds(120, 960)
        with pytest.raises(ValueError):
            SearchBounds(10, 10)


class TestExpectations:
    def test_m1_is_n1(self, model):
        assert expected_blocklength(model, (150,)) == 150.0

    @pytest.mark.parametrize("sched,lam", [((143, 153, 163, 176, 201), 159.2), ((158, 188), 169.6)])
    def test_table_rows(self, model, sched, lam):
        # the published column is k / R_T, which exceeds E[N] by the factor k / E[K]
        r = make_report(model, sched, "SDO")
        assert r.latency == pytest.approx(lam, abs=0.5)
        assert r.expected_blocklength < r.latency

    def test_expected_info_bits_value(self, model):
        mpmath.mp.dps = 30
        z = (96 / 201 - 0.6374) / 0.0579
        ref = 96 * float(mpmath.erfc(z / mpmath.sqrt(2)) / 2)
        assert expected_info_bits(model, (143, 201)) == pytest.approx(ref, rel=1e-12)
        assert expected_info_bits(model, (201,)) == pytest.approx(95.72, abs=0.01)

    def test_info_bits_limits(self, model):
        assert expected_info_bits(model, (model.k / model.mu,)) == pytest.approx(48.0)
        assert expected_info_bits(model, (1e7,)) == pytest.approx(96.0)

    @settings(max_examples=100)
    @given(st.lists(st.integers(120, 960), min_size=1, max_size=7, unique=True))
    def test_against_direct_form(self, pts):
        m = RateModel(0.6374, 0.0579, 96)
        n = sorted(pts)
        assert expected_blocklength(m, n) == pytest.approx(en_direct(m, n), rel=1e-12)
        assert n[0] <= expected_blocklength(m, n) <= n[-1]

    def test_probability_bookkeeping(self, model, rng):
        for _ in range(50):
            n = np.sort(rng.choice(np.arange(120, 400), 5, replace=False))
            assert attempt_probabilities(model, n).sum() == pytest.approx(1.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self, model, rng):
        h = 1e-3
        for _ in range(100):
            n = np.sort(rng.uniform(125, 300, 5))
            g = expected_blocklength_gradient(model, n)
            for i in range(5):
                up, dn = n.copy(), n.copy()
                up[i] += h
                dn[i] -= h
                fd = (expected_blocklength(model, up) - expected_blocklength(model, dn)) / (2 * h)
                assert abs(g[i] - fd) <= 1e-6 * abs(fd) + 1e-9

    def test_report_invariants(self, model):
        r = make_report(model, (143, 153, 163, 176, 201), "SDO")
        assert r.latency * r.throughput == pytest.approx(r.k_effective, rel=1e-12)
        assert r.throughput == pytest.approx(r.expected_info_bits / r.expected_blocklength, rel=1e-12)
        assert r.epsilon == 0.0
        assert r.to_dict()["schedule"] == [143, 153, 163, 176, 201]


class TestSdoSequence:
    def test_second_point_formula(self, model):
        n1 = 150.0
        z1 = (model.k / n1 - model.mu) / model.sigma
        dq = model.k / (n1**2 * model.sigma * math.sqrt(2 * math.pi)) * math.exp(-z1 * z1 / 2)
        assert sdo_sequence(model, n1, 2)[1] == pytest.approx(n1 + q(z1) / dq, rel=1e-12)

    def test_stationarity(self, model):
        seq = np.array(sdo_sequence(model, 143.3, 6))
        en = expected_blocklength(model, seq)
        h = 1e-4
        for i in range(5):
            up, dn = seq.copy(), seq.copy()
            up[i] += h
            dn[i] -= h
            fd = (expected_blocklength(model, up) - expected_blocklength(model, dn)) / (2 * h)
            assert abs(fd) < 1e-6 * en

    def test_increasing(self, model):
        seq = sdo_sequence(model, 140, 7)
        assert all(b > a for a, b in zip(seq, seq[1:]))

    def test_gap_follows_mills_ratio(self, model):
        # as Q(z1) -> 0 the gap Q/|dQ/dN| tends to N1^2 sigma / (k z1)
        for n1 in (100, 95, 90):
            z1 = (model.k / n1 - model.mu) / model.sigma
            gap = sdo_sequence(model, n1, 2)[1] - n1
            assert gap * model.k * z1 / (n1 * n1 * model.sigma) == pytest.approx(1.0, abs=1.5 / z1**2)

    def test_truncation_reported(self, model):
        with pytest.raises(SdoTruncation) as info:
            sdo_sequence(model, 260, 5)
        assert info.value.partial[0] == 260

    def test_extend_keeps_prefix(self, model):
        seq = sdo_extend(model, [193.0, 198.0], 5)
        assert seq[:2] == [193.0, 198.0] and len(seq) == 5

    def test_round_schedule_bumps_ties(self):
        assert round_schedule([150.2, 150.4, 151.6]) == (150, 151, 152)


TABLE_SDO = {
    1: (177,),
    2: (158, 188),
    5: (143, 153, 163, 176, 201),
    6: (140, 149, 157, 166, 179, 204),
    7: (139, 147, 154, 161, 170, 182, 206),
}


class TestOptimizeSdo:
    @pytest.mark.parametrize("m", [2, 5, 6, 7])
    def test_table_schedules(self, model, m):
        assert optimize_sdo(model, m).schedule.lengths == TABLE_SDO[m]

    def test_m3_within_one_bit(self, model):
        got = optimize_sdo(model, 3).schedule.lengths
        assert got[:2] == (150, 167) and abs(got[2] - 195) <= 1
        assert optimize_sdo(model, 3).throughput == pytest.approx(0.5863, abs=5e-4)

    def test_m5_values(self, model):
        r = optimize_sdo(model, 5)
        assert r.throughput == pytest.approx(0.603, abs=1e-3)
        assert r.latency == pytest.approx(159.2, abs=0.3)

    def test_m1_matches_scan(self, model):
        n = np.arange(120, 961)
        best = int(n[np.argmax(model.k * model.success_probability(n) / n)])
        assert optimize_sdo(model, 1).schedule.lengths == (best,)

    def test_monotone_in_m(self, model):
        rts = [optimize_sdo(model, m).throughput for m in range(1, 9)]
        assert all(b >= a for a, b in zip(rts, rts[1:]))
        assert max(rts) <= asymptotic_throughput(model)

    def test_empty_range(self, model):
        with pytest.raises(InfeasibleError):
            sdo_search(model, 3, SearchBounds(120, 960), lambda n: 0.0, n1_min=500, n1_max=400)

    def test_pinned_start(self, model):
        best, _, _ = sdo_search(model, 5, SearchBounds(120, 960), lambda n: throughput(model, n), pinned_n1=193)
        assert best[0] == 193 and all(b > a for a, b in zip(best, best[1:]))


class TestOptimizeEs:
    def test_m2(self, model):
        assert optimize_es(model, 2).schedule.lengths == (158, 188)

    def test_m4(self, model):
        r = optimize_es(model, 4)
        assert r.schedule.lengths == (146, 158, 172, 198)
        assert r.throughput == pytest.approx(0.59709, abs=5e-4)

    def test_m1_matches_scan(self, model):
        n = np.arange(120, 961)
        assert optimize_es(model, 1).schedule.lengths == (int(n[np.argmax(n / n * model.success_probability(n) / n)]),)

    def test_matches_brute_force(self, model):
        window = [(140, 156), (150, 170), (160, 190)]
        got = optimize_es(model, 3, window=window)
        arg, best = brute_force(model, [range(a, b + 1) for a, b in window])
        assert got.schedule.lengths == arg
        assert got.throughput == pytest.approx(best, rel=1e-14)

    def test_matches_brute_force_off_optimum(self, model):
        # window excludes the unconstrained optimum, so the best point sits on its edge
        window = [(120, 130), (131, 140), (141, 150), (151, 160)]
        got = optimize_es(model, 4, window=window)
        arg, _ = brute_force(model, [range(a, b + 1) for a, b in window])
        assert got.schedule.lengths == arg

    def test_es_never_worse_than_sdo(self, model):
        for m in range(2, 6):
            assert optimize_es(model, m).throughput >= optimize_sdo(model, m).throughput - 1e-15

    def test_agrees_with_sdo(self, model):
        for m in range(2, 6):
            es, sdo = optimize_es(model, m), optimize_sdo(model, m)
            assert es.schedule.lengths[:-1] == sdo.schedule.lengths[:-1]
            assert abs(es.schedule.lengths[-1] - sdo.schedule.lengths[-1]) <= 1
            assert abs(es.throughput - sdo.throughput) < 5e-5

    def test_window_needed_above_five(self, model):
        with pytest.raises(ValueError):
            optimize_es(model, 6)

    def test_windowed_m6(self, model):
        sdo = optimize_sdo(model, 6)
        assert optimize_es(model, 6, window=window_around(sdo.schedule.lengths)).schedule == sdo.schedule

    def test_budget(self, model):
        with pytest.raises(EnumerationBudgetError):
            optimize_es(model, 3, budget=1000)

    def test_window_length_mismatch(self, model):
        with pytest.raises(ValueError):
            optimize_es(model, 3, window=[(140, 150)])


class TestAsymptote:
    def test_value(self, model):
        assert asymptotic_throughput(model) == pytest.approx(0.632, abs=0.002)

    def test_narrow_limit(self):
        m = RateModel(0.6, 1e-4, 96)
        assert asymptotic_throughput(m) == pytest.approx(0.6, rel=1e-6)

    def test_monte_carlo(self, model):
        rates = model.k / sample_traces(model, rng=np.random.default_rng(3), size=10**6, n0=1)["n_success"]
        # continuous oracle: k / E[k/R]
        r = np.random.default_rng(4).normal(model.mu, model.sigma, 10**6)
        inv = model.k / r
        se = inv.std() / math.sqrt(inv.size)
        est = model.k / inv.mean()
        assert abs(asymptotic_throughput(model) - est) <= 3 * model.k * se / inv.mean() ** 2
        assert rates.mean() > 0
