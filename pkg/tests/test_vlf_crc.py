import math

import mpmath
import numpy as np
import pytest

from irsched.rate_model import RateModel
from irsched.vlf_crc import (
    CrcConfig,
    ErrorModel,
    crc_report,
    expected_info_bits_crc,
    min_feasible_n1,
    optimize_vlf_crc,
    predicted_crc_rate,
    undetected_error_probability,
    wrong_codeword_probability,
)
from irsched.vlft import InfeasibleError, SearchBounds, optimize_sdo

VLFT5 = (143, 153, 163, 176, 201)


@pytest.fixture(scope="module")
def sweep():
    return optimize_vlf_crc(RateModel(0.6374, 0.0579, 96), ErrorModel(0.165, 0.626, 0.056, 96), 5, 1e-3, range(1, 13))


class TestTypes:
    @pytest.mark.parametrize("gamma,sigma_e", [(-0.1, 0.05), (1.1, 0.05), (0.1, 0.0)])
    def test_error_model_invalid(self, gamma, sigma_e):
        with pytest.raises(ValueError):
            ErrorModel(gamma, 0.6, sigma_e, 96)

    def test_error_model_round_trip(self, err):
        assert ErrorModel.from_dict(err.to_dict()) == err

    @pytest.mark.parametrize("l_crc,eps", [(96, 1e-3), (-1, 1e-3), (8, 0.0), (8, 1.0)])
    def test_crc_config_invalid(self, l_crc, eps):
        with pytest.raises(ValueError):
            CrcConfig(l_crc, 96, eps)

    def test_crc_config(self):
        c = CrcConfig(8, 96)
        assert c.k_inf == 88 and c.pass_probability == 2**-8 and c.polynomial == 0x07
        assert CrcConfig(7, 96).polynomial == 0x09 and CrcConfig(5, 96).polynomial is None


class TestProbabilities:
    def test_wrong_vanishes(self, err):
        assert wrong_codeword_probability(err, 1e7) < 1e-12

    def test_wrong_at_mean(self, err):
        assert wrong_codeword_probability(err, err.k / err.mu_e) == pytest.approx(err.gamma / 2)

    def test_wrong_at_143(self, err):
        z = (96 / 143 - 0.626) / 0.056
        assert z == pytest.approx(0.809, abs=5e-4)
        ref = 0.165 * float(1 - mpmath.erfc(z / mpmath.sqrt(2)) / 2)
        assert wrong_codeword_probability(err, 143) == pytest.approx(ref, rel=1e-12)
        assert wrong_codeword_probability(err, 143) == pytest.approx(0.130, abs=1e-3)

    def test_no_crc(self, err):
        assert undetected_error_probability(err, CrcConfig(0, 96), 150) == wrong_codeword_probability(err, 150)

    def test_halving(self, err):
        for l in range(1, 20):
            a = undetected_error_probability(err, CrcConfig(l, 96), 150)
            b = undetected_error_probability(err, CrcConfig(l + 1, 96), 150)
            assert b == a / 2

    def test_at_initial_blocklength(self, err):
        assert undetected_error_probability(err, CrcConfig(8, 96), 120) == pytest.approx(6.45e-4, abs=1e-5)

    def test_info_bits_limits(self, model, err):
        assert expected_info_bits_crc(model, err, CrcConfig(30, 96), (900, 1e6)) == pytest.approx(66.0, rel=1e-6)
        assert expected_info_bits_crc(model, err, CrcConfig(95, 96), (143, 201)) <= 1.0

    def test_info_bits_l7(self, model, err):
        crc = CrcConfig(7, 96)
        ek = expected_info_bits_crc(model, err, crc, VLFT5)
        eps = undetected_error_probability(err, crc, 143)
        assert ek == pytest.approx(89 * (model.success_probability(201) - eps), rel=1e-12)
        assert crc_report(model, err, crc, VLFT5).throughput == pytest.approx(0.56, abs=0.01)

    @pytest.mark.parametrize("rate,l,expected", [(0.632, 8, 0.579), (0.603, 7, 0.559), (0.6, 0, 0.6)])
    def test_predicted_rate(self, rate, l, expected):
        assert round(predicted_crc_rate(rate, 96, l), 3) == expected

    def test_predicted_rate_invalid(self):
        with pytest.raises(ValueError):
            predicted_crc_rate(0.6, 96, 96)

    def test_min_feasible_n1(self, err):
        crc = CrcConfig(3, 96)
        bounds = SearchBounds(120, 960)
        n1 = min_feasible_n1(err, crc, bounds)
        ok = [n for n in range(120, 961) if undetected_error_probability(err, crc, n) < 1e-3]
        assert n1 == ok[0]


class TestOptimizer:
    def test_saturation(self, sweep):
        for l in range(8, 13):
            assert sweep.row(l).report.schedule.lengths == VLFT5

    def test_saturated_schedule_is_vlft(self, model):
        assert optimize_sdo(model, 5).schedule.lengths == VLFT5

    def test_epsilon_halving(self, sweep):
        eps = [sweep.row(l).report.epsilon for l in range(8, 13)]
        for a, b in zip(eps, eps[1:]):
            assert b == pytest.approx(a / 2, rel=1e-12)

    def test_constraint_strict(self, sweep):
        for r in sweep.rows:
            assert r.feasible and r.report.epsilon < 1e-3

    @pytest.mark.parametrize(
        "l,sched,lam",
        [
            (1, (193, 198, 205, 216, 241), 193.27),
            (2, (187, 192, 199, 210, 235), 187.38),
            (3, (180, 185, 192, 203, 228), 180.67),
            (4, (174, 180, 187, 198, 222), 175.14),
            (5, (166, 172, 180, 192, 216), 168.48),
            (6, (157, 164, 172, 184, 209), 162.68),
        ],
    )
    def test_short_crc_rows(self, sweep, l, sched, lam):
        rep = sweep.row(l).report
        assert max(abs(a - b) for a, b in zip(rep.schedule.lengths, sched)) <= 2
        assert rep.latency == pytest.approx(lam, abs=1.0)

    def test_constraint_binds_for_short_crc(self, sweep):
        for l in range(1, 7):
            row = sweep.row(l)
            assert row.report.schedule.lengths[0] == row.n1_min

    def test_latency_increases_as_crc_shrinks(self, sweep):
        lams = [sweep.row(l).report.latency for l in range(7, 0, -1)]
        assert all(b > a for a, b in zip(lams, lams[1:]))

    def test_throughput_unimodal(self, sweep):
        rts = [r.report.throughput for r in sweep.rows]
        peak = int(np.argmax(rts))
        assert all(b > a for a, b in zip(rts[: peak + 1], rts[1 : peak + 1]))
        assert all(b < a for a, b in zip(rts[peak:], rts[peak + 1 :]))

    def test_best(self, sweep):
        assert sweep.best.throughput == max(r.report.throughput for r in sweep.rows)
        assert sweep.best.extra["l_crc"] == 7

    def test_latency_uses_info_bits(self, sweep):
        rep = sweep.row(8).report
        assert rep.latency == pytest.approx(88 / rep.throughput)

    def test_csv(self, sweep):
        lines = sweep.to_csv().strip().splitlines()
        assert lines[0] == "l_crc,N1,N2,N3,N4,N5,lambda,R_T,epsilon"
        assert lines[8].startswith("8,143,153,163,176,201,159.09,")
        assert len(lines) == 13

    def test_infeasible_rows(self, model, err):
        sw = optimize_vlf_crc(model, err, 3, 1e-30, range(1, 3), SearchBounds(120, 200))
        assert not any(r.feasible for r in sw.rows)
        assert "infeasible" in sw.to_csv()
        with pytest.raises(InfeasibleError):
            sw.best

    def test_k_mismatch(self, model):
        with pytest.raises(ValueError):
            optimize_vlf_crc(model, ErrorModel(0.1, 0.6, 0.05, 128), 5)

    def test_bad_m(self, model, err):
        with pytest.raises(ValueError):
            optimize_vlf_crc(model, err, 0)
