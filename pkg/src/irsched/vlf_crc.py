"""Feedback without termination, using a CRC as the stopping rule.

A decoder that locks onto a wrong codeword keeps returning that codeword
until the blocklength passes ``N_E``. The CRC lets such a codeword through
with probability ``2**-l_crc``; the undetected-error probability of a cycle is
therefore governed by the chance of being locked on a wrong codeword at
``N_1``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .rate_model import RateModel, q
from .vlft import (
    IncrementSchedule,
    InfeasibleError,
    OptimizationReport,
    SearchBounds,
    _lengths,
    expected_blocklength,
    sdo_search,
)

# Metadata only; all arithmetic uses the idealised 2**-L pass probability.
CRC_POLYNOMIALS = {7: 0x09, 8: 0x07}


@dataclass(frozen=True)
class ErrorModel:
    gamma: float
    mu_e: float
    sigma_e: float
    k: int

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.sigma_e > 0:
            raise ValueError(f"sigma_e must be positive, got {self.sigma_e}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorModel":
        return cls(float(d["gamma"]), float(d["mu_e"]), float(d["sigma_e"]), int(d["k"]))


@dataclass(frozen=True)
class CrcConfig:
    l_crc: int
    k: int
    epsilon_target: float = 1e-3

    def __post_init__(self):
        if not 0 <= self.l_crc < self.k:
            raise ValueError(f"need 0 <= l_crc < k, got l_crc={self.l_crc}, k={self.k}")
        if not 0.0 < self.epsilon_target < 1.0:
            raise ValueError(f"epsilon_target must lie in (0, 1), got {self.epsilon_target}")

    @property
    def k_inf(self) -> int:
        return self.k - self.l_crc

    @property
    def pass_probability(self) -> float:
        return 2.0 ** -self.l_crc

    @property
    def polynomial(self) -> int | None:
        return CRC_POLYNOMIALS.get(self.l_crc)


def wrong_codeword_probability(err: ErrorModel, n1):
    """Probability of still being locked on a wrong codeword at blocklength ``n1``."""
    z = (err.k / np.asarray(n1, dtype=float) - err.mu_e) / err.sigma_e
    out = err.gamma * (1.0 - q(z))
    return float(out) if np.ndim(out) == 0 else out


def undetected_error_probability(err: ErrorModel, crc: CrcConfig, n1):
    return wrong_codeword_probability(err, n1) * crc.pass_probability


def expected_info_bits_crc(model: RateModel, err: ErrorModel, crc: CrcConfig, schedule) -> float:
    """Correctly delivered information bits per cycle, net of CRC overhead and undetected errors."""
    n = _lengths(schedule)
    success = float(model.success_probability(n[-1]))
    return crc.k_inf * (success - undetected_error_probability(err, crc, n[0]))


def predicted_crc_rate(vlft_rate: float, k: int, l_crc: int) -> float:
    """Scale a termination-scheme rate by the CRC overhead ``(k - l_crc)/k``."""
    if not 0 <= l_crc < k:
        raise ValueError(f"need 0 <= l_crc < k, got {l_crc}, {k}")
    return vlft_rate * (k - l_crc) / k


def min_feasible_n1(err: ErrorModel, crc: CrcConfig, bounds: SearchBounds) -> int | None:
    """Smallest integer ``N_1`` meeting ``P_wrong(N_1) 2^-L < epsilon``, or ``None``."""
    n = np.arange(bounds.n0, bounds.n_max + 1)
    ok = np.flatnonzero(undetected_error_probability(err, crc, n) < crc.epsilon_target)
    return int(n[ok[0]]) if ok.size else None


def crc_report(model, err, crc, lengths, algorithm="SDO", **extra) -> OptimizationReport:
    sched = IncrementSchedule(tuple(lengths), "VLF_CRC")
    en = expected_blocklength(model, sched)
    ek = expected_info_bits_crc(model, err, crc, sched)
    rt = ek / en
    return OptimizationReport(
        schedule=sched,
        throughput=rt,
        latency=crc.k_inf / rt,
        algorithm=algorithm,
        epsilon=undetected_error_probability(err, crc, sched.lengths[0]),
        expected_blocklength=en,
        expected_info_bits=ek,
        k_effective=crc.k_inf,
        extra={"l_crc": crc.l_crc, **extra},
    )


@dataclass(frozen=True)
class CrcRow:
    l_crc: int
    n1_min: int | None
    report: OptimizationReport | None

    @property
    def feasible(self) -> bool:
        return self.report is not None


@dataclass(frozen=True)
class CrcSweep:
    rows: list = field(default_factory=list)

    @property
    def best(self) -> OptimizationReport:
        feasible = [r.report for r in self.rows if r.feasible]
        if not feasible:
            raise InfeasibleError("no CRC length satisfies the undetected-error constraint")
        return max(feasible, key=lambda r: r.throughput)

    def row(self, l_crc: int) -> CrcRow:
        return next(r for r in self.rows if r.l_crc == l_crc)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        m = max((r.report.schedule.m for r in self.rows if r.feasible), default=0)
        w.writerow(["l_crc", *[f"N{i + 1}" for i in range(m)], "lambda", "R_T", "epsilon"])
        for r in self.rows:
            if r.feasible:
                rep = r.report
                w.writerow([r.l_crc, *rep.schedule.lengths, f"{rep.latency:.2f}", f"{rep.throughput:.5f}", f"{rep.epsilon:.3e}"])
            else:
                w.writerow([r.l_crc, *["" for _ in range(m)], "", "", "infeasible"])
        return buf.getvalue()


def optimize_crc_length(model, err, crc: CrcConfig, m: int, bounds: SearchBounds) -> CrcRow:
    """SDO for one CRC length, with ``N_1`` restricted to the feasible range."""
    n1_min = min_feasible_n1(err, crc, bounds)
    if n1_min is None:
        return CrcRow(crc.l_crc, None, None)

    def score(n):
        return expected_info_bits_crc(model, err, crc, n) / expected_blocklength(model, n)

    # Interior optimum (N_1 stationary) and boundary optimum (N_1 pinned at n1_min).
    found = []
    for kw in ({"n1_min": n1_min, "n1_max": max(3 * model.k, n1_min)}, {"pinned_n1": n1_min}):
        try:
            found.append(sdo_search(model, m, bounds, score, **kw))
        except InfeasibleError:
            pass
    if not found:
        return CrcRow(crc.l_crc, n1_min, None)
    best, _, info = max(found, key=lambda f: f[1])
    rep = crc_report(model, err, crc, best, n1_min=n1_min, boundary=best[0] == n1_min)
    return CrcRow(crc.l_crc, n1_min, rep)


def optimize_vlf_crc(
    model: RateModel,
    err: ErrorModel,
    m: int,
    epsilon: float = 1e-3,
    l_range=range(1, 17),
    bounds: SearchBounds | None = None,
) -> CrcSweep:
    """One optimised schedule per CRC length; ``.best`` picks the highest throughput."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if err.k != model.k:
        raise ValueError("error model and rate model refer to different k")
    bounds = bounds or SearchBounds.for_model(model)
    rows = [optimize_crc_length(model, err, CrcConfig(int(l), model.k, epsilon), m, bounds) for l in l_range]
    return CrcSweep(rows)
