"""Increment-length optimisation for feedback with termination (VLFT).

An accumulation cycle transmits cumulative blocklengths ``N_1 < ... < N_m``
and attempts decoding after each. With ``q_i = P(N_S <= N_i)`` the expected
channel uses per cycle telescope to::

    E[N] = N_m - sum_{i<m} q_i (N_{i+1} - N_i)

which is what both optimisers below work on.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .rate_model import RateModel, blocklength_density, interval_success_probability, q

SCHEMES = ("VLFT", "VLF_CRC", "TWO_PHASE")

ES_BUDGET = 10**9
SDO_STEP = 0.05


class SdoTruncation(ArithmeticError):
    """The SDO recursion left the support of the rate distribution."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = list(partial)


class EnumerationBudgetError(RuntimeError):
    pass


class InfeasibleError(ValueError):
    """No schedule satisfies the requested constraints."""


@dataclass(frozen=True)
class IncrementSchedule:
    lengths: tuple
    scheme: str = "VLFT"

    def __post_init__(self):
        lengths = tuple(self.lengths)
        if not lengths:
            raise ValueError("schedule needs at least one blocklength")
        if any(x <= 0 for x in lengths):
            raise ValueError(f"blocklengths must be positive: {lengths}")
        if any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise ValueError(f"blocklengths must be strictly increasing: {lengths}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if all(float(x).is_integer() for x in lengths):
            lengths = tuple(int(x) for x in lengths)
        object.__setattr__(self, "lengths", lengths)

    @property
    def m(self) -> int:
        return len(self.lengths)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.lengths, dtype=float)

    def check_bounds(self, bounds: "SearchBounds") -> None:
        if self.lengths[0] < bounds.n0 or self.lengths[-1] > bounds.n_max:
            raise ValueError(f"schedule {self.lengths} outside [{bounds.n0}, {bounds.n_max}]")


@dataclass(frozen=True)
class SearchBounds:
    n0: int
    n_max: int

    def __post_init__(self):
        if not self.n0 < self.n_max:
            raise ValueError(f"need n0 < n_max, got {self.n0}, {self.n_max}")

    @classmethod
    def for_model(cls, model: RateModel, initial_rate: float = 0.8) -> "SearchBounds":
        """``N_0`` from the highest code rate, ``N_max`` at rate 0.1."""
        return cls(n0=math.ceil(model.k / initial_rate - 1e-9), n_max=10 * model.k)


@dataclass(frozen=True)
class OptimizationReport:
    schedule: IncrementSchedule
    throughput: float
    latency: float
    algorithm: str
    epsilon: float = 0.0
    expected_blocklength: float = float("nan")
    expected_info_bits: float = float("nan")
    k_effective: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scheme": self.schedule.scheme,
            "algorithm": self.algorithm,
            "schedule": list(self.schedule.lengths),
            "throughput": self.throughput,
            "latency": self.latency,
            "epsilon": self.epsilon,
            "expected_blocklength": self.expected_blocklength,
            "expected_info_bits": self.expected_info_bits,
            "k_effective": self.k_effective,
            **self.extra,
        }


def _lengths(schedule) -> np.ndarray:
    if isinstance(schedule, IncrementSchedule):
        return schedule.as_array()
    return np.asarray(schedule, dtype=float)


def expected_blocklength(model: RateModel, schedule) -> float:
    """Expected channel uses in one accumulation cycle."""
    n = _lengths(schedule)
    qs = model.success_probability(n)
    qs = np.atleast_1d(qs)
    return float(n[-1] - np.sum(qs[:-1] * np.diff(n)))


def expected_blocklength_gradient(model: RateModel, schedule) -> np.ndarray:
    """Partial derivatives of :func:`expected_blocklength` w.r.t. each ``N_i``."""
    n = np.atleast_1d(_lengths(schedule))
    dq = np.atleast_1d(blocklength_density(model, n))
    grad = np.empty_like(n)
    if n.size > 1:
        step = np.atleast_1d(interval_success_probability(model, n[:-2], n[1:-1])) if n.size > 2 else np.empty(0)
        first = np.atleast_1d(model.success_probability(n[:1]))
        grad[:-1] = np.concatenate([first, step]) - dq[:-1] * np.diff(n)
        grad[-1] = float(model.failure_probability(n[-2]))
    else:
        grad[-1] = 1.0
    return grad


def attempt_probabilities(model: RateModel, schedule) -> np.ndarray:
    """First-success probability per attempt, followed by the failure probability."""
    n = _lengths(schedule)
    qs = np.atleast_1d(model.success_probability(n))
    return np.concatenate([np.diff(qs, prepend=0.0), [1.0 - qs[-1]]])


def expected_info_bits(model: RateModel, schedule) -> float:
    return model.k * float(model.success_probability(_lengths(schedule)[-1]))


def throughput(model: RateModel, schedule) -> float:
    return expected_info_bits(model, schedule) / expected_blocklength(model, schedule)


def make_report(model: RateModel, lengths, algorithm: str, **extra) -> OptimizationReport:
    sched = IncrementSchedule(tuple(lengths), "VLFT")
    en = expected_blocklength(model, sched)
    ek = expected_info_bits(model, sched)
    rt = ek / en
    return OptimizationReport(
        schedule=sched,
        throughput=rt,
        latency=model.k / rt,
        algorithm=algorithm,
        epsilon=0.0,
        expected_blocklength=en,
        expected_info_bits=ek,
        k_effective=model.k,
        extra=extra,
    )


# --------------------------------------------------------------------------
# Sequential differential optimisation
# --------------------------------------------------------------------------


def _sdo_batch(model: RateModel, prefix: np.ndarray, m: int) -> np.ndarray:
    """Extend many prefixes (rows) to length ``m`` at once; invalid rows hold NaN."""
    prefix = np.atleast_2d(np.asarray(prefix, dtype=float))
    rows, j = prefix.shape
    out = np.full((rows, m), np.nan)
    out[:, :j] = prefix
    qs = model.success_probability(out[:, :j])
    q_prev = qs[:, j - 2] if j >= 2 else np.zeros(rows)
    q_cur = qs[:, j - 1]
    with np.errstate(all="ignore"):
        for i in range(j, m):
            cur = out[:, i - 1]
            dq = blocklength_density(model, np.where(np.isnan(cur), 1.0, cur))
            nxt = cur + (q_cur - q_prev) / dq
            nxt = np.where(np.isfinite(nxt) & (nxt > cur), nxt, np.nan)
            out[:, i] = nxt
            if np.all(np.isnan(nxt)):
                break
            safe = np.where(np.isnan(nxt), 1.0, nxt)
            q_prev, q_cur = q_cur, np.where(np.isnan(nxt), np.nan, model.success_probability(safe))
    return out


def sdo_extend(model: RateModel, prefix: Sequence[float], m: int) -> list[float]:
    """Continue a schedule prefix to ``m`` points with the SDO recursion.

    Each new ``N_i`` is the point that makes ``N_{i-1}`` stationary for
    ``E[N]``::

        N_i = N_{i-1} + (q_{i-1} - q_{i-2}) / q'_{i-1}

    with ``q'`` the reciprocal-Gaussian density and ``q_0 = 0``.
    """
    seq = [float(x) for x in prefix]
    if not seq or m < len(seq):
        raise ValueError("prefix must be non-empty and no longer than m")
    qs = [float(model.success_probability(x)) for x in seq]
    q_prev = qs[-2] if len(qs) >= 2 else 0.0
    q_cur = qs[-1]
    while len(seq) < m:
        dq = blocklength_density(model, seq[-1])
        if not dq > 0:
            raise SdoTruncation(f"density underflow at N={seq[-1]:.6g}", seq)
        nxt = seq[-1] + (q_cur - q_prev) / dq
        if not math.isfinite(nxt) or nxt <= seq[-1]:
            raise SdoTruncation(f"sequence escaped the support after N={seq[-1]:.6g}", seq)
        seq.append(nxt)
        q_prev, q_cur = q_cur, float(model.success_probability(nxt))
    return seq


def sdo_sequence(model: RateModel, n1: float, m: int) -> list[float]:
    """Continuous SDO sequence starting at ``n1``."""
    if m < 1:
        raise ValueError("m must be at least 1")
    return sdo_extend(model, [n1], m)


def round_schedule(seq: Sequence[float]) -> tuple[int, ...]:
    """Nearest-integer rounding, bumping ties upward to keep strict increase."""
    out: list[int] = []
    for x in seq:
        r = int(math.floor(x + 0.5))
        if out and r <= out[-1]:
            r = out[-1] + 1
        out.append(r)
    return tuple(out)


def _lattice_corners(seq: Sequence[float], lo: int, hi: int):
    for corner in itertools.product(*[(math.floor(x), math.ceil(x)) for x in seq]):
        if corner[0] < lo or corner[-1] > hi:
            continue
        if any(b <= a for a, b in zip(corner, corner[1:])):
            continue
        yield corner


def sdo_search(
    model: RateModel,
    m: int,
    bounds: SearchBounds,
    score: Callable[[np.ndarray], float],
    n1_min: float | None = None,
    n1_max: float | None = None,
    pinned_n1: int | None = None,
    step: float = SDO_STEP,
) -> tuple[tuple[int, ...], float, dict]:
    """Sweep the free start of the SDO recursion; return the best integer schedule.

    Normally the swept variable is ``N_1``. With ``pinned_n1`` the first
    blocklength sits on a constraint boundary, so it is not required to be
    stationary: it is held fixed and ``N_2`` is swept instead.

    The sweep runs on a grid of spacing ``step`` and is polished by a bounded
    1-D search. Integer candidates are the rounded sequence of every integer
    start plus every floor/ceil corner of the best continuous sequence.
    """
    if pinned_n1 is None:
        lo = max(bounds.n0, n1_min if n1_min is not None else bounds.n0)
        hi = min(3 * model.k, bounds.n_max) if n1_max is None else min(n1_max, bounds.n_max)
        prefix: list[float] = []
        floor_lo = math.ceil(lo)
    else:
        if m == 1:
            return (pinned_n1,), score(np.asarray([pinned_n1], float)), {"start": float(pinned_n1)}
        lo, hi = pinned_n1 + 1.0, float(bounds.n_max)
        prefix = [float(pinned_n1)]
        floor_lo = pinned_n1
    if lo > hi:
        raise InfeasibleError(f"empty sweep range [{lo}, {hi}]")

    if m == 1 or (prefix and m == 2):
        cands = [(*map(int, prefix), n) for n in range(math.ceil(lo), int(hi) + 1)]
        best = max(cands, key=lambda c: score(np.asarray(c, float)))
        return best, score(np.asarray(best, float)), {"start": float(best[-1])}

    def build(x):
        return sdo_extend(model, [*prefix, x], m)

    grid = np.arange(lo, hi + 1e-9, step)
    pre = np.column_stack([np.full((grid.size, len(prefix)), prefix), grid]) if prefix else grid[:, None]
    seqs = _sdo_batch(model, pre, m)
    valid = ~np.isnan(seqs).any(axis=1) & (seqs[:, -1] <= bounds.n_max)
    if not valid.any():
        raise InfeasibleError("no SDO sequence stays inside the search bounds")
    scores = np.full(grid.size, -np.inf)
    for j in np.flatnonzero(valid):
        scores[j] = score(seqs[j])
    j = int(np.argmax(scores))

    def neg(x):
        try:
            s = build(x)
        except SdoTruncation:
            return np.inf
        return -score(np.asarray(s)) if s[-1] <= bounds.n_max else np.inf

    a, b = max(lo, grid[j] - step), min(hi, grid[j] + step)
    res = minimize_scalar(neg, bounds=(a, b), method="bounded", options={"xatol": 1e-9})
    start = float(res.x) if res.fun <= -scores[j] else float(grid[j])
    cont = build(start)

    candidates = set(_lattice_corners(cont, floor_lo, bounds.n_max))
    for x in range(math.ceil(lo), int(math.floor(hi)) + 1):
        try:
            r = round_schedule(build(x))
        except SdoTruncation:
            continue
        if r[-1] <= bounds.n_max:
            candidates.add(r)
    if not candidates:
        raise InfeasibleError("no integer schedule could be formed from the SDO sweep")
    best = max(sorted(candidates), key=lambda c: score(np.asarray(c, float)))
    return best, score(np.asarray(best, float)), {"start": start, "continuous": cont}


def optimize_sdo(model: RateModel, m: int, bounds: SearchBounds | None = None) -> OptimizationReport:
    """Best SDO schedule for ``m`` attempts, maximising ``E[K]/E[N]``."""
    if m < 1:
        raise ValueError("m must be at least 1")
    bounds = bounds or SearchBounds.for_model(model)
    best, _, info = sdo_search(model, m, bounds, lambda n: throughput(model, n))
    return make_report(model, best, "SDO", sweep_start=info["start"])


# --------------------------------------------------------------------------
# Exhaustive search
# --------------------------------------------------------------------------


def window_around(center: Sequence[int], half_width: int = 8) -> list[tuple[int, int]]:
    return [(int(c) - half_width, int(c) + half_width) for c in center]


def _es_ranges(m, bounds, window):
    if window is None:
        return [np.arange(bounds.n0, bounds.n_max + 1, dtype=float) for _ in range(m)]
    if len(window) != m:
        raise ValueError(f"window has {len(window)} coordinates, expected {m}")
    return [
        np.arange(max(bounds.n0, lo), min(bounds.n_max, hi) + 1, dtype=float) for lo, hi in window
    ]


def optimize_es(
    model: RateModel,
    m: int,
    bounds: SearchBounds | None = None,
    window: Sequence[tuple[int, int]] | None = None,
    budget: int = ES_BUDGET,
) -> OptimizationReport:
    """Exact maximum of ``E[K]/E[N]`` over all increasing integer schedules.

    Every schedule in the (optionally windowed) box is covered. Because
    ``E[N]`` decomposes along the chain ``N_1 < ... < N_m``, the search is
    organised as a max-plus recursion over (previous, next) pairs: for each
    final ``N_m`` the best prefix is found exactly, then ``N_m`` is scanned.
    The budget counts evaluated (previous, next) pairs.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if m > 5 and window is None:
        raise ValueError("exhaustive search with m > 5 needs a window (see window_around)")
    bounds = bounds or SearchBounds.for_model(model)
    ranges = _es_ranges(m, bounds, window)
    work = sum(a.size * b.size for a, b in zip(ranges, ranges[1:])) + ranges[-1].size
    if work > budget:
        raise EnumerationBudgetError(f"search needs {work} evaluations, budget is {budget}")
    if any(r.size == 0 for r in ranges):
        raise InfeasibleError("empty search window")

    # best[v] = max over prefixes ending at v of sum q(N_j)(N_{j+1} - N_j)
    best = np.zeros(ranges[0].size)
    back = []
    for prev, cur in zip(ranges, ranges[1:]):
        gain = best[:, None] + model.success_probability(prev)[:, None] * (cur[None, :] - prev[:, None])
        gain[prev[:, None] >= cur[None, :]] = -np.inf
        arg = np.argmax(gain, axis=0)
        best = gain[arg, np.arange(cur.size)]
        back.append(arg)

    last = ranges[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        rt = model.k * model.success_probability(last) / (last - best)
    rt = np.where(np.isfinite(best), rt, -np.inf)
    t = int(np.argmax(rt))
    if not np.isfinite(rt[t]):
        raise InfeasibleError("no increasing schedule fits the search window")
    idx = [t]
    for arg in reversed(back):
        idx.append(int(arg[idx[-1]]))
    idx.reverse()
    lengths = tuple(int(r[i]) for r, i in zip(ranges, idx))
    return make_report(model, lengths, "ES", evaluations=int(work))


# --------------------------------------------------------------------------
# Unlimited attempts
# --------------------------------------------------------------------------


def expected_blocklength_unlimited(model: RateModel) -> float:
    """Mean of the reciprocal-Gaussian blocklength (1-bit increments, no limit)."""
    from scipy.integrate import quad

    k, mu, s = model.k, model.mu, model.sigma
    a = k / (mu + 12 * s)
    b = k / max(mu - 12 * s, mu / 50)
    peak = k / mu
    val, _ = quad(lambda n: n * blocklength_density(model, n), a, b, points=[peak], limit=400, epsabs=0, epsrel=1e-12)
    return val / (1.0 - q(mu / s))


def asymptotic_throughput(model: RateModel) -> float:
    """Throughput ``k / E[N_S]`` reached with an unlimited number of attempts."""
    return model.k / expected_blocklength_unlimited(model)
