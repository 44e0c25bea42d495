"""Two-phase VLF: a communication phase followed by a coded ACK/NACK phase.

After each decoding attempt that produces a codeword, the transmitter sends
an ``A_i``-symbol repetition-coded ACK (decoder right) or NACK (decoder wrong)
over the same noisy channel. Four outcomes are possible per attempt:

    SS  message right, ACK read as ACK       -> stop, k bits delivered
    EE  message wrong, NACK read as ACK      -> stop, undetected error
    SE  message right, ACK read as NACK      -> continue
    ES  message wrong, NACK read as NACK     -> continue
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .rate_model import RateModel, q
from .vlf_crc import ErrorModel, wrong_codeword_probability
from .vlft import (
    ES_BUDGET,
    EnumerationBudgetError,
    IncrementSchedule,
    InfeasibleError,
    OptimizationReport,
    SDO_STEP,
    SearchBounds,
    _lattice_corners,
    _lengths,
    _sdo_batch,
    round_schedule,
)

FORMS = ("exact", "approx")


@dataclass(frozen=True)
class AckSchedule:
    lengths: tuple

    def __post_init__(self):
        lengths = tuple(self.lengths)
        if not lengths:
            raise ValueError("ACK schedule needs at least one entry")
        if any(int(a) != a or a < 1 for a in lengths):
            raise ValueError(f"ACK lengths must be positive integers: {lengths}")
        object.__setattr__(self, "lengths", tuple(int(a) for a in lengths))

    @property
    def m(self) -> int:
        return len(self.lengths)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.lengths, dtype=float)


@dataclass(frozen=True)
class ChannelSpec:
    snr_db: float

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise ValueError(f"snr_db must be finite, got {self.snr_db}")

    @property
    def sigma_c(self) -> float:
        """Noise standard deviation for unit signal power (SNR = 1/sigma^2)."""
        return 10.0 ** (-self.snr_db / 20.0)


def confirmation_error_probability(chan: ChannelSpec, a):
    """Probability that an ``a``-symbol repetition-coded ACK is read as a NACK (and vice versa)."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 1):
        raise ValueError("confirmation length must be at least 1")
    return q(np.sqrt(a) / chan.sigma_c)


def outcome_terms(model: RateModel, err: ErrorModel, n, conf_error):
    """Per-attempt ``(p_ss, p_ee, p_se, p_es)`` for blocklengths ``n``.

    ``n`` may be 1-D (one schedule) or 2-D (one schedule per row).
    ``conf_error`` is the per-attempt ACK/NACK error probability; passing it
    directly (instead of ACK lengths) lets callers force it to zero.
    """
    n = np.asarray(n, dtype=float)
    c = np.asarray(conf_error, dtype=float)
    qs = model.success_probability(n)
    first = np.diff(qs, axis=-1, prepend=0.0)
    w = wrong_codeword_probability(err, n)
    return first * (1 - c), w * c, first * c, w * (1 - c)


def _check_pair(schedule, acks: AckSchedule) -> np.ndarray:
    n = _lengths(schedule)
    if n.shape[-1] != acks.m:
        raise ValueError(f"schedule has {n.shape[-1]} attempts but ACK schedule has {acks.m}")
    return n


def attempt_outcome_probabilities(model, err, chan, schedule, acks: AckSchedule, i: int) -> dict:
    """Outcome probabilities of attempt ``i`` (1-based)."""
    n = _check_pair(schedule, acks)
    if not 1 <= i <= acks.m:
        raise IndexError(f"attempt index {i} outside 1..{acks.m}")
    terms = outcome_terms(model, err, n, confirmation_error_probability(chan, acks.as_array()))
    return dict(zip(("p_ss", "p_ee", "p_se", "p_es"), (float(t[i - 1]) for t in terms)))


def _moments(n, a_cost, terms, form: str):
    """``(E[K]/k, E[N], sum p_ee)`` along the last axis."""
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}, got {form!r}")
    pss, pee, pse, pes = terms
    en = np.sum((n + a_cost) * (pss + pee) + a_cost * (pse + pes), axis=-1)
    if form == "exact":
        en = en + n[..., -1] * (1 - pss.sum(-1) - pee.sum(-1))
        ek = pss.sum(-1)
    else:
        q_m = np.sum(pss + pse, axis=-1)
        en = en + n[..., -1] * (1 - q_m + pse[..., -1])
        ek = q_m - pee[..., :-1].sum(-1)
    return ek, en, pee.sum(-1)


def evaluate_batch(model, err, chan, acks: AckSchedule, n, form: str = "exact"):
    """Vectorised ``(R_T, E[N], epsilon)`` for rows of ``n``."""
    n = np.atleast_2d(np.asarray(n, dtype=float))
    a = acks.as_array()
    terms = outcome_terms(model, err, n, confirmation_error_probability(chan, a))
    ek, en, eps = _moments(n, a, terms, form)
    return model.k * ek / en, en, eps


def two_phase_expected_blocklength(model, err, chan, schedule, acks, form: str = "exact") -> float:
    """Expected channel uses per cycle, confirmation symbols included.

    ``form="exact"`` charges ``N_m`` to every cycle that ends without an SS or
    EE stop; ``form="approx"`` uses ``1 - Q(z_m) + p_se_m`` for that
    probability instead.
    """
    n = _check_pair(schedule, acks)
    a = acks.as_array()
    terms = outcome_terms(model, err, n, confirmation_error_probability(chan, a))
    return float(_moments(n, a, terms, form)[1])


def two_phase_expected_info_bits(model, err, chan, schedule, acks, form: str = "exact") -> float:
    """``k * sum(p_ss)`` (exact) or ``k * (Q(z_m) - sum_{i<m} p_ee)`` (approx)."""
    n = _check_pair(schedule, acks)
    a = acks.as_array()
    terms = outcome_terms(model, err, n, confirmation_error_probability(chan, a))
    return model.k * float(_moments(n, a, terms, form)[0])


def two_phase_epsilon(model, err, chan, schedule, acks) -> float:
    """Undetected-error probability ``sum_i p_ee``."""
    n = _check_pair(schedule, acks)
    c = confirmation_error_probability(chan, acks.as_array())
    return float(np.sum(wrong_codeword_probability(err, n) * c))


def two_phase_report(model, err, chan, schedule, acks, algorithm="SDO", form="exact", **extra) -> OptimizationReport:
    sched = IncrementSchedule(tuple(_lengths(schedule).astype(int)), "TWO_PHASE")
    en = two_phase_expected_blocklength(model, err, chan, sched, acks, form)
    ek = two_phase_expected_info_bits(model, err, chan, sched, acks, form)
    rt = ek / en
    return OptimizationReport(
        schedule=sched,
        throughput=rt,
        latency=model.k / rt,
        algorithm=algorithm,
        epsilon=two_phase_epsilon(model, err, chan, sched, acks),
        expected_blocklength=en,
        expected_info_bits=ek,
        k_effective=model.k,
        extra={"acks": list(acks.lengths), "snr_db": chan.snr_db, "form": form, **extra},
    )


def _feasible_scores(rt, eps, epsilon):
    return np.where((eps < epsilon) & np.isfinite(rt), rt, -np.inf)


def sdo_candidates(model, err, chan, acks, epsilon, bounds, form="exact", step=SDO_STEP):
    """Best feasible integer schedule from the VLFT SDO sweep over ``N_1 in [N_0, 3k]``.

    Returns ``(schedule, R_T)`` or ``None`` when no swept schedule meets the
    constraint.
    """
    m = acks.m
    lo, hi = bounds.n0, min(3 * model.k, bounds.n_max)
    grid = np.arange(lo, hi + 1e-9, step)
    seqs = _sdo_batch(model, grid[:, None], m)
    seqs = seqs[~np.isnan(seqs).any(axis=1) & (seqs[:, -1] <= bounds.n_max)]
    cands: set = set()
    for n1 in range(math.ceil(lo), int(hi) + 1):
        row = _sdo_batch(model, np.array([[float(n1)]]), m)[0]
        if not np.isnan(row).any() and row[-1] <= bounds.n_max:
            r = round_schedule(row)
            if all(b > a for a, b in zip(r, r[1:])):
                cands.add(r)
    if seqs.size:
        rt, _, eps = evaluate_batch(model, err, chan, acks, seqs, form)
        score = _feasible_scores(rt, eps, epsilon)
        j = int(np.argmax(score))
        if np.isfinite(score[j]):
            cands.update(_lattice_corners(seqs[j], bounds.n0, bounds.n_max))
    if not cands:
        return None
    arr = np.array(sorted(cands), dtype=float)
    rt, _, eps = evaluate_batch(model, err, chan, acks, arr, form)
    score = _feasible_scores(rt, eps, epsilon)
    j = int(np.argmax(score))
    if not np.isfinite(score[j]):
        return None
    return tuple(int(x) for x in arr[j]), float(score[j])


def _box(center, half_width, bounds):
    axes = [np.arange(max(bounds.n0, c - half_width), min(bounds.n_max, c + half_width) + 1) for c in center]
    pts = np.array(np.meshgrid(*axes, indexing="ij"), dtype=float).reshape(len(axes), -1).T
    return pts[np.all(np.diff(pts, axis=1) > 0, axis=1)]


def window_search(model, err, chan, acks, epsilon, bounds, center, half_width=3, form="exact",
                  max_rounds=100, budget=ES_BUDGET):
    """Exhaustive search in a box around ``center``, re-centred until the optimum is interior.

    Every point of every box is evaluated; the box moves whenever the best
    feasible point sits on a face that is not a search bound.
    """
    used = 0
    center = tuple(int(c) for c in center)
    best, best_rt = None, -np.inf
    for _ in range(max_rounds):
        pts = _box(center, half_width, bounds)
        used += len(pts)
        if used > budget:
            raise EnumerationBudgetError(f"window search exceeded {budget} evaluations")
        if not len(pts):
            break
        rt, _, eps = evaluate_batch(model, err, chan, acks, pts, form)
        score = _feasible_scores(rt, eps, epsilon)
        j = int(np.argmax(score))
        if not np.isfinite(score[j]):
            break
        cand = tuple(int(x) for x in pts[j])
        if score[j] > best_rt:
            best, best_rt = cand, float(score[j])
        on_face = any(
            abs(x - c) == half_width and bounds.n0 < x < bounds.n_max for x, c in zip(cand, center)
        )
        if not on_face or cand == center:
            break
        center = cand
    return best, best_rt, used


def optimize_two_phase(
    model: RateModel,
    err: ErrorModel,
    chan: ChannelSpec,
    m: int,
    acks: AckSchedule,
    epsilon: float = 1e-3,
    bounds: SearchBounds | None = None,
    refine: bool = True,
    half_width: int = 3,
    form: str = "exact",
) -> OptimizationReport:
    """Maximise R_T subject to ``sum p_ee < epsilon`` for fixed ACK lengths.

    SDO supplies the starting schedule; with ``refine`` a windowed exhaustive
    search around it polishes the result.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if acks.m != m:
        raise ValueError(f"ACK schedule has {acks.m} entries, need {m}")
    if err.k != model.k:
        raise ValueError("error model and rate model refer to different k")
    bounds = bounds or SearchBounds.for_model(model)
    start = sdo_candidates(model, err, chan, acks, epsilon, bounds, form)
    if start is None:
        raise InfeasibleError(f"no SDO schedule meets epsilon < {epsilon:g}")
    best, rt = start
    algorithm = "SDO"
    extra = {"sdo_schedule": list(best)}
    if refine:
        es_best, es_rt, used = window_search(model, err, chan, acks, epsilon, bounds, best, half_width, form)
        extra["es_evaluations"] = used
        if es_best is not None and es_rt > rt:
            best, rt, algorithm = es_best, es_rt, "ES"
    return two_phase_report(model, err, chan, best, acks, algorithm, form, **extra)


def sdo_sweep_table(model, err, chan, acks, bounds=None, form="exact", n1_values=None):
    """Integer-``N_1`` SDO schedules with their ``(R_T, lambda, epsilon)``, no constraint applied."""
    bounds = bounds or SearchBounds.for_model(model)
    if n1_values is None:
        n1_values = range(bounds.n0, min(3 * model.k, bounds.n_max) + 1)
    rows = []
    for n1 in n1_values:
        seq = _sdo_batch(model, np.array([[float(n1)]]), acks.m)[0]
        if np.isnan(seq).any() or seq[-1] > bounds.n_max:
            continue
        r = round_schedule(seq)
        if any(b <= a for a, b in zip(r, r[1:])):
            continue
        rt, _, eps = evaluate_batch(model, err, chan, acks, np.array([r], float), form)
        rows.append((r, float(rt[0]), model.k / float(rt[0]), float(eps[0])))
    return rows


def table_iv_csv(reports) -> str:
    """CSV with columns algorithm, k, N1..Nm, lambda, R_T, epsilon."""
    buf = io.StringIO()
    w = csv.writer(buf)
    m = max(r.schedule.m for r in reports)
    w.writerow(["algorithm", "k", *[f"N{i + 1}" for i in range(m)], "lambda", "R_T", "epsilon"])
    for r in reports:
        w.writerow([r.algorithm, r.k_effective, *r.schedule.lengths, f"{r.latency:.1f}", f"{r.throughput:.4f}", f"{r.epsilon:.2e}"])
    return buf.getvalue()
