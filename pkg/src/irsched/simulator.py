"""Monte Carlo accumulation-cycle simulator.

Each cycle draws the blocklength at which decoding first succeeds, and
optionally whether the decoder starts out locked on a wrong codeword, then
walks the schedule under the rules of the chosen scheme.

Cycles are simulated in fixed-size blocks. Block ``b`` uses the generator
seeded by ``SeedSequence(seed, spawn_key=(b,))`` and block results are merged
in block order, so a report depends only on ``(seed, cycles)`` and never on
the number of worker threads.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, fields
from typing import Callable

import numpy as np
from scipy.stats import binomtest

from .rate_model import RateModel
from .two_phase import AckSchedule, ChannelSpec, confirmation_error_probability
from .vlf_crc import CrcConfig, ErrorModel, undetected_error_probability
from .vlft import SearchBounds, _lengths

BLOCK = 1 << 16
MAX_REDRAWS = 100
JOINT_LAWS = ("coupled", "independent")

# Outcome codes used in traces.
FAILED, SUCCESS, UNDETECTED = 0, 1, 2
OUTCOME_NAMES = {FAILED: "failed", SUCCESS: "success", UNDETECTED: "undetected"}


@dataclass(frozen=True)
class DecoderTrace:
    n_success: int
    wrong_initially: bool = False
    n_error_exit: int | None = None
    crc_pass: bool | None = None

    def __post_init__(self):
        if self.wrong_initially != (self.n_error_exit is not None):
            raise ValueError("n_error_exit must be present exactly when wrong_initially")
        if self.n_error_exit is not None and self.n_error_exit > self.n_success:
            raise ValueError("n_error_exit may not exceed n_success")


def default_n0(model: RateModel) -> int:
    return SearchBounds.for_model(model).n0


def _gauss_pdf(x, mu, sigma):
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2) / sigma


def coupling_ratio_bound(model: RateModel, err: ErrorModel) -> float:
    """``sup_r g_E(r) / g_S(r)`` for the two Gaussian rate densities (``inf`` if unbounded)."""
    s, e = model.sigma, err.sigma_e
    if e > s or (e == s and err.mu_e != model.mu):
        return math.inf
    if e == s:
        return 1.0
    a, b = 0.5 / e**2, 0.5 / s**2
    x = (a * err.mu_e - b * model.mu) / (a - b)
    return float(_gauss_pdf(x, err.mu_e, e) / _gauss_pdf(x, model.mu, s))


def _positive_normal(rng, mu, sigma, size, accept: Callable | None = None):
    """Normal draws restricted to positive values (and to ``accept``), by bounded rejection."""
    out = rng.normal(mu, sigma, size)
    bad = out <= 0
    if accept is not None:
        bad |= rng.random(size) >= accept(out)
    for _ in range(MAX_REDRAWS):
        if not bad.any():
            return out
        idx = np.flatnonzero(bad)
        redraw = rng.normal(mu, sigma, idx.size)
        still = redraw <= 0
        if accept is not None:
            still |= rng.random(idx.size) >= accept(redraw)
        out[idx] = redraw
        bad[idx] = still
    if bad.any():
        raise RuntimeError(f"rejection sampling did not finish within {MAX_REDRAWS} rounds")
    return out


def _to_blocklength(k, rates, n0):
    return np.maximum(n0, np.ceil(k / rates)).astype(np.int64)


def sample_traces(model, err=None, crc=None, rng=None, size=1, joint="coupled", n0=None) -> dict:
    """Vectorised decoder traces as a dict of arrays.

    ``joint="independent"`` draws ``R_S`` and ``R_E`` independently and clamps
    ``N_E <= N_S``. ``joint="coupled"`` lets wrong-start cycles leave the wrong
    codeword straight for the correct one (``N_S = N_E``) and draws the
    remaining cycles from the residual ``(g_S - gamma g_E) / (1 - gamma)``,
    which keeps both marginals intact.
    """
    if joint not in JOINT_LAWS:
        raise ValueError(f"joint must be one of {JOINT_LAWS}, got {joint!r}")
    rng = rng if rng is not None else np.random.default_rng()
    n0 = default_n0(model) if n0 is None else n0
    k = model.k
    gamma = 0.0 if err is None else err.gamma
    wrong = rng.random(size) < gamma
    n_err = np.full(size, -1, dtype=np.int64)
    if joint == "independent" or gamma == 0.0:
        n_s = _to_blocklength(k, _positive_normal(rng, model.mu, model.sigma, size), n0)
        if wrong.any():
            n_e = _to_blocklength(k, _positive_normal(rng, err.mu_e, err.sigma_e, int(wrong.sum())), n0)
            n_err[wrong] = np.minimum(n_s[wrong], n_e)
    else:
        if gamma * coupling_ratio_bound(model, err) > 1.0:
            raise ValueError("coupled joint law needs gamma * sup(g_E/g_S) <= 1; use joint='independent'")
        n_s = np.empty(size, dtype=np.int64)
        nw = int(wrong.sum())
        n_e = _to_blocklength(k, _positive_normal(rng, err.mu_e, err.sigma_e, nw), n0)
        n_err[wrong] = n_e
        n_s[wrong] = n_e

        def accept(r):
            return 1.0 - gamma * _gauss_pdf(r, err.mu_e, err.sigma_e) / _gauss_pdf(r, model.mu, model.sigma)

        n_s[~wrong] = _to_blocklength(k, _positive_normal(rng, model.mu, model.sigma, size - nw, accept), n0)
    out = {"n_success": n_s, "wrong_initially": wrong, "n_error_exit": n_err}
    if crc is not None:
        out["crc_pass"] = wrong & (rng.random(size) < crc.pass_probability)
    return out


def sample_trace(model, err=None, crc=None, rng=None, joint="coupled", n0=None) -> DecoderTrace:
    t = sample_traces(model, err, crc, rng, 1, joint, n0)
    wrong = bool(t["wrong_initially"][0])
    return DecoderTrace(
        n_success=int(t["n_success"][0]),
        wrong_initially=wrong,
        n_error_exit=int(t["n_error_exit"][0]) if wrong else None,
        crc_pass=bool(t["crc_pass"][0]) if crc is not None and wrong else None,
    )


# --------------------------------------------------------------------------
# Per-block scheme kernels: return (bits, symbols, outcome[, symbols_always])
# --------------------------------------------------------------------------


def _walk_vlft(n, t, k):
    n_s = t["n_success"]
    idx = np.searchsorted(n, n_s, side="left")
    ok = idx < n.size
    symbols = np.where(ok, n[np.minimum(idx, n.size - 1)], n[-1])
    return np.where(ok, float(k), 0.0), symbols, np.where(ok, SUCCESS, FAILED)


def _walk_crc(n, t, k_inf):
    size = t["n_success"].size
    outcome = np.full(size, FAILED)
    symbols = np.full(size, n[-1], dtype=float)
    active = np.ones(size, dtype=bool)
    for ni in n:
        wrong_here = t["wrong_initially"] & (ni < t["n_error_exit"])
        stop_err = active & wrong_here & t["crc_pass"]
        stop_ok = active & ~wrong_here & (ni >= t["n_success"])
        outcome[stop_err] = UNDETECTED
        outcome[stop_ok] = SUCCESS
        symbols[stop_err | stop_ok] = ni
        active &= ~(stop_err | stop_ok)
    return np.where(outcome == SUCCESS, float(k_inf), 0.0), symbols, outcome


def _walk_two_phase(n, a, c, t, k, rng):
    size = t["n_success"].size
    flips = rng.random((size, n.size)) < c
    outcome = np.full(size, FAILED)
    stop_at = np.full(size, n[-1], dtype=float)
    conf = np.zeros(size)
    conf_always = np.zeros(size)
    active = np.ones(size, dtype=bool)
    for i, ni in enumerate(n):
        wrong_here = t["wrong_initially"] & (ni < t["n_error_exit"])
        right_here = ~wrong_here & (ni >= t["n_success"])
        conf_always[active] += a[i]
        conv = active & (wrong_here | right_here)
        conf[conv] += a[i]
        stop_ok = active & right_here & ~flips[:, i]
        stop_err = active & wrong_here & flips[:, i]
        outcome[stop_ok] = SUCCESS
        outcome[stop_err] = UNDETECTED
        stop_at[stop_ok | stop_err] = ni
        active &= ~(stop_ok | stop_err)
    bits = np.where(outcome == SUCCESS, float(k), 0.0)
    return bits, stop_at + conf, outcome, stop_at + conf_always


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------


@dataclass
class _Sums:
    n: int = 0
    b: float = 0.0
    s: float = 0.0
    bb: float = 0.0
    ss: float = 0.0
    bs: float = 0.0
    s2: float = 0.0
    s2s2: float = 0.0
    bs2: float = 0.0
    success: int = 0
    undetected: int = 0
    failed: int = 0

    @classmethod
    def of(cls, bits, symbols, outcome, symbols_alt=None):
        alt = symbols if symbols_alt is None else symbols_alt
        return cls(
            n=int(bits.size),
            b=float(bits.sum()),
            s=float(symbols.sum()),
            bb=float(bits @ bits),
            ss=float(symbols @ symbols),
            bs=float(bits @ symbols),
            s2=float(alt.sum()),
            s2s2=float(alt @ alt),
            bs2=float(bits @ alt),
            success=int(np.sum(outcome == SUCCESS)),
            undetected=int(np.sum(outcome == UNDETECTED)),
            failed=int(np.sum(outcome == FAILED)),
        )

    def __add__(self, other: "_Sums") -> "_Sums":
        return _Sums(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))


def _ratio(sb, ss_, sbb, sss, sbs, n):
    """Ratio estimator ``sum b / sum s`` with its delta-method standard error."""
    r = sb / ss_
    mean_s = ss_ / n
    var = (sbb - 2 * r * sbs + r * r * sss) / n - (sb / n - r * mean_s) ** 2
    se = math.sqrt(max(var, 0.0) / n) / mean_s if n > 1 else math.nan
    return r, se


@dataclass(frozen=True)
class SimulationReport:
    scheme: str
    cycles: int
    seed: int
    k_effective: int
    empirical_throughput: float
    throughput_se: float
    empirical_latency: float
    latency_se: float
    undetected_errors: int
    undetected_error_rate: float
    undetected_ci: tuple
    nack_timeout_rate: float
    success_rate: float
    mean_symbols_per_cycle: float
    extra: dict

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undetected_ci"] = list(self.undetected_ci)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def undetected_pvalue(self, predicted: float) -> float:
        """Two-sided exact binomial p-value of the observed undetected count against ``predicted``."""
        return float(binomtest(self.undetected_errors, self.cycles, predicted).pvalue)


def _throughput_latency(sb, ss_, sbb, sss, sbs, n, k_eff):
    if sb == 0:
        return 0.0, math.nan, math.inf, math.nan
    r, se = _ratio(sb, ss_, sbb, sss, sbs, n)
    return r, se, k_eff / r, k_eff * se / (r * r)


def _report(scheme, tot: _Sums, seed, k_eff, extra) -> SimulationReport:
    r, se, lam, lam_se = _throughput_latency(tot.b, tot.s, tot.bb, tot.ss, tot.bs, tot.n, k_eff)
    ci = binomtest(tot.undetected, tot.n).proportion_ci(method="exact") if tot.n else None
    return SimulationReport(
        scheme=scheme,
        cycles=tot.n,
        seed=seed,
        k_effective=k_eff,
        empirical_throughput=r,
        throughput_se=se,
        empirical_latency=lam,
        latency_se=lam_se,
        undetected_errors=tot.undetected,
        undetected_error_rate=tot.undetected / tot.n,
        undetected_ci=(float(ci.low), float(ci.high)),
        nack_timeout_rate=tot.failed / tot.n,
        success_rate=tot.success / tot.n,
        mean_symbols_per_cycle=tot.s / tot.n,
        extra=extra,
    )


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))


def _run_blocks(kernel, cycles, seed, threads, trace_rows):
    """Run ``kernel(rng, size)`` over all blocks; merge in block order."""
    if cycles < 1:
        raise ValueError("cycles must be at least 1")
    sizes = [BLOCK] * (cycles // BLOCK) + ([cycles % BLOCK] if cycles % BLOCK else [])

    def one(b):
        t, res = kernel(_block_rng(seed, b), sizes[b])
        rows = None
        if trace_rows and b * BLOCK < trace_rows:
            take = min(sizes[b], trace_rows - b * BLOCK)
            rows = (b * BLOCK, t, res, take)
        return _Sums.of(*res), rows

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one, range(len(sizes))))
    else:
        parts = [one(b) for b in range(len(sizes))]
    total = _Sums()
    for s, _ in parts:
        total = total + s
    return total, [r for _, r in parts if r is not None]


def _write_trace(path, chunks):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle", "n_success", "wrong_initially", "n_error_exit", "outcome", "symbols_spent"])
        for start, t, res, take in chunks:
            symbols, outcome = res[1], res[2]
            for j in range(take):
                wrong = bool(t["wrong_initially"][j])
                w.writerow([
                    start + j,
                    int(t["n_success"][j]),
                    int(wrong),
                    int(t["n_error_exit"][j]) if wrong else "",
                    OUTCOME_NAMES[int(outcome[j])],
                    f"{symbols[j]:g}",
                ])


def run_vlft(model, schedule, cycles, seed=0, threads=None, trace_path=None, trace_rows=1000, n0=None):
    """Simulate VLFT: success at the first ``N_i >= n_success``."""
    n = _lengths(schedule)
    k = model.k

    def kernel(rng, size):
        t = sample_traces(model, rng=rng, size=size, n0=n0)
        return t, _walk_vlft(n, t, k)

    total, chunks = _run_blocks(kernel, cycles, seed, threads, trace_rows if trace_path else 0)
    if trace_path:
        _write_trace(trace_path, chunks)
    return _report("VLFT", total, seed, k, {"schedule": n.astype(int).tolist()})


def run_vlf_crc(model, err, crc: CrcConfig, schedule, cycles, seed=0, threads=None, joint="coupled",
                trace_path=None, trace_rows=1000, n0=None):
    """Simulate VLF with a CRC stopping rule.

    At each ``N_i`` the decoder holds a wrong codeword (before ``n_error_exit``
    on a wrong start), the correct one (from ``n_success``), or nothing. A
    wrong codeword that passes the CRC ends the cycle as an undetected error.
    """
    n = _lengths(schedule)
    if crc.k != model.k:
        raise ValueError("CRC configuration and rate model refer to different k")

    def kernel(rng, size):
        t = sample_traces(model, err, crc, rng, size, joint, n0)
        return t, _walk_crc(n, t, crc.k_inf)

    total, chunks = _run_blocks(kernel, cycles, seed, threads, trace_rows if trace_path else 0)
    if trace_path:
        _write_trace(trace_path, chunks)
    predicted = undetected_error_probability(err, crc, n[0])
    extra = {
        "schedule": n.astype(int).tolist(),
        "l_crc": crc.l_crc,
        "joint": joint,
        "predicted_undetected_rate": predicted,
        "undetected_pvalue": float(binomtest(total.undetected, total.n, predicted).pvalue),
    }
    return _report("VLF_CRC", total, seed, crc.k_inf, extra)


def run_two_phase(model, err, chan: ChannelSpec, schedule, acks: AckSchedule, cycles, seed=0, threads=None,
                  joint="coupled", trace_path=None, trace_rows=1000, n0=None):
    """Simulate two-phase VLF.

    The main figures use the skip rule (no confirmation after an attempt that
    produced no codeword). ``extra`` also carries R_T and latency when every
    attempt pays its confirmation symbols.
    """
    n = _lengths(schedule)
    if n.size != acks.m:
        raise ValueError("schedule and ACK schedule differ in length")
    a = acks.as_array()
    c = confirmation_error_probability(chan, a)

    def kernel(rng, size):
        t = sample_traces(model, err, None, rng, size, joint, n0)
        return t, _walk_two_phase(n, a, c, t, model.k, rng)

    total, chunks = _run_blocks(kernel, cycles, seed, threads, trace_rows if trace_path else 0)
    if trace_path:
        _write_trace(trace_path, chunks)
    r2, se2, lam2, lam_se2 = _throughput_latency(total.b, total.s2, total.bb, total.s2s2, total.bs2, total.n, model.k)
    extra = {
        "schedule": n.astype(int).tolist(),
        "acks": list(acks.lengths),
        "snr_db": chan.snr_db,
        "joint": joint,
        "accounting": "skip",
        "always_confirm": {
            "empirical_throughput": r2,
            "throughput_se": se2,
            "empirical_latency": lam2,
            "latency_se": lam_se2,
            "mean_symbols_per_cycle": total.s2 / total.n,
        },
    }
    return _report("TWO_PHASE", total, seed, model.k, extra)


# --------------------------------------------------------------------------
# BI-AWGN information density
# --------------------------------------------------------------------------


def information_density(z, sigma_sq):
    """``1 - log2(1 + exp(-2(z+1)/sigma^2))`` for noise sample ``z`` on a +1 symbol."""
    if not sigma_sq > 0:
        raise ValueError("sigma_sq must be positive")
    out = 1.0 - np.logaddexp(0.0, -2.0 * (np.asarray(z, dtype=float) + 1.0) / sigma_sq) / math.log(2.0)
    return float(out) if np.ndim(out) == 0 else out


def accumulated_rate_trace(sigma_sq, n_success, rng, size=None):
    """Average information density over ``n_success`` noise draws; ``size`` gives many traces."""
    if n_success < 1:
        raise ValueError("n_success must be at least 1")
    shape = (n_success,) if size is None else (size, n_success)
    z = rng.normal(0.0, math.sqrt(sigma_sq), shape)
    out = information_density(z, sigma_sq).mean(axis=-1)
    return float(out) if size is None else out


def snr_db_to_sigma_sq(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)
