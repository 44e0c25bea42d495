"""Command-line front end: ``irsched fit | optimize | simulate | reproduce-tables``.

Exit codes: 0 success, 1 usage or validation error, 2 infeasible constraint,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .rate_model import FittingError, RateModel, fit, model_to_json, read_samples_csv
from .reference_tables import REPRODUCERS, rows_to_csv
from .simulator import JOINT_LAWS, run_two_phase, run_vlf_crc, run_vlft
from .two_phase import AckSchedule, ChannelSpec, optimize_two_phase, table_iv_csv
from .vlf_crc import CrcConfig, ErrorModel, optimize_vlf_crc
from .vlft import (
    EnumerationBudgetError,
    IncrementSchedule,
    InfeasibleError,
    SdoTruncation,
    SearchBounds,
    optimize_es,
    optimize_sdo,
    window_around,
)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULTS = {
    "scheme": "vlft",
    "model": {"mu": 0.6374, "sigma": 0.0579, "k": 96},
    "error_model": {"gamma": 0.165, "mu_e": 0.626, "sigma_e": 0.056},
    "channel": {"snr_db": 2.0},
    "m": 5,
    "acks": [5, 4, 3, 3, 3],
    "epsilon": 1e-3,
    "bounds": None,
    "seed": 0,
    "cycles": 10**6,
    "l_crc": None,
}
SCHEMES = ("vlft", "vlf-crc", "two-phase")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    scheme: str
    model: RateModel
    error_model: ErrorModel | None
    channel: ChannelSpec | None
    m: int
    acks: AckSchedule | None
    epsilon: float
    bounds: SearchBounds
    seed: int
    cycles: int
    l_crc: int | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.scheme in ("vlf-crc", "two-phase") and self.error_model is None:
            raise ValueError(f"scheme {self.scheme} needs an error model")
        if self.scheme == "two-phase":
            if self.channel is None or self.acks is None:
                raise ValueError("scheme two-phase needs a channel and an ACK schedule")
            if self.acks.m != self.m:
                raise ValueError(f"ACK schedule has {self.acks.m} entries but m={self.m}")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.cycles < 1:
            raise ValueError("cycles must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        model = RateModel.from_dict(d["model"])
        em = d.get("error_model")
        err = ErrorModel(float(em["gamma"]), float(em["mu_e"]), float(em["sigma_e"]), model.k) if em else None
        ch = d.get("channel")
        acks = d.get("acks")
        b = d.get("bounds")
        bounds = SearchBounds(int(b["n0"]), int(b["n_max"])) if b else SearchBounds.for_model(model)
        return cls(
            scheme=d["scheme"],
            model=model,
            error_model=err,
            channel=ChannelSpec(float(ch["snr_db"])) if ch else None,
            m=int(d["m"]),
            acks=AckSchedule(tuple(acks)) if acks else None,
            epsilon=float(d["epsilon"]),
            bounds=bounds,
            seed=int(d["seed"]),
            cycles=int(d["cycles"]),
            l_crc=None if d.get("l_crc") is None else int(d["l_crc"]),
        )


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _int_range(text: str) -> range:
    try:
        if "-" in text:
            lo, hi = text.split("-")
            return range(int(lo), int(hi) + 1)
        return range(int(text), int(text) + 1)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like 1-16, got {text!r}") from None


def build_config(args) -> RunConfig:
    """Defaults, then the ``--config`` file, then explicit flags."""
    d = json.loads(json.dumps(DEFAULTS))
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        for key, val in loaded.items():
            if key not in d:
                raise UsageError(f"unknown config key {key!r}")
            d[key] = {**d[key], **val} if isinstance(d[key], dict) and isinstance(val, dict) else val
    flag_map = {
        "scheme": ("scheme",),
        "mu": ("model", "mu"),
        "sigma": ("model", "sigma"),
        "k": ("model", "k"),
        "gamma": ("error_model", "gamma"),
        "mu_e": ("error_model", "mu_e"),
        "sigma_e": ("error_model", "sigma_e"),
        "snr_db": ("channel", "snr_db"),
        "m": ("m",),
        "acks": ("acks",),
        "epsilon": ("epsilon",),
        "seed": ("seed",),
        "cycles": ("cycles",),
        "l_crc": ("l_crc",),
    }
    for flag, path in flag_map.items():
        val = getattr(args, flag, None)
        if val is None:
            continue
        if len(path) == 1:
            d[path[0]] = val
        else:
            d[path[0]] = {**(d[path[0]] or {}), path[1]: val}
    if getattr(args, "n0", None) is not None or getattr(args, "n_max", None) is not None:
        model = RateModel.from_dict(d["model"])
        base = SearchBounds.for_model(model)
        d["bounds"] = {"n0": args.n0 or base.n0, "n_max": args.n_max or base.n_max}
    return RunConfig.from_dict(d)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _write_csv(path, text) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _vlft_csv(reports) -> str:
    m = max(r.schedule.m for r in reports)
    lines = ["algorithm,m," + ",".join(f"N{i + 1}" for i in range(m)) + ",R_T,lambda"]
    for r in reports:
        cells = list(r.schedule.lengths) + [""] * (m - r.schedule.m)
        lines.append(f"{r.algorithm},{r.schedule.m}," + ",".join(map(str, cells)) + f",{r.throughput:.5f},{r.latency:.2f}")
    return "\n".join(lines) + "\n"


def _agreement(a, b) -> dict:
    la, lb = a.schedule.lengths, b.schedule.lengths
    return {
        "same_schedule": la == lb,
        "max_abs_bit_difference": max(abs(x - y) for x, y in zip(la, lb)),
        "throughput_difference": b.throughput - a.throughput,
        "latency_difference": b.latency - a.latency,
    }


def cmd_fit(args) -> int:
    samples = read_samples_csv(args.csv, args.k)
    model = fit(samples, trim=(args.trim_low, args.trim_high))
    print(model_to_json(model))
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = build_config(args)
    if cfg.scheme == "vlft":
        reports = []
        if args.algorithm in ("sdo", "both"):
            reports.append(optimize_sdo(cfg.model, cfg.m, cfg.bounds))
        if args.algorithm in ("es", "both"):
            window = None
            if cfg.m > 5:
                center = reports[0] if reports else optimize_sdo(cfg.model, cfg.m, cfg.bounds)
                window = window_around(center.schedule.lengths)
            reports.append(optimize_es(cfg.model, cfg.m, cfg.bounds, window))
        out = {"reports": [r.to_dict() for r in reports]}
        if len(reports) == 2:
            out["agreement"] = _agreement(*reports)
        _emit(out)
        if args.csv:
            _write_csv(args.csv, _vlft_csv(reports))
    elif cfg.scheme == "vlf-crc":
        l_range = range(cfg.l_crc, cfg.l_crc + 1) if cfg.l_crc is not None else args.l_range
        sweep = optimize_vlf_crc(cfg.model, cfg.error_model, cfg.m, cfg.epsilon, l_range, cfg.bounds)
        rows = [
            {"l_crc": r.l_crc, "n1_min": r.n1_min, "feasible": r.feasible, **(r.report.to_dict() if r.feasible else {})}
            for r in sweep.rows
        ]
        if not any(r.feasible for r in sweep.rows):
            raise InfeasibleError(
                f"undetected-error constraint P_wrong(N1) 2^-L < {cfg.epsilon:g} cannot be met for any l_crc in "
                f"{l_range.start}..{l_range.stop - 1}"
            )
        _emit({"rows": rows, "best": sweep.best.to_dict()})
        if args.csv:
            _write_csv(args.csv, sweep.to_csv())
    else:
        reports = []
        if args.algorithm in ("sdo", "both"):
            reports.append(optimize_two_phase(cfg.model, cfg.error_model, cfg.channel, cfg.m, cfg.acks, cfg.epsilon,
                                              cfg.bounds, refine=False))
        if args.algorithm in ("es", "both"):
            rep = optimize_two_phase(cfg.model, cfg.error_model, cfg.channel, cfg.m, cfg.acks, cfg.epsilon, cfg.bounds)
            reports.append(replace(rep, algorithm="ES"))
        out = {"reports": [r.to_dict() for r in reports]}
        if len(reports) == 2:
            out["agreement"] = _agreement(*reports)
        _emit(out)
        if args.csv:
            _write_csv(args.csv, table_iv_csv(reports))
    return EXIT_OK


def _schedule_from(args, cfg: RunConfig):
    """Schedule (and any scheme extras) from ``--schedule`` or a saved report."""
    if args.schedule:
        return tuple(args.schedule), cfg
    if not args.report:
        raise UsageError("simulate needs --schedule or --report")
    try:
        data = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read report {args.report}: {exc}") from None
    if "best" in data:
        data = data["best"]
    elif "reports" in data:
        data = data["reports"][-1]
    if "schedule" not in data:
        raise UsageError(f"{args.report} holds no schedule")
    scheme = {"VLFT": "vlft", "VLF_CRC": "vlf-crc", "TWO_PHASE": "two-phase"}.get(data.get("scheme"), cfg.scheme)
    updates = {"scheme": scheme, "m": len(data["schedule"])}
    if data.get("l_crc") is not None and cfg.l_crc is None:
        updates["l_crc"] = int(data["l_crc"])
    if data.get("acks") and args.acks is None:
        updates["acks"] = AckSchedule(tuple(data["acks"]))
    return tuple(data["schedule"]), replace(cfg, **updates)


def cmd_simulate(args) -> int:
    cfg = build_config(args)
    sched, cfg = _schedule_from(args, cfg)
    IncrementSchedule(sched)
    common = {"seed": cfg.seed, "threads": args.threads, "trace_path": args.trace, "trace_rows": args.trace_rows}
    if cfg.scheme == "vlft":
        rep = run_vlft(cfg.model, sched, cfg.cycles, **common)
    elif cfg.scheme == "vlf-crc":
        if cfg.l_crc is None:
            raise UsageError("vlf-crc simulation needs --l-crc")
        crc = CrcConfig(cfg.l_crc, cfg.model.k)
        rep = run_vlf_crc(cfg.model, cfg.error_model, crc, sched, cfg.cycles, joint=args.joint, **common)
    else:
        if cfg.acks.m != len(sched):
            raise UsageError(f"ACK schedule has {cfg.acks.m} entries but schedule has {len(sched)}")
        rep = run_two_phase(cfg.model, cfg.error_model, cfg.channel, sched, cfg.acks, cfg.cycles,
                            joint=args.joint, **common)
    print(rep.to_json(indent=2, sort_keys=True))
    return EXIT_OK


def cmd_reproduce_tables(args) -> int:
    rows = REPRODUCERS[args.which]()
    sys.stdout.write(rows_to_csv(rows))
    cells = [ok for r in rows for ok in r.cells.values()]
    print(f"# table {args.which}: {sum(r.ok for r in rows)}/{len(rows)} rows and "
          f"{sum(cells)}/{len(cells)} cells within tolerance")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_flags(p) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--mu", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--mu-e", dest="mu_e", type=float)
    p.add_argument("--sigma-e", dest="sigma_e", type=float)
    p.add_argument("--snr-db", dest="snr_db", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--acks", type=_int_list, help="comma-separated confirmation lengths")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--n0", type=int)
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--cycles", type=int)
    p.add_argument("--l-crc", dest="l_crc", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="irsched", description="Increment-schedule optimisation for incremental-redundancy feedback codes.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit (mu, sigma) to blocklength samples")
    p.add_argument("csv", help="CSV with header n_s")
    p.add_argument("--k", type=int, default=DEFAULTS["model"]["k"])
    p.add_argument("--trim-low", type=float, default=0.01)
    p.add_argument("--trim-high", type=float, default=0.99)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("optimize", help="optimise a schedule")
    _add_run_flags(p)
    p.add_argument("--algorithm", choices=("sdo", "es", "both"), default="sdo")
    p.add_argument("--l-range", dest="l_range", type=_int_range, default=range(1, 17))
    p.add_argument("--csv", help="also write table-shaped CSV here ('-' for stdout)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="Monte Carlo check of a schedule")
    _add_run_flags(p)
    p.add_argument("--schedule", type=_int_list)
    p.add_argument("--report", help="JSON written by 'optimize'")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--joint", choices=JOINT_LAWS, default="coupled")
    p.add_argument("--trace", help="write per-cycle trace CSV here")
    p.add_argument("--trace-rows", type=int, default=1000)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reproduce-tables", help="recompute a reference table and compare")
    p.add_argument("which", choices=tuple(REPRODUCERS))
    p.set_defaults(func=cmd_reproduce_tables)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SdoTruncation, FloatingPointError, EnumerationBudgetError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, FittingError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
