"""Command-line entry points: run a scenario, benchmark, run adversarial suites.

Exit codes: 0 success, 1 usage or config error, 2 identified abort.
The master rng seed may be overridden with the ASYMAGG_SEED environment
variable.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import consistency as cons
from . import harness
from . import protocol as proto
from .params import ParameterError, default_params

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ABORT = 2
SEED_ENV = "ASYMAGG_SEED"
PARTIES = ("client", "s1", "s2")


@dataclass(frozen=True)
class BenchRecord:
    n: int
    L: int
    mode: str
    party: str
    phase: str
    seconds: float
    bytes_sent: int
    bytes_received: int
    restarts: int


BENCH_FIELDS = [f.name for f in dataclasses.fields(BenchRecord)]


def _seed(cli_value: int | None) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        return int(env, 0)
    return 0 if cli_value is None else cli_value


def _out(text: str) -> None:
    print(text, flush=True)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def cmd_run(path: str, seed: int | None = None, jsonl: str | None = None) -> int:
    try:
        cfg = harness.load_config(path)
    except harness.ConfigError as exc:
        _out(f"config error: {exc}")
        return EXIT_USAGE
    if seed is not None or os.environ.get(SEED_ENV) is not None:
        cfg = dataclasses.replace(cfg, seed=_seed(seed))
    log = harness.run_scenario(cfg)
    if jsonl:
        with open(jsonl, "w", encoding="utf-8") as fh:
            fh.write(log.to_jsonl())
    o = log.outcome
    _out(o.describe())
    if o.status == harness.STATUS_ABORT:
        _out(f"reason: {o.verdict.reason}")
        return EXIT_ABORT
    if o.status == harness.STATUS_ERROR:
        return EXIT_USAGE
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def bench_records(log: harness.TranscriptLog, n: int, L: int, mode: str, k_tasks: int) -> list[BenchRecord]:
    """Nine records: per-client means for the client row, totals for each server."""
    clients = log.clients()
    recs = []
    restarts = sum(max(0, tr - k_tasks) for tr in log.trials.values())
    for party in PARTIES:
        for phase in harness.PHASES:
            if party == "client":
                cnt = max(1, len(clients))
                sec = sum(log.party_seconds(c, phase) for c in clients) / cnt
                sent = sum(log.bytes_sent(c, phase) for c in clients) // cnt
                recv = sum(log.bytes_received(c, phase) for c in clients) // cnt
                rs = restarts if phase == "phase1" else 0
            else:
                sec = log.party_seconds(party, phase)
                sent = log.bytes_sent(party, phase)
                recv = log.bytes_received(party, phase)
                rs = 0
            recs.append(BenchRecord(n, L, mode, party, phase, round(sec, 6), sent, recv, rs))
    return recs


def cmd_bench(
    ns: Sequence[int],
    Ls: Sequence[int],
    mode: str,
    reps: int,
    out: str | None,
    consistency: str = cons.MODE_FOLD,
    seed: int = 0,
    warmup: int = 1,
) -> int:
    if not ns or not Ls or reps < 1:
        _out("bench needs non-empty --n and --L lists and --reps >= 1")
        return EXIT_USAGE
    records: list[BenchRecord] = []
    for n in ns:
        for L in Ls:
            try:
                params = default_params(L=L, n=n)
            except ParameterError as exc:
                _out(f"invalid parameters for n={n}, L={L}: {exc}")
                return EXIT_USAGE
            for rep in range(warmup + reps):
                cfg = harness.ScenarioConfig(params, mode, consistency, seed + rep)
                log = harness.run_scenario(cfg)
                if log.outcome.status != harness.STATUS_SUCCESS:
                    _out(f"n={n} L={L}: run failed: {log.outcome.describe()}")
                    return EXIT_USAGE
                if rep >= warmup:
                    records.extend(bench_records(log, n, L, mode, params.k * params.t))
            _out(f"n={n} L={L} mode={mode}: {reps} measured repetition(s)")
    fh = open(out, "w", newline="", encoding="utf-8") if out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(BENCH_FIELDS)
        for r in records:
            w.writerow([getattr(r, f) for f in BENCH_FIELDS])
    finally:
        if out:
            fh.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# attack
# ---------------------------------------------------------------------------


def _suite_lzksa(trials: int, rng: np.random.Generator) -> bool:
    params = default_params(L=1024, n=1)
    setup = harness.cached_setup(params, False)
    x_star = harness.lzksa_target(params, rng)
    acc = harness.lzksa_forger(params, setup.A, x_star, trials, rng)
    _out(f"lzksa: {acc}/{trials} forged proofs accepted (threshold 0)")
    return acc == 0


def _suite_equivocation(trials: int, rng: np.random.Generator) -> bool:
    ok = True
    for cm, allowed in ((cons.MODE_FOLD, trials // 1000), (cons.MODE_SEED, 0)):
        und = harness.equivocation_suite(trials, rng, consistency=cm)
        _out(f"equivocation ({cm}): {und}/{trials} undetected (threshold {allowed})")
        ok &= und <= allowed
    return ok


def _suite_blame(_trials: int, rng: np.random.Generator) -> bool:
    cases = harness.blame_suite(int(rng.integers(1 << 30)))
    for c in cases:
        _out(f"  {c.name}: {c.verdict} (expected {c.expected}) evidence={'ok' if c.evidence_ok else 'bad'}")
    good = sum(c.passed for c in cases)
    _out(f"blame: {good}/{len(cases)} correct verdicts")
    return good == len(cases)


SUITES = {
    "lzksa": (_suite_lzksa, 10_000),
    "equivocation": (_suite_equivocation, 1_000),
    "blame": (_suite_blame, 6),
}


def cmd_attack(suite: str, trials: int | None = None, seed: int = 0) -> int:
    if suite not in SUITES:
        _out(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
        return EXIT_USAGE
    fn, default_trials = SUITES[suite]
    ok = fn(trials or default_trials, np.random.default_rng(seed))
    _out("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_ABORT


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asymagg", description="Two-server lattice secure aggregation")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario from a config file")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--jsonl", default=None, help="write the transcript as JSON lines")

    b = sub.add_parser("bench", help="benchmark and write BenchRecord CSV")
    b.add_argument("--n", type=int, nargs="+", default=[10])
    b.add_argument("--L", type=int, nargs="+", default=[4096])
    b.add_argument("--mode", choices=[proto.MODE_SH, proto.MODE_MAL], default=proto.MODE_SH)
    b.add_argument("--consistency", choices=[cons.MODE_FOLD, cons.MODE_SEED], default=cons.MODE_FOLD)
    b.add_argument("--reps", type=int, default=1)
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--out", default=None)

    a = sub.add_parser("attack", help="run an adversarial suite")
    a.add_argument("suite")
    a.add_argument("--trials", type=int, default=None)
    a.add_argument("--seed", type=int, default=None)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.command == "run":
            return cmd_run(args.config, args.seed, args.jsonl)
        if args.command == "bench":
            return cmd_bench(args.n, args.L, args.mode, args.reps, args.out, args.consistency, _seed(args.seed), args.warmup)
        return cmd_attack(args.suite, args.trials, _seed(args.seed))
    except ValueError as exc:
        _out(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
