"""Simulated network, scenario runner with adversary injection, and the ideal oracle.

A scenario is one aggregation round driven message by message over a
synchronous lock-step network.  Every message is serialized, counted and
parsed again by its receiver, so byte counters equal the sum of the wire
lengths.  Adversarial behaviour is declarative: a config lists injections
(kind plus key=value arguments) and the runner applies each at its fixed
point in the flow.

Config text format (``#`` starts a comment)::

    preset = toy            # toy | default
    n = 8
    L = 64
    mode = mal              # sh | mal
    consistency = fold      # fold | seed
    seed = 7
    delta = 0.125
    eta = 0.125
    drop = 3, 5             # offline clients
    inject = equivocate client=2 kind=small
    inject = refuse_handshake server=s2

Any other key naming a ProtocolParams field (q, p, lam, d, m, C, t, B_e,
xi, tau, strict, ...) overrides that field.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from . import consistency as cons
from . import protocol as proto
from .lwe_commit import PublicSetup, public_setup
from .params import ParameterError, ProtocolParams, default_params, toy_params
from .ring_core import ZqMatrix, as_array, derive_challenge, mod_matmul, mulmod, sample_gaussian_array
from .zkp import (
    KIND_ENC,
    EncProof,
    RestartLimitExceeded,
    _commit_columns,
    _components,
    _context,
    _task_transcript,
    _column_bytes,
    compute_binder,
    verify_enc,
)

PHASES = ("phase1", "phase2", "phase3")
CLIENT_INJECTIONS = {"drop", "equivocate", "wrong_seed", "lzksa"}
SERVER_INJECTIONS = {"s2_corrupt_sum", "s1_false_alarm", "refuse_handshake", "s2_withhold"}
CORRUPTING = {"equivocate", "wrong_seed", "lzksa"}

STATUS_SUCCESS = "success"
STATUS_BOTTOM = "bottom"
STATUS_ABORT = "abort"
STATUS_ERROR = "error"


class ConfigError(ValueError):
    """Invalid scenario config; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


# ---------------------------------------------------------------------------
# Ideal functionality
# ---------------------------------------------------------------------------


def threshold_count(n: int, delta: float, eta: float) -> int:
    """ceil((1 - delta - eta) n), evaluated on the decimal values of delta and eta."""
    from fractions import Fraction

    frac = 1 - Fraction(repr(float(delta))) - Fraction(repr(float(eta)))
    return math.ceil(frac * n)


def ideal_aggregate(
    inputs: Mapping[int, np.ndarray],
    corrupt: Iterable[int],
    drops: Iterable[int],
    delta: float,
    eta: float,
    p: int,
    valid: Callable[[int], bool] | None = None,
    n: int | None = None,
) -> np.ndarray | None:
    """Sum over alive and valid clients, or None (bottom) below the threshold.

    Corrupt clients count toward n; whether they contribute is decided by
    ``valid`` like everybody else's.
    """
    if not delta + eta < 1 / 3:
        raise ValueError("need delta + eta < 1/3")
    ids = sorted(inputs)
    n = len(ids) if n is None else n
    corrupt = set(corrupt)
    if len(corrupt) > eta * n + 1e-12:
        raise ValueError("more corrupt clients than eta * n")
    dropped = set(drops)
    valid = valid or (lambda _i: True)
    members = [i for i in ids if i not in dropped and valid(i)]
    if len(members) < threshold_count(n, delta, eta):
        return None
    L = len(next(iter(inputs.values()))) if inputs else 0
    acc = np.zeros(L, dtype=np.int64)
    for i in members:
        acc = (acc + np.asarray(inputs[i], dtype=np.int64)) % p
    return acc


# ---------------------------------------------------------------------------
# Scenario config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Injection:
    kind: str
    args: tuple = ()
    line: int | None = None

    @classmethod
    def make(cls, kind: str, line: int | None = None, /, **args) -> "Injection":
        return cls(kind, tuple(sorted((k, str(v)) for k, v in args.items())), line)

    def get(self, key: str, default=None):
        return dict(self.args).get(key, default)

    @property
    def client(self) -> int | None:
        v = self.get("client")
        return None if v is None else int(v)


_PARAM_FIELDS = {f.name: f for f in dataclasses.fields(ProtocolParams)}


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    params: ProtocolParams
    mode: str = proto.MODE_SH
    consistency: str = cons.MODE_FOLD
    seed: int = 0
    inputs: Mapping[int, np.ndarray] | None = None
    injections: tuple = ()
    round_id: int = 1

    @property
    def n(self) -> int:
        return self.params.n

    def corrupt_clients(self) -> set[int]:
        return {inj.client for inj in self.injections if inj.kind in CORRUPTING}

    def drops(self) -> dict[int, str]:
        return {inj.client: inj.get("target", "both") for inj in self.injections if inj.kind == "drop"}

    def validate(self) -> None:
        if self.mode not in (proto.MODE_SH, proto.MODE_MAL):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.consistency not in (cons.MODE_FOLD, cons.MODE_SEED):
            raise ConfigError(f"unknown consistency mode {self.consistency!r}")
        n = self.n
        for inj in self.injections:
            if inj.kind not in CLIENT_INJECTIONS | SERVER_INJECTIONS:
                raise ConfigError(f"unknown injection {inj.kind!r}", inj.line)
            needs_client = inj.kind in CLIENT_INJECTIONS or inj.kind in ("s1_false_alarm", "s2_withhold")
            if needs_client:
                if inj.client is None or not 1 <= inj.client <= n:
                    raise ConfigError(f"injection {inj.kind} must name a client in 1..{n}", inj.line)
            if inj.kind == "drop" and inj.get("target", "both") not in ("both", "s1", "s2"):
                raise ConfigError("drop target must be both, s1 or s2", inj.line)
            if inj.kind == "equivocate" and inj.get("kind", "large") not in ("small", "large"):
                raise ConfigError("equivocate kind must be small or large", inj.line)
            if inj.kind == "refuse_handshake" and inj.get("server") not in ("s1", "s2"):
                raise ConfigError("refuse_handshake needs server=s1 or server=s2", inj.line)
            if inj.kind == "wrong_seed" and self.mode != proto.MODE_MAL:
                raise ConfigError("wrong_seed needs mal mode", inj.line)
        corrupt = self.corrupt_clients()
        if len(corrupt) > self.params.eta * n + 1e-12:
            raise ConfigError(f"{len(corrupt)} corrupt clients exceed eta * n = {self.params.eta * n:g}")
        if self.inputs is not None:
            for cid, x in self.inputs.items():
                x = np.asarray(x)
                if x.shape != (self.params.L,) or x.min(initial=0) < 0 or x.max(initial=0) >= self.params.p:
                    raise ConfigError(f"input for client {cid} has the wrong shape or range")


def _coerce(name: str, raw: str, line: int):
    f = _PARAM_FIELDS[name]
    typ = str(f.type)
    try:
        if "bool" in typ:
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if "float" in typ:
            return float(raw)
        if "bytes" in typ:
            return bytes.fromhex(raw)
        if raw.lower() == "none":
            return None
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {name}", line) from None


def parse_config(text: str) -> ScenarioConfig:
    preset = "toy"
    scalars: dict[str, str] = {}
    overrides: dict = {}
    injections: list[Injection] = []
    inputs_kind = "random"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "inject":
            tokens = value.split()
            if not tokens:
                raise ConfigError("empty injection", lineno)
            args = {}
            for tok in tokens[1:]:
                if "=" not in tok:
                    raise ConfigError(f"injection argument {tok!r} is not key=value", lineno)
                a, b = tok.split("=", 1)
                args[a] = b
            injections.append(Injection.make(tokens[0], lineno, **args))
        elif key == "drop":
            for tok in filter(None, (v.strip() for v in value.split(","))):
                try:
                    injections.append(Injection.make("drop", lineno, client=int(tok)))
                except ValueError:
                    raise ConfigError(f"bad client id {tok!r}", lineno) from None
        elif key == "preset":
            if value not in ("toy", "default"):
                raise ConfigError("preset must be toy or default", lineno)
            preset = value
        elif key == "inputs":
            inputs_kind = value
        elif key in ("mode", "consistency", "seed", "round"):
            scalars[key] = value
        elif key in _PARAM_FIELDS:
            overrides[key] = _coerce(key, value, lineno)
        else:
            raise ConfigError(f"unknown key {key!r}", lineno)
    try:
        L = overrides.pop("L", 64 if preset == "toy" else 4096)
        n = overrides.pop("n", 8 if preset == "toy" else 64)
        make = toy_params if preset == "toy" else default_params
        params = make(L=L, n=n, **overrides)
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid parameters: {exc}") from None
    try:
        seed = int(scalars.get("seed", "0"), 0)
        round_id = int(scalars.get("round", "1"), 0)
    except ValueError:
        raise ConfigError("seed and round must be integers") from None
    inputs = None
    if inputs_kind == "zero":
        inputs = {i: np.zeros(params.L, dtype=np.int64) for i in range(1, params.n + 1)}
    elif inputs_kind.startswith("const:"):
        try:
            v = int(inputs_kind[6:])
        except ValueError:
            raise ConfigError(f"bad inputs value {inputs_kind!r}") from None
        inputs = {i: np.full(params.L, v, dtype=np.int64) for i in range(1, params.n + 1)}
    elif inputs_kind != "random":
        raise ConfigError(f"inputs must be random, zero or const:V, got {inputs_kind!r}")
    cfg = ScenarioConfig(
        params,
        scalars.get("mode", proto.MODE_SH),
        scalars.get("consistency", cons.MODE_FOLD),
        seed,
        inputs,
        tuple(injections),
        round_id,
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# Transcript
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogEntry:
    step: int
    phase: str
    sender: str
    receiver: str
    summary: str
    nbytes: int


@dataclass(eq=False)
class Outcome:
    status: str
    x_sum: np.ndarray | None = None
    verdict: proto.BlameVerdict | None = None
    valid_set: tuple = ()
    detail: str = ""

    @property
    def checksum(self) -> str | None:
        if self.x_sum is None:
            return None
        return hashlib.sha256(np.asarray(self.x_sum, dtype="<i8").tobytes()).hexdigest()[:16]

    def describe(self) -> str:
        if self.status == STATUS_SUCCESS:
            return f"Success sum={self.checksum}"
        if self.status == STATUS_BOTTOM:
            return "Bottom (below threshold)"
        if self.status == STATUS_ABORT:
            return str(self.verdict)
        return f"Error: {self.detail}"


def _party(pid: int) -> str:
    if pid == proto.S1_ID:
        return "s1"
    if pid == proto.S2_ID:
        return "s2"
    return f"client:{pid}"


class TranscriptLog:
    """Ordered message log with per-party timing and byte counters."""

    def __init__(self):
        self.entries: list[LogEntry] = []
        self.outcome: Outcome | None = None
        self.seconds: dict[str, dict[str, float]] = {}
        self.sent: dict[str, dict[str, int]] = {}
        self.received: dict[str, dict[str, int]] = {}
        self.trials: dict[int, int] = {}
        self.reasons: dict[str, dict[int, str]] = {}
        self.directory: proto.PublicKeyDirectory | None = None

    def add_message(self, phase: str, sender: str, receiver: str, summary: str, nbytes: int) -> None:
        self.entries.append(LogEntry(len(self.entries) + 1, phase, sender, receiver, summary, nbytes))
        self.sent.setdefault(sender, {}).setdefault(phase, 0)
        self.received.setdefault(receiver, {}).setdefault(phase, 0)
        self.sent[sender][phase] += nbytes
        self.received[receiver][phase] += nbytes

    @contextmanager
    def timed(self, party: str, phase: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            bucket = self.seconds.setdefault(party, {})
            bucket[phase] = bucket.get(phase, 0.0) + time.perf_counter() - start

    def party_seconds(self, party: str, phase: str | None = None) -> float:
        b = self.seconds.get(party, {})
        return sum(b.values()) if phase is None else b.get(phase, 0.0)

    def bytes_sent(self, party: str, phase: str | None = None) -> int:
        b = self.sent.get(party, {})
        return sum(b.values()) if phase is None else b.get(phase, 0)

    def bytes_received(self, party: str, phase: str | None = None) -> int:
        b = self.received.get(party, {})
        return sum(b.values()) if phase is None else b.get(phase, 0)

    def clients(self) -> list[str]:
        names = set(self.seconds) | set(self.sent)
        return sorted((p for p in names if p.startswith("client:")), key=lambda s: int(s.split(":")[1]))

    def to_records(self, include_timing: bool = False) -> list[dict]:
        recs = [dict(type="message", **dataclasses.asdict(e)) for e in self.entries]
        o = self.outcome
        if o is not None:
            rec = {"type": "outcome", "status": o.status, "valid_set": list(o.valid_set), "checksum": o.checksum, "detail": o.detail}
            if o.verdict is not None:
                rec["verdict"] = str(o.verdict)
                rec["verdict_reason"] = o.verdict.reason
            recs.append(rec)
        for side in sorted(self.reasons):
            recs.append({"type": "reasons", "server": side, "reasons": {str(k): v for k, v in sorted(self.reasons[side].items())}})
        recs.append({"type": "trials", "trials": {str(k): v for k, v in sorted(self.trials.items())}})
        for party in sorted(set(self.sent) | set(self.received)):
            recs.append({"type": "bytes", "party": party, "sent": self.bytes_sent(party), "received": self.bytes_received(party)})
        if include_timing:
            for party in sorted(self.seconds):
                recs.append({"type": "timing", "party": party, "seconds": self.seconds[party]})
        return recs

    def to_jsonl(self, include_timing: bool = False) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records(include_timing))


class Network:
    """Lock-step in-process network: each delivery is one step of the clock."""

    def __init__(self, log: TranscriptLog):
        self.log = log

    def send(self, msg: proto.SignedMessage, receiver: int, phase: str, summary: str) -> proto.SignedMessage:
        data = msg.to_bytes()
        self.log.add_message(phase, _party(msg.sender), _party(receiver), summary, len(data))
        return proto.SignedMessage.from_bytes(data)


# ---------------------------------------------------------------------------
# Client-side adversaries
# ---------------------------------------------------------------------------


def equivocation_delta(params: ProtocolParams, s: np.ndarray, kind: str, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Shift for the secret S2 sees.

    ``small`` moves one coordinate by one step inside [-B_s, B_s].
    ``large`` is a random direction with |ds|_2 >= scale * sigma_s * sqrt(lam).
    """
    s = as_array(s)
    ds = np.zeros_like(s)
    if kind == "small":
        i = int(rng.integers(s.size))
        ds[i] = 1 if s[i] < params.B_s else -1
        return ds
    target = scale * params.sigma_s * math.sqrt(params.lam)
    g = rng.standard_normal(s.size)
    g *= target / np.linalg.norm(g)
    ds = (np.sign(g) * np.ceil(np.abs(g))).astype(np.int64)
    return ds


def equivocate_package(params: ProtocolParams, pkg: cons.ConsistencyPackage, ds: np.ndarray) -> cons.ConsistencyPackage:
    """Package for s' = s + ds.  In fold mode r* is faked as r* - c* ds so z* is unchanged."""
    s_new = as_array(pkg.s) + ds
    r_star = pkg.r_star
    if pkg.mode == cons.MODE_FOLD:
        r_star = np.asarray(pkg.r_star, dtype=np.int64) - np.asarray(pkg.challenges, dtype=np.int64)[:, None] * ds[None, :]
    return dataclasses.replace(pkg, s=s_new, r_star=r_star)


def forge_proof(
    params: ProtocolParams,
    A: ZqMatrix,
    y,
    x_star: np.ndarray,
    s: np.ndarray,
    e: np.ndarray,
    rng: np.random.Generator,
    adaptive: bool = False,
    oracle=derive_challenge,
) -> EncProof:
    """Compensatory-mask forgery for a statement whose plaintext x* is far out of bounds.

    For every task the forger fixes a short target response z_target and a
    challenge guess c', commits with the x-mask mu = z_target - c' x*, and
    only then learns c from the hash.  The response z_x = mu + c x* is short
    only when c = c'.  With ``adaptive`` the forger answers z_x = z_target
    after seeing c, which breaks the commitment the challenge was hashed from.
    """
    ctx = _context(params, A, y)
    p = params
    comps = {name: sigma for name, sigma, _b, _d in _components(p, KIND_ENC)}
    width = 1 + p.lam + 2 * p.d
    body = np.empty((p.k, p.t, width), dtype=np.int64)
    s = as_array(s)
    for j in range(p.k):
        sl = slice(j * p.d, (j + 1) * p.d)
        xj, ej = np.asarray(x_star[sl], dtype=np.int64), as_array(e)[sl]
        c_guess = rng.integers(-p.C, p.C + 1, size=p.t)
        z_target = sample_gaussian_array(comps["x"], (p.d, p.t), rng)
        R = {
            "s": sample_gaussian_array(comps["s"], (p.lam, p.t), rng),
            "e": sample_gaussian_array(comps["e"], (p.d, p.t), rng),
            "x": z_target - xj[:, None] * c_guess[None, :],
        }
        T, _ = _commit_columns(ctx, j, R)
        rows = _column_bytes(T, p.q)
        for u in range(p.t):
            c = oracle(_task_transcript(ctx, rows[u].tobytes(), None, j, u), p.C)
            z_x = z_target[:, u] if adaptive else R["x"][:, u] + c * xj
            body[j, u, 0] = c
            body[j, u, 1:] = np.concatenate([R["s"][:, u] + c * s, R["e"][:, u] + c * ej, z_x])
    proof = EncProof(KIND_ENC, p.k, p.t, p.lam, p.d, 0, body, b"\0" * 32)
    proof.theta = compute_binder(ctx, proof)
    return proof


def lzksa_statement(params: ProtocolParams, A: ZqMatrix, x_star: np.ndarray, rng: np.random.Generator):
    """(y, s, e) for y = A s + e + Delta x* mod q with an honest-looking s and e."""
    s = rng.integers(-params.B_s, params.B_s + 1, size=params.lam).astype(np.int64)
    e = sample_gaussian_array(params.error_sigma, params.L, rng, bound=params.B_e)
    y = (mod_matmul(A, s) + e + mulmod(np.asarray(x_star, dtype=np.int64), params.Delta, params.q)) % params.q
    return y, s, e


def lzksa_target(params: ProtocolParams, rng: np.random.Generator, factor: float = 100.0) -> np.ndarray:
    """x* with |x*|_inf = factor * gamma * beta_x (random signs, all entries at that magnitude)."""
    mag = int(math.ceil(factor * params.gamma * params.beta_x))
    return rng.choice(np.array([-mag, mag], dtype=np.int64), size=params.L)


def lzksa_forger(
    params: ProtocolParams,
    A: ZqMatrix,
    x_star: np.ndarray,
    trials: int,
    rng: np.random.Generator,
    adaptive: bool = False,
) -> int:
    """Number of forged proofs out of ``trials`` that verify_enc accepts.

    Each trial draws a fresh statement for x* and one Fiat-Shamir-ordered
    forgery.  When |x*| is within the honest bound the forgery reduces to
    the honest prover and is accepted whenever every challenge guess lands.
    """
    accepted = 0
    for _ in range(trials):
        y, s, e = lzksa_statement(params, A, x_star, rng)
        proof = forge_proof(params, A, y, x_star, s, e, rng, adaptive=adaptive)
        if verify_enc(params, A, y, proof):
            accepted += 1
    return accepted


# ---------------------------------------------------------------------------
# Scenario runner
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def cached_setup(params: ProtocolParams, with_ajtai: bool) -> PublicSetup:
    return public_setup(params, with_ajtai)


def _behaviors(cfg: ScenarioConfig) -> tuple[proto.ServerBehavior, proto.ServerBehavior]:
    b1, b2 = proto.ServerBehavior(), proto.ServerBehavior()
    for inj in cfg.injections:
        if inj.kind == "s2_corrupt_sum":
            b2.corrupt_sum = True
        elif inj.kind == "s1_false_alarm":
            b1.false_alarm_client = inj.client
        elif inj.kind == "s2_withhold":
            b2.withhold_client = inj.client
        elif inj.kind == "refuse_handshake":
            (b1 if inj.get("server") == "s1" else b2).refuse_handshake = True
    return b1, b2


def run_scenario(cfg: ScenarioConfig, log: TranscriptLog | None = None) -> TranscriptLog:
    """Drive one round; deterministic in (config, seed) apart from wall-clock timings."""
    log = log or TranscriptLog()
    try:
        cfg.validate()
        _run(cfg, log)
    except ConfigError:
        raise
    except Exception as exc:  # scenario failures become outcome records
        log.outcome = Outcome(STATUS_ERROR, detail=f"{type(exc).__name__}: {exc}")
    return log


def _run(cfg: ScenarioConfig, log: TranscriptLog) -> None:
    p, mode, cm = cfg.params, cfg.mode, cfg.consistency
    rng = np.random.default_rng(cfg.seed)
    setup = cached_setup(p, mode == proto.MODE_MAL)
    net = Network(log)
    directory = proto.PublicKeyDirectory()
    log.directory = directory
    k1, k2 = proto.KeyPair.generate(rng), proto.KeyPair.generate(rng)
    directory.register(proto.S1_ID, k1.public)
    directory.register(proto.S2_ID, k2.public)
    b1, b2 = _behaviors(cfg)
    rnd = cfg.round_id
    s1 = proto.Server1(p, setup, mode, cm, directory, k1, rnd, b1)
    s2 = proto.Server2(p, setup, mode, cm, directory, k2, rnd, b2)

    ids = list(range(1, p.n + 1))
    inputs = cfg.inputs or {i: rng.integers(0, p.p, size=p.L, dtype=np.int64) for i in ids}
    drops = cfg.drops()
    by_client: dict[int, list[Injection]] = {}
    for inj in cfg.injections:
        if inj.client is not None and inj.kind in CLIENT_INJECTIONS:
            by_client.setdefault(inj.client, []).append(inj)

    # Phase 1: submissions
    for cid in ids:
        bundle = proto.make_client_bundle(p, cid, inputs[cid], rng, mode)
        directory.register(cid, bundle.key.public)
        target = drops.get(cid)
        if target == "both":
            continue
        party = _party(cid)
        try:
            with log.timed(party, "phase1"):
                sub = proto.client_prepare(p, setup, bundle, mode, cm, rng)
                _apply_client_injections(p, setup, bundle, sub, by_client.get(cid, ()), rng)
                m1, m2 = proto.client_sign(bundle, rnd, sub)
        except RestartLimitExceeded:
            continue
        log.trials[cid] = sub.trials
        if target != "s1":
            msg = net.send(m1, proto.S1_ID, "phase1", "ciphertext+proof")
            with log.timed("s1", "phase2"):
                s1.receive_client(msg)
        if target != "s2":
            msg = net.send(m2, proto.S2_ID, "phase1", f"consistency-{cm}")
            with log.timed("s2", "phase1"):
                s2.receive_client(msg)

    # Phase 2: local checks, digests, handshake
    with log.timed("s2", "phase2"):
        V2, r2 = s2.phase2(ids)
    if mode == proto.MODE_SH:
        with log.timed("s2", "phase2"):
            rep = s2.digest_report(V2)
        rep = net.send(rep, proto.S1_ID, "phase2", "digest-report")
        with log.timed("s1", "phase2"):
            s1.receive_digest_report(rep)
    with log.timed("s1", "phase2"):
        V1, r1 = s1.phase2(ids)
    log.reasons = {"s1": r1, "s2": r2}

    judge = dict(mode=mode, consistency=cm)
    try:
        with log.timed("s1", "phase2"):
            sig1 = s1.sign_valid_set(set(V1) & set(V2))
        if sig1 is None:
            raise proto.HandshakeRefused(proto.S1_ID)
        sig1 = net.send(sig1, proto.S2_ID, "phase2", "valid-set-signature")
        with log.timed("s2", "phase2"):
            sig2 = s2.sign_valid_set(set(V1) & set(V2))
        if sig2 is None:
            raise proto.HandshakeRefused(proto.S2_ID, sig1)
        sig2 = net.send(sig2, proto.S1_ID, "phase2", "valid-set-signature")
        members = tuple(sorted(set(V1) & set(V2)))
        vs = proto.ValidSet(rnd, members, sig1, sig2)
    except proto.HandshakeRefused as refusal:
        claim = proto.BlameClaim(proto.S2_ID if refusal.server_id == proto.S1_ID else proto.S1_ID, "handshake")
        verdict = proto.blame(p, setup, directory, claim, None, refusal=refusal, **judge)
        log.outcome = Outcome(STATUS_ABORT, verdict=verdict)
        return

    if len(vs.members) < p.threshold(p.n):
        log.outcome = Outcome(STATUS_BOTTOM, valid_set=vs.members)
        return

    if mode == proto.MODE_MAL:
        with log.timed("s2", "phase2"):
            rep = s2.digest_report(vs.members)
        rep = net.send(rep, proto.S1_ID, "phase2", "digest-report")
        with log.timed("s1", "phase2"):
            s1.receive_digest_report(rep)
            disputed = s1.disputed_clients(vs.members)
        if disputed:
            cid = disputed[0]
            verdict = proto.blame(
                p, setup, directory, proto.BlameClaim(proto.S1_ID, "consistency", cid), vs,
                s1_client_msgs={cid: s1.evidence_for(cid)},
                s2_client_msgs={cid: s2.evidence_for(cid)},
                digest_report=s1.report_msg,
                **judge,
            )
            log.outcome = Outcome(STATUS_ABORT, verdict=verdict, valid_set=vs.members)
            return

    # Phase 3: aggregate and decode
    with log.timed("s2", "phase3"):
        agg = s2.phase3(vs.members)
    agg = net.send(agg, proto.S1_ID, "phase3", "aggregate")
    with log.timed("s1", "phase3"):
        res = s1.finalize(vs.members, agg)
    if res.ok:
        log.outcome = Outcome(STATUS_SUCCESS, x_sum=res.x_sum, valid_set=vs.members)
        return
    verdict = proto.blame(
        p, setup, directory, proto.BlameClaim(proto.S1_ID, "aggregate"), vs,
        s1_client_msgs={cid: s1.evidence_for(cid) for cid in vs.members},
        aggregate=agg,
        **judge,
    )
    log.outcome = Outcome(STATUS_ABORT, verdict=verdict, valid_set=vs.members)


def _apply_client_injections(p, setup, bundle, sub: proto.ClientSubmission, injections, rng) -> None:
    for inj in injections:
        if inj.kind == "equivocate":
            ds = equivocation_delta(p, bundle.s, inj.get("kind", "large"), rng, float(inj.get("scale", 1.0)))
            sub.s2.package = equivocate_package(p, sub.s2.package, ds)
        elif inj.kind == "wrong_seed":
            sub.s2.seed = rng.bytes(len(bundle.seed))
        elif inj.kind == "lzksa":
            x_star = lzksa_target(p, rng, float(inj.get("factor", 100.0)))
            y, s, e = lzksa_statement(p, setup.A, x_star, rng)
            sub.s1.y = y
            sub.s1.proof = forge_proof(p, setup.A, y, x_star, s, e, rng)


# ---------------------------------------------------------------------------
# Adversarial suites
# ---------------------------------------------------------------------------


def equivocation_trial(
    params: ProtocolParams,
    setup: PublicSetup,
    mode: str,
    consistency: str,
    rng: np.random.Generator,
    kind: str = "large",
    scale: float = 1.0,
) -> bool:
    """One client sends s + ds to S2; True when the servers exclude or dispute it."""
    directory = proto.PublicKeyDirectory()
    k1, k2 = proto.KeyPair.generate(rng), proto.KeyPair.generate(rng)
    directory.register(proto.S1_ID, k1.public)
    directory.register(proto.S2_ID, k2.public)
    s1 = proto.Server1(params, setup, mode, consistency, directory, k1)
    s2 = proto.Server2(params, setup, mode, consistency, directory, k2)
    bundle = proto.make_client_bundle(params, 1, rng.integers(0, params.p, params.L), rng, mode)
    directory.register(1, bundle.key.public)
    sub = proto.client_prepare(params, setup, bundle, mode, consistency, rng)
    ds = equivocation_delta(params, bundle.s, kind, rng, scale)
    sub.s2.package = equivocate_package(params, sub.s2.package, ds)
    m1, m2 = proto.client_sign(bundle, 0, sub)
    s1.receive_client(m1)
    s2.receive_client(m2)
    V2, _ = s2.phase2([1])
    if mode == proto.MODE_SH:
        s1.receive_digest_report(s2.digest_report(V2))
    V1, _ = s1.phase2([1])
    members = set(V1) & set(V2)
    if 1 not in members:
        return True
    if mode == proto.MODE_MAL:
        s1.receive_digest_report(s2.digest_report(members))
        return 1 in s1.disputed_clients(members)
    return False


def equivocation_suite(
    trials: int,
    rng: np.random.Generator,
    params: ProtocolParams | None = None,
    mode: str = proto.MODE_SH,
    consistency: str = cons.MODE_FOLD,
    kind: str = "large",
) -> int:
    """Number of undetected equivocations out of ``trials``."""
    params = params or default_params(L=64, n=2)
    setup = cached_setup(params, mode == proto.MODE_MAL)
    return sum(not equivocation_trial(params, setup, mode, consistency, rng, kind) for _ in range(trials))


BLAME_SCENARIOS = (
    ("client equivocates its secret", "inject = equivocate client=3 kind=small", proto.ABORT_CLIENT, 3),
    ("client sends S2 a wrong seed", "inject = wrong_seed client=2", proto.ABORT_CLIENT, 2),
    ("S2 corrupts the aggregate", "inject = s2_corrupt_sum", proto.ABORT_SERVER, proto.S2_ID),
    ("S1 raises a false alarm", "inject = s1_false_alarm client=4", proto.ABORT_SERVER, proto.S1_ID),
    ("S1 refuses the handshake", "inject = refuse_handshake server=s1", proto.ABORT_SERVER, proto.S1_ID),
    ("S2 refuses the handshake", "inject = refuse_handshake server=s2", proto.ABORT_SERVER, proto.S2_ID),
)


@dataclass(frozen=True)
class BlameCase:
    name: str
    expected: str
    verdict: str
    evidence_ok: bool
    honest_blamed: bool

    @property
    def passed(self) -> bool:
        return self.verdict == self.expected and self.evidence_ok and not self.honest_blamed


def blame_suite(seed: int = 0, consistency: str = cons.MODE_FOLD) -> list[BlameCase]:
    """Run the six identifiable-abort scenarios on toy MAL parameters."""
    out = []
    for idx, (name, inject, outcome, party) in enumerate(BLAME_SCENARIOS):
        text = f"preset = toy\nn = 8\nL = 64\nmode = mal\nconsistency = {consistency}\ndelta = 0.125\neta = 0.125\nseed = {seed + idx}\n{inject}\n"
        cfg = parse_config(text)
        log = run_scenario(cfg)
        v = log.outcome.verdict
        expected = str(proto.BlameVerdict(outcome, party))
        got = str(v) if v is not None else log.outcome.describe()
        ev_ok = v is not None and v.verify_evidence(log.directory)
        guilty = {party}
        honest_blamed = v is not None and v.outcome != proto.SUCCESS and v.party not in guilty
        out.append(BlameCase(name, expected, got, ev_ok, honest_blamed))
    return out
