import json

import numpy as np
import pytest

from asymagg import consistency as cons
from asymagg import harness as h
from asymagg import protocol as proto
from asymagg.params import default_params, toy_params
from asymagg.zkp import verify_enc

# ---------------------------------------------------------------------------
# Ideal functionality
# ---------------------------------------------------------------------------


def test_threshold_count():
    assert h.threshold_count(10, 0.3, 0.0) == 7
    assert h.threshold_count(8, 0.125, 0.125) == 6
    assert h.threshold_count(10, 0.1, 0.1) == 8


def test_ideal_aggregate_examples():
    inputs = {i: np.array([i, 2 * i]) for i in range(1, 11)}
    got = h.ideal_aggregate(inputs, [], [8, 9, 10], 0.3, 0.0, 17)
    assert got.tolist() == [28 % 17, 56 % 17]
    assert h.ideal_aggregate(inputs, [], [7, 8, 9, 10], 0.3, 0.0, 17) is None
    zeros = {i: np.zeros(3, dtype=np.int64) for i in range(1, 5)}
    assert h.ideal_aggregate(zeros, [], [], 0.0, 0.0, 5).tolist() == [0, 0, 0]


def test_ideal_aggregate_validity_and_limits():
    inputs = {i: np.array([1]) for i in range(1, 11)}
    got = h.ideal_aggregate(inputs, [3], [], 0.1, 0.1, 100, valid=lambda i: i != 3)
    assert got.tolist() == [9]
    with pytest.raises(ValueError):
        h.ideal_aggregate(inputs, [], [], 0.2, 0.2, 100)
    with pytest.raises(ValueError):
        h.ideal_aggregate(inputs, [1, 2], [], 0.1, 0.1, 100)


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def test_parse_config_full():
    cfg = h.parse_config(
        "preset = toy  # comment\nn = 8\nL = 32\nmode = mal\nconsistency = seed\nseed = 0x10\n"
        "delta = 0.125\neta = 0.125\ndrop = 3, 5\ninject = equivocate client=2 kind=small\n"
        "inject = refuse_handshake server=s2\nB_e = 2\n"
    )
    assert (cfg.n, cfg.params.L, cfg.mode, cfg.consistency, cfg.seed) == (8, 32, "mal", "seed", 16)
    assert cfg.params.B_e == 2 and cfg.params.q == 1 << 20
    assert cfg.drops() == {3: "both", 5: "both"}
    assert cfg.corrupt_clients() == {2}


@pytest.mark.parametrize(
    "text, line",
    [
        ("n = 4\nbogus = 1\n", 2),
        ("n = 4\n\nnot a pair\n", 3),
        ("inject = teleport client=1\n", 1),
        ("inject = equivocate\n", 1),
        ("inject = equivocate client=1 kind=medium\n", 1),
        ("inject = refuse_handshake\n", 1),
        ("inject = wrong_seed client=1\n", 1),
        ("drop = x\n", 1),
        ("preset = huge\n", 1),
        ("q = banana\n", 1),
        ("inject = drop client=1 target=s3\n", 1),
    ],
)
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(h.ConfigError) as exc:
        h.parse_config(text)
    assert exc.value.line == line
    assert str(exc.value).startswith(f"line {line}:")


def test_config_errors_without_line():
    with pytest.raises(h.ConfigError):
        h.parse_config("n = 8\ninject = equivocate client=1\n")  # eta = 0 admits no corrupt client
    with pytest.raises(h.ConfigError):
        h.parse_config("mode = both\n")
    with pytest.raises(h.ConfigError):
        h.parse_config("inputs = ones\n")
    with pytest.raises(h.ConfigError):
        h.load_config("/nonexistent/scenario.cfg")


def test_config_inputs():
    cfg = h.parse_config("n = 3\nL = 16\ninputs = const:7\n")
    assert all(x.tolist() == [7] * 16 for x in cfg.inputs.values())
    assert h.parse_config("inputs = zero\n").inputs[1].sum() == 0


# ---------------------------------------------------------------------------
# Scenario runner
# ---------------------------------------------------------------------------


def _run(text):
    return h.run_scenario(h.parse_config(text))


def test_honest_run_matches_reference():
    cfg = h.parse_config("n = 5\nL = 32\ninputs = const:3\nseed = 2\n")
    log = h.run_scenario(cfg)
    assert log.outcome.status == h.STATUS_SUCCESS
    assert log.outcome.x_sum.tolist() == [15] * 32
    assert log.outcome.valid_set == (1, 2, 3, 4, 5)
    assert set(log.trials) == {1, 2, 3, 4, 5}


def test_byte_counters_equal_wire_lengths():
    log = _run("n = 3\nL = 32\nseed = 3\n")
    for party in set(log.sent) | set(log.received):
        assert log.bytes_sent(party) == sum(e.nbytes for e in log.entries if e.sender == party)
        assert log.bytes_received(party) == sum(e.nbytes for e in log.entries if e.receiver == party)
    assert [e.step for e in log.entries] == list(range(1, len(log.entries) + 1))
    assert log.clients() == ["client:1", "client:2", "client:3"]


def test_runs_are_deterministic():
    text = "n = 6\nL = 32\nmode = mal\nseed = 9\ndelta = 0.125\neta = 0.125\ndrop = 4\n"
    a, b = _run(text).to_jsonl(), _run(text).to_jsonl()
    assert a == b
    recs = [json.loads(line) for line in a.splitlines()]
    assert {r["type"] for r in recs} >= {"message", "outcome", "trials", "bytes", "reasons"}


def test_dropout_below_threshold_is_bottom():
    log = _run("n = 8\nL = 32\ndelta = 0.25\ndrop = 1, 2, 3\n")
    assert log.outcome.status == h.STATUS_BOTTOM
    assert log.outcome.describe().startswith("Bottom")


def test_partial_drop_excludes_client():
    log = _run("n = 8\nL = 32\ndelta = 0.25\ninputs = const:1\ninject = drop client=2 target=s2\n")
    assert log.outcome.status == h.STATUS_SUCCESS
    assert log.outcome.valid_set == (1, 3, 4, 5, 6, 7, 8)
    assert log.outcome.x_sum.tolist() == [7] * 32
    assert log.reasons["s2"][2] == "Missing"


@pytest.mark.parametrize("mode", [proto.MODE_SH, proto.MODE_MAL])
def test_fold_and_seed_accept_the_same_honest_set(mode):
    out = {}
    for cm in (cons.MODE_FOLD, cons.MODE_SEED):
        log = _run(f"n = 8\nL = 32\nmode = {mode}\nconsistency = {cm}\nseed = 4\ndelta = 0.125\ndrop = 5\n")
        out[cm] = (log.outcome.status, log.outcome.valid_set)
    assert out[cons.MODE_FOLD] == out[cons.MODE_SEED] == (h.STATUS_SUCCESS, (1, 2, 3, 4, 6, 7, 8))


EQUIVOCATE = "n = 8\nL = 32\ndelta = 0.125\neta = 0.125\nseed = 5\nconsistency = {cm}\ninject = equivocate client=3 kind={kind}\n"


def test_sh_large_equivocation_excluded_in_fold_mode():
    log = _run(EQUIVOCATE.format(cm=cons.MODE_FOLD, kind="large"))
    assert log.outcome.status == h.STATUS_SUCCESS
    assert 3 not in log.outcome.valid_set
    assert log.reasons["s2"][3] in ("SecretNorm", "FoldNorm") or log.reasons["s1"][3] == "DigestMismatch"


def test_sh_small_equivocation_slips_past_fold_but_not_seed():
    """A one-step shift keeps the faked r* inside the fold bound; the seed digest still catches it."""
    fold = _run(EQUIVOCATE.format(cm=cons.MODE_FOLD, kind="small"))
    assert fold.outcome.status == h.STATUS_SUCCESS and 3 in fold.outcome.valid_set
    seed = _run(EQUIVOCATE.format(cm=cons.MODE_SEED, kind="small"))
    assert seed.outcome.status == h.STATUS_SUCCESS and 3 not in seed.outcome.valid_set
    assert seed.reasons["s1"][3] == "DigestMismatch"


def test_lzksa_client_excluded():
    log = _run("n = 8\nL = 32\ndelta = 0.125\neta = 0.125\ninject = lzksa client=5\n")
    assert log.outcome.status == h.STATUS_SUCCESS
    assert log.reasons["s1"][5] == "ProofInvalid"


def test_outcome_describe():
    assert h.Outcome(h.STATUS_ERROR, detail="boom").describe() == "Error: boom"
    o = h.Outcome(h.STATUS_SUCCESS, x_sum=np.array([1, 2]))
    assert o.describe() == f"Success sum={o.checksum}" and len(o.checksum) == 16


# ---------------------------------------------------------------------------
# Adversaries
# ---------------------------------------------------------------------------


def test_equivocation_delta():
    params = default_params(L=64, n=2)
    rng = np.random.default_rng(1)
    s = np.zeros(params.lam, dtype=np.int64)
    small = h.equivocation_delta(params, s, "small", rng)
    assert np.abs(small).sum() == 1
    for _ in range(20):
        big = h.equivocation_delta(params, s, "large", rng)
        assert np.linalg.norm(big) >= params.sigma_s * np.sqrt(params.lam)


def test_equivocate_package_keeps_fold_response():
    params = toy_params(L=32, n=2)
    rng = np.random.default_rng(2)
    setup = h.cached_setup(params, False)
    b = proto.make_client_bundle(params, 1, np.zeros(params.L, dtype=np.int64), rng)
    sub = proto.client_prepare(params, setup, b, proto.MODE_SH, cons.MODE_FOLD, rng)
    pkg = sub.s2.package
    ds = h.equivocation_delta(params, b.s, "small", rng)
    fake = h.equivocate_package(params, pkg, ds)
    z = pkg.r_star + pkg.challenges[:, None] * pkg.s[None, :]
    z_fake = fake.r_star + fake.challenges[:, None] * fake.s[None, :]
    assert np.array_equal(z, z_fake)
    assert np.array_equal(fake.s - pkg.s, ds)


def test_forger_degenerate_case_accepts():
    """With x* inside the honest range and every challenge fixed to 0, the forgery is an honest-looking proof."""
    params = toy_params(L=32, n=1)
    setup = h.cached_setup(params, False)
    rng = np.random.default_rng(3)
    x_star = rng.integers(0, params.p, params.L)
    y, s, e = h.lzksa_statement(params, setup.A, x_star, rng)
    calls = []

    def zero(tr, C):
        calls.append(tr)
        return 0

    proof = h.forge_proof(params, setup.A, y, x_star, s, e, rng, oracle=zero)
    assert len(calls) == params.k * params.t
    assert verify_enc(params, setup.A, y, proof, oracle=zero)
    assert not verify_enc(params, setup.A, y, proof)


def test_lzksa_forger_rejected_at_toy_scale():
    params = toy_params(L=32, n=1)
    setup = h.cached_setup(params, False)
    rng = np.random.default_rng(5)
    x_star = h.lzksa_target(params, rng)
    assert np.abs(x_star).min() == np.abs(x_star).max() >= 100 * params.gamma * params.beta_x
    assert h.lzksa_forger(params, setup.A, x_star, 200, rng) == 0
    assert h.lzksa_forger(params, setup.A, x_star, 50, rng, adaptive=True) == 0


def test_equivocation_suites_small():
    rng = np.random.default_rng(6)
    assert h.equivocation_suite(20, rng) == 0
    assert h.equivocation_suite(20, rng, consistency=cons.MODE_SEED) == 0
    assert h.equivocation_suite(10, rng, params=toy_params(L=32, n=2), mode=proto.MODE_MAL) == 0


def test_blame_suite_seed_mode():
    cases = h.blame_suite(seed=11, consistency=cons.MODE_SEED)
    assert len(cases) == len(h.BLAME_SCENARIOS) == 6
    assert all(c.passed for c in cases), [(c.name, c.verdict) for c in cases]
