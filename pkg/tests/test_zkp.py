import math

import numpy as np
import pytest
from scipy import stats

from asymagg.lwe_commit import ajtai_commit_blocks, lwe_commit, public_setup, sample_error, sample_rho, sample_secret
from asymagg.params import ProtocolParams, toy_params
from asymagg.ring_core import derive_challenge, expand_mask
from asymagg.zkp import (
    BlockResponse,
    BlockWitness,
    EncProof,
    ExtractionFailed,
    NonDivisibleExtraction,
    ProofFormatError,
    RestartLimitExceeded,
    Witness,
    acceptance_probability,
    block_commitment,
    extract_witness_test_oracle,
    prove_block,
    prove_enc,
    prove_enc_full,
    prove_ext,
    rebind,
    rejection_accept,
    rejection_accept_batch,
    repetition_constant,
    verify_enc,
    verify_ext,
)


def make_statement(params, setup, rng, masked=False):
    s, e = sample_secret(params, rng), sample_error(params, rng)
    x = rng.integers(0, params.p, params.L)
    w = expand_mask(rng.bytes(16), params.L, params.p).entries if masked else None
    y = lwe_commit(params, setup.A, s, e, x, w).y.entries
    return y, Witness(s, e, x, w)


@pytest.fixture(scope="module")
def block_params():
    """k = 4, d = 8, lam = 4, q = 2^16, t = 8."""
    return ProtocolParams(q=1 << 16, p=1 << 4, L=32, lam=4, d=8, m=8, t=8, n=1)


@pytest.fixture(scope="module")
def block_setup(block_params):
    return public_setup(block_params)


@pytest.fixture(scope="module")
def toy_proof(toy, toy_setup):
    rng = np.random.default_rng(100)
    y, wit = make_statement(toy, toy_setup, rng)
    proof, rand = prove_enc_full(toy, toy_setup.A, y, wit, rng)
    return y, wit, proof, rand


# ---------------------------------------------------------------------------
# Rejection sampling
# ---------------------------------------------------------------------------


def test_repetition_constant():
    assert repetition_constant(11.0) == pytest.approx(math.exp(12 / 11 + 1 / 242))
    assert 2.9 < repetition_constant(11.0) < 3.0


def test_zero_shift_accepts_with_rate_one_over_M():
    rng = np.random.default_rng(1)
    M = repetition_constant(11.0)
    z = np.zeros(16)
    rate = np.mean([rejection_accept(z, np.zeros(16), 5.0, rng) for _ in range(10**4)])
    assert abs(rate - 1 / M) < 0.02
    assert acceptance_probability(z, np.zeros(16), 5.0, M) == pytest.approx(1 / M)


def test_acceptance_probability_formula():
    z, v, sigma, M = np.array([3.0, -1.0]), np.array([1.0, 2.0]), 4.0, 2.5
    ref = min(1.0, stats.norm.pdf(z, 0, sigma).prod() / (M * stats.norm.pdf(z, v, sigma).prod()))
    assert acceptance_probability(z, v, sigma, M) == pytest.approx(ref)


def test_rejection_dimension_checks():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError):
        rejection_accept(np.zeros(3), np.zeros(2), 1.0, rng)
    with pytest.raises(ValueError):
        rejection_accept(np.zeros(3), np.zeros(3), 0.0, rng)


def test_accepted_mean_independent_of_shift():
    rng = np.random.default_rng(3)
    dim, sigma = 16, 11.0 * 4.0
    v = np.full(dim, 1.0)
    M = repetition_constant(11.0)
    accepted = []
    while sum(a.shape[0] for a in accepted) < 10**5:
        R = rng.normal(0, sigma, size=(10**5, dim))
        Z = R + v
        keep = rejection_accept_batch(Z, np.broadcast_to(v, Z.shape), sigma, rng, M)
        accepted.append(Z[keep])
    Z = np.concatenate(accepted)[: 10**5]
    assert np.all(np.abs(Z.mean(axis=0)) <= 4 * sigma / math.sqrt(10**5))


# ---------------------------------------------------------------------------
# Completeness, serialization, transcript reconstruction
# ---------------------------------------------------------------------------


def test_honest_proof_verifies(toy, toy_setup, toy_proof):
    y, _wit, proof, rand = toy_proof
    res = verify_enc(toy, toy_setup.A, y, proof)
    assert res and res.reason == "ok"
    assert proof.c.shape == (toy.k, toy.t)
    assert rand.r_s.shape == (toy.k, toy.t, toy.lam)


def test_responses_reproduce_from_masks(toy_proof):
    _y, wit, proof, rand = toy_proof
    assert np.array_equal(proof.z_s, rand.r_s + proof.c[:, :, None] * wit.s[None, None, :])


def test_many_honest_round_trips(toy, toy_setup):
    rng = np.random.default_rng(4)
    for _ in range(100):
        y, wit = make_statement(toy, toy_setup, rng)
        assert verify_enc(toy, toy_setup.A, y, prove_enc(toy, toy_setup.A, y, wit, rng))


def test_serialization_round_trip(toy_proof):
    _y, _w, proof, _r = toy_proof
    data = proof.to_bytes()
    assert len(data) == proof.nbytes
    again = EncProof.from_bytes(data)
    assert np.array_equal(again.body, proof.body) and again.theta == proof.theta
    assert data[0] == 1
    assert int.from_bytes(data[-32 - 8 : -32], "little", signed=True) == int(proof.body[-1, -1, -1])
    with pytest.raises(ProofFormatError):
        EncProof.from_bytes(data[:-1])
    with pytest.raises(ProofFormatError):
        EncProof.from_bytes(b"\x02" + data[1:])


def test_verifier_reconstructs_prover_commitments_bit_exactly(toy, toy_setup):
    rng = np.random.default_rng(5)
    y, wit = make_statement(toy, toy_setup, rng)
    seen_prover, seen_verifier = set(), []

    def prover_oracle(tr, C):
        seen_prover.add(tr)
        return derive_challenge(tr, C)

    def verifier_oracle(tr, C):
        seen_verifier.append(tr)
        return derive_challenge(tr, C)

    proof = prove_enc(toy, toy_setup.A, y, wit, rng, oracle=prover_oracle)
    assert verify_enc(toy, toy_setup.A, y, proof, oracle=verifier_oracle)
    assert len(seen_verifier) == toy.k * toy.t
    assert all(tr in seen_prover for tr in seen_verifier)


def test_seeded_masks_are_reproducible(toy, toy_setup):
    from asymagg.ring_core import seeded_secret_mask

    rng = np.random.default_rng(6)
    y, wit = make_statement(toy, toy_setup, rng)
    seed = b"\x33" * 16
    proof, rand = prove_enc_full(toy, toy_setup.A, y, wit, rng, rs_seed=seed)
    assert verify_enc(toy, toy_setup.A, y, proof)
    for j in range(toy.k):
        for u in range(toy.t):
            r = seeded_secret_mask(toy.sigma_s, toy.lam, seed, u, j, int(rand.attempts[j, u]))
            assert np.array_equal(r, rand.r_s[j, u])


# ---------------------------------------------------------------------------
# Soundness surrogates
# ---------------------------------------------------------------------------


def test_norm_violation_rejected(toy, toy_setup, toy_proof):
    y, _w, proof, _r = toy_proof
    bad = proof.copy()
    bad.z_x[1, 2] *= 10
    bad = rebind(toy, toy_setup.A, y, bad)
    res = verify_enc(toy, toy_setup.A, y, bad)
    assert not res and res.reason.startswith("NormViolation")


def test_single_entry_mutations_rejected(toy, toy_setup, toy_proof):
    y, _w, proof, _r = toy_proof
    rng = np.random.default_rng(7)
    accepted = 0
    for _ in range(300):
        bad = proof.copy()
        j, u, i = rng.integers(toy.k), rng.integers(toy.t), rng.integers(1, proof.width)
        bad.body[j, u, i] += int(rng.choice([-1, 1]))
        accepted += bool(verify_enc(toy, toy_setup.A, y, bad))
    assert accepted == 0


def test_rebound_mutation_passes_one_task_check_about_a_third(toy, toy_setup, toy_proof):
    """With theta recomputed, a mutated task survives only if its rehashed challenge matches (1 in 2C+1)."""
    y, _w, proof, _r = toy_proof
    rng = np.random.default_rng(8)
    trials, accepted = 600, 0
    for _ in range(trials):
        bad = proof.copy()
        j, u = rng.integers(toy.k), rng.integers(toy.t)
        bad.z_e[j, u, rng.integers(toy.d)] += 1
        accepted += bool(verify_enc(toy, toy_setup.A, y, rebind(toy, toy_setup.A, y, bad)))
    assert abs(accepted / trials - 1 / 3) < 0.06


def test_wrong_statement_rejected(toy, toy_setup, toy_proof):
    y, _w, proof, _r = toy_proof
    y2 = y.copy()
    y2[0] = (y2[0] + 1) % toy.q
    assert not verify_enc(toy, toy_setup.A, y2, proof)
    assert not verify_enc(toy, toy_setup.A, y2, rebind(toy, toy_setup.A, y2, proof.copy()))


def test_challenge_out_of_range_rejected(toy, toy_setup, toy_proof):
    y, _w, proof, _r = toy_proof
    bad = proof.copy()
    bad.c[0, 0] = 2
    res = verify_enc(toy, toy_setup.A, y, rebind(toy, toy_setup.A, y, bad))
    assert res.reason == "ChallengeOutOfRange"


# ---------------------------------------------------------------------------
# Ext relation
# ---------------------------------------------------------------------------


def test_ext_proof_round_trip():
    params = toy_params(L=32, n=4)
    setup = public_setup(params, with_ajtai=True)
    rng = np.random.default_rng(9)
    y, wit = make_statement(params, setup, rng, masked=True)
    rho = sample_rho(params, rng)
    wit = Witness(wit.s, wit.e, wit.x, wit.w, rho)
    com = ajtai_commit_blocks(params, setup.ajtai, wit.s, wit.w, rho).values
    proof = prove_ext(params, setup.A, y, wit, rng, setup.ajtai, com)
    assert verify_ext(params, setup.A, y, proof, setup.ajtai, com)
    assert proof.z_w.shape == (params.k, params.t, params.d)
    bad_com = com.copy()
    bad_com[0, 0] = (bad_com[0, 0] + 1) % params.q
    assert not verify_ext(params, setup.A, y, proof, setup.ajtai, bad_com)
    assert not verify_ext(params, setup.A, y, rebind(params, setup.A, y, proof.copy(), setup.ajtai, bad_com), setup.ajtai, bad_com)
    assert not verify_enc(params, setup.A, y, proof)


# ---------------------------------------------------------------------------
# Restarts
# ---------------------------------------------------------------------------


def test_restart_counts_uncorrelated_across_blocks(toy, toy_setup):
    rng = np.random.default_rng(10)
    a, b = [], []
    while len(a) < 10**4:
        y, wit = make_statement(toy, toy_setup, rng)
        _proof, rand = prove_enc_full(toy, toy_setup.A, y, wit, rng)
        att = rand.attempts
        for j in range(toy.k - 1):
            a.extend(att[j].tolist())
            b.extend(att[j + 1].tolist())
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05
    assert np.mean(np.array(a) + 1) == pytest.approx(toy.M, rel=0.1)


def test_restart_limit(block_params, block_setup):
    p = block_params
    rng = np.random.default_rng(11)
    A_j = block_setup.A.rows(0, p.d)
    huge = BlockWitness(np.zeros(p.lam, dtype=np.int64), np.zeros(p.d, dtype=np.int64), np.full(p.d, 10**6))
    # a zero challenge hides the witness entirely, so force c = 1
    with pytest.raises(RestartLimitExceeded):
        prove_block(p, A_j, np.zeros(p.d, dtype=np.int64), huge, 0, rng, oracle=lambda tr, C: 1)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


def _forced_pair(p, setup, rng_seed_base):
    """Two transcripts of block 0 with challenges +1 and -1 sharing t_bar."""
    rng = np.random.default_rng(12)
    s = sample_secret(p, rng)
    e = sample_error(p, rng)
    x = rng.integers(0, p.p, p.L)
    y = lwe_commit(p, setup.A, s, e, x).y.entries
    A_j = setup.A.rows(0, p.d)
    bw = BlockWitness(s, e[: p.d], x[: p.d])
    for seed in range(rng_seed_base, rng_seed_base + 500):
        r1, _ = prove_block(p, A_j, y[: p.d], bw, 0, np.random.default_rng(seed), oracle=lambda tr, C: 1)
        r2, _ = prove_block(p, A_j, y[: p.d], bw, 0, np.random.default_rng(seed), oracle=lambda tr, C: -1)
        if np.array_equal(block_commitment(p, A_j, y[: p.d], r1), block_commitment(p, A_j, y[: p.d], r2)):
            return A_j, y[: p.d], bw, r1, r2
    raise AssertionError("no shared commitment found")


def test_extraction_recovers_witness(block_params, block_setup):
    p = block_params
    A_j, y_j, bw, r1, r2 = _forced_pair(p, block_setup, 0)
    s_bar, e_bar, x_bar = extract_witness_test_oracle(p, A_j, y_j, r1, r2)
    assert np.array_equal(s_bar, bw.s) and np.array_equal(e_bar, bw.e) and np.array_equal(x_bar, bw.x)
    lhs = (A_j @ s_bar + e_bar + p.Delta * x_bar) % p.q
    assert np.array_equal(lhs, y_j)
    assert np.linalg.norm(x_bar) <= 2 * p.beta_x / 2
    assert np.linalg.norm(x_bar) <= p.gamma * np.linalg.norm(bw.x) + 1e-9


def test_extraction_preconditions(block_params, block_setup):
    p = block_params
    A_j, y_j, bw, r1, r2 = _forced_pair(p, block_setup, 0)
    with pytest.raises(ValueError):
        extract_witness_test_oracle(p, A_j, y_j, r1, r1)
    other = BlockResponse(-1, r2.z_s, r2.z_e + 1, r2.z_x)
    with pytest.raises(ExtractionFailed):
        extract_witness_test_oracle(p, A_j, y_j, r1, other)


def test_extraction_non_divisible(block_params, block_setup):
    """A kernel shift (0, -Delta e_i, e_i) keeps t_bar fixed but makes the x difference odd."""
    p = block_params
    A_j, y_j, _bw, r1, r2 = _forced_pair(p, block_setup, 0)
    unit = np.zeros(p.d, dtype=np.int64)
    unit[0] = 1
    shifted = BlockResponse(r2.c, r2.z_s, r2.z_e + p.Delta * unit, r2.z_x - unit)
    assert np.array_equal(block_commitment(p, A_j, y_j, shifted), block_commitment(p, A_j, y_j, r1))
    with pytest.raises(NonDivisibleExtraction):
        extract_witness_test_oracle(p, A_j, y_j, r1, shifted)
