import math
import struct

import numpy as np
import pytest

from asymagg import consistency as cons
from asymagg import protocol as proto
from asymagg.harness import cached_setup, equivocation_delta
from asymagg.lwe_commit import lwe_commit, sample_error, sample_secret
from asymagg.params import ProtocolParams, default_params
from asymagg.ring_core import prg_bits
from asymagg.zkp import KIND_ENC, EncProof, Witness, prove_enc_full


def test_fold_vectors_examples():
    r = np.array([[[2, -1]], [[7, 7]]])  # (k=2, t=1, lam=2)
    assert cons.fold_vectors(np.array([[1], [0]]), r).tolist() == [[2, -1]]
    assert cons.fold_vectors(np.array([[1], [1]]), r).tolist() == [[9, 6]]


def test_fold_coefficients_read_row_major():
    theta = b"\x42" * 32
    alpha = cons.FoldCoefficients.from_theta(theta, 3, 5).alpha
    assert alpha.shape == (3, 5)
    assert alpha.ravel().tolist() == prg_bits(theta, 15).tolist()
    assert np.array_equal(alpha, cons.FoldCoefficients.from_theta(theta, 3, 5).alpha)


# ---------------------------------------------------------------------------
# Hand-evaluated lam = 1 instance
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def unit():
    """lam = 1, k = 2, t = 1."""
    return ProtocolParams(q=1 << 16, p=1 << 4, L=2, lam=1, d=1, m=1, t=1, n=1, B_e=1)


@pytest.fixture(scope="module")
def theta_ones():
    """A binder whose two fold bits are both 1."""
    for i in range(256):
        theta = bytes([i]) * 32
        if cons.FoldCoefficients.from_theta(theta, 2, 1).alpha.ravel().tolist() == [1, 1]:
            return theta
    raise AssertionError("no suitable theta")


def test_hand_evaluated_digests(unit, theta_ones):
    s = np.array([1])
    c = np.array([[1], [-1]])
    r = np.array([[[3]], [[-2]]])
    fr = cons.client_fold(theta_ones, r, unit)
    assert fr.r_star.tolist() == [[1]] and not fr.needs_restart
    # S2 side: c* = 0, z* = r* = [1]
    pkg = cons.ConsistencyPackage(cons.MODE_FOLD, s, theta_ones, np.array([0]), r_star=fr.r_star)
    expected = cons.fold_digest(theta_ones, np.array([0]), np.array([[1]]))
    assert cons.s2_fold_digest(pkg, unit) == expected
    # S1 side: z_1 = 3 + 1 = 4, z_2 = -2 - 1 = -3, folded to 1
    body = np.zeros((2, 1, 4), dtype=np.int64)
    body[:, 0, 0] = c[:, 0]
    body[:, 0, 1] = [4, -3]
    proof = EncProof(KIND_ENC, 2, 1, 1, 1, 0, body, theta_ones)
    assert cons.s1_fold_digest(proof, theta_ones, unit) == expected


def test_zero_secret_gives_z_equal_r(unit, theta_ones):
    r_star = np.array([[5]])
    pkg = cons.ConsistencyPackage(cons.MODE_FOLD, np.array([0]), theta_ones, np.array([1]), r_star=r_star)
    assert cons.s2_fold_digest(pkg, unit) == cons.fold_digest(theta_ones, np.array([1]), r_star)


def test_fold_norm_violation(unit, theta_ones):
    big = np.array([[int(unit.fold_bound) + 1]])
    pkg = cons.ConsistencyPackage(cons.MODE_FOLD, np.array([0]), theta_ones, np.array([0]), r_star=big)
    with pytest.raises(cons.NormViolation):
        cons.s2_fold_digest(pkg, unit)
    assert cons.client_fold(theta_ones, np.array([[[big[0, 0]]], [[0]]]), unit).needs_restart


# ---------------------------------------------------------------------------
# Honest proofs
# ---------------------------------------------------------------------------


def honest_proof(params, setup, rng, rs_seed=None):
    s, e = sample_secret(params, rng), sample_error(params, rng)
    x = rng.integers(0, params.p, params.L)
    y = lwe_commit(params, setup.A, s, e, x).y.entries
    proof, rand = prove_enc_full(params, setup.A, y, Witness(s, e, x), rng, rs_seed=rs_seed)
    return s, proof, rand


def test_algebraic_identity(toy, toy_setup):
    rng = np.random.default_rng(1)
    for _ in range(20):
        s, proof, rand = honest_proof(toy, toy_setup, rng)
        alpha = cons.FoldCoefficients.from_theta(proof.theta, toy.k, toy.t).alpha
        lhs = cons.fold_vectors(alpha, proof.z_s)
        rhs = cons.fold_vectors(alpha, rand.r_s) + cons.fold_challenges(alpha, proof.c)[:, None] * s[None, :]
        assert np.array_equal(lhs, rhs)


def test_honest_fold_digests_match(toy, toy_setup):
    rng = np.random.default_rng(2)
    s, proof, rand = honest_proof(toy, toy_setup, rng)
    fr = cons.client_fold(proof.theta, rand.r_s, toy)
    pkg = cons.make_fold_package(s, proof.theta, proof, rand, fr.r_star)
    assert cons.s2_fold_digest(pkg, toy) == cons.s1_fold_digest(proof, proof.theta, toy)
    assert cons.s2_digest(pkg, toy) == cons.s1_digest(proof, toy, cons.MODE_FOLD)


def test_package_serialization(toy, toy_setup):
    rng = np.random.default_rng(3)
    s, proof, rand = honest_proof(toy, toy_setup, rng, rs_seed=b"\x07" * 16)
    fr = cons.client_fold(proof.theta, rand.r_s, toy)
    for pkg in (cons.make_fold_package(s, proof.theta, proof, rand, fr.r_star), cons.make_seed_package(s, proof, rand)):
        data = pkg.to_bytes()
        back = cons.ConsistencyPackage.from_bytes(data)
        assert back.mode == pkg.mode and back.to_bytes() == data
        with pytest.raises(cons.PackageFormatError):
            cons.ConsistencyPackage.from_bytes(data + b"\0")
        with pytest.raises(cons.PackageFormatError):
            cons.ConsistencyPackage.from_bytes(data[:-1])
    seed_pkg = cons.make_seed_package(s, proof, rand)
    # header, s (8 lam), seed, one byte per attempt, theta, 8 k t challenges
    assert len(seed_pkg.to_bytes()) == struct.calcsize("<BBIIII") + 8 * toy.lam + 16 + toy.k * toy.t + 32 + 8 * toy.k * toy.t


def test_equivocation_without_faking_is_caught(toy, toy_setup):
    """s' = s + ds with the honest r*: digests differ unless every c*_u is 0."""
    rng = np.random.default_rng(4)
    caught = 0
    for _ in range(1000):
        s, proof, rand = honest_proof(toy, toy_setup, rng)
        fr = cons.client_fold(proof.theta, rand.r_s, toy)
        pkg = cons.make_fold_package(s, proof.theta, proof, rand, fr.r_star)
        pkg.s = pkg.s.copy()
        pkg.s[int(rng.integers(toy.lam))] += 1
        try:
            caught += cons.s2_fold_digest(pkg, toy) != cons.s1_fold_digest(proof, proof.theta, toy)
        except cons.NormViolation:
            caught += 1
    assert caught >= 1000 * (1 - 2.0**-toy.t)
    assert caught == 1000


# ---------------------------------------------------------------------------
# Seed mode
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def seeded(toy, toy_setup):
    rng = np.random.default_rng(5)
    s, proof, rand = honest_proof(toy, toy_setup, rng, rs_seed=b"\x11" * 16)
    return s, proof, rand, cons.make_seed_package(s, proof, rand)


def test_seed_digests_match(toy, seeded):
    _s, proof, _rand, pkg = seeded
    assert cons.seed_digest_s2(pkg, toy) == cons.seed_digest_s1(proof, toy)


def test_seed_wrong_secret_detected(toy, seeded):
    _s, proof, _rand, pkg = seeded
    rng = np.random.default_rng(6)
    ref = cons.seed_digest_s1(proof, toy)
    detected = 0
    for _ in range(1000):
        s2 = pkg.s.copy()
        i = int(rng.integers(toy.lam))
        s2[i] += int(rng.choice([-1, 1]))
        bad = cons.ConsistencyPackage(cons.MODE_SEED, s2, pkg.theta, pkg.challenges, rs_seed=pkg.rs_seed, att=pkg.att)
        detected += cons.seed_digest_s2(bad, toy) != ref
    assert detected == 1000


def test_seed_tampered_attempts_detected(toy, seeded):
    _s, proof, _rand, pkg = seeded
    ref = cons.seed_digest_s1(proof, toy)
    for j, u in [(0, 0), (toy.k - 1, toy.t - 1), (1, 3)]:
        att = pkg.att.copy()
        att[j, u] += 1
        bad = cons.ConsistencyPackage(cons.MODE_SEED, pkg.s, pkg.theta, pkg.challenges, rs_seed=pkg.rs_seed, att=att)
        assert cons.seed_digest_s2(bad, toy) != ref
    att = pkg.att.copy()
    att[0, 0] = toy.restart_limit
    with pytest.raises(cons.AttemptOutOfRange):
        cons.seed_digest_s2(cons.ConsistencyPackage(cons.MODE_SEED, pkg.s, pkg.theta, pkg.challenges, rs_seed=pkg.rs_seed, att=att), toy)


def test_make_seed_package_needs_seed(toy, toy_setup):
    rng = np.random.default_rng(7)
    s, proof, rand = honest_proof(toy, toy_setup, rng)
    with pytest.raises(ValueError):
        cons.make_seed_package(s, proof, rand)


# ---------------------------------------------------------------------------
# Default-parameter statistics
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_fold_restart_frequency_default_params():
    params = default_params()
    setup = cached_setup(params, False)
    rng = np.random.default_rng(8)
    restarts = 0
    for _ in range(1000):
        _s, proof, rand = honest_proof(params, setup, rng)
        restarts += cons.client_fold(proof.theta, rand.r_s, params).needs_restart
    assert restarts / 1000 < 0.05


def _faked_fold_detection(params, trials, seed):
    """Fraction of fold-faking equivocations (|ds|_2 >= sigma_s sqrt(lam)) rejected by the fold norm check."""
    setup = cached_setup(params, False)
    rng = np.random.default_rng(seed)
    rejected = 0
    for _ in range(trials):
        b = proto.make_client_bundle(params, 1, rng.integers(0, params.p, params.L), rng)
        sub = proto.client_prepare(params, setup, b, proto.MODE_SH, cons.MODE_FOLD, rng)
        pkg = sub.s2.package
        ds = equivocation_delta(params, b.s, "large", rng)
        assert np.linalg.norm(ds) >= params.sigma_s * math.sqrt(params.lam)
        # keep z* unchanged: r*' = r* - c* ds
        fake = pkg.r_star - pkg.challenges[:, None] * ds[None, :]
        rejected += bool(np.any(np.einsum("ul,ul->u", fake.astype(float), fake.astype(float)) > params.fold_bound**2))
    return rejected / trials


@pytest.mark.slow
def test_faked_randomness_fails_fold_norm_single_block():
    params = default_params(L=1024, n=2)
    assert params.k == 1
    assert _faked_fold_detection(params, 1000, 9) >= 1 - 2.0**-params.t


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="with k > 1 the fold bound tau sigma_s sqrt(k lam) admits faked r* for about 1% of trials")
def test_faked_randomness_fails_fold_norm_default_params():
    params = default_params()
    assert params.k == 4
    assert _faked_fold_detection(params, 1000, 10) >= 1 - 2.0**-params.t
