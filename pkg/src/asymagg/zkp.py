"""Block-wise lattice zero-knowledge arguments with Fiat-Shamir challenges.

Two relations are supported.

* ``enc`` (semi-honest): y_j = A_j s + e_j + Delta x_j  mod q, one block of
  d rows per j.
* ``ext`` (malicious): y_j = A_j s + e_j + Delta (x_j + w_j) and
  C_j = B_s s + B_w w_j + B_rho rho_j  mod q.

Every (block j, repetition u) task runs its own Sigma protocol.  The prover
samples masks r, commits t_j = A_j r_s + r_e + Delta r_x (+ Delta r_w), and
derives c from a hash of the statement, t_j, j and u.  It then answers
z = r + c * witness and passes z through rejection sampling.  A rejected
task restarts on its own without touching the others.  The finished proof
is bound by theta = H(statement, all responses), which later seeds the
fold coefficients of the consistency check.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .lwe_commit import AjtaiMatrices, DimensionMismatch
from .params import ProtocolParams
from .ring_core import (
    TAG_BINDER,
    TAG_STATEMENT,
    ZqMatrix,
    as_array,
    derive_challenge,
    hash_digest,
    mod_matmul,
    mulmod,
    sample_gaussian_array,
    seeded_secret_mask,
    word_bytes,
)

PROOF_VERSION = 1
KIND_ENC = 0
KIND_EXT = 1
_HEADER = struct.Struct("<BBIIIII")

Oracle = Callable[[bytes, int], int]


class RestartLimitExceeded(RuntimeError):
    """A task rejected more often than the configured restart limit allows."""


class ProofFormatError(ValueError):
    """Serialized proof bytes do not match the expected layout."""


class NonDivisibleExtraction(ValueError):
    """Response differences are not divisible by the challenge difference."""


class ExtractionFailed(ValueError):
    """Extracted values violate the block relation or the slack bound."""


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BlockResponse:
    c: int
    z_s: np.ndarray
    z_e: np.ndarray
    z_x: np.ndarray
    z_w: np.ndarray | None = None
    z_rho: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class Witness:
    """Prover witness; ``w`` (length L) and ``rho`` (k x m) only for the ext relation."""

    s: np.ndarray
    e: np.ndarray
    x: np.ndarray
    w: np.ndarray | None = None
    rho: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class BlockWitness:
    s: np.ndarray
    e: np.ndarray
    x: np.ndarray
    w: np.ndarray | None = None
    rho: np.ndarray | None = None


@dataclass(eq=False)
class ProverRandomness:
    """Secret-mask vectors r_{j,u,s} of the accepted attempts, kept for the consistency layer.

    ``attempts[j, u]`` is the zero-based index of the accepted attempt.
    """

    r_s: np.ndarray
    attempts: np.ndarray
    rs_seed: bytes | None = None

    @property
    def total_trials(self) -> int:
        return int(self.attempts.sum() + self.attempts.size)


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    reason: str = "ok"
    block: int = -1
    rep: int = -1

    def __bool__(self) -> bool:
        return self.ok


class EncProof:
    """k x t block responses plus the binder theta.

    Responses live in one int64 array ``body`` of shape (k, t, W).  Each row
    holds c, z_s, z_e, z_x and, for the ext relation, z_w and z_rho.
    """

    def __init__(self, kind: int, k: int, t: int, lam: int, d: int, m: int, body: np.ndarray, theta: bytes):
        self.kind = int(kind)
        self.k, self.t, self.lam, self.d, self.m = int(k), int(t), int(lam), int(d), int(m)
        if self.kind not in (KIND_ENC, KIND_EXT):
            raise ProofFormatError("unknown proof kind")
        if body.shape != (self.k, self.t, self.width):
            raise ProofFormatError(f"body shape {body.shape} does not match header")
        self.body = body
        self.theta = bytes(theta)

    @property
    def width(self) -> int:
        w = 1 + self.lam + 2 * self.d
        if self.kind == KIND_EXT:
            w += self.d + self.m
        return w

    def _slice(self, start: int, size: int) -> np.ndarray:
        return self.body[:, :, start : start + size]

    @property
    def c(self) -> np.ndarray:
        return self.body[:, :, 0]

    @property
    def z_s(self) -> np.ndarray:
        return self._slice(1, self.lam)

    @property
    def z_e(self) -> np.ndarray:
        return self._slice(1 + self.lam, self.d)

    @property
    def z_x(self) -> np.ndarray:
        return self._slice(1 + self.lam + self.d, self.d)

    @property
    def z_w(self) -> np.ndarray | None:
        return self._slice(1 + self.lam + 2 * self.d, self.d) if self.kind == KIND_EXT else None

    @property
    def z_rho(self) -> np.ndarray | None:
        return self._slice(1 + self.lam + 3 * self.d, self.m) if self.kind == KIND_EXT else None

    def block(self, j: int, u: int) -> BlockResponse:
        zw, zr = self.z_w, self.z_rho
        return BlockResponse(
            int(self.c[j, u]),
            self.z_s[j, u],
            self.z_e[j, u],
            self.z_x[j, u],
            None if zw is None else zw[j, u],
            None if zr is None else zr[j, u],
        )

    def header_bytes(self) -> bytes:
        return _HEADER.pack(PROOF_VERSION, self.kind, self.k, self.t, self.lam, self.d, self.m)

    def body_bytes(self) -> bytes:
        return np.ascontiguousarray(self.body, dtype="<i8").tobytes()

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.body_bytes() + self.theta

    @property
    def nbytes(self) -> int:
        return _HEADER.size + 8 * self.body.size + 32

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncProof":
        if len(data) < _HEADER.size + 32:
            raise ProofFormatError("proof too short")
        version, kind, k, t, lam, d, m = _HEADER.unpack_from(data, 0)
        if version != PROOF_VERSION:
            raise ProofFormatError(f"unsupported proof version {version}")
        if kind not in (KIND_ENC, KIND_EXT):
            raise ProofFormatError("unknown proof kind")
        width = 1 + lam + 2 * d + ((d + m) if kind == KIND_EXT else 0)
        expect = _HEADER.size + 8 * k * t * width + 32
        if len(data) != expect:
            raise ProofFormatError(f"proof length {len(data)} != expected {expect}")
        body = np.frombuffer(data, dtype="<i8", count=k * t * width, offset=_HEADER.size)
        body = body.astype(np.int64).reshape(k, t, width)
        return cls(kind, k, t, lam, d, m, body, data[-32:])

    def copy(self) -> "EncProof":
        return EncProof(self.kind, self.k, self.t, self.lam, self.d, self.m, self.body.copy(), self.theta)


# ---------------------------------------------------------------------------
# Statement context
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _Context:
    params: ProtocolParams
    A: ZqMatrix
    y: np.ndarray
    kind: int
    mats: AjtaiMatrices | None
    commitments: np.ndarray | None
    stmt: bytes
    single_block: bool = False

    def block_rows(self, j: int) -> ZqMatrix:
        if self.single_block:
            return self.A
        d = self.params.d
        return self.A.rows(j * d, (j + 1) * d)

    def y_block(self, j: int) -> np.ndarray:
        if self.single_block:
            return self.y
        d = self.params.d
        return self.y[j * d : (j + 1) * d]

    def commitment_row(self, j: int) -> np.ndarray:
        return self.commitments[0 if self.single_block else j]


def statement_digest(params: ProtocolParams, y, commitments=None) -> bytes:
    """Digest of the public statement: matrix seed, modulus, y and (if any) commitments."""
    parts = [params.matrix_seed, params.q.to_bytes(8, "little"), np.mod(as_array(y), params.q)]
    if commitments is not None:
        parts.append(np.asarray(commitments, dtype=np.int64))
    return hash_digest(TAG_STATEMENT, parts).value


def _context(params, A, y, mats=None, commitments=None) -> _Context:
    y = np.mod(as_array(y), params.q)
    if A.shape != (params.L, params.lam) or y.shape != (params.L,):
        raise DimensionMismatch("statement dimensions do not match the parameters")
    kind = KIND_ENC
    if commitments is not None:
        commitments = np.mod(np.asarray(getattr(commitments, "values", commitments), dtype=np.int64), params.q)
        if commitments.shape != (params.k, params.lam) or mats is None:
            raise DimensionMismatch("ext statement needs (k, lam) commitments and Ajtai matrices")
        kind = KIND_EXT
    return _Context(params, A, y, kind, mats, commitments, statement_digest(params, y, commitments))


def _task_transcript(ctx: _Context, t_bytes: bytes, v_bytes: bytes | None, j: int, u: int) -> bytes:
    parts = [ctx.stmt, t_bytes]
    if v_bytes is not None:
        parts.append(v_bytes)
        parts.append(_zq_row_bytes(ctx.commitment_row(j), ctx.params.q))
    parts.append(struct.pack("<II", j, u))
    return b"".join(parts)


def _zq_row_bytes(v: np.ndarray, q: int) -> bytes:
    return np.ascontiguousarray(v.astype("<u4" if word_bytes(q) == 4 else "<u8")).tobytes()


def _column_bytes(T: np.ndarray, q: int) -> np.ndarray:
    """Rows of T.T as fixed-width little-endian residues (one row per column of T)."""
    return np.ascontiguousarray(T.T.astype("<u4" if word_bytes(q) == 4 else "<u8"))


def compute_binder(ctx_or_stmt, proof: EncProof) -> bytes:
    stmt = ctx_or_stmt.stmt if isinstance(ctx_or_stmt, _Context) else ctx_or_stmt
    return hash_digest(TAG_BINDER, [stmt, proof.header_bytes(), proof.body]).value


# ---------------------------------------------------------------------------
# Rejection sampling
# ---------------------------------------------------------------------------


def repetition_constant(xi: float) -> float:
    return math.exp(12.0 / xi + 1.0 / (2.0 * xi * xi))


def acceptance_probability(z, v, sigma: float, M: float) -> float:
    """min(1, D_sigma(z) / (M D_{sigma,v}(z))) for one vector."""
    z = np.asarray(z, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    expo = (float(v @ v) - 2.0 * float(z @ v)) / (2.0 * sigma * sigma)
    return min(1.0, math.exp(min(expo, 700.0)) / M)


def rejection_accept(z, v, sigma: float, rng: np.random.Generator, M: float | None = None, xi: float = 11.0) -> bool:
    """One-sided rejection step: keep z = r + v with probability min(1, D(z) / (M D_v(z)))."""
    z, v = np.asarray(z), np.asarray(v)
    if z.shape != v.shape:
        raise DimensionMismatch("z and v differ in shape")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    M = repetition_constant(xi) if M is None else M
    return bool(rng.random() < acceptance_probability(z, v, sigma, M))


def rejection_accept_batch(Z: np.ndarray, V: np.ndarray, sigma: float, rng: np.random.Generator, M: float) -> np.ndarray:
    """Vectorized rejection over rows of Z (shifts in the matching rows of V)."""
    Zf, Vf = Z.astype(np.float64), V.astype(np.float64)
    expo = (np.einsum("ij,ij->i", Vf, Vf) - 2.0 * np.einsum("ij,ij->i", Zf, Vf)) / (2.0 * sigma * sigma)
    prob = np.minimum(1.0, np.exp(np.minimum(expo, 700.0)) / M)
    return rng.random(Z.shape[0]) < prob


def bimodal_accept(z, v, sigma: float, rng: np.random.Generator, M: float) -> bool:
    """Alternative two-sided rule 1 / (M exp(-|v|^2/2s^2) cosh(<z,v>/s^2)); needs a hidden sign bit."""
    z = np.asarray(z, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    s2 = sigma * sigma
    denom = M * math.exp(-float(v @ v) / (2 * s2)) * math.cosh(min(float(z @ v) / s2, 700.0))
    return bool(rng.random() < min(1.0, 1.0 / denom))


# ---------------------------------------------------------------------------
# Prover
# ---------------------------------------------------------------------------


def _components(params: ProtocolParams, kind: int):
    """(name, sigma, beta, dimension attribute) per response component."""
    comps = [
        ("s", params.sigma_s, params.beta_s, params.lam),
        ("e", params.sigma_e, params.beta_e, params.d),
        ("x", params.sigma_x, params.beta_x, params.d),
    ]
    if kind == KIND_EXT:
        comps += [("w", params.sigma_w, params.beta_w, params.d), ("rho", params.sigma_rho, params.beta_rho, params.m)]
    return comps


def _block_witness(params: ProtocolParams, wit: Witness, j: int) -> BlockWitness:
    d = params.d
    sl = slice(j * d, (j + 1) * d)
    return BlockWitness(
        as_array(wit.s),
        as_array(wit.e)[sl],
        as_array(wit.x)[sl],
        None if wit.w is None else as_array(wit.w)[sl],
        None if wit.rho is None else np.asarray(wit.rho, dtype=np.int64)[j],
    )


def _commit_columns(ctx: _Context, j: int, R: dict) -> tuple[np.ndarray, np.ndarray | None]:
    p = ctx.params
    A_j = ctx.block_rows(j)
    scaled = R["x"] if "w" not in R else R["x"] + R["w"]
    T = (mod_matmul(A_j, R["s"]) + R["e"] + mulmod(scaled, p.Delta, p.q)) % p.q
    V = None
    if ctx.kind == KIND_EXT:
        mats = ctx.mats
        V = (mod_matmul(mats.B_s, R["s"]) + mod_matmul(mats.B_w, R["w"]) + mod_matmul(mats.B_rho, R["rho"])) % p.q
    return T, V


def _prove_tasks(
    ctx: _Context,
    j: int,
    bw: BlockWitness,
    us: Sequence[int],
    rng: np.random.Generator,
    rs_seed: bytes | None,
    oracle: Oracle,
):
    """Run the Sigma protocol with rejection for each repetition u of block j.

    Candidate masks are drawn in batches and committed with one matrix
    product per batch.  Because z = r + c w, the acceptance exponent and the
    norms of z for every possible c follow from <r, w> and |r|^2, so the
    sequential part per candidate is one hash plus scalar lookups.  With a
    seed, the secret mask of attempt a for repetition u is H_r(seed, u, j, a)
    and each repetition draws from its own candidate stream.

    Returns {u: (c, {component: z}, r_s, attempt_index)}.
    """
    p = ctx.params
    comps = _components(p, ctx.kind)
    wit = {"s": bw.s, "e": bw.e, "x": bw.x, "w": bw.w, "rho": bw.rho}
    M = p.M
    limit = p.restart_limit
    per_rep = int(math.ceil(M))
    cvals = np.arange(-p.C, p.C + 1)
    attempts = {u: 0 for u in us}
    pending = list(us)
    done: dict[int, tuple] = {}
    while pending:
        if rs_seed is None:
            N = int(math.ceil(M * len(pending))) + 2
            owner = None
        else:
            owner = np.repeat(np.asarray(pending, dtype=np.int64), per_rep)
            col_a = np.concatenate([attempts[u] + np.arange(per_rep) for u in pending])
            N = owner.size
        R = {}
        for name, sigma, _beta, dim in comps:
            if name == "s" and rs_seed is not None:
                R[name] = np.stack(
                    [seeded_secret_mask(sigma, dim, rs_seed, int(u), j, int(a)) for u, a in zip(owner, col_a)],
                    axis=1,
                )
            else:
                R[name] = sample_gaussian_array(sigma, (dim, N), rng)
        T, V = _commit_columns(ctx, j, R)
        t_rows = _column_bytes(T, p.q)
        v_rows = _column_bytes(V, p.q) if V is not None else None
        # expo[ci, i] and ok[ci, i]: rejection exponent and norm test for challenge cvals[ci]
        expo = np.zeros((cvals.size, N))
        ok = np.ones((cvals.size, N), dtype=bool)
        for name, sigma, beta, _dim in comps:
            wf = wit[name].astype(np.float64)
            Rf = R[name].astype(np.float64)
            rw = wf @ Rf
            rr = np.einsum("ij,ij->j", Rf, Rf)
            wsq = float(wf @ wf)
            for ci, c in enumerate(cvals):
                expo[ci] += (-(c * c) * wsq - 2.0 * c * rw) / (2.0 * sigma * sigma)
                ok[ci] &= rr + 2.0 * c * rw + c * c * wsq <= beta * beta
        accept_all = (rng.random(N) < np.minimum(1.0, np.exp(np.minimum(expo, 700.0)) / M)) & ok
        accepted: list[tuple[int, int, int]] = []
        if owner is None:
            ptr = 0
            while pending and ptr < N:
                u = pending[0]
                c = oracle(_task_transcript(ctx, t_rows[ptr].tobytes(), None if v_rows is None else v_rows[ptr].tobytes(), j, u), p.C)
                if accept_all[c + p.C, ptr]:
                    accepted.append((u, ptr, c))
                    pending.pop(0)
                else:
                    attempts[u] += 1
                    if attempts[u] >= limit:
                        raise RestartLimitExceeded(f"block {j} repetition {u} exceeded {limit} attempts")
                ptr += 1
        else:
            for idx, u in enumerate(list(pending)):
                for col in range(idx * per_rep, (idx + 1) * per_rep):
                    c = oracle(_task_transcript(ctx, t_rows[col].tobytes(), None if v_rows is None else v_rows[col].tobytes(), j, u), p.C)
                    if accept_all[c + p.C, col]:
                        accepted.append((u, col, c))
                        pending.remove(u)
                        break
                    attempts[u] += 1
                if u in pending and attempts[u] >= limit:
                    raise RestartLimitExceeded(f"block {j} repetition {u} exceeded {limit} attempts")
        for u, col, c in accepted:
            z = {name: R[name][:, col] + c * wit[name] for name, *_ in comps}
            done[u] = (c, z, R["s"][:, col].copy(), attempts[u])
    return done


def prove_block(
    params: ProtocolParams,
    A_j: ZqMatrix,
    y_j,
    witness: BlockWitness,
    u: int,
    rng: np.random.Generator,
    *,
    j: int = 0,
    stmt: bytes | None = None,
    mats: AjtaiMatrices | None = None,
    C_j=None,
    rs_seed: bytes | None = None,
    oracle: Oracle = derive_challenge,
) -> tuple[BlockResponse, dict]:
    """Single-task prover for a standalone block statement (A_j, y_j [, C_j]).

    Returns the accepted response and its mask vectors plus attempt count.
    """
    y_j = np.mod(as_array(y_j), params.q)
    kind = KIND_EXT if C_j is not None else KIND_ENC
    commitments = None if C_j is None else np.mod(as_array(C_j), params.q)[None, :]
    if stmt is None:
        stmt = statement_digest(params, y_j, commitments)
    ctx = _Context(params, A_j, y_j, kind, mats, commitments, stmt, single_block=True)
    res = _prove_tasks(ctx, j, witness, [u], rng, rs_seed, oracle)[u]
    c, z, r_s, att = res
    resp = BlockResponse(c, z["s"], z["e"], z["x"], z.get("w"), z.get("rho"))
    return resp, {"r_s": r_s, "attempts": att + 1}


def _prove(ctx: _Context, wit: Witness, rng, rs_seed, oracle) -> tuple[EncProof, ProverRandomness]:
    p = ctx.params
    k, t = p.k, p.t
    if rs_seed is not None and p.restart_limit > 256:
        raise ValueError("seed mode stores attempt indices in one byte; restart limit must be <= 256")
    _check_witness(p, wit, ctx.kind)
    m = p.m if ctx.kind == KIND_EXT else 0
    width = 1 + p.lam + 2 * p.d + ((p.d + p.m) if ctx.kind == KIND_EXT else 0)
    body = np.empty((k, t, width), dtype=np.int64)
    r_s = np.empty((k, t, p.lam), dtype=np.int64)
    att = np.zeros((k, t), dtype=np.int64)
    names = [c[0] for c in _components(p, ctx.kind)]
    for j in range(k):
        res = _prove_tasks(ctx, j, _block_witness(p, wit, j), range(t), rng, rs_seed, oracle)
        for u in range(t):
            c, z, rs, a = res[u]
            body[j, u, 0] = c
            body[j, u, 1:] = np.concatenate([z[n] for n in names])
            r_s[j, u] = rs
            att[j, u] = a
    proof = EncProof(ctx.kind, k, t, p.lam, p.d, m, body, b"\0" * 32)
    proof.theta = compute_binder(ctx, proof)
    return proof, ProverRandomness(r_s, att, rs_seed)


def _check_witness(p: ProtocolParams, wit: Witness, kind: int) -> None:
    s, e, x = as_array(wit.s), as_array(wit.e), as_array(wit.x)
    if s.shape != (p.lam,) or e.shape != (p.L,) or x.shape != (p.L,):
        raise DimensionMismatch("witness dimensions do not match the parameters")
    if kind == KIND_EXT:
        if wit.w is None or wit.rho is None:
            raise DimensionMismatch("ext witness needs w and rho")
        if as_array(wit.w).shape != (p.L,) or np.asarray(wit.rho).shape != (p.k, p.m):
            raise DimensionMismatch("ext witness w / rho have the wrong shape")


def prove_enc_full(params, A, y, witness: Witness, rng, *, rs_seed=None, oracle: Oracle = derive_challenge):
    """Proof for the enc relation together with the retained secret masks."""
    return _prove(_context(params, A, y), witness, rng, rs_seed, oracle)


def prove_ext_full(params, A, y, witness: Witness, rng, mats: AjtaiMatrices, commitments, *, rs_seed=None, oracle: Oracle = derive_challenge):
    """Proof for the ext relation together with the retained secret masks."""
    return _prove(_context(params, A, y, mats, commitments), witness, rng, rs_seed, oracle)


def prove_enc(params, A, y, witness: Witness, rng, **kw) -> EncProof:
    return prove_enc_full(params, A, y, witness, rng, **kw)[0]


def prove_ext(params, A, y, witness: Witness, rng, mats: AjtaiMatrices, commitments, **kw) -> EncProof:
    return prove_ext_full(params, A, y, witness, rng, mats, commitments, **kw)[0]


# ---------------------------------------------------------------------------
# Verifier
# ---------------------------------------------------------------------------


def reconstruct_commitments(ctx: _Context, proof: EncProof, j: int) -> tuple[np.ndarray, np.ndarray | None]:
    """t_bar (d x t) and, for ext proofs, v_bar (lam x t) for block j."""
    p = ctx.params
    c = proof.c[j]
    R = {"s": proof.z_s[j].T, "e": proof.z_e[j].T, "x": proof.z_x[j].T}
    if proof.kind == KIND_EXT:
        R["w"] = proof.z_w[j].T
        R["rho"] = proof.z_rho[j].T
    T, V = _commit_columns(ctx, j, R)
    y_j = ctx.y_block(j)
    T = (T - _scaled_outer(y_j, c, p.q)) % p.q
    if V is not None:
        V = (V - _scaled_outer(ctx.commitment_row(j), c, p.q)) % p.q
    return T, V


def _scaled_outer(vec: np.ndarray, c: np.ndarray, q: int) -> np.ndarray:
    out = np.empty((vec.shape[0], c.shape[0]), dtype=np.int64)
    for i, ci in enumerate(c):
        out[:, i] = mulmod(vec, int(ci), q)
    return out


def _verify(ctx: _Context, proof: EncProof, oracle: Oracle) -> VerifyResult:
    p = ctx.params
    m = p.m if ctx.kind == KIND_EXT else 0
    if proof.kind != ctx.kind:
        return VerifyResult(False, "KindMismatch")
    if (proof.k, proof.t, proof.lam, proof.d, proof.m) != (p.k, p.t, p.lam, p.d, m):
        return VerifyResult(False, "DimensionMismatch")
    if compute_binder(ctx, proof) != proof.theta:
        return VerifyResult(False, "BinderMismatch")
    c = proof.c
    if c.size and (c.min() < -p.C or c.max() > p.C):
        return VerifyResult(False, "ChallengeOutOfRange")
    comp_arrays = {"s": proof.z_s, "e": proof.z_e, "x": proof.z_x, "w": proof.z_w, "rho": proof.z_rho}
    for name, _sigma, beta, _dim in _components(p, ctx.kind):
        Zc = comp_arrays[name]
        if Zc.size and int(np.abs(Zc).max()) >= (1 << 62):
            return VerifyResult(False, "NormViolation")
        nsq = np.einsum("jui,jui->ju", Zc.astype(np.float64), Zc.astype(np.float64))
        bad = np.argwhere(nsq > beta * beta)
        if bad.size:
            return VerifyResult(False, f"NormViolation:{name}", int(bad[0][0]), int(bad[0][1]))
    for j in range(p.k):
        T, V = reconstruct_commitments(ctx, proof, j)
        t_rows = _column_bytes(T, p.q)
        v_rows = _column_bytes(V, p.q) if V is not None else None
        for u in range(p.t):
            tr = _task_transcript(ctx, t_rows[u].tobytes(), None if v_rows is None else v_rows[u].tobytes(), j, u)
            if oracle(tr, p.C) != int(c[j, u]):
                return VerifyResult(False, "ChallengeMismatch", j, u)
    return VerifyResult(True)


def verify_enc(params, A, y, proof: EncProof, *, oracle: Oracle = derive_challenge) -> VerifyResult:
    try:
        ctx = _context(params, A, y)
    except DimensionMismatch:
        return VerifyResult(False, "DimensionMismatch")
    return _verify(ctx, proof, oracle)


def verify_ext(params, A, y, proof: EncProof, mats: AjtaiMatrices, commitments, *, oracle: Oracle = derive_challenge) -> VerifyResult:
    try:
        ctx = _context(params, A, y, mats, commitments)
    except DimensionMismatch:
        return VerifyResult(False, "DimensionMismatch")
    return _verify(ctx, proof, oracle)


def rebind(params, A, y, proof: EncProof, mats=None, commitments=None) -> EncProof:
    """Recompute theta over the current contents (used by adversarial tests)."""
    ctx = _context(params, A, y, mats, commitments)
    proof.theta = compute_binder(ctx, proof)
    return proof


# ---------------------------------------------------------------------------
# Extraction (test-only rewinding oracle)
# ---------------------------------------------------------------------------


def block_commitment(params: ProtocolParams, A_j: ZqMatrix, y_j, resp: BlockResponse) -> np.ndarray:
    """t_bar = A_j z_s + z_e + Delta z_x - c y_j mod q for an enc block response."""
    q = params.q
    t = mod_matmul(A_j, resp.z_s) + resp.z_e + mulmod(resp.z_x, params.Delta, q)
    return (t - mulmod(as_array(y_j), resp.c, q)) % q


def extract_witness_test_oracle(params: ProtocolParams, A_j: ZqMatrix, y_j, first: BlockResponse, second: BlockResponse):
    """Special-soundness extractor for two enc transcripts sharing t_bar.

    Returns (s_bar, e_bar, x_bar) with A_j s_bar + e_bar + Delta x_bar = y_j mod q.
    """
    dc = first.c - second.c
    if dc == 0:
        raise ValueError("challenges must differ")
    if abs(dc) > 2 * params.C:
        raise ValueError("challenge difference outside the challenge set")
    y_j = np.mod(as_array(y_j), params.q)
    for resp in (first, second):
        if np.linalg.norm(resp.z_x.astype(np.float64)) > params.beta_x:
            raise ExtractionFailed("transcript violates the response norm bound")
    if not np.array_equal(block_commitment(params, A_j, y_j, first), block_commitment(params, A_j, y_j, second)):
        raise ExtractionFailed("transcripts do not share the commitment")
    out = []
    for a, b in ((first.z_s, second.z_s), (first.z_e, second.z_e), (first.z_x, second.z_x)):
        diff = np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64)
        if np.any(diff % dc):
            raise NonDivisibleExtraction(f"response difference not divisible by {dc}")
        out.append(diff // dc)
    s_bar, e_bar, x_bar = out
    q = params.q
    lhs = (mod_matmul(A_j, s_bar) + e_bar + mulmod(x_bar, params.Delta, q)) % q
    if not np.array_equal(lhs, y_j):
        raise ExtractionFailed("extracted values violate the block relation")
    if np.linalg.norm(x_bar.astype(np.float64)) > 2 * params.beta_x / abs(dc):
        raise ExtractionFailed("extracted message exceeds the slack bound")
    return s_bar, e_bar, x_bar
