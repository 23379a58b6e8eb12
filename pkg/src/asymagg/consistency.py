"""Two-server input-consistency checks.

The client proves knowledge of s to S1 through the block proofs and reveals
s to S2 in the clear.  Both servers then digest the same quantity computed
from their own views.  A mismatch means the client told them different
things.

Folding mode: fold coefficients alpha_{j,u} are bits derived from the proof
binder theta.  The client sends S2 the folded masks r*_u = sum_j alpha r_{j,u,s}
and the folded challenges c*_u = sum_j alpha c_{j,u}.  S1 folds the proof
responses z_{j,u,s}.  The identity sum_j alpha (r + c s) = r* + c* s
makes the digests agree exactly for a consistent client.  S2's input is
O(t lam) and does not depend on the vector length.

Seed mode: every secret mask is r_{j,u,s} = H_r(seed, u, j, attempt).  S2
receives the seed, the attempt matrix and all challenges, and rebuilds each
z_{j,u,s} itself.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .params import ProtocolParams
from .ring_core import (
    TAG_FOLD_DIGEST,
    TAG_SEED_DIGEST,
    Digest,
    as_array,
    hash_digest,
    prg_bits,
    seeded_secret_mask,
    sq_norms,
)
from .zkp import EncProof, ProverRandomness

MODE_FOLD = "fold"
MODE_SEED = "seed"
PACKAGE_VERSION = 1
_MODE_CODE = {MODE_FOLD: 0, MODE_SEED: 1}
_PKG_HEADER = struct.Struct("<BBIIII")


class NormViolation(ValueError):
    """Folded randomness exceeds the fold norm bound."""


class AttemptOutOfRange(ValueError):
    """An attempt index exceeds the restart limit."""


class PackageFormatError(ValueError):
    """Serialized consistency package does not match the expected layout."""


# ---------------------------------------------------------------------------
# Fold coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldCoefficients:
    """alpha_{j,u} bits, shape (k, t), read from prg_bits(theta) in row-major (j, u) order."""

    alpha: np.ndarray

    @classmethod
    def from_theta(cls, theta: bytes, k: int, t: int) -> "FoldCoefficients":
        return cls(prg_bits(theta, k * t).reshape(k, t).astype(np.int64))


def fold_vectors(alpha: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """sum_j alpha[j, u] * vectors[j, u, :] for each u; shape (t, lam)."""
    return np.einsum("ju,jul->ul", alpha, np.asarray(vectors, dtype=np.int64))


def fold_challenges(alpha: np.ndarray, challenges: np.ndarray) -> np.ndarray:
    """c*_u = sum_j alpha[j, u] c[j, u]."""
    return np.einsum("ju,ju->u", alpha, np.asarray(challenges, dtype=np.int64))


# ---------------------------------------------------------------------------
# Package
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ConsistencyPackage:
    """What S2 receives for the consistency check.

    Fold mode uses ``r_star`` (t x lam) and ``challenges`` holding the t
    folded challenges c*_u.  Seed mode uses ``rs_seed`` and ``att`` (k x t
    attempt indices) and ``challenges`` holding the full k x t matrix.
    """

    mode: str
    s: np.ndarray
    theta: bytes
    challenges: np.ndarray
    r_star: np.ndarray | None = None
    rs_seed: bytes | None = None
    att: np.ndarray | None = None

    def to_bytes(self) -> bytes:
        lam = int(self.s.shape[0])
        parts = []
        if self.mode == MODE_FOLD:
            t = int(self.r_star.shape[0])
            header = _PKG_HEADER.pack(PACKAGE_VERSION, _MODE_CODE[self.mode], lam, 1, t, 0)
            parts = [
                np.asarray(self.s, dtype="<i8").tobytes(),
                np.asarray(self.r_star, dtype="<i8").tobytes(),
                self.theta,
                np.asarray(self.challenges, dtype="<i8").tobytes(),
            ]
        elif self.mode == MODE_SEED:
            k, t = self.att.shape
            header = _PKG_HEADER.pack(PACKAGE_VERSION, _MODE_CODE[self.mode], lam, k, t, len(self.rs_seed))
            if self.att.size and (self.att.min() < 0 or self.att.max() > 255):
                raise AttemptOutOfRange("attempt index does not fit one byte")
            parts = [
                np.asarray(self.s, dtype="<i8").tobytes(),
                self.rs_seed,
                np.asarray(self.att, dtype=np.uint8).tobytes(),
                self.theta,
                np.asarray(self.challenges, dtype="<i8").tobytes(),
            ]
        else:
            raise PackageFormatError(f"unknown mode {self.mode}")
        return header + b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ConsistencyPackage":
        if len(data) < _PKG_HEADER.size:
            raise PackageFormatError("package too short")
        version, code, lam, k, t, seed_len = _PKG_HEADER.unpack_from(data, 0)
        if version != PACKAGE_VERSION:
            raise PackageFormatError(f"unsupported package version {version}")
        off = _PKG_HEADER.size

        def take(n: int) -> bytes:
            nonlocal off
            if off + n > len(data):
                raise PackageFormatError("package truncated")
            chunk = data[off : off + n]
            off += n
            return chunk

        def ints(count: int) -> np.ndarray:
            return np.frombuffer(take(8 * count), dtype="<i8").astype(np.int64)

        if code == 0:
            s = ints(lam)
            r_star = ints(t * lam).reshape(t, lam)
            theta = take(32)
            ch = ints(t)
            pkg = cls(MODE_FOLD, s, theta, ch, r_star=r_star)
        elif code == 1:
            s = ints(lam)
            seed = take(seed_len)
            att = np.frombuffer(take(k * t), dtype=np.uint8).astype(np.int64).reshape(k, t)
            theta = take(32)
            ch = ints(k * t).reshape(k, t)
            pkg = cls(MODE_SEED, s, theta, ch, rs_seed=seed, att=att)
        else:
            raise PackageFormatError("unknown package mode")
        if off != len(data):
            raise PackageFormatError("trailing bytes after package")
        return pkg

    @property
    def nbytes(self) -> int:
        return len(self.to_bytes())


# ---------------------------------------------------------------------------
# Folding mode
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldResult:
    r_star: np.ndarray
    needs_restart: bool


def client_fold(theta: bytes, r_s: np.ndarray, params: ProtocolParams) -> FoldResult:
    """Fold the retained secret masks; flag a restart if any r*_u exceeds the fold bound.

    A restart regenerates the whole proof, since alpha is bound to theta and
    theta is bound to the proof.
    """
    r_s = np.asarray(getattr(r_s, "r_s", r_s), dtype=np.int64)
    k, t = r_s.shape[0], r_s.shape[1]
    alpha = FoldCoefficients.from_theta(theta, k, t).alpha
    r_star = fold_vectors(alpha, r_s)
    too_big = bool(np.any(sq_norms(r_star) > params.fold_bound ** 2))
    return FoldResult(r_star, too_big)


def fold_digest(theta: bytes, c_star: np.ndarray, z_star: np.ndarray) -> Digest:
    """H(theta, c*, z*) with fixed (u-ordered, length-prefixed) serialization."""
    return hash_digest(
        TAG_FOLD_DIGEST,
        [bytes(theta), np.asarray(c_star, dtype="<i8"), np.asarray(z_star, dtype="<i8")],
    )


def make_fold_package(s, theta: bytes, proof: EncProof, randomness: ProverRandomness, r_star: np.ndarray) -> ConsistencyPackage:
    alpha = FoldCoefficients.from_theta(theta, proof.k, proof.t).alpha
    c_star = fold_challenges(alpha, proof.c)
    return ConsistencyPackage(MODE_FOLD, as_array(s).copy(), bytes(theta), c_star, r_star=np.asarray(r_star))


def s2_fold_digest(pkg: ConsistencyPackage, params: ProtocolParams) -> Digest:
    """S2 side: z*_u = r*_u + c*_u s, digested with theta and c*."""
    if pkg.mode != MODE_FOLD:
        raise ValueError("package is not in fold mode")
    r_star = np.asarray(pkg.r_star, dtype=np.int64)
    s = as_array(pkg.s)
    c_star = np.asarray(pkg.challenges, dtype=np.int64)
    if r_star.shape != (params.t, params.lam) or s.shape != (params.lam,) or c_star.shape != (params.t,):
        raise NormViolation("package dimensions do not match the parameters")
    if np.any(sq_norms(r_star) > params.fold_bound ** 2):
        raise NormViolation("folded randomness exceeds the fold bound")
    z_star = r_star + c_star[:, None] * s[None, :]
    return fold_digest(pkg.theta, c_star, z_star)


def s1_fold_digest(proof: EncProof, theta: bytes, params: ProtocolParams) -> Digest:
    """S1 side: fold the verified responses z_{j,u,s} with the same alpha."""
    alpha = FoldCoefficients.from_theta(theta, proof.k, proof.t).alpha
    c_star = fold_challenges(alpha, proof.c)
    z_star = fold_vectors(alpha, proof.z_s)
    return fold_digest(theta, c_star, z_star)


# ---------------------------------------------------------------------------
# Seed mode
# ---------------------------------------------------------------------------


def _seed_masks(params: ProtocolParams, rs_seed: bytes, att: np.ndarray) -> np.ndarray:
    k, t = att.shape
    out = np.empty((k, t, params.lam), dtype=np.int64)
    for j in range(k):
        for u in range(t):
            out[j, u] = seeded_secret_mask(params.sigma_s, params.lam, rs_seed, u, j, int(att[j, u]))
    return out


def seed_digest(theta: bytes, challenges: np.ndarray, z_s: np.ndarray) -> Digest:
    return hash_digest(
        TAG_SEED_DIGEST,
        [bytes(theta), np.asarray(challenges, dtype="<i8"), np.asarray(z_s, dtype="<i8")],
    )


def seed_digest_client(rs_seed: bytes, att, challenges, s, theta: bytes, params: ProtocolParams) -> Digest:
    """Rebuild every z_{j,u,s} = H_r(seed, u, j, Att[j,u]) + c_{j,u} s and digest the set."""
    att = np.asarray(att, dtype=np.int64)
    challenges = np.asarray(challenges, dtype=np.int64)
    if att.shape != (params.k, params.t) or challenges.shape != (params.k, params.t):
        raise AttemptOutOfRange("attempt or challenge matrix has the wrong shape")
    if att.size and (att.min() < 0 or att.max() >= params.restart_limit):
        raise AttemptOutOfRange("attempt index exceeds the restart limit")
    s = as_array(s)
    r = _seed_masks(params, rs_seed, att)
    z = r + challenges[:, :, None] * s[None, None, :]
    return seed_digest(theta, challenges, z)


def seed_digest_s2(pkg: ConsistencyPackage, params: ProtocolParams) -> Digest:
    if pkg.mode != MODE_SEED:
        raise ValueError("package is not in seed mode")
    return seed_digest_client(pkg.rs_seed, pkg.att, pkg.challenges, pkg.s, pkg.theta, params)


def seed_digest_s1(proof: EncProof, params: ProtocolParams) -> Digest:
    """S1 side: digest the verified responses directly."""
    return seed_digest(proof.theta, proof.c, proof.z_s)


def make_seed_package(s, proof: EncProof, randomness: ProverRandomness) -> ConsistencyPackage:
    if randomness.rs_seed is None:
        raise ValueError("seed mode needs a proof generated from a mask seed")
    return ConsistencyPackage(
        MODE_SEED,
        as_array(s).copy(),
        proof.theta,
        proof.c.copy(),
        rs_seed=randomness.rs_seed,
        att=randomness.attempts.copy(),
    )


# ---------------------------------------------------------------------------
# Mode dispatch
# ---------------------------------------------------------------------------


def s1_digest(proof: EncProof, params: ProtocolParams, mode: str) -> Digest:
    return s1_fold_digest(proof, proof.theta, params) if mode == MODE_FOLD else seed_digest_s1(proof, params)


def s2_digest(pkg: ConsistencyPackage, params: ProtocolParams) -> Digest:
    return s2_fold_digest(pkg, params) if pkg.mode == MODE_FOLD else seed_digest_s2(pkg, params)
