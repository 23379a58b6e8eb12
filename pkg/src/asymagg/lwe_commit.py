"""LWE masking, additive homomorphism, decode-by-rounding and Ajtai commitments.

A client masks x in Z_p^L as

    y = A s + e + Delta (x [+ w])  mod q,     Delta = q / p,

and the servers recover the sum of the inputs from the sum of the
ciphertexts and the sum of the secrets.  The Ajtai commitment

    C_j = B_s s + B_w w_j + B_rho rho_j  mod q

binds a client's secret and mask to what the first server later checks
through the aggregate homomorphism.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .params import ProtocolParams, ParameterError, default_params, toy_params
from .ring_core import (
    RingError,
    TAG_AJTAI_RHO,
    TAG_AJTAI_S,
    TAG_AJTAI_W,
    ZqMatrix,
    ZqVector,
    as_array,
    derive_subseed,
    expand_matrix,
    mod_matmul,
    mulmod,
    sample_gaussian_array,
)

__all__ = [
    "ProtocolParams",
    "ParameterError",
    "default_params",
    "toy_params",
    "DimensionMismatch",
    "BoundViolation",
    "Ciphertext",
    "AjtaiCommitment",
    "AjtaiMatrices",
    "PublicSetup",
    "derive_ajtai_matrices",
    "public_setup",
    "sample_secret",
    "sample_error",
    "sample_rho",
    "lwe_commit",
    "aggregate_ciphertexts",
    "decode",
    "ajtai_commit",
    "ajtai_commit_blocks",
    "ajtai_aggregate_check",
]


class DimensionMismatch(ValueError):
    """Operand shapes disagree with the parameter set."""


class BoundViolation(ValueError):
    """A witness component exceeds its declared per-coordinate bound."""


@dataclass(frozen=True, eq=False)
class Ciphertext:
    y: ZqVector
    client_id: int = 0

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True, eq=False)
class AjtaiCommitment:
    """Per-block commitments, shape (k, lam), canonical mod q."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        if v.ndim != 2:
            raise DimensionMismatch("commitment must be a (k, lam) array")
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return int(self.values.shape[0])

    def block(self, j: int) -> np.ndarray:
        return self.values[j]


@dataclass(frozen=True, eq=False)
class AjtaiMatrices:
    B_s: ZqMatrix
    B_w: ZqMatrix
    B_rho: ZqMatrix


@dataclass(frozen=True, eq=False)
class PublicSetup:
    """Public matrices every party derives from the round's matrix seed."""

    params: ProtocolParams
    A: ZqMatrix
    ajtai: AjtaiMatrices | None = None


def derive_ajtai_matrices(params: ProtocolParams) -> AjtaiMatrices:
    seed = params.matrix_seed
    q = params.q
    return AjtaiMatrices(
        B_s=expand_matrix(derive_subseed(TAG_AJTAI_S, seed), params.lam, params.lam, q),
        B_w=expand_matrix(derive_subseed(TAG_AJTAI_W, seed), params.lam, params.d, q),
        B_rho=expand_matrix(derive_subseed(TAG_AJTAI_RHO, seed), params.lam, params.m, q),
    )


def public_setup(params: ProtocolParams, with_ajtai: bool = False) -> PublicSetup:
    A = expand_matrix(params.matrix_seed, params.L, params.lam, params.q)
    return PublicSetup(params, A, derive_ajtai_matrices(params) if with_ajtai else None)


# ---------------------------------------------------------------------------
# Witness sampling
# ---------------------------------------------------------------------------


def sample_secret(params: ProtocolParams, rng: np.random.Generator) -> np.ndarray:
    """Uniform short secret in [-B_s, B_s]^lam (ternary by default)."""
    return rng.integers(-params.B_s, params.B_s + 1, size=params.lam).astype(np.int64)


def sample_error(params: ProtocolParams, rng: np.random.Generator) -> np.ndarray:
    """LWE error, discrete Gaussian of width B_e / 4 tail-cut at B_e."""
    return sample_gaussian_array(params.error_sigma, params.L, rng, bound=params.B_e)


def sample_rho(params: ProtocolParams, rng: np.random.Generator) -> np.ndarray:
    """Ajtai randomness for all blocks, shape (k, m), tail-cut at B_rho."""
    return sample_gaussian_array(params.rho_sigma, (params.k, params.m), rng, bound=params.B_rho)


# ---------------------------------------------------------------------------
# Masking
# ---------------------------------------------------------------------------


def _check_len(name: str, v: np.ndarray, n: int) -> None:
    if v.ndim != 1 or v.shape[0] != n:
        raise DimensionMismatch(f"{name} has shape {v.shape}, expected ({n},)")


def _inf(v: np.ndarray) -> int:
    return int(np.abs(v).max()) if v.size else 0


def lwe_commit(
    params: ProtocolParams,
    A: ZqMatrix,
    s,
    e,
    x,
    w=None,
    client_id: int = 0,
) -> Ciphertext:
    """y = A s + e + Delta (x [+ w]) mod q after dimension and bound checks."""
    s, e, x = as_array(s), as_array(e), as_array(x)
    if A.shape != (params.L, params.lam) or A.q != params.q:
        raise DimensionMismatch(f"A has shape {A.shape}, expected {(params.L, params.lam)}")
    _check_len("s", s, params.lam)
    _check_len("e", e, params.L)
    _check_len("x", x, params.L)
    if _inf(s) > params.B_s:
        raise BoundViolation("secret exceeds B_s")
    if _inf(e) > params.B_e:
        raise BoundViolation("error exceeds B_e")
    if x.size and (x.min() < 0 or x.max() >= params.p):
        raise BoundViolation("input entries must lie in [0, p)")
    payload = x
    if w is not None:
        w = as_array(w)
        _check_len("w", w, params.L)
        if w.size and (w.min() <= -(params.p // 2) - (params.p % 2) or w.max() > params.p // 2):
            raise BoundViolation("mask entries must be centered in (-p/2, p/2]")
        payload = x + w
    y = (mod_matmul(A, s) + e + mulmod(payload, params.Delta, params.q)) % params.q
    return Ciphertext(ZqVector(y, params.q), client_id)


def aggregate_ciphertexts(cts: Sequence[Ciphertext]) -> ZqVector:
    """Coordinate-wise sum mod q."""
    if not cts:
        raise DimensionMismatch("need at least one ciphertext")
    q = cts[0].y.q
    n = len(cts[0].y)
    acc = np.zeros(n, dtype=np.int64)
    for ct in cts:
        if len(ct.y) != n or ct.y.q != q:
            raise DimensionMismatch("ciphertexts differ in length or modulus")
        acc = (acc + ct.y.entries) % q
    return ZqVector(acc, q)


def decode(params: ProtocolParams, y_sum, A: ZqMatrix, s_sum, w_sum=None) -> np.ndarray:
    """Recover the aggregate plaintext in Z_p^L.

    Subtracts A s_sum (and Delta w_sum), rounds each residue in [0, q) to the
    nearest multiple of Delta with ties going down, and reduces mod p.
    """
    q, Delta = params.q, params.Delta
    y = as_array(y_sum)
    v = (y - mod_matmul(A, as_array(s_sum))) % q
    if w_sum is not None:
        v = (v - mulmod(as_array(w_sum), Delta, q)) % q
    half_up = (Delta + 1) // 2 - 1
    return ((v + half_up) // Delta) % params.p


# ---------------------------------------------------------------------------
# Ajtai commitments
# ---------------------------------------------------------------------------


def ajtai_commit(params: ProtocolParams, B_s: ZqMatrix, B_w: ZqMatrix, B_rho: ZqMatrix, s, w_j, rho_j) -> ZqVector:
    """C_j = B_s s + B_w w_j + B_rho rho_j mod q."""
    s, w_j, rho_j = as_array(s), as_array(w_j), as_array(rho_j)
    for name, mat, vec in (("s", B_s, s), ("w_j", B_w, w_j), ("rho_j", B_rho, rho_j)):
        if mat.shape[1] != vec.shape[0]:
            raise DimensionMismatch(f"{name} has length {vec.shape[0]}, matrix expects {mat.shape[1]}")
    if not (B_s.shape[0] == B_w.shape[0] == B_rho.shape[0]):
        raise DimensionMismatch("commitment matrices differ in row count")
    q = params.q
    c = (mod_matmul(B_s, s) + mod_matmul(B_w, w_j) + mod_matmul(B_rho, rho_j)) % q
    return ZqVector(c, q)


def ajtai_commit_blocks(params: ProtocolParams, mats: AjtaiMatrices, s, w, rho) -> AjtaiCommitment:
    """Commitments for every block at once; w has length L and rho shape (k, m)."""
    s, w, rho = as_array(s), as_array(w), as_array(rho)
    k, d = params.k, params.d
    if w.shape != (params.L,) or rho.shape != (k, params.m):
        raise DimensionMismatch("mask or randomness has the wrong shape")
    q = params.q
    base = mod_matmul(mats.B_s, s)
    W = w.reshape(k, d).T
    R = rho.T
    vals = (base[:, None] + mod_matmul(mats.B_w, W) + mod_matmul(mats.B_rho, R)) % q
    return AjtaiCommitment(vals.T.copy())


def ajtai_aggregate_check(
    params: ProtocolParams,
    commitments: Sequence[AjtaiCommitment],
    s_sum,
    w_sum,
    rho_sum,
    mats: AjtaiMatrices | None = None,
) -> bool:
    """True iff the summed commitments open to (s_sum, w_sum, rho_sum) block by block."""
    mats = mats if mats is not None else derive_ajtai_matrices(params)
    q, k = params.q, params.k
    lhs = np.zeros((k, params.lam), dtype=np.int64)
    for com in commitments:
        if com.values.shape != (k, params.lam):
            return False
        lhs = (lhs + com.values) % q
    try:
        rhs = ajtai_commit_blocks(params, mats, s_sum, w_sum, rho_sum).values
    except (DimensionMismatch, RingError):
        return False
    return bool(np.array_equal(lhs, rhs))

