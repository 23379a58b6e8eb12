"""Arithmetic over Z_q, discrete Gaussian sampling and hash derivations.

Every other module builds on the primitives here:

* ``ZqVector`` / ``ZqMatrix`` hold canonical residues in [0, q).
* ``mod_matmul`` multiplies a Z_q matrix by integer vectors exactly.  It
  runs BLAS in float64 on centered representatives and splits the right
  operand into signed limbs whenever a product could exceed 2^53.
* ``sample_discrete_gaussian`` draws from D_sigma with a hard tail cut.
* ``hash_digest``, ``derive_challenge``, ``expand_matrix``, ``expand_mask``
  and ``prg_bits`` are the random-oracle instantiations.  Each use site has
  its own one-byte domain tag.
"""

from __future__ import annotations

import functools
import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# ---------------------------------------------------------------------------
# Domain tags (one byte per use site)
# ---------------------------------------------------------------------------

TAG_CHALLENGE = b"\x01"
TAG_FOLD_DIGEST = b"\x02"
TAG_MASK = b"\x03"
TAG_MATRIX = b"\x04"
TAG_PRG = b"\x05"
TAG_BINDER = b"\x06"
TAG_SEED_R = b"\x07"
TAG_STATEMENT = b"\x08"
TAG_SEED_DIGEST = b"\x09"
TAG_COMMIT_DIGEST = b"\x0a"
TAG_AJTAI_S = b"\x0b"
TAG_AJTAI_W = b"\x0c"
TAG_AJTAI_RHO = b"\x0d"
TAG_SIGN = b"\x0e"
TAG_SUBSEED = b"\x0f"

TAIL_CUT = 12
_EXACT = 1 << 53
_TABLE_LIMIT = 1 << 18
_MATRIX_CHUNK_ROWS = 1024


class RingError(ValueError):
    """Raised on malformed ring-level inputs (dimensions, moduli, bounds)."""


# ---------------------------------------------------------------------------
# Scalar helpers
# ---------------------------------------------------------------------------


def is_power_of_two(v: int) -> bool:
    return v > 0 and (v & (v - 1)) == 0


def word_bytes(q: int) -> int:
    """Byte width used to serialize residues mod q."""
    return 4 if q <= (1 << 32) else 8


def centered(a, q: int) -> np.ndarray:
    """Representatives in (-q/2, q/2]."""
    a = np.mod(np.asarray(a, dtype=np.int64), q)
    return np.where(a > q // 2, a - q, a)


def mulmod(a, b: int, q: int) -> np.ndarray:
    """(a * b) mod q for an int64 array ``a`` and a scalar ``b``, without overflow."""
    a = np.mod(np.asarray(a, dtype=np.int64), q)
    b = int(b) % q
    if (q - 1) * b < (1 << 63):
        return (a * b) % q
    if is_power_of_two(q):
        prod = a.astype(np.uint64) * np.uint64(b)
        return (prod & np.uint64(q - 1)).astype(np.int64)
    obj = (a.astype(object) * b) % q
    return np.asarray(obj, dtype=np.int64)


def to_zq_bytes(a, q: int) -> bytes:
    """Little-endian fixed-width encoding of canonical residues."""
    dt = "<u4" if word_bytes(q) == 4 else "<u8"
    return np.ascontiguousarray(np.mod(np.asarray(a, dtype=np.int64), q).astype(dt)).tobytes()


def int64_bytes(a) -> bytes:
    return np.ascontiguousarray(np.asarray(a, dtype="<i8")).tobytes()


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ZqVector:
    """Vector over Z_q with canonical entries in [0, q)."""

    entries: np.ndarray
    q: int

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=np.int64)
        if arr.ndim != 1:
            raise RingError("ZqVector must be one-dimensional")
        if arr.size and (arr.min() < 0 or arr.max() >= self.q):
            raise RingError("ZqVector entries must lie in [0, q)")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "entries", arr)

    @classmethod
    def reduce(cls, values, q: int) -> "ZqVector":
        return cls(np.mod(np.asarray(values, dtype=np.int64), q), q)

    def __len__(self) -> int:
        return int(self.entries.shape[0])

    def centered(self) -> np.ndarray:
        return centered(self.entries, self.q)

    def __add__(self, other: "ZqVector") -> "ZqVector":
        _check_same(self, other)
        return ZqVector((self.entries + other.entries) % self.q, self.q)

    def __sub__(self, other: "ZqVector") -> "ZqVector":
        _check_same(self, other)
        return ZqVector((self.entries - other.entries) % self.q, self.q)

    def __neg__(self) -> "ZqVector":
        return ZqVector((-self.entries) % self.q, self.q)

    def scale(self, c: int) -> "ZqVector":
        return ZqVector(mulmod(self.entries, c, self.q), self.q)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ZqVector)
            and other.q == self.q
            and np.array_equal(other.entries, self.entries)
        )

    def __hash__(self):
        return hash((self.q, self.entries.tobytes()))

    def to_bytes(self) -> bytes:
        return to_zq_bytes(self.entries, self.q)


def _check_same(a: ZqVector, b: ZqVector) -> None:
    if a.q != b.q or len(a) != len(b):
        raise RingError("operands differ in modulus or length")


class ZqMatrix:
    """Matrix over Z_q with canonical entries and a cached centered float64 copy.

    The float copy feeds BLAS; ``mod_matmul`` decides when that is exact.
    """

    __slots__ = ("data", "q", "_cf", "_max")

    def __init__(self, data, q: int, *, _cf=None, _max=None, _trusted=False):
        arr = np.asarray(data, dtype=np.int64)
        if arr.ndim != 2:
            raise RingError("ZqMatrix must be two-dimensional")
        if not _trusted and arr.size and (arr.min() < 0 or arr.max() >= q):
            raise RingError("ZqMatrix entries must lie in [0, q)")
        if arr.flags.writeable:
            arr = arr.copy() if not _trusted else arr
            arr.flags.writeable = False
        self.data = arr
        self.q = int(q)
        self._cf = _cf
        self._max = _max

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def centered_f64(self) -> np.ndarray:
        if self._cf is None:
            cf = np.empty(self.data.shape, dtype=np.float64)
            half = self.q // 2
            for start in range(0, self.data.shape[0], 4096):
                blk = self.data[start : start + 4096]
                cf[start : start + 4096] = blk - np.where(blk > half, self.q, 0)
            cf.flags.writeable = False
            self._cf = cf
        return self._cf

    @property
    def max_abs(self) -> int:
        if self._max is None:
            self._max = int(np.abs(self.centered_f64).max()) if self.data.size else 0
        return self._max

    def rows(self, start: int, stop: int) -> "ZqMatrix":
        """Row slice sharing storage (and the float cache) with the parent."""
        cf = self._cf[start:stop] if self._cf is not None else None
        return ZqMatrix(self.data[start:stop], self.q, _cf=cf, _max=self._max, _trusted=True)

    def __matmul__(self, x) -> np.ndarray:
        return mod_matmul(self, x)

    def __eq__(self, other) -> bool:
        return isinstance(other, ZqMatrix) and other.q == self.q and np.array_equal(other.data, self.data)

    def __hash__(self):
        return hash((self.q, self.data.shape, self.data.tobytes()))


@dataclass(frozen=True, eq=False)
class IntVector:
    """Signed integer vector with headroom for exact norms (|entry| < 2^62)."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=np.int64)
        if arr.ndim != 1:
            raise RingError("IntVector must be one-dimensional")
        if arr.size and int(np.abs(arr).max()) >= (1 << 62):
            raise RingError("IntVector entry exceeds 2^62")
        object.__setattr__(self, "entries", arr)

    def __len__(self) -> int:
        return int(self.entries.shape[0])

    def norm_inf(self) -> int:
        return int(np.abs(self.entries).max()) if len(self) else 0

    def norm2(self) -> float:
        return l2_norm(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, IntVector) and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())


@dataclass(frozen=True)
class Digest:
    """Fixed 32-byte hash output."""

    value: bytes

    def __post_init__(self):
        if len(self.value) != 32:
            raise RingError("digest must be 32 bytes")

    def __bytes__(self) -> bytes:
        return self.value

    def hex(self) -> str:
        return self.value.hex()


@dataclass(frozen=True)
class GaussianParams:
    """Width and dimension of a discrete Gaussian draw."""

    sigma: float
    dim: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise RingError("sigma must be positive")
        if int(self.dim) < 1:
            raise RingError("dim must be at least 1")


def as_array(v) -> np.ndarray:
    """Unwrap ZqVector / IntVector / arrays into an int64 ndarray."""
    if isinstance(v, (ZqVector, IntVector)):
        return v.entries
    if isinstance(v, ZqMatrix):
        return v.data
    return np.asarray(v, dtype=np.int64)


def l2_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(math.sqrt(float(np.dot(a.ravel(), a.ravel()))))


def sq_norms(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Squared L2 norms along ``axis`` computed in float64."""
    f = np.asarray(a, dtype=np.float64)
    return np.einsum("...i,...i->...", np.moveaxis(f, axis, -1), np.moveaxis(f, axis, -1))


# ---------------------------------------------------------------------------
# Exact matrix products mod q
# ---------------------------------------------------------------------------


def mod_matmul(M: ZqMatrix, X) -> np.ndarray:
    """Return M @ X mod q (canonical int64) for integer X of shape (cols,) or (cols, N)."""
    X = as_array(X)
    rows, inner = M.shape
    if X.shape[0] != inner:
        raise RingError(f"dimension mismatch: matrix has {inner} columns, operand has {X.shape[0]} rows")
    q = M.q
    out_shape = (rows,) + X.shape[1:]
    if inner == 0 or X.size == 0:
        return np.zeros(out_shape, dtype=np.int64)
    m_max = M.max_abs
    x_max = int(np.abs(X).max())
    if m_max == 0 or x_max == 0:
        return np.zeros(out_shape, dtype=np.int64)
    if m_max * x_max * inner < _EXACT:
        return _float_product(M.centered_f64, X, q)
    if m_max * inner * 4 >= _EXACT:
        prod = (M.data.astype(object) @ X.astype(object)) % q
        return np.asarray(prod, dtype=np.int64)
    bits = int(math.floor(math.log2(_EXACT / (m_max * inner)))) - 1
    mask = (1 << bits) - 1
    acc = np.zeros(out_shape, dtype=np.int64)
    rest = X.copy()
    shift = 0
    while True:
        if int(np.abs(rest).max()) <= mask:
            limb, done = rest, True
        else:
            limb, done = rest & mask, False
        part = _float_product(M.centered_f64, limb, q)
        acc = (acc + mulmod(part, pow(2, shift, q), q)) % q
        if done:
            return acc
        rest = rest >> bits
        shift += bits


def _float_product(Mf: np.ndarray, X: np.ndarray, q: int) -> np.ndarray:
    prod = Mf @ X.astype(np.float64)
    return np.mod(prod.astype(np.int64), q)


# ---------------------------------------------------------------------------
# Discrete Gaussian sampling
# ---------------------------------------------------------------------------


def gaussian_pmf(sigma: float, bound: int) -> tuple[np.ndarray, np.ndarray]:
    """Support [-bound, bound] and normalized weights proportional to exp(-x^2 / 2 sigma^2)."""
    xs = np.arange(-bound, bound + 1, dtype=np.int64)
    w = np.exp(-(xs.astype(np.float64) ** 2) / (2.0 * sigma * sigma))
    return xs, w / w.sum()


@functools.lru_cache(maxsize=64)
def _alias_table(sigma: float, bound: int) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias table over the tail-cut support."""
    _, p = gaussian_pmf(sigma, bound)
    n = p.size
    scaled = (p * n).tolist()
    prob = np.ones(n, dtype=np.float64)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i, v in enumerate(scaled) if v < 1.0]
    large = [i for i, v in enumerate(scaled) if v >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    prob.flags.writeable = False
    alias.flags.writeable = False
    return prob, alias


@functools.lru_cache(maxsize=64)
def _cdf_table(sigma: float, bound: int) -> np.ndarray:
    _, p = gaussian_pmf(sigma, bound)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    cdf.flags.writeable = False
    return cdf


def _cut(sigma: float, bound: int | None) -> int:
    cut = int(math.floor(TAIL_CUT * sigma))
    if bound is not None:
        cut = min(cut, int(bound))
    return max(cut, 0)


def sample_gaussian_array(sigma: float, shape, rng: np.random.Generator, bound: int | None = None) -> np.ndarray:
    """Discrete Gaussian samples of the given shape, tail-cut at min(12 sigma, bound).

    Narrow widths use an alias table over the exact pmf.  Very wide widths,
    whose table would be impractical, round a continuous normal and resample
    anything beyond the cut.
    """
    if not sigma > 0:
        raise RingError("sigma must be positive")
    cut = _cut(sigma, bound)
    size = int(np.prod(shape)) if np.ndim(shape) else int(shape)
    if cut == 0:
        return np.zeros(shape, dtype=np.int64)
    if 2 * cut + 1 <= _TABLE_LIMIT:
        prob, alias = _alias_table(float(sigma), cut)
        idx = rng.integers(0, prob.size, size=size)
        u = rng.random(size)
        out = np.where(u < prob[idx], idx, alias[idx]) - cut
        return out.astype(np.int64).reshape(shape)
    out = np.rint(rng.normal(0.0, sigma, size=size))
    bad = np.abs(out) > cut
    while bad.any():
        out[bad] = np.rint(rng.normal(0.0, sigma, size=int(bad.sum())))
        bad = np.abs(out) > cut
    return out.astype(np.int64).reshape(shape)


def sample_discrete_gaussian(params: GaussianParams, rng: np.random.Generator) -> IntVector:
    """``params.dim`` independent draws from D_sigma with |sample| <= 12 sigma."""
    return IntVector(sample_gaussian_array(params.sigma, int(params.dim), rng))


def gaussian_from_stream(sigma: float, dim: int, stream: bytes, bound: int | None = None) -> np.ndarray:
    """Deterministic D_sigma draws from 8 * dim bytes of hash output (inverse CDF)."""
    cut = _cut(sigma, bound)
    if 2 * cut + 1 > _TABLE_LIMIT:
        raise RingError("stream sampling supports table-sized widths only")
    if len(stream) < 8 * dim:
        raise RingError("stream too short")
    words = np.frombuffer(stream, dtype="<u8", count=dim)
    u = (words >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    idx = np.searchsorted(_cdf_table(float(sigma), cut), u, side="right")
    return (np.minimum(idx, 2 * cut) - cut).astype(np.int64)


# ---------------------------------------------------------------------------
# Hash derivations
# ---------------------------------------------------------------------------


def _as_bytes_view(part) -> memoryview:
    if isinstance(part, np.ndarray):
        arr = np.ascontiguousarray(part)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        return memoryview(arr.view(np.uint8).reshape(-1))
    if isinstance(part, Digest):
        return memoryview(part.value)
    if isinstance(part, int):
        raise RingError("encode integers explicitly before hashing")
    return memoryview(part).cast("B")


def hash_digest(domain_tag: bytes, parts: Sequence) -> Digest:
    """SHA-256 over the length-prefixed tag followed by length-prefixed parts."""
    if not domain_tag:
        raise RingError("domain tag must be non-empty")
    h = hashlib.sha256()
    h.update(struct.pack("<Q", len(domain_tag)))
    h.update(domain_tag)
    for part in parts:
        view = _as_bytes_view(part)
        h.update(struct.pack("<Q", view.nbytes))
        h.update(view)
    return Digest(h.digest())


def _xof(tag: bytes, parts: Iterable[bytes], length: int) -> bytes:
    h = hashlib.shake_256()
    h.update(tag)
    for p in parts:
        h.update(struct.pack("<Q", len(p)))
        h.update(p)
    return h.digest(length)


def _uniform_words(tag: bytes, parts: list[bytes], count: int, q: int) -> np.ndarray:
    """``count`` uniform residues mod q from an XOF stream."""
    if is_power_of_two(q):
        if q <= (1 << 32):
            words = np.frombuffer(_xof(tag, parts, 4 * count), dtype="<u4").astype(np.int64)
        else:
            words = np.frombuffer(_xof(tag, parts, 8 * count), dtype="<u8") & np.uint64(q - 1)
            return words.astype(np.int64)
        return words & (q - 1)
    width = 4 if q <= (1 << 32) else 8
    dt = "<u4" if width == 4 else "<u8"
    limit = ((1 << (8 * width)) // q) * q
    want = count + count // 4 + 16
    while True:
        words = np.frombuffer(_xof(tag, parts, width * want), dtype=dt)
        if width == 4:
            good = words.astype(np.int64)
            good = good[good < limit]
        else:
            good = words[words < np.uint64(limit)]
        if good.size >= count:
            return (good[:count] % np.asarray(q, dtype=good.dtype)).astype(np.int64)
        want *= 2


def expand_matrix(seed: bytes, rows: int, cols: int, q: int) -> ZqMatrix:
    """Deterministic uniform matrix in Z_q^{rows x cols} from a public seed.

    Rows are generated in independent chunks of 1024, so a taller matrix
    extends a shorter one with the same seed.
    """
    if rows < 1 or cols < 1:
        raise RingError("rows and cols must be positive")
    out = np.empty((rows, cols), dtype=np.int64)
    qb = q.to_bytes(8, "little")
    cb = cols.to_bytes(8, "little")
    for chunk, start in enumerate(range(0, rows, _MATRIX_CHUNK_ROWS)):
        nrows = min(_MATRIX_CHUNK_ROWS, rows - start)
        parts = [bytes(seed), qb, cb, chunk.to_bytes(8, "little")]
        full = _uniform_words(TAG_MATRIX, parts, _MATRIX_CHUNK_ROWS * cols, q)
        out[start : start + nrows] = full[: nrows * cols].reshape(nrows, cols)
    return ZqMatrix(out, q, _trusted=True)


def derive_subseed(tag: bytes, seed: bytes) -> bytes:
    """Independent 32-byte seed for a tagged derivation (e.g. the Ajtai matrices)."""
    return hash_digest(TAG_SUBSEED, [tag, seed]).value


def expand_mask(seed: bytes, L: int, p: int) -> IntVector:
    """Random-oracle mask w = H'(seed) with centered entries in (-p/2, p/2]."""
    if L < 1:
        raise RingError("L must be positive")
    raw = _uniform_words(TAG_MASK, [bytes(seed), p.to_bytes(8, "little"), L.to_bytes(8, "little")], L, p)
    return IntVector(np.where(raw > p // 2, raw - p, raw))


def prg_bits(seed: bytes, count: int) -> np.ndarray:
    """``count`` pseudorandom bits (uint8 0/1), LSB-first within each stream byte."""
    if count < 1:
        raise RingError("count must be positive")
    stream = _xof(TAG_PRG, [bytes(seed)], (count + 7) // 8)
    bits = np.unpackbits(np.frombuffer(stream, dtype=np.uint8), bitorder="little")
    return bits[:count].copy()


def _challenge_width(C: int) -> int:
    span = 2 * C + 1
    if span <= 256:
        return 1
    if span <= 1 << 16:
        return 2
    return 4


def challenge_from_digest(digest: bytes, C: int) -> int | None:
    """Map hash output to {-C..C} by rejection on raw words; None if every word is rejected."""
    if C < 1:
        raise RingError("challenge bound must be at least 1")
    span = 2 * C + 1
    width = _challenge_width(C)
    top = (1 << (8 * width)) - 1
    reject_from = top - (top % span)
    for off in range(0, len(digest) - width + 1, width):
        word = int.from_bytes(digest[off : off + width], "little")
        if word < reject_from:
            return word % span - C
    return None


def derive_challenge(transcript_bytes: bytes, C: int) -> int:
    """Fiat-Shamir challenge in {-C..C}, unbiased by rejection sampling."""
    if C < 1:
        raise RingError("challenge bound must be at least 1")
    counter = 0
    while True:
        h = hashlib.sha256(TAG_CHALLENGE)
        h.update(transcript_bytes)
        if counter:
            h.update(counter.to_bytes(4, "little"))
        c = challenge_from_digest(h.digest(), C)
        if c is not None:
            return c
        counter += 1


def seeded_secret_mask(sigma: float, dim: int, seed: bytes, u: int, j: int, attempt: int) -> np.ndarray:
    """H_r(seed, u, j, attempt): reproducible D_sigma mask vector for seed-mode consistency."""
    parts = [bytes(seed), struct.pack("<III", u, j, attempt)]
    return gaussian_from_stream(sigma, dim, _xof(TAG_SEED_R, parts, 8 * dim))
