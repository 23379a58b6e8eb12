"""Party state machines for the semi-honest (SH) and malicious (MAL) protocols.

Message flow for one round:

* Phase 1.  Each client masks its input and proves the masking to S1.  It
  reveals its secret (and, in MAL, its mask seed and Ajtai randomness) to S2
  together with a consistency package.  Every message is signed.
* Phase 2.  S1 verifies proofs and S2 runs local norm checks.  S2 sends
  signed consistency digests that S1 compares with its own.  In SH a
  mismatch excludes the client before the handshake.  In MAL the
  comparison happens after the handshake and a mismatch triggers blame.
  Both servers sign the valid set V = V1 & V2.
* Phase 3.  S2 sends the signed aggregate secret (MAL: plus seeds and
  summed Ajtai randomness).  S1 checks the Ajtai homomorphism in MAL and
  decodes the sum.

``blame`` is the judge for identifiable abort.  It only trusts signed
evidence, and names either a client that equivocated or a server that
framed an honest party.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from . import consistency as cons
from .lwe_commit import (
    BoundViolation,
    DimensionMismatch,
    PublicSetup,
    ajtai_aggregate_check,
    ajtai_commit_blocks,
    decode,
    lwe_commit,
    sample_error,
    sample_rho,
    sample_secret,
)
from .params import ProtocolParams
from .ring_core import TAG_COMMIT_DIGEST, TAG_SIGN, as_array, expand_mask, hash_digest
from .zkp import (
    EncProof,
    ProofFormatError,
    ProverRandomness,
    Witness,
    prove_enc_full,
    prove_ext_full,
    verify_enc,
    verify_ext,
)

WIRE_VERSION = 1
S1_ID = 0xFFFFFF01
S2_ID = 0xFFFFFF02
DEST_S1 = 1
DEST_S2 = 2
DEST_PUBLIC = 3
MODE_SH = "sh"
MODE_MAL = "mal"

MSG_CLIENT_S1 = 1
MSG_CLIENT_S2 = 2
MSG_DIGESTS = 3
MSG_VALID_SET = 4
MSG_AGGREGATE = 5

_ENVELOPE = struct.Struct("<BQIBQ")
_SIGNED_HEADER = struct.Struct("<BQIB")


class ProtocolError(ValueError):
    """Malformed message or protocol-state violation."""


class HandshakeRefused(Exception):
    def __init__(self, server_id: int, proposal: "SignedMessage | None" = None):
        super().__init__(f"server {party_name(server_id)} refused to sign the valid set")
        self.server_id = server_id
        self.proposal = proposal


def party_name(pid: int | None) -> str:
    if pid == S1_ID:
        return "S1"
    if pid == S2_ID:
        return "S2"
    return str(pid)


# ---------------------------------------------------------------------------
# Signatures and PKI
# ---------------------------------------------------------------------------


class KeyPair:
    """Ed25519 signing key; deterministic when generated from a seeded rng."""

    def __init__(self, private: Ed25519PrivateKey):
        self._sk = private
        self.public = private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    @classmethod
    def generate(cls, rng: np.random.Generator | None = None) -> "KeyPair":
        if rng is None:
            return cls(Ed25519PrivateKey.generate())
        return cls(Ed25519PrivateKey.from_private_bytes(rng.bytes(32)))

    def sign(self, data: bytes) -> bytes:
        return self._sk.sign(data)


def verify_signature(public: bytes, data: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, data)
        return True
    except (InvalidSignature, ValueError):
        return False


class PublicKeyDirectory:
    """Static PKI: party id to raw public key."""

    def __init__(self, keys: Mapping[int, bytes] | None = None):
        self._keys = dict(keys or {})

    def register(self, pid: int, public: bytes) -> None:
        self._keys[pid] = public

    def get(self, pid: int) -> bytes | None:
        return self._keys.get(pid)

    def verify(self, msg: "SignedMessage") -> bool:
        pk = self._keys.get(msg.sender)
        return pk is not None and verify_signature(pk, msg.signing_bytes(), msg.signature)


@dataclass(frozen=True, eq=False)
class SignedMessage:
    """Envelope: version, round, sender, destination tag, payload, signature.

    The signature covers the header fields and SHA-256 of the payload.
    """

    version: int
    round_id: int
    sender: int
    dest: int
    payload: bytes
    signature: bytes

    def signing_bytes(self) -> bytes:
        return _SIGNED_HEADER.pack(self.version, self.round_id, self.sender, self.dest) + hash_digest(TAG_SIGN, [self.payload]).value

    @classmethod
    def create(cls, key: KeyPair, round_id: int, sender: int, dest: int, payload: bytes) -> "SignedMessage":
        unsigned = cls(WIRE_VERSION, round_id, sender, dest, payload, b"")
        return cls(WIRE_VERSION, round_id, sender, dest, payload, key.sign(unsigned.signing_bytes()))

    def to_bytes(self) -> bytes:
        return (
            _ENVELOPE.pack(self.version, self.round_id, self.sender, self.dest, len(self.payload))
            + self.payload
            + struct.pack("<H", len(self.signature))
            + self.signature
        )

    @property
    def wire_size(self) -> int:
        return _ENVELOPE.size + len(self.payload) + 2 + len(self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SignedMessage":
        if len(data) < _ENVELOPE.size + 2:
            raise ProtocolError("message too short")
        version, rnd, sender, dest, plen = _ENVELOPE.unpack_from(data, 0)
        off = _ENVELOPE.size
        if off + plen + 2 > len(data):
            raise ProtocolError("payload truncated")
        payload = data[off : off + plen]
        off += plen
        (slen,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + slen != len(data):
            raise ProtocolError("signature length mismatch")
        return cls(version, rnd, sender, dest, payload, data[off:])

    def with_payload(self, payload: bytes) -> "SignedMessage":
        """Same envelope and signature over a different payload (forgery helper for tests)."""
        return SignedMessage(self.version, self.round_id, self.sender, self.dest, payload, self.signature)


# ---------------------------------------------------------------------------
# Payload codecs
# ---------------------------------------------------------------------------


def pack_fields(mtype: int, fields: Sequence[bytes]) -> bytes:
    out = [struct.pack("<BI", mtype, len(fields))]
    for f in fields:
        out.append(struct.pack("<Q", len(f)))
        out.append(bytes(f))
    return b"".join(out)


def unpack_fields(data: bytes, mtype: int) -> list[bytes]:
    if len(data) < 5:
        raise ProtocolError("payload too short")
    t, count = struct.unpack_from("<BI", data, 0)
    if t != mtype:
        raise ProtocolError(f"expected payload type {mtype}, got {t}")
    off = 5
    fields = []
    for _ in range(count):
        if off + 8 > len(data):
            raise ProtocolError("field header truncated")
        (n,) = struct.unpack_from("<Q", data, off)
        off += 8
        if off + n > len(data):
            raise ProtocolError("field truncated")
        fields.append(data[off : off + n])
        off += n
    if off != len(data):
        raise ProtocolError("trailing payload bytes")
    return fields


def _ints(b: bytes) -> np.ndarray:
    if len(b) % 8:
        raise ProtocolError("integer field length not a multiple of 8")
    return np.frombuffer(b, dtype="<i8").astype(np.int64)


def _i8(a) -> bytes:
    return np.ascontiguousarray(np.asarray(a, dtype="<i8")).tobytes()


@dataclass(eq=False)
class ClientS1Payload:
    y: np.ndarray
    proof: EncProof
    commitments: np.ndarray | None = None

    def to_bytes(self) -> bytes:
        com = b"" if self.commitments is None else _i8(self.commitments)
        return pack_fields(MSG_CLIENT_S1, [_i8(self.y), self.proof.to_bytes(), com])

    @classmethod
    def from_bytes(cls, data: bytes, params: ProtocolParams) -> "ClientS1Payload":
        y_b, proof_b, com_b = unpack_fields(data, MSG_CLIENT_S1)
        y = _ints(y_b)
        if y.shape != (params.L,) or y.min(initial=0) < 0 or y.max(initial=0) >= params.q:
            raise ProtocolError("ciphertext has the wrong length or range")
        try:
            proof = EncProof.from_bytes(proof_b)
        except ProofFormatError as exc:
            raise ProtocolError(str(exc)) from exc
        com = None
        if com_b:
            com = _ints(com_b)
            if com.size != params.k * params.lam:
                raise ProtocolError("commitment field has the wrong size")
            com = com.reshape(params.k, params.lam) % params.q
        return cls(y, proof, com)


@dataclass(eq=False)
class ClientS2Payload:
    package: cons.ConsistencyPackage
    seed: bytes | None = None
    rho: np.ndarray | None = None

    def to_bytes(self) -> bytes:
        return pack_fields(
            MSG_CLIENT_S2,
            [self.package.to_bytes(), self.seed or b"", b"" if self.rho is None else _i8(self.rho)],
        )

    @classmethod
    def from_bytes(cls, data: bytes, params: ProtocolParams) -> "ClientS2Payload":
        pkg_b, seed_b, rho_b = unpack_fields(data, MSG_CLIENT_S2)
        try:
            pkg = cons.ConsistencyPackage.from_bytes(pkg_b)
        except cons.PackageFormatError as exc:
            raise ProtocolError(str(exc)) from exc
        rho = None
        if rho_b:
            rho = _ints(rho_b)
            if rho.size != params.k * params.m:
                raise ProtocolError("rho field has the wrong size")
            rho = rho.reshape(params.k, params.m)
        return cls(pkg, seed_b or None, rho)


@dataclass(frozen=True)
class DigestEntry:
    client_id: int
    consistency: bytes
    commitment: bytes


def encode_digest_report(entries: Sequence[DigestEntry]) -> bytes:
    blob = b"".join(struct.pack("<I", e.client_id) + e.consistency + e.commitment for e in entries)
    return pack_fields(MSG_DIGESTS, [blob])


def decode_digest_report(data: bytes) -> dict[int, DigestEntry]:
    (blob,) = unpack_fields(data, MSG_DIGESTS)
    if len(blob) % 68:
        raise ProtocolError("digest report has the wrong size")
    out = {}
    for off in range(0, len(blob), 68):
        (cid,) = struct.unpack_from("<I", blob, off)
        out[cid] = DigestEntry(cid, blob[off + 4 : off + 36], blob[off + 36 : off + 68])
    return out


def encode_valid_set(round_id: int, members: Iterable[int]) -> bytes:
    ids = sorted(set(int(i) for i in members))
    return pack_fields(MSG_VALID_SET, [struct.pack("<Q", round_id), np.asarray(ids, dtype="<u4").tobytes()])


def decode_valid_set(data: bytes) -> tuple[int, tuple[int, ...]]:
    rnd_b, ids_b = unpack_fields(data, MSG_VALID_SET)
    (rnd,) = struct.unpack("<Q", rnd_b)
    ids = tuple(int(i) for i in np.frombuffer(ids_b, dtype="<u4"))
    if list(ids) != sorted(set(ids)):
        raise ProtocolError("valid set must be sorted and duplicate-free")
    return rnd, ids


@dataclass(eq=False)
class AggregatePackage:
    s_sum: np.ndarray
    seeds: dict[int, bytes] = field(default_factory=dict)
    rho_sum: np.ndarray | None = None

    def to_bytes(self) -> bytes:
        ids = sorted(self.seeds)
        seed_blob = b"".join(struct.pack("<IH", i, len(self.seeds[i])) + self.seeds[i] for i in ids)
        rho = b"" if self.rho_sum is None else _i8(self.rho_sum)
        return pack_fields(MSG_AGGREGATE, [_i8(self.s_sum), seed_blob, rho])

    @classmethod
    def from_bytes(cls, data: bytes, params: ProtocolParams) -> "AggregatePackage":
        s_b, seed_blob, rho_b = unpack_fields(data, MSG_AGGREGATE)
        s_sum = _ints(s_b)
        if s_sum.shape != (params.lam,):
            raise ProtocolError("aggregate secret has the wrong length")
        seeds = {}
        off = 0
        while off < len(seed_blob):
            if off + 6 > len(seed_blob):
                raise ProtocolError("seed list truncated")
            cid, n = struct.unpack_from("<IH", seed_blob, off)
            off += 6
            seeds[cid] = seed_blob[off : off + n]
            off += n
        rho = None
        if rho_b:
            rho = _ints(rho_b)
            if rho.size != params.k * params.m:
                raise ProtocolError("aggregate rho has the wrong size")
            rho = rho.reshape(params.k, params.m)
        return cls(s_sum, seeds, rho)


def commitment_digest(commitments: np.ndarray) -> bytes:
    return hash_digest(TAG_COMMIT_DIGEST, [np.asarray(commitments, dtype="<i8")]).value


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------


def seed_length(params: ProtocolParams) -> int:
    return max(16, (params.lam + 7) // 8)


@dataclass(eq=False)
class ClientBundle:
    """One client's secret material."""

    client_id: int
    s: np.ndarray
    e: np.ndarray
    x: np.ndarray
    key: KeyPair
    seed: bytes | None = None
    rho: np.ndarray | None = None


def make_client_bundle(params: ProtocolParams, client_id: int, x, rng: np.random.Generator, mode: str = MODE_SH, key: KeyPair | None = None) -> ClientBundle:
    x = np.asarray(x, dtype=np.int64)
    s = sample_secret(params, rng)
    e = sample_error(params, rng)
    seed = rho = None
    if mode == MODE_MAL:
        seed = rng.bytes(seed_length(params))
        rho = sample_rho(params, rng)
    return ClientBundle(client_id, s, e, x, key or KeyPair.generate(rng), seed, rho)


@dataclass(eq=False)
class ClientSubmission:
    s1: ClientS1Payload
    s2: ClientS2Payload
    randomness: ProverRandomness
    proof_restarts: int = 0

    @property
    def trials(self) -> int:
        return self.randomness.total_trials


def _check_bundle(params: ProtocolParams, b: ClientBundle, mode: str) -> None:
    s, e, x = as_array(b.s), as_array(b.e), as_array(b.x)
    if s.shape != (params.lam,) or e.shape != (params.L,) or x.shape != (params.L,):
        raise DimensionMismatch("bundle dimensions do not match the parameters")
    if np.abs(s).max(initial=0) > params.B_s:
        raise BoundViolation("secret exceeds B_s")
    if np.abs(e).max(initial=0) > params.B_e:
        raise BoundViolation("error exceeds B_e")
    if x.min(initial=0) < 0 or x.max(initial=0) >= params.p:
        raise BoundViolation("input outside [0, p)")
    if mode == MODE_MAL:
        if b.seed is None or b.rho is None:
            raise DimensionMismatch("malicious mode needs a mask seed and Ajtai randomness")
        if np.asarray(b.rho).shape != (params.k, params.m):
            raise DimensionMismatch("rho has the wrong shape")
        if np.abs(b.rho).max(initial=0) > params.B_rho:
            raise BoundViolation("Ajtai randomness exceeds B_rho")


def client_prepare(
    params: ProtocolParams,
    setup: PublicSetup,
    bundle: ClientBundle,
    mode: str,
    consistency: str,
    rng: np.random.Generator,
    max_proof_restarts: int = 16,
) -> ClientSubmission:
    """Ciphertext, proof and consistency package, before signing."""
    _check_bundle(params, bundle, mode)
    w = commitments = None
    if mode == MODE_MAL:
        w = expand_mask(bundle.seed, params.L, params.p).entries
        commitments = ajtai_commit_blocks(params, setup.ajtai, bundle.s, w, bundle.rho).values
    y = lwe_commit(params, setup.A, bundle.s, bundle.e, bundle.x, w, bundle.client_id).y.entries
    witness = Witness(bundle.s, bundle.e, bundle.x, w, bundle.rho)
    for attempt in range(max_proof_restarts):
        rs_seed = rng.bytes(seed_length(params)) if consistency == cons.MODE_SEED else None
        if mode == MODE_MAL:
            proof, rand = prove_ext_full(params, setup.A, y, witness, rng, setup.ajtai, commitments, rs_seed=rs_seed)
        else:
            proof, rand = prove_enc_full(params, setup.A, y, witness, rng, rs_seed=rs_seed)
        if consistency == cons.MODE_FOLD:
            fr = cons.client_fold(proof.theta, rand.r_s, params)
            if fr.needs_restart:
                continue
            pkg = cons.make_fold_package(bundle.s, proof.theta, proof, rand, fr.r_star)
        elif consistency == cons.MODE_SEED:
            pkg = cons.make_seed_package(bundle.s, proof, rand)
        else:
            raise ValueError(f"unknown consistency mode {consistency}")
        s2 = ClientS2Payload(pkg, bundle.seed if mode == MODE_MAL else None, bundle.rho if mode == MODE_MAL else None)
        return ClientSubmission(ClientS1Payload(y, proof, commitments), s2, rand, attempt)
    raise RuntimeError("fold norm restarts exhausted")


def client_sign(bundle: ClientBundle, round_id: int, sub: ClientSubmission) -> tuple[SignedMessage, SignedMessage]:
    m1 = SignedMessage.create(bundle.key, round_id, bundle.client_id, DEST_S1, sub.s1.to_bytes())
    m2 = SignedMessage.create(bundle.key, round_id, bundle.client_id, DEST_S2, sub.s2.to_bytes())
    return m1, m2


def client_submit(
    params: ProtocolParams,
    setup: PublicSetup,
    bundle: ClientBundle,
    mode: str,
    rng: np.random.Generator,
    consistency: str = cons.MODE_FOLD,
    round_id: int = 0,
) -> tuple[SignedMessage, SignedMessage]:
    return client_sign(bundle, round_id, client_prepare(params, setup, bundle, mode, consistency, rng))


# ---------------------------------------------------------------------------
# Local checks shared by S2 and the judge
# ---------------------------------------------------------------------------


def s2_local_check(params: ProtocolParams, payload: ClientS2Payload, mode: str, consistency: str) -> str:
    """Reason code for S2's local checks ("ok" when all pass)."""
    pkg = payload.package
    if pkg.mode != consistency:
        return "WrongConsistencyMode"
    s = as_array(pkg.s)
    if s.shape != (params.lam,):
        return "Malformed"
    if np.abs(s).max(initial=0) > params.B_s:
        return "SecretNorm"
    if mode == MODE_MAL:
        if payload.seed is None or payload.rho is None:
            return "Malformed"
        if np.abs(payload.rho).max(initial=0) > params.B_rho:
            return "RhoNorm"
    try:
        cons.s2_digest(pkg, params)
    except cons.NormViolation:
        return "FoldNorm"
    except cons.AttemptOutOfRange:
        return "AttemptOutOfRange"
    return "ok"


def s2_side_digests(params: ProtocolParams, setup: PublicSetup, payload: ClientS2Payload, mode: str) -> DigestEntry:
    """Consistency digest and (MAL) commitment digest recomputed from S2's view."""
    cdig = cons.s2_digest(payload.package, params).value
    comdig = b"\0" * 32
    if mode == MODE_MAL:
        w = expand_mask(payload.seed, params.L, params.p).entries
        cbar = ajtai_commit_blocks(params, setup.ajtai, payload.package.s, w, payload.rho).values
        comdig = commitment_digest(cbar)
    return DigestEntry(0, cdig, comdig)


def s1_side_digests(params: ProtocolParams, payload: ClientS1Payload, mode: str, consistency: str) -> DigestEntry:
    cdig = cons.s1_digest(payload.proof, params, consistency).value
    comdig = commitment_digest(payload.commitments) if mode == MODE_MAL else b"\0" * 32
    return DigestEntry(0, cdig, comdig)


def verify_client_proof(params: ProtocolParams, setup: PublicSetup, payload: ClientS1Payload, mode: str):
    if mode == MODE_MAL:
        if payload.commitments is None:
            return False
        return verify_ext(params, setup.A, payload.y, payload.proof, setup.ajtai, payload.commitments)
    return verify_enc(params, setup.A, payload.y, payload.proof)


# ---------------------------------------------------------------------------
# Servers
# ---------------------------------------------------------------------------


@dataclass
class ServerBehavior:
    """Scripted deviations for adversarial scenarios (all off for an honest server)."""

    refuse_handshake: bool = False
    false_alarm_client: int | None = None
    corrupt_sum: bool = False
    withhold_client: int | None = None


@dataclass(eq=False)
class _S1Record:
    reason: str
    y: np.ndarray | None = None
    commitments: np.ndarray | None = None
    digests: DigestEntry | None = None
    message: SignedMessage | None = None


class Server1:
    """Heavy server: verifies proofs, compares digests, decodes the sum."""

    server_id = S1_ID

    def __init__(self, params, setup, mode, consistency, directory, key, round_id=0, behavior=None):
        self.params, self.setup, self.mode, self.consistency = params, setup, mode, consistency
        self.directory, self.key, self.round_id = directory, key, round_id
        self.behavior = behavior or ServerBehavior()
        self.records: dict[int, _S1Record] = {}
        self.report_msg: SignedMessage | None = None
        self.report: dict[int, DigestEntry] = {}

    # Phase 1/2 ----------------------------------------------------------

    def receive_client(self, msg: SignedMessage) -> str:
        cid = msg.sender
        if cid in self.records:
            return "Duplicate"
        reason = _envelope_reason(msg, self.directory, self.round_id, DEST_S1)
        if reason != "ok":
            self.records[cid] = _S1Record(reason)
            return reason
        try:
            payload = ClientS1Payload.from_bytes(msg.payload, self.params)
        except ProtocolError:
            self.records[cid] = _S1Record("Malformed")
            return "Malformed"
        if not verify_client_proof(self.params, self.setup, payload, self.mode):
            self.records[cid] = _S1Record("ProofInvalid")
            return "ProofInvalid"
        rec = _S1Record(
            "ok",
            payload.y,
            payload.commitments,
            s1_side_digests(self.params, payload, self.mode, self.consistency),
            msg if self.mode == MODE_MAL else None,
        )
        self.records[cid] = rec
        return "ok"

    def receive_digest_report(self, msg: SignedMessage) -> bool:
        if _envelope_reason(msg, self.directory, self.round_id, DEST_S1) != "ok" or msg.sender != S2_ID:
            return False
        try:
            self.report = decode_digest_report(msg.payload)
        except ProtocolError:
            return False
        self.report_msg = msg
        return True

    def phase2(self, expected: Iterable[int]) -> tuple[set[int], dict[int, str]]:
        """Local valid set V1 with per-client reason codes."""
        reasons = {}
        for cid in expected:
            rec = self.records.get(cid)
            if rec is None:
                reasons[cid] = "Missing"
            elif rec.reason != "ok":
                reasons[cid] = rec.reason
            elif self.mode == MODE_SH:
                entry = self.report.get(cid)
                if entry is None:
                    reasons[cid] = "NoDigest"
                elif entry.consistency != rec.digests.consistency:
                    reasons[cid] = "DigestMismatch"
                else:
                    reasons[cid] = "ok"
            else:
                reasons[cid] = "ok"
        return {c for c, r in reasons.items() if r == "ok"}, reasons

    def sign_valid_set(self, members: Iterable[int]) -> SignedMessage | None:
        if self.behavior.refuse_handshake:
            return None
        return SignedMessage.create(self.key, self.round_id, S1_ID, DEST_PUBLIC, encode_valid_set(self.round_id, members))

    def disputed_clients(self, members: Iterable[int]) -> list[int]:
        """MAL: clients in V whose S2 digests disagree with S1's view."""
        bad = []
        for cid in sorted(members):
            rec = self.records.get(cid)
            entry = self.report.get(cid)
            if rec is None or rec.digests is None or entry is None:
                bad.append(cid)
            elif entry.consistency != rec.digests.consistency or entry.commitment != rec.digests.commitment:
                bad.append(cid)
        if self.behavior.false_alarm_client is not None and self.behavior.false_alarm_client in members:
            if self.behavior.false_alarm_client not in bad:
                bad.append(self.behavior.false_alarm_client)
        return sorted(bad)

    def evidence_for(self, cid: int) -> SignedMessage | None:
        rec = self.records.get(cid)
        return None if rec is None else rec.message

    # Phase 3 ------------------------------------------------------------

    def finalize(self, members: Sequence[int], agg_msg: SignedMessage) -> "FinalizeResult":
        """Decode the aggregate; in MAL, run the Ajtai homomorphism check first."""
        p = self.params
        members = sorted(members)
        if not members:
            return FinalizeResult(np.zeros(p.L, dtype=np.int64), True)
        if _envelope_reason(agg_msg, self.directory, self.round_id, DEST_S1) != "ok" or agg_msg.sender != S2_ID:
            return FinalizeResult(None, False, "AggregateSignatureInvalid")
        try:
            agg = AggregatePackage.from_bytes(agg_msg.payload, p)
        except ProtocolError:
            return FinalizeResult(None, False, "AggregateMalformed")
        y_sum = np.zeros(p.L, dtype=np.int64)
        for cid in members:
            y_sum = (y_sum + self.records[cid].y) % p.q
        if self.mode == MODE_SH:
            return FinalizeResult(decode(p, y_sum, self.setup.A, agg.s_sum), True)
        w_sum = aggregate_mask(p, agg, members)
        if w_sum is None or agg.rho_sum is None:
            return FinalizeResult(None, False, "AggregateCheckFailed")
        coms = [_as_commitment(self.records[cid].commitments) for cid in members]
        if not ajtai_aggregate_check(p, coms, agg.s_sum, w_sum, agg.rho_sum, self.setup.ajtai):
            return FinalizeResult(None, False, "AggregateCheckFailed")
        return FinalizeResult(decode(p, y_sum, self.setup.A, agg.s_sum, w_sum), True)


@dataclass(eq=False)
class FinalizeResult:
    x_sum: np.ndarray | None
    ok: bool
    reason: str = "ok"


def _as_commitment(values):
    from .lwe_commit import AjtaiCommitment

    return AjtaiCommitment(values)


def aggregate_mask(params: ProtocolParams, agg: AggregatePackage, members: Sequence[int]) -> np.ndarray | None:
    """w_sum = sum of H'(seed_i) over V; None if a member's seed is missing."""
    w_sum = np.zeros(params.L, dtype=np.int64)
    for cid in members:
        seed = agg.seeds.get(cid)
        if seed is None:
            return None
        w_sum += expand_mask(seed, params.L, params.p).entries
    return w_sum


@dataclass(eq=False)
class _S2Record:
    reason: str
    payload: ClientS2Payload | None = None
    digests: DigestEntry | None = None
    message: SignedMessage | None = None


class Server2:
    """Light server: holds secrets, runs L-independent checks, sums secrets."""

    server_id = S2_ID

    def __init__(self, params, setup, mode, consistency, directory, key, round_id=0, behavior=None):
        self.params, self.setup, self.mode, self.consistency = params, setup, mode, consistency
        self.directory, self.key, self.round_id = directory, key, round_id
        self.behavior = behavior or ServerBehavior()
        self.records: dict[int, _S2Record] = {}

    def receive_client(self, msg: SignedMessage) -> str:
        cid = msg.sender
        if cid in self.records:
            return "Duplicate"
        reason = _envelope_reason(msg, self.directory, self.round_id, DEST_S2)
        if reason != "ok":
            self.records[cid] = _S2Record(reason)
            return reason
        try:
            payload = ClientS2Payload.from_bytes(msg.payload, self.params)
        except ProtocolError:
            self.records[cid] = _S2Record("Malformed")
            return "Malformed"
        self.records[cid] = _S2Record("pending", payload, None, msg)
        return "ok"

    def phase2(self, expected: Iterable[int]) -> tuple[set[int], dict[int, str]]:
        """Local valid set V2 (norm checks) and digests for the passing clients."""
        reasons = {}
        for cid in expected:
            rec = self.records.get(cid)
            if rec is None:
                reasons[cid] = "Missing"
                continue
            if rec.payload is None:
                reasons[cid] = rec.reason
                continue
            reason = s2_local_check(self.params, rec.payload, self.mode, self.consistency)
            if reason == "ok":
                rec.digests = s2_side_digests(self.params, self.setup, rec.payload, self.mode)
            rec.reason = reason
            reasons[cid] = reason
        return {c for c, r in reasons.items() if r == "ok"}, reasons

    def digest_report(self, members: Iterable[int]) -> SignedMessage:
        entries = []
        for cid in sorted(members):
            if cid == self.behavior.withhold_client:
                continue
            rec = self.records.get(cid)
            if rec is not None and rec.digests is not None:
                entries.append(DigestEntry(cid, rec.digests.consistency, rec.digests.commitment))
        return SignedMessage.create(self.key, self.round_id, S2_ID, DEST_S1, encode_digest_report(entries))

    def sign_valid_set(self, members: Iterable[int]) -> SignedMessage | None:
        if self.behavior.refuse_handshake:
            return None
        return SignedMessage.create(self.key, self.round_id, S2_ID, DEST_PUBLIC, encode_valid_set(self.round_id, members))

    def phase3(self, members: Iterable[int]) -> SignedMessage:
        """Signed aggregate package: exact integer sums over V."""
        p = self.params
        members = sorted(members)
        s_sum = np.zeros(p.lam, dtype=np.int64)
        seeds = {}
        rho_sum = np.zeros((p.k, p.m), dtype=np.int64) if self.mode == MODE_MAL else None
        for cid in members:
            pl = self.records[cid].payload
            s_sum += as_array(pl.package.s)
            if self.mode == MODE_MAL:
                seeds[cid] = pl.seed
                rho_sum += pl.rho
        if self.behavior.corrupt_sum and members:
            s_sum = s_sum.copy()
            s_sum[0] += 1
        agg = AggregatePackage(s_sum, seeds, rho_sum)
        return SignedMessage.create(self.key, self.round_id, S2_ID, DEST_S1, agg.to_bytes())

    def evidence_for(self, cid: int) -> SignedMessage | None:
        if cid == self.behavior.withhold_client:
            return None
        rec = self.records.get(cid)
        return None if rec is None else rec.message


def _envelope_reason(msg: SignedMessage, directory: PublicKeyDirectory, round_id: int, dest: int) -> str:
    if msg.version != WIRE_VERSION:
        return "BadVersion"
    if msg.round_id != round_id:
        return "WrongRound"
    if msg.dest != dest:
        return "WrongDestination"
    if not directory.verify(msg):
        return "BadSignature"
    return "ok"


# Functional aliases for the party operations.


def s1_phase2(server: Server1, expected: Iterable[int]):
    return server.phase2(expected)


def s2_phase2(server: Server2, expected: Iterable[int]):
    return server.phase2(expected)


def s2_phase3(server: Server2, members: Iterable[int]) -> SignedMessage:
    return server.phase3(members)


def s1_finalize(server: Server1, members: Sequence[int], agg_msg: SignedMessage) -> FinalizeResult:
    return server.finalize(members, agg_msg)


# ---------------------------------------------------------------------------
# Handshake
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ValidSet:
    round_id: int
    members: tuple[int, ...]
    sig_s1: SignedMessage
    sig_s2: SignedMessage

    def verify(self, directory: PublicKeyDirectory) -> bool:
        for msg, sid in ((self.sig_s1, S1_ID), (self.sig_s2, S2_ID)):
            if msg.sender != sid or msg.dest != DEST_PUBLIC or not directory.verify(msg):
                return False
            try:
                rnd, ids = decode_valid_set(msg.payload)
            except ProtocolError:
                return False
            if rnd != self.round_id or ids != self.members:
                return False
        return True


def handshake(V1: Iterable[int], V2: Iterable[int], server1: Server1, server2: Server2) -> ValidSet:
    """V = V1 & V2, signed by both servers; raises HandshakeRefused naming a refuser."""
    members = tuple(sorted(set(V1) & set(V2)))
    sig1 = server1.sign_valid_set(members)
    if sig1 is None:
        raise HandshakeRefused(S1_ID)
    sig2 = server2.sign_valid_set(members)
    if sig2 is None:
        raise HandshakeRefused(S2_ID, sig1)
    return ValidSet(server1.round_id, members, sig1, sig2)


# ---------------------------------------------------------------------------
# Blame
# ---------------------------------------------------------------------------

SUCCESS = "Success"
ABORT_CLIENT = "AbortClient"
ABORT_SERVER = "AbortServer"


@dataclass(frozen=True, eq=False)
class BlameVerdict:
    outcome: str
    party: int | None = None
    evidence: tuple = ()
    reason: str = ""

    def __str__(self) -> str:
        if self.outcome == SUCCESS:
            return SUCCESS
        return f"{self.outcome}({party_name(self.party)})"

    def verify_evidence(self, directory: PublicKeyDirectory) -> bool:
        """Every signed item verifies; client aborts carry two signatures by that client."""
        msgs = [e for e in self.evidence if isinstance(e, SignedMessage)]
        for e in self.evidence:
            if isinstance(e, ValidSet) and not e.verify(directory):
                return False
        if not all(directory.verify(m) for m in msgs):
            return False
        if self.outcome == ABORT_CLIENT:
            own = [m for m in msgs if m.sender == self.party]
            return len(own) >= 2 and own[0].dest != own[1].dest
        return True


@dataclass(frozen=True)
class BlameClaim:
    accuser: int
    kind: str  # "consistency" | "aggregate" | "handshake"
    client_id: int | None = None


def _client_msg_ok(msg, cid, dest, directory, round_id) -> bool:
    return msg is not None and msg.sender == cid and _envelope_reason(msg, directory, round_id, dest) == "ok"


def blame(
    params: ProtocolParams,
    setup: PublicSetup,
    directory: PublicKeyDirectory,
    claim: BlameClaim,
    valid_set: ValidSet | None,
    *,
    mode: str,
    consistency: str,
    s1_client_msgs: Mapping[int, SignedMessage | None] | None = None,
    s2_client_msgs: Mapping[int, SignedMessage | None] | None = None,
    digest_report: SignedMessage | None = None,
    aggregate: SignedMessage | None = None,
    refusal: HandshakeRefused | None = None,
) -> BlameVerdict:
    """Judge a dispute from signed evidence alone.

    Case A: both client messages carry valid signatures but do not open to
    the same secret, so the client is blamed.  Case B: the accusing server
    cannot substantiate the claim, or the evidence shows the accused
    messages are consistent, so that server is blamed.
    """
    s1_client_msgs = s1_client_msgs or {}
    s2_client_msgs = s2_client_msgs or {}
    rnd = valid_set.round_id if valid_set is not None else (refusal.proposal.round_id if refusal and refusal.proposal else 0)

    if claim.kind == "handshake":
        sid = refusal.server_id if refusal is not None else claim.accuser
        ev = (refusal.proposal,) if refusal is not None and refusal.proposal is not None else ()
        return BlameVerdict(ABORT_SERVER, sid, ev, "refused to sign the valid set")

    if valid_set is None or not valid_set.verify(directory):
        return BlameVerdict(ABORT_SERVER, claim.accuser, (), "claim without a doubly signed valid set")

    if claim.kind == "consistency":
        cid = claim.client_id
        if cid not in valid_set.members:
            return BlameVerdict(ABORT_SERVER, claim.accuser, (valid_set,), "accused client is not in V")
        if digest_report is None or digest_report.sender != S2_ID or _envelope_reason(digest_report, directory, rnd, DEST_S1) != "ok":
            return BlameVerdict(ABORT_SERVER, S1_ID, (valid_set,), "S1 cannot show a signed digest report")
        m1 = s1_client_msgs.get(cid)
        if not _client_msg_ok(m1, cid, DEST_S1, directory, rnd):
            return BlameVerdict(ABORT_SERVER, S1_ID, (valid_set, digest_report), "S1 attested a client without a signed submission")
        m2 = s2_client_msgs.get(cid)
        if not _client_msg_ok(m2, cid, DEST_S2, directory, rnd):
            return BlameVerdict(ABORT_SERVER, S2_ID, (valid_set, digest_report, m1), "S2 attested a client without a signed submission")
        report = decode_digest_report(digest_report.payload)
        try:
            p2 = ClientS2Payload.from_bytes(m2.payload, params)
            if s2_local_check(params, p2, mode, consistency) != "ok":
                raise ProtocolError("local check fails")
            d2 = s2_side_digests(params, setup, p2, mode)
        except (ProtocolError, ValueError):
            return BlameVerdict(ABORT_SERVER, S2_ID, (valid_set, m2), "S2 attested a submission failing its own checks")
        entry = report.get(cid)
        if entry is None or entry.consistency != d2.consistency or entry.commitment != d2.commitment:
            return BlameVerdict(ABORT_SERVER, S2_ID, (valid_set, digest_report, m2), "S2 misreported the client's digests")
        try:
            p1 = ClientS1Payload.from_bytes(m1.payload, params)
            if not verify_client_proof(params, setup, p1, mode):
                raise ProtocolError("proof invalid")
            d1 = s1_side_digests(params, p1, mode, consistency)
        except (ProtocolError, ValueError):
            return BlameVerdict(ABORT_SERVER, S1_ID, (valid_set, m1), "S1 attested a submission with an invalid proof")
        if d1.consistency != d2.consistency or d1.commitment != d2.commitment:
            return BlameVerdict(ABORT_CLIENT, cid, (m1, m2), "client sent inconsistent signed submissions")
        return BlameVerdict(ABORT_SERVER, S1_ID, (valid_set, m1, m2, digest_report), "submissions are consistent")

    if claim.kind == "aggregate":
        if aggregate is None or aggregate.sender != S2_ID or _envelope_reason(aggregate, directory, rnd, DEST_S1) != "ok":
            return BlameVerdict(ABORT_SERVER, S1_ID, (valid_set,), "S1 cannot show a signed aggregate package")
        coms = []
        for cid in valid_set.members:
            m1 = s1_client_msgs.get(cid)
            if not _client_msg_ok(m1, cid, DEST_S1, directory, rnd):
                return BlameVerdict(ABORT_SERVER, S1_ID, (valid_set,), "S1 attested a client without a signed submission")
            try:
                p1 = ClientS1Payload.from_bytes(m1.payload, params)
            except ProtocolError:
                return BlameVerdict(ABORT_SERVER, S1_ID, (valid_set, m1), "S1 attested a malformed submission")
            coms.append(_as_commitment(p1.commitments))
        try:
            agg = AggregatePackage.from_bytes(aggregate.payload, params)
            w_sum = aggregate_mask(params, agg, valid_set.members)
            ok = w_sum is not None and agg.rho_sum is not None and ajtai_aggregate_check(
                params, coms, agg.s_sum, w_sum, agg.rho_sum, setup.ajtai
            )
        except ProtocolError:
            ok = False
        if not ok:
            return BlameVerdict(ABORT_SERVER, S2_ID, (valid_set, aggregate), "aggregate package fails the homomorphism check")
        return BlameVerdict(ABORT_SERVER, S1_ID, (valid_set, aggregate), "aggregate package passes the homomorphism check")

    raise ValueError(f"unknown claim kind {claim.kind}")
