"""Setup / prove / verify for data-possession proofs against a committed root.

Two backends share one interface:

``SIGMA_COMMIT``
    Pedersen commitment ``C = g^m h^r`` to the committed digest ``m`` plus a
    Fiat-Shamir proof of knowledge of the opening ``(m, r)``. Zero-knowledge:
    the transcript carries no data blocks, and accepting transcripts can be
    simulated without the witness (:func:`simulate_sigma`). What it proves is
    knowledge of an opening of ``C`` bound to the statement, not possession of
    the blocks themselves.

``MERKLE_CHALLENGE``
    Opens ``challenge_count`` leaves at indices derived from the statement hash,
    each with an inclusion proof. This is a possession proof only and is NOT
    zero-knowledge: the verifier sees the sampled blocks. Its transcript label
    says so.
"""

from __future__ import annotations

import enum
import hashlib
import random
from dataclasses import dataclass
from typing import Any, Sequence

from .crypto_core import (
    Digest,
    EncodingError,
    Reader,
    canonical_decode,
    canonical_encode,
    decode_from,
    encode_into,
    hash_bytes,
)
from .ledger import AnchorProof, Draft, Ledger, LedgerState, LedgerTransaction, Revert, transition
from .merkle import DataBlock, MerkleProof, build_tree, inclusion_proof, verify_inclusion
from .records import Principal
from .registry import grant_allows

SIGMA_LABEL = "sigma-commit/zero-knowledge"
MERKLE_LABEL = "merkle-challenge/possession-only/not-zero-knowledge"
STATEMENT_MISMATCH = "statement mismatch"

# RFC 3526 group 14: 2048-bit safe prime
_MODP2048 = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22"
    "514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6"
    "F44C42E9A637ED6B0BFF5CB6F406B7EDEE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D"
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3BE39E772C180E8603"
    "9B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE515D2261898FA0510"
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)
# 63-bit safe prime for exhaustive tests; offers no real security
_TOY64 = 4611686018427394499

GROUPS = {"modp2048": _MODP2048, "toy64": _TOY64}


class Backend(enum.IntEnum):
    SIGMA_COMMIT = 1
    MERKLE_CHALLENGE = 2


def _to_fixed(n: int, width: int) -> bytes:
    return n.to_bytes(width, "big")


def _expand(material: bytes, nbytes: int) -> bytes:
    out = bytearray()
    ctr = 0
    while len(out) < nbytes:
        out += hashlib.sha256(material + ctr.to_bytes(4, "big")).digest()
        ctr += 1
    return bytes(out[:nbytes])


def _jacobi(a: int, n: int) -> int:
    """Jacobi symbol (a/n) for odd n > 0, by quadratic reciprocity."""
    a %= n
    result = 1
    while a:
        while a % 2 == 0:
            a //= 2
            if n % 8 in (3, 5):
                result = -result
        a, n = n, a
        if a % 4 == 3 and n % 4 == 3:
            result = -result
        a %= n
    return result if n == 1 else 0


@dataclass(frozen=True)
class GroupParams:
    """Prime-order-q subgroup of Z_p^* for a safe prime ``p = 2q + 1``."""

    name: str
    p: int
    q: int
    g: int
    h: int

    @property
    def element_width(self) -> int:
        return (self.p.bit_length() + 7) // 8

    @property
    def scalar_width(self) -> int:
        return (self.q.bit_length() + 7) // 8

    def is_element(self, x: int) -> bool:
        # for a safe prime the order-q subgroup is exactly the quadratic residues
        return 1 <= x < self.p and _jacobi(x, self.p) == 1

    def __canonical_encode__(self, out: bytearray) -> None:
        encode_into(str, self.name, out)
        for n in (self.p, self.q, self.g, self.h):
            encode_into(bytes, n.to_bytes(max(1, (n.bit_length() + 7) // 8), "big"), out)

    @classmethod
    def __canonical_decode__(cls, r: Reader) -> "GroupParams":
        name = decode_from(str, r)
        p, q, g, h = (int.from_bytes(decode_from(bytes, r), "big") for _ in range(4))
        return cls(name, p, q, g, h)


def make_group(name: str, seed: str) -> GroupParams:
    try:
        p = GROUPS[name]
    except KeyError:
        raise ValueError(f"unknown group {name!r}") from None
    q = (p - 1) // 2
    g = 4  # a square, hence of order q
    width = (p.bit_length() + 7) // 8 + 16
    ctr = 0
    while True:
        material = canonical_encode(("uavnft/pedersen-h", seed, name, ctr))
        x = int.from_bytes(_expand(material, width), "big") % p
        h = pow(x, 2, p)
        if h not in (0, 1, g):
            return GroupParams(name, p, q, g, h)
        ctr += 1


@dataclass(frozen=True)
class SecurityConfig:
    seed: str = "uavnft/proof/v1"
    group: str = "modp2048"
    challenge_count: int = 8


@dataclass(frozen=True)
class ProofParams:
    backend: Backend
    seed: str
    challenge_count: int
    group: GroupParams | None = None

    def __canonical_encode__(self, out: bytearray) -> None:
        encode_into(Backend, self.backend, out)
        encode_into(str, self.seed, out)
        encode_into(int, self.challenge_count, out)
        encode_into(bool, self.group is not None, out)
        if self.group is not None:
            encode_into(GroupParams, self.group, out)

    @classmethod
    def __canonical_decode__(cls, r: Reader) -> "ProofParams":
        backend = decode_from(Backend, r)
        seed = decode_from(str, r)
        count = decode_from(int, r)
        group = decode_from(GroupParams, r) if decode_from(bool, r) else None
        return cls(backend, seed, count, group)

    def to_bytes(self) -> bytes:
        return canonical_encode(self)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProofParams":
        return canonical_decode(cls, data)


@dataclass(frozen=True)
class ProofStatement:
    committed_digest: Digest
    leaf_count: int = 0


def setup(backend: Backend, config: SecurityConfig = SecurityConfig()) -> ProofParams:
    backend = Backend(backend)
    if not config.seed:
        raise ValueError("setup seed must be non-empty")
    if config.challenge_count < 1:
        raise ValueError("challenge_count must be >= 1")
    group = make_group(config.group, config.seed) if backend == Backend.SIGMA_COMMIT else None
    return ProofParams(backend, config.seed, config.challenge_count, group)


# ---------------------------------------------------------------------------
# transcripts


@dataclass(frozen=True)
class SigmaTranscript:
    label: str
    commitment: bytes
    announcement: bytes
    challenge: bytes
    response_m: bytes
    response_r: bytes


@dataclass(frozen=True)
class Opening:
    index: int
    block: DataBlock
    proof: MerkleProof


@dataclass(frozen=True)
class MerkleTranscript:
    label: str
    openings: tuple[Opening, ...]


_TRANSCRIPTS = {Backend.SIGMA_COMMIT: SigmaTranscript, Backend.MERKLE_CHALLENGE: MerkleTranscript}


@dataclass(frozen=True)
class PossessionProof:
    backend: Backend
    transcript: SigmaTranscript | MerkleTranscript

    def to_bytes(self) -> bytes:
        """Backend tag byte followed by the canonical transcript encoding."""
        return bytes([self.backend]) + canonical_encode(self.transcript)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PossessionProof":
        if not data:
            raise EncodingError("empty proof")
        try:
            backend = Backend(data[0])
        except ValueError:
            raise EncodingError(f"unknown backend tag {data[0]}") from None
        return cls(backend, canonical_decode(_TRANSCRIPTS[backend], data[1:]))

    def __canonical_encode__(self, out: bytearray) -> None:
        out += self.to_bytes()

    @property
    def revealed_blocks(self) -> tuple[DataBlock, ...]:
        if isinstance(self.transcript, MerkleTranscript):
            return tuple(o.block for o in self.transcript.openings)
        return ()


def proof_digest(proof: PossessionProof) -> Digest:
    return hash_bytes(proof.to_bytes())


# ---------------------------------------------------------------------------
# sigma backend


def _sigma_challenge(params: ProofParams, statement: ProofStatement, commitment: bytes,
                     announcement: bytes) -> int:
    material = (canonical_encode(params) + canonical_encode(statement)
                + canonical_encode((commitment, announcement), tuple[bytes, bytes]))
    return int.from_bytes(hash_bytes(b"uavnft/sigma-fs" + material), "big") % params.group.q


def _scalar(material: bytes, grp: GroupParams) -> int:
    return int.from_bytes(_expand(material, grp.scalar_width + 16), "big") % grp.q


def _prove_sigma(blocks: Sequence[DataBlock], statement: ProofStatement, params: ProofParams,
                 randomness_seed: Any) -> SigmaTranscript:
    grp = params.group
    p, q = grp.p, grp.q
    m = int.from_bytes(statement.committed_digest, "big") % q
    base = canonical_encode(("uavnft/sigma-nonce", type(randomness_seed).__name__,
                             randomness_seed, statement.committed_digest))
    r = _scalar(base + b"r", grp)
    a = _scalar(base + b"a", grp)
    b = _scalar(base + b"b", grp)
    ew, sw = grp.element_width, grp.scalar_width
    commitment = _to_fixed(pow(grp.g, m, p) * pow(grp.h, r, p) % p, ew)
    announcement = _to_fixed(pow(grp.g, a, p) * pow(grp.h, b, p) % p, ew)
    c = _sigma_challenge(params, statement, commitment, announcement)
    return SigmaTranscript(
        SIGMA_LABEL,
        commitment,
        announcement,
        _to_fixed(c, sw),
        _to_fixed((a + c * m) % q, sw),
        _to_fixed((b + c * r) % q, sw),
    )


def _parse_sigma(t: SigmaTranscript, grp: GroupParams) -> tuple[int, ...] | None:
    ew, sw = grp.element_width, grp.scalar_width
    if t.label != SIGMA_LABEL:
        return None
    if len(t.commitment) != ew or len(t.announcement) != ew:
        return None
    if not all(len(x) == sw for x in (t.challenge, t.response_m, t.response_r)):
        return None
    C, T = (int.from_bytes(x, "big") for x in (t.commitment, t.announcement))
    c, z1, z2 = (int.from_bytes(x, "big") for x in (t.challenge, t.response_m, t.response_r))
    if not (grp.is_element(C) and grp.is_element(T)):
        return None
    if not all(0 <= s < grp.q for s in (c, z1, z2)):
        return None
    return C, T, c, z1, z2


def sigma_equation_holds(t: SigmaTranscript, grp: GroupParams) -> bool:
    """``g^z1 h^z2 == T C^c`` with every component range-checked."""
    parsed = _parse_sigma(t, grp)
    if parsed is None:
        return False
    C, T, c, z1, z2 = parsed
    p = grp.p
    return pow(grp.g, z1, p) * pow(grp.h, z2, p) % p == T * pow(C, c, p) % p


def _verify_sigma(t: SigmaTranscript, statement: ProofStatement, params: ProofParams) -> bool:
    # the hash comparison is cheap, so it goes before the exponentiations
    if _parse_sigma(t, params.group) is None:
        return False
    c = int.from_bytes(t.challenge, "big")
    if c != _sigma_challenge(params, statement, t.commitment, t.announcement):
        return False
    return sigma_equation_holds(t, params.group)


def simulate_sigma(params: ProofParams, rng: random.Random) -> SigmaTranscript:
    """Honest-verifier simulator: an accepting (C, T, c, z1, z2) built without
    any witness, with the challenge chosen first. Used to check that real
    transcripts leak nothing about the committed value."""
    grp = params.group
    p, q = grp.p, grp.q
    ew, sw = grp.element_width, grp.scalar_width
    commitment = pow(grp.h, rng.randrange(q), p)
    c, z1, z2 = (rng.randrange(q) for _ in range(3))
    announcement = pow(grp.g, z1, p) * pow(grp.h, z2, p) * pow(commitment, q - c, p) % p
    return SigmaTranscript(SIGMA_LABEL, _to_fixed(commitment, ew), _to_fixed(announcement, ew),
                           _to_fixed(c, sw), _to_fixed(z1, sw), _to_fixed(z2, sw))


# ---------------------------------------------------------------------------
# merkle-challenge backend


def challenge_indices(statement: ProofStatement, params: ProofParams) -> list[int]:
    """Indices both sides derive from ``H(seed || statement || round)``; sampled
    with replacement."""
    n = statement.leaf_count
    if n < 1:
        raise ValueError("merkle challenge needs leaf_count >= 1")
    out = []
    for rnd in range(params.challenge_count):
        material = canonical_encode(("uavnft/merkle-challenge", params.seed,
                                     statement.committed_digest, n, rnd),
                                    tuple[str, str, Digest, int, int])
        out.append(int.from_bytes(hash_bytes(material), "big") % n)
    return out


def _prove_merkle(blocks: Sequence[DataBlock], statement: ProofStatement,
                  params: ProofParams) -> MerkleTranscript:
    tree = build_tree(blocks)
    openings = tuple(
        Opening(i, blocks[i], inclusion_proof(tree, i))
        for i in challenge_indices(statement, params)
    )
    return MerkleTranscript(MERKLE_LABEL, openings)


def _verify_merkle(t: MerkleTranscript, statement: ProofStatement, params: ProofParams) -> bool:
    if t.label != MERKLE_LABEL or statement.leaf_count < 1:
        return False
    expected = challenge_indices(statement, params)
    if [o.index for o in t.openings] != expected:
        return False
    for o in t.openings:
        if o.block.index != o.index or o.proof.leaf_index != o.index:
            return False
        if not verify_inclusion(statement.committed_digest, o.block, o.proof,
                                leaf_count=statement.leaf_count):
            return False
    return True


# ---------------------------------------------------------------------------
# public interface


def prove(blocks: Sequence[DataBlock], statement: ProofStatement, params: ProofParams,
          randomness_seed: Any = 0) -> PossessionProof:
    """Produce a proof that verifies against ``statement``.

    Raises ``ValueError("statement mismatch")`` when the dataset's Merkle root
    (or size, for the challenge backend) disagrees with the statement.
    """
    blocks = list(blocks)
    if not blocks or build_tree(blocks).root != statement.committed_digest:
        raise ValueError(STATEMENT_MISMATCH)
    if params.backend == Backend.SIGMA_COMMIT:
        return PossessionProof(params.backend,
                               _prove_sigma(blocks, statement, params, randomness_seed))
    if statement.leaf_count != len(blocks):
        raise ValueError(STATEMENT_MISMATCH)
    return PossessionProof(params.backend, _prove_merkle(blocks, statement, params))


def verify(proof: PossessionProof | bytes, statement: ProofStatement,
           params: ProofParams) -> bool:
    if isinstance(proof, (bytes, bytearray)):
        try:
            proof = PossessionProof.from_bytes(bytes(proof))
        except (EncodingError, ValueError):
            return False
    if proof.backend != params.backend:
        return False
    t = proof.transcript
    if params.backend == Backend.SIGMA_COMMIT:
        return isinstance(t, SigmaTranscript) and params.group is not None and _verify_sigma(
            t, statement, params)
    return isinstance(t, MerkleTranscript) and _verify_merkle(t, statement, params)


def statement_for_token(state: LedgerState, token_id: int) -> ProofStatement:
    token = state.tokens.get(token_id)
    if token is None:
        raise KeyError(f"unknown token {token_id}")
    return ProofStatement(token.data_root, token.metadata.block_count)


@transition(AnchorProof)
def _apply_anchor(draft: Draft, tx: LedgerTransaction) -> None:
    a: AnchorProof = tx.action
    owner = draft.owners.get(a.token_id)
    if owner is None:
        raise Revert("unknown token")
    if tx.sender != owner and not grant_allows(
            draft.grants.get((tx.sender, a.token_id)), tx.logical_time):
        raise Revert("not authorized to anchor")
    draft.touch(a.token_id)


def anchor_proof(ledger: Ledger, sender: Principal, token_id: int, digest: Digest,
                 at: int | None = None) -> None:
    ledger.execute(sender, AnchorProof(token_id, Digest(digest)), at).unwrap()
