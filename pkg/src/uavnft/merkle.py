"""Binary Merkle trees over flight-data blocks.

Leaves are ``H(0x00 || encode(block))`` and internal nodes are
``H(0x01 || left || right)``. A level with an odd number of nodes pairs its last
node with a copy of itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import crypto_core
from .crypto_core import Digest, EncodingError, Reader, canonical_encode

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

# side flag: where the sibling sits relative to the running node
LEFT = 0
RIGHT = 1


class MerkleError(ValueError):
    pass


@dataclass(frozen=True)
class DataBlock:
    index: int
    timestamp: int
    payload: bytes


def leaf_digest(block: DataBlock) -> Digest:
    return crypto_core.hash_bytes(LEAF_PREFIX + canonical_encode(block))


def node_digest(left: bytes, right: bytes) -> Digest:
    return crypto_core.hash_bytes(NODE_PREFIX + left + right)


def proof_depth(leaf_count: int) -> int:
    """Number of siblings in a proof for a tree of ``leaf_count`` leaves."""
    return (leaf_count - 1).bit_length() if leaf_count > 1 else 0


@dataclass(frozen=True)
class MerkleTree:
    levels: tuple[tuple[Digest, ...], ...]
    leaf_count: int

    @property
    def leaf_digests(self) -> tuple[Digest, ...]:
        return self.levels[0]

    @property
    def root(self) -> Digest:
        return self.levels[-1][0]


def build_tree(blocks: Sequence[DataBlock]) -> MerkleTree:
    if not blocks:
        raise MerkleError("cannot build a Merkle tree over zero blocks")
    prev_ts = None
    for i, block in enumerate(blocks):
        if block.index != i:
            raise MerkleError(f"block at position {i} has index {block.index}")
        if prev_ts is not None and block.timestamp < prev_ts:
            raise MerkleError(f"timestamp decreases at block {i}")
        prev_ts = block.timestamp

    level = tuple(leaf_digest(b) for b in blocks)
    levels = [level]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            left = level[i]
            right = level[i + 1] if i + 1 < len(level) else left
            nxt.append(node_digest(left, right))
        level = tuple(nxt)
        levels.append(level)
    return MerkleTree(levels=tuple(levels), leaf_count=len(blocks))


def root(tree: MerkleTree) -> Digest:
    return tree.root


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    leaf_count: int
    siblings: tuple[tuple[Digest, int], ...]

    def to_bytes(self) -> bytes:
        """``leaf_index u64 || leaf_count u64 || n u16 || (side u8 || digest)*n``"""
        out = bytearray()
        out += self.leaf_index.to_bytes(8, "big")
        out += self.leaf_count.to_bytes(8, "big")
        out += len(self.siblings).to_bytes(2, "big")
        for digest, side in self.siblings:
            out.append(side)
            out += digest
        return bytes(out)

    @classmethod
    def read(cls, r: Reader) -> "MerkleProof":
        leaf_index = r.u64()
        leaf_count = r.u64()
        n = r.u16()
        siblings = []
        for _ in range(n):
            side = r.u8()
            if side not in (LEFT, RIGHT):
                raise EncodingError(f"invalid side flag {side}")
            siblings.append((Digest(r.take(32)), side))
        return cls(leaf_index, leaf_count, tuple(siblings))

    @classmethod
    def from_bytes(cls, data: bytes) -> "MerkleProof":
        r = Reader(data)
        proof = cls.read(r)
        r.finish()
        return proof

    # embedded in other canonical structures as a length-prefixed blob
    def __canonical_encode__(self, out: bytearray) -> None:
        raw = self.to_bytes()
        out += len(raw).to_bytes(8, "big")
        out += raw

    @classmethod
    def __canonical_decode__(cls, r: Reader) -> "MerkleProof":
        return cls.from_bytes(r.take(r.u64()))


def inclusion_proof(tree: MerkleTree, leaf_index: int) -> MerkleProof:
    if not 0 <= leaf_index < tree.leaf_count:
        raise MerkleError(f"leaf index {leaf_index} out of range [0, {tree.leaf_count})")
    siblings = []
    idx = leaf_index
    for level in tree.levels[:-1]:
        if idx % 2 == 0:
            sib = level[idx + 1] if idx + 1 < len(level) else level[idx]
            siblings.append((sib, RIGHT))
        else:
            siblings.append((level[idx - 1], LEFT))
        idx //= 2
    return MerkleProof(leaf_index, tree.leaf_count, tuple(siblings))


def verify_inclusion(root_digest: bytes, block: DataBlock, proof: MerkleProof,
                     leaf_count: int | None = None) -> bool:
    """Fold the block's leaf digest up the sibling path and compare with the root.

    The path shape is checked against ``leaf_index``/``leaf_count`` before any
    hashing, so a proof cannot be replayed for another position.

    The root does not commit to the tree size, and some positions have the same
    path shape in trees of different sizes. Pass ``leaf_count`` (for example the
    token's recorded block count) to reject proofs that misstate it.
    """
    n = proof.leaf_count
    if leaf_count is not None and n != leaf_count:
        return False
    if n < 1 or not 0 <= proof.leaf_index < n or block.index != proof.leaf_index:
        return False
    if len(proof.siblings) != proof_depth(n):
        return False
    idx = proof.leaf_index
    for _, side in proof.siblings:
        if side != (LEFT if idx % 2 else RIGHT):
            return False
        idx //= 2

    node = leaf_digest(block)
    idx, width = proof.leaf_index, n
    for sibling, side in proof.siblings:
        if side == RIGHT and idx == width - 1 and sibling != node:
            # a lone last node may only pair with its own copy
            return False
        node = node_digest(sibling, node) if side == LEFT else node_digest(node, sibling)
        idx //= 2
        width = (width + 1) // 2
    return node == bytes(root_digest)
