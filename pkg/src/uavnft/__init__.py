"""Deterministic NFT ledger for UAV flight datasets."""

from .crypto_core import Digest, canonical_encode, hash_bytes
from .ledger import Ledger, LedgerState, LedgerTransaction, Revert, history, replay, submit
from .merkle import DataBlock, build_tree, inclusion_proof, verify_inclusion
from .records import Principal
from . import dao_fleet, possession_proof, privacy, registry  # noqa: F401  (registers transitions)

__version__ = "0.1.0"

__all__ = [
    "DataBlock",
    "Digest",
    "Ledger",
    "LedgerState",
    "LedgerTransaction",
    "Principal",
    "Revert",
    "build_tree",
    "canonical_encode",
    "dao_fleet",
    "hash_bytes",
    "history",
    "inclusion_proof",
    "possession_proof",
    "privacy",
    "registry",
    "replay",
    "submit",
    "verify_inclusion",
]
