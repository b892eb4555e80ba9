"""NFT contract: minting over dataset commitments, owner-gated transfer and
time-limited access grants.

Transitions run inside ``ledger.submit``; the public helpers below wrap them
for callers holding a :class:`~uavnft.ledger.Ledger`.
"""

from __future__ import annotations

from .crypto_core import Digest
from .ledger import (
    Draft,
    GrantAccess,
    Ledger,
    LedgerError,
    LedgerState,
    LedgerTransaction,
    MintToken,
    Revert,
    RevokeAccess,
    TransferToken,
    history,
    transition,
)
from .records import (
    AccessGrant,
    LicenseConditions,
    NftMetadata,
    NftToken,
    Principal,
    UsageClass,
)

__all__ = [
    "AccessGrant",
    "LicenseConditions",
    "NftMetadata",
    "NftToken",
    "UsageClass",
    "ONLY_OWNER_TRANSFER",
    "ONLY_OWNER_GRANT",
    "check_access",
    "grant_access",
    "history",
    "mint",
    "owner_of",
    "revoke_access",
    "transfer_token",
]

ONLY_OWNER_TRANSFER = "Only the owner can transfer"
ONLY_OWNER_GRANT = "Only the owner can grant access"
UNKNOWN_TOKEN = "unknown token"
INVALID_METADATA = "invalid metadata"
GRANT_EXPIRED = "grant already expired"
NO_ACTIVE_GRANT = "no active grant"
UAV_BOUND_TOKEN = "token is bound to a UAV; use TransferUav"


def next_token_id(draft: Draft) -> int:
    return len(draft.tokens) + 1


def mint_into(draft: Draft, owner: Principal, data_root: Digest, metadata: NftMetadata) -> int:
    if not metadata.is_valid():
        raise Revert(INVALID_METADATA)
    token_id = next_token_id(draft)
    draft.tokens[token_id] = NftToken(token_id, Digest(data_root), metadata)
    draft.owners[token_id] = owner
    draft.touch(token_id)
    return token_id


def _require_token(draft: Draft, token_id: int) -> Principal:
    owner = draft.owners.get(token_id)
    if owner is None:
        raise Revert(UNKNOWN_TOKEN)
    return owner


def _uav_bound(draft: Draft, token_id: int) -> bool:
    return any(u.token_id == token_id for u in draft.uavs.values())


@transition(MintToken)
def _apply_mint(draft: Draft, tx: LedgerTransaction) -> int:
    return mint_into(draft, tx.sender, tx.action.data_root, tx.action.metadata)


@transition(TransferToken)
def _apply_transfer(draft: Draft, tx: LedgerTransaction) -> None:
    a: TransferToken = tx.action
    owner = _require_token(draft, a.token_id)
    if tx.sender != owner or a.from_owner != owner:
        raise Revert(ONLY_OWNER_TRANSFER)
    if _uav_bound(draft, a.token_id):
        raise Revert(UAV_BOUND_TOKEN)
    draft.owners[a.token_id] = a.to_owner
    draft.touch(a.token_id)


@transition(GrantAccess)
def _apply_grant(draft: Draft, tx: LedgerTransaction) -> None:
    a: GrantAccess = tx.action
    owner = _require_token(draft, a.token_id)
    if tx.sender != owner:
        raise Revert(ONLY_OWNER_GRANT)
    if a.expiration <= tx.logical_time:
        raise Revert(GRANT_EXPIRED)
    # last write wins for a (grantee, token) pair
    draft.grants[(a.grantee, a.token_id)] = AccessGrant(
        a.grantee, a.token_id, a.expiration, a.conditions)
    draft.touch(a.token_id)


@transition(RevokeAccess)
def _apply_revoke(draft: Draft, tx: LedgerTransaction) -> None:
    a: RevokeAccess = tx.action
    owner = _require_token(draft, a.token_id)
    if tx.sender != owner:
        raise Revert(ONLY_OWNER_GRANT)
    grant = draft.grants.get((a.grantee, a.token_id))
    if grant is None or grant.revoked:
        raise Revert(NO_ACTIVE_GRANT)
    draft.grants[(a.grantee, a.token_id)] = AccessGrant(
        grant.grantee, grant.token_id, grant.expiration, grant.conditions, revoked=True)
    draft.touch(a.token_id)


# ---------------------------------------------------------------------------
# queries


def owner_of(state: LedgerState, token_id: int) -> Principal:
    try:
        return state.owners[token_id]
    except KeyError:
        raise LedgerError(f"unknown token {token_id}") from None


def grant_allows(grant: AccessGrant | None, t_now: int) -> bool:
    """Unrevoked grant, ``t_now < expiration`` and licence conditions met."""
    if grant is None or grant.revoked:
        return False
    return t_now < grant.expiration and grant.conditions.satisfied


def check_access(state: LedgerState, grantee: Principal, token_id: int, t_now: int) -> bool:
    return grant_allows(state.grants.get((grantee, token_id)), t_now)


# ---------------------------------------------------------------------------
# ledger-facing helpers; each raises Revert when the contract refuses


def mint(ledger: Ledger, sender: Principal, data_root: Digest, metadata: NftMetadata,
         at: int | None = None) -> int:
    return ledger.execute(sender, MintToken(Digest(data_root), metadata), at).unwrap()


def transfer_token(ledger: Ledger, sender: Principal, from_owner: Principal,
                   to_owner: Principal, token_id: int, at: int | None = None) -> None:
    ledger.execute(sender, TransferToken(from_owner, to_owner, token_id), at).unwrap()


def grant_access(ledger: Ledger, sender: Principal, grantee: Principal, token_id: int,
                 expiration: int, conditions: LicenseConditions,
                 at: int | None = None) -> None:
    action = GrantAccess(grantee, token_id, expiration, conditions)
    ledger.execute(sender, action, at).unwrap()


def revoke_access(ledger: Ledger, sender: Principal, grantee: Principal, token_id: int,
                  at: int | None = None) -> None:
    ledger.execute(sender, RevokeAccess(grantee, token_id), at).unwrap()
