"""Append-only transaction log and the deterministic state machine it drives.

``submit`` is the only way state changes. A transaction either applies in full
and extends the hash chain, or reverts and leaves the previous state object
untouched. Contract logic (registry, fleet, proof anchoring) plugs in through
the ``transition`` decorator.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, ClassVar, Iterable, Sequence

from .crypto_core import (
    Digest,
    EncodingError,
    Reader,
    canonical_encode,
    decode_from,
    encode_into,
    hash_bytes,
    hash_value,
)
from .records import (
    AccessGrant,
    LicenseConditions,
    NftMetadata,
    NftToken,
    Principal,
    Task,
    TaskRecord,
    UavAsset,
    UavStatus,
    Vec3,
)

GENESIS_DIGEST = hash_value("genesis")


class LedgerError(Exception):
    """Malformed input to the ledger itself (sequence gaps, corrupt logs)."""

    def __init__(self, message: str, seq: int | None = None):
        super().__init__(message)
        self.seq = seq


class Revert(Exception):
    """A contract rejected a transaction. ``reason`` is the stable message."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# ---------------------------------------------------------------------------
# transaction variants


@dataclass(frozen=True)
class MintToken:
    TAG: ClassVar[int] = 1
    data_root: Digest
    metadata: NftMetadata


@dataclass(frozen=True)
class TransferToken:
    TAG: ClassVar[int] = 2
    from_owner: Principal
    to_owner: Principal
    token_id: int


@dataclass(frozen=True)
class GrantAccess:
    TAG: ClassVar[int] = 3
    grantee: Principal
    token_id: int
    expiration: int
    conditions: LicenseConditions


@dataclass(frozen=True)
class RevokeAccess:
    TAG: ClassVar[int] = 4
    grantee: Principal
    token_id: int


@dataclass(frozen=True)
class RegisterUav:
    TAG: ClassVar[int] = 5
    location: Vec3
    payload_capacity: float
    status: UavStatus = UavStatus.AVAILABLE


@dataclass(frozen=True)
class AssignTask:
    TAG: ClassVar[int] = 6
    task: Task


@dataclass(frozen=True)
class TransferUav:
    TAG: ClassVar[int] = 7
    uav_id: int
    new_owner: Principal


@dataclass(frozen=True)
class CompleteTask:
    TAG: ClassVar[int] = 8
    task_id: int


@dataclass(frozen=True)
class AnchorProof:
    TAG: ClassVar[int] = 9
    token_id: int
    proof_digest: Digest


ACTIONS: dict[int, type] = {
    cls.TAG: cls
    for cls in (MintToken, TransferToken, GrantAccess, RevokeAccess, RegisterUav,
                AssignTask, TransferUav, CompleteTask, AnchorProof)
}


@dataclass(frozen=True)
class LedgerTransaction:
    seq: int
    sender: Principal
    logical_time: int
    action: Any

    def __canonical_encode__(self, out: bytearray) -> None:
        if ACTIONS.get(getattr(self.action, "TAG", None)) is not type(self.action):
            raise EncodingError(f"unknown action {type(self.action).__name__}")
        encode_into(int, self.seq, out)
        encode_into(Principal, self.sender, out)
        encode_into(int, self.logical_time, out)
        out.append(self.action.TAG)
        encode_into(type(self.action), self.action, out)

    @classmethod
    def __canonical_decode__(cls, r: Reader) -> "LedgerTransaction":
        seq = decode_from(int, r)
        sender = decode_from(Principal, r)
        logical_time = decode_from(int, r)
        tag = r.u8()
        if tag not in ACTIONS:
            raise EncodingError(f"unknown action tag {tag}")
        return cls(seq, sender, logical_time, decode_from(ACTIONS[tag], r))

    def to_bytes(self) -> bytes:
        return canonical_encode(self)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LedgerTransaction":
        r = Reader(data)
        tx = cls.__canonical_decode__(r)
        r.finish()
        return tx


# ---------------------------------------------------------------------------
# state


@dataclass(frozen=True)
class LedgerState:
    """Immutable snapshot. The dict fields are never mutated after creation."""

    head_digest: Digest = GENESIS_DIGEST
    last_seq: int = 0
    last_time: int = 0
    tokens: dict[int, NftToken] = field(default_factory=dict)
    owners: dict[int, Principal] = field(default_factory=dict)
    grants: dict[tuple[Principal, int], AccessGrant] = field(default_factory=dict)
    uavs: dict[int, UavAsset] = field(default_factory=dict)
    tasks: dict[int, TaskRecord] = field(default_factory=dict)
    token_refs: dict[int, tuple[int, ...]] = field(default_factory=dict)
    log: tuple[LedgerTransaction, ...] = ()

    def encode(self) -> bytes:
        """Canonical bytes of the full state, used for equality checks and audits."""
        out = bytearray()
        encode_into(Digest, self.head_digest, out)
        for n in (self.last_seq, self.last_time, len(self.log)):
            encode_into(int, n, out)
        encode_into(int, len(self.tokens), out)
        for tid in sorted(self.tokens):
            encode_into(NftToken, self.tokens[tid], out)
            encode_into(Principal, self.owners[tid], out)
        encode_into(int, len(self.grants), out)
        for key in sorted(self.grants):
            encode_into(AccessGrant, self.grants[key], out)
        encode_into(int, len(self.uavs), out)
        for uid in sorted(self.uavs):
            encode_into(UavAsset, self.uavs[uid], out)
        encode_into(int, len(self.tasks), out)
        for task_id in sorted(self.tasks):
            encode_into(TaskRecord, self.tasks[task_id], out)
        encode_into(int, len(self.token_refs), out)
        for tid in sorted(self.token_refs):
            encode_into(int, tid, out)
            encode_into(tuple[int, ...], self.token_refs[tid], out)
        return bytes(out)


def genesis() -> LedgerState:
    return LedgerState()


class Draft:
    """Mutable working copy handed to a transition; discarded on revert."""

    def __init__(self, state: LedgerState):
        self.base = state
        self.tokens = dict(state.tokens)
        self.owners = dict(state.owners)
        self.grants = dict(state.grants)
        self.uavs = dict(state.uavs)
        self.tasks = dict(state.tasks)
        self.touched: list[int] = []

    def touch(self, token_id: int) -> None:
        if token_id not in self.touched:
            self.touched.append(token_id)


@dataclass(frozen=True)
class Receipt:
    seq: int
    ok: bool
    head_digest: Digest
    reason: str | None = None
    result: Any = None

    def unwrap(self) -> Any:
        if not self.ok:
            raise Revert(self.reason or "reverted")
        return self.result


Handler = Callable[[Draft, LedgerTransaction], Any]
_HANDLERS: dict[type, Handler] = {}


def transition(action_cls: type) -> Callable[[Handler], Handler]:
    def register(fn: Handler) -> Handler:
        _HANDLERS[action_cls] = fn
        return fn
    return register


def _handler_for(action: Any) -> Handler:
    if not _HANDLERS:
        # contract modules register themselves on import
        from . import dao_fleet, possession_proof, registry  # noqa: F401
    try:
        return _HANDLERS[type(action)]
    except KeyError:
        raise LedgerError(f"no transition registered for {type(action).__name__}") from None


def chain_digest(prev: bytes, tx: LedgerTransaction) -> Digest:
    return hash_bytes(bytes(prev) + canonical_encode(tx))


def submit(state: LedgerState, tx: LedgerTransaction) -> tuple[LedgerState, Receipt]:
    if tx.seq != state.last_seq + 1:
        raise LedgerError(f"sequence gap: expected seq {state.last_seq + 1}, got {tx.seq}", tx.seq)
    if tx.logical_time < state.last_time:
        raise LedgerError(
            f"logical time {tx.logical_time} precedes last time {state.last_time}", tx.seq)
    handler = _handler_for(tx.action)
    draft = Draft(state)
    try:
        result = handler(draft, tx)
    except Revert as exc:
        return state, Receipt(tx.seq, False, state.head_digest, reason=exc.reason)

    head = chain_digest(state.head_digest, tx)
    refs = dict(state.token_refs)
    for tid in draft.touched:
        refs[tid] = refs.get(tid, ()) + (tx.seq,)
    new_state = LedgerState(
        head_digest=head,
        last_seq=tx.seq,
        last_time=tx.logical_time,
        tokens=draft.tokens,
        owners=draft.owners,
        grants=draft.grants,
        uavs=draft.uavs,
        tasks=draft.tasks,
        token_refs=refs,
        log=state.log + (tx,),
    )
    return new_state, Receipt(tx.seq, True, head, result=result)


def replay(log: Iterable[LedgerTransaction]) -> LedgerState:
    """Rebuild state from a log of applied transactions."""
    state = genesis()
    for tx in log:
        if tx.seq != state.last_seq + 1:
            raise LedgerError(f"malformed log at seq {tx.seq}: expected {state.last_seq + 1}",
                              tx.seq)
        state, receipt = submit(state, tx)
        if not receipt.ok:
            raise LedgerError(f"transaction {tx.seq} reverts on replay: {receipt.reason}", tx.seq)
    return state


def history(state: LedgerState, token_id: int) -> list[LedgerTransaction]:
    if token_id not in state.tokens:
        raise LedgerError(f"unknown token {token_id}")
    return [state.log[seq - 1] for seq in state.token_refs.get(token_id, ())]


class Ledger:
    """Single-writer handle around a ``LedgerState``.

    Builds transactions with the next sequence number, so callers only name the
    sender, the action and (optionally) the logical time.
    """

    def __init__(self, state: LedgerState | None = None):
        self.state = state if state is not None else genesis()
        self._lock = threading.Lock()

    def execute(self, sender: Principal, action: Any, at: int | None = None) -> Receipt:
        with self._lock:
            t = self.state.last_time if at is None else at
            tx = LedgerTransaction(self.state.last_seq + 1, sender, t, action)
            self.state, receipt = submit(self.state, tx)
            return receipt

    @property
    def log(self) -> tuple[LedgerTransaction, ...]:
        return self.state.log

    @property
    def now(self) -> int:
        return self.state.last_time


# ---------------------------------------------------------------------------
# persisted form: genesis hex, then "<tx hex> <head hex>" per line

_HEX = re.compile(r"[0-9a-f]+")


def dump_log(log: Sequence[LedgerTransaction]) -> str:
    lines = [GENESIS_DIGEST.hex()]
    head = GENESIS_DIGEST
    for tx in log:
        head = chain_digest(head, tx)
        lines.append(f"{tx.to_bytes().hex()} {head.hex()}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ChainCheck:
    ok: bool
    length: int
    head: Digest | None = None
    bad_seq: int | None = None
    message: str = ""


def _parse_lines(text: str) -> list[tuple[LedgerTransaction, Digest]]:
    if not text.endswith("\n"):
        raise LedgerError("log must end with a newline")
    lines = text[:-1].split("\n")
    if lines[0] != GENESIS_DIGEST.hex():
        raise LedgerError("first line is not the genesis digest", 0)
    entries = []
    for lineno, line in enumerate(lines[1:], start=1):
        parts = line.split(" ")
        if len(parts) != 2 or not all(_HEX.fullmatch(p) for p in parts):
            raise LedgerError(f"malformed record on line {lineno + 1}", lineno)
        tx_hex, head_hex = parts
        if len(tx_hex) % 2 or len(head_hex) != 64:
            raise LedgerError(f"malformed record on line {lineno + 1}", lineno)
        try:
            tx = LedgerTransaction.from_bytes(bytes.fromhex(tx_hex))
        except (EncodingError, ValueError) as exc:
            raise LedgerError(f"undecodable transaction on line {lineno + 1}: {exc}", lineno)
        entries.append((tx, Digest.fromhex(head_hex)))
    return entries


def load_log(text: str) -> list[LedgerTransaction]:
    """Parse a persisted log and check its hash chain; raises on any defect."""
    result = verify_chain(text)
    if not result.ok:
        raise LedgerError(result.message, result.bad_seq)
    return [tx for tx, _ in _parse_lines(text)]


def verify_chain(text: str) -> ChainCheck:
    try:
        entries = _parse_lines(text)
    except LedgerError as exc:
        return ChainCheck(False, 0, bad_seq=exc.seq, message=str(exc))
    head = GENESIS_DIGEST
    last_time = 0
    for i, (tx, recorded) in enumerate(entries, start=1):
        if tx.seq != i:
            return ChainCheck(False, i - 1, head, i, f"sequence gap at record {i} (seq {tx.seq})")
        if tx.logical_time < last_time:
            return ChainCheck(False, i - 1, head, i, f"logical time decreases at seq {i}")
        last_time = tx.logical_time
        head = chain_digest(head, tx)
        if head != recorded:
            return ChainCheck(False, i - 1, head, i, f"chain digest mismatch at seq {i}")
    return ChainCheck(True, len(entries), head)
