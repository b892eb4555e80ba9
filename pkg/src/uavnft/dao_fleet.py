"""Fleet contract: UAVs as ledger assets, nearest-feasible task assignment and
owner-gated UAV transfer.

Selection rule for a task: among UAVs that are available, carry at least the
required payload and sit within ``max_radius``, pick the smallest Euclidean
distance; scanning in ``uav_id`` order with a strict ``<`` keeps the lowest id
on ties. Urgency is recorded but does not affect selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from . import registry
from .crypto_core import hash_value
from .ledger import (
    AssignTask,
    CompleteTask,
    Draft,
    Ledger,
    LedgerState,
    LedgerTransaction,
    RegisterUav,
    Revert,
    TransferUav,
    transition,
)
from .records import NftMetadata, Principal, Task, TaskRecord, UavAsset, UavStatus, Vec3

__all__ = [
    "AssignmentResult",
    "Failure",
    "Success",
    "Task",
    "UavAsset",
    "UavStatus",
    "assign_task",
    "complete_task",
    "register_uav",
    "select_uav",
    "transfer_uav",
]

UAV_MISSION_LABEL = "uav-registration"
DISPATCHER = Principal.from_label("dao-dispatcher")


@dataclass(frozen=True)
class AssignmentResult:
    task_id: int
    selected: int | None = None
    distance: float | None = None


@dataclass(frozen=True)
class Success:
    ok = True


@dataclass(frozen=True)
class Failure:
    reason: str
    ok = False


def distance(a: Vec3, b: Vec3) -> float:
    """Euclidean distance, correctly rounded.

    Distances land in ledger state, so they must not depend on the platform's
    ``math.dist`` (which is not correctly rounded before Python 3.12). Every
    finite float is an integer times a power of two, so the squared distance is
    an exact dyadic rational and an integer square root settles the rounding.
    """
    sq = sum((Fraction(x) - Fraction(y)) ** 2 for x, y in zip(a, b, strict=True))
    num, k = sq.numerator, sq.denominator.bit_length() - 1  # sq == num / 2**k
    if num == 0:
        return 0.0
    # scale so the integer root carries at least 55 significant bits
    s = max((k + 1) // 2, (110 - num.bit_length() + k) // 2 + 1)
    m = num << (2 * s - k)
    r = math.isqrt(m)
    r = (r << 1) | (r * r != m)  # sticky bit below the rounding position
    try:
        return math.ldexp(float(r), -(s + 1))
    except OverflowError:
        return math.inf


def select_uav(uavs: dict[int, UavAsset], task: Task) -> tuple[int, float] | None:
    """Feasible argmin over the fleet; ``None`` if nothing qualifies."""
    best: tuple[int, float] | None = None
    for uav_id in sorted(uavs):
        u = uavs[uav_id]
        if u.status != UavStatus.AVAILABLE or u.payload_capacity < task.required_payload:
            continue
        d = distance(u.location, task.location)
        if d > task.max_radius:
            continue
        if best is None or d < best[1]:
            best = (uav_id, d)
    return best


def _valid_registration(a: RegisterUav) -> bool:
    loc_ok = len(a.location) == 3 and all(math.isfinite(c) for c in a.location)
    return (loc_ok and math.isfinite(a.payload_capacity) and a.payload_capacity > 0
            and a.status in (UavStatus.AVAILABLE, UavStatus.MAINTENANCE))


@transition(RegisterUav)
def _apply_register(draft: Draft, tx: LedgerTransaction) -> int:
    a: RegisterUav = tx.action
    if not _valid_registration(a):
        raise Revert("invalid uav")
    uav_id = len(draft.uavs) + 1
    meta = NftMetadata(
        mission_id=UAV_MISSION_LABEL,
        uav_id=str(uav_id),
        start_time=tx.logical_time,
        end_time=tx.logical_time,
        block_count=1,
        declared_region="",
    )
    # the UAV's NFT commits to its registration record
    root = hash_value((uav_id, a.location, a.payload_capacity, tx.sender.address),
                      tuple[int, Vec3, float, bytes])
    token_id = registry.mint_into(draft, tx.sender, root, meta)
    draft.uavs[uav_id] = UavAsset(uav_id, tuple(float(c) for c in a.location),
                                  float(a.payload_capacity), a.status, tx.sender, token_id)
    return uav_id


@transition(AssignTask)
def _apply_assign(draft: Draft, tx: LedgerTransaction) -> AssignmentResult:
    task: Task = tx.action.task
    if not task.is_valid():
        raise Revert("invalid task")
    if task.task_id in draft.tasks:
        raise Revert("duplicate task")
    pick = select_uav(draft.uavs, task)
    if pick is None:
        raise Revert("no feasible UAV")
    uav_id, d = pick
    u = draft.uavs[uav_id]
    draft.uavs[uav_id] = UavAsset(u.uav_id, u.location, u.payload_capacity,
                                  UavStatus.IN_MISSION, u.owner, u.token_id)
    draft.tasks[task.task_id] = TaskRecord(task, uav_id, d, active=True)
    return AssignmentResult(task.task_id, uav_id, d)


@transition(CompleteTask)
def _apply_complete(draft: Draft, tx: LedgerTransaction) -> None:
    rec = draft.tasks.get(tx.action.task_id)
    if rec is None or not rec.active:
        raise Revert("task not active")
    u = draft.uavs[rec.uav_id]
    if tx.sender != u.owner:
        raise Revert("not the operator")
    draft.uavs[u.uav_id] = UavAsset(u.uav_id, u.location, u.payload_capacity,
                                    UavStatus.AVAILABLE, u.owner, u.token_id)
    draft.tasks[rec.task.task_id] = TaskRecord(rec.task, rec.uav_id, rec.distance, active=False)


@transition(TransferUav)
def _apply_transfer_uav(draft: Draft, tx: LedgerTransaction) -> None:
    a: TransferUav = tx.action
    u = draft.uavs.get(a.uav_id)
    if u is None:
        raise Revert("unknown uav")
    if tx.sender != u.owner:
        raise Revert("not current owner")
    if u.status == UavStatus.IN_MISSION:
        raise Revert("UAV in mission")
    draft.uavs[u.uav_id] = UavAsset(u.uav_id, u.location, u.payload_capacity,
                                    u.status, a.new_owner, u.token_id)
    draft.owners[u.token_id] = a.new_owner
    draft.touch(u.token_id)


# ---------------------------------------------------------------------------
# ledger-facing helpers


def register_uav(ledger: Ledger, sender: Principal, location: Vec3, payload_capacity: float,
                 status: UavStatus = UavStatus.AVAILABLE, at: int | None = None) -> int:
    action = RegisterUav(tuple(float(c) for c in location), float(payload_capacity), status)
    return ledger.execute(sender, action, at).unwrap()


def assign_task(ledger: Ledger, task: Task, sender: Principal = DISPATCHER,
                at: int | None = None) -> AssignmentResult:
    """Run the assignment contract. An empty selection leaves the ledger unchanged."""
    receipt = ledger.execute(sender, AssignTask(task), at)
    if receipt.ok:
        return receipt.result
    if receipt.reason == "no feasible UAV":
        return AssignmentResult(task.task_id)
    raise Revert(receipt.reason)


def complete_task(ledger: Ledger, sender: Principal, task_id: int, at: int | None = None) -> None:
    ledger.execute(sender, CompleteTask(task_id), at).unwrap()


def transfer_uav(ledger: Ledger, sender: Principal, uav_id: int, new_owner: Principal,
                 at: int | None = None) -> Success | Failure:
    receipt = ledger.execute(sender, TransferUav(uav_id, new_owner), at)
    return Success() if receipt.ok else Failure(receipt.reason)


def status_counts(state: LedgerState) -> dict[UavStatus, int]:
    counts = {s: 0 for s in UavStatus}
    for u in state.uavs.values():
        counts[u.status] += 1
    return counts
