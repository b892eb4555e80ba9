"""Value types stored in ledger state and carried in transaction payloads.

They live here rather than in ``registry``/``dao_fleet`` so that the ledger can
name them in its action variants without an import cycle. Those modules
re-export the ones they own.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .crypto_core import Address, Digest, canonical_encode, hash_bytes

DEFAULT_PRINCIPAL_SEED = "uavnft/principals/v1"


@dataclass(frozen=True, order=True)
class Principal:
    address: Address

    @classmethod
    def from_label(cls, label: str, seed: str = DEFAULT_PRINCIPAL_SEED) -> "Principal":
        """Address = first 20 bytes of H(encode(seed) || encode(label))."""
        if not label:
            raise ValueError("principal label must be non-empty")
        digest = hash_bytes(canonical_encode(seed) + canonical_encode(label))
        return cls(Address(digest[:20]))

    @property
    def hex(self) -> str:
        return self.address.hex()

    def __str__(self) -> str:
        return "0x" + self.address.hex()


@dataclass(frozen=True)
class NftMetadata:
    mission_id: str
    uav_id: str
    start_time: int
    end_time: int
    block_count: int
    declared_region: str

    def is_valid(self) -> bool:
        return self.start_time <= self.end_time and self.block_count >= 1


@dataclass(frozen=True)
class NftToken:
    token_id: int
    data_root: Digest
    metadata: NftMetadata


class UsageClass(enum.IntEnum):
    VIEW = 0
    DERIVE = 1
    REDISTRIBUTE = 2


@dataclass(frozen=True)
class LicenseConditions:
    fee_paid: bool = False
    region_ok: bool = True
    usage_class: UsageClass = UsageClass.VIEW

    @property
    def satisfied(self) -> bool:
        return self.fee_paid and self.region_ok


@dataclass(frozen=True)
class AccessGrant:
    grantee: Principal
    token_id: int
    expiration: int
    conditions: LicenseConditions
    revoked: bool = False


class UavStatus(enum.IntEnum):
    AVAILABLE = 0
    IN_MISSION = 1
    MAINTENANCE = 2


Vec3 = tuple[float, float, float]


def _finite_vec(v) -> bool:
    return len(v) == 3 and all(isinstance(c, (int, float)) and math.isfinite(c) for c in v)


@dataclass(frozen=True)
class UavAsset:
    uav_id: int
    location: Vec3
    payload_capacity: float
    status: UavStatus
    owner: Principal
    token_id: int


@dataclass(frozen=True)
class Task:
    """Task requirements. ``max_radius`` of ``inf`` means unbounded."""

    task_id: int
    location: Vec3
    required_payload: float
    urgency: int = 0
    max_radius: float = math.inf

    def is_valid(self) -> bool:
        return (
            _finite_vec(self.location)
            and math.isfinite(self.required_payload)
            and self.required_payload > 0
            and 0 <= self.urgency <= 255
            and self.max_radius >= 0
        )


@dataclass(frozen=True)
class TaskRecord:
    task: Task
    uav_id: int
    distance: float
    active: bool
