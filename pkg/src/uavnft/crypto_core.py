"""Canonical serialization, hashing, key derivation and authenticated encryption.

Everything hashed or persisted by this package goes through ``canonical_encode``.
The byte mapping is type driven and documented in ``docs/encoding.md``:

* ``int``   -> u64 big-endian (negative or >= 2**64 rejected)
* ``float`` -> IEEE-754 binary64 big-endian (NaN rejected, -0.0 folded to 0.0)
* ``bool``  -> one byte, 0x00 or 0x01
* ``IntEnum`` -> one byte holding the member value
* ``str``   -> u64 byte length, then UTF-8
* ``bytes`` -> u64 length, then raw bytes
* fixed-size byte types (``Digest``, ``Address``) -> raw bytes, no prefix
* ``tuple``/``list`` -> u64 element count, then each element
* dataclasses -> their fields in declaration order, no framing

Types may override the mapping with ``__canonical_encode__`` /
``__canonical_decode__``.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import math
import struct
import threading
import typing
from dataclasses import dataclass
from functools import lru_cache
from typing import Any

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

__all__ = [
    "Address",
    "AuthenticationError",
    "CipherSession",
    "Ciphertext",
    "Digest",
    "EncodingError",
    "FixedBytes",
    "NonceReuseError",
    "Reader",
    "SymmetricKey",
    "canonical_decode",
    "canonical_encode",
    "decrypt",
    "derive_key",
    "encrypt",
    "hash_bytes",
    "hash_value",
]

U64_MAX = 2**64 - 1
NONCE_SIZE = 12
TAG_SIZE = 16
KEY_SIZE = 32
_KDF_SALT = b"uavnft/kdf/v1"


class EncodingError(ValueError):
    """Raised when a value cannot be encoded or bytes cannot be decoded."""


class AuthenticationError(Exception):
    """Ciphertext failed authentication: wrong key or tampered data."""


class NonceReuseError(ValueError):
    pass


class FixedBytes(bytes):
    """Byte string of a fixed length; encodes without a length prefix."""

    SIZE: typing.ClassVar[int] = 0

    def __new__(cls, value: bytes = b""):
        value = bytes(value)
        if len(value) != cls.SIZE:
            raise ValueError(f"{cls.__name__} must be {cls.SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def fromhex(cls, text: str):
        return cls(bytes.fromhex(text))

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.hex()})"

    def __str__(self) -> str:
        return self.hex()


class Digest(FixedBytes):
    """A 256-bit hash value."""

    SIZE = 32


class Address(FixedBytes):
    SIZE = 20


class SymmetricKey(FixedBytes):
    SIZE = KEY_SIZE

    def __repr__(self) -> str:
        # keys never show up in logs or reprs
        return "SymmetricKey(<redacted>)"

    __str__ = __repr__


# ---------------------------------------------------------------------------
# canonical encoding


def _u64(n: int) -> bytes:
    if isinstance(n, bool) or not isinstance(n, int):
        raise EncodingError(f"expected int, got {type(n).__name__}")
    if not 0 <= n <= U64_MAX:
        raise EncodingError(f"integer {n} outside u64 range")
    return n.to_bytes(8, "big")


def _f64(x: float) -> bytes:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise EncodingError(f"expected float, got {type(x).__name__}")
    x = float(x)
    if math.isnan(x):
        raise EncodingError("NaN has no canonical encoding")
    if x == 0.0:
        x = 0.0
    return struct.pack(">d", x)


@lru_cache(maxsize=None)
def _field_types(cls: type) -> tuple[tuple[str, Any], ...]:
    hints = typing.get_type_hints(cls)
    return tuple((f.name, hints[f.name]) for f in dataclasses.fields(cls))


def _encode_into(tp: Any, value: Any, out: bytearray) -> None:
    if tp in (tuple, list):
        tp = tuple[Any, ...]
    origin = typing.get_origin(tp)
    if origin in (tuple, list):
        args = typing.get_args(tp)
        if not isinstance(value, (tuple, list)):
            raise EncodingError(f"expected sequence, got {type(value).__name__}")
        if origin is tuple and args and args[-1] is not Ellipsis:
            if len(value) != len(args):
                raise EncodingError(f"expected {len(args)} elements, got {len(value)}")
            item_types = args
        else:
            item_types = (args[0] if args else Any,) * len(value)
        out += _u64(len(value))
        for item_tp, item in zip(item_types, value):
            _encode_into(item_tp, item, out)
        return
    if tp is Any:
        _encode_into(type(value), value, out)
        return
    if not isinstance(tp, type):
        raise EncodingError(f"unsupported type annotation {tp!r}")
    hook = getattr(tp, "__canonical_encode__", None)
    if hook is not None:
        if not isinstance(value, tp):
            raise EncodingError(f"expected {tp.__name__}, got {type(value).__name__}")
        hook(value, out)
    elif issubclass(tp, bool):
        if not isinstance(value, bool):
            raise EncodingError(f"expected bool, got {type(value).__name__}")
        out.append(1 if value else 0)
    elif issubclass(tp, enum.IntEnum):
        member = value if isinstance(value, tp) else None
        if member is None:
            raise EncodingError(f"expected {tp.__name__}, got {value!r}")
        out.append(int(member))
    elif issubclass(tp, int):
        out += _u64(value)
    elif issubclass(tp, float):
        out += _f64(value)
    elif issubclass(tp, str):
        if not isinstance(value, str):
            raise EncodingError(f"expected str, got {type(value).__name__}")
        raw = value.encode("utf-8")
        out += _u64(len(raw))
        out += raw
    elif issubclass(tp, FixedBytes):
        if not isinstance(value, (bytes, bytearray)) or len(value) != tp.SIZE:
            raise EncodingError(f"expected {tp.SIZE}-byte {tp.__name__}")
        out += value
    elif issubclass(tp, (bytes, bytearray)):
        if not isinstance(value, (bytes, bytearray)):
            raise EncodingError(f"expected bytes, got {type(value).__name__}")
        out += _u64(len(value))
        out += value
    elif dataclasses.is_dataclass(tp):
        if not isinstance(value, tp):
            raise EncodingError(f"expected {tp.__name__}, got {type(value).__name__}")
        for name, field_tp in _field_types(tp):
            _encode_into(field_tp, getattr(value, name), out)
    else:
        raise EncodingError(f"no canonical encoding for type {tp.__name__}")


def canonical_encode(value: Any, tp: Any = None) -> bytes:
    """Serialize ``value`` to its canonical byte form.

    ``tp`` is the declared type; it defaults to ``type(value)``. Sequences of
    mixed or unannotated content fall back to per-element runtime types.
    """
    out = bytearray()
    _encode_into(type(value) if tp is None else tp, value, out)
    return bytes(out)


class Reader:
    """Cursor over canonical bytes. Every read is bounds-checked."""

    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise EncodingError(f"truncated input at offset {self.pos} (need {n} bytes)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise EncodingError(f"{len(self.data) - self.pos} trailing bytes")


def _decode_from(tp: Any, r: Reader) -> Any:
    origin = typing.get_origin(tp)
    if origin in (tuple, list):
        args = typing.get_args(tp)
        count = r.u64()
        if origin is tuple and args and args[-1] is not Ellipsis:
            if count != len(args):
                raise EncodingError(f"expected {len(args)} elements, found {count}")
            item_types = args
        else:
            if not args or args[0] is Any:
                raise EncodingError("cannot decode an untyped sequence")
            # each element needs at least one byte; guards absurd counts
            if count > r.remaining():
                raise EncodingError(f"sequence count {count} exceeds input")
            item_types = (args[0],) * count
        items = [_decode_from(item_tp, r) for item_tp in item_types]
        return tuple(items) if origin is tuple else items
    if not isinstance(tp, type):
        raise EncodingError(f"unsupported type annotation {tp!r}")
    hook = getattr(tp, "__canonical_decode__", None)
    if hook is not None:
        return hook(r)
    if issubclass(tp, bool):
        b = r.u8()
        if b > 1:
            raise EncodingError(f"invalid bool byte {b:#04x}")
        return b == 1
    if issubclass(tp, enum.IntEnum):
        b = r.u8()
        try:
            return tp(b)
        except ValueError:
            raise EncodingError(f"invalid {tp.__name__} tag {b}") from None
    if issubclass(tp, int):
        return r.u64()
    if issubclass(tp, float):
        raw = r.take(8)
        (x,) = struct.unpack(">d", raw)
        if math.isnan(x) or raw == b"\x80" + bytes(7):
            raise EncodingError("non-canonical float")
        return x
    if issubclass(tp, str):
        n = r.u64()
        try:
            return r.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EncodingError(f"invalid UTF-8: {exc}") from None
    if issubclass(tp, FixedBytes):
        return tp(r.take(tp.SIZE))
    if issubclass(tp, (bytes, bytearray)):
        return r.take(r.u64())
    if dataclasses.is_dataclass(tp):
        kwargs = {name: _decode_from(field_tp, r) for name, field_tp in _field_types(tp)}
        try:
            return tp(**kwargs)
        except (TypeError, ValueError) as exc:
            raise EncodingError(f"invalid {tp.__name__}: {exc}") from None
    raise EncodingError(f"no canonical decoding for type {tp.__name__}")


def canonical_decode(tp: Any, data: bytes) -> Any:
    """Inverse of :func:`canonical_encode`; rejects trailing or malformed bytes."""
    r = Reader(data)
    value = _decode_from(tp, r)
    r.finish()
    return value


def decode_from(tp: Any, reader: Reader) -> Any:
    return _decode_from(tp, reader)


def encode_into(tp: Any, value: Any, out: bytearray) -> None:
    _encode_into(tp, value, out)


# ---------------------------------------------------------------------------
# hashing and keys


def hash_bytes(data: bytes) -> Digest:
    """SHA-256 of ``data``."""
    return Digest(hashlib.sha256(data).digest())


def hash_value(value: Any, tp: Any = None) -> Digest:
    return hash_bytes(canonical_encode(value, tp))


def derive_key(seed: bytes, context: str) -> SymmetricKey:
    """HKDF-SHA256 key derivation; ``context`` separates key purposes."""
    if not seed:
        raise ValueError("seed must be non-empty")
    hkdf = HKDF(algorithm=hashes.SHA256(), length=KEY_SIZE, salt=_KDF_SALT,
                info=context.encode("utf-8"))
    return SymmetricKey(hkdf.derive(bytes(seed)))


# ---------------------------------------------------------------------------
# authenticated encryption


@dataclass(frozen=True)
class Ciphertext:
    nonce: bytes
    body: bytes
    auth_tag: bytes

    def __post_init__(self):
        if len(self.nonce) != NONCE_SIZE:
            raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
        if len(self.auth_tag) != TAG_SIZE:
            raise ValueError(f"auth tag must be {TAG_SIZE} bytes")

    def to_bytes(self) -> bytes:
        return self.nonce + self.body + self.auth_tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        if len(data) < NONCE_SIZE + TAG_SIZE:
            raise ValueError("ciphertext too short")
        return cls(data[:NONCE_SIZE], data[NONCE_SIZE:-TAG_SIZE], data[-TAG_SIZE:])


class CipherSession:
    """Tracks (key, nonce) pairs used for encryption and refuses repeats.

    One session per writer; the nonce set is guarded by a lock so a session can
    be shared, but callers should not rely on ordering across threads.
    """

    def __init__(self):
        self._used: set[tuple[bytes, bytes]] = set()
        self._lock = threading.Lock()

    def claim(self, key: SymmetricKey, nonce: bytes) -> None:
        # keyed by a digest so the set never holds raw key material
        slot = (hashlib.sha256(b"uavnft/nonce-slot" + bytes(key)).digest(), bytes(nonce))
        with self._lock:
            if slot in self._used:
                raise NonceReuseError("nonce already used with this key")
            self._used.add(slot)

    def encrypt(self, key: SymmetricKey, plaintext: bytes, nonce: bytes) -> Ciphertext:
        return encrypt(key, plaintext, nonce, session=self)

    def decrypt(self, key: SymmetricKey, ct: Ciphertext) -> bytes:
        return decrypt(key, ct)


DEFAULT_SESSION = CipherSession()


def encrypt(key: SymmetricKey, plaintext: bytes, nonce: bytes,
            session: CipherSession | None = None) -> Ciphertext:
    """AES-256-GCM encryption. The nonce is claimed in ``session`` first."""
    if len(key) != KEY_SIZE:
        raise ValueError(f"key must be {KEY_SIZE} bytes")
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    (session or DEFAULT_SESSION).claim(key, nonce)
    sealed = AESGCM(bytes(key)).encrypt(bytes(nonce), bytes(plaintext), None)
    return Ciphertext(bytes(nonce), sealed[:-TAG_SIZE], sealed[-TAG_SIZE:])


def decrypt(key: SymmetricKey, ct: Ciphertext) -> bytes:
    if len(key) != KEY_SIZE:
        raise ValueError(f"key must be {KEY_SIZE} bytes")
    try:
        return AESGCM(bytes(key)).decrypt(ct.nonce, ct.body + ct.auth_tag, None)
    except InvalidTag:
        raise AuthenticationError("ciphertext failed authentication") from None
