"""Shared low-level helpers: canonical JSON, digests, HMAC signing, op results."""
from __future__ import annotations

import hashlib
import hmac as _hmac
import json
from dataclasses import dataclass
from typing import Any


def canonical_json(obj: Any) -> str:
    """Stable serialization used for digests, signatures, and the event log."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_obj(obj: Any) -> str:
    return sha256_hex(canonical_json(obj).encode())


def sign_payload(key: str, payload: dict) -> str:
    """Abstract signature scheme: HMAC-SHA256 over the canonical payload form."""
    return _hmac.new(key.encode(), canonical_json(payload).encode(), hashlib.sha256).hexdigest()


def verify_payload(key: str, payload: dict, signature: str) -> bool:
    if not isinstance(signature, str):
        return False
    return _hmac.compare_digest(sign_payload(key, payload), signature)


class Clock:
    """Shared logical tick counter, owned by the simulation loop."""

    __slots__ = ("now",)

    def __init__(self) -> None:
        self.now = 0


@dataclass
class OpResult:
    """Outcome of an operation whose failure modes are ordinary domain results."""

    ok: bool
    error: str | None = None
    data: Any = None

    @classmethod
    def success(cls, data: Any = None) -> "OpResult":
        return cls(True, None, data)

    @classmethod
    def fail(cls, error: str, data: Any = None) -> "OpResult":
        return cls(False, error, data)
