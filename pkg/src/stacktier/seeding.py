"""Stable seed derivation.

Seeds are keyed by content (master seed plus labels such as spec id and fold
set), never by execution order, so parallel schedules reproduce serial runs.
"""
from __future__ import annotations

import hashlib
import json


def derive_seed(master: int, *keys) -> int:
    """Return a 63-bit seed that depends only on ``master`` and ``keys``."""
    payload = json.dumps([int(master), *keys], sort_keys=True, default=str)
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def stable_id(obj, length: int = 12) -> str:
    payload = json.dumps(obj, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()[:length]
