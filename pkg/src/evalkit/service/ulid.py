"""Monotonic ULIDs: 48-bit millisecond timestamp + 80 random bits, Crockford base32.

Within one process, ids generated in the same millisecond increment the
random part, so they sort in creation order.
"""

from __future__ import annotations

import os
import threading
import time

_ALPHABET = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"
_lock = threading.Lock()
_last_ms = -1
_last_rand = 0


def _encode(value: int, length: int) -> str:
    out = []
    for _ in range(length):
        out.append(_ALPHABET[value & 31])
        value >>= 5
    return "".join(reversed(out))


def new_ulid(now_ms: int | None = None) -> str:
    global _last_ms, _last_rand
    ms = int(time.time() * 1000) if now_ms is None else now_ms
    with _lock:
        if ms <= _last_ms:
            ms = _last_ms
            rand = _last_rand + 1
            if rand >= 1 << 80:  # overflow: borrow the next millisecond
                ms, rand = ms + 1, int.from_bytes(os.urandom(10), "big")
        else:
            rand = int.from_bytes(os.urandom(10), "big")
        _last_ms, _last_rand = ms, rand
    return _encode(ms, 10) + _encode(rand, 16)


def is_ulid(text: str) -> bool:
    return len(text) == 26 and all(c in _ALPHABET for c in text) and text[0] in "01234567"


def ulid_time_ms(text: str) -> int:
    value = 0
    for c in text[:10]:
        value = value * 32 + _ALPHABET.index(c)
    return value
