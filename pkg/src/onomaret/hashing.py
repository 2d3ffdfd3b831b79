"""64-bit FNV-1a, the checksum used by pack files and model checkpoints."""

from __future__ import annotations

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes | bytearray | memoryview) -> int:
    """Hash a byte string with FNV-1a (64-bit), returned as an unsigned int."""
    h = _FNV_OFFSET
    for b in bytes(data):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h
