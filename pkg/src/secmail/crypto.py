"""Toy cryptography for the simulated SecMail resource.

FNV-1a-64 drives everything here: a keyed XOR keystream for ciphering and
keyed digests for the integrity tag and the signature stand-in. None of it
is secure. It is deterministic and bit-exact, which is what the simulator
needs for replayable traces and meaningful tamper tests.
"""

from __future__ import annotations

import struct

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes, start: int = FNV_OFFSET_BASIS) -> int:
    """FNV-1a 64-bit hash of `data`.

    `start` lets callers resume from an intermediate state, which is how the
    keystream avoids rehashing the key for every index.
    """
    h = start
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def le64(value: int) -> bytes:
    return struct.pack("<Q", value & _MASK64)


def keystream_byte(key: bytes, i: int) -> int:
    """Low byte of FNV-1a-64(key || le64(i))."""
    if not key:
        raise ValueError("key must be non-empty")
    if i < 0:
        raise ValueError("keystream index must be >= 0")
    return fnv1a_64(le64(i), fnv1a_64(key)) & 0xFF


_keystream_cache: dict[bytes, bytearray] = {}


def keystream(key: bytes, length: int) -> bytes:
    if not key:
        raise ValueError("key must be non-empty")
    stream = _keystream_cache.setdefault(bytes(key), bytearray())
    if len(stream) < length:
        state = fnv1a_64(key)
        for i in range(len(stream), length):
            stream.append(fnv1a_64(le64(i), state) & 0xFF)
    return bytes(stream[:length])


def encipher(key: bytes, plaintext: bytes) -> bytes:
    stream = keystream(key, len(plaintext))
    return bytes(p ^ s for p, s in zip(plaintext, stream))


# XOR stream: the transform is its own inverse.
decipher = encipher


def keyed_digest(key: bytes, *parts: bytes) -> int:
    return fnv1a_64(b"".join(parts), fnv1a_64(key))


def plaintext_digest(subject: bytes, body: bytes, attachment: bytes) -> int:
    return fnv1a_64(subject + body + attachment)


def integrity_tag(pair_key: bytes, subject_ct: bytes, body_ct: bytes, attachment_ct: bytes) -> int:
    return keyed_digest(pair_key, subject_ct, body_ct, attachment_ct)


def sign(sign_key: bytes, subject: bytes, body: bytes, attachment: bytes) -> int:
    """Symmetric stand-in for a signature over the plaintext digest."""
    return keyed_digest(sign_key, le64(plaintext_digest(subject, body, attachment)))
