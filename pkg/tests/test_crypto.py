import pytest
from hypothesis import given, strategies as st

from secmail import crypto
from oracles import fnv1a_64_reference


def test_offset_basis_on_empty_input():
    assert crypto.fnv1a_64(b"") == 0xCBF29CE484222325 == 14695981039346656037


def test_single_byte_a():
    # frozen from the reference implementation before the build
    assert crypto.fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64_reference(b"a") == 0xAF63DC4C8601EC8C


def test_keystream_byte_vector():
    assert crypto.keystream_byte(b"a", 0) == 0x0C
    assert crypto.keystream_byte(b"a", 0) == fnv1a_64_reference(b"a" + bytes(8)) & 0xFF


def test_encipher_vector():
    assert crypto.encipher(b"kAB", b"hi") == bytes.fromhex("2141")


def test_encipher_empty():
    assert crypto.encipher(b"k", b"") == b""


@pytest.mark.parametrize("bad", [b""])
def test_empty_key_rejected(bad):
    with pytest.raises(ValueError):
        crypto.keystream_byte(bad, 0)
    with pytest.raises(ValueError):
        crypto.encipher(bad, b"x")


@given(st.binary(min_size=1, max_size=32), st.binary(max_size=300))
def test_decipher_inverts_encipher(key, msg):
    ct = crypto.encipher(key, msg)
    assert len(ct) == len(msg)
    assert crypto.decipher(key, ct) == msg


@given(st.binary(min_size=1, max_size=16), st.integers(0, 5000))
def test_keystream_matches_reference(key, i):
    expected = fnv1a_64_reference(key + i.to_bytes(8, "little")) & 0xFF
    assert crypto.keystream_byte(key, i) == expected
    assert crypto.keystream(key, i + 1)[i] == expected


@given(st.binary(max_size=200))
def test_fnv_matches_reference(data):
    assert crypto.fnv1a_64(data) == fnv1a_64_reference(data)


def test_keyed_digest_is_streaming_concat():
    assert crypto.keyed_digest(b"key", b"ab", b"c") == fnv1a_64_reference(b"keyabc")
