"""
Tests for the SAS cryptographic primitives.
"""
from pathlib import Path
from typing import Dict, List

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oobsim.core.errors import CommitmentMismatch, KeyUnwrapError, LengthMismatch, MalformedKey
from oobsim.core.sas_crypto import (SALT_BYTES, BitString, Commitment, Decommitment,
                                    SasValue, commit, compute_sas, derive_link_key,
                                    keygen, open_commitment, public_key_from_private,
                                    sas_length, uhash, unwrap_keying_material,
                                    wrap_keying_material)

VECTORS = Path(__file__).parent / "data" / "sas_crypto_vectors.txt"


def load_vectors() -> Dict[str, List[List[str]]]:
    """Group the golden vectors by their leading tag."""
    vectors: Dict[str, List[List[str]]] = {}
    for line in VECTORS.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        tag, *fields = line.split()
        vectors.setdefault(tag, []).append(fields)
    return vectors


GOLDEN = load_vectors()

bit_strings = st.integers(min_value=1, max_value=32).flatmap(
    lambda k: st.builds(BitString, st.integers(min_value=0, max_value=(1 << k) - 1), st.just(k))
)


def same_length_pair(k: int):
    word = st.integers(min_value=0, max_value=(1 << k) - 1)
    return st.tuples(word, word).map(lambda p: (BitString(p[0], k), BitString(p[1], k)))


@pytest.fixture
def salt():
    return bytes(range(0xF0, 0x100))


@pytest.fixture
def node_keys():
    return keygen(bytes(range(32)))


class TestBitString:
    """Tests for the bit string value type."""

    def test_bit_zero_is_most_significant(self):
        """Index 0 reads the leftmost bit."""
        bits = BitString.from_bits([1, 0, 0, 1])
        assert bits.value == 0b1001
        assert bits[0] == 1
        assert bits[1] == 0
        assert str(bits) == "1001"

    def test_hex_is_zero_padded(self):
        """Hex output keeps ceil(k/4) digits."""
        assert BitString(0x5, 20).to_hex() == "00005"
        assert BitString(0x1, 5).to_hex() == "01"

    def test_to_bytes_pads_on_the_right(self):
        """Packing is MSB-first with the padding in the last byte."""
        assert BitString.from_bits([1, 0, 1]).to_bytes() == b"\xa0"
        assert BitString(0xABCDE, 20).to_bytes() == b"\xab\xcd\xe0"

    def test_value_must_fit(self):
        """A value wider than the length is rejected."""
        with pytest.raises(ValueError):
            BitString(4, 2)

    def test_xor_requires_equal_lengths(self):
        """XOR of different lengths raises LengthMismatch."""
        with pytest.raises(LengthMismatch):
            BitString(1, 8) ^ BitString(1, 9)

    def test_flip(self):
        """flip inverts exactly the named positions."""
        bits = BitString.zeros(8).flip(0, 7)
        assert bits.bits == (1, 0, 0, 0, 0, 0, 0, 1)
        with pytest.raises(IndexError):
            bits.flip(8)

    def test_random_is_seeded(self):
        """Same generator seed, same bits."""
        a = BitString.random(np.random.default_rng(5), 20)
        b = BitString.random(np.random.default_rng(5), 20)
        assert a == b
        assert a.length == 20

    @given(bit_strings)
    def test_xor_with_self_is_zero(self, bits):
        assert (bits ^ bits) == BitString.zeros(bits.length)


class TestCommitment:
    """Tests for commit and open_commitment."""

    def test_golden_digest(self):
        """Digests match the independently computed vectors."""
        for pk, k, nonce, salt, digest in GOLDEN["commit"]:
            c, d = commit(bytes.fromhex(pk), BitString.from_hex(nonce, int(k)), bytes.fromhex(salt))
            assert c.digest.hex() == digest
            assert d.nonce == BitString.from_hex(nonce, int(k))

    def test_open_recovers_nonce(self, node_keys, salt):
        """An honest decommitment opens to the committed nonce."""
        r = BitString(0x12345, 20)
        c, d = commit(node_keys.public_key, r, salt)
        assert open_commitment(node_keys.public_key, c, d) == r

    def test_salt_length_enforced(self, node_keys):
        """Commit refuses salts of the wrong size."""
        with pytest.raises(ValueError):
            commit(node_keys.public_key, BitString(1, 8), b"short")

    def test_empty_nonce_rejected(self, node_keys, salt):
        """An empty nonce cannot be committed to."""
        with pytest.raises(ValueError):
            commit(node_keys.public_key, BitString(0, 0), salt)

    def test_commitment_digest_size(self):
        """Commitments are 32-byte digests."""
        with pytest.raises(ValueError):
            Commitment(b"\x00" * 31)

    @settings(max_examples=50)
    @given(st.integers(min_value=0, max_value=(1 << 20) - 1), st.integers(min_value=0, max_value=255))
    def test_single_bit_perturbation_fails(self, value, position):
        """Flipping any single bit of pk, c, nonce or salt breaks the opening."""
        pk = bytes(range(32))
        salt = bytes(range(SALT_BYTES))
        r = BitString(value, 20)
        c, d = commit(pk, r, salt)

        byte, bit = divmod(position, 8)
        bad_pk = bytearray(pk)
        bad_pk[byte] ^= 1 << bit
        with pytest.raises(CommitmentMismatch):
            open_commitment(bytes(bad_pk), c, d)

        bad_digest = bytearray(c.digest)
        bad_digest[byte] ^= 1 << bit
        with pytest.raises(CommitmentMismatch):
            open_commitment(pk, Commitment(bytes(bad_digest)), d)

        with pytest.raises(CommitmentMismatch):
            open_commitment(pk, c, Decommitment(r.flip(position % 20), salt))

        bad_salt = bytearray(salt)
        bad_salt[byte % SALT_BYTES] ^= 1 << bit
        with pytest.raises(CommitmentMismatch):
            open_commitment(pk, c, Decommitment(r, bytes(bad_salt)))


class TestUhash:
    """Tests for the GF(2^64) polynomial hash."""

    def test_golden_digests(self):
        """Digests match the vectors computed with big-integer arithmetic."""
        for k, key, msg, digest in GOLDEN["uhash"]:
            out = uhash(BitString.from_hex(key, int(k)), bytes.fromhex(msg))
            assert out.to_hex() == digest
            assert out.length == int(k)

    def test_zero_key_hashes_to_zero(self):
        """The zero key maps every message to zero."""
        assert uhash(BitString.zeros(20), b"anything at all").value == 0

    def test_key_length_bounds(self):
        """Keys outside 1..32 bits are rejected."""
        with pytest.raises(ValueError):
            uhash(BitString(0, 0), b"x")
        with pytest.raises(ValueError):
            uhash(BitString(1, 33), b"x")

    @given(st.binary(min_size=16, max_size=16), st.binary(min_size=16, max_size=16), bit_strings)
    def test_linear_in_message(self, m1, m2, key):
        """H_K(m1 xor m2) = H_K(m1) xor H_K(m2) for equal-length messages."""
        mixed = bytes(a ^ b for a, b in zip(m1, m2))
        assert uhash(key, mixed) == uhash(key, m1) ^ uhash(key, m2)

    @pytest.mark.parametrize("seed", [1, 2, 3, 4])
    def test_collision_rate_at_k8(self, seed):
        """Over all 256 keys, two distinct 2-block messages collide on at most 4t keys."""
        rng = np.random.default_rng(seed)
        t = 2
        m1 = rng.bytes(8 * t)
        m2 = rng.bytes(8 * t)
        assert m1 != m2
        collisions = sum(
            uhash(BitString(key, 8), m1) == uhash(BitString(key, 8), m2) for key in range(256)
        )
        # The zero key always collides
        assert 1 <= collisions <= 4 * t


class TestSas:
    """Tests for SAS computation and sizing."""

    def test_golden_sas(self):
        for k, r_b, r_a, pk_b, sas in GOLDEN["sas"]:
            k = int(k)
            value = compute_sas(BitString.from_hex(r_b, k), BitString.from_hex(r_a, k), bytes.fromhex(pk_b))
            assert value.to_hex() == sas
            assert value == SasValue.from_hex(sas, k)

    def test_zero_r_b_gives_hash(self, node_keys):
        """r_B = 0 leaves the bare hash."""
        r_a = BitString(0xABCDE, 20)
        sas = compute_sas(BitString.zeros(20), r_a, node_keys.public_key)
        assert sas.value == uhash(r_a, node_keys.public_key)

    def test_length_mismatch(self, node_keys):
        with pytest.raises(LengthMismatch):
            compute_sas(BitString(0, 19), BitString(0, 20), node_keys.public_key)

    @given(same_length_pair(20), st.integers(min_value=0, max_value=(1 << 20) - 1))
    def test_xor_shift_in_r_b(self, pair, delta):
        """compute_sas(r_B xor d) = compute_sas(r_B) xor d."""
        r_b, r_a = pair
        pk = bytes(range(32))
        d = BitString(delta, 20)
        assert compute_sas(r_b ^ d, r_a, pk) == compute_sas(r_b, r_a, pk) ^ SasValue(d)

    @pytest.mark.parametrize("n,k", [(1, 15), (2, 16), (3, 17), (16, 19), (32, 20), (33, 21), (128, 22)])
    def test_sas_length(self, n, k):
        """15 + ceil(log2 n) bits."""
        assert sas_length(n) == k

    def test_sas_length_nondecreasing(self):
        lengths = [sas_length(n) for n in range(1, 1025)]
        assert lengths == sorted(lengths)

    def test_sas_length_rejects_empty_batch(self):
        with pytest.raises(ValueError):
            sas_length(0)


class TestKeys:
    """Tests for key generation, link keys and keying material."""

    def test_rfc7748_public_keys(self):
        for private, public in GOLDEN["x25519"]:
            pair = keygen(bytes.fromhex(private))
            assert pair.public_key.hex() == public
            assert public_key_from_private(bytes.fromhex(private)).hex() == public

    def test_golden_link_key(self):
        for private, public, key in GOLDEN["link"]:
            assert derive_link_key(bytes.fromhex(private), bytes.fromhex(public)).hex() == key

    def test_link_key_is_symmetric(self):
        a = keygen(bytes([1] * 32))
        b = keygen(bytes([2] * 32))
        assert derive_link_key(a.private_key, b.public_key) == derive_link_key(b.private_key, a.public_key)

    def test_distinct_pairs_give_distinct_keys(self):
        """100 random pairs, no repeated link key."""
        rng = np.random.default_rng(0)
        keys = set()
        for _ in range(100):
            a = keygen(rng.bytes(32))
            b = keygen(rng.bytes(32))
            keys.add(derive_link_key(a.private_key, b.public_key))
        assert len(keys) == 100

    def test_tampered_peer_key_changes_link_key(self):
        a = keygen(bytes([1] * 32))
        b = keygen(bytes([2] * 32))
        tampered = bytearray(b.public_key)
        tampered[3] ^= 0x01
        honest = derive_link_key(a.private_key, b.public_key)
        assert derive_link_key(a.private_key, bytes(tampered)) != honest

    def test_malformed_keys(self):
        with pytest.raises(MalformedKey):
            keygen(b"\x00" * 31)
        with pytest.raises(MalformedKey):
            derive_link_key(bytes(32), b"\x01" * 16)

    def test_wrap_and_unwrap(self):
        a = keygen(bytes([1] * 32))
        b = keygen(bytes([2] * 32))
        link = derive_link_key(a.private_key, b.public_key)
        blob = wrap_keying_material(link, b"s" * 32, b"\x00" * 12, b"\x00\x03")
        assert unwrap_keying_material(link, blob, b"\x00\x03") == b"s" * 32

    def test_unwrap_under_wrong_key_fails(self):
        a = keygen(bytes([1] * 32))
        b = keygen(bytes([2] * 32))
        c = keygen(bytes([3] * 32))
        blob = wrap_keying_material(derive_link_key(a.private_key, b.public_key), b"s" * 32, b"\x00" * 12)
        with pytest.raises(KeyUnwrapError):
            unwrap_keying_material(derive_link_key(a.private_key, c.public_key), blob)
        with pytest.raises(KeyUnwrapError):
            unwrap_keying_material(derive_link_key(a.private_key, b.public_key), blob[:20])
