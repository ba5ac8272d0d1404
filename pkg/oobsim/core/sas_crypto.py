"""
Cryptographic primitives of the pairing protocol.

Bit strings, the hash commitment, the GF(2^64) polynomial hash used as the
almost-universal family, SAS computation, X25519 key pairs and the link keys
that protect bootstrap keying material.
"""
import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import (X25519PrivateKey,
                                                              X25519PublicKey)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from oobsim.core.errors import (CommitmentMismatch, KeyUnwrapError, LengthMismatch,
                                MalformedKey)

COMMIT_TAG = b"oobsim/commit/v1"
LINK_KEY_INFO = b"oobsim/link/v1"
KEY_BYTES = 32
DIGEST_BYTES = 32
SALT_BYTES = 16
NONCE_BYTES = 12
MAX_HASH_BITS = 32

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class BitString:
    """
    A fixed-length string of bits.

    Bit 0 is the most significant (leftmost) bit, so `value` read as an integer
    keeps the natural left-to-right order.
    """
    value: int
    length: int

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("Bit string length must be non-negative")
        if self.value < 0 or self.value >> self.length:
            raise ValueError(f"Value does not fit in {self.length} bits")

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "BitString":
        value = 0
        length = 0
        for bit in bits:
            value = (value << 1) | (1 if bit else 0)
            length += 1
        return cls(value, length)

    @classmethod
    def from_int(cls, value: int, length: int) -> "BitString":
        return cls(value, length)

    @classmethod
    def from_hex(cls, text: str, length: int) -> "BitString":
        return cls(int(text, 16) if text else 0, length)

    @classmethod
    def zeros(cls, length: int) -> "BitString":
        return cls(0, length)

    @classmethod
    def random(cls, rng: np.random.Generator, length: int) -> "BitString":
        """Draw a uniform bit string from a seeded numpy generator."""
        if length == 0:
            return cls(0, 0)
        return cls(int(rng.integers(0, 1 << length, dtype=np.uint64)), length)

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, index: int) -> int:
        if not 0 <= index < self.length:
            raise IndexError(index)
        return (self.value >> (self.length - 1 - index)) & 1

    def __iter__(self):
        return (self[i] for i in range(self.length))

    def __xor__(self, other: "BitString") -> "BitString":
        if not isinstance(other, BitString):
            return NotImplemented
        if other.length != self.length:
            raise LengthMismatch(
                f"Cannot XOR {self.length}-bit and {other.length}-bit strings"
            )
        return BitString(self.value ^ other.value, self.length)

    @property
    def bits(self) -> Tuple[int, ...]:
        return tuple(self)

    def to_int(self) -> int:
        return self.value

    def to_hex(self) -> str:
        digits = max(1, math.ceil(self.length / 4))
        return format(self.value, f"0{digits}x")

    def to_bytes(self) -> bytes:
        """Pack MSB-first, zero-padding the last byte on the right."""
        nbytes = math.ceil(self.length / 8)
        pad = nbytes * 8 - self.length
        return (self.value << pad).to_bytes(nbytes, "big")

    def flip(self, *indices: int) -> "BitString":
        """Return a copy with the given bit positions inverted."""
        value = self.value
        for index in indices:
            if not 0 <= index < self.length:
                raise IndexError(index)
            value ^= 1 << (self.length - 1 - index)
        return BitString(value, self.length)

    def __str__(self) -> str:
        return "".join(str(b) for b in self)


@dataclass(frozen=True)
class KeyPair:
    """An X25519 key pair as raw 32-byte encodings."""
    public_key: bytes
    private_key: bytes


@dataclass(frozen=True)
class Commitment:
    """A hash commitment to a nonce, bound to a public key."""
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != DIGEST_BYTES:
            raise ValueError(f"Commitment digest must be {DIGEST_BYTES} bytes")


@dataclass(frozen=True)
class Decommitment:
    """Opening information for a Commitment."""
    nonce: BitString
    salt: bytes


@dataclass(frozen=True)
class SasValue:
    """A k-bit short authenticated string."""
    value: BitString

    @property
    def k(self) -> int:
        return self.value.length

    def __xor__(self, other: "SasValue") -> "SasValue":
        return SasValue(self.value ^ other.value)

    def to_hex(self) -> str:
        return self.value.to_hex()

    @classmethod
    def from_hex(cls, text: str, k: int) -> "SasValue":
        return cls(BitString.from_hex(text, k))


def keygen(seed: bytes) -> KeyPair:
    """Deterministic X25519 key pair using the 32-byte seed as the private scalar."""
    if len(seed) != KEY_BYTES:
        raise MalformedKey(f"Seed must be {KEY_BYTES} bytes, got {len(seed)}")
    private = X25519PrivateKey.from_private_bytes(seed)
    return KeyPair(public_key=_raw_public(private.public_key()), private_key=seed)


def public_key_from_private(private_key: bytes) -> bytes:
    return _raw_public(_load_private(private_key).public_key())


def _raw_public(public: X25519PublicKey) -> bytes:
    return public.public_bytes(Encoding.Raw, PublicFormat.Raw)


def _load_private(private_key: bytes) -> X25519PrivateKey:
    if len(private_key) != KEY_BYTES:
        raise MalformedKey(f"Private key must be {KEY_BYTES} bytes")
    return X25519PrivateKey.from_private_bytes(private_key)


def _load_public(public_key: bytes) -> X25519PublicKey:
    if len(public_key) != KEY_BYTES:
        raise MalformedKey(f"Public key must be {KEY_BYTES} bytes")
    return X25519PublicKey.from_public_bytes(public_key)


def _commit_digest(pk: bytes, r: BitString, salt: bytes) -> bytes:
    if len(pk) > 0xFFFF or r.length > 0xFF:
        raise ValueError("Public key or nonce too long to commit to")
    data = b"".join([
        COMMIT_TAG,
        struct.pack(">H", len(pk)),
        pk,
        struct.pack(">B", r.length),
        r.to_bytes(),
        salt,
    ])
    return hashlib.sha256(data).digest()


def commit(pk: bytes, r: BitString, salt: bytes) -> Tuple[Commitment, Decommitment]:
    """Commit to the nonce `r` on behalf of the owner of `pk`."""
    if r.length == 0:
        raise ValueError("Cannot commit to an empty nonce")
    if len(salt) != SALT_BYTES:
        raise ValueError(f"Salt must be {SALT_BYTES} bytes")
    return Commitment(_commit_digest(pk, r, salt)), Decommitment(r, salt)


def open_commitment(pk: bytes, c: Commitment, d: Decommitment) -> BitString:
    """Recover the committed nonce, or raise CommitmentMismatch."""
    if len(d.salt) != SALT_BYTES or d.nonce.length == 0:
        raise CommitmentMismatch("Decommitment is malformed")
    if _commit_digest(pk, d.nonce, d.salt) != c.digest:
        raise CommitmentMismatch("Decommitment does not open the commitment")
    return d.nonce


def _gf_reduce(value: int) -> int:
    # x^64 = x^4 + x^3 + x + 1
    high = value >> 64
    while high:
        value = (value & _MASK64) ^ high ^ (high << 1) ^ (high << 3) ^ (high << 4)
        high = value >> 64
    return value


def _gf_mul(a: int, b: int) -> int:
    product = 0
    while b:
        low = b & -b
        product ^= a << (low.bit_length() - 1)
        b ^= low
    return _gf_reduce(product)


def _blocks(msg: bytes) -> Tuple[int, ...]:
    padded = msg + b"\x00" * (-len(msg) % 8)
    return struct.unpack(f">{len(padded) // 8}Q", padded)


def uhash(key: BitString, msg: bytes) -> BitString:
    """
    Polynomial hash sum(m_i * x^i) over GF(2^64), truncated to len(key) bits.

    The evaluation point x is the key zero-extended to 64 bits and the message is
    split into big-endian 64-bit blocks, the last one zero-padded.
    """
    k = key.length
    if not 1 <= k <= MAX_HASH_BITS:
        raise ValueError(f"Hash key must have 1 to {MAX_HASH_BITS} bits, got {k}")
    x = key.value
    acc = 0
    for block in reversed(_blocks(msg)):
        acc = _gf_mul(acc ^ block, x)
    return BitString(acc & ((1 << k) - 1), k)


def compute_sas(r_b: BitString, r_a: BitString, pk_b: bytes) -> SasValue:
    """SAS = R_B xor H_{R_A}(pk_B)."""
    if r_b.length != r_a.length:
        raise LengthMismatch(
            f"R_B has {r_b.length} bits but R_A has {r_a.length}"
        )
    return SasValue(r_b ^ uhash(r_a, pk_b))


def sas_length(n: int) -> int:
    """Recommended SAS bits for a batch of n nodes: 15 + ceil(log2 n)."""
    if n < 1:
        raise ValueError("A batch needs at least one node")
    if n == 1:
        return 15
    return 15 + (n - 1).bit_length()


def derive_link_key(own_private: bytes, peer_public: bytes) -> bytes:
    """HKDF-SHA256 over the X25519 shared secret."""
    private = _load_private(own_private)
    peer = _load_public(peer_public)
    try:
        shared = private.exchange(peer)
    except ValueError as e:
        # Low-order peer points yield an all-zero secret
        raise MalformedKey(str(e)) from e
    return HKDF(
        algorithm=hashes.SHA256(),
        length=KEY_BYTES,
        salt=None,
        info=LINK_KEY_INFO,
    ).derive(shared)


def wrap_keying_material(
    link_key: bytes, material: bytes, nonce: bytes, associated_data: bytes = b""
) -> bytes:
    """Encrypt bootstrap keying material; the result is nonce || ciphertext."""
    if len(nonce) != NONCE_BYTES:
        raise ValueError(f"Nonce must be {NONCE_BYTES} bytes")
    return nonce + AESGCM(link_key).encrypt(nonce, material, associated_data)


def unwrap_keying_material(
    link_key: bytes, wrapped: bytes, associated_data: bytes = b""
) -> bytes:
    if len(wrapped) < NONCE_BYTES + 16:
        raise KeyUnwrapError("Wrapped keying material is truncated")
    nonce, ciphertext = wrapped[:NONCE_BYTES], wrapped[NONCE_BYTES:]
    try:
        return AESGCM(link_key).decrypt(nonce, ciphertext, associated_data)
    except InvalidTag as e:
        raise KeyUnwrapError("Keying material failed authentication") from e
