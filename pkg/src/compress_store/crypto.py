"""Hashing, signatures and symmetric encryption.

SHA-256 for every digest, Ed25519 for signatures and ChaCha20-Poly1305 for
payload encryption.  Encryption is deterministic: the nonce is an HMAC of the
plaintext under the key, so re-encrypting identical content yields identical
ciphertext.  Simulation runs depend on that for byte-identical outputs.
"""

from __future__ import annotations

import functools
import hashlib
import hmac
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

DIGEST_SIZE = 32
KEY_SIZE = 32
NONCE_SIZE = 12
TAG_SIZE = 16
PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64


class Digest(bytes):
    """A 32-byte hash value."""

    def __new__(cls, value: bytes = b"\x00" * DIGEST_SIZE) -> "Digest":
        if len(value) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    def __repr__(self) -> str:
        return f"Digest({self.hex()[:16]}..)"


ZERO_DIGEST = Digest()


class SignatureFormatError(ValueError):
    """Key or signature bytes are not well formed (as opposed to just wrong)."""


class DecryptionError(ValueError):
    pass


def hash_bytes(data: bytes) -> Digest:
    return Digest(hashlib.sha256(data).digest())


def hash_concat(*parts: bytes) -> Digest:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return Digest(h.digest())


def derive_seed(label: str, *parts: int | str | bytes) -> bytes:
    """Deterministic 32-byte seed from a label and a list of parts.

    Each part is length-prefixed so ("ab", "c") and ("a", "bc") differ.
    """
    h = hashlib.sha256()
    for p in (label, *parts):
        if isinstance(p, int):
            raw = p.to_bytes(8, "big", signed=True)
        elif isinstance(p, str):
            raw = p.encode()
        else:
            raw = bytes(p)
        h.update(len(raw).to_bytes(4, "big"))
        h.update(raw)
    return h.digest()


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        if len(seed) != KEY_SIZE:
            raise SignatureFormatError("key seed must be 32 bytes")
        sk = Ed25519PrivateKey.from_private_bytes(seed)
        pk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(public_key=pk, secret_key=bytes(seed))

    @classmethod
    def derive(cls, label: str, *parts: int | str | bytes) -> "KeyPair":
        return cls.from_seed(derive_seed(label, *parts))


def sign(secret_key: bytes, message: bytes) -> bytes:
    if len(secret_key) != KEY_SIZE:
        raise SignatureFormatError("secret key must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(secret_key).sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff `signature` is valid for `message`.

    Raises SignatureFormatError when the key or signature cannot even be
    parsed; a well-formed but wrong signature returns False.
    """
    if len(public_key) != PUBLIC_KEY_SIZE or len(signature) != SIGNATURE_SIZE:
        raise SignatureFormatError("bad public key or signature length")
    try:
        pk = Ed25519PublicKey.from_public_bytes(public_key)
    except ValueError as exc:
        raise SignatureFormatError(str(exc)) from exc
    try:
        pk.verify(signature, message)
    except InvalidSignature:
        return False
    return True


def check_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """Like verify() but folds format errors into False.  Memoized: every node
    re-checks the same signatures several times per block."""
    return _check_cached(bytes(public_key), bytes(message), bytes(signature))


@functools.lru_cache(maxsize=1 << 14)
def _check_cached(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        return verify(public_key, message, signature)
    except SignatureFormatError:
        return False


def symmetric_key(seed: bytes) -> bytes:
    if len(seed) != KEY_SIZE:
        raise ValueError("symmetric key must be 32 bytes")
    return bytes(seed)


def encrypt(key: bytes, plaintext: bytes) -> bytes:
    """nonce || ciphertext || tag, with a synthetic (content-derived) nonce."""
    nonce = hmac.new(key, plaintext, hashlib.sha256).digest()[:NONCE_SIZE]
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, None)


def decrypt(key: bytes, ciphertext: bytes) -> bytes:
    if len(ciphertext) < NONCE_SIZE + TAG_SIZE:
        raise DecryptionError("ciphertext too short")
    nonce, body = ciphertext[:NONCE_SIZE], ciphertext[NONCE_SIZE:]
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, body, None)
    except InvalidTag as exc:
        raise DecryptionError("authentication failed") from exc
