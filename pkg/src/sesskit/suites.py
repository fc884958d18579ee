"""Cipher/digest suite registry, session keys, and sealing primitives.

The session master key is 192 bits.  Per-purpose working keys (cipher,
MAC, resume proof, token sealing) are derived from it with HKDF-SHA256,
so raw master key bytes never feed a primitive directly and never appear
on the wire outside a sealed blob.

Two suites are registered by default:

    NULL                  identity cipher, HMAC-SHA256 integrity.  For
                          tests and trusted links only.
    CHACHA20_HMAC_SHA256  ChaCha20 stream cipher with a fresh 16-byte
                          nonce per message, HMAC-SHA256 computed over
                          the ciphertext (encrypt-then-MAC).

Underlying primitives come from the ``cryptography`` package; nothing
cryptographic is hand-rolled except the NULL suite.
"""

from __future__ import annotations

import hmac as _hmac
import random
import secrets
from dataclasses import dataclass, field
from hashlib import sha256

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import x25519
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errstack import CRYPTO, UNKNOWN_SUITE, CommError, ErrorFrame, ErrorStack

SESSION_KEY_BYTES = 24  # 192 bits
_CHACHA_NONCE_BYTES = 16
_MAC_BYTES = 32


class CryptoError(CommError):
    def __init__(self, message: str):
        super().__init__(ErrorStack((ErrorFrame(CRYPTO, "CRYPTO", message),)))


class UnknownSuiteError(CommError):
    def __init__(self, what: str, ident: str):
        frame = ErrorFrame(UNKNOWN_SUITE, "CRYPTO", f"unknown {what} {ident!r}")
        super().__init__(ErrorStack((frame,)))


class Entropy:
    """Randomness source interface; see SystemEntropy and SeededEntropy."""

    def bytes(self, n: int) -> bytes:
        raise NotImplementedError


class SystemEntropy(Entropy):
    def bytes(self, n: int) -> bytes:
        return secrets.token_bytes(n)


class SeededEntropy(Entropy):
    """Deterministic source for simulations and golden tests."""

    def __init__(self, seed: int):
        self._rng = random.Random(seed)

    def bytes(self, n: int) -> bytes:
        return self._rng.randbytes(n)


@dataclass(frozen=True)
class SessionKey:
    """192-bit session master key.  repr never exposes the material."""

    material: bytes

    def __post_init__(self) -> None:
        if len(self.material) != SESSION_KEY_BYTES:
            raise CryptoError(
                f"session key must be {SESSION_KEY_BYTES} bytes, got {len(self.material)}"
            )

    def __repr__(self) -> str:
        return "SessionKey(<192 bits>)"


def generate_session_key(entropy: Entropy) -> SessionKey:
    try:
        material = entropy.bytes(SESSION_KEY_BYTES)
    except Exception as exc:  # randomness source failure is fatal
        raise CryptoError(f"randomness source unavailable: {exc}") from exc
    return SessionKey(material)


def derive_key(master: bytes, purpose: bytes, length: int = 32) -> bytes:
    """HKDF-SHA256 expansion of key material for a named purpose."""
    return HKDF(
        algorithm=hashes.SHA256(), length=length, salt=None, info=purpose
    ).derive(master)


# --- digests ---------------------------------------------------------------

def _hmac_sha256(key: bytes, data: bytes) -> bytes:
    return _hmac.new(key, data, sha256).digest()


_DIGESTS = {"HMAC_SHA256": _hmac_sha256}


def mac(key: SessionKey, data: bytes, digest_id: str = "HMAC_SHA256") -> bytes:
    """Keyed digest of ``data`` under a MAC subkey of the session key."""
    try:
        fn = _DIGESTS[digest_id]
    except KeyError:
        raise UnknownSuiteError("digest", digest_id) from None
    return fn(derive_key(key.material, b"mac:" + digest_id.encode()), data)


def mac_verify(key: SessionKey, data: bytes, tag: bytes, digest_id: str = "HMAC_SHA256") -> bool:
    return _hmac.compare_digest(mac(key, data, digest_id), tag)


# --- cipher suites ---------------------------------------------------------

@dataclass(frozen=True)
class CipherSuite:
    """Descriptor plus operations for one negotiable suite."""

    suite_id: str
    cipher_id: str
    digest_id: str
    offers_encryption: bool
    offers_integrity: bool = True

    def encrypt(self, key: SessionKey, plaintext: bytes, entropy: Entropy) -> bytes:
        if self.cipher_id == "NULL":
            return plaintext
        if self.cipher_id == "CHACHA20":
            nonce = entropy.bytes(_CHACHA_NONCE_BYTES)
            ck = derive_key(key.material, b"cipher:CHACHA20")
            enc = Cipher(algorithms.ChaCha20(ck, nonce), mode=None).encryptor()
            return nonce + enc.update(plaintext) + enc.finalize()
        raise UnknownSuiteError("cipher", self.cipher_id)

    def decrypt(self, key: SessionKey, ciphertext: bytes) -> bytes:
        if self.cipher_id == "NULL":
            return ciphertext
        if self.cipher_id == "CHACHA20":
            if len(ciphertext) < _CHACHA_NONCE_BYTES:
                raise CryptoError("ciphertext shorter than nonce")
            nonce, ct = ciphertext[:_CHACHA_NONCE_BYTES], ciphertext[_CHACHA_NONCE_BYTES:]
            ck = derive_key(key.material, b"cipher:CHACHA20")
            dec = Cipher(algorithms.ChaCha20(ck, nonce), mode=None).decryptor()
            return dec.update(ct) + dec.finalize()
        raise UnknownSuiteError("cipher", self.cipher_id)

    def mac(self, key: SessionKey, data: bytes) -> bytes:
        return mac(key, data, self.digest_id)

    def mac_verify(self, key: SessionKey, data: bytes, tag: bytes) -> bool:
        return mac_verify(key, data, tag, self.digest_id)


NULL_SUITE = CipherSuite("NULL", "NULL", "HMAC_SHA256", offers_encryption=False)
CHACHA_SUITE = CipherSuite(
    "CHACHA20_HMAC_SHA256", "CHACHA20", "HMAC_SHA256", offers_encryption=True
)


@dataclass
class SuiteRegistry:
    """Immutable-after-startup map of negotiable suites."""

    suites: dict[str, CipherSuite] = field(default_factory=dict)

    def register(self, suite: CipherSuite) -> None:
        self.suites[suite.suite_id] = suite

    def get(self, suite_id: str) -> CipherSuite:
        try:
            return self.suites[suite_id]
        except KeyError:
            raise UnknownSuiteError("suite", suite_id) from None

    def ids(self) -> list[str]:
        return list(self.suites)


def default_registry() -> SuiteRegistry:
    reg = SuiteRegistry()
    reg.register(NULL_SUITE)
    reg.register(CHACHA_SUITE)
    return reg


# --- sealing (fixed strong construction, independent of negotiated suite) --

def seal(key_material: bytes, plaintext: bytes, entropy: Entropy) -> bytes:
    """Encrypt-then-MAC ``plaintext`` under keys derived from ``key_material``.

    Used for key-exchange payloads and delegation tokens, which must stay
    confidential even when the negotiated data suite is NULL.
    """
    ck = derive_key(key_material, b"seal-cipher")
    mk = derive_key(key_material, b"seal-mac")
    nonce = entropy.bytes(_CHACHA_NONCE_BYTES)
    enc = Cipher(algorithms.ChaCha20(ck, nonce), mode=None).encryptor()
    ct = nonce + enc.update(plaintext) + enc.finalize()
    return ct + _hmac_sha256(mk, ct)


def open_sealed(key_material: bytes, blob: bytes) -> bytes:
    """Verify and decrypt a sealed blob; raises CryptoError on any tamper."""
    if len(blob) < _CHACHA_NONCE_BYTES + _MAC_BYTES:
        raise CryptoError("sealed blob too short")
    ct, tag = blob[:-_MAC_BYTES], blob[-_MAC_BYTES:]
    mk = derive_key(key_material, b"seal-mac")
    if not _hmac.compare_digest(_hmac_sha256(mk, ct), tag):
        raise CryptoError("sealed blob failed integrity check")
    ck = derive_key(key_material, b"seal-cipher")
    nonce, body = ct[:_CHACHA_NONCE_BYTES], ct[_CHACHA_NONCE_BYTES:]
    dec = Cipher(algorithms.ChaCha20(ck, nonce), mode=None).decryptor()
    return dec.update(body) + dec.finalize()


# --- ephemeral key exchange -------------------------------------------------

def kex_keypair(entropy: Entropy) -> tuple[x25519.X25519PrivateKey, bytes]:
    """Fresh X25519 keypair; returns (private key, 32-byte public bytes)."""
    priv = x25519.X25519PrivateKey.from_private_bytes(entropy.bytes(32))
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    pub = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return priv, pub


def kex_agree(priv: x25519.X25519PrivateKey, peer_pub: bytes, transcript: bytes) -> bytes:
    """Derive the handshake sealing key from the DH secret and transcript."""
    shared = priv.exchange(x25519.X25519PublicKey.from_public_bytes(peer_pub))
    return derive_key(shared + sha256(transcript).digest(), b"handshake-kek")
