"""RSA with OAEP padding, written from number-theory primitives.

Hash links are encrypted under the operator's public key before they go
on-chain. Keys can be generated from a seed so that whole simulation runs are
reproducible; pass ``seed=None`` to draw from the OS entropy pool instead.

OAEP uses SHA-1 for both the label hash and MGF1 (the PKCS #1 default), which
keeps 512-bit keys usable: one block carries ``k - 42`` message bytes where
``k`` is the modulus length in bytes.
"""
from __future__ import annotations

import hashlib
import math
import random
import secrets
from dataclasses import dataclass
from pathlib import Path

PUBLIC_EXPONENT = 65537
DEFAULT_BITS = 1024
MAX_KEY_BITS = 4096
DEFAULT_MAX_MESSAGE = 4096
MILLER_RABIN_ROUNDS = 40  # error <= 4**-40 == 2**-80

_HASH = hashlib.sha1
_HLEN = _HASH().digest_size
_LHASH = _HASH(b"").digest()

_SMALL_PRIMES = [p for p in range(3, 2000) if all(p % q for q in range(2, math.isqrt(p) + 1))]


class CryptoError(Exception):
    pass


class InvalidKeySize(CryptoError, ValueError):
    pass


class MessageTooLong(CryptoError, ValueError):
    pass


class DecryptionError(CryptoError):
    """Padding or integrity failure: tampered ciphertext or wrong key."""


@dataclass(frozen=True)
class PublicKey:
    n: int
    e: int

    @property
    def bits(self) -> int:
        return self.n.bit_length()

    @property
    def size_bytes(self) -> int:
        return (self.n.bit_length() + 7) // 8

    @property
    def block_capacity(self) -> int:
        return self.size_bytes - 2 * _HLEN - 2


@dataclass(frozen=True)
class PrivateKey:
    n: int
    e: int
    d: int
    p: int
    q: int

    @property
    def public(self) -> PublicKey:
        return PublicKey(self.n, self.e)

    @property
    def size_bytes(self) -> int:
        return (self.n.bit_length() + 7) // 8


@dataclass(frozen=True)
class KeyPair:
    public_key: PublicKey
    private_key: PrivateKey


@dataclass(frozen=True)
class Ciphertext:
    chunks: tuple[bytes, ...]

    @property
    def chunk_count(self) -> int:
        return len(self.chunks)

    def to_bytes(self) -> bytes:
        size = len(self.chunks[0]) if self.chunks else 0
        head = size.to_bytes(2, "big") + len(self.chunks).to_bytes(2, "big")
        return head + b"".join(self.chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> Ciphertext:
        if len(data) < 4:
            raise DecryptionError("ciphertext header truncated")
        size = int.from_bytes(data[:2], "big")
        count = int.from_bytes(data[2:4], "big")
        body = data[4:]
        if size == 0 or count == 0 or len(body) != size * count:
            raise DecryptionError("ciphertext length does not match its header")
        return cls(tuple(body[i * size:(i + 1) * size] for i in range(count)))

    def hex(self) -> str:
        return self.to_bytes().hex()


# -- primes -----------------------------------------------------------------

def is_probable_prime(n: int, rng: random.Random, rounds: int = MILLER_RABIN_ROUNDS) -> bool:
    if n < 2:
        return False
    if n in (2, 3):
        return True
    if n % 2 == 0:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    r, s = n - 1, 0
    while r % 2 == 0:
        r //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, r, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        # top two bits set so the product of two such primes has exactly 2*bits bits
        candidate = rng.getrandbits(bits) | (0b11 << (bits - 2)) | 1
        if math.gcd(candidate - 1, PUBLIC_EXPONENT) != 1:
            continue
        if is_probable_prime(candidate, rng):
            return candidate


def generate_keypair(bits: int = DEFAULT_BITS, seed: int | None = None) -> KeyPair:
    if bits < 512 or bits % 2 or bits > MAX_KEY_BITS:
        raise InvalidKeySize(f"key size must be even and in [512, {MAX_KEY_BITS}], got {bits}")
    rng: random.Random = random.Random(seed) if seed is not None else secrets.SystemRandom()
    while True:
        p = _random_prime(bits // 2, rng)
        q = _random_prime(bits // 2, rng)
        if p == q:
            continue
        n = p * q
        if n.bit_length() != bits:
            continue
        lam = math.lcm(p - 1, q - 1)
        d = pow(PUBLIC_EXPONENT, -1, lam)
        p, q = max(p, q), min(p, q)
        return KeyPair(PublicKey(n, PUBLIC_EXPONENT), PrivateKey(n, PUBLIC_EXPONENT, d, p, q))


# -- OAEP ---------------------------------------------------------------------

def _mgf1(seed: bytes, length: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < length:
        out += _HASH(seed + counter.to_bytes(4, "big")).digest()
        counter += 1
    return bytes(out[:length])


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def _oaep_encode(message: bytes, k: int, rng) -> bytes:
    ps = b"\x00" * (k - len(message) - 2 * _HLEN - 2)
    db = _LHASH + ps + b"\x01" + message
    seed = rng.randbytes(_HLEN) if hasattr(rng, "randbytes") else secrets.token_bytes(_HLEN)
    masked_db = _xor(db, _mgf1(seed, k - _HLEN - 1))
    masked_seed = _xor(seed, _mgf1(masked_db, _HLEN))
    return b"\x00" + masked_seed + masked_db


def _oaep_decode(block: bytes, k: int) -> bytes:
    y, masked_seed, masked_db = block[0], block[1:1 + _HLEN], block[1 + _HLEN:]
    seed = _xor(masked_seed, _mgf1(masked_db, _HLEN))
    db = _xor(masked_db, _mgf1(seed, k - _HLEN - 1))
    sep = db.find(b"\x01", _HLEN)
    ok = y == 0 and db[:_HLEN] == _LHASH and sep != -1 and not any(db[_HLEN:sep])
    if not ok:
        raise DecryptionError("OAEP padding check failed")
    return db[sep + 1:]


def encrypt(
    message: bytes,
    key: PublicKey,
    rng: random.Random | None = None,
    max_length: int = DEFAULT_MAX_MESSAGE,
) -> Ciphertext:
    """Encrypt ``message``, splitting it over as many OAEP blocks as needed.

    ``rng`` supplies the OAEP seeds; a seeded ``random.Random`` makes the
    ciphertext reproducible. An empty message still yields one block.
    """
    if isinstance(message, str):
        message = message.encode()
    if len(message) > max_length:
        raise MessageTooLong(f"message of {len(message)} bytes exceeds limit of {max_length}")
    k = key.size_bytes
    cap = key.block_capacity
    if cap < 1:
        raise InvalidKeySize(f"{key.bits}-bit modulus is too small for OAEP")
    rng = rng if rng is not None else secrets.SystemRandom()
    pieces = [message[i:i + cap] for i in range(0, len(message), cap)] or [b""]
    chunks = []
    for piece in pieces:
        m = int.from_bytes(_oaep_encode(piece, k, rng), "big")
        chunks.append(pow(m, key.e, key.n).to_bytes(k, "big"))
    return Ciphertext(tuple(chunks))


def decrypt(ciphertext: Ciphertext | bytes, key: PrivateKey) -> bytes:
    if isinstance(ciphertext, (bytes, bytearray)):
        ciphertext = Ciphertext.from_bytes(bytes(ciphertext))
    k = key.size_bytes
    # CRT parameters
    dp, dq = key.d % (key.p - 1), key.d % (key.q - 1)
    q_inv = pow(key.q, -1, key.p)
    out = bytearray()
    for chunk in ciphertext.chunks:
        if len(chunk) != k:
            raise DecryptionError(f"chunk is {len(chunk)} bytes, key expects {k}")
        c = int.from_bytes(chunk, "big")
        if c >= key.n:
            raise DecryptionError("chunk integer is not below the modulus")
        m1, m2 = pow(c, dp, key.p), pow(c, dq, key.q)
        m = m2 + key.q * ((q_inv * (m1 - m2)) % key.p)
        out += _oaep_decode(m.to_bytes(k, "big"), k)
    return bytes(out)


# -- key files ----------------------------------------------------------------

def _write_fields(path: Path, kind: str, fields: dict[str, int]) -> None:
    lines = [f"type = {kind}"] + [f"{name} = {value:#x}" for name, value in fields.items()]
    path.write_text("\n".join(lines) + "\n")


def _read_fields(path: Path) -> dict[str, str]:
    fields = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, _, value = line.partition("=")
        fields[name.strip()] = value.strip()
    return fields


def save_keypair(pair: KeyPair, directory: str | Path, stem: str = "operator") -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pub_path, priv_path = directory / f"{stem}.pub", directory / f"{stem}.key"
    pk, sk = pair.public_key, pair.private_key
    _write_fields(pub_path, "rsa-public", {"bits": pk.bits, "n": pk.n, "e": pk.e})
    _write_fields(
        priv_path, "rsa-private",
        {"bits": sk.n.bit_length(), "n": sk.n, "e": sk.e, "d": sk.d, "p": sk.p, "q": sk.q},
    )
    return pub_path, priv_path


def load_public_key(path: str | Path) -> PublicKey:
    f = _read_fields(Path(path))
    if f.get("type") not in ("rsa-public", "rsa-private"):
        raise CryptoError(f"{path}: not an RSA key file")
    return PublicKey(int(f["n"], 0), int(f["e"], 0))


def load_private_key(path: str | Path) -> PrivateKey:
    f = _read_fields(Path(path))
    if f.get("type") != "rsa-private":
        raise CryptoError(f"{path}: not an RSA private key file")
    n, p, q = int(f["n"], 0), int(f["p"], 0), int(f["q"], 0)
    if p * q != n:
        raise CryptoError(f"{path}: p*q does not equal n")
    return PrivateKey(n, int(f["e"], 0), int(f["d"], 0), p, q)


def load_keypair(directory: str | Path, stem: str = "operator") -> KeyPair:
    sk = load_private_key(Path(directory) / f"{stem}.key")
    return KeyPair(sk.public, sk)
