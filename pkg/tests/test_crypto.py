import random

import pytest
import sympy
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from fedchain import crypto
from fedchain.crypto import Ciphertext, DecryptionError, InvalidKeySize, MessageTooLong

LINK = "cid:" + "3f" * 32


def _oracle_key(kp):
    """Load our key numbers into the ``cryptography`` package."""
    sk = kp.private_key
    pub = rsa.RSAPublicNumbers(sk.e, sk.n)
    return rsa.RSAPrivateNumbers(
        sk.p, sk.q, sk.d, rsa.rsa_crt_dmp1(sk.d, sk.p), rsa.rsa_crt_dmq1(sk.d, sk.q),
        rsa.rsa_crt_iqmp(sk.p, sk.q), pub,
    ).private_key()


OAEP = padding.OAEP(mgf=padding.MGF1(hashes.SHA1()), algorithm=hashes.SHA1(), label=None)


def test_modulus_has_requested_bits(keypair):
    assert keypair.public_key.n.bit_length() == 1024


def test_factors_are_prime(keypair):
    sk = keypair.private_key
    assert sympy.isprime(sk.p) and sympy.isprime(sk.q)
    assert sk.p * sk.q == sk.n
    assert (sk.e * sk.d) % sympy.lcm(sk.p - 1, sk.q - 1) == 1


def test_same_seed_same_keys():
    assert crypto.generate_keypair(512, seed=9) == crypto.generate_keypair(512, seed=9)
    assert crypto.generate_keypair(512, seed=9) != crypto.generate_keypair(512, seed=10)


@pytest.mark.parametrize("bits", [511, 513, 256, 8192])
def test_invalid_key_sizes(bits):
    with pytest.raises(InvalidKeySize):
        crypto.generate_keypair(bits, seed=1)


def test_miller_rabin_matches_sympy():
    r = random.Random(3)
    for n in list(range(2000)) + [r.getrandbits(64) | 1 for _ in range(300)]:
        assert crypto.is_probable_prime(n, r) == sympy.isprime(n), n


def test_link_round_trip(keypair):
    ct = crypto.encrypt(LINK.encode(), keypair.public_key)
    assert ct.chunk_count == 1
    assert crypto.decrypt(ct, keypair.private_key).decode() == LINK


def test_empty_message(keypair):
    ct = crypto.encrypt(b"", keypair.public_key)
    assert ct.chunk_count == 1
    assert crypto.decrypt(ct, keypair.private_key) == b""


def test_random_messages_round_trip(keypair):
    r = random.Random(11)
    for _ in range(1000):
        m = r.randbytes(r.randint(1, 512))
        ct = crypto.encrypt(m, keypair.public_key, r)
        assert all(int.from_bytes(c, "big") < keypair.public_key.n for c in ct.chunks)
        assert crypto.decrypt(ct.to_bytes(), keypair.private_key) == m


def test_multi_chunk_split(keypair):
    cap = keypair.public_key.block_capacity
    m = bytes(range(256)) * 2
    ct = crypto.encrypt(m, keypair.public_key)
    assert ct.chunk_count == -(-len(m) // cap)
    assert crypto.decrypt(ct, keypair.private_key) == m


def test_encryption_is_randomized(keypair):
    a = crypto.encrypt(LINK.encode(), keypair.public_key)
    b = crypto.encrypt(LINK.encode(), keypair.public_key)
    assert a != b


def test_seeded_encryption_is_reproducible(keypair):
    a = crypto.encrypt(LINK.encode(), keypair.public_key, random.Random(1))
    b = crypto.encrypt(LINK.encode(), keypair.public_key, random.Random(1))
    assert a == b


def test_too_long(keypair):
    with pytest.raises(MessageTooLong):
        crypto.encrypt(b"x" * 4097, keypair.public_key)
    assert crypto.encrypt(b"x" * 10, keypair.public_key, max_length=10)


def test_wrong_key_is_rejected(keypair):
    other = crypto.generate_keypair(1024, seed=77)
    ct = crypto.encrypt(LINK.encode(), keypair.public_key)
    with pytest.raises(DecryptionError):
        crypto.decrypt(ct, other.private_key)


def test_bit_flips_are_detected(keypair):
    r = random.Random(5)
    ct = crypto.encrypt(LINK.encode(), keypair.public_key, r).to_bytes()
    for _ in range(100):
        pos = r.randrange(4, len(ct))
        tampered = bytearray(ct)
        tampered[pos] ^= 1 << r.randrange(8)
        with pytest.raises(DecryptionError):
            crypto.decrypt(bytes(tampered), keypair.private_key)


def test_truncated_ciphertext(keypair):
    ct = crypto.encrypt(LINK.encode(), keypair.public_key).to_bytes()
    with pytest.raises(DecryptionError):
        crypto.decrypt(ct[:-1], keypair.private_key)
    with pytest.raises(DecryptionError):
        Ciphertext.from_bytes(b"\x00")


def test_interoperates_with_reference_oaep(keypair):
    ref = _oracle_key(keypair)
    r = random.Random(21)
    for _ in range(20):
        m = r.randbytes(r.randint(0, keypair.public_key.block_capacity))
        ours = crypto.encrypt(m, keypair.public_key, r)
        assert ref.decrypt(ours.chunks[0], OAEP) == m
        theirs = ref.public_key().encrypt(m, OAEP)
        assert crypto.decrypt(Ciphertext((theirs,)), keypair.private_key) == m


def test_key_files_round_trip(tmp_path, keypair):
    pub, priv = crypto.save_keypair(keypair, tmp_path)
    assert crypto.load_public_key(pub) == keypair.public_key
    assert crypto.load_private_key(priv) == keypair.private_key
    assert crypto.load_keypair(tmp_path) == keypair
    assert "n = 0x" in pub.read_text()


def test_public_file_is_not_a_private_key(tmp_path, keypair):
    pub, _ = crypto.save_keypair(keypair, tmp_path)
    with pytest.raises(crypto.CryptoError):
        crypto.load_private_key(pub)
