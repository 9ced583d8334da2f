import hashlib

import pytest
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

from vse_attest import crypto
from vse_attest.crypto import HmacKey, MasterKey, RandomSource, SigningKeyPair, WrappedKey
from vse_attest.errors import AttestError, CodecError, Status

from conftest import SHA256_EMPTY, V0

RFC8032_TV1 = {
    "secret": "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60",
    "public": "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a",
    "sig": "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b",
}
RFC8032_TV2 = {
    "secret": "4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb",
    "msg": "72",
    "sig": "92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da085ac1e43e15996e458f3613d0f11d8c387b2eaeb4302aeeb00d291612bb0c00",
}


def test_sha256_vectors():
    assert crypto.sha256(b"") == SHA256_EMPTY
    assert crypto.sha256(bytes(64)) == V0
    x = crypto.random_bytes(100)
    assert crypto.sha256(x) == crypto.sha256(x) == hashlib.sha256(x).digest()


def test_hmac_rfc4231_case1():
    key = HmacKey(1, b"\x0b" * 20)
    tag = crypto.hmac_tag(key, b"Hi There")
    assert tag.hex() == "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"
    assert crypto.hmac_verify(key, b"Hi There", tag)
    assert not crypto.hmac_verify(key, b"Hi there", tag)


def test_hmac_distinct_keys_distinct_tags(rng):
    data = b"payload"
    for _ in range(100):
        k1, k2 = HmacKey.generate(rng), HmacKey.generate(rng)
        assert crypto.hmac_tag(k1, data) != crypto.hmac_tag(k2, data)


def test_hmac_key_generate():
    key = HmacKey.generate()
    assert key.key_id != 0 and len(key.secret) == 32
    assert key.secret.hex() not in repr(key)
    with pytest.raises(ValueError):
        HmacKey(0, bytes(32))


def test_ed25519_rfc8032_vectors():
    k1 = SigningKeyPair.from_private(bytes.fromhex(RFC8032_TV1["secret"]))
    assert k1.public.hex() == RFC8032_TV1["public"]
    assert k1.sign(b"").hex() == RFC8032_TV1["sig"]
    k2 = SigningKeyPair.from_private(bytes.fromhex(RFC8032_TV2["secret"]))
    sig = crypto.sign(k2, bytes.fromhex(RFC8032_TV2["msg"]))
    assert sig.hex() == RFC8032_TV2["sig"]
    assert crypto.verify(k2.public, b"\x72", sig)


def test_sign_verify_and_mutations(rng):
    key = SigningKeyPair.generate(rng)
    msg = rng(1024)
    sig = key.sign(msg)
    assert crypto.verify(key.public, msg, sig)
    flipped = bytearray(msg)
    flipped[10] ^= 0x01
    assert not crypto.verify(key.public, bytes(flipped), sig)
    bad_sig = bytearray(sig)
    bad_sig[0] ^= 0x80
    assert not crypto.verify(key.public, msg, bytes(bad_sig))
    with pytest.raises(CodecError):
        crypto.verify(key.public, msg, sig[:10])


def test_wrap_round_trip_and_failures(rng):
    master = rng(32)
    payload = rng(32)
    wrapped = crypto.wrap_key(master, payload, recipient_key_id=7, aad=b"ctx", rng=rng)
    assert crypto.unwrap_key(master, wrapped, aad=b"ctx") == payload
    assert WrappedKey.decode(wrapped.encode()) == wrapped

    with pytest.raises(AttestError) as exc:
        crypto.unwrap_key(rng(32), wrapped, aad=b"ctx")
    assert exc.value.status == Status.AUTH_FAILED

    ct = bytearray(wrapped.ciphertext)
    ct[0] ^= 1
    tampered = WrappedKey(wrapped.recipient_key_id, wrapped.nonce, bytes(ct))
    with pytest.raises(AttestError) as exc:
        crypto.unwrap_key(master, tampered, aad=b"ctx")
    assert exc.value.status == Status.AUTH_FAILED

    with pytest.raises(AttestError):
        crypto.unwrap_key(master, wrapped, aad=b"other")


def test_peer_wrap_only_opens_under_recipient():
    a, b = MasterKey(crypto.random_bytes(32)), MasterKey(crypto.random_bytes(32))
    secret = crypto.random_bytes(36)
    w1 = crypto.wrap_for_peer(b.public, secret, aad=b"hmac-key")
    w2 = crypto.wrap_for_peer(b.public, secret, aad=b"hmac-key")
    assert w1.encode() != w2.encode()
    assert secret not in w1.encode()
    assert b.unwrap(w1, aad=b"hmac-key") == secret
    with pytest.raises(AttestError) as exc:
        a.unwrap(w1, aad=b"hmac-key")
    assert exc.value.status == Status.AUTH_FAILED


def test_master_public_is_derived_and_stable():
    secret = crypto.random_bytes(32)
    m = MasterKey(secret)
    assert len(m.public) == 32
    assert MasterKey(secret).public == m.public
    # the agreement key is derived from the secret, never the secret itself
    assert m.public != X25519PrivateKey.from_private_bytes(secret).public_key().public_bytes_raw()
    assert secret.hex() not in repr(m)


def test_random_source():
    assert len(crypto.random_bytes(32)) == 32
    seen = {crypto.random_bytes(32) for _ in range(1000)}
    assert len(seen) == 1000
    a, b = RandomSource(5), RandomSource(5)
    assert a(64) == b(64)
    assert RandomSource(6)(64) != RandomSource(5)(64)
    assert a.deterministic and not RandomSource().deterministic


def test_check_digest():
    assert crypto.check_digest(bytes(32)) == bytes(32)
    with pytest.raises(CodecError):
        crypto.check_digest(bytes(31))
