import itertools
import pickle
import random

import pytest
from hypothesis import given, settings, strategies as st

from rorqual import codec
from rorqual.codec import (
    CertificateError,
    DecodeIntegrityError,
    Domain,
    InsufficientSharesError,
    ParameterError,
    assemble_cert,
    digest,
    keygen,
    rs_decode,
    rs_encode,
    sign,
    verify,
    verify_cert,
)

# sha256 of the empty string
EMPTY_DIGEST = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_digest_deterministic_and_empty_constant():
    assert digest(b"abc") == digest(b"abc")
    assert digest(b"").hex() == EMPTY_DIGEST
    assert len(digest(b"x")) == codec.DIGEST_SIZE


def test_digest_distinct_over_corpus():
    corpus = [i.to_bytes(4, "little") + b"payload" for i in range(10_000)]
    assert len({digest(p) for p in corpus}) == len(corpus)


def test_canonical_is_length_prefixed():
    # ("ab", "c") and ("a", "bc") must not collide
    assert codec.canonical(b"ab", b"c") != codec.canonical(b"a", b"bc")
    assert codec.canonical(1) != codec.canonical(True)
    assert codec.canonical({2: b"x", 1: b"y"}) == codec.canonical({1: b"y", 2: b"x"})


def test_keygen_determinism_and_distinctness():
    a = keygen(random.Random(1), 0)
    b = keygen(random.Random(1), 0)
    c = keygen(random.Random(2), 0)
    assert a.public == b.public
    assert a.public != c.public
    rng = random.Random(7)
    publics = {keygen(rng, i).public for i in range(1000)}
    assert len(publics) == 1000


def test_keypair_never_serializes_secret():
    k = keygen(random.Random(3), 1, Domain.SECURE_WORLD)
    assert "secret" not in repr(k)
    with pytest.raises(TypeError):
        pickle.dumps(k)


@pytest.mark.parametrize("scheme", ["mac", "ed25519"])
def test_sign_verify_roundtrip(scheme):
    rng = random.Random(5)
    k = keygen(rng, 0, scheme=scheme)
    other = keygen(rng, 1, scheme=scheme)
    sig = sign(b"message", k)
    assert verify(b"message", sig, k.public, scheme)
    assert not verify(b"message", sig, other.public, scheme)
    assert not verify(b"message", codec.Signature(0, b"\x00" * 3), k.public, scheme)
    assert not verify(b"message", "garbage", k.public, scheme)


def test_bit_flip_fuzz():
    rng = random.Random(11)
    k = keygen(rng, 0)
    for _ in range(1000):
        msg = rng.randbytes(rng.randint(1, 64))
        sig = sign(msg, k)
        pos = rng.randrange(len(msg) * 8)
        flipped = bytearray(msg)
        flipped[pos // 8] ^= 1 << (pos % 8)
        assert verify(msg, sig, k.public)
        assert not verify(bytes(flipped), sig, k.public)


def test_rs_n4_k2_all_pairs():
    payload = b"vertex bytes for n=4"
    shares = rs_encode(payload, 4, 2)
    assert len(shares) == 4
    for pair in itertools.combinations(range(4), 2):
        assert rs_decode({i: shares[i] for i in pair}, 4, 2) == payload


def test_rs_degenerate_single_share():
    shares = rs_encode(b"z", 1, 1)
    assert rs_decode({0: shares[0]}, 1, 1) == b"z"


def test_rs_is_systematic():
    payload = bytes(range(50))
    shares = rs_encode(payload, 6, 2)
    framed = len(payload).to_bytes(4, "little") + payload
    assert (shares[0] + shares[1]).startswith(framed)


def test_rs_n7_k3_every_subset():
    payload = b"exhaustive subset oracle"
    shares = rs_encode(payload, 7, 3)
    subsets = list(itertools.combinations(range(7), 3))
    assert len(subsets) == 35
    for sub in subsets:
        assert rs_decode({i: shares[i] for i in sub}, 7, 3) == payload


def test_rs_errors():
    with pytest.raises(ParameterError):
        rs_encode(b"x", 3, 4)
    with pytest.raises(ParameterError):
        rs_encode(b"", 3, 2)
    shares = rs_encode(b"abcdef", 4, 2)
    with pytest.raises(InsufficientSharesError):
        rs_decode({0: shares[0]}, 4, 2)
    other = rs_encode(b"ghijkl", 4, 2)
    with pytest.raises(DecodeIntegrityError):
        rs_decode({0: shares[0], 1: shares[1], 3: other[3]}, 4, 2)


@settings(max_examples=60, deadline=None)
@given(
    payload=st.binary(min_size=1, max_size=200),
    n=st.integers(1, 31),
    data=st.data(),
)
def test_rs_roundtrip_random(payload, n, data):
    k = data.draw(st.integers(1, n))
    shares = rs_encode(payload, n, k)
    chosen = data.draw(st.permutations(range(n)))[:k]
    assert rs_decode({i: shares[i] for i in chosen}, n, k) == payload


def _signers(count, seed=0):
    rng = random.Random(seed)
    keys = [keygen(rng, i) for i in range(count)]
    return keys, {k.owner: k.public for k in keys}


def test_assemble_cert_threshold():
    keys, pubs = _signers(4)
    subject = digest(b"subject")
    cert = assemble_cert([sign(subject, k) for k in keys[:3]], subject, 3, pubs)
    assert cert.signers == {0, 1, 2}
    assert verify_cert(cert, subject, 3, pubs)
    assert not verify_cert(cert, subject, 4, pubs)
    assert not verify_cert(cert, digest(b"other"), 3, pubs)
    with pytest.raises(CertificateError):
        assemble_cert([sign(subject, k) for k in keys[:2]], subject, 3, pubs)


def test_assemble_cert_names_forger():
    keys, pubs = _signers(4)
    subject = digest(b"subject")
    sigs = [sign(subject, keys[0]), sign(subject, keys[1]), codec.Signature(2, sign(subject, keys[3]).data)]
    with pytest.raises(CertificateError) as exc:
        assemble_cert(sigs, subject, 3, pubs)
    assert exc.value.signer == 2


def test_cert_with_duplicate_signer_rejected():
    keys, pubs = _signers(4)
    subject = digest(b"s")
    s0 = sign(subject, keys[0])
    forged = codec.QuorumCert(subject, 3, (s0, s0, sign(subject, keys[1])))
    assert not verify_cert(forged, subject, 3, pubs)
