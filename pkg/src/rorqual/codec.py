"""Digests, signatures, Reed-Solomon coding and quorum certificates.

Canonical serialization
-----------------------
Every value that gets hashed, signed or put on the wire goes through
:func:`canonical`. Each item is written as a one-byte type tag followed
by its body:

    ``N``                     None
    ``T`` / ``F``             booleans
    ``I`` + 8 bytes           signed little-endian integer
    ``B`` + u32 len + bytes   byte string
    ``S`` + u32 len + utf-8   text
    ``L`` + u32 count + items tuple / list
    ``D`` + u32 count + k,v   mapping, keys sorted by their encoding
    ``O`` + name + fields     dataclass (name as ``S``, fields in order)

Floats are encoded as their ``repr`` text so that encodings stay exact.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import hmac
import random
import struct
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

DIGEST_SIZE = 32


class CodecError(Exception):
    """Base class for codec failures."""


class ParameterError(CodecError, ValueError):
    pass


class InsufficientSharesError(CodecError):
    pass


class DecodeIntegrityError(CodecError):
    """Shares do not come from a single codeword."""


class CertificateError(CodecError):
    def __init__(self, message: str, signer: int | None = None):
        super().__init__(message)
        self.signer = signer


# ---------------------------------------------------------------------------
# canonical serialization


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


# per dataclass: (header bytes, wire field names, frozen?)
_LAYOUTS: dict[type, tuple[bytes, tuple[str, ...], bool]] = {}


def _layout(cls: type) -> tuple[bytes, tuple[str, ...], bool]:
    lay = _LAYOUTS.get(cls)
    if lay is None:
        names = tuple(f.name for f in dataclasses.fields(cls) if f.metadata.get("wire", True))
        name = cls.__name__.encode()
        frozen = cls.__dataclass_params__.frozen and hasattr(cls, "__dict__")
        lay = (b"O" + _u32(len(name)) + name + _u32(len(names)), names, frozen)
        _LAYOUTS[cls] = lay
    return lay


def _encode_dataclass(obj, out: list[bytes]) -> None:
    # frozen instances are immutable, so their encoding is memoized on the instance
    d = getattr(obj, "__dict__", None)
    if d is not None:
        cached = d.get("_canon")
        if cached is not None:
            out.append(cached)
            return
    header, names, frozen = _layout(type(obj))
    sub = [header]
    for name in names:
        _encode(getattr(obj, name), sub)
    enc = b"".join(sub)
    if frozen and d is not None:
        object.__setattr__(obj, "_canon", enc)
    out.append(enc)


_PACK_Q = struct.Struct("<q").pack
_PACK_I = struct.Struct("<I").pack


def _encode(obj, out: list[bytes]) -> None:
    t = type(obj)
    # fast paths for the common exact types
    if t in _LAYOUTS:
        _encode_dataclass(obj, out)
    elif t is bytes:
        out.append(b"B" + _PACK_I(len(obj)) + obj)
    elif t is int:
        out.append(b"I" + _PACK_Q(obj))
    elif t is str:
        body = obj.encode()
        out.append(b"S" + _PACK_I(len(body)) + body)
    elif t is tuple or t is list:
        out.append(b"L" + _PACK_I(len(obj)))
        for x in obj:
            _encode(x, out)
    elif obj is None:
        out.append(b"N")
    elif obj is True:
        out.append(b"T")
    elif obj is False:
        out.append(b"F")
    elif isinstance(obj, enum.Enum):
        _encode(obj.value, out)
    elif isinstance(obj, int):
        out.append(b"I" + struct.pack("<q", obj))
    elif isinstance(obj, float):
        body = repr(obj).encode()
        out.append(b"R" + _u32(len(body)) + body)
    elif isinstance(obj, (bytes, bytearray, memoryview)):
        body = bytes(obj)
        out.append(b"B" + _u32(len(body)) + body)
    elif isinstance(obj, str):
        body = obj.encode()
        out.append(b"S" + _u32(len(body)) + body)
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        _encode_dataclass(obj, out)
    elif isinstance(obj, Mapping):
        items = sorted((canonical(k), v) for k, v in obj.items())
        out.append(b"D" + _u32(len(items)))
        for k, v in items:
            out.append(k)
            _encode(v, out)
    elif isinstance(obj, (frozenset, set)):
        items = sorted(canonical(x) for x in obj)
        out.append(b"L" + _u32(len(items)))
        out.extend(items)
    elif isinstance(obj, (tuple, list)):
        out.append(b"L" + _u32(len(obj)))
        for x in obj:
            _encode(x, out)
    else:
        raise TypeError(f"cannot canonically encode {type(obj).__name__}")


def canonical(*fields) -> bytes:
    """Deterministic byte encoding of ``fields`` (see module docstring)."""
    out: list[bytes] = []
    if len(fields) == 1:
        _encode(fields[0], out)
    else:
        _encode(fields, out)
    return b"".join(out)


def decanonical(data: bytes, types: Iterable[type] = ()):
    """Inverse of :func:`canonical` for the dataclasses named in ``types``.

    Sequences come back as tuples; a single top-level value is returned
    as is.
    """
    registry = {t.__name__: t for t in types}
    registry.setdefault("Signature", Signature)
    registry.setdefault("QuorumCert", QuorumCert)
    view = memoryview(data)

    def u32(pos):
        return struct.unpack_from("<I", view, pos)[0], pos + 4

    def item(pos):
        tag = bytes(view[pos : pos + 1])
        pos += 1
        if tag == b"N":
            return None, pos
        if tag == b"T":
            return True, pos
        if tag == b"F":
            return False, pos
        if tag == b"I":
            return struct.unpack_from("<q", view, pos)[0], pos + 8
        if tag in (b"B", b"S", b"R"):
            size, pos = u32(pos)
            body = bytes(view[pos : pos + size])
            if tag == b"B":
                return body, pos + size
            return (body.decode() if tag == b"S" else float(body.decode())), pos + size
        if tag == b"L":
            count, pos = u32(pos)
            out = []
            for _ in range(count):
                x, pos = item(pos)
                out.append(x)
            return tuple(out), pos
        if tag == b"D":
            count, pos = u32(pos)
            out = {}
            for _ in range(count):
                k, pos = item(pos)
                v, pos = item(pos)
                out[k] = v
            return out, pos
        if tag == b"O":
            size, pos = u32(pos)
            name = bytes(view[pos : pos + size]).decode()
            pos += size
            count, pos = u32(pos)
            values = []
            for _ in range(count):
                x, pos = item(pos)
                values.append(x)
            cls = registry.get(name)
            if cls is None:
                raise ValueError(f"unknown type {name!r}")
            return cls(*values), pos
        raise ValueError(f"bad tag {tag!r} at {pos - 1}")

    value, end = item(0)
    if end != len(data):
        raise ValueError("trailing bytes")
    return value


def digest(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


def digest_of(*fields) -> bytes:
    return digest(canonical(*fields))


# ---------------------------------------------------------------------------
# keys and signatures


class Domain(enum.Enum):
    SECURE_WORLD = "sw"
    NORMAL_WORLD = "nw"


@dataclass(frozen=True)
class Signature:
    signer: int
    data: bytes


class _MacScheme:
    """Keyed-MAC (BLAKE2b) stand-in for a signature scheme.

    The verifier resolves a public key to its secret through a private
    table, so a signature can only be produced by the holder of the
    secret. Cheap enough for large simulations.
    """

    name = "mac"
    signature_size = 32

    def __init__(self):
        self._secrets: dict[bytes, bytes] = {}

    def keypair(self, seed: bytes) -> tuple[bytes, bytes]:
        secret = hashlib.sha256(b"mac-secret" + seed).digest()
        public = hashlib.sha256(b"mac-public" + secret).digest()
        self._secrets[public] = secret
        return secret, public

    def sign(self, secret: bytes, msg: bytes) -> bytes:
        return hashlib.blake2b(msg, key=secret, digest_size=32).digest()

    def verify(self, public: bytes, msg: bytes, sig: bytes) -> bool:
        secret = self._secrets.get(public)
        if secret is None or len(sig) != self.signature_size:
            return False
        return hmac.compare_digest(self.sign(secret, msg), sig)


class _Ed25519Scheme:
    name = "ed25519"
    signature_size = 64

    def keypair(self, seed: bytes) -> tuple[bytes, bytes]:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
        from cryptography.hazmat.primitives import serialization

        raw = hashlib.sha256(b"ed25519" + seed).digest()
        key = Ed25519PrivateKey.from_private_bytes(raw)
        public = key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return raw, public

    def sign(self, secret: bytes, msg: bytes) -> bytes:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        return Ed25519PrivateKey.from_private_bytes(secret).sign(msg)

    def verify(self, public: bytes, msg: bytes, sig: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(public).verify(sig, msg)
        except (InvalidSignature, ValueError):
            return False
        return True


SCHEMES = {"mac": _MacScheme(), "ed25519": _Ed25519Scheme()}


class KeyPair:
    """A signing key. The secret stays on the instance and is never
    serialized: ``repr`` and pickling only expose the public half."""

    __slots__ = ("public", "domain", "owner", "scheme", "_secret")

    def __init__(self, secret: bytes, public: bytes, domain: Domain, owner: int, scheme: str):
        self._secret = secret
        self.public = public
        self.domain = domain
        self.owner = owner
        self.scheme = scheme

    def __repr__(self) -> str:
        return f"KeyPair(owner={self.owner}, domain={self.domain.value}, public={self.public.hex()[:16]}…)"

    def __reduce__(self):
        raise TypeError("KeyPair holds secret material and cannot be serialized")


def keygen(
    rng: random.Random | None,
    owner: int,
    domain: Domain = Domain.NORMAL_WORLD,
    scheme: str = "mac",
) -> KeyPair:
    """Fresh key pair. ``rng=None`` draws OS entropy."""
    seed = rng.randbytes(32) if rng is not None else random.SystemRandom().randbytes(32)
    impl = SCHEMES[scheme]
    secret, public = impl.keypair(seed + domain.value.encode())
    return KeyPair(secret, public, domain, owner, scheme)


def sign(msg: bytes, key: KeyPair) -> Signature:
    return Signature(key.owner, SCHEMES[key.scheme].sign(key._secret, msg))


def verify(msg: bytes, sig: Signature, public: bytes, scheme: str = "mac") -> bool:
    if not isinstance(sig, Signature) or not isinstance(sig.data, (bytes, bytearray)):
        return False
    try:
        return SCHEMES[scheme].verify(public, msg, bytes(sig.data))
    except Exception:
        return False


def verify_on(holder, msg: bytes, sig: Signature, public: bytes, scheme: str = "mac") -> bool:
    """``verify`` memoized on the frozen object that carries ``sig``.

    Every receiver of one message object computes the same verdict, so the
    simulation checks each (key, signature) pair on it once.
    """
    memo = holder.__dict__.get("_verified")
    if memo is None:
        memo = {}
        object.__setattr__(holder, "_verified", memo)
    key = (public, sig.data if isinstance(sig, Signature) else None, msg)
    ok = memo.get(key)
    if ok is None:
        ok = memo[key] = verify(msg, sig, public, scheme)
    return ok


def signature_size(scheme: str = "mac") -> int:
    return SCHEMES[scheme].signature_size


# ---------------------------------------------------------------------------
# quorum certificates


@dataclass(frozen=True)
class QuorumCert:
    subject: bytes
    threshold: int
    signatures: tuple[Signature, ...]

    @property
    def signers(self) -> frozenset[int]:
        return frozenset(s.signer for s in self.signatures)


def assemble_cert(
    sigs: Iterable[Signature],
    subject: bytes,
    threshold: int,
    publics: Mapping[int, bytes],
    scheme: str = "mac",
) -> QuorumCert:
    """Bundle ``sigs`` over ``subject``; raises naming the first bad signer."""
    chosen: dict[int, Signature] = {}
    for s in sigs:
        if s.signer in chosen:
            raise CertificateError(f"duplicate signer {s.signer}", s.signer)
        pub = publics.get(s.signer)
        if pub is None or not verify(subject, s, pub, scheme):
            raise CertificateError(f"bad signature from {s.signer}", s.signer)
        chosen[s.signer] = s
    if len(chosen) < threshold:
        raise CertificateError(f"{len(chosen)} signatures below threshold {threshold}")
    ordered = tuple(chosen[k] for k in sorted(chosen))
    return QuorumCert(subject, threshold, ordered)


def verify_cert(
    cert: QuorumCert,
    subject: bytes,
    threshold: int,
    publics: Mapping[int, bytes],
    scheme: str = "mac",
) -> bool:
    if not isinstance(cert, QuorumCert) or cert.subject != subject:
        return False
    seen = set()
    for s in cert.signatures:
        if s.signer in seen:
            return False
        pub = publics.get(s.signer)
        if pub is None or not verify(subject, s, pub, scheme):
            return False
        seen.add(s.signer)
    return len(seen) >= threshold


# ---------------------------------------------------------------------------
# Reed-Solomon over GF(2^8), systematic, evaluation form
#
# Data symbols are the values of a degree < k polynomial at x = 0..k-1;
# parity shares are its values at x = k..n-1. Any k points determine it.

_PRIM = 0x11D
_EXP = np.zeros(512, dtype=np.uint8)
_LOG = np.zeros(256, dtype=np.int32)
_x = 1
for _i in range(255):
    _EXP[_i] = _x
    _LOG[_x] = _i
    _x <<= 1
    if _x & 0x100:
        _x ^= _PRIM
_EXP[255:510] = _EXP[:255]
del _x, _i

# _MUL[a] is the row "a * b for all b"
_MUL = np.zeros((256, 256), dtype=np.uint8)
for _a in range(1, 256):
    _MUL[_a, 1:] = _EXP[_LOG[_a] + _LOG[np.arange(1, 256)]]
del _a


def _gmul(a: int, b: int) -> int:
    return int(_MUL[a, b])


def _ginv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("GF(256) inverse of 0")
    return int(_EXP[255 - _LOG[a]])


def _lagrange_row(xs: list[int], x: int) -> list[int]:
    """Coefficients c_j with p(x) = sum c_j p(xs[j]) for deg p < len(xs)."""
    row = []
    for j, xj in enumerate(xs):
        num, den = 1, 1
        for m, xm in enumerate(xs):
            if m != j:
                num = _gmul(num, x ^ xm)
                den = _gmul(den, xj ^ xm)
        row.append(_gmul(num, _ginv(den)))
    return row


def _combine(matrix: list[list[int]], symbols: np.ndarray) -> np.ndarray:
    out = np.zeros((len(matrix), symbols.shape[1]), dtype=np.uint8)
    for i, row in enumerate(matrix):
        acc = out[i]
        for j, c in enumerate(row):
            if c == 1:
                acc ^= symbols[j]
            elif c:
                acc ^= _MUL[c][symbols[j]]
    return out


def _check_params(n: int, k: int) -> None:
    if not (1 <= k <= n):
        raise ParameterError(f"need 1 <= k <= n, got n={n}, k={k}")
    if n > 255:
        raise ParameterError("GF(256) code supports at most 255 shares")


def rs_encode(payload: bytes, n: int, k: int) -> list[bytes]:
    """Split ``payload`` into ``n`` shares, any ``k`` of which recover it."""
    _check_params(n, k)
    if not payload:
        raise ParameterError("payload must be non-empty")
    framed = struct.pack("<I", len(payload)) + payload
    width = -(-len(framed) // k)
    framed += b"\0" * (width * k - len(framed))
    data = np.frombuffer(framed, dtype=np.uint8).reshape(k, width)
    xs = list(range(k))
    parity = _combine([_lagrange_row(xs, x) for x in range(k, n)], data)
    return [data[i].tobytes() for i in range(k)] + [parity[i].tobytes() for i in range(n - k)]


def rs_decode(shares: Mapping[int, bytes], n: int, k: int) -> bytes:
    """Recover the payload from ``{index: share}``.

    Uses the first ``k`` indices, then re-encodes and compares against every
    supplied share; a mismatch raises :class:`DecodeIntegrityError`.
    """
    _check_params(n, k)
    valid = {i: s for i, s in shares.items() if 0 <= i < n}
    if len(valid) < k:
        raise InsufficientSharesError(f"{len(valid)} shares, need {k}")
    widths = {len(s) for s in valid.values()}
    if len(widths) != 1:
        raise DecodeIntegrityError("shares have different lengths")
    xs = sorted(valid)[:k]
    sym = np.frombuffer(b"".join(valid[x] for x in xs), dtype=np.uint8).reshape(k, -1)
    if xs == list(range(k)):
        data = sym
    else:
        data = _combine([_lagrange_row(xs, x) for x in range(k)], sym)
    framed = data.tobytes()
    size = struct.unpack_from("<I", framed)[0]
    if size == 0 or size > len(framed) - 4:
        raise DecodeIntegrityError("length prefix out of range")
    payload = framed[4 : 4 + size]
    reencoded = rs_encode(payload, n, k)
    for i, s in valid.items():
        if reencoded[i] != s:
            raise DecodeIntegrityError(f"share {i} inconsistent with codeword")
    return payload


@dataclass(frozen=True)
class Share:
    """One coded fragment of a dispersed vertex, signed by the source enclave."""

    index: int
    data: bytes
    source: int
    round: int
    sig: Signature

    @staticmethod
    def signed_bytes(data: bytes, index: int, source: int, round: int) -> bytes:
        return canonical("share", data, index, source, round)

    def own_signed_bytes(self) -> bytes:
        cached = self.__dict__.get("_signed")
        if cached is None:
            cached = Share.signed_bytes(self.data, self.index, self.source, self.round)
            object.__setattr__(self, "_signed", cached)
        return cached
