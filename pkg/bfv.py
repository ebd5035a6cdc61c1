"""BFV-style somewhat-homomorphic encryption over ``ring``.

Supported evaluation is exactly what federated averaging needs: ciphertext
addition (``he_add``) and ciphertext-plaintext multiplication
(``he_plain_mul``). Neither takes a secret key.

Parameter sets (n = 4096, t = 2^20, sigma = 3.2):

    SEC128  q = 2^109 - 1
    SEC192  q = 2^75 - 1

Ciphertext wire format (little-endian)::

    magic "HEFV" | version u8 | level u8 | scale_exp u8 | n u32 | qbytes u16
    c0 coefficients (n x qbytes) | c1 coefficients (n x qbytes)

Level code 0 marks a custom parameter set; its reader has to supply the
parameters.
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from enum import Enum

from errors import DomainError, NoiseOverflowError, ParameterMismatchError, ScaleMismatchError, WireFormatError
from ring import (
    DEFAULT_SIGMA,
    RandomSource,
    RingParams,
    RingPoly,
    centered_lift,
    poly_add,
    poly_negacyclic_mul,
    poly_neg,
    sample_error,
    sample_ternary,
    sample_uniform,
)
from utils import dbg_print

CIPHERTEXT_MAGIC = b"HEFV"
CIPHERTEXT_VERSION = 1
KEY_MAGIC = b"HEFK"

# decrypt refuses results whose rounding remainder leaves less headroom than this
MIN_DECRYPT_BUDGET_BITS = 1.0

_CT_HEADER = struct.Struct("<4sBBBIH")
_KEY_HEADER = struct.Struct("<4sBBIH")
_PUBLIC_KIND = 1
_SECRET_KIND = 2


@dataclass(frozen=True)
class BfvParams:
    ring: RingParams
    sigma: float = DEFAULT_SIGMA
    label: str = "custom"
    code: int = 0


class SecurityLevel(Enum):
    SEC128 = 1
    SEC192 = 2

    @property
    def params(self) -> BfvParams:
        return _LEVEL_PARAMS[self]

    @classmethod
    def from_name(cls, name: str) -> "SecurityLevel":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise DomainError(f"unknown security level '{name}'") from None


_LEVEL_PARAMS = {
    SecurityLevel.SEC128: BfvParams(RingParams(n=4096, q=2**109 - 1, t=2**20), DEFAULT_SIGMA, "SEC128", 1),
    SecurityLevel.SEC192: BfvParams(RingParams(n=4096, q=2**75 - 1, t=2**20), DEFAULT_SIGMA, "SEC192", 2),
}
_PARAMS_BY_CODE = {params.code: params for params in _LEVEL_PARAMS.values()}


def resolve_params(level: SecurityLevel | BfvParams) -> BfvParams:
    return level.params if isinstance(level, SecurityLevel) else level


@dataclass(frozen=True)
class PublicKey:
    pk0: RingPoly
    pk1: RingPoly
    level: BfvParams


@dataclass(frozen=True)
class SecretKey:
    s: RingPoly
    level: BfvParams


@dataclass(frozen=True)
class KeyPair:
    key_pub: PublicKey
    key_priv: SecretKey


@dataclass(frozen=True)
class Plaintext:
    poly: RingPoly
    scale_exp: int = 0


@dataclass(frozen=True)
class Ciphertext:
    c0: RingPoly
    c1: RingPoly
    scale_exp: int
    level: BfvParams


@dbg_print
def keygen(level: SecurityLevel | BfvParams, r: RandomSource) -> KeyPair:
    params = resolve_params(level)
    ring = params.ring
    s = sample_ternary(ring, r)
    pk1 = sample_uniform(ring, r)
    e = sample_error(ring, params.sigma, r)
    pk0 = poly_neg(poly_add(poly_negacyclic_mul(pk1, s, ring), e, ring), ring)
    return KeyPair(PublicKey(pk0, pk1, params), SecretKey(s, params))


def _check_plaintext(m: Plaintext, ring: RingParams):
    if len(m.poly.coeffs) != ring.n:
        raise ParameterMismatchError(f"plaintext has {len(m.poly.coeffs)} coefficients, ring degree is {ring.n}")
    if any(c < 0 or c >= ring.t for c in m.poly.coeffs):
        raise DomainError(f"plaintext coefficients must lie in [0, {ring.t})")


def _lift_plaintext(m: Plaintext, ring: RingParams, factor: int = 1) -> RingPoly:
    """Centered lift of the plaintext into R_q, times *factor*."""
    return RingPoly.from_ints([factor * centered_lift(c, ring.t) for c in m.poly.coeffs], ring)


@dbg_print
def encrypt(m: Plaintext, key_pub: PublicKey, r: RandomSource) -> Ciphertext:
    ring = key_pub.level.ring
    _check_plaintext(m, ring)
    u = sample_ternary(ring, r)
    e1 = sample_error(ring, key_pub.level.sigma, r)
    e2 = sample_error(ring, key_pub.level.sigma, r)
    c0 = poly_add(poly_add(poly_negacyclic_mul(key_pub.pk0, u, ring), e1, ring), _lift_plaintext(m, ring, ring.delta), ring)
    c1 = poly_add(poly_negacyclic_mul(key_pub.pk1, u, ring), e2, ring)
    # integer messages are stored at scale 1 like freshly encoded weights
    return Ciphertext(c0, c1, max(1, m.scale_exp), key_pub.level)


def _round_div(numerator: int, denominator: int) -> int:
    """numerator / denominator rounded half away from zero (denominator > 0)."""
    if numerator >= 0:
        return (2 * numerator + denominator) // (2 * denominator)
    return -((-2 * numerator + denominator) // (2 * denominator))


def _decrypt_with_remainder(ct: Ciphertext, key_priv: SecretKey) -> tuple[Plaintext, int]:
    if ct.level != key_priv.level:
        raise ParameterMismatchError(f"ciphertext level {ct.level.label} does not match key level {key_priv.level.label}")
    ring = ct.level.ring
    q, t = ring.q, ring.t
    phase = poly_add(ct.c0, poly_negacyclic_mul(ct.c1, key_priv.s, ring), ring)
    coeffs = []
    worst = 0
    for value in phase.coeffs:
        scaled = t * centered_lift(value, q)
        m = _round_div(scaled, q)
        worst = max(worst, abs(scaled - q * m))
        coeffs.append(m % t)
    return Plaintext(RingPoly(tuple(coeffs)), ct.scale_exp), worst


def _budget_bits(q: int, worst: int) -> float:
    if worst == 0:
        return math.inf
    return math.log2(q) - math.log2(2 * worst)


@dbg_print
def decrypt(ct: Ciphertext, key_priv: SecretKey) -> Plaintext:
    plaintext, worst = _decrypt_with_remainder(ct, key_priv)
    budget = _budget_bits(ct.level.ring.q, worst)
    if budget <= MIN_DECRYPT_BUDGET_BITS:
        raise NoiseOverflowError(f"noise budget exhausted ({budget:.2f} bits left)")
    return plaintext


def noise_budget(ct: Ciphertext, key_priv: SecretKey) -> float:
    """Remaining noise headroom in bits, log2(q / (2 * ||[t * (c0 + c1*s)]_q||)).

    Diagnostic only: it needs the secret key.
    """
    _, worst = _decrypt_with_remainder(ct, key_priv)
    return _budget_bits(ct.level.ring.q, worst)


def he_add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    if a.level != b.level:
        raise ParameterMismatchError(f"cannot add ciphertexts at {a.level.label} and {b.level.label}")
    if a.scale_exp != b.scale_exp:
        raise ScaleMismatchError(f"cannot add ciphertexts at scale {a.scale_exp} and {b.scale_exp}")
    ring = a.level.ring
    return Ciphertext(poly_add(a.c0, b.c0, ring), poly_add(a.c1, b.c1, ring), a.scale_exp, a.level)


def he_plain_mul(a: Ciphertext, p: Plaintext) -> Ciphertext:
    ring = a.level.ring
    _check_plaintext(p, ring)
    lifted = _lift_plaintext(p, ring)
    return Ciphertext(
        poly_negacyclic_mul(a.c0, lifted, ring),
        poly_negacyclic_mul(a.c1, lifted, ring),
        a.scale_exp + p.scale_exp,
        a.level,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _coeff_width(ring: RingParams) -> int:
    return (ring.q.bit_length() + 7) // 8


def _pack_poly(poly: RingPoly, width: int) -> bytes:
    return b"".join(c.to_bytes(width, "little") for c in poly.coeffs)


def _unpack_poly(data: bytes, offset: int, n: int, width: int, q: int) -> RingPoly:
    coeffs = tuple(
        int.from_bytes(data[offset + i * width:offset + (i + 1) * width], "little") for i in range(n)
    )
    if any(c >= q for c in coeffs):
        raise WireFormatError("coefficient out of range for the ciphertext modulus")
    return RingPoly(coeffs)


def serialize_ciphertext(ct: Ciphertext) -> bytes:
    ring = ct.level.ring
    width = _coeff_width(ring)
    header = _CT_HEADER.pack(CIPHERTEXT_MAGIC, CIPHERTEXT_VERSION, ct.level.code, ct.scale_exp, ring.n, width)
    return header + _pack_poly(ct.c0, width) + _pack_poly(ct.c1, width)


def deserialize_ciphertext(data: bytes, level: SecurityLevel | BfvParams | None = None) -> Ciphertext:
    if len(data) < _CT_HEADER.size:
        raise WireFormatError("ciphertext shorter than its header")
    magic, version, code, scale_exp, n, width = _CT_HEADER.unpack_from(data)
    if magic != CIPHERTEXT_MAGIC:
        raise WireFormatError(f"bad ciphertext magic {magic!r}")
    if version != CIPHERTEXT_VERSION:
        raise WireFormatError(f"unsupported ciphertext version {version}")

    if level is not None:
        params = resolve_params(level)
        if code and code != params.code:
            raise WireFormatError(f"ciphertext level code {code} does not match {params.label}")
    elif code in _PARAMS_BY_CODE:
        params = _PARAMS_BY_CODE[code]
    else:
        raise WireFormatError(f"unknown level code {code}; parameters must be supplied")

    ring = params.ring
    if n != ring.n or width != _coeff_width(ring):
        raise WireFormatError(f"header (n={n}, qbytes={width}) does not match {params.label}")
    expected = _CT_HEADER.size + 2 * n * width
    if len(data) != expected:
        raise WireFormatError(f"ciphertext is {len(data)} bytes, expected {expected}")
    c0 = _unpack_poly(data, _CT_HEADER.size, n, width, ring.q)
    c1 = _unpack_poly(data, _CT_HEADER.size + n * width, n, width, ring.q)
    return Ciphertext(c0, c1, scale_exp, params)


def _write_key(path: str, kind: int, params: BfvParams, polys: list[RingPoly]):
    if params.code not in _PARAMS_BY_CODE:
        raise DomainError("only named security levels can be written to key files")
    ring = params.ring
    width = _coeff_width(ring)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(_KEY_HEADER.pack(KEY_MAGIC, kind, params.code, ring.n, width))
        for poly in polys:
            f.write(_pack_poly(poly, width))


def _read_key(path: str, kind: int, count: int) -> tuple[BfvParams, list[RingPoly]]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _KEY_HEADER.size:
        raise WireFormatError(f"{path} is too short to be a key file")
    magic, found_kind, code, n, width = _KEY_HEADER.unpack_from(data)
    if magic != KEY_MAGIC or found_kind != kind:
        raise WireFormatError(f"{path} is not the expected key file")
    params = _PARAMS_BY_CODE.get(code)
    if params is None or params.ring.n != n or width != _coeff_width(params.ring):
        raise WireFormatError(f"{path} has an unknown parameter set")
    if len(data) != _KEY_HEADER.size + count * n * width:
        raise WireFormatError(f"{path} is truncated")
    polys = [_unpack_poly(data, _KEY_HEADER.size + i * n * width, n, width, params.ring.q) for i in range(count)]
    return params, polys


def save_public_key(key: PublicKey, path: str):
    _write_key(path, _PUBLIC_KIND, key.level, [key.pk0, key.pk1])


def load_public_key(path: str) -> PublicKey:
    params, (pk0, pk1) = _read_key(path, _PUBLIC_KIND, 2)
    return PublicKey(pk0, pk1, params)


def save_secret_key(key: SecretKey, path: str):
    _write_key(path, _SECRET_KIND, key.level, [key.s])


def load_secret_key(path: str) -> SecretKey:
    params, (s,) = _read_key(path, _SECRET_KIND, 1)
    return SecretKey(s, params)


if __name__ == "__main__":
    source = RandomSource(7)
    keys = keygen(SecurityLevel.SEC192, source)
    ring = SecurityLevel.SEC192.params.ring
    message = Plaintext(RingPoly((1, 2, 3) + (0,) * (ring.n - 3)))
    ct = he_add(encrypt(message, keys.key_pub, source), encrypt(message, keys.key_pub, source))
    print("decrypted head:", decrypt(ct, keys.key_priv).poly.coeffs[:3])
    print(f"noise budget:   {noise_budget(ct, keys.key_priv):.1f} bits")
