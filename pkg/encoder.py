"""Fixed-point encoding of real weight vectors into plaintext polynomials.

A value x becomes round(2^f * x) mod t, packed n values per plaintext. The
scale exponent on a plaintext counts how many scale factors are baked into
it: 1 after encoding, 2 after the server multiplies an encoded sum by
encode(1/c). Decoding divides by 2^f per factor after a centered lift. On
the server-division path the second factor is the exact product
c * round(2^f / c) rather than 2^f, so the rounding of 1/c cancels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bfv import Plaintext
from errors import DomainError, EncodingRangeError, ScaleMismatchError, ShapeError
from ring import RingParams, RingPoly, centered_lift

SERVER_DIVISION = "server"
CLIENT_DIVISION = "client"
DIVISION_MODES = (SERVER_DIVISION, CLIENT_DIVISION)

DEFAULT_FRAC_BITS = {SERVER_DIVISION: 8, CLIENT_DIVISION: 16}


@dataclass(frozen=True)
class EncodingConfig:
    frac_bits: int
    t: int
    n: int
    # largest integer factor the encoded values are multiplied by before
    # decryption (client count, times encode(1/c) on the server-division path)
    chain: int = 1
    # server-division only: the integer encode(1/c) and the c it divides by
    reciprocal: int = 0
    clients: int = 1

    def __post_init__(self):
        if self.frac_bits < 1:
            raise DomainError(f"frac_bits must be positive, got {self.frac_bits}")
        if self.chain < 1:
            raise DomainError(f"chain must be at least 1, got {self.chain}")
        if self.reciprocal < 0 or self.clients < 1:
            raise DomainError(f"bad reciprocal {self.reciprocal} for {self.clients} clients")

    @property
    def delta(self) -> int:
        return 1 << self.frac_bits

    @property
    def mean_scale(self) -> int:
        """Factor a scale-2 plaintext carries beyond the first 2^f."""
        return self.reciprocal * self.clients if self.reciprocal else self.delta

    def scale_divisor(self, scale_exp: int) -> int:
        if scale_exp < 1:
            return 1
        return self.delta * self.mean_scale ** (scale_exp - 1)

    @property
    def max_abs_value(self) -> float:
        """Largest |x| that survives the multiplier chain without wrapping mod t."""
        return (self.t // 2 - 1) / (self.delta * self.chain)

    @classmethod
    def for_run(cls, ring: RingParams, clients: int, division: str = SERVER_DIVISION,
                frac_bits: int | None = None) -> "EncodingConfig":
        if division not in DIVISION_MODES:
            raise DomainError(f"division must be one of {DIVISION_MODES}, got '{division}'")
        f = DEFAULT_FRAC_BITS[division] if frac_bits is None else frac_bits
        if f < 1:
            raise DomainError(f"frac_bits must be positive, got {f}")
        if division == SERVER_DIVISION:
            k = _round_half_away((1 << f) / clients)
            if k < 1:
                raise DomainError(f"frac_bits={f} cannot represent 1/{clients}")
            return cls(frac_bits=f, t=ring.t, n=ring.n, chain=clients * k, reciprocal=k, clients=clients)
        return cls(frac_bits=f, t=ring.t, n=ring.n, chain=clients)


@dataclass
class WeightVector:
    values: np.ndarray
    layer_shape: tuple = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not self.layer_shape:
            self.layer_shape = (self.values.size,)
        if not np.all(np.isfinite(self.values)):
            raise DomainError("weight vector contains NaN or infinite values")

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    shape: tuple
    offset: int
    count: int

    def chunk_indices(self, slots: int) -> range:
        if self.count == 0:
            return range(0)
        return range(self.offset // slots, (self.offset + self.count - 1) // slots + 1)


@dataclass(frozen=True)
class WeightManifest:
    """Cleartext description of how a flattened model maps onto chunks."""
    entries: tuple = field(default_factory=tuple)

    @property
    def total(self) -> int:
        return sum(entry.count for entry in self.entries)

    def chunk_count(self, slots: int) -> int:
        return -(-self.total // slots)


def _round_half_away(x: float) -> int:
    return int(np.sign(x) * np.floor(abs(x) + 0.5))


def _check_headroom(worst: int, cfg: EncodingConfig):
    if 2 * worst * cfg.chain >= cfg.t:
        raise EncodingRangeError(
            f"encoded magnitude {worst} x chain {cfg.chain} wraps mod t={cfg.t}; "
            f"values must stay within +/-{cfg.max_abs_value:.4f}"
        )


def encode_fractional(v: WeightVector, cfg: EncodingConfig) -> list[Plaintext]:
    values = np.asarray(v.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DomainError("cannot encode NaN or infinite values")
    scaled = [int(x) for x in np.rint(values * cfg.delta)]
    _check_headroom(max((abs(x) for x in scaled), default=0), cfg)

    chunks = []
    for start in range(0, len(scaled), cfg.n):
        part = [x % cfg.t for x in scaled[start:start + cfg.n]]
        part.extend([0] * (cfg.n - len(part)))
        chunks.append(Plaintext(RingPoly(tuple(part)), scale_exp=1))
    return chunks


def encode_scalar(x: float, cfg: EncodingConfig) -> Plaintext:
    """Constant plaintext round(2^f * x) at scale 1."""
    if not np.isfinite(x):
        raise DomainError("cannot encode NaN or infinite values")
    k = _round_half_away(x * cfg.delta)
    if 2 * abs(k) >= cfg.t:
        raise EncodingRangeError(f"scalar {x} does not fit the plaintext modulus")
    return Plaintext(RingPoly((k % cfg.t,) + (0,) * (cfg.n - 1)), scale_exp=1)


def encode_reciprocal(cfg: EncodingConfig) -> Plaintext:
    """encode(1/c) for the server-division multiply; decodes exactly against mean_scale."""
    if not cfg.reciprocal:
        raise DomainError("encoding has no server-side reciprocal")
    return encode_scalar(1.0 / cfg.clients, cfg)


def decode_fractional(p: list[Plaintext], count: int, cfg: EncodingConfig) -> WeightVector:
    if count > len(p) * cfg.n:
        raise ShapeError(f"{count} values requested from {len(p)} chunks of {cfg.n} slots")
    scales = {chunk.scale_exp for chunk in p}
    if len(scales) > 1:
        raise ScaleMismatchError(f"chunks carry mixed scale exponents {sorted(scales)}")
    scale_exp = scales.pop() if scales else 1

    lifted = [centered_lift(c, cfg.t) for chunk in p for c in chunk.poly.coeffs[:cfg.n]][:count]
    return WeightVector(np.array(lifted, dtype=np.float64) / float(cfg.scale_divisor(scale_exp)))
