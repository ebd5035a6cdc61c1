"""Exact arithmetic in R_q = Z_q[x]/(x^n + 1).

Coefficients are plain Python integers in [0, q), so q may be far wider than
a machine word. Multiplication has two paths that must agree bit for bit:

* ``schoolbook`` - the O(n^2) negacyclic convolution, used as the oracle;
* ``ntt`` - a number theoretic transform over several word-size primes
  p = k * 2^17 + 1, followed by CRT reconstruction of the exact integer
  product and a final reduction mod q. The primes only live inside the
  multiplication; polynomials are never stored in residue form.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sympy import isprime, primitive_root

from errors import DomainError, ParameterMismatchError

# Error sampler default. A centered binomial with k = round(2 * sigma^2)
# trials per side has variance k / 2.
DEFAULT_SIGMA = 3.2

_NTT_PRIME_STEP = 1 << 17
_NTT_PRIME_CEILING = 1 << 31
_NTT_PRIME_POOL_SIZE = 40
_LIMB_BITS = 32


@dataclass(frozen=True)
class RingParams:
    n: int
    q: int
    t: int

    def __post_init__(self):
        if self.n < 4 or self.n & (self.n - 1):
            raise DomainError(f"ring degree must be a power of two >= 4, got {self.n}")
        if self.n > _NTT_PRIME_STEP // 2:
            raise DomainError(f"ring degree {self.n} exceeds the supported maximum {_NTT_PRIME_STEP // 2}")
        if not 1 < self.t < self.q:
            raise DomainError(f"need 1 < t < q, got t={self.t}, q={self.q}")
        if self.q % 2 == 0:
            raise DomainError("ciphertext modulus q must be odd")

    @property
    def delta(self) -> int:
        """floor(q / t), the plaintext scaling factor used by encryption."""
        return self.q // self.t


@dataclass(frozen=True)
class RingPoly:
    coeffs: tuple[int, ...]

    def __len__(self):
        return len(self.coeffs)

    @classmethod
    def zero(cls, p: RingParams) -> "RingPoly":
        return cls((0,) * p.n)

    @classmethod
    def one(cls, p: RingParams) -> "RingPoly":
        return cls((1,) + (0,) * (p.n - 1))

    @classmethod
    def from_ints(cls, values, p: RingParams) -> "RingPoly":
        """Build a polynomial from arbitrary (possibly negative) integers, reduced mod q."""
        values = [int(v) for v in values]
        if len(values) != p.n:
            raise ParameterMismatchError(f"expected {p.n} coefficients, got {len(values)}")
        return cls(tuple(v % p.q for v in values))

    def centered(self, modulus: int) -> list[int]:
        return [centered_lift(c, modulus) for c in self.coeffs]


class RandomSource:
    """Seeded, single-owner stream of randomness.

    Identical seeds give identical sample sequences. A source must not be
    shared between threads; use :meth:`spawn` to hand each worker its own.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, label: str) -> "RandomSource":
        return RandomSource(derive_seed(self.seed, label))

    def __repr__(self):
        return f"RandomSource(seed={self.seed})"


def derive_seed(seed: int, label: str) -> int:
    """Stable 64-bit child seed from a parent seed and a text label."""
    digest = hashlib.blake2b(f"{int(seed)}|{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def centered_lift(value: int, modulus: int) -> int:
    """Map a residue in [0, modulus) to (-modulus/2, modulus/2]."""
    value %= modulus
    return value - modulus if value > modulus // 2 else value


def _check_operands(p: RingParams, *polys: RingPoly):
    for poly in polys:
        if len(poly.coeffs) != p.n:
            raise ParameterMismatchError(
                f"polynomial has {len(poly.coeffs)} coefficients but the ring degree is {p.n}"
            )


def poly_add(a: RingPoly, b: RingPoly, p: RingParams) -> RingPoly:
    _check_operands(p, a, b)
    q = p.q
    return RingPoly(tuple((x + y) % q for x, y in zip(a.coeffs, b.coeffs)))


def poly_neg(a: RingPoly, p: RingParams) -> RingPoly:
    _check_operands(p, a)
    q = p.q
    return RingPoly(tuple((-x) % q for x in a.coeffs))


def poly_scalar_mul(a: RingPoly, k: int, p: RingParams) -> RingPoly:
    _check_operands(p, a)
    q = p.q
    k %= q
    return RingPoly(tuple(x * k % q for x in a.coeffs))


def poly_negacyclic_mul(a: RingPoly, b: RingPoly, p: RingParams, method: str = "ntt") -> RingPoly:
    """a * b mod (x^n + 1, q)."""
    _check_operands(p, a, b)
    if method == "ntt":
        return RingPoly(_ntt_negacyclic(a.coeffs, b.coeffs, p.n, p.q))
    if method == "schoolbook":
        return RingPoly(_schoolbook_negacyclic(a.coeffs, b.coeffs, p.n, p.q))
    raise DomainError(f"unknown multiplication method '{method}'")


def _schoolbook_negacyclic(a, b, n: int, q: int) -> tuple[int, ...]:
    acc = [0] * n
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j, bj in enumerate(b):
            k = i + j
            if k < n:
                acc[k] += ai * bj
            else:
                acc[k - n] -= ai * bj  # x^n = -1
    return tuple(c % q for c in acc)


# ---------------------------------------------------------------------------
# NTT fast path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _NttPlan:
    n: int
    q: int
    primes: np.ndarray          # (k,) uint64
    product: int
    twist: np.ndarray           # (k, n) psi^i
    untwist: np.ndarray         # (k, n) psi^-i * n^-1
    forward_stages: tuple       # per stage (k, m/2) twiddles
    inverse_stages: tuple
    bitrev: np.ndarray
    limb_count: int
    limb_base: np.ndarray       # (k, 1) 2^32 mod p
    garner_inv: tuple           # garner_inv[j][i] = p_i^-1 mod p_j, i < j


@lru_cache(maxsize=1)
def _ntt_prime_pool() -> tuple[int, ...]:
    """Primes p = k * 2^17 + 1 below 2^31, largest first."""
    primes = []
    k = (_NTT_PRIME_CEILING - 1) // _NTT_PRIME_STEP
    while len(primes) < _NTT_PRIME_POOL_SIZE and k > 0:
        candidate = k * _NTT_PRIME_STEP + 1
        if isprime(candidate):
            primes.append(candidate)
        k -= 1
    return tuple(primes)


def _powers(base: int, count: int, prime: int) -> list[int]:
    out = [1] * count
    for i in range(1, count):
        out[i] = out[i - 1] * base % prime
    return out


def _bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    return np.array([int(format(i, f"0{bits}b")[::-1], 2) for i in range(n)], dtype=np.int64)


@lru_cache(maxsize=None)
def _ntt_plan(n: int, q: int) -> _NttPlan:
    # The exact negacyclic product lies in (-n q^2, n q^2); the CRT modulus
    # must cover that whole interval.
    bound = 2 * n * (q - 1) ** 2 + 1
    primes: list[int] = []
    product = 1
    for prime in _ntt_prime_pool():
        primes.append(prime)
        product *= prime
        if product > bound:
            break
    else:
        raise DomainError(f"q of {q.bit_length()} bits is too wide for the NTT prime pool")

    twist, untwist = [], []
    forward_stages = [[] for _ in range(n.bit_length() - 1)]
    inverse_stages = [[] for _ in range(n.bit_length() - 1)]
    for prime in primes:
        psi = pow(primitive_root(prime), (prime - 1) // (2 * n), prime)
        psi_inv = pow(psi, -1, prime)
        omega = psi * psi % prime
        omega_inv = pow(omega, -1, prime)
        n_inv = pow(n, -1, prime)
        twist.append(_powers(psi, n, prime))
        untwist.append([w * n_inv % prime for w in _powers(psi_inv, n, prime)])
        m, stage = 2, 0
        while m <= n:
            forward_stages[stage].append(_powers(pow(omega, n // m, prime), m // 2, prime))
            inverse_stages[stage].append(_powers(pow(omega_inv, n // m, prime), m // 2, prime))
            m *= 2
            stage += 1

    garner_inv = tuple(
        tuple(np.uint64(pow(primes[i], -1, primes[j])) for i in range(j)) for j in range(len(primes))
    )
    prime_array = np.array(primes, dtype=np.uint64)
    return _NttPlan(
        n=n,
        q=q,
        primes=prime_array,
        product=product,
        twist=np.array(twist, dtype=np.uint64),
        untwist=np.array(untwist, dtype=np.uint64),
        forward_stages=tuple(np.array(s, dtype=np.uint64) for s in forward_stages),
        inverse_stages=tuple(np.array(s, dtype=np.uint64) for s in inverse_stages),
        bitrev=_bit_reverse_permutation(n),
        limb_count=max(1, -(-q.bit_length() // _LIMB_BITS)),
        limb_base=np.array([[(1 << _LIMB_BITS) % p] for p in primes], dtype=np.uint64),
        garner_inv=garner_inv,
    )


def _to_residues(coeffs, plan: _NttPlan) -> np.ndarray:
    """(k, n) array of each coefficient reduced mod every NTT prime."""
    width = plan.limb_count * (_LIMB_BITS // 8)
    raw = b"".join(c.to_bytes(width, "little") for c in coeffs)
    limbs = np.frombuffer(raw, dtype="<u4").reshape(plan.n, plan.limb_count).astype(np.uint64)
    primes = plan.primes[:, None]
    residues = np.zeros((len(plan.primes), plan.n), dtype=np.uint64)
    for limb in range(plan.limb_count - 1, -1, -1):
        residues = (residues * plan.limb_base + limbs[:, limb][None, :]) % primes
    return residues


def _transform(x: np.ndarray, stages, plan: _NttPlan) -> np.ndarray:
    """Iterative radix-2 cyclic NTT on every row of x, natural order in and out."""
    k, n = x.shape
    primes = plan.primes[:, None, None]
    x = x[:, plan.bitrev]
    m = 2
    for twiddles in stages:
        half = m // 2
        blocks = x.reshape(k, n // m, m)
        u = blocks[:, :, :half]
        v = blocks[:, :, half:] * twiddles[:, None, :] % primes
        x = np.concatenate(((u + v) % primes, (u + primes - v) % primes), axis=2).reshape(k, n)
        m *= 2
    return x


def _from_residues(residues: np.ndarray, plan: _NttPlan) -> tuple[int, ...]:
    """Garner CRT back to the signed integer product, then reduce mod q."""
    primes = plan.primes
    digits = []
    for j in range(len(primes)):
        pj = primes[j]
        acc = residues[j]
        for i in range(j):
            acc = (acc + pj - digits[i] % pj) % pj
            acc = acc * plan.garner_inv[j][i] % pj
        digits.append(acc)

    value = digits[-1].astype(object)
    for j in range(len(primes) - 2, -1, -1):
        value = value * int(primes[j]) + digits[j].astype(object)

    half = plan.product // 2
    q = plan.q
    return tuple((v - plan.product if v > half else v) % q for v in value.tolist())


def _ntt_negacyclic(a, b, n: int, q: int) -> tuple[int, ...]:
    plan = _ntt_plan(n, q)
    primes = plan.primes[:, None]
    fa = _transform(_to_residues(a, plan) * plan.twist % primes, plan.forward_stages, plan)
    fb = _transform(_to_residues(b, plan) * plan.twist % primes, plan.forward_stages, plan)
    product = _transform(fa * fb % primes, plan.inverse_stages, plan)
    return _from_residues(product * plan.untwist % primes, plan)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def sample_uniform(p: RingParams, r: RandomSource) -> RingPoly:
    """Each coefficient i.i.d. uniform in [0, q), by masked rejection sampling."""
    bits = (p.q - 1).bit_length()
    limbs = max(1, -(-bits // _LIMB_BITS))
    top_mask = np.uint64((1 << (bits - _LIMB_BITS * (limbs - 1))) - 1)
    width = limbs * (_LIMB_BITS // 8)
    out: list[int] = []
    while len(out) < p.n:
        need = p.n - len(out)
        words = r.stream.integers(0, 1 << _LIMB_BITS, size=(need, limbs), dtype=np.uint64)
        words[:, -1] &= top_mask
        raw = words.astype("<u4").tobytes()
        for i in range(need):
            value = int.from_bytes(raw[i * width:(i + 1) * width], "little")
            if value < p.q:
                out.append(value)
    return RingPoly(tuple(out))


def sample_ternary(p: RingParams, r: RandomSource) -> RingPoly:
    """Coefficients uniform over {-1, 0, 1}, stored as {q-1, 0, 1}."""
    draws = r.stream.integers(-1, 2, size=p.n)
    return RingPoly.from_ints(draws.tolist(), p)


def sample_error(p: RingParams, sigma: float, r: RandomSource) -> RingPoly:
    """Centered binomial error with standard deviation close to sigma."""
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    trials = max(1, round(2 * sigma * sigma))
    draws = r.stream.binomial(trials, 0.5, size=p.n) - r.stream.binomial(trials, 0.5, size=p.n)
    return RingPoly.from_ints(draws.tolist(), p)


if __name__ == "__main__":
    params = RingParams(n=8, q=97, t=7)
    source = RandomSource(42)
    a = sample_uniform(params, source)
    b = sample_uniform(params, source)
    print("a     =", a.coeffs)
    print("b     =", b.coeffs)
    print("a*b   =", poly_negacyclic_mul(a, b, params).coeffs)
    print("check =", poly_negacyclic_mul(a, b, params, method="schoolbook").coeffs)
