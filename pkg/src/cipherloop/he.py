"""Additively homomorphic encryption over Z_q vectors, two backends.

Both backends expose the same three laws the control loop relies on:

* decrypt(encrypt(m)) == m
* decrypt(cipher_add(c1, c2)) == (m1 + m2) mod q
* decrypt(plain_mul(M, c)) == (M @ m) mod q   for integer M reduced into [0, q)

``paillier`` is the textbook scheme with g = n + 1, so the plaintext modulus
is the public n itself.  ``mock`` stores residues under a keyed XOR mask; the
mask gives tamper evidence only and no confidentiality, which is exactly what
its name says.  The mock backend accepts any modulus q >= 2, which is what
lets the rest of the package run the same loop at q = 2^15 or at a 256-bit
Paillier modulus without code changes.

Randomness is drawn from a ``random.Random`` owned by the parameter object
and created from the keygen seed, so a fixed seed plus a fixed call order
reproduces ciphertexts bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "HEError",
    "KeyMismatchError",
    "HEParams",
    "CipherVector",
    "keygen",
    "encrypt",
    "decrypt",
    "cipher_add",
    "plain_mul",
    "scalar_mul",
    "export_params",
    "import_params",
]


class HEError(ValueError):
    pass


class KeyMismatchError(HEError):
    """Ciphertexts from different keys (or backends) were combined."""


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode())
        h.update(b"\x00")
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class MockKey:
    q: int
    mask: int
    key_id: str


@dataclass(frozen=True)
class PaillierKey:
    n: int
    p: int
    q_prime: int
    lam: int
    mu: int
    key_id: str

    @property
    def nsquare(self) -> int:
        return self.n * self.n


@dataclass(frozen=True)
class HEParams:
    """Keys plus the public modulus; immutable after keygen.

    ``rng`` carries the deterministic obfuscation stream and is excluded from
    equality; it is the one piece of mutable state (its position advances as
    ciphertexts are produced).
    """

    backend: str
    q: int
    seed: int
    key: MockKey | PaillierKey
    rng: random.Random = field(compare=False, repr=False)

    @property
    def key_id(self) -> str:
        return self.key.key_id


@dataclass(frozen=True)
class CipherVector:
    backend: str
    key_id: str
    payload: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.payload)


def _is_probable_prime(n: int, rng: random.Random, rounds: int = 40) -> bool:
    if n < 2:
        return False
    for small in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % small == 0:
            return n == small
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if _is_probable_prime(candidate, rng):
            return candidate


def _mock_mask(seed: int, q: int) -> int:
    width = q.bit_length() + 64
    material = b""
    counter = 0
    while len(material) * 8 < width:
        material += hashlib.sha256(f"cipherloop-mock:{seed}:{q}:{counter}".encode()).digest()
        counter += 1
    return int.from_bytes(material, "big") % (1 << width)


def keygen(backend: str, *, q: int | None = None, bits: int | None = None, seed: int = 0) -> HEParams:
    """Generate parameters.

    mock: requires ``q`` >= 2, the exact plaintext modulus.
    paillier: requires ``bits`` >= 256 (modulus size); the plaintext modulus
    becomes the generated n.
    """
    rng = random.Random(f"cipherloop:{backend}:{seed}")
    if backend == "mock":
        if q is None or q < 2:
            raise HEError(f"mock backend needs a modulus q >= 2, got {q!r}")
        if bits is not None:
            raise HEError("mock backend takes q, not bits")
        mask = _mock_mask(seed, q)
        key = MockKey(q=q, mask=mask, key_id=_digest("mock", q, mask))
        return HEParams(backend="mock", q=q, seed=seed, key=key, rng=rng)
    if backend == "paillier":
        if bits is None or bits < 256:
            raise HEError(f"paillier modulus must be >= 256 bits, got {bits!r}")
        if q is not None:
            raise HEError("paillier backend takes bits, not q (plaintext modulus is n)")
        half = bits // 2
        while True:
            p = _random_prime(half, rng)
            q_prime = _random_prime(half, rng)
            if p != q_prime and (p * q_prime).bit_length() == bits:
                break
        n = p * q_prime
        lam = (p - 1) * (q_prime - 1) // math.gcd(p - 1, q_prime - 1)
        mu = pow(lam, -1, n)
        key = PaillierKey(n=n, p=p, q_prime=q_prime, lam=lam, mu=mu, key_id=_digest("paillier", n))
        return HEParams(backend="paillier", q=n, seed=seed, key=key, rng=rng)
    raise HEError(f"unknown backend {backend!r}")


def _check_reduced(values: Iterable[int], q: int, what: str) -> list[int]:
    out = []
    for v in values:
        v = int(v)
        if not 0 <= v < q:
            raise HEError(f"{what} {v} is not reduced into [0, {q})")
        out.append(v)
    return out


def encrypt(params: HEParams, values: Sequence[int], rng: random.Random | None = None) -> CipherVector:
    """Encrypt a vector of residues already reduced into [0, q)."""
    plain = _check_reduced(values, params.q, "plaintext")
    if params.backend == "mock":
        key: MockKey = params.key
        payload = tuple(v ^ key.mask for v in plain)
        return CipherVector("mock", key.key_id, payload)
    key = params.key
    n, n2 = key.n, key.nsquare
    rng = rng if rng is not None else params.rng
    payload = []
    for m in plain:
        while True:
            r = rng.randrange(1, n)
            if math.gcd(r, n) == 1:
                break
        payload.append((1 + n * m) % n2 * pow(r, n, n2) % n2)
    return CipherVector("paillier", key.key_id, tuple(payload))


def decrypt(params: HEParams, cv: CipherVector) -> tuple[int, ...]:
    _check_same_key(params.backend, params.key_id, cv)
    if params.backend == "mock":
        key: MockKey = params.key
        out = tuple(v ^ key.mask for v in cv.payload)
        if any(not 0 <= m < key.q for m in out):
            raise HEError("mock ciphertext failed the mask check (tampered or foreign)")
        return out
    key = params.key
    n, n2 = key.n, key.nsquare
    out = []
    for c in cv.payload:
        u = pow(c, key.lam, n2)
        out.append((u - 1) // n * key.mu % n)
    return tuple(out)


def _check_same_key(backend: str, key_id: str, *cvs: CipherVector):
    for cv in cvs:
        if cv.backend != backend or cv.key_id != key_id:
            raise KeyMismatchError(
                f"ciphertext under ({cv.backend}, {cv.key_id}) used with ({backend}, {key_id})"
            )


# Evaluation operations.  They need the public half of the key material, which
# this single-process simulator simply takes from HEParams; decrypt is the
# only call that uses the private half.

def cipher_add(params: HEParams, a: CipherVector, b: CipherVector) -> CipherVector:
    _check_same_key(params.backend, params.key_id, a, b)
    if len(a) != len(b):
        raise HEError(f"length mismatch: {len(a)} vs {len(b)}")
    if params.backend == "mock":
        key: MockKey = params.key
        payload = tuple(
            ((x ^ key.mask) + (y ^ key.mask)) % key.q ^ key.mask
            for x, y in zip(a.payload, b.payload)
        )
        return CipherVector("mock", key.key_id, payload)
    n2 = params.key.nsquare
    payload = tuple(x * y % n2 for x, y in zip(a.payload, b.payload))
    return CipherVector("paillier", params.key_id, payload)


def plain_mul(params: HEParams, mat: np.ndarray, cv: CipherVector) -> CipherVector:
    """Multiply a plain integer matrix (entries in [0, q)) into a cipher vector."""
    _check_same_key(params.backend, params.key_id, cv)
    rows, cols = mat.shape
    if cols != len(cv):
        raise HEError(f"matrix has {cols} columns but cipher vector has {len(cv)}")
    flat = _check_reduced((mat[i, j] for i in range(rows) for j in range(cols)),
                          params.q, "plain_mul entry")
    if params.backend == "mock":
        key: MockKey = params.key
        plain = [v ^ key.mask for v in cv.payload]
        payload = tuple(
            sum(flat[i * cols + j] * plain[j] for j in range(cols)) % key.q ^ key.mask
            for i in range(rows)
        )
        return CipherVector("mock", key.key_id, payload)
    n2 = params.key.nsquare
    payload = []
    for i in range(rows):
        acc = 1
        for j in range(cols):
            e = flat[i * cols + j]
            if e:
                acc = acc * pow(cv.payload[j], e, n2) % n2
        payload.append(acc)
    return CipherVector("paillier", params.key_id, tuple(payload))


def scalar_mul(params: HEParams, a: int, cv: CipherVector) -> CipherVector:
    """Scale every coordinate by the same reduced integer."""
    _check_same_key(params.backend, params.key_id, cv)
    (a,) = _check_reduced([a], params.q, "scalar")
    if params.backend == "mock":
        key: MockKey = params.key
        payload = tuple((a * (v ^ key.mask)) % key.q ^ key.mask for v in cv.payload)
        return CipherVector("mock", key.key_id, payload)
    n2 = params.key.nsquare
    payload = tuple(pow(c, a, n2) for c in cv.payload)
    return CipherVector("paillier", params.key_id, payload)


def export_params(params: HEParams) -> str:
    """Serialize key material to JSON with hex-encoded integers."""
    if params.backend == "mock":
        body = {
            "backend": "mock",
            "seed": params.seed,
            "q": hex(params.key.q),
            "mask": hex(params.key.mask),
        }
    else:
        body = {
            "backend": "paillier",
            "seed": params.seed,
            "p": hex(params.key.p),
            "q_prime": hex(params.key.q_prime),
        }
    return json.dumps(body, indent=2, sort_keys=True)


def import_params(text: str) -> HEParams:
    """Rebuild parameters exported by export_params.

    The obfuscation stream restarts from the stored seed, so a replay that
    makes the same calls in the same order reproduces the original run.
    """
    body = json.loads(text)
    backend = body.get("backend")
    rng = random.Random(f"cipherloop:{backend}:{body.get('seed')}")
    if backend == "mock":
        q = int(body["q"], 16)
        mask = int(body["mask"], 16)
        key = MockKey(q=q, mask=mask, key_id=_digest("mock", q, mask))
        return HEParams(backend="mock", q=q, seed=body["seed"], key=key, rng=rng)
    if backend == "paillier":
        p = int(body["p"], 16)
        q_prime = int(body["q_prime"], 16)
        n = p * q_prime
        lam = (p - 1) * (q_prime - 1) // math.gcd(p - 1, q_prime - 1)
        mu = pow(lam, -1, n)
        key = PaillierKey(n=n, p=p, q_prime=q_prime, lam=lam, mu=mu,
                          key_id=_digest("paillier", n))
        return HEParams(backend="paillier", q=n, seed=body["seed"], key=key, rng=rng)
    raise HEError(f"unknown backend {backend!r} in key file")
