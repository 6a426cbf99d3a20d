"""Discrete Gaussian sampling over Z, Z^m and lattice cosets.

Randomness comes from :class:`RandomSource`, a SHAKE256 stream keyed by a
32-byte seed, so every sampler is reproducible byte for byte. The Gaussian
parameter ``s`` follows the convention rho_s(x) = exp(-pi x^2 / s^2), i.e. the
standard deviation is about s / sqrt(2 pi).
"""

from __future__ import annotations

import hashlib
import math
import secrets
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import log_ndtr, ndtri

from . import zq
from .errors import DegenerateBasis, WidthTooSmall

TAIL = 12.0
TABLE_MAX_S = 16.0
RNG_TAG = 0x03
_BLOCK = 4096


class XofStream:
    """Byte stream: block i is SHAKE256(tag | key | i as u64 LE), 4096 bytes each."""

    def __init__(self, tag: int, key: bytes):
        self._prefix = bytes([tag]) + bytes(key)
        self._counter = 0
        self._buf = b""
        self._pos = 0

    def read(self, n: int) -> bytes:
        out = []
        need = n
        while need:
            if self._pos == len(self._buf):
                block = hashlib.shake_256(self._prefix + self._counter.to_bytes(8, "little")).digest(_BLOCK)
                self._counter += 1
                self._buf, self._pos = block, 0
            take = min(need, len(self._buf) - self._pos)
            out.append(self._buf[self._pos:self._pos + take])
            self._pos += take
            need -= take
        return b"".join(out)

    def randbelow(self, bound: int) -> int:
        """Uniform integer in [0, bound) by masked rejection."""
        if bound <= 1:
            return 0
        bits = (bound - 1).bit_length()
        nbytes = (bits + 7) // 8
        mask = (1 << bits) - 1
        while True:
            v = int.from_bytes(self.read(nbytes), "little") & mask
            if v < bound:
                return v


class RandomSource(XofStream):
    """Deterministic random source; ``RandomSource()`` seeds from OS entropy."""

    def __init__(self, seed: bytes | None = None):
        if seed is None:
            seed = secrets.token_bytes(32)
        seed = bytes(seed)
        if len(seed) != 32:
            raise ValueError("seed must be exactly 32 bytes")
        self.seed = seed
        super().__init__(RNG_TAG, seed)

    @classmethod
    def from_hex(cls, text: str) -> "RandomSource":
        return cls(bytes.fromhex(text))

    def fork(self, label: bytes | str | int) -> "RandomSource":
        """Independent child stream, a pure function of (seed, label)."""
        if isinstance(label, int):
            label = label.to_bytes(8, "little")
        elif isinstance(label, str):
            label = label.encode()
        return RandomSource(hashlib.shake_256(b"fork" + self.seed + label).digest(32))

    def random(self, size=None):
        """Uniform doubles in the open interval (0, 1)."""
        count = 1 if size is None else int(np.prod(size))
        words = np.frombuffer(self.read(8 * count), dtype="<u8") >> np.uint64(11)
        u = (words.astype(np.float64) + 0.5) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def integers(self, bound: int, size) -> np.ndarray:
        """Uniform int64 array over [0, bound)."""
        bound = int(bound)
        if not 1 <= bound <= 2**62:
            raise ValueError("bound out of range")
        count = int(np.prod(size))
        bits = max((bound - 1).bit_length(), 1)
        mask = np.uint64((1 << bits) - 1)
        out = np.empty(count, dtype=np.int64)
        pending = np.arange(count)
        while pending.size:
            w = np.frombuffer(self.read(8 * pending.size), dtype="<u8") & mask
            ok = w < np.uint64(bound)
            out[pending[ok]] = w[ok].astype(np.int64)
            pending = pending[~ok]
        return out.reshape(size)

    def bits(self, nbits: int) -> bytes:
        """nbits uniform bits packed LE into ceil(nbits/8) bytes, padding zeroed."""
        raw = bytearray(self.read((nbits + 7) // 8))
        if nbits % 8:
            raw[-1] &= (1 << (nbits % 8)) - 1
        return bytes(raw)


def eta_slack(dim: int) -> int:
    """Concrete stand-in for the omega(sqrt(log n)) smoothing factor."""
    return math.ceil(math.sqrt(math.log2(max(dim, 2)))) + 2


# ---------------------------------------------------------------------------
# Integer sampler


def _sample_table(s: np.ndarray, c: np.ndarray, rng: RandomSource) -> np.ndarray:
    """Inverse-CDF over the truncated support |x - c| <= 12 s."""
    out = np.empty(c.shape, dtype=np.int64)
    lo = np.ceil(c - TAIL * s).astype(np.int64)
    hi = np.floor(c + TAIL * s).astype(np.int64)
    width = int((hi - lo).max()) + 1
    step = max(1, (1 << 22) // width)
    u = rng.random(c.shape) if c.size else np.empty(0)
    for a in range(0, c.size, step):
        sl = slice(a, a + step)
        grid = lo[sl, None] + np.arange(width)[None, :]
        logw = -math.pi * ((grid - c[sl, None]) / s[sl, None]) ** 2
        logw[grid > hi[sl, None]] = -np.inf
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        cdf = np.cumsum(w, axis=1)
        target = u[sl] * cdf[:, -1]
        idx = (cdf < target[:, None]).sum(axis=1)
        out[sl] = lo[sl] + np.minimum(idx, width - 1)
    return out


def _log_interval_mass(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log(Phi(b) - Phi(a)) for a < b, stable in both tails.

    Intervals right of zero are reflected to the left so the difference is
    always taken between the two smaller CDF values.
    """
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    la = log_ndtr(lo)
    lb = log_ndtr(hi)
    return lb + np.log1p(-np.exp(la - lb))


def _sample_rounded(s: np.ndarray, c: np.ndarray, rng: RandomSource) -> np.ndarray:
    """Rounded continuous Gaussian proposal with an exact rejection correction.

    Proposal g(x) = P(round(Y) = x), Y ~ N(c, s^2 / 2pi), and f(x) = rho_s(x - c) / s
    is the density of Y at x. Jensen over the rounding cell gives
    g(x) >= f(x) exp(-1 / (24 sigma^2)), so accepting with probability
    f / (M g), M = exp(1 / (24 sigma^2)), yields D_{Z,s,c} under the 12 s cut.
    """
    sigma = s / math.sqrt(2 * math.pi)
    log_m = 1.0 / (24.0 * sigma**2) + 1e-12
    out = np.empty(c.shape, dtype=np.int64)
    pending = np.arange(c.size)
    while pending.size:
        cp, sp, sg = c[pending], s[pending], sigma[pending]
        u = rng.random((2, pending.size))
        y = cp + sg * ndtri(u[0])
        x = np.floor(y + 0.5)
        dx = x - cp
        log_target = -math.pi * (dx / sp) ** 2 - np.log(sp)
        log_g = _log_interval_mass((dx - 0.5) / sg, (dx + 0.5) / sg)
        ok = (np.log(u[1]) < log_target - log_g - log_m[pending]) & (np.abs(dx) <= TAIL * sp)
        out[pending[ok]] = x[ok].astype(np.int64)
        pending = pending[~ok]
    return out


def _sample_flat(s: np.ndarray, c: np.ndarray, rng: RandomSource) -> np.ndarray:
    if s.size and s.min() >= TABLE_MAX_S:
        return _sample_rounded(s, c, rng)
    out = np.empty(s.size, dtype=np.int64)
    small = s < TABLE_MAX_S
    if small.any():
        out[small] = _sample_table(s[small], c[small], rng)
    if not small.all():
        out[~small] = _sample_rounded(s[~small], c[~small], rng)
    return out


def sample_z_array(s, c, rng: RandomSource) -> np.ndarray:
    """Vectorised D_{Z,s,c}: independent draws for broadcast arrays s and c."""
    s_arr, c_arr = np.broadcast_arrays(np.asarray(s, dtype=np.float64), np.asarray(c, dtype=np.float64))
    shape = s_arr.shape
    s_arr = np.ascontiguousarray(s_arr).ravel()
    c_arr = np.ascontiguousarray(c_arr).ravel()
    if np.any(s_arr < 1):
        raise WidthTooSmall("Gaussian width must be >= 1")
    return _sample_flat(s_arr, c_arr, rng).reshape(shape)


def sample_z(s: float, c: float, rng: RandomSource) -> int:
    """One draw from D_{Z,s,c}; always within 12 s of c."""
    return int(sample_z_array(s, c, rng).reshape(-1)[0])


def sample_zm(s: float, m: int, rng: RandomSource) -> np.ndarray:
    """m independent draws from D_{Z,s,0}."""
    if m < 1:
        raise ValueError("dimension must be positive")
    return sample_z_array(np.full(m, float(s)), np.zeros(m), rng)


def discrete_gaussian_pmf(s: float, c: float = 0.0, support=None) -> tuple[np.ndarray, np.ndarray]:
    """Exact (float) pmf of D_{Z,s,c} on the 12 s tail-cut support, by direct summation."""
    if support is None:
        support = np.arange(math.ceil(c - TAIL * s), math.floor(c + TAIL * s) + 1)
    support = np.asarray(support)
    w = np.exp(-math.pi * ((support - c) / s) ** 2)
    return support, w / w.sum()


# ---------------------------------------------------------------------------
# Rejection sampling


def accept_ratio(z, v, s: float, M: float) -> float:
    """min(1, D_s(z) / (M D_{s,v}(z))) = min(1, exp(pi (|v|^2 - 2<z,v>) / s^2) / M)."""
    num = zq.sq_norm(v) - 2 * zq.inner(z, v)
    exponent = math.pi * float(Fraction(num) / Fraction(s) ** 2)
    log_ratio = exponent - math.log(M)
    if log_ratio >= 0:
        return 1.0
    return math.exp(log_ratio)


def rejection_step(z, v, s: float, M: float, rng: RandomSource) -> bool:
    """Bernoulli(accept_ratio) from a single uniform draw; True means accept."""
    return rng.random() < accept_ratio(z, v, s, M)


# ---------------------------------------------------------------------------
# Lattice sampler (randomised nearest plane)


@dataclass
class PreparedBasis:
    """A lattice basis together with its floating-point Gram-Schmidt data."""

    basis: np.ndarray
    q_mat: np.ndarray
    r_diag: np.ndarray
    coeffs: np.ndarray

    @classmethod
    def of(cls, T) -> "PreparedBasis":
        if isinstance(T, PreparedBasis):
            return T
        T = zq.as_int_array(T)
        Q, R = zq.gso(T)
        d = np.diag(R).copy()
        return cls(T, Q, d, R / d[:, None])

    @property
    def gs_norms(self) -> np.ndarray:
        return np.abs(self.r_diag)

    @property
    def gs_norm(self) -> float:
        return float(np.abs(self.r_diag).max())

    @property
    def dim(self) -> int:
        return self.basis.shape[0]


def nearest_plane_coeffs(pb: PreparedBasis, s: float, centers: np.ndarray, rng: RandomSource) -> np.ndarray:
    """Integer coefficient vectors (dim x N) for N independent lattice samples.

    Column j is distributed as the coordinates of D_{L(T), s, centers[:, j]}.
    """
    centers = np.asarray(centers, dtype=np.float64)
    dim = pb.dim
    d = (pb.q_mat.T @ centers) / pb.r_diag[:, None]
    widths = s / np.abs(pb.r_diag)
    z = np.empty(d.shape, dtype=np.int64)
    U = pb.coeffs
    if widths.min() < 1:
        raise WidthTooSmall("Gaussian width below 1 on some Gram-Schmidt direction")
    count = d.shape[1]
    for i in range(dim - 1, -1, -1):
        zi = _sample_flat(np.full(count, widths[i]), d[i], rng)
        z[i] = zi
        if i:
            d[:i] -= U[:i, i, None] * zi[None, :]
    return z


def sample_d(T, s: float, c, rng: RandomSource, size: int | None = None) -> np.ndarray:
    """Sample from (a distribution close to) D_{L(T), s, c}.

    Returns one lattice vector, or ``size`` vectors stacked as rows.
    """
    pb = PreparedBasis.of(T)
    if s < pb.gs_norm:
        raise WidthTooSmall(f"s = {s} is below the Gram-Schmidt norm {pb.gs_norm:.3f}")
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if c.size != pb.dim:
        raise DegenerateBasis("center has the wrong dimension")
    count = 1 if size is None else int(size)
    coeffs = nearest_plane_coeffs(pb, s, np.repeat(c[:, None], count, axis=1), rng)
    v = zq.int_matmul(pb.basis, coeffs)
    return v[:, 0] if size is None else v.T
