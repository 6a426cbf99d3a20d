"""Trapdoor generation, basis extension, and preimage sampling.

A trapdoor for A (n x m over Z_q) is a short basis T of the lattice
{e in Z^m : A e = 0 mod q}. Generation uses the gadget matrix G = I_n (x) g
with g = (1, 2, ..., 2^(k-1)), 2^k > q.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import zq
from .errors import FormatError, InvalidTrapdoor, ParamError, WidthTooSmall
from .gaussian import PreparedBasis, RandomSource, eta_slack, nearest_plane_coeffs


@dataclass(frozen=True, eq=False)
class TrapdoorPair:
    A: np.ndarray
    T: np.ndarray
    q: int
    gs_norm: float

    @classmethod
    def checked(cls, A, T, q: int) -> "TrapdoorPair":
        if not zq.is_basis_of_lambda_perp(A, T, q):
            raise InvalidTrapdoor("T is not a basis of the q-ary lattice of A")
        return cls(zq.as_int_array(A), zq.as_int_array(T), q, zq.gs_norm(T))


def gadget_width(q: int) -> int:
    return (q - 1).bit_length()


def gadget_basis(q: int) -> np.ndarray:
    """Basis S_k of the kernel lattice of g = (1, 2, ..., 2^(k-1)) mod q.

    Column i < k-1 is 2 e_i - e_(i+1); the last column holds the bits of q.
    """
    k = gadget_width(q)
    S = np.zeros((k, k), dtype=np.int64)
    for i in range(k - 1):
        S[i, i] = 2
        S[i + 1, i] = -1
    S[:, k - 1] = [(q >> i) & 1 for i in range(k)]
    return S


def min_width(n: int, q: int) -> int:
    """Smallest m accepted by trap_gen: 6 n floor(log2 q), and room for the gadget."""
    k = gadget_width(q)
    return max(6 * n * int(math.floor(math.log2(q))), 2 * n * k)


def trap_gen(n: int, q: int, m: int, rng: RandomSource) -> TrapdoorPair:
    """Near-uniform A in Z_q^(n x m) together with a short basis of its kernel lattice.

    A = [Abar | G - Abar R] with Abar uniform and R uniform ternary. The basis is
    [[R S, I + R W], [S, W]] where G W = -Abar (bit decomposition) and S = I_n (x) S_k.
    Putting the gadget columns first roughly halves the Gram-Schmidt norm.
    """
    q = zq.check_modulus(q)
    if n < 1:
        raise ParamError("n must be positive")
    if m < min_width(n, q):
        raise ParamError(f"m = {m} is below the minimum {min_width(n, q)} for n={n}, q={q}")
    k = gadget_width(q)
    w = n * k
    mbar = m - w
    Abar = rng.integers(q, (n, mbar))
    R = rng.integers(3, (mbar, w)) - 1
    g = 1 << np.arange(k, dtype=np.int64)
    G = np.kron(np.eye(n, dtype=np.int64), g[None, :])
    A = np.concatenate([Abar, zq.mod(G - zq.mat_mul_mod(Abar, zq.mod(R, q), q), q)], axis=1)
    neg = (-Abar) % q
    W = ((neg[:, None, :] >> np.arange(k)[None, :, None]) & 1).reshape(w, mbar)
    S = np.kron(np.eye(n, dtype=np.int64), gadget_basis(q))
    top = np.concatenate([R @ S, np.eye(mbar, dtype=np.int64) + R @ W], axis=1)
    bottom = np.concatenate([S, W], axis=1)
    T = np.concatenate([top, bottom], axis=0)
    return TrapdoorPair.checked(A, T, q)


def ext_basis(A_full, span: tuple[int, int], T2, q: int, check_input: bool = True) -> np.ndarray:
    """Extend a trapdoor of the block A_full[:, offset:offset+width] to all of A_full.

    The result has the same Gram-Schmidt norm as T2 (or 1, if T2's is smaller).
    """
    A_full = zq.mod(A_full, q)
    n, m = A_full.shape
    off, width = span
    if off < 0 or width < 1 or off + width > m:
        raise InvalidTrapdoor(f"span {span} out of range for {m} columns")
    A2 = A_full[:, off:off + width]
    if check_input and not zq.is_basis_of_lambda_perp(A2, T2, q):
        raise InvalidTrapdoor("T2 is not a basis for the selected block")
    T2 = zq.as_int_array(T2)
    if width == m:
        return T2
    order = np.concatenate([np.arange(off, off + width), np.arange(0, off), np.arange(off + width, m)])
    rest = A_full[:, order[width:]]
    W = zq.solve_particular(A2, zq.mod(-rest, q), q)
    r = m - width
    Tp = np.block([[T2, W], [np.zeros((r, width), dtype=np.int64), np.eye(r, dtype=np.int64)]])
    inverse = np.empty(m, dtype=np.int64)
    inverse[order] = np.arange(m)
    return zq.permute_rows(Tp, inverse)


def _width_check(pb: PreparedBasis, s: float):
    need = pb.gs_norm * eta_slack(pb.dim)
    if s < need:
        raise WidthTooSmall(f"s = {s:.3f} below required {need:.3f}")


def sample_isis(A, T, s: float, u, rng: RandomSource, q: int) -> np.ndarray:
    """Short e with A e = u (mod q), distributed close to the discrete Gaussian on that coset."""
    return sample_key(A, T, s, np.asarray(u).reshape(-1, 1), rng, q, retry_long=False)[:, 0]


def sample_key(A, T, s: float, K, rng: RandomSource, q: int, retry_long: bool = True) -> np.ndarray:
    """S with A S = K (mod q) and every column of length at most s sqrt(m).

    Columns that exceed the bound are redrawn individually.
    """
    pb = PreparedBasis.of(T)
    _width_check(pb, s)
    K = zq.as_int_array(K)
    t = zq.solve_particular(A, zq.mod(K, q), q)
    m = pb.dim
    bound = s * s * m
    out = np.empty(t.shape, dtype=np.int64)
    pending = np.arange(t.shape[1])
    while pending.size:
        tp = t[:, pending]
        coeffs = nearest_plane_coeffs(pb, s, -tp.astype(np.float64), rng)
        e = zq.as_int_array(tp + zq.int_matmul(pb.basis, coeffs))
        out[:, pending] = e
        if not retry_long:
            break
        norms = (e.astype(np.float64) ** 2).sum(axis=0)
        pending = pending[norms > bound]
    return out


def in_dom(e, s: float) -> bool:
    e = zq.as_int_array(e).ravel()
    return zq.sq_norm(e) <= s * s * e.size


# FSTD file: magic | q u64 LE | A block | T block | gs_norm f64 LE

TRAPDOOR_MAGIC = b"FSTD"


def encode_trapdoor(pair: TrapdoorPair) -> bytes:
    q_bytes = struct.pack("<Q", pair.q)
    return TRAPDOOR_MAGIC + q_bytes + zq.encode_matrix(pair.A) + zq.encode_matrix(pair.T) + struct.pack("<d", pair.gs_norm)


def decode_trapdoor(buf: bytes) -> TrapdoorPair:
    if buf[:4] != TRAPDOOR_MAGIC or len(buf) < 12:
        raise FormatError("not a trapdoor file")
    (q,) = struct.unpack_from("<Q", buf, 4)
    A, off = zq.decode_matrix(buf, 12)
    T, off = zq.decode_matrix(buf, off)
    if len(buf) != off + 8:
        raise FormatError("bad trapdoor trailer")
    try:
        q = zq.check_modulus(q)
        return TrapdoorPair.checked(A, T, q)
    except (ParamError, InvalidTrapdoor) as exc:
        raise FormatError(str(exc)) from exc
