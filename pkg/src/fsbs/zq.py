"""Exact integer and mod-q matrix arithmetic.

Matrices are plain numpy arrays. Entries are ``int64`` whenever every value
fits; otherwise ``object`` arrays of Python ints are used so that no result is
ever silently wrapped. Mod-q results are always canonical residues in [0, q).
"""

from __future__ import annotations

import math
import struct
from functools import lru_cache

import numpy as np

from .errors import DegenerateBasis, FormatError, NoSolutionOrRankDeficient, ParamError

INT64_MAX = 2**63 - 1
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Miller-Rabin with a base set that is deterministic for n < 3.3e24."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def check_modulus(q: int) -> int:
    """Return ``q`` as an int after checking it is an odd prime below 2^62."""
    q = int(q)
    if q < 3 or q % 2 == 0 or not is_prime(q):
        raise ParamError(f"modulus must be an odd prime >= 3, got {q}")
    if q >= 2**62:
        raise ParamError("modulus must be below 2^62")
    return q


def as_int_array(M) -> np.ndarray:
    """Coerce to an exact integer array (int64 if it fits, object otherwise)."""
    a = np.asarray(M)
    if a.dtype == object:
        flat = [int(v) for v in a.ravel()]
        if all(-INT64_MAX <= v <= INT64_MAX for v in flat):
            return np.array(flat, dtype=np.int64).reshape(a.shape)
        out = np.empty(a.shape, dtype=object)
        out.ravel()[:] = flat
        return out
    if a.dtype.kind == "b":
        return a.astype(np.int64)
    if a.dtype.kind not in "iu":
        raise TypeError(f"expected an integer matrix, got dtype {a.dtype}")
    if a.dtype == np.uint64 and a.size and int(a.max()) > INT64_MAX:
        return a.astype(object)
    return a.astype(np.int64, copy=False)


def _max_abs(a: np.ndarray) -> int:
    if a.size == 0:
        return 0
    if a.dtype == object:
        return max(abs(int(v)) for v in a.ravel())
    return max(abs(int(a.max())), abs(int(a.min())))


def int_matmul(A, B) -> np.ndarray:
    """Exact integer product; falls back to Python ints if int64 could overflow."""
    A = as_int_array(A)
    B = as_int_array(B)
    if A.shape[-1] != B.shape[0]:
        raise ValueError(f"dimension mismatch {A.shape} x {B.shape}")
    inner = A.shape[-1]
    if A.dtype != object and B.dtype != object:
        if _max_abs(A) * _max_abs(B) * max(inner, 1) <= INT64_MAX:
            return A @ B
    return as_int_array(A.astype(object) @ B.astype(object))


def mod(A, q: int) -> np.ndarray:
    """Canonical residues of A in [0, q)."""
    A = as_int_array(A)
    r = A % q
    return r if r.dtype != object else as_int_array(r)


def mat_mul_mod(A, B, q: int) -> np.ndarray:
    """A @ B reduced to [0, q). Accepts a 1-D right operand."""
    a = mod(A, q)
    b = mod(B, q)
    if a.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch {np.shape(A)} x {np.shape(B)}")
    inner = a.shape[1]
    if a.dtype != object and b.dtype != object and (q - 1) ** 2 <= INT64_MAX:
        chunk = max(1, INT64_MAX // max((q - 1) ** 2, 1))
        if inner <= chunk:
            return (a @ b) % q
        acc = np.zeros((a.shape[0],) + b.shape[1:], dtype=np.int64)
        for lo in range(0, inner, chunk):
            acc = (acc + (a[:, lo:lo + chunk] @ b[lo:lo + chunk]) % q) % q
        return acc
    return mod(a.astype(object) @ b.astype(object), q)


def sq_norm(v) -> int:
    """Exact squared Euclidean norm as a Python int."""
    v = as_int_array(v).ravel()
    if v.dtype != object and _max_abs(v) ** 2 * max(v.size, 1) <= INT64_MAX:
        return int(v @ v)
    return sum(int(x) * int(x) for x in v)


def inner(u, v) -> int:
    """Exact inner product as a Python int."""
    u = as_int_array(u).ravel()
    v = as_int_array(v).ravel()
    if u.shape != v.shape:
        raise ValueError("length mismatch")
    if u.dtype != object and v.dtype != object and _max_abs(u) * _max_abs(v) * max(u.size, 1) <= INT64_MAX:
        return int(u @ v)
    return sum(int(a) * int(b) for a, b in zip(u, v))


# ---------------------------------------------------------------------------
# Linear systems mod q


def _rref_solve(A, U, q: int) -> np.ndarray:
    """Solve A X = U (mod q) for a full-row-rank A via reduced row echelon form.

    Pivots are taken left to right (leftmost nonzero column); free variables
    are zero. ``U`` is n x r; returns m x r with entries in [0, q).
    """
    A = mod(A, q)
    U = mod(U, q)
    n, m = A.shape
    if U.shape[0] != n:
        raise ValueError("right-hand side has wrong length")
    big = A.dtype == object or (q - 1) ** 2 > INT64_MAX
    aug = np.concatenate([A, U], axis=1)
    if big:
        aug = aug.astype(object)
    pivots = []
    row = 0
    col = 0
    while row < n and col < m:
        nz = aug[row:, col:m] != 0
        if not nz.any():
            break
        rel = int(np.flatnonzero(nz.any(axis=0))[0])
        prow = row + int(np.flatnonzero(nz[:, rel])[0])
        col += rel
        if prow != row:
            aug[[row, prow]] = aug[[prow, row]]
        inv = pow(int(aug[row, col]), -1, q)
        aug[row] = (aug[row] * inv) % q
        others = [i for i in range(n) if i != row and aug[i, col] != 0]
        for i in others:
            aug[i] = (aug[i] - aug[i, col] * aug[row]) % q
        pivots.append(col)
        row += 1
        col += 1
    if row < n:
        raise NoSolutionOrRankDeficient(f"matrix has rank {row} < {n} mod {q}")
    X = np.zeros((m, U.shape[1]), dtype=aug.dtype)
    for i, c in enumerate(pivots):
        X[c] = aug[i, m:]
    return as_int_array(X)


def solve_particular(A, u, q: int) -> np.ndarray:
    """Deterministic t with A t = u (mod q), entries in [0, q).

    ``u`` may be a vector (returns a vector) or an n x r matrix of right-hand
    sides solved column by column (returns m x r).
    """
    u = as_int_array(u)
    if u.ndim == 1:
        return _rref_solve(A, u[:, None], q)[:, 0]
    return _rref_solve(A, u, q)


def rank_mod(A, q: int) -> int:
    A = mod(A, q).astype(object)
    n, m = A.shape
    r = 0
    for c in range(m):
        piv = next((i for i in range(r, n) if A[i, c] % q), None)
        if piv is None:
            continue
        A[[r, piv]] = A[[piv, r]]
        inv = pow(int(A[r, c]), -1, q)
        A[r] = (A[r] * inv) % q
        for i in range(n):
            if i != r and A[i, c]:
                A[i] = (A[i] - A[i, c] * A[r]) % q
        r += 1
        if r == n:
            break
    return r


# ---------------------------------------------------------------------------
# Gram-Schmidt


def gso(B) -> tuple[np.ndarray, np.ndarray]:
    """QR factorisation of the columns of B in floating point.

    Returns (Q, R). The Gram-Schmidt vectors are ``Q * diag(R)`` and the
    coefficient matrix is ``R / diag(R)[:, None]`` (unit upper triangular).
    """
    B = np.asarray(B)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise DegenerateBasis(f"basis must be square, got shape {B.shape}")
    Bf = B.astype(np.float64)
    Q, R = np.linalg.qr(Bf)
    diag = np.abs(np.diag(R))
    col_norms = np.linalg.norm(Bf, axis=0)
    if np.any(diag < 1e-9 * np.maximum(col_norms, 1e-300)) or not np.all(np.isfinite(diag)):
        raise DegenerateBasis("columns are linearly dependent")
    return Q, R


def gram_schmidt(B) -> tuple[np.ndarray, np.ndarray]:
    """Un-normalised Gram-Schmidt of the columns of B, in order.

    Returns ``(B_star, norms)`` where ``B_star[:, i]`` is the i-th orthogonalised
    column and ``norms[i]`` its length. ``norms.max()`` is the Gram-Schmidt norm.
    """
    Q, R = gso(B)
    d = np.diag(R)
    return Q * d[None, :], np.abs(d)


def gs_norm(B) -> float:
    return float(gram_schmidt(B)[1].max())


# ---------------------------------------------------------------------------
# Exact determinant


@lru_cache(maxsize=None)
def _det_primes(count: int) -> tuple[int, ...]:
    out = []
    p = 2**31 - 1
    while len(out) < count:
        if is_prime(p):
            out.append(p)
        p -= 2
    return tuple(out)


def _perm_sign(perm: np.ndarray) -> int:
    seen = np.zeros(len(perm), dtype=bool)
    sign = 1
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def _peel(M: np.ndarray) -> tuple[int, np.ndarray | None]:
    """Strip rows/columns with a single nonzero entry (Laplace expansion).

    Returns (factor, core) with det(M) = factor * det(core); core is None when
    the determinant is already known to be zero.
    """
    factor = 1
    while M.shape[0]:
        for axis in (0, 1):
            X = M if axis == 0 else M.T
            nz = X != 0
            counts = nz.sum(axis=1)
            if np.any(counts == 0):
                return 0, None
            single = np.flatnonzero(counts == 1)
            if single.size == 0:
                continue
            cols = nz[single].argmax(axis=1)
            uniq, first = np.unique(cols, return_index=True)
            if uniq.size != cols.size:
                return 0, None
            n = X.shape[0]
            keep_r = np.setdiff1d(np.arange(n), single)
            keep_c = np.setdiff1d(np.arange(n), cols)
            row_perm = np.concatenate([keep_r, single])
            col_perm = np.concatenate([keep_c, cols])
            sign = _perm_sign(row_perm) * _perm_sign(col_perm)
            for r, c in zip(single, cols):
                factor *= int(X[r, c])
            factor *= sign
            core = X[np.ix_(keep_r, keep_c)]
            M = core if axis == 0 else core.T
            break
        else:
            return factor, M
    return factor, M


def _det_mod_primes(M: np.ndarray, primes: tuple[int, ...]) -> list[int]:
    n = M.shape[0]
    P = np.array(primes, dtype=np.int64)
    if M.dtype == object:
        stack = np.array([[[int(v) % p for v in row] for row in M] for p in primes], dtype=np.int64)
    else:
        stack = M[None, :, :] % P[:, None, None]
    k_idx = np.arange(len(primes))
    det = np.ones(len(primes), dtype=np.int64)
    dead = np.zeros(len(primes), dtype=bool)
    Pc = P[:, None]
    Pcc = P[:, None, None]
    for k in range(n):
        nz = stack[:, k:, k] != 0
        has = nz.any(axis=1)
        dead |= ~has
        piv = nz.argmax(axis=1) + k
        swap = (piv != k) & has
        if swap.any():
            idx = k_idx[swap]
            rows_k = stack[idx, k].copy()
            stack[idx, k] = stack[idx, piv[swap]]
            stack[idx, piv[swap]] = rows_k
            det[idx] = (P[idx] - det[idx]) % P[idx]
        pv = stack[:, k, k].copy()
        pv[~has] = 1
        det = det * pv % P
        if k + 1 == n:
            break
        inv = np.array([pow(int(v), -1, int(p)) for v, p in zip(pv, primes)], dtype=np.int64)
        f = stack[:, k + 1:, k] * inv[:, None] % Pc
        stack[:, k + 1:, k + 1:] = (stack[:, k + 1:, k + 1:] - f[:, :, None] * stack[:, None, k, k + 1:] % Pcc) % Pcc
    det[dead] = 0
    return [int(d) for d in det]


def _crt_symmetric(residues, primes) -> tuple[int, int]:
    modulus = 1
    value = 0
    for r, p in zip(residues, primes):
        t = ((r - value) * pow(modulus, -1, p)) % p
        value += modulus * t
        modulus *= p
    if value > modulus // 2:
        value -= modulus
    return value, modulus


def _residues(core: np.ndarray, primes: tuple[int, ...]) -> list[int]:
    out = []
    for lo in range(0, len(primes), 16):
        out += _det_mod_primes(core, primes[lo:lo + 16])
    return out


def int_det(M) -> int:
    """Exact determinant of a square integer matrix.

    Singleton rows/columns are expanded exactly; the remaining core is handled
    by elimination modulo 31-bit primes followed by CRT into the symmetric
    range. The number of primes comes from the floating-point log-determinant
    plus a 64-bit margin; two further primes must agree with the CRT value,
    otherwise the computation is redone under the Hadamard bound.
    """
    M = as_int_array(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("determinant needs a square matrix")
    factor, core = _peel(M)
    if core is None or factor == 0:
        return 0
    if core.shape[0] == 0:
        return factor
    if core.shape[0] == 1:
        return factor * int(core[0, 0])
    Cf = core.astype(np.float64)
    logs_r = np.log2(np.maximum(np.linalg.norm(Cf, axis=1), 1.0)).sum()
    logs_c = np.log2(np.maximum(np.linalg.norm(Cf, axis=0), 1.0)).sum()
    hadamard = min(logs_r, logs_c) + 3
    sign, logdet = np.linalg.slogdet(Cf)
    estimate = logdet / math.log(2) if sign != 0 and np.isfinite(logdet) else 0.0
    bits = min(hadamard, max(estimate, 0.0) + 64)
    count = max(1, math.ceil(bits / 30.9))
    if bits < hadamard:
        primes = _det_primes(count + 2)
        residues = _residues(core, primes)
        value, _ = _crt_symmetric(residues[:count], primes[:count])
        if all(value % p == r for p, r in zip(primes[count:], residues[count:])):
            return factor * value
        count = max(1, math.ceil(hadamard / 30.9))
    primes = _det_primes(count)
    value, _ = _crt_symmetric(_residues(core, primes), primes)
    return factor * value


def is_basis_of_lambda_perp(A, T, q: int) -> bool:
    """True iff the columns of T form a basis of {e : A e = 0 mod q}.

    Checks A T = 0 (mod q), T nonsingular, and |det T| = q^n exactly.
    """
    try:
        A = as_int_array(A)
        T = as_int_array(T)
        n, m = A.shape
        if T.shape != (m, m):
            return False
        if np.any(mat_mul_mod(A, T, q) != 0):
            return False
        d = int_det(T)
        return d != 0 and abs(d) == q**n
    except (ValueError, TypeError, ArithmeticError):
        return False


# ---------------------------------------------------------------------------
# Plumbing


def permute_rows(M, perm) -> np.ndarray:
    M = as_int_array(M)
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(M.shape[0])):
        raise ValueError("not a permutation of the row indices")
    return M[perm]


def concat_cols(blocks) -> np.ndarray:
    blocks = [as_int_array(b) for b in blocks]
    if not blocks:
        raise ValueError("nothing to concatenate")
    rows = {b.shape[0] for b in blocks}
    if len(rows) != 1:
        raise ValueError(f"row counts differ: {sorted(rows)}")
    if any(b.dtype == object for b in blocks):
        return np.concatenate([b.astype(object) for b in blocks], axis=1)
    return np.concatenate(blocks, axis=1)


# ---------------------------------------------------------------------------
# Binary encoding: "FSM1" | rows u32 | cols u32 | width u8 | entries (LE two's complement)

MATRIX_MAGIC = b"FSM1"
_HEADER = struct.Struct("<4sIIB")


def encode_matrix(M) -> bytes:
    M = as_int_array(M)
    if M.ndim == 1:
        M = M[:, None]
    rows, cols = M.shape
    fits64 = M.dtype != object or _max_abs(M) <= INT64_MAX
    width = 8 if fits64 else 16
    head = _HEADER.pack(MATRIX_MAGIC, rows, cols, width)
    if width == 8:
        return head + np.ascontiguousarray(M, dtype="<i8").tobytes()
    lim = 2**127
    out = bytearray(head)
    for v in M.ravel():
        v = int(v)
        if not -lim <= v < lim:
            raise OverflowError("matrix entry exceeds 128-bit encoding")
        out += v.to_bytes(16, "little", signed=True)
    return bytes(out)


def decode_matrix(buf: bytes, offset: int = 0, max_entries: int = 1 << 24) -> tuple[np.ndarray, int]:
    """Parse one matrix block at ``offset``; returns (matrix, next_offset)."""
    if len(buf) - offset < _HEADER.size:
        raise FormatError("truncated matrix header")
    magic, rows, cols, width = _HEADER.unpack_from(buf, offset)
    if magic != MATRIX_MAGIC:
        raise FormatError("bad matrix magic")
    if width not in (8, 16):
        raise FormatError(f"bad entry width {width}")
    if rows * cols > max_entries:
        raise FormatError("matrix too large")
    start = offset + _HEADER.size
    end = start + rows * cols * width
    if end > len(buf):
        raise FormatError("truncated matrix body")
    if width == 8:
        M = np.frombuffer(buf, dtype="<i8", count=rows * cols, offset=start).astype(np.int64).reshape(rows, cols)
    else:
        vals = [int.from_bytes(buf[i:i + 16], "little", signed=True) for i in range(start, end, 16)]
        M = np.empty(rows * cols, dtype=object)
        M[:] = vals
        M = as_int_array(M.reshape(rows, cols))
    return M, end
