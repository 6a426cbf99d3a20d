"""Binary file formats for public keys, secret keys and signatures.

Integer matrices and vectors use the FSM1 block from :mod:`fsbs.zq`; a vector
is a one-column matrix. All integers in headers are little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

from . import zq
from .errors import FormatError
from .params import Params
from .scheme import PublicKey, Signature
from .timetree import NodeKey, SecretKey, minimal_cover, node_order

PK_MAGIC = b"FSPK"
SK_MAGIC = b"FSSK"
SIG_MAGIC = b"FSSG"
VERSION = 1


def encode_vector(v) -> bytes:
    return zq.encode_matrix(zq.as_int_array(v).reshape(-1, 1))


def decode_vector(buf: bytes, offset: int, length: int | None = None) -> tuple[np.ndarray, int]:
    M, off = zq.decode_matrix(buf, offset)
    if M.shape[1] != 1 or (length is not None and M.shape[0] != length):
        raise FormatError(f"expected a column vector of length {length}, got shape {M.shape}")
    return M[:, 0], off


def pack_ternary(e) -> bytes:
    """Two bits per entry, LE within each byte: 00 -> 0, 01 -> +1, 11 -> -1."""
    e = np.asarray(e)
    codes = np.zeros(len(e) + (-len(e)) % 4, dtype=np.uint8)
    codes[:len(e)][e == 1] = 1
    codes[:len(e)][e == -1] = 3
    if np.any((e != 0) & (e != 1) & (e != -1)):
        raise ValueError("vector is not ternary")
    quads = codes.reshape(-1, 4)
    return (quads[:, 0] | quads[:, 1] << 2 | quads[:, 2] << 4 | quads[:, 3] << 6).astype(np.uint8).tobytes()


def unpack_ternary(buf: bytes, k: int) -> np.ndarray:
    if len(buf) != (k + 3) // 4:
        raise FormatError("ternary block has the wrong length")
    raw = np.frombuffer(buf, dtype=np.uint8)
    codes = np.stack([(raw >> s) & 3 for s in (0, 2, 4, 6)], axis=1).reshape(-1)
    if np.any(codes == 2) or np.any(codes[k:] != 0):
        raise FormatError("invalid ternary code")
    out = np.zeros(k, dtype=np.int64)
    out[codes[:k] == 1] = 1
    out[codes[:k] == 3] = -1
    return out


def _pack_path(w: str) -> bytes:
    raw = bytearray((len(w) + 7) // 8)
    for i, bit in enumerate(w):
        if bit == "1":
            raw[i // 8] |= 1 << (i % 8)
    return bytes(raw)


def _unpack_path(raw: bytes, length: int) -> str:
    bits = "".join("1" if raw[i // 8] >> (i % 8) & 1 else "0" for i in range(length))
    if any(raw[i // 8] >> (i % 8) & 1 for i in range(length, 8 * len(raw))):
        raise FormatError("nonzero padding in node path")
    return bits


class _Reader:
    def __init__(self, buf: bytes, offset: int = 0):
        self.buf = buf
        self.off = offset

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise FormatError("truncated input")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        st = struct.Struct(fmt)
        return st.unpack(self.take(st.size))

    def matrix(self) -> np.ndarray:
        M, self.off = zq.decode_matrix(self.buf, self.off)
        return M

    def done(self):
        if self.off != len(self.buf):
            raise FormatError("trailing bytes")


# ---------------------------------------------------------------------------
# Public key: magic | params text length u32 | params text | A_0, A_1^(0), A_1^(1), ..., K


def encode_public_key(pk: PublicKey) -> bytes:
    text = pk.params.to_text().encode()
    return PK_MAGIC + struct.pack("<I", len(text)) + text + b"".join(zq.encode_matrix(M) for M in pk.matrices())


def decode_public_key(buf: bytes) -> PublicKey:
    rd = _Reader(buf)
    if rd.take(4) != PK_MAGIC:
        raise FormatError("not a public key file")
    (length,) = rd.unpack("<I")
    try:
        params = Params.from_text(rd.take(length).decode())
    except UnicodeDecodeError as exc:
        raise FormatError("params block is not UTF-8") from exc
    mats = [rd.matrix() for _ in range(2 * params.ell + 2)]
    rd.done()
    for i, M in enumerate(mats):
        want = (params.n, params.k if i == len(mats) - 1 else params.m)
        if M.shape != want or M.dtype == object or np.any((M < 0) | (M >= params.q)):
            raise FormatError(f"public key matrix {i} malformed")
    pairs = [(mats[1 + 2 * i], mats[2 + 2 * i]) for i in range(params.ell)]
    return PublicKey(params, mats[0], pairs, mats[-1])


# ---------------------------------------------------------------------------
# Secret key: magic | version u8 | t u32 | l u8 | count u16 | per node: len u8, path bits, basis block
# The key past the last period has t = 2^l and no nodes.


def encode_secret_key(sk: SecretKey) -> bytes:
    out = bytearray(SK_MAGIC + struct.pack("<BIBH", VERSION, sk.t, sk.ell, len(sk.nodes)))
    for key in sk.ordered_nodes():
        out += struct.pack("<B", len(key.node)) + _pack_path(key.node) + zq.encode_matrix(key.basis)
    return bytes(out)


def decode_secret_key(buf: bytes, params: Params | None = None) -> SecretKey:
    rd = _Reader(buf)
    if rd.take(4) != SK_MAGIC:
        raise FormatError("not a secret key file")
    version, t, ell, count = rd.unpack("<BIBH")
    if version != VERSION:
        raise FormatError(f"unsupported secret key version {version}")
    if ell > 31 or t > 2**ell:
        raise FormatError("period out of range")
    nodes = {}
    for _ in range(count):
        (length,) = rd.unpack("<B")
        if length > ell:
            raise FormatError("node deeper than the tree")
        w = _unpack_path(rd.take((length + 7) // 8), length)
        basis = rd.matrix()
        side = (len(w) + 1) * (params.m if params else basis.shape[0] // (len(w) + 1))
        if basis.shape != (side, side):
            raise FormatError(f"basis for node {w or 'root'} has shape {basis.shape}")
        nodes[w] = NodeKey(w, basis)
    rd.done()
    if params is not None and params.ell != ell:
        raise FormatError("secret key depth does not match parameters")
    expected = [] if t == 2**ell else minimal_cover(t, ell)
    if sorted(nodes, key=node_order) != expected or len(nodes) != count:
        raise FormatError("stored nodes are not the minimal cover of the period")
    return SecretKey(t, ell, nodes)


# ---------------------------------------------------------------------------
# Signature: magic | version u8 | t u32 | d' | e' packed | z' block


def encode_signature(t: int, sig: Signature) -> bytes:
    return SIG_MAGIC + struct.pack("<BI", VERSION, t) + bytes(sig.d) + pack_ternary(sig.e) + encode_vector(sig.z)


def decode_signature(buf: bytes, params: Params) -> tuple[int, Signature]:
    rd = _Reader(buf)
    if rd.take(4) != SIG_MAGIC:
        raise FormatError("not a signature file")
    version, t = rd.unpack("<BI")
    if version != VERSION:
        raise FormatError(f"unsupported signature version {version}")
    d = rd.take((params.commit_bits + 7) // 8)
    e = unpack_ternary(rd.take((params.k + 3) // 4), params.k)
    z, rd.off = decode_vector(buf, rd.off, params.dim)
    rd.done()
    return t, Signature(d, e, z)
