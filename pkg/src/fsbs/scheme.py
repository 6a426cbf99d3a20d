"""The forward-secure blind signature scheme.

Signing is a five-phase interaction. The signer holds a period key and
commits to x = F_t r; the user blinds its challenge as e = H(u, c) + b and
later unblinds z into z' = z + a. Both sides use rejection sampling so that
the signer's view (t, r, e, z) carries no information about the message.
Either side's rejection sends the protocol back to phase 1.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import zq
from .errors import (
    InternalError,
    LastPeriod,
    ProtocolViolation,
    RestartLimitExceeded,
    TimeMismatch,
)
from .gaussian import RandomSource, XofStream, eta_slack, rejection_step, sample_zm
from .params import Params, derive
from .timetree import SecretKey, leaf_path, node_matrix, root_key
from .trapdoor import sample_key, trap_gen

TAG_CHALLENGE = 0x01
TAG_COMMIT = 0x02
TAG_BALL = 0x04
TAG_COIN = 0x05

RESTART_CAP = 64
PHASE2_CAP = 10_000


@dataclass(eq=False)
class PublicKey:
    params: Params
    A0: np.ndarray
    A: list  # A[i] = (A_(i+1)^(0), A_(i+1)^(1))
    K: np.ndarray

    def F(self, t: int) -> np.ndarray:
        return node_matrix(self, leaf_path(t, self.params.ell))

    def matrices(self) -> list[np.ndarray]:
        """A_0, A_1^(0), A_1^(1), ..., A_l^(1), K in file order."""
        out = [self.A0]
        for pair in self.A:
            out.extend(pair)
        out.append(self.K)
        return out

    def __eq__(self, other):
        if not isinstance(other, PublicKey) or self.params != other.params:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.matrices(), other.matrices()))


@dataclass(eq=False)
class Signature:
    d: bytes
    e: np.ndarray
    z: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, Signature) and self.d == other.d and np.array_equal(self.e, other.e)
                and np.array_equal(self.z, other.z))


@dataclass(frozen=True, eq=False)
class View:
    t: int
    r: np.ndarray
    e: np.ndarray
    z: np.ndarray


# ---------------------------------------------------------------------------
# Setup


def setup(params_in: Params, rng: RandomSource) -> tuple[Params, PublicKey, SecretKey]:
    """Generate keys. sigma is reset to ceil(|T~| * eta) from the trapdoor actually produced."""
    p = params_in
    pair = trap_gen(p.n, p.q, p.m, rng)
    sigma = math.ceil(pair.gs_norm * eta_slack(p.dim))
    params = derive(p.n, p.ell, p.q, p.k, p.kappa, sigma, m=p.m, gamma=p.gamma)
    A = [(rng.integers(p.q, (p.n, p.m)), rng.integers(p.q, (p.n, p.m))) for _ in range(p.ell)]
    K = rng.integers(p.q, (p.n, p.k))
    pk = PublicKey(params, pair.A, A, K)
    return params, pk, root_key(p.ell, pair.T)


# ---------------------------------------------------------------------------
# Hashing


def _enc_mod(v, q: int) -> bytes:
    return np.ascontiguousarray(zq.mod(v, q), dtype="<u8").tobytes()


def _enc_signed(v) -> bytes:
    v = zq.as_int_array(v).ravel()
    if v.dtype != object:
        return np.ascontiguousarray(v, dtype="<i8").tobytes()
    return b"".join(int(x).to_bytes(16, "little", signed=True) for x in v)


def hash_to_ball(seed: bytes, k: int, kappa: int) -> np.ndarray:
    """Ternary vector of length k with exactly kappa entries +-1 (Fisher-Yates on an XOF)."""
    if not 0 <= kappa <= k:
        raise ValueError("need 0 <= kappa <= k")
    xof = XofStream(TAG_BALL, seed)
    signs = int.from_bytes(xof.read(8 * ((kappa + 63) // 64)), "little")
    c = np.zeros(k, dtype=np.int64)
    for n, i in enumerate(range(k - kappa, k)):
        j = xof.randbelow(i + 1)
        c[i] = c[j]
        c[j] = -1 if (signs >> n) & 1 else 1
    return c


def challenge_hash(u, c: bytes, params: Params) -> np.ndarray:
    body = _enc_mod(u, params.q)
    seed = hashlib.shake_256(bytes([TAG_CHALLENGE]) + struct.pack("<I", len(body)) + body + c).digest(32)
    return hash_to_ball(seed, params.k, params.kappa)


def commit(mu: bytes, d: bytes, nbits: int) -> bytes:
    """Hash commitment to mu with opening d, truncated to nbits (padding bits zero)."""
    raw = bytearray(hashlib.shake_256(bytes([TAG_COMMIT]) + struct.pack("<Q", len(mu)) + mu + d)
                    .digest((nbits + 7) // 8))
    if nbits % 8:
        raw[-1] &= (1 << (nbits % 8)) - 1
    return bytes(raw)


def unblind_coin(a, z, c: bytes) -> RandomSource:
    """Phase-4 acceptance coin, reproducible by the signer once a is revealed."""
    return RandomSource(hashlib.shake_256(bytes([TAG_COIN]) + _enc_signed(a) + _enc_signed(z) + c).digest(32))


def is_ternary_ball(e, params: Params) -> bool:
    e = np.asarray(e)
    return (e.shape == (params.k,) and e.dtype.kind in "iu" and bool(np.all(np.abs(e) <= 1))
            and int(np.count_nonzero(e)) <= params.kappa)


# ---------------------------------------------------------------------------
# Session messages


@dataclass
class Emit:
    z: np.ndarray


@dataclass
class Restart:
    x: np.ndarray


@dataclass
class Accept:
    signature: Signature


@dataclass
class RestartRequest:
    a: np.ndarray
    b: np.ndarray
    e_prime: np.ndarray
    c: bytes


@dataclass
class AbortAdversary:
    reason: str


@dataclass
class PhaseStats:
    """Attempt/accept counters for the three rejection steps."""

    p2_tries: int = 0
    p2_accepts: int = 0
    p3_tries: int = 0
    p3_accepts: int = 0
    p4_tries: int = 0
    p4_accepts: int = 0

    def merge(self, other: "PhaseStats"):
        for f in self.__dataclass_fields__:
            setattr(self, f, getattr(self, f) + getattr(other, f))


# ---------------------------------------------------------------------------
# Signer


@dataclass(eq=False)
class SignerSession:
    pk: PublicKey
    t: int
    F: np.ndarray
    S: np.ndarray
    rng: RandomSource
    r: np.ndarray = None
    x: np.ndarray = None
    e: np.ndarray = None
    z: np.ndarray = None
    phase: str = "AwaitE"
    restart_count: int = 0
    stats: PhaseStats = field(default_factory=PhaseStats)

    def _commit_round(self):
        p = self.pk.params
        self.r = sample_zm(p.sigma2, p.dim, self.rng)
        self.x = zq.mat_mul_mod(self.F, self.r, p.q)
        self.e = self.z = None
        self.phase = "AwaitE"

    def restart(self) -> Restart:
        if self.restart_count >= RESTART_CAP:
            self.phase = "Done"
            raise RestartLimitExceeded(f"gave up after {RESTART_CAP} restarts")
        self.restart_count += 1
        self._commit_round()
        return Restart(self.x)

    def phase3(self, e) -> Emit | Restart:
        """Answer the blinded challenge with z = r + S e, or restart on rejection."""
        if self.phase != "AwaitE":
            raise ProtocolViolation(f"challenge received in phase {self.phase}")
        p = self.pk.params
        e = np.asarray(e)
        if e.shape != (p.k,) or e.dtype.kind not in "iu":
            raise ProtocolViolation("challenge has the wrong shape")
        e = zq.as_int_array(e)
        if zq.sq_norm(e) > (12 * p.sigma1) ** 2 * p.k:
            raise ProtocolViolation("challenge norm is implausibly large")
        Se = zq.int_matmul(self.S, e)
        z = zq.as_int_array(self.r + Se)
        self.stats.p3_tries += 1
        if rejection_step(z, Se, p.sigma2, p.M2, self.rng):
            self.stats.p3_accepts += 1
            self.e, self.z = e, z
            self.phase = "AwaitResult"
            return Emit(z)
        return self.restart()

    def check_restart(self, req: RestartRequest) -> str | None:
        """Reason the restart request is invalid, or None if it is an honest one."""
        p = self.pk.params
        try:
            a = zq.as_int_array(req.a)
            b = zq.as_int_array(req.b)
            ep = zq.as_int_array(req.e_prime)
        except (TypeError, ValueError):
            return "malformed restart payload"
        if a.shape != (p.dim,) or b.shape != (p.k,) or ep.shape != (p.k,) or len(req.c) != (p.commit_bits + 7) // 8:
            return "malformed restart payload"
        if not is_ternary_ball(ep, p):
            return "e' is not a valid challenge"
        u1 = (zq.mat_mul_mod(self.F, a, p.q) + self.x + zq.mat_mul_mod(self.pk.K, b, p.q)) % p.q
        if not (np.array_equal(zq.as_int_array(self.e - b), ep) and np.array_equal(challenge_hash(u1, req.c, p), ep)):
            return "e - b does not match H(F a + x + K b, c)"
        u2 = (zq.mat_mul_mod(self.F, zq.as_int_array(a + self.z), p.q) - zq.mat_mul_mod(self.pk.K, ep, p.q)) % p.q
        if not np.array_equal(challenge_hash(u2, req.c, p), ep):
            return "e' does not match H(F a + F z - K e', c)"
        zp = zq.as_int_array(a + self.z)
        over = zq.sq_norm(zp) >= p.sigma3**2 * p.dim
        if not over and rejection_step(zp, self.z, p.sigma3, p.M3, unblind_coin(a, self.z, req.c)):
            return "z + a was acceptable; restart not justified"
        return None

    def phase5(self, result) -> View | Restart | AbortAdversary:
        if self.phase != "AwaitResult":
            raise ProtocolViolation(f"result received in phase {self.phase}")
        if isinstance(result, Accept):
            self.phase = "Done"
            return View(self.t, self.r, self.e, self.z)
        if not isinstance(result, RestartRequest):
            self.phase = "Done"
            return AbortAdversary("malformed result")
        reason = self.check_restart(result)
        if reason is not None:
            self.phase = "Done"
            return AbortAdversary(reason)
        return self.restart()


def signer_phase1(pk: PublicKey, sk: SecretKey, t: int, rng: RandomSource) -> tuple[SignerSession, np.ndarray]:
    """Open a session: draw the ephemeral key S_t (F_t S_t = K) and commit x = F_t r."""
    if sk.is_empty:
        raise LastPeriod("the key has been evolved past the last period")
    if sk.t != t:
        raise TimeMismatch(f"secret key is for period {sk.t}, not {t}")
    p = pk.params
    leaf = sk.leaf_key(pk)
    F = pk.F(t)
    S = sample_key(F, leaf.prepared(), p.sigma, pk.K, rng, p.q)
    session = SignerSession(pk, t, F, S, rng)
    session._commit_round()
    return session, session.x


# ---------------------------------------------------------------------------
# User


@dataclass(eq=False)
class UserSession:
    pk: PublicKey
    t: int
    mu: bytes
    rng: RandomSource
    F: np.ndarray = None
    x: np.ndarray = None
    a: np.ndarray = None
    b: np.ndarray = None
    d: bytes = None
    c: bytes = None
    e_prime: np.ndarray = None
    e: np.ndarray = None
    phase: str = "AwaitX"
    stats: PhaseStats = field(default_factory=PhaseStats)

    def __post_init__(self):
        if not 0 <= self.t < self.pk.params.tau:
            raise TimeMismatch(f"period {self.t} outside [0, {self.pk.params.tau})")
        self.F = self.pk.F(self.t)

    def phase2(self, x) -> np.ndarray:
        """Blind the challenge for commitment x; returns e."""
        if self.phase not in ("AwaitX", "AwaitZ"):
            raise ProtocolViolation(f"commitment received in phase {self.phase}")
        p = self.pk.params
        x = zq.as_int_array(x)
        if x.shape != (p.n,) or x.dtype == object or np.any((x < 0) | (x >= p.q)):
            raise ProtocolViolation("commitment x is not a canonical vector mod q")
        self.x = x
        Kmod = self.pk.K
        for _ in range(PHASE2_CAP):
            a = sample_zm(p.sigma3, p.dim, self.rng)
            b = sample_zm(p.sigma1, p.k, self.rng)
            d = self.rng.bits(p.commit_bits)
            u = (zq.mat_mul_mod(self.F, a, p.q) + x + zq.mat_mul_mod(Kmod, b, p.q)) % p.q
            c = commit(self.mu, d, p.commit_bits)
            ep = challenge_hash(u, c, p)
            e = ep + b
            self.stats.p2_tries += 1
            if rejection_step(e, ep, p.sigma1, p.M1, self.rng):
                self.stats.p2_accepts += 1
                self.a, self.b, self.d, self.c, self.e_prime, self.e = a, b, d, c, ep, e
                self.phase = "AwaitZ"
                return e
        raise InternalError("phase-2 rejection loop did not terminate")

    def phase4(self, z) -> Accept | RestartRequest:
        """Unblind z; either finish with a signature or ask the signer to restart."""
        if self.phase != "AwaitZ":
            raise ProtocolViolation(f"response received in phase {self.phase}")
        p = self.pk.params
        z = np.asarray(z)
        if z.shape != (p.dim,) or z.dtype.kind not in "iuO":
            raise ProtocolViolation("response z has the wrong shape")
        z = zq.as_int_array(z)
        zp = zq.as_int_array(z + self.a)
        self.stats.p4_tries += 1
        coin = unblind_coin(self.a, z, self.c)
        if rejection_step(zp, z, p.sigma3, p.M3, coin) and zq.sq_norm(zp) < p.sigma3**2 * p.dim:
            self.stats.p4_accepts += 1
            self.phase = "Done"
            return Accept(Signature(self.d, self.e_prime.copy(), zp))
        return RestartRequest(self.a, self.b, self.e_prime, self.c)


# ---------------------------------------------------------------------------
# Local driver and verification


@dataclass
class SignResult:
    view: View
    t: int
    mu: bytes
    signature: Signature
    restarts: int
    stats: PhaseStats


def sign_local(pk: PublicKey, sk: SecretKey, t: int, mu: bytes, rng: RandomSource) -> SignResult:
    """Run both parties in-process, handling every restart."""
    signer, x = signer_phase1(pk, sk, t, rng.fork(b"signer"))
    user = UserSession(pk, t, bytes(mu), rng.fork(b"user"))
    e = user.phase2(x)
    while True:
        out = signer.phase3(e)
        if isinstance(out, Restart):
            e = user.phase2(out.x)
            continue
        res = user.phase4(out.z)
        out5 = signer.phase5(res)
        if isinstance(out5, View):
            stats = PhaseStats()
            stats.merge(signer.stats)
            stats.merge(user.stats)
            return SignResult(out5, t, bytes(mu), res.signature, signer.restart_count, stats)
        if isinstance(out5, AbortAdversary):
            raise InternalError(f"honest session aborted: {out5.reason}")
        e = user.phase2(out5.x)


def verify(pk: PublicKey, t: int, mu: bytes, sig: Signature) -> bool:
    """Accept iff ||z'|| <= sigma3 sqrt((1+l) m), e' is a valid challenge, and H(F_t z' - K e', com(mu, d')) == e'."""
    try:
        p = pk.params
        if not isinstance(t, (int, np.integer)) or not 0 <= t < p.tau:
            return False
        if not isinstance(sig.d, (bytes, bytearray)) or len(sig.d) != (p.commit_bits + 7) // 8:
            return False
        if not is_ternary_ball(sig.e, p):
            return False
        z = np.asarray(sig.z)
        if z.shape != (p.dim,) or z.dtype.kind not in "iuO":
            return False
        z = zq.as_int_array(z)
        if zq.sq_norm(z) > p.sigma3**2 * p.dim:
            return False
        F = pk.F(int(t))
        u = (zq.mat_mul_mod(F, z, p.q) - zq.mat_mul_mod(pk.K, sig.e, p.q)) % p.q
        c = commit(bytes(mu), bytes(sig.d), p.commit_bits)
        return bool(np.array_equal(challenge_hash(u, c, p), sig.e))
    except (ValueError, TypeError, ArithmeticError, IndexError):
        return False
