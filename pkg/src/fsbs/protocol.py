"""Two-party wire protocol for blind signing.

Frames are ``kind u8 | length u32 LE | payload``. One signing session runs per
connection. The user opens with HELLO (protocol version and period), the
signer answers with X, and the exchange follows the phase structure of
:mod:`fsbs.scheme` until RESULT_ACCEPT or an ABORT.
"""

from __future__ import annotations

import enum
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import scheme
from .errors import DecodeError, FormatError, FsbsError, ProtocolViolation, RestartLimitExceeded, TimeMismatch
from .formats import decode_vector, encode_vector, pack_ternary, unpack_ternary
from .gaussian import RandomSource
from .scheme import Accept, AbortAdversary, PublicKey, Restart, RestartRequest, View
from .timetree import SecretKey, key_update

PROTOCOL_VERSION = 0x01
MAX_PAYLOAD = 1 << 26
_HEAD = struct.Struct("<BI")


class Kind(enum.IntEnum):
    HELLO = 0x00
    X = 0x01
    E = 0x02
    Z = 0x03
    RESULT_ACCEPT = 0x04
    RESULT_RESTART = 0x05
    RESTART_X = 0x06
    ABORT = 0x7F


class AbortCode(enum.IntEnum):
    PROTOCOL = 1
    ADVERSARY = 2
    TIME_MISMATCH = 3
    RESTART_LIMIT = 4
    INTERNAL = 5


@dataclass(frozen=True)
class WireMessage:
    kind: Kind
    payload: bytes = b""


def encode(msg: WireMessage) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise ValueError("payload exceeds the frame limit")
    return _HEAD.pack(int(msg.kind), len(msg.payload)) + bytes(msg.payload)


def _parse_head(head: bytes) -> tuple[Kind, int]:
    kind, length = _HEAD.unpack(head)
    try:
        kind = Kind(kind)
    except ValueError:
        raise DecodeError("bad-kind", f"0x{kind:02x}") from None
    if length > MAX_PAYLOAD:
        raise DecodeError("oversize", f"{length} bytes")
    return kind, length


def decode(buf: bytes) -> WireMessage:
    """Parse exactly one frame; anything malformed raises DecodeError."""
    buf = bytes(buf)
    if len(buf) < _HEAD.size:
        raise DecodeError("truncated", "short header")
    kind, length = _parse_head(buf[:_HEAD.size])
    if len(buf) < _HEAD.size + length:
        raise DecodeError("truncated", f"need {length} payload bytes")
    if len(buf) > _HEAD.size + length:
        raise DecodeError("trailing", f"{len(buf) - _HEAD.size - length} extra bytes")
    return WireMessage(kind, buf[_HEAD.size:])


# ---------------------------------------------------------------------------
# Payloads


def hello(t: int) -> WireMessage:
    return WireMessage(Kind.HELLO, struct.pack("<BI", PROTOCOL_VERSION, t))


def parse_hello(payload: bytes) -> int:
    if len(payload) != 5:
        raise ProtocolViolation("HELLO payload has the wrong length")
    version, t = struct.unpack("<BI", payload)
    if version != PROTOCOL_VERSION:
        raise ProtocolViolation(f"unsupported protocol version {version}")
    return t


def vector_message(kind: Kind, v) -> WireMessage:
    return WireMessage(kind, encode_vector(v))


def parse_vector(payload: bytes, length: int) -> np.ndarray:
    try:
        v, off = decode_vector(payload, 0, length)
    except FormatError as exc:
        raise ProtocolViolation(f"bad vector payload: {exc}") from exc
    if off != len(payload):
        raise ProtocolViolation("trailing bytes after vector")
    return v


def restart_message(req: RestartRequest) -> WireMessage:
    return WireMessage(Kind.RESULT_RESTART, encode_vector(req.a) + encode_vector(req.b) + pack_ternary(req.e_prime) + req.c)


def parse_restart(payload: bytes, params) -> RestartRequest:
    try:
        a, off = decode_vector(payload, 0, params.dim)
        b, off = decode_vector(payload, off, params.k)
        width = (params.k + 3) // 4
        ep = unpack_ternary(payload[off:off + width], params.k)
    except FormatError as exc:
        raise ProtocolViolation(f"bad restart payload: {exc}") from exc
    c = payload[off + width:]
    return RestartRequest(a, b, ep, c)


def abort_message(code: AbortCode, text: str) -> WireMessage:
    return WireMessage(Kind.ABORT, bytes([int(code)]) + text.encode()[:1024])


def parse_abort(payload: bytes) -> tuple[int, str]:
    if not payload:
        return int(AbortCode.PROTOCOL), ""
    return payload[0], payload[1:].decode(errors="replace")


# ---------------------------------------------------------------------------
# Channels and transcripts


@dataclass
class TranscriptEntry:
    direction: str  # "send" or "recv"
    message: WireMessage
    timestamp: float


class PeerAborted(FsbsError):
    def __init__(self, code: int, text: str):
        self.code = code
        super().__init__(f"peer aborted (code {code}): {text}")


class Channel:
    """Framed, transcript-recording wrapper around a connected socket."""

    def __init__(self, sock: socket.socket, timeout: float | None = 60.0):
        self.sock = sock
        if timeout is not None:
            sock.settimeout(timeout)
        self.transcript: list[TranscriptEntry] = []

    def send(self, msg: WireMessage):
        self.sock.sendall(encode(msg))
        self.transcript.append(TranscriptEntry("send", msg, time.time()))

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            chunk = self.sock.recv(min(n, 1 << 20))
            if not chunk:
                raise DecodeError("truncated", "connection closed mid-frame")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def recv(self) -> WireMessage:
        kind, length = _parse_head(self._read_exact(_HEAD.size))
        msg = WireMessage(kind, self._read_exact(length))
        self.transcript.append(TranscriptEntry("recv", msg, time.time()))
        return msg

    def expect(self, *kinds: Kind) -> WireMessage:
        msg = self.recv()
        if msg.kind == Kind.ABORT:
            raise PeerAborted(*parse_abort(msg.payload))
        if msg.kind not in kinds:
            raise ProtocolViolation(f"expected {'/'.join(k.name for k in kinds)}, got {msg.kind.name}")
        return msg

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


# Session grammar as a state machine: state -> {kind: next state}.
_GRAMMAR = {
    "start": {Kind.HELLO: "hello"},
    "hello": {Kind.X: "await_e"},
    "await_e": {Kind.E: "await_z"},
    "await_z": {Kind.Z: "await_result", Kind.RESTART_X: "await_e"},
    "await_result": {Kind.RESULT_ACCEPT: "done", Kind.RESULT_RESTART: "await_restart_x"},
    "await_restart_x": {Kind.RESTART_X: "await_e"},
    "done": {},
}


def transcript_kinds(transcript) -> list[Kind]:
    return [entry.message.kind if isinstance(entry, TranscriptEntry) else Kind(entry) for entry in transcript]


def _walk(kinds) -> str | None:
    state = "start"
    for i, kind in enumerate(kinds):
        if kind == Kind.ABORT:
            return "aborted" if i == len(kinds) - 1 else None
        state = _GRAMMAR[state].get(kind)
        if state is None:
            return None
    return state


def transcript_is_complete(transcript) -> bool:
    """True iff the message sequence is a finished session (ends in RESULT_ACCEPT)."""
    return _walk(transcript_kinds(transcript)) == "done"


def transcript_is_valid(transcript) -> bool:
    """Finished sessions, and grammatical prefixes cut short by one final ABORT."""
    return _walk(transcript_kinds(transcript)) in ("done", "aborted")


# ---------------------------------------------------------------------------
# Signer side


@dataclass
class SessionOutcome:
    view: View | None = None
    abort: str | None = None
    adversary: bool = False
    restart_limit: bool = False
    restarts: int = 0
    transcript: list = field(default_factory=list)


def serve_session(ch: Channel, pk: PublicKey, sk: SecretKey, rng: RandomSource) -> SessionOutcome:
    """Run one signer session on an open channel. Never raises for peer misbehaviour."""
    p = pk.params
    out = SessionOutcome(transcript=ch.transcript)
    session = None
    try:
        t = parse_hello(ch.expect(Kind.HELLO).payload)
        session, x = scheme.signer_phase1(pk, sk, t, rng)
        ch.send(vector_message(Kind.X, x))
        while True:
            e = parse_vector(ch.expect(Kind.E).payload, p.k)
            r3 = session.phase3(e)
            if isinstance(r3, Restart):
                ch.send(vector_message(Kind.RESTART_X, r3.x))
                continue
            ch.send(vector_message(Kind.Z, r3.z))
            msg = ch.expect(Kind.RESULT_ACCEPT, Kind.RESULT_RESTART)
            if msg.kind == Kind.RESULT_ACCEPT:
                if msg.payload:
                    raise ProtocolViolation("RESULT_ACCEPT carries a payload")
                result = session.phase5(Accept(None))
            else:
                result = session.phase5(parse_restart(msg.payload, p))
            if isinstance(result, View):
                out.view = result
                break
            if isinstance(result, AbortAdversary):
                out.abort, out.adversary = result.reason, True
                ch.send(abort_message(AbortCode.ADVERSARY, result.reason))
                break
            ch.send(vector_message(Kind.RESTART_X, result.x))
    except PeerAborted as exc:
        out.abort = str(exc)
    except TimeMismatch as exc:
        out.abort = str(exc)
        _try_send(ch, abort_message(AbortCode.TIME_MISMATCH, str(exc)))
    except RestartLimitExceeded as exc:
        out.abort, out.restart_limit = str(exc), True
        _try_send(ch, abort_message(AbortCode.RESTART_LIMIT, str(exc)))
    except (ProtocolViolation, DecodeError) as exc:
        out.abort = f"protocol violation: {exc}"
        _try_send(ch, abort_message(AbortCode.PROTOCOL, str(exc)))
    except (OSError, FsbsError) as exc:
        out.abort = f"{type(exc).__name__}: {exc}"
        _try_send(ch, abort_message(AbortCode.INTERNAL, str(exc)))
    if session is not None:
        out.restarts = session.restart_count
    return out


def _try_send(ch: Channel, msg: WireMessage):
    try:
        ch.send(msg)
    except OSError:
        pass


class SignerService:
    """Shares one secret key among concurrent sessions.

    ``update_key`` closes the gate to new sessions, waits for the open ones
    to drain, then evolves the key.
    """

    def __init__(self, pk: PublicKey, sk: SecretKey):
        self.pk = pk
        self.sk = sk
        self._cond = threading.Condition()
        self._active = 0
        self._updating = False

    def _enter(self) -> SecretKey:
        with self._cond:
            while self._updating:
                self._cond.wait()
            self._active += 1
            return self.sk

    def _leave(self):
        with self._cond:
            self._active -= 1
            self._cond.notify_all()

    def serve(self, ch: Channel, rng: RandomSource) -> SessionOutcome:
        sk = self._enter()
        try:
            return serve_session(ch, self.pk, sk, rng)
        finally:
            self._leave()

    def update_key(self):
        with self._cond:
            self._updating = True
            while self._active:
                self._cond.wait()
            try:
                self.sk = key_update(self.pk, self.sk)
            finally:
                self._updating = False
                self._cond.notify_all()


def run_signer(listener: socket.socket, service: SignerService, sessions: int, rng: RandomSource,
               mirror_seed: bool = False) -> list[SessionOutcome]:
    """Accept ``sessions`` connections and serve each on its own thread.

    Session i draws from ``rng.fork(i)``; with ``mirror_seed`` the stream is
    ``rng.fork(b"signer")`` so a single session reproduces :func:`scheme.sign_local`.
    """
    results: list[SessionOutcome | None] = [None] * sessions
    threads = []

    def work(i, conn):
        ch = Channel(conn)
        try:
            src = rng.fork(b"signer") if mirror_seed else rng.fork(i)
            results[i] = service.serve(ch, src)
        finally:
            ch.close()

    for i in range(sessions):
        conn, _ = listener.accept()
        th = threading.Thread(target=work, args=(i, conn), daemon=True)
        th.start()
        threads.append(th)
    for th in threads:
        th.join()
    return results


# ---------------------------------------------------------------------------
# User side


@dataclass
class UserOutcome:
    t: int
    mu: bytes
    signature: scheme.Signature
    restarts: int
    stats: scheme.PhaseStats
    transcript: list


def run_user(ch: Channel, pk: PublicKey, t: int, mu: bytes, rng: RandomSource,
             restart_cap: int = scheme.RESTART_CAP) -> UserOutcome:
    """Obtain a blind signature on ``mu`` for period ``t`` from a remote signer.

    Raises PeerAborted, ProtocolViolation, DecodeError or RestartLimitExceeded.
    """
    p = pk.params
    user = scheme.UserSession(pk, t, bytes(mu), rng)
    restarts = 0
    try:
        ch.send(hello(t))
        x = parse_vector(ch.expect(Kind.X).payload, p.n)
        while True:
            ch.send(vector_message(Kind.E, user.phase2(x)))
            msg = ch.expect(Kind.Z, Kind.RESTART_X)
            if msg.kind == Kind.RESTART_X:
                x = parse_vector(msg.payload, p.n)
                restarts += 1
            else:
                res = user.phase4(parse_vector(msg.payload, p.dim))
                if isinstance(res, Accept):
                    ch.send(WireMessage(Kind.RESULT_ACCEPT))
                    return UserOutcome(t, bytes(mu), res.signature, restarts, user.stats, ch.transcript)
                ch.send(restart_message(res))
                x = parse_vector(ch.expect(Kind.RESTART_X).payload, p.n)
                restarts += 1
            if restarts > restart_cap:
                raise RestartLimitExceeded(f"signer restarted more than {restart_cap} times")
    except (ProtocolViolation, DecodeError, RestartLimitExceeded) as exc:
        code = AbortCode.RESTART_LIMIT if isinstance(exc, RestartLimitExceeded) else AbortCode.PROTOCOL
        _try_send(ch, abort_message(code, str(exc)))
        raise


def connect(address: tuple[str, int], timeout: float = 60.0) -> Channel:
    return Channel(socket.create_connection(address, timeout=timeout), timeout)


def listen(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(64)
    return sock


def sign_over_socketpair(pk: PublicKey, sk: SecretKey, t: int, mu: bytes, rng: RandomSource) -> tuple[UserOutcome, SessionOutcome]:
    """Both parties in separate threads over an OS socket pair, with mirrored seeds."""
    a, b = socket.socketpair()
    signer_ch, user_ch = Channel(a), Channel(b)
    box = {}

    def signer():
        box["signer"] = serve_session(signer_ch, pk, sk, rng.fork(b"signer"))

    th = threading.Thread(target=signer, daemon=True)
    th.start()
    try:
        user = run_user(user_ch, pk, t, mu, rng.fork(b"user"))
    finally:
        th.join()
        signer_ch.close()
        user_ch.close()
    return user, box["signer"]
