import os
import socket
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsbs import protocol as W
from fsbs import scheme as S
from fsbs.errors import DecodeError, ProtocolViolation, RestartLimitExceeded
from fsbs.gaussian import RandomSource
from fsbs.protocol import Kind
from fsbs.timetree import NodeKey, SecretKey

from conftest import seed


def signer_thread(pk, sk, rng):
    a, b = socket.socketpair()
    box = {}
    ch = W.Channel(a, timeout=30)
    th = threading.Thread(target=lambda: box.setdefault("out", W.serve_session(ch, pk, sk, rng)), daemon=True)
    th.start()
    return W.Channel(b, timeout=30), th, box


@settings(max_examples=300, deadline=None)
@given(kind=st.sampled_from(list(Kind)), payload=st.binary(max_size=2048))
def test_codec_roundtrip(kind, payload):
    msg = W.WireMessage(kind, payload)
    buf = W.encode(msg)
    assert buf[0] == kind and int.from_bytes(buf[1:5], "little") == len(payload)
    assert W.decode(buf) == msg


def test_decode_structured_errors():
    good = W.encode(W.WireMessage(Kind.E, b"abc"))
    cases = {
        "truncated": [b"", good[:4], good[:-1]],
        "bad-kind": [b"\x42" + good[1:]],
        "oversize": [b"\x01" + (2**26 + 1).to_bytes(4, "little")],
        "trailing": [good + b"\0"],
    }
    for reason, bufs in cases.items():
        for buf in bufs:
            with pytest.raises(DecodeError) as info:
                W.decode(buf)
            assert info.value.reason == reason
    with pytest.raises(ValueError):
        W.encode(W.WireMessage(Kind.E, bytes(2**26 + 1)))


def test_decode_fuzz_small():
    r = RandomSource(seed("fuzz"))
    for i in range(20000):
        n = r.randbelow(24)
        buf = r.read(n)
        if i % 3 == 0 and n >= 5:
            buf = bytes([buf[0] % 8]) + (n - 5 + r.randbelow(2)).to_bytes(4, "little") + buf[5:]
        try:
            W.decode(buf)
        except DecodeError as exc:
            assert exc.reason in {"truncated", "bad-kind", "oversize", "trailing"}


def test_payload_helpers():
    assert W.parse_hello(W.hello(3).payload) == 3
    with pytest.raises(ProtocolViolation):
        W.parse_hello(b"\x02" + bytes(4))
    with pytest.raises(ProtocolViolation):
        W.parse_hello(b"\x01")
    v = np.array([1, -2, 3])
    assert W.parse_vector(W.vector_message(Kind.X, v).payload, 3).tolist() == [1, -2, 3]
    with pytest.raises(ProtocolViolation):
        W.parse_vector(W.vector_message(Kind.X, v).payload, 4)
    code, text = W.parse_abort(W.abort_message(W.AbortCode.ADVERSARY, "nope").payload)
    assert (code, text) == (2, "nope")


def test_grammar():
    K = Kind
    assert W.transcript_is_complete([K.HELLO, K.X, K.E, K.Z, K.RESULT_ACCEPT])
    assert W.transcript_is_complete(
        [K.HELLO, K.X, K.E, K.RESTART_X, K.E, K.Z, K.RESULT_RESTART, K.RESTART_X, K.E, K.Z, K.RESULT_ACCEPT]
    )
    assert W.transcript_is_valid([K.HELLO, K.X, K.E, K.ABORT])
    assert not W.transcript_is_complete([K.HELLO, K.X, K.E, K.ABORT])
    for bad in (
        [K.X, K.HELLO],
        [K.HELLO, K.X, K.Z],
        [K.HELLO, K.X, K.E, K.Z, K.RESULT_RESTART, K.E],
        [K.HELLO, K.X, K.E, K.Z, K.RESULT_ACCEPT, K.E],
        [K.HELLO, K.ABORT, K.X],
    ):
        assert not W.transcript_is_valid(bad)


def test_socketpair_matches_local(toy_keys):
    params, pk, sk = toy_keys
    rng = RandomSource(seed("mirror"))
    user, signer = W.sign_over_socketpair(pk, sk, 0, b"wire", rng)
    local = S.sign_local(pk, sk, 0, b"wire", RandomSource(seed("mirror")))
    assert user.signature == local.signature
    assert user.restarts == local.restarts == signer.restarts
    assert S.verify(pk, 0, b"wire", user.signature)
    assert W.transcript_is_complete(user.transcript) and W.transcript_is_complete(signer.transcript)
    assert np.array_equal(signer.view.r, local.view.r) and np.array_equal(signer.view.z, local.view.z)


def test_identical_seeds_give_identical_transcripts(toy_keys):
    params, pk, sk = toy_keys
    runs = [W.sign_over_socketpair(pk, sk, 0, b"det", RandomSource(seed("det")))[0] for _ in range(2)]
    a, b = ([(e.direction, e.message) for e in run.transcript] for run in runs)
    assert a == b


def test_garbage_challenge_aborts(toy_keys):
    params, pk, sk = toy_keys
    ch, th, box = signer_thread(pk, sk, RandomSource(seed("garbage")))
    ch.send(W.hello(0))
    ch.expect(Kind.X)
    ch.send(W.WireMessage(Kind.E, os.urandom(40)))
    msg = ch.recv()
    th.join()
    assert msg.kind == Kind.ABORT and msg.payload[0] == W.AbortCode.PROTOCOL
    assert box["out"].abort.startswith("protocol violation") and box["out"].view is None
    assert W.transcript_is_valid(box["out"].transcript)


def test_out_of_phase_messages_abort(toy_keys):
    params, pk, sk = toy_keys
    r = RandomSource(seed("reorder"))
    for trial in range(12):
        ch, th, box = signer_thread(pk, sk, r.fork(trial))
        wrong = [k for k in Kind if k not in (Kind.HELLO, Kind.ABORT)]
        ch.send(W.WireMessage(wrong[trial % len(wrong)], b"\x01\x00\x00\x00\x00"))
        msg = ch.recv()
        th.join()
        assert msg.kind == Kind.ABORT and box["out"].abort is not None
    ch, th, box = signer_thread(pk, sk, r.fork(b"late"))
    ch.send(W.hello(0))
    ch.expect(Kind.X)
    ch.send(W.WireMessage(Kind.RESULT_ACCEPT))
    assert ch.recv().kind == Kind.ABORT
    th.join()


def test_time_mismatch_aborts(toy_keys):
    params, pk, sk = toy_keys
    ch, th, box = signer_thread(pk, sk, RandomSource(seed("tm")))
    ch.send(W.hello(2))
    msg = ch.recv()
    th.join()
    assert msg.kind == Kind.ABORT and msg.payload[0] == W.AbortCode.TIME_MISMATCH


def test_tampered_restart_is_flagged(toy_keys):
    params, pk, sk = toy_keys
    r = RandomSource(seed("tamper"))
    for attempt in range(100):
        ch, th, box = signer_thread(pk, sk, r.fork(b"s%d" % attempt))
        user = S.UserSession(pk, 0, b"m", r.fork(b"u%d" % attempt))
        ch.send(W.hello(0))
        x = W.parse_vector(ch.expect(Kind.X).payload, params.n)
        while True:
            ch.send(W.vector_message(Kind.E, user.phase2(x)))
            msg = ch.expect(Kind.Z, Kind.RESTART_X)
            if msg.kind == Kind.RESTART_X:
                x = W.parse_vector(msg.payload, params.n)
                continue
            res = user.phase4(W.parse_vector(msg.payload, params.dim))
            break
        if isinstance(res, S.Accept):
            ch.send(W.WireMessage(Kind.RESULT_ACCEPT))
            th.join()
            continue
        res.b = res.b.copy()
        res.b[0] += 1
        ch.send(W.restart_message(res))
        reply = ch.recv()
        th.join()
        assert reply.kind == Kind.ABORT and reply.payload[0] == W.AbortCode.ADVERSARY
        assert box["out"].adversary and box["out"].view is None
        return
    pytest.fail("no phase-4 rejection occurred")


def test_user_survives_signer_sending_oversized_z(toy_keys):
    params, pk, sk = toy_keys
    a, b = socket.socketpair()
    fake = W.Channel(a, timeout=30)
    rounds = {"n": 0}

    def bad_signer():
        fake.expect(Kind.HELLO)
        fake.send(W.vector_message(Kind.X, np.zeros(params.n, dtype=np.int64)))
        try:
            while True:
                fake.expect(Kind.E)
                fake.send(W.vector_message(Kind.Z, np.full(params.dim, 10**12, dtype=np.int64)))
                fake.expect(Kind.RESULT_RESTART)
                rounds["n"] += 1
                fake.send(W.vector_message(Kind.RESTART_X, np.zeros(params.n, dtype=np.int64)))
        except (W.PeerAborted, DecodeError, OSError):
            pass

    th = threading.Thread(target=bad_signer, daemon=True)
    th.start()
    with pytest.raises(RestartLimitExceeded):
        W.run_user(W.Channel(b, timeout=30), pk, 0, b"m", RandomSource(seed("oversized")), restart_cap=5)
    th.join()
    assert rounds["n"] == 6


def test_concurrent_sessions(toy_keys):
    params, pk, sk = toy_keys
    listener = W.listen()
    addr = listener.getsockname()
    service = W.SignerService(pk, sk)
    box = {}
    srv = threading.Thread(
        target=lambda: box.setdefault("res", W.run_signer(listener, service, 8, RandomSource(seed("srv")))),
        daemon=True,
    )
    srv.start()
    users = [None] * 8

    def client(i):
        ch = W.connect(addr)
        try:
            users[i] = W.run_user(ch, pk, 0, b"msg %d" % i, RandomSource(seed(f"client{i}")))
        finally:
            ch.close()

    threads = [threading.Thread(target=client, args=(i,)) for i in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    srv.join()
    listener.close()
    assert all(S.verify(pk, 0, b"msg %d" % i, u.signature) for i, u in enumerate(users))
    assert all(o.view is not None and W.transcript_is_complete(o.transcript) for o in box["res"])


def test_epoch_guard_waits_for_open_sessions(toy_keys):
    params, pk, sk0 = toy_keys
    sk = SecretKey(0, 2, {"": NodeKey("", sk0.nodes[""].basis.copy())})
    service = W.SignerService(pk, sk)
    a, b = socket.socketpair()
    box = {}
    srv = threading.Thread(
        target=lambda: box.setdefault("out", service.serve(W.Channel(a), RandomSource(seed("epoch")))), daemon=True
    )
    srv.start()
    ch = W.Channel(b)
    ch.send(W.hello(0))
    ch.expect(Kind.X)
    upd = threading.Thread(target=service.update_key, daemon=True)
    upd.start()
    upd.join(0.3)
    assert upd.is_alive() and service.sk.t == 0
    ch.send(W.abort_message(W.AbortCode.PROTOCOL, "bye"))
    srv.join()
    upd.join(30)
    assert not upd.is_alive() and service.sk.t == 1
    assert box["out"].abort is not None


@pytest.mark.slow
def test_grammar_over_many_honest_runs(toy_keys):
    params, pk, sk = toy_keys
    r = RandomSource(seed("grammar-runs"))
    restarted = 0
    for i in range(1000):
        user, signer = W.sign_over_socketpair(pk, sk, 0, b"g%d" % i, r.fork(i))
        assert W.transcript_is_complete(user.transcript) and W.transcript_is_complete(signer.transcript)
        assert [e.message for e in user.transcript] == [e.message for e in signer.transcript]
        restarted += user.restarts > 0
    assert restarted > 500
