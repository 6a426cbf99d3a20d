"""One blind signing session over a TCP loopback connection.

The signer and user run on separate threads and talk only through framed
messages. Prints the message flow, the signer's recorded view, and a check
that the view's z is not the signature's z'.

    python3 demos/blind_session.py
"""

import threading

import numpy as np

from fsbs import params, protocol, scheme
from fsbs.gaussian import RandomSource


def main():
    rng = RandomSource(b"blind-session-demo".ljust(32, b"."))
    p, pk, sk = scheme.setup(params.preset("toy-T0"), rng.fork(b"setup"))
    listener = protocol.listen()
    addr = listener.getsockname()
    service = protocol.SignerService(pk, sk)
    outcome = {}
    server = threading.Thread(
        target=lambda: outcome.setdefault("signer", protocol.run_signer(listener, service, 1, rng.fork(b"signer"))[0])
    )
    server.start()

    mu = b"a message the signer never sees"
    ch = protocol.connect(addr)
    user = protocol.run_user(ch, pk, 0, mu, rng.fork(b"user"))
    ch.close()
    server.join()
    listener.close()

    print("message flow seen by the user:")
    for entry in user.transcript:
        arrow = "->" if entry.direction == "send" else "<-"
        print(f"  {arrow} {entry.message.kind.name:<15} {len(entry.message.payload):6d} bytes")
    print(f"restarts: {user.restarts}")

    view = outcome["signer"].view
    sig = user.signature
    print("signature verifies:", scheme.verify(pk, 0, mu, sig))
    print("signer view holds t, r, e, z:", sorted(vars(view)))
    print("view z equals signature z':", bool(np.array_equal(view.z, sig.z)))
    print(f"|z'| = {np.linalg.norm(sig.z.astype(float)):.4g}  bound = {p.z_bound:.4g}")


if __name__ == "__main__":
    main()
