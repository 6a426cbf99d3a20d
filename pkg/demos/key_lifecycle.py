"""Walk a depth-3 key through all eight periods.

Shows the node set held at each period, signs one message per period, and
checks that an evolved key can no longer reach any earlier leaf.

    python3 demos/key_lifecycle.py
"""

from fsbs import params, scheme, timetree
from fsbs.errors import NotAnAncestor
from fsbs.gaussian import RandomSource


def main():
    rng = RandomSource(b"key-lifecycle-demo".ljust(32, b"."))
    p, pk, sk = scheme.setup(params.derive(n=2, ell=3, q=257, k=16, kappa=4, sigma=25), rng.fork(b"setup"))
    print(f"tree depth {p.ell}, {p.tau} periods, sigma = {p.sigma:g}, signature length {p.dim}")

    signatures = []
    while not sk.is_empty:
        t = sk.t
        nodes = ", ".join(w or "root" for w in sorted(sk.nodes, key=timetree.node_order))
        mu = f"report for period {t}".encode()
        res = scheme.sign_local(pk, sk, t, mu, rng.fork(t))
        signatures.append((t, mu, res.signature))
        print(f"t={t}  nodes {{{nodes}}}  restarts {res.restarts:2d}  verifies {scheme.verify(pk, t, mu, res.signature)}")

        blocked = 0
        for past in range(t):
            leaf = timetree.leaf_path(past, p.ell)
            for node in sk.nodes.values():
                try:
                    timetree.derive_node_key(pk, node, leaf)
                except NotAnAncestor:
                    blocked += 1
        if t:
            print(f"      every stored node refuses all {t} past leaves ({blocked} refusals)")
        sk = timetree.key_update(pk, sk)

    print("key evolved past the last period; it now holds no trapdoors:", sk.nodes == {})
    still_valid = all(scheme.verify(pk, t, mu, sig) for t, mu, sig in signatures)
    print("signatures from every period still verify:", still_valid)


if __name__ == "__main__":
    main()
