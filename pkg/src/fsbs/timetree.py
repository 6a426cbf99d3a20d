"""Binary time tree: leaf paths, minimal covers, node matrices, key evolution.

Nodes are bit strings ("" is the root). Leaf t of a depth-l tree is the
big-endian l-bit expansion of t. The secret key for period t holds one
trapdoor per node of the minimal cover of leaves t..2^l - 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import zq
from .errors import InvalidTrapdoor, LastPeriod, NotAnAncestor
from .gaussian import PreparedBasis
from .trapdoor import ext_basis


def _check_period(t: int, ell: int):
    if not 0 <= t < 2**ell:
        raise ValueError(f"period {t} out of range for depth {ell}")


def leaf_path(t: int, ell: int) -> str:
    _check_period(t, ell)
    return format(t, f"0{ell}b") if ell else ""


def node_order(w: str) -> tuple[int, int]:
    """Canonical (depth, value) sort key."""
    return (len(w), int(w, 2) if w else 0)


def is_prefix(a: str, w: str) -> bool:
    return w.startswith(a)


def minimal_cover(t: int, ell: int) -> list[str]:
    """Smallest node set covering leaves t..2^l-1 and no leaf before t."""
    path = leaf_path(t, ell)
    if t == 0:
        return [""]
    head = path.rstrip("0")
    cover = [head] + [head[:i] + "1" for i, bit in enumerate(head) if bit == "0"]
    return sorted(cover, key=node_order)


def node_matrix(pk, w: str) -> np.ndarray:
    """[A_0 | A_1^(w_1) | ... | A_len^(w_len)]."""
    blocks = [pk.A0] + [pk.A[i][int(bit)] for i, bit in enumerate(w)]
    return np.concatenate(blocks, axis=1)


@dataclass
class NodeKey:
    node: str
    basis: np.ndarray
    _prepared: PreparedBasis | None = field(default=None, repr=False, compare=False)

    def prepared(self) -> PreparedBasis:
        if self._prepared is None:
            self._prepared = PreparedBasis.of(self.basis)
        return self._prepared

    def wipe(self):
        self.basis[...] = 0
        if self._prepared is not None:
            self._prepared.q_mat[...] = 0
            self._prepared.coeffs[...] = 0
            self._prepared = None


def derive_node_key(pk, ancestor: NodeKey, w: str, check: bool = True) -> NodeKey:
    """Delegate a trapdoor from ``ancestor`` down to its descendant ``w``."""
    if not is_prefix(ancestor.node, w):
        raise NotAnAncestor(f"{ancestor.node or 'root'} is not an ancestor of {w or 'root'}")
    if len(w) > pk.params.ell:
        raise ValueError("node deeper than the tree")
    if w == ancestor.node:
        return ancestor
    m = pk.params.m
    F = node_matrix(pk, w)
    basis = ext_basis(F, (0, (len(ancestor.node) + 1) * m), ancestor.basis, pk.params.q, check_input=False)
    if check and not zq.is_basis_of_lambda_perp(F, basis, pk.params.q):
        raise InvalidTrapdoor(f"delegated basis for {w} failed verification")
    return NodeKey(w, basis)


@dataclass
class SecretKey:
    """Trapdoors for the minimal cover of period t; t == 2^l is the empty key."""

    t: int
    ell: int
    nodes: dict[str, NodeKey]
    _leaf_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def is_empty(self) -> bool:
        return self.t >= 2**self.ell

    def ordered_nodes(self) -> list[NodeKey]:
        return [self.nodes[w] for w in sorted(self.nodes, key=node_order)]

    def covering_node(self, leaf: str) -> NodeKey:
        hits = [k for w, k in self.nodes.items() if is_prefix(w, leaf)]
        if len(hits) != 1:
            raise NotAnAncestor(f"no stored node covers leaf {leaf}")
        return hits[0]

    def leaf_key(self, pk) -> NodeKey:
        """Trapdoor for the current leaf, derived once per period and cached in memory."""
        if self.is_empty:
            raise LastPeriod("the key has been evolved past the last period")
        leaf = leaf_path(self.t, self.ell)
        if leaf not in self._leaf_cache:
            self._leaf_cache[leaf] = derive_node_key(pk, self.covering_node(leaf), leaf)
        return self._leaf_cache[leaf]

    def check(self, pk) -> bool:
        """Structural and lattice invariants."""
        if self.is_empty:
            return not self.nodes
        if sorted(self.nodes, key=node_order) != minimal_cover(self.t, self.ell):
            return False
        return all(
            zq.is_basis_of_lambda_perp(node_matrix(pk, w), k.basis, pk.params.q) for w, k in self.nodes.items()
        )

    def wipe(self):
        for k in self.nodes.values():
            k.wipe()
        for k in self._leaf_cache.values():
            if k.node not in self.nodes:
                k.wipe()
        self.nodes.clear()
        self._leaf_cache.clear()


def root_key(ell: int, basis) -> SecretKey:
    return SecretKey(0, ell, {"": NodeKey("", zq.as_int_array(basis))})


def empty_key(ell: int) -> SecretKey:
    return SecretKey(2**ell, ell, {})


def key_update(pk, sk: SecretKey) -> SecretKey:
    """Evolve sk_t to sk_(t+1); the input key is wiped.

    New cover nodes are delegated from their deepest ancestor held in sk_t.
    From the last period the result is the empty key.
    """
    if sk.is_empty:
        raise LastPeriod("no period after the last one")
    ell = sk.ell
    if sk.t == 2**ell - 1:
        sk.wipe()
        return empty_key(ell)
    new_cover = minimal_cover(sk.t + 1, ell)
    nodes = {}
    for w in new_cover:
        if w in sk.nodes:
            nodes[w] = NodeKey(w, sk.nodes[w].basis.copy())
            continue
        sources = [v for v in sk.nodes if is_prefix(v, w)]
        src = max(sources, key=len)
        nodes[w] = derive_node_key(pk, sk.nodes[src], w)
    sk.wipe()
    return SecretKey(sk.t + 1, ell, nodes)


def update_to(pk, sk: SecretKey, target: int) -> SecretKey:
    if target < sk.t:
        raise ValueError("keys cannot be evolved backwards")
    while sk.t < target:
        sk = key_update(pk, sk)
    return sk
