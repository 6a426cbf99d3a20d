import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsbs import timetree as tt
from fsbs import zq
from fsbs.errors import LastPeriod, NotAnAncestor

from oracles import brute_force_cover


def test_leaf_paths():
    assert tt.leaf_path(0, 3) == "000"
    assert tt.leaf_path(5, 3) == "101"
    assert tt.leaf_path(7, 3) == "111"
    assert tt.leaf_path(0, 0) == ""
    for bad in (-1, 8):
        with pytest.raises(ValueError):
            tt.leaf_path(bad, 3)


def test_cover_examples():
    assert tt.minimal_cover(0, 3) == [""]
    assert tt.minimal_cover(1, 3) == ["1", "01", "001"]
    assert set(tt.minimal_cover(1, 3)) == {"001", "01", "1"}
    assert tt.minimal_cover(2, 3) == ["1", "01"]
    assert tt.minimal_cover(5, 3) == ["11", "101"]
    assert tt.minimal_cover(7, 3) == ["111"]


def test_cover_matches_exhaustive_search():
    for ell in range(6):
        for t in range(2**ell):
            assert sorted(tt.minimal_cover(t, ell)) == sorted(brute_force_cover(t, ell)), (ell, t)


@settings(max_examples=300, deadline=None)
@given(ell=st.integers(1, 12), data=st.data())
def test_cover_structure(ell, data):
    t = data.draw(st.integers(0, 2**ell - 1))
    cover = tt.minimal_cover(t, ell)
    assert len(cover) == 1 if t == 0 else 1 <= len(cover) <= ell
    for leaf in data.draw(st.lists(st.integers(0, 2**ell - 1), max_size=20)):
        hits = sum(tt.is_prefix(w, tt.leaf_path(leaf, ell)) for w in cover)
        assert hits == (1 if leaf >= t else 0)


def test_node_matrix_blocks(depth3_keys):
    _, pk, _ = depth3_keys
    assert np.array_equal(tt.node_matrix(pk, ""), pk.A0)
    assert np.array_equal(tt.node_matrix(pk, "01"), np.concatenate([pk.A0, pk.A[0][0], pk.A[1][1]], axis=1))
    assert np.array_equal(
        tt.node_matrix(pk, "001"), np.concatenate([pk.A0, pk.A[0][0], pk.A[1][0], pk.A[2][1]], axis=1)
    )


def test_derive_node_key_routes(depth3_keys):
    params, pk, sk0 = depth3_keys
    root = sk0.nodes[""]
    assert tt.derive_node_key(pk, root, "") is root
    one = tt.derive_node_key(pk, root, "1")
    F1 = tt.node_matrix(pk, "1")
    assert one.basis.shape == (2 * params.m, 2 * params.m)
    assert zq.is_basis_of_lambda_perp(F1, one.basis, params.q)
    direct = tt.derive_node_key(pk, root, "01")
    chained = tt.derive_node_key(pk, tt.derive_node_key(pk, root, "0"), "01")
    F01 = tt.node_matrix(pk, "01")
    assert zq.is_basis_of_lambda_perp(F01, direct.basis, params.q)
    assert zq.is_basis_of_lambda_perp(F01, chained.basis, params.q)
    assert zq.gs_norm(direct.basis) == pytest.approx(zq.gs_norm(root.basis), rel=1e-6)
    with pytest.raises(NotAnAncestor):
        tt.derive_node_key(pk, one, "01")


def test_key_walk_depth3(depth3_keys):
    params, pk, sk0 = depth3_keys
    sk = tt.SecretKey(0, 3, {"": tt.NodeKey("", sk0.nodes[""].basis.copy())})
    seen = []
    while not sk.is_empty:
        assert sk.check(pk)
        seen.append(sorted(sk.nodes, key=tt.node_order))
        sk = tt.key_update(pk, sk)
    assert seen[1] == ["1", "01", "001"]
    assert seen[2] == ["1", "01"]
    assert seen[5] == ["11", "101"]
    assert len(seen) == 8
    assert sk.t == 8 and sk.nodes == {} and sk.check(pk)
    with pytest.raises(LastPeriod):
        tt.key_update(pk, sk)
    with pytest.raises(LastPeriod):
        sk.leaf_key(pk)


def test_key_update_wipes_old_key(depth3_keys):
    _, pk, sk0 = depth3_keys
    sk = tt.SecretKey(0, 3, {"": tt.NodeKey("", sk0.nodes[""].basis.copy())})
    old_basis = sk.nodes[""].basis
    nxt = tt.key_update(pk, sk)
    assert not sk.nodes and not np.any(old_basis)
    assert nxt.t == 1


def test_two_updates_reach_direct_cover(depth3_keys):
    _, pk, sk0 = depth3_keys
    sk = tt.SecretKey(0, 3, {"": tt.NodeKey("", sk0.nodes[""].basis.copy())})
    sk = tt.update_to(pk, sk, 3)
    assert sorted(sk.nodes, key=tt.node_order) == tt.minimal_cover(3, 3)
    with pytest.raises(ValueError):
        tt.update_to(pk, sk, 1)
    sk = tt.key_update(pk, tt.key_update(pk, sk))
    assert sorted(sk.nodes, key=tt.node_order) == tt.minimal_cover(5, 3)


def test_leaf_key_is_cached_and_valid(depth3_keys):
    params, pk, sk0 = depth3_keys
    sk = tt.SecretKey(0, 3, {"": tt.NodeKey("", sk0.nodes[""].basis.copy())})
    sk = tt.update_to(pk, sk, 6)
    leaf = sk.leaf_key(pk)
    assert leaf.node == "110"
    assert sk.leaf_key(pk) is leaf
    assert zq.is_basis_of_lambda_perp(pk.F(6), leaf.basis, params.q)


def test_past_leaves_are_unreachable(depth3_keys):
    _, pk, sk0 = depth3_keys
    sk = tt.SecretKey(0, 3, {"": tt.NodeKey("", sk0.nodes[""].basis.copy())})
    sk = tt.update_to(pk, sk, 4)
    for past in range(4):
        leaf = tt.leaf_path(past, 3)
        for node in sk.nodes.values():
            with pytest.raises(NotAnAncestor):
                tt.derive_node_key(pk, node, leaf)
        with pytest.raises(NotAnAncestor):
            sk.covering_node(leaf)
