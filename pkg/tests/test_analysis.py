import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logdense import analysis as A
from logdense import topology as T
from logdense.topology import Scheme

from .test_topology import layers_and_blocks


def floyd_oracle(topo):
    n = topo.num_nodes
    inf = 10**9
    d = [[inf] * n for _ in range(n)]
    for i in range(n):
        d[i][i] = 0
        for j in topo.inputs[i]:
            d[i][j] = 1
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if d[i][k] + d[k][j] < d[i][j]:
                    d[i][j] = d[i][k] + d[k][j]
    return np.array([[A.UNREACHABLE if v >= inf else v for v in row] for row in d])


def any_topology(scheme, L, blocks):
    if scheme is Scheme.LOGDENSE_V2:
        if len(blocks) < 2:
            blocks = (L,) if L < 2 else (L - L // 2, L // 2)
        return T.log_dense_v2(L, blocks, 3) if len(blocks) > 1 else T.log_dense_v1(L)
    return T.generate(scheme, L, blocks)


schemes = st.sampled_from([s for s in Scheme if s is not Scheme.FC_LOGDENSE])


@given(layers_and_blocks(max_L=30), schemes)
def test_all_methods_match_floyd(lb, scheme):
    L, blocks = lb
    topo = any_topology(scheme, L, blocks)
    ref = floyd_oracle(topo)
    for method in ("bfs", "dp", "queue"):
        assert np.array_equal(A.all_pairs_distances(topo, method), ref), method


@given(layers_and_blocks(max_L=40))
def test_prop1_holds_for_v1(lb):
    L, blocks = lb
    rep = A.verify_prop1(T.log_dense_v1(L, blocks))
    assert rep.passed, rep.failures[:3]
    assert rep.pairs_checked == L * (L + 1) // 2


@given(layers_and_blocks(max_L=40, max_blocks=4).filter(lambda lb: len(lb[1]) >= 2), st.integers(1, 6))
def test_prop1_and_cross_block_for_v2(lb, g):
    L, blocks = lb
    topo = T.log_dense_v2(L, blocks, g)
    assert A.verify_prop1(topo).passed
    ok, worst = A.verify_v2_cross_block(topo)
    assert ok and worst <= topo.n_block


def test_prop1_tight_on_single_block():
    rep = A.verify_prop1(T.log_dense_v1(64))
    assert rep.passed and rep.min_slack == 0


@given(st.integers(2, 64))
def test_dense_mbd_is_one(L):
    assert A.mbd(T.dense_topology(L)).mbd == 1


def test_scheme_ordering_at_64():
    v1 = A.mbd(T.log_dense_v1(64)).mbd
    assert v1 <= 7
    assert v1 < A.mbd(T.nearest(64)).mbd
    assert v1 < A.mbd(T.evenly_spaced(64)).mbd


def test_mbd_witness_is_first_maximal_pair():
    rep = A.mbd(T.nearest(8))
    dist = A.all_pairs_distances(T.nearest(8))
    i, j = rep.witness_pair
    assert dist[i, j] == rep.mbd
    earlier = [(a, b) for a in range(9) for b in range(a) if dist[a, b] == rep.mbd]
    assert earlier[0] == (i, j)


def test_mbd_histogram_and_mean():
    rep = A.mbd(T.dense_topology(4))
    assert rep.distance_histogram == {1: 10}
    assert rep.mean_bd == 1
    assert rep.to_dict()["mean_bd"] == "1"


def test_backprop_distance():
    topo = T.log_dense_v1(8)
    assert A.backprop_distance(topo, 8, 7) == 1
    assert A.backprop_distance(topo, 8, 1) == A.bfs_distances(topo, 8)[1]
    with pytest.raises(ValueError):
        A.backprop_distance(topo, 3, 5)


def test_unknown_method():
    with pytest.raises(ValueError):
        A.all_pairs_distances(T.log_dense_v1(4), "magic")


def test_degree_stats_dense():
    s = A.degree_stats(T.dense_topology(4))
    assert s.mean_in_degree == Fraction(10, 4)
    assert s.total_edges == 10
    assert s.max_in_degree == 4
    assert s.max_out_degree == 4


def test_hubs():
    assert A.hubs(T.loglog_topology(16)) == {0, 4, 8, 12, 16}
    assert A.hubs(T.loglog_topology(2)) == {0, 1, 2}
    assert A.hubs(T.loglog_topology(1)) == frozenset()
    with pytest.raises(ValueError):
        A.hubs(T.log_dense_v1(8))


@given(st.integers(2, 120))
def test_fig6a_rows_are_exact_counts(L):
    (row,) = A.fig6a_rows([L])
    direct = sum(len(T.loglog_topology(L).inputs[i]) for i in range(1, L + 1))
    assert row.mean_min1 == Fraction(direct, L)
    assert row.delta >= 0


def test_prop2_small_sweep():
    rows = A.verify_prop2([16, 64, 256])
    assert all(r.passed for r in rows)
    assert [r.mbd for r in rows] == [4, 4, 5]


@given(st.integers(4, 300))
def test_loglog_mbd_bound(L):
    topo = T.loglog_topology(L)
    assert A.mbd(topo).mbd <= A.mbd_bound(topo)


def test_ceil_log2():
    assert [A.ceil_log2(n) for n in (1, 2, 3, 4, 5, 1024, 1025)] == [0, 1, 2, 2, 3, 10, 11]


def test_analysis_row_columns():
    row = A.analysis_row(T.log_dense_v1(64))
    assert list(row) == ["scheme", "L", "n_block", "edges", "mean_in", "mbd", "bound", "pass"]
    assert row["mbd"] <= row["bound"] == math.ceil(math.log2(64)) + 1
