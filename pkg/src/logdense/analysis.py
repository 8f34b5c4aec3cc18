"""Backpropagation distances, MBD and degree statistics.

Distances follow edges from a consumer to its direct inputs, so
``BD(i, j)`` is defined for ``i > j``.  Compression nodes are traversed as
intermediate hops but never appear as endpoints of a reported pair.
"""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .topology import Scheme, Topology, lglg_key_set, loglog_topology

__all__ = [
    "BDReport",
    "DegreeStats",
    "Prop1Report",
    "Prop2Row",
    "Fig6aRow",
    "bfs_distances",
    "backprop_distance",
    "all_pairs_distances",
    "mbd",
    "verify_prop1",
    "verify_v2_cross_block",
    "verify_prop2",
    "degree_stats",
    "hubs",
    "fig6a_rows",
    "mbd_bound",
    "analysis_row",
    "ceil_log2",
    "loglog2",
]

UNREACHABLE = -1


def ceil_log2(n: int) -> int:
    return (n - 1).bit_length() if n > 0 else 0


def loglog2(L: int) -> float:
    return math.log2(math.log2(L))


@dataclass
class BDReport:
    mbd: int
    witness_pair: tuple[int, int] | None
    distance_histogram: dict[int, int]
    mean_bd: Fraction
    unreachable_pairs: int = 0

    def to_dict(self) -> dict:
        return {
            "mbd": self.mbd,
            "witness_pair": list(self.witness_pair) if self.witness_pair else None,
            "distance_histogram": {str(k): v for k, v in sorted(self.distance_histogram.items())},
            "mean_bd": str(self.mean_bd),
            "unreachable_pairs": self.unreachable_pairs,
        }


@dataclass
class DegreeStats:
    mean_in_degree: Fraction
    max_in_degree: int
    max_out_degree: int
    total_edges: int


def bfs_distances(topo: Topology, source: int) -> list[int]:
    """Hop counts from ``source`` to every node; ``-1`` where unreachable."""
    dist = [UNREACHABLE] * topo.num_nodes
    dist[source] = 0
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for src in topo.inputs[node]:
            if dist[src] == UNREACHABLE:
                dist[src] = dist[node] + 1
                queue.append(src)
    return dist


def backprop_distance(topo: Topology, src: int, dst: int) -> int | None:
    """Shortest path length from ``src`` down to ``dst`` or None if unreachable."""
    if not src > dst:
        raise ValueError(f"backprop distance needs src > dst, got ({src}, {dst})")
    d = bfs_distances(topo, src)[dst]
    return None if d == UNREACHABLE else d


def _adjacency(topo: Topology) -> sparse.csr_matrix:
    rows = [dst for dst, _ in topo.edges()]
    cols = [src for _, src in topo.edges()]
    n = topo.num_nodes
    data = np.ones(len(rows), dtype=bool)
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def _all_pairs_bfs(topo: Topology) -> np.ndarray:
    # level-synchronous BFS from all sources at once
    n = topo.num_nodes
    adj = _adjacency(topo)
    dist = np.full((n, n), UNREACHABLE, dtype=np.int32)
    np.fill_diagonal(dist, 0)
    frontier = sparse.identity(n, dtype=bool, format="csr")
    level = 0
    while frontier.nnz:
        level += 1
        reached = (frontier @ adj).tocoo()
        r, c = reached.row, reached.col
        fresh = dist[r, c] == UNREACHABLE
        r, c = r[fresh], c[fresh]
        dist[r, c] = level
        frontier = sparse.csr_matrix(
            (np.ones(len(r), dtype=bool), (r, c)), shape=(n, n)
        )
    return dist


def _all_pairs_dp(topo: Topology) -> np.ndarray:
    # inputs precede consumers, so one pass in node order settles every row
    n = topo.num_nodes
    big = np.iinfo(np.int32).max // 2
    dist = np.full((n, n), big, dtype=np.int32)
    for node, ins in enumerate(topo.inputs):
        if ins:
            dist[node] = dist[list(ins)].min(axis=0) + 1
        dist[node, node] = 0
    dist[dist >= big] = UNREACHABLE
    return dist


def all_pairs_distances(topo: Topology, method: str = "bfs") -> np.ndarray:
    """``D[i, j]`` = BD from node i to node j (``-1`` if unreachable).

    ``method="bfs"`` runs breadth-first search from every node; ``"dp"``
    relaxes rows in topological order.  Both are exact.
    """
    if method == "bfs":
        return _all_pairs_bfs(topo)
    if method == "dp":
        return _all_pairs_dp(topo)
    if method == "queue":
        return np.array([bfs_distances(topo, s) for s in range(topo.num_nodes)], dtype=np.int32)
    raise ValueError(f"unknown method {method!r}")


def _layer_pair_block(topo: Topology, dist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    layers = np.array(topo.layer_nodes)
    sub = dist[np.ix_(layers, layers)]
    i, j = np.tril_indices(len(layers), -1)
    return layers, sub[i, j]


def mbd(topo: Topology, method: str = "bfs", dist: np.ndarray | None = None) -> BDReport:
    """Maximum backpropagation distance over all layer pairs ``i > j``."""
    if dist is None:
        dist = all_pairs_distances(topo, method)
    layers, values = _layer_pair_block(topo, dist)
    reachable = values[values != UNREACHABLE]
    unreachable = int(len(values) - len(reachable))
    if len(reachable) == 0:
        return BDReport(0, None, {}, Fraction(0), unreachable)
    hist = Counter(reachable.tolist())
    worst = int(reachable.max())
    # first pair in (i ascending, j ascending) order that realizes the maximum
    i_idx, j_idx = np.tril_indices(len(layers), -1)
    k = int(np.flatnonzero(values == worst)[0])
    witness = (int(layers[i_idx[k]]), int(layers[j_idx[k]]))
    mean = Fraction(int(reachable.sum()), len(reachable))
    return BDReport(worst, witness, dict(sorted(hist.items())), mean, unreachable)


@dataclass
class Prop1Report:
    L: int
    n_block: int
    pairs_checked: int
    failures: list[tuple[int, int, int, int]] = field(default_factory=list)
    min_slack: int | None = None
    max_slack: int | None = None

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        d = asdict(self)
        d["failures"] = [list(f) for f in self.failures[:20]]
        d["passed"] = self.passed
        return d


def _ceil_log2_array(diff: np.ndarray) -> np.ndarray:
    out = np.zeros_like(diff)
    nz = diff > 1
    out[nz] = np.ceil(np.log2(diff[nz])).astype(diff.dtype)
    # guard float rounding at exact powers of two
    pow2 = nz & ((diff & (diff - 1)) == 0)
    out[pow2] = np.log2(diff[pow2]).round().astype(diff.dtype)
    return out


def verify_prop1(topo: Topology, method: str = "bfs") -> Prop1Report:
    """Check ``BD(i, j) <= ceil(log2 |i-j|) + n_block`` for every layer pair."""
    if topo.scheme not in (Scheme.LOGDENSE_V1, Scheme.LOGDENSE_V2):
        raise ValueError(f"verify_prop1 expects a Log-DenseNet topology, got {topo.scheme.value}")
    dist = all_pairs_distances(topo, method)
    layers = topo.layer_nodes
    idx = np.arange(len(layers), dtype=np.int64)
    i, j = np.tril_indices(len(layers), -1)
    bd = dist[np.ix_(layers, layers)][i, j].astype(np.int64)
    bound = _ceil_log2_array(idx[i] - idx[j]) + topo.n_block
    report = Prop1Report(L=topo.L, n_block=topo.n_block, pairs_checked=len(bd))
    if len(bd) == 0:
        return report
    bad = (bd == UNREACHABLE) | (bd > bound)
    report.failures = [
        (int(idx[a]), int(idx[b]), int(d), int(bo))
        for a, b, d, bo in zip(i[bad], j[bad], bd[bad], bound[bad])
    ]
    slack = bound - bd
    report.min_slack = int(slack.min())
    report.max_slack = int(slack.max())
    return report


def verify_v2_cross_block(topo: Topology, method: str = "bfs") -> tuple[bool, int]:
    """Every cross-block layer pair of a V2 topology is within ``n_block`` hops.

    Returns ``(passed, worst cross-block distance)``.
    """
    if topo.scheme is not Scheme.LOGDENSE_V2:
        raise ValueError("cross-block check applies to logdense-v2 topologies")
    dist = all_pairs_distances(topo, method)
    layers = np.array(topo.layer_nodes)
    blocks = np.array(topo.blocks)[layers]
    i, j = np.tril_indices(len(layers), -1)
    cross = blocks[i] != blocks[j]
    d = dist[np.ix_(layers, layers)][i, j][cross]
    if len(d) == 0:
        return True, 0
    worst = int(d.max())
    return bool((d != UNREACHABLE).all() and worst <= topo.n_block), worst


@dataclass
class Prop2Row:
    L: int
    n_block: int
    connections: int
    leading_term: float
    residual: float
    connection_bound: float
    mbd: int
    mbd_bound: int
    mbd_no_step_b: int | None = None
    mbd_no_step_b_bound: int | None = None

    @property
    def connections_ok(self) -> bool:
        return self.connections <= self.connection_bound

    @property
    def mbd_ok(self) -> bool:
        return self.mbd <= self.mbd_bound

    @property
    def no_step_b_ok(self) -> bool:
        if self.mbd_no_step_b is None:
            return True
        return self.mbd_no_step_b <= self.mbd_no_step_b_bound

    @property
    def passed(self) -> bool:
        return self.connections_ok and self.mbd_ok and self.no_step_b_ok


def verify_prop2(
    L_values: Sequence[int],
    block_sizes: Sequence[Sequence[int]] | None = None,
    slack_per_layer: float = 3.0,
    check_without_step_b: bool = True,
    method: str = "bfs",
) -> list[Prop2Row]:
    """LogLog edge count against 1.5·L·log2 log2 L + slack, and MBD against its ceiling.

    The ``o(L log log L)`` term is pinned to ``slack_per_layer * L``.
    """
    if not L_values:
        raise ValueError("L_values must be non-empty")
    rows = []
    for n, L in enumerate(L_values):
        if L < 2:
            raise ValueError(f"L must be >= 2 for a log log bound, got {L}")
        sizes = block_sizes[n] if block_sizes else None
        topo = loglog_topology(L, sizes, min_inputs=1)
        ll = loglog2(L)
        lead = 1.5 * L * ll
        report = mbd(topo, method)
        row = Prop2Row(
            L=L,
            n_block=topo.n_block,
            connections=topo.num_edges,
            leading_term=lead,
            residual=(topo.num_edges - lead) / L,
            connection_bound=lead + slack_per_layer * L,
            mbd=report.mbd,
            mbd_bound=math.ceil(ll) + topo.n_block + 1,
        )
        if check_without_step_b:
            bare = loglog_topology(L, sizes, min_inputs=1, step_b=False)
            row.mbd_no_step_b = mbd(bare, method).mbd
            row.mbd_no_step_b_bound = 2 + 2 * math.ceil(ll) + topo.n_block - 1
        rows.append(row)
    return rows


def degree_stats(topo: Topology) -> DegreeStats:
    ins = [len(x) for x in topo.inputs]
    outs = Counter(src for _, src in topo.edges())
    feature_in = sum(ins[n] for n in topo.feature_nodes)
    return DegreeStats(
        mean_in_degree=Fraction(feature_in, topo.L),
        max_in_degree=max(ins),
        max_out_degree=max(outs.values(), default=0),
        total_edges=sum(ins),
    )


def hubs(topo: Topology) -> frozenset[int]:
    """Layers densely connected by the root ``lglg_conn(0, L)`` call."""
    if topo.scheme is not Scheme.LOGLOG:
        raise ValueError(f"hubs are defined for loglog topologies, got {topo.scheme.value}")
    return frozenset(topo.scheme_params.get("hubs", lglg_key_set(0, topo.L)))


@dataclass
class Fig6aRow:
    L: int
    mean_min1: Fraction
    mean_min4: Fraction | None

    @property
    def delta(self) -> Fraction | None:
        return None if self.mean_min4 is None else self.mean_min4 - self.mean_min1

    @property
    def min1_in_band(self) -> bool:
        return 3 <= self.mean_min1 <= 4

    @property
    def delta_in_band(self) -> bool | None:
        d = self.delta
        return None if d is None else 1 <= d <= Fraction(3, 2)


def fig6a_rows(L_values: Iterable[int], min4_limit: int = 1700) -> list[Fig6aRow]:
    """Mean in-degree of LogLog with ``min_inputs`` 1 and 4 (the latter up to ``min4_limit``)."""
    rows = []
    for L in L_values:
        m1 = degree_stats(loglog_topology(L, min_inputs=1)).mean_in_degree
        m4 = None
        if L <= min4_limit:
            m4 = degree_stats(loglog_topology(L, min_inputs=4)).mean_in_degree
        rows.append(Fig6aRow(L, m1, m4))
    return rows


def mbd_bound(topo: Topology) -> int | None:
    """Proven MBD ceiling for the scheme, or None where no bound is claimed."""
    L, nb = topo.L, topo.n_block
    if topo.scheme is Scheme.DENSE:
        return 1
    if topo.scheme in (Scheme.LOGDENSE_V1, Scheme.FC_LOGDENSE):
        return ceil_log2(L) + nb
    if topo.scheme is Scheme.LOGDENSE_V2:
        return max(nb, ceil_log2(max(topo.block_sizes) - 1) + 1)
    if topo.scheme is Scheme.LOGLOG:
        return (math.ceil(loglog2(L)) if L >= 2 else 0) + nb + 1
    if topo.scheme is Scheme.NEAREST_HALF_AND_LOG:
        return 2
    return None


def analysis_row(topo: Topology, method: str = "bfs") -> dict:
    """One CSV row: scheme, L, n_block, edges, mean_in, mbd, bound, pass."""
    stats = degree_stats(topo)
    report = mbd(topo, method)
    bound = mbd_bound(topo)
    ok = report.unreachable_pairs == 0 and (bound is None or report.mbd <= bound)
    return {
        "scheme": topo.scheme.value,
        "L": topo.L,
        "n_block": topo.n_block,
        "edges": stats.total_edges,
        "mean_in": f"{float(stats.mean_in_degree):.6f}",
        "mbd": report.mbd,
        "bound": "" if bound is None else bound,
        "pass": ok,
    }
