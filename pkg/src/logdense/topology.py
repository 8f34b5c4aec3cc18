"""Connection-pattern generators.

Every generator returns a :class:`Topology`: an explicit DAG over node ids
``0..N-1`` where node 0 is the initial convolution and an edge ``i -> j``
means node ``i`` takes node ``j`` as a direct input.  Feature layer ``k``
(1-based) is node ``k`` for every scheme except Log-DenseNet V2, which
interleaves one compression node after each block boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

__all__ = [
    "ConfigError",
    "NodeKind",
    "Scheme",
    "Topology",
    "FC_BLOCK_SIZES",
    "dense_topology",
    "log_dense_v1",
    "log_dense_v2",
    "nearest",
    "evenly_spaced",
    "nearest_half_and_log",
    "lglg_conn",
    "lglg_key_set",
    "loglog_topology",
    "fc_log_dense_topology",
    "fc_levels",
    "generate",
    "logdense_offsets",
    "round_half_up",
]

FC_BLOCK_SIZES = (4, 5, 7, 10, 12, 15, 12, 10, 7, 5, 4)


class ConfigError(ValueError):
    """Invalid generator or network configuration."""


class NodeKind(str, Enum):
    INITIAL = "initial"
    FEATURE = "feature"
    COMPRESSION = "compression"


class Scheme(str, Enum):
    DENSE = "dense"
    LOGDENSE_V1 = "logdense-v1"
    LOGDENSE_V2 = "logdense-v2"
    LOGLOG = "loglog"
    NEAREST = "nearest"
    EVENLY_SPACED = "evenly-spaced"
    NEAREST_HALF_AND_LOG = "nearest-half-and-log"
    FC_LOGDENSE = "fc-logdense"


@dataclass(frozen=True)
class Topology:
    scheme: Scheme
    L: int
    block_sizes: tuple[int, ...]
    kinds: tuple[NodeKind, ...]
    blocks: tuple[int, ...]
    inputs: tuple[tuple[int, ...], ...]
    scheme_params: dict[str, Any] = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return len(self.kinds)

    @property
    def n_block(self) -> int:
        return len(self.block_sizes)

    @property
    def num_edges(self) -> int:
        return sum(len(ins) for ins in self.inputs)

    @property
    def feature_nodes(self) -> list[int]:
        return [n for n, k in enumerate(self.kinds) if k is NodeKind.FEATURE]

    @property
    def layer_nodes(self) -> list[int]:
        """Nodes that are layers ``x_0..x_L`` (everything but compression nodes)."""
        return [n for n, k in enumerate(self.kinds) if k is not NodeKind.COMPRESSION]

    @property
    def compression_nodes(self) -> list[int]:
        return [n for n, k in enumerate(self.kinds) if k is NodeKind.COMPRESSION]

    def layer_index(self, node: int) -> int:
        """Depth index ``i`` of the layer ``x_i`` stored at ``node``."""
        if self.kinds[node] is NodeKind.COMPRESSION:
            raise ValueError(f"node {node} is a compression node")
        return node - sum(1 for c in self.compression_nodes if c < node)

    def node_of_layer(self, layer: int) -> int:
        return self.layer_nodes[layer]

    def block_nodes(self, block: int) -> list[int]:
        """Feature nodes of ``block`` in depth order."""
        return [n for n in self.feature_nodes if self.blocks[n] == block]

    def consumers(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for node, ins in enumerate(self.inputs):
            for src in ins:
                out[src].append(node)
        return out

    def edges(self) -> Iterable[tuple[int, int]]:
        """``(consumer, producer)`` pairs in node order."""
        for node, ins in enumerate(self.inputs):
            for src in ins:
                yield node, src

    def check(self) -> None:
        """Raise ``ValueError`` if any structural invariant is violated."""
        n = self.num_nodes
        if len(self.blocks) != n or len(self.inputs) != n:
            raise ConfigError("kinds, blocks and inputs must have equal length")
        if self.kinds[0] is not NodeKind.INITIAL:
            raise ConfigError("node 0 must be the initial layer")
        if sum(1 for k in self.kinds if k is NodeKind.INITIAL) != 1:
            raise ConfigError("exactly one initial node expected")
        if self.compression_nodes and self.scheme is not Scheme.LOGDENSE_V2:
            raise ConfigError("compression nodes only exist in V2 topologies")
        if len(self.feature_nodes) != self.L or sum(self.block_sizes) != self.L:
            raise ConfigError("feature node count does not match L")
        for node, ins in enumerate(self.inputs):
            if len(set(ins)) != len(ins):
                raise ConfigError(f"duplicate inputs at node {node}")
            if any(not 0 <= src < node for src in ins):
                raise ConfigError(f"node {node} has a non-topological input")
            if self.kinds[node] is not NodeKind.INITIAL and not ins:
                raise ConfigError(f"node {node} has no inputs")
        if any(b1 > b2 for b1, b2 in zip(self.blocks, self.blocks[1:])):
            raise ConfigError("block assignment must be non-decreasing")

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "scheme": self.scheme.value,
            "L": self.L,
            "block_sizes": list(self.block_sizes),
            "scheme_params": self.scheme_params,
            "nodes": [
                {"id": n, "kind": k.value, "block": b}
                for n, (k, b) in enumerate(zip(self.kinds, self.blocks))
            ],
            "inputs": {str(n): list(ins) for n, ins in enumerate(self.inputs)},
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Topology":
        try:
            nodes = sorted(data["nodes"], key=lambda d: d["id"])
            if [d["id"] for d in nodes] != list(range(len(nodes))):
                raise ConfigError("node ids must be contiguous from 0")
            topo = cls(
                scheme=Scheme(data["scheme"]),
                L=int(data["L"]),
                block_sizes=tuple(int(b) for b in data["block_sizes"]),
                kinds=tuple(NodeKind(d["kind"]) for d in nodes),
                blocks=tuple(int(d["block"]) for d in nodes),
                inputs=tuple(
                    tuple(int(s) for s in data["inputs"].get(str(n), []))
                    for n in range(len(nodes))
                ),
                scheme_params=dict(data.get("scheme_params", {})),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed topology document: {exc!r}") from exc
        topo.check()
        return topo

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        return cls.from_dict(json.loads(text))

    def to_dot(self) -> str:
        lines = [f'digraph "{self.scheme.value}_L{self.L}" {{']
        for n, (k, b) in enumerate(zip(self.kinds, self.blocks)):
            lines.append(f'  n{n} [label="{n}", kind="{k.value}", block={b}];')
        for dst, src in self.edges():
            lines.append(f"  n{dst} -> n{src};")
        lines.append("}")
        return "\n".join(lines) + "\n"

    def connection_matrix(self) -> list[list[int]]:
        """Row = consumer, column = producer; 1 where the edge exists."""
        n = self.num_nodes
        mat = [[0] * n for _ in range(n)]
        for dst, src in self.edges():
            mat[dst][src] = 1
        return mat


# -- helpers -----------------------------------------------------------


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _floor_log2(i: int) -> int:
    return i.bit_length() - 1


def logdense_offsets(i: int) -> list[int]:
    """Log-DenseNet inputs of layer ``i``, nearest first: i-1, i-2, i-4, ..."""
    return [i - (1 << k) for k in range(_floor_log2(i) + 1)]


def _check_blocks(L: int, block_sizes: Sequence[int] | None) -> tuple[int, ...]:
    if L < 1:
        raise ConfigError(f"L must be >= 1, got {L}")
    sizes = (L,) if block_sizes is None else tuple(int(b) for b in block_sizes)
    if not sizes or any(b < 1 for b in sizes):
        raise ConfigError(f"block sizes must be positive, got {sizes}")
    if sum(sizes) != L:
        raise ConfigError(f"block sizes {sizes} do not sum to L={L}")
    return sizes


def _layer_blocks(sizes: Sequence[int]) -> list[int]:
    """Block of each layer 0..L (layer 0 sits in block 0)."""
    out = [0]
    for b, size in enumerate(sizes):
        out.extend([b] * size)
    return out


def _build(
    scheme: Scheme,
    L: int,
    sizes: tuple[int, ...],
    layer_inputs: Sequence[Iterable[int]],
    params: dict[str, Any] | None = None,
) -> Topology:
    """Assemble a topology whose node ids coincide with layer indices."""
    kinds = (NodeKind.INITIAL,) + (NodeKind.FEATURE,) * L
    inputs = ((),) + tuple(tuple(sorted(set(ins))) for ins in layer_inputs[1:])
    topo = Topology(
        scheme=scheme,
        L=L,
        block_sizes=sizes,
        kinds=kinds,
        blocks=tuple(_layer_blocks(sizes)),
        inputs=inputs,
        scheme_params=dict(params or {}),
    )
    topo.check()
    return topo


# -- generators --------------------------------------------------------


def dense_topology(L: int, block_sizes: Sequence[int] | None = None) -> Topology:
    sizes = _check_blocks(L, block_sizes)
    return _build(Scheme.DENSE, L, sizes, [()] + [range(i) for i in range(1, L + 1)])


def log_dense_v1(L: int, block_sizes: Sequence[int] | None = None) -> Topology:
    sizes = _check_blocks(L, block_sizes)
    return _build(
        Scheme.LOGDENSE_V1,
        L,
        sizes,
        [()] + [logdense_offsets(i) for i in range(1, L + 1)],
    )


def compression_width(g: int, L: int) -> int:
    return math.ceil(g * math.log2(L)) if L > 1 else g


def log_dense_v2(L: int, block_sizes: Sequence[int], g: int) -> Topology:
    """Log-DenseNet with block compression.

    After each block boundary a compression node summarizes the finished
    block.  Every feature layer reads the Log-DenseNet inputs that fall in
    its own block, the initial layer and every compression node built so far.
    """
    sizes = _check_blocks(L, block_sizes)
    if len(sizes) < 2:
        raise ConfigError("log_dense_v2 needs at least two blocks")
    if g < 1:
        raise ConfigError(f"growth rate must be >= 1, got {g}")
    layer_block = _layer_blocks(sizes)
    block_start = [1 + sum(sizes[:b]) for b in range(len(sizes))]

    kinds = [NodeKind.INITIAL]
    blocks = [0]
    inputs: list[tuple[int, ...]] = [()]
    layer_node = [0]
    comp_nodes: list[int] = []
    for i in range(1, L + 1):
        b = layer_block[i]
        if i == block_start[b] and b > 0:
            # compression node for the block that just finished
            prev = [layer_node[k] for k in range(block_start[b - 1], i)]
            comp_nodes.append(len(kinds))
            kinds.append(NodeKind.COMPRESSION)
            blocks.append(b)
            inputs.append(tuple(prev))
        within = [layer_node[j] for j in logdense_offsets(i) if j >= block_start[b]]
        node = len(kinds)
        layer_node.append(node)
        kinds.append(NodeKind.FEATURE)
        blocks.append(b)
        inputs.append(tuple(sorted(set(within) | {0} | set(comp_nodes))))

    topo = Topology(
        scheme=Scheme.LOGDENSE_V2,
        L=L,
        block_sizes=sizes,
        kinds=tuple(kinds),
        blocks=tuple(blocks),
        inputs=tuple(inputs),
        scheme_params={"g": g, "compression_width": compression_width(g, L)},
    )
    topo.check()
    return topo


def _budget(budget: str) -> str:
    if budget not in ("log", "half"):
        raise ConfigError(f"budget must be 'log' or 'half', got {budget!r}")
    return budget


def nearest(L: int, block_sizes: Sequence[int] | None = None, budget: str = "log") -> Topology:
    sizes = _check_blocks(L, block_sizes)
    budget = _budget(budget)
    layer_inputs: list[Iterable[int]] = [()]
    for i in range(1, L + 1):
        count = max(1, _floor_log2(i)) if budget == "log" else math.ceil(i / 2)
        layer_inputs.append(range(i - count, i))
    return _build(Scheme.NEAREST, L, sizes, layer_inputs, {"budget": budget})


def _evenly_spaced_inputs(i: int) -> set[int]:
    if i == 1:
        return {0}
    delta = i / math.log2(i)
    out = set()
    k = 0
    while k * delta <= i - 1:
        out.add(max(0, round_half_up(i - 1 - k * delta)))
        k += 1
    return out


def evenly_spaced(
    L: int, block_sizes: Sequence[int] | None = None, budget: str = "log"
) -> Topology:
    sizes = _check_blocks(L, block_sizes)
    budget = _budget(budget)
    layer_inputs: list[Iterable[int]] = [()]
    for i in range(1, L + 1):
        if budget == "log":
            layer_inputs.append(_evenly_spaced_inputs(i))
        else:
            layer_inputs.append(range(i - 1, -1, -2))
    return _build(Scheme.EVENLY_SPACED, L, sizes, layer_inputs, {"budget": budget})


def nearest_half_and_log(L: int, block_sizes: Sequence[int] | None = None) -> Topology:
    sizes = _check_blocks(L, block_sizes)
    layer_inputs: list[Iterable[int]] = [()]
    for i in range(1, L + 1):
        ins = set(range(i - math.ceil(i / 2), i))
        k = 2
        while True:
            j = round_half_up(i / 2**k)
            ins.add(j)
            if j == 0:
                break
            k += 1
        layer_inputs.append(ins)
    return _build(Scheme.NEAREST_HALF_AND_LOG, L, sizes, layer_inputs)


# -- LogLog ------------------------------------------------------------


def lglg_key_set(s: int, t: int) -> list[int]:
    """Sorted key locations of a ``lglg_conn(s, t)`` call ([] if it exits)."""
    if t - s <= 1:
        return []
    delta = math.isqrt(t - s + 1)
    keys = {s}
    k = 0
    while t - k * delta >= s:
        keys.add(t - k * delta)
        k += 1
    return sorted(keys)


def lglg_conn(
    s: int,
    t: int,
    edges: set[tuple[int, int]],
    step_b: bool = True,
) -> set[tuple[int, int]]:
    """Recursive connection adder; ``edges`` holds ``(consumer, producer)``."""
    stack = [(s, t)]
    while stack:
        s, t = stack.pop()
        keys = lglg_key_set(s, t)
        if not keys:
            continue
        for a in range(len(keys)):
            for b in range(a):
                edges.add((keys[a], keys[b]))
        if step_b:
            for lo, hi in zip(keys, keys[1:]):
                for j in range(lo + 1, hi + 1):
                    edges.add((j, lo))
        stack.extend(reversed(list(zip(keys, keys[1:]))))
    return edges


def loglog_topology(
    L: int,
    block_sizes: Sequence[int] | None = None,
    min_inputs: int = 1,
    step_b: bool = True,
) -> Topology:
    sizes = _check_blocks(L, block_sizes)
    if min_inputs < 1:
        raise ConfigError(f"min_inputs must be >= 1, got {min_inputs}")
    edges = {(i, i - 1) for i in range(1, L + 1)}
    lglg_conn(0, L, edges, step_b=step_b)
    layer_inputs: list[set[int]] = [set() for _ in range(L + 1)]
    for dst, src in edges:
        layer_inputs[dst].add(src)
    for i in range(1, L + 1):
        for j in logdense_offsets(i):
            if len(layer_inputs[i]) >= min_inputs:
                break
            layer_inputs[i].add(j)
    params = {"min_inputs": min_inputs, "hubs": lglg_key_set(0, L)}
    if not step_b:
        params["step_b"] = False
    return _build(Scheme.LOGLOG, L, sizes, layer_inputs, params)


# -- fully convolutional -------------------------------------------------


def fc_levels(n_block: int) -> list[int]:
    """Resolution level (number of halvings) of each block of a down/up network."""
    half = n_block // 2
    return [b if b <= half else 2 * half - b for b in range(n_block)]


def fc_log_dense_topology(
    block_sizes: Sequence[int] = FC_BLOCK_SIZES,
    anchor: int | None = None,
) -> Topology:
    sizes = tuple(int(b) for b in block_sizes)
    if len(sizes) % 2 == 0:
        raise ConfigError(f"FC topologies need an odd block count, got {len(sizes)}")
    L = sum(sizes)
    sizes = _check_blocks(L, sizes)
    first_end = sizes[0]
    if anchor is None:
        anchor = first_end
    if anchor != first_end:
        raise ConfigError(f"anchor must be the last layer of the first block ({first_end})")
    layer_inputs: list[Iterable[int]] = [()]
    for i in range(1, L + 1):
        ins = set(logdense_offsets(i))
        if i > first_end:
            ins.add(anchor)
        layer_inputs.append(ins)
    params = {"anchor": anchor, "levels": fc_levels(len(sizes))}
    return _build(Scheme.FC_LOGDENSE, L, sizes, layer_inputs, params)


def generate(
    scheme: Scheme | str,
    L: int | None = None,
    block_sizes: Sequence[int] | None = None,
    *,
    budget: str = "log",
    min_inputs: int = 1,
    g: int = 12,
) -> Topology:
    """Dispatch by scheme name; ``L`` may be omitted for the FC scheme."""
    try:
        scheme = Scheme(scheme)
    except ValueError:
        raise ConfigError(f"unknown scheme {scheme!r}") from None
    if scheme is Scheme.FC_LOGDENSE:
        sizes = FC_BLOCK_SIZES if block_sizes is None else block_sizes
        if L is not None and L != sum(sizes):
            raise ConfigError(f"block sizes {tuple(sizes)} do not sum to L={L}")
        return fc_log_dense_topology(sizes)
    if L is None:
        raise ConfigError("L is required")
    if scheme is Scheme.DENSE:
        return dense_topology(L, block_sizes)
    if scheme is Scheme.LOGDENSE_V1:
        return log_dense_v1(L, block_sizes)
    if scheme is Scheme.LOGDENSE_V2:
        return log_dense_v2(L, block_sizes or (L,), g)
    if scheme is Scheme.LOGLOG:
        return loglog_topology(L, block_sizes, min_inputs)
    if scheme is Scheme.NEAREST:
        return nearest(L, block_sizes, budget)
    if scheme is Scheme.EVENLY_SPACED:
        return evenly_spaced(L, block_sizes, budget)
    return nearest_half_and_log(L, block_sizes)
