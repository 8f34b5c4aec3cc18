"""Channel bookkeeping and FLOP / parameter accounting.

A :class:`NetworkPlan` lists every operation of a network instantiated from
a topology: the stem convolution, each feature layer, the transitions that
move producers to a consumer's resolution, and the prediction heads.  FLOPs
and parameters are sums over those operations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Sequence

from .topology import (
    FC_BLOCK_SIZES,
    ConfigError,
    NodeKind,
    Scheme,
    Topology,
    fc_levels,
    fc_log_dense_topology,
)

__all__ = [
    "Compression",
    "FlopConvention",
    "NetworkConfig",
    "Op",
    "LayerPlan",
    "TransitionPlan",
    "HeadPlan",
    "NetworkPlan",
    "CostReport",
    "instantiate",
    "fc_plan",
    "fc_densenet103_plan",
    "flops",
    "params",
    "block_cost_distribution",
    "check_plan",
]


class Compression(str, Enum):
    NONE = "none"
    V1 = "v1"  # independent per-layer pooling transitions
    V2 = "v2"  # block compression


class FlopConvention(str, Enum):
    MAC = "mac"  # one multiply-add = 1 FLOP
    MAC2 = "mac2"  # one multiply-add = 2 FLOPs


@dataclass(frozen=True)
class NetworkConfig:
    growth_rate: int = 12
    block_sizes: tuple[int, ...] | None = None
    bottleneck: bool = False
    bottleneck_width: int | None = None
    compression: Compression | None = None
    hub_multiplier: int = 1
    input_resolution: tuple[int, int] = (32, 32)
    in_channels: int = 3
    initial_channels: int | None = None
    num_classes: int = 10
    flop_convention: FlopConvention = FlopConvention.MAC2
    lazy_transitions: bool | None = None
    up_kernel: int = 3

    def __post_init__(self) -> None:
        if self.growth_rate < 1:
            raise ConfigError(f"growth rate must be >= 1, got {self.growth_rate}")
        if self.hub_multiplier < 1:
            raise ConfigError(f"hub multiplier must be >= 1, got {self.hub_multiplier}")
        if self.num_classes < 1 or self.in_channels < 1:
            raise ConfigError("class and input channel counts must be positive")
        if self.up_kernel < 1:
            raise ConfigError("up_kernel must be >= 1")
        if self.block_sizes is not None:
            object.__setattr__(self, "block_sizes", tuple(int(b) for b in self.block_sizes))
        object.__setattr__(self, "flop_convention", FlopConvention(self.flop_convention))
        if self.compression is not None:
            object.__setattr__(self, "compression", Compression(self.compression))

    @property
    def g(self) -> int:
        return self.growth_rate

    @property
    def bottleneck_channels(self) -> int:
        return self.bottleneck_width or 4 * self.growth_rate

    @property
    def stem_channels(self) -> int:
        return self.initial_channels or 2 * self.growth_rate


# -- operations ----------------------------------------------------------

CONV_KINDS = ("conv", "upconv", "linear")


@dataclass(frozen=True)
class Op:
    """One costed operation.

    ``height``/``width`` is the spatial grid the cost is evaluated on: the
    output grid for ``conv``, the input grid for ``upconv`` and ``pool``.
    """

    kind: str  # conv | upconv | norm | pool | gap | linear
    c_in: int
    c_out: int
    kernel: int = 1
    height: int = 1
    width: int = 1
    bias: bool = False

    @property
    def macs(self) -> int:
        if self.kind in ("conv", "upconv"):
            return self.height * self.width * self.c_in * self.c_out * self.kernel**2
        if self.kind == "linear":
            return self.c_in * self.c_out
        return 0

    @property
    def elementwise(self) -> int:
        if self.kind in ("norm", "pool", "gap"):
            return self.height * self.width * self.c_in
        return 0

    def flops(self, convention: FlopConvention) -> int:
        scale = 2 if convention is FlopConvention.MAC2 else 1
        return scale * self.macs + self.elementwise

    @property
    def n_params(self) -> int:
        if self.kind in CONV_KINDS:
            return self.c_in * self.c_out * self.kernel**2 + (self.c_out if self.bias else 0)
        if self.kind == "norm":
            return 2 * self.c_in
        return 0


@dataclass(frozen=True)
class LayerPlan:
    node: int
    block: int
    level: int
    inputs: tuple[int, ...]
    input_widths: tuple[int, ...]
    out_channels: int
    bottleneck_channels: int
    ops: tuple[Op, ...]

    @property
    def in_channels(self) -> int:
        return sum(self.input_widths)


@dataclass(frozen=True)
class TransitionPlan:
    """Moves ``sources`` from ``from_level`` to ``to_level`` at a block boundary.

    ``kind`` is ``down`` / ``up`` for per-layer transitions, ``compress`` for
    the V2 compression of a finished block, ``retransform`` for the V2
    channel-preserving pass over older compressed features, ``joint_down`` /
    ``joint_up`` for transitions over a whole concatenation.
    """

    boundary: int
    kind: str
    sources: tuple[int, ...]
    target: int | None
    c_in: int
    c_out: int
    from_level: int
    to_level: int
    block: int
    ops: tuple[Op, ...]


@dataclass(frozen=True)
class HeadPlan:
    block: int
    node: int
    inputs: tuple[int, ...]
    in_channels: int
    num_classes: int
    level: int
    final: bool
    per_pixel: bool
    ops: tuple[Op, ...]


@dataclass(frozen=True)
class NetworkPlan:
    name: str
    config: NetworkConfig
    topology: Topology | None
    block_levels: tuple[int, ...]
    widths: dict[int, int]
    stem: tuple[Op, ...]
    layers: tuple[LayerPlan, ...]
    transitions: tuple[TransitionPlan, ...]
    heads: tuple[HeadPlan, ...]
    fully_convolutional: bool
    assumptions: tuple[str, ...] = ()

    @property
    def n_block(self) -> int:
        return len(self.block_levels)

    def layer(self, node: int) -> LayerPlan:
        for rec in self.layers:
            if rec.node == node:
                return rec
        raise KeyError(node)

    def resolution(self, level: int) -> tuple[int, int]:
        h, w = self.config.input_resolution
        return h >> level, w >> level


@dataclass
class CostReport:
    name: str
    convention: FlopConvention
    per_layer: dict[int, int]
    per_block: list[int]
    stem: int
    layers: int
    transitions: int
    heads: int
    total_flops: int
    total_params: int
    assumptions: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["convention"] = self.convention.value
        d["per_layer"] = {str(k): v for k, v in self.per_layer.items()}
        d["assumptions"] = list(self.assumptions)
        d["block_fractions"] = block_cost_distribution(self)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table_row(self) -> str:
        return f"{self.name:<28} {self.total_flops / 1e9:8.1f} GFLOPS {self.total_params / 1e6:8.2f} M params"


# -- plan construction -------------------------------------------------------


def _norm(c: int, h: int, w: int) -> Op:
    return Op("norm", c, c, 1, h, w)


def _layer_ops(cfg: NetworkConfig, c_in: int, c_out: int, h: int, w: int) -> tuple[Op, ...]:
    ops = [_norm(c_in, h, w)]
    if cfg.bottleneck:
        bw = cfg.bottleneck_channels
        ops += [Op("conv", c_in, bw, 1, h, w), _norm(bw, h, w)]
        c_in = bw
    ops.append(Op("conv", c_in, c_out, 3, h, w))
    return tuple(ops)


def _head_ops(c_in: int, classes: int, h: int, w: int, per_pixel: bool) -> tuple[Op, ...]:
    if per_pixel:
        return (_norm(c_in, h, w), Op("conv", c_in, classes, 1, h, w, bias=True))
    return (_norm(c_in, h, w), Op("gap", c_in, c_in, 1, h, w), Op("linear", c_in, classes, bias=True))


def _resolve_compression(topo: Topology, cfg: NetworkConfig) -> Compression:
    comp = cfg.compression
    if comp is None:
        if topo.scheme is Scheme.LOGDENSE_V2:
            return Compression.V2
        return Compression.V1 if topo.n_block > 1 else Compression.NONE
    if (comp is Compression.V2) != (topo.scheme is Scheme.LOGDENSE_V2):
        raise ConfigError("block compression applies exactly to logdense-v2 topologies")
    if comp is Compression.NONE and topo.n_block > 1:
        raise ConfigError("multi-block networks need a transition scheme")
    return comp


def _hub_layers(topo: Topology) -> set[int]:
    return {n for n in topo.scheme_params.get("hubs", []) if n != 0}


def instantiate(topo: Topology, cfg: NetworkConfig) -> NetworkPlan:
    """Turn a topology into a concrete network plan."""
    if cfg.block_sizes is not None and tuple(cfg.block_sizes) != topo.block_sizes:
        raise ConfigError(
            f"config blocks {cfg.block_sizes} do not match topology blocks {topo.block_sizes}"
        )
    if cfg.hub_multiplier > 1 and topo.scheme is not Scheme.LOGLOG:
        raise ConfigError("hub multiplier applies to loglog topologies only")
    if topo.scheme is Scheme.LOGDENSE_V2 and topo.scheme_params.get("g") != cfg.g:
        raise ConfigError("logdense-v2 topology was generated for a different growth rate")
    compression = _resolve_compression(topo, cfg)

    fully_conv = topo.scheme is Scheme.FC_LOGDENSE
    levels = tuple(topo.scheme_params["levels"]) if fully_conv else tuple(range(topo.n_block))
    lazy = cfg.lazy_transitions if cfg.lazy_transitions is not None else fully_conv
    H, W = cfg.input_resolution
    if H % (1 << max(levels)) or W % (1 << max(levels)):
        raise ConfigError(f"resolution {H}x{W} does not survive {max(levels)} halvings")

    def res(level: int) -> tuple[int, int]:
        return H >> level, W >> level

    g = cfg.g
    hub_nodes = _hub_layers(topo) if cfg.hub_multiplier > 1 else set()
    comp_width = topo.scheme_params.get("compression_width", 0)
    widths: dict[int, int] = {}
    for node, kind in enumerate(topo.kinds):
        if kind is NodeKind.INITIAL:
            widths[node] = cfg.stem_channels
        elif kind is NodeKind.COMPRESSION:
            widths[node] = comp_width
        else:
            widths[node] = g * (cfg.hub_multiplier if node in hub_nodes else 1)

    stem = (Op("conv", cfg.in_channels, cfg.stem_channels, 3, H, W),)

    layers = []
    for node in topo.feature_nodes:
        b = topo.blocks[node]
        h, w = res(levels[b])
        ins = topo.inputs[node]
        iw = tuple(widths[j] for j in ins)
        layers.append(
            LayerPlan(
                node=node,
                block=b,
                level=levels[b],
                inputs=ins,
                input_widths=iw,
                out_channels=widths[node],
                bottleneck_channels=cfg.bottleneck_channels if cfg.bottleneck else 0,
                ops=_layer_ops(cfg, sum(iw), widths[node], h, w),
            )
        )

    transitions: list[TransitionPlan] = []
    consumers = topo.consumers()
    for bd in range(topo.n_block - 1):
        lo, hi = levels[bd], levels[bd + 1]
        h, w = res(lo)
        if compression is Compression.V2:
            finished = tuple(topo.block_nodes(bd))
            target = next(n for n in topo.compression_nodes if topo.blocks[n] == bd + 1)
            older = tuple(
                n for n in [0] + topo.compression_nodes if n < target
            )
            c_new = sum(widths[n] for n in finished)
            c_old = sum(widths[n] for n in older)
            transitions.append(
                TransitionPlan(
                    bd, "retransform", older, None, c_old, c_old, lo, hi, bd + 1,
                    (Op("conv", c_old, c_old, 1, h, w), Op("pool", c_old, c_old, 2, h, w)),
                )
            )
            transitions.append(
                TransitionPlan(
                    bd, "compress", finished, target, c_new, comp_width, lo, hi, bd + 1,
                    (Op("conv", c_new, comp_width, 1, h, w), Op("pool", comp_width, comp_width, 2, h, w)),
                )
            )
            continue
        kind = "down" if hi > lo else "up"
        for node in topo.layer_nodes:
            if topo.blocks[node] > bd:
                break
            if lazy and not any(topo.blocks[c] > bd for c in consumers[node]):
                continue
            c = widths[node]
            if kind == "down":
                ops = (Op("conv", c, c, 1, h, w), Op("pool", c, c, 2, h, w))
            else:
                ops = (Op("upconv", c, c, cfg.up_kernel, h, w),)
            transitions.append(
                TransitionPlan(bd, kind, (node,), node, c, c, lo, hi, bd + 1, ops)
            )

    heads = []
    for b in range(topo.n_block):
        end = topo.block_nodes(b)[-1]
        ins = tuple(sorted({end, *topo.inputs[end]}))
        c_in = sum(widths[j] for j in ins)
        h, w = res(levels[b])
        heads.append(
            HeadPlan(
                block=b,
                node=end,
                inputs=ins,
                in_channels=c_in,
                num_classes=cfg.num_classes,
                level=levels[b],
                final=b == topo.n_block - 1,
                per_pixel=fully_conv,
                ops=_head_ops(c_in, cfg.num_classes, h, w, fully_conv),
            )
        )

    assumptions = (
        f"flops counted as {cfg.flop_convention.value}; norm/pool/gap at 1 per element",
        "transposed conv costed as the stride-2 conv it inverts (input grid)",
        f"transitions {'lazy' if lazy else 'eager'}; compression={compression.value}",
    )
    plan = NetworkPlan(
        name=f"{topo.scheme.value}-L{topo.L}",
        config=replace(cfg, block_sizes=topo.block_sizes, compression=compression, lazy_transitions=lazy),
        topology=topo,
        block_levels=levels,
        widths=widths,
        stem=stem,
        layers=tuple(layers),
        transitions=tuple(transitions),
        heads=tuple(heads),
        fully_convolutional=fully_conv,
        assumptions=assumptions,
    )
    check_plan(plan)
    return plan


def fc_plan(cfg: NetworkConfig | None = None) -> NetworkPlan:
    """FC-Log-DenseNet V1: down path, up path and a per-pixel head per block."""
    if cfg is None:
        cfg = NetworkConfig(
            growth_rate=24, input_resolution=(224, 224), num_classes=11
        )
    sizes = cfg.block_sizes or FC_BLOCK_SIZES
    if len(sizes) % 2 == 0:
        raise ConfigError(f"FC plans need an odd block count, got {len(sizes)}")
    topo = fc_log_dense_topology(sizes)
    plan = instantiate(topo, replace(cfg, block_sizes=tuple(sizes)))
    depth = sum(sizes) + 12 if tuple(sizes) == FC_BLOCK_SIZES else sum(sizes)
    return replace(plan, name=f"FC-LogDenseNetV1-{depth} (g={cfg.g})")


def fc_densenet103_plan(cfg: NetworkConfig | None = None) -> NetworkPlan:
    """FC-DenseNet103 as a plan: dense down path, 15-layer bottleneck, up path
    whose blocks see the upsampled new features of the previous block plus
    the skip from the matching down block."""
    if cfg is None:
        cfg = NetworkConfig(
            growth_rate=16, input_resolution=(224, 224), num_classes=11, initial_channels=48
        )
    sizes = tuple(cfg.block_sizes or FC_BLOCK_SIZES)
    n_block = len(sizes)
    if n_block % 2 == 0:
        raise ConfigError(f"FC plans need an odd block count, got {n_block}")
    levels = tuple(fc_levels(n_block))
    half = n_block // 2
    H, W = cfg.input_resolution
    if H % (1 << half) or W % (1 << half):
        raise ConfigError(f"resolution {H}x{W} does not survive {half} halvings")
    g = cfg.g

    widths = {0: cfg.stem_channels}
    block_nodes: list[list[int]] = []
    node = 1
    for size in sizes:
        block_nodes.append(list(range(node, node + size)))
        for n in range(node, node + size):
            widths[n] = g
        node += size

    def res(level: int) -> tuple[int, int]:
        return H >> level, W >> level

    stem = (Op("conv", cfg.in_channels, cfg.stem_channels, 3, H, W),)
    layers: list[LayerPlan] = []
    transitions: list[TransitionPlan] = []
    for b, nodes in enumerate(block_nodes):
        if b <= half:
            # dense path: everything produced so far feeds the block
            block_input = list(range(0, nodes[0]))
        else:
            skip_block = n_block - 1 - b
            block_input = block_nodes[b - 1] + list(range(0, block_nodes[skip_block][-1] + 1))
            block_input.sort()
        h, w = res(levels[b])
        seen = list(block_input)
        for n in nodes:
            iw = tuple(widths[j] for j in seen)
            layers.append(
                LayerPlan(
                    node=n, block=b, level=levels[b], inputs=tuple(seen), input_widths=iw,
                    out_channels=g, bottleneck_channels=0,
                    ops=(_norm(sum(iw), h, w), Op("conv", sum(iw), g, 3, h, w)),
                )
            )
            seen.append(n)
        if b == n_block - 1:
            continue
        if b < half:
            src = tuple(range(0, nodes[-1] + 1))
            c = sum(widths[j] for j in src)
            ops = (_norm(c, h, w), Op("conv", c, c, 1, h, w), Op("pool", c, c, 2, h, w))
            transitions.append(
                TransitionPlan(b, "joint_down", src, None, c, c, levels[b], levels[b + 1], b + 1, ops)
            )
        else:
            src = tuple(nodes)
            c = sum(widths[j] for j in src)
            ops = (Op("upconv", c, c, cfg.up_kernel, h, w),)
            transitions.append(
                TransitionPlan(b, "joint_up", src, None, c, c, levels[b], levels[b + 1], b + 1, ops)
            )

    last = layers[-1]
    final_inputs = last.inputs + (last.node,)
    c_in = sum(widths[j] for j in final_inputs)
    h, w = res(0)
    head = HeadPlan(
        block=n_block - 1, node=last.node, inputs=final_inputs, in_channels=c_in,
        num_classes=cfg.num_classes, level=0, final=True, per_pixel=True,
        ops=(Op("conv", c_in, cfg.num_classes, 1, h, w, bias=True),),
    )
    depth = sum(sizes) + 12 if sizes == FC_BLOCK_SIZES else sum(sizes)
    return NetworkPlan(
        name=f"FC-DenseNet{depth} (g={g})",
        config=replace(cfg, block_sizes=sizes, compression=Compression.NONE, lazy_transitions=False),
        topology=None,
        block_levels=levels,
        widths=widths,
        stem=stem,
        layers=tuple(layers),
        transitions=tuple(transitions),
        heads=(head,),
        fully_convolutional=True,
        assumptions=(
            f"flops counted as {cfg.flop_convention.value}; norm/pool/gap at 1 per element",
            "no bottleneck; transition down = BN + 1x1 conv + 2x2 pool over the whole concatenation",
            "transition up = 3x3 stride-2 transposed conv over the previous block's new features",
            "max pooling costed like average pooling; dropout ignored",
        ),
    )


def check_plan(plan: NetworkPlan) -> None:
    """Channel conservation and transition reachability; raises ``ValueError``."""
    topo = plan.topology
    moved = {
        (t.target, t.to_level) for t in plan.transitions if t.target is not None and t.kind in ("down", "up")
    }
    node_level: dict[int, int] = {0: plan.block_levels[0]}
    for rec in plan.layers:
        node_level[rec.node] = rec.level
    if topo is not None:
        for n in topo.compression_nodes:
            node_level[n] = plan.block_levels[topo.blocks[n]]
    for rec in plan.layers:
        expected = sum(plan.widths[j] for j in rec.inputs)
        if rec.in_channels != expected:
            raise ValueError(f"layer {rec.node}: input width {rec.in_channels} != {expected}")
        if topo is None or plan.config.compression is Compression.V2:
            continue
        for j in rec.inputs:
            if node_level[j] != rec.level and (j, rec.level) not in moved:
                raise ValueError(f"layer {rec.node} reads node {j} without a transition to level {rec.level}")
    for head in plan.heads:
        if head.in_channels != sum(plan.widths[j] for j in head.inputs):
            raise ValueError(f"head at block {head.block}: channel mismatch")


# -- costing --------------------------------------------------------------------


def flops(plan: NetworkPlan, convention: FlopConvention | str | None = None) -> CostReport:
    conv = FlopConvention(convention) if convention is not None else plan.config.flop_convention
    per_block = [0] * plan.n_block
    per_layer: dict[int, int] = {}

    def cost(ops: Sequence[Op]) -> int:
        return sum(op.flops(conv) for op in ops)

    stem = cost(plan.stem)
    per_block[0] += stem
    layer_total = 0
    for rec in plan.layers:
        c = cost(rec.ops)
        per_layer[rec.node] = c
        per_block[rec.block] += c
        layer_total += c
    trans_total = 0
    for t in plan.transitions:
        c = cost(t.ops)
        per_block[t.block] += c
        trans_total += c
    head_total = 0
    for head in plan.heads:
        c = cost(head.ops)
        per_block[head.block] += c
        head_total += c
    return CostReport(
        name=plan.name,
        convention=conv,
        per_layer=per_layer,
        per_block=per_block,
        stem=stem,
        layers=layer_total,
        transitions=trans_total,
        heads=head_total,
        total_flops=stem + layer_total + trans_total + head_total,
        total_params=params(plan),
        assumptions=plan.assumptions,
    )


def params(plan: NetworkPlan) -> int:
    ops: list[Op] = list(plan.stem)
    for rec in plan.layers:
        ops.extend(rec.ops)
    for t in plan.transitions:
        ops.extend(t.ops)
    for head in plan.heads:
        ops.extend(head.ops)
    return sum(op.n_params for op in ops)


def block_cost_distribution(report: CostReport) -> list[float]:
    total = sum(report.per_block)
    if total == 0:
        return [0.0] * len(report.per_block)
    return [b / total for b in report.per_block]
