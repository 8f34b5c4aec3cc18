import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logdense import analysis as A
from logdense import cost as C
from logdense import topology as T
from logdense.cost import FlopConvention, NetworkConfig, Op
from logdense.topology import ConfigError, Scheme

from .test_topology import layers_and_blocks


def test_single_conv_param_and_mac_counts():
    op = Op("conv", 2, 3, 3, 5, 7)
    assert op.n_params == 54
    assert op.macs == 5 * 7 * 2 * 3 * 9
    assert op.flops(FlopConvention.MAC2) == 2 * op.macs
    assert Op("conv", 2, 3, 1, 1, 1).macs == 6


def test_norm_and_pool_are_elementwise():
    assert Op("norm", 4, 4, 1, 3, 3).flops(FlopConvention.MAC) == 36
    assert Op("norm", 4, 4).n_params == 8
    assert Op("pool", 4, 4, 2, 6, 6).elementwise == 144


def test_bottleneck_layer_ops():
    topo = T.dense_topology(4)
    plan = C.instantiate(topo, NetworkConfig(growth_rate=6, bottleneck=True))
    ops = plan.layer(3).ops
    convs = [(op.kernel, op.c_in, op.c_out) for op in ops if op.kind == "conv"]
    assert convs == [(1, 12 + 6 + 6, 24), (3, 24, 6)]


def test_hub_multiplier_widths():
    topo = T.loglog_topology(16)
    plan = C.instantiate(topo, NetworkConfig(growth_rate=4, hub_multiplier=3))
    hubs = A.hubs(topo) - {0}
    for n in topo.feature_nodes:
        assert plan.widths[n] == (12 if n in hubs else 4)
    with pytest.raises(ConfigError):
        C.instantiate(T.log_dense_v1(16), NetworkConfig(hub_multiplier=3))


def test_v2_compression_width():
    topo = T.log_dense_v2(24, (12, 12), 16)
    plan = C.instantiate(topo, NetworkConfig(growth_rate=16))
    (comp,) = topo.compression_nodes
    assert plan.widths[comp] == math.ceil(16 * math.log2(24))
    with pytest.raises(ConfigError):
        C.instantiate(topo, NetworkConfig(growth_rate=8))


@given(layers_and_blocks(max_L=48, max_blocks=4).filter(lambda lb: len(lb[1]) >= 2), st.integers(1, 16))
def test_v2_compressed_channels_into_a_layer(lb, g):
    L, blocks = lb
    topo = T.log_dense_v2(L, blocks, g)
    plan = C.instantiate(topo, NetworkConfig(growth_rate=g, input_resolution=(64, 64)))
    comp = T.compression_width(g, L)
    for rec in plan.layers:
        carried = sum(w for j, w in zip(rec.inputs, rec.input_widths) if topo.blocks[j] != rec.block or j == 0)
        assert carried <= (topo.n_block - 1) * comp + 2 * g


def test_mismatched_blocks_rejected():
    with pytest.raises(ConfigError):
        C.instantiate(T.log_dense_v1(8, (4, 4)), NetworkConfig(block_sizes=(2, 6)))


def test_resolution_must_survive_halvings():
    with pytest.raises(ConfigError):
        C.instantiate(T.log_dense_v1(9, (3, 3, 3)), NetworkConfig(input_resolution=(6, 6)))


schemes = st.sampled_from([Scheme.DENSE, Scheme.LOGDENSE_V1, Scheme.LOGLOG, Scheme.NEAREST, Scheme.EVENLY_SPACED])


@given(layers_and_blocks(max_L=40, max_blocks=3), schemes, st.integers(1, 12), st.booleans(), st.booleans())
def test_channel_conservation(lb, scheme, g, bottleneck, lazy):
    L, blocks = lb
    topo = T.generate(scheme, L, blocks)
    plan = C.instantiate(
        topo, NetworkConfig(growth_rate=g, bottleneck=bottleneck, lazy_transitions=lazy, input_resolution=(16, 16))
    )
    C.check_plan(plan)
    for rec in plan.layers:
        assert rec.ops[0].c_in == sum(plan.widths[j] for j in rec.inputs)


@given(layers_and_blocks(max_L=30, max_blocks=3), schemes, st.integers(1, 8))
def test_flops_quadruple_with_resolution(lb, scheme, g):
    L, blocks = lb
    topo = T.generate(scheme, L, blocks)
    small = C.instantiate(topo, NetworkConfig(growth_rate=g, input_resolution=(8, 8)))
    big = C.instantiate(topo, NetworkConfig(growth_rate=g, input_resolution=(16, 16)))

    def conv_flops(plan):
        ops = list(plan.stem) + [o for r in plan.layers for o in r.ops] + [o for t in plan.transitions for o in t.ops]
        return sum(o.flops(FlopConvention.MAC2) for o in ops if o.kind in ("conv", "upconv"))

    assert conv_flops(big) == 4 * conv_flops(small)
    assert C.params(big) == C.params(small)


def test_fc_flops_scale_exactly():
    a = C.flops(C.fc_plan(NetworkConfig(growth_rate=24, input_resolution=(224, 224), num_classes=11)))
    b = C.flops(C.fc_plan(NetworkConfig(growth_rate=24, input_resolution=(448, 448), num_classes=11)))
    assert b.total_flops == 4 * a.total_flops


def test_report_totals_are_sums_of_parts():
    rep = C.flops(C.instantiate(T.log_dense_v1(12, (4, 4, 4)), NetworkConfig(growth_rate=4)))
    assert rep.total_flops == rep.stem + rep.layers + rep.transitions + rep.heads
    assert rep.total_flops == sum(rep.per_block)
    assert rep.layers == sum(rep.per_layer.values())
    assert abs(sum(C.block_cost_distribution(rep)) - 1) < 1e-9


def test_mac_convention_halves_conv_cost():
    plan = C.instantiate(T.dense_topology(4), NetworkConfig(growth_rate=4))
    mac, mac2 = C.flops(plan, "mac"), C.flops(plan, "mac2")
    assert mac2.total_flops > mac.total_flops
    assert mac2.total_params == mac.total_params


def test_uniform_toy_plan_equal_fractions():
    plan = C.instantiate(T.log_dense_v1(6, (2, 2, 2)), NetworkConfig(growth_rate=4))
    rep = C.flops(plan)
    uniform = C.CostReport(rep.name, rep.convention, {}, [7, 7, 7], 0, 21, 0, 0, 21, 0)
    assert C.block_cost_distribution(uniform) == pytest.approx([1 / 3] * 3)


def test_v1_eager_transition_cost_linear_in_live_layers():
    g = 4
    costs = []
    for L in (8, 16, 32, 64):
        topo = T.log_dense_v1(L, (L // 2, L // 2))
        plan = C.instantiate(topo, NetworkConfig(growth_rate=g, initial_channels=g, input_resolution=(8, 8)))
        costs.append(sum(op.flops(FlopConvention.MAC2) for t in plan.transitions for op in t.ops))
    # one identical transition per live layer: L/2 + 1 of them
    unit = costs[0] / 5
    assert costs == [unit * (L // 2 + 1) for L in (8, 16, 32, 64)]


def test_v2_compress_cost_grows_like_l_log_l():
    g, Ls = 4, [48, 96, 192, 384, 768]
    compress, older = [], []
    for L in Ls:
        b = L // 3
        plan = C.instantiate(T.log_dense_v2(L, (b, b, b), g), NetworkConfig(growth_rate=g, input_resolution=(8, 8)))
        c = [sum(op.macs for op in t.ops) for t in plan.transitions if t.boundary == 1]
        kinds = [t.kind for t in plan.transitions if t.boundary == 1]
        compress.append(c[kinds.index("compress")])
        older.append(c[kinds.index("retransform")])
    x = np.log(Ls)
    slope = np.polyfit(x, np.log(np.array(compress) / np.log2(Ls)), 1)[0]
    assert abs(slope - 1) < 0.05
    slope_old = np.polyfit(x, np.log(np.array(older) / np.log2(Ls) ** 2), 1)[0]
    assert abs(slope_old) < 0.15


def test_lazy_transitions_skip_unconsumed_layers():
    topo = T.log_dense_v1(24, (8, 8, 8))
    eager = C.instantiate(topo, NetworkConfig(growth_rate=4, lazy_transitions=False))
    lazy = C.instantiate(topo, NetworkConfig(growth_rate=4, lazy_transitions=True))
    assert len(eager.transitions) == 9 + 17
    assert len(lazy.transitions) < len(eager.transitions)
    consumers = topo.consumers()
    for t in lazy.transitions:
        assert any(topo.blocks[c] > t.boundary for c in consumers[t.target])


def test_fc_plan_shape():
    plan = C.fc_plan()
    assert plan.topology.L == 91
    assert len(plan.heads) == 11
    assert all(h.per_pixel for h in plan.heads)
    kinds = {t.boundary: t.kind for t in plan.transitions}
    assert [kinds[b] for b in sorted(kinds)] == ["down"] * 5 + ["up"] * 5
    with pytest.raises(ConfigError):
        C.fc_plan(NetworkConfig(growth_rate=4, block_sizes=(2, 2), input_resolution=(8, 8)))


def test_table2_rows():
    fc = C.flops(C.fc_plan())
    dn = C.flops(C.fc_densenet103_plan())
    assert fc.total_params == pytest.approx(4.7e6, rel=0.10)
    assert fc.total_flops == pytest.approx(42.0e9, rel=0.20)
    assert dn.total_params == pytest.approx(9.4e6, rel=0.10)
    assert dn.total_flops == pytest.approx(39.4e9, rel=0.20)
    assert sum(C.block_cost_distribution(fc)[-2:]) >= 0.45


def test_report_json_round_trip_keys():
    rep = C.flops(C.instantiate(T.log_dense_v1(4), NetworkConfig(growth_rate=2)))
    d = rep.to_dict()
    assert d["convention"] == "mac2"
    assert d["total_flops"] == rep.total_flops
    assert rep.to_json() == C.flops(C.instantiate(T.log_dense_v1(4), NetworkConfig(growth_rate=2))).to_json()
