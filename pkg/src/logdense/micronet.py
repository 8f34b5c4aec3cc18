"""Desk-scale differentiable network built from a :class:`NetworkPlan`.

Parameter shapes are read off the plan's op list, so every parameter counted
by the cost model exists here as an array.  Normalization is a learnable
per-channel affine (no batch statistics) to keep gradients deterministic.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
import numpy as np

from . import autodiff as ad
from .cost import NetworkConfig, NetworkPlan, Op, instantiate
from .topology import ConfigError, Topology

__all__ = [
    "DESK_LIMITS",
    "LossSpec",
    "MicroModel",
    "ForwardResult",
    "GradCheckReport",
    "TrainingDiverged",
    "build",
    "build_from_plan",
    "forward",
    "loss",
    "backward",
    "grad_check",
    "gradient_reach",
    "structural_reach",
    "train_toy",
    "synthetic_dataset",
    "trajectory_csv",
]

DESK_LIMITS = {"max_layers": 64, "max_growth_rate": 8, "max_side": 8}


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, trajectory: list[dict]) -> None:
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.trajectory = trajectory


@dataclass(frozen=True)
class LossSpec:
    """Half of the weight on the final head, the other half split evenly
    across auxiliary heads.  ``final_only`` zeroes the auxiliary share."""

    num_aux: int
    final_only: bool = False

    @property
    def final_weight(self) -> float:
        return 1.0 if self.num_aux == 0 or self.final_only else 0.5

    @property
    def aux_weights(self) -> tuple[float, ...]:
        if self.final_only:
            return (0.0,) * self.num_aux
        if self.num_aux == 0:
            return ()
        return (0.5 / self.num_aux,) * self.num_aux

    @property
    def weights(self) -> tuple[float, ...]:
        """Aux weights in block order followed by the final weight."""
        return self.aux_weights + (self.final_weight,)


@dataclass
class MicroModel:
    plan: NetworkPlan
    params: dict[str, np.ndarray]
    seed: int
    wiring: dict[int, tuple[int, ...]] = field(default_factory=dict)

    @property
    def topology(self) -> Topology:
        return self.plan.topology

    @property
    def num_aux(self) -> int:
        return len(self.plan.heads) - 1

    def num_parameters(self) -> int:
        return sum(a.size for a in self.params.values())

    def copy(self) -> "MicroModel":
        return MicroModel(self.plan, {k: v.copy() for k, v in self.params.items()}, self.seed, dict(self.wiring))


@dataclass
class ForwardResult:
    activations: dict[int, ad.Tensor]
    aux: list[ad.Tensor]
    final: ad.Tensor
    inputs: ad.Tensor | None = None

    @property
    def predictions(self) -> list[ad.Tensor]:
        return self.aux + [self.final]


# -- construction ----------------------------------------------------------------


def _op_param_shapes(prefix: str, ops: tuple[Op, ...]) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) for each parameter array of ``ops``."""
    shapes = []
    for n, op in enumerate(ops):
        key = f"{prefix}.{n}.{op.kind}"
        if op.kind in ("conv", "upconv"):
            fan_in = op.c_in * op.kernel**2
            shapes.append((f"{key}.weight", (op.c_out, op.c_in, op.kernel, op.kernel), fan_in))
            if op.bias:
                shapes.append((f"{key}.bias", (op.c_out,), fan_in))
        elif op.kind == "linear":
            shapes.append((f"{key}.weight", (op.c_out, op.c_in), op.c_in))
            if op.bias:
                shapes.append((f"{key}.bias", (op.c_out,), op.c_in))
        elif op.kind == "norm":
            shapes.append((f"{key}.scale", (op.c_in,), 0))
            shapes.append((f"{key}.shift", (op.c_in,), 0))
    return shapes


def _prefixes(plan: NetworkPlan):
    yield "stem", plan.stem
    for rec in plan.layers:
        yield f"layer{rec.node}", rec.ops
    for t in plan.transitions:
        tag = t.target if t.target is not None else "x"
        yield f"trans{t.boundary}.{t.kind}.{tag}", t.ops
    for h in plan.heads:
        yield f"head{h.block}", h.ops


def _check_desk(plan: NetworkPlan) -> None:
    cfg = plan.config
    H, W = cfg.input_resolution
    if plan.topology is None:
        raise ConfigError("micronet needs a plan built from a topology")
    if plan.topology.L > DESK_LIMITS["max_layers"]:
        raise ConfigError(f"L={plan.topology.L} exceeds desk limit {DESK_LIMITS['max_layers']}")
    if cfg.g > DESK_LIMITS["max_growth_rate"]:
        raise ConfigError(f"g={cfg.g} exceeds desk limit {DESK_LIMITS['max_growth_rate']}")
    if max(H, W) > DESK_LIMITS["max_side"]:
        raise ConfigError(f"{H}x{W} input exceeds desk limit {DESK_LIMITS['max_side']}")


def build_from_plan(plan: NetworkPlan, seed: int = 0) -> MicroModel:
    _check_desk(plan)
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for prefix, ops in _prefixes(plan):
        for name, shape, fan_in in _op_param_shapes(prefix, ops):
            if name.endswith(".scale"):
                params[name] = np.ones(shape)
            elif name.endswith(".shift"):
                params[name] = np.zeros(shape)
            else:
                bound = 1.0 / math.sqrt(fan_in)
                params[name] = rng.uniform(-bound, bound, size=shape)
    wiring = {rec.node: rec.inputs for rec in plan.layers}
    for t in plan.transitions:
        if t.kind == "compress":
            wiring[t.target] = t.sources
    return MicroModel(plan, params, seed, wiring)


def build(topo: Topology, cfg: NetworkConfig, seed: int = 0) -> MicroModel:
    """Instantiate ``topo`` under ``cfg`` and initialize it from ``seed``."""
    return build_from_plan(instantiate(topo, cfg), seed)


# -- forward --------------------------------------------------------------------


class _Params:
    """Wraps arrays as leaf tensors for one forward pass."""

    def __init__(self, arrays: dict[str, np.ndarray]) -> None:
        self.leaves = {k: ad.Tensor(v, name=k) for k, v in arrays.items()}
        self.masks: list[np.ndarray] = []  # ReLU activity patterns, in execution order

    def __getitem__(self, key: str) -> ad.Tensor:
        return self.leaves[key]


def _apply_ops(prefix: str, ops: tuple[Op, ...], x: ad.Tensor, p: _Params) -> ad.Tensor:
    for n, op in enumerate(ops):
        key = f"{prefix}.{n}.{op.kind}"
        if op.kind == "norm":
            x = ad.relu(ad.affine(x, p[f"{key}.scale"], p[f"{key}.shift"]))
            p.masks.append(x.data > 0)
        elif op.kind == "conv":
            bias = p[f"{key}.bias"] if op.bias else None
            x = ad.conv2d(x, p[f"{key}.weight"], pad=op.kernel // 2, bias=bias)
        elif op.kind == "upconv":
            x = ad.upconv2d(x, p[f"{key}.weight"])
        elif op.kind == "pool":
            x = ad.avg_pool2(x)
        elif op.kind == "gap":
            x = ad.global_avg_pool(x)
        elif op.kind == "linear":
            x = ad.linear(x, p[f"{key}.weight"], p[f"{key}.bias"])
        else:
            raise ValueError(f"unknown op kind {op.kind!r}")
    return x


def _run(model: MicroModel, x: np.ndarray, p: _Params) -> ForwardResult:
    plan = model.plan
    cfg = plan.config
    x = np.asarray(x, dtype=np.float64)
    H, W = cfg.input_resolution
    if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, H, W):
        raise ConfigError(f"input shape {x.shape} does not match (N, {cfg.in_channels}, {H}, {W})")
    inp = ad.Tensor(x, name="input")

    # (node, level) -> tensor at that resolution
    feats: dict[tuple[int, int], ad.Tensor] = {}
    native: dict[int, ad.Tensor] = {}
    levels = plan.block_levels
    x0 = _apply_ops("stem", plan.stem, inp, p)
    feats[(0, levels[0])] = native[0] = x0

    layers_by_block: dict[int, list] = {}
    for rec in plan.layers:
        layers_by_block.setdefault(rec.block, []).append(rec)
    trans_by_boundary: dict[int, list] = {}
    for t in plan.transitions:
        trans_by_boundary.setdefault(t.boundary, []).append(t)

    aux: list[ad.Tensor] = []
    final = None
    for b in range(plan.n_block):
        for rec in layers_by_block.get(b, []):
            h = ad.concat([feats[(j, rec.level)] for j in rec.inputs])
            out = _apply_ops(f"layer{rec.node}", rec.ops, h, p)
            feats[(rec.node, rec.level)] = native[rec.node] = out
        for head in plan.heads:
            if head.block != b:
                continue
            h = ad.concat([feats[(j, head.level)] for j in head.inputs])
            pred = _apply_ops(f"head{head.block}", head.ops, h, p)
            if head.final:
                final = pred
            else:
                aux.append(pred)
        for t in trans_by_boundary.get(b, []):
            tag = t.target if t.target is not None else "x"
            prefix = f"trans{t.boundary}.{t.kind}.{tag}"
            src = ad.concat([feats[(j, t.from_level)] for j in t.sources])
            out = _apply_ops(prefix, t.ops, src, p)
            if t.kind == "retransform":
                parts = ad.split(out, [plan.widths[j] for j in t.sources])
                for j, part in zip(t.sources, parts):
                    feats[(j, t.to_level)] = part
            else:
                feats[(t.target, t.to_level)] = out
                if t.kind == "compress":
                    native[t.target] = out
    return ForwardResult(native, aux, final, inp)


def forward(model: MicroModel, x: np.ndarray) -> ForwardResult:
    return _run(model, x, _Params(model.params))


def loss(predictions: ForwardResult, targets, spec: LossSpec) -> ad.Tensor:
    """Weighted cross-entropy over all heads.

    ``targets`` is one label array shared by every head (classification) or a
    list with one label map per head (per-pixel prediction at each head's
    resolution).
    """
    preds = predictions.predictions
    if len(spec.weights) != len(preds):
        raise ValueError(f"loss spec has {len(spec.weights)} weights for {len(preds)} heads")
    if isinstance(targets, (list, tuple)):
        per_head = list(targets)
    else:
        per_head = [targets] * len(preds)
    terms = [ad.cross_entropy(pred, t) for pred, t in zip(preds, per_head)]
    total = ad.weighted_sum(terms, spec.weights)
    total.name = "loss"
    return total


def backward(model: MicroModel, scalar: ad.Tensor, leaves: _Params | None = None) -> dict[str, np.ndarray]:
    """Run reverse mode from ``scalar`` and return a gradient per parameter."""
    scalar.backward()
    grads = {}
    for name, arr in model.params.items():
        g = None if leaves is None else leaves[name].grad
        grads[name] = np.zeros_like(arr) if g is None else g
    return grads


def value_and_grad(model: MicroModel, x: np.ndarray, targets, spec: LossSpec):
    """Loss value, gradient store and forward result for one batch."""
    p = _Params(model.params)
    res = _run(model, x, p)
    total = loss(res, targets, spec)
    grads = backward(model, total, p)
    return float(total.data), grads, res


@dataclass
class GradCheckReport:
    scheme: str
    L: int
    g: int
    max_rel_err: float
    checked: int
    tolerance: float
    worst_param: str = ""
    kinks: int = 0
    max_kink_fraction: float = 0.05

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance and self.kinks <= self.max_kink_fraction * self.checked

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "L": self.L,
            "g": self.g,
            "max_rel_err": self.max_rel_err,
            "checked": self.checked,
            "kinks": self.kinks,
            "worst_param": self.worst_param,
            "pass": self.passed,
        }


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    """``|a-b| / max(|a|, |b|, floor)``; the floor keeps vanishing gradients
    from turning float round-off into large ratios."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def synthetic_dataset(model: MicroModel, n: int = 2, seed: int = 0):
    """Random inputs with labels at every head's resolution."""
    rng = np.random.default_rng(seed)
    cfg = model.plan.config
    H, W = cfg.input_resolution
    x = rng.normal(size=(n, cfg.in_channels, H, W))
    if model.plan.fully_convolutional:
        y = [
            rng.integers(0, cfg.num_classes, size=(n,) + model.plan.resolution(head.level))
            for head in model.plan.heads
        ]
    else:
        y = rng.integers(0, cfg.num_classes, size=n)
    return x, y


def _same_masks(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check(
    model: MicroModel,
    epsilon: float = 1e-4,
    per_array: int = 3,
    seed: int = 0,
    tolerance: float = 1e-4,
    data=None,
    spec: LossSpec | None = None,
    jitter: float = 0.1,
    refinements: int = 3,
) -> GradCheckReport:
    """Central differences against reverse mode on sampled parameter entries.

    ``per_array`` entries are drawn from every parameter array so each op is
    exercised at least once.

    ReLU networks are only piecewise smooth.  A difference is accepted only
    when both probes keep every ReLU on the same side as the base point;
    otherwise the step shrinks tenfold, up to ``refinements`` times.  Entries
    that still straddle a kink are counted in ``kinks`` and excluded from the
    error, and the check fails if they exceed 5% of samples.  The check runs on
    a copy whose norm shifts are jittered by ``jitter``: with zero shifts and
    bias-free convs a dead input pixel gives a pre-activation of exactly 0.
    """
    rng = np.random.default_rng(seed)
    x, y = data if data is not None else synthetic_dataset(model, seed=seed)
    spec = spec or LossSpec(model.num_aux)
    model = model.copy()
    if jitter:
        for name in sorted(model.params):
            if name.endswith(".shift"):
                model.params[name] += rng.uniform(-jitter, jitter, size=model.params[name].shape)

    def run() -> tuple[float, list[np.ndarray]]:
        p = _Params(model.params)
        total = loss(_run(model, x, p), y, spec)
        return float(total.data), p.masks

    p0 = _Params(model.params)
    total = loss(_run(model, x, p0), y, spec)
    grads = backward(model, total, p0)
    base_masks = p0.masks

    worst, worst_name, checked, kinks = 0.0, "", 0, 0
    for name in sorted(model.params):
        flat = model.params[name].reshape(-1)
        picks = rng.choice(flat.size, size=min(per_array, flat.size), replace=False)
        for k in picks:
            orig = flat[k]
            numeric = None
            step = epsilon
            for _ in range(refinements + 1):
                flat[k] = orig + step
                up, m_up = run()
                flat[k] = orig - step
                down, m_down = run()
                flat[k] = orig
                if _same_masks(m_up, base_masks) and _same_masks(m_down, base_masks):
                    numeric = (up - down) / (2 * step)
                    break
                step /= 10
            checked += 1
            if numeric is None:
                kinks += 1
                continue
            err = relative_error(float(grads[name].reshape(-1)[k]), numeric)
            if err > worst:
                worst, worst_name = err, name
    topo = model.topology
    return GradCheckReport(
        topo.scheme.value, topo.L, model.plan.config.g, worst, checked, tolerance, worst_name, kinks
    )


# -- gradient reach -----------------------------------------------------------------


def structural_reach(model: MicroModel, source: int | None = None) -> dict[int, int]:
    """Hop counts from ``source`` (default: last feature layer) over the model's own wiring."""
    topo = model.topology
    if source is None:
        source = topo.feature_nodes[-1]
    dist = {source: 0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for src in model.wiring.get(node, ()):
            if src not in dist:
                dist[src] = dist[node] + 1
                queue.append(src)
    return dist


@dataclass
class Reach:
    node: int
    hops: int | None
    grad_norm: float


def gradient_reach(model: MicroModel, node: int, seed: int = 0) -> Reach:
    """Structural hop count from the final layer to ``node`` and the norm of
    d(final-only loss)/d(output of ``node``)."""
    x, y = synthetic_dataset(model, seed=seed)
    spec = LossSpec(model.num_aux, final_only=True)
    p = _Params(model.params)
    res = _run(model, x, p)
    total = loss(res, y, spec)
    total.backward()
    g = res.activations[node].grad
    norm = 0.0 if g is None else float(np.linalg.norm(g))
    return Reach(node, structural_reach(model).get(node), norm)


# -- toy training ------------------------------------------------------------------------


def train_toy(
    model: MicroModel,
    data,
    steps: int = 200,
    lr: float = 0.1,
    spec: LossSpec | None = None,
) -> list[dict]:
    """Plain gradient descent; returns ``[{step, loss, head0, ...}]``.

    Raises :class:`TrainingDiverged` (carrying the trajectory so far) on a
    non-finite loss.
    """
    x, y = data
    spec = spec or LossSpec(model.num_aux)
    trajectory: list[dict] = []
    for step in range(steps + 1):
        p = _Params(model.params)
        res = _run(model, x, p)
        total = loss(res, y, spec)
        per_head = [float(t.data) for t in total.parents]
        value = float(total.data)
        row = {"step": step, "loss": value}
        row.update({f"head{k}": v for k, v in enumerate(per_head)})
        trajectory.append(row)
        if not np.isfinite(value):
            raise TrainingDiverged(step, trajectory)
        if step == steps:
            break
        grads = backward(model, total, p)
        for name, g in grads.items():
            model.params[name] -= lr * g
    return trajectory


def trajectory_csv(trajectory: list[dict]) -> str:
    buf = io.StringIO()
    if not trajectory:
        return ""
    writer = csv.DictWriter(buf, fieldnames=list(trajectory[0]), lineterminator="\n")
    writer.writeheader()
    for row in trajectory:
        writer.writerow({k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
