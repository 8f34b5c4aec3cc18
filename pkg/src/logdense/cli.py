"""Command-line front end: generate, render, analyze, cost, verify, gradcheck.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
Every command writes to stdout unless ``--out`` is given, in which case the
output file gets a ``.manifest.json`` sidecar recording the command, its
arguments, the tool version, the seed and the sha256 of each output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from . import analysis, cost, micronet
from .topology import ConfigError, Scheme, Topology, generate

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- argument helpers ----------------------------------------------------------


def int_list(text: str) -> list[int]:
    """``"16,64"`` or ``"16-20"`` or a mix of both: ``"16-18,32"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty integer list")
    return out


def resolution(text: str) -> tuple[int, int]:
    try:
        if "x" in text:
            h, w = text.lower().split("x")
            return int(h), int(w)
        return int(text), int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution {text!r}") from None


def even_blocks(L: int, n: int) -> tuple[int, ...]:
    """Split ``L`` layers into ``n`` blocks, earlier blocks taking the remainder."""
    if n < 1 or n > L:
        raise ConfigError(f"cannot split {L} layers into {n} blocks")
    q, r = divmod(L, n)
    return tuple(q + (1 if b < r else 0) for b in range(n))


def load_topology(path: str) -> Topology:
    try:
        text = sys.stdin.read() if path == "-" else Path(path).read_text()
        return Topology.from_json(text)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"malformed topology file {path}: {exc}") from None


# -- output and manifests ----------------------------------------------------------


def _manifest_args(args: argparse.Namespace) -> dict:
    skip = {"func", "out"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def emit(args: argparse.Namespace, payload: str | bytes, seed: int | None = None) -> None:
    data = payload.encode() if isinstance(payload, str) else payload
    if not args.out:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    out = Path(args.out)
    out.write_bytes(data)
    manifest = {
        "command": args.command,
        "arguments": _manifest_args(args),
        "version": __version__,
        "seed": seed,
        "outputs": {out.name: hashlib.sha256(data).hexdigest()},
    }
    sidecar = out.with_name(out.name + ".manifest.json")
    sidecar.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def csv_text(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


# -- commands --------------------------------------------------------------------------


def _topology_from_args(args: argparse.Namespace) -> Topology:
    blocks = tuple(args.blocks) if args.blocks else None
    return generate(
        args.scheme,
        args.layers,
        blocks,
        budget=args.budget,
        min_inputs=args.min_inputs,
        g=args.growth_rate,
    )


def cmd_generate(args: argparse.Namespace) -> int:
    topo = _topology_from_args(args)
    text = topo.to_dot() if args.format == "dot" else topo.to_json()
    emit(args, text if text.endswith("\n") else text + "\n")
    return EXIT_OK


def render_pgm(matrix: list[list[int]]) -> str:
    """Plain (P2) graymap: black (0) where the row node takes input from the column node."""
    n = len(matrix)
    lines = ["P2", f"{n} {n}", "1"]
    lines += [" ".join("0" if v else "1" for v in row) for row in matrix]
    return "\n".join(lines) + "\n"


def render_ascii(matrix: list[list[int]]) -> str:
    return "".join("".join("#" if v else "." for v in row) + "\n" for row in matrix)


def cmd_render(args: argparse.Namespace) -> int:
    topo = load_topology(args.topology)
    mat = topo.connection_matrix()
    emit(args, render_pgm(mat) if args.format == "pgm" else render_ascii(mat))
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    topo = load_topology(args.topology)
    if args.format == "csv":
        emit(args, csv_text([analysis.analysis_row(topo, args.method)]))
        return EXIT_OK
    report = analysis.mbd(topo, args.method)
    stats = analysis.degree_stats(topo)
    doc = {
        "scheme": topo.scheme.value,
        "L": topo.L,
        "n_block": topo.n_block,
        "bd": report.to_dict(),
        "mbd_bound": analysis.mbd_bound(topo),
        "degree": {
            "mean_in_degree": str(stats.mean_in_degree),
            "max_in_degree": stats.max_in_degree,
            "max_out_degree": stats.max_out_degree,
            "total_edges": stats.total_edges,
        },
    }
    emit(args, json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def _cost_plan(args: argparse.Namespace) -> cost.NetworkPlan:
    overrides = {}
    if args.growth_rate is not None:
        overrides["growth_rate"] = args.growth_rate
    if args.resolution is not None:
        overrides["input_resolution"] = args.resolution
    if args.num_classes is not None:
        overrides["num_classes"] = args.num_classes
    if args.arch == "fc-logdense-103":
        base = cost.NetworkConfig(growth_rate=24, input_resolution=(224, 224), num_classes=11)
        return cost.fc_plan(replace(base, **overrides))
    if args.arch == "fc-densenet-103":
        base = cost.NetworkConfig(
            growth_rate=16, input_resolution=(224, 224), num_classes=11, initial_channels=48
        )
        return cost.fc_densenet103_plan(replace(base, **overrides))
    topo = load_topology(args.arch)
    cfg = cost.NetworkConfig(
        bottleneck=args.bottleneck,
        hub_multiplier=args.hub_multiplier,
        **overrides,
    )
    return cost.instantiate(topo, cfg)


def cmd_cost(args: argparse.Namespace) -> int:
    plan = _cost_plan(args)
    report = cost.flops(plan, args.convention)
    if args.format == "json":
        emit(args, report.to_json() + "\n")
    elif args.format == "csv":
        row = {
            "name": report.name,
            "convention": report.convention.value,
            "gflops": f"{report.total_flops / 1e9:.4f}",
            "params_m": f"{report.total_params / 1e6:.4f}",
            "flops": report.total_flops,
            "params": report.total_params,
        }
        emit(args, csv_text([row]))
    else:
        lines = [report.table_row()]
        if args.blocks_report:
            for b, frac in enumerate(cost.block_cost_distribution(report)):
                lines.append(f"  block {b:2d} {frac:8.4f}")
        lines += [f"  # {a}" for a in report.assumptions]
        emit(args, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    if args.prop1:
        rows = []
        for L in args.layers or [16, 64, 256, 1024]:
            for n in args.n_blocks:
                topo = analysis_topology_v1(L, n)
                rep = analysis.verify_prop1(topo, args.method)
                rows.append(
                    {
                        "L": L,
                        "n_block": topo.n_block,
                        "pairs": rep.pairs_checked,
                        "failures": len(rep.failures),
                        "min_slack": rep.min_slack,
                        "pass": rep.passed,
                    }
                )
    elif args.prop2:
        rows = []
        for r in analysis.verify_prop2(args.layers or [16, 64, 256, 1024, 4096], method=args.method):
            rows.append(
                {
                    "L": r.L,
                    "connections": r.connections,
                    "connection_bound": f"{r.connection_bound:.3f}",
                    "mbd": r.mbd,
                    "mbd_bound": r.mbd_bound,
                    "mbd_no_step_b": r.mbd_no_step_b,
                    "mbd_no_step_b_bound": r.mbd_no_step_b_bound,
                    "pass": r.passed,
                }
            )
    else:
        rows = []
        for r in analysis.fig6a_rows(args.layers or range(16, 2001), args.min4_limit):
            delta_ok = r.delta_in_band
            rows.append(
                {
                    "L": r.L,
                    "mean_min1": f"{float(r.mean_min1):.6f}",
                    "mean_min4": "" if r.mean_min4 is None else f"{float(r.mean_min4):.6f}",
                    "delta": "" if r.delta is None else f"{float(r.delta):.6f}",
                    "min1_in_band": r.min1_in_band,
                    "delta_in_band": "" if delta_ok is None else delta_ok,
                    "pass": r.min1_in_band and delta_ok is not False,
                }
            )
    emit(args, csv_text(rows))
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_FAIL


def analysis_topology_v1(L: int, n_block: int) -> Topology:
    return generate(Scheme.LOGDENSE_V1, L, even_blocks(L, n_block))


def cmd_gradcheck(args: argparse.Namespace) -> int:
    topo = _topology_from_args(args)
    cfg = cost.NetworkConfig(
        growth_rate=args.growth_rate,
        input_resolution=args.resolution,
        num_classes=args.num_classes,
        bottleneck=args.bottleneck,
        hub_multiplier=args.hub_multiplier,
    )
    model = micronet.build(topo, cfg, seed=args.seed)
    report = micronet.grad_check(model, epsilon=args.epsilon, per_array=args.per_array, seed=args.seed)
    emit(args, json.dumps(report.to_dict(), indent=2) + "\n", seed=args.seed)
    return EXIT_OK if report.passed else EXIT_FAIL


# -- parser ------------------------------------------------------------------------


def _add_topology_flags(p: argparse.ArgumentParser, default_layers: int | None = None) -> None:
    p.add_argument("--scheme", required=True, choices=[s.value for s in Scheme])
    p.add_argument("--layers", "-L", type=int, default=default_layers, help="number of feature layers")
    p.add_argument("--blocks", type=int_list, help="block sizes, e.g. 8,8,8")
    p.add_argument("--budget", choices=["log", "half"], default="log", help="nearest / evenly-spaced budget")
    p.add_argument("--min-inputs", type=int, default=1, help="loglog augmentation floor")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logdense", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="emit a topology as JSON or DOT")
    _add_topology_flags(p)
    p.add_argument("--growth-rate", "-g", type=int, default=12, help="sets the V2 compression width")
    p.add_argument("--format", choices=["json", "dot"], default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("render", help="connection matrix as PGM or ASCII")
    p.add_argument("topology", help="topology JSON file, or - for stdin")
    p.add_argument("--format", choices=["pgm", "ascii"], default="pgm")
    p.add_argument("--out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("analyze", help="BD / MBD / degree report")
    p.add_argument("topology")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--method", choices=["bfs", "dp", "queue"], default="bfs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("cost", help="FLOPs and parameter count")
    p.add_argument("--arch", default="fc-logdense-103", help="fc-logdense-103, fc-densenet-103 or a topology file")
    p.add_argument("--growth-rate", "-g", type=int)
    p.add_argument("--resolution", type=resolution, help="H or HxW")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--bottleneck", action="store_true")
    p.add_argument("--hub-multiplier", type=int, default=1)
    p.add_argument("--convention", choices=[c.value for c in cost.FlopConvention])
    p.add_argument("--blocks-report", action="store_true", help="per-block FLOP fractions")
    p.add_argument("--format", choices=["text", "json", "csv"], default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("verify", help="check the distance and degree properties over a sweep")
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--prop1", action="store_true", help="log-dense V1 BD bound, exhaustive")
    which.add_argument("--prop2", action="store_true", help="loglog edge count and MBD bound")
    which.add_argument("--fig6a", action="store_true", help="loglog mean in-degree bands")
    p.add_argument("--layers", "-L", type=int_list)
    p.add_argument("--n-blocks", type=int_list, default=[1], help="block counts for --prop1")
    p.add_argument("--min4-limit", type=int, default=1700)
    p.add_argument("--method", choices=["bfs", "dp", "queue"], default="bfs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gradcheck", help="finite-difference check of a desk-scale network")
    _add_topology_flags(p, default_layers=8)
    p.add_argument("--growth-rate", "-g", type=int, default=2)
    p.add_argument("--resolution", type=resolution, default=(4, 4))
    p.add_argument("--num-classes", type=int, default=3)
    p.add_argument("--bottleneck", action="store_true")
    p.add_argument("--hub-multiplier", type=int, default=1)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--per-array", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, ValueError) as exc:
        print(f"logdense {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
