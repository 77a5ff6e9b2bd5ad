"""Command line interface.

Subcommands: generate, fit, attribute, evaluate, bench. Every command is a
pure function of its flags and input files; all randomness flows through
explicit --seed flags, so outputs are reproducible byte for byte (bench
timing columns excepted, they are measurements). Exit codes: 0 success,
2 input error, 3 numerical error, 4 attribution error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import attribution, evaluation, mechanism, scenarios
from .attribution import (
    EmptyReferencePool,
    GameConfig,
    IgConfig,
    METHODS,
    attribute_batch,
    report_to_json,
)
from .dag import CycleDetected, UnknownNode, load_graph
from .mechanism import Hyperparams, SingularPrecision, fit_posterior, load_model, save_model
from .noise import KeyMismatch
from .shapley import DegenerateSystem, TooManyPlayers

ATTRIBUTION_ERRORS = (TooManyPlayers, DegenerateSystem, EmptyReferencePool, KeyMismatch)


def _write_text_atomic(path: str, content: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(content)
    os.replace(tmp, path)


def _int_list(raw: str) -> list[int]:
    return [int(part) for part in raw.split(",") if part.strip()]


def _method_list(raw: str) -> list[str]:
    methods = [part.strip() for part in raw.split(",") if part.strip()]
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    return methods


def _prior_precision(raw: str) -> str | float:
    if raw in ("posterior", "alpha", "diffuse"):
        return raw
    return float(raw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisyrca",
        description="Root cause attribution for DAG systems with noisy mechanisms",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a benchmark case directory")
    gen_sub = gen.add_subparsers(dest="scenario", required=True)
    for name in ("random", "microservice", "supplychain"):
        g = gen_sub.add_parser(name)
        g.add_argument("--seed", type=int, required=True)
        g.add_argument("--mix", choices=scenarios.MIXES, default="both")
        g.add_argument("--out", required=True)
        g.add_argument("--normal-rows", type=int, default=2000)
        g.add_argument("--abnormal-rows", type=int, default=10)
        if name == "random":
            g.add_argument("--nodes", type=int, required=True)

    fit = sub.add_parser("fit", help="fit the mechanism model on normal data")
    fit.add_argument("--graph", required=True)
    fit.add_argument("--data", required=True)
    fit.add_argument("--alpha", type=float, default=100.0)
    fit.add_argument("--beta", type=float, default=1.0)
    fit.add_argument("--out", required=True)

    att = sub.add_parser("attribute", help="attribute an abnormal batch")
    att.add_argument("--model", required=True)
    att.add_argument("--abnormal", required=True)
    att.add_argument("--target", required=True, help="node name or id")
    att.add_argument("--method", choices=METHODS, required=True)
    att.add_argument("--reference-data", help="normal data CSV (all methods but naive)")
    att.add_argument("--steps", type=int, default=50)
    att.add_argument("--references", type=int, default=5)
    att.add_argument("--num-subsets", type=int, default=1000)
    att.add_argument("--num-permutations", type=int, default=25)
    att.add_argument("--instances", type=int, default=5)
    att.add_argument(
        "--prior-precision", type=_prior_precision, default="diffuse",
        help="refit anchor for edge-noise inference: posterior, alpha, "
        "diffuse, or an explicit precision value",
    )
    att.add_argument("--early-stop", type=float, default=None)
    att.add_argument("--aggregate", choices=attribution.AGGREGATES, default="factored")
    att.add_argument("--seed", type=int, default=None)
    att.add_argument("--out", required=True)

    ev = sub.add_parser("evaluate", help="NDCG of methods over a case directory")
    ev.add_argument("--cases", required=True)
    ev.add_argument("--methods", default=",".join(METHODS))
    ev.add_argument("--k", default="5")
    ev.add_argument("--alpha", type=float, default=100.0)
    ev.add_argument("--beta", type=float, default=1.0)
    ev.add_argument("--steps", type=int, default=50)
    ev.add_argument("--references", type=int, default=5)
    ev.add_argument("--num-subsets", type=int, default=1000)
    ev.add_argument("--num-permutations", type=int, default=25)
    ev.add_argument("--instances", type=int, default=5)
    ev.add_argument("--early-stop", type=float, default=0.05)
    ev.add_argument(
        "--prior-precision", type=_prior_precision, default="diffuse",
        help="refit anchor for edge-noise inference: posterior, alpha, "
        "diffuse, or an explicit precision value",
    )
    ev.add_argument("--aggregate", choices=attribution.AGGREGATES, default="factored")
    ev.add_argument("--seed", type=int, required=True)
    ev.add_argument("--out", required=True)

    be = sub.add_parser("bench", help="runtime scaling of the methods")
    be.add_argument("--sizes", default="10,20,50,100,200")
    be.add_argument("--methods", default=",".join(METHODS))
    be.add_argument("--budget", type=float, default=60.0)
    be.add_argument("--seed", type=int, required=True)
    be.add_argument("--out", required=True)
    return parser


def cmd_generate(args: argparse.Namespace) -> int:
    if not os.path.isdir(args.out):
        print(f"error: output directory {args.out!r} does not exist", file=sys.stderr)
        return 2
    if args.scenario == "random":
        case = scenarios.gen_random_graph_case(
            args.nodes, args.normal_rows, args.abnormal_rows, args.mix, args.seed
        )
    elif args.scenario == "microservice":
        case = scenarios.gen_microservice_case(
            args.seed, args.mix, args.normal_rows, args.abnormal_rows
        )
    else:
        case = scenarios.gen_supply_chain_case(
            args.seed, args.mix, args.normal_rows, args.abnormal_rows
        )
    scenarios.save_case(case, args.out)
    truth = case.truth
    print(f"scenario={case.scenario} seed={case.seed} mix={case.mix}")
    print(
        f"nodes={case.dag.node_count} edges={len(case.dag.edges)} "
        f"target={case.dag.names[case.target]}"
    )
    for v in sorted(truth.root_cause_nodes):
        print(f"cause node {case.dag.names[v]} relevance={truth.relevance[v]}")
    for e in sorted(truth.root_cause_edges):
        print(
            f"cause edge {case.dag.names[e[0]]}->{case.dag.names[e[1]]} "
            f"relevance={truth.relevance[e]}"
        )
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    dag = load_graph(args.graph)
    names, data = mechanism.load_dataset(args.data)
    if list(names) != list(dag.names):
        print("error: data columns do not match graph nodes", file=sys.stderr)
        return 2
    hyper = Hyperparams(alpha=args.alpha, beta=args.beta)
    model = fit_posterior(dag, data, hyper)
    save_model(model, args.out)
    print(f"fitted {dag.node_count} nodes on {data.shape[0]} rows -> {args.out}")
    return 0


def cmd_attribute(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    names, abnormal = mechanism.load_dataset(args.abnormal)
    if list(names) != list(model.dag.names):
        print("error: abnormal columns do not match model nodes", file=sys.stderr)
        return 2
    try:
        target = int(args.target)
        model.dag._check_node(target)
    except ValueError:
        target = model.dag.node_by_name(args.target)
    if args.method != "naive" and args.seed is None:
        print("error: --seed is required for stochastic methods", file=sys.stderr)
        return 2
    ig_cfg = None
    game_cfg = None
    if args.method != "naive":
        if not args.reference_data:
            print(
                "error: --reference-data is required for this method",
                file=sys.stderr,
            )
            return 2
        ref_names, reference = mechanism.load_dataset(args.reference_data)
        if list(ref_names) != list(model.dag.names):
            print("error: reference columns do not match model nodes", file=sys.stderr)
            return 2
        ig_cfg = IgConfig(
            reference_data=reference, steps=args.steps, references=args.references
        )
        game_cfg = GameConfig(
            reference_data=reference,
            num_subsets=args.num_subsets,
            num_permutations=args.num_permutations,
            instances=args.instances,
            early_stop=args.early_stop,
        )
    report = attribute_batch(
        model,
        target,
        abnormal,
        args.method,
        ig_cfg=ig_cfg,
        game_cfg=game_cfg,
        rng_seed=args.seed if args.seed is not None else 0,
        prior_precision=args.prior_precision,
        aggregate=args.aggregate,
    )
    payload = json.dumps(report_to_json(report, list(model.dag.names)), indent=2)
    _write_text_atomic(args.out, payload + "\n")
    print(f"method={args.method} target={model.dag.names[target]} rows={abnormal.shape[0]}")
    for rank, entry in enumerate(report.ranking[:10], start=1):
        if entry.kind == "node":
            label = model.dag.names[entry.id]
        else:
            label = f"{model.dag.names[entry.id[0]]}->{model.dag.names[entry.id[1]]}"
        print(f"{rank:2d}. {entry.kind:4s} {label} score={entry.score:.6g}")
    return 0


def _case_dirs(root: str) -> list[str]:
    out = []
    for name in sorted(os.listdir(root)):
        path = os.path.join(root, name)
        if os.path.isdir(path) and os.path.exists(os.path.join(path, "graph.json")):
            out.append(path)
    if not out:
        raise ValueError(f"no case directories under {root!r}")
    return out


def cmd_evaluate(args: argparse.Namespace) -> int:
    methods = _method_list(args.methods)
    k_values = _int_list(args.k)
    if not k_values:
        raise ValueError("--k must list at least one cutoff")
    cases = [scenarios.load_case(d) for d in _case_dirs(args.cases)]
    cfg = evaluation.EvalConfig(
        hyper=Hyperparams(alpha=args.alpha, beta=args.beta),
        ig_steps=args.steps,
        ig_references=args.references,
        num_subsets=args.num_subsets,
        num_permutations=args.num_permutations,
        instances=args.instances,
        early_stop=args.early_stop,
        prior_precision=args.prior_precision,
        aggregate=args.aggregate,
        rng_seed=args.seed,
    )
    all_results = []
    for method in methods:
        all_results.extend(evaluation.evaluate_method(cases, method, cfg, k_values))
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["method", "k", "variant", "mean", "std", "cases"])
    for res in all_results:
        writer.writerow(
            [res.method, res.k, res.variant, repr(res.mean), repr(res.std), len(res.per_case)]
        )
    _write_text_atomic(args.out, buf.getvalue())
    by_key = {(r.method, r.k, r.variant): r for r in all_results}
    for k in k_values:
        print(f"NDCG@{k} over {len(cases)} cases")
        header = f"{'method':>12s} {'nodes':>8s} {'edges':>8s} {'combined':>9s}"
        print(header)
        for method in methods:
            cells = []
            for variant in ("nodes", "edges", "combined"):
                res = by_key.get((method, k, variant))
                cells.append(f"{res.mean:8.3f}" if res else f"{'-':>8s}")
            print(f"{method:>12s} {cells[0]} {cells[1]} {cells[2]:>9s}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    sizes = _int_list(args.sizes)
    methods = _method_list(args.methods)
    result = evaluation.bench_runtime(sizes, methods, args.budget, args.seed)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["method", "nodes", "edges", "seconds", "evals", "status"])
    for rec in result.records:
        writer.writerow(
            [
                rec.method,
                rec.num_ancestors,
                rec.num_edges,
                repr(rec.wall_time),
                rec.evaluation_count,
                "ok",
            ]
        )
    for skip in result.skipped:
        writer.writerow([skip.method, skip.num_ancestors, "", "", "", f"skipped: {skip.reason}"])
    _write_text_atomic(args.out, buf.getvalue())
    print(f"benchmarked sizes {sizes} -> {args.out}")
    for method in methods:
        slope = result.slope(method)
        cslope = result.count_slope(method)
        if slope == slope:  # not NaN
            print(
                f"{method:>12s}: time slope {slope:.2f}, "
                f"evaluation slope {cslope:.2f}"
            )
        else:
            print(f"{method:>12s}: too few measured cells for a slope")
    for skip in result.skipped:
        print(f"{skip.method:>12s}: size {skip.num_ancestors} skipped ({skip.reason})")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "attribute":
            return cmd_attribute(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "bench":
            return cmd_bench(args)
        raise ValueError(f"unknown command {args.command!r}")
    except ATTRIBUTION_ERRORS as exc:
        print(f"attribution error: {exc}", file=sys.stderr)
        return 4
    except (SingularPrecision, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, KeyError, CycleDetected, UnknownNode) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


def app() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
