"""Command-line interface.

Subcommands: barycenter, embed, decompose, curve, ftest, reconstruct,
spd-embed. Reports are JSON with sorted keys and repr floats, so a fixed
--seed yields byte-identical output across runs. Exit codes: 0 success,
2 parse/validation error, 3 solver failure, 4 degenerate statistic.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .barycenter import (
    BarycenterConfig,
    BarycenterInit,
    free_support_barycenter,
    free_support_fgw_barycenter,
)
from .datasets import (
    load_dataset,
    read_measure_csv,
    read_edges_csv,
    write_edges_csv,
    write_matrix_csv,
    write_measure_csv,
)
from .errors import (
    DegenerateDenominator,
    DegenerateTraces,
    InstanceTooLarge,
    LotvarError,
    ParseError,
    SolverFailure,
)
from .features import (
    SpdFeature,
    compute_lambda_star,
    embed_spd,
    kernel_reconstruct,
    project_spd,
)
from .gw_fgw import FgwParams
from .lot import project_fgw, project_gw, project_w, vectorize_embedding
from .measures import MeasureNetwork, validate_measure
from .exact_ot import solve_w2
from .gw_fgw import solve_fgw, solve_gw
from .stats import permutation_test, variance_curve, variance_decomposition

EXIT_PARSE = 2
EXIT_SOLVER = 3
EXIT_DEGENERATE = 4

PARSE_ERRORS = (ParseError, ValueError, OSError)
DEGENERATE_ERRORS = (DegenerateDenominator, DegenerateTraces)
SOLVER_ERRORS = (SolverFailure, InstanceTooLarge)


def _write_out(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _report_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _bases(elements):
    return [el.base if isinstance(el, MeasureNetwork) else el for el in elements]


def _fit_template(elements, args):
    cfg = BarycenterConfig(
        n_support=args.n_support,
        max_outer_iters=args.max_iters,
        tol=args.tol,
        init=BarycenterInit.SEEDED_GAUSSIAN if args.init == "gaussian" else BarycenterInit.RANDOM_SUBSAMPLE,
        seed=args.seed,
    )
    if args.mode == "w":
        return free_support_barycenter(_bases(elements), cfg)
    alpha = 0.0 if args.mode == "gw" else args.alpha
    if not all(isinstance(el, MeasureNetwork) for el in elements):
        raise ValueError(f"mode {args.mode!r} requires network elements")
    return free_support_fgw_barycenter(elements, replace(cfg, alpha=alpha))


def _cmd_barycenter(args) -> int:
    data = load_dataset(args.manifest)
    result = _fit_template(data.elements, args)
    bary = result.barycenter
    if isinstance(bary, MeasureNetwork):
        write_measure_csv(args.nodes_out, bary.base)
        write_edges_csv(args.edges_out, bary.edges)
    else:
        write_measure_csv(args.nodes_out, bary)
    payload = {
        "command": "barycenter",
        "mode": args.mode,
        "alpha": args.alpha if args.mode == "fgw" else None,
        "n_support": args.n_support,
        "seed": args.seed,
        "iterations": len(result.variance_trace) - 1,
        "variance_trace": [float(v) for v in result.variance_trace],
        "nodes_out": args.nodes_out,
        "edges_out": args.edges_out if isinstance(bary, MeasureNetwork) else None,
    }
    _write_out(_report_json(payload), args.out)
    return 0


def _load_template(args, elements):
    if args.barycenter is None:
        return _fit_template(elements, args).barycenter
    ambient = elements[0].base.dim if isinstance(elements[0], MeasureNetwork) else elements[0].dim
    base = read_measure_csv(args.barycenter, ambient, False)
    if args.mode == "w":
        return base
    edges = read_edges_csv(args.barycenter_edges, base.n)
    from .measures import validate_network

    return validate_network(base.weights, base.points, edges)


def _cmd_decompose(args) -> int:
    data = load_dataset(args.manifest)
    template = _load_template(args, data.elements)
    if args.mode == "w":
        dataset = _bases(data.elements)
    else:
        if not all(isinstance(el, MeasureNetwork) for el in data.elements):
            raise ValueError(f"mode {args.mode!r} requires network elements")
        dataset = data.elements
    dec = variance_decomposition(
        dataset,
        template,
        mode=args.mode,
        alpha=args.alpha if args.mode == "fgw" else None,
        params=FgwParams(alpha=args.alpha if args.mode == "fgw" else 0.0, seed=args.seed),
    )
    payload = {
        "mode": args.mode,
        "alpha": args.alpha if args.mode == "fgw" else None,
        "n_support": dec.n_support,
        "total": dec.total,
        "deterministic": dec.deterministic,
        "probabilistic": dec.probabilistic,
        "percent": dec.percent,
        "certified": all(r.coupling_certified_optimal for r in dec.per_element),
        "seed": args.seed,
    }
    _write_out(_report_json(payload), args.out)
    return 0


def _cmd_curve(args) -> int:
    data = load_dataset(args.manifest)
    n_values = [int(s) for s in args.n_values.split(",") if s]
    if args.mode == "w":
        dataset = _bases(data.elements)
    else:
        dataset = data.elements
    cfg = BarycenterConfig(
        n_support=n_values[0],
        max_outer_iters=args.max_iters,
        tol=args.tol,
        seed=args.seed,
    )
    curve = variance_curve(
        dataset,
        n_values,
        mode=args.mode,
        cfg=cfg,
        alpha=args.alpha if args.mode == "fgw" else None,
    )
    lines = ["n,total,deterministic,probabilistic,percent"]
    for dec in curve:
        lines.append(
            f"{dec.n_support},{dec.total!r},{dec.deterministic!r},"
            f"{dec.probabilistic!r},{dec.percent!r}"
        )
    _write_out("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_ftest(args) -> int:
    data = load_dataset(args.manifest)
    measures = _bases(data.elements)
    groups: dict[str, list[int]] = {}
    for i, label in enumerate(data.groups):
        groups.setdefault(label, []).append(i)
    merged = []
    for label in sorted(groups):
        idx = groups[label]
        pts = np.concatenate([measures[i].points for i in idx], axis=0)
        wts = np.concatenate([measures[i].weights for i in idx])
        merged.append(validate_measure(wts / wts.sum(), pts))
    cfg = BarycenterConfig(
        n_support=args.n_support,
        max_outer_iters=args.max_iters,
        tol=args.tol,
        seed=args.seed,
    )
    res = permutation_test(
        merged,
        args.n_support,
        args.permutations,
        seed=args.seed,
        cfg=cfg,
        weighted=args.weighted,
        reuse_barycenter=args.reuse_barycenter,
        threads=args.threads,
    )
    payload = {
        "statistic": res.statistic,
        "prefactor": res.prefactor,
        "p_value": res.p_value,
        "n_support": res.n_support,
        "permutations": res.permutations,
        "permuted_stats": [float(v) for v in res.permuted_stats],
        "seed": args.seed,
        "groups": sorted(groups),
    }
    _write_out(_report_json(payload), args.out)
    return 0


def _cmd_embed(args) -> int:
    data = load_dataset(args.manifest)
    template = _load_template(args, data.elements)
    rows = []
    vec_alpha = {"w": 0.0, "gw": 1.0, "fgw": args.alpha}[args.mode]
    for el in data.elements:
        if args.mode == "w":
            ref = template.base if isinstance(template, MeasureNetwork) else template
            base = el.base if isinstance(el, MeasureNetwork) else el
            proj = project_w(solve_w2(ref, base).coupling, ref, base)
        elif args.mode == "gw":
            res = solve_gw(template, el, FgwParams(alpha=0.0, seed=args.seed))
            proj = project_gw(res.coupling, template, el)
        else:
            res = solve_fgw(template, el, FgwParams(alpha=args.alpha, seed=args.seed))
            proj = project_fgw(res.coupling, template, el)
        rows.append(vectorize_embedding(proj, vec_alpha))
    if args.out == "-":
        write_matrix_csv(sys.stdout, np.stack(rows))
    else:
        write_matrix_csv(args.out, np.stack(rows))
    return 0


def _cmd_reconstruct(args) -> int:
    data = load_dataset(args.manifest)
    measures = _bases(data.elements)
    if args.id is not None:
        try:
            pick = data.ids.index(args.id)
        except ValueError:
            raise ParseError(f"no element with id {args.id!r}", args.manifest) from None
    elif len(measures) == 1:
        pick = 0
    else:
        raise ValueError("manifest has several elements; pass --id")
    grid = kernel_reconstruct(measures[pick], args.grid_side, bandwidth=args.bandwidth)
    if args.out == "-":
        write_matrix_csv(sys.stdout, grid)
    else:
        write_matrix_csv(args.out, grid)
    return 0


def _cmd_spd_embed(args) -> int:
    try:
        with open(args.input, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise ParseError(str(exc), args.input) from None
    header = [c.strip() for c in lines[0].split(",")]
    expected = ["x1", "x2", "x3", "m11", "m12", "m13", "m22", "m23", "m33"]
    if header != expected:
        raise ParseError(f"header {header} != expected {expected}", args.input, 1)
    feats = []
    for lineno, ln in enumerate(lines[1:], start=2):
        vals = [float(c) for c in ln.split(",")]
        if len(vals) != 9:
            raise ParseError(f"expected 9 columns, got {len(vals)}", args.input, lineno)
        x = np.array(vals[:3])
        m11, m12, m13, m22, m23, m33 = vals[3:]
        M = np.array([[m11, m12, m13], [m12, m22, m23], [m13, m23, m33]])
        feats.append(SpdFeature(x, project_spd(M)))
    if args.lam == "star":
        Z0 = np.stack([embed_spd(f, 0.0, not args.non_isometric) for f in feats])
        Z1 = np.stack([embed_spd(f, 1.0, not args.non_isometric) for f in feats])
        lam = compute_lambda_star(Z0, Z1)
    else:
        lam = float(args.lam)
    Z = np.stack([embed_spd(f, lam, not args.non_isometric) for f in feats])
    if args.out == "-":
        write_matrix_csv(sys.stdout, Z)
    else:
        write_matrix_csv(args.out, Z)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lotvar",
        description="Linear OT embeddings and Frechet variance decompositions.",
    )
    parser.add_argument("--version", action="version", version=f"lotvar {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--mode", choices=("w", "gw", "fgw"), default="w")
    common.add_argument("--alpha", type=float, default=0.5)
    common.add_argument("--out", default="-", help="output path, '-' for stdout")
    fit = argparse.ArgumentParser(add_help=False)
    fit.add_argument("--n-support", type=int, required=True)
    fit.add_argument("--init", choices=("subsample", "gaussian"), default="subsample")
    fit.add_argument("--max-iters", type=int, default=100)
    fit.add_argument("--tol", type=float, default=1e-7)
    tmpl = argparse.ArgumentParser(add_help=False)
    tmpl.add_argument("--barycenter", default=None, help="nodes CSV of a precomputed template")
    tmpl.add_argument("--barycenter-edges", default=None, help="edges CSV for gw/fgw templates")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("barycenter", parents=[common, fit], help="fit a free-support barycenter")
    p.add_argument("--manifest", required=True)
    p.add_argument("--nodes-out", required=True)
    p.add_argument("--edges-out", default=None)
    p.set_defaults(func=_cmd_barycenter)

    p = sub.add_parser("decompose", parents=[common, fit, tmpl], help="dataset variance decomposition")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("curve", parents=[common], help="decomposition curve over support sizes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-values", required=True, help="comma-separated support sizes")
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-7)
    p.set_defaults(func=_cmd_curve)

    p = sub.add_parser("ftest", parents=[common, fit], help="permutation F test")
    p.add_argument("--manifest", required=True)
    p.add_argument("--permutations", type=int, default=250)
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--reuse-barycenter", action="store_true")
    p.set_defaults(func=_cmd_ftest)

    p = sub.add_parser("embed", parents=[common, fit, tmpl], help="LOT embedding matrix")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("reconstruct", parents=[common], help="Gaussian-kernel image of a measure")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid-side", type=int, default=28)
    p.add_argument("--bandwidth", type=float, default=1.0)
    p.add_argument("--id", default=None)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("spd-embed", parents=[common], help="R^9 embedding of SPD features")
    p.add_argument("--input", required=True)
    p.add_argument("--lam", default="0.5", help="lambda in [0,1], or 'star'")
    p.add_argument("--non-isometric", action="store_true",
                   help="use off-diagonal coefficient 2 instead of sqrt(2)")
    p.set_defaults(func=_cmd_spd_embed)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DEGENERATE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except SOLVER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (LotvarError, *PARSE_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
