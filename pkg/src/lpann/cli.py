"""Command-line surface: gen, build, query, bench, verify-embed, verify-index.

The --seed flag can be overridden by the LPANN_SEED environment variable.
Exit code is nonzero iff any verification check fails or an invariant breaks.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .core import PointSet, ValidationError, load_matrix, load_points, lp_dist, save_matrix, save_points
from .harness import (
    DatasetConfig,
    ExperimentConfig,
    build_pipeline,
    gen_dataset,
    run_experiment,
    verify_embeddings,
    verify_index,
)
from .index_io import load_index, save_index
from .mazur_pipeline import AnnIndex, query_ann


def _seed_of(args) -> int:
    env = os.environ.get("LPANN_SEED")
    if env is not None:
        return int(env)
    return args.seed


def _add_seed(sp) -> None:
    sp.add_argument("--seed", type=int, default=0,
                    help="root seed (LPANN_SEED env var overrides)")


def cmd_gen(args) -> int:
    seed = _seed_of(args)
    V, queries, _ = gen_dataset(
        args.kind, args.n, args.d, args.p, seed=seed, n_queries=args.n_queries,
        planted_dist=args.planted_dist, manifold_dim=args.manifold_dim, noise=args.noise,
    )
    save_points(V, args.out)
    print(f"wrote {args.out}: n={V.n} d={V.d} p={V.p}")
    if args.queries_out:
        save_matrix(queries, args.p, args.queries_out)
        print(f"wrote {args.queries_out}: {queries.shape[0]} queries")
    return 0


def cmd_build(args) -> int:
    V = load_points(args.data)
    cfg = ExperimentConfig(
        dataset=DatasetConfig(kind="gaussian", n=V.n, d=V.d, p=V.p),  # dataset comes from file
        pipeline=args.pipeline, seed=_seed_of(args), c_mode=args.c_mode, c=args.c,
        amplification_multiplier=args.amp_mult, backend_kind=args.backend,
    )
    index = build_pipeline(V, cfg)
    save_index(index, args.out)
    print(f"wrote {args.out} ({Path(args.out).stat().st_size} bytes)")
    return 0


def cmd_query(args) -> int:
    V = load_points(args.data)
    index = load_index(args.index, V)
    queries, qp = load_matrix(args.queries)
    if qp != V.p:
        raise ValidationError(f"query file p={qp} but dataset p={V.p}")
    ids = [args.query_id] if args.query_id is not None else range(queries.shape[0])
    for qi in ids:
        q = queries[qi]
        if isinstance(index, AnnIndex):
            ans = query_ann(index, q)
            rec = {"query_id": int(qi), "returned_id": ans.id, "dist": ans.dist,
                   "case": ans.trace.termination, "certified_factor": ans.trace.certified_factor}
        else:
            rid, dist, _ = index.query(q)
            rec = {"query_id": int(qi), "returned_id": rid, "dist": dist}
        print(json.dumps(rec, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    with open(args.config) as f:
        cfg = ExperimentConfig.from_dict(json.load(f))
    if os.environ.get("LPANN_SEED") is not None:
        seed = int(os.environ["LPANN_SEED"])
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": seed})
    report, index = run_experiment(cfg)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    ds = cfg.dataset
    V, queries, _ = gen_dataset(ds.kind, ds.n, ds.d, ds.p, seed=ds.seed,
                                n_queries=cfg.n_queries, planted_dist=ds.planted_dist,
                                manifold_dim=ds.manifold_dim, noise=ds.noise)
    save_points(V, str(outdir / "data.lpan"))
    save_matrix(queries, ds.p, str(outdir / "queries.lpan"))
    save_index(index, str(outdir / "index.lpix"))
    (outdir / "report.jsonl").write_bytes(report.to_jsonl())
    print(report.summary_table())
    print(f"artifacts in {outdir}/")
    return 1 if report.certified_violations else 0


def cmd_verify_embed(args) -> int:
    ps = tuple(float(x) for x in args.p.split(","))
    checks = verify_embeddings(p_list=ps, seed=_seed_of(args), trials=args.trials)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_verify_index(args) -> int:
    V = load_points(args.data)
    index = load_index(args.index, V)
    checks = verify_index(index, V)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="lpann",
                                 description="approximate nearest neighbor search for p > 2")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a dataset and query file")
    g.add_argument("--kind", default="gaussian",
                   choices=["gaussian", "planted", "lowdim-manifold", "grid"])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--p", type=float, default=3.0)
    g.add_argument("--n-queries", type=int, default=0)
    g.add_argument("--planted-dist", type=float, default=1.0)
    g.add_argument("--manifold-dim", type=int, default=2)
    g.add_argument("--noise", type=float, default=0.01)
    g.add_argument("--out", required=True)
    g.add_argument("--queries-out")
    _add_seed(g)
    g.set_defaults(fn=cmd_gen)

    b = sub.add_parser("build", help="build an index file from a dataset")
    b.add_argument("--data", required=True)
    b.add_argument("--pipeline", default="mazur", choices=["linf", "linf_ddim", "mazur"])
    b.add_argument("--c-mode", default="paper", choices=["paper", "heuristic"])
    b.add_argument("--c", type=float, default=None)
    b.add_argument("--amp-mult", type=int, default=3)
    b.add_argument("--backend", default="exact")
    b.add_argument("--out", required=True)
    _add_seed(b)
    b.set_defaults(fn=cmd_build)

    q = sub.add_parser("query", help="run queries against an index file")
    q.add_argument("--index", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--queries", required=True)
    q.add_argument("--query-id", type=int, default=None)
    _add_seed(q)
    q.set_defaults(fn=cmd_query)

    be = sub.add_parser("bench", help="full experiment from a JSON config")
    be.add_argument("--config", required=True)
    be.add_argument("--out-dir", required=True)
    be.set_defaults(fn=cmd_bench)

    ve = sub.add_parser("verify-embed", help="statistical checks on the embeddings")
    ve.add_argument("--p", default="3,4", help="comma-separated exponents")
    ve.add_argument("--trials", type=int, default=200)
    _add_seed(ve)
    ve.set_defaults(fn=cmd_verify_embed)

    vi = sub.add_parser("verify-index", help="audit invariants of a built index")
    vi.add_argument("--index", required=True)
    vi.add_argument("--data", required=True)
    _add_seed(vi)
    vi.set_defaults(fn=cmd_verify_index)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, AssertionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
