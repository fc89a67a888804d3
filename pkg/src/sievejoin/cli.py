"""Command-line entry point: ``sievejoin gen | build-sieve | run | bench | export``.

Exit codes: 0 success, 1 internal error, 2 usage or parameter error,
3 correctness-check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bench import format_summary, run_benchmark, write_report
from .benchgen import SyntheticParams, gen_random_graph, gen_synthetic, synthetic_query
from .engine import ENGINES, bloomjoin_query, hash_join, nested_loop_join, sieve_join
from .errors import CorrectnessError, SieveJoinError
from .query import clique_query, dump_query, load_query
from .sieve import aliased, build_sieve, export_pruned_tables, load_sieve, save_sieve
from .storage import load_catalog, save_catalog

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_CORRECTNESS = 0, 1, 2, 3

log = logging.getLogger("sievejoin")


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, default=str)
        fh.write("\n")


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "synthetic":
        params = SyntheticParams(args.N, args.r, args.d, args.seed)
        tables = gen_synthetic(params)
        save_catalog({t.name: t for t in tables}, out)
        dump_query(synthetic_query(), out / "query.json")
        manifest = {"kind": "synthetic", **params.as_dict(),
                    "expected_cardinality": params.expected_cardinality,
                    "tables": {t.name: t.row_count for t in tables}}
    else:
        edges = gen_random_graph(args.nodes, args.edges, args.seed)
        save_catalog({"edges": edges}, out)
        for n in (3, 4):
            dump_query(clique_query("edges", n), out / f"clique{n}.json")
        manifest = {"kind": "graph", "nodes": args.nodes, "edges": args.edges, "seed": args.seed,
                    "tables": {"edges": edges.row_count}}
    manifest["version"] = __version__
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {', '.join(f'{k} ({v} rows)' for k, v in manifest['tables'].items())} to {out}")
    return EXIT_OK


def cmd_build_sieve(args) -> int:
    catalog = load_catalog(args.data)
    query = load_query(args.query)
    sieve = build_sieve(query, catalog, fpr=args.fpr, seed=args.seed,
                        counting=args.counting, two_pass=args.two_pass)
    save_sieve(sieve, args.out)
    print(f"direction: {sieve.direction}")
    for st in sieve.build_stats:
        print(f"{st.kind:>8} edge {st.edge}: m={st.m} k={st.k} values={st.values_inserted} "
              f"scanned={st.rows_scanned} {st.seconds * 1e6:.0f}us")
    print(f"filter bytes: {sieve.filter_bytes}")
    return EXIT_OK


def cmd_run(args) -> int:
    catalog = load_catalog(args.data)
    query = load_query(args.query)
    if args.engine == "sieve":
        if args.sieve:
            sieve = load_sieve(args.sieve, catalog)
        elif args.build:
            sieve = build_sieve(query, catalog, fpr=args.fpr, seed=args.seed, two_pass=args.two_pass)
        else:
            raise _Usage("--engine sieve needs --sieve DIR (or --build to build one on the fly)")
        res, stats = sieve_join(query, sieve, catalog, count_only=args.count_only, threads=args.threads)
    elif args.engine == "hash":
        res, stats = hash_join(query, catalog, count_only=args.count_only, threads=args.threads)
    elif args.engine == "nested":
        res = nested_loop_join(query, catalog)
        stats = None
    else:
        res, stats = bloomjoin_query(query, catalog, fpr=args.fpr, seed=args.seed,
                                     count_only=args.count_only)
    print(f"cardinality: {res.cardinality}")
    if stats is not None:
        print(json.dumps(stats.to_record(), default=str))
    if args.output and not res.count_only:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(res.schema)
            w.writerows(res.sorted_rows())
    return EXIT_OK


def cmd_bench(args) -> int:
    spec_path = Path(args.spec)
    with open(spec_path, encoding="utf-8") as fh:
        spec = json.load(fh)
    report = run_benchmark(spec, base=spec_path.parent)
    written = write_report(report, args.out, figures=not args.no_figures)
    print(format_summary(report))
    print(f"report: {', '.join(str(p) for p in written)}")
    if not report.ok:
        for f in report.failures:
            print(f"CORRECTNESS FAILURE: {f}", file=sys.stderr)
        return EXIT_CORRECTNESS
    return EXIT_OK


def cmd_export(args) -> int:
    catalog = load_catalog(args.data)
    query = load_query(args.query)
    sieve = load_sieve(args.sieve, catalog) if args.sieve else build_sieve(query, catalog, fpr=args.fpr,
                                                                          seed=args.seed)
    tables = export_pruned_tables(query, sieve, catalog, refine_rounds=args.refine)
    out = Path(args.out)
    save_catalog({t.name: t for t in tables}, out)
    dump_query(aliased(query), out / "query.json")
    for t in tables:
        print(f"{t.name}: {t.row_count} rows")
    return EXIT_OK


class _Usage(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sievejoin", description="Bloom-filter sieves for n-way joins.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic or graph instance")
    g.add_argument("--kind", choices=("synthetic", "graph"), required=True)
    g.add_argument("--N", type=int, default=100_000)
    g.add_argument("--r", type=int, default=1000)
    g.add_argument("--d", type=int, default=1)
    g.add_argument("--nodes", type=int, default=100)
    g.add_argument("--edges", type=int, default=400)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("build-sieve", help="run the pruning phase and persist the filters")
    b.add_argument("--query", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--fpr", type=float, default=0.01)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--two-pass", action="store_true", help="add the forward pass")
    b.add_argument("--counting", action="store_true", help="use counting filters (deletes)")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_sieve)

    r = sub.add_parser("run", help="execute a query with one engine")
    r.add_argument("--query", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--engine", choices=ENGINES, default="hash")
    r.add_argument("--sieve", help="directory written by build-sieve")
    r.add_argument("--build", action="store_true", help="build the sieve in-process")
    r.add_argument("--two-pass", action="store_true")
    r.add_argument("--fpr", type=float, default=0.01)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--count-only", action="store_true")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--output", help="write the sorted result rows as CSV")
    r.set_defaults(func=cmd_run)

    be = sub.add_parser("bench", help="run a benchmark spec and write a report")
    be.add_argument("--spec", required=True)
    be.add_argument("--out", required=True)
    be.add_argument("--no-figures", action="store_true")
    be.set_defaults(func=cmd_bench)

    e = sub.add_parser("export", help="write sieve-pruned tables for an external engine")
    e.add_argument("--query", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--sieve")
    e.add_argument("--fpr", type=float, default=0.01)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--refine", type=int, default=1, help="extra semijoin sweeps")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _Usage as exc:
        parser.error(str(exc))  # exits 2
    except CorrectnessError as exc:
        print(f"correctness failure: {exc}", file=sys.stderr)
        return EXIT_CORRECTNESS
    except (SieveJoinError, FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # pragma: no cover - last resort
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
