"""Benchmark harness: run engines over generated or loaded instances and report.

A benchmark spec is a JSON object::

    {
      "instances": [
        {"kind": "synthetic", "N": 100000, "r": [100, 1000], "d": [1, 2]},
        {"kind": "graph", "nodes": 100, "edges": 400, "seed": [1, 2], "clique": [3, 4]},
        {"kind": "files", "data": "dir/", "query": "q.json", "sieve": "optional/dir"}
      ],
      "engines": ["hash", "sieve"],
      "repetitions": 3,
      "fpr": 0.01, "seed": 0, "count_only": true, "threads": 1, "two_pass": false
    }

List-valued instance fields expand into a grid.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean
from typing import Iterator, Mapping

import numpy as np

from . import __version__
from .benchgen import SyntheticParams, gen_random_graph, synthetic_catalog, synthetic_query
from .engine import ENGINES, ExecStats, bloomjoin_query, hash_join, nested_loop_join, sieve_join
from .errors import CorrectnessError, ParameterError
from .query import JoinQuery, clique_query, load_query
from .sieve import build_sieve, load_sieve
from .storage import Table, load_catalog

log = logging.getLogger(__name__)

DEFAULTS = {"engines": ["hash", "sieve"], "repetitions": 3, "fpr": 0.01, "seed": 0,
            "count_only": True, "threads": 1, "two_pass": False}


@dataclass
class Instance:
    label: str
    params: dict
    query: JoinQuery
    catalog: dict[str, Table]
    expected: int | None = None
    sieve_dir: str | None = None


@dataclass
class BenchReport:
    spec: dict
    runs: list[dict] = field(default_factory=list)
    means: list[dict] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _grid(d: Mapping, keys: tuple[str, ...]) -> Iterator[dict]:
    vals = [d[k] if isinstance(d[k], list) else [d[k]] for k in keys]
    for combo in itertools.product(*vals):
        yield dict(zip(keys, combo))


def expand_instances(spec: Mapping, base: Path | None = None) -> Iterator[Instance]:
    base = base or Path(".")
    for inst in spec.get("instances", []):
        kind = inst.get("kind")
        if kind == "synthetic":
            full = {"N": 100_000, "r": 1000, "d": 1, "seed": spec.get("seed", 0), **inst}
            for p in _grid(full, ("N", "r", "d", "seed")):
                params = SyntheticParams(**p)
                yield Instance(f"N={p['N']} r={p['r']} d={p['d']}", {"kind": kind, **p},
                               synthetic_query(), synthetic_catalog(params), params.expected_cardinality)
        elif kind == "graph":
            full = {"seed": spec.get("seed", 0), "clique": 3, **inst}
            for p in _grid(full, ("nodes", "edges", "seed", "clique")):
                cat = {"edges": gen_random_graph(p["nodes"], p["edges"], p["seed"])}
                yield Instance(f"graph n={p['nodes']} m={p['edges']} s={p['seed']} k={p['clique']}",
                               {"kind": kind, **p}, clique_query(n=p["clique"]), cat)
        elif kind == "files":
            data, qpath = base / inst["data"], base / inst["query"]
            sieve = str(base / inst["sieve"]) if inst.get("sieve") else None
            yield Instance(inst.get("label", f"{Path(data).name}:{Path(qpath).stem}"),
                           {"kind": kind, "data": str(data), "query": str(qpath), "sieve": sieve},
                           load_query(qpath), load_catalog(data), sieve_dir=sieve)
        else:
            raise ParameterError(f"unknown instance kind {kind!r}")


def run_engine(engine: str, inst: Instance, cfg: Mapping) -> dict:
    """One timed run; returns the flat per-run record (times in µs)."""
    count_only, threads = cfg["count_only"], cfg["threads"]
    sieve_us = 0.0
    t0 = time.perf_counter()
    if engine == "hash":
        res, stats = hash_join(inst.query, inst.catalog, count_only=count_only, threads=threads)
    elif engine == "sieve":
        t1 = time.perf_counter()
        if inst.sieve_dir:
            sieve = load_sieve(inst.sieve_dir, inst.catalog)
        else:
            sieve = build_sieve(inst.query, inst.catalog, fpr=cfg["fpr"], seed=cfg["seed"],
                                two_pass=cfg["two_pass"])
        sieve_us = (time.perf_counter() - t1) * 1e6
        res, stats = sieve_join(inst.query, sieve, inst.catalog, count_only=count_only, threads=threads)
    elif engine == "nested":
        t1 = time.perf_counter()
        res = nested_loop_join(inst.query, inst.catalog)
        stats = ExecStats("nested", output_cardinality=res.cardinality)
        stats.phase_timings["enumerate"] = time.perf_counter() - t1
    elif engine == "bloomjoin2":
        res, stats = bloomjoin_query(inst.query, inst.catalog, fpr=cfg["fpr"], seed=cfg["seed"],
                                     count_only=count_only)
    else:
        raise ParameterError(f"unknown engine {engine!r}; choose from {', '.join(ENGINES)}")
    total_us = (time.perf_counter() - t0) * 1e6
    rec = {"instance": inst.label, **{f"p_{k}": v for k, v in inst.params.items()}}
    rec.update(stats.to_record())
    rec["sieve_build_us"] = round(sieve_us, 1)
    rec["total_us"] = round(total_us, 1)
    rec["expected"] = inst.expected
    return rec


def _mean_records(runs: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in runs:
        groups.setdefault((r["instance"], r["engine"]), []).append(r)
    out = []
    for (label, engine), recs in groups.items():
        m = {"instance": label, "engine": engine, "runs": len(recs)}
        for key, val in recs[0].items():
            if key in m or key.startswith("p_"):
                continue
            if isinstance(val, (int, float)) and not isinstance(val, bool):
                m[key] = mean(r[key] for r in recs)
        out.append(m)
    return out


def run_benchmark(spec: Mapping, base: Path | None = None, strict: bool = False) -> BenchReport:
    """Run every (engine, instance) pair ``repetitions`` times and cross-check cardinalities."""
    cfg = {**DEFAULTS, **{k: v for k, v in spec.items() if k != "instances"}}
    if int(cfg["repetitions"]) < 1:
        raise ParameterError("repetitions must be at least 1")
    for e in cfg["engines"]:
        if e not in ENGINES:
            raise ParameterError(f"unknown engine {e!r}; choose from {', '.join(ENGINES)}")
    report = BenchReport(dict(spec))
    for inst in expand_instances(spec, base):
        seen: dict[str, int] = {}
        for engine in cfg["engines"]:
            for rep in range(int(cfg["repetitions"])):
                rec = run_engine(engine, inst, cfg)
                rec["rep"] = rep
                report.runs.append(rec)
                seen.setdefault(engine, rec["cardinality"])
                if rec["cardinality"] != seen[engine]:
                    report.failures.append(
                        f"{inst.label}: engine {engine} is not deterministic across repetitions")
            log.info("%s %s: %d tuples", inst.label, engine, seen[engine])
        if len(set(seen.values())) > 1:
            report.failures.append(f"{inst.label}: cardinality mismatch between engines {seen}")
        if inst.expected is not None:
            for engine, card in seen.items():
                if card != inst.expected:
                    report.failures.append(
                        f"{inst.label}: engine {engine} returned {card}, expected {inst.expected}")
    report.means = _mean_records(report.runs)
    if strict and report.failures:
        raise CorrectnessError("; ".join(report.failures))
    return report


def _cell(v) -> str:
    if isinstance(v, list):
        return ";".join(map(str, v))
    return "" if v is None else str(v)


def write_report(report: BenchReport, out_dir: str | Path, figures: bool = True) -> list[Path]:
    """Write runs.csv, summary.txt, manifest.json and (optionally) figures into ``out_dir``."""
    from .plotting import render_report_figures

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fields = list(dict.fromkeys(k for r in report.runs for k in r))
    runs_path = out / "runs.csv"
    with open(runs_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in report.runs:
            w.writerow({k: _cell(r.get(k)) for k in fields})

    summary_path = out / "summary.txt"
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(format_summary(report) + "\n")

    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({
            "spec": report.spec,
            "defaults": DEFAULTS,
            "versions": {"sievejoin": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
            "runs": len(report.runs),
            "failures": report.failures,
        }, fh, indent=2, default=str)
        fh.write("\n")
    written = [runs_path, summary_path, manifest_path]
    if figures and report.means:
        written += render_report_figures(report.means, out)
    return written


def format_summary(report: BenchReport) -> str:
    header = f"{'instance':<34} {'engine':<10} {'runs':>4} {'cardinality':>12} {'intermediate':>14} {'mean µs':>12}"
    lines = [header, "-" * len(header)]
    for m in report.means:
        lines.append(f"{m['instance']:<34} {m['engine']:<10} {m['runs']:>4} {int(m['cardinality']):>12} "
                     f"{int(m.get('intermediate_total', 0)):>14} {m['total_us']:>12.0f}")
    if report.failures:
        lines.append("")
        lines += [f"CORRECTNESS FAILURE: {f}" for f in report.failures]
    return "\n".join(lines)
