import csv
import json

import pytest

from sievejoin.bench import expand_instances, format_summary, run_benchmark, write_report
from sievejoin.bloom import _HEADER
from sievejoin.errors import CorrectnessError, ParameterError
from sievejoin.query import chain_query, dump_query
from sievejoin.sieve import build_sieve, save_sieve
from sievejoin.storage import Table, save_catalog


def small_files(tmp_path, corrupt=False):
    cat = {n: Table(n, {"x": list(range(20))}) for n in "RST"}
    q = chain_query("RST", "x")
    save_catalog(cat, tmp_path / "data")
    dump_query(q, tmp_path / "q.json")
    sdir = save_sieve(build_sieve(q, cat), tmp_path / "sieve")
    if corrupt:
        p = sdir / "backward_0.bf"
        raw = p.read_bytes()
        p.write_bytes(raw[:_HEADER.size] + bytes(len(raw) - _HEADER.size))
    return {"kind": "files", "data": "data", "query": "q.json", "sieve": "sieve"}


def test_grid_expands():
    spec = {"instances": [{"kind": "synthetic", "N": 10_000, "r": [100, 1000], "d": [1, 2]}],
            "repetitions": 3}
    labels = [i.label for i in expand_instances(spec)]
    assert len(labels) == 4
    report = run_benchmark(spec)
    assert report.ok
    for engine in ("hash", "sieve"):
        assert sum(r["engine"] == engine for r in report.runs) == 12
    assert {int(m["cardinality"]) for m in report.means} == {100, 800, 1000, 8000}


def test_single_cell_and_report_files(tmp_path):
    spec = {"instances": [{"kind": "synthetic", "N": 2000, "r": 100, "d": 1}],
            "engines": ["sieve"], "repetitions": 1}
    report = run_benchmark(spec)
    assert len(report.runs) == 1 and report.runs[0]["cardinality"] == 100
    written = write_report(report, tmp_path / "out")
    names = {p.name for p in written}
    assert {"runs.csv", "summary.txt", "manifest.json", "intermediate.png", "timing.png"} <= names
    with open(tmp_path / "out" / "runs.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["engine"] == "sieve"
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["runs"] == 1 and manifest["defaults"]["fpr"] == 0.01
    assert "CORRECTNESS FAILURE" not in (tmp_path / "out" / "summary.txt").read_text()


def test_graph_instances_all_engines():
    spec = {"instances": [{"kind": "graph", "nodes": 15, "edges": 50, "seed": [1, 2], "clique": [3, 4]}],
            "engines": ["nested", "hash", "sieve"], "repetitions": 1, "count_only": False}
    report = run_benchmark(spec, strict=True)
    assert len(report.means) == 12


def test_files_instance_passes(tmp_path):
    spec = {"instances": [small_files(tmp_path)], "repetitions": 1}
    assert run_benchmark(spec, base=tmp_path).ok


def test_corrupted_sieve_is_reported(tmp_path):
    spec = {"instances": [small_files(tmp_path, corrupt=True)], "repetitions": 1}
    report = run_benchmark(spec, base=tmp_path)
    assert not report.ok and "mismatch" in report.failures[0]
    assert "CORRECTNESS FAILURE" in format_summary(report)
    with pytest.raises(CorrectnessError):
        run_benchmark(spec, base=tmp_path, strict=True)


def test_bad_specs():
    with pytest.raises(ParameterError):
        run_benchmark({"instances": [], "engines": ["warp"]})
    with pytest.raises(ParameterError):
        run_benchmark({"instances": [{"kind": "mystery"}]})
    with pytest.raises(ParameterError):
        run_benchmark({"instances": [], "repetitions": 0})
