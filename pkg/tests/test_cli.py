import csv
import json

import pytest

from sievejoin.bloom import _HEADER
from sievejoin.cli import main

EXIT_OK, EXIT_USAGE, EXIT_CORRECTNESS = 0, 2, 3


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def synth(tmp_path, capsys):
    d = tmp_path / "syn"
    assert run(capsys, "gen", "--kind", "synthetic", "--N", 4000, "--r", 100, "--d", 2, "--out", d)[0] == 0
    return d


def test_gen_synthetic(synth):
    names = {p.name for p in synth.iterdir()}
    assert {"R.csv", "S.csv", "T.csv", "query.json", "manifest.json"} <= names
    manifest = json.loads((synth / "manifest.json").read_text())
    assert manifest["expected_cardinality"] == 800 and manifest["tables"]["S"] == 4100


def test_gen_graph(tmp_path, capsys):
    code, _, _ = run(capsys, "gen", "--kind", "graph", "--nodes", 20, "--edges", 60, "--out", tmp_path / "g")
    assert code == 0
    assert (tmp_path / "g" / "clique3.json").exists() and (tmp_path / "g" / "clique4.json").exists()


def test_gen_parity_error(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "--kind", "synthetic", "--N", 10, "--r", 3, "--out", tmp_path / "x")
    assert code == EXIT_USAGE and "error" in err


def test_build_sieve_and_run(synth, tmp_path, capsys):
    sdir = tmp_path / "sv"
    code, out, _ = run(capsys, "build-sieve", "--query", synth / "query.json", "--data", synth,
                       "--two-pass", "--out", sdir)
    assert code == 0 and "direction: backward+forward" in out
    assert json.loads((sdir / "manifest.json").read_text())["direction"] == "backward+forward"
    code, out, _ = run(capsys, "run", "--query", synth / "query.json", "--data", synth,
                       "--engine", "sieve", "--sieve", sdir, "--count-only")
    assert code == 0 and "cardinality: 800" in out
    rec = json.loads(out.splitlines()[1])
    code, hout, _ = run(capsys, "run", "--query", synth / "query.json", "--data", synth, "--engine", "hash")
    hrec = json.loads(hout.splitlines()[1])
    assert "cardinality: 800" in hout
    assert rec["intermediate_total"] < hrec["intermediate_total"]


def test_filter_size_follows_fpr(synth, tmp_path, capsys):
    sizes = {}
    for fpr in (0.001, 0.1):
        d = tmp_path / f"s{fpr}"
        assert run(capsys, "build-sieve", "--query", synth / "query.json", "--data", synth,
                   "--fpr", fpr, "--out", d)[0] == 0
        sizes[fpr] = sum(p.stat().st_size for p in d.glob("*.bf"))
    assert sizes[0.001] > sizes[0.1]


def test_run_writes_output(synth, tmp_path, capsys):
    out = tmp_path / "rows.csv"
    code, _, _ = run(capsys, "run", "--query", synth / "query.json", "--data", synth,
                     "--engine", "sieve", "--build", "--output", out)
    assert code == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["R.x", "S.x", "T.x"] and len(rows) == 801


def test_nested_engine_on_graph(tmp_path, capsys):
    g = tmp_path / "g"
    run(capsys, "gen", "--kind", "graph", "--nodes", 12, "--edges", 40, "--seed", 3, "--out", g)
    cards = []
    for engine in ("nested", "hash"):
        code, out, _ = run(capsys, "run", "--query", g / "clique3.json", "--data", g, "--engine", engine)
        assert code == 0
        cards.append(out.splitlines()[0])
    assert cards[0] == cards[1]


def test_sieve_engine_needs_sieve(synth, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--query", str(synth / "query.json"), "--data", str(synth), "--engine", "sieve"])
    assert exc.value.code == EXIT_USAGE


def test_sieve_key_mismatch(tmp_path, capsys):
    g = tmp_path / "g"
    run(capsys, "gen", "--kind", "graph", "--nodes", 12, "--edges", 40, "--out", g)
    run(capsys, "build-sieve", "--query", g / "clique3.json", "--data", g, "--out", tmp_path / "s3")
    code, _, err = run(capsys, "run", "--query", g / "clique4.json", "--data", g,
                       "--engine", "sieve", "--sieve", tmp_path / "s3")
    assert code == EXIT_USAGE and "error" in err


def test_bench_command(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"instances": [{"kind": "synthetic", "N": 2000, "r": [20, 100]}],
                                "repetitions": 2}))
    code, out, _ = run(capsys, "bench", "--spec", spec, "--out", tmp_path / "rep", "--no-figures")
    assert code == 0 and "runs.csv" in out
    assert not (tmp_path / "rep" / "timing.png").exists()


def test_bench_corrupted_sieve_exits_3(synth, tmp_path, capsys):
    sdir = tmp_path / "sv"
    run(capsys, "build-sieve", "--query", synth / "query.json", "--data", synth, "--out", sdir)
    p = sdir / "backward_1.bf"
    raw = p.read_bytes()
    p.write_bytes(raw[:_HEADER.size] + bytes(len(raw) - _HEADER.size))
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"instances": [{"kind": "files", "data": str(synth),
                                               "query": str(synth / "query.json"), "sieve": str(sdir)}],
                                "repetitions": 1}))
    code, out, err = run(capsys, "bench", "--spec", spec, "--out", tmp_path / "rep", "--no-figures")
    assert code == EXIT_CORRECTNESS
    assert "CORRECTNESS FAILURE" in out and "CORRECTNESS FAILURE" in err


def test_export_command(synth, tmp_path, capsys):
    out = tmp_path / "exp"
    code, stdout, _ = run(capsys, "export", "--query", synth / "query.json", "--data", synth, "--out", out)
    assert code == 0 and (out / "query.json").exists()
    code, rout, _ = run(capsys, "run", "--query", out / "query.json", "--data", out, "--engine", "hash")
    assert "cardinality: 800" in rout
    r_rows = int(stdout.splitlines()[0].split(":")[1].split()[0])
    assert r_rows <= 1.05 * 200
