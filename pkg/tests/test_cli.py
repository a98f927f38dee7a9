import json
import math

import pytest

from rdbtest import __version__
from rdbtest.cli import main

TOY_COUNTS = "component_id\ts1\ts2\ts3\ts4\nc1\t6\t8\t5\t3\nc2\t4\t2\t5\t7\n"
TOY_META = "sample_id\tgroup\tage\ns1\tA\t31\ns2\tA\t45\ns3\tB\t38\ns4\tB\t52\n"


@pytest.fixture
def toy(write_tsv):
    return write_tsv("counts.tsv", TOY_COUNTS), write_tsv("meta.tsv", TOY_META)


def read_rows(path):
    lines = path.read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    header = body[0].split("\t")
    return lines, [dict(zip(header, ln.split("\t"))) for ln in body[1:]]


def test_toy_both_retained(toy, tmp_path, capsys):
    counts, meta = toy
    out, js = tmp_path / "res.tsv", tmp_path / "res.json"
    code = main(["test", "--counts", str(counts), "--meta", str(meta), "--group", "group",
                 "--out", str(out), "--json", str(js)])
    assert code == 0
    lines, rows = read_rows(out)
    assert lines[0] == f"# rdb {__version__} test" and lines[1].startswith("# config: ")
    assert [r["decision"] for r in rows] == ["retained", "retained"]
    assert float(rows[0]["statistic_iter0"]) == pytest.approx(2.1213, abs=1e-4)
    assert list(rows[0]) == ["component_id", "decision", "direction", "rejection_iteration",
                             "statistic_iter0", "note"]
    doc = json.loads(js.read_text())
    assert doc["thresholds"]["q_tilde"] == pytest.approx(2.4478, abs=1e-4)
    assert doc["trace"][0]["direction"] == "two-sided"
    assert '"alpha": 0.1' in capsys.readouterr().err


def test_fdr_identical_decisions(toy, tmp_path):
    counts, meta = toy
    outs = []
    for mode in ("fwer", "fdr"):
        out = tmp_path / f"{mode}.tsv"
        assert main(["test", "--counts", str(counts), "--meta", str(meta), "--group", "group",
                     "--mode", mode, "--out", str(out)]) == 0
        outs.append([(r["component_id"], r["decision"]) for r in read_rows(out)[1]])
    assert outs[0] == outs[1]


def test_missing_covariate(write_tsv, capsys):
    ids = [f"s{j}" for j in range(1, 9)]
    counts = write_tsv("c.tsv", "component_id\t" + "\t".join(ids) + "\n"
                       + "x\t" + "\t".join(["5"] * 8) + "\ny\t" + "\t".join(str(j) for j in range(1, 9)) + "\n")
    rows = [f"{sid}\t{'A' if j < 4 else 'B'}\t{'' if sid == 's7' else 30 + j}" for j, sid in enumerate(ids)]
    meta = write_tsv("m.tsv", "sample_id\tgroup\tage\n" + "\n".join(rows) + "\n")
    code = main(["test", "--counts", str(counts), "--meta", str(meta), "--group", "group", "--balance", "age"])
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1] == "rdb: error: missing covariate age for sample s7"


@pytest.mark.parametrize("extra", [
    ["--balance", "age", "--weights", "w.tsv"],
    ["--outcome", "age"],
    ["--bogus"],
    ["--mode", "both"],
])
def test_user_errors_exit_1(toy, extra):
    counts, meta = toy
    assert main(["test", "--counts", str(counts), "--meta", str(meta), "--group", "group", *extra]) == 1


def test_bad_file_exit_1(tmp_path, toy):
    _, meta = toy
    assert main(["test", "--counts", str(tmp_path / "none.tsv"), "--meta", str(meta), "--group", "group"]) == 1


def test_continuous_outcome(write_tsv, tmp_path):
    ids = [f"s{j}" for j in range(12)]
    lines = ["component_id\t" + "\t".join(ids)]
    for i in range(6):
        lines.append(f"c{i}\t" + "\t".join(str(10 + (i * 7 + j * 3) % 11 + (j if i == 0 else 0)) for j in range(12)))
    counts = write_tsv("c.tsv", "\n".join(lines) + "\n")
    meta = write_tsv("m.tsv", "sample_id\tbmi\n" + "\n".join(f"{s}\t{j}" for j, s in enumerate(ids)) + "\n")
    out = tmp_path / "r.tsv"
    assert main(["test", "--counts", str(counts), "--meta", str(meta), "--outcome", "bmi", "--out", str(out)]) == 0
    assert len(read_rows(out)[1]) == 6


def test_weights_file(toy, write_tsv, tmp_path):
    counts, meta = toy
    w = write_tsv("w.tsv", "sample_id\tweight\ns1\t1\ns2\t1\ns3\t1\ns4\t1\n")
    js = tmp_path / "r.json"
    assert main(["test", "--counts", str(counts), "--meta", str(meta), "--group", "group",
                 "--weights", str(w), "--json", str(js)]) == 0
    doc = json.loads(js.read_text())
    assert doc["components"][0]["first_iteration_statistic"] == pytest.approx(3.0)
    assert doc["extras"]["balance_weights"]["w1"] == [0.5, 0.5]


def test_infinite_statistic_serialized(write_tsv, tmp_path):
    counts = write_tsv("c.tsv", "component_id\ta\tb\tc\td\nx\t10\t20\t0\t0\ny\t90\t180\t50\t70\nz\t5\t10\t5\t7\n")
    meta = write_tsv("m.tsv", "sample_id\tg\na\t1\nb\t1\nc\t2\nd\t2\n")
    js, out = tmp_path / "r.json", tmp_path / "r.tsv"
    assert main(["test", "--counts", str(counts), "--meta", str(meta), "--group", "g",
                 "--json", str(js), "--out", str(out)]) == 0
    doc = json.loads(js.read_text())
    assert doc["components"][0]["first_iteration_statistic"] == "inf"
    assert read_rows(out)[1][0]["statistic_iter0"] == "inf"
    assert math.isinf(float(read_rows(out)[1][0]["statistic_iter0"]))


def test_simulate_report(tmp_path):
    out, js = tmp_path / "rep.tsv", tmp_path / "rep.json"
    assert main(["simulate", "--scenario", "pg", "--d", "60", "--s", "6", "--m1", "15", "--m2", "15",
                 "--reps", "3", "--seed", "7", "--out", str(out), "--json", str(js)]) == 0
    lines, rows = read_rows(out)
    assert lines[0].startswith("# rdb ") and '"seed": 7' in lines[1]
    assert list(rows[0]) == ["method", "metric", "estimate", "se", "reps"]
    assert {r["metric"] for r in rows} == {"fwer", "fdr", "power"}
    assert json.loads(js.read_text())["scenario"]["d"] == 60


def test_simulate_byte_identical(tmp_path, monkeypatch):
    args = ["simulate", "--scenario", "lognormal", "--d", "40", "--s", "4", "--m1", "10", "--m2", "10",
            "--rho", "0.5", "--reps", "4", "--seed", "7"]
    paths = []
    for k, threads in enumerate(("1", "3", None)):
        out, js = tmp_path / f"{k}.tsv", tmp_path / f"{k}.json"
        extra = ["--threads", threads] if threads else []
        if threads is None:
            monkeypatch.setenv("RDB_THREADS", "2")
        assert main(args + extra + ["--out", str(out), "--json", str(js)]) == 0
        paths.append((out.read_bytes(), js.read_bytes()))
    assert paths[0] == paths[1] == paths[2]


def test_simulate_errors(capsys, monkeypatch):
    assert main(["simulate", "--scenario", "shuffle"]) == 1
    assert main(["simulate", "--scenario", "pg", "--d", "20", "--s", "10"]) == 1
    assert "identifiability" in capsys.readouterr().err
    monkeypatch.setenv("RDB_THREADS", "many")
    assert main(["simulate", "--scenario", "pg", "--reps", "1"]) == 1


def test_simulate_shuffle(write_tsv, tmp_path):
    ids = [f"x{j}" for j in range(12)]
    lines = ["component_id\t" + "\t".join(ids)]
    for i in range(10):
        lines.append(f"t{i}\t" + "\t".join(str(20 + (i * 5 + j * 7) % 13) for j in range(12)))
    src = write_tsv("src.tsv", "\n".join(lines) + "\n")
    out = tmp_path / "r.tsv"
    assert main(["simulate", "--scenario", "shuffle", "--source", str(src), "--m1", "5", "--m2", "5",
                 "--reps", "2", "--out", str(out)]) == 0
    power = [r for r in read_rows(out)[1] if r["metric"] == "power"]
    assert all(r["estimate"] == "NA" for r in power)


def test_internal_error_exit_2(monkeypatch, toy):
    import rdbtest.cli as cli

    def boom(*a, **k):
        raise ZeroDivisionError("boom")

    monkeypatch.setattr(cli, "rdb_iterate", boom)
    counts, meta = toy
    assert main(["test", "--counts", str(counts), "--meta", str(meta), "--group", "group"]) == 2
