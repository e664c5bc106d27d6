import csv
import json

import pytest

from ipwf import io as fio
from ipwf.cli import report_accuracy, run
from ipwf.matcher import MatchMode, MatchResult


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    cfg = {"n_websites": 60, "n_batches": 3, "churn_rate_per_batch": 0.2,
           "adblock_removal_set": [0, 1], "trace_options": {"jitter_ms": 5}}
    (d / "sim.json").write_text(json.dumps(cfg))
    assert run(["simulate", "--config", str(d / "sim.json"), "--out-dir", str(d / "run"),
                "--seed", "3", "--quiet"]) == 0
    r = d / "run"
    assert run(["ingest", "--snapshots", str(r / "snapshots.jsonl"),
                "--out", str(r / "mappings.jsonl")]) == 0
    for cmd, out in (("build-fingerprints", "fps.jsonl"), ("entropy", "entropy.csv"),
                     ("cache-analyze", "cache.csv")):
        assert run([cmd, "--observations", str(r / "observations.jsonl"), "--mappings",
                    str(r / "mappings.jsonl"), "--batch", "0", "--out", str(r / out)]) == 0
    return r


def _match(r, out, *extra):
    return run(["match", "--fingerprints", str(r / "fps.jsonl"), "--entropy",
                str(r / "entropy.csv"), "--traces", str(r / "traces.jsonl"),
                "--out", str(out), *extra])


def test_simulate_outputs(sim):
    for f in ("observations.jsonl", "snapshots.jsonl", "traces.jsonl", "truth.jsonl",
              "blocklist.txt", "sim.json"):
        assert (sim / f).stat().st_size > 0
    assert json.loads((sim / "sim.json").read_text())["rng_seed"] == 3


def test_match_and_report(sim, tmp_path):
    out = tmp_path / "m.jsonl"
    assert _match(sim, out, "--mode", "basic", "--threads", "4") == 0
    rows = list(fio.read_matches(out))
    assert len(rows) == 180 and [r.trace_id for r in rows] == sorted(r.trace_id for r in rows)
    rep = tmp_path / "rep.csv"
    assert run(["report", "--matches", str(out), "--out", str(rep)]) == 0
    metrics = dict(csv.reader(rep.open()))
    assert float(metrics["accuracy"]) == sum(r.correct for r in rows) / 180


def test_thread_count_does_not_change_bytes(sim, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert _match(sim, a, "--threads", "1") == 0
    assert _match(sim, b, "--threads", "8") == 0
    assert a.read_bytes() == b.read_bytes()


def test_auto_and_revisit(sim, tmp_path):
    assert _match(sim, tmp_path / "a.jsonl", "--mode", "auto",
                  "--blocklist", str(sim / "blocklist.txt")) == 0
    assert _match(sim, tmp_path / "r.jsonl", "--mode", "basic", "--revisit-elapsed", "600",
                  "--cache-index", str(sim / "cache.csv")) == 0
    assert _match(sim, tmp_path / "x.jsonl", "--mode", "auto") == 1
    assert _match(sim, tmp_path / "y.jsonl", "--revisit-elapsed", "600") == 1


def test_other_subcommands(sim, tmp_path):
    assert run(["classify-mappings", "--mappings", str(sim / "mappings.jsonl"),
                "--total-batches", "3", "--out", str(tmp_path / "c.csv")]) == 0
    assert run(["stability", "--observations", str(sim / "observations.jsonl"),
                "--out", str(tmp_path / "s.csv")]) == 0
    assert run(["stability", "--observations", str(sim / "observations.jsonl"), "--kind", "ips",
                "--mappings", str(sim / "mappings.jsonl"), "--out", str(tmp_path / "i.csv")]) == 0
    assert run(["aged-accuracy", "--fingerprints", str(sim / "fps.jsonl"), "--entropy",
                str(sim / "entropy.csv"), "--traces", str(sim / "traces.jsonl"),
                "--out", str(tmp_path / "a.csv")]) == 0
    rows = list(csv.DictReader((tmp_path / "a.csv").open()))
    assert [r["age_batches"] for r in rows] == ["0", "1", "2"]
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"base": {"n_websites": 20}, "params": {"churn_rate_per_batch":
                                [0.0, 1.0]}, "seeds": 2, "experiment": {"trace_batch": 1}}))
    assert run(["sweep", "--grid", str(grid), "--mode", "basic",
                "--out", str(tmp_path / "sw.csv")]) == 0
    rows = list(csv.DictReader((tmp_path / "sw.csv").open()))
    assert len(rows) == 2 and rows[0]["n_seeds"] == "2"


def test_usage_errors(sim, tmp_path, capsys):
    out = tmp_path / "m.jsonl"
    rc = run(["match", "--fingerprints", str(tmp_path / "missing.jsonl"), "--entropy",
              str(sim / "entropy.csv"), "--traces", str(sim / "traces.jsonl"), "--out", str(out)])
    assert rc == 1 and not out.exists()
    assert "missing.jsonl" in capsys.readouterr().err
    assert run(["match"]) == 1
    assert run(["frobnicate"]) == 1
    assert run(["match", "--bogus-flag"]) == 1
    assert _match(sim, out, "--threads", "0") == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_websites": 0}')
    assert run(["simulate", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == 1


def test_corrupt_line_is_runtime_error(sim, tmp_path, capsys):
    traces = tmp_path / "t.jsonl"
    lines = (sim / "traces.jsonl").read_text().splitlines()
    lines[4] = "{not json"
    traces.write_text("\n".join(lines) + "\n")
    out = tmp_path / "m.jsonl"
    rc = run(["match", "--fingerprints", str(sim / "fps.jsonl"), "--entropy",
              str(sim / "entropy.csv"), "--traces", str(traces), "--out", str(out)])
    assert rc == 2 and not out.exists()
    assert f"{traces}:5" in capsys.readouterr().err


def _res(pred, truth, n=1, tie=False):
    return MatchResult("t", MatchMode.BASIC, pred, 1.0, [(pred, 1.0)] * n, tie, truth)


def test_report_accuracy():
    rows = dict(report_accuracy([_res("a", "a"), _res("b", "b")]))
    assert rows["accuracy"] == 1.0 and rows["tie_rate"] == 0.0
    assert dict(report_accuracy([_res("a", "a"), _res("a", "b")]))["accuracy"] == 0.5
    # two identical sites: every trace has both in its pool and ties
    amb = dict(report_accuracy([_res("a", "a", 2, True), _res("a", "b", 2, True)]))
    assert amb["candidates_le_2"] == 1.0 and amb["candidates_le_1"] == 0.0
    with pytest.raises(ValueError):
        report_accuracy([_res("a", None)])
