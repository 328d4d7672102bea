import pytest

from pcadv import classifier as clf
from pcadv.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(d / "train"), "--per-class", "10", "--points", "64"]) == 0
    assert main(["gen-data", "--out", str(d / "test"), "--per-class", "1", "--points", "64",
                 "--seed", "5"]) == 0
    assert main(["train", "--data", str(d / "train"), "--out", str(d / "m.json"), "--epochs", "15"]) == 0
    return d


def test_gen_data_layout(workspace):
    files = sorted(p.name for p in (workspace / "train").iterdir())
    assert len(files) == 41 and "manifest.csv" in files


def test_train_output(workspace, capsys):
    assert main(["train", "--data", str(workspace / "train"), "--out", str(workspace / "m2.json"),
                 "--epochs", "15"]) == 0
    assert capsys.readouterr().out.startswith("train_accuracy=")
    assert (workspace / "m.json").read_bytes() == (workspace / "m2.json").read_bytes()
    clf.load_file(workspace / "m2.json")


def attack(ws, out, *extra):
    return main(["attack", "--model", str(ws / "m.json"), "--data", str(ws / "test"),
                 "--out", str(ws / out), "--max-iters", "60", *extra])


def test_attack_deterministic_and_ordered(workspace):
    assert attack(workspace, "a.csv", "--trace", str(workspace / "tr")) == 0
    assert attack(workspace, "b.csv", "--jobs", "2") == 0
    a = (workspace / "a.csv").read_bytes()
    assert a == (workspace / "b.csv").read_bytes()
    ids = [line.split(",")[0] for line in a.decode().splitlines()[1:]]
    assert ids == sorted(ids)
    assert len(list((workspace / "tr").iterdir())) == len(ids)


def test_attack_rejects_smooth(workspace, capsys):
    assert attack(workspace, "c.csv", "--reg", "smooth") == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "evaluation-only" in err


def test_usage_errors_are_single_line(capsys):
    assert main(["nope"]) == 2
    assert main([]) == 2
    assert all(e.count("\n") == 1 for e in [capsys.readouterr().err.split("error:")[1]])


def test_missing_manifest(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "m")]) == 1
    assert capsys.readouterr().err.startswith("error: format: manifest not found")


def test_missing_checkpoint(workspace, tmp_path, capsys):
    rc = main(["blackbox", "--surrogate", str(tmp_path / "x.json"), "--target", str(tmp_path / "x.json"),
               "--data", str(workspace / "test"), "--out", str(tmp_path / "o.csv")])
    assert rc == 1 and "error: io:" in capsys.readouterr().err


def test_blackbox_and_defense_runs(workspace):
    ws = str(workspace)
    assert main(["blackbox", "--surrogate", ws + "/m.json", "--target", ws + "/m.json",
                 "--data", ws + "/test", "--out", ws + "/bb.csv", "--reg", "l2"]) == 0
    header = (workspace / "bb.csv").read_text().splitlines()[0]
    assert header.endswith(",queries")
    for out in ("d1.csv", "d2.csv"):
        assert main(["defend-attack", "--model", ws + "/m.json", "--data", ws + "/test", "--out",
                     ws + "/" + out, "--defense", "srs", "--drop", "16", "--eot", "4",
                     "--max-iters", "20"]) == 0
    assert (workspace / "d1.csv").read_bytes() == (workspace / "d2.csv").read_bytes()
    rc = main(["defend-attack", "--model", ws + "/m.json", "--data", ws + "/test", "--out",
               ws + "/d3.csv", "--defense", "srs"])
    assert rc == 1   # default drop 500 exceeds the 64-point clouds


def test_eval(workspace, capsys):
    attack(workspace, "e.csv")
    capsys.readouterr()
    assert main(["eval", "--results", str(workspace / "e.csv"), "--oc-metric", "cd",
                 "--oc-out", str(workspace / "oc.tsv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("P_suc(%)") and len(lines[1].split("\t")) == 7
    oc = (workspace / "oc.tsv").read_text().splitlines()
    assert len(oc) == 200 and all(len(r.split("\t")) == 2 for r in oc)


def test_eval_malformed(tmp_path, capsys):
    (tmp_path / "r.csv").write_text("sample_id,method,success,l2,cd,hd,curv,smooth,time_s\nx,m,2,0,0,0,0,0,0\n")
    assert main(["eval", "--results", str(tmp_path / "r.csv")]) == 1
    assert ":2:" in capsys.readouterr().err
