import json
import subprocess
import sys

import numpy as np
import pytest

from wildset.cli import main
from wildset.fileio import read_jsonl, write_descriptors, write_jsonl
from wildset.seeding import derive_seed


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


@pytest.fixture
def records(tmp_path):
    rng = np.random.default_rng(0)
    tags = ["dog", "puppy", "brownbear", "ursusarctos", "cat", "xyz"]
    recs = [
        {"image_id": i, "tags": [str(t) for t in rng.choice(tags, size=rng.integers(1, 4), replace=False)]}
        for i in range(120)
    ]
    path = tmp_path / "recs.jsonl"
    write_jsonl(path, recs)
    (tmp_path / "db.tsv").write_text("dog\tn1\npuppy\tn1\nbrown bear\tn2\nursus arctos\tn2\ncat\tn3\n")
    return path


def test_schedule_in1k_prints_peak_and_steps(capsys):
    code, out = run(["schedule", "--preset", "in1k", "--minibatch", "3072"], capsys)
    assert code == 0
    assert "peak_lr    1.2\n" in out.out
    assert "steps      [30, 30, 30, 10] epochs" in out.out


def test_schedule_json(capsys):
    code, out = run(["schedule", "--preset", "in1k", "--minibatch", "3072", "--format", "json"], capsys)
    payload = json.loads(out.out)
    assert payload["schedule"]["peak_lr"] == pytest.approx(1.2)
    assert payload["schedule"]["explicit_steps"] == [30, 30, 30, 10]
    assert len(payload["plateaus"]) == 4


def test_schedule_detection_table(capsys):
    code, out = run(
        ["schedule", "--table", "detection", "--backbone", "ResNeXt-101 32x16d", "--source", "IG-3.5B-17k"], capsys
    )
    assert code == 0 and json.loads(out.out)["lr"] == 0.00075


def test_unknown_subcommand_exits_2(capsys):
    assert run(["frobnicate"], capsys)[0] == 2


def test_validation_failure_names_field(capsys):
    code, out = run(["schedule", "--preset", "in1k"], capsys)
    assert code == 1 and "minibatch" in out.err
    code, out = run(["schedule", "--preset", "xx", "--minibatch", "4"], capsys)
    assert code == 1 and "preset" in out.err


def test_empty_corpus_names_input(tmp_path, capsys):
    empty = tmp_path / "none.jsonl"
    empty.write_text("")
    code, out = run(
        ["resample", "--records", empty, "--mode", "uniform", "--target-len", 10, "--seed", 1,
         "--out-ids", tmp_path / "i", "--out-masks", tmp_path / "m"],
        capsys,
    )
    assert code == 1 and "empty input" in out.err and "none.jsonl" in out.err


def test_missing_input_file(tmp_path, capsys):
    code, out = run(["vocab", "--synsets", tmp_path / "nope.tsv", "--records", tmp_path / "r", "--out", tmp_path / "o"], capsys)
    assert code == 1 and "synsets" in out.err


def test_config_supplies_section_values_and_root_seed(tmp_path, records):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("seed: 11\nresample:\n  mode: sqrt\n  target_len: 300\n")
    ids, masks = tmp_path / "e.ids", tmp_path / "e.masks"
    assert run(["resample", "--config", cfg, "--records", records, "--out-ids", ids, "--out-masks", masks])[0] == 0
    manifest = json.loads((tmp_path / "e.ids.manifest.json").read_text())
    assert manifest["parameters"]["mode"] == "sqrt"
    assert manifest["parameters"]["seed"] == derive_seed(11, "resample")
    assert manifest["outputs"][str(ids)]
    assert manifest["config"]["sha256"]
    assert {"elapsed_seconds", "started_unix"} <= set(manifest["timings"])
    # flags win over config
    assert run(["resample", "--config", cfg, "--records", records, "--mode", "uniform",
                "--out-ids", ids, "--out-masks", masks])[0] == 0
    assert json.loads((tmp_path / "e.ids.manifest.json").read_text())["parameters"]["mode"] == "uniform"


def test_seed_required_without_root(tmp_path, records, capsys):
    code, out = run(["noise", "--records", records, "--p", 0.1, "--out", tmp_path / "n.jsonl"], capsys)
    assert code == 1 and "seed" in out.err


def test_hashtag_pipeline(tmp_path, records):
    db = tmp_path / "db.tsv"
    vocab, cmap, rel = tmp_path / "v.jsonl", tmp_path / "c.jsonl", tmp_path / "r.jsonl"
    assert run(["vocab", "--synsets", db, "--records", records, "--out", vocab])[0] == 0
    assert {r["tag"] for r in read_jsonl(vocab)} == {"dog", "puppy", "brownbear", "ursusarctos", "cat"}
    assert run(["canonicalize", "--synsets", db, "--records", records, "--vocab", vocab,
                "--out", cmap, "--records-out", rel])[0] == 0
    groups = {r["canonical"]: r["members"] for r in read_jsonl(cmap)}
    assert any(sorted(m) == ["brownbear", "ursusarctos"] for m in groups.values())
    assert groups["xyz"] == ["xyz"]
    targets = tmp_path / "t.jsonl"
    assert run(["targets", "--records", rel, "--vocab", vocab, "--out", targets])[0] == 0
    for rec in read_jsonl(targets):
        assert abs(sum(rec["values"]) - 1) < 1e-9


def test_threads_env_cap(tmp_path, records, monkeypatch):
    monkeypatch.setenv("WILDSET_THREADS", "2")
    out = tmp_path / "n.jsonl"
    assert run(["noise", "--records", records, "--p", 0.1, "--seed", 4, "--threads", 8, "--out", out])[0] == 0
    assert json.loads((tmp_path / "n.jsonl.manifest.json").read_text())["parameters"]["threads"] == 2


def test_descriptor_and_index_pipeline(tmp_path, capsys):
    rng = np.random.default_rng(3)
    write_descriptors(tmp_path / "fm.wsd", rng.random((200, 32, 4, 5)).astype(np.float32))
    args = ["descriptors", "--input", tmp_path / "fm.wsd", "--out", tmp_path / "d.wsd", "--out-u8", tmp_path / "d8.wsd",
            "--pca-model", tmp_path / "pca.bin", "--sq-model", tmp_path / "sq.bin", "--n-components", 16, "--train"]
    assert run(args)[0] == 0
    assert run(["train-quantizers", "--input", tmp_path / "d.wsd", "--out", tmp_path / "q.idx", "--seed", 1,
                "--n-components", 8, "--coarse-bits", 2, "--n-subquantizers", 2, "--n-bits", 3,
                "--opq-alternations", 1])[0] == 0
    assert run(["index", "build", "--quantizers", tmp_path / "q.idx", "--input", tmp_path / "d8.wsd",
                "--out", tmp_path / "i.idx"])[0] == 0
    assert run(["index", "search", "--index", tmp_path / "i.idx", "--queries", tmp_path / "d.wsd",
                "--out", tmp_path / "s.jsonl", "--k", 3, "--nprobe", 16])[0] == 0
    hits = read_jsonl(tmp_path / "s.jsonl")
    assert len(hits) == 200 and all(len(h["ids"]) == 3 for h in hits)
    assert run(["dedup", "--index", tmp_path / "i.idx", "--queries", tmp_path / "d.wsd", "--query-id-offset", 1000,
                "--exact", tmp_path / "d.wsd", "--out", tmp_path / "v.jsonl", "--manifests-out", tmp_path / "m.jsonl",
                "--k", 5, "--nprobe", 16])[0] == 0
    verdicts = read_jsonl(tmp_path / "v.jsonl")
    assert {"query_id", "neighbor_id", "distance", "flagged", "label"} <= set(verdicts[0])
    capsys.readouterr()
    assert run(["report", "--verdicts", tmp_path / "v.jsonl", "--test-size", 200, "--accuracy", 0.9], capsys)[0] == 0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "wildset", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("wildset ")
