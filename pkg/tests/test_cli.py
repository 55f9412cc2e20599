import json

import pytest
from click.testing import CliRunner

from diarc.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny corpus plus trained checkpoints, driven through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()

    result = runner.invoke(main, [
        "gen-corpus", "--out", str(root / "corpus"),
        "--seed", "3", "--items-per-category", "60"])
    assert result.exit_code == 0, result.output

    result = runner.invoke(main, [
        "captioner", "train",
        "--corpus", str(root / "corpus"),
        "--out", str(root / "captioner.ckpt"),
        "--seed", "3", "--epochs", "2",
        "--layers", "1", "--hidden", "16", "--heads", "2", "--ffn", "32"])
    assert result.exit_code == 0, result.output

    result = runner.invoke(main, [
        "retriever", "train",
        "--corpus", str(root / "corpus"),
        "--simulator", str(root / "captioner.ckpt"),
        "--out", str(root / "retriever.ckpt"),
        "--seed", "3", "--epochs", "1", "--batch-size", "16", "--turns", "2",
        "--layers", "1", "--hidden", "16", "--heads", "2", "--ffn", "32"])
    assert result.exit_code == 0, result.output
    return root, runner


def test_gen_corpus_wrote_files(workspace):
    root, _ = workspace
    for name in ("items.jsonl", "pairs.jsonl", "vocab.json", "meta.json"):
        assert (root / "corpus" / name).exists()
    meta = json.loads((root / "corpus" / "meta.json").read_text())
    assert meta["generation_seed"] == 3


def test_captioner_generate(workspace):
    root, runner = workspace
    items = (root / "corpus" / "items.jsonl").read_text().splitlines()
    first, second = json.loads(items[0]), json.loads(items[1])
    result = runner.invoke(main, [
        "captioner", "generate",
        "--corpus", str(root / "corpus"),
        "--checkpoint", str(root / "captioner.ckpt"),
        "--reference", first["id"], "--target", second["id"],
        "--decode", "greedy"])
    assert result.exit_code == 0, result.output


def test_captioner_eval_reports_metrics(workspace):
    root, runner = workspace
    result = runner.invoke(main, [
        "captioner", "eval",
        "--corpus", str(root / "corpus"),
        "--checkpoint", str(root / "captioner.ckpt"),
        "--decode", "greedy", "--split", "test"])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output[result.output.index("{"):])
    assert {"BLEU4", "ROUGE_L", "CIDEr"} <= set(payload["captioning"])


def test_retriever_eval_writes_report(workspace):
    root, runner = workspace
    result = runner.invoke(main, [
        "retriever", "eval",
        "--corpus", str(root / "corpus"),
        "--checkpoint", str(root / "retriever.ckpt"),
        "--simulator", str(root / "captioner.ckpt"),
        "--turns", "2", "--decode", "greedy",
        "--out", str(root / "report.json")])
    assert result.exit_code == 0, result.output
    report = json.loads((root / "report.json").read_text())
    assert "1" in report["turns"] and "2" in report["turns"]
    assert "P_percent" in report["turns"]["1"]


def test_retriever_dialog_emits_session(workspace):
    root, runner = workspace
    items = (root / "corpus" / "items.jsonl").read_text().splitlines()
    recs = [json.loads(line) for line in items]
    test_recs = [r for r in recs if r["split"] == "test"
                 and r["category"] == "dresses"]
    result = runner.invoke(main, [
        "retriever", "dialog",
        "--corpus", str(root / "corpus"),
        "--checkpoint", str(root / "retriever.ckpt"),
        "--simulator", str(root / "captioner.ckpt"),
        "--target", test_recs[0]["id"], "--reference", test_recs[1]["id"],
        "--turns", "2", "--decode", "greedy",
        "--out", str(root / "sessions.jsonl")])
    assert result.exit_code == 0, result.output
    session = json.loads((root / "sessions.jsonl").read_text().splitlines()[0])
    assert session["target_id"] == test_recs[0]["id"]
    assert len(session["turns"]) == 2


def test_full_eval_writes_json_and_csv(workspace):
    root, runner = workspace
    result = runner.invoke(main, [
        "eval",
        "--corpus", str(root / "corpus"),
        "--retriever", str(root / "retriever.ckpt"),
        "--simulator", str(root / "captioner.ckpt"),
        "--turns", "2", "--decode", "greedy",
        "--out", str(root / "full_report")])
    assert result.exit_code == 0, result.output
    assert (root / "full_report.json").exists()
    csv_text = (root / "full_report.csv").read_text()
    assert csv_text.startswith("turn,P,P_percent")


def test_singleturn_train_and_eval(workspace):
    root, runner = workspace
    result = runner.invoke(main, [
        "singleturn", "train",
        "--corpus", str(root / "corpus"),
        "--variant", "E", "--out", str(root / "st_E.ckpt"),
        "--seed", "3", "--epochs", "2", "--hidden", "16",
        "--margin", "0.2"])
    assert result.exit_code == 0, result.output
    result = runner.invoke(main, [
        "singleturn", "eval",
        "--corpus", str(root / "corpus"),
        "--checkpoint", str(root / "st_E.ckpt"),
        "--out", str(root / "table5.csv")])
    assert result.exit_code == 0, result.output
    table = (root / "table5.csv").read_text().splitlines()
    assert table[0] == "variant,R@10,R@50"
    assert table[1].startswith("E,")
