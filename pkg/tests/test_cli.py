import json
import sys

import pytest

from chronicle.cli import main


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Tiny end-to-end run: synth -> build -> split -> train -> dirs."""
    root = tmp_path_factory.mktemp("pipeline")
    data, built, split, trained = (
        root / "data", root / "built", root / "split", root / "trained"
    )
    assert run(["synth", "--patients", "40", "--concepts", "12", "--seed", "7",
                "--mean-events", "14", "-o", str(data)]) == 0
    assert run([
        "build-timelines",
        "--events", str(data / "events.jsonl"),
        "--demographics", str(data / "demographics.jsonl"),
        "--ontology", str(data / "ontology.tsv"),
        "--min-global-count", "1", "--min-patient-count", "1",
        "-o", str(built),
    ]) == 0
    assert run(["split", "--timelines", str(built / "timelines.jsonl"),
                "--test-fraction", "0.2", "--seed", "7", "-o", str(split)]) == 0
    assert run([
        "train",
        "--timelines", str(split / "train_timelines.jsonl"),
        "--ontology", str(data / "ontology.tsv"),
        "--epochs", "1", "--batch-size", "16", "--lr", "1e-3", "--seed", "7",
        "-o", str(trained),
    ]) == 0
    return root, data, built, split, trained


def test_pipeline_outputs_and_manifests(pipeline):
    root, data, built, split, trained = pipeline
    for out_dir, files in [
        (data, ["events.jsonl", "demographics.jsonl", "world.json", "ontology.tsv"]),
        (built, ["timelines.jsonl", "histories.jsonl"]),
        (split, ["train_timelines.jsonl", "test_timelines.jsonl"]),
        (trained, ["model/config.json", "model/vocab.json", "model/weights.bin",
                   "history.json"]),
    ]:
        manifest = json.loads((out_dir / "run_manifest.json").read_text())
        assert manifest["subcommand"]
        assert "config" in manifest and "elapsed_seconds" in manifest
        for f in files:
            assert (out_dir / f).exists(), f


def test_evaluate_with_reference_gate(pipeline, tmp_path):
    root, data, built, split, trained = pipeline
    out = tmp_path / "eval"
    code = run([
        "evaluate",
        "--model", str(trained / "model"),
        "--timelines", str(split / "test_timelines.jsonl"),
        "--histories", str(built / "histories.jsonl"),
        "--reference",
        "-o", str(out),
    ])
    assert code == 0  # reference cross-check matched
    report = json.loads((out / "report.json").read_text())
    assert report["n_positions"] > 0
    assert len(report["cells"]) == 5 * 3 * 3 * 2
    assert (out / "report.tsv").exists()
    assert (out / "report.txt").exists()
    assert (out / "figures" / "precision_grid.png").exists()


def test_generate_from_prompt(pipeline, capsys):
    root, data, built, split, trained = pipeline
    vocab = json.loads((trained / "model" / "vocab.json").read_text())
    age = next(s for s in vocab["spellings"] if s.startswith("AGE:"))
    eth = next(s for s in vocab["spellings"] if s.startswith("ETH:"))
    sex = next(s for s in vocab["spellings"] if s.startswith("SEX:"))
    code = run([
        "generate",
        "--model", str(trained / "model"),
        "--prompt", f"{age},{eth},{sex}",
        "--top-k", "100", "--steps", "15", "--seed", "3",
        "--ontology", str(data / "ontology.tsv"),
    ])
    assert code == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
    assert len(lines) == 3 + 15
    assert sum(1 for l in lines if l.startswith("+")) == 15


def test_stats_outputs(pipeline, tmp_path):
    root, data, built, split, trained = pipeline
    out = tmp_path / "stats"
    code = run([
        "stats",
        "--timelines", str(built / "timelines.jsonl"),
        "--demographics", str(data / "demographics.jsonl"),
        "--ontology", str(data / "ontology.tsv"),
        "-o", str(out),
    ])
    assert code == 0
    stats = json.loads((out / "stats.json").read_text())
    assert stats["n_timelines"] > 0
    assert set(stats["patients_by_age_band"]) == {
        "0-18", "18-30", "30-41", "41-50", "51-64", "64+"
    }
    assert (out / "stats.tsv").exists()
    assert (out / "figures" / "age_bands.png").exists()


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[synth]\npatients = 5\nconcepts = 8\nseed = 1\n')
    out = tmp_path / "a"
    assert run(["synth", "--config", str(cfg), "-o", str(out)]) == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["config"]["patients"] == 5

    out2 = tmp_path / "b"
    assert run(["synth", "--config", str(cfg), "--patients", "9", "-o", str(out2)]) == 0
    manifest2 = json.loads((out2 / "run_manifest.json").read_text())
    assert manifest2["config"]["patients"] == 9


def test_usage_error_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-subcommand"])
    assert exc.value.code == 2
    assert main(["build-timelines", "-o", str(tmp_path / "x")]) == 2


def test_data_error_exits_1(tmp_path):
    assert main([
        "stats",
        "--timelines", str(tmp_path / "missing.jsonl"),
        "--demographics", str(tmp_path / "missing2.jsonl"),
        "-o", str(tmp_path / "out"),
    ]) == 1
    assert main([
        "build-timelines",
        "--events", str(tmp_path / "e.jsonl"),
        "--demographics", str(tmp_path / "d.jsonl"),
        "--ontology", str(tmp_path / "o.tsv"),
        "--bucket-days", "0",
        "-o", str(tmp_path / "out2"),
    ]) == 1  # invalid config value is a data error, not a crash
