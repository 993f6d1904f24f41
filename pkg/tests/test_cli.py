import json

import pytest

from newsfusion import config as C
from newsfusion.cli import main


@pytest.fixture
def run(tmp_path):
    out = str(tmp_path / "runs")

    def _run(*argv):
        cmd, *rest = argv
        return main([cmd, "--out", out, *rest])

    _run.out = tmp_path / "runs"
    return _run


FAST = ["--set", "text.optimizer.epochs=1", "--set", "fusion.optimizer.epochs=1", "--set", "text.backbone.n_blocks=2"]


def test_synth_tabular_evaluate_chain(run):
    assert run("synth", "--n", "300", "--seed", "7") == 0
    assert run("preprocess") == 0
    assert run("train-tabular", "--model", "gradient_boosting", "--seed", "7") == 0
    assert run("evaluate") == 0
    rows = json.loads((run.out / "evaluation" / "auc.json").read_text())
    assert rows[0]["name"] == "tabular/gradient_boosting" and 0.5 < rows[0]["auc"] <= 1.0
    for d in ("synth", "preprocess", "tabular/gradient_boosting", "evaluation"):
        assert (run.out / d / "config.json").exists()
    assert json.loads((run.out / "synth" / "run.json").read_text())["seed"] == 7
    report = json.loads((run.out / "preprocess" / "drop_report.json").read_text())
    assert report == []
    assert set(json.loads((run.out / "preprocess" / "folds.json").read_text())) == {"seed", "k", "stratified", "assignments"}


def test_rerun_from_written_config_is_identical(run, tmp_path):
    run("synth", "--n", "200", "--seed", "3")
    assert run("train-tabular", "--model", "random_forest") == 0
    first = (run.out / "tabular" / "random_forest" / "predictions.csv").read_bytes()
    cfg_path = run.out / "tabular" / "random_forest" / "config.json"
    saved = tmp_path / "saved.json"
    saved.write_text(cfg_path.read_text())
    (run.out / "tabular" / "random_forest" / "predictions.csv").unlink()
    assert main(["train-tabular", "--config", str(saved)]) == 0
    assert (run.out / "tabular" / "random_forest" / "predictions.csv").read_bytes() == first


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(C.OUT_ENV, str(tmp_path / "env_root"))
    assert main(["synth", "--n", "50"]) == 0
    assert (tmp_path / "env_root" / "synth" / "corpus.csv").exists()


def test_unknown_flag_is_usage_error(run):
    with pytest.raises(SystemExit) as exc:
        run("train-tabular", "--no-such-flag")
    assert exc.value.code == 2


def test_unknown_config_key_rejected(run, tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("text:\n  optimizer:\n    learning_rate: 0.1\n")
    assert run("synth", "--config", str(bad)) == 1
    assert "text.optimizer.learning_rate" in capsys.readouterr().err


def test_flags_override_config_file(run, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"n": 40}, "seed": 1}))
    assert run("synth", "--config", str(cfg), "--n", "25") == 0
    resolved = json.loads((run.out / "synth" / "config.json").read_text())
    assert resolved["synth"]["n"] == 25 and resolved["seed"] == 1


def test_s2_without_meta_checkpoint(run, capsys):
    assert run("train-fusion", "--strategy", "s2") == 1
    err = capsys.readouterr().err
    assert "AssemblyError" in err and "meta_checkpoint" in err


def test_missing_corpus_is_validation_error(run, capsys):
    assert run("train-tabular") == 1
    assert "FileNotFoundError" in capsys.readouterr().err


def test_train_text_dry_run_pretrained_dims(run):
    assert run("train-text", "--blocks", "1-12", "--backbone", "pretrained", "--dry-run") == 0
    manifest = json.loads((run.out / "text" / "blocks_1-12" / "manifest.json").read_text())
    assert manifest["head_input_dim"] == 9216
    assert run("train-text", "--blocks", "6-12", "--backbone", "pretrained", "--dry-run") == 0
    assert json.loads((run.out / "text" / "blocks_6-12" / "manifest.json").read_text())["head_input_dim"] == 5376


def test_text_then_fusion_then_inspect(run, capsys):
    run("synth", "--n", "160")
    assert run("train-tabular", "--model", "mlp", "--set", "tabular.hyperparameters={epochs: 2}") == 0
    assert run("train-text", "--blocks", "1-2", *FAST) == 0
    text_ckpt = run.out / "text" / "blocks_1-2"
    assert (text_ckpt / "weights.safetensors").exists() and (text_ckpt / "history.jsonl").exists()
    hist = [json.loads(l) for l in (text_ckpt / "history.jsonl").read_text().splitlines()]
    assert set(hist[0]) >= {"epoch", "step", "lr", "loss", "val_auc"}
    code = run(
        "train-fusion", "--strategy", "s4", "--combine", "add", "--blocks", "1-2",
        "--text-checkpoint", str(text_ckpt), "--meta-checkpoint", str(run.out / "tabular" / "mlp" / "checkpoint"), *FAST,
    )
    assert code == 0
    capsys.readouterr()
    assert run("fusion-inspect", str(run.out / "fusion" / "S4_add"), "--json") == 0
    ledger = json.loads(capsys.readouterr().out)
    assert ledger["meta.extractor.0.weight"].startswith("checkpoint:")
    assert ledger["fused_head.hidden.weight"] == "random:0"


def test_cv_and_reports(run):
    run("synth", "--n", "200")
    assert run("cv", "--folds", "3", "--model", "gaussian_nb") == 0
    cv = json.loads((run.out / "cv" / "gaussian_nb" / "cv.json").read_text())
    assert len(cv["fold_auc"]) == 3
    assert run("tabular-report", "--models", "gradient_boosting,lda") == 0
    rows = json.loads((run.out / "tabular-report" / "report.json").read_text())
    assert {r["name"] for r in rows} == {"gradient_boosting", "lda"}
    assert run("ensemble", "--mode", "blending", "--base", "gradient_boosting,extra_trees") == 0
    assert (run.out / "ensemble" / "blending" / "manifest.json").exists()


def test_evaluate_explicit_files(run, tmp_path):
    (tmp_path / "p.csv").write_text("id,score\na,0.9\nb,0.2\n")
    (tmp_path / "l.csv").write_text("id,label\na,1\nb,0\n")
    assert run("evaluate", "--predictions", str(tmp_path / "p.csv"), "--labels", str(tmp_path / "l.csv")) == 0
    rows = json.loads((run.out / "evaluation" / "auc.json").read_text())
    assert rows[0]["auc"] == 1.0
