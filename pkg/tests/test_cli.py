import json
from dataclasses import asdict
from pathlib import Path

import pytest

from evacnet import cli
from evacnet.synth import Scenario

HELP_GOLDEN = Path(__file__).parent / "data" / "cli_help.txt"

TINY = Scenario(name="tiny", seed=7, horizon_hours=72,
                corridors=[("I75", 4, 4.0)], order_hour=40,
                landfall_hour=60, noise_std=10.0)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    scen_file = out / "tiny.json"
    scen_file.write_text(json.dumps(asdict(TINY)), encoding="utf-8")
    assert cli.main(["generate", "--scenario", str(scen_file),
                     "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    cfg = out / "config.json"
    cfg.write_text(json.dumps({"variant": "rl_dmf", "epochs": 2,
                               "l": 3, "p": 2, "hidden": 8}),
                   encoding="utf-8")
    assert cli.main(["train", "--data", str(corpus), "--config", str(cfg),
                     "--out", str(out), "--log-level", "WARNING"]) == 0
    return out


def test_help_matches_golden(capsys):
    assert cli.main(["--help"]) == 0
    assert capsys.readouterr().out == HELP_GOLDEN.read_text()


def test_no_arguments_is_user_error():
    assert cli.main([]) == 1


def test_generate_outputs_and_manifest(corpus):
    for name in ("meta.csv", "records.csv", "scenario.json",
                 "manifest.json"):
        assert (corpus / name).is_file()
    manifest = json.loads((corpus / "manifest.json").read_text())
    assert manifest["command"] == "generate"
    assert manifest["seed"] == 7


def test_generate_unknown_scenario(tmp_path, caplog):
    code = cli.main(["generate", "--scenario", "S99",
                     "--out", str(tmp_path)])
    assert code == 1
    assert "S1, S2, S3" in caplog.text


def test_generate_seed_override(tmp_path):
    assert cli.main(["generate", "--scenario", "S1", "--seed", "55",
                     "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 55


def test_train_outputs(trained):
    for name in ("model.ckpt", "epochs.csv", "metrics.csv", "ranking.csv",
                 "manifest.json"):
        assert (trained / name).is_file()
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["variant"] == "rl_dmf"
    assert manifest["config"]["epochs"] == 2
    assert len(manifest["config_hash"]) == 16
    header = (trained / "metrics.csv").read_text().splitlines()[0]
    assert header == "horizon,RMSE,MAE,MAPE,R2"
    header = (trained / "ranking.csv").read_text().splitlines()[0]
    assert header == "rank,feature_name,mask_count,mask_fraction"


def test_train_missing_data_dir(tmp_path):
    assert cli.main(["train", "--data", str(tmp_path / "nope"),
                     "--out", str(tmp_path)]) == 1


def test_train_bad_config_json(corpus, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json", encoding="utf-8")
    assert cli.main(["train", "--data", str(corpus), "--config", str(cfg),
                     "--out", str(tmp_path)]) == 1


def test_train_unknown_config_field(corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"optimizer": "sgd"}), encoding="utf-8")
    assert cli.main(["train", "--data", str(corpus), "--config", str(cfg),
                     "--out", str(tmp_path)]) == 1


def test_evaluate_checkpoint(corpus, trained, tmp_path):
    assert cli.main(["evaluate", "--checkpoint",
                     str(trained / "model.ckpt"), "--data", str(corpus),
                     "--out", str(tmp_path),
                     "--log-level", "WARNING"]) == 0
    lines = (tmp_path / "metrics.csv").read_text().strip().splitlines()
    assert lines[0] == "horizon,RMSE,MAE,MAPE,R2"
    assert lines[-1].startswith("overall,")


def test_evaluate_missing_checkpoint(corpus, tmp_path):
    assert cli.main(["evaluate", "--checkpoint", str(tmp_path / "nope.ckpt"),
                     "--data", str(corpus), "--out", str(tmp_path)]) == 1


def test_rank_features(trained, tmp_path):
    assert cli.main(["rank-features", "--checkpoint",
                     str(trained / "model.ckpt"),
                     "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "ranking.csv").read_text().strip().splitlines()
    assert lines[0] == "rank,feature_name,mask_count,mask_fraction"
    assert len(lines) == 1 + 32  # one row per feature


def test_rank_features_rejects_non_rl_checkpoint(corpus, tmp_path, caplog):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"variant": "dmf_no_rl", "epochs": 1,
                               "l": 3, "p": 2, "hidden": 8}),
                   encoding="utf-8")
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(corpus), "--config", str(cfg),
                     "--out", str(run), "--log-level", "WARNING"]) == 0
    assert cli.main(["rank-features", "--checkpoint",
                     str(run / "model.ckpt"), "--out", str(tmp_path)]) == 1
    assert "feature-selection history" in caplog.text


def test_ablate(corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "l": 3, "p": 2, "hidden": 8}),
                   encoding="utf-8")
    assert cli.main(["ablate", "--data", str(corpus), "--config", str(cfg),
                     "--out", str(tmp_path),
                     "--log-level", "WARNING"]) == 0
    lines = (tmp_path / "ablation.csv").read_text().strip().splitlines()
    assert lines[0] == "variant,horizon,RMSE,MAE,MAPE,R2"
    variants = {ln.split(",")[0] for ln in lines[1:]}
    assert variants == {"rl_dmf", "dmf_no_rl", "rl_dgl_distance",
                        "rl_dgl_traveltime"}


def test_same_seed_byte_identical_outputs(corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"variant": "rl_dmf", "epochs": 2,
                               "l": 3, "p": 2, "hidden": 8, "seed": 3}),
                   encoding="utf-8")
    for name in ("a", "b"):
        assert cli.main(["train", "--data", str(corpus),
                         "--config", str(cfg),
                         "--out", str(tmp_path / name),
                         "--log-level", "WARNING"]) == 0
    for name in ("model.ckpt", "metrics.csv", "ranking.csv"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_internal_error_exit_code(corpus, tmp_path, monkeypatch):
    from evacnet import trainer

    def boom(*a, **kw):
        raise RuntimeError("exploded")

    monkeypatch.setattr(trainer, "train", boom)
    assert cli.main(["train", "--data", str(corpus),
                     "--out", str(tmp_path)]) == 2


def test_thread_env_validation(tmp_path, monkeypatch):
    monkeypatch.setenv("EVACNET_THREADS", "zero")
    assert cli.main(["generate", "--scenario", "S1",
                     "--out", str(tmp_path)]) == 1
    monkeypatch.setenv("EVACNET_THREADS", "2")
    monkeypatch.delenv("OMP_NUM_THREADS", raising=False)
    assert cli.main(["generate", "--scenario", "S1",
                     "--out", str(tmp_path)]) == 0
    import os
    assert os.environ["OMP_NUM_THREADS"] == "2"
