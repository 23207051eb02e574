import csv
import json
import os

import pytest
from PIL import Image

from isf import cli

TINY = {
    "schema_version": 1,
    "seed": 0,
    "generator": {"kind": "toy", "seed": 7},
    "embedders": {"perceptual": {"kind": "toy_gradient"}},
    "dataset": {"n_total": 160, "split_fraction": 0.75, "seed": 0},
    "train": {"total_iterations": 6, "batch_size": 4, "hidden": 32, "critic_width": 8,
              "noise_dim": 8},
    "metrics": {"n_codes": 20, "diversity_inputs": 5, "diversity_samples": 3, "pir_steps": 4},
}


def _write(tmp_path, cfg, name="cfg.json"):
    cfg = {**cfg, "output_dir": str(tmp_path / "out")}
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path), tmp_path / "out"


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg, out = _write(tmp, TINY)
    assert cli.main(["build-dataset", "--config", cfg]) == 0
    assert cli.main(["train", "--config", cfg]) == 0
    return tmp, cfg, out


def test_train_writes_artifacts(trained):
    _, _, out = trained
    assert (out / "dataset" / "manifest.json").exists()
    assert (out / "train" / "checkpoint_final" / "manifest.json").exists()
    assert len((out / "train" / "train_log.jsonl").read_text().splitlines()) == 6
    assert json.loads((out / "train" / "config.json").read_text())["schema_version"] == 1


def test_evaluate_report_keys_and_determinism(trained, capsys):
    tmp, cfg, out = trained
    assert cli.main(["evaluate", "--config", cfg, "--pir-csv", str(tmp / "pir.csv")]) == 0
    first = (out / "metrics.json").read_text()
    assert cli.main(["evaluate", "--config", cfg]) == 0
    assert (out / "metrics.json").read_text() == first
    rep = json.loads(first)
    assert {"frs", "ppl", "pir", "diversity", "frechet", "mAcc"} <= set(rep["metrics"])
    assert rep["metadata"]["schema_version"] == 1
    rows = list(csv.DictReader(open(tmp / "pir.csv")))
    assert len(rows) == 20 * 4


def test_edit_writes_strip_and_sidecar(trained, capsys):
    _, cfg, out = trained
    assert cli.main(["edit", "--config", cfg, "--code-index", "1", "--targets", "1010",
                     "--count", "3"]) == 0
    stem = capsys.readouterr().out.strip()
    img = Image.open(stem + ".png")
    assert img.size == (32 * 4, 32)
    side = json.loads(open(stem + ".json").read())
    assert side["targets"] == [1, 0, 1, 0] and len(side["edit_probs"]) == 3


def test_interpolate(trained, capsys):
    _, cfg, out = trained
    assert cli.main(["interpolate", "--config", cfg, "--attribute", "2", "--steps", "5"]) == 0
    pir = json.loads(capsys.readouterr().out)["pir"]
    assert pir >= 0
    assert Image.open(out / "interpolations" / "code0_attr2_T5.png").size == (32 * 6, 32)


def test_invalid_config_exit_2_no_outputs(tmp_path, capsys):
    bad = {**TINY, "train": {**TINY["train"], "learning_rate_M": -1.0}}
    cfg, out = _write(tmp_path, bad)
    assert cli.main(["train", "--config", cfg]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config" and err["exit_code"] == 2
    assert not out.exists()


def test_unknown_key_and_missing_file_exit_2(tmp_path):
    cfg, _ = _write(tmp_path, {**TINY, "bogus": 1})
    assert cli.main(["train", "--config", cfg]) == 2
    assert cli.main(["train", "--config", str(tmp_path / "nope.json")]) == 2


def test_unknown_ablation_exit_2(tmp_path):
    cfg, out = _write(tmp_path, TINY)
    assert cli.main(["ablate", "--config", cfg, "--variants", "drop_everything"]) == 2
    assert not out.exists()


def test_runtime_failure_exit_3(tmp_path, capsys):
    cfg, _ = _write(tmp_path, TINY)
    assert cli.main(["evaluate", "--config", cfg, "--checkpoint", str(tmp_path / "none")]) == 3
    assert json.loads(capsys.readouterr().err.splitlines()[-1])["error"] == "runtime"


def test_output_root_env_override(tmp_path, monkeypatch):
    cfg, out = _write(tmp_path, TINY)
    monkeypatch.setenv("ISF_OUTPUT_ROOT", str(tmp_path / "elsewhere"))
    assert cli.main(["build-dataset", "--config", cfg]) == 0
    assert (tmp_path / "elsewhere" / "dataset" / "manifest.json").exists()
    assert not out.exists()


def test_ablate_csv(tmp_path):
    cfg, out = _write(tmp_path, TINY)
    assert cli.main(["ablate", "--config", cfg, "--variants", "full,drop_nb"]) == 0
    rows = list(csv.DictReader(open(out / "ablation" / "ablation.csv")))
    assert [r["variant"] for r in rows] == ["full", "drop_nb"]
    assert set(rows[0]) == {"variant", "frechet", "diversity", "frs", "pir"}
    assert (out / "ablation" / "drop_nb" / "metrics.json").exists()


def test_parse_ablation_lambda_list():
    v = cli.parse_ablation(["adain", "per_row"], [0.2, 1, 2])
    assert list(v) == ["adain", "per_row", "lambda_ds=0.2", "lambda_ds=1", "lambda_ds=2"]
    assert v["adain"] == {"norm": "instance"}


def test_toy_config_validates():
    cli.validate_config(cli.TOY_CONFIG)
    cfg = cli.train_config(cli.TOY_CONFIG)
    assert cfg.total_iterations == 3000 and cfg.weights.lambda_cls == 2.0
    assert cfg.weights.lambda_ds == 2.0
