import csv
import json

import numpy as np
import pytest

from schane.cli import ABLATION_HEADER, FEWSHOT_HEADER, main
from schane.config import PAPER_LAMBDA_GRID, RunConfig, build_config
from schane.errors import ConfigError
from schane.framework import init_params, load_checkpoint

TINY = {
    "synthetic": {"class_count": 8, "feature_dim": 8, "samples_per_class": 30},
    "epochs": 3,
    "batch_size": 32,
    "hidden": [16],
    "embed_dim": 8,
    "way": 3,
    "episodes": 3,
    "query_shot": 5,
    "finetune_steps": 3,
}


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def manifest(out, command):
    with open(out / f"{command}-manifest.json") as fh:
        return json.load(fh)


@pytest.fixture
def pretrained(tiny, tmp_path):
    out = tmp_path / "pre"
    assert run("pretrain", "--config", tiny, "--out", out) == 0
    return out


def test_generate_default(tmp_path, capsys):
    assert run("generate", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "dataset.csv")
    assert len(rows) == 2000 and len(rows[0]) == 65
    assert sorted({r[0] for r in rows}, key=int) == [str(c) for c in range(20)]
    assert "2000 samples, 20 classes" in capsys.readouterr().out
    m = manifest(tmp_path, "generate")
    assert m["metrics"]["classes"] == 20 and m["config"]["lambda"] == 0.9


def test_generate_is_byte_stable(tmp_path):
    run("generate", "--out", tmp_path / "a", "--set", "synthetic={\"seed\": 5}")
    run("generate", "--out", tmp_path / "b", "--set", "synthetic={\"seed\": 5}")
    assert (tmp_path / "a/dataset.csv").read_bytes() == (tmp_path / "b/dataset.csv").read_bytes()


def test_invalid_spec_names_field(tmp_path, capsys):
    assert run("generate", "--out", tmp_path, "--set", 'synthetic={"class_count": 0}') == 2
    assert "synthetic.class_count" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    assert run("generate", "--out", tmp_path, "--set", "colour=blue") == 2
    assert "colour" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text('{"epochz": 3}')
    assert run("pretrain", "--config", bad, "--out", tmp_path) == 2
    assert "epochz" in capsys.readouterr().err


def test_unknown_flag_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as err:
        run("fewshot", "--wayy", "5")
    assert err.value.code == 2
    assert "--wayy" in capsys.readouterr().err


def test_missing_csv_is_data_error(tmp_path):
    assert run("pretrain", "--out", tmp_path, "--csv", tmp_path / "missing.csv") == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(tiny, tmp_path):
    assert run("pretrain", "--config", tiny, "--out", tmp_path, "--set", "learning_rate=1e308") == 4


def test_zero_epochs_checkpoint_is_initialisation(tiny, tmp_path):
    assert run("pretrain", "--config", tiny, "--out", tmp_path, "--epochs", 0, "--seed", 4) == 0
    params, _, meta = load_checkpoint(tmp_path / "checkpoint.json")
    init = init_params(8, 4, (16,), 8, 0.1, 4)
    assert params.flat().tobytes() == init.flat().tobytes()
    assert meta["epoch"] == 0


def test_pretrain_reaches_high_base_accuracy(tmp_path):
    assert run("pretrain", "--out", tmp_path) == 0
    m = manifest(tmp_path, "pretrain")
    assert len(m["metrics"]["val_accuracy"]) == 30
    assert m["metrics"]["final_val_accuracy"] > 0.95


def test_resume_reproduces_trace(tiny, tmp_path):
    run("pretrain", "--config", tiny, "--out", tmp_path / "full", "--epochs", 4)
    run("pretrain", "--config", tiny, "--out", tmp_path / "half", "--epochs", 2)
    assert run("pretrain", "--config", tiny, "--out", tmp_path / "rest", "--epochs", 4,
               "--resume", tmp_path / "half/checkpoint.json") == 0
    full = manifest(tmp_path / "full", "pretrain")["metrics"]["loss"]
    half = manifest(tmp_path / "half", "pretrain")["metrics"]["loss"]
    rest = manifest(tmp_path / "rest", "pretrain")["metrics"]["loss"]
    assert half + rest == full
    a = (tmp_path / "full/checkpoint.json").read_text()
    b = (tmp_path / "rest/checkpoint.json").read_text()
    assert json.loads(a)["params"] == json.loads(b)["params"]


def test_fewshot_all_objectives(tiny, pretrained, tmp_path):
    ck = pretrained / "checkpoint.json"
    assert run("fewshot", "--config", tiny, "--out", tmp_path, "--checkpoint", ck, "--objective", "all") == 0
    rows = read_csv(tmp_path / "fewshot.csv")
    assert rows[0] == FEWSHOT_HEADER
    assert [r[0] for r in rows[1:]] == ["ce", "simclr", "supcon", "schane"]
    episodes = read_csv(tmp_path / "fewshot-episodes.csv")
    assert len(episodes) == 1 + 4 * 3


def test_fewshot_single_episode_marks_ci(tiny, pretrained, tmp_path):
    ck = pretrained / "checkpoint.json"
    assert run("fewshot", "--config", tiny, "--out", tmp_path, "--checkpoint", ck, "--episodes", 1) == 0
    row = dict(zip(*read_csv(tmp_path / "fewshot.csv")))
    assert row["ci"] == "NA" and row["episodes"] == "1"


def test_fewshot_requires_checkpoint(tiny, tmp_path, capsys):
    assert run("fewshot", "--config", tiny, "--out", tmp_path) == 2
    assert "checkpoint" in capsys.readouterr().err


def test_sweep_endpoints_and_default_grid(tiny, pretrained, tmp_path):
    ck = pretrained / "checkpoint.json"
    assert run("sweep-lambda", "--config", tiny, "--out", tmp_path / "s", "--checkpoint", ck,
               "--lambda-grid", "0,1") == 0
    rows = read_csv(tmp_path / "s/sweep-lambda.csv")[1:]
    assert [r[1] for r in rows] == ["0.0", "1.0"]
    run("fewshot", "--config", tiny, "--out", tmp_path / "f", "--checkpoint", ck, "--objective", "ce")
    ce = read_csv(tmp_path / "f/fewshot.csv")[1]
    assert rows[0][6:9] == ce[6:9]

    assert run("sweep-lambda", "--config", tiny, "--out", tmp_path / "d", "--checkpoint", ck) == 0
    rows = read_csv(tmp_path / "d/sweep-lambda.csv")[1:]
    assert [float(r[1]) for r in rows] == list(PAPER_LAMBDA_GRID)


def test_ablation_rows(tiny, pretrained, tmp_path):
    ck = pretrained / "checkpoint.json"
    assert run("ablation", "--config", tiny, "--out", tmp_path, "--checkpoint", ck) == 0
    rows = read_csv(tmp_path / "ablation.csv")
    assert rows[0] == ABLATION_HEADER
    assert [r[0] for r in rows[1:]] == ["CE", "CE+SimCLR", "CE+SupCon", "CE+SCHaNe"]
    assert len({r[10] for r in rows[1:]}) == 1
    assert float(rows[1][11]) == 0.0


def test_analyze_outputs(tiny, pretrained, tmp_path):
    ck = pretrained / "checkpoint.json"
    assert run("analyze", "--config", tiny, "--out", tmp_path, "--checkpoint", ck) == 0
    summary = json.loads((tmp_path / "analysis.json").read_text())
    assert 0 < summary["isotropy_score"] <= 1
    proj = read_csv(tmp_path / "projection.csv")
    assert proj[0] == ["sample_id", "x", "y", "label"]
    assert len(proj) - 1 == summary["samples"] == 4 * 3
    hist = np.array(read_csv(tmp_path / "cosine-histogram.csv")[1:], dtype=float)
    assert hist.shape == (40, 4)
    np.testing.assert_allclose(hist[:, 2:].sum(axis=0), 1.0, atol=1e-9)


@pytest.mark.parametrize("command", ["generate", "pretrain", "fewshot", "sweep-lambda", "ablation", "analyze"])
def test_rerun_from_manifest_is_bit_identical(command, tiny, pretrained, tmp_path):
    extra = [] if command in ("generate", "pretrain") else ["--checkpoint", pretrained / "checkpoint.json"]
    assert run(command, "--config", tiny, "--out", tmp_path / "a", *extra) == 0
    first = manifest(tmp_path / "a", command)
    assert run(command, "--config", tmp_path / "a" / f"{command}-manifest.json", "--out", tmp_path / "b") == 0
    second = manifest(tmp_path / "b", command)
    assert first["metrics"] == second["metrics"]
    assert {k: v for k, v in first["config"].items() if k != "out"} == {
        k: v for k, v in second["config"].items() if k != "out"
    }
    for key, path in first["outputs"].items():
        if key in ("manifest", "checkpoint"):
            continue
        assert open(path, "rb").read() == open(second["outputs"][key], "rb").read(), key


def test_flag_overrides_config_file(tiny):
    cfg = build_config(config_path=tiny, overrides={"lambda": 0.3})
    assert cfg.lam == 0.3 and cfg.epochs == 3


def test_preset_pins_defaults():
    cfg = build_config(preset="synthetic-fewshot")
    assert (cfg.tau, cfg.lam, cfg.way, cfg.shot, cfg.episodes) == (0.5, 0.9, 5, 1, 200)
    assert cfg.synthetic["class_count"] == 20 and cfg.base_fraction == 0.5


def test_config_validation_messages():
    with pytest.raises(ConfigError) as err:
        build_config(overrides={"lambda_grid": [0.5, 2]})
    assert err.value.field == "lambda_grid"
    with pytest.raises(ConfigError):
        build_config(overrides={"lam": 0.5})
    assert RunConfig().to_dict()["lambda"] == 0.9
