import json
import subprocess
import sys

import pytest
import yaml

from lftsformer import cli

from .fixtures import tiny_doc


def write_cfg(tmp_path, **over):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(tiny_doc(**over)))
    return p


def test_parser_has_every_verb():
    p = cli.build_parser()
    for verb in ("ingest", "decompose", "features", "train", "evaluate", "pipeline", "ablate"):
        args = p.parse_args([verb, "--seed", "3", "--profile", "desk", "--out", "x", "--resume"])
        assert args.verb == verb and args.seed == 3 and args.resume


@pytest.mark.parametrize("bad", [["pipeline", "--seed", "-1"], ["pipeline", "--seed", str(2 ** 64)],
                                 ["pipeline", "--profile", "laptop"], ["fly"]])
def test_bad_arguments_exit_2(bad):
    with pytest.raises(SystemExit) as exc:
        cli.build_parser().parse_args(bad)
    assert exc.value.code == 2


def test_invalid_config_fails_before_compute(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("split_ratio: 1.5\n")
    out = tmp_path / "out"
    assert cli.main(["pipeline", "--config", str(p), "--out", str(out)]) == cli.EXIT_CONFIG
    assert "split_ratio" in capsys.readouterr().err
    assert not out.exists()
    assert cli.main(["pipeline", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG


def test_stage_verbs_chain_with_resume(tmp_path, capsys):
    cfg, out = write_cfg(tmp_path), tmp_path / "run"
    assert cli.main(["ingest", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "features.csv").exists() and not (out / "imfs.csv").exists()
    assert cli.main(["features", "--config", str(cfg), "--out", str(out), "--resume"]) == 0
    assert (out / "heatmap.svg").exists() and not (out / "metrics.json").exists()
    assert cli.main(["pipeline", "--config", str(cfg), "--out", str(out), "--resume", "--seed", "2"]) == 0
    lock = json.loads((out / "config.lock.json").read_text())
    assert lock["config"]["seed"] == 2
    printed = capsys.readouterr().out.splitlines()
    assert set(json.loads(printed[-2])) == {"mae", "mse", "rmse", "r2"}


def test_stage_failure_exit_1(tmp_path, capsys):
    cfg = write_cfg(tmp_path, data=str(tmp_path / "none.csv"))
    assert cli.main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_STAGE
    assert "ingest" in capsys.readouterr().err
    marker = json.loads((tmp_path / "o" / "stage.json").read_text())
    assert marker["status"] == "failed" and marker["stage"] == "ingest"


def test_ablate_verb(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    code = cli.main(["ablate", "--config", str(cfg), "--out", str(tmp_path / "ab"), "--variants", "full,mse",
                     "--workers", "1"])
    assert code == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["variant"] for r in rows] == ["full", "mse"]
    assert cli.main(["ablate", "--config", str(cfg), "--out", str(tmp_path / "ab2"), "--variants", "warp"]) \
        == cli.EXIT_CONFIG


def test_console_entry_point(tmp_path):
    cfg = write_cfg(tmp_path)
    r = subprocess.run([sys.executable, "-m", "lftsformer.cli", "ingest", "--config", str(cfg), "--out",
                        str(tmp_path / "m")], capture_output=True, text=True, env={"LFTS_THREADS": "1",
                                                                                  "PATH": ""})
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "m" / "features.csv").exists()
