import subprocess
import sys

import pytest

from styleumt import pipeline
from styleumt.cli import build_parser, main


def test_every_stage_has_a_subcommand():
    parser = build_parser()
    for name in pipeline.ORDER + ("run-all", "show-config"):
        args = parser.parse_args([name])
        assert args.command == name and args.work_dir == "work"


def test_show_config(capsys):
    assert main(["show-config", "-s", "max_epochs=7"]) == 0
    out = capsys.readouterr().out
    assert "max_epochs = 7" in out.splitlines()
    assert pipeline.PipelineConfig(**pipeline.parse_assignments(out.splitlines())) == pipeline.PipelineConfig(max_epochs=7)


@pytest.mark.parametrize("argv", [["frobnicate"], [], ["run-all", "--bogus"], ["show-config", "-s", "nope=1"],
                                  ["show-config", "-s", "k_samples=9"], ["show-config", "-c", "/no/such/file"]])
def test_usage_errors_exit_1(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 1
    assert capsys.readouterr().err


def test_missing_dependency_names_producer(tmp_path, capsys):
    assert main(["evaluate", "-w", str(tmp_path / "w")]) == 2
    err = capsys.readouterr().err
    assert "pretrain-nmt" in err and "styleumt pretrain-nmt" in err
    assert main(["build-lexicon", "-w", str(tmp_path / "w")]) == 2
    assert "styleumt train-embeddings" in capsys.readouterr().err


def test_locked_work_dir(tmp_path, capsys):
    work = tmp_path / "w"
    with pipeline.Workspace(work).lock():
        assert main(["synth-corpus", "-w", str(work)]) == 1
    assert "locked" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "styleumt.cli", "show-config", "-s", "seed_bt=9"],
                       capture_output=True, text=True, cwd=tmp_path)
    assert r.returncode == 0 and "seed_bt = 9" in r.stdout
