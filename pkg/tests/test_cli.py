import json

import pytest

from gfenet.cli import main
from gfenet.dataset import MarkerClass, generate_synthetic_dataset, write_dataset
from gfenet.structnet import model_from_json

TINY = ["--synthetic", "--epochs", "5", "--n-positive", "40", "--n-negative", "40"]


def _exit_code(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


def test_train_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", *TINY, "--out", str(out)]) == 0
    spec, params = model_from_json((out / "model.json").read_text())
    assert spec.preset == "structured"
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["train.epochs"] == 5
    assert (out / "history.csv").read_text().splitlines()[0] == "epoch,mean_loss,lr"
    assert "test" in capsys.readouterr().out


def test_train_replay_from_report(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["train", *TINY, "--preset", "fc", "--out", str(first)]) == 0
    assert main(["train", "--config", str(first / "report.json"), "--out", str(second)]) == 0
    assert (first / "model.json").read_bytes() == (second / "model.json").read_bytes()


def test_full_batch_single_epoch(tmp_path):
    out = tmp_path / "r"
    assert main(["train", *TINY, "--epochs", "1", "--batch", "all", "--out", str(out)]) == 0
    assert len((out / "history.csv").read_text().splitlines()) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--epochs", "0", "--synthetic"],
        ["train", "--loss", "hinge"],
        ["train", "--bogus"],
        ["train", "--synthetic", "--batch", "many"],
        ["train", "--synthetic", "--marker", "sarcasm"],
        ["frobnicate"],
    ],
)
def test_config_errors_exit_4(argv, tmp_path):
    assert _exit_code([*argv, "--out", str(tmp_path)] if argv[0] == "train" else argv) == 4


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"train.epochs": 5, "nope": 1}')
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 4


def test_train_missing_data_is_pipeline_error(tmp_path):
    assert main(["train", "--data-root", str(tmp_path), "--epochs", "1", "--out", str(tmp_path / "o")]) == 3


def test_validate(tmp_path, capsys):
    assert main(["synth", "--marker", "all", "--user", "ab", "--n-positive", "20", "--n-negative", "10", "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("*.txt"))) == 36
    assert main(["validate", "--data-root", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "18 dataset(s) parsed" in out and "differs" in out
    assert main(["validate", "--data-root", str(tmp_path), "--strict"]) == 2


def test_validate_reports_bad_line(tmp_path, capsys):
    ds = generate_synthetic_dataset(0, 3, 3, marker=MarkerClass.NEGATIVE)
    dp, _ = write_dataset(ds, tmp_path)
    lines = dp.read_text().splitlines()
    lines[2] = lines[2].rsplit(" ", 1)[0]
    dp.write_text("\n".join(lines) + "\n")
    assert main(["validate", "--data-root", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert dp.name in err and "3" in err


def test_validate_empty_dir(tmp_path):
    assert main(["validate", "--data-root", str(tmp_path)]) == 2


def test_bench_without_data_skips(tmp_path, capsys):
    assert main(["bench", "--data-root", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2
    assert "SKIP" in capsys.readouterr().err


def test_bench_synthetic_accept(tmp_path, capsys):
    argv = ["bench", *TINY, "--epochs", "60", "--n-positive", "100", "--n-negative", "100",
            "--markers", "affirmative,negative", "--out", str(tmp_path), "--accept"]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out and "[FAIL]" not in out
    doc = json.loads((tmp_path / "bench_report.json").read_text())
    assert len(doc["experiments"]) == 4
    assert doc["comparisons"] == []


def test_bench_accept_failure_exits_5(tmp_path):
    # no signal at all: the structured net cannot reach the synthetic bands
    argv = ["bench", *TINY, "--regions", "none", "--markers", "affirmative", "--presets", "structured",
            "--out", str(tmp_path), "--accept"]
    assert main(argv) == 5


def test_gradcheck_corrupt_exits_6(capsys):
    assert main(["gradcheck", "--corrupt-gradient"]) == 6
    assert "FAIL" in capsys.readouterr().out
